#include "hiertab/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <numeric>

#include "hiertab/error.hpp"
#include "hiertab/optim.hpp"

namespace hiertab {

namespace fs = std::filesystem;

std::string checkpoint_name(std::size_t update) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06zu.bin", update);
  return buf;
}

namespace {

// Training draws from its own stream so that changing the data order never
// changes the initial weights.
std::uint64_t training_stream(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ULL + 1; }

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainResult train(const Dataset& dataset, const RunConfig& config, const fs::path& out_dir,
                  const TrainHooks& hooks) {
  const TrainConfig& tc = config.train;
  validate(config.model);
  validate(tc);
  if (dataset.split != Split::kTrain) throw Error("train() needs the train split");
  if (dataset.examples.empty()) throw Error("train split is empty");
  fs::create_directories(out_dir);

  Model model(config.model, build_vocab(dataset, tc.min_freq), tc.seed);
  std::vector<PreparedExample> prepared;
  prepared.reserve(dataset.examples.size());
  for (const Example& ex : dataset.examples) prepared.push_back(model.prepare(ex));

  TrainResult result;
  result.loss_curve = out_dir / "loss.csv";
  std::ofstream curve(result.loss_curve, std::ios::trunc);
  if (!curve) throw Error("cannot write " + result.loss_curve.string());
  curve << "update,lr,loss\n";

  const fs::path initial = out_dir / checkpoint_name(0);
  write_checkpoint(initial, snapshot(model, 0, false));
  result.checkpoints.push_back(initial);

  Rng rng(training_stream(tc.seed));
  const RunMode mode{true, config.model.encoder.dropout, &rng};
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // forces a shuffle before the first batch
  const auto params = model.params().all();
  std::deque<Checkpoint> recent;

  for (std::size_t u = 0; u < tc.total_updates; ++u) {
    const double lr = learning_rate(tc, u);
    std::vector<const PreparedExample*> batch;
    std::vector<std::size_t> batch_ids;
    for (std::size_t b = 0; b < tc.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch_ids.push_back(order[cursor]);
      batch.push_back(&prepared[order[cursor++]]);
    }
    const std::vector<Tensor> losses = model.batch_loss(batch, mode);
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < losses.size(); ++b) {
      const double value = losses[b].item();
      if (!std::isfinite(value)) {
        throw Error("non-finite loss at update " + std::to_string(u + 1) + " (example " +
                    std::to_string(batch_ids[b]) + ")");
      }
      batch_loss += value;
    }
    ops::scale(ops::add_n(losses), 1.0 / static_cast<double>(tc.batch_size)).backward();
    if (tc.clip_norm > 0.0) clip_grad_norm(params, tc.clip_norm);
    AdamOptions opts;
    opts.lr = lr;
    adam_step(params, opts);

    const LossPoint point{u + 1, lr, batch_loss / static_cast<double>(tc.batch_size)};
    result.curve.push_back(point);
    curve << point.update << ',' << format_double(point.lr) << ',' << format_double(point.loss)
          << '\n';
    if (hooks.on_update) hooks.on_update(point);

    if ((u + 1) % tc.checkpoint_every == 0) {
      Checkpoint ck = snapshot(model, u + 1, false);
      const fs::path path = out_dir / checkpoint_name(u + 1);
      write_checkpoint(path, ck);
      result.checkpoints.push_back(path);
      recent.push_back(std::move(ck));
      if (recent.size() > tc.average_last_k) recent.pop_front();
    }
  }
  curve.flush();

  write_checkpoint(out_dir / "last_with_adam.bin", snapshot(model, tc.total_updates, true));
  result.final_checkpoint = out_dir / "final.bin";
  if (recent.empty()) {
    write_checkpoint(result.final_checkpoint, snapshot(model, tc.total_updates, false));
  } else {
    const std::vector<Checkpoint> last(recent.begin(), recent.end());
    write_checkpoint(result.final_checkpoint, average_checkpoints(last));
  }
  return result;
}

double evaluate_loss(const Model& model, const Dataset& dataset) {
  constexpr std::size_t kChunk = 16;
  NoGradGuard no_grad;
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t begin = 0; begin < dataset.examples.size(); begin += kChunk) {
    const std::size_t end = std::min(begin + kChunk, dataset.examples.size());
    std::vector<PreparedExample> prepared;
    for (std::size_t i = begin; i < end; ++i) prepared.push_back(model.prepare(dataset.examples[i]));
    std::vector<const PreparedExample*> batch;
    for (const PreparedExample& p : prepared) batch.push_back(&p);
    const std::vector<Tensor> losses = model.batch_loss(batch, RunMode::eval());
    for (std::size_t b = 0; b < losses.size(); ++b) {
      const std::size_t t = prepared[b].targets.targets.size();
      total += losses[b].item() * static_cast<double>(t);
      tokens += t;
    }
  }
  if (tokens == 0) throw Error("evaluate_loss: dataset has no tokens");
  return total / static_cast<double>(tokens);
}

}  // namespace hiertab
