#pragma once

// Optimisation loop: seeded epoch shuffling, halving learning rate, periodic
// checkpoints, and averaging of the last k of them.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "hiertab/checkpoint.hpp"
#include "hiertab/config.hpp"
#include "hiertab/datamodel.hpp"
#include "hiertab/model.hpp"

namespace hiertab {

struct LossPoint {
  std::size_t update = 0;  // 1-based count of completed updates
  double lr = 0.0;
  double loss = 0.0;       // mean per-token NLL over the batch
};

struct TrainResult {
  std::vector<LossPoint> curve;
  std::vector<std::filesystem::path> checkpoints;  // initial, then periodic
  /// Average of the last k periodic checkpoints (the initial one when no
  /// update ran). This is the checkpoint to generate from.
  std::filesystem::path final_checkpoint;
  std::filesystem::path loss_curve;
};

struct TrainHooks {
  /// Called after every update.
  std::function<void(const LossPoint&)> on_update;
};

/// Writes into out_dir: ckpt_000000.bin, ckpt_NNNNNN.bin every
/// checkpoint_every updates, final.bin, last_with_adam.bin and loss.csv.
/// The vocabulary is built from `train` with config.train.min_freq.
TrainResult train(const Dataset& train, const RunConfig& config,
                  const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

/// Mean per-token NLL over every token of the dataset, dropout off.
double evaluate_loss(const Model& model, const Dataset& dataset);

/// Name of the periodic checkpoint written after `update` updates.
std::string checkpoint_name(std::size_t update);

}  // namespace hiertab
