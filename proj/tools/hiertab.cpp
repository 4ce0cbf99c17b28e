// Command-line entry point: gen-data, train, generate, evaluate,
// dump-attention. Every command writes manifest.json into its --out
// directory before doing any work.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "hiertab/artifacts.hpp"
#include "hiertab/checkpoint.hpp"
#include "hiertab/config.hpp"
#include "hiertab/error.hpp"
#include "hiertab/evaluation.hpp"
#include "hiertab/kernels.hpp"
#include "hiertab/toygen.hpp"
#include "hiertab/training.hpp"

namespace fs = std::filesystem;
using namespace hiertab;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;  // name=value
  std::optional<std::uint64_t> seed;
  std::string scenario;
  std::string out;
};

void add_common(CLI::App& cmd, Common& c, bool with_scenario) {
  cmd.add_option("--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
  cmd.add_option("--set", c.overrides, "Override one config entry, name=value (repeatable)");
  cmd.add_option("--seed", c.seed, "Random seed");
  if (with_scenario) {
    cmd.add_option("--scenario", c.scenario, "flat, hier-kv or hier-k")
        ->check(CLI::IsMember({"flat", "hier-kv", "hier-k"}));
  }
  cmd.add_option("--out", c.out, "Output directory")->required();
}

ConfigMap collect(const Common& c) {
  ConfigMap values;
  if (!c.config_path.empty()) values = read_config_file(c.config_path);
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("--set expects name=value, got '" + kv + "'");
    values[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return values;
}

RunConfig resolve_run_config(const Common& c) {
  RunConfig rc;
  hiertab::apply(rc, collect(c));
  if (c.seed) rc.train.seed = *c.seed;
  if (!c.scenario.empty()) rc.model.scenario = parse_scenario(c.scenario);
  return rc;
}

RunManifest start(const std::string& command, const std::vector<std::string>& argv,
                  const Common& c) {
  RunManifest m;
  m.command = command;
  m.argv = argv;
  if (!c.config_path.empty()) m.inputs.push_back({"config", c.config_path});
  fs::create_directories(c.out);
  return m;
}

void finish(const fs::path& dir, RunManifest& m) {
  m.complete = true;
  write_manifest(dir, m);
}

fs::path split_file(const fs::path& data, const std::string& split) {
  const fs::path p = data / (std::string(to_string(parse_split(split))) + ".jsonl");
  if (!fs::exists(p)) throw Error("missing dataset file " + p.string());
  return p;
}

// --- gen-data -----------------------------------------------------------------

ToyGenConfig toygen_config(const ConfigMap& values) {
  ToyGenConfig c;
  for (const auto& [key, v] : values) {
    std::size_t n = 0;
    try {
      n = std::stoull(v);
    } catch (const std::exception&) {
      throw Error("config key '" + key + "' expects a count, got '" + v + "'");
    }
    if (key == "train") c.train = n;
    else if (key == "valid") c.valid = n;
    else if (key == "test") c.test = n;
    else if (key == "min_players") c.min_players = n;
    else if (key == "max_players") c.max_players = n;
    else if (key == "min_tokens") c.min_tokens = n;
    else if (key == "max_tokens") c.max_tokens = n;
    else if (key == "window") c.extractor.window = n;
    else if (key == "seed") c.seed = n;
    else throw Error("unknown gen-data config key '" + key + "'");
  }
  return c;
}

int cmd_gen_data(const Common& c, const std::vector<std::string>& argv) {
  ToyGenConfig tc = toygen_config(collect(c));
  if (c.seed) tc.seed = *c.seed;
  validate(tc);
  RunManifest m = start("gen-data", argv, c);
  std::ostringstream cfg;
  cfg << "max_players = " << tc.max_players << "\nmax_tokens = " << tc.max_tokens
      << "\nmin_players = " << tc.min_players << "\nmin_tokens = " << tc.min_tokens
      << "\nseed = " << tc.seed << "\ntest = " << tc.test << "\ntrain = " << tc.train
      << "\nvalid = " << tc.valid << "\nwindow = " << tc.extractor.window << "\n";
  m.config = cfg.str();
  m.seed = tc.seed;
  write_manifest(c.out, m);

  const ToyCorpus corpus = generate_corpus(tc);
  write_corpus(corpus, c.out);
  for (const char* tag : {"train", "valid", "test"}) {
    m.outputs.push_back({tag, (fs::path(c.out) / (std::string(tag) + ".jsonl")).string()});
    m.outputs.push_back(
        {std::string(tag) + ".relations", (fs::path(c.out) / (std::string(tag) + ".relations.jsonl")).string()});
  }
  finish(c.out, m);
  std::printf("wrote %zu/%zu/%zu examples to %s (rejected %zu by extraction, %zu by length)\n",
              tc.train, tc.valid, tc.test, c.out.c_str(), corpus.rejected_extraction,
              corpus.rejected_length);
  return 0;
}

// --- train --------------------------------------------------------------------

int cmd_train(const Common& c, const std::string& data, const std::vector<std::string>& argv) {
  const RunConfig rc = resolve_run_config(c);
  validate(rc.model);
  validate(rc.train);
  const fs::path train_path = split_file(data, "train");
  RunManifest m = start("train", argv, c);
  m.config = to_config_text(rc);
  m.seed = rc.train.seed;
  m.scenario = std::string(to_string(rc.model.scenario));
  m.inputs.push_back({"train", train_path.string()});
  const fs::path valid_path = fs::path(data) / "valid.jsonl";
  if (fs::exists(valid_path)) m.inputs.push_back({"valid", valid_path.string()});
  write_manifest(c.out, m);

  const Dataset train_set = parse_dataset(train_path, Split::kTrain);
  TrainHooks hooks;
  hooks.on_update = [&](const LossPoint& p) {
    if (p.update % 100 == 0 || p.update == rc.train.total_updates) {
      std::fprintf(stderr, "update %zu lr %.3g loss %.4f\n", p.update, p.lr, p.loss);
    }
  };
  const TrainResult result = train(train_set, rc, c.out, hooks);
  m.outputs.push_back({"final", result.final_checkpoint.string()});
  m.outputs.push_back({"loss_curve", result.loss_curve.string()});

  nlohmann::json summary;
  summary["updates"] = rc.train.total_updates;
  summary["final_train_loss"] = result.curve.empty() ? 0.0 : result.curve.back().loss;
  if (fs::exists(valid_path)) {
    const auto model = load_model(result.final_checkpoint);
    const double nll = evaluate_loss(*model, parse_dataset(valid_path, Split::kValid));
    summary["valid_nll"] = nll;
    summary["log_vocab"] = std::log(static_cast<double>(model->vocab().word_count()));
    std::printf("valid NLL %.4f (log V = %.4f)\n", nll, summary["log_vocab"].get<double>());
  }
  const fs::path summary_path = fs::path(c.out) / "summary.json";
  std::ofstream(summary_path) << summary.dump(2) << "\n";
  m.outputs.push_back({"summary", summary_path.string()});
  finish(c.out, m);
  std::printf("final checkpoint %s\n", result.final_checkpoint.c_str());
  return 0;
}

// --- generate -----------------------------------------------------------------

struct DecodeFlags {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::optional<std::size_t> beam;
  std::optional<std::size_t> max_len;
};

void add_decode(CLI::App& cmd, DecodeFlags& d) {
  cmd.add_option("--checkpoint", d.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  cmd.add_option("--data", d.data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  cmd.add_option("--split", d.split, "train, valid or test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  cmd.add_option("--beam", d.beam, "Beam width")->check(CLI::PositiveNumber);
  cmd.add_option("--max-len", d.max_len, "Maximum emitted tokens")->check(CLI::PositiveNumber);
}

BeamOptions beam_options(const RunConfig& rc, const DecodeFlags& d) {
  BeamOptions o;
  o.beam_size = d.beam.value_or(rc.decode.beam);
  o.max_len = d.max_len.value_or(rc.decode.max_len);
  return o;
}

int cmd_generate(const Common& c, const DecodeFlags& d, const std::string& trace_path,
                 const std::vector<std::string>& argv) {
  const RunConfig rc = resolve_run_config(c);
  const BeamOptions opts = beam_options(rc, d);
  const fs::path data_path = split_file(d.data, d.split);
  RunManifest m = start("generate", argv, c);
  const Checkpoint ckpt = read_checkpoint(d.checkpoint);
  RunConfig resolved = rc;
  resolved.model = checkpoint_model_config(ckpt);
  resolved.decode = {opts.beam_size, opts.max_len};
  m.config = to_config_text(resolved);
  m.seed = rc.train.seed;
  m.scenario = std::string(to_string(resolved.model.scenario));
  m.inputs.push_back({"checkpoint", d.checkpoint});
  m.inputs.push_back({d.split, data_path.string()});
  write_manifest(c.out, m);

  const auto model = load_model(ckpt);
  const Dataset ds = parse_dataset(data_path, parse_split(d.split));
  const std::vector<BeamResult> results = generate_all(*model, ds, opts);
  const fs::path gen_path = fs::path(c.out) / "generations.jsonl";
  write_generations(gen_path, results);
  m.outputs.push_back({"generations", gen_path.string()});
  if (!trace_path.empty()) {
    nlohmann::json all = nlohmann::json::array();
    for (std::size_t i = 0; i < results.size(); ++i) {
      all.push_back(nlohmann::json::parse(trace_json(ds.examples[i].structure, results[i])));
    }
    std::ofstream(trace_path) << all.dump(1) << "\n";
    m.outputs.push_back({"attention_trace", trace_path});
  }
  finish(c.out, m);
  std::size_t unfinished = 0;
  for (const BeamResult& r : results) unfinished += !r.finished;
  std::printf("generated %zu descriptions (%zu hit max-len) into %s\n", results.size(), unfinished,
              gen_path.c_str());
  return 0;
}

// --- evaluate -----------------------------------------------------------------

int cmd_evaluate(const Common& c, const std::string& data, const std::string& split,
                 const std::vector<std::string>& runs, bool gold,
                 const std::vector<std::string>& argv) {
  const fs::path data_path = split_file(data, split);
  if (runs.empty() && !gold) throw Error("evaluate: give --generations and/or --gold");
  RunManifest m = start("evaluate", argv, c);
  m.inputs.push_back({split, data_path.string()});
  std::vector<std::pair<std::string, std::string>> named;
  for (const std::string& r : runs) {
    const auto eq = r.find('=');
    const std::string name = eq == std::string::npos ? fs::path(r).parent_path().filename().string()
                                                     : r.substr(0, eq);
    const std::string path = eq == std::string::npos ? r : r.substr(eq + 1);
    if (!fs::exists(path)) throw Error("missing generations file " + path);
    named.push_back({name.empty() ? path : name, path});
    m.inputs.push_back({"generations:" + named.back().first, path});
  }
  write_manifest(c.out, m);

  const Dataset ds = parse_dataset(data_path, parse_split(split));
  std::vector<ReportRow> rows;
  if (gold) {
    std::vector<std::vector<std::string>> refs;
    for (const Example& ex : ds.examples) refs.push_back(strip_eos(ex.description.tokens));
    rows.push_back({"gold", evaluate(ds, refs)});
  }
  for (const auto& [name, path] : named) rows.push_back({name, evaluate(ds, read_generations(path))});
  for (const ReportRow& row : rows) {
    const fs::path out = fs::path(c.out) / ("report_" + row.name + ".json");
    std::ofstream(out) << row.report.to_json() << "\n";
    m.outputs.push_back({"report:" + row.name, out.string()});
  }
  const fs::path table_path = fs::path(c.out) / "table.txt";
  const std::string table = format_table(rows);
  std::ofstream(table_path) << table;
  m.outputs.push_back({"table", table_path.string()});
  finish(c.out, m);
  std::fputs(table.c_str(), stdout);
  return 0;
}

// --- dump-attention -----------------------------------------------------------

int cmd_dump_attention(const Common& c, const DecodeFlags& d, std::size_t example,
                       const std::vector<std::string>& argv) {
  const RunConfig rc = resolve_run_config(c);
  const BeamOptions opts = beam_options(rc, d);
  const fs::path data_path = split_file(d.data, d.split);
  RunManifest m = start("dump-attention", argv, c);
  const Checkpoint ckpt = read_checkpoint(d.checkpoint);
  RunConfig resolved = rc;
  resolved.model = checkpoint_model_config(ckpt);
  resolved.decode = {opts.beam_size, opts.max_len};
  m.config = to_config_text(resolved) + "example = " + std::to_string(example) + "\n";
  m.scenario = std::string(to_string(resolved.model.scenario));
  m.inputs.push_back({"checkpoint", d.checkpoint});
  m.inputs.push_back({d.split, data_path.string()});
  write_manifest(c.out, m);

  const auto model = load_model(ckpt);
  const Dataset ds = parse_dataset(data_path, parse_split(d.split));
  if (example >= ds.examples.size()) {
    throw Error("--example " + std::to_string(example) + " out of range (split has " +
                std::to_string(ds.examples.size()) + ")");
  }
  const DataStructure& s = ds.examples[example].structure;
  const BeamResult result = model->generate(s, opts);
  const fs::path trace_path = fs::path(c.out) / "trace.json";
  std::ofstream(trace_path) << trace_json(s, result) << "\n";
  m.outputs.push_back({"trace", trace_path.string()});
  for (const AttentionTrace& step : result.trace) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%03zu.svg", step.step);
    const fs::path svg = fs::path(c.out) / name;
    std::ofstream(svg) << attention_svg(s, step);
    m.outputs.push_back({"plot", svg.string()});
  }
  finish(c.out, m);
  std::printf("%zu steps traced into %s\n", result.trace.size(), c.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical table-to-text encoder/decoder toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "hiertab 0.1");
  const std::vector<std::string> args(argv, argv + argc);
  bool force_scalar = false;
  app.add_flag("--scalar-kernels", force_scalar, "Use the portable kernels even when AVX2 is available");

  Common gen_c, train_c, generate_c, eval_c, dump_c;
  std::string train_data, eval_data, eval_split = "test", trace_path;
  std::vector<std::string> eval_runs;
  bool eval_gold = false;
  DecodeFlags gen_d, dump_d;
  std::size_t dump_example = 0;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic corpus with relation sidecars");
  add_common(*gen, gen_c, false);

  auto* tr = app.add_subcommand("train", "Train a model; writes checkpoints and loss.csv");
  add_common(*tr, train_c, true);
  tr->add_option("--data", train_data, "Corpus directory")->required()->check(CLI::ExistingDirectory);

  auto* ge = app.add_subcommand("generate", "Beam-search descriptions for a split");
  add_common(*ge, generate_c, false);
  add_decode(*ge, gen_d);
  ge->add_option("--attention-trace", trace_path, "Write per-step attention for every example");

  auto* ev = app.add_subcommand("evaluate", "Score generations with BLEU, RG, CS and CO");
  add_common(*ev, eval_c, false);
  ev->add_option("--data", eval_data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", eval_split, "train, valid or test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  ev->add_option("--generations", eval_runs, "[name=]generations.jsonl (repeatable)");
  ev->add_flag("--gold", eval_gold, "Also score the references against themselves");

  auto* du = app.add_subcommand("dump-attention", "Trace one example and plot alpha/beta per step");
  add_common(*du, dump_c, false);
  add_decode(*du, dump_d);
  du->add_option("--example", dump_example, "Example index within the split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help, --version
    std::fprintf(stderr, "hiertab: error: %s\n", e.what());
    return 2;
  }

  try {
    if (force_scalar) kernels::set_backend(kernels::Backend::kScalar);
    if (*gen) return cmd_gen_data(gen_c, args);
    if (*tr) return cmd_train(train_c, train_data, args);
    if (*ge) return cmd_generate(generate_c, gen_d, trace_path, args);
    if (*ev) return cmd_evaluate(eval_c, eval_data, eval_split, eval_runs, eval_gold, args);
    if (*du) return cmd_dump_attention(dump_c, dump_d, dump_example, args);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::fprintf(stderr, "hiertab: error: %s\n", msg.c_str());
    return 1;
  }
  return 1;
}
