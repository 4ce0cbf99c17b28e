#include "hiertab/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hiertab/error.hpp"

namespace hiertab {

std::string_view to_string(Scenario scenario) {
  switch (scenario) {
    case Scenario::kFlat: return "flat";
    case Scenario::kHierKv: return "hier-kv";
    case Scenario::kHierK: return "hier-k";
  }
  return "flat";
}

Scenario parse_scenario(std::string_view text) {
  if (text == "flat") return Scenario::kFlat;
  if (text == "hier-kv") return Scenario::kHierKv;
  if (text == "hier-k") return Scenario::kHierK;
  throw Error("unknown scenario '" + std::string(text) + "' (expected flat, hier-kv or hier-k)");
}

bool is_hierarchical(Scenario scenario) { return scenario != Scenario::kFlat; }

void validate(const ModelConfig& c) {
  const EncoderConfig& e = c.encoder;
  if (e.key_embed_dim == 0 || e.value_embed_dim == 0 || e.hidden_dim == 0 || e.layers == 0 ||
      e.heads == 0 || c.decoder_layers == 0) {
    throw Error("model dimensions and layer counts must be positive");
  }
  if (e.hidden_dim % e.heads != 0) {
    throw Error("hidden_dim " + std::to_string(e.hidden_dim) + " is not divisible by heads " +
                std::to_string(e.heads));
  }
  if (e.dropout < 0.0 || e.dropout >= 1.0) throw Error("dropout must lie in [0, 1)");
}

void validate(const TrainConfig& c) {
  if (c.batch_size == 0 || c.lr_halving_period == 0 || c.checkpoint_every == 0 ||
      c.average_last_k == 0 || c.min_freq == 0) {
    throw Error("training sizes and periods must be positive");
  }
  if (!(c.lr > 0.0)) throw Error("lr must be positive");
  if (c.total_updates > 0 && c.average_last_k > c.total_updates / c.checkpoint_every) {
    throw Error("average_last_k (" + std::to_string(c.average_last_k) +
                ") exceeds the number of periodic checkpoints (" +
                std::to_string(c.total_updates / c.checkpoint_every) + ")");
  }
  if (c.clip_norm < 0.0) throw Error("clip_norm must be non-negative");
}

double learning_rate(const TrainConfig& config, std::size_t update) {
  const std::size_t halvings = update / config.lr_halving_period;
  return config.lr * std::pow(0.5, static_cast<double>(halvings));
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw Error("config " + key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw Error("config " + key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error("config " + key + ": expected true or false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ConfigMap parse_config_text(std::string_view text) {
  ConfigMap out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error("config line " + std::to_string(line_no) + ": expected name = value");
    }
    out[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
  }
  return out;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void apply(RunConfig& c, const ConfigMap& values) {
  for (const auto& [key, v] : values) {
    if (key == "scenario") c.model.scenario = parse_scenario(v);
    else if (key == "key_embed_dim") c.model.encoder.key_embed_dim = to_size(key, v);
    else if (key == "value_embed_dim") c.model.encoder.value_embed_dim = to_size(key, v);
    else if (key == "hidden_dim") c.model.encoder.hidden_dim = to_size(key, v);
    else if (key == "layers") c.model.encoder.layers = to_size(key, v);
    else if (key == "heads") c.model.encoder.heads = to_size(key, v);
    else if (key == "dropout") c.model.encoder.dropout = to_double(key, v);
    else if (key == "decoder_layers") c.model.decoder_layers = to_size(key, v);
    else if (key == "context_over_states") c.model.context_over_states = to_bool(key, v);
    else if (key == "batch_size") c.train.batch_size = to_size(key, v);
    else if (key == "total_updates") c.train.total_updates = to_size(key, v);
    else if (key == "lr") c.train.lr = to_double(key, v);
    else if (key == "lr_halving_period") c.train.lr_halving_period = to_size(key, v);
    else if (key == "checkpoint_every") c.train.checkpoint_every = to_size(key, v);
    else if (key == "average_last_k") c.train.average_last_k = to_size(key, v);
    else if (key == "seed") c.train.seed = to_size(key, v);
    else if (key == "min_freq") c.train.min_freq = to_size(key, v);
    else if (key == "clip_norm") c.train.clip_norm = to_double(key, v);
    else if (key == "beam") c.decode.beam = to_size(key, v);
    else if (key == "max_len") c.decode.max_len = to_size(key, v);
    else throw Error("unknown config key '" + key + "'");
  }
}

std::string to_config_text(const ModelConfig& c) {
  ConfigMap m;
  m["scenario"] = std::string(to_string(c.scenario));
  m["key_embed_dim"] = std::to_string(c.encoder.key_embed_dim);
  m["value_embed_dim"] = std::to_string(c.encoder.value_embed_dim);
  m["hidden_dim"] = std::to_string(c.encoder.hidden_dim);
  m["layers"] = std::to_string(c.encoder.layers);
  m["heads"] = std::to_string(c.encoder.heads);
  m["dropout"] = fmt_double(c.encoder.dropout);
  m["decoder_layers"] = std::to_string(c.decoder_layers);
  m["context_over_states"] = c.context_over_states ? "true" : "false";
  std::string out;
  for (const auto& [k, v] : m) out += k + " = " + v + "\n";
  return out;
}

std::string to_config_text(const RunConfig& c) {
  ConfigMap m = parse_config_text(to_config_text(c.model));
  m["batch_size"] = std::to_string(c.train.batch_size);
  m["total_updates"] = std::to_string(c.train.total_updates);
  m["lr"] = fmt_double(c.train.lr);
  m["lr_halving_period"] = std::to_string(c.train.lr_halving_period);
  m["checkpoint_every"] = std::to_string(c.train.checkpoint_every);
  m["average_last_k"] = std::to_string(c.train.average_last_k);
  m["seed"] = std::to_string(c.train.seed);
  m["min_freq"] = std::to_string(c.train.min_freq);
  m["clip_norm"] = fmt_double(c.train.clip_norm);
  m["beam"] = std::to_string(c.decode.beam);
  m["max_len"] = std::to_string(c.decode.max_len);
  std::string out;
  for (const auto& [k, v] : m) out += k + " = " + v + "\n";
  return out;
}

std::string digest_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace hiertab
