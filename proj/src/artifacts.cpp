#include "hiertab/artifacts.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "hiertab/config.hpp"
#include "hiertab/error.hpp"

namespace hiertab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

struct Bar {
  std::string label;
  double value;
};

/// Horizontal layout: one column per bar, heights scaled to [0, 1].
std::string bar_panel(const std::string& title, const std::vector<Bar>& bars, double y0) {
  constexpr double kLeft = 40, kHeight = 160, kBarWidth = 48, kGap = 12;
  std::string out = "<text x=\"" + fmt("%.0f", kLeft) + "\" y=\"" + fmt("%.0f", y0 + 16) +
                    "\" font-size=\"14\">" + xml_escape(title) + "</text>\n";
  const double base = y0 + 30 + kHeight;
  out += "<line x1=\"" + fmt("%.0f", kLeft) + "\" y1=\"" + fmt("%.1f", base) + "\" x2=\"" +
         fmt("%.0f", kLeft + bars.size() * (kBarWidth + kGap)) + "\" y2=\"" + fmt("%.1f", base) +
         "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double x = kLeft + i * (kBarWidth + kGap);
    const double h = std::clamp(bars[i].value, 0.0, 1.0) * kHeight;
    out += "<rect x=\"" + fmt("%.1f", x) + "\" y=\"" + fmt("%.2f", base - h) + "\" width=\"" +
           fmt("%.0f", kBarWidth) + "\" height=\"" + fmt("%.2f", h) +
           "\" fill=\"steelblue\"/>\n";
    out += "<text x=\"" + fmt("%.1f", x + kBarWidth / 2) + "\" y=\"" + fmt("%.2f", base - h - 4) +
           "\" font-size=\"10\" text-anchor=\"middle\">" + fmt("%.2f", bars[i].value) + "</text>\n";
    out += "<text x=\"" + fmt("%.1f", x + kBarWidth / 2) + "\" y=\"" + fmt("%.1f", base + 12) +
           "\" font-size=\"9\" text-anchor=\"end\" transform=\"rotate(-35 " +
           fmt("%.1f", x + kBarWidth / 2) + " " + fmt("%.1f", base + 12) + ")\">" +
           xml_escape(bars[i].label) + "</text>\n";
  }
  return out;
}

}  // namespace

std::string file_digest(const fs::path& path) { return digest_hex(read_bytes(path)); }

std::string RunManifest::to_json() const {
  auto paths = [](const std::vector<std::pair<std::string, std::string>>& items) {
    json arr = json::array();
    for (const auto& [role, path] : items) {
      std::string digest;
      std::error_code ec;
      if (fs::is_regular_file(path, ec)) digest = file_digest(path);
      arr.push_back({{"role", role}, {"path", path}, {"digest", digest}});
    }
    return arr;
  };
  json doc;
  doc["command"] = command;
  doc["argv"] = argv;
  doc["config"] = config;
  doc["seed"] = seed;
  doc["scenario"] = scenario;
  doc["inputs"] = paths(inputs);
  doc["outputs"] = paths(outputs);
  doc["complete"] = complete;
  return doc.dump(2) + "\n";
}

void write_manifest(const fs::path& dir, const RunManifest& manifest) {
  write_text(dir / "manifest.json", manifest.to_json());
}

std::vector<BeamResult> generate_all(const Model& model, const Dataset& dataset,
                                     const BeamOptions& options) {
  std::vector<BeamResult> out;
  out.reserve(dataset.examples.size());
  for (const Example& ex : dataset.examples) out.push_back(model.generate(ex.structure, options));
  return out;
}

std::string generation_line(const BeamResult& r) {
  json doc;
  doc["tokens"] = r.tokens;
  doc["logprob"] = r.logprob;
  doc["finished"] = r.finished;
  return doc.dump();
}

void write_generations(const fs::path& path, const std::vector<BeamResult>& results) {
  std::string text;
  for (const BeamResult& r : results) text += generation_line(r) + "\n";
  write_text(path, text);
}

std::vector<std::vector<std::string>> read_generations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open generations file " + path.string());
  std::vector<std::vector<std::string>> out;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).at("tokens").get<std::vector<std::string>>());
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string entity_label(const DataStructure& structure, std::size_t entity) {
  const std::string* name = structure.entities.at(entity).find("NAME");
  return name ? *name : "entity" + std::to_string(entity);
}

std::string trace_json(const DataStructure& structure, const BeamResult& result) {
  json entities = json::array();
  for (std::size_t i = 0; i < structure.entities.size(); ++i) {
    json records = json::array();
    for (const Record& r : structure.entities[i].records) {
      records.push_back({{"key", r.key}, {"value", r.value}});
    }
    entities.push_back({{"name", entity_label(structure, i)}, {"records", std::move(records)}});
  }
  json steps = json::array();
  for (const AttentionTrace& t : result.trace) {
    steps.push_back({{"step", t.step},
                     {"token", t.token},
                     {"alpha", t.alpha},
                     {"beta", t.beta},
                     {"copy_dist", t.copy_dist},
                     {"switch_prob", t.switch_prob},
                     {"context", t.context}});
  }
  json doc;
  doc["entities"] = std::move(entities);
  doc["tokens"] = result.tokens;
  doc["logprob"] = result.logprob;
  doc["steps"] = std::move(steps);
  return doc.dump(1);
}

std::string attention_svg(const DataStructure& structure, const AttentionTrace& step) {
  if (step.alpha.size() != structure.entities.size() || step.beta.size() != step.alpha.size()) {
    throw Error("attention_svg: trace does not match the structure");
  }
  std::vector<Bar> alpha;
  for (std::size_t i = 0; i < step.alpha.size(); ++i) {
    alpha.push_back({entity_label(structure, i), step.alpha[i]});
  }
  const std::size_t top = static_cast<std::size_t>(
      std::max_element(step.alpha.begin(), step.alpha.end()) - step.alpha.begin());
  std::vector<Bar> beta;
  const Entity& e = structure.entities[top];
  for (std::size_t j = 0; j < e.records.size(); ++j) {
    beta.push_back({e.records[j].key + "=" + e.records[j].value, step.beta[top].at(j)});
  }
  const std::size_t widest = std::max(alpha.size(), beta.size());
  const double width = 80 + 60.0 * static_cast<double>(widest);
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", width) +
                    "\" height=\"560\" font-family=\"sans-serif\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"40\" y=\"20\" font-size=\"16\">step " + std::to_string(step.step) +
         ": " + xml_escape(step.token) + " (switch " + fmt("%.2f", step.switch_prob) +
         ")</text>\n";
  out += bar_panel("alpha over entities", alpha, 30);
  out += bar_panel("beta over records of " + entity_label(structure, top), beta, 290);
  out += "</svg>\n";
  return out;
}

}  // namespace hiertab
