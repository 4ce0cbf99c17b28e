#include "hiertab/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hiertab/error.hpp"

namespace hiertab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'H', 'I', 'E', 'R', 'T', 'A', 'B', '\x01'};

class Writer {
 public:
  explicit Writer(std::string& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void f64s(std::span<const double> v) { bytes(v.data(), v.size() * sizeof(double)); }

 private:
  std::string& out_;
};

class Reader {
 public:
  Reader(const std::string& in, std::string where) : in_(in), where_(std::move(where)) {}
  void bytes(void* p, std::size_t n) {
    if (n > in_.size() - pos_) throw Error(where_ + ": truncated checkpoint");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > in_.size() - pos_) throw Error(where_ + ": truncated checkpoint");
    std::string s(in_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> f64s(std::uint64_t n) {
    if (n > (in_.size() - pos_) / sizeof(double)) throw Error(where_ + ": truncated checkpoint");
    std::vector<double> v(n);
    bytes(v.data(), n * sizeof(double));
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::string where_;
  std::size_t pos_ = 0;
};

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

}  // namespace

bool CheckpointTensor::operator==(const CheckpointTensor& o) const {
  if (name != o.name || shape.rows != o.shape.rows || shape.cols != o.shape.cols ||
      !same_bits(values, o.values) || adam.has_value() != o.adam.has_value()) {
    return false;
  }
  if (!adam) return true;
  return adam->step == o.adam->step && same_bits(adam->first_moment, o.adam->first_moment) &&
         same_bits(adam->second_moment, o.adam->second_moment);
}

Checkpoint snapshot(const Model& model, std::uint64_t update, bool with_adam) {
  Checkpoint ck;
  ck.model_config = to_config_text(model.config());
  ck.config_digest = digest_hex(ck.model_config);
  ck.vocab_json = model.vocab().to_json();
  ck.update = update;
  for (const Parameter* p : model.params().all()) {
    CheckpointTensor t;
    t.name = p->name();
    t.shape = p->shape();
    t.values.assign(p->values().begin(), p->values().end());
    if (with_adam) t.adam = p->adam();
    ck.params.push_back(std::move(t));
  }
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::string buf;
  Writer w(buf);
  w.bytes(kMagic, sizeof kMagic);
  w.u32(ck.version);
  w.str(ck.config_digest);
  w.str(ck.model_config);
  w.str(ck.vocab_json);
  w.u64(ck.update);
  w.u64(ck.params.size());
  for (const CheckpointTensor& t : ck.params) {
    w.str(t.name);
    w.u64(t.shape.rows);
    w.u64(t.shape.cols);
    w.f64s(t.values);
    w.u8(t.adam ? 1 : 0);
    if (t.adam) {
      w.u64(t.adam->step);
      w.f64s(t.adam->first_moment);
      w.f64s(t.adam->second_moment);
    }
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("short write on checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(buf, path.string());
  char magic[sizeof kMagic];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(path.string() + ": not a checkpoint file");
  }
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != kCheckpointVersion) {
    throw Error(path.string() + ": unsupported checkpoint version " + std::to_string(ck.version));
  }
  ck.config_digest = r.str();
  ck.model_config = r.str();
  ck.vocab_json = r.str();
  if (digest_hex(ck.model_config) != ck.config_digest) {
    throw Error(path.string() + ": config digest mismatch");
  }
  ck.update = r.u64();
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    CheckpointTensor t;
    t.name = r.str();
    t.shape.rows = r.u64();
    t.shape.cols = r.u64();
    t.values = r.f64s(t.shape.rows * t.shape.cols);
    if (r.u8()) {
      AdamState a;
      a.step = r.u64();
      a.first_moment = r.f64s(t.values.size());
      a.second_moment = r.f64s(t.values.size());
      t.adam = std::move(a);
    }
    ck.params.push_back(std::move(t));
  }
  if (!r.done()) throw Error(path.string() + ": trailing bytes after checkpoint");
  return ck;
}

ModelConfig checkpoint_model_config(const Checkpoint& ck) {
  RunConfig rc;
  hiertab::apply(rc, parse_config_text(ck.model_config));
  return rc.model;
}

void restore(Model& model, const Checkpoint& ck) {
  if (digest_hex(to_config_text(model.config())) != ck.config_digest) {
    throw Error("checkpoint was written for a different model config");
  }
  auto params = model.params().all();
  if (params.size() != ck.params.size()) {
    throw Error("checkpoint has " + std::to_string(ck.params.size()) + " parameters, model has " +
                std::to_string(params.size()));
  }
  for (const CheckpointTensor& t : ck.params) {
    Parameter* p = model.params().find(t.name);
    if (!p) throw Error("checkpoint parameter " + t.name + " not in model");
    if (p->shape().rows != t.shape.rows || p->shape().cols != t.shape.cols) {
      throw Error("checkpoint parameter " + t.name + " has shape " + t.shape.to_string() +
                  ", model has " + p->shape().to_string());
    }
    std::copy(t.values.begin(), t.values.end(), p->values().begin());
    p->adam() = t.adam.value_or(AdamState{});
    p->clear_grad();
  }
}

std::unique_ptr<Model> load_model(const Checkpoint& ck) {
  auto model = std::make_unique<Model>(checkpoint_model_config(ck),
                                       Vocabulary::from_json(ck.vocab_json), 0);
  restore(*model, ck);
  return model;
}

std::unique_ptr<Model> load_model(const std::filesystem::path& path) {
  return load_model(read_checkpoint(path));
}

Checkpoint average_checkpoints(std::span<const Checkpoint> cks) {
  if (cks.empty()) throw Error("average_checkpoints: no checkpoints");
  Checkpoint out = cks.front();
  for (CheckpointTensor& t : out.params) t.adam.reset();
  for (std::size_t c = 1; c < cks.size(); ++c) {
    const Checkpoint& other = cks[c];
    if (other.config_digest != out.config_digest) {
      throw Error("average_checkpoints: checkpoint " + std::to_string(c) + " has a different config");
    }
    if (other.params.size() != out.params.size()) {
      throw Error("average_checkpoints: checkpoint " + std::to_string(c) +
                  " has a different parameter count");
    }
    for (std::size_t i = 0; i < out.params.size(); ++i) {
      const CheckpointTensor& a = out.params[i];
      const CheckpointTensor& b = other.params[i];
      if (a.name != b.name || a.shape.rows != b.shape.rows || a.shape.cols != b.shape.cols) {
        throw Error("average_checkpoints: parameter " + b.name + " " + b.shape.to_string() +
                    " does not match " + a.name + " " + a.shape.to_string());
      }
    }
  }
  if (cks.size() == 1) return out;
  // Summing in a fixed (sorted) order per coordinate keeps the mean
  // independent of the order the files were given in.
  const double k = static_cast<double>(cks.size());
  std::vector<double> column(cks.size());
  for (std::size_t i = 0; i < out.params.size(); ++i) {
    for (std::size_t j = 0; j < out.params[i].values.size(); ++j) {
      for (std::size_t c = 0; c < cks.size(); ++c) column[c] = cks[c].params[i].values[j];
      std::sort(column.begin(), column.end());
      if (column.front() == column.back()) {
        out.params[i].values[j] = column.front();  // k * x / k can round away from x
        continue;
      }
      double s = 0.0;
      for (double x : column) s += x;
      out.params[i].values[j] = s / k;
    }
  }
  return out;
}

Checkpoint average_checkpoints(std::span<const std::filesystem::path> paths) {
  std::vector<Checkpoint> cks;
  for (const auto& p : paths) cks.push_back(read_checkpoint(p));
  return average_checkpoints(cks);
}

}  // namespace hiertab
