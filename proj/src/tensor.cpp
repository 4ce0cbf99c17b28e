#include "hiertab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "hiertab/error.hpp"

namespace hiertab {

std::string Shape::to_string() const {
  return "[" + std::to_string(rows) + " x " + std::to_string(cols) + "]";
}

double Rng::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= std::numeric_limits<double>::min());
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * 3.14159265358979323846 * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return mean + stddev * radius * std::cos(angle);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw Error("Rng::index called with n == 0");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = 0;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

// ---------------------------------------------------------------------------

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (values.size() != shape.size()) {
    throw Error("Tensor::constant: " + std::to_string(values.size()) +
                " values for shape " + shape.to_string());
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  return constant(shape, std::vector<double>(shape.size(), 0.0));
}

Tensor Tensor::row(std::vector<double> values) {
  const Shape shape{1, values.size()};
  return constant(shape, std::move(values));
}

double Tensor::item() const {
  if (node_->value.size() != 1) {
    throw Error("Tensor::item on shape " + node_->shape.to_string());
  }
  return node_->value[0];
}

void Tensor::backward() const {
  if (node_->value.size() != 1) {
    throw Error("backward() needs a 1 x 1 tensor, got " + node_->shape.to_string());
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; each node appears exactly once in `order`.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward_fn) continue;  // leaf
    if (!node->grad.empty()) node->backward_fn(*node);
    // Interior gradients are consumed; releasing them keeps a second
    // backward over the same graph from double counting.
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

// ---------------------------------------------------------------------------

Parameter::Parameter(std::string name, Shape shape, std::vector<double> values)
    : name_(std::move(name)), node_(std::make_shared<detail::Node>()) {
  if (values.size() != shape.size()) {
    throw Error("parameter " + name_ + ": " + std::to_string(values.size()) +
                " values for shape " + shape.to_string());
  }
  node_->shape = shape;
  node_->value = std::move(values);
  node_->requires_grad = true;
}

void Parameter::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Parameter& ParameterStore::add(const std::string& name, Shape shape, Init init,
                               Rng& rng) {
  std::vector<double> values(shape.size(), 0.0);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kGlorotUniform: {
      const double a = std::sqrt(6.0 / static_cast<double>(shape.rows + shape.cols));
      for (double& v : values) v = rng.uniform(-a, a);
      break;
    }
    case Init::kEmbeddingNormal: {
      const double sd = 1.0 / std::sqrt(static_cast<double>(shape.cols));
      for (double& v : values) v = rng.normal(0.0, sd);
      break;
    }
  }
  return add(name, shape, std::move(values));
}

Parameter& ParameterStore::add(const std::string& name, Shape shape,
                               std::vector<double> values) {
  if (find(name) != nullptr) throw Error("duplicate parameter name " + name);
  params_.push_back(std::make_unique<Parameter>(name, shape, std::move(values)));
  return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name() == name) return p.get();
  }
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name() == name) return p.get();
  }
  return nullptr;
}

Parameter& ParameterStore::get(const std::string& name) {
  Parameter* p = find(name);
  if (p == nullptr) throw Error("unknown parameter " + name);
  return *p;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  const Parameter* p = find(name);
  if (p == nullptr) throw Error("unknown parameter " + name);
  return *p;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

}  // namespace hiertab
