#pragma once

// Dense 2-D tensors with tape-free reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node. Operations that touch at
// least one gradient-requiring input record their parents and a backward
// closure; Tensor::backward() walks the graph once in reverse topological
// order. Graphs are confined to the thread that built them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hiertab/rng.hpp"

namespace hiertab {

/// Row-major matrix shape. Vectors are 1 x n.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string to_string() const;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // lazily allocated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::span<double> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  /// A constant (never requires gradient).
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor row(std::vector<double> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const& { return node_->value; }
  // The span would outlive a temporary handle that may own the only reference.
  std::span<const double> values() const&& = delete;
  double at(std::size_t r, std::size_t c) const {
    return node_->value[r * node_->shape.cols + c];
  }
  /// Only valid for 1 x 1 tensors.
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  /// Empty until a backward pass reaches this node.
  std::span<const double> grad() const { return node_->grad; }

  /// Seeds d(this)/d(this) = 1 and propagates. Requires a 1 x 1 tensor.
  void backward() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// While alive on a thread, new operations record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;
};

/// A named, trainable tensor. The node persists across graphs, so gradients
/// from several backward passes accumulate until zero_grad().
class Parameter {
 public:
  Parameter(std::string name, Shape shape, std::vector<double> values);

  const std::string& name() const { return name_; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }

  Tensor tensor() const { return Tensor(node_); }
  std::span<double> values() { return node_->value; }
  std::span<const double> values() const { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();
  /// Drops the gradient buffer entirely (has_grad() becomes false).
  void clear_grad() { node_->grad.clear(); }

  AdamState& adam() { return adam_; }
  const AdamState& adam() const { return adam_; }

 private:
  std::string name_;
  std::shared_ptr<detail::Node> node_;
  AdamState adam_;
};

enum class Init { kZeros, kGlorotUniform, kEmbeddingNormal };

/// Owns every parameter of a model, in creation order. Parameter addresses
/// are stable for the store's lifetime.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  /// Glorot: U(-a, a), a = sqrt(6 / (rows + cols)). Embedding: N(0, 1/sqrt(cols)).
  Parameter& add(const std::string& name, Shape shape, Init init, Rng& rng);
  Parameter& add(const std::string& name, Shape shape, std::vector<double> values);

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t total_values() const;

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

}  // namespace hiertab
