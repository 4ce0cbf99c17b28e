#include "hiertab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hiertab/error.hpp"
#include "hiertab/kernels.hpp"

namespace hiertab::ops {

namespace {

using detail::Node;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw Error(std::string(op) + ": incompatible shapes " + a.to_string() + " and " +
              b.to_string());
}

Tensor make_result(Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(value);
  if (grad_enabled()) {
    bool needs = false;
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
    if (needs) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const Tensor* t : inputs) node->parents.push_back(t->node_ptr());
      node->backward_fn = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_result_list(Shape shape, std::vector<double> value,
                        std::span<const Tensor> inputs,
                        std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(value);
  if (grad_enabled()) {
    bool needs = false;
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
    if (needs) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const Tensor& t : inputs) node->parents.push_back(t.node_ptr());
      node->backward_fn = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

// Gradient sink for parent `i`, or nullptr when it does not need one.
double* sink(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& x, Fwd fwd, Bwd bwd) {
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(x.shape(), std::move(out), {&x}, [bwd](Node& self) {
    double* gx = sink(self, 0);
    if (gx == nullptr) return;
    const auto& xin = self.parents[0]->value;
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      gx[i] += self.grad[i] * bwd(xin[i], self.value[i]);
    }
  });
}

void check_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
}

void check_offsets(const char* op, std::span<const std::size_t> offsets,
                   std::size_t n) {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != n) {
    throw Error(std::string(op) + ": segment offsets do not cover " +
                std::to_string(n) + " entries");
  }
  for (std::size_t s = 1; s < offsets.size(); ++s) {
    if (offsets[s] <= offsets[s - 1]) {
      throw Error(std::string(op) + ": empty or decreasing segment " +
                  std::to_string(s - 1));
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (double* ga = sink(self, 0)) {
      kernels::gemm_nt(g, self.parents[1]->value.data(), ga, m, n, k);
    }
    if (double* gb = sink(self, 1)) {
      kernels::gemm_tn(self.parents[0]->value.data(), g, gb, m, k, n);
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nt(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (double* ga = sink(self, 0)) {
      kernels::gemm_nn(g, self.parents[1]->value.data(), ga, m, n, k);
    }
    if (double* gb = sink(self, 1)) {
      kernels::gemm_tn(g, self.parents[0]->value.data(), gb, m, n, k);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same("add", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const std::size_t n = self.value.size();
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = sink(self, p)) kernels::axpy(1.0, self.grad.data(), g, n);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same("sub", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const std::size_t n = self.value.size();
    if (double* g = sink(self, 0)) kernels::axpy(1.0, self.grad.data(), g, n);
    if (double* g = sink(self, 1)) kernels::axpy(-1.0, self.grad.data(), g, n);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same("mul", a, b);
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (double* g = sink(self, 0)) {
      for (std::size_t i = 0; i < av.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = sink(self, 1)) {
      for (std::size_t i = 0; i < av.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {&x}, [factor](Node& self) {
    if (double* g = sink(self, 0)) {
      kernels::axpy(factor, self.grad.data(), g, self.value.size());
    }
  });
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    shape_error("add_row", x.shape(), bias.shape());
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  }
  return make_result(x.shape(), std::move(out), {&x, &bias}, [m, n](Node& self) {
    if (double* g = sink(self, 0)) kernels::axpy(1.0, self.grad.data(), g, m * n);
    if (double* g = sink(self, 1)) {
      for (std::size_t r = 0; r < m; ++r) kernels::axpy(1.0, self.grad.data() + r * n, g, n);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  return add_row(matmul(x, w), bias);
}

Tensor add_n(std::span<const Tensor> xs) {
  if (xs.empty()) throw Error("add_n: empty input list");
  const Shape shape = xs.front().shape();
  std::vector<double> out(shape.size(), 0.0);
  for (const Tensor& t : xs) {
    if (t.shape() != shape) shape_error("add_n", shape, t.shape());
    const auto v = t.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  return make_result_list(shape, std::move(out), xs, [](Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (double* g = sink(self, p)) {
        kernels::axpy(1.0, self.grad.data(), g, self.value.size());
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double out) { return 1.0 - out * out; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double out) { return out * (1.0 - out); });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x,
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double in, double) { return 1.0 / (1.0 + std::exp(-in)); });
}

Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (v < 0.0) throw Error("log: negative input " + std::to_string(v));
  }
  return unary(
      x, [](double v) { return std::log(v); },
      [](double in, double) { return 1.0 / in; });
}

namespace {

// Lanes of a reduction: count of independent vectors, their length, and the
// stride between consecutive elements of one vector.
struct Lanes {
  std::size_t count, length, stride, step;  // step = offset between lanes
};

Lanes lanes_for(const Shape& s, Axis axis) {
  if (axis == Axis::kCols) return {s.rows, s.cols, 1, s.cols};
  return {s.cols, s.rows, s.cols, 1};
}

}  // namespace

Tensor softmax(const Tensor& x, Axis axis) {
  const Lanes l = lanes_for(x.shape(), axis);
  if (l.length == 0) throw Error("softmax over an empty axis " + x.shape().to_string());
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t a = 0; a < l.count; ++a) {
    const std::size_t base = a * l.step;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < l.length; ++i) mx = std::max(mx, in[base + i * l.stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < l.length; ++i) {
      const double e = std::exp(in[base + i * l.stride] - mx);
      out[base + i * l.stride] = e;
      z += e;
    }
    for (std::size_t i = 0; i < l.length; ++i) out[base + i * l.stride] /= z;
  }
  return make_result(x.shape(), std::move(out), {&x}, [l](Node& self) {
    double* gx = sink(self, 0);
    if (gx == nullptr) return;
    for (std::size_t a = 0; a < l.count; ++a) {
      const std::size_t base = a * l.step;
      double dotp = 0.0;
      for (std::size_t i = 0; i < l.length; ++i) {
        const std::size_t k = base + i * l.stride;
        dotp += self.grad[k] * self.value[k];
      }
      for (std::size_t i = 0; i < l.length; ++i) {
        const std::size_t k = base + i * l.stride;
        gx[k] += self.value[k] * (self.grad[k] - dotp);
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, Axis axis) {
  const Lanes l = lanes_for(x.shape(), axis);
  if (l.length == 0) throw Error("log_softmax over an empty axis " + x.shape().to_string());
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t a = 0; a < l.count; ++a) {
    const std::size_t base = a * l.step;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < l.length; ++i) mx = std::max(mx, in[base + i * l.stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < l.length; ++i) z += std::exp(in[base + i * l.stride] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < l.length; ++i) {
      out[base + i * l.stride] = in[base + i * l.stride] - lse;
    }
  }
  return make_result(x.shape(), std::move(out), {&x}, [l](Node& self) {
    double* gx = sink(self, 0);
    if (gx == nullptr) return;
    for (std::size_t a = 0; a < l.count; ++a) {
      const std::size_t base = a * l.step;
      double gsum = 0.0;
      for (std::size_t i = 0; i < l.length; ++i) gsum += self.grad[base + i * l.stride];
      for (std::size_t i = 0; i < l.length; ++i) {
        const std::size_t k = base + i * l.stride;
        gx[k] += self.grad[k] - std::exp(self.value[k]) * gsum;
      }
    }
  });
}

Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> mask) {
  if (mask.size() != x.size()) {
    throw Error("masked_softmax: mask of " + std::to_string(mask.size()) +
                " entries for shape " + x.shape().to_string());
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.size(), 0.0);
  const auto in = x.values();
  for (std::size_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < n; ++c) {
      if (!mask[r * n + c]) continue;
      any = true;
      // NaN wins so that it reaches the loss instead of vanishing here.
      const double v = in[r * n + c];
      mx = (v > mx || std::isnan(v)) ? v : mx;
    }
    if (!any) throw Error("masked_softmax: row " + std::to_string(r) + " is fully masked");
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (mask[r * n + c]) {
        out[r * n + c] = std::exp(in[r * n + c] - mx);
        z += out[r * n + c];
      }
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  // Masked entries hold exactly 0, so the unmasked softmax backward formula
  // already routes no gradient to them.
  return make_result(x.shape(), std::move(out), {&x}, [m, n](Node& self) {
    double* gx = sink(self, 0);
    if (gx == nullptr) return;
    for (std::size_t r = 0; r < m; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dotp = 0.0;
      for (std::size_t c = 0; c < n; ++c) dotp += g[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += y[c] * (g[c] - dotp);
    }
  });
}

Tensor segment_softmax(const Tensor& x, std::span<const std::size_t> offsets) {
  if (x.rows() != 1) throw Error("segment_softmax: expected a row vector, got " + x.shape().to_string());
  check_offsets("segment_softmax", offsets, x.cols());
  std::vector<std::size_t> seg(offsets.begin(), offsets.end());
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = seg[s]; k < seg[s + 1]; ++k) mx = std::max(mx, in[k]);
    double z = 0.0;
    for (std::size_t k = seg[s]; k < seg[s + 1]; ++k) {
      out[k] = std::exp(in[k] - mx);
      z += out[k];
    }
    for (std::size_t k = seg[s]; k < seg[s + 1]; ++k) out[k] /= z;
  }
  return make_result(x.shape(), std::move(out), {&x}, [seg = std::move(seg)](Node& self) {
    double* gx = sink(self, 0);
    if (gx == nullptr) return;
    for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
      double dotp = 0.0;
      for (std::size_t k = seg[s]; k < seg[s + 1]; ++k) dotp += self.grad[k] * self.value[k];
      for (std::size_t k = seg[s]; k < seg[s + 1]; ++k) {
        gx[k] += self.value[k] * (self.grad[k] - dotp);
      }
    }
  });
}

Tensor segment_scale(const Tensor& x, const Tensor& w,
                     std::span<const std::size_t> offsets) {
  if (x.rows() != 1 || w.rows() != 1 || w.cols() + 1 != offsets.size()) {
    shape_error("segment_scale", x.shape(), w.shape());
  }
  check_offsets("segment_scale", offsets, x.cols());
  std::vector<std::size_t> seg(offsets.begin(), offsets.end());
  std::vector<double> out(x.size());
  const auto xv = x.values();
  const auto wv = w.values();
  for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
    for (std::size_t k = seg[s]; k < seg[s + 1]; ++k) out[k] = xv[k] * wv[s];
  }
  return make_result(x.shape(), std::move(out), {&x, &w}, [seg = std::move(seg)](Node& self) {
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    double* gx = sink(self, 0);
    double* gw = sink(self, 1);
    for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
      for (std::size_t k = seg[s]; k < seg[s + 1]; ++k) {
        if (gx) gx[k] += self.grad[k] * wv[s];
        if (gw) gw[s] += self.grad[k] * xv[k];
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n) shape_error("layer_norm", x.shape(), gain.shape());
  if (bias.rows() != 1 || bias.cols() != n) shape_error("layer_norm", x.shape(), bias.shape());
  std::vector<double> out(x.size());
  // Normalised activations and per-row inverse std are kept for backward.
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(m);
  const auto in = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = in.data() + r * n;
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (row[c] - mean) * inv_std[r];
      out[r * n + c] = xhat[r * n + c] * gv[c] + bv[c];
    }
  }
  return make_result(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& gv = self.parents[1]->value;
        double* gx = sink(self, 0);
        double* gg = sink(self, 1);
        double* gb = sink(self, 2);
        const double dn = static_cast<double>(n);
        for (std::size_t r = 0; r < m; ++r) {
          const double* g = self.grad.data() + r * n;
          const double* xh = xhat.data() + r * n;
          if (gg || gb) {
            for (std::size_t c = 0; c < n; ++c) {
              if (gg) gg[c] += g[c] * xh[c];
              if (gb) gb[c] += g[c];
            }
          }
          if (gx) {
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              const double dy = g[c] * gv[c];
              sum_dy += dy;
              sum_dy_xh += dy * xh[c];
            }
            for (std::size_t c = 0; c < n; ++c) {
              const double dy = g[c] * gv[c];
              gx[r * n + c] += inv_std[r] * (dy - sum_dy / dn - xh[c] * sum_dy_xh / dn);
            }
          }
        }
      });
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw Error("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factor(x.size());
  for (double& f : factor) f = rng.uniform() < rate ? 0.0 : keep_scale;
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * factor[i];
  return make_result(x.shape(), std::move(out), {&x}, [factor = std::move(factor)](Node& self) {
    if (double* g = sink(self, 0)) {
      for (std::size_t i = 0; i < factor.size(); ++i) g[i] += self.grad[i] * factor[i];
    }
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  const std::size_t vocab = table.rows(), d = table.cols();
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  std::vector<double> out(rows.size() * d);
  const auto tv = table.values();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= vocab) {
      throw Error("embedding_lookup: id " + std::to_string(rows[r]) +
                  " out of range for table " + table.shape().to_string());
    }
    std::copy_n(tv.data() + rows[r] * d, d, out.data() + r * d);
  }
  const Shape shape{rows.size(), d};
  return make_result(shape, std::move(out), {&table}, [d, rows = std::move(rows)](Node& self) {
    if (double* g = sink(self, 0)) {
      for (std::size_t r = 0; r < rows.size(); ++r) {
        kernels::axpy(1.0, self.grad.data() + r * d, g + rows[r] * d, d);
      }
    }
  });
}

Tensor concat(std::span<const Tensor> xs, Axis axis) {
  if (xs.empty()) throw Error("concat: empty input list");
  if (axis == Axis::kRows) {
    const std::size_t n = xs.front().cols();
    std::size_t m = 0;
    for (const Tensor& t : xs) {
      if (t.cols() != n) shape_error("concat(rows)", xs.front().shape(), t.shape());
      m += t.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    for (const Tensor& t : xs) out.insert(out.end(), t.values().begin(), t.values().end());
    return make_result_list({m, n}, std::move(out), xs, [](Node& self) {
      std::size_t offset = 0;
      for (std::size_t p = 0; p < self.parents.size(); ++p) {
        const std::size_t len = self.parents[p]->value.size();
        if (double* g = sink(self, p)) kernels::axpy(1.0, self.grad.data() + offset, g, len);
        offset += len;
      }
    });
  }
  const std::size_t m = xs.front().rows();
  std::size_t n = 0;
  for (const Tensor& t : xs) {
    if (t.rows() != m) shape_error("concat(cols)", xs.front().shape(), t.shape());
    n += t.cols();
  }
  std::vector<double> out(m * n);
  std::size_t col = 0;
  for (const Tensor& t : xs) {
    const std::size_t w = t.cols();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(t.values().data() + r * w, w, out.data() + r * n + col);
    }
    col += w;
  }
  return make_result_list({m, n}, std::move(out), xs, [m, n](Node& self) {
    std::size_t col = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      const std::size_t w = self.parents[p]->shape.cols;
      if (double* g = sink(self, p)) {
        for (std::size_t r = 0; r < m; ++r) {
          kernels::axpy(1.0, self.grad.data() + r * n + col, g + r * w, w);
        }
      }
      col += w;
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.cols()) {
    throw Error("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                ") invalid for shape " + x.shape().to_string());
  }
  const std::size_t m = x.rows(), n = x.cols(), w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(x.values().data() + r * n + begin, w, out.data() + r * w);
  }
  return make_result({m, w}, std::move(out), {&x}, [m, n, w, begin](Node& self) {
    if (double* g = sink(self, 0)) {
      for (std::size_t r = 0; r < m; ++r) {
        kernels::axpy(1.0, self.grad.data() + r * w, g + r * n + begin, w);
      }
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.rows()) {
    throw Error("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                ") invalid for shape " + x.shape().to_string());
  }
  const std::size_t n = x.cols();
  std::vector<double> out(x.values().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          x.values().begin() + static_cast<std::ptrdiff_t>(end * n));
  return make_result({end - begin, n}, std::move(out), {&x}, [n, begin](Node& self) {
    if (double* g = sink(self, 0)) {
      kernels::axpy(1.0, self.grad.data(), g + begin * n, self.value.size());
    }
  });
}

Tensor mean_pool(const Tensor& x, Axis axis) {
  const std::size_t m = x.rows(), n = x.cols();
  if (m == 0 || n == 0) throw Error("mean_pool of empty tensor " + x.shape().to_string());
  const auto in = x.values();
  if (axis == Axis::kRows) {
    std::vector<double> out(n, 0.0);
    for (std::size_t r = 0; r < m; ++r) kernels::axpy(1.0, in.data() + r * n, out.data(), n);
    for (double& v : out) v /= static_cast<double>(m);
    return make_result({1, n}, std::move(out), {&x}, [m, n](Node& self) {
      if (double* g = sink(self, 0)) {
        const double f = 1.0 / static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r) kernels::axpy(f, self.grad.data(), g + r * n, n);
      }
    });
  }
  std::vector<double> out(m, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r] += in[r * n + c];
    out[r] /= static_cast<double>(n);
  }
  return make_result({m, 1}, std::move(out), {&x}, [m, n](Node& self) {
    if (double* g = sink(self, 0)) {
      const double f = 1.0 / static_cast<double>(n);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[r] * f;
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result({1, 1}, {total}, {&x}, [](Node& self) {
    if (double* g = sink(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor pick(const Tensor& x, std::size_t row, std::size_t col) {
  if (row >= x.rows() || col >= x.cols()) {
    throw Error("pick: (" + std::to_string(row) + ", " + std::to_string(col) +
                ") outside " + x.shape().to_string());
  }
  const std::size_t k = row * x.cols() + col;
  return make_result({1, 1}, {x.values()[k]}, {&x}, [k](Node& self) {
    if (double* g = sink(self, 0)) g[k] += self.grad[0];
  });
}

Tensor lstm_cell(const Tensor& gates, const Tensor& c_prev) {
  const std::size_t d = c_prev.cols();
  const std::size_t n = c_prev.rows();
  if (gates.rows() != n || n == 0 || gates.cols() != 4 * d) {
    shape_error("lstm_cell", gates.shape(), c_prev.shape());
  }
  const auto gv = gates.values();
  const auto cp = c_prev.values();
  // Activated gates (i, f, g, o) and tanh(c) are kept for backward.
  std::vector<double> act(n * 4 * d);
  std::vector<double> tanh_c(n * d);
  std::vector<double> out(n * 2 * d);
  auto sigm = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::size_t r = 0; r < n; ++r) {
    const double* g = gv.data() + r * 4 * d;
    const double* c0 = cp.data() + r * d;
    double* a = act.data() + r * 4 * d;
    double* tc = tanh_c.data() + r * d;
    double* o = out.data() + r * 2 * d;
    for (std::size_t j = 0; j < d; ++j) {
      a[j] = sigm(g[j]);
      a[d + j] = sigm(g[d + j]);
      a[2 * d + j] = std::tanh(g[2 * d + j]);
      a[3 * d + j] = sigm(g[3 * d + j]);
      const double c = a[d + j] * c0[j] + a[j] * a[2 * d + j];
      tc[j] = std::tanh(c);
      o[j] = a[3 * d + j] * tc[j];
      o[d + j] = c;
    }
  }
  return make_result(
      {n, 2 * d}, std::move(out), {&gates, &c_prev},
      [n, d, act = std::move(act), tanh_c = std::move(tanh_c)](Node& self) {
        const auto& cp = self.parents[1]->value;
        double* gg = sink(self, 0);
        double* gc = sink(self, 1);
        for (std::size_t r = 0; r < n; ++r) {
          const double* a = act.data() + r * 4 * d;
          const double* tc = tanh_c.data() + r * d;
          const double* up = self.grad.data() + r * 2 * d;
          for (std::size_t j = 0; j < d; ++j) {
            const double i = a[j], f = a[d + j], g = a[2 * d + j], o = a[3 * d + j];
            const double dh = up[j];
            const double dc = up[d + j] + dh * o * (1.0 - tc[j] * tc[j]);
            if (gg) {
              double* row = gg + r * 4 * d;
              row[j] += dc * g * i * (1.0 - i);
              row[d + j] += dc * cp[r * d + j] * f * (1.0 - f);
              row[2 * d + j] += dc * i * (1.0 - g * g);
              row[3 * d + j] += dh * tc[j] * o * (1.0 - o);
            }
            if (gc) gc[r * d + j] += dc * f;
          }
        }
      });
}

}  // namespace hiertab::ops
