#include "hiertab/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hiertab/error.hpp"

namespace hiertab {

void adam_step(std::span<Parameter* const> params, const AdamOptions& options) {
  for (const Parameter* p : params) {
    if (!p->has_grad()) throw Error("adam_step: missing gradient for parameter " + p->name());
  }
  for (Parameter* p : params) {
    AdamState& st = p->adam();
    if (st.first_moment.size() != p->size()) {
      st.first_moment.assign(p->size(), 0.0);
      st.second_moment.assign(p->size(), 0.0);
    }
    ++st.step;
    const double t = static_cast<double>(st.step);
    const double c1 = 1.0 - std::pow(options.beta1, t);
    const double c2 = 1.0 - std::pow(options.beta2, t);
    auto values = p->values();
    const auto grad = p->grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      st.first_moment[i] = options.beta1 * st.first_moment[i] + (1.0 - options.beta1) * g;
      st.second_moment[i] = options.beta2 * st.second_moment[i] + (1.0 - options.beta2) * g * g;
      const double mhat = st.first_moment[i] / c1;
      const double vhat = st.second_moment[i] / c2;
      values[i] -= options.lr * mhat / (std::sqrt(vhat) + options.eps);
    }
    p->zero_grad();
  }
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (Parameter* p : params) {
      if (!p->has_grad()) continue;
      for (double& g : p->mutable_grad()) g *= f;
    }
  }
  return norm;
}

namespace {

double evaluate(const std::function<Tensor()>& loss) {
  NoGradGuard guard;
  const double v = loss().item();
  if (!std::isfinite(v)) throw Error("grad_check: loss is not finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& loss,
                           std::span<Parameter* const> params,
                           const GradCheckOptions& options) {
  for (Parameter* p : params) p->clear_grad();
  const Tensor value = loss();
  if (!std::isfinite(value.item())) throw Error("grad_check: loss is not finite");
  value.backward();

  struct Coordinate {
    Parameter* param;
    std::size_t index;
  };
  std::vector<Coordinate> coords;
  std::size_t total = 0;
  for (Parameter* p : params) total += p->size();
  if (total <= options.max_coordinates) {
    for (Parameter* p : params) {
      for (std::size_t i = 0; i < p->size(); ++i) coords.push_back({p, i});
    }
  } else {
    // Proportional sample with a small guaranteed share per parameter.
    Rng rng(options.seed);
    for (Parameter* p : params) {
      const std::size_t share = std::max<std::size_t>(
          std::min<std::size_t>(p->size(), 8),
          p->size() * options.max_coordinates / total);
      for (std::size_t s = 0; s < share; ++s) coords.push_back({p, rng.index(p->size())});
    }
  }

  GradCheckResult result;
  for (const Coordinate& c : coords) {
    const double analytic = c.param->has_grad() ? c.param->grad()[c.index] : 0.0;
    if (!std::isfinite(analytic)) {
      throw Error("grad_check: non-finite gradient in " + c.param->name());
    }
    double& slot = c.param->values()[c.index];
    const double original = slot;
    slot = original + options.epsilon;
    const double plus = evaluate(loss);
    slot = original - options.epsilon;
    const double minus = evaluate(loss);
    slot = original;
    const double numeric = (plus - minus) / (2.0 * options.epsilon);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_parameter = c.param->name() + "[" + std::to_string(c.index) + "]";
    }
    ++result.coordinates_checked;
  }
  for (Parameter* p : params) p->clear_grad();
  return result;
}

}  // namespace hiertab
