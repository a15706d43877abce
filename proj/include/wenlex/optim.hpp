#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wenlex/tensor.hpp"

namespace wenlex {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// First and second moment estimates for one parameter tensor.
struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

struct AdamWState {
  std::vector<AdamMoments> moments;
  long step = 0;
};

/// One AdamW update with decoupled weight decay and bias-corrected moments.
/// Parameters without a gradient are treated as having a zero gradient.
inline void adamw_step(std::vector<Tensor>& params, AdamWState& state, double lr, const AdamWConfig& cfg = {}) {
  if (state.moments.empty()) {
    for (const auto& p : params) state.moments.push_back({std::vector<double>(p.numel(), 0.0), std::vector<double>(p.numel(), 0.0)});
  }
  if (state.moments.size() != params.size()) throw ShapeError("adamw_step: optimizer state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& mom = state.moments[k];
    if (mom.m.size() != p.numel() || mom.v.size() != p.numel()) {
      throw ShapeError("adamw_step: moment shape mismatch for parameter " + std::to_string(k));
    }
    auto w = p.mutable_data();
    auto g = p.grad();
    const bool has_g = !g.empty();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has_g ? g[i] : 0.0;
      mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * gi;
      mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * gi * gi;
      w[i] *= 1.0 - lr * cfg.weight_decay;
      w[i] -= lr * (mom.m[i] / bc1) / (std::sqrt(mom.v[i] / bc2) + cfg.eps);
    }
  }
}

/// Linear warmup from 0 to base_lr, then linear decay to 0 at total_steps.
inline double lr_schedule(long step, long total_steps, long warmup_steps, double base_lr) {
  if (warmup_steps > total_steps) throw std::invalid_argument("lr_schedule: warmup_steps exceeds total_steps");
  if (step < 0 || step > total_steps) throw std::out_of_range("lr_schedule: step outside [0, total_steps]");
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps == warmup_steps) return step == total_steps && warmup_steps > 0 ? base_lr : 0.0;
  return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup_steps);
}

}  // namespace wenlex
