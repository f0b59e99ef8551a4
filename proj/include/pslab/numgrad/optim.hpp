#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pslab/numgrad/tensor.hpp"

namespace pslab::numgrad {

struct SgdState {
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  bool nesterov = true;
  std::vector<std::vector<float>> velocity;  // one buffer per parameter, lazily sized
};

// Momentum SGD with weight decay folded into the gradient before the momentum
// update:  g' = g + wd·θ;  v ← m·v + g';  θ ← θ − lr·(nesterov ? g' + m·v : v).
inline void sgd_step(std::span<Tensor> params, SgdState& state, float lr) {
  expects(state.momentum >= 0.0f && state.momentum < 1.0f, "sgd momentum must lie in [0,1)");
  expects(state.weight_decay >= 0.0f, "sgd weight decay must be non-negative");
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const auto& p : params) state.velocity.emplace_back(p.size(), 0.0f);
  }
  expects(state.velocity.size() == params.size(), "sgd state tracks " +
                                                      std::to_string(state.velocity.size()) +
                                                      " parameters, got " +
                                                      std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    expects(p.has_grad(), "sgd_step: parameter " + std::to_string(i) + " has no gradient");
    auto& v = state.velocity[i];
    expects(v.size() == p.size(), "sgd_step: velocity shape does not mirror parameter " +
                                      std::to_string(i));
    auto theta = p.mutable_values();
    auto g = p.grad();
    const float m = state.momentum;
    const float wd = state.weight_decay;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const float gj = g[j] + wd * theta[j];
      v[j] = m * v[j] + gj;
      const float d = state.nesterov ? gj + m * v[j] : v[j];
      theta[j] -= lr * d;
    }
  }
}

inline void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

struct LrSchedule {
  enum class Kind { kCosine, kMultistep, kConstant };
  Kind kind = Kind::kCosine;
  float eta = 0.03f;
  long total_steps = 1;          // K
  std::vector<long> milestones;  // multistep only, strictly increasing
  float gamma = 0.1f;

  void validate() const {
    expects(eta >= 0.0f, "learning rate must be non-negative");
    if (kind == Kind::kCosine) expects(total_steps >= 1, "cosine schedule requires K >= 1");
    if (kind == Kind::kMultistep) {
      for (std::size_t i = 1; i < milestones.size(); ++i)
        expects(milestones[i] > milestones[i - 1], "multistep milestones must strictly increase");
    }
  }
};

// cosine: η·cos(7πk / 16K); multistep: η·γ^(#milestones ≤ k); constant: η.
inline float lr_at(const LrSchedule& schedule, long k) {
  schedule.validate();
  switch (schedule.kind) {
    case LrSchedule::Kind::kCosine: {
      expects(k >= 0 && k <= schedule.total_steps,
              "cosine lr step " + std::to_string(k) + " outside [0, " +
                  std::to_string(schedule.total_steps) + "]");
      const double arg = 7.0 * std::numbers::pi * static_cast<double>(k) /
                         (16.0 * static_cast<double>(schedule.total_steps));
      return static_cast<float>(schedule.eta * std::cos(arg));
    }
    case LrSchedule::Kind::kMultistep: {
      expects(k >= 0, "multistep lr step must be non-negative");
      double lr = schedule.eta;
      for (long m : schedule.milestones)
        if (k >= m) lr *= schedule.gamma;
      return static_cast<float>(lr);
    }
    case LrSchedule::Kind::kConstant:
      expects(k >= 0, "lr step must be non-negative");
      return schedule.eta;
  }
  return schedule.eta;
}

// ema ← decay·ema + (1 − decay)·param
inline void ema_update(std::span<Tensor> ema_params, std::span<const Tensor> params,
                       float decay) {
  expects(decay >= 0.0f && decay <= 1.0f, "ema decay must lie in [0,1]");
  expects(ema_params.size() == params.size(), "ema_update: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    expects(ema_params[i].shape() == params[i].shape(),
            "ema_update: shape mismatch " + shape_str(ema_params[i].shape()) + " vs " +
                shape_str(params[i].shape()));
    auto e = ema_params[i].mutable_values();
    auto p = params[i].values();
    if (decay == 0.0f) {
      std::copy(p.begin(), p.end(), e.begin());
      continue;
    }
    for (std::size_t j = 0; j < e.size(); ++j) e[j] = decay * e[j] + (1.0f - decay) * p[j];
  }
}

}  // namespace pslab::numgrad
