#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pslab/augment/augment.hpp"
#include "pslab/rng.hpp"
#include "pslab/trainers/model.hpp"

namespace pslab::poisonforge {

using augment::Image;
using augment::ImageDims;

// u* = (1 − α)·u_t + α·u_n
inline Image interpolate(std::span<const float> target_image, std::span<const float> other_image,
                         float alpha) {
  expects(target_image.size() == other_image.size(), "interpolate: image shape mismatch");
  expects(alpha >= 0.0f && alpha <= 1.0f, "interpolate: alpha must lie in [0,1]");
  Image out(target_image.size());
  const float keep = 1.0f - alpha;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = keep * target_image[i] + alpha * other_image[i];
  return out;
}

struct PgdOptions {
  float epsilon = 8.0f / 255.0f;
  int steps = 40;
  float step_scale = 2.5f;  // step size = step_scale·ε/steps
  bool random_start = true;
  std::uint64_t seed = 0;

  float step_size() const { return steps > 0 ? step_scale * epsilon / steps : 0.0f; }
};

namespace detail {

// Parameter-frozen copy so attack gradients never touch the surrogate.
template <trainers::LogitModel M>
M frozen(const M& model) {
  if constexpr (requires { model.clone(); }) {
    M copy = model.clone();
    for (auto& p : copy.parameters()) p.set_requires_grad(false);
    return copy;
  } else {
    return model;
  }
}

}  // namespace detail

// Untargeted ℓ∞ PGD maximizing the cross-entropy of each image's label:
// uniform random start in the ε-ball, `steps` signed-gradient ascent steps,
// each followed by projection onto the ball and clamping to [0,1].
// View ids first_index, first_index+1, ... select the random-start streams.
template <trainers::LogitModel M>
std::vector<float> pgd_perturb_batch(const M& surrogate, std::span<const float> pixels,
                                     std::span<const int> labels, const ImageDims& d,
                                     const PgdOptions& opt, std::uint64_t first_index = 0) {
  expects(opt.epsilon >= 0.0f, "pgd: epsilon must be non-negative");
  expects(opt.steps >= 0, "pgd: steps must be non-negative");
  const std::size_t n = labels.size();
  expects(pixels.size() == n * d.size(), "pgd: pixel/label count mismatch");
  if (n == 0) return {};
  const M model = detail::frozen(surrogate);
  const int classes = model.class_count();
  for (int l : labels) expects(l >= 0 && l < classes, "pgd: label out of range");

  std::vector<float> lo(pixels.size()), hi(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    lo[i] = std::max(0.0f, pixels[i] - opt.epsilon);
    hi[i] = std::min(1.0f, pixels[i] + opt.epsilon);
  }
  std::vector<float> x(pixels.begin(), pixels.end());
  if (opt.random_start && opt.epsilon > 0.0f) {
    for (std::size_t img = 0; img < n; ++img) {
      Rng rng(derive_seed(opt.seed, {stream::kPgd, first_index + img}));
      for (std::size_t j = img * d.size(); j < (img + 1) * d.size(); ++j)
        x[j] = std::clamp(static_cast<float>(x[j] + opt.epsilon * rng.uniform(-1.0, 1.0)), lo[j],
                          hi[j]);
    }
  }
  const float step = opt.step_size();
  std::vector<float> onehot(n * classes, 0.0f);
  for (std::size_t i = 0; i < n; ++i) onehot[i * classes + labels[i]] = 1.0f;
  for (int s = 0; s < opt.steps; ++s) {
    numgrad::Tensor input({static_cast<int>(n), d.channels, d.height, d.width}, x, true);
    auto logits = model.forward(input);
    auto loss = numgrad::scale(
        numgrad::sum(numgrad::mul(numgrad::log_softmax(logits),
                                  numgrad::Tensor(logits.shape(), onehot))),
        -1.0f);
    numgrad::backward(loss);
    auto g = input.grad();
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (!std::isfinite(g[j])) throw NumericFault("pgd_perturb", "non-finite input gradient");
      const float dir = g[j] > 0.0f ? 1.0f : (g[j] < 0.0f ? -1.0f : 0.0f);
      x[j] = std::clamp(x[j] + step * dir, lo[j], hi[j]);
    }
  }
  return x;
}

template <trainers::LogitModel M>
Image pgd_perturb(const M& surrogate, std::span<const float> image, int label,
                  const ImageDims& d, const PgdOptions& opt, std::uint64_t index = 0) {
  const int labels[1] = {label};
  return pgd_perturb_batch(surrogate, image, labels, d, opt, index);
}

}  // namespace pslab::poisonforge
