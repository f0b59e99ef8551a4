#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pslab/datakit/dataset.hpp"
#include "pslab/numgrad/ops.hpp"

namespace pslab::trainers {

using numgrad::Tensor;

// −Σ_{i,c} W[i,c]·log softmax(logits)[i,c]; the weights carry any
// per-sample normalization.
inline Tensor weighted_cross_entropy(const Tensor& logits, std::vector<float> weights) {
  expects(weights.size() == logits.size(), "cross-entropy weight matrix has wrong size");
  Tensor w(logits.shape(), std::move(weights));
  return numgrad::scale(numgrad::sum(numgrad::mul(numgrad::log_softmax(logits), w)), -1.0f);
}

// Mean cross-entropy against hard labels; kUnlabeled is rejected.
inline Tensor supervised_loss(const Tensor& logits, std::span<const std::uint16_t> labels) {
  expects(logits.rank() == 2 && static_cast<std::size_t>(logits.dim(0)) == labels.size(),
          "supervised_loss: logits/labels batch mismatch");
  expects(!labels.empty(), "supervised_loss on an empty batch");
  const int n = logits.dim(0), c = logits.dim(1);
  std::vector<float> w(logits.size(), 0.0f);
  const float inv_n = 1.0f / static_cast<float>(n);
  for (int i = 0; i < n; ++i) {
    expects(labels[i] != datakit::kUnlabeled,
            "supervised_loss: unlabeled sample at batch position " + std::to_string(i));
    expects(labels[i] < c, "supervised_loss: label out of range");
    w[static_cast<std::size_t>(i) * c + labels[i]] = inv_n;
  }
  return weighted_cross_entropy(logits, std::move(w));
}

struct Pseudolabels {
  std::vector<int> labels;         // y* = argmax of the weak-view prediction
  std::vector<std::uint8_t> mask;  // m_i = 1 iff max softmax > τ
  std::vector<float> confidence;   // max softmax probability

  std::size_t retained() const {
    std::size_t n = 0;
    for (auto m : mask) n += m;
    return n;
  }
};

inline Pseudolabels pseudolabel_from_logits(const Tensor& weak_logits, float tau) {
  expects(weak_logits.rank() == 2, "pseudolabel expects [N, classes] logits");
  const auto probs = numgrad::softmax_rows(weak_logits);
  const int n = weak_logits.dim(0), c = weak_logits.dim(1);
  Pseudolabels pl;
  pl.labels.resize(n);
  pl.mask.resize(n);
  pl.confidence.resize(n);
  for (int i = 0; i < n; ++i) {
    const float* row = probs.data() + static_cast<std::size_t>(i) * c;
    const auto best = static_cast<int>(std::max_element(row, row + c) - row);
    pl.labels[i] = best;
    pl.confidence[i] = row[best];
    pl.mask[i] = row[best] > tau ? 1 : 0;
  }
  return pl;
}

// How the masked consistency sum is normalized.
enum class UnsupNorm {
  kMaskSum,  // 1/Σm_i, zero when nothing is retained
  kBatch,    // 1/(μB)
};

// ℓ_u = (1/Σm_i)·Σ m_i·H(y*_i, f(T_s(u_i))).
inline Tensor unsupervised_loss(const Tensor& strong_logits, const Pseudolabels& pl,
                                UnsupNorm norm = UnsupNorm::kMaskSum) {
  expects(strong_logits.rank() == 2 &&
              static_cast<std::size_t>(strong_logits.dim(0)) == pl.labels.size() &&
              pl.mask.size() == pl.labels.size(),
          "unsupervised_loss: batch mismatch between strong logits and pseudolabels");
  const int n = strong_logits.dim(0), c = strong_logits.dim(1);
  const std::size_t kept = pl.retained();
  if (kept == 0 || n == 0) return Tensor::scalar(0.0f);
  const float inv = 1.0f / static_cast<float>(norm == UnsupNorm::kMaskSum ? kept : n);
  std::vector<float> w(strong_logits.size(), 0.0f);
  for (int i = 0; i < n; ++i)
    if (pl.mask[i]) w[static_cast<std::size_t>(i) * c + pl.labels[i]] = inv;
  return weighted_cross_entropy(strong_logits, std::move(w));
}

// Soft-target consistency: targets are the weak-view distribution sharpened
// at `temperature` and held constant; the mask uses the unsharpened
// confidence against τ, as in the hard-label loss.
inline Tensor uda_unsupervised_loss(const Tensor& weak_logits, const Tensor& strong_logits,
                                    float tau, float temperature,
                                    UnsupNorm norm = UnsupNorm::kMaskSum) {
  expects(weak_logits.shape() == strong_logits.shape(),
          "uda_unsupervised_loss: weak/strong logits shape mismatch");
  const auto pl = pseudolabel_from_logits(weak_logits, tau);
  const int n = strong_logits.dim(0), c = strong_logits.dim(1);
  const std::size_t kept = pl.retained();
  if (kept == 0 || n == 0) return Tensor::scalar(0.0f);
  const auto targets = numgrad::softmax_rows(weak_logits.detach(), temperature);
  const float inv = 1.0f / static_cast<float>(norm == UnsupNorm::kMaskSum ? kept : n);
  std::vector<float> w(strong_logits.size(), 0.0f);
  for (int i = 0; i < n; ++i) {
    if (!pl.mask[i]) continue;
    for (int k = 0; k < c; ++k) {
      const auto idx = static_cast<std::size_t>(i) * c + k;
      w[idx] = targets[idx] * inv;
    }
  }
  return weighted_cross_entropy(strong_logits, std::move(w));
}

}  // namespace pslab::trainers
