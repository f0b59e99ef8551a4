#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pslab/errors.hpp"
#include "pslab/rng.hpp"

namespace pslab::datakit {

inline constexpr std::uint16_t kUnlabeled = 0xFFFF;

// Raster images in [0,1], stored N×C×H×W row-major.
struct LabeledDataset {
  int channels = 1;
  int height = 0;
  int width = 0;
  int class_count = 0;
  std::vector<float> pixels;
  std::vector<std::uint16_t> labels;        // class id or kUnlabeled
  std::vector<std::uint8_t> poison_flags;   // 1 only for poisonforge output
  // Ground truth of samples whose label was withheld. Analysis-only: trainers
  // never read it.
  std::optional<std::vector<std::uint16_t>> hidden_truth;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t image_size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }

  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(pixels).subspan(i * image_size(), image_size());
  }
  std::span<float> image(std::size_t i) {
    return std::span<float>(pixels).subspan(i * image_size(), image_size());
  }

  // Label if present, else the hidden ground truth.
  int truth(std::size_t i) const {
    if (labels[i] != kUnlabeled) return labels[i];
    expects(hidden_truth.has_value(), "sample " + std::to_string(i) + " has no ground truth");
    return (*hidden_truth)[i];
  }

  LabeledDataset empty_like() const {
    LabeledDataset d;
    d.channels = channels;
    d.height = height;
    d.width = width;
    d.class_count = class_count;
    return d;
  }

  void push_back_from(const LabeledDataset& src, std::size_t i) {
    auto img = src.image(i);
    pixels.insert(pixels.end(), img.begin(), img.end());
    labels.push_back(src.labels[i]);
    poison_flags.push_back(src.poison_flags[i]);
    if (src.hidden_truth) {
      if (!hidden_truth) hidden_truth.emplace();
      hidden_truth->push_back((*src.hidden_truth)[i]);
    }
  }

  LabeledDataset subset(std::span<const std::size_t> indices) const {
    auto d = empty_like();
    d.pixels.reserve(indices.size() * image_size());
    for (auto i : indices) d.push_back_from(*this, i);
    return d;
  }

  std::vector<std::size_t> indices_of_class(int cls) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (truth(i) == cls) out.push_back(i);
    return out;
  }

  // Throws ContractViolation on any broken invariant.
  void validate() const {
    expects(channels >= 1 && height >= 1 && width >= 1, "dataset extents must be positive");
    expects(class_count >= 1 && class_count < kUnlabeled, "class count out of range");
    expects(pixels.size() == size() * image_size(), "pixel buffer length does not match N");
    expects(poison_flags.size() == size(), "poison flag count does not match N");
    if (hidden_truth) expects(hidden_truth->size() == size(), "hidden truth count mismatch");
    for (auto l : labels)
      expects(l == kUnlabeled || l < class_count, "label " + std::to_string(l) + " >= C");
    for (float v : pixels) expects(v >= 0.0f && v <= 1.0f, "pixel outside [0,1]");
  }
};

struct SplitSpec {
  std::size_t n_labeled = 250;
  std::uint64_t seed = 0;
  bool balanced = true;
};

struct SplitResult {
  LabeledDataset labeled;
  LabeledDataset unlabeled;
  std::vector<std::size_t> labeled_indices;    // positions in the source
  std::vector<std::size_t> unlabeled_indices;
};

// Partitions a fully labeled dataset. The unlabeled part keeps its labels only
// as hidden ground truth.
inline SplitResult split(const LabeledDataset& dataset, const SplitSpec& spec) {
  const std::size_t n = dataset.size();
  expects(spec.n_labeled <= n, "n_labeled " + std::to_string(spec.n_labeled) +
                                   " exceeds dataset size " + std::to_string(n));
  const auto classes = static_cast<std::size_t>(dataset.class_count);
  if (spec.balanced) {
    expects(spec.n_labeled % classes == 0,
            "balanced split needs n_labeled divisible by " + std::to_string(classes));
  }

  Rng rng(derive_seed(spec.seed, {stream::kSplit}));
  std::vector<std::uint8_t> chosen(n, 0);
  if (spec.balanced) {
    const std::size_t per_class = spec.n_labeled / classes;
    for (std::size_t c = 0; c < classes; ++c) {
      auto idx = dataset.indices_of_class(static_cast<int>(c));
      expects(idx.size() >= per_class, "class " + std::to_string(c) + " has only " +
                                           std::to_string(idx.size()) + " samples");
      rng.shuffle(std::span<std::size_t>(idx));
      for (std::size_t j = 0; j < per_class; ++j) chosen[idx[j]] = 1;
    }
  } else {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t j = 0; j < spec.n_labeled; ++j) chosen[idx[j]] = 1;
  }

  SplitResult out;
  for (std::size_t i = 0; i < n; ++i)
    (chosen[i] ? out.labeled_indices : out.unlabeled_indices).push_back(i);
  out.labeled = dataset.subset(out.labeled_indices);
  out.unlabeled = dataset.subset(out.unlabeled_indices);
  std::vector<std::uint16_t> truth(out.unlabeled.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = static_cast<std::uint16_t>(out.unlabeled.truth(i));
    out.unlabeled.labels[i] = kUnlabeled;
  }
  out.unlabeled.hidden_truth = std::move(truth);
  out.labeled.hidden_truth.reset();
  return out;
}

struct ImageBatch {
  std::vector<std::size_t> indices;  // dataset positions
  std::vector<float> pixels;         // batch×C×H×W
  std::vector<std::uint16_t> labels;
};

// Sample positions for a step: epochs are independent shuffles of [0, N),
// consumed batch_size at a time. Fully determined by (seed, step).
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t batch_size,
                                               std::uint64_t seed, std::uint64_t step) {
  expects(n > 0, "cannot sample from an empty dataset");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::uint64_t pos = step * batch_size;
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> perm(n);
  while (out.size() < batch_size) {
    const std::uint64_t epoch = pos / n;
    if (epoch != cached_epoch) {
      for (std::size_t i = 0; i < n; ++i) perm[i] = i;
      Rng rng(derive_seed(seed, {stream::kShuffle, epoch}));
      rng.shuffle(std::span<std::size_t>(perm));
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % n]);
    ++pos;
  }
  return out;
}

inline ImageBatch gather(const LabeledDataset& dataset, std::vector<std::size_t> indices) {
  ImageBatch b;
  b.pixels.reserve(indices.size() * dataset.image_size());
  for (auto i : indices) {
    auto img = dataset.image(i);
    b.pixels.insert(b.pixels.end(), img.begin(), img.end());
    b.labels.push_back(dataset.labels[i]);
  }
  b.indices = std::move(indices);
  return b;
}

inline ImageBatch sample_batch(const LabeledDataset& dataset, std::size_t batch_size,
                               std::uint64_t seed, std::uint64_t step) {
  return gather(dataset, sample_indices(dataset.size(), batch_size, seed, step));
}

}  // namespace pslab::datakit
