#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pslab/augment/augment.hpp"
#include "pslab/errors.hpp"

namespace pslab::poisonforge {

using augment::Image;
using augment::ImageDims;

inline std::vector<float> checkerboard(int k) {
  std::vector<float> p(static_cast<std::size_t>(std::max(k, 0)) * std::max(k, 0));
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) p[static_cast<std::size_t>(i) * k + j] = (i + j) % 2 == 0;
  return p;
}

struct TriggerSpec {
  enum class Kind { kFourCorner, kPatch };
  Kind kind = Kind::kFourCorner;
  int k = 3;
  std::vector<float> pattern = checkerboard(3);  // k×k, values in {0,1}

  static TriggerSpec four_corner(int k = 3) {
    TriggerSpec t;
    t.k = k;
    t.pattern = checkerboard(k);
    return t;
  }

  // Single k×k patch in the bottom-right corner.
  static TriggerSpec patch(int k) {
    TriggerSpec t;
    t.kind = Kind::kPatch;
    t.k = k;
    t.pattern = checkerboard(k);
    return t;
  }

  void validate(const ImageDims& d) const {
    expects(k >= 1, "trigger side must be positive");
    const int side = std::min(d.height, d.width);
    if (kind == Kind::kFourCorner) {
      expects(k <= side / 4, "four-corner trigger side " + std::to_string(k) +
                                 " exceeds H/4 = " + std::to_string(side / 4));
    } else {
      const int limit = static_cast<int>(std::lround(side / 3.0));
      expects(k <= limit, "patch trigger side " + std::to_string(k) + " exceeds round(H/3) = " +
                              std::to_string(limit));
    }
    const auto& p = pattern;
    expects(p.size() == static_cast<std::size_t>(k) * k, "trigger pattern must be k×k");
    for (float v : p) expects(v == 0.0f || v == 1.0f, "trigger pattern values must be 0 or 1");
  }
};

namespace detail {

// Calls fn(y, x, value) for every stamped pixel of one channel plane.
template <typename Fn>
void for_each_stamp(const TriggerSpec& t, const ImageDims& d, Fn&& fn) {
  const auto& p = t.pattern;
  const int k = t.k;
  auto stamp = [&](int y0, int x0, bool mirrored) {
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        const int src_j = mirrored ? k - 1 - j : j;
        fn(y0 + i, x0 + j, p[static_cast<std::size_t>(i) * k + src_j]);
      }
  };
  const int bottom = d.height - k, right = d.width - k;
  if (t.kind == TriggerSpec::Kind::kFourCorner) {
    // Right-hand corners carry the mirrored pattern, so the stamped image is
    // invariant under horizontal flip.
    stamp(0, 0, false);
    stamp(0, right, true);
    stamp(bottom, 0, false);
    stamp(bottom, right, true);
  } else {
    stamp(bottom, right, false);
  }
}

}  // namespace detail

inline void apply_trigger_inplace(std::span<float> image, const ImageDims& d,
                                  const TriggerSpec& t) {
  t.validate(d);
  expects(image.size() == d.size(), "apply_trigger: image size does not match dims");
  for (int c = 0; c < d.channels; ++c) {
    float* plane = image.data() + static_cast<std::size_t>(c) * d.height * d.width;
    detail::for_each_stamp(t, d, [&](int y, int x, float v) { plane[y * d.width + x] = v; });
  }
}

inline Image apply_trigger(std::span<const float> image, const ImageDims& d,
                           const TriggerSpec& t) {
  Image out(image.begin(), image.end());
  apply_trigger_inplace(out, d, t);
  return out;
}

// 1 where the trigger writes, per pixel of the full image.
inline std::vector<std::uint8_t> trigger_mask(const ImageDims& d, const TriggerSpec& t) {
  t.validate(d);
  std::vector<std::uint8_t> mask(d.size(), 0);
  for (int c = 0; c < d.channels; ++c) {
    auto* plane = mask.data() + static_cast<std::size_t>(c) * d.height * d.width;
    detail::for_each_stamp(t, d, [&](int y, int x, float) { plane[y * d.width + x] = 1; });
  }
  return mask;
}

// True iff every trigger pixel holds exactly the stamped value.
inline bool has_exact_trigger(std::span<const float> image, const ImageDims& d,
                              const TriggerSpec& t) {
  bool ok = true;
  for (int c = 0; c < d.channels && ok; ++c) {
    const float* plane = image.data() + static_cast<std::size_t>(c) * d.height * d.width;
    detail::for_each_stamp(t, d, [&](int y, int x, float v) {
      if (plane[y * d.width + x] != v) ok = false;
    });
  }
  return ok;
}

}  // namespace pslab::poisonforge
