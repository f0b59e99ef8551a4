#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pslab/errors.hpp"
#include "pslab/rng.hpp"

namespace pslab::augment {

struct ImageDims {
  int channels = 1;
  int height = 0;
  int width = 0;
  std::size_t size() const { return static_cast<std::size_t>(channels) * height * width; }
};

using Image = std::vector<float>;

enum class StrongOp { kIntensityShift, kContrastScale, kCutout, kTranslate, kSmallRotate };

inline const char* to_string(StrongOp op) {
  switch (op) {
    case StrongOp::kIntensityShift: return "intensity-shift";
    case StrongOp::kContrastScale: return "contrast-scale";
    case StrongOp::kCutout: return "cutout";
    case StrongOp::kTranslate: return "translate";
    case StrongOp::kSmallRotate: return "small-rotate";
  }
  return "?";
}

inline StrongOp parse_strong_op(const std::string& name) {
  for (auto op : {StrongOp::kIntensityShift, StrongOp::kContrastScale, StrongOp::kCutout,
                  StrongOp::kTranslate, StrongOp::kSmallRotate})
    if (name == to_string(op)) return op;
  throw ContractViolation("unknown strong augmentation op '" + name + "'");
}

struct AugmentPolicy {
  enum class Kind { kWeak, kStrong, kNone };
  Kind kind = Kind::kWeak;
  int pad = 2;
  double flip_prob = 0.5;
  std::vector<StrongOp> strong_ops = {StrongOp::kIntensityShift, StrongOp::kContrastScale,
                                      StrongOp::kTranslate, StrongOp::kSmallRotate};
  int strong_ops_per_image = 2;
  double magnitude = 1.0;
  bool final_cutout = true;
  float cutout_fill = 0.5f;

  static AugmentPolicy weak() { return {}; }
  static AugmentPolicy strong() {
    AugmentPolicy p;
    p.kind = Kind::kStrong;
    return p;
  }
  static AugmentPolicy none() {
    AugmentPolicy p;
    p.kind = Kind::kNone;
    return p;
  }

  void validate() const {
    expects(pad >= 0, "augment pad must be non-negative");
    expects(flip_prob >= 0.0 && flip_prob <= 1.0, "flip probability must lie in [0,1]");
    expects(magnitude >= 0.0 && magnitude <= 1.0, "augment magnitude must lie in [0,1]");
    expects(strong_ops_per_image >= 0, "strong_ops_per_image must be non-negative");
    if (kind == Kind::kStrong && strong_ops_per_image > 0)
      expects(!strong_ops.empty(), "strong policy with an empty op set");
  }
};

// Primitive transforms. All return a new image and clamp to [0,1].

inline Image flip_horizontal(std::span<const float> img, const ImageDims& d) {
  Image out(img.size());
  for (int c = 0; c < d.channels; ++c)
    for (int y = 0; y < d.height; ++y) {
      const std::size_t row = (static_cast<std::size_t>(c) * d.height + y) * d.width;
      for (int x = 0; x < d.width; ++x) out[row + x] = img[row + d.width - 1 - x];
    }
  return out;
}

// Zero-pads by `pad` and crops the original extent at (off_y, off_x) in the
// padded frame; off = pad is the identity crop.
inline Image pad_crop(std::span<const float> img, const ImageDims& d, int pad, int off_y,
                      int off_x) {
  expects(off_y >= 0 && off_y <= 2 * pad && off_x >= 0 && off_x <= 2 * pad,
          "crop offset outside padded frame");
  Image out(img.size(), 0.0f);
  for (int c = 0; c < d.channels; ++c)
    for (int y = 0; y < d.height; ++y) {
      const int sy = y + off_y - pad;
      if (sy < 0 || sy >= d.height) continue;
      for (int x = 0; x < d.width; ++x) {
        const int sx = x + off_x - pad;
        if (sx < 0 || sx >= d.width) continue;
        out[(static_cast<std::size_t>(c) * d.height + y) * d.width + x] =
            img[(static_cast<std::size_t>(c) * d.height + sy) * d.width + sx];
      }
    }
  return out;
}

inline Image translate(std::span<const float> img, const ImageDims& d, int dy, int dx) {
  Image out(img.size(), 0.0f);
  for (int c = 0; c < d.channels; ++c)
    for (int y = 0; y < d.height; ++y) {
      const int sy = y - dy;
      if (sy < 0 || sy >= d.height) continue;
      for (int x = 0; x < d.width; ++x) {
        const int sx = x - dx;
        if (sx < 0 || sx >= d.width) continue;
        out[(static_cast<std::size_t>(c) * d.height + y) * d.width + x] =
            img[(static_cast<std::size_t>(c) * d.height + sy) * d.width + sx];
      }
    }
  return out;
}

inline Image intensity_shift(std::span<const float> img, float delta) {
  Image out(img.begin(), img.end());
  for (auto& v : out) v = std::clamp(v + delta, 0.0f, 1.0f);
  return out;
}

// Scales deviations from the per-image mean.
inline Image contrast_scale(std::span<const float> img, float factor) {
  double mean = 0.0;
  for (float v : img) mean += v;
  mean /= static_cast<double>(std::max<std::size_t>(img.size(), 1));
  Image out(img.size());
  const auto m = static_cast<float>(mean);
  for (std::size_t i = 0; i < img.size(); ++i)
    out[i] = std::clamp(m + factor * (img[i] - m), 0.0f, 1.0f);
  return out;
}

inline Image cutout(std::span<const float> img, const ImageDims& d, int y0, int x0, int size,
                    float fill) {
  Image out(img.begin(), img.end());
  for (int c = 0; c < d.channels; ++c)
    for (int y = std::max(0, y0); y < std::min(d.height, y0 + size); ++y)
      for (int x = std::max(0, x0); x < std::min(d.width, x0 + size); ++x)
        out[(static_cast<std::size_t>(c) * d.height + y) * d.width + x] = fill;
  return out;
}

// Bilinear rotation about the image centre, zero outside the source.
inline Image rotate(std::span<const float> img, const ImageDims& d, double degrees) {
  Image out(img.size(), 0.0f);
  const double a = degrees * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  const double cy = 0.5 * (d.height - 1), cx = 0.5 * (d.width - 1);
  for (int c = 0; c < d.channels; ++c) {
    const float* src = img.data() + static_cast<std::size_t>(c) * d.height * d.width;
    float* dst = out.data() + static_cast<std::size_t>(c) * d.height * d.width;
    auto at = [&](int y, int x) -> double {
      if (y < 0 || y >= d.height || x < 0 || x >= d.width) return 0.0;
      return src[y * d.width + x];
    };
    for (int y = 0; y < d.height; ++y)
      for (int x = 0; x < d.width; ++x) {
        const double sx = ca * (x - cx) + sa * (y - cy) + cx;
        const double sy = -sa * (x - cx) + ca * (y - cy) + cy;
        const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
        const double fx = sx - x0, fy = sy - y0;
        const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                         fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        dst[y * d.width + x] = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
      }
  }
  return out;
}

namespace detail {

inline Image flip_and_crop(std::span<const float> img, const ImageDims& d,
                           const AugmentPolicy& p, Rng& rng) {
  const bool flip = rng.bernoulli(p.flip_prob);
  const int off_y = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * p.pad + 1)));
  const int off_x = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * p.pad + 1)));
  Image cur = flip ? flip_horizontal(img, d) : Image(img.begin(), img.end());
  if (p.pad > 0) cur = pad_crop(cur, d, p.pad, off_y, off_x);
  return cur;
}

inline double signed_magnitude(Rng& rng, double max_magnitude) {
  const double m = rng.uniform() * max_magnitude;
  return rng.bernoulli(0.5) ? m : -m;
}

inline Image apply_strong_op(StrongOp op, const Image& img, const ImageDims& d,
                             const AugmentPolicy& p, Rng& rng) {
  switch (op) {
    case StrongOp::kIntensityShift:
      return intensity_shift(img, static_cast<float>(0.3 * signed_magnitude(rng, p.magnitude)));
    case StrongOp::kContrastScale:
      return contrast_scale(img,
                            static_cast<float>(1.0 + 0.6 * signed_magnitude(rng, p.magnitude)));
    case StrongOp::kCutout: {
      const int size = static_cast<int>(std::lround(rng.uniform() * p.magnitude * d.height / 4.0));
      const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(d.height)));
      const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(d.width)));
      return cutout(img, d, y0 - size / 2, x0 - size / 2, size, p.cutout_fill);
    }
    case StrongOp::kTranslate: {
      const double reach = d.height / 6.0;
      const int dy = static_cast<int>(std::lround(signed_magnitude(rng, p.magnitude) * reach));
      const int dx = static_cast<int>(std::lround(signed_magnitude(rng, p.magnitude) * reach));
      return translate(img, d, dy, dx);
    }
    case StrongOp::kSmallRotate:
      return rotate(img, d, 20.0 * signed_magnitude(rng, p.magnitude));
  }
  return img;
}

}  // namespace detail

// T_w: random horizontal flip, then zero-pad and random crop.
inline Image weak_view(std::span<const float> img, const ImageDims& d, const AugmentPolicy& p,
                       std::uint64_t seed, std::uint64_t index) {
  p.validate();
  if (p.kind == AugmentPolicy::Kind::kNone) return Image(img.begin(), img.end());
  Rng rng(derive_seed(seed, {stream::kWeak, index}));
  return detail::flip_and_crop(img, d, p, rng);
}

// T_s: flip/crop as in T_w, then strong_ops_per_image ops drawn uniformly with
// replacement at magnitudes in [0, magnitude], then an (H/4)×(W/4) cutout.
inline Image strong_view(std::span<const float> img, const ImageDims& d, const AugmentPolicy& p,
                         std::uint64_t seed, std::uint64_t index) {
  p.validate();
  if (p.kind == AugmentPolicy::Kind::kNone) return Image(img.begin(), img.end());
  Rng rng(derive_seed(seed, {stream::kStrong, index}));
  Image cur = detail::flip_and_crop(img, d, p, rng);
  if (p.kind == AugmentPolicy::Kind::kStrong) {
    for (int k = 0; k < p.strong_ops_per_image; ++k) {
      const auto op = p.strong_ops[rng.below(p.strong_ops.size())];
      cur = detail::apply_strong_op(op, cur, d, p, rng);
    }
    if (p.final_cutout) {
      const int ch = d.height / 4, cw = d.width / 4;
      const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(d.height - ch + 1)));
      const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(d.width - cw + 1)));
      Image patched(cur);
      for (int c = 0; c < d.channels; ++c)
        for (int y = y0; y < y0 + ch; ++y)
          for (int x = x0; x < x0 + cw; ++x)
            patched[(static_cast<std::size_t>(c) * d.height + y) * d.width + x] = p.cutout_fill;
      cur = std::move(patched);
    }
  }
  for (auto& v : cur) v = std::clamp(v, 0.0f, 1.0f);
  return cur;
}

// Applies a view function to each image of a packed batch; view ids are
// first_index, first_index + 1, ...
template <typename ViewFn>
std::vector<float> batch_views(std::span<const float> pixels, const ImageDims& d,
                               std::uint64_t first_index, ViewFn&& view) {
  const std::size_t n = pixels.size() / d.size();
  std::vector<float> out;
  out.reserve(pixels.size());
  for (std::size_t i = 0; i < n; ++i) {
    auto v = view(pixels.subspan(i * d.size(), d.size()), first_index + i);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

}  // namespace pslab::augment
