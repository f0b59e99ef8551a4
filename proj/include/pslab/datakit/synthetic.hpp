#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "pslab/datakit/dataset.hpp"
#include "pslab/rng.hpp"

// Procedural glyph dataset: one mirror-symmetric glyph family per class,
// rendered grayscale with position/scale/stroke/rotation jitter plus
// Gaussian pixel noise.
namespace pslab::datakit {

inline constexpr int kGlyphFamilies = 10;
inline constexpr float kPixelNoiseSigma = 0.05f;
inline constexpr double kAmplitudeMin = 0.45;
inline constexpr double kVertexJitter = 0.15;
inline constexpr double kStrokeStrengthMin = 0.55;
inline constexpr double kClutterProb = 0.5;

namespace detail {

struct Seg {
  float x0, y0, x1, y1;
};

struct Glyph {
  std::vector<Seg> segments;
  float ring_radius = 0.0f;  // > 0: circle outline
  float disk_radius = 0.0f;  // > 0: filled disk
};

// Glyph coordinates live in [-1,1]², y pointing down.
inline const std::array<Glyph, kGlyphFamilies>& glyph_table() {
  static const std::array<Glyph, kGlyphFamilies> table = [] {
    std::array<Glyph, kGlyphFamilies> g{};
    g[0].ring_radius = 0.8f;  // ring
    g[1].segments = {{-0.7f, -0.7f, 0.7f, -0.7f},
                     {0.7f, -0.7f, 0.7f, 0.7f},
                     {0.7f, 0.7f, -0.7f, 0.7f},
                     {-0.7f, 0.7f, -0.7f, -0.7f}};  // square outline
    g[2].segments = {{-0.85f, 0.0f, 0.85f, 0.0f}, {0.0f, -0.85f, 0.0f, 0.85f}};  // plus
    g[3].segments = {{-0.7f, -0.7f, 0.7f, 0.7f}, {-0.7f, 0.7f, 0.7f, -0.7f}};    // X
    g[4].segments = {{0.0f, -0.8f, -0.8f, 0.65f},
                     {-0.8f, 0.65f, 0.8f, 0.65f},
                     {0.8f, 0.65f, 0.0f, -0.8f}};  // triangle
    g[5].segments = {{0.0f, -0.9f, 0.9f, 0.0f},
                     {0.9f, 0.0f, 0.0f, 0.9f},
                     {0.0f, 0.9f, -0.9f, 0.0f},
                     {-0.9f, 0.0f, 0.0f, -0.9f}};  // diamond
    g[6].segments = {{-0.8f, -0.7f, 0.8f, -0.7f}, {0.0f, -0.7f, 0.0f, 0.85f}};  // T
    g[7].segments = {{-0.6f, -0.8f, -0.6f, 0.8f},
                     {0.6f, -0.8f, 0.6f, 0.8f},
                     {-0.6f, 0.0f, 0.6f, 0.0f}};  // H
    g[8].segments = {{-0.8f, -0.35f, 0.8f, -0.35f}, {-0.8f, 0.35f, 0.8f, 0.35f}};  // =
    g[9].disk_radius = 0.45f;  // blob
    return g;
  }();
  return table;
}

inline float segment_distance(float px, float py, const Seg& s) {
  const float dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const float len2 = dx * dx + dy * dy;
  float t = len2 > 0.0f ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0f;
  t = std::clamp(t, 0.0f, 1.0f);
  const float ex = px - (s.x0 + t * dx), ey = py - (s.y0 + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

// Distance from a glyph-space point to the glyph's stroke centerline (or
// to the disk boundary, zero inside).
inline float glyph_distance(const Glyph& g, float u, float v) {
  float d = 1e9f;
  for (const auto& s : g.segments) d = std::min(d, segment_distance(u, v, s));
  const float r = std::sqrt(u * u + v * v);
  if (g.ring_radius > 0.0f) d = std::min(d, std::abs(r - g.ring_radius));
  if (g.disk_radius > 0.0f) d = std::min(d, std::max(0.0f, r - g.disk_radius));
  return d;
}

inline void render_glyph(int cls, int size, Rng& rng, float* out) {
  const Glyph& base = glyph_table()[cls];
  const float unit = static_cast<float>(size) / 24.0f;
  const float cx = 0.5f * size + static_cast<float>(rng.uniform(-2.0, 2.0)) * unit;
  const float cy = 0.5f * size + static_cast<float>(rng.uniform(-2.0, 2.0)) * unit;
  const float radius = static_cast<float>(rng.uniform(6.0, 8.5)) * unit;
  const float stroke = static_cast<float>(rng.uniform(1.2, 2.2)) * unit;
  const float amp = static_cast<float>(rng.uniform(kAmplitudeMin, 1.0));
  const float background = static_cast<float>(rng.uniform(0.0, 0.15));
  const float angle = static_cast<float>(rng.uniform(-12.0, 12.0) * std::numbers::pi / 180.0);
  const float ca = std::cos(angle), sa = std::sin(angle);

  // Per-sample distortion: endpoint jitter and uneven stroke strength.
  struct Stroke {
    Glyph shape;
    float strength;
  };
  std::vector<Stroke> strokes;
  for (const auto& seg : base.segments) {
    Glyph g;
    auto j = [&rng] { return static_cast<float>(rng.uniform(-kVertexJitter, kVertexJitter)); };
    g.segments = {{seg.x0 + j(), seg.y0 + j(), seg.x1 + j(), seg.y1 + j()}};
    strokes.push_back({g, static_cast<float>(rng.uniform(kStrokeStrengthMin, 1.0))});
  }
  if (base.ring_radius > 0.0f || base.disk_radius > 0.0f) {
    Glyph g;
    g.ring_radius = base.ring_radius * static_cast<float>(rng.uniform(0.85, 1.1));
    g.disk_radius = base.disk_radius * static_cast<float>(rng.uniform(0.8, 1.2));
    strokes.push_back({g, static_cast<float>(rng.uniform(kStrokeStrengthMin, 1.0))});
  }
  // Clutter: a stray stroke unrelated to the class.
  if (rng.bernoulli(kClutterProb)) {
    Glyph g;
    const auto x0 = static_cast<float>(rng.uniform(-0.9, 0.9));
    const auto y0 = static_cast<float>(rng.uniform(-0.9, 0.9));
    const double a = rng.uniform(0.0, std::numbers::pi);
    const double len = rng.uniform(0.5, 1.2);
    g.segments = {{x0, y0, x0 + static_cast<float>(len * std::cos(a)),
                   y0 + static_cast<float>(len * std::sin(a))}};
    strokes.push_back({g, static_cast<float>(rng.uniform(0.4, 0.9))});
  }

  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float px = x + 0.5f - cx, py = y + 0.5f - cy;
      const float u = (ca * px + sa * py) / radius;
      const float v = (-sa * px + ca * py) / radius;
      float coverage = 0.0f;
      for (const auto& s : strokes) {
        const float dist_px = glyph_distance(s.shape, u, v) * radius;
        coverage = std::max(coverage,
                            s.strength * std::clamp(0.5f * stroke - dist_px + 0.5f, 0.0f, 1.0f));
      }
      float value = background + (amp - background) * coverage;
      value += kPixelNoiseSigma * static_cast<float>(rng.normal());
      out[y * size + x] = std::clamp(value, 0.0f, 1.0f);
    }
}

}  // namespace detail

// Sample i has class i mod C; each sample draws from its own RNG stream.
inline LabeledDataset generate_synthetic(std::size_t n_per_class, int class_count, int image_size,
                                         std::uint64_t seed) {
  expects(class_count >= 2, "synthetic dataset needs at least 2 classes");
  expects(class_count <= kGlyphFamilies,
          "synthetic dataset supports at most " + std::to_string(kGlyphFamilies) + " classes");
  expects(image_size >= 16, "image size " + std::to_string(image_size) +
                                " too small to render glyphs (minimum 16)");
  LabeledDataset d;
  d.channels = 1;
  d.height = image_size;
  d.width = image_size;
  d.class_count = class_count;
  const std::size_t n = n_per_class * static_cast<std::size_t>(class_count);
  d.pixels.resize(n * d.image_size());
  d.labels.resize(n);
  d.poison_flags.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % static_cast<std::size_t>(class_count));
    Rng rng(derive_seed(seed, {stream::kData, i}));
    detail::render_glyph(cls, image_size, rng, d.pixels.data() + i * d.image_size());
    d.labels[i] = static_cast<std::uint16_t>(cls);
  }
  return d;
}

}  // namespace pslab::datakit
