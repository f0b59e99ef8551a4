#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pslab/datakit/io.hpp"
#include "pslab/numgrad/ops.hpp"
#include "pslab/rng.hpp"

namespace pslab::trainers {

using numgrad::Tensor;

// Anything that maps an [N,C,H,W] batch to [N,classes] logits.
template <typename M>
concept LogitModel = requires(const M& m, const Tensor& x) {
  { m.forward(x) } -> std::same_as<Tensor>;
  { m.class_count() } -> std::convertible_to<int>;
};

struct ModelSpec {
  int channels = 1;
  int image_size = 24;
  int classes = 10;
  int conv1 = 8;
  int conv2 = 16;
  int hidden = 48;

  bool operator==(const ModelSpec&) const = default;
};

// 2×(conv3×3 → ReLU → maxpool2) → affine → ReLU → affine.
class Classifier {
 public:
  Classifier() = default;

  Classifier(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    expects(spec.image_size % 4 == 0 && spec.image_size >= 4,
            "classifier needs an image size divisible by 4");
    expects(spec.classes >= 2 && spec.channels >= 1 && spec.conv1 >= 1 && spec.conv2 >= 1 &&
                spec.hidden >= 1,
            "classifier extents must be positive");
    Rng rng(derive_seed(seed, {stream::kInit}));
    const int flat = flat_features();
    params_ = {
        he_normal(rng, {spec.conv1, spec.channels, 3, 3}, spec.channels * 9, 2.0),
        Tensor::zeros({spec.conv1}, true),
        he_normal(rng, {spec.conv2, spec.conv1, 3, 3}, spec.conv1 * 9, 2.0),
        Tensor::zeros({spec.conv2}, true),
        he_normal(rng, {flat, spec.hidden}, flat, 2.0),
        Tensor::zeros({spec.hidden}, true),
        he_normal(rng, {spec.hidden, spec.classes}, spec.hidden, 1.0),
        Tensor::zeros({spec.classes}, true),
    };
  }

  const ModelSpec& spec() const { return spec_; }
  int class_count() const { return spec_.classes; }
  int flat_features() const {
    const int s = spec_.image_size / 4;
    return spec_.conv2 * s * s;
  }

  std::span<Tensor> parameters() { return params_; }
  std::span<const Tensor> parameters() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  Tensor forward(const Tensor& x) const {
    expects(x.rank() == 4 && x.dim(1) == spec_.channels && x.dim(2) == spec_.image_size &&
                x.dim(3) == spec_.image_size,
            "classifier input must be [N," + std::to_string(spec_.channels) + "," +
                std::to_string(spec_.image_size) + "," + std::to_string(spec_.image_size) +
                "], got " + numgrad::shape_str(x.shape()));
    using namespace numgrad;
    auto h = max_pool2(relu(conv2d(x, params_[0], params_[1], 1)));
    h = max_pool2(relu(conv2d(h, params_[2], params_[3], 1)));
    h = reshape(h, {x.dim(0), flat_features()});
    h = relu(affine(h, params_[4], params_[5]));
    return affine(h, params_[6], params_[7]);
  }

  // Deep copy with independent parameter storage.
  Classifier clone() const {
    Classifier c;
    c.spec_ = spec_;
    for (const auto& p : params_) {
      auto copy = p.detach();
      copy.set_requires_grad(p.requires_grad());
      c.params_.push_back(std::move(copy));
    }
    return c;
  }

  bool same_parameters(const Classifier& other) const {
    if (!(spec_ == other.spec_) || params_.size() != other.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto a = params_[i].values();
      auto b = other.params_[i].values();
      if (!std::equal(a.begin(), a.end(), b.begin(), b.end())) return false;
    }
    return true;
  }

  // Used by the model container reader.
  static Classifier from_parameters(const ModelSpec& spec, std::vector<Tensor> params) {
    Classifier reference(spec, 0);
    expects(params.size() == reference.params_.size(), "parameter count does not match spec");
    for (std::size_t i = 0; i < params.size(); ++i) {
      expects(params[i].shape() == reference.params_[i].shape(),
              "parameter " + std::to_string(i) + " has shape " +
                  numgrad::shape_str(params[i].shape()) + ", expected " +
                  numgrad::shape_str(reference.params_[i].shape()));
      params[i].set_requires_grad(true);
    }
    reference.params_ = std::move(params);
    return reference;
  }

 private:
  static Tensor he_normal(Rng& rng, numgrad::Shape shape, int fan_in, double gain) {
    const double stddev = std::sqrt(gain / fan_in);
    std::vector<float> v(numgrad::shape_size(shape));
    for (auto& x : v) x = static_cast<float>(stddev * rng.normal());
    return Tensor(std::move(shape), std::move(v), true);
  }

  ModelSpec spec_;
  std::vector<Tensor> params_;
};

inline Tensor as_batch(std::span<const float> pixels, int channels, int height, int width) {
  const std::size_t per = static_cast<std::size_t>(channels) * height * width;
  expects(per > 0 && pixels.size() % per == 0, "pixel buffer is not a whole number of images");
  return Tensor({static_cast<int>(pixels.size() / per), channels, height, width},
                std::vector<float>(pixels.begin(), pixels.end()));
}

// Logits without recording a graph, evaluated in chunks.
template <LogitModel M>
std::vector<float> predict_logits(const M& model, std::span<const float> pixels, int channels,
                                  int height, int width, std::size_t chunk = 256) {
  numgrad::NoGradGuard no_grad;
  const std::size_t per = static_cast<std::size_t>(channels) * height * width;
  const std::size_t n = pixels.size() / per;
  std::vector<float> out;
  out.reserve(n * static_cast<std::size_t>(model.class_count()));
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t count = std::min(chunk, n - start);
    auto logits =
        model.forward(as_batch(pixels.subspan(start * per, count * per), channels, height, width));
    out.insert(out.end(), logits.values().begin(), logits.values().end());
  }
  return out;
}

template <LogitModel M>
std::vector<int> predict_classes(const M& model, std::span<const float> pixels, int channels,
                                 int height, int width) {
  const auto logits = predict_logits(model, pixels, channels, height, width);
  const int c = model.class_count();
  std::vector<int> out(logits.size() / c);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float* row = logits.data() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

// Model container, little-endian:
//   "PMD1" | u32 version=1 | u32 channels, image_size, classes, conv1, conv2, hidden
//   | u32 tensor count | per tensor: u32 rank, rank × u32 extent, f32 values
inline constexpr char kModelMagic[4] = {'P', 'M', 'D', '1'};
inline constexpr std::uint32_t kModelVersion = 1;

inline std::vector<std::uint8_t> encode_model(const Classifier& model) {
  namespace b = datakit::bytes;
  std::vector<std::uint8_t> out(std::begin(kModelMagic), std::end(kModelMagic));
  const auto& s = model.spec();
  b::put_u32(out, kModelVersion);
  for (int v : {s.channels, s.image_size, s.classes, s.conv1, s.conv2, s.hidden})
    b::put_u32(out, static_cast<std::uint32_t>(v));
  b::put_u32(out, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    b::put_u32(out, static_cast<std::uint32_t>(p.rank()));
    for (int d : p.shape()) b::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : p.values()) b::put_f32(out, v);
  }
  return out;
}

inline Classifier decode_model(std::span<const std::uint8_t> data,
                               const std::string& what = "model") {
  datakit::bytes::Reader r(data, what);
  r.magic(kModelMagic);
  const auto version = r.u32("version");
  if (version != kModelVersion) r.fail("unsupported model version " + std::to_string(version));
  ModelSpec s;
  s.channels = static_cast<int>(r.u32("channels"));
  s.image_size = static_cast<int>(r.u32("image_size"));
  s.classes = static_cast<int>(r.u32("classes"));
  s.conv1 = static_cast<int>(r.u32("conv1"));
  s.conv2 = static_cast<int>(r.u32("conv2"));
  s.hidden = static_cast<int>(r.u32("hidden"));
  if (s.channels < 1 || s.image_size < 4 || s.image_size % 4 != 0 || s.classes < 2 ||
      s.conv1 < 1 || s.conv2 < 1 || s.hidden < 1 || s.image_size > 4096 || s.classes > 65535)
    r.fail("invalid architecture header");
  const auto count = r.u32("tensor count");
  Classifier reference(s, 0);
  if (count != reference.parameters().size())
    r.fail("expected " + std::to_string(reference.parameters().size()) + " tensors, found " +
           std::to_string(count));
  std::vector<Tensor> params;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto rank = r.u32("rank");
    const auto& expected = reference.parameters()[t].shape();
    if (rank != expected.size()) r.fail("tensor " + std::to_string(t) + " has wrong rank");
    numgrad::Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.u32("extent"));
    if (shape != expected)
      r.fail("tensor " + std::to_string(t) + " shape " + numgrad::shape_str(shape) +
             " does not match architecture " + numgrad::shape_str(expected));
    std::vector<float> values(numgrad::shape_size(shape));
    r.need(values.size() * 4, "tensor values");
    for (auto& v : values) {
      v = r.f32("value");
      if (!std::isfinite(v)) throw FormatError(what + ": non-finite parameter", r.offset() - 4);
    }
    params.emplace_back(std::move(shape), std::move(values), true);
  }
  if (!r.at_end()) r.fail("trailing bytes after last tensor");
  return Classifier::from_parameters(s, std::move(params));
}

inline void write_model(const Classifier& model, const std::filesystem::path& path) {
  datakit::bytes::write_file(path, encode_model(model));
}

inline Classifier read_model(const std::filesystem::path& path) {
  return decode_model(datakit::bytes::read_file(path), path.string());
}

}  // namespace pslab::trainers
