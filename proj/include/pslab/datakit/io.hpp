#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "pslab/datakit/dataset.hpp"

// Binary dataset container, all integers little-endian:
//   "PSL1" | u32 N | u32 C_ch | u32 H | u32 W | u32 C
//   | N × u16 label (0xFFFF = unlabeled) | N × u8 poison flag
//   | N·C_ch·H·W × f32 pixel
//   | optional: u8 0x47, N × u16 hidden ground truth
namespace pslab::datakit {

inline constexpr char kDatasetMagic[4] = {'P', 'S', 'L', '1'};
inline constexpr std::uint8_t kHiddenTruthMarker = 0x47;

namespace bytes {

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xFF));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

// Bounds-checked little-endian reader that reports byte offsets on failure.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, std::string what)
      : data_(data), what_(std::move(what)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  void need(std::size_t n, std::string_view field) const {
    if (remaining() < n) {
      throw FormatError(what_ + ": truncated while reading " + std::string(field) +
                            ", expected " + std::to_string(pos_ + n) + " bytes, file has " +
                            std::to_string(data_.size()),
                        pos_);
    }
  }

  std::uint8_t u8(std::string_view field) {
    need(1, field);
    return data_[pos_++];
  }
  std::uint16_t u16(std::string_view field) {
    need(2, field);
    const auto v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(std::string_view field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(std::string_view field) { return std::bit_cast<float>(u32(field)); }

  void magic(const char (&expected)[4]) {
    need(4, "magic");
    if (std::memcmp(data_.data() + pos_, expected, 4) != 0) {
      throw FormatError(what_ + ": bad magic, expected \"" + std::string(expected, 4) + "\"",
                        pos_);
    }
    pos_ += 4;
  }

  [[noreturn]] void fail(const std::string& message) const {
    throw FormatError(what_ + ": " + message, pos_);
  }

 private:
  std::span<const std::uint8_t> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace bytes

inline std::vector<std::uint8_t> encode_dataset(const LabeledDataset& d) {
  d.validate();
  std::vector<std::uint8_t> out;
  out.reserve(24 + d.size() * 3 + d.pixels.size() * 4);
  out.insert(out.end(), std::begin(kDatasetMagic), std::end(kDatasetMagic));
  bytes::put_u32(out, static_cast<std::uint32_t>(d.size()));
  bytes::put_u32(out, static_cast<std::uint32_t>(d.channels));
  bytes::put_u32(out, static_cast<std::uint32_t>(d.height));
  bytes::put_u32(out, static_cast<std::uint32_t>(d.width));
  bytes::put_u32(out, static_cast<std::uint32_t>(d.class_count));
  for (auto l : d.labels) bytes::put_u16(out, l);
  for (auto f : d.poison_flags) bytes::put_u8(out, f ? 1 : 0);
  for (float v : d.pixels) bytes::put_f32(out, v);
  if (d.hidden_truth) {
    bytes::put_u8(out, kHiddenTruthMarker);
    for (auto t : *d.hidden_truth) bytes::put_u16(out, t);
  }
  return out;
}

inline LabeledDataset decode_dataset(std::span<const std::uint8_t> data,
                                     const std::string& what = "dataset") {
  bytes::Reader r(data, what);
  r.magic(kDatasetMagic);
  LabeledDataset d;
  const std::uint32_t n = r.u32("N");
  d.channels = static_cast<int>(r.u32("C_ch"));
  d.height = static_cast<int>(r.u32("H"));
  d.width = static_cast<int>(r.u32("W"));
  d.class_count = static_cast<int>(r.u32("C"));
  if (d.channels < 1 || d.height < 1 || d.width < 1) r.fail("non-positive image extent");
  if (d.class_count < 1 || d.class_count >= kUnlabeled) r.fail("class count out of range");

  const std::size_t pixels = static_cast<std::size_t>(n) * d.image_size();
  r.need(static_cast<std::size_t>(n) * 3 + pixels * 4, "body");
  d.labels.resize(n);
  for (auto& l : d.labels) {
    l = r.u16("label");
    if (l != kUnlabeled && l >= d.class_count)
      throw FormatError(what + ": label " + std::to_string(l) + " >= class count",
                        r.offset() - 2);
  }
  d.poison_flags.resize(n);
  for (auto& f : d.poison_flags) {
    f = r.u8("poison flag");
    if (f > 1) throw FormatError(what + ": poison flag must be 0 or 1", r.offset() - 1);
  }
  d.pixels.resize(pixels);
  for (auto& v : d.pixels) {
    v = r.f32("pixel");
    if (!(v >= 0.0f && v <= 1.0f))
      throw FormatError(what + ": pixel value outside [0,1]", r.offset() - 4);
  }
  if (!r.at_end()) {
    if (r.u8("hidden truth marker") != kHiddenTruthMarker)
      throw FormatError(what + ": unexpected trailing byte", r.offset() - 1);
    std::vector<std::uint16_t> truth(n);
    for (auto& t : truth) {
      t = r.u16("hidden truth");
      if (t >= d.class_count)
        throw FormatError(what + ": hidden truth label out of range", r.offset() - 2);
    }
    d.hidden_truth = std::move(truth);
    if (!r.at_end()) r.fail("trailing bytes after hidden truth");
  }
  return d;
}

inline void write_dataset(const LabeledDataset& d, const std::filesystem::path& path) {
  const auto buf = encode_dataset(d);
  bytes::write_file(path, buf);
}

inline LabeledDataset read_dataset(const std::filesystem::path& path) {
  const auto buf = bytes::read_file(path);
  return decode_dataset(buf, path.string());
}

}  // namespace pslab::datakit
