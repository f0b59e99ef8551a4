#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "pslab/datakit/io.hpp"
#include "pslab/datakit/synthetic.hpp"

namespace {

using namespace pslab;
using namespace pslab::datakit;
namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "pslab_test_datakit";
  fs::create_directories(dir);
  return dir / name;
}

TEST(Synthetic, ExactClassBalance) {
  const auto d = generate_synthetic(100, 10, 24, 5);
  ASSERT_EQ(d.size(), 1000u);
  for (int c = 0; c < 10; ++c) EXPECT_EQ(d.indices_of_class(c).size(), 100u);
  EXPECT_NO_THROW(d.validate());
  EXPECT_TRUE(std::all_of(d.poison_flags.begin(), d.poison_flags.end(), [](auto f) { return f == 0; }));
}

TEST(Synthetic, SameSeedIsBitIdentical) {
  const auto a = generate_synthetic(20, 10, 24, 9);
  const auto b = generate_synthetic(20, 10, 24, 9);
  EXPECT_EQ(encode_dataset(a), encode_dataset(b));
  const auto c = generate_synthetic(20, 10, 24, 10);
  EXPECT_NE(a.pixels, c.pixels);
}

TEST(Synthetic, PixelsStayInRange) {
  const auto d = generate_synthetic(30, 10, 16, 2);
  EXPECT_TRUE(std::all_of(d.pixels.begin(), d.pixels.end(), [](float v) { return v >= 0.0f && v <= 1.0f; }));
}

TEST(Synthetic, PreconditionsEnforced) {
  EXPECT_THROW(generate_synthetic(10, 10, 15, 1), ContractViolation);
  EXPECT_THROW(generate_synthetic(10, 1, 24, 1), ContractViolation);
  EXPECT_THROW(generate_synthetic(10, kGlyphFamilies + 1, 24, 1), ContractViolation);
}

TEST(Split, BalancedQuarterPerClass) {
  const auto d = generate_synthetic(100, 10, 24, 1);
  const auto s = split(d, {250, 3, true});
  ASSERT_EQ(s.labeled.size(), 250u);
  ASSERT_EQ(s.unlabeled.size(), 750u);
  for (int c = 0; c < 10; ++c) EXPECT_EQ(s.labeled.indices_of_class(c).size(), 25u);
  for (auto l : s.unlabeled.labels) EXPECT_EQ(l, kUnlabeled);
  ASSERT_TRUE(s.unlabeled.hidden_truth.has_value());
  for (std::size_t i = 0; i < s.unlabeled.size(); ++i)
    EXPECT_EQ(s.unlabeled.truth(i), d.labels[s.unlabeled_indices[i]]);
}

TEST(Split, AllLabeledLeavesUnlabeledEmpty) {
  const auto d = generate_synthetic(10, 10, 16, 1);
  const auto s = split(d, {100, 3, true});
  EXPECT_EQ(s.labeled.size(), 100u);
  EXPECT_TRUE(s.unlabeled.empty());
}

TEST(Split, PartitionProperty) {
  const auto d = generate_synthetic(12, 10, 16, 4);
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    for (bool balanced : {true, false}) {
      const auto s = split(d, {balanced ? 60u : 37u, seed, balanced});
      std::vector<std::size_t> all = s.labeled_indices;
      all.insert(all.end(), s.unlabeled_indices.begin(), s.unlabeled_indices.end());
      std::sort(all.begin(), all.end());
      ASSERT_EQ(all.size(), d.size());
      for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
      for (std::size_t i = 0; i < s.labeled.size(); ++i) {
        const auto src = d.image(s.labeled_indices[i]);
        EXPECT_TRUE(std::equal(src.begin(), src.end(), s.labeled.image(i).begin()));
      }
    }
}

TEST(Split, InvalidSpecsRejected) {
  const auto d = generate_synthetic(10, 10, 16, 1);
  EXPECT_THROW(split(d, {25, 1, true}), ContractViolation);
  EXPECT_THROW(split(d, {101, 1, false}), ContractViolation);
  EXPECT_NO_THROW(split(d, {25, 1, false}));
}

TEST(SampleBatch, FullBatchIsPermutation) {
  const auto d = generate_synthetic(5, 10, 16, 1);
  const auto b = sample_batch(d, d.size(), 7, 0);
  std::set<std::size_t> seen(b.indices.begin(), b.indices.end());
  EXPECT_EQ(seen.size(), d.size());
  EXPECT_EQ(b.pixels.size(), d.pixels.size());
}

TEST(SampleBatch, DeterministicPerSeedAndStep) {
  const auto d = generate_synthetic(5, 10, 16, 1);
  EXPECT_EQ(sample_batch(d, 8, 3, 17).indices, sample_batch(d, 8, 3, 17).indices);
  EXPECT_EQ(sample_batch(d, 8, 3, 17).pixels, sample_batch(d, 8, 3, 17).pixels);
  EXPECT_NE(sample_batch(d, 8, 3, 17).indices, sample_batch(d, 8, 4, 17).indices);
}

TEST(SampleBatch, EveryIndexOncePerEpoch) {
  const std::size_t n = 48, bs = 8;
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    std::vector<int> count(n, 0);
    for (std::uint64_t step = epoch * n / bs; step < (epoch + 1) * n / bs; ++step)
      for (auto i : sample_indices(n, bs, 21, step)) count[i] += 1;
    for (int c : count) EXPECT_EQ(c, 1);
  }
}

TEST(SampleBatch, EmptyDatasetRejected) { EXPECT_THROW(sample_indices(0, 4, 1, 0), ContractViolation); }

TEST(DatasetIo, RoundTripIsByteIdentical) {
  const auto d = generate_synthetic(10, 10, 24, 8);
  const auto path = temp_path("rt.psl");
  write_dataset(d, path);
  const auto back = read_dataset(path);
  EXPECT_EQ(back.pixels, d.pixels);
  EXPECT_EQ(back.labels, d.labels);
  const auto bytes1 = bytes::read_file(path);
  write_dataset(back, path);
  EXPECT_EQ(bytes::read_file(path), bytes1);
}

TEST(DatasetIo, UnlabeledSentinelAndHiddenTruthSurvive) {
  const auto d = generate_synthetic(10, 10, 16, 8);
  auto s = split(d, {30, 1, true});
  s.unlabeled.poison_flags[3] = 1;
  const auto back = decode_dataset(encode_dataset(s.unlabeled));
  EXPECT_EQ(back.labels, s.unlabeled.labels);
  EXPECT_EQ(back.labels[0], kUnlabeled);
  EXPECT_EQ(back.hidden_truth, s.unlabeled.hidden_truth);
  EXPECT_EQ(back.poison_flags, s.unlabeled.poison_flags);
  EXPECT_EQ(encode_dataset(back), encode_dataset(s.unlabeled));
}

TEST(DatasetIo, LayoutMatchesFormat) {
  auto d = generate_synthetic(1, 2, 16, 1);
  const auto buf = encode_dataset(d);
  ASSERT_EQ(buf.size(), 4u + 20u + 2 * 2 + 2 * 1 + 2 * 256 * 4);
  EXPECT_EQ(std::string(buf.begin(), buf.begin() + 4), "PSL1");
  EXPECT_EQ(buf[4], 2);   // N
  EXPECT_EQ(buf[8], 1);   // channels
  EXPECT_EQ(buf[12], 16); // H
  EXPECT_EQ(buf[20], 2);  // classes
  EXPECT_EQ(buf[24], 0);  // label 0
  EXPECT_EQ(buf[26], 1);  // label 1
}

TEST(DatasetIo, TruncationReportsLengths) {
  const auto buf = encode_dataset(generate_synthetic(2, 10, 16, 1));
  for (std::size_t cut : {std::size_t{2}, std::size_t{10}, buf.size() - 1}) {
    try {
      decode_dataset(std::span(buf).first(cut), "t.psl");
      FAIL() << "accepted a file truncated to " << cut;
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
      EXPECT_NE(msg.find("file has " + std::to_string(cut)), std::string::npos) << msg;
    }
  }
}

TEST(DatasetIo, MalformedInputsAreFormatErrors) {
  const auto good = encode_dataset(generate_synthetic(2, 10, 16, 1));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_dataset(bad_magic), FormatError);
  try {
    decode_dataset(bad_magic);
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  auto bad_label = good;
  bad_label[24] = 10;  // label ≥ C
  EXPECT_THROW(decode_dataset(bad_label), FormatError);
  auto bad_flag = good;
  bad_flag[24 + 2 * 20] = 2;
  EXPECT_THROW(decode_dataset(bad_flag), FormatError);
  auto trailing = good;
  trailing.push_back(0x00);
  EXPECT_THROW(decode_dataset(trailing), FormatError);
  auto bad_pixel = good;
  const std::size_t px = 24 + 3 * 20;
  bad_pixel[px + 3] = 0x7f;  // huge float
  bad_pixel[px + 2] = 0x80;
  EXPECT_THROW(decode_dataset(bad_pixel), FormatError);
}

TEST(DatasetIo, MissingFileIsIoError) {
  EXPECT_THROW(read_dataset(temp_path("does_not_exist.psl")), IoError);
}

}  // namespace
