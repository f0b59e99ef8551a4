#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pslab/evalkit/metrics.hpp"
#include "pslab/poisonforge/attack.hpp"

namespace pslab::evalkit {

struct ProfileOptions {
  poisonforge::PoisonMode mode = poisonforge::PoisonMode::kInterpolate;
  std::vector<float> strengths;  // ε for perturb, α for interpolate
  std::optional<poisonforge::TriggerSpec> trigger = poisonforge::TriggerSpec::four_corner();
  augment::AugmentPolicy view = augment::AugmentPolicy::weak();
  std::uint64_t seed = 0;
  int pgd_steps = 40;
  float pgd_step_scale = 2.5f;
  double entropy_base = std::exp(1.0);
};

struct ProfilePoint {
  poisonforge::PoisonMode mode = poisonforge::PoisonMode::kInterpolate;
  float strength = 0.0f;
  double percent_correct = 0.0;  // fraction in [0,1]
  double entropy = 0.0;

  bool operator==(const ProfilePoint&) const = default;
};

// For each strength: modify every image (PGD against its ground truth, or
// interpolation toward a random endpoint of a different class), stamp the
// trigger, take one weak view, and score the model's predictions.
// Interpolation endpoints come from `endpoints`; the draw depends only on the
// seed and the image position, so every strength reuses the same pairs.
template <trainers::LogitModel M>
std::vector<ProfilePoint> label_distribution_profile(const M& model,
                                                     const datakit::LabeledDataset& images,
                                                     const ProfileOptions& opt,
                                                     const datakit::LabeledDataset* endpoints = nullptr) {
  using poisonforge::PoisonMode;
  expects(!opt.strengths.empty(), "label_distribution_profile: empty strength list");
  expects(!images.empty(), "label_distribution_profile: no images");
  expects(opt.mode == PoisonMode::kPerturb || opt.mode == PoisonMode::kInterpolate,
          "label_distribution_profile: mode must be perturb or interpolate");
  const auto d = dims_of(images);
  const std::size_t n = images.size();
  std::vector<int> truth(n);
  for (std::size_t i = 0; i < n; ++i) truth[i] = images.truth(i);

  std::vector<std::size_t> partner;
  if (opt.mode == PoisonMode::kInterpolate) {
    expects(endpoints != nullptr && !endpoints->empty(),
            "label_distribution_profile: interpolation needs an endpoint set");
    expects(endpoints->image_size() == images.image_size(), "endpoint geometry differs");
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng(derive_seed(opt.seed, {stream::kPoison, i}));
      std::size_t pick = 0;
      int tries = 0;
      do {
        pick = static_cast<std::size_t>(rng.below(endpoints->size()));
        expects(++tries < 100000, "no endpoint with a different class");
      } while (endpoints->truth(pick) == truth[i]);
      partner.push_back(pick);
    }
  }

  std::vector<ProfilePoint> out;
  for (float s : opt.strengths) {
    std::vector<float> px;
    if (opt.mode == PoisonMode::kPerturb) {
      poisonforge::PgdOptions pgd;
      pgd.epsilon = s;
      pgd.steps = opt.pgd_steps;
      pgd.step_scale = opt.pgd_step_scale;
      pgd.seed = opt.seed;
      px = poisonforge::pgd_perturb_batch(model, images.pixels, truth, d, pgd);
    } else {
      px.reserve(images.pixels.size());
      for (std::size_t i = 0; i < n; ++i) {
        auto img = poisonforge::interpolate(images.image(i), endpoints->image(partner[i]), s);
        px.insert(px.end(), img.begin(), img.end());
      }
    }
    auto views = augment::batch_views(px, d, 0, [&](auto img, std::uint64_t idx) {
      augment::Image stamped(img.begin(), img.end());
      if (opt.trigger) poisonforge::apply_trigger_inplace(stamped, d, *opt.trigger);
      return augment::weak_view(stamped, d, opt.view, derive_seed(opt.seed, {stream::kEval}), idx);
    });
    const auto pred = predict(model, views, d);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += pred[i] == truth[i];
    out.push_back({opt.mode, s, static_cast<double>(hits) / static_cast<double>(n),
                   prediction_entropy(pred, model.class_count(), opt.entropy_base)});
  }
  return out;
}

inline constexpr const char* kProfileHeader = "mode,strength,percent_correct,entropy_nats";

inline std::string profile_to_csv(const std::vector<ProfilePoint>& points) {
  csv::Table t;
  t.header = csv::split_line(kProfileHeader);
  for (const auto& p : points)
    t.rows.push_back({poisonforge::to_string(p.mode), csv::format_real(p.strength),
                      csv::format_real(p.percent_correct), csv::format_real(p.entropy)});
  return t.to_string();
}

inline std::vector<ProfilePoint> profile_from_csv(std::string_view text,
                                                  const std::string& what = "profile") {
  const auto t = csv::parse(text, kProfileHeader, what);
  std::vector<ProfilePoint> out;
  for (const auto& r : t.rows) {
    ProfilePoint p;
    try {
      p.mode = poisonforge::parse_mode(r[0]);
    } catch (const ContractViolation& e) {
      throw FormatError(what + ": " + e.what(), 0);
    }
    p.strength = static_cast<float>(csv::parse_real(r[1], what));
    p.percent_correct = csv::parse_real(r[2], what);
    p.entropy = csv::parse_real(r[3], what);
    out.push_back(p);
  }
  return out;
}

// Result of a monotone-trend check: the number of inversions against the
// expected direction and the largest one.
struct TrendCheck {
  int inversions = 0;
  double worst = 0.0;
  bool pass(int max_inversions, double max_size) const {
    return inversions <= max_inversions && worst <= max_size;
  }
};

inline TrendCheck check_trend(const std::vector<double>& values, bool increasing) {
  TrendCheck c;
  for (std::size_t i = 1; i < values.size(); ++i) {
    const double step = increasing ? values[i - 1] - values[i] : values[i] - values[i - 1];
    if (step > 0.0) {
      c.inversions += 1;
      c.worst = std::max(c.worst, step);
    }
  }
  return c;
}

struct TierMeasurement {
  std::string tier;  // weak, moderate, strong
  float strength = 0.0f;
  double percent_correct = 0.0;
  double asr = 0.0;
};

struct ComparisonRow {
  poisonforge::PoisonMode mode = poisonforge::PoisonMode::kPerturb;
  std::string tier;
  float strength = 0.0f;
  double percent_correct = 0.0;
  double asr = 0.0;

  bool operator==(const ComparisonRow&) const = default;
};

// Pairs the perturbation and interpolation tiers row by row; tier names must
// match in order.
inline std::vector<ComparisonRow> compare_attacks(const std::vector<TierMeasurement>& perturb,
                                                  const std::vector<TierMeasurement>& interp) {
  expects(!perturb.empty() && !interp.empty(), "compare_attacks: empty input");
  expects(perturb.size() == interp.size(), "compare_attacks: tier count mismatch");
  std::vector<ComparisonRow> rows;
  for (std::size_t i = 0; i < perturb.size(); ++i) {
    expects(perturb[i].tier == interp[i].tier,
            "compare_attacks: tier mismatch '" + perturb[i].tier + "' vs '" + interp[i].tier + "'");
    for (double v : {perturb[i].percent_correct, perturb[i].asr, interp[i].percent_correct,
                     interp[i].asr})
      expects(v >= 0.0 && v <= 1.0, "compare_attacks: rate outside [0,1]");
  }
  for (const auto& [mode, list] : {std::pair{poisonforge::PoisonMode::kPerturb, &perturb},
                                   std::pair{poisonforge::PoisonMode::kInterpolate, &interp}})
    for (const auto& m : *list) rows.push_back({mode, m.tier, m.strength, m.percent_correct, m.asr});
  return rows;
}

inline constexpr const char* kComparisonHeader = "mode,tier,strength,percent_correct,asr";

inline std::string comparison_to_csv(const std::vector<ComparisonRow>& rows) {
  csv::Table t;
  t.header = csv::split_line(kComparisonHeader);
  for (const auto& r : rows)
    t.rows.push_back({poisonforge::to_string(r.mode), r.tier, csv::format_real(r.strength),
                      csv::format_real(r.percent_correct), csv::format_real(r.asr)});
  return t.to_string();
}

inline std::vector<ComparisonRow> comparison_from_csv(std::string_view text,
                                                      const std::string& what = "comparison") {
  const auto t = csv::parse(text, kComparisonHeader, what);
  std::vector<ComparisonRow> out;
  for (const auto& r : t.rows) {
    ComparisonRow c;
    try {
      c.mode = poisonforge::parse_mode(r[0]);
    } catch (const ContractViolation& e) {
      throw FormatError(what + ": " + e.what(), 0);
    }
    c.tier = r[1];
    c.strength = static_cast<float>(csv::parse_real(r[2], what));
    c.percent_correct = csv::parse_real(r[3], what);
    c.asr = csv::parse_real(r[4], what);
    out.push_back(c);
  }
  return out;
}

}  // namespace pslab::evalkit
