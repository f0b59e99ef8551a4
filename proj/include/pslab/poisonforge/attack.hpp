#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pslab/csv.hpp"
#include "pslab/datakit/dataset.hpp"
#include "pslab/poisonforge/modify.hpp"
#include "pslab/poisonforge/trigger.hpp"

namespace pslab::poisonforge {

enum class PoisonMode { kNone, kPerturb, kInterpolate };
enum class PoisonRole { kWeak, kStrengthening };

inline const char* to_string(PoisonMode m) {
  switch (m) {
    case PoisonMode::kNone: return "none";
    case PoisonMode::kPerturb: return "perturb";
    case PoisonMode::kInterpolate: return "interpolate";
  }
  return "?";
}

inline PoisonMode parse_mode(const std::string& s) {
  if (s == "none") return PoisonMode::kNone;
  if (s == "perturb") return PoisonMode::kPerturb;
  if (s == "interpolate") return PoisonMode::kInterpolate;
  throw ContractViolation("unknown poison mode '" + s + "'");
}

inline const char* to_string(PoisonRole r) {
  return r == PoisonRole::kWeak ? "weak" : "strengthening";
}

inline PoisonRole parse_role(const std::string& s) {
  if (s == "weak") return PoisonRole::kWeak;
  if (s == "strengthening") return PoisonRole::kStrengthening;
  throw ContractViolation("unknown poison role '" + s + "'");
}

// How one subset of poisons is modified. strength is ε for perturb, α for
// interpolate, ignored for none.
struct PoisonComponent {
  PoisonMode mode = PoisonMode::kNone;
  float strength = 0.0f;
};

// Generalized attack: round(λ·N_p) backdoor-creating poisons U_pw drawn from
// the target class, the rest backdoor-strengthening poisons U_ps. A
// strengthening component with mode none uses unmodified non-target images.
struct PoisonSpec {
  int target_class = 0;
  std::size_t count = 50;
  double lambda_mix = 1.0;
  PoisonComponent weak;
  PoisonComponent strong{PoisonMode::kNone, 0.0f};
  TriggerSpec trigger = TriggerSpec::four_corner();
  std::uint64_t seed = 0;
  int pgd_steps = 40;
  float pgd_step_scale = 2.5f;
  bool pgd_random_start = true;

  std::size_t weak_count() const {
    return static_cast<std::size_t>(std::floor(lambda_mix * static_cast<double>(count) + 0.5));
  }
  std::size_t strengthening_count() const { return count - weak_count(); }

  bool needs_surrogate() const {
    return (weak_count() > 0 && weak.mode == PoisonMode::kPerturb) ||
           (strengthening_count() > 0 && strong.mode == PoisonMode::kPerturb);
  }

  void validate() const {
    expects(count >= 1, "poison count must be >= 1");
    expects(lambda_mix >= 0.0 && lambda_mix <= 1.0, "lambda must lie in [0,1]");
    for (const auto* c : {&weak, &strong}) {
      if (c->mode == PoisonMode::kPerturb)
        expects(c->strength >= 0.0f, "perturbation epsilon must be >= 0");
      if (c->mode == PoisonMode::kInterpolate)
        expects(c->strength >= 0.0f && c->strength <= 1.0f, "interpolation alpha must lie in [0,1]");
    }
    expects(pgd_steps >= 0, "pgd steps must be >= 0");
  }
};

struct PoisonRecord {
  std::size_t index = 0;  // position in the poisoned dataset
  PoisonRole role = PoisonRole::kWeak;
  PoisonMode mode = PoisonMode::kNone;
  float strength = 0.0f;
  long source_a = -1;  // pre-attack image the poison was built from
  long source_b = -1;  // interpolation endpoint, -1 if none
  int target_class = 0;

  bool operator==(const PoisonRecord&) const = default;
};

inline constexpr const char* kManifestHeader =
    "index,role,mode,strength,source_a,source_b,target_class";

struct PoisonManifest {
  std::vector<PoisonRecord> records;  // ascending index

  std::size_t count(PoisonRole role) const {
    return static_cast<std::size_t>(std::count_if(
        records.begin(), records.end(), [role](const auto& r) { return r.role == role; }));
  }

  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (const auto& r : records) out.push_back(r.index);
    return out;
  }

  std::string to_csv() const {
    csv::Table t;
    t.header = csv::split_line(kManifestHeader);
    for (const auto& r : records)
      t.rows.push_back({std::to_string(r.index), to_string(r.role), to_string(r.mode),
                        csv::format_real(r.strength), std::to_string(r.source_a),
                        std::to_string(r.source_b), std::to_string(r.target_class)});
    return t.to_string();
  }

  static PoisonManifest from_csv(std::string_view text, const std::string& what = "manifest") {
    const auto t = csv::parse(text, kManifestHeader, what);
    PoisonManifest m;
    for (const auto& c : t.rows) {
      PoisonRecord r;
      r.index = static_cast<std::size_t>(csv::parse_int(c[0], what));
      try {
        r.role = parse_role(c[1]);
        r.mode = parse_mode(c[2]);
      } catch (const ContractViolation& e) {
        throw FormatError(what + ": " + e.what(), 0);
      }
      r.strength = static_cast<float>(csv::parse_real(c[3], what));
      r.source_a = static_cast<long>(csv::parse_int(c[4], what));
      r.source_b = static_cast<long>(csv::parse_int(c[5], what));
      r.target_class = static_cast<int>(csv::parse_int(c[6], what));
      m.records.push_back(r);
    }
    return m;
  }
};

struct AttackResult {
  datakit::LabeledDataset dataset;
  PoisonManifest manifest;
};

// Builds poisons from images already in `pool` (labels may be withheld; the
// ground truth decides class membership) and writes each poison over its
// source sample, so the pool size is unchanged. Every poison is modified
// first and stamped with the trigger second.
template <trainers::LogitModel M = trainers::Classifier>
AttackResult build_attack(const datakit::LabeledDataset& pool, const PoisonSpec& spec,
                          const M* surrogate = nullptr) {
  spec.validate();
  const ImageDims dims{pool.channels, pool.height, pool.width};
  spec.trigger.validate(dims);
  expects(spec.target_class >= 0 && spec.target_class < pool.class_count,
          "target class out of range");
  if (spec.needs_surrogate())
    expects(surrogate != nullptr, "perturbation poisons need a surrogate model");

  const std::size_t n_weak = spec.weak_count();
  const std::size_t n_strong = spec.strengthening_count();
  const bool strong_from_nontarget = spec.strong.mode == PoisonMode::kNone;

  std::vector<std::size_t> target_pool, other_pool;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool.poison_flags[i]) continue;
    (pool.truth(i) == spec.target_class ? target_pool : other_pool).push_back(i);
  }
  Rng rng(derive_seed(spec.seed, {stream::kPoison}));
  rng.shuffle(std::span<std::size_t>(target_pool));
  rng.shuffle(std::span<std::size_t>(other_pool));

  const std::size_t target_needed = n_weak + (strong_from_nontarget ? 0 : n_strong);
  expects(target_pool.size() >= target_needed,
          "need " + std::to_string(target_needed) + " target-class sources, pool has " +
              std::to_string(target_pool.size()));
  if (strong_from_nontarget)
    expects(other_pool.size() >= n_strong, "need " + std::to_string(n_strong) +
                                               " non-target sources, pool has " +
                                               std::to_string(other_pool.size()));

  std::vector<PoisonRecord> jobs;
  for (std::size_t j = 0; j < n_weak; ++j) {
    PoisonRecord r;
    r.role = PoisonRole::kWeak;
    r.mode = spec.weak.mode;
    r.strength = spec.weak.mode == PoisonMode::kNone ? 0.0f : spec.weak.strength;
    r.source_a = static_cast<long>(target_pool[j]);
    jobs.push_back(r);
  }
  for (std::size_t j = 0; j < n_strong; ++j) {
    PoisonRecord r;
    r.role = PoisonRole::kStrengthening;
    r.mode = spec.strong.mode;
    r.strength = spec.strong.mode == PoisonMode::kNone ? 0.0f : spec.strong.strength;
    r.source_a = static_cast<long>(strong_from_nontarget ? other_pool[j] : target_pool[n_weak + j]);
    jobs.push_back(r);
  }
  for (auto& r : jobs) {
    r.index = static_cast<std::size_t>(r.source_a);
    r.target_class = spec.target_class;
    if (r.mode == PoisonMode::kInterpolate) {
      expects(!other_pool.empty(), "interpolation needs non-target endpoints");
      r.source_b = static_cast<long>(other_pool[rng.below(other_pool.size())]);
    }
  }

  AttackResult out{pool, {}};
  // Perturbations are computed per strength in one batch each.
  std::map<float, std::vector<std::size_t>> perturb_groups;
  for (std::size_t j = 0; j < jobs.size(); ++j)
    if (jobs[j].mode == PoisonMode::kPerturb) perturb_groups[jobs[j].strength].push_back(j);
  std::vector<Image> modified(jobs.size());
  {
    for (const auto& [eps, members] : perturb_groups) {
      std::vector<float> px;
      std::vector<int> labels;
      for (auto j : members) {
        auto img = pool.image(static_cast<std::size_t>(jobs[j].source_a));
        px.insert(px.end(), img.begin(), img.end());
        labels.push_back(pool.truth(static_cast<std::size_t>(jobs[j].source_a)));
      }
      PgdOptions opt;
      opt.epsilon = eps;
      opt.steps = spec.pgd_steps;
      opt.step_scale = spec.pgd_step_scale;
      opt.random_start = spec.pgd_random_start;
      opt.seed = spec.seed;
      // Perturb in chunks to bound graph memory.
      constexpr std::size_t kChunk = 128;
      for (std::size_t start = 0; start < members.size(); start += kChunk) {
        const std::size_t cnt = std::min(kChunk, members.size() - start);
        auto adv = pgd_perturb_batch(*surrogate,
                                     std::span<const float>(px).subspan(start * dims.size(),
                                                                        cnt * dims.size()),
                                     std::span<const int>(labels).subspan(start, cnt), dims, opt,
                                     static_cast<std::uint64_t>(start));
        for (std::size_t q = 0; q < cnt; ++q)
          modified[members[start + q]] =
              Image(adv.begin() + q * dims.size(), adv.begin() + (q + 1) * dims.size());
      }
    }
  }
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& r = jobs[j];
    auto src = pool.image(static_cast<std::size_t>(r.source_a));
    if (r.mode == PoisonMode::kInterpolate)
      modified[j] = interpolate(src, pool.image(static_cast<std::size_t>(r.source_b)), r.strength);
    else if (r.mode == PoisonMode::kNone)
      modified[j] = Image(src.begin(), src.end());
    apply_trigger_inplace(modified[j], dims, spec.trigger);
    auto dst = out.dataset.image(r.index);
    std::copy(modified[j].begin(), modified[j].end(), dst.begin());
    out.dataset.poison_flags[r.index] = 1;
  }
  std::sort(jobs.begin(), jobs.end(),
            [](const auto& a, const auto& b) { return a.index < b.index; });
  out.manifest.records = std::move(jobs);
  return out;
}

}  // namespace pslab::poisonforge
