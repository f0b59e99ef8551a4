// End-to-end acceptance gate. Prints one PASS/FAIL (or WARN) line per
// criterion and exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "../support/gradcheck.hpp"
#include "pslab/cli/commands.hpp"

namespace {

using namespace pslab;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Verdict {
  enum class Kind { kPass, kFail, kWarn } kind = Kind::kFail;
  std::string detail;
};

Verdict pass_if(bool ok, std::string detail) {
  return {ok ? Verdict::Kind::kPass : Verdict::Kind::kFail, std::move(detail)};
}

// Pinned thresholds for the end-to-end criteria. See README "Acceptance".
constexpr double kModerateAsrMin = 0.35;
constexpr double kStrongAsrMax = 0.25;
constexpr double kMaxAccuracyDrop = 0.03;
constexpr double kFailureAsrMax = 0.25;
constexpr int kWeakTarget = 0;           // target class where the pure-weak attack underperforms
constexpr double kStrengtheningAlpha = 0.8;
constexpr double kLambdaCutoff = 0.5;    // mixes at or below this are strengthening-dominated
constexpr double kFailureLambda = 0.5;

// Reference configuration: library defaults with a shorter EMA horizon so
// the evaluated model tracks the 8000-step run, and a labeled-only warmup
// that keeps early consistency-loss spikes from killing the network.
cli::Config reference_config() {
  cli::Config c;
  c.set("train.ema_decay", "0.99");
  c.set("train.warmup_steps", "300");
  return c;
}

struct Shared {
  cli::Config config = reference_config();
  cli::GeneratedData data;
  std::optional<cli::SurrogateResult> surrogate;
  std::vector<evalkit::ProfilePoint> profile;
  std::optional<cli::RunResult> clean, moderate, strong;
  std::optional<cli::RunResult> pure_weak, mixed, failure_mix;
};

cli::RunResult run_with(Shared& s, const std::vector<std::pair<std::string, std::string>>& overrides,
                        const std::string& label) {
  auto c = s.config;
  for (const auto& [k, v] : overrides) c.set(k, v);
  const auto t0 = Clock::now();
  auto r = cli::run_experiment(c, {&s.data.split.labeled, &s.data.split.unlabeled, &s.data.test, nullptr});
  std::cout << "  run " << label << ": test_accuracy " << fmt(r.report.test_accuracy) << ", asr "
            << fmt(r.report.attack_success_rate) << " (" << fmt(seconds_since(t0), 1) << " s)\n"
            << std::flush;
  return r;
}

// 1. Finite-difference gradient oracle over every differentiable op.
Verdict gradient_oracle(Shared&) {
  const auto t0 = Clock::now();
  const auto reports = testsupport::run_gradient_suite(20, 2024);
  const double secs = seconds_since(t0);
  bool ok = secs < 30.0;
  int coords = 0;
  double worst = 0;
  std::string failing;
  for (const auto& r : reports) {
    coords += r.coords;
    worst = std::max(worst, r.worst_rel);
    if (r.failures > 0 || r.cases < 20) {
      ok = false;
      failing += " " + r.op + "(" + r.first_failure + ")";
    }
  }
  return pass_if(ok, std::to_string(reports.size()) + " ops x 20 shapes, " + std::to_string(coords) +
                         " coordinates, worst rel " + fmt(worst, 6) + ", " + fmt(secs, 2) + " s" +
                         (failing.empty() ? "" : ", failing:" + failing));
}

// 2. Budget, range, reconstruction and trigger idempotence over 1000 poisons each.
Verdict attack_constraints(Shared& s) {
  constexpr std::size_t kPoisons = 1000;
  const auto pool = datakit::generate_synthetic(1100, 10, 24, 77);  // 1100 target-class sources
  const augment::ImageDims dims{1, 24, 24};
  const auto trigger = poisonforge::TriggerSpec::four_corner(3);
  const auto mask = poisonforge::trigger_mask(dims, trigger);
  std::size_t budget_bad = 0, range_bad = 0, recon_bad = 0, idem_bad = 0, checked = 0;
  double worst_recon = 0.0;

  poisonforge::PoisonSpec spec;
  spec.target_class = 3;
  spec.count = kPoisons;
  spec.lambda_mix = 1.0;
  spec.trigger = trigger;
  spec.seed = 11;

  auto check_idempotent = [&](std::span<const float> img) {
    const auto once = poisonforge::apply_trigger(img, dims, trigger);
    const auto twice = poisonforge::apply_trigger(once, dims, trigger);
    if (!std::equal(img.begin(), img.end(), once.begin()) || once != twice) ++idem_bad;
  };

  spec.weak = {poisonforge::PoisonMode::kPerturb, 8.0f / 255.0f};
  const auto perturbed = poisonforge::build_attack(pool, spec, &s.surrogate->model);
  for (const auto& rec : perturbed.manifest.records) {
    const auto src = pool.image(static_cast<std::size_t>(rec.source_a));
    const auto got = perturbed.dataset.image(rec.index);
    bool over = false, out = false;
    for (std::size_t j = 0; j < got.size(); ++j) {
      if (got[j] < 0.0f || got[j] > 1.0f) out = true;
      if (!mask[j] && std::abs(double(got[j]) - double(src[j])) > double(rec.strength) + 1e-6) over = true;
    }
    budget_bad += over;
    range_bad += out;
    check_idempotent(got);
    ++checked;
  }

  spec.weak = {poisonforge::PoisonMode::kInterpolate, 0.4f};
  const auto interp = poisonforge::build_attack(pool, spec);
  for (const auto& rec : interp.manifest.records) {
    const auto a = pool.image(static_cast<std::size_t>(rec.source_a));
    const auto b = pool.image(static_cast<std::size_t>(rec.source_b));
    const auto got = interp.dataset.image(rec.index);
    const double alpha = rec.strength;
    double err = 0.0;
    for (std::size_t j = 0; j < got.size(); ++j)
      if (!mask[j]) err = std::max(err, std::abs(double(got[j]) - ((1.0 - alpha) * a[j] + alpha * b[j])));
    worst_recon = std::max(worst_recon, err);
    recon_bad += err > 1e-6;
    check_idempotent(got);
    ++checked;
  }
  const bool counts = perturbed.manifest.records.size() == kPoisons && interp.manifest.records.size() == kPoisons;
  return pass_if(counts && budget_bad + range_bad + recon_bad + idem_bad == 0,
                 std::to_string(checked) + " poisons; budget violations " + std::to_string(budget_bad) +
                     ", range violations " + std::to_string(range_bad) + ", reconstruction worst " +
                     fmt(worst_recon, 9) + ", idempotence failures " + std::to_string(idem_bad));
}

// 3. Consistency loss against an independent cross-entropy, and λ_u = 0
//    trajectory identity with supervised training.
Verdict loss_oracle(Shared& s) {
  const augment::ImageDims dims{1, 24, 24};
  const auto& pool = s.data.split.unlabeled;
  const trainers::Classifier model({}, 3);
  double worst = 0.0;
  for (std::uint64_t b = 0; b < 100; ++b) {
    const auto batch = datakit::sample_batch(pool, 16, 17, b);
    numgrad::NoGradGuard ng;
    const auto weak = model.forward(trainers::detail::views_tensor(batch.pixels, dims, augment::AugmentPolicy::weak(), 4, b * 16, false));
    const auto strong = model.forward(trainers::detail::views_tensor(batch.pixels, dims, augment::AugmentPolicy::strong(), 4, b * 16, true));
    auto pl = trainers::pseudolabel_from_logits(weak, 0.0f);
    for (std::size_t i = 0; i < batch.indices.size(); ++i) pl.labels[i] = pool.truth(batch.indices[i]);
    const double got = trainers::unsupervised_loss(strong, pl).item();
    const int c = strong.dim(1);
    double oracle = 0.0;
    for (int i = 0; i < strong.dim(0); ++i) {
      const float* row = strong.values().data() + static_cast<std::size_t>(i) * c;
      double z = 0.0;
      for (int k = 0; k < c; ++k) z += std::exp(double(row[k]));
      oracle += std::log(z) - row[pl.labels[i]];
    }
    oracle /= strong.dim(0);
    worst = std::max(worst, std::abs(got - oracle));
  }

  auto cfg = cli::train_config_from(s.config);
  cfg.total_steps = 200;
  cfg.eval_interval = 200;
  cfg.warmup_steps = 0;
  cfg.lambda_u = 0.0f;
  cfg.tau = 0.5f;
  const auto fm = trainers::train(cfg, s.data.split.labeled, &pool);
  auto sup_cfg = cfg;
  sup_cfg.variant = trainers::Variant::kSupervised;
  const auto sup = trainers::train(sup_cfg, s.data.split.labeled, nullptr);
  const bool identical = fm.model.same_parameters(sup.model) && fm.ema.same_parameters(sup.ema);
  return pass_if(worst <= 1e-5 && identical, "100 batches, max |loss - oracle| " + fmt(worst, 9) +
                                                 "; 200-step lambda_u=0 trajectory " +
                                                 (identical ? "bit-identical" : "DIFFERS"));
}

// 4. Surrogate accuracy and the predicted-label profile trends.
Verdict profile_trend(Shared& s) {
  std::vector<double> pc_a, h_a, pc_e, h_e;
  for (const auto& p : s.profile) {
    (p.mode == poisonforge::PoisonMode::kInterpolate ? pc_a : pc_e).push_back(p.percent_correct);
    (p.mode == poisonforge::PoisonMode::kInterpolate ? h_a : h_e).push_back(p.entropy);
  }
  const auto ta = evalkit::check_trend(pc_a, false), tha = evalkit::check_trend(h_a, true);
  const auto te = evalkit::check_trend(pc_e, false), the = evalkit::check_trend(h_e, true);
  const bool trends = ta.pass(1, 0.02) && tha.pass(1, 0.05) && te.pass(1, 0.02) && the.pass(1, 0.05);
  const double acc = s.surrogate->test_accuracy;
  auto series = [](const std::vector<double>& v) {
    std::string out;
    for (double x : v) out += (out.empty() ? "" : "/") + fmt(x, 3);
    return out;
  };
  return pass_if(acc >= 0.90 && trends && pc_a.size() == 5 && !pc_e.empty(),
                 "surrogate accuracy " + fmt(acc, 3) + "; alpha pc " + series(pc_a) + " H " + series(h_a) +
                     "; eps pc " + series(pc_e) + " H " + series(h_e));
}

// 5. Moderate beats strong interpolation and the clean base rate, at stable accuracy.
Verdict attack_ordering(Shared& s) {
  const double base = s.clean->report.attack_success_rate;
  const double mod = s.moderate->report.attack_success_rate;
  const double str = s.strong->report.attack_success_rate;
  const double drop = s.clean->report.test_accuracy - s.moderate->report.test_accuracy;
  const bool ordering = mod > str && mod > 3.0 * base;
  const bool thresholds = mod >= kModerateAsrMin && str <= kStrongAsrMax && drop <= kMaxAccuracyDrop;
  return pass_if(ordering && thresholds, "ASR moderate(alpha=0.4) " + fmt(mod) + ", strong(alpha=0.8) " + fmt(str) +
                                             ", clean base rate " + fmt(base) + ", accuracy drop " + fmt(drop));
}

// 6. A short window where ASR and confident-target pseudolabels rise together.
Verdict tipping_point(Shared& s) {
  const auto& rows = s.moderate->trace.rows;
  const long k = s.config.integer("train.steps");
  const long window = k / 10;
  double best = -1.0;
  long best_start = 0, best_end = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size() && rows[j].step - rows[i].step <= window; ++j) {
      const double rise = rows[j].asr - rows[i].asr;
      if (rows[j].frac_conf_target > rows[i].frac_conf_target && rise > best) {
        best = rise;
        best_start = rows[i].step;
        best_end = rows[j].step;
      }
    }
  const bool moderate_passed = s.moderate->report.attack_success_rate >= kModerateAsrMin;
  Verdict v;
  v.kind = (best >= 0.4 || !moderate_passed) ? Verdict::Kind::kPass : Verdict::Kind::kWarn;
  v.detail = best < 0 ? "no window with rising confident-target fraction"
                      : "largest ASR rise " + fmt(best, 3) + " between steps " + std::to_string(best_start) +
                            " and " + std::to_string(best_end) + " (window <= " + std::to_string(window) + ")";
  if (!moderate_passed) v.detail += "; moderate run below threshold, not assessed";
  return v;
}

// 7. Strengthening poisons help a weak attack; strengthening-dominated mixes fail.
Verdict mixed_attack(Shared& s) {
  const double pw = s.pure_weak->report.attack_success_rate;
  const double mix = s.mixed->report.attack_success_rate;
  const double low = s.failure_mix->report.attack_success_rate;
  const bool ok = mix > pw && kFailureLambda <= kLambdaCutoff && low <= kFailureAsrMax;
  return pass_if(ok, "target " + std::to_string(kWeakTarget) + ": pure-weak ASR " + fmt(pw) +
                         ", lambda=0.9 mix ASR " + fmt(mix) + ", lambda=" + fmt(kFailureLambda, 2) +
                         " ASR " + fmt(low) + " (cutoff " + fmt(kLambdaCutoff, 2) + ")");
}

// 8. Byte-exact round trips and error classes for every on-disk format.
Verdict format_round_trips(Shared& s) {
  std::vector<std::string> failed;
  auto same = [&](const std::string& name, bool ok) {
    if (!ok) failed.push_back(name);
  };
  auto throws_format = [&](const std::string& name, const std::function<void()>& fn) {
    try {
      fn();
      failed.push_back(name + " (accepted malformed)");
    } catch (const FormatError&) {
    } catch (const std::exception& e) {
      failed.push_back(name + " (wrong error: " + e.what() + ")");
    }
  };

  const auto& poisoned_run = *s.moderate;
  for (const auto* d : {&s.data.train, &s.data.test, &s.data.split.labeled}) {
    const auto bytes = datakit::encode_dataset(*d);
    same("dataset", datakit::encode_dataset(datakit::decode_dataset(bytes, "dataset")) == bytes);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 7);
    throws_format("dataset truncated", [&] { datakit::decode_dataset(truncated, "dataset"); });
    auto bad_magic = bytes;
    bad_magic[0] ^= 0xff;
    throws_format("dataset magic", [&] { datakit::decode_dataset(bad_magic, "dataset"); });
  }

  const auto model_bytes = trainers::encode_model(s.surrogate->model);
  same("model", trainers::encode_model(trainers::decode_model(model_bytes, "model")) == model_bytes);
  auto short_model = model_bytes;
  short_model.resize(model_bytes.size() / 2);
  throws_format("model truncated", [&] { trainers::decode_model(short_model, "model"); });

  const auto manifest = poisoned_run.manifest.to_csv();
  same("manifest", poisonforge::PoisonManifest::from_csv(manifest).to_csv() == manifest);
  throws_format("manifest header", [&] { poisonforge::PoisonManifest::from_csv("index,role\n1,weak\n"); });

  const auto trace = poisoned_run.trace.to_csv();
  same("trace", trainers::DynamicsTrace::from_csv(trace).to_csv() == trace);
  throws_format("trace fields", [&] { trainers::DynamicsTrace::from_csv(std::string(trainers::kTraceHeader) + "\n200,0.5\n"); });

  const auto metrics = poisoned_run.report.to_csv();
  same("metrics", evalkit::MetricsReport::from_csv(metrics).to_csv() == metrics);
  throws_format("metrics value", [&] { evalkit::MetricsReport::from_csv("metric,value\ntest_accuracy,abc\n"); });

  const auto profile = evalkit::profile_to_csv(s.profile);
  same("profile", evalkit::profile_to_csv(evalkit::profile_from_csv(profile)) == profile);
  throws_format("profile header", [&] { evalkit::profile_from_csv("mode,strength\n"); });

  std::vector<evalkit::TierMeasurement> interp, pert;
  const char* tiers[] = {"weak", "moderate", "strong"};
  for (int t = 0; t < 3; ++t) {
    interp.push_back({tiers[t], s.profile[2 * t].strength, s.profile[2 * t].percent_correct, 0.0});
    pert.push_back({tiers[t], s.profile[5 + 2 * t].strength, s.profile[5 + 2 * t].percent_correct, 0.0});
  }
  interp[1].asr = s.moderate->report.attack_success_rate;
  interp[2].asr = s.strong->report.attack_success_rate;
  const auto comparison = evalkit::comparison_to_csv(evalkit::compare_attacks(pert, interp));
  same("comparison", evalkit::comparison_to_csv(evalkit::comparison_from_csv(comparison)) == comparison);
  throws_format("comparison mode", [&] { evalkit::comparison_from_csv("mode,tier,strength,percent_correct,asr\nwarp,weak,0,0,0\n"); });

  const auto config = s.config.to_text();
  cli::Config back;
  back.load_text(config);
  same("config", back.to_text() == config);
  throws_format("config line", [&] { cli::Config().load_text("seed 4\n"); });

  std::string detail = "dataset, model, manifest, trace, metrics, profile, comparison, config";
  for (const auto& f : failed) detail += "; FAILED " + f;
  return pass_if(failed.empty(), detail);
}

}  // namespace

int main() {
  const auto t_start = Clock::now();
  Shared s;
  s.data = cli::generate_data(s.config);

  std::cout << "preparing shared artifacts\n" << std::flush;
  {
    std::ostringstream log;
    const auto t0 = Clock::now();
    s.surrogate = cli::train_surrogate(s.config, s.data.train, s.data.test, log);
    std::cout << "  surrogate: test_accuracy " << fmt(s.surrogate->test_accuracy) << " ("
              << fmt(seconds_since(t0), 1) << " s)\n";
    const auto t1 = Clock::now();
    const auto interp = cli::averaged_profile(s.surrogate->model, s.data.train, s.config,
                                              poisonforge::PoisonMode::kInterpolate,
                                              cli::as_floats(s.config.reals("profile.alphas")));
    const auto pert = cli::averaged_profile(s.surrogate->model, s.data.train, s.config,
                                            poisonforge::PoisonMode::kPerturb,
                                            cli::as_floats(s.config.reals("profile.epsilons")));
    s.profile = interp;
    s.profile.insert(s.profile.end(), pert.begin(), pert.end());
    std::cout << "  profile: " << s.profile.size() << " points (" << fmt(seconds_since(t1), 1) << " s)\n";
  }
  s.clean = run_with(s, {{"poison.percent", "0"}}, "clean");
  s.moderate = run_with(s, {{"poison.weak_strength", "0.4"}}, "interpolate alpha=0.4");
  s.strong = run_with(s, {{"poison.weak_strength", "0.8"}}, "interpolate alpha=0.8");
  const std::vector<std::pair<std::string, std::string>> weak_only = {
      {"poison.weak_mode", "none"}, {"poison.target_class", std::to_string(kWeakTarget)},
      {"poison.strong_strength", csv::format_real(kStrengtheningAlpha)}};
  auto with = [&](std::vector<std::pair<std::string, std::string>> v, std::string k, std::string val) {
    v.emplace_back(std::move(k), std::move(val));
    return v;
  };
  s.pure_weak = run_with(s, with(weak_only, "poison.lambda", "1"), "pure-weak lambda=1");
  s.mixed = run_with(s, with(weak_only, "poison.lambda", "0.9"), "mixed lambda=0.9");
  s.failure_mix = run_with(s, with(weak_only, "poison.lambda", csv::format_real(kFailureLambda)),
                           "mixed lambda=" + fmt(kFailureLambda, 2));

  struct Criterion {
    const char* name;
    Verdict (*fn)(Shared&);
  };
  const Criterion criteria[] = {
      {"gradient oracle", gradient_oracle},
      {"attack constraints", attack_constraints},
      {"loss oracle", loss_oracle},
      {"profile trend", profile_trend},
      {"attack ordering", attack_ordering},
      {"tipping point", tipping_point},
      {"mixed attack", mixed_attack},
      {"format round trips", format_round_trips},
  };
  int failures = 0;
  for (std::size_t i = 0; i < std::size(criteria); ++i) {
    Verdict v;
    try {
      v = criteria[i].fn(s);
    } catch (const std::exception& e) {
      v = {Verdict::Kind::kFail, std::string("exception: ") + e.what()};
    }
    const char* tag = v.kind == Verdict::Kind::kPass ? "PASS" : v.kind == Verdict::Kind::kWarn ? "WARN" : "FAIL";
    failures += v.kind == Verdict::Kind::kFail;
    std::cout << tag << " criterion " << (i + 1) << " (" << criteria[i].name << "): " << v.detail << "\n" << std::flush;
  }
  std::cout << "total " << fmt(seconds_since(t_start), 1) << " s\n";
  return failures == 0 ? 0 : 1;
}
