#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pslab/cli/config.hpp"
#include "pslab/cli/svg.hpp"
#include "pslab/datakit/io.hpp"
#include "pslab/datakit/synthetic.hpp"
#include "pslab/evalkit/metrics.hpp"
#include "pslab/evalkit/profile.hpp"
#include "pslab/evalkit/trace.hpp"
#include "pslab/poisonforge/attack.hpp"
#include "pslab/trainers/fixmatch.hpp"

namespace pslab::cli {

namespace fs = std::filesystem;

// File layout inside the output directory.
struct Layout {
  fs::path dir;
  fs::path train() const { return dir / "train.psl"; }
  fs::path test() const { return dir / "test.psl"; }
  fs::path labeled() const { return dir / "labeled.psl"; }
  fs::path unlabeled() const { return dir / "unlabeled.psl"; }
  fs::path surrogate() const { return dir / "surrogate.pmd"; }
  fs::path poisoned() const { return dir / "poisoned.psl"; }
  fs::path manifest() const { return dir / "manifest.csv"; }
  fs::path trace() const { return dir / "trace.csv"; }
  fs::path metrics() const { return dir / "metrics.csv"; }
  fs::path trace_plot() const { return dir / "trace.svg"; }
  fs::path profile() const { return dir / "profile.csv"; }
  fs::path profile_plot() const { return dir / "profile.svg"; }
  fs::path sweep() const { return dir / "sweep.csv"; }
  fs::path cells() const { return dir / "cells.csv"; }
  fs::path effective_config() const { return dir / "config.txt"; }
};

// ---- config translation -------------------------------------------------

inline trainers::ModelSpec model_spec_from(const Config& c) {
  trainers::ModelSpec m;
  m.channels = 1;
  m.image_size = static_cast<int>(c.integer("data.image_size"));
  m.classes = static_cast<int>(c.integer("data.classes"));
  m.conv1 = static_cast<int>(c.integer("model.conv1"));
  m.conv2 = static_cast<int>(c.integer("model.conv2"));
  m.hidden = static_cast<int>(c.integer("model.hidden"));
  return m;
}

inline augment::AugmentPolicy weak_policy_from(const Config& c) {
  auto p = augment::AugmentPolicy::weak();
  p.pad = static_cast<int>(c.integer("augment.pad"));
  p.flip_prob = c.real("augment.flip_prob");
  p.validate();
  return p;
}

inline augment::AugmentPolicy strong_policy_from(const Config& c) {
  auto p = augment::AugmentPolicy::strong();
  p.pad = static_cast<int>(c.integer("augment.pad"));
  p.flip_prob = c.real("augment.flip_prob");
  p.strong_ops.clear();
  for (const auto& name : c.list("augment.strong_ops")) p.strong_ops.push_back(augment::parse_strong_op(name));
  p.strong_ops_per_image = static_cast<int>(c.integer("augment.strong_ops_per_image"));
  p.magnitude = c.real("augment.magnitude");
  p.final_cutout = c.boolean("augment.final_cutout");
  p.validate();
  return p;
}

inline trainers::TrainConfig train_config_from(const Config& c) {
  trainers::TrainConfig t;
  const auto& v = c.str("train.variant");
  if (v == "fixmatch") t.variant = trainers::Variant::kFixMatch;
  else if (v == "uda") t.variant = trainers::Variant::kUda;
  else if (v == "supervised") t.variant = trainers::Variant::kSupervised;
  else throw ContractViolation("train.variant: unknown variant '" + v + "'");
  const auto& norm = c.str("train.unsup_norm");
  if (norm == "mask_sum") t.unsup_norm = trainers::UnsupNorm::kMaskSum;
  else if (norm == "batch") t.unsup_norm = trainers::UnsupNorm::kBatch;
  else throw ContractViolation("train.unsup_norm: expected mask_sum or batch, got '" + norm + "'");
  t.batch_size = static_cast<int>(c.integer("train.batch_size"));
  t.mu = static_cast<int>(c.integer("train.mu"));
  t.tau = static_cast<float>(c.real("train.tau"));
  t.lambda_u = static_cast<float>(c.real("train.lambda_u"));
  t.eta = static_cast<float>(c.real("train.eta"));
  t.total_steps = c.integer("train.steps");
  t.ema_decay = static_cast<float>(c.real("train.ema_decay"));
  t.warmup_steps = c.integer("train.warmup_steps");
  t.uda_temperature = static_cast<float>(c.real("train.uda_temperature"));
  t.eval_interval = c.integer("train.eval_interval");
  t.momentum = static_cast<float>(c.real("train.momentum"));
  t.weight_decay = static_cast<float>(c.real("train.weight_decay"));
  t.nesterov = c.boolean("train.nesterov");
  t.seed = derive_seed(c.u64("seed"), {stream::kInit});
  t.model = model_spec_from(c);
  t.weak = weak_policy_from(c);
  t.strong = strong_policy_from(c);
  t.validate();
  return t;
}

// Supervised recipe with γ drops at 40% and 60% of the steps.
inline trainers::TrainConfig surrogate_config_from(const Config& c) {
  trainers::TrainConfig t;
  t.variant = trainers::Variant::kSupervised;
  t.batch_size = static_cast<int>(c.integer("surrogate.batch_size"));
  t.total_steps = c.integer("surrogate.steps");
  t.eta = static_cast<float>(c.real("surrogate.eta"));
  t.schedule = numgrad::LrSchedule::Kind::kMultistep;
  t.milestones = {std::lround(0.4 * static_cast<double>(t.total_steps)),
                  std::lround(0.6 * static_cast<double>(t.total_steps))};
  t.gamma = static_cast<float>(c.real("surrogate.gamma"));
  t.ema_decay = 0.0f;
  t.momentum = static_cast<float>(c.real("train.momentum"));
  t.weight_decay = static_cast<float>(c.real("train.weight_decay"));
  t.nesterov = c.boolean("train.nesterov");
  t.eval_interval = std::max<long>(t.total_steps, 1);
  t.seed = derive_seed(c.u64("data.seed"), {stream::kInit, 1});
  t.model = model_spec_from(c);
  t.weak = weak_policy_from(c);
  t.validate();
  return t;
}

inline poisonforge::TriggerSpec trigger_from(const Config& c) {
  const int k = static_cast<int>(c.integer("poison.trigger_size"));
  const auto& kind = c.str("poison.trigger");
  if (kind == "four_corner") return poisonforge::TriggerSpec::four_corner(k);
  if (kind == "patch") return poisonforge::TriggerSpec::patch(k);
  throw ContractViolation("poison.trigger: expected four_corner or patch, got '" + kind + "'");
}

inline std::size_t poison_count(const Config& c, std::size_t training_set_size) {
  const double pct = c.real("poison.percent");
  expects(pct >= 0.0 && pct <= 100.0, "poison.percent must lie in [0,100]");
  return static_cast<std::size_t>(std::floor(pct / 100.0 * static_cast<double>(training_set_size) + 0.5));
}

inline poisonforge::PoisonSpec poison_spec_from(const Config& c, std::size_t training_set_size) {
  poisonforge::PoisonSpec s;
  s.target_class = static_cast<int>(c.integer("poison.target_class"));
  s.count = poison_count(c, training_set_size);
  s.lambda_mix = c.real("poison.lambda");
  s.weak = {poisonforge::parse_mode(c.str("poison.weak_mode")),
            static_cast<float>(c.real("poison.weak_strength"))};
  s.strong = {poisonforge::parse_mode(c.str("poison.strong_mode")),
              static_cast<float>(c.real("poison.strong_strength"))};
  s.trigger = trigger_from(c);
  s.seed = derive_seed(c.u64("seed"), {stream::kPoison});
  s.pgd_steps = static_cast<int>(c.integer("pgd.steps"));
  s.pgd_step_scale = static_cast<float>(c.real("pgd.step_scale"));
  s.pgd_random_start = c.boolean("pgd.random_start");
  s.validate();
  return s;
}

// ---- gen-data -----------------------------------------------------------

struct GeneratedData {
  datakit::LabeledDataset train, test;
  datakit::SplitResult split;
};

inline GeneratedData generate_data(const Config& c) {
  const auto seed = c.u64("data.seed");
  const int classes = static_cast<int>(c.integer("data.classes"));
  const int size = static_cast<int>(c.integer("data.image_size"));
  GeneratedData g;
  g.train = datakit::generate_synthetic(static_cast<std::size_t>(c.integer("data.n_per_class")),
                                        classes, size, derive_seed(seed, {stream::kData, 0}));
  g.test = datakit::generate_synthetic(static_cast<std::size_t>(c.integer("data.test_per_class")),
                                       classes, size, derive_seed(seed, {stream::kData, 1}));
  datakit::SplitSpec sp;
  sp.n_labeled = static_cast<std::size_t>(c.integer("split.n_labeled"));
  sp.balanced = c.boolean("split.balanced");
  sp.seed = derive_seed(seed, {stream::kSplit});
  g.split = datakit::split(g.train, sp);
  return g;
}

inline std::vector<std::size_t> class_counts(const datakit::LabeledDataset& d) {
  std::vector<std::size_t> n(static_cast<std::size_t>(d.class_count), 0);
  for (std::size_t i = 0; i < d.size(); ++i) n[static_cast<std::size_t>(d.truth(i))] += 1;
  return n;
}

inline std::string counts_str(const std::vector<std::size_t>& n) {
  std::string s;
  for (std::size_t i = 0; i < n.size(); ++i) s += (i ? " " : "") + std::to_string(n[i]);
  return s;
}

inline GeneratedData cmd_gen_data(const Config& c, const Layout& out, std::ostream& log) {
  auto g = generate_data(c);
  fs::create_directories(out.dir);
  datakit::write_dataset(g.train, out.train());
  datakit::write_dataset(g.test, out.test());
  datakit::write_dataset(g.split.labeled, out.labeled());
  datakit::write_dataset(g.split.unlabeled, out.unlabeled());
  log << "train: N=" << g.train.size() << "\n";
  log << "test: N=" << g.test.size() << "\n";
  log << "labeled: N=" << g.split.labeled.size() << " per class: " << counts_str(class_counts(g.split.labeled)) << "\n";
  log << "unlabeled: N=" << g.split.unlabeled.size() << "\n";
  return g;
}

// ---- train-surrogate ----------------------------------------------------

struct SurrogateResult {
  trainers::Classifier model;
  double test_accuracy = 0.0;
};

inline SurrogateResult train_surrogate(const Config& c, const datakit::LabeledDataset& train,
                                       const datakit::LabeledDataset& test, std::ostream& log) {
  const auto cfg = surrogate_config_from(c);
  log << "surrogate: " << cfg.total_steps << " steps, lr milestones at steps " << cfg.milestones[0]
      << " and " << cfg.milestones[1] << " (gamma " << csv::format_real(c.real("surrogate.gamma")) << ")\n";
  auto result = trainers::train(cfg, train, nullptr);
  SurrogateResult r{std::move(result.model), 0.0};
  r.test_accuracy = evalkit::test_accuracy(r.model, test);
  log << "surrogate test accuracy: " << csv::format_real(r.test_accuracy) << "\n";
  return r;
}

inline SurrogateResult cmd_train_surrogate(const Config& c, const Layout& out, std::ostream& log) {
  const auto train = datakit::read_dataset(out.train());
  const auto test = datakit::read_dataset(out.test());
  auto r = train_surrogate(c, train, test, log);
  trainers::write_model(r.model, out.surrogate());
  return r;
}

// ---- attack -------------------------------------------------------------

inline std::optional<trainers::Classifier> load_surrogate_if_needed(const poisonforge::PoisonSpec& s,
                                                                    const Layout& out) {
  if (!s.needs_surrogate()) return std::nullopt;
  if (!fs::exists(out.surrogate()))
    throw ContractViolation("perturb mode needs a surrogate model: missing " +
                            out.surrogate().string() + " (run train-surrogate first)");
  return trainers::read_model(out.surrogate());
}

inline poisonforge::AttackResult attack_from_config(const Config& c, const datakit::LabeledDataset& labeled,
                                                    const datakit::LabeledDataset& unlabeled,
                                                    const trainers::Classifier* surrogate) {
  const auto spec = poison_spec_from(c, labeled.size() + unlabeled.size());
  return poisonforge::build_attack(unlabeled, spec, surrogate);
}

inline poisonforge::AttackResult cmd_attack(const Config& c, const Layout& out, std::ostream& log) {
  const auto labeled = datakit::read_dataset(out.labeled());
  const auto unlabeled = datakit::read_dataset(out.unlabeled());
  const auto spec = poison_spec_from(c, labeled.size() + unlabeled.size());
  const auto surrogate = load_surrogate_if_needed(spec, out);
  auto r = poisonforge::build_attack(unlabeled, spec, surrogate ? &*surrogate : nullptr);
  datakit::write_dataset(r.dataset, out.poisoned());
  csv::write_text(out.manifest(), r.manifest.to_csv());
  log << "poisons: " << r.manifest.records.size() << " (" << r.manifest.count(poisonforge::PoisonRole::kWeak)
      << " weak / " << r.manifest.count(poisonforge::PoisonRole::kStrengthening) << " strengthening)\n";
  return r;
}

// ---- run ----------------------------------------------------------------

struct RunResult {
  trainers::DynamicsTrace trace;
  evalkit::MetricsReport report;
  poisonforge::PoisonManifest manifest;
};

struct RunInputs {
  const datakit::LabeledDataset* labeled = nullptr;
  const datakit::LabeledDataset* unlabeled = nullptr;
  const datakit::LabeledDataset* test = nullptr;
  const trainers::Classifier* surrogate = nullptr;
};

// One training run in memory: optional poisoning, training, final report.
inline RunResult run_experiment(const Config& c, const RunInputs& in) {
  const auto tcfg = train_config_from(c);
  const auto trigger = trigger_from(c);
  const int target = static_cast<int>(c.integer("poison.target_class"));
  RunResult r;
  datakit::LabeledDataset pool = *in.unlabeled;
  if (poison_count(c, in.labeled->size() + in.unlabeled->size()) > 0) {
    auto spec = poison_spec_from(c, in.labeled->size() + in.unlabeled->size());
    if (spec.needs_surrogate())
      expects(in.surrogate != nullptr, "perturb mode needs a surrogate model");
    auto attack = poisonforge::build_attack(*in.unlabeled, spec, in.surrogate);
    pool = std::move(attack.dataset);
    r.manifest = std::move(attack.manifest);
  }
  evalkit::TraceProbe probe;
  probe.test = in.test;
  probe.trigger = trigger;
  probe.target_class = target;
  probe.tau = tcfg.tau;
  probe.weak = tcfg.weak;
  probe.seed = derive_seed(c.u64("seed"), {stream::kEval});
  probe.poison_pixels = evalkit::poison_pixels(pool, r.manifest);
  auto result = trainers::train(tcfg, *in.labeled, &pool, evalkit::make_trace_hook(std::move(probe)));
  r.trace = std::move(result.trace);
  r.report = evalkit::evaluate(result.ema, *in.test, trigger, target);
  return r;
}

inline std::vector<Panel> trace_panels(const trainers::DynamicsTrace& t) {
  Series acc{"test_acc", {}, {}}, asr{"asr", {}, {}};
  Series ct{"frac_conf_target", {}, {}}, cn{"frac_conf_nontarget", {}, {}}, un{"frac_unconf", {}, {}};
  for (const auto& r : t.rows) {
    const auto x = static_cast<double>(r.step);
    for (auto* s : {&acc, &asr, &ct, &cn, &un}) s->x.push_back(x);
    acc.y.push_back(r.test_acc);
    asr.y.push_back(r.asr);
    ct.y.push_back(r.frac_conf_target);
    cn.y.push_back(r.frac_conf_nontarget);
    un.y.push_back(r.frac_unconf);
  }
  return {{"accuracy and attack success", "step", "rate", {acc, asr}},
          {"poison pseudolabel types", "step", "fraction", {ct, cn, un}}};
}

inline void write_run_outputs(const Layout& out, const Config& c, const RunResult& r) {
  fs::create_directories(out.dir);
  csv::write_text(out.trace(), r.trace.to_csv());
  csv::write_text(out.metrics(), r.report.to_csv());
  csv::write_text(out.manifest(), r.manifest.to_csv());
  csv::write_text(out.trace_plot(), render_svg(trace_panels(r.trace)));
  csv::write_text(out.effective_config(), c.to_text());
}

inline void log_report(std::ostream& log, const evalkit::MetricsReport& m) {
  log << "test accuracy: " << csv::format_real(m.test_accuracy) << "\n";
  log << "attack success rate: " << csv::format_real(m.attack_success_rate) << "\n";
}

struct LoadedData {
  datakit::LabeledDataset labeled, unlabeled, test;
};

inline LoadedData load_run_data(const Layout& data) {
  return {datakit::read_dataset(data.labeled()), datakit::read_dataset(data.unlabeled()),
          datakit::read_dataset(data.test())};
}

inline std::optional<trainers::Classifier> surrogate_for(const Config& c, const Layout& data,
                                                         std::size_t training_set_size) {
  if (poison_count(c, training_set_size) == 0) return std::nullopt;
  return load_surrogate_if_needed(poison_spec_from(c, training_set_size), data);
}

inline RunResult cmd_run(const Config& c, const Layout& out, std::ostream& log) {
  const auto d = load_run_data(out);
  const auto sur = surrogate_for(c, out, d.labeled.size() + d.unlabeled.size());
  auto r = run_experiment(c, {&d.labeled, &d.unlabeled, &d.test, sur ? &*sur : nullptr});
  write_run_outputs(out, c, r);
  log << "poisons: " << r.manifest.records.size() << "\n";
  log_report(log, r.report);
  log << "trace rows: " << r.trace.rows.size() << "\n";
  return r;
}

// ---- sweep --------------------------------------------------------------

struct SweepCell {
  std::size_t mod_index = 0, lambda_index = 0, percent_index = 0, target_index = 0;
  poisonforge::PoisonMode mode = poisonforge::PoisonMode::kInterpolate;
  double strength = 0.0, lambda = 1.0, percent = 1.0;
  long target = 0;
  std::uint64_t seed = 0;
  std::string name() const {
    return "m" + std::to_string(mod_index) + "_l" + std::to_string(lambda_index) + "_p" +
           std::to_string(percent_index) + "_t" + std::to_string(target_index);
  }
  void apply(Config& c) const {
    c.set("poison.weak_mode", poisonforge::to_string(mode));
    c.set("poison.weak_strength", csv::format_real(strength));
    c.set("poison.lambda", csv::format_real(lambda));
    c.set("poison.percent", csv::format_real(percent));
    c.set("poison.target_class", std::to_string(target));
    c.set("seed", std::to_string(seed));
  }
};

// Cartesian grid in (modification, lambda, percent, target) order. Empty
// axes fall back to the single configured value. Cell seed = base seed
// chained with the four axis indices.
inline std::vector<SweepCell> sweep_cells(const Config& c) {
  std::vector<std::pair<poisonforge::PoisonMode, double>> mods;
  for (double a : c.reals("sweep.alphas")) mods.emplace_back(poisonforge::PoisonMode::kInterpolate, a);
  for (double e : c.reals("sweep.epsilons")) mods.emplace_back(poisonforge::PoisonMode::kPerturb, e);
  if (mods.empty()) mods.emplace_back(poisonforge::parse_mode(c.str("poison.weak_mode")), c.real("poison.weak_strength"));
  auto lambdas = c.reals("sweep.lambdas");
  if (lambdas.empty()) lambdas = {c.real("poison.lambda")};
  auto percents = c.reals("sweep.percents");
  if (percents.empty()) percents = {c.real("poison.percent")};
  auto targets = c.integers("sweep.targets");
  if (targets.empty()) targets = {c.integer("poison.target_class")};
  const auto base = c.u64("seed");
  std::vector<SweepCell> cells;
  for (std::size_t m = 0; m < mods.size(); ++m)
    for (std::size_t l = 0; l < lambdas.size(); ++l)
      for (std::size_t p = 0; p < percents.size(); ++p)
        for (std::size_t t = 0; t < targets.size(); ++t) {
          SweepCell cell{m, l, p, t, mods[m].first, mods[m].second, lambdas[l], percents[p], targets[t], 0};
          cell.seed = derive_seed(base, {m, l, p, t});
          cells.push_back(cell);
        }
  return cells;
}

struct CellOutcome {
  SweepCell cell;
  bool ok = false;
  std::string error;
  double asr = 0.0, test_acc = 0.0;
};

struct AggregateRow {
  poisonforge::PoisonMode mode = poisonforge::PoisonMode::kInterpolate;
  double strength = 0.0, lambda = 0.0, percent = 0.0;
  std::size_t n_trials = 0, n_failed = 0;
  double mean_asr = 0.0, mean_test_acc = 0.0;
};

inline constexpr const char* kSweepHeader =
    "mode,strength,lambda,percent,n_trials,n_failed,mean_asr,mean_test_acc";
inline constexpr const char* kCellsHeader =
    "cell,mode,strength,lambda,percent,target,seed,status,asr,test_acc";

inline std::string sanitize_cell(std::string s) {
  for (auto& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r' || ch == '"') ch = ';';
  return s;
}

struct SweepResult {
  std::vector<CellOutcome> outcomes;
  std::vector<AggregateRow> rows;
};

inline std::vector<AggregateRow> aggregate(const std::vector<CellOutcome>& outcomes) {
  std::vector<AggregateRow> rows;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::size_t> slot;
  for (const auto& o : outcomes) {
    const auto key = std::make_tuple(o.cell.mod_index, o.cell.lambda_index, o.cell.percent_index);
    auto [it, fresh] = slot.emplace(key, rows.size());
    if (fresh) rows.push_back({o.cell.mode, o.cell.strength, o.cell.lambda, o.cell.percent, 0, 0, 0.0, 0.0});
    auto& row = rows[it->second];
    row.n_trials += 1;
    if (!o.ok) {
      row.n_failed += 1;
      continue;
    }
    row.mean_asr += o.asr;
    row.mean_test_acc += o.test_acc;
  }
  for (auto& r : rows) {
    const auto ok = r.n_trials - r.n_failed;
    if (ok) {
      r.mean_asr /= static_cast<double>(ok);
      r.mean_test_acc /= static_cast<double>(ok);
    }
  }
  return rows;
}

inline std::string sweep_to_csv(const std::vector<AggregateRow>& rows) {
  csv::Table t;
  t.header = csv::split_line(kSweepHeader);
  for (const auto& r : rows)
    t.rows.push_back({poisonforge::to_string(r.mode), csv::format_real(r.strength), csv::format_real(r.lambda),
                      csv::format_real(r.percent), std::to_string(r.n_trials), std::to_string(r.n_failed),
                      csv::format_real(r.mean_asr), csv::format_real(r.mean_test_acc)});
  return t.to_string();
}

inline std::string cells_to_csv(const std::vector<CellOutcome>& outcomes) {
  csv::Table t;
  t.header = csv::split_line(kCellsHeader);
  for (const auto& o : outcomes)
    t.rows.push_back({o.cell.name(), poisonforge::to_string(o.cell.mode), csv::format_real(o.cell.strength),
                      csv::format_real(o.cell.lambda), csv::format_real(o.cell.percent),
                      std::to_string(o.cell.target), std::to_string(o.cell.seed),
                      o.ok ? "ok" : "error: " + sanitize_cell(o.error), csv::format_real(o.asr),
                      csv::format_real(o.test_acc)});
  return t.to_string();
}

// Each cell writes its outputs under cells/<name>/ including the effective
// config, so `run --config cells/<name>/config.txt` reproduces it.
inline SweepResult cmd_sweep(const Config& c, const Layout& out, std::ostream& log) {
  const auto d = load_run_data(out);
  const auto cells = sweep_cells(c);
  const auto train_size = d.labeled.size() + d.unlabeled.size();
  std::optional<trainers::Classifier> sur;
  if (!c.reals("sweep.epsilons").empty() || c.str("poison.weak_mode") == "perturb" ||
      c.str("poison.strong_mode") == "perturb") {
    if (fs::exists(out.surrogate())) sur = trainers::read_model(out.surrogate());
  }
  SweepResult result;
  result.outcomes.resize(cells.size());
  const auto workers = static_cast<std::size_t>(std::max<long>(c.integer("workers"), 1));
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      CellOutcome o{cells[i], false, {}, 0.0, 0.0};
      try {
        Config cc = c;
        cells[i].apply(cc);
        for (const char* axis : {"sweep.alphas", "sweep.epsilons", "sweep.lambdas", "sweep.percents", "sweep.targets"})
          cc.set(axis, "");
        if (poison_count(cc, train_size) > 0 && poison_spec_from(cc, train_size).needs_surrogate() && !sur)
          throw ContractViolation("perturb mode needs a surrogate model: missing " + out.surrogate().string());
        auto r = run_experiment(cc, {&d.labeled, &d.unlabeled, &d.test, sur ? &*sur : nullptr});
        write_run_outputs(Layout{out.dir / "cells" / cells[i].name()}, cc, r);
        o.ok = true;
        o.asr = r.report.attack_success_rate;
        o.test_acc = r.report.test_accuracy;
      } catch (const std::exception& e) {
        o.error = e.what();
      }
      std::lock_guard lock(log_mu);
      log << "cell " << cells[i].name() << ": "
          << (o.ok ? "asr=" + csv::format_real(o.asr) + " acc=" + csv::format_real(o.test_acc)
                   : "error: " + o.error)
          << "\n";
      result.outcomes[i] = std::move(o);
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::min(workers, cells.size()); ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  result.rows = aggregate(result.outcomes);
  csv::write_text(out.cells(), cells_to_csv(result.outcomes));
  csv::write_text(out.sweep(), sweep_to_csv(result.rows));
  log << "cells: " << cells.size() << ", aggregated rows: " << result.rows.size() << "\n";
  return result;
}

// ---- profile ------------------------------------------------------------

struct ProfileResult {
  std::vector<evalkit::ProfilePoint> points;  // interpolate rows, then perturb rows
  bool trend_pass = true;
};

inline double entropy_base_from(const Config& c) {
  const auto& b = c.str("profile.entropy_base");
  if (b == "e") return std::exp(1.0);
  const double v = Config::parse_real("profile.entropy_base", b);
  expects(v > 1.0, "profile.entropy_base must exceed 1");
  return v;
}

// Seeded subset of up to n images of class `cls`.
inline datakit::LabeledDataset class_subset(const datakit::LabeledDataset& d, int cls, std::size_t n,
                                            std::uint64_t seed) {
  auto idx = d.indices_of_class(cls);
  expects(!idx.empty(), "no images of class " + std::to_string(cls));
  Rng rng(derive_seed(seed, {stream::kEval, static_cast<std::uint64_t>(cls)}));
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(std::min(n, idx.size()));
  std::sort(idx.begin(), idx.end());
  return d.subset(idx);
}

template <trainers::LogitModel M>
std::vector<evalkit::ProfilePoint> averaged_profile(const M& model, const datakit::LabeledDataset& train,
                                                    const Config& c, poisonforge::PoisonMode mode,
                                                    const std::vector<float>& strengths) {
  const auto targets = c.integers("profile.target_classes");
  expects(!targets.empty(), "profile.target_classes is empty");
  evalkit::ProfileOptions opt;
  opt.mode = mode;
  opt.strengths = strengths;
  opt.trigger = trigger_from(c);
  opt.view = weak_policy_from(c);
  opt.seed = derive_seed(c.u64("seed"), {stream::kEval});
  opt.pgd_steps = static_cast<int>(c.integer("pgd.steps"));
  opt.pgd_step_scale = static_cast<float>(c.real("pgd.step_scale"));
  opt.entropy_base = entropy_base_from(c);
  std::vector<evalkit::ProfilePoint> sum;
  for (long t : targets) {
    const auto images = class_subset(train, static_cast<int>(t),
                                     static_cast<std::size_t>(c.integer("profile.n_images")), opt.seed);
    auto pts = evalkit::label_distribution_profile(model, images, opt, &train);
    if (sum.empty()) {
      sum = pts;
    } else {
      for (std::size_t i = 0; i < pts.size(); ++i) {
        sum[i].percent_correct += pts[i].percent_correct;
        sum[i].entropy += pts[i].entropy;
      }
    }
  }
  for (auto& p : sum) {
    p.percent_correct /= static_cast<double>(targets.size());
    p.entropy /= static_cast<double>(targets.size());
  }
  return sum;
}

inline std::vector<float> as_floats(const std::vector<double>& v) {
  return std::vector<float>(v.begin(), v.end());
}

// Trend limits: at most one inversion, of at most 0.02 in
// percent_correct and 0.05 nats in entropy.
inline bool report_trend(std::ostream& log, const std::string& mode,
                         const std::vector<evalkit::ProfilePoint>& pts) {
  std::vector<double> pc, h;
  for (const auto& p : pts) {
    pc.push_back(p.percent_correct);
    h.push_back(p.entropy);
  }
  const auto a = evalkit::check_trend(pc, false);
  const auto b = evalkit::check_trend(h, true);
  const bool pa = a.pass(1, 0.02), pb = b.pass(1, 0.05);
  log << "trend " << mode << " percent_correct non-increasing: " << (pa ? "PASS" : "FAIL")
      << " (inversions " << a.inversions << ", worst " << csv::format_real(a.worst) << ")\n";
  log << "trend " << mode << " entropy non-decreasing: " << (pb ? "PASS" : "FAIL") << " (inversions "
      << b.inversions << ", worst " << csv::format_real(b.worst) << ")\n";
  return pa && pb;
}

inline std::vector<Panel> profile_panels(const std::vector<evalkit::ProfilePoint>& pts) {
  std::vector<Panel> panels;
  for (auto mode : {poisonforge::PoisonMode::kInterpolate, poisonforge::PoisonMode::kPerturb}) {
    Series pc{"percent_correct", {}, {}}, h{"entropy_nats", {}, {}};
    for (const auto& p : pts) {
      if (p.mode != mode) continue;
      pc.x.push_back(p.strength);
      pc.y.push_back(p.percent_correct);
      h.x.push_back(p.strength);
      h.y.push_back(p.entropy);
    }
    if (pc.x.empty()) continue;
    const bool interp = mode == poisonforge::PoisonMode::kInterpolate;
    panels.push_back({interp ? "interpolation" : "perturbation", interp ? "alpha" : "epsilon", "value", {pc, h}});
  }
  return panels;
}

inline ProfileResult cmd_profile(const Config& c, const Layout& out, std::ostream& log) {
  const auto train = datakit::read_dataset(out.train());
  if (!fs::exists(out.surrogate()))
    throw ContractViolation("profile needs a surrogate model: missing " + out.surrogate().string() +
                            " (run train-surrogate first)");
  const auto model = trainers::read_model(out.surrogate());
  ProfileResult r;
  const auto alphas = as_floats(c.reals("profile.alphas"));
  const auto epsilons = as_floats(c.reals("profile.epsilons"));
  expects(!alphas.empty() || !epsilons.empty(), "profile needs profile.alphas or profile.epsilons");
  std::vector<evalkit::ProfilePoint> interp, pert;
  if (!alphas.empty()) interp = averaged_profile(model, train, c, poisonforge::PoisonMode::kInterpolate, alphas);
  if (!epsilons.empty()) pert = averaged_profile(model, train, c, poisonforge::PoisonMode::kPerturb, epsilons);
  r.points = interp;
  r.points.insert(r.points.end(), pert.begin(), pert.end());
  fs::create_directories(out.dir);
  csv::write_text(out.profile(), evalkit::profile_to_csv(r.points));
  csv::write_text(out.profile_plot(), render_svg(profile_panels(r.points)));
  if (c.boolean("profile.check_trend")) {
    if (!interp.empty()) r.trend_pass = report_trend(log, "interpolate", interp) && r.trend_pass;
    if (!pert.empty()) r.trend_pass = report_trend(log, "perturb", pert) && r.trend_pass;
  }
  return r;
}

}  // namespace pslab::cli
