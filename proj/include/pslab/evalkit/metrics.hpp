#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pslab/csv.hpp"
#include "pslab/datakit/dataset.hpp"
#include "pslab/poisonforge/trigger.hpp"
#include "pslab/trainers/model.hpp"

namespace pslab::evalkit {

using augment::ImageDims;

inline ImageDims dims_of(const datakit::LabeledDataset& d) {
  return {d.channels, d.height, d.width};
}

template <trainers::LogitModel M>
std::vector<int> predict(const M& model, std::span<const float> pixels, const ImageDims& d) {
  return trainers::predict_classes(model, pixels, d.channels, d.height, d.width);
}

template <trainers::LogitModel M>
double test_accuracy(const M& model, const datakit::LabeledDataset& test) {
  expects(!test.empty(), "test_accuracy: empty test set");
  const auto pred = predict(model, test.pixels, dims_of(test));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == test.truth(i);
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// Non-target test images with the trigger stamped on, in dataset order.
inline std::vector<float> triggered_nontarget(const datakit::LabeledDataset& test,
                                              const poisonforge::TriggerSpec& trigger,
                                              int target_class) {
  const auto d = dims_of(test);
  std::vector<float> out;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.truth(i) == target_class) continue;
    auto img = poisonforge::apply_trigger(test.image(i), d, trigger);
    out.insert(out.end(), img.begin(), img.end());
  }
  return out;
}

template <trainers::LogitModel M>
double attack_success_rate(const M& model, const datakit::LabeledDataset& test,
                           const poisonforge::TriggerSpec& trigger, int target_class) {
  const auto px = triggered_nontarget(test, trigger, target_class);
  expects(!px.empty(), "attack_success_rate: test set has no non-target samples");
  const auto pred = predict(model, px, dims_of(test));
  std::size_t hits = 0;
  for (int p : pred) hits += p == target_class;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

struct MetricsReport {
  double test_accuracy = 0.0;
  double attack_success_rate = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::size_t> per_class_count;
  std::size_t n_test = 0;
  std::size_t n_triggered = 0;

  bool operator==(const MetricsReport&) const = default;

  void validate() const {
    expects(per_class_accuracy.size() == per_class_count.size(), "per-class vectors differ");
    for (double r : per_class_accuracy) expects(r >= 0.0 && r <= 1.0, "per-class rate outside [0,1]");
    expects(test_accuracy >= 0.0 && test_accuracy <= 1.0, "accuracy outside [0,1]");
    expects(attack_success_rate >= 0.0 && attack_success_rate <= 1.0, "ASR outside [0,1]");
  }

  // Rows: metric,value. Per-class entries are named class_<c>_accuracy and
  // class_<c>_count.
  std::string to_csv() const {
    csv::Table t;
    t.header = {"metric", "value"};
    t.rows.push_back({"test_accuracy", csv::format_real(test_accuracy)});
    t.rows.push_back({"attack_success_rate", csv::format_real(attack_success_rate)});
    t.rows.push_back({"n_test", std::to_string(n_test)});
    t.rows.push_back({"n_triggered", std::to_string(n_triggered)});
    for (std::size_t c = 0; c < per_class_accuracy.size(); ++c) {
      t.rows.push_back({"class_" + std::to_string(c) + "_accuracy",
                        csv::format_real(per_class_accuracy[c])});
      t.rows.push_back({"class_" + std::to_string(c) + "_count", std::to_string(per_class_count[c])});
    }
    return t.to_string();
  }

  static MetricsReport from_csv(std::string_view text, const std::string& what = "metrics") {
    const auto t = csv::parse(text, "metric,value", what);
    MetricsReport r;
    auto bad = [&](const std::string& msg) { return FormatError(what + ": " + msg, 0); };
    if (t.rows.size() < 4 || (t.rows.size() - 4) % 2 != 0) throw bad("unexpected row count");
    const char* fixed[] = {"test_accuracy", "attack_success_rate", "n_test", "n_triggered"};
    for (int i = 0; i < 4; ++i)
      if (t.rows[i][0] != fixed[i]) throw bad(std::string("expected metric ") + fixed[i]);
    r.test_accuracy = csv::parse_real(t.rows[0][1], what);
    r.attack_success_rate = csv::parse_real(t.rows[1][1], what);
    r.n_test = static_cast<std::size_t>(csv::parse_int(t.rows[2][1], what));
    r.n_triggered = static_cast<std::size_t>(csv::parse_int(t.rows[3][1], what));
    for (std::size_t k = 4, c = 0; k < t.rows.size(); k += 2, ++c) {
      const auto prefix = "class_" + std::to_string(c) + "_";
      if (t.rows[k][0] != prefix + "accuracy" || t.rows[k + 1][0] != prefix + "count")
        throw bad("malformed per-class rows for class " + std::to_string(c));
      r.per_class_accuracy.push_back(csv::parse_real(t.rows[k][1], what));
      r.per_class_count.push_back(static_cast<std::size_t>(csv::parse_int(t.rows[k + 1][1], what)));
    }
    try {
      r.validate();
    } catch (const ContractViolation& e) {
      throw bad(e.what());
    }
    return r;
  }
};

template <trainers::LogitModel M>
MetricsReport evaluate(const M& model, const datakit::LabeledDataset& test,
                       const poisonforge::TriggerSpec& trigger, int target_class) {
  expects(!test.empty(), "evaluate: empty test set");
  MetricsReport r;
  const auto pred = predict(model, test.pixels, dims_of(test));
  const auto classes = static_cast<std::size_t>(test.class_count);
  std::vector<std::size_t> hits(classes, 0);
  r.per_class_count.assign(classes, 0);
  std::size_t total_hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto t = static_cast<std::size_t>(test.truth(i));
    r.per_class_count[t] += 1;
    if (pred[i] == static_cast<int>(t)) {
      hits[t] += 1;
      total_hits += 1;
    }
  }
  r.per_class_accuracy.resize(classes);
  for (std::size_t c = 0; c < classes; ++c)
    r.per_class_accuracy[c] =
        r.per_class_count[c] ? static_cast<double>(hits[c]) / r.per_class_count[c] : 0.0;
  r.n_test = pred.size();
  r.test_accuracy = static_cast<double>(total_hits) / static_cast<double>(pred.size());
  r.attack_success_rate = attack_success_rate(model, test, trigger, target_class);
  r.n_triggered = test.size() - test.indices_of_class(target_class).size();
  return r;
}

// Shannon entropy of the empirical distribution of `classes`; base e unless
// another base is given.
inline double prediction_entropy(std::span<const int> classes, int class_count,
                                 double base = std::exp(1.0)) {
  expects(!classes.empty(), "prediction_entropy: empty prediction list");
  expects(base > 1.0, "entropy base must exceed 1");
  std::vector<std::size_t> hist(static_cast<std::size_t>(class_count), 0);
  for (int c : classes) {
    expects(c >= 0 && c < class_count, "prediction_entropy: class out of range");
    hist[static_cast<std::size_t>(c)] += 1;
  }
  const double n = static_cast<double>(classes.size());
  double h = 0.0;
  for (auto k : hist)
    if (k) h -= (k / n) * std::log(k / n);
  return h / std::log(base);
}

}  // namespace pslab::evalkit
