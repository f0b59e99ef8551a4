#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pslab/augment/augment.hpp"
#include "pslab/csv.hpp"
#include "pslab/trainers/losses.hpp"
#include "pslab/trainers/model.hpp"

namespace pslab::trainers {

struct PseudolabelTypes {
  double confident_target = 0.0;
  double confident_nontarget = 0.0;
  double unconfident = 0.0;
};

// Classifies each poisoned sample's weak-view prediction as confident in the
// target class, confident elsewhere, or below τ.
template <LogitModel M>
PseudolabelTypes record_pseudolabel_types(const M& model, std::span<const float> poison_pixels,
                                          const augment::ImageDims& dims, int target_class,
                                          float tau, const augment::AugmentPolicy& weak,
                                          std::uint64_t view_seed) {
  expects(dims.size() > 0 && poison_pixels.size() >= dims.size(),
          "record_pseudolabel_types: empty poison set");
  auto views = augment::batch_views(poison_pixels, dims, 0, [&](auto img, std::uint64_t idx) {
    return augment::weak_view(img, dims, weak, view_seed, idx);
  });
  numgrad::NoGradGuard no_grad;
  const auto logits = Tensor({static_cast<int>(views.size() / dims.size()), model.class_count()},
                             predict_logits(model, views, dims.channels, dims.height, dims.width));
  const auto pl = pseudolabel_from_logits(logits, tau);
  std::size_t target = 0, other = 0;
  for (std::size_t i = 0; i < pl.labels.size(); ++i) {
    if (!pl.mask[i]) continue;
    (pl.labels[i] == target_class ? target : other) += 1;
  }
  const double n = static_cast<double>(pl.labels.size());
  PseudolabelTypes out;
  out.confident_target = target / n;
  out.confident_nontarget = other / n;
  out.unconfident = (n - target - other) / n;
  return out;
}

struct TraceRow {
  long step = 0;
  double test_acc = 0.0;
  double asr = 0.0;
  double frac_conf_target = 0.0;
  double frac_conf_nontarget = 0.0;
  double frac_unconf = 1.0;

  bool operator==(const TraceRow&) const = default;
};

inline constexpr const char* kTraceHeader =
    "step,test_acc,asr,frac_conf_target,frac_conf_nontarget,frac_unconf";

struct DynamicsTrace {
  std::vector<TraceRow> rows;

  void append(const TraceRow& row) {
    for (double f : {row.frac_conf_target, row.frac_conf_nontarget, row.frac_unconf})
      expects(f >= 0.0 && f <= 1.0, "trace fraction outside [0,1]");
    expects(std::abs(row.frac_conf_target + row.frac_conf_nontarget + row.frac_unconf - 1.0) <=
                1e-6,
            "trace fractions do not sum to 1");
    rows.push_back(row);
  }

  std::string to_csv() const {
    csv::Table t;
    t.header = csv::split_line(kTraceHeader);
    for (const auto& r : rows)
      t.rows.push_back({std::to_string(r.step), csv::format_real(r.test_acc),
                        csv::format_real(r.asr), csv::format_real(r.frac_conf_target),
                        csv::format_real(r.frac_conf_nontarget), csv::format_real(r.frac_unconf)});
    return t.to_string();
  }

  static DynamicsTrace from_csv(std::string_view text, const std::string& what = "trace") {
    const auto t = csv::parse(text, kTraceHeader, what);
    DynamicsTrace trace;
    for (const auto& cells : t.rows) {
      TraceRow r;
      r.step = static_cast<long>(csv::parse_int(cells[0], what));
      r.test_acc = csv::parse_real(cells[1], what);
      r.asr = csv::parse_real(cells[2], what);
      r.frac_conf_target = csv::parse_real(cells[3], what);
      r.frac_conf_nontarget = csv::parse_real(cells[4], what);
      r.frac_unconf = csv::parse_real(cells[5], what);
      trace.rows.push_back(r);
    }
    return trace;
  }
};

}  // namespace pslab::trainers
