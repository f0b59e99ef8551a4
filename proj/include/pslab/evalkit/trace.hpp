#pragma once

#include <vector>

#include "pslab/evalkit/metrics.hpp"
#include "pslab/poisonforge/attack.hpp"
#include "pslab/trainers/fixmatch.hpp"

namespace pslab::evalkit {

struct TraceProbe {
  const datakit::LabeledDataset* test = nullptr;
  poisonforge::TriggerSpec trigger;
  int target_class = 0;
  float tau = 0.95f;
  augment::AugmentPolicy weak = augment::AugmentPolicy::weak();
  std::uint64_t seed = 0;
  std::vector<float> poison_pixels;  // the poisons as the trainer sees them
};

inline std::vector<float> poison_pixels(const datakit::LabeledDataset& pool,
                                        const poisonforge::PoisonManifest& manifest) {
  std::vector<float> out;
  for (const auto& r : manifest.records) {
    auto img = pool.image(r.index);
    out.insert(out.end(), img.begin(), img.end());
  }
  return out;
}

// Eval hook that appends one trace row per call. Without poisons every
// pseudolabel fraction is reported as unconfident.
inline trainers::EvalHook make_trace_hook(TraceProbe probe) {
  expects(probe.test != nullptr && !probe.test->empty(), "trace hook needs a test set");
  // Triggered non-target images are fixed for the whole run.
  auto triggered = std::make_shared<std::vector<float>>(
      triggered_nontarget(*probe.test, probe.trigger, probe.target_class));
  expects(!triggered->empty(), "trace hook: test set has no non-target samples");
  auto p = std::make_shared<TraceProbe>(std::move(probe));
  return [p, triggered](long step, const trainers::Classifier& ema, trainers::DynamicsTrace& trace) {
    const auto d = dims_of(*p->test);
    trainers::TraceRow row;
    row.step = step;
    row.test_acc = test_accuracy(ema, *p->test);
    const auto pred = predict(ema, *triggered, d);
    std::size_t hits = 0;
    for (int c : pred) hits += c == p->target_class;
    row.asr = static_cast<double>(hits) / static_cast<double>(pred.size());
    if (!p->poison_pixels.empty()) {
      const auto types = trainers::record_pseudolabel_types(
          ema, p->poison_pixels, d, p->target_class, p->tau, p->weak,
          derive_seed(p->seed, {stream::kEval, static_cast<std::uint64_t>(step)}));
      row.frac_conf_target = types.confident_target;
      row.frac_conf_nontarget = types.confident_nontarget;
      row.frac_unconf = types.unconfident;
    }
    trace.append(row);
  };
}

}  // namespace pslab::evalkit
