#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pslab/augment/augment.hpp"
#include "pslab/datakit/dataset.hpp"
#include "pslab/numgrad/optim.hpp"
#include "pslab/trainers/dynamics.hpp"
#include "pslab/trainers/losses.hpp"
#include "pslab/trainers/model.hpp"

namespace pslab::trainers {

enum class Variant { kFixMatch, kUda, kSupervised };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::kFixMatch: return "fixmatch";
    case Variant::kUda: return "uda";
    case Variant::kSupervised: return "supervised";
  }
  return "?";
}

struct TrainConfig {
  int batch_size = 16;  // B
  int mu = 4;           // unlabeled batch is mu·B
  float tau = 0.95f;
  float lambda_u = 1.0f;
  float eta = 0.03f;
  long total_steps = 8000;  // K
  float ema_decay = 0.999f;
  long warmup_steps = 0;  // labeled-only steps before the consistency term starts
  Variant variant = Variant::kFixMatch;
  float uda_temperature = 0.4f;
  UnsupNorm unsup_norm = UnsupNorm::kMaskSum;
  long eval_interval = 200;
  std::uint64_t seed = 0;

  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  bool nesterov = true;
  numgrad::LrSchedule::Kind schedule = numgrad::LrSchedule::Kind::kCosine;
  std::vector<long> milestones;  // steps, multistep only
  float gamma = 0.1f;

  ModelSpec model;
  augment::AugmentPolicy weak = augment::AugmentPolicy::weak();
  augment::AugmentPolicy strong = augment::AugmentPolicy::strong();

  void validate() const {
    expects(batch_size >= 1, "batch size must be positive");
    expects(tau > 0.0f && tau <= 1.0f, "tau must lie in (0,1]");
    expects(mu >= 1, "mu must be >= 1");
    expects(lambda_u >= 0.0f, "lambda_u must be non-negative");
    expects(total_steps >= 0, "total steps must be non-negative");
    expects(warmup_steps >= 0 && (warmup_steps < total_steps || warmup_steps == 0),
            "warmup_steps must be < K");
    expects(ema_decay >= 0.0f && ema_decay <= 1.0f, "ema decay must lie in [0,1]");
    expects(eval_interval >= 1, "eval interval must be positive");
    expects(uda_temperature > 0.0f, "uda temperature must be positive");
    schedule_def().validate();
    weak.validate();
    strong.validate();
  }

  numgrad::LrSchedule schedule_def() const {
    numgrad::LrSchedule s;
    s.kind = schedule;
    s.eta = eta;
    s.total_steps = std::max<long>(total_steps, 1);
    s.milestones = milestones;
    s.gamma = gamma;
    return s;
  }
};

struct TrainState {
  TrainConfig config;
  Classifier model;
  Classifier ema;
  numgrad::SgdState sgd;

  explicit TrainState(const TrainConfig& cfg) : config(cfg) {
    config.validate();
    model = Classifier(cfg.model, derive_seed(cfg.seed, {stream::kInit}));
    ema = model.clone();
    sgd.momentum = cfg.momentum;
    sgd.weight_decay = cfg.weight_decay;
    sgd.nesterov = cfg.nesterov;
  }
};

struct StepStats {
  float loss = 0.0f;
  float supervised = 0.0f;
  float unsupervised = 0.0f;
  float mask_rate = 0.0f;  // retained fraction of the unlabeled batch
};

namespace detail {

inline Tensor views_tensor(std::span<const float> pixels, const augment::ImageDims& dims,
                           const augment::AugmentPolicy& policy, std::uint64_t seed,
                           std::uint64_t first_index, bool strong) {
  auto v = augment::batch_views(pixels, dims, first_index, [&](auto img, std::uint64_t idx) {
    return strong ? augment::strong_view(img, dims, policy, seed, idx)
                  : augment::weak_view(img, dims, policy, seed, idx);
  });
  return as_batch(v, dims.channels, dims.height, dims.width);
}

}  // namespace detail

// One optimizer step at index k: ℓ = ℓ_s + λ_u·ℓ_u, SGD at lr_at(k), EMA update.
// The consistency term is skipped for the supervised variant, during warmup,
// and when no unlabeled batch is given.
inline StepStats fixmatch_step(TrainState& state, const datakit::ImageBatch& labeled,
                               const datakit::ImageBatch* unlabeled, long k,
                               const augment::ImageDims& dims) {
  const auto& cfg = state.config;
  expects(k >= 0 && k < std::max<long>(cfg.total_steps, 1),
          "step index " + std::to_string(k) + " outside [0, K)");
  numgrad::zero_grads(state.model.parameters());

  const auto uk = static_cast<std::uint64_t>(k);
  auto xw = detail::views_tensor(labeled.pixels, dims, cfg.weak,
                                 derive_seed(cfg.seed, {stream::kLabeled}), uk * labeled.labels.size(),
                                 false);
  auto ls = supervised_loss(state.model.forward(xw), labeled.labels);
  StepStats stats;
  stats.supervised = ls.item();
  Tensor total = ls;

  const bool use_unlabeled = cfg.variant != Variant::kSupervised && k >= cfg.warmup_steps &&
                             unlabeled != nullptr && !unlabeled->indices.empty();
  if (use_unlabeled) {
    const std::uint64_t useed = derive_seed(cfg.seed, {stream::kUnlabeled});
    const std::uint64_t first = uk * unlabeled->indices.size();
    auto uw = detail::views_tensor(unlabeled->pixels, dims, cfg.weak, useed, first, false);
    auto us = detail::views_tensor(unlabeled->pixels, dims, cfg.strong, useed, first, true);
    Tensor weak_logits;
    {
      numgrad::NoGradGuard no_grad;
      weak_logits = state.model.forward(uw);
    }
    Tensor lu;
    if (cfg.variant == Variant::kUda) {
      lu = uda_unsupervised_loss(weak_logits, state.model.forward(us), cfg.tau,
                                 cfg.uda_temperature, cfg.unsup_norm);
      stats.mask_rate = static_cast<float>(pseudolabel_from_logits(weak_logits, cfg.tau).retained()) /
                        static_cast<float>(unlabeled->indices.size());
    } else {
      const auto pl = pseudolabel_from_logits(weak_logits, cfg.tau);
      stats.mask_rate =
          static_cast<float>(pl.retained()) / static_cast<float>(unlabeled->indices.size());
      lu = unsupervised_loss(state.model.forward(us), pl, cfg.unsup_norm);
    }
    stats.unsupervised = lu.item();
    total = numgrad::add(ls, numgrad::scale(lu, cfg.lambda_u));
  }
  stats.loss = total.item();
  if (!std::isfinite(stats.loss)) throw NumericFault("fixmatch_step", "non-finite loss");

  numgrad::backward(total);
  numgrad::sgd_step(state.model.parameters(), state.sgd, numgrad::lr_at(cfg.schedule_def(), k));
  numgrad::ema_update(state.ema.parameters(), state.model.parameters(), cfg.ema_decay);
  return stats;
}

// Called after every eval_interval-th step with the number of completed steps.
using EvalHook = std::function<void(long step, const Classifier& ema, DynamicsTrace& trace)>;
using StepHook = std::function<void(long step, const StepStats& stats)>;

struct TrainResult {
  Classifier model;
  Classifier ema;
  DynamicsTrace trace;
};

inline TrainResult train(const TrainConfig& config, const datakit::LabeledDataset& labeled,
                         const datakit::LabeledDataset* unlabeled, const EvalHook& eval_hook = {},
                         const StepHook& step_hook = {}) {
  config.validate();
  expects(!labeled.empty(), "train: labeled set is empty");
  expects(labeled.class_count == config.model.classes &&
              labeled.height == config.model.image_size &&
              labeled.width == config.model.image_size && labeled.channels == config.model.channels,
          "train: dataset geometry does not match the model spec");
  const augment::ImageDims dims{labeled.channels, labeled.height, labeled.width};
  const bool use_unlabeled = config.variant != Variant::kSupervised && unlabeled != nullptr &&
                             !unlabeled->empty();
  if (use_unlabeled)
    expects(unlabeled->image_size() == labeled.image_size(),
            "train: labeled/unlabeled image geometry differs");

  TrainState state(config);
  DynamicsTrace trace;
  const auto lseed = derive_seed(config.seed, {stream::kLabeled});
  const auto useed = derive_seed(config.seed, {stream::kUnlabeled});
  const auto ub = static_cast<std::size_t>(config.batch_size) * config.mu;
  for (long k = 0; k < config.total_steps; ++k) {
    const auto xb = datakit::sample_batch(labeled, config.batch_size, lseed,
                                          static_cast<std::uint64_t>(k));
    std::optional<datakit::ImageBatch> u;
    if (use_unlabeled && k >= config.warmup_steps)
      u = datakit::sample_batch(*unlabeled, ub, useed, static_cast<std::uint64_t>(k));
    const auto stats = fixmatch_step(state, xb, u ? &*u : nullptr, k, dims);
    if (step_hook) step_hook(k + 1, stats);
    if (eval_hook && (k + 1) % config.eval_interval == 0) eval_hook(k + 1, state.ema, trace);
  }
  return {std::move(state.model), std::move(state.ema), std::move(trace)};
}

}  // namespace pslab::trainers
