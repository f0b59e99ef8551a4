#pragma once

// Central finite-difference oracle for the differentiable ops. Forward passes
// run in double so truncation and round-off stay well below the tolerance.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pslab/numgrad/ops.hpp"
#include "pslab/rng.hpp"

namespace pslab::testsupport {

using DTensor = numgrad::BasicTensor<double>;
using numgrad::Shape;

struct GradReport {
  std::string op;
  int cases = 0;
  int coords = 0;
  int failures = 0;
  double worst_rel = 0.0;
  std::string first_failure;
};

inline constexpr double kFdStep = 1e-3;
inline constexpr double kRelTol = 1e-3;
inline constexpr double kAbsTol = 1e-5;

inline bool grad_close(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= kAbsTol) return true;
  return diff / std::max(std::abs(analytic), std::abs(numeric)) <= kRelTol;
}

inline std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Values bounded away from zero by `margin` (keeps ReLU off its kink).
inline std::vector<double> away_from_zero(Rng& rng, std::size_t n, double margin) {
  std::vector<double> v(n);
  for (auto& x : v) {
    const double m = rng.uniform(margin, 1.0);
    x = rng.bernoulli(0.5) ? m : -m;
  }
  return v;
}

// Checks d/dinputs of L = Σ f(inputs) ⊙ R, R a fixed random projection.
inline void check_op(GradReport& rep, std::vector<DTensor> inputs,
                     const std::function<DTensor(const std::vector<DTensor>&)>& f,
                     std::uint64_t seed) {
  rep.cases += 1;
  Rng rng(seed);
  for (auto& in : inputs) in.set_requires_grad(true);
  auto out = f(inputs);
  const auto proj = random_values(rng, out.size());
  auto loss_of = [&](const std::vector<DTensor>& ins) {
    numgrad::NoGradGuard ng;
    auto o = f(ins);
    double s = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) s += o.values()[i] * proj[i];
    return s;
  };
  auto loss = numgrad::sum(numgrad::mul(out, DTensor(out.shape(), proj)));
  numgrad::backward(loss);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto analytic = std::vector<double>(inputs[k].grad().begin(), inputs[k].grad().end());
    for (std::size_t j = 0; j < inputs[k].size(); ++j) {
      auto vals = inputs[k].mutable_values();
      const double orig = vals[j];
      vals[j] = orig + kFdStep;
      const double up = loss_of(inputs);
      vals[j] = orig - kFdStep;
      const double down = loss_of(inputs);
      vals[j] = orig;
      const double numeric = (up - down) / (2 * kFdStep);
      const double a = analytic.empty() ? 0.0 : analytic[j];
      rep.coords += 1;
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      if (std::abs(a - numeric) > kAbsTol) rep.worst_rel = std::max(rep.worst_rel, std::abs(a - numeric) / denom);
      if (!grad_close(a, numeric)) {
        if (rep.failures == 0)
          rep.first_failure = "input " + std::to_string(k) + " coord " + std::to_string(j) +
                              ": autodiff " + std::to_string(a) + " vs fd " + std::to_string(numeric);
        rep.failures += 1;
      }
    }
  }
}

inline DTensor dt(Shape s, std::vector<double> v) { return DTensor(std::move(s), std::move(v)); }

// Runs every op over `cases` random shapes each.
inline std::vector<GradReport> run_gradient_suite(int cases, std::uint64_t seed) {
  using namespace numgrad;
  std::vector<GradReport> reports;
  auto shape_rng = Rng(seed);
  auto dim = [&](int lo, int hi) { return lo + static_cast<int>(shape_rng.below(static_cast<std::uint64_t>(hi - lo + 1))); };
  std::uint64_t op_index = 0;
  auto run = [&](const std::string& name, auto&& make_case) {
    GradReport rep;
    rep.op = name;
    ++op_index;
    for (int c = 0; c < cases; ++c)
      make_case(rep, derive_seed(seed, {op_index, static_cast<std::uint64_t>(c)}));
    reports.push_back(rep);
  };
  auto random_shape = [&]() {
    Shape s;
    const int rank = dim(1, 4);
    for (int i = 0; i < rank; ++i) s.push_back(dim(1, 4));
    return s;
  };

  run("add", [&](GradReport& rep, std::uint64_t s) {
    Rng r(s);
    auto sh = random_shape();
    const auto n = shape_size(sh);
    check_op(rep, {dt(sh, random_values(r, n)), dt(sh, random_values(r, n))},
             [](auto& in) { return add(in[0], in[1]); }, s + 1);
  });
  run("sub", [&](GradReport& rep, std::uint64_t s) {
    Rng r(s);
    auto sh = random_shape();
    const auto n = shape_size(sh);
    check_op(rep, {dt(sh, random_values(r, n)), dt(sh, random_values(r, n))},
             [](auto& in) { return sub(in[0], in[1]); }, s + 1);
  });
  run("mul", [&](GradReport& rep, std::uint64_t s) {
    Rng r(s);
    auto sh = random_shape();
    const auto n = shape_size(sh);
    check_op(rep, {dt(sh, random_values(r, n)), dt(sh, random_values(r, n))},
             [](auto& in) { return mul(in[0], in[1]); }, s + 1);
  });
  run("scale", [&](GradReport& rep, std::uint64_t s) {
    Rng r(s);
    auto sh = random_shape();
    const double factor = r.uniform(-3.0, 3.0);
    check_op(rep, {dt(sh, random_values(r, shape_size(sh)))},
             [factor](auto& in) { return scale(in[0], factor); }, s + 1);
  });
  run("relu", [&](GradReport& rep, std::uint64_t s) {
    Rng r(s);
    auto sh = random_shape();
    check_op(rep, {dt(sh, away_from_zero(r, shape_size(sh), 10 * kFdStep))},
             [](auto& in) { return relu(in[0]); }, s + 1);
  });
  run("exp", [&](GradReport& rep, std::uint64_t s) {
    Rng r(s);
    auto sh = random_shape();
    check_op(rep, {dt(sh, random_values(r, shape_size(sh), -2.0, 2.0))},
             [](auto& in) { return exp(in[0]); }, s + 1);
  });
  run("sum", [&](GradReport& rep, std::uint64_t s) {
    Rng r(s);
    auto sh = random_shape();
    check_op(rep, {dt(sh, random_values(r, shape_size(sh)))}, [](auto& in) { return sum(in[0]); }, s + 1);
  });
  run("mean", [&](GradReport& rep, std::uint64_t s) {
    Rng r(s);
    auto sh = random_shape();
    check_op(rep, {dt(sh, random_values(r, shape_size(sh)))}, [](auto& in) { return mean(in[0]); }, s + 1);
  });
  run("reshape", [&](GradReport& rep, std::uint64_t s) {
    Rng r(s);
    auto sh = random_shape();
    const int n = static_cast<int>(shape_size(sh));
    check_op(rep, {dt(sh, random_values(r, static_cast<std::size_t>(n)))},
             [n](auto& in) { return reshape(in[0], {n}); }, s + 1);
  });
  run("log_softmax", [&](GradReport& rep, std::uint64_t s) {
    Rng r(s);
    Shape sh{dim(1, 6), dim(2, 10)};
    check_op(rep, {dt(sh, random_values(r, shape_size(sh), -3.0, 3.0))},
             [](auto& in) { return log_softmax(in[0]); }, s + 1);
  });
  run("affine", [&](GradReport& rep, std::uint64_t s) {
    Rng r(s);
    const int n = dim(1, 5), in = dim(1, 6), out = dim(1, 5);
    check_op(rep,
             {dt({n, in}, random_values(r, n * in)), dt({in, out}, random_values(r, in * out)),
              dt({out}, random_values(r, out))},
             [](auto& x) { return affine(x[0], x[1], x[2]); }, s + 1);
  });
  run("conv2d", [&](GradReport& rep, std::uint64_t s) {
    Rng r(s);
    const int n = dim(1, 2), c = dim(1, 3), h = dim(3, 6), w = dim(3, 6), o = dim(1, 3);
    const int k = dim(0, 1) * 2 + 1, pad = dim(0, 1);
    check_op(rep,
             {dt({n, c, h, w}, random_values(r, n * c * h * w)), dt({o, c, k, k}, random_values(r, o * c * k * k)),
              dt({o}, random_values(r, o))},
             [pad](auto& x) { return conv2d(x[0], x[1], x[2], pad); }, s + 1);
  });
  run("max_pool2", [&](GradReport& rep, std::uint64_t s) {
    Rng r(s);
    Shape sh{dim(1, 2), dim(1, 3), 2 * dim(1, 3), 2 * dim(1, 3)};
    // Distinct values spaced well beyond the FD step keep the argmax stable.
    const auto n = shape_size(sh);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = 0.01 * static_cast<double>(i);
    r.shuffle(std::span<double>(v));
    check_op(rep, {dt(sh, v)}, [](auto& in) { return max_pool2(in[0]); }, s + 1);
  });
  run("two_layer_net", [&](GradReport& rep, std::uint64_t s) {
    Rng r(s);
    const int n = dim(1, 4), in = dim(2, 6), hid = dim(2, 6), out = dim(2, 5);
    check_op(rep,
             {dt({n, in}, random_values(r, n * in)), dt({in, hid}, random_values(r, in * hid)),
              dt({hid}, away_from_zero(r, hid, 0.2)), dt({hid, out}, random_values(r, hid * out)),
              dt({out}, random_values(r, out))},
             [](auto& x) { return log_softmax(affine(relu(affine(x[0], x[1], x[2])), x[3], x[4])); }, s + 1);
  });
  return reports;
}

}  // namespace pslab::testsupport
