#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "pslab/numgrad/tensor.hpp"

// Differentiable operators on BasicTensor. Every op checks shapes up front and
// rejects non-finite results.
namespace pslab::numgrad {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  expects(a == b, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
bool wants_grad(const Node<T>& n, std::size_t i) {
  return n.inputs.size() > i && n.inputs[i]->requires_grad;
}

}  // namespace detail

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("add", a.shape(), b.shape());
  std::vector<T> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!detail::wants_grad(self, k)) continue;
      auto& g = self.inputs[k]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("sub", a.shape(), b.shape());
  std::vector<T> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (detail::wants_grad(self, 0)) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (detail::wants_grad(self, 1)) {
      auto& g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("mul", a.shape(), b.shape());
  std::vector<T> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (detail::wants_grad(self, 0)) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (detail::wants_grad(self, 1)) {
      auto& g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return detail::make_result<T>("scale", a.shape(), std::move(out), {a},
                                [factor](Node<T>& self) {
                                  auto& g = self.inputs[0]->ensure_grad();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                    g[i] += self.grad[i] * factor;
                                });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  std::vector<T> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T(0) ? av[i] : T(0);
  return detail::make_result<T>("relu", a.shape(), std::move(out), {a}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  std::vector<T> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  return detail::make_result<T>("exp", a.shape(), std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T acc = T(0);
  for (T v : a.values()) acc += v;
  return detail::make_result<T>("sum", Shape{}, std::vector<T>{acc}, {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const T up = self.grad[0];
    for (auto& v : g) v += up;
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  expects(a.size() > 0, "mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  expects(shape_size(shape) == a.size(),
          "reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  std::vector<T> out(a.values().begin(), a.values().end());
  return detail::make_result<T>("reshape", std::move(shape), std::move(out), {a},
                                [](Node<T>& self) {
                                  auto& g = self.inputs[0]->ensure_grad();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                });
}

// Row-wise log-softmax over the last axis of a rank-2 tensor.
template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& a) {
  expects(a.rank() == 2, "log_softmax expects [rows, classes], got " + shape_str(a.shape()));
  const int rows = a.dim(0);
  const int cols = a.dim(1);
  expects(cols > 0, "log_softmax over zero classes");
  std::vector<T> out(a.size());
  auto av = a.values();
  for (int r = 0; r < rows; ++r) {
    const T* x = av.data() + static_cast<std::size_t>(r) * cols;
    T* y = out.data() + static_cast<std::size_t>(r) * cols;
    const T m = *std::max_element(x, x + cols);
    T s = T(0);
    for (int c = 0; c < cols; ++c) s += std::exp(x[c] - m);
    const T lse = m + std::log(s);
    for (int c = 0; c < cols; ++c) y[c] = x[c] - lse;
  }
  return detail::make_result<T>(
      "log_softmax", a.shape(), std::move(out), {a}, [rows, cols](Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (int r = 0; r < rows; ++r) {
          const std::size_t base = static_cast<std::size_t>(r) * cols;
          T gs = T(0);
          for (int c = 0; c < cols; ++c) gs += self.grad[base + c];
          for (int c = 0; c < cols; ++c)
            g[base + c] += self.grad[base + c] - std::exp(self.value[base + c]) * gs;
        }
      });
}

// y = x·W + b with x [N, in], W [in, out], b [out].
template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& x, const BasicTensor<T>& w,
                      const BasicTensor<T>& b) {
  expects(x.rank() == 2 && w.rank() == 2 && b.rank() == 1,
          "affine expects x[N,in], W[in,out], b[out]");
  expects(x.dim(1) == w.dim(0) && w.dim(1) == b.dim(0),
          "affine: incompatible shapes " + shape_str(x.shape()) + " " + shape_str(w.shape()) +
              " " + shape_str(b.shape()));
  const int n = x.dim(0);
  const int in = x.dim(1);
  const int outd = w.dim(1);
  std::vector<T> out(static_cast<std::size_t>(n) * outd);
  {
    detail::ConstMapMat<T> X(x.values().data(), n, in);
    detail::ConstMapMat<T> W(w.values().data(), in, outd);
    detail::MapMat<T> Y(out.data(), n, outd);
    Y.noalias() = X * W;
    auto bv = b.values();
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < outd; ++c) Y(r, c) += bv[c];
  }
  return detail::make_result<T>(
      "affine", Shape{n, outd}, std::move(out), {x, w, b}, [n, in, outd](Node<T>& self) {
        detail::ConstMapMat<T> G(self.grad.data(), n, outd);
        if (detail::wants_grad(self, 0)) {
          detail::ConstMapMat<T> W(self.inputs[1]->value.data(), in, outd);
          detail::MapMat<T> dX(self.inputs[0]->ensure_grad().data(), n, in);
          dX.noalias() += G * W.transpose();
        }
        if (detail::wants_grad(self, 1)) {
          detail::ConstMapMat<T> X(self.inputs[0]->value.data(), n, in);
          detail::MapMat<T> dW(self.inputs[1]->ensure_grad().data(), in, outd);
          dW.noalias() += X.transpose() * G;
        }
        if (detail::wants_grad(self, 2)) {
          auto& db = self.inputs[2]->ensure_grad();
          for (int r = 0; r < n; ++r)
            for (int c = 0; c < outd; ++c) db[c] += G(r, c);
        }
      });
}

// Stride-1 convolution with zero padding. x [N,C,H,W], w [O,C,k,k], b [O].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      int pad) {
  expects(x.rank() == 4 && w.rank() == 4 && b.rank() == 1,
          "conv2d expects x[N,C,H,W], w[O,C,k,k], b[O]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), k = w.dim(2);
  expects(w.dim(1) == c && w.dim(3) == k && b.dim(0) == o,
          "conv2d: incompatible shapes " + shape_str(x.shape()) + " " + shape_str(w.shape()) +
              " " + shape_str(b.shape()));
  expects(pad >= 0, "conv2d: negative padding");
  const int ho = h + 2 * pad - k + 1;
  const int wo = wd + 2 * pad - k + 1;
  expects(ho > 0 && wo > 0, "conv2d: kernel larger than padded input");

  const int ckk = c * k * k;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  const std::size_t cols = static_cast<std::size_t>(n) * plane;
  auto col = std::make_shared<std::vector<T>>(static_cast<std::size_t>(ckk) * cols, T(0));
  auto xv = x.values();
  for (int ci = 0; ci < c; ++ci)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        T* row = col->data() + static_cast<std::size_t>((ci * k + ki) * k + kj) * cols;
        for (int ni = 0; ni < n; ++ni) {
          const T* src = xv.data() + (static_cast<std::size_t>(ni) * c + ci) * h * wd;
          T* dst = row + static_cast<std::size_t>(ni) * plane;
          for (int y = 0; y < ho; ++y) {
            const int sy = y + ki - pad;
            if (sy < 0 || sy >= h) continue;
            const int x0 = std::max(0, pad - kj);
            const int x1 = std::min(wo, wd + pad - kj);
            for (int xx = x0; xx < x1; ++xx) dst[y * wo + xx] = src[sy * wd + xx + kj - pad];
          }
        }
      }

  std::vector<T> out(static_cast<std::size_t>(n) * o * plane);
  {
    detail::RowMat<T> y2(o, static_cast<Eigen::Index>(cols));
    detail::ConstMapMat<T> Wm(w.values().data(), o, ckk);
    detail::ConstMapMat<T> Col(col->data(), ckk, static_cast<Eigen::Index>(cols));
    y2.noalias() = Wm * Col;
    auto bv = b.values();
    for (int ni = 0; ni < n; ++ni)
      for (int oi = 0; oi < o; ++oi) {
        const T* src = y2.data() + static_cast<std::size_t>(oi) * cols + ni * plane;
        T* dst = out.data() + (static_cast<std::size_t>(ni) * o + oi) * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bv[oi];
      }
  }

  return detail::make_result<T>(
      "conv2d", Shape{n, o, ho, wo}, std::move(out), {x, w, b},
      [=](Node<T>& self) {
        detail::RowMat<T> g2(o, static_cast<Eigen::Index>(cols));
        for (int ni = 0; ni < n; ++ni)
          for (int oi = 0; oi < o; ++oi) {
            const T* src = self.grad.data() + (static_cast<std::size_t>(ni) * o + oi) * plane;
            T* dst = g2.data() + static_cast<std::size_t>(oi) * cols + ni * plane;
            std::copy(src, src + plane, dst);
          }
        detail::ConstMapMat<T> Col(col->data(), ckk, static_cast<Eigen::Index>(cols));
        if (detail::wants_grad(self, 1)) {
          detail::MapMat<T> dW(self.inputs[1]->ensure_grad().data(), o, ckk);
          dW.noalias() += g2 * Col.transpose();
        }
        if (detail::wants_grad(self, 2)) {
          auto& db = self.inputs[2]->ensure_grad();
          for (int oi = 0; oi < o; ++oi) db[oi] += g2.row(oi).sum();
        }
        if (detail::wants_grad(self, 0)) {
          detail::ConstMapMat<T> Wm(self.inputs[1]->value.data(), o, ckk);
          detail::RowMat<T> dcol(ckk, static_cast<Eigen::Index>(cols));
          dcol.noalias() = Wm.transpose() * g2;
          auto& dx = self.inputs[0]->ensure_grad();
          for (int ci = 0; ci < c; ++ci)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const T* row = dcol.data() + static_cast<std::size_t>((ci * k + ki) * k + kj) * cols;
                for (int ni = 0; ni < n; ++ni) {
                  T* dst = dx.data() + (static_cast<std::size_t>(ni) * c + ci) * h * wd;
                  const T* src = row + static_cast<std::size_t>(ni) * plane;
                  for (int y = 0; y < ho; ++y) {
                    const int sy = y + ki - pad;
                    if (sy < 0 || sy >= h) continue;
                    const int x0 = std::max(0, pad - kj);
                    const int x1 = std::min(wo, wd + pad - kj);
                    for (int xx = x0; xx < x1; ++xx) dst[sy * wd + xx + kj - pad] += src[y * wo + xx];
                  }
                }
              }
        }
      });
}

// 2x2 max pooling with stride 2; ties resolve to the first element in row-major order.
template <typename T>
BasicTensor<T> max_pool2(const BasicTensor<T>& x) {
  expects(x.rank() == 4, "max_pool2 expects [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  expects(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even spatial extents, got " +
                                        shape_str(x.shape()));
  const int ho = h / 2, wo = w / 2;
  std::vector<T> out(static_cast<std::size_t>(n) * c * ho * wo);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  auto xv = x.values();
  std::size_t idx = 0;
  for (int p = 0; p < n * c; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * h * w;
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx, ++idx) {
        std::size_t best = base + static_cast<std::size_t>(2 * y) * w + 2 * xx;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (auto ci : cand)
          if (xv[ci] > xv[best]) best = ci;
        out[idx] = xv[best];
        (*argmax)[idx] = static_cast<std::uint32_t>(best);
      }
  }
  return detail::make_result<T>("max_pool2", Shape{n, c, ho, wo}, std::move(out), {x},
                                [argmax](Node<T>& self) {
                                  auto& g = self.inputs[0]->ensure_grad();
                                  for (std::size_t i = 0; i < argmax->size(); ++i)
                                    g[(*argmax)[i]] += self.grad[i];
                                });
}

// Non-differentiable helpers.

template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& a) {
  expects(a.rank() == 2, "argmax_rows expects a rank-2 tensor");
  const int rows = a.dim(0), cols = a.dim(1);
  std::vector<int> out(rows);
  auto av = a.values();
  for (int r = 0; r < rows; ++r) {
    const T* x = av.data() + static_cast<std::size_t>(r) * cols;
    out[r] = static_cast<int>(std::max_element(x, x + cols) - x);
  }
  return out;
}

// Row-wise softmax of logits, optionally at a temperature.
template <typename T>
std::vector<T> softmax_rows(const BasicTensor<T>& logits, T temperature = T(1)) {
  expects(logits.rank() == 2, "softmax_rows expects a rank-2 tensor");
  expects(temperature > T(0), "softmax temperature must be positive");
  const int rows = logits.dim(0), cols = logits.dim(1);
  std::vector<T> out(logits.size());
  auto lv = logits.values();
  for (int r = 0; r < rows; ++r) {
    const T* x = lv.data() + static_cast<std::size_t>(r) * cols;
    T* y = out.data() + static_cast<std::size_t>(r) * cols;
    const T m = *std::max_element(x, x + cols);
    T s = T(0);
    for (int c = 0; c < cols; ++c) {
      y[c] = std::exp((x[c] - m) / temperature);
      s += y[c];
    }
    for (int c = 0; c < cols; ++c) y[c] /= s;
  }
  return out;
}

}  // namespace pslab::numgrad
