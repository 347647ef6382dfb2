#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "eit/tensor.hpp"

// Dense ops over Tensor<T>. Each op validates shapes, runs a plain forward
// loop, checks the result is finite, and (when a tape is active and an input
// is tracked) records a backward closure. Closures accumulate with += so
// shared inputs sum their contributions; they run in reverse append order.

namespace eit {

namespace detail {

template <typename T>
inline void require(bool cond, const char* msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace detail

// ---- elementwise ----

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T* xp = x.data();
  T* yp = y.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) yp[i] = xp[i] > T(0) ? xp[i] : T(0);
  check_finite(y, "relu");
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("relu", [x, y]() mutable {
      const T* xp = x.data();
      const T* gy = y.grad();
      T* gx = x.grad();
      for (int64_t i = 0; i < x.numel(); ++i)
        if (xp[i] > T(0)) gx[i] += gy[i];
    });
  }
  return y;
}

// tanh form of gelu, used everywhere in the model
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  Tensor<T> y(x.shape());
  const T* xp = x.data();
  T* yp = y.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    double v = static_cast<double>(xp[i]);
    yp[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))));
  }
  check_finite(y, "gelu");
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("gelu", [x, y]() mutable {
      const T* xp = x.data();
      const T* gy = y.grad();
      T* gx = x.grad();
      for (int64_t i = 0; i < x.numel(); ++i) {
        double v = static_cast<double>(xp[i]);
        double t = std::tanh(k * (v + c * v * v * v));
        double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * c * v * v);
        gx[i] += static_cast<T>(d * static_cast<double>(gy[i]));
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T* xp = x.data();
  T* yp = y.data();
  for (int64_t i = 0; i < x.numel(); ++i)
    yp[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(xp[i]))));
  check_finite(y, "sigmoid");
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("sigmoid", [x, y]() mutable {
      const T* yp = y.data();
      const T* gy = y.grad();
      T* gx = x.grad();
      for (int64_t i = 0; i < x.numel(); ++i) {
        const double v = static_cast<double>(yp[i]);
        gx[i] += static_cast<T>(v * (1.0 - v) * static_cast<double>(gy[i]));
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require<T>(a.shape() == b.shape(), "add: shape mismatch");
  Tensor<T> y(a.shape());
  const T* ap = a.data();
  const T* bp = b.data();
  T* yp = y.data();
  for (int64_t i = 0; i < a.numel(); ++i) yp[i] = ap[i] + bp[i];
  check_finite(y, "add");
  if (detail::tracking(a, b)) {
    y.mark_tracked();
    Tape<T>::current()->record("add", [a, b, y]() mutable {
      const T* gy = y.grad();
      if (a.tracked()) {
        T* ga = a.grad();
        for (int64_t i = 0; i < a.numel(); ++i) ga[i] += gy[i];
      }
      if (b.tracked()) {
        T* gb = b.grad();
        for (int64_t i = 0; i < b.numel(); ++i) gb[i] += gy[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require<T>(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor<T> y(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) y.data()[i] = a.data()[i] - b.data()[i];
  check_finite(y, "sub");
  if (detail::tracking(a, b)) {
    y.mark_tracked();
    Tape<T>::current()->record("sub", [a, b, y]() mutable {
      const T* gy = y.grad();
      if (a.tracked()) {
        T* ga = a.grad();
        for (int64_t i = 0; i < a.numel(); ++i) ga[i] += gy[i];
      }
      if (b.tracked()) {
        T* gb = b.grad();
        for (int64_t i = 0; i < b.numel(); ++i) gb[i] -= gy[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require<T>(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor<T> y(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) y.data()[i] = a.data()[i] * b.data()[i];
  check_finite(y, "mul");
  if (detail::tracking(a, b)) {
    y.mark_tracked();
    Tape<T>::current()->record("mul", [a, b, y]() mutable {
      const T* gy = y.grad();
      if (a.tracked()) {
        T* ga = a.grad();
        for (int64_t i = 0; i < a.numel(); ++i) ga[i] += gy[i] * b.data()[i];
      }
      if (b.tracked()) {
        T* gb = b.grad();
        for (int64_t i = 0; i < b.numel(); ++i) gb[i] += gy[i] * a.data()[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  Tensor<T> y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) y.data()[i] = x.data()[i] * c;
  check_finite(y, "scale");
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("scale", [x, y, c]() mutable {
      const T* gy = y.grad();
      T* gx = x.grad();
      for (int64_t i = 0; i < x.numel(); ++i) gx[i] += c * gy[i];
    });
  }
  return y;
}

// x + p where p's shape is a trailing suffix of x's shape (broadcast over the
// leading dims). Covers positional fields (C,H,W) onto (B,C,H,W) and offsets
// (L,S) onto (B,L,S).
template <typename T>
Tensor<T> add_param(const Tensor<T>& x, const Tensor<T>& p) {
  const int xr = x.rank(), pr = p.rank();
  detail::require<T>(pr <= xr, "add_param: param rank exceeds input rank");
  for (int i = 0; i < pr; ++i)
    detail::require<T>(p.dim(i) == x.dim(xr - pr + i), "add_param: trailing dims mismatch");
  const int64_t inner = p.numel();
  const int64_t outer = x.numel() / inner;
  Tensor<T> y(x.shape());
  for (int64_t o = 0; o < outer; ++o) {
    const T* xp = x.data() + o * inner;
    T* yp = y.data() + o * inner;
    const T* pp = p.data();
    for (int64_t i = 0; i < inner; ++i) yp[i] = xp[i] + pp[i];
  }
  check_finite(y, "add_param");
  if (detail::tracking(x, p)) {
    y.mark_tracked();
    Tape<T>::current()->record("add_param", [x, p, y, outer, inner]() mutable {
      const T* gy = y.grad();
      if (x.tracked()) {
        T* gx = x.grad();
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += gy[i];
      }
      if (p.tracked()) {
        T* gp = p.grad();
        for (int64_t o = 0; o < outer; ++o) {
          const T* g = gy + o * inner;
          for (int64_t i = 0; i < inner; ++i) gp[i] += g[i];
        }
      }
    });
  }
  return y;
}

// ---- shape ops ----

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require<T>(numel_of(shape) == x.numel(), "reshape: element count mismatch");
  auto y = Tensor<T>::from_data(std::move(shape), x.vec());
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("reshape", [x, y]() mutable {
      const T* gy = y.grad();
      T* gx = x.grad();
      for (int64_t i = 0; i < x.numel(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  detail::require<T>(x.rank() >= 2, "transpose_last2: rank must be >= 2");
  Shape ys = x.shape();
  const int r = x.rank();
  std::swap(ys[r - 2], ys[r - 1]);
  const int64_t m = x.dim(r - 2), n = x.dim(r - 1);
  const int64_t batch = x.numel() / (m * n);
  Tensor<T> y(ys);
  for (int64_t b = 0; b < batch; ++b) {
    const T* xp = x.data() + b * m * n;
    T* yp = y.data() + b * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) yp[j * m + i] = xp[i * n + j];
  }
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("transpose_last2", [x, y, batch, m, n]() mutable {
      T* gx = x.grad();
      const T* gy = y.grad();
      for (int64_t b = 0; b < batch; ++b) {
        T* g = gx + b * m * n;
        const T* gyo = gy + b * m * n;
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) g[i * n + j] += gyo[j * m + i];
      }
    });
  }
  return y;
}

// concat along `axis`; all other dims must match
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  detail::require<T>(!xs.empty(), "concat: no inputs");
  const int r = xs[0].rank();
  detail::require<T>(axis >= 0 && axis < r, "concat: axis out of range");
  Shape ys = xs[0].shape();
  int total = 0;
  for (const auto& t : xs) {
    detail::require<T>(t.rank() == r, "concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis) detail::require<T>(t.dim(i) == ys[i], "concat: dim mismatch");
    total += t.dim(axis);
  }
  ys[axis] = total;
  Tensor<T> y(ys);
  int64_t outer = 1, tail = 1;
  for (int i = 0; i < axis; ++i) outer *= ys[i];
  for (int i = axis + 1; i < r; ++i) tail *= ys[i];
  const int64_t ystride = static_cast<int64_t>(total) * tail;
  int64_t off = 0;
  for (const auto& t : xs) {
    const int64_t block = static_cast<int64_t>(t.dim(axis)) * tail;
    for (int64_t o = 0; o < outer; ++o)
      std::copy(t.data() + o * block, t.data() + (o + 1) * block, y.data() + o * ystride + off);
    off += block;
  }
  bool any = false;
  for (const auto& t : xs) any = any || t.tracked();
  if (Tape<T>::current() && any) {
    y.mark_tracked();
    Tape<T>::current()->record("concat", [xs, y, outer, ystride]() mutable {
      const T* gy = y.grad();
      int64_t off = 0;
      for (auto& t : xs) {
        const int64_t blk = t.numel() / outer;
        if (t.tracked()) {
          T* gt = t.grad();
          for (int64_t o = 0; o < outer; ++o) {
            const T* g = gy + o * ystride + off;
            for (int64_t i = 0; i < blk; ++i) gt[o * blk + i] += g[i];
          }
        }
        off += blk;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> xs, int axis) {
  return concat(std::vector<Tensor<T>>(xs), axis);
}

// ---- matmul family ----

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require<T>(a.rank() == 2 && b.rank() == 2, "matmul: expects rank-2 inputs");
  detail::require<T>(a.dim(1) == b.dim(0), "matmul: inner dims mismatch");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> y({static_cast<int>(m), static_cast<int>(n)});
  const T* ap = a.data();
  const T* bp = b.data();
  T* yp = y.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      const T av = ap[i * k + kk];
      const T* br = bp + kk * n;
      T* yr = yp + i * n;
      for (int64_t j = 0; j < n; ++j) yr[j] += av * br[j];
    }
  check_finite(y, "matmul");
  if (detail::tracking(a, b)) {
    y.mark_tracked();
    Tape<T>::current()->record("matmul", [a, b, y, m, k, n]() mutable {
      const T* gy = y.grad();
      if (a.tracked()) {
        T* ga = a.grad();
        const T* bp = b.data();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t kk = 0; kk < k; ++kk) {
            const T* gr = gy + i * n;
            const T* br = bp + kk * n;
            T acc = T(0);
            for (int64_t j = 0; j < n; ++j) acc += gr[j] * br[j];
            ga[i * k + kk] += acc;
          }
      }
      if (b.tracked()) {
        T* gb = b.grad();
        const T* ap = a.data();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t kk = 0; kk < k; ++kk) {
            const T av = ap[i * k + kk];
            const T* gr = gy + i * n;
            T* gbr = gb + kk * n;
            for (int64_t j = 0; j < n; ++j) gbr[j] += av * gr[j];
          }
      }
    });
  }
  return y;
}

namespace detail {

template <typename T>
inline void mm_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      const T av = a[i * k + kk];
      const T* br = b + kk * n;
      T* cr = c + i * n;
      for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
}

// c(m,k) += a(m,n) * b(k,n)^T
template <typename T>
inline void mm_abT_acc(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      const T* ar = a + i * n;
      const T* br = b + kk * n;
      T acc = T(0);
      for (int64_t j = 0; j < n; ++j) acc += ar[j] * br[j];
      c[i * k + kk] += acc;
    }
}

// c(k,n) += a(m,k)^T * b(m,n)
template <typename T>
inline void mm_aTb_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      const T av = a[i * k + kk];
      const T* br = b + i * n;
      T* cr = c + kk * n;
      for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
}

}  // namespace detail

// Batched matmul (B,m,k)x(B,k,n) -> (B,m,n). Either input may be rank-2 and
// is then shared across the batch (its gradient sums over the batch).
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require<T>((a.rank() == 3 || a.rank() == 2) && (b.rank() == 3 || b.rank() == 2),
                     "bmm: expects rank-2 or rank-3 inputs");
  detail::require<T>(a.rank() == 3 || b.rank() == 3, "bmm: at least one input must be batched");
  const int64_t B = a.rank() == 3 ? a.dim(0) : b.dim(0);
  if (a.rank() == 3 && b.rank() == 3)
    detail::require<T>(a.dim(0) == b.dim(0), "bmm: batch mismatch");
  const int64_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const int64_t k2 = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  detail::require<T>(k == k2, "bmm: inner dims mismatch");
  Tensor<T> y({static_cast<int>(B), static_cast<int>(m), static_cast<int>(n)});
  const int64_t sa = a.rank() == 3 ? m * k : 0;
  const int64_t sb = b.rank() == 3 ? k * n : 0;
  for (int64_t bi = 0; bi < B; ++bi)
    detail::mm_acc(a.data() + bi * sa, b.data() + bi * sb, y.data() + bi * m * n, m, k, n);
  check_finite(y, "bmm");
  if (detail::tracking(a, b)) {
    y.mark_tracked();
    Tape<T>::current()->record("bmm", [a, b, y, B, m, k, n, sa, sb]() mutable {
      const T* gy = y.grad();
      if (a.tracked()) {
        T* ga = a.grad();
        for (int64_t bi = 0; bi < B; ++bi)
          detail::mm_abT_acc(gy + bi * m * n, b.data() + bi * sb, ga + bi * sa, m, n, k);
      }
      if (b.tracked()) {
        T* gb = b.grad();
        for (int64_t bi = 0; bi < B; ++bi)
          detail::mm_aTb_acc(a.data() + bi * sa, gy + bi * m * n, gb + bi * sb, m, k, n);
      }
    });
  }
  return y;
}

// y = x W^T + b over the last axis; x (..., in), W (out, in), b (out) optional
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b = nullptr) {
  detail::require<T>(w.rank() == 2, "linear: weight must be rank-2");
  const int64_t in = x.dim(x.rank() - 1);
  detail::require<T>(w.dim(1) == in, "linear: in_features mismatch");
  const int64_t out = w.dim(0);
  if (b) detail::require<T>(b->rank() == 1 && b->dim(0) == out, "linear: bias shape mismatch");
  const int64_t rows = x.numel() / in;
  Shape ys = x.shape();
  ys.back() = static_cast<int>(out);
  Tensor<T> y(ys);
  const T* xp = x.data();
  const T* wp = w.data();
  T* yp = y.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xp + r * in;
    T* yr = yp + r * out;
    for (int64_t o = 0; o < out; ++o) {
      const T* wr = wp + o * in;
      T acc = b ? b->data()[o] : T(0);
      for (int64_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  }
  check_finite(y, "linear");
  const bool track = b ? detail::tracking(x, w, *b) : detail::tracking(x, w);
  if (track) {
    y.mark_tracked();
    Tensor<T> bias = b ? *b : Tensor<T>();
    Tape<T>::current()->record("linear", [x, w, bias, y, rows, in, out]() mutable {
      const T* gy = y.grad();
      if (x.tracked()) {
        T* gx = x.grad();
        detail::mm_acc(gy, w.data(), gx, rows, out, in);
      }
      if (w.tracked()) {
        T* gw = w.grad();
        // gW(out,in) += gY(rows,out)^T X(rows,in)
        detail::mm_aTb_acc(gy, x.data(), gw, rows, out, in);
      }
      if (bias.defined() && bias.tracked()) {
        T* gb = bias.grad();
        for (int64_t r = 0; r < rows; ++r) {
          const T* gr = gy + r * out;
          for (int64_t o = 0; o < out; ++o) gb[o] += gr[o];
        }
      }
    });
  }
  return y;
}

// ---- normalization / attention pieces ----

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  detail::require<T>(x.rank() >= 1, "softmax: rank must be >= 1");
  const int64_t n = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / n;
  Tensor<T> y(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * n;
    T* yr = y.data() + r * n;
    T mx = xr[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, xr[i]);
    T sum = T(0);
    for (int64_t i = 0; i < n; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    const T inv = T(1) / sum;
    for (int64_t i = 0; i < n; ++i) yr[i] *= inv;
  }
  check_finite(y, "softmax");
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("softmax", [x, y, rows, n]() mutable {
      T* gx = x.grad();
      const T* gy = y.grad();
      for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y.data() + r * n;
        const T* gr = gy + r * n;
        T dot = T(0);
        for (int64_t i = 0; i < n; ++i) dot += yr[i] * gr[i];
        T* gxr = gx + r * n;
        for (int64_t i = 0; i < n; ++i) gxr[i] += yr[i] * (gr[i] - dot);
      }
    });
  }
  return y;
}

// layernorm over the last axis with affine params gamma, beta of that length
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps = T(1e-5)) {
  const int64_t n = x.dim(x.rank() - 1);
  detail::require<T>(gamma.rank() == 1 && gamma.dim(0) == n, "layernorm: gamma shape mismatch");
  detail::require<T>(beta.rank() == 1 && beta.dim(0) == n, "layernorm: beta shape mismatch");
  const int64_t rows = x.numel() / n;
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  Tensor<T> rstd({static_cast<int>(rows)});
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * n;
    T mu = T(0);
    for (int64_t i = 0; i < n; ++i) mu += xr[i];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (int64_t i = 0; i < n; ++i) {
      const T d = xr[i] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd.data()[r] = rs;
    T* hr = xhat.data() + r * n;
    T* yr = y.data() + r * n;
    for (int64_t i = 0; i < n; ++i) {
      hr[i] = (xr[i] - mu) * rs;
      yr[i] = gamma.data()[i] * hr[i] + beta.data()[i];
    }
  }
  check_finite(y, "layernorm");
  if (detail::tracking(x, gamma, beta)) {
    y.mark_tracked();
    Tape<T>::current()->record("layernorm", [x, gamma, beta, y, xhat, rstd, rows, n]() mutable {
      const T* gy = y.grad();
      for (int64_t r = 0; r < rows; ++r) {
        const T* gr = gy + r * n;
        const T* hr = xhat.data() + r * n;
        if (gamma.tracked()) {
          T* gg = gamma.grad();
          for (int64_t i = 0; i < n; ++i) gg[i] += gr[i] * hr[i];
        }
        if (beta.tracked()) {
          T* gb = beta.grad();
          for (int64_t i = 0; i < n; ++i) gb[i] += gr[i];
        }
        if (x.tracked()) {
          T m1 = T(0), m2 = T(0);
          for (int64_t i = 0; i < n; ++i) {
            const T dh = gr[i] * gamma.data()[i];
            m1 += dh;
            m2 += dh * hr[i];
          }
          m1 /= static_cast<T>(n);
          m2 /= static_cast<T>(n);
          const T rs = rstd.data()[r];
          T* gx = x.grad() + r * n;
          for (int64_t i = 0; i < n; ++i) {
            const T dh = gr[i] * gamma.data()[i];
            gx[i] += rs * (dh - m1 - hr[i] * m2);
          }
        }
      }
    });
  }
  return y;
}

// ---- reductions and losses ----

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) s += x.data()[i];
  auto y = Tensor<T>::scalar(s);
  check_finite(y, "sum");
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("sum", [x, y]() mutable {
      const T g = y.grad()[0];
      T* gx = x.grad();
      for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
    });
  }
  return y;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T s = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) s += x.data()[i];
  const T inv = T(1) / static_cast<T>(x.numel());
  auto y = Tensor<T>::scalar(s * inv);
  check_finite(y, "mean");
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("mean", [x, y, inv]() mutable {
      const T g = y.grad()[0] * inv;
      T* gx = x.grad();
      for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
    });
  }
  return y;
}

// mean cross-entropy from logits (B,K) against integer labels
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  detail::require<T>(logits.rank() == 2, "cross_entropy: logits must be (B,K)");
  const int64_t B = logits.dim(0), K = logits.dim(1);
  detail::require<T>(static_cast<int64_t>(labels.size()) == B, "cross_entropy: label count");
  for (int l : labels)
    detail::require<T>(l >= 0 && l < K, "cross_entropy: label out of range");
  Tensor<T> probs({static_cast<int>(B), static_cast<int>(K)});
  T loss = T(0);
  for (int64_t b = 0; b < B; ++b) {
    const T* zr = logits.data() + b * K;
    T* pr = probs.data() + b * K;
    T mx = zr[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, zr[k]);
    T sum = T(0);
    for (int64_t k = 0; k < K; ++k) {
      pr[k] = std::exp(zr[k] - mx);
      sum += pr[k];
    }
    const T inv = T(1) / sum;
    for (int64_t k = 0; k < K; ++k) pr[k] *= inv;
    loss -= std::log(pr[labels[static_cast<size_t>(b)]]);
  }
  auto y = Tensor<T>::scalar(loss / static_cast<T>(B));
  check_finite(y, "cross_entropy");
  if (detail::tracking(logits)) {
    y.mark_tracked();
    Tape<T>::current()->record("cross_entropy", [logits, probs, labels, y, B, K]() mutable {
      const T g = y.grad()[0] / static_cast<T>(B);
      T* gz = logits.grad();
      for (int64_t b = 0; b < B; ++b) {
        const T* pr = probs.data() + b * K;
        T* gr = gz + b * K;
        for (int64_t k = 0; k < K; ++k) gr[k] += g * pr[k];
        gr[labels[static_cast<size_t>(b)]] -= g;
      }
    });
  }
  return y;
}

// mean absolute error over all elements
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require<T>(a.shape() == b.shape(), "l1_loss: shape mismatch");
  T s = T(0);
  for (int64_t i = 0; i < a.numel(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  const T inv = T(1) / static_cast<T>(a.numel());
  auto y = Tensor<T>::scalar(s * inv);
  check_finite(y, "l1_loss");
  if (detail::tracking(a, b)) {
    y.mark_tracked();
    Tape<T>::current()->record("l1_loss", [a, b, y, inv]() mutable {
      const T g = y.grad()[0] * inv;
      for (int64_t i = 0; i < a.numel(); ++i) {
        const T d = a.data()[i] - b.data()[i];
        const T sg = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
        if (a.tracked()) a.grad()[i] += g * sg;
        if (b.tracked()) b.grad()[i] -= g * sg;
      }
    });
  }
  return y;
}

}  // namespace eit
