#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "eit/conv.hpp"
#include "eit/ops.hpp"
#include "eit/rng.hpp"
#include "eit/tensor.hpp"

// Small layer structs: a parameter bundle plus a forward. Construction draws
// from the provided Rng in a fixed order (weight, then bias), so a single
// seeded generator threaded through a model reproduces its init exactly.

namespace eit {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double mean, double stddev) {
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<T>(rng.normal(mean, stddev));
}

template <typename T>
void fill_kaiming(Tensor<T>& t, Rng& rng, int64_t fan_in) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  fill_normal(t, rng, 0.0, std);
}

// orthonormal columns when rows >= cols, orthonormal rows otherwise
template <typename T>
void fill_orthogonal(Tensor<T>& t, Rng& rng) {
  if (t.rank() != 2) throw ShapeError("fill_orthogonal: rank-2 only");
  const int64_t r = t.dim(0), c = t.dim(1);
  const int64_t m = std::max(r, c), n = std::min(r, c);
  // modified Gram-Schmidt on an m x n gaussian
  std::vector<std::vector<double>> q(static_cast<size_t>(n),
                                     std::vector<double>(static_cast<size_t>(m)));
  for (auto& col : q)
    for (auto& v : col) v = rng.normal();
  for (size_t j = 0; j < q.size(); ++j) {
    for (size_t k = 0; k < j; ++k) {
      double dot = 0;
      for (int64_t i = 0; i < m; ++i)
        dot += q[j][static_cast<size_t>(i)] * q[k][static_cast<size_t>(i)];
      for (int64_t i = 0; i < m; ++i)
        q[j][static_cast<size_t>(i)] -= dot * q[k][static_cast<size_t>(i)];
    }
    double norm = 0;
    for (int64_t i = 0; i < m; ++i)
      norm += q[j][static_cast<size_t>(i)] * q[j][static_cast<size_t>(i)];
    norm = std::sqrt(norm);
    if (norm < 1e-12) norm = 1.0;  // astronomically unlikely with a gaussian draw
    for (int64_t i = 0; i < m; ++i) q[j][static_cast<size_t>(i)] /= norm;
  }
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) {
      const double v = (r >= c) ? q[static_cast<size_t>(j)][static_cast<size_t>(i)]
                                : q[static_cast<size_t>(i)][static_cast<size_t>(j)];
      t.data()[i * c + j] = static_cast<T>(v);
    }
}

template <typename T>
void fill_identity(Tensor<T>& t) {
  if (t.rank() != 2 || t.dim(0) != t.dim(1)) throw ShapeError("fill_identity: square rank-2 only");
  const int64_t n = t.dim(0);
  std::fill(t.vec().begin(), t.vec().end(), T(0));
  for (int64_t i = 0; i < n; ++i) t.data()[i * n + i] = T(1);
}

template <typename T>
struct Conv2dLayer {
  Tensor<T> w, b;
  int stride = 1, pad = 0;
  bool has_bias = true;

  Conv2dLayer() = default;
  Conv2dLayer(int co, int ci, int k, int stride_, int pad_, Rng& rng, bool bias = true)
      : stride(stride_), pad(pad_), has_bias(bias) {
    w = Tensor<T>({co, ci, k, k});
    fill_kaiming(w, rng, static_cast<int64_t>(ci) * k * k);
    w.set_requires_grad(true);
    if (has_bias) {
      b = Tensor<T>({co}, T(0), true);
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, w, has_bias ? &b : nullptr, stride, pad);
  }

  void params(NamedParams<T>& out, const std::string& p) const {
    out.emplace_back(p + ".w", w);
    if (has_bias) out.emplace_back(p + ".b", b);
  }
};

template <typename T>
struct DepthwiseLayer {
  Tensor<T> w, b;
  int pad = 1;

  DepthwiseLayer() = default;
  DepthwiseLayer(int c, int k, Rng& rng) : pad(k / 2) {
    w = Tensor<T>({c, k, k});
    fill_kaiming(w, rng, static_cast<int64_t>(k) * k);
    w.set_requires_grad(true);
    b = Tensor<T>({c}, T(0), true);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return depthwise_conv2d(x, w, &b, pad); }

  void params(NamedParams<T>& out, const std::string& p) const {
    out.emplace_back(p + ".w", w);
    out.emplace_back(p + ".b", b);
  }
};

template <typename T>
struct LinearLayer {
  Tensor<T> w, b;
  bool has_bias = true;

  LinearLayer() = default;
  LinearLayer(int out, int in, Rng& rng, bool bias = true) : has_bias(bias) {
    w = Tensor<T>({out, in});
    fill_normal(w, rng, 0.0, 0.02);
    w.set_requires_grad(true);
    if (has_bias) b = Tensor<T>({out}, T(0), true);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, w, has_bias ? &b : nullptr); }

  void params(NamedParams<T>& out, const std::string& p) const {
    out.emplace_back(p + ".w", w);
    if (has_bias) out.emplace_back(p + ".b", b);
  }
};

template <typename T>
struct LayerNormLayer {
  Tensor<T> gamma, beta;

  LayerNormLayer() = default;
  explicit LayerNormLayer(int c) {
    gamma = Tensor<T>({c}, T(1), true);
    beta = Tensor<T>({c}, T(0), true);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return layernorm(x, gamma, beta); }

  void params(NamedParams<T>& out, const std::string& p) const {
    out.emplace_back(p + ".g", gamma);
    out.emplace_back(p + ".b", beta);
  }
};

}  // namespace eit
