#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "eit/tensor.hpp"

// Feature and attention analyses: PCA projection of feature maps, linear and
// kernel CKA similarity, Otsu thresholding and pattern-preserving attention
// enhancement, plus PGM/PPM writers. Pure readers over plain doubles; nothing
// here touches the autodiff tape.

namespace eit {

// cyclic Jacobi for symmetric matrices; returns eigenpairs sorted descending,
// eigenvectors as columns of v
inline void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& evals,
                         std::vector<double>& evecs) {
  std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;
  auto at = [&](int r, int c) -> double& { return a[static_cast<size_t>(r) * n + c]; };
  auto vt = [&](int r, int c) -> double& { return v[static_cast<size_t>(r) * n + c]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += at(p, q) * at(p, q);
    if (off < 1e-26) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = vt(k, p), vkq = vt(k, q);
          vt(k, p) = c * vkp - s * vkq;
          vt(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return at(x, x) > at(y, y); });
  evals.resize(static_cast<size_t>(n));
  evecs.assign(static_cast<size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    const int src = order[static_cast<size_t>(j)];
    evals[static_cast<size_t>(j)] = at(src, src);
    for (int i = 0; i < n; ++i) evecs[static_cast<size_t>(i) * n + j] = vt(i, src);
  }
}

struct PcaResult {
  Tensor<double> images;            // (k,H,W), each min-max scaled to [0,1]
  Tensor<double> components;        // (k,C) principal directions
  std::vector<double> eigenvalues;  // all C, descending
  std::vector<double> explained;    // eigenvalue / total, all C
};

// fmap (C,H,W): spatial positions are the samples, channels the dimensions
inline PcaResult pca_project(const Tensor<double>& fmap, int k = 3) {
  if (fmap.rank() != 3) throw ShapeError("pca_project: expected (C,H,W)");
  const int C = fmap.dim(0), H = fmap.dim(1), W = fmap.dim(2);
  if (k < 1 || k > C) throw ConfigError("pca_project: k must be in [1,C]");
  const int64_t N = static_cast<int64_t>(H) * W;
  if (N < 2) throw ConfigError("pca_project: need at least two positions");

  std::vector<double> mean(static_cast<size_t>(C), 0.0);
  for (int c = 0; c < C; ++c) {
    const double* f = fmap.data() + static_cast<int64_t>(c) * N;
    for (int64_t p = 0; p < N; ++p) mean[static_cast<size_t>(c)] += f[p];
    mean[static_cast<size_t>(c)] /= static_cast<double>(N);
  }
  std::vector<double> cov(static_cast<size_t>(C) * C, 0.0);
  for (int a = 0; a < C; ++a)
    for (int b = a; b < C; ++b) {
      const double* fa = fmap.data() + static_cast<int64_t>(a) * N;
      const double* fb = fmap.data() + static_cast<int64_t>(b) * N;
      double acc = 0;
      for (int64_t p = 0; p < N; ++p)
        acc += (fa[p] - mean[static_cast<size_t>(a)]) * (fb[p] - mean[static_cast<size_t>(b)]);
      cov[static_cast<size_t>(a) * C + b] = cov[static_cast<size_t>(b) * C + a] =
          acc / static_cast<double>(N - 1);
    }

  PcaResult r;
  std::vector<double> evecs;
  jacobi_eigen(cov, C, r.eigenvalues, evecs);
  double total = 0;
  for (double e : r.eigenvalues) total += std::max(e, 0.0);
  r.explained.resize(r.eigenvalues.size());
  for (size_t i = 0; i < r.eigenvalues.size(); ++i)
    r.explained[i] = total > 0 ? std::max(r.eigenvalues[i], 0.0) / total : 0.0;

  r.components = Tensor<double>({k, C});
  r.images = Tensor<double>({k, H, W});
  for (int j = 0; j < k; ++j) {
    // canonical sign: the largest-magnitude loading is positive
    int arg = 0;
    for (int i = 1; i < C; ++i)
      if (std::abs(evecs[static_cast<size_t>(i) * C + j]) >
          std::abs(evecs[static_cast<size_t>(arg) * C + j]))
        arg = i;
    const double sgn = evecs[static_cast<size_t>(arg) * C + j] >= 0 ? 1.0 : -1.0;
    for (int i = 0; i < C; ++i)
      r.components.data()[static_cast<int64_t>(j) * C + i] =
          sgn * evecs[static_cast<size_t>(i) * C + j];
    double lo = 1e300, hi = -1e300;
    std::vector<double> proj(static_cast<size_t>(N));
    for (int64_t p = 0; p < N; ++p) {
      double acc = 0;
      for (int c = 0; c < C; ++c)
        acc += (fmap.data()[static_cast<int64_t>(c) * N + p] - mean[static_cast<size_t>(c)]) *
               r.components.data()[static_cast<int64_t>(j) * C + c];
      proj[static_cast<size_t>(p)] = acc;
      lo = std::min(lo, acc);
      hi = std::max(hi, acc);
    }
    const double range = hi - lo;
    for (int64_t p = 0; p < N; ++p)
      r.images.data()[static_cast<int64_t>(j) * N + p] =
          range > 1e-30 ? (proj[static_cast<size_t>(p)] - lo) / range : 0.0;
  }
  return r;
}

namespace detail {

inline void center_columns(std::vector<double>& x, int64_t n, int64_t p) {
  for (int64_t j = 0; j < p; ++j) {
    double m = 0;
    for (int64_t i = 0; i < n; ++i) m += x[static_cast<size_t>(i * p + j)];
    m /= static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) x[static_cast<size_t>(i * p + j)] -= m;
  }
}

inline double frob_gram(const std::vector<double>& a, const std::vector<double>& b, int64_t n,
                        int64_t pa, int64_t pb) {
  // ||A^T B||_F^2 for column-centered inputs
  double acc = 0;
  for (int64_t ja = 0; ja < pa; ++ja)
    for (int64_t jb = 0; jb < pb; ++jb) {
      double dot = 0;
      for (int64_t i = 0; i < n; ++i)
        dot += a[static_cast<size_t>(i * pa + ja)] * b[static_cast<size_t>(i * pb + jb)];
      acc += dot * dot;
    }
  return acc;
}

}  // namespace detail

// ||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F) on column-centered matrices
inline double linear_cka(const Tensor<double>& x, const Tensor<double>& y) {
  if (x.rank() != 2 || y.rank() != 2) throw ShapeError("linear_cka: rank-2 inputs");
  if (x.dim(0) != y.dim(0)) throw ShapeError("linear_cka: sample counts differ");
  const int64_t n = x.dim(0), p = x.dim(1), q = y.dim(1);
  if (n < 2) throw ConfigError("linear_cka: need at least two samples");
  std::vector<double> xc(x.data(), x.data() + x.numel());
  std::vector<double> yc(y.data(), y.data() + y.numel());
  detail::center_columns(xc, n, p);
  detail::center_columns(yc, n, q);
  const double xy = detail::frob_gram(yc, xc, n, q, p);
  const double xx = std::sqrt(detail::frob_gram(xc, xc, n, p, p));
  const double yy = std::sqrt(detail::frob_gram(yc, yc, n, q, q));
  if (xx < 1e-30 || yy < 1e-30) throw NumericError("linear_cka: zero-variance input");
  return xy / (xx * yy);
}

namespace detail {

// RBF Gram matrix with median-pairwise-distance bandwidth
inline std::vector<double> rbf_gram(const double* x, int64_t n, int64_t p) {
  std::vector<double> d2(static_cast<size_t>(n) * n, 0.0);
  std::vector<double> med;
  med.reserve(static_cast<size_t>(n * (n - 1) / 2));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      double acc = 0;
      for (int64_t k = 0; k < p; ++k) {
        const double d = x[i * p + k] - x[j * p + k];
        acc += d * d;
      }
      d2[static_cast<size_t>(i * n + j)] = d2[static_cast<size_t>(j * n + i)] = acc;
      med.push_back(std::sqrt(acc));
    }
  std::nth_element(med.begin(), med.begin() + static_cast<int64_t>(med.size()) / 2, med.end());
  const double sigma = med[med.size() / 2];
  if (sigma < 1e-30) throw NumericError("kernel_cka: degenerate pairwise distances");
  std::vector<double> kmat(static_cast<size_t>(n) * n);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int64_t i = 0; i < n * n; ++i) kmat[static_cast<size_t>(i)] = std::exp(-d2[static_cast<size_t>(i)] * inv);
  return kmat;
}

inline void double_center(std::vector<double>& k, int64_t n) {
  std::vector<double> row(static_cast<size_t>(n), 0.0);
  double grand = 0;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) row[static_cast<size_t>(i)] += k[static_cast<size_t>(i * n + j)];
    grand += row[static_cast<size_t>(i)];
    row[static_cast<size_t>(i)] /= static_cast<double>(n);
  }
  grand /= static_cast<double>(n) * static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      k[static_cast<size_t>(i * n + j)] +=
          grand - row[static_cast<size_t>(i)] - row[static_cast<size_t>(j)];
}

}  // namespace detail

// HSIC(K,L)/sqrt(HSIC(K,K) HSIC(L,L)) with RBF kernels, median-distance
// bandwidth chosen per input
inline double kernel_cka(const Tensor<double>& x, const Tensor<double>& y) {
  if (x.rank() != 2 || y.rank() != 2) throw ShapeError("kernel_cka: rank-2 inputs");
  if (x.dim(0) != y.dim(0)) throw ShapeError("kernel_cka: sample counts differ");
  const int64_t n = x.dim(0);
  if (n < 2) throw ConfigError("kernel_cka: need at least two samples");
  auto k = detail::rbf_gram(x.data(), n, x.dim(1));
  auto l = detail::rbf_gram(y.data(), n, y.dim(1));
  detail::double_center(k, n);
  detail::double_center(l, n);
  double kl = 0, kk = 0, ll = 0;
  for (int64_t i = 0; i < n * n; ++i) {
    kl += k[static_cast<size_t>(i)] * l[static_cast<size_t>(i)];
    kk += k[static_cast<size_t>(i)] * k[static_cast<size_t>(i)];
    ll += l[static_cast<size_t>(i)] * l[static_cast<size_t>(i)];
  }
  if (kk < 1e-30 || ll < 1e-30) throw NumericError("kernel_cka: zero HSIC norm");
  return kl / std::sqrt(kk * ll);
}

// 256-bin Otsu over [lo,hi]; split index maximizing between-class variance,
// ties resolved toward the lower threshold
inline double otsu_from_histogram(const std::vector<int64_t>& bins, double lo, double hi) {
  if (bins.size() != 256) throw ConfigError("otsu: expected 256 bins");
  if (!(hi > lo)) throw NumericError("otsu: degenerate histogram");
  int64_t total = 0;
  double mu_total = 0;
  for (size_t i = 0; i < bins.size(); ++i) {
    total += bins[i];
    mu_total += static_cast<double>(bins[i]) * static_cast<double>(i);
  }
  if (total == 0) throw NumericError("otsu: empty histogram");
  double best = -1.0;
  int best_t = 1;
  int64_t w0 = 0;
  double sum0 = 0;
  for (int t = 1; t < 256; ++t) {
    w0 += bins[static_cast<size_t>(t - 1)];
    sum0 += static_cast<double>(bins[static_cast<size_t>(t - 1)]) * static_cast<double>(t - 1);
    const int64_t w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double mu0 = sum0 / static_cast<double>(w0);
    const double mu1 = (mu_total - sum0) / static_cast<double>(w1);
    const double sb = static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) * (mu0 - mu1);
    if (sb > best) {
      best = sb;
      best_t = t;
    }
  }
  if (best < 0) throw NumericError("otsu: degenerate histogram");
  return lo + (hi - lo) * static_cast<double>(best_t) / 256.0;
}

inline double otsu_threshold(const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("otsu: no values");
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) throw NumericError("otsu: degenerate histogram");
  std::vector<int64_t> bins(256, 0);
  const double scale = 256.0 / (hi - lo);
  for (double v : values) {
    int b = static_cast<int>((v - lo) * scale);
    if (b > 255) b = 255;
    ++bins[static_cast<size_t>(b)];
  }
  return otsu_from_histogram(bins, lo, hi);
}

// values >= the map's Otsu threshold keep their magnitude, the rest drop to 0
inline Tensor<double> attention_map_enhance(const Tensor<double>& attn) {
  std::vector<double> vals(attn.data(), attn.data() + attn.numel());
  const double thr = otsu_threshold(vals);
  auto out = Tensor<double>::zeros(attn.shape());
  for (int64_t i = 0; i < attn.numel(); ++i)
    out.data()[i] = attn.data()[i] >= thr ? attn.data()[i] : 0.0;
  return out;
}

struct SummaryStats {
  double mean = 0, median = 0, stddev = 0;
  int64_t count = 0;
};

inline SummaryStats summarize(std::vector<double> v) {
  if (v.empty()) throw ConfigError("summarize: no values");
  SummaryStats s;
  s.count = static_cast<int64_t>(v.size());
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.stddev += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(v.size()));
  std::sort(v.begin(), v.end());
  const size_t m = v.size() / 2;
  s.median = v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  return s;
}

inline uint8_t to_byte(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

// grayscale (H,W) in [0,1]
inline void write_pgm(const std::string& path, const Tensor<double>& img) {
  if (img.rank() != 2) throw ShapeError("write_pgm: expected (H,W)");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("write_pgm: cannot open " + path);
  f << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
  for (int64_t i = 0; i < img.numel(); ++i) f.put(static_cast<char>(to_byte(img.data()[i])));
}

// color (3,H,W) in [0,1]
inline void write_ppm(const std::string& path, const Tensor<double>& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("write_ppm: expected (3,H,W)");
  const int64_t hw = static_cast<int64_t>(img.dim(1)) * img.dim(2);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("write_ppm: cannot open " + path);
  f << "P6\n" << img.dim(2) << " " << img.dim(1) << "\n255\n";
  for (int64_t p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c)
      f.put(static_cast<char>(to_byte(img.data()[c * hw + p])));
}

}  // namespace eit
