#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "eit/analysis.hpp"
#include "eit/rng.hpp"

using namespace eit;

namespace {

// power iteration with deflation: an eigensolver that shares no code with the
// Jacobi routine under test
void power_eigen(std::vector<double> a, int n, std::vector<double>& evals,
                 std::vector<double>& evecs) {
  Rng rng(99);
  evals.assign(static_cast<size_t>(n), 0.0);
  evecs.assign(static_cast<size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.normal();
    for (int it = 0; it < 5000; ++it) {
      std::vector<double> w(static_cast<size_t>(n), 0.0);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) w[static_cast<size_t>(r)] += a[static_cast<size_t>(r) * n + c] * v[static_cast<size_t>(c)];
      double norm = 0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-300) break;
      for (int r = 0; r < n; ++r) v[static_cast<size_t>(r)] = w[static_cast<size_t>(r)] / norm;
    }
    double lam = 0;
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) lam += v[static_cast<size_t>(r)] * a[static_cast<size_t>(r) * n + c] * v[static_cast<size_t>(c)];
    evals[static_cast<size_t>(j)] = lam;
    for (int r = 0; r < n; ++r) evecs[static_cast<size_t>(r) * n + j] = v[static_cast<size_t>(r)];
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) a[static_cast<size_t>(r) * n + c] -= lam * v[static_cast<size_t>(r)] * v[static_cast<size_t>(c)];
  }
}

Tensor<double> random_fmap(int c, int h, int w, uint64_t seed) {
  Rng rng(seed);
  Tensor<double> f({c, h, w});
  for (int64_t i = 0; i < f.numel(); ++i) f.data()[i] = rng.normal();
  return f;
}

Tensor<double> random_mat(int n, int p, uint64_t seed) {
  Rng rng(seed);
  Tensor<double> m({n, p});
  for (int64_t i = 0; i < m.numel(); ++i) m.data()[i] = rng.normal();
  return m;
}

// naive HSIC through explicit centering matrix products, nothing shared with
// the library path
double naive_hsic(const std::vector<double>& k, const std::vector<double>& l, int n) {
  std::vector<double> h(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      h[static_cast<size_t>(i) * n + j] = (i == j ? 1.0 : 0.0) - 1.0 / n;
  auto mm = [n](const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> r(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < n; ++t) {
        const double av = a[static_cast<size_t>(i) * n + t];
        for (int j = 0; j < n; ++j) r[static_cast<size_t>(i) * n + j] += av * b[static_cast<size_t>(t) * n + j];
      }
    return r;
  };
  auto khk = mm(mm(h, k), h);
  auto lhl = mm(mm(h, l), h);
  double tr = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) tr += khk[static_cast<size_t>(i) * n + j] * lhl[static_cast<size_t>(j) * n + i];
  return tr / ((n - 1.0) * (n - 1.0));
}

std::vector<double> rbf_from(const Tensor<double>& x) {
  const int n = x.dim(0), p = x.dim(1);
  std::vector<double> dist;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double d2 = 0;
      for (int a = 0; a < p; ++a) {
        const double d = x.data()[i * p + a] - x.data()[j * p + a];
        d2 += d * d;
      }
      dist.push_back(std::sqrt(d2));
    }
  std::sort(dist.begin(), dist.end());
  const double sigma = dist[dist.size() / 2];
  std::vector<double> k(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double d2 = 0;
      for (int a = 0; a < p; ++a) {
        const double d = x.data()[i * p + a] - x.data()[j * p + a];
        d2 += d * d;
      }
      k[static_cast<size_t>(i) * n + j] = std::exp(-d2 / (2.0 * sigma * sigma));
    }
  return k;
}

// exhaustive scan over every split index, straight from the definition
double brute_otsu(const std::vector<double>& values) {
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<int> bin(values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    int b = static_cast<int>((values[i] - lo) / (hi - lo) * 256.0);
    bin[i] = b > 255 ? 255 : b;
  }
  double best = -1;
  int best_t = 1;
  for (int t = 1; t < 256; ++t) {
    int64_t n0 = 0, n1 = 0;
    double s0 = 0, s1 = 0;
    for (size_t i = 0; i < values.size(); ++i) {
      if (bin[i] < t) {
        ++n0;
        s0 += bin[i];
      } else {
        ++n1;
        s1 += bin[i];
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    const double mu0 = s0 / n0, mu1 = s1 / n1;
    const double sb = static_cast<double>(n0) * static_cast<double>(n1) * (mu0 - mu1) * (mu0 - mu1);
    if (sb > best) {
      best = sb;
      best_t = t;
    }
  }
  return lo + (hi - lo) * best_t / 256.0;
}

}  // namespace

TEST_CASE("pca matches an independent eigensolver on C=8") {
  auto f = random_fmap(8, 6, 7, 11);
  auto r = pca_project(f, 8);

  // rebuild the covariance directly
  const int C = 8;
  const int64_t N = 6 * 7;
  std::vector<double> mean(C, 0.0), cov(C * C, 0.0);
  for (int c = 0; c < C; ++c) {
    for (int64_t p = 0; p < N; ++p) mean[c] += f.data()[c * N + p];
    mean[c] /= N;
  }
  for (int a = 0; a < C; ++a)
    for (int b = 0; b < C; ++b) {
      double acc = 0;
      for (int64_t p = 0; p < N; ++p)
        acc += (f.data()[a * N + p] - mean[a]) * (f.data()[b * N + p] - mean[b]);
      cov[a * C + b] = acc / (N - 1);
    }
  std::vector<double> evals, evecs;
  power_eigen(cov, C, evals, evecs);
  std::sort(evals.rbegin(), evals.rend());
  double total = 0;
  for (double e : evals) total += e;

  for (int j = 0; j < C; ++j) {
    CHECK(std::abs(r.eigenvalues[j] - evals[j]) < 1e-6);
    CHECK(std::abs(r.explained[j] - evals[j] / total) < 1e-6);
  }

  // components pairwise orthonormal
  for (int a = 0; a < C; ++a)
    for (int b = 0; b < C; ++b) {
      double dot = 0;
      for (int c = 0; c < C; ++c) dot += r.components.data()[a * C + c] * r.components.data()[b * C + c];
      CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-6);
    }
}

TEST_CASE("pca on a rank-1 map concentrates variance in one component") {
  Rng rng(5);
  const int C = 4, H = 5, W = 5;
  std::vector<double> coeff{1.5, -0.7, 0.3, 2.1}, pattern(H * W);
  for (auto& p : pattern) p = rng.normal();
  Tensor<double> f({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < H * W; ++p) f.data()[c * H * W + p] = coeff[c] * pattern[p];
  auto r = pca_project(f, 2);
  CHECK(r.explained[0] >= 0.999);
  CHECK(r.images.shape() == Shape{2, H, W});
  double lo = 1e300, hi = -1e300;
  for (int p = 0; p < H * W; ++p) {
    lo = std::min(lo, r.images.data()[p]);
    hi = std::max(hi, r.images.data()[p]);
  }
  CHECK(lo == 0.0);
  CHECK(hi == 1.0);
}

TEST_CASE("pca is invariant to per-channel constant shifts") {
  auto f = random_fmap(6, 4, 4, 21);
  auto g = f.clone_detached();
  std::vector<double> shift{3.0, -1.0, 0.5, 10.0, -4.0, 0.01};
  for (int c = 0; c < 6; ++c)
    for (int p = 0; p < 16; ++p) g.data()[c * 16 + p] += shift[c];
  auto ra = pca_project(f, 3), rb = pca_project(g, 3);
  for (int64_t i = 0; i < ra.images.numel(); ++i)
    CHECK(std::abs(ra.images.data()[i] - rb.images.data()[i]) < 1e-9);
}

TEST_CASE("pca rejects k out of range") {
  auto f = random_fmap(4, 3, 3, 1);
  CHECK_THROWS_AS(pca_project(f, 5), ConfigError);
  CHECK_THROWS_AS(pca_project(f, 0), ConfigError);
}

TEST_CASE("linear cka basics") {
  auto x = random_mat(40, 8, 3);
  CHECK(std::abs(linear_cka(x, x) - 1.0) < 1e-12);

  // invariance to orthogonal transform and scaling of one side
  Tensor<double> q({8, 8});
  {
    auto raw = random_mat(8, 8, 17);
    // Gram-Schmidt
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < i; ++j) {
        double dot = 0;
        for (int c = 0; c < 8; ++c) dot += raw.data()[i * 8 + c] * q.data()[j * 8 + c];
        for (int c = 0; c < 8; ++c) raw.data()[i * 8 + c] -= dot * q.data()[j * 8 + c];
      }
      double norm = 0;
      for (int c = 0; c < 8; ++c) norm += raw.data()[i * 8 + c] * raw.data()[i * 8 + c];
      norm = std::sqrt(norm);
      for (int c = 0; c < 8; ++c) q.data()[i * 8 + c] = raw.data()[i * 8 + c] / norm;
    }
  }
  auto y = random_mat(40, 8, 4);
  Tensor<double> yq({40, 8});
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0;
      for (int c = 0; c < 8; ++c) acc += y.data()[i * 8 + c] * q.data()[c * 8 + j];
      yq.data()[i * 8 + j] = 2.7 * acc;
    }
  CHECK(std::abs(linear_cka(x, y) - linear_cka(x, yq)) < 1e-6);

  // independent random features score low
  auto a = random_mat(200, 16, 100);
  auto b = random_mat(200, 16, 200);
  const double c = linear_cka(a, b);
  CHECK(c >= -1e-9);
  CHECK(c < 0.3);

  CHECK_THROWS_AS(linear_cka(random_mat(1, 4, 0), random_mat(1, 4, 1)), ConfigError);
  auto z = Tensor<double>::zeros({10, 4});
  CHECK_THROWS_AS(linear_cka(z, random_mat(10, 4, 2)), NumericError);
}

TEST_CASE("kernel cka agrees with a naive hsic oracle") {
  const int n = 20;
  auto x = random_mat(n, 5, 31);
  auto y = random_mat(n, 7, 32);
  const double lib = kernel_cka(x, y);

  auto k = rbf_from(x), l = rbf_from(y);
  const double hxy = naive_hsic(k, l, n);
  const double hxx = naive_hsic(k, k, n);
  const double hyy = naive_hsic(l, l, n);
  const double ref = hxy / std::sqrt(hxx * hyy);
  CHECK(std::abs(lib - ref) < 1e-8);

  CHECK(std::abs(kernel_cka(x, x) - 1.0) < 1e-9);
  CHECK(std::abs(kernel_cka(x, y) - kernel_cka(y, x)) < 1e-9);
  CHECK(lib >= -1e-9);
  CHECK(lib <= 1.0 + 1e-9);
}

TEST_CASE("otsu matches brute force on gaussian mixtures") {
  for (uint64_t trial = 0; trial < 50; ++trial) {
    Rng rng(Rng::derive(1000, trial));
    const double m0 = rng.uniform(-2.0, 0.0), m1 = rng.uniform(1.0, 4.0);
    const double s0 = rng.uniform(0.05, 0.4), s1 = rng.uniform(0.05, 0.4);
    std::vector<double> vals;
    for (int i = 0; i < 300; ++i) vals.push_back(m0 + s0 * rng.normal());
    for (int i = 0; i < 200; ++i) vals.push_back(m1 + s1 * rng.normal());
    CHECK(otsu_threshold(vals) == brute_otsu(vals));
  }
}

TEST_CASE("otsu separates a two-level map and rejects constants") {
  std::vector<double> vals;
  for (int i = 0; i < 60; ++i) vals.push_back(0.0);
  for (int i = 0; i < 40; ++i) vals.push_back(1.0);
  const double t = otsu_threshold(vals);
  CHECK(t > 0.0);
  CHECK(t < 1.0);
  CHECK_THROWS_AS(otsu_threshold(std::vector<double>(32, 0.7)), NumericError);
  CHECK_THROWS_WITH(otsu_threshold(std::vector<double>(32, 0.7)),
                    Catch::Matchers::ContainsSubstring("degenerate histogram"));
}

TEST_CASE("attention enhancement zeroes the low mode and keeps magnitudes") {
  Rng rng(77);
  Tensor<double> m({4, 8});
  for (int64_t i = 0; i < m.numel(); ++i)
    m.data()[i] = (i % 3 == 0) ? rng.uniform(0.8, 1.0) : rng.uniform(0.0, 0.1);
  auto e = attention_map_enhance(m);
  int kept = 0;
  for (int64_t i = 0; i < m.numel(); ++i) {
    const bool high = m.data()[i] >= 0.8;
    if (high) {
      CHECK(e.data()[i] == m.data()[i]);
      ++kept;
    } else {
      CHECK(e.data()[i] == 0.0);
    }
  }
  CHECK(kept > 0);

  // once the surviving values all sit above the enhanced map's own threshold,
  // a second pass changes nothing
  const double t2 = otsu_threshold(std::vector<double>(e.data(), e.data() + e.numel()));
  bool survivors_above = true;
  for (int64_t i = 0; i < e.numel(); ++i)
    if (e.data()[i] != 0.0 && e.data()[i] < t2) survivors_above = false;
  REQUIRE(survivors_above);
  auto ee = attention_map_enhance(e);
  for (int64_t i = 0; i < e.numel(); ++i) CHECK(ee.data()[i] == e.data()[i]);

  CHECK_THROWS_AS(attention_map_enhance(Tensor<double>::full({3, 3}, 0.5)), NumericError);
}

TEST_CASE("summarize computes mean median std") {
  auto s = summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(s.median == 2.5);
  CHECK(std::abs(s.stddev - std::sqrt(1.25)) < 1e-12);
  CHECK(summarize({5.0, 1.0, 9.0}).median == 5.0);
  CHECK_THROWS_AS(summarize({}), ConfigError);
}

TEST_CASE("image writers emit valid headers and payload") {
  Tensor<double> gray({2, 3});
  for (int64_t i = 0; i < 6; ++i) gray.data()[i] = i / 5.0;
  const std::string pgm = "/tmp/eit_test.pgm";
  write_pgm(pgm, gray);
  std::ifstream f(pgm, std::ios::binary);
  std::string magic, dims;
  std::getline(f, magic);
  std::getline(f, dims);
  std::string maxv;
  std::getline(f, maxv);
  CHECK(magic == "P5");
  CHECK(dims == "3 2");
  CHECK(maxv == "255");
  std::vector<char> px(6);
  f.read(px.data(), 6);
  CHECK(static_cast<uint8_t>(px[0]) == 0);
  CHECK(static_cast<uint8_t>(px[5]) == 255);
  std::remove(pgm.c_str());

  Tensor<double> color({3, 2, 2});
  for (int64_t i = 0; i < 12; ++i) color.data()[i] = (i < 4) ? 1.0 : 0.0;
  const std::string ppm = "/tmp/eit_test.ppm";
  write_ppm(ppm, color);
  std::ifstream g(ppm, std::ios::binary);
  std::getline(g, magic);
  std::getline(g, dims);
  std::getline(g, maxv);
  CHECK(magic == "P6");
  CHECK(dims == "2 2");
  std::vector<char> rgb(12);
  g.read(rgb.data(), 12);
  // first pixel: red channel saturated, rest zero
  CHECK(static_cast<uint8_t>(rgb[0]) == 255);
  CHECK(static_cast<uint8_t>(rgb[1]) == 0);
  CHECK(static_cast<uint8_t>(rgb[2]) == 0);
  std::remove(ppm.c_str());
}
