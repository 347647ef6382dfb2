#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "eit/acp.hpp"
#include "eit/gradcheck.hpp"

using eit::Acp;
using eit::AcpConfig;
using eit::Rng;
using eit::Tensor;
using D = Tensor<double>;

namespace {

D rand_input(int b, int c, int h, int w, Rng& rng) {
  D x({b, c, h, w});
  eit::fill_smooth(x, rng);
  return x;
}

// independent oracle: the sum of 1x1 projections must equal one 1x1 conv over
// the channel-stacked [input, level features] with block-stacked weights and
// summed biases
double equivalence_gap(int C, int H, int W, int n_lpu, uint64_t seed) {
  Rng rng(seed);
  Acp<double> acp(AcpConfig{C, n_lpu}, rng);
  auto x0 = rand_input(2, C, H, W, rng);
  std::vector<D> pre;
  auto out = acp.forward(x0, &pre);
  REQUIRE(static_cast<int>(pre.size()) == n_lpu);

  std::vector<D> stack{x0};
  stack.insert(stack.end(), pre.begin(), pre.end());
  auto cat = eit::concat(stack, 1);

  D wstk({C, C * (n_lpu + 1), 1, 1});
  D bsum({C});
  for (int co = 0; co < C; ++co) {
    for (int ci = 0; ci < C; ++ci)
      wstk.data()[co * C * (n_lpu + 1) + ci] = acp.f0.w.data()[co * C + ci];
    bsum.data()[co] = acp.f0.b.data()[co];
    for (int lv = 0; lv < n_lpu; ++lv) {
      const auto& p = acp.proj[static_cast<size_t>(lv)];
      for (int ci = 0; ci < C; ++ci)
        wstk.data()[co * C * (n_lpu + 1) + (lv + 1) * C + ci] = p.w.data()[co * C + ci];
      bsum.data()[co] += p.b.data()[co];
    }
  }
  auto fused = eit::conv2d(cat, wstk, &bsum, 1, 0);

  double gap = 0;
  for (int64_t i = 0; i < out.numel(); ++i)
    gap = std::max(gap, std::abs(out.data()[i] - fused.data()[i]));
  return gap;
}

}  // namespace

TEST_CASE("acp output keeps the input plane and channel count") {
  Rng rng(3);
  Acp<double> acp(AcpConfig{4, 2}, rng);
  auto x = rand_input(2, 4, 8, 8, rng);
  std::vector<D> pre;
  auto y = acp.forward(x, &pre);
  REQUIRE(y.shape() == eit::Shape{2, 4, 8, 8});
  for (const auto& f : pre) REQUIRE(f.shape() == eit::Shape{2, 4, 8, 8});
}

TEST_CASE("acp handles non power-of-two planes") {
  Rng rng(4);
  Acp<double> acp(AcpConfig{3, 2}, rng);
  auto x = rand_input(1, 3, 6, 7, rng);
  auto y = acp.forward(x);
  REQUIRE(y.shape() == eit::Shape{1, 3, 6, 7});
}

TEST_CASE("acp depth bound follows log2 of the short side") {
  REQUIRE(eit::acp_max_levels(32, 32) == 5);
  REQUIRE(eit::acp_max_levels(16, 32) == 4);
  Rng rng(5);
  auto x = rand_input(1, 2, 32, 32, rng);
  Acp<double> ok(AcpConfig{2, 5}, rng);
  REQUIRE_NOTHROW(ok.forward(x));
  Acp<double> deep(AcpConfig{2, 6}, rng);
  REQUIRE_THROWS_AS(deep.forward(x), eit::ConfigError);
  REQUIRE_THROWS_AS(Acp<double>(AcpConfig{0, 1}, rng), eit::ConfigError);
}

TEST_CASE("aggregation equals one fused 1x1 conv over stacked features") {
  for (int n = 1; n <= 3; ++n) {
    REQUIRE(equivalence_gap(4, 8, 8, n, 100 + static_cast<uint64_t>(n)) < 1e-6);
    REQUIRE(equivalence_gap(8, 16, 16, n, 200 + static_cast<uint64_t>(n)) < 1e-6);
  }
}

TEST_CASE("receptive field: depth zero sees one pixel, full depth sees all") {
  auto r0 = eit::receptive_field_probe<double>(0, 16, 16);
  REQUIRE(r0.active_pixels == 1);
  auto r4 = eit::receptive_field_probe<double>(4, 16, 16);
  REQUIRE(r4.active_pixels == 256);
  REQUIRE(r4.fraction == 1.0);
  // one level covers a local blob; another level compounds the spread
  auto r1 = eit::receptive_field_probe<double>(1, 16, 16);
  auto r2 = eit::receptive_field_probe<double>(2, 16, 16);
  REQUIRE(r1.active_pixels > 1);
  REQUIRE(r1.active_pixels < 256);
  REQUIRE(r2.active_pixels > r1.active_pixels);
}

TEST_CASE("acp init is reproducible") {
  Rng a(9), b(9);
  Acp<double> m1(AcpConfig{4, 2}, a), m2(AcpConfig{4, 2}, b);
  Rng rx(10);
  auto x = rand_input(1, 4, 8, 8, rx);
  auto y1 = m1.forward(x), y2 = m2.forward(x);
  for (int64_t i = 0; i < y1.numel(); ++i) REQUIRE(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("acp gradients check against finite differences") {
  Rng rng(21);
  Acp<double> acp(AcpConfig{2, 2}, rng);
  auto x = rand_input(1, 2, 4, 4, rng);
  x.set_requires_grad(true);
  std::vector<D> inputs{x};
  eit::NamedParams<double> ps;
  acp.params(ps, "acp");
  for (auto& [n, t] : ps) inputs.push_back(t);
  auto rep = eit::grad_check<double>(
      [&acp](std::vector<D>& in) { return eit::mean(acp.forward(in[0])); }, inputs);
  INFO(rep.worst);
  REQUIRE(rep.max_rel_err < 1e-4);
}
