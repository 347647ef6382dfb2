#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "eit/conv.hpp"
#include "eit/gradcheck.hpp"
#include "eit/ops.hpp"
#include "eit/rng.hpp"
#include "eit/tensor.hpp"

using eit::Rng;
using eit::Tensor;
using D = Tensor<double>;

namespace {

D rnd(eit::Shape s, Rng& rng, bool rg = true) {
  D t(std::move(s));
  eit::fill_smooth(t, rng);
  t.set_requires_grad(rg);
  return t;
}

// direct 7-loop convolution, independent of the library kernels
std::vector<double> conv_ref(const D& x, const D& w, const double* bias, int stride, int pad,
                             int& Ho, int& Wo) {
  const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  Ho = (H + 2 * pad - kh) / stride + 1;
  Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> y(static_cast<size_t>(B) * Co * Ho * Wo, 0.0);
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Co; ++co)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          double acc = bias ? bias[co] : 0.0;
          for (int ci = 0; ci < Ci; ++ci)
            for (int dh = 0; dh < kh; ++dh)
              for (int dw = 0; dw < kw; ++dw) {
                const int ih = oh * stride + dh - pad, iw = ow * stride + dw - pad;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x.data()[((b * Ci + ci) * H + ih) * W + iw] *
                       w.data()[((co * Ci + ci) * kh + dh) * kw + dw];
              }
          y[static_cast<size_t>(((b * Co + co) * Ho + oh) * Wo + ow)] = acc;
        }
  return y;
}

double check(const std::function<D(std::vector<D>&)>& f, std::vector<D> inputs) {
  auto rep = eit::grad_check<double>(f, std::move(inputs));
  INFO(rep.worst);
  return rep.max_rel_err;
}

}  // namespace

TEST_CASE("matmul forward matches hand computation") {
  auto a = D::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = D::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
  auto c = eit::matmul(a, b);
  REQUIRE(c.shape() == eit::Shape{2, 2});
  REQUIRE(c.data()[0] == Catch::Approx(58));
  REQUIRE(c.data()[1] == Catch::Approx(64));
  REQUIRE(c.data()[2] == Catch::Approx(139));
  REQUIRE(c.data()[3] == Catch::Approx(154));
}

TEST_CASE("conv2d forward matches direct convolution") {
  Rng rng(11);
  for (auto [stride, pad] : std::vector<std::pair<int, int>>{{1, 1}, {2, 0}, {2, 1}, {1, 0}}) {
    auto x = rnd({2, 3, 5, 6}, rng, false);
    auto w = rnd({4, 3, 3, 3}, rng, false);
    auto b = rnd({4}, rng, false);
    int Ho, Wo;
    auto ref = conv_ref(x, w, b.data(), stride, pad, Ho, Wo);
    auto y = eit::conv2d(x, w, &b, stride, pad);
    REQUIRE(y.dim(2) == Ho);
    REQUIRE(y.dim(3) == Wo);
    for (int64_t i = 0; i < y.numel(); ++i)
      REQUIRE(y.data()[i] == Catch::Approx(ref[static_cast<size_t>(i)]).margin(1e-12));
  }
}

TEST_CASE("depthwise forward equals grouped direct conv") {
  Rng rng(12);
  auto x = rnd({2, 3, 5, 5}, rng, false);
  auto w = rnd({3, 3, 3}, rng, false);
  auto y = eit::depthwise_conv2d<double>(x, w, nullptr, 1);
  // channel c of the output only sees channel c of the input
  for (int c = 0; c < 3; ++c) {
    D xc({1, 1, 5, 5});
    std::copy(x.data() + c * 25, x.data() + (c + 1) * 25, xc.data());
    D wc = D::from_data({1, 1, 3, 3},
                        std::vector<double>(w.data() + c * 9, w.data() + (c + 1) * 9));
    int Ho, Wo;
    auto ref = conv_ref(xc, wc, nullptr, 1, 1, Ho, Wo);
    for (int i = 0; i < 25; ++i)
      REQUIRE(y.data()[c * 25 + i] == Catch::Approx(ref[static_cast<size_t>(i)]).margin(1e-12));
  }
}

TEST_CASE("maxpool2d ceil-mode shape and values") {
  auto x = D::from_data({1, 1, 3, 5}, {1,  2,  3,  4,  5,   //
                                       6,  7,  8,  9,  10,  //
                                       11, 12, 13, 14, 15});
  auto y = eit::maxpool2d(x);
  REQUIRE(y.shape() == eit::Shape{1, 1, 2, 3});
  std::vector<double> want{7, 9, 10, 12, 14, 15};
  for (int i = 0; i < 6; ++i) REQUIRE(y.data()[i] == want[static_cast<size_t>(i)]);
}

TEST_CASE("softmax rows are stochastic") {
  Rng rng(13);
  auto x = rnd({4, 7}, rng, false);
  auto y = eit::softmax_lastdim(x);
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int i = 0; i < 7; ++i) {
      REQUIRE(y.data()[r * 7 + i] > 0);
      s += y.data()[r * 7 + i];
    }
    REQUIRE(s == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("finite check trips on overflow") {
  auto x = D::full({2}, 1e308);
  REQUIRE_THROWS_AS(eit::scale(x, 1e10), eit::NumericError);
  eit::FiniteCheck::enabled() = false;
  REQUIRE_NOTHROW(eit::scale(x, 1e10));
  eit::FiniteCheck::enabled() = true;
}

TEST_CASE("shared input accumulates gradient") {
  eit::Tape<double> tape;
  auto x = D::from_data({3}, {1, 2, 3}, true);
  auto y = eit::sum(eit::add(x, x));
  tape.backward(y);
  for (int i = 0; i < 3; ++i) REQUIRE(x.grad()[i] == 2.0);
}

TEST_CASE("gradients: elementwise and shape ops") {
  Rng rng(1);
  REQUIRE(check([](std::vector<D>& in) { return eit::sum(eit::relu(in[0])); },
                {rnd({3, 4}, rng)}) < 1e-6);
  REQUIRE(check([](std::vector<D>& in) { return eit::mean(eit::sigmoid(in[0])); },
                {rnd({3, 4}, rng)}) < 1e-6);
  REQUIRE(check([](std::vector<D>& in) { return eit::mean(eit::gelu(in[0])); },
                {rnd({3, 4}, rng)}) < 1e-6);
  REQUIRE(check([](std::vector<D>& in) { return eit::sum(eit::mul(in[0], in[1])); },
                {rnd({2, 3}, rng), rnd({2, 3}, rng)}) < 1e-6);
  REQUIRE(check([](std::vector<D>& in) { return eit::sum(eit::sub(in[0], in[1])); },
                {rnd({2, 3}, rng), rnd({2, 3}, rng)}) < 1e-6);
  REQUIRE(check([](std::vector<D>& in) { return eit::mean(eit::scale(in[0], 2.5)); },
                {rnd({5}, rng)}) < 1e-6);
  REQUIRE(check([](std::vector<D>& in) { return eit::sum(eit::add_param(in[0], in[1])); },
                {rnd({2, 3, 4}, rng), rnd({3, 4}, rng)}) < 1e-6);
  REQUIRE(check([](std::vector<D>& in) { return eit::mean(eit::reshape(in[0], {6, 2})); },
                {rnd({3, 4}, rng)}) < 1e-6);
  REQUIRE(check([](std::vector<D>& in) { return eit::mean(eit::transpose_last2(in[0])); },
                {rnd({2, 3, 4}, rng)}) < 1e-6);
  REQUIRE(check(
              [](std::vector<D>& in) {
                return eit::mean(eit::mul(eit::concat({in[0], in[1]}, 1),
                                          eit::concat({in[1], in[0]}, 1)));
              },
              {rnd({2, 3, 2}, rng), rnd({2, 3, 2}, rng)}) < 1e-6);
}

TEST_CASE("gradients: matmul family") {
  Rng rng(2);
  REQUIRE(check([](std::vector<D>& in) { return eit::mean(eit::matmul(in[0], in[1])); },
                {rnd({3, 4}, rng), rnd({4, 2}, rng)}) < 1e-6);
  REQUIRE(check([](std::vector<D>& in) { return eit::mean(eit::bmm(in[0], in[1])); },
                {rnd({2, 3, 4}, rng), rnd({2, 4, 2}, rng)}) < 1e-6);
  // rank-2 broadcast on either side
  REQUIRE(check([](std::vector<D>& in) { return eit::mean(eit::bmm(in[0], in[1])); },
                {rnd({3, 4}, rng), rnd({2, 4, 2}, rng)}) < 1e-6);
  REQUIRE(check([](std::vector<D>& in) { return eit::mean(eit::bmm(in[0], in[1])); },
                {rnd({2, 3, 4}, rng), rnd({4, 2}, rng)}) < 1e-6);
  REQUIRE(check([](std::vector<D>& in) { return eit::mean(eit::linear(in[0], in[1], &in[2])); },
                {rnd({2, 3, 4}, rng), rnd({5, 4}, rng), rnd({5}, rng)}) < 1e-6);
  REQUIRE(check([](std::vector<D>& in) { return eit::mean(eit::linear(in[0], in[1])); },
                {rnd({3, 4}, rng), rnd({5, 4}, rng)}) < 1e-6);
}

TEST_CASE("gradients: softmax, layernorm, losses") {
  Rng rng(3);
  REQUIRE(check(
              [](std::vector<D>& in) {
                return eit::mean(eit::mul(eit::softmax_lastdim(in[0]), in[1]));
              },
              {rnd({3, 5}, rng), rnd({3, 5}, rng, false)}) < 1e-6);
  REQUIRE(check(
              [](std::vector<D>& in) {
                return eit::mean(eit::layernorm(in[0], in[1], in[2]));
              },
              {rnd({3, 6}, rng), rnd({6}, rng), rnd({6}, rng)}) < 1e-5);
  // weight the normalized output so dX isn't the trivial zero field
  REQUIRE(check(
              [](std::vector<D>& in) {
                return eit::mean(eit::mul(eit::layernorm(in[0], in[1], in[2]), in[3]));
              },
              {rnd({2, 3, 6}, rng), rnd({6}, rng), rnd({6}, rng), rnd({2, 3, 6}, rng, false)}) <
          1e-5);
  std::vector<int> labels{1, 0, 2};
  REQUIRE(check(
              [labels](std::vector<D>& in) { return eit::cross_entropy(in[0], labels); },
              {rnd({3, 3}, rng)}) < 1e-6);
  REQUIRE(check([](std::vector<D>& in) { return eit::l1_loss(in[0], in[1]); },
                {rnd({2, 4}, rng), rnd({2, 4}, rng)}) < 1e-6);
}

TEST_CASE("gradients: conv and pooling") {
  Rng rng(4);
  REQUIRE(check(
              [](std::vector<D>& in) {
                return eit::mean(eit::conv2d(in[0], in[1], &in[2], 1, 1));
              },
              {rnd({2, 2, 4, 5}, rng), rnd({3, 2, 3, 3}, rng), rnd({3}, rng)}) < 1e-5);
  REQUIRE(check(
              [](std::vector<D>& in) {
                return eit::mean(eit::conv2d<double>(in[0], in[1], nullptr, 2, 0));
              },
              {rnd({1, 2, 6, 6}, rng), rnd({3, 2, 2, 2}, rng)}) < 1e-5);
  REQUIRE(check(
              [](std::vector<D>& in) {
                return eit::mean(eit::depthwise_conv2d(in[0], in[1], &in[2], 1));
              },
              {rnd({2, 3, 4, 4}, rng), rnd({3, 3, 3}, rng), rnd({3}, rng)}) < 1e-5);
  REQUIRE(check([](std::vector<D>& in) { return eit::mean(eit::maxpool2d(in[0])); },
                {rnd({2, 2, 5, 5}, rng)}) < 1e-5);
  REQUIRE(check([](std::vector<D>& in) { return eit::mean(eit::avgpool_spatial(in[0])); },
                {rnd({2, 3, 4, 4}, rng)}) < 1e-6);
  REQUIRE(check(
              [](std::vector<D>& in) {
                return eit::mean(eit::mul(eit::upsample_nearest2x(in[0]), in[1]));
              },
              {rnd({1, 2, 3, 3}, rng), rnd({1, 2, 6, 6}, rng, false)}) < 1e-6);
  REQUIRE(check(
              [](std::vector<D>& in) {
                return eit::mean(eit::mul(eit::resize_nearest(in[0], 5, 7), in[1]));
              },
              {rnd({1, 2, 3, 4}, rng), rnd({1, 2, 5, 7}, rng, false)}) < 1e-6);
}

TEST_CASE("gradients: layout bridges") {
  Rng rng(5);
  REQUIRE(check(
              [](std::vector<D>& in) {
                return eit::mean(eit::mul(eit::to_tokens(in[0]), in[1]));
              },
              {rnd({2, 3, 2, 2}, rng), rnd({2, 4, 3}, rng, false)}) < 1e-6);
  REQUIRE(check(
              [](std::vector<D>& in) {
                return eit::mean(eit::mul(eit::from_tokens(in[0], 2, 2), in[1]));
              },
              {rnd({2, 4, 3}, rng), rnd({2, 3, 2, 2}, rng, false)}) < 1e-6);
  REQUIRE(check(
              [](std::vector<D>& in) {
                return eit::mean(eit::mul(eit::split_heads(in[0], 2), in[1]));
              },
              {rnd({2, 3, 4}, rng), rnd({4, 3, 2}, rng, false)}) < 1e-6);
  REQUIRE(check(
              [](std::vector<D>& in) {
                return eit::mean(eit::mul(eit::merge_heads(in[0], 2), in[1]));
              },
              {rnd({4, 3, 2}, rng), rnd({2, 3, 4}, rng, false)}) < 1e-6);
}

TEST_CASE("round trips: tokens and heads invert") {
  Rng rng(6);
  auto x = rnd({2, 3, 4, 4}, rng, false);
  auto back = eit::from_tokens(eit::to_tokens(x), 4, 4);
  for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(back.data()[i] == x.data()[i]);
  auto t = rnd({2, 5, 6}, rng, false);
  auto again = eit::merge_heads(eit::split_heads(t, 3), 3);
  for (int64_t i = 0; i < t.numel(); ++i) REQUIRE(again.data()[i] == t.data()[i]);
}
