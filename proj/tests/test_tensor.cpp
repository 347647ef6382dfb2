#include <catch2/catch_amalgamated.hpp>

#include "eit/rng.hpp"
#include "eit/tensor.hpp"

using eit::Tensor;

TEST_CASE("tensor construction and accessors") {
  auto t = Tensor<double>::zeros({2, 3});
  REQUIRE(t.numel() == 6);
  REQUIRE(t.shape() == eit::Shape{2, 3});
  REQUIRE(t.data()[0] == 0.0);

  auto f = Tensor<float>::full({4}, 2.5f);
  for (int i = 0; i < 4; ++i) REQUIRE(f.data()[i] == 2.5f);

  REQUIRE(Tensor<double>::scalar(7.0).item() == 7.0);
  REQUIRE_THROWS_AS(t.item(), eit::ShapeError);
  REQUIRE_THROWS_AS(Tensor<double>::zeros({2, 0}), eit::ShapeError);
  REQUIRE_THROWS_AS(Tensor<double>::from_data({2, 2}, {1.0, 2.0, 3.0}), eit::ShapeError);
}

TEST_CASE("tensor copies share storage, clone does not") {
  auto a = Tensor<double>::full({3}, 1.0);
  auto b = a;
  b.data()[0] = 9.0;
  REQUIRE(a.data()[0] == 9.0);

  auto c = a.clone_detached();
  c.data()[1] = 5.0;
  REQUIRE(a.data()[1] == 1.0);
}

TEST_CASE("tape guards scalar loss and double backward") {
  eit::Tape<double> tape;
  auto v = Tensor<double>::zeros({2}, true);
  REQUIRE_THROWS_AS(tape.backward(v), eit::ShapeError);

  auto loss = Tensor<double>::scalar(3.0);
  REQUIRE_THROWS_AS(tape.backward(loss), eit::ShapeError);  // untracked

  loss.mark_tracked();
  tape.backward(loss);
  REQUIRE(loss.grad()[0] == 1.0);
  REQUIRE_THROWS_AS(tape.backward(loss), eit::NumericError);
  tape.reset();
  tape.backward(loss);  // fine again after reset
}

TEST_CASE("rng determinism and stream derivation") {
  eit::Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.uniform() == b.uniform());

  eit::Rng c(42);
  double mean = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) mean += c.normal();
  mean /= n;
  REQUIRE(std::abs(mean) < 0.05);

  REQUIRE(eit::Rng::derive(1, 2) != eit::Rng::derive(1, 3));
  REQUIRE(eit::Rng::derive(1, 2) != eit::Rng::derive(2, 2));
  REQUIRE(eit::Rng::derive(1, 2) == eit::Rng::derive(1, 2));

  eit::Rng d(7);
  for (int i = 0; i < 1000; ++i) {
    auto u = d.uniform(0.5, 1.5);
    REQUIRE(u >= 0.5);
    REQUIRE(u < 1.5);
    auto k = d.uniform_int(3);
    REQUIRE(k >= 0);
    REQUIRE(k < 3);
  }
}
