// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "wid/ops.hpp"
#include "wid/tensor.hpp"

using wid::Rng;
using wid::Tensor;

TEST_CASE("factories produce the requested shape and contents") {
  auto z = Tensor<float>::zeros({2, 3});
  REQUIRE(z.shape() == wid::Shape{2, 3});
  REQUIRE(z.numel() == 6);
  for (auto v : z.vec()) REQUIRE(v == 0.0f);

  auto f = Tensor<float>::filled({4}, 2.5f);
  for (auto v : f.vec()) REQUIRE(v == 2.5f);

  auto s = Tensor<float>::scalar(7.0f);
  REQUIRE(s.numel() == 1);
  REQUIRE(s.item() == 7.0f);

  auto t = Tensor<float>::from_vector({2, 2}, {1, 2, 3, 4});
  REQUIRE(t.data()[0] == 1.0f);
  REQUIRE(t.data()[3] == 4.0f);

  auto img = Tensor<float>::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
  REQUIRE(img.at4(0, 0, 1, 0) == 3.0f);
}

TEST_CASE("from_vector rejects mismatched payload") {
  REQUIRE_THROWS_AS(Tensor<float>::from_vector({2, 2}, {1, 2, 3}), wid::DimensionError);
}

TEST_CASE("randn is deterministic for a fixed seed") {
  Rng r1(42), r2(42);
  auto a = Tensor<float>::randn({3, 5}, r1);
  auto b = Tensor<float>::randn({3, 5}, r2);
  REQUIRE(a.vec() == b.vec());

  Rng r3(43);
  auto c = Tensor<float>::randn({3, 5}, r3);
  REQUIRE(a.vec() != c.vec());
}

TEST_CASE("backward on a non-scalar throws") {
  auto x = Tensor<float>::filled({2, 2}, 1.0f, /*requires_grad=*/true);
  auto y = wid::scalar_mul(x, 2.0f);
  REQUIRE_THROWS_AS(y.backward(), wid::DimensionError);
}

TEST_CASE("backward without requires_grad is a no-op") {
  auto x = Tensor<float>::filled({1}, 3.0f);
  auto y = wid::scalar_mul(x, 2.0f);
  REQUIRE_FALSE(y.requires_grad());
  y.backward();  // must not throw or allocate grads
  REQUIRE_FALSE(x.has_grad());
}

TEST_CASE("leaf grads accumulate across backward calls until zeroed") {
  auto x = Tensor<float>::scalar(2.0f, /*requires_grad=*/true);
  for (int pass = 1; pass <= 3; ++pass) {
    auto y = wid::scalar_mul(x, 5.0f);
    y.backward();
    REQUIRE(x.grad_vec()[0] == Catch::Approx(5.0f * pass));
  }
  x.zero_grad();
  auto y = wid::scalar_mul(x, 5.0f);
  y.backward();
  REQUIRE(x.grad_vec()[0] == Catch::Approx(5.0f));
}

TEST_CASE("interior grads are reset per backward") {
  auto x = Tensor<float>::scalar(2.0f, /*requires_grad=*/true);
  auto mid = wid::scalar_mul(x, 3.0f);
  auto y = wid::scalar_mul(mid, 4.0f);
  y.backward();
  y.backward();
  // d y/d mid = 4 each pass; interior grad must not carry over.
  REQUIRE(mid.grad_vec()[0] == Catch::Approx(4.0f));
  REQUIRE(x.grad_vec()[0] == Catch::Approx(24.0f));  // leaf: 12 + 12
}

TEST_CASE("diamond-shaped graphs accumulate both paths") {
  auto x = Tensor<float>::scalar(3.0f, /*requires_grad=*/true);
  auto a = wid::scalar_mul(x, 2.0f);
  auto b = wid::scalar_mul(x, 5.0f);
  auto y = wid::add(a, b);
  y.backward();
  REQUIRE(x.grad_vec()[0] == Catch::Approx(7.0f));
}

TEST_CASE("NoGradGuard detaches outputs from the tape") {
  auto x = Tensor<float>::scalar(2.0f, /*requires_grad=*/true);
  {
    wid::NoGradGuard g;
    auto y = wid::scalar_mul(x, 3.0f);
    REQUIRE_FALSE(y.requires_grad());
  }
  auto y = wid::scalar_mul(x, 3.0f);
  REQUIRE(y.requires_grad());
}

TEST_CASE("Rng uniform stays in [0,1) and shuffle permutes") {
  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto orig = v;
  r.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  REQUIRE(sorted == orig);
}

TEST_CASE("Rng state round-trips through its string form") {
  Rng a(99);
  for (int i = 0; i < 17; ++i) a.normal();
  const std::string s = a.state_string();
  Rng b(0);
  b.set_state_string(s);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("mix64 separates nearby keys") {
  REQUIRE(wid::mix64(1, 2, 3) != wid::mix64(1, 2, 4));
  REQUIRE(wid::mix64(1, 2, 3) != wid::mix64(1, 3, 2));
  REQUIRE(wid::mix64(0) != wid::mix64(1));
}
