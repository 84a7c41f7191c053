// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference validation of every differentiable op, in double
// precision. Central differences with h = 1e-5; relative error below 1e-4.
#include <catch2/catch_amalgamated.hpp>
#include "wid/ops.hpp"

#include "gradcheck_util.hpp"

using wid::Rng;
using Td = wid::Tensor<double>;

using widtest::gradcheck;
using widtest::well_separated;


TEST_CASE("gradcheck: conv2d wrt input, weight, bias") {
  Rng rng(101);
  auto x = Td::randn({2, 3, 6, 7}, rng, 1.0, /*requires_grad=*/true);
  auto w = Td::randn({4, 3, 3, 3}, rng, 0.5, /*requires_grad=*/true);
  auto b = Td::randn({4}, rng, 0.5, /*requires_grad=*/true);
  Rng prj(102);
  auto w1 = Td::randn({2, 4, 6, 7}, prj);
  gradcheck([&] { return wid::sum(wid::mul(wid::conv2d(x, w, b, 1, 1), w1)); }, {x, w, b}, 9001);
}

TEST_CASE("gradcheck: strided unpadded conv2d") {
  Rng rng(103);
  auto x = Td::randn({1, 2, 9, 9}, rng, 1.0, true);
  auto w = Td::randn({3, 2, 3, 3}, rng, 0.5, true);
  auto b = Td::randn({3}, rng, 0.5, true);
  Rng prj(104);
  auto w1 = Td::randn({1, 3, 4, 4}, prj);
  gradcheck([&] { return wid::sum(wid::mul(wid::conv2d(x, w, b, 2, 0), w1)); }, {x, w, b}, 9002);
}

TEST_CASE("gradcheck: 1x1 conv fast path") {
  Rng rng(105);
  auto x = Td::randn({2, 5, 4, 4}, rng, 1.0, true);
  auto w = Td::randn({3, 5, 1, 1}, rng, 0.5, true);
  auto b = Td::randn({3}, rng, 0.5, true);
  Rng prj(106);
  auto w1 = Td::randn({2, 3, 4, 4}, prj);
  gradcheck([&] { return wid::sum(wid::mul(wid::conv2d(x, w, b, 1, 0), w1)); }, {x, w, b}, 9003);
}

TEST_CASE("gradcheck: batchnorm2d training mode wrt input, gamma, beta") {
  Rng rng(107);
  auto x = Td::randn({3, 4, 5, 5}, rng, 1.5, true);
  auto gamma = Td::randn({4}, rng, 0.3, true);
  for (std::int64_t i = 0; i < 4; ++i) gamma.data()[i] += 1.0;
  gamma.set_requires_grad(true);
  auto beta = Td::randn({4}, rng, 0.3, true);
  Rng prj(108);
  auto w1 = Td::randn({3, 4, 5, 5}, prj);
  gradcheck(
      [&] {
        auto rm = Td::zeros({4});
        auto rv = Td::filled({4}, 1.0);
        return wid::sum(wid::mul(wid::batchnorm2d(x, gamma, beta, rm, rv, true), w1));
      },
      {x, gamma, beta}, 9004);
}

TEST_CASE("gradcheck: batchnorm2d eval mode") {
  Rng rng(109);
  auto x = Td::randn({2, 3, 4, 4}, rng, 1.0, true);
  auto gamma = Td::filled({3}, 1.2, true);
  auto beta = Td::filled({3}, -0.1, true);
  auto rm = Td::randn({3}, rng, 0.5);
  auto rv = Td::filled({3}, 1.7);
  Rng prj(110);
  auto w1 = Td::randn({2, 3, 4, 4}, prj);
  gradcheck([&] { return wid::sum(wid::mul(wid::batchnorm2d(x, gamma, beta, rm, rv, false), w1)); },
            {x, gamma, beta}, 9005);
}

TEST_CASE("gradcheck: relu away from the kink") {
  Rng rng(111);
  auto x = Td::randn({4, 7}, rng, 1.0, true);
  // keep probes off the nondifferentiable point
  for (std::int64_t i = 0; i < x.numel(); ++i)
    if (std::abs(x.data()[i]) < 1e-3) x.data()[i] = 0.1;
  Rng prj(112);
  auto w1 = Td::randn({4, 7}, prj);
  gradcheck([&] { return wid::sum(wid::mul(wid::relu(x), w1)); }, {x}, 9006);
}

TEST_CASE("gradcheck: sigmoid") {
  Rng rng(113);
  auto x = Td::randn({3, 6}, rng, 2.0, true);
  Rng prj(114);
  auto w1 = Td::randn({3, 6}, prj);
  gradcheck([&] { return wid::sum(wid::mul(wid::sigmoid(x), w1)); }, {x}, 9007);
}

TEST_CASE("gradcheck: maxpool2d routes gradient to argmax only") {
  Rng rng(115);
  auto x = well_separated({2, 2, 6, 6}, rng);
  Rng prj(116);
  auto w1 = Td::randn({2, 2, 3, 3}, prj);
  gradcheck([&] { return wid::sum(wid::mul(wid::maxpool2d(x, 2, 2), w1)); }, {x}, 9008);
}

TEST_CASE("gradcheck: adaptive_avg_pool") {
  Rng rng(117);
  auto x = Td::randn({2, 3, 5, 4}, rng, 1.0, true);
  Rng prj(118);
  auto w1 = Td::randn({2, 3, 1, 1}, prj);
  gradcheck([&] { return wid::sum(wid::mul(wid::adaptive_avg_pool(x), w1)); }, {x}, 9009);
}

TEST_CASE("gradcheck: linear wrt input, weight, bias") {
  Rng rng(119);
  auto x = Td::randn({4, 6}, rng, 1.0, true);
  auto w = Td::randn({3, 6}, rng, 0.5, true);
  auto b = Td::randn({3}, rng, 0.5, true);
  Rng prj(120);
  auto w1 = Td::randn({4, 3}, prj);
  gradcheck([&] { return wid::sum(wid::mul(wid::linear(x, w, b), w1)); }, {x, w, b}, 9010);
}

TEST_CASE("gradcheck: add, mul, scalar_mul, sum, reshape") {
  Rng rng(121);
  auto a = Td::randn({3, 4}, rng, 1.0, true);
  auto b = Td::randn({3, 4}, rng, 1.0, true);
  Rng prj(122);
  auto w1 = Td::randn({3, 4}, prj);
  gradcheck(
      [&] {
        auto y = wid::add(wid::mul(a, b), wid::scalar_mul(a, 0.7));
        return wid::sum(wid::mul(wid::reshape(y, {12, 1}), wid::reshape(w1, {12, 1})));
      },
      {a, b}, 9011);
}

TEST_CASE("gradcheck: broadcast mul wrt both operands") {
  Rng rng(123);
  auto x = Td::randn({2, 3, 4, 4}, rng, 1.0, true);
  auto gate = Td::randn({2, 1, 4, 4}, rng, 1.0, true);
  Rng prj(124);
  auto w1 = Td::randn({2, 3, 4, 4}, prj);
  gradcheck([&] { return wid::sum(wid::mul(wid::mul(x, gate), w1)); }, {x, gate}, 9012);
}

TEST_CASE("gradcheck: concat_channels and slice_width") {
  Rng rng(125);
  auto a = Td::randn({2, 2, 3, 5}, rng, 1.0, true);
  auto b = Td::randn({2, 3, 3, 5}, rng, 1.0, true);
  Rng prj(126);
  auto w1 = Td::randn({2, 5, 3, 2}, prj);
  gradcheck(
      [&] {
        auto cat = wid::concat_channels<double>({a, b});
        return wid::sum(wid::mul(wid::slice_width(cat, 1, 3), w1));
      },
      {a, b}, 9013);
}

TEST_CASE("gradcheck: upsample2x_bilinear") {
  Rng rng(127);
  auto x = Td::randn({2, 2, 3, 4}, rng, 1.0, true);
  Rng prj(128);
  auto w1 = Td::randn({2, 2, 6, 8}, prj);
  gradcheck([&] { return wid::sum(wid::mul(wid::upsample2x_bilinear(x), w1)); }, {x}, 9014);
}

TEST_CASE("gradcheck: softmax") {
  Rng rng(129);
  auto x = Td::randn({3, 5}, rng, 1.5, true);
  Rng prj(130);
  auto w1 = Td::randn({3, 5}, prj);
  gradcheck([&] { return wid::sum(wid::mul(wid::softmax(x), w1)); }, {x}, 9015);
}

TEST_CASE("gradcheck: cross_entropy") {
  Rng rng(131);
  auto x = Td::randn({4, 6}, rng, 1.5, true);
  const std::vector<std::int64_t> labels{0, 3, 5, 2};
  gradcheck([&] { return wid::cross_entropy(x, labels); }, {x}, 9016);
}

TEST_CASE("gradcheck: composite attention-style chain") {
  // conv -> sigmoid gate -> broadcast mul -> pool -> linear -> ce,
  // exercising closure composition over a deep tape.
  Rng rng(133);
  auto x = Td::randn({2, 2, 4, 4}, rng, 1.0, true);
  auto wc = Td::randn({1, 2, 3, 3}, rng, 0.4, true);
  auto bc = Td::randn({1}, rng, 0.1, true);
  auto wl = Td::randn({3, 2}, rng, 0.5, true);
  auto bl = Td::randn({3}, rng, 0.1, true);
  const std::vector<std::int64_t> labels{1, 2};
  gradcheck(
      [&] {
        auto gate = wid::sigmoid(wid::conv2d(x, wc, bc, 1, 1));
        auto gated = wid::mul(x, gate);
        auto pooled = wid::adaptive_avg_pool(gated);
        auto flat = wid::reshape(pooled, {2, 2});
        return wid::cross_entropy(wid::linear(flat, wl, bl), labels);
      },
      {x, wc, bc, wl, bl}, 9017);
}
