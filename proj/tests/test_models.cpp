// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "wid/models.hpp"

#include "gradcheck_util.hpp"

using wid::NetConfig;
using wid::Rng;
using Tf = wid::Tensor<float>;
using Td = wid::Tensor<double>;

namespace {

NetConfig tiny(const std::string& arch, std::int64_t writers = 2) {
  NetConfig c;
  c.arch = arch;
  c.num_writers = writers;
  c.input_h = 16;
  c.input_w = 32;
  c.widths = {4, 8, 12, 16};
  c.patch_widths = {2, 4, 6, 8};
  c.growth_msrf = 4;
  c.growth_patch = 2;
  c.init_seed = 77;
  return c;
}

}  // namespace

TEST_CASE("SA-Net maps word images to one logit tensor; stages halve dims") {
  NetConfig c;
  c.arch = "sa";
  c.num_writers = 7;
  wid::SANet<float> net(c);
  Rng rng(1);
  auto x = Tf::randn({2, 1, 64, 128}, rng, 0.3f);
  std::vector<Tf> atts;
  auto feat = net.features(x, /*training=*/false, &atts);
  REQUIRE(feat.shape() == wid::Shape{2, 512, 4, 8});
  // attention maps sit before each pool: full, half, quarter, eighth dims
  REQUIRE(atts[0].shape() == wid::Shape{2, 1, 64, 128});
  REQUIRE(atts[1].shape() == wid::Shape{2, 1, 32, 64});
  REQUIRE(atts[2].shape() == wid::Shape{2, 1, 16, 32});
  REQUIRE(atts[3].shape() == wid::Shape{2, 1, 8, 16});
  auto heads = net.forward_heads(x, false);
  REQUIRE(heads.size() == 1);
  REQUIRE(heads[0].shape() == wid::Shape{2, 7});

  auto p = wid::softmax(heads[0]);
  for (std::int64_t n = 0; n < 2; ++n) {
    double sum = 0;
    for (std::int64_t k = 0; k < 7; ++k) sum += p.data()[n * 7 + k];
    REQUIRE(sum == Catch::Approx(1.0));
  }
  REQUIRE_THROWS_AS(net.forward_heads(Tf::zeros({1, 1, 32, 64}), false), wid::DimensionError);
}

TEST_CASE("MSRF returns three heads; zeroed fusion reduces to the plain encoder") {
  auto c = tiny("msrf", 5);
  wid::MSRFNet<float> net(c);
  Rng rng(2);
  auto x = Tf::randn({2, 1, 16, 32}, rng, 0.3f);
  auto heads = net.forward_heads(x, false);
  REQUIRE(heads.size() == 3);
  for (auto& h : heads) REQUIRE(h.shape() == wid::Shape{2, 5});

  net.zero_fusion_blocks();
  auto tr = net.forward_trace(x, false);
  REQUIRE(tr.b3.vec() == tr.s4.vec());  // deepest features pass through untouched
  REQUIRE(tr.b4.vec() == tr.s4.vec());
}

TEST_CASE("PatchNet returns six heads; zeroed fusion reduces to plain streams") {
  auto c = tiny("patch", 4);
  wid::PatchNet<float> net(c);
  Rng rng(3);
  auto x = Tf::randn({2, 1, 16, 32}, rng, 0.3f);
  auto heads = net.forward_heads(x, false);
  REQUIRE(heads.size() == 6);
  for (auto& h : heads) REQUIRE(h.shape() == wid::Shape{2, 4});

  // patch features end at patch_size / 2^4 square
  auto tr = net.forward_trace(x, false);
  for (auto& f : tr.patch_feats) REQUIRE(f.shape() == wid::Shape{2, 8, 1, 1});
  REQUIRE(tr.global_feat.shape() == wid::Shape{2, 16, 1, 2});

  net.zero_fusion_blocks();
  auto tz = net.forward_trace(x, false);
  // compose each stream's own blocks without any exchange; must agree exactly
  auto patches = wid::extract_patch_views(x);
  for (int p = 0; p < 5; ++p) {
    Tf h = patches[static_cast<std::size_t>(p)];
    for (int s = 0; s < 4; ++s)
      h = wid::maxpool2d(
          net.stage_blocks_[static_cast<std::size_t>(s)][static_cast<std::size_t>(p)].forward(h, false), 2,
          2);
    REQUIRE(tz.patch_feats[static_cast<std::size_t>(p)].vec() == h.vec());
  }
}

TEST_CASE("patch views are the five uniform windows") {
  Rng rng(4);
  auto x = Tf::randn({1, 1, 16, 32}, rng);
  auto views = wid::extract_patch_views(x);
  REQUIRE(views.size() == 5);
  for (int p = 0; p < 5; ++p) {
    REQUIRE(views[static_cast<std::size_t>(p)].shape() == wid::Shape{1, 1, 16, 16});
    for (std::int64_t h = 0; h < 16; ++h)
      for (std::int64_t w = 0; w < 16; ++w)
        REQUIRE(views[static_cast<std::size_t>(p)].at4(0, 0, h, w) == x.at4(0, 0, h, w + 4 * p));
  }
}

TEST_CASE("predict_word equals the mean of softmaxed heads") {
  auto c = tiny("msrf", 5);
  wid::MSRFNet<float> net(c);
  Rng rng(5);
  auto x = Tf::randn({1, 1, 16, 32}, rng, 0.3f);
  auto wp = wid::predict_word<float>(net, x);
  REQUIRE(wp.probs.size() == 5);

  auto heads = net.forward_heads(x, false);
  std::vector<double> expect(5, 0.0);
  for (auto& h : heads) {
    auto p = wid::softmax(h);
    for (int k = 0; k < 5; ++k) expect[static_cast<std::size_t>(k)] += p.data()[k];
  }
  double total = 0;
  for (int k = 0; k < 5; ++k) {
    expect[static_cast<std::size_t>(k)] /= 3.0;
    REQUIRE(wp.probs[static_cast<std::size_t>(k)] ==
            Catch::Approx(expect[static_cast<std::size_t>(k)]).margin(1e-6));
    total += wp.probs[static_cast<std::size_t>(k)];
  }
  REQUIRE(total == Catch::Approx(1.0).margin(1e-5));
}

TEST_CASE("prediction is invariant under head permutation and ties break low") {
  // two fixed distributions averaged by hand
  std::vector<float> probs{0.4f, 0.6f};
  REQUIRE(wid::argmax_lowest(probs) == 1);
  std::vector<float> tie{0.5f, 0.5f};
  REQUIRE(wid::argmax_lowest(tie) == 0);
  std::vector<float> tri{0.2f, 0.4f, 0.4f};
  REQUIRE(wid::argmax_lowest(tri) == 1);
}

TEST_CASE("single-head prediction equals plain softmax") {
  auto c = tiny("sa", 4);
  wid::SANet<float> net(c);
  Rng rng(6);
  auto x = Tf::randn({1, 1, 16, 32}, rng, 0.3f);
  auto wp = wid::predict_word<float>(net, x);
  auto p = wid::softmax(net.forward_heads(x, false)[0]);
  for (int k = 0; k < 4; ++k)
    REQUIRE(wp.probs[static_cast<std::size_t>(k)] == Catch::Approx(p.data()[k]).margin(1e-7));
}

TEST_CASE("multi_head_loss sums per-head cross entropies") {
  auto a = Tf::from_vector({2, 3}, {1, 0, -1, 0.5f, 0.2f, -0.3f});
  auto b = Tf::from_vector({2, 3}, {0, 1, 0, -1, 2, 0.1f});
  const std::vector<std::int64_t> labels{0, 2};
  auto total = wid::multi_head_loss<float>({a, b}, labels);
  const double expect = static_cast<double>(wid::cross_entropy(a, labels).item()) +
                        static_cast<double>(wid::cross_entropy(b, labels).item());
  REQUIRE(total.item() == Catch::Approx(expect).margin(1e-6));
}

// --- end-to-end gradient checks on tiny configurations -------------------

namespace {

// A handful of representative leaves: input plus a parameter from each
// structural family (first conv, a fusion-block conv, a head weight).
template <typename Net>
void model_gradcheck(Net& net, std::uint64_t seed, const std::vector<std::string>& leaf_names) {
  Rng rng(seed);
  auto x = Td::randn({2, 1, 16, 32}, rng, 0.5, /*requires_grad=*/true);
  const std::vector<std::int64_t> labels{0, 1};
  std::vector<Td> leaves{x};
  net.visit_params([&](const std::string& n, Td& t) {
    for (const auto& want : leaf_names)
      if (n == want) leaves.push_back(t);
  });
  REQUIRE(leaves.size() == leaf_names.size() + 1);
  widtest::gradcheck(
      [&] { return wid::multi_head_loss(net.forward_heads(x, /*training=*/true), labels); },
      leaves, seed + 1);
}

}  // namespace

TEST_CASE("gradcheck: tiny SA-Net end to end") {
  auto c = tiny("sa");
  wid::SANet<double> net(c);
  model_gradcheck(net, 501,
                  {"stage0.block.conv1.weight", "stage1.att.att1.weight", "stage2.block.bn.gamma",
                   "head.fc.weight"});
}

TEST_CASE("gradcheck: tiny MSRF end to end") {
  auto c = tiny("msrf");
  wid::MSRFNet<double> net(c);
  model_gradcheck(net, 502,
                  {"enc0.conv1.weight", "dsdf1.fine.dense0.conv.weight", "dsdf3.down2.weight",
                   "dsdf4.coarse.compress.weight", "head1.fc.weight"});
}

TEST_CASE("gradcheck: tiny PatchNet end to end") {
  auto c = tiny("patch");
  wid::PatchNet<double> net(c);
  model_gradcheck(net, 503,
                  {"stage0.patch0.conv1.weight", "stage1.exch2.stream0.dense1.conv.weight",
                   "stage3.exch0.stream1.compress.weight", "global0.conv1.weight",
                   "head5.fc.weight"});
}
