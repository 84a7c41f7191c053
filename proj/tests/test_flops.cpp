// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "wid/flops.hpp"

using wid::NetConfig;

namespace {

NetConfig tiny(const std::string& arch) {
  NetConfig c;
  c.arch = arch;
  c.num_writers = 3;
  c.input_h = 16;
  c.input_w = 32;
  c.widths = {4, 8, 12, 16};
  c.patch_widths = {2, 4, 6, 8};
  c.growth_msrf = 4;
  c.growth_patch = 2;
  return c;
}

template <typename T>
std::int64_t live_param_count(const NetConfig& c) {
  auto net = wid::make_network<T>(c);
  return net->param_count();
}

}  // namespace

TEST_CASE("first conv row of SA-Net matches the hand-computed example") {
  NetConfig c;
  c.arch = "sa";
  auto rep = wid::analyze_flops(c);
  REQUIRE(rep.rows[0].name == "stage0.block.conv1");
  REQUIRE(rep.rows[0].params == 640);              // 64*(9*1+1)
  REQUIRE(rep.rows[0].flops == 9437184);           // 2*9*1*64*64*128
  REQUIRE(rep.rows[0].out == wid::Shape{64, 64, 128});
}

TEST_CASE("classification head linear of 512 channels and 100 classes") {
  NetConfig c;
  c.arch = "sa";
  c.num_writers = 100;
  auto rep = wid::analyze_flops(c);
  bool found = false;
  for (const auto& r : rep.rows)
    if (r.name == "head.fc") {
      REQUIRE(r.params == 51300);  // 512*100 + 100
      REQUIRE(r.flops == 2 * 512 * 100);
      found = true;
    }
  REQUIRE(found);
}

TEST_CASE("totals are exact column sums") {
  auto rep = wid::analyze_flops(tiny("msrf"));
  std::int64_t p = 0, f = 0;
  for (const auto& r : rep.rows) {
    p += r.params;
    f += r.flops;
  }
  REQUIRE(rep.total_params() == p);
  REQUIRE(rep.total_flops() == f);
}

TEST_CASE("analyzer is a pure function of the configuration") {
  auto a = wid::analyze_flops(tiny("patch"));
  auto b = wid::analyze_flops(tiny("patch"));
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    REQUIRE(a.rows[i].name == b.rows[i].name);
    REQUIRE(a.rows[i].params == b.rows[i].params);
    REQUIRE(a.rows[i].flops == b.rows[i].flops);
  }
}

TEST_CASE("analyzer parameter totals equal live model counts, tiny configs") {
  for (const std::string arch : {"sa", "msrf", "patch"}) {
    auto c = tiny(arch);
    auto rep = wid::analyze_flops(c);
    INFO("arch " << arch);
    REQUIRE(rep.total_params() == live_param_count<float>(c));
  }
}

TEST_CASE("analyzer parameter totals equal live model counts, default configs") {
  for (const std::string arch : {"sa", "msrf", "patch"}) {
    NetConfig c;
    c.arch = arch;
    c.num_writers = 105;
    auto rep = wid::analyze_flops(c);
    INFO("arch " << arch);
    REQUIRE(rep.total_params() == live_param_count<float>(c));
  }
}

TEST_CASE("default FLOPs land inside the published tolerance bands") {
  NetConfig sa;
  sa.arch = "sa";
  const double sa_flops = static_cast<double>(wid::analyze_flops(sa).total_flops());
  INFO("sa gflops " << sa_flops / 1e9);
  REQUIRE(sa_flops >= 0.85 * 4.10e9);
  REQUIRE(sa_flops <= 1.15 * 4.10e9);

  NetConfig pn;
  pn.arch = "patch";
  const double pn_flops = static_cast<double>(wid::analyze_flops(pn).total_flops());
  INFO("patch gflops " << pn_flops / 1e9);
  REQUIRE(pn_flops >= 0.85 * 7.65e9);
  REQUIRE(pn_flops <= 1.15 * 7.65e9);
}

TEST_CASE("report renders a table with totals and the ambiguity note") {
  auto rep = wid::analyze_flops(tiny("sa"));
  const std::string t = rep.table();
  REQUIRE(t.find("TOTAL") != std::string::npos);
  REQUIRE(t.find("note:") != std::string::npos);
  const std::string c = rep.csv();
  REQUIRE(c.find("layer,out_shape,params,flops") == 0);
}
