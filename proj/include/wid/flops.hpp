// SPDX-License-Identifier: Apache-2.0
//
// Symbolic per-layer parameter/FLOP walker. Mirrors the live architectures
// layer for layer without allocating tensors. Counting convention: batch 1,
// one multiply-add = 2 FLOPs; BN 2/element, ReLU 1, sigmoid 4, elementwise
// mul/add 1, maxpool k^2-1 per output element, bilinear 2x upsample 8 per
// output element, global average pool HW+1 per channel; concat/slice/reshape
// are free (pure data movement).
#pragma once

#include <iomanip>
#include <sstream>

#include "wid/models.hpp"

namespace wid {

struct CostRow {
  std::string name;
  Shape out;  // [C,H,W] for maps, [F] for vectors
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

struct CostReport {
  std::string arch;
  std::vector<CostRow> rows;
  std::string note;

  std::int64_t total_params() const {
    std::int64_t n = 0;
    for (const auto& r : rows) n += r.params;
    return n;
  }
  std::int64_t total_flops() const {
    std::int64_t n = 0;
    for (const auto& r : rows) n += r.flops;
    return n;
  }

  std::string table() const {
    std::ostringstream os;
    os << "arch: " << arch << "\n";
    os << std::left << std::setw(34) << "layer" << std::setw(18) << "output" << std::right
       << std::setw(12) << "params" << std::setw(16) << "flops"
       << "\n";
    for (const auto& r : rows)
      os << std::left << std::setw(34) << r.name << std::setw(18) << shape_str(r.out)
         << std::right << std::setw(12) << r.params << std::setw(16) << r.flops << "\n";
    os << std::left << std::setw(34) << "TOTAL" << std::setw(18) << "" << std::right
       << std::setw(12) << total_params() << std::setw(16) << total_flops() << "\n";
    os << std::fixed << std::setprecision(3) << "total gflops: " << (static_cast<double>(total_flops()) / 1e9)
       << "\n";
    if (!note.empty()) os << "note: " << note << "\n";
    return os.str();
  }

  std::string csv() const {
    std::ostringstream os;
    os << "layer,out_shape,params,flops\n";
    for (const auto& r : rows) os << r.name << "," << shape_str(r.out) << "," << r.params << "," << r.flops << "\n";
    os << "TOTAL,," << total_params() << "," << total_flops() << "\n";
    return os.str();
  }
};

namespace detail {

class CostWalker {
 public:
  explicit CostWalker(CostReport& rep) : rep_(rep) {}

  void conv(const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t k,
            std::int64_t stride, std::int64_t pad, std::int64_t& h, std::int64_t& w) {
    h = (h + 2 * pad - k) / stride + 1;
    w = (w + 2 * pad - k) / stride + 1;
    rep_.rows.push_back({name, {cout, h, w}, cout * (k * k * cin + 1), 2 * k * k * cin * cout * h * w});
  }
  void bn(const std::string& name, std::int64_t c, std::int64_t h, std::int64_t w) {
    rep_.rows.push_back({name, {c, h, w}, 2 * c, 2 * c * h * w});
  }
  void relu(const std::string& name, std::int64_t c, std::int64_t h, std::int64_t w) {
    rep_.rows.push_back({name, {c, h, w}, 0, c * h * w});
  }
  void sigmoid(const std::string& name, std::int64_t c, std::int64_t h, std::int64_t w) {
    rep_.rows.push_back({name, {c, h, w}, 0, 4 * c * h * w});
  }
  void eltwise(const std::string& name, std::int64_t c, std::int64_t h, std::int64_t w) {
    rep_.rows.push_back({name, {c, h, w}, 0, c * h * w});
  }
  void maxpool(const std::string& name, std::int64_t c, std::int64_t k, std::int64_t& h,
               std::int64_t& w) {
    h /= k;
    w /= k;
    rep_.rows.push_back({name, {c, h, w}, 0, (k * k - 1) * c * h * w});
  }
  void upsample(const std::string& name, std::int64_t c, std::int64_t h, std::int64_t w) {
    rep_.rows.push_back({name, {c, 2 * h, 2 * w}, 0, 8 * c * (2 * h) * (2 * w)});
  }
  void global_avg(const std::string& name, std::int64_t c, std::int64_t h, std::int64_t w) {
    rep_.rows.push_back({name, {c, 1, 1}, 0, c * (h * w + 1)});
  }
  void linear(const std::string& name, std::int64_t in, std::int64_t out) {
    rep_.rows.push_back({name, {out}, out * (in + 1), 2 * in * out});
  }

  void conv_block(const std::string& p, std::int64_t cin, std::int64_t cout, std::int64_t& h,
                  std::int64_t& w) {
    conv(p + ".conv1", cin, cout, 3, 1, 1, h, w);
    conv(p + ".conv2", cout, cout, 3, 1, 1, h, w);
    bn(p + ".bn", cout, h, w);
    relu(p + ".relu", cout, h, w);
  }

  void attention(const std::string& p, std::int64_t c, std::int64_t h, std::int64_t w) {
    std::int64_t hh = h, ww = w;
    conv(p + ".att1", c, c / 2, 3, 1, 1, hh, ww);
    relu(p + ".att1.relu", c / 2, hh, ww);
    conv(p + ".att2", c / 2, 1, 3, 1, 1, hh, ww);
    sigmoid(p + ".att2.sigmoid", 1, hh, ww);
    eltwise(p + ".gate", c, h, w);
  }

  void class_head(const std::string& p, std::int64_t c, std::int64_t h, std::int64_t w,
                  std::int64_t classes) {
    global_avg(p + ".avgpool", c, h, w);
    linear(p + ".fc", c, classes);
  }

  // One DPDFE stream's dense machinery; both streams are symmetric.
  void dpdfe_stream(const std::string& p, std::int64_t c, std::int64_t g, std::int64_t h,
                    std::int64_t w) {
    for (int j = 1; j <= kDenseLayers; ++j) {
      std::int64_t hh = h, ww = w;
      conv(p + ".dense" + std::to_string(j - 1) + ".conv", c + 2 * (j - 1) * g, g, 3, 1, 1, hh, ww);
      bn(p + ".dense" + std::to_string(j - 1) + ".bn", g, hh, ww);
      relu(p + ".dense" + std::to_string(j - 1) + ".relu", g, hh, ww);
    }
    std::int64_t hh = h, ww = w;
    conv(p + ".compress", c + 2 * kDenseLayers * g, c, 1, 1, 0, hh, ww);
    eltwise(p + ".scale", c, h, w);
    eltwise(p + ".residual", c, h, w);
  }

  void dpdfe(const std::string& p, std::int64_t c, std::int64_t g, std::int64_t h, std::int64_t w) {
    dpdfe_stream(p + ".stream0", c, g, h, w);
    dpdfe_stream(p + ".stream1", c, g, h, w);
  }

  void dsdf(const std::string& p, std::int64_t ca, std::int64_t cb, std::int64_t g,
            std::int64_t ha, std::int64_t wa) {
    const std::int64_t hb = ha / 2, wb = wa / 2;
    dpdfe_stream(p + ".fine", ca, g, ha, wa);
    dpdfe_stream(p + ".coarse", cb, g, hb, wb);
    for (int j = 0; j < kDenseLayers; ++j) {
      std::int64_t hh = ha, ww = wa;
      conv(p + ".down" + std::to_string(j), g, g, 3, 2, 1, hh, ww);
      upsample(p + ".up" + std::to_string(j), g, hb, wb);
    }
  }

 private:
  CostReport& rep_;
};

}  // namespace detail

inline CostReport analyze_flops(const NetConfig& cfg) {
  cfg.validate();
  CostReport rep;
  rep.arch = cfg.arch;
  detail::CostWalker cw(rep);

  if (cfg.arch == "sa") {
    std::int64_t h = cfg.input_h, w = cfg.input_w, cin = 1;
    for (int s = 0; s < 4; ++s) {
      const std::int64_t cout = cfg.widths[static_cast<std::size_t>(s)];
      const std::string p = "stage" + std::to_string(s);
      cw.conv_block(p + ".block", cin, cout, h, w);
      cw.attention(p + ".att", cout, h, w);
      cw.maxpool(p + ".pool", cout, 2, h, w);
      cin = cout;
    }
    cw.class_head("head", cfg.widths[3], h, w, cfg.num_writers);
  } else if (cfg.arch == "msrf") {
    std::int64_t h = cfg.input_h, w = cfg.input_w, cin = 1;
    std::vector<std::int64_t> sh, sw;
    for (int s = 0; s < 4; ++s) {
      const std::int64_t cout = cfg.widths[static_cast<std::size_t>(s)];
      cw.conv_block("enc" + std::to_string(s), cin, cout, h, w);
      cw.maxpool("enc" + std::to_string(s) + ".pool", cout, 2, h, w);
      sh.push_back(h);
      sw.push_back(w);
      cin = cout;
    }
    const std::int64_t g = cfg.growth_msrf;
    cw.dsdf("dsdf1", cfg.widths[0], cfg.widths[1], g, sh[0], sw[0]);
    cw.dsdf("dsdf2", cfg.widths[1], cfg.widths[2], g, sh[1], sw[1]);
    cw.dsdf("dsdf3", cfg.widths[2], cfg.widths[3], g, sh[2], sw[2]);
    cw.dsdf("dsdf4", cfg.widths[2], cfg.widths[3], g, sh[2], sw[2]);
    for (int hd = 0; hd < 3; ++hd)
      cw.class_head("head" + std::to_string(hd), cfg.widths[3], sh[3], sw[3], cfg.num_writers);
  } else {
    // five patch streams, pairwise exchange, then the global pathway
    std::int64_t ph = cfg.patch_size(), pw = cfg.patch_size();
    std::int64_t cin = 1;
    for (int s = 0; s < 4; ++s) {
      const std::int64_t cout = cfg.patch_widths[static_cast<std::size_t>(s)];
      const std::string sp = "stage" + std::to_string(s);
      std::int64_t hh = ph, ww = pw;
      for (int p = 0; p < 5; ++p) {
        hh = ph;
        ww = pw;
        cw.conv_block(sp + ".patch" + std::to_string(p), cin, cout, hh, ww);
      }
      for (int pair = 0; pair < 4; ++pair)
        cw.dpdfe(sp + ".exch" + std::to_string(pair), cout, cfg.growth_patch, hh, ww);
      for (int p = 0; p < 5; ++p) {
        std::int64_t h2 = hh, w2 = ww;
        cw.maxpool(sp + ".patch" + std::to_string(p) + ".pool", cout, 2, h2, w2);
        if (p == 4) {
          ph = h2;
          pw = w2;
        }
      }
      cin = cout;
    }
    std::int64_t gh = cfg.input_h, gw = cfg.input_w;
    cin = 1;
    for (int s = 0; s < 4; ++s) {
      const std::int64_t cout = cfg.widths[static_cast<std::size_t>(s)];
      cw.conv_block("global" + std::to_string(s), cin, cout, gh, gw);
      cw.maxpool("global" + std::to_string(s) + ".pool", cout, 2, gh, gw);
      cin = cout;
    }
    for (int p = 0; p < 5; ++p)
      cw.class_head("head" + std::to_string(p), cfg.patch_widths[3], ph, pw, cfg.num_writers);
    cw.class_head("head5", cfg.widths[3], gh, gw, cfg.num_writers);
  }
  rep.note =
      "reference totals list 5.5G/4.10G/7.65G against four method names; the name-number "
      "pairing is ambiguous, tolerances are applied loosely";
  return rep;
}

}  // namespace wid
