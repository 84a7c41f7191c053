// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <numeric>
#include <vector>

#include "wid/blocks.hpp"

namespace wid {

// ---------------------------------------------------------------------------
// Architecture configuration. Arch names: "sa", "msrf", "patch".

struct NetConfig {
  std::string arch = "sa";
  std::int64_t num_writers = 105;
  std::int64_t input_h = 64, input_w = 128;
  std::vector<std::int64_t> widths{64, 128, 256, 512};        // encoder / global pathway
  std::vector<std::int64_t> patch_widths{16, 32, 64, 128};    // per-patch streams
  std::int64_t growth_msrf = 32;
  std::int64_t growth_patch = 12;
  std::uint64_t init_seed = 1;

  void validate() const {
    if (arch != "sa" && arch != "msrf" && arch != "patch")
      throw ConfigError("unknown architecture '" + arch + "' (expected sa|msrf|patch)");
    if (num_writers < 2) throw ConfigError("num_writers must be >= 2");
    if (widths.size() != 4 || patch_widths.size() != 4)
      throw ConfigError("widths and patch_widths must list 4 stages");
    if (input_h % 16 != 0 || input_w % 16 != 0)
      throw ConfigError("input dims must be divisible by 16 (four 2x2 pools)");
    if (arch == "patch") {
      if (input_w <= input_h || (input_w - input_h) % 4 != 0)
        throw ConfigError("patch extraction needs input_w > input_h with (w-h) divisible by 4");
    }
  }

  std::int64_t patch_size() const { return input_h; }
  std::int64_t patch_stride() const { return (input_w - input_h) / 4; }
};

// Square patches spanning the word image: 5 windows of side H at uniform
// horizontal offsets {0, s, 2s, 3s, 4s}, s = (W-H)/4. Differentiable slices.
template <typename T>
std::vector<Tensor<T>> extract_patch_views(const Tensor<T>& x) {
  const std::int64_t H = x.dim(2), W = x.dim(3);
  if (W <= H || (W - H) % 4 != 0)
    throw DimensionError("extract_patch_views: need W > H with (W-H) divisible by 4, got " +
                         shape_str(x.shape()));
  const std::int64_t s = (W - H) / 4;
  std::vector<Tensor<T>> patches;
  for (int p = 0; p < 5; ++p) patches.push_back(slice_width(x, p * s, p * s + H));
  return patches;
}

// ---------------------------------------------------------------------------

template <typename T>
class Network {
 public:
  virtual ~Network() = default;
  virtual std::vector<Tensor<T>> forward_heads(const Tensor<T>& x, bool training) = 0;
  virtual void visit_params(const ParamVisitor<T>& fn) = 0;
  virtual void visit_buffers(const ParamVisitor<T>& fn) = 0;
  virtual void zero_fusion_blocks() {}
  virtual const NetConfig& config() const = 0;

  std::int64_t param_count() {
    std::int64_t n = 0;
    visit_params([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
    return n;
  }

 protected:
  void check_input(const Tensor<T>& x) const {
    const NetConfig& c = config();
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != c.input_h || x.dim(3) != c.input_w)
      throw DimensionError("expected input [N,1," + std::to_string(c.input_h) + "," +
                           std::to_string(c.input_w) + "], got " + shape_str(x.shape()));
  }
};

// ---------------------------------------------------------------------------
// SA-Net: 4 stages of ConvBlock -> spatial attention -> 2x2 maxpool, one head.

template <typename T>
class SANet : public Network<T> {
 public:
  explicit SANet(NetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    std::int64_t cin = 1;
    for (int s = 0; s < 4; ++s) {
      blocks_.emplace_back(cin, cfg_.widths[static_cast<std::size_t>(s)], rng);
      atts_.emplace_back(cfg_.widths[static_cast<std::size_t>(s)], rng);
      cin = cfg_.widths[static_cast<std::size_t>(s)];
    }
    head_ = ClassHead<T>(cfg_.widths[3], cfg_.num_writers, rng);
  }

  std::vector<Tensor<T>> forward_heads(const Tensor<T>& x, bool training) override {
    return {head_.forward(features(x, training))};
  }

  // Final feature map plus per-stage attention maps, for inspection.
  Tensor<T> features(const Tensor<T>& x, bool training,
                     std::vector<Tensor<T>>* attention_maps = nullptr) {
    this->check_input(x);
    Tensor<T> h = x;
    for (int s = 0; s < 4; ++s) {
      h = blocks_[static_cast<std::size_t>(s)].forward(h, training);
      auto [gated, att] = atts_[static_cast<std::size_t>(s)].forward(h);
      if (attention_maps) attention_maps->push_back(att);
      h = maxpool2d(gated, 2, 2);
    }
    return h;
  }

  void visit_params(const ParamVisitor<T>& fn) override {
    for (int s = 0; s < 4; ++s) {
      blocks_[static_cast<std::size_t>(s)].visit_params("stage" + std::to_string(s) + ".block", fn);
      atts_[static_cast<std::size_t>(s)].visit_params("stage" + std::to_string(s) + ".att", fn);
    }
    head_.visit_params("head", fn);
  }
  void visit_buffers(const ParamVisitor<T>& fn) override {
    for (int s = 0; s < 4; ++s)
      blocks_[static_cast<std::size_t>(s)].visit_buffers("stage" + std::to_string(s) + ".block", fn);
  }
  const NetConfig& config() const override { return cfg_; }

  std::vector<ConvBlock<T>> blocks_;
  std::vector<SpatialAttention<T>> atts_;
  ClassHead<T> head_;

 private:
  NetConfig cfg_;
};

// ---------------------------------------------------------------------------
// MSRF classification network: a plain 4-stage encoder produces scales
// S1..S4; a first DSDF column fuses adjacent pairs top-down, a second column
// funnels everything into the deepest scale. Heads sit at the last scale
// level: before the first deep block (S4), between (b3), and after (b4).

template <typename T>
struct MsrfTrace {
  Tensor<T> s4, b3, b4;
  std::vector<Tensor<T>> logits;
};

template <typename T>
class MSRFNet : public Network<T> {
 public:
  explicit MSRFNet(NetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    const auto& w = cfg_.widths;
    std::int64_t cin = 1;
    for (int s = 0; s < 4; ++s) {
      encoder_.emplace_back(cin, w[static_cast<std::size_t>(s)], rng);
      cin = w[static_cast<std::size_t>(s)];
    }
    const std::int64_t g = cfg_.growth_msrf;
    d1_ = DSDFBlock<T>(w[0], w[1], g, rng);
    d2_ = DSDFBlock<T>(w[1], w[2], g, rng);
    d3_ = DSDFBlock<T>(w[2], w[3], g, rng);
    d4_ = DSDFBlock<T>(w[2], w[3], g, rng);
    for (int h = 0; h < 3; ++h) heads_.emplace_back(w[3], cfg_.num_writers, rng);
  }

  MsrfTrace<T> forward_trace(const Tensor<T>& x, bool training) {
    this->check_input(x);
    std::vector<Tensor<T>> scales;
    Tensor<T> h = x;
    for (int s = 0; s < 4; ++s) {
      h = maxpool2d(encoder_[static_cast<std::size_t>(s)].forward(h, training), 2, 2);
      scales.push_back(h);
    }
    auto [a1, b1] = d1_.forward(scales[0], scales[1], training);
    auto [a2, b2] = d2_.forward(b1, scales[2], training);
    auto [a3, b3] = d3_.forward(b2, scales[3], training);
    auto [a4, b4] = d4_.forward(a3, b3, training);
    (void)a1;
    (void)a2;
    (void)a4;
    MsrfTrace<T> tr;
    tr.s4 = scales[3];
    tr.b3 = b3;
    tr.b4 = b4;
    tr.logits = {heads_[0].forward(scales[3]), heads_[1].forward(b3), heads_[2].forward(b4)};
    return tr;
  }

  std::vector<Tensor<T>> forward_heads(const Tensor<T>& x, bool training) override {
    return forward_trace(x, training).logits;
  }

  void visit_params(const ParamVisitor<T>& fn) override {
    for (int s = 0; s < 4; ++s)
      encoder_[static_cast<std::size_t>(s)].visit_params("enc" + std::to_string(s), fn);
    d1_.visit_params("dsdf1", fn);
    d2_.visit_params("dsdf2", fn);
    d3_.visit_params("dsdf3", fn);
    d4_.visit_params("dsdf4", fn);
    for (int h = 0; h < 3; ++h)
      heads_[static_cast<std::size_t>(h)].visit_params("head" + std::to_string(h), fn);
  }
  void visit_buffers(const ParamVisitor<T>& fn) override {
    for (int s = 0; s < 4; ++s)
      encoder_[static_cast<std::size_t>(s)].visit_buffers("enc" + std::to_string(s), fn);
    d1_.visit_buffers("dsdf1", fn);
    d2_.visit_buffers("dsdf2", fn);
    d3_.visit_buffers("dsdf3", fn);
    d4_.visit_buffers("dsdf4", fn);
  }
  void zero_fusion_blocks() override {
    d1_.zero_dense_weights();
    d2_.zero_dense_weights();
    d3_.zero_dense_weights();
    d4_.zero_dense_weights();
  }
  const NetConfig& config() const override { return cfg_; }

  std::vector<ConvBlock<T>> encoder_;
  DSDFBlock<T> d1_, d2_, d3_, d4_;
  std::vector<ClassHead<T>> heads_;

 private:
  NetConfig cfg_;
};

// ---------------------------------------------------------------------------
// PatchNet: five square-patch streams with pairwise DPDFE exchange per stage,
// plus a global pathway (the SA-Net topology minus attention). Six heads.

template <typename T>
struct PatchTrace {
  std::vector<Tensor<T>> patch_feats;  // per stream, after stage 4
  Tensor<T> global_feat;
  std::vector<Tensor<T>> logits;  // 5 patch heads then the global head
};

template <typename T>
class PatchNet : public Network<T> {
 public:
  explicit PatchNet(NetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    const auto& pw = cfg_.patch_widths;
    const auto& gw = cfg_.widths;
    std::int64_t cin = 1;
    for (int s = 0; s < 4; ++s) {
      const std::int64_t cout = pw[static_cast<std::size_t>(s)];
      stage_blocks_.emplace_back();
      for (int p = 0; p < 5; ++p) stage_blocks_.back().emplace_back(cin, cout, rng);
      stage_exchange_.emplace_back();
      for (int pair = 0; pair < 4; ++pair)
        stage_exchange_.back().emplace_back(cout, cfg_.growth_patch, rng);
      cin = cout;
    }
    cin = 1;
    for (int s = 0; s < 4; ++s) {
      global_blocks_.emplace_back(cin, gw[static_cast<std::size_t>(s)], rng);
      cin = gw[static_cast<std::size_t>(s)];
    }
    for (int p = 0; p < 5; ++p) heads_.emplace_back(pw[3], cfg_.num_writers, rng);
    heads_.emplace_back(gw[3], cfg_.num_writers, rng);
  }

  PatchTrace<T> forward_trace(const Tensor<T>& x, bool training) {
    this->check_input(x);
    std::vector<Tensor<T>> streams = extract_patch_views(x);
    for (int s = 0; s < 4; ++s) {
      for (int p = 0; p < 5; ++p)
        streams[static_cast<std::size_t>(p)] =
            stage_blocks_[static_cast<std::size_t>(s)][static_cast<std::size_t>(p)].forward(
                streams[static_cast<std::size_t>(p)], training);
      // pairwise exchange left to right; stream p+1 sees p's exchanged output
      for (int pair = 0; pair < 4; ++pair) {
        auto [lo, hi] = stage_exchange_[static_cast<std::size_t>(s)][static_cast<std::size_t>(pair)]
                            .forward(streams[static_cast<std::size_t>(pair)],
                                     streams[static_cast<std::size_t>(pair + 1)], training);
        streams[static_cast<std::size_t>(pair)] = lo;
        streams[static_cast<std::size_t>(pair + 1)] = hi;
      }
      for (int p = 0; p < 5; ++p)
        streams[static_cast<std::size_t>(p)] = maxpool2d(streams[static_cast<std::size_t>(p)], 2, 2);
    }
    Tensor<T> g = x;
    for (int s = 0; s < 4; ++s)
      g = maxpool2d(global_blocks_[static_cast<std::size_t>(s)].forward(g, training), 2, 2);

    PatchTrace<T> tr;
    tr.patch_feats = streams;
    tr.global_feat = g;
    for (int p = 0; p < 5; ++p)
      tr.logits.push_back(heads_[static_cast<std::size_t>(p)].forward(streams[static_cast<std::size_t>(p)]));
    tr.logits.push_back(heads_[5].forward(g));
    return tr;
  }

  std::vector<Tensor<T>> forward_heads(const Tensor<T>& x, bool training) override {
    return forward_trace(x, training).logits;
  }

  void visit_params(const ParamVisitor<T>& fn) override {
    for (int s = 0; s < 4; ++s) {
      for (int p = 0; p < 5; ++p)
        stage_blocks_[static_cast<std::size_t>(s)][static_cast<std::size_t>(p)].visit_params(
            "stage" + std::to_string(s) + ".patch" + std::to_string(p), fn);
      for (int pair = 0; pair < 4; ++pair)
        stage_exchange_[static_cast<std::size_t>(s)][static_cast<std::size_t>(pair)].visit_params(
            "stage" + std::to_string(s) + ".exch" + std::to_string(pair), fn);
    }
    for (int s = 0; s < 4; ++s)
      global_blocks_[static_cast<std::size_t>(s)].visit_params("global" + std::to_string(s), fn);
    for (int h = 0; h < 6; ++h)
      heads_[static_cast<std::size_t>(h)].visit_params("head" + std::to_string(h), fn);
  }
  void visit_buffers(const ParamVisitor<T>& fn) override {
    for (int s = 0; s < 4; ++s) {
      for (int p = 0; p < 5; ++p)
        stage_blocks_[static_cast<std::size_t>(s)][static_cast<std::size_t>(p)].visit_buffers(
            "stage" + std::to_string(s) + ".patch" + std::to_string(p), fn);
      for (int pair = 0; pair < 4; ++pair)
        stage_exchange_[static_cast<std::size_t>(s)][static_cast<std::size_t>(pair)].visit_buffers(
            "stage" + std::to_string(s) + ".exch" + std::to_string(pair), fn);
    }
    for (int s = 0; s < 4; ++s)
      global_blocks_[static_cast<std::size_t>(s)].visit_buffers("global" + std::to_string(s), fn);
  }
  void zero_fusion_blocks() override {
    for (auto& stage : stage_exchange_)
      for (auto& ex : stage) ex.zero_dense_weights();
  }
  const NetConfig& config() const override { return cfg_; }

  std::vector<std::vector<ConvBlock<T>>> stage_blocks_;     // [stage][stream]
  std::vector<std::vector<DPDFEBlock<T>>> stage_exchange_;  // [stage][pair]
  std::vector<ConvBlock<T>> global_blocks_;
  std::vector<ClassHead<T>> heads_;

 private:
  NetConfig cfg_;
};

template <typename T>
std::unique_ptr<Network<T>> make_network(const NetConfig& cfg) {
  cfg.validate();
  if (cfg.arch == "sa") return std::make_unique<SANet<T>>(cfg);
  if (cfg.arch == "msrf") return std::make_unique<MSRFNet<T>>(cfg);
  return std::make_unique<PatchNet<T>>(cfg);
}

// ---------------------------------------------------------------------------
// Prediction: arithmetic mean of the softmaxed head outputs.

template <typename T>
struct WordPrediction {
  std::vector<T> probs;
  std::int64_t writer = -1;
};

// Batched word probabilities: one row per input image.
template <typename T>
std::vector<std::vector<T>> predict_probs(Network<T>& model, const Tensor<T>& x) {
  NoGradGuard ng;
  auto heads = model.forward_heads(x, /*training=*/false);
  const std::int64_t N = x.dim(0);
  const std::int64_t W = heads[0].dim(1);
  std::vector<std::vector<T>> rows(static_cast<std::size_t>(N),
                                   std::vector<T>(static_cast<std::size_t>(W), T(0)));
  for (auto& h : heads) {
    auto p = softmax(h);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t w = 0; w < W; ++w)
        rows[static_cast<std::size_t>(n)][static_cast<std::size_t>(w)] += p.data()[n * W + w];
  }
  const T inv = T(1) / static_cast<T>(heads.size());
  for (auto& r : rows)
    for (auto& v : r) v *= inv;
  return rows;
}

// Ties at the maximum resolve to the lowest writer index.
template <typename T>
std::int64_t argmax_lowest(const std::vector<T>& probs) {
  std::int64_t best = 0;
  for (std::int64_t i = 1; i < static_cast<std::int64_t>(probs.size()); ++i)
    if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
  return best;
}

template <typename T>
WordPrediction<T> predict_word(Network<T>& model, const Tensor<T>& image) {
  auto rows = predict_probs(model, image);
  if (rows.size() != 1)
    throw DimensionError("predict_word expects a single image, got batch of " +
                         std::to_string(rows.size()));
  WordPrediction<T> wp;
  wp.probs = rows[0];
  wp.writer = argmax_lowest(wp.probs);
  return wp;
}

// Summed cross-entropy over all heads, equal weights.
template <typename T>
Tensor<T> multi_head_loss(const std::vector<Tensor<T>>& heads,
                          const std::vector<std::int64_t>& labels) {
  Tensor<T> total = cross_entropy(heads[0], labels);
  for (std::size_t h = 1; h < heads.size(); ++h)
    total = add(total, cross_entropy(heads[h], labels));
  return total;
}

}  // namespace wid
