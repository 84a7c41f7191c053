// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>

#include "wid/ops.hpp"

namespace wid {

// Visitation over named tensors; the optimizer, checkpointing and init all
// walk modules through these. Buffers (BN running stats) are visited
// separately from trainable parameters.
template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&)>;

// ---------------------------------------------------------------------------
// Leaf modules

template <typename T>
struct Conv2d {
  Tensor<T> weight, bias;
  std::int64_t stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t stride_,
         std::int64_t pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    const double std = std::sqrt(2.0 / static_cast<double>(cin * k * k));
    weight = Tensor<T>::randn({cout, cin, k, k}, rng, std, /*requires_grad=*/true);
    bias = Tensor<T>::zeros({cout}, /*requires_grad=*/true);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }

  void zero_weights() {
    std::fill(weight.vec().begin(), weight.vec().end(), T(0));
    std::fill(bias.vec().begin(), bias.vec().end(), T(0));
  }
};

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::int64_t c)
      : gamma(Tensor<T>::filled({c}, T(1), /*requires_grad=*/true)),
        beta(Tensor<T>::zeros({c}, /*requires_grad=*/true)),
        running_mean(Tensor<T>::zeros({c})),
        running_var(Tensor<T>::filled({c}, T(1))) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return batchnorm2d(x, gamma, beta, running_mean, running_var, training);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
  void visit_buffers(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".running_mean", running_mean);
    fn(prefix + ".running_var", running_var);
  }
};

template <typename T>
struct LinearLayer {
  Tensor<T> weight, bias;

  LinearLayer() = default;
  LinearLayer(std::int64_t in, std::int64_t out, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(in));
    weight = Tensor<T>::randn({out, in}, rng, std, /*requires_grad=*/true);
    bias = Tensor<T>::zeros({out}, /*requires_grad=*/true);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

// ---------------------------------------------------------------------------
// ConvBlock: conv -> conv -> BN -> ReLU. No activation between the convs;
// the single normalization sits at the block output.

template <typename T>
struct ConvBlock {
  Conv2d<T> conv1, conv2;
  BatchNorm2d<T> bn;
  std::int64_t in_channels = 0, out_channels = 0;

  ConvBlock() = default;
  ConvBlock(std::int64_t cin, std::int64_t cout, Rng& rng)
      : conv1(cin, cout, 3, 1, 1, rng),
        conv2(cout, cout, 3, 1, 1, rng),
        bn(cout),
        in_channels(cin),
        out_channels(cout) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    if (x.dim(1) != in_channels)
      throw DimensionError("ConvBlock: expected " + std::to_string(in_channels) +
                           " input channels, got " + std::to_string(x.dim(1)));
    return relu(bn.forward(conv2.forward(conv1.forward(x)), training));
  }

  void visit_params(const std::string& p, const ParamVisitor<T>& fn) {
    conv1.visit_params(p + ".conv1", fn);
    conv2.visit_params(p + ".conv2", fn);
    bn.visit_params(p + ".bn", fn);
  }
  void visit_buffers(const std::string& p, const ParamVisitor<T>& fn) {
    bn.visit_buffers(p + ".bn", fn);
  }
};

// ---------------------------------------------------------------------------
// Spatial attention: a single-channel gate in (0,1) broadcast over all
// feature channels. Bottleneck C -> C/2 -> 1.

template <typename T>
struct SpatialAttention {
  Conv2d<T> att1, att2;
  std::int64_t channels = 0;

  SpatialAttention() = default;
  SpatialAttention(std::int64_t c, Rng& rng) : channels(c) {
    if (c % 2 != 0)
      throw ConfigError("SpatialAttention: channel count " + std::to_string(c) +
                        " must be even for the C/2 bottleneck");
    att1 = Conv2d<T>(c, c / 2, 3, 1, 1, rng);
    att2 = Conv2d<T>(c / 2, 1, 3, 1, 1, rng);
  }

  // Returns (gated features, attention map [N,1,H,W]).
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& x) const {
    auto a = sigmoid(att2.forward(relu(att1.forward(x))));
    return {mul(x, a), a};
  }

  void visit_params(const std::string& p, const ParamVisitor<T>& fn) {
    att1.visit_params(p + ".att1", fn);
    att2.visit_params(p + ".att2", fn);
  }
};

// ---------------------------------------------------------------------------
// Dense layer: 3x3 conv (pad 1) -> BN -> ReLU, emitting `growth` channels.

template <typename T>
struct DenseLayer {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;

  DenseLayer() = default;
  DenseLayer(std::int64_t cin, std::int64_t growth, Rng& rng)
      : conv(cin, growth, 3, 1, 1, rng), bn(growth) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return relu(bn.forward(conv.forward(x), training));
  }

  void visit_params(const std::string& p, const ParamVisitor<T>& fn) {
    conv.visit_params(p + ".conv", fn);
    bn.visit_params(p + ".bn", fn);
  }
  void visit_buffers(const std::string& p, const ParamVisitor<T>& fn) {
    bn.visit_buffers(p + ".bn", fn);
  }
};

inline constexpr int kDenseLayers = 5;
inline constexpr double kResidualScale = 0.4;

// ---------------------------------------------------------------------------
// DPDFE: two same-resolution patch streams exchange dense features.
//
// Feature ledger per stream: F_0 is the block input (C channels); rounds
// j = 1..5 produce F_j (g channels each). The layer producing F_j consumes
// concat[own F_0..j-1, partner F_1..j-1], i.e. C + 2*(j-1)*g channels.
// Streams advance in lockstep, so round j sees the partner's pre-round state.
// A 1x1 conv compresses concat[own F_0..5, partner F_1..5] back to C; the
// result is scaled by w = 0.4 and added to the stream input.

template <typename T>
struct DPDFEBlock {
  std::int64_t channels = 0, growth = 0;
  T w = static_cast<T>(kResidualScale);
  std::array<std::vector<DenseLayer<T>>, 2> layers;
  std::array<Conv2d<T>, 2> compress;

  DPDFEBlock() = default;
  DPDFEBlock(std::int64_t c, std::int64_t g, Rng& rng) : channels(c), growth(g) {
    for (int s = 0; s < 2; ++s) {
      for (int j = 1; j <= kDenseLayers; ++j)
        layers[static_cast<std::size_t>(s)].emplace_back(c + 2 * (j - 1) * g, g, rng);
      compress[static_cast<std::size_t>(s)] =
          Conv2d<T>(c + 2 * kDenseLayers * g, c, 1, 1, 0, rng);
    }
  }

  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& m0, const Tensor<T>& m1,
                                          bool training) {
    if (m0.shape() != m1.shape())
      throw DimensionError("DPDFEBlock: stream shapes differ, " + shape_str(m0.shape()) +
                           " vs " + shape_str(m1.shape()));
    if (m0.dim(1) != channels)
      throw DimensionError("DPDFEBlock: expected " + std::to_string(channels) + " channels");
    std::array<std::vector<Tensor<T>>, 2> feats{{{m0}, {m1}}};
    for (int j = 1; j <= kDenseLayers; ++j) {
      std::array<Tensor<T>, 2> next;
      for (int s = 0; s < 2; ++s) {
        std::vector<Tensor<T>> cat(feats[static_cast<std::size_t>(s)].begin(),
                                   feats[static_cast<std::size_t>(s)].end());
        for (int k = 1; k < j; ++k)
          cat.push_back(feats[static_cast<std::size_t>(1 - s)][static_cast<std::size_t>(k)]);
        const Tensor<T> in = cat.size() == 1 ? cat[0] : concat_channels(cat);
        next[static_cast<std::size_t>(s)] =
            layers[static_cast<std::size_t>(s)][static_cast<std::size_t>(j - 1)].forward(in, training);
      }
      feats[0].push_back(next[0]);
      feats[1].push_back(next[1]);
    }
    std::array<Tensor<T>, 2> out;
    for (int s = 0; s < 2; ++s) {
      std::vector<Tensor<T>> cat(feats[static_cast<std::size_t>(s)].begin(),
                                 feats[static_cast<std::size_t>(s)].end());
      for (int k = 1; k <= kDenseLayers; ++k)
        cat.push_back(feats[static_cast<std::size_t>(1 - s)][static_cast<std::size_t>(k)]);
      auto compressed = compress[static_cast<std::size_t>(s)].forward(concat_channels(cat));
      out[static_cast<std::size_t>(s)] =
          add(scalar_mul(compressed, w), feats[static_cast<std::size_t>(s)][0]);
    }
    return {out[0], out[1]};
  }

  void visit_params(const std::string& p, const ParamVisitor<T>& fn) {
    for (int s = 0; s < 2; ++s) {
      const std::string sp = p + ".stream" + std::to_string(s);
      for (int j = 0; j < kDenseLayers; ++j)
        layers[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)].visit_params(
            sp + ".dense" + std::to_string(j), fn);
      compress[static_cast<std::size_t>(s)].visit_params(sp + ".compress", fn);
    }
  }
  void visit_buffers(const std::string& p, const ParamVisitor<T>& fn) {
    for (int s = 0; s < 2; ++s) {
      const std::string sp = p + ".stream" + std::to_string(s);
      for (int j = 0; j < kDenseLayers; ++j)
        layers[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)].visit_buffers(
            sp + ".dense" + std::to_string(j), fn);
    }
  }

  // Zeroing every conv makes the block an exact identity: the compressed
  // contribution is exactly 0 and w*0 + input == input bitwise.
  void zero_dense_weights() {
    for (auto& stream : layers)
      for (auto& l : stream) l.conv.zero_weights();
    for (auto& c : compress) c.zero_weights();
  }
};

// ---------------------------------------------------------------------------
// DSDF: the two-scale analogue of DPDFE. Stream A runs at (H,W), stream B at
// (H/2,W/2); A consumes B's features through 2x bilinear upsampling, B
// consumes A's through per-round learned stride-2 convs. Each stream keeps
// its own channel count and compresses back to it.

template <typename T>
struct DSDFBlock {
  std::int64_t channels_a = 0, channels_b = 0, growth = 0;
  T w = static_cast<T>(kResidualScale);
  std::array<std::vector<DenseLayer<T>>, 2> layers;  // 0 = fine, 1 = coarse
  std::vector<Conv2d<T>> down;                       // g->g stride-2, one per round
  std::array<Conv2d<T>, 2> compress;

  DSDFBlock() = default;
  DSDFBlock(std::int64_t ca, std::int64_t cb, std::int64_t g, Rng& rng)
      : channels_a(ca), channels_b(cb), growth(g) {
    for (int j = 1; j <= kDenseLayers; ++j)
      layers[0].emplace_back(ca + 2 * (j - 1) * g, g, rng);
    for (int j = 1; j <= kDenseLayers; ++j)
      layers[1].emplace_back(cb + 2 * (j - 1) * g, g, rng);
    for (int j = 1; j <= kDenseLayers; ++j) down.emplace_back(g, g, 3, 2, 1, rng);
    compress[0] = Conv2d<T>(ca + 2 * kDenseLayers * g, ca, 1, 1, 0, rng);
    compress[1] = Conv2d<T>(cb + 2 * kDenseLayers * g, cb, 1, 1, 0, rng);
  }

  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& x_fine, const Tensor<T>& x_coarse,
                                          bool training) {
    if (x_fine.dim(2) != 2 * x_coarse.dim(2) || x_fine.dim(3) != 2 * x_coarse.dim(3))
      throw DimensionError("DSDFBlock: coarse input " + shape_str(x_coarse.shape()) +
                           " is not half the fine input " + shape_str(x_fine.shape()));
    if (x_fine.dim(1) != channels_a || x_coarse.dim(1) != channels_b)
      throw DimensionError("DSDFBlock: channel counts do not match configuration");

    std::vector<Tensor<T>> fa{x_fine}, fb{x_coarse};
    std::vector<Tensor<T>> up_b, down_a;  // partner views, index k-1 for F_k
    for (int j = 1; j <= kDenseLayers; ++j) {
      std::vector<Tensor<T>> cat_a(fa.begin(), fa.end());
      for (int k = 1; k < j; ++k) cat_a.push_back(up_b[static_cast<std::size_t>(k - 1)]);
      std::vector<Tensor<T>> cat_b(fb.begin(), fb.end());
      for (int k = 1; k < j; ++k) cat_b.push_back(down_a[static_cast<std::size_t>(k - 1)]);
      auto na = layers[0][static_cast<std::size_t>(j - 1)].forward(
          cat_a.size() == 1 ? cat_a[0] : concat_channels(cat_a), training);
      auto nb = layers[1][static_cast<std::size_t>(j - 1)].forward(
          cat_b.size() == 1 ? cat_b[0] : concat_channels(cat_b), training);
      fa.push_back(na);
      fb.push_back(nb);
      up_b.push_back(upsample2x_bilinear(nb));
      down_a.push_back(down[static_cast<std::size_t>(j - 1)].forward(na));
    }

    std::vector<Tensor<T>> cat_a(fa.begin(), fa.end());
    cat_a.insert(cat_a.end(), up_b.begin(), up_b.end());
    std::vector<Tensor<T>> cat_b(fb.begin(), fb.end());
    cat_b.insert(cat_b.end(), down_a.begin(), down_a.end());
    auto ya = add(scalar_mul(compress[0].forward(concat_channels(cat_a)), w), fa[0]);
    auto yb = add(scalar_mul(compress[1].forward(concat_channels(cat_b)), w), fb[0]);
    return {ya, yb};
  }

  void visit_params(const std::string& p, const ParamVisitor<T>& fn) {
    for (int s = 0; s < 2; ++s) {
      const std::string sp = p + (s == 0 ? ".fine" : ".coarse");
      for (int j = 0; j < kDenseLayers; ++j)
        layers[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)].visit_params(
            sp + ".dense" + std::to_string(j), fn);
    }
    for (int j = 0; j < kDenseLayers; ++j)
      down[static_cast<std::size_t>(j)].visit_params(p + ".down" + std::to_string(j), fn);
    compress[0].visit_params(p + ".fine.compress", fn);
    compress[1].visit_params(p + ".coarse.compress", fn);
  }
  void visit_buffers(const std::string& p, const ParamVisitor<T>& fn) {
    for (int s = 0; s < 2; ++s) {
      const std::string sp = p + (s == 0 ? ".fine" : ".coarse");
      for (int j = 0; j < kDenseLayers; ++j)
        layers[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)].visit_buffers(
            sp + ".dense" + std::to_string(j), fn);
    }
  }

  void zero_dense_weights() {
    for (auto& stream : layers)
      for (auto& l : stream) l.conv.zero_weights();
    for (auto& d : down) d.zero_weights();
    for (auto& c : compress) c.zero_weights();
  }
};

// ---------------------------------------------------------------------------
// Classification head: global average pool -> fully connected logits.

template <typename T>
struct ClassHead {
  LinearLayer<T> fc;
  std::int64_t channels = 0, num_classes = 0;

  ClassHead() = default;
  ClassHead(std::int64_t c, std::int64_t classes, Rng& rng)
      : fc(c, classes, rng), channels(c), num_classes(classes) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    auto pooled = adaptive_avg_pool(x);
    return fc.forward(reshape(pooled, {x.dim(0), channels}));
  }

  void visit_params(const std::string& p, const ParamVisitor<T>& fn) {
    fc.visit_params(p + ".fc", fn);
  }
};

}  // namespace wid
