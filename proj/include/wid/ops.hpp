// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "wid/gemm.hpp"
#include "wid/tensor.hpp"

namespace wid {

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride,
                                 std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Scatter x [C,H,W] into columns [C*k*k, OH*OW].
template <typename T>
void im2col(const T* x, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t k,
            std::int64_t stride, std::int64_t pad, std::int64_t OH, std::int64_t OW, T* col) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        T* dst = col + ((c * k + ki) * k + kj) * OH * OW;
        for (std::int64_t oh = 0; oh < OH; ++oh) {
          const std::int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) {
            std::memset(dst + oh * OW, 0, static_cast<std::size_t>(OW) * sizeof(T));
            continue;
          }
          const T* src = x + (c * H + ih) * W;
          const std::int64_t base = -pad + kj;
          if (stride == 1) {
            for (std::int64_t ow = 0; ow < OW; ++ow) {
              const std::int64_t iw = base + ow;
              dst[oh * OW + ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
            }
          } else {
            for (std::int64_t ow = 0; ow < OW; ++ow) {
              const std::int64_t iw = base + ow * stride;
              dst[oh * OW + ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
            }
          }
        }
      }
    }
  }
}

// Inverse of im2col: accumulate columns back into the image.
template <typename T>
void col2im_acc(const T* col, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t k,
                std::int64_t stride, std::int64_t pad, std::int64_t OH, std::int64_t OW, T* x) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const T* src = col + ((c * k + ki) * k + kj) * OH * OW;
        for (std::int64_t oh = 0; oh < OH; ++oh) {
          const std::int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) continue;
          T* dst = x + (c * H + ih) * W;
          for (std::int64_t ow = 0; ow < OW; ++ow) {
            const std::int64_t iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < W) dst[iw] += src[oh * OW + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

// -------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::int64_t stride = 1, std::int64_t pad = 0) {
  detail::require(input.rank() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  detail::require(weight.rank() == 4, "conv2d: weight must be [Cout,Cin,k,k], got " + shape_str(weight.shape()));
  const std::int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::int64_t Cout = weight.dim(0), k = weight.dim(2);
  detail::require(weight.dim(1) == C, "conv2d: input has " + std::to_string(C) +
                                          " channels but weight expects " + std::to_string(weight.dim(1)));
  detail::require(weight.dim(3) == k, "conv2d: kernel must be square");
  detail::require(k >= 1, "conv2d: kernel size must be >= 1");
  detail::require(H + 2 * pad >= k && W + 2 * pad >= k,
                  "conv2d: kernel does not fit padded input");
  detail::require(bias.rank() == 1 && bias.dim(0) == Cout, "conv2d: bias must be [Cout]");
  const std::int64_t OH = detail::conv_out_dim(H, k, stride, pad);
  const std::int64_t OW = detail::conv_out_dim(W, k, stride, pad);
  const std::int64_t K = C * k * k;
  const std::int64_t P = OH * OW;

  Tensor<T> out = detail::make_op_output<T>(
      {N, Cout, OH, OW}, {input, weight, bias},
      [input, weight, bias, stride, pad, N, C, H, W, Cout, k, OH, OW, K,
       P](detail::TensorImpl<T>& self) {
        const bool need_dx = input.requires_grad();
        const bool need_dw = weight.requires_grad();
        const bool need_db = bias.requires_grad();
        std::vector<T> col(static_cast<std::size_t>(K * P));
        std::vector<T> wt;
        if (need_dx) {
          wt.resize(static_cast<std::size_t>(K * Cout));
          const T* w = weight.data();
          for (std::int64_t m = 0; m < Cout; ++m)
            for (std::int64_t kk = 0; kk < K; ++kk) wt[static_cast<std::size_t>(kk * Cout + m)] = w[m * K + kk];
        }
        std::vector<T> dcol(need_dx ? static_cast<std::size_t>(K * P) : 0);
        for (std::int64_t n = 0; n < N; ++n) {
          const T* dy = self.grad.data() + n * Cout * P;
          if (need_dw || need_dx)
            detail::im2col(input.data() + n * C * H * W, C, H, W, k, stride, pad, OH, OW, col.data());
          if (need_dw) gemm_nt(Cout, P, K, dy, col.data(), weight.impl()->grad.data());
          if (need_db) {
            T* db = bias.impl()->grad.data();
            for (std::int64_t m = 0; m < Cout; ++m) {
              T acc = T(0);
              for (std::int64_t p = 0; p < P; ++p) acc += dy[m * P + p];
              db[m] += acc;
            }
          }
          if (need_dx) {
            std::fill(dcol.begin(), dcol.end(), T(0));
            gemm_nn(K, Cout, P, wt.data(), dy, dcol.data());
            detail::col2im_acc(dcol.data(), C, H, W, k, stride, pad, OH, OW,
                               input.impl()->grad.data() + n * C * H * W);
          }
        }
      });

  std::vector<T> col(static_cast<std::size_t>(K * P));
  for (std::int64_t n = 0; n < N; ++n) {
    detail::im2col(input.data() + n * C * H * W, C, H, W, k, stride, pad, OH, OW, col.data());
    T* y = out.data() + n * Cout * P;
    gemm_nn(Cout, K, P, weight.data(), col.data(), y);
    for (std::int64_t m = 0; m < Cout; ++m) {
      const T b = bias.data()[m];
      for (std::int64_t p = 0; p < P; ++p) y[m * P + p] += b;
    }
  }
  detail::check_finite(out, "conv2d");
  return out;
}

// -------------------------------------------------------------------------
// Batch normalization over [N,C,H,W], statistics per channel.

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                      double momentum = 0.1, double eps = 1e-5) {
  detail::require(input.rank() == 4, "batchnorm2d: input must be [N,C,H,W]");
  const std::int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  detail::require(gamma.numel() == C && beta.numel() == C, "batchnorm2d: gamma/beta must be [C]");
  const std::int64_t M = N * H * W;  // samples per channel
  if (training && M < 2)
    throw DimensionError("batchnorm2d: degenerate batch, need N*H*W >= 2 in train mode");

  std::vector<T> mean(static_cast<std::size_t>(C)), istd(static_cast<std::size_t>(C));
  const std::int64_t plane = H * W;
  if (training) {
    for (std::int64_t c = 0; c < C; ++c) {
      double sum = 0, sq = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* p = input.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          sum += static_cast<double>(p[i]);
          sq += static_cast<double>(p[i]) * static_cast<double>(p[i]);
        }
      }
      const double mu = sum / static_cast<double>(M);
      const double var = sq / static_cast<double>(M) - mu * mu;
      mean[static_cast<std::size_t>(c)] = static_cast<T>(mu);
      istd[static_cast<std::size_t>(c)] = static_cast<T>(1.0 / std::sqrt(var + eps));
      running_mean.data()[c] =
          static_cast<T>((1.0 - momentum) * static_cast<double>(running_mean.data()[c]) + momentum * mu);
      running_var.data()[c] =
          static_cast<T>((1.0 - momentum) * static_cast<double>(running_var.data()[c]) + momentum * var);
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[static_cast<std::size_t>(c)] = running_mean.data()[c];
      istd[static_cast<std::size_t>(c)] =
          static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var.data()[c]) + eps));
    }
  }

  Tensor<T> out = detail::make_op_output<T>(
      input.shape(), {input, gamma, beta},
      [input, gamma, beta, mean, istd, training, N, C, plane, M](detail::TensorImpl<T>& self) {
        for (std::int64_t c = 0; c < C; ++c) {
          const T mu = mean[static_cast<std::size_t>(c)];
          const T is = istd[static_cast<std::size_t>(c)];
          const T g = gamma.data()[c];
          double sum_dy = 0, sum_dy_xhat = 0;
          for (std::int64_t n = 0; n < N; ++n) {
            const T* dy = self.grad.data() + (n * C + c) * plane;
            const T* x = input.data() + (n * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              sum_dy += static_cast<double>(dy[i]);
              sum_dy_xhat += static_cast<double>(dy[i]) * static_cast<double>((x[i] - mu) * is);
            }
          }
          if (gamma.requires_grad()) gamma.impl()->grad[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy_xhat);
          if (beta.requires_grad()) beta.impl()->grad[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy);
          if (!input.requires_grad()) continue;
          const double inv_m = 1.0 / static_cast<double>(M);
          for (std::int64_t n = 0; n < N; ++n) {
            const T* dy = self.grad.data() + (n * C + c) * plane;
            const T* x = input.data() + (n * C + c) * plane;
            T* dx = input.impl()->grad.data() + (n * C + c) * plane;
            if (training) {
              for (std::int64_t i = 0; i < plane; ++i) {
                const double xhat = static_cast<double>((x[i] - mu) * is);
                dx[i] += static_cast<T>(static_cast<double>(g) * static_cast<double>(is) *
                                        (static_cast<double>(dy[i]) - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat));
              }
            } else {
              for (std::int64_t i = 0; i < plane; ++i) dx[i] += dy[i] * g * is;
            }
          }
        }
      });

  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T mu = mean[static_cast<std::size_t>(c)];
      const T is = istd[static_cast<std::size_t>(c)];
      const T g = gamma.data()[c];
      const T b = beta.data()[c];
      const T* x = input.data() + (n * C + c) * plane;
      T* y = out.data() + (n * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) y[i] = (x[i] - mu) * is * g + b;
    }
  }
  detail::check_finite(out, "batchnorm2d");
  return out;
}

// -------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = detail::make_op_output<T>(input.shape(), {input}, [input](detail::TensorImpl<T>& self) {
    if (!input.requires_grad()) return;
    T* dx = input.impl()->grad.data();
    const T* x = input.data();
    const T* dy = self.grad.data();
    const std::int64_t n = input.numel();
    for (std::int64_t i = 0; i < n; ++i)
      if (x[i] > T(0)) dx[i] += dy[i];
  });
  const T* x = input.data();
  T* y = out.data();
  const std::int64_t n = input.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  Tensor<T> out = detail::make_op_output<T>(input.shape(), {input}, [input](detail::TensorImpl<T>& self) {
    if (!input.requires_grad()) return;
    T* dx = input.impl()->grad.data();
    const T* y = self.data.data();
    const T* dy = self.grad.data();
    const std::int64_t n = input.numel();
    for (std::int64_t i = 0; i < n; ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
  });
  const T* x = input.data();
  T* y = out.data();
  const std::int64_t n = input.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
  detail::check_finite(out, "sigmoid");
  return out;
}

// -------------------------------------------------------------------------
// Pooling

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::int64_t k, std::int64_t stride) {
  detail::require(input.rank() == 4, "maxpool2d: input must be [N,C,H,W]");
  const std::int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (k == stride)
    detail::require(H % stride == 0 && W % stride == 0,
                    "maxpool2d: " + std::to_string(H) + "x" + std::to_string(W) +
                        " not divisible by stride " + std::to_string(stride));
  const std::int64_t OH = H / stride, OW = W / stride;
  const std::int64_t P = OH * OW;

  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(N * C * P));
  Tensor<T> out = detail::make_op_output<T>(
      {N, C, OH, OW}, {input}, [input, argmax](detail::TensorImpl<T>& self) {
        if (!input.requires_grad()) return;
        T* dx = input.impl()->grad.data();
        const T* dy = self.grad.data();
        const std::size_t n = argmax->size();
        for (std::size_t i = 0; i < n; ++i) dx[(*argmax)[i]] += dy[i];
      });

  const T* x = input.data();
  T* y = out.data();
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const std::int64_t base = (n * C + c) * H * W;
      for (std::int64_t oh = 0; oh < OH; ++oh) {
        for (std::int64_t ow = 0; ow < OW; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          for (std::int64_t ki = 0; ki < k; ++ki) {
            for (std::int64_t kj = 0; kj < k; ++kj) {
              const std::int64_t ih = oh * stride + ki, iw = ow * stride + kj;
              if (ih >= H || iw >= W) continue;
              const std::int64_t idx = base + ih * W + iw;
              if (x[idx] > best) {
                best = x[idx];
                best_idx = idx;
              }
            }
          }
          const std::int64_t o = ((n * C + c) * OH + oh) * OW + ow;
          y[o] = best;
          (*argmax)[static_cast<std::size_t>(o)] = best_idx;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& input) {
  detail::require(input.rank() == 4, "adaptive_avg_pool: input must be [N,C,H,W]");
  const std::int64_t N = input.dim(0), C = input.dim(1), plane = input.dim(2) * input.dim(3);
  Tensor<T> out = detail::make_op_output<T>(
      {N, C, 1, 1}, {input}, [input, N, C, plane](detail::TensorImpl<T>& self) {
        if (!input.requires_grad()) return;
        T* dx = input.impl()->grad.data();
        const T* dy = self.grad.data();
        const T scale = T(1) / static_cast<T>(plane);
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
          const T g = dy[nc] * scale;
          T* p = dx + nc * plane;
          for (std::int64_t i = 0; i < plane; ++i) p[i] += g;
        }
      });
  const T* x = input.data();
  T* y = out.data();
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    double acc = 0;
    const T* p = x + nc * plane;
    for (std::int64_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
    y[nc] = static_cast<T>(acc / static_cast<double>(plane));
  }
  return out;
}

// -------------------------------------------------------------------------
// Linear / reshape

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require(input.rank() == 2, "linear: input must be [N,F]");
  const std::int64_t N = input.dim(0), F = input.dim(1);
  const std::int64_t O = weight.dim(0);
  detail::require(weight.rank() == 2 && weight.dim(1) == F,
                  "linear: weight " + shape_str(weight.shape()) + " incompatible with input " +
                      shape_str(input.shape()));
  detail::require(bias.numel() == O, "linear: bias must be [out]");

  Tensor<T> out = detail::make_op_output<T>(
      {N, O}, {input, weight, bias}, [input, weight, bias, N, F, O](detail::TensorImpl<T>& self) {
        const T* dy = self.grad.data();
        if (weight.requires_grad()) gemm_tn(N, O, F, dy, input.data(), weight.impl()->grad.data());
        if (bias.requires_grad()) {
          T* db = bias.impl()->grad.data();
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t o = 0; o < O; ++o) db[o] += dy[n * O + o];
        }
        if (input.requires_grad()) gemm_nn(N, O, F, dy, weight.data(), input.impl()->grad.data());
      });

  T* y = out.data();
  gemm_nt(N, F, O, input.data(), weight.data(), y);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t o = 0; o < O; ++o) y[n * O + o] += bias.data()[o];
  detail::check_finite(out, "linear");
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape) {
  detail::require(shape_numel(shape) == input.numel(),
                  "reshape: cannot view " + shape_str(input.shape()) + " as " + shape_str(shape));
  Tensor<T> out = detail::make_op_output<T>(shape, {input}, [input](detail::TensorImpl<T>& self) {
    if (!input.requires_grad()) return;
    T* dx = input.impl()->grad.data();
    const T* dy = self.grad.data();
    const std::int64_t n = input.numel();
    for (std::int64_t i = 0; i < n; ++i) dx[i] += dy[i];
  });
  std::memcpy(out.data(), input.data(), static_cast<std::size_t>(input.numel()) * sizeof(T));
  return out;
}

// -------------------------------------------------------------------------
// Elementwise and structural ops

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                              shape_str(b.shape()));
  Tensor<T> out = detail::make_op_output<T>(a.shape(), {a, b}, [a, b](detail::TensorImpl<T>& self) {
    const T* dy = self.grad.data();
    const std::int64_t n = self.numel();
    if (a.requires_grad()) {
      T* da = a.impl()->grad.data();
      for (std::int64_t i = 0; i < n; ++i) da[i] += dy[i];
    }
    if (b.requires_grad()) {
      T* db = b.impl()->grad.data();
      for (std::int64_t i = 0; i < n; ++i) db[i] += dy[i];
    }
  });
  const T* pa = a.data();
  const T* pb = b.data();
  T* y = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = pa[i] + pb[i];
  return out;
}

// Elementwise product. Either both shapes match, or b is [N,1,H,W] and is
// broadcast across a's channels (the attention-gating case).
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool broadcast = a.shape() != b.shape();
  if (broadcast) {
    detail::require(a.rank() == 4 && b.rank() == 4 && b.dim(1) == 1 && a.dim(0) == b.dim(0) &&
                        a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
                    "mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                        " are neither equal nor channel-broadcastable");
  }
  const std::int64_t n = a.numel();
  Tensor<T> out = detail::make_op_output<T>(
      a.shape(), {a, b}, [a, b, broadcast](detail::TensorImpl<T>& self) {
        const T* dy = self.grad.data();
        const T* pa = a.data();
        const T* pb = b.data();
        if (!broadcast) {
          const std::int64_t n = self.numel();
          if (a.requires_grad()) {
            T* da = a.impl()->grad.data();
            for (std::int64_t i = 0; i < n; ++i) da[i] += dy[i] * pb[i];
          }
          if (b.requires_grad()) {
            T* db = b.impl()->grad.data();
            for (std::int64_t i = 0; i < n; ++i) db[i] += dy[i] * pa[i];
          }
          return;
        }
        const std::int64_t N = a.dim(0), C = a.dim(1), plane = a.dim(2) * a.dim(3);
        if (a.requires_grad()) {
          T* da = a.impl()->grad.data();
          for (std::int64_t nn = 0; nn < N; ++nn)
            for (std::int64_t c = 0; c < C; ++c) {
              const std::int64_t off = (nn * C + c) * plane;
              const T* m = pb + nn * plane;
              for (std::int64_t i = 0; i < plane; ++i) da[off + i] += dy[off + i] * m[i];
            }
        }
        if (b.requires_grad()) {
          T* db = b.impl()->grad.data();
          for (std::int64_t nn = 0; nn < N; ++nn)
            for (std::int64_t c = 0; c < C; ++c) {
              const std::int64_t off = (nn * C + c) * plane;
              T* m = db + nn * plane;
              for (std::int64_t i = 0; i < plane; ++i) m[i] += dy[off + i] * pa[off + i];
            }
        }
      });
  const T* pa = a.data();
  const T* pb = b.data();
  T* y = out.data();
  if (!broadcast) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = pa[i] * pb[i];
  } else {
    const std::int64_t N = a.dim(0), C = a.dim(1), plane = a.dim(2) * a.dim(3);
    for (std::int64_t nn = 0; nn < N; ++nn)
      for (std::int64_t c = 0; c < C; ++c) {
        const std::int64_t off = (nn * C + c) * plane;
        const T* m = pb + nn * plane;
        for (std::int64_t i = 0; i < plane; ++i) y[off + i] = pa[off + i] * m[i];
      }
  }
  return out;
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T s) {
  Tensor<T> out = detail::make_op_output<T>(a.shape(), {a}, [a, s](detail::TensorImpl<T>& self) {
    if (!a.requires_grad()) return;
    T* da = a.impl()->grad.data();
    const T* dy = self.grad.data();
    const std::int64_t n = self.numel();
    for (std::int64_t i = 0; i < n; ++i) da[i] += dy[i] * s;
  });
  const T* pa = a.data();
  T* y = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = pa[i] * s;
  return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_channels: no inputs");
  const std::int64_t N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
  std::int64_t Ctot = 0;
  for (const auto& p : parts) {
    detail::require(p.rank() == 4 && p.dim(0) == N && p.dim(2) == H && p.dim(3) == W,
                    "concat_channels: spatial/batch mismatch at " + shape_str(p.shape()));
    Ctot += p.dim(1);
  }
  const std::int64_t plane = H * W;
  Tensor<T> out = detail::make_op_output<T>(
      {N, Ctot, H, W}, parts, [parts, N, Ctot, plane](detail::TensorImpl<T>& self) {
        const T* dy = self.grad.data();
        std::int64_t c0 = 0;
        for (const auto& p : parts) {
          const std::int64_t C = p.dim(1);
          if (p.requires_grad()) {
            T* dp = p.impl()->grad.data();
            for (std::int64_t n = 0; n < N; ++n)
              for (std::int64_t c = 0; c < C; ++c) {
                const T* src = dy + ((n * Ctot + c0 + c) * plane);
                T* dst = dp + ((n * C + c) * plane);
                for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i];
              }
          }
          c0 += C;
        }
      });
  T* y = out.data();
  std::int64_t c0 = 0;
  for (const auto& p : parts) {
    const std::int64_t C = p.dim(1);
    for (std::int64_t n = 0; n < N; ++n)
      std::memcpy(y + ((n * Ctot + c0) * plane), p.data() + n * C * plane,
                  static_cast<std::size_t>(C * plane) * sizeof(T));
    c0 += C;
  }
  return out;
}

// Columns [w0, w1) of a [N,C,H,W] tensor.
template <typename T>
Tensor<T> slice_width(const Tensor<T>& input, std::int64_t w0, std::int64_t w1) {
  detail::require(input.rank() == 4, "slice_width: input must be [N,C,H,W]");
  const std::int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  detail::require(0 <= w0 && w0 < w1 && w1 <= W, "slice_width: bad range");
  const std::int64_t SW = w1 - w0;
  Tensor<T> out = detail::make_op_output<T>(
      {N, C, H, SW}, {input}, [input, w0, SW, N, C, H, W](detail::TensorImpl<T>& self) {
        if (!input.requires_grad()) return;
        T* dx = input.impl()->grad.data();
        const T* dy = self.grad.data();
        for (std::int64_t nch = 0; nch < N * C * H; ++nch) {
          T* dst = dx + nch * W + w0;
          const T* src = dy + nch * SW;
          for (std::int64_t i = 0; i < SW; ++i) dst[i] += src[i];
        }
      });
  T* y = out.data();
  const T* x = input.data();
  for (std::int64_t nch = 0; nch < N * C * H; ++nch)
    std::memcpy(y + nch * SW, x + nch * W + w0, static_cast<std::size_t>(SW) * sizeof(T));
  return out;
}

// 2x bilinear upsampling with half-pixel centers, clamped at borders.
template <typename T>
Tensor<T> upsample2x_bilinear(const Tensor<T>& input) {
  detail::require(input.rank() == 4, "upsample2x_bilinear: input must be [N,C,H,W]");
  const std::int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::int64_t OH = 2 * H, OW = 2 * W;

  // Per-axis taps: out coordinate o samples src (o+0.5)/2 - 0.5.
  auto make_taps = [](std::int64_t in, std::int64_t out) {
    std::vector<std::int64_t> lo(static_cast<std::size_t>(out));
    std::vector<double> wlo(static_cast<std::size_t>(out));
    for (std::int64_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
      if (src < 0) src = 0;
      if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
      std::int64_t l = static_cast<std::int64_t>(std::floor(src));
      if (l > in - 2) l = in - 2;
      if (l < 0) l = 0;
      double frac = src - static_cast<double>(l);
      lo[static_cast<std::size_t>(o)] = in == 1 ? 0 : l;
      wlo[static_cast<std::size_t>(o)] = in == 1 ? 1.0 : 1.0 - frac;
    }
    return std::make_pair(lo, wlo);
  };
  auto [hlo, hw] = make_taps(H, OH);
  auto [wlo, ww] = make_taps(W, OW);

  Tensor<T> out = detail::make_op_output<T>(
      {N, C, OH, OW}, {input},
      [input, hlo, hw, wlo, ww, N, C, H, W, OH, OW](detail::TensorImpl<T>& self) {
        if (!input.requires_grad()) return;
        T* dx = input.impl()->grad.data();
        const T* dy = self.grad.data();
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
          T* dplane = dx + nc * H * W;
          const T* gplane = dy + nc * OH * OW;
          for (std::int64_t oh = 0; oh < OH; ++oh) {
            const std::int64_t h0 = hlo[static_cast<std::size_t>(oh)];
            const std::int64_t h1 = H == 1 ? h0 : h0 + 1;
            const double fh = hw[static_cast<std::size_t>(oh)];
            for (std::int64_t ow = 0; ow < OW; ++ow) {
              const std::int64_t w0 = wlo[static_cast<std::size_t>(ow)];
              const std::int64_t w1 = W == 1 ? w0 : w0 + 1;
              const double fw = ww[static_cast<std::size_t>(ow)];
              const T g = gplane[oh * OW + ow];
              dplane[h0 * W + w0] += static_cast<T>(fh * fw) * g;
              dplane[h0 * W + w1] += static_cast<T>(fh * (1 - fw)) * g;
              dplane[h1 * W + w0] += static_cast<T>((1 - fh) * fw) * g;
              dplane[h1 * W + w1] += static_cast<T>((1 - fh) * (1 - fw)) * g;
            }
          }
        }
      });

  const T* x = input.data();
  T* y = out.data();
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = x + nc * H * W;
    T* oplane = y + nc * OH * OW;
    for (std::int64_t oh = 0; oh < OH; ++oh) {
      const std::int64_t h0 = hlo[static_cast<std::size_t>(oh)];
      const std::int64_t h1 = H == 1 ? h0 : h0 + 1;
      const double fh = hw[static_cast<std::size_t>(oh)];
      for (std::int64_t ow = 0; ow < OW; ++ow) {
        const std::int64_t w0 = wlo[static_cast<std::size_t>(ow)];
        const std::int64_t w1 = W == 1 ? w0 : w0 + 1;
        const double fw = ww[static_cast<std::size_t>(ow)];
        const double v = fh * fw * static_cast<double>(plane[h0 * W + w0]) +
                         fh * (1 - fw) * static_cast<double>(plane[h0 * W + w1]) +
                         (1 - fh) * fw * static_cast<double>(plane[h1 * W + w0]) +
                         (1 - fh) * (1 - fw) * static_cast<double>(plane[h1 * W + w1]);
        oplane[oh * OW + ow] = static_cast<T>(v);
      }
    }
  }
  return out;
}

// Stride-2 downsampling: wrapper naming the DSDF cross-scale path.
template <typename T>
Tensor<T> downsample2x_conv(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  return conv2d(input, weight, bias, /*stride=*/2, /*pad=*/1);
}

// Reduce to a scalar [1]; grad broadcasts back uniformly.
template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  Tensor<T> out = detail::make_op_output<T>({1}, {input}, [input](detail::TensorImpl<T>& self) {
    if (!input.requires_grad()) return;
    T* dx = input.impl()->grad.data();
    const T g = self.grad[0];
    const std::int64_t n = input.numel();
    for (std::int64_t i = 0; i < n; ++i) dx[i] += g;
  });
  double acc = 0;
  const T* x = input.data();
  const std::int64_t n = input.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]);
  out.data()[0] = static_cast<T>(acc);
  return out;
}

// -------------------------------------------------------------------------
// Softmax / loss

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  detail::require(logits.rank() == 2, "softmax: input must be [N,classes]");
  const std::int64_t N = logits.dim(0), C = logits.dim(1);
  Tensor<T> out = detail::make_op_output<T>(
      logits.shape(), {logits}, [logits, N, C](detail::TensorImpl<T>& self) {
        if (!logits.requires_grad()) return;
        T* dx = logits.impl()->grad.data();
        const T* s = self.data.data();
        const T* dy = self.grad.data();
        for (std::int64_t n = 0; n < N; ++n) {
          double dot = 0;
          for (std::int64_t c = 0; c < C; ++c)
            dot += static_cast<double>(dy[n * C + c]) * static_cast<double>(s[n * C + c]);
          for (std::int64_t c = 0; c < C; ++c)
            dx[n * C + c] += s[n * C + c] * static_cast<T>(static_cast<double>(dy[n * C + c]) - dot);
        }
      });
  const T* x = logits.data();
  T* y = out.data();
  for (std::int64_t n = 0; n < N; ++n) {
    T mx = x[n * C];
    for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, x[n * C + c]);
    double denom = 0;
    for (std::int64_t c = 0; c < C; ++c) {
      const double e = std::exp(static_cast<double>(x[n * C + c] - mx));
      y[n * C + c] = static_cast<T>(e);
      denom += e;
    }
    for (std::int64_t c = 0; c < C; ++c) y[n * C + c] = static_cast<T>(static_cast<double>(y[n * C + c]) / denom);
  }
  detail::check_finite(out, "softmax");
  return out;
}

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::int64_t>& labels) {
  detail::require(logits.rank() == 2, "cross_entropy: logits must be [N,classes]");
  const std::int64_t N = logits.dim(0), C = logits.dim(1);
  detail::require(static_cast<std::int64_t>(labels.size()) == N,
                  "cross_entropy: got " + std::to_string(labels.size()) + " labels for batch " +
                      std::to_string(N));
  for (auto l : labels)
    if (l < 0 || l >= C)
      throw ValueError("cross_entropy: label " + std::to_string(l) + " outside [0," + std::to_string(C) + ")");

  // Save softmax probabilities for the backward pass.
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N * C));
  Tensor<T> out = detail::make_op_output<T>(
      {1}, {logits}, [logits, labels, probs, N, C](detail::TensorImpl<T>& self) {
        if (!logits.requires_grad()) return;
        T* dx = logits.impl()->grad.data();
        const T g = self.grad[0] / static_cast<T>(N);
        for (std::int64_t n = 0; n < N; ++n) {
          for (std::int64_t c = 0; c < C; ++c) {
            T p = (*probs)[static_cast<std::size_t>(n * C + c)];
            if (c == labels[static_cast<std::size_t>(n)]) p -= T(1);
            dx[n * C + c] += g * p;
          }
        }
      });

  const T* x = logits.data();
  double loss = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    T mx = x[n * C];
    for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, x[n * C + c]);
    double denom = 0;
    for (std::int64_t c = 0; c < C; ++c) denom += std::exp(static_cast<double>(x[n * C + c] - mx));
    const double log_denom = std::log(denom);
    for (std::int64_t c = 0; c < C; ++c) {
      (*probs)[static_cast<std::size_t>(n * C + c)] =
          static_cast<T>(std::exp(static_cast<double>(x[n * C + c] - mx)) / denom);
    }
    const std::int64_t l = labels[static_cast<std::size_t>(n)];
    loss += -(static_cast<double>(x[n * C + l] - mx) - log_denom);
  }
  out.data()[0] = static_cast<T>(loss / static_cast<double>(N));
  detail::check_finite(out, "cross_entropy");
  return out;
}

}  // namespace wid
