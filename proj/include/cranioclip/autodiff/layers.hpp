#pragma once

// Layer primitives for the segmentation network, NCHW layout throughout.
// Convolutions are cross-correlations (no kernel flip) lowered to GEMM.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "cranioclip/autodiff/gemm.hpp"
#include "cranioclip/autodiff/tensor.hpp"
#include "cranioclip/error.hpp"

namespace cranioclip::ad {

namespace detail {

// Sum of f(i) for i < n in double, over 8 interleaved partial sums. The
// summation order is fixed, so results do not depend on the build.
template <typename F>
double lane_sum(std::size_t n, F f) {
  double acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t j = 0; j < 8; ++j) acc[j] += f(i + j);
  for (; i < n; ++i) acc[i % 8] += f(i);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

inline void require_rank4(const Shape& s, const char* what) {
  require(s.size() == 4, ErrorCode::ShapeMismatch, std::string(what) + " expects an NCHW tensor");
}

// Output columns ox whose input column ox * stride + kx - pad lies inside [0, W).
inline std::pair<std::size_t, std::size_t> valid_cols(std::size_t W, std::size_t Wo, std::size_t kx,
                                                      std::size_t stride, long pad) {
  const long off = static_cast<long>(kx) - pad;
  const long s = static_cast<long>(stride);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (static_cast<long>(W) - 1 - off) / s + 1;
  if (static_cast<long>(W) - 1 - off < 0) hi = 0;
  lo = std::min<long>(lo, static_cast<long>(Wo));
  hi = std::clamp<long>(hi, lo, static_cast<long>(Wo));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <typename T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
            std::size_t stride, std::size_t Ho, std::size_t Wo, T* col) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t P = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * P;
        const T* plane = x + c * H * W;
        const auto [lo, hi] = valid_cols(W, Wo, kx, stride, pad);
        const long off = static_cast<long>(kx) - pad;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - pad;
          T* dst = row + oy * Wo;
          if (iy < 0 || iy >= static_cast<long>(H)) {
            std::fill(dst, dst + Wo, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * W;
          std::fill(dst, dst + lo, T{0});
          if (stride == 1) {
            std::copy(src + (static_cast<long>(lo) + off), src + (static_cast<long>(hi) + off), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox)
              dst[ox] = src[static_cast<long>(ox * stride) + off];
          }
          std::fill(dst + hi, dst + Wo, T{0});
        }
      }
}

template <typename T>
void col2im_add(const T* col, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
                std::size_t stride, std::size_t Ho, std::size_t Wo, T* dx) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t P = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * P;
        T* plane = dx + c * H * W;
        const auto [lo, hi] = valid_cols(W, Wo, kx, stride, pad);
        const long off = static_cast<long>(kx) - pad;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * W;
          const T* src = row + oy * Wo;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[static_cast<long>(ox * stride) + off] += src[ox];
        }
      }
}

template <typename T>
void add_bias_grad(const std::vector<T>& dy, std::size_t N, std::size_t F, std::size_t P,
                   std::vector<T>& db) {
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f) {
      const T* g = dy.data() + (n * F + f) * P;
      T acc{0};
      for (std::size_t p = 0; p < P; ++p) acc += g[p];
      db[f] += acc;
    }
}

}  // namespace detail

/// 'same' zero-padded k x k convolution (k odd) with optional stride.
/// Output spatial size is ceil-free (H + 2*(k/2) - k) / stride + 1, i.e. H for
/// stride 1 and H/2 for stride 2 on even H.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::optional<Tensor<T>>& b,
                 std::size_t stride = 1) {
  detail::require_rank4(x.shape(), "conv2d input");
  detail::require_rank4(w.shape(), "conv2d kernel");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(0), k = w.dim(2);
  require(w.dim(1) == C, ErrorCode::ShapeMismatch,
          "conv2d kernel channels " + to_string(w.shape()) + " vs input " + to_string(x.shape()));
  require(k == w.dim(3) && k % 2 == 1, ErrorCode::ShapeMismatch, "conv2d kernel must be odd square");
  require(stride >= 1, ErrorCode::InvalidArgument, "stride must be >= 1");
  if (b) require(b->numel() == F, ErrorCode::ShapeMismatch, "conv2d bias length");
  const std::size_t pad = k / 2;
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - k) / stride + 1;
  const std::size_t P = Ho * Wo, K = C * k * k;

  std::vector<T> out(N * F * P);
  std::vector<T> col(K * P);
  for (std::size_t n = 0; n < N; ++n) {
    T* y = out.data() + n * F * P;
    if (k == 1 && stride == 1) {
      gemm(false, false, int(F), int(P), int(C), T{1}, w.values().data(), int(C),
           x.values().data() + n * C * H * W, int(P), T{0}, y, int(P));
    } else {
      detail::im2col(x.values().data() + n * C * H * W, C, H, W, k, stride, Ho, Wo, col.data());
      gemm(false, false, int(F), int(P), int(K), T{1}, w.values().data(), int(K), col.data(),
           int(P), T{0}, y, int(P));
    }
    if (b)
      for (std::size_t f = 0; f < F; ++f) {
        const T bf = b->values()[f];
        for (std::size_t p = 0; p < P; ++p) y[f * P + p] += bf;
      }
  }

  std::vector<Tensor<T>> inputs{x, w};
  if (b) inputs.push_back(*b);
  Shape shape{N, F, Ho, Wo};
  auto fn = [N, C, H, W, F, k, stride, Ho, Wo, P, K](Node<T>& self) {
    auto& nx = *self.inputs[0];
    auto& nw = *self.inputs[1];
    const bool direct = (k == 1 && stride == 1);
    std::vector<T> col(direct ? 0 : K * P);
    std::vector<T> dcol(direct ? 0 : K * P);
    for (std::size_t n = 0; n < N; ++n) {
      const T* dy = self.grad.data() + n * F * P;
      const T* xn = nx.value.data() + n * C * H * W;
      if (nw.requires_grad) {
        auto& gw = nw.ensure_grad();
        if (direct) {
          gemm(false, true, int(F), int(C), int(P), T{1}, dy, int(P), xn, int(P), T{1}, gw.data(),
               int(C));
        } else {
          detail::im2col(xn, C, H, W, k, stride, Ho, Wo, col.data());
          gemm(false, true, int(F), int(K), int(P), T{1}, dy, int(P), col.data(), int(P), T{1},
               gw.data(), int(K));
        }
      }
      if (nx.requires_grad) {
        auto& gx = nx.ensure_grad();
        T* dxn = gx.data() + n * C * H * W;
        if (direct) {
          gemm(true, false, int(C), int(P), int(F), T{1}, nw.value.data(), int(C), dy, int(P), T{1},
               dxn, int(P));
        } else {
          gemm(true, false, int(K), int(P), int(F), T{1}, nw.value.data(), int(K), dy, int(P), T{0},
               dcol.data(), int(P));
          detail::col2im_add(dcol.data(), C, H, W, k, stride, Ho, Wo, dxn);
        }
      }
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad)
      detail::add_bias_grad(self.grad, N, F, P, self.inputs[2]->ensure_grad());
  };
  return make_result<T>(std::move(shape), std::move(out), inputs, fn);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride = 1) {
  return conv2d(x, w, std::optional<Tensor<T>>{}, stride);
}

/// Per-pixel channel mixing with an [F, C, 1, 1] kernel.
template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w, const std::optional<Tensor<T>>& b) {
  detail::require_rank4(w.shape(), "conv1x1 kernel");
  require(w.dim(2) == 1 && w.dim(3) == 1, ErrorCode::ShapeMismatch, "conv1x1 kernel must be 1x1");
  return conv2d(x, w, b, 1);
}

template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w) {
  return conv1x1(x, w, std::optional<Tensor<T>>{});
}

/// Non-overlapping 2x2 max; gradient goes to the first maximal element in
/// row-major window order.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x) {
  detail::require_rank4(x.shape(), "maxpool2 input");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(H % 2 == 0 && W % 2 == 0, ErrorCode::ShapeMismatch,
          "maxpool2 needs even spatial dims, got " + to_string(x.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  std::vector<T> out(N * C * Ho * Wo);
  std::vector<std::uint32_t> argmax(out.size());
  const T* xv = x.values().data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xv + nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const std::size_t base = (2 * oy) * W + 2 * ox;
        const std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
        std::size_t best = cand[0];
        for (int i = 1; i < 4; ++i)
          if (plane[cand[i]] > plane[best]) best = cand[i];
        const std::size_t o = nc * Ho * Wo + oy * Wo + ox;
        out[o] = plane[best];
        argmax[o] = static_cast<std::uint32_t>(nc * H * W + best);
      }
  }
  return make_result<T>({N, C, Ho, Wo}, std::move(out), {x},
                        [argmax = std::move(argmax)](Node<T>& self) {
                          auto& gx = self.inputs[0]->ensure_grad();
                          for (std::size_t o = 0; o < argmax.size(); ++o)
                            gx[argmax[o]] += self.grad[o];
                        });
}

/// Stride-2, 2x2 transposed convolution with kernel [C, F, 2, 2]; doubles H and W.
template <typename T>
Tensor<T> conv_transpose2(const Tensor<T>& x, const Tensor<T>& w,
                          const std::optional<Tensor<T>>& b) {
  detail::require_rank4(x.shape(), "conv_transpose2 input");
  detail::require_rank4(w.shape(), "conv_transpose2 kernel");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(1);
  require(w.dim(0) == C && w.dim(2) == 2 && w.dim(3) == 2, ErrorCode::ShapeMismatch,
          "conv_transpose2 kernel " + to_string(w.shape()) + " vs input " + to_string(x.shape()));
  if (b) require(b->numel() == F, ErrorCode::ShapeMismatch, "conv_transpose2 bias length");
  const std::size_t P = H * W, F4 = F * 4, Ho = 2 * H, Wo = 2 * W;

  std::vector<T> out(N * F * Ho * Wo);
  std::vector<T> cols(F4 * P);
  for (std::size_t n = 0; n < N; ++n) {
    gemm(true, false, int(F4), int(P), int(C), T{1}, w.values().data(), int(F4),
         x.values().data() + n * C * P, int(P), T{0}, cols.data(), int(P));
    T* y = out.data() + n * F * Ho * Wo;
    for (std::size_t f = 0; f < F; ++f) {
      const T bf = b ? b->values()[f] : T{0};
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t bb = 0; bb < 2; ++bb) {
          const T* src = cols.data() + (f * 4 + a * 2 + bb) * P;
          for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j)
              y[(f * Ho + 2 * i + a) * Wo + 2 * j + bb] = src[i * W + j] + bf;
        }
    }
  }

  std::vector<Tensor<T>> inputs{x, w};
  if (b) inputs.push_back(*b);
  auto fn = [N, C, H, W, F, P, F4, Ho, Wo](Node<T>& self) {
    auto& nx = *self.inputs[0];
    auto& nw = *self.inputs[1];
    std::vector<T> dcols(F4 * P);
    for (std::size_t n = 0; n < N; ++n) {
      const T* dy = self.grad.data() + n * F * Ho * Wo;
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t bb = 0; bb < 2; ++bb) {
            T* dst = dcols.data() + (f * 4 + a * 2 + bb) * P;
            for (std::size_t i = 0; i < H; ++i)
              for (std::size_t j = 0; j < W; ++j)
                dst[i * W + j] = dy[(f * Ho + 2 * i + a) * Wo + 2 * j + bb];
          }
      if (nx.requires_grad) {
        auto& gx = nx.ensure_grad();
        gemm(false, false, int(C), int(P), int(F4), T{1}, nw.value.data(), int(F4), dcols.data(),
             int(P), T{1}, gx.data() + n * C * P, int(P));
      }
      if (nw.requires_grad) {
        auto& gw = nw.ensure_grad();
        gemm(false, true, int(C), int(F4), int(P), T{1}, nx.value.data() + n * C * P, int(P),
             dcols.data(), int(P), T{1}, gw.data(), int(F4));
      }
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad)
      detail::add_bias_grad(self.grad, N, F, Ho * Wo, self.inputs[2]->ensure_grad());
  };
  return make_result<T>({N, F, Ho, Wo}, std::move(out), inputs, fn);
}

template <typename T>
Tensor<T> conv_transpose2(const Tensor<T>& x, const Tensor<T>& w) {
  return conv_transpose2(x, w, std::optional<Tensor<T>>{});
}

/// Running statistics of one batch-normalization layer.
template <typename T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;

  explicit BatchNormStats(std::size_t channels = 0) : mean(channels, T{0}), var(channels, T{1}) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization. Train mode uses batch statistics and folds them
/// into `stats` (running var uses the unbiased estimate); infer mode reads `stats`.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormStats<T>& stats, Mode mode, double momentum = kBatchNormMomentum,
                    double eps = kBatchNormEps) {
  detail::require_rank4(x.shape(), "batchnorm input");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const std::size_t M = N * HW;
  require(M >= 1, ErrorCode::ShapeMismatch, "batchnorm over empty batch");
  require(gamma.numel() == C && beta.numel() == C && stats.mean.size() == C &&
              stats.var.size() == C,
          ErrorCode::ShapeMismatch, "batchnorm parameter length");

  const T* xv = x.values().data();
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(C);
  std::vector<T> out(x.numel());
  for (std::size_t c = 0; c < C; ++c) {
    double mean, var;
    if (mode == Mode::Train) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xv + (n * C + c) * HW;
        s += detail::lane_sum(HW, [p](std::size_t i) { return double(p[i]); });
      }
      mean = s / double(M);
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xv + (n * C + c) * HW;
        ss += detail::lane_sum(HW, [p, mean](std::size_t i) {
          const double d = double(p[i]) - mean;
          return d * d;
        });
      }
      var = ss / double(M);
      const double unbiased = M > 1 ? ss / double(M - 1) : var;
      stats.mean[c] = static_cast<T>((1.0 - momentum) * stats.mean[c] + momentum * mean);
      stats.var[c] = static_cast<T>((1.0 - momentum) * stats.var[c] + momentum * unbiased);
    } else {
      mean = stats.mean[c];
      var = stats.var[c];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[c] = static_cast<T>(is);
    const T g = gamma.values()[c], bt = beta.values()[c];
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const T h = static_cast<T>((xv[off + i] - mean) * is);
        xhat[off + i] = h;
        out[off + i] = g * h + bt;
      }
    }
  }

  auto fn = [N, C, HW, M, mode, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
    auto& nx = *self.inputs[0];
    auto& ng = *self.inputs[1];
    auto& nb = *self.inputs[2];
    const T* dy = self.grad.data();
    for (std::size_t c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * HW;
        const T* g = dy + off;
        const T* h = xhat.data() + off;
        sum_dy += detail::lane_sum(HW, [g](std::size_t i) { return double(g[i]); });
        sum_dy_xhat += detail::lane_sum(HW, [g, h](std::size_t i) { return double(g[i]) * h[i]; });
      }
      if (ng.requires_grad) ng.ensure_grad()[c] += static_cast<T>(sum_dy_xhat);
      if (nb.requires_grad) nb.ensure_grad()[c] += static_cast<T>(sum_dy);
      if (!nx.requires_grad) continue;
      auto& gx = nx.ensure_grad();
      const double g = ng.value[c];
      const double is = inv_std[c];
      if (mode == Mode::Train) {
        const double scale = g * is / double(M);
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t off = (n * C + c) * HW;
          for (std::size_t i = 0; i < HW; ++i)
            gx[off + i] += static_cast<T>(
                scale * (double(M) * dy[off + i] - sum_dy - double(xhat[off + i]) * sum_dy_xhat));
        }
      } else {
        const double scale = g * is;
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t off = (n * C + c) * HW;
          for (std::size_t i = 0; i < HW; ++i) gx[off + i] += static_cast<T>(scale * dy[off + i]);
        }
      }
    }
  };
  return make_result<T>(x.shape(), std::move(out), {x, gamma, beta}, fn);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T{0} ? xv[i] : T{0};
  return make_result<T>(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in.value[i] > T{0}) g[i] += self.grad[i];
  });
}

/// Channel concatenation: [a ; b] along dim 1.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank4(a.shape(), "concat input");
  detail::require_rank4(b.shape(), "concat input");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          ErrorCode::ShapeMismatch,
          "concat operands " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
  std::vector<T> out(N * (Ca + Cb) * HW);
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.values().data() + n * Ca * HW, Ca * HW, out.data() + n * (Ca + Cb) * HW);
    std::copy_n(b.values().data() + n * Cb * HW, Cb * HW,
                out.data() + n * (Ca + Cb) * HW + Ca * HW);
  }
  return make_result<T>({N, Ca + Cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                        [N, Ca, Cb, HW](Node<T>& self) {
                          auto& na = *self.inputs[0];
                          auto& nb = *self.inputs[1];
                          for (std::size_t n = 0; n < N; ++n) {
                            const T* g = self.grad.data() + n * (Ca + Cb) * HW;
                            if (na.requires_grad) {
                              T* d = na.ensure_grad().data() + n * Ca * HW;
                              for (std::size_t i = 0; i < Ca * HW; ++i) d[i] += g[i];
                            }
                            if (nb.requires_grad) {
                              T* d = nb.ensure_grad().data() + n * Cb * HW;
                              for (std::size_t i = 0; i < Cb * HW; ++i) d[i] += g[Ca * HW + i];
                            }
                          }
                        });
}

/// Softmax over the class dimension (dim 1), max-subtracted.
template <typename T>
Tensor<T> softmax2(const Tensor<T>& s) {
  detail::require_rank4(s.shape(), "softmax input");
  const std::size_t N = s.dim(0), K = s.dim(1), HW = s.dim(2) * s.dim(3);
  std::vector<T> out(s.numel());
  const T* sv = s.values().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < HW; ++i) {
      const std::size_t base = n * K * HW + i;
      T mx = sv[base];
      for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, sv[base + k * HW]);
      T z{0};
      for (std::size_t k = 0; k < K; ++k) {
        const T e = std::exp(sv[base + k * HW] - mx);
        out[base + k * HW] = e;
        z += e;
      }
      for (std::size_t k = 0; k < K; ++k) out[base + k * HW] /= z;
    }
  return make_result<T>(s.shape(), std::move(out), {s}, [N, K, HW](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const T* p = self.value.data();
    const T* dp = self.grad.data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t base = n * K * HW + i;
        T dot{0};
        for (std::size_t k = 0; k < K; ++k) dot += dp[base + k * HW] * p[base + k * HW];
        for (std::size_t k = 0; k < K; ++k)
          g[base + k * HW] += p[base + k * HW] * (dp[base + k * HW] - dot);
      }
  });
}

/// Per-class loss weights w_l = 1 - n_l / N from class pixel counts.
struct ClassWeights {
  std::array<double, 2> w{1.0, 1.0};
  std::array<std::uint64_t, 2> n{0, 0};
  std::uint64_t total = 0;

  static ClassWeights from_counts(std::uint64_t n0, std::uint64_t n1) {
    const std::uint64_t total = n0 + n1;
    require(total > 0, ErrorCode::EmptyInput, "class weights need at least one pixel");
    ClassWeights cw;
    cw.n = {n0, n1};
    cw.total = total;
    cw.w = {1.0 - double(n0) / double(total), 1.0 - double(n1) / double(total)};
    return cw;
  }

  static ClassWeights unit() { return {}; }
};

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over pixels (and batch) of -sum_l w_l * target_l * log(max(p_l, floor)).
template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& p, const Tensor<T>& target,
                                 const ClassWeights& cw) {
  detail::require_rank4(p.shape(), "cross-entropy input");
  require(p.shape() == target.shape(), ErrorCode::ShapeMismatch,
          "prediction " + to_string(p.shape()) + " vs target " + to_string(target.shape()));
  require(p.dim(1) == 2, ErrorCode::ShapeMismatch, "weighted cross-entropy is two-class");
  const std::size_t N = p.dim(0), HW = p.dim(2) * p.dim(3);
  const double M = double(N * HW);
  const T floor = static_cast<T>(kProbabilityFloor);
  double acc = 0.0;
  const T* pv = p.values().data();
  const T* tv = target.values().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t l = 0; l < 2; ++l) {
      const std::size_t off = (n * 2 + l) * HW;
      double part = 0.0;
      for (std::size_t i = 0; i < HW; ++i)
        if (tv[off + i] != T{0})
          part -= double(tv[off + i]) * std::log(double(std::max(pv[off + i], floor)));
      acc += cw.w[l] * part;
    }
  const T loss = static_cast<T>(acc / M);
  const std::array<T, 2> w{static_cast<T>(cw.w[0]), static_cast<T>(cw.w[1])};
  return make_result<T>({1}, {loss}, {p, target}, [N, HW, M, w, floor](Node<T>& self) {
    auto& np = *self.inputs[0];
    auto& nt = *self.inputs[1];
    if (!np.requires_grad) return;
    auto& g = np.ensure_grad();
    const T scale = static_cast<T>(double(self.grad[0]) / M);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t l = 0; l < 2; ++l) {
        const std::size_t off = (n * 2 + l) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const T pv = np.value[off + i];
          if (nt.value[off + i] != T{0} && pv > floor)
            g[off + i] -= scale * w[l] * nt.value[off + i] / pv;
        }
      }
  });
}

}  // namespace cranioclip::ad
