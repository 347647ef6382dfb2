#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "eit/ops.hpp"
#include "eit/tensor.hpp"

// Spatial ops over NCHW tensors. Convolutions use shift-and-accumulate: for
// each kernel tap the valid output window is precomputed, so inner loops are
// branch-free and contiguous at stride 1.

namespace eit {

namespace detail {

struct TapRange {
  int64_t lo, hi;  // inclusive output range for one kernel offset
};

// valid outputs o with 0 <= o*stride + off - pad <= in-1
inline TapRange tap_range(int64_t in, int64_t out, int64_t off, int64_t stride, int64_t pad) {
  int64_t lo = 0;
  if (pad - off > 0) lo = (pad - off + stride - 1) / stride;
  int64_t hi = (in - 1 + pad - off) / stride;
  if (hi > out - 1) hi = out - 1;
  return {lo, hi};
}

inline int64_t conv_out(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// x (B,Ci,H,W), w (Co,Ci,kh,kw), optional bias (Co)
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride,
                 int pad) {
  detail::require<T>(x.rank() == 4, "conv2d: input must be (B,C,H,W)");
  detail::require<T>(w.rank() == 4, "conv2d: weight must be (Co,Ci,kh,kw)");
  detail::require<T>(w.dim(1) == x.dim(1), "conv2d: channel mismatch");
  detail::require<T>(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t Ho = detail::conv_out(H, kh, stride, pad);
  const int64_t Wo = detail::conv_out(W, kw, stride, pad);
  detail::require<T>(Ho >= 1 && Wo >= 1, "conv2d: kernel larger than padded input");
  if (bias)
    detail::require<T>(bias->rank() == 1 && bias->dim(0) == Co, "conv2d: bias shape mismatch");

  Tensor<T> y({static_cast<int>(B), static_cast<int>(Co), static_cast<int>(Ho),
               static_cast<int>(Wo)});
  T* yp = y.data();
  if (bias) {
    for (int64_t b = 0; b < B; ++b)
      for (int64_t co = 0; co < Co; ++co)
        std::fill(yp + (b * Co + co) * Ho * Wo, yp + (b * Co + co + 1) * Ho * Wo,
                  bias->data()[co]);
  }
  const T* xp = x.data();
  const T* wp = w.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t ci = 0; ci < Ci; ++ci) {
        const T* xc = xp + (b * Ci + ci) * H * W;
        T* yc = yp + (b * Co + co) * Ho * Wo;
        const T* wk = wp + (co * Ci + ci) * kh * kw;
        for (int64_t dh = 0; dh < kh; ++dh) {
          const auto rh = detail::tap_range(H, Ho, dh, stride, pad);
          for (int64_t dw = 0; dw < kw; ++dw) {
            const auto rw = detail::tap_range(W, Wo, dw, stride, pad);
            const T wv = wk[dh * kw + dw];
            if (wv == T(0)) continue;
            for (int64_t oh = rh.lo; oh <= rh.hi; ++oh) {
              const T* xr = xc + (oh * stride + dh - pad) * W + (rw.lo * stride + dw - pad);
              T* yr = yc + oh * Wo + rw.lo;
              const int64_t n = rw.hi - rw.lo + 1;
              if (stride == 1) {
                for (int64_t j = 0; j < n; ++j) yr[j] += wv * xr[j];
              } else {
                for (int64_t j = 0; j < n; ++j) yr[j] += wv * xr[j * stride];
              }
            }
          }
        }
      }
  check_finite(y, "conv2d");
  const bool track = bias ? detail::tracking(x, w, *bias) : detail::tracking(x, w);
  if (track) {
    y.mark_tracked();
    Tensor<T> bt = bias ? *bias : Tensor<T>();
    Tape<T>::current()->record("conv2d", [x, w, bt, y, B, Ci, Co, H, W, Ho, Wo, kh, kw, stride,
                                          pad]() mutable {
      const T* gy = y.grad();
      if (bt.defined() && bt.tracked()) {
        T* gb = bt.grad();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t co = 0; co < Co; ++co) {
            const T* gr = gy + (b * Co + co) * Ho * Wo;
            T acc = T(0);
            for (int64_t i = 0; i < Ho * Wo; ++i) acc += gr[i];
            gb[co] += acc;
          }
      }
      const bool gx_on = x.tracked(), gw_on = w.tracked();
      if (!gx_on && !gw_on) return;
      T* gx = gx_on ? x.grad() : nullptr;
      T* gw = gw_on ? w.grad() : nullptr;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < Co; ++co)
          for (int64_t ci = 0; ci < Ci; ++ci) {
            const T* xc = x.data() + (b * Ci + ci) * H * W;
            const T* gyc = gy + (b * Co + co) * Ho * Wo;
            const T* wk = w.data() + (co * Ci + ci) * kh * kw;
            T* gwk = gw_on ? gw + (co * Ci + ci) * kh * kw : nullptr;
            T* gxc = gx_on ? gx + (b * Ci + ci) * H * W : nullptr;
            for (int64_t dh = 0; dh < kh; ++dh) {
              const auto rh = detail::tap_range(H, Ho, dh, stride, pad);
              for (int64_t dw = 0; dw < kw; ++dw) {
                const auto rw = detail::tap_range(W, Wo, dw, stride, pad);
                const int64_t n = rw.hi - rw.lo + 1;
                if (n <= 0) continue;
                T wacc = T(0);
                const T wv = wk[dh * kw + dw];
                for (int64_t oh = rh.lo; oh <= rh.hi; ++oh) {
                  const int64_t xoff =
                      (oh * stride + dh - pad) * W + (rw.lo * stride + dw - pad);
                  const T* gr = gyc + oh * Wo + rw.lo;
                  if (gw_on) {
                    const T* xr = xc + xoff;
                    if (stride == 1)
                      for (int64_t j = 0; j < n; ++j) wacc += xr[j] * gr[j];
                    else
                      for (int64_t j = 0; j < n; ++j) wacc += xr[j * stride] * gr[j];
                  }
                  if (gx_on && wv != T(0)) {
                    T* gxr = gxc + xoff;
                    if (stride == 1)
                      for (int64_t j = 0; j < n; ++j) gxr[j] += wv * gr[j];
                    else
                      for (int64_t j = 0; j < n; ++j) gxr[j * stride] += wv * gr[j];
                  }
                }
                if (gw_on) gwk[dh * kw + dw] += wacc;
              }
            }
          }
    });
  }
  return y;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int pad) {
  return conv2d(x, w, &bias, stride, pad);
}

// per-channel conv: x (B,C,H,W), w (C,kh,kw), optional bias (C), stride 1
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                           int pad) {
  detail::require<T>(x.rank() == 4, "depthwise_conv2d: input must be (B,C,H,W)");
  detail::require<T>(w.rank() == 3 && w.dim(0) == x.dim(1),
                     "depthwise_conv2d: weight must be (C,kh,kw)");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t kh = w.dim(1), kw = w.dim(2);
  const int64_t Ho = detail::conv_out(H, kh, 1, pad);
  const int64_t Wo = detail::conv_out(W, kw, 1, pad);
  detail::require<T>(Ho >= 1 && Wo >= 1, "depthwise_conv2d: kernel larger than padded input");
  if (bias)
    detail::require<T>(bias->rank() == 1 && bias->dim(0) == C,
                       "depthwise_conv2d: bias shape mismatch");
  Tensor<T> y({static_cast<int>(B), static_cast<int>(C), static_cast<int>(Ho),
               static_cast<int>(Wo)});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T* xc = x.data() + (b * C + c) * H * W;
      T* yc = y.data() + (b * C + c) * Ho * Wo;
      if (bias) std::fill(yc, yc + Ho * Wo, bias->data()[c]);
      const T* wk = w.data() + c * kh * kw;
      for (int64_t dh = 0; dh < kh; ++dh) {
        const auto rh = detail::tap_range(H, Ho, dh, 1, pad);
        for (int64_t dw = 0; dw < kw; ++dw) {
          const auto rw = detail::tap_range(W, Wo, dw, 1, pad);
          const T wv = wk[dh * kw + dw];
          for (int64_t oh = rh.lo; oh <= rh.hi; ++oh) {
            const T* xr = xc + (oh + dh - pad) * W + (rw.lo + dw - pad);
            T* yr = yc + oh * Wo + rw.lo;
            for (int64_t j = 0; j <= rw.hi - rw.lo; ++j) yr[j] += wv * xr[j];
          }
        }
      }
    }
  check_finite(y, "depthwise_conv2d");
  const bool track = bias ? detail::tracking(x, w, *bias) : detail::tracking(x, w);
  if (track) {
    y.mark_tracked();
    Tensor<T> bt = bias ? *bias : Tensor<T>();
    Tape<T>::current()->record("depthwise_conv2d", [x, w, bt, y, B, C, H, W, Ho, Wo, kh, kw,
                                                    pad]() mutable {
      const T* gy = y.grad();
      const bool gx_on = x.tracked(), gw_on = w.tracked();
      if (bt.defined() && bt.tracked()) {
        T* gb = bt.grad();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c) {
            const T* gr = gy + (b * C + c) * Ho * Wo;
            T acc = T(0);
            for (int64_t i = 0; i < Ho * Wo; ++i) acc += gr[i];
            gb[c] += acc;
          }
      }
      if (!gx_on && !gw_on) return;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
          const T* xc = x.data() + (b * C + c) * H * W;
          const T* gyc = gy + (b * C + c) * Ho * Wo;
          const T* wk = w.data() + c * kh * kw;
          T* gwk = gw_on ? w.grad() + c * kh * kw : nullptr;
          T* gxc = gx_on ? x.grad() + (b * C + c) * H * W : nullptr;
          for (int64_t dh = 0; dh < kh; ++dh) {
            const auto rh = detail::tap_range(H, Ho, dh, 1, pad);
            for (int64_t dw = 0; dw < kw; ++dw) {
              const auto rw = detail::tap_range(W, Wo, dw, 1, pad);
              const int64_t n = rw.hi - rw.lo + 1;
              if (n <= 0) continue;
              const T wv = wk[dh * kw + dw];
              T wacc = T(0);
              for (int64_t oh = rh.lo; oh <= rh.hi; ++oh) {
                const int64_t xoff = (oh + dh - pad) * W + (rw.lo + dw - pad);
                const T* gr = gyc + oh * Wo + rw.lo;
                if (gw_on) {
                  const T* xr = xc + xoff;
                  for (int64_t j = 0; j < n; ++j) wacc += xr[j] * gr[j];
                }
                if (gx_on) {
                  T* gxr = gxc + xoff;
                  for (int64_t j = 0; j < n; ++j) gxr[j] += wv * gr[j];
                }
              }
              if (gw_on) gwk[dh * kw + dw] += wacc;
            }
          }
        }
    });
  }
  return y;
}

// 2x2 stride-2 max pool, ceil mode: trailing odd row/col pools over what exists
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
  detail::require<T>(x.rank() == 4, "maxpool2d: input must be (B,C,H,W)");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  Tensor<T> y({static_cast<int>(B), static_cast<int>(C), static_cast<int>(Ho),
               static_cast<int>(Wo)});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(y.numel()));
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xc = x.data() + bc * H * W;
    T* yc = y.data() + bc * Ho * Wo;
    int64_t* am = argmax->data() + bc * Ho * Wo;
    for (int64_t oh = 0; oh < Ho; ++oh)
      for (int64_t ow = 0; ow < Wo; ++ow) {
        const int64_t h1 = std::min<int64_t>(2 * oh + 2, H), w1 = std::min<int64_t>(2 * ow + 2, W);
        T best = xc[2 * oh * W + 2 * ow];
        int64_t bi = 2 * oh * W + 2 * ow;
        for (int64_t ih = 2 * oh; ih < h1; ++ih)
          for (int64_t iw = 2 * ow; iw < w1; ++iw) {
            const T v = xc[ih * W + iw];
            if (v > best) {
              best = v;
              bi = ih * W + iw;
            }
          }
        yc[oh * Wo + ow] = best;
        am[oh * Wo + ow] = bi;
      }
  }
  check_finite(y, "maxpool2d");
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("maxpool2d", [x, y, argmax, B, C, H, W, Ho, Wo]() mutable {
      const T* gy = y.grad();
      T* gx = x.grad();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const int64_t* am = argmax->data() + bc * Ho * Wo;
        const T* gr = gy + bc * Ho * Wo;
        T* gxc = gx + bc * H * W;
        for (int64_t i = 0; i < Ho * Wo; ++i) gxc[am[i]] += gr[i];
      }
    });
  }
  return y;
}

// (B,C,H,W) -> (B,C): mean over the spatial plane
template <typename T>
Tensor<T> avgpool_spatial(const Tensor<T>& x) {
  detail::require<T>(x.rank() == 4, "avgpool_spatial: input must be (B,C,H,W)");
  const int64_t B = x.dim(0), C = x.dim(1), HW = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor<T> y({static_cast<int>(B), static_cast<int>(C)});
  const T inv = T(1) / static_cast<T>(HW);
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xc = x.data() + bc * HW;
    T acc = T(0);
    for (int64_t i = 0; i < HW; ++i) acc += xc[i];
    y.data()[bc] = acc * inv;
  }
  check_finite(y, "avgpool_spatial");
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("avgpool_spatial", [x, y, B, C, HW, inv]() mutable {
      const T* gy = y.grad();
      T* gx = x.grad();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const T g = gy[bc] * inv;
        T* gxc = gx + bc * HW;
        for (int64_t i = 0; i < HW; ++i) gxc[i] += g;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  detail::require<T>(x.rank() == 4, "upsample_nearest2x: input must be (B,C,H,W)");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> y({static_cast<int>(B), static_cast<int>(C), static_cast<int>(2 * H),
               static_cast<int>(2 * W)});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xc = x.data() + bc * H * W;
    T* yc = y.data() + bc * 4 * H * W;
    for (int64_t oh = 0; oh < 2 * H; ++oh) {
      const T* xr = xc + (oh / 2) * W;
      T* yr = yc + oh * 2 * W;
      for (int64_t ow = 0; ow < 2 * W; ++ow) yr[ow] = xr[ow / 2];
    }
  }
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("upsample_nearest2x", [x, y, B, C, H, W]() mutable {
      const T* gy = y.grad();
      T* gx = x.grad();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* gyc = gy + bc * 4 * H * W;
        T* gxc = gx + bc * H * W;
        for (int64_t oh = 0; oh < 2 * H; ++oh) {
          const T* gr = gyc + oh * 2 * W;
          T* gxr = gxc + (oh / 2) * W;
          for (int64_t ow = 0; ow < 2 * W; ++ow) gxr[ow / 2] += gr[ow];
        }
      }
    });
  }
  return y;
}

// nearest-index resize to an explicit (th,tw); index map floor(o*in/out)
template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, int th, int tw) {
  detail::require<T>(x.rank() == 4, "resize_nearest: input must be (B,C,H,W)");
  detail::require<T>(th >= 1 && tw >= 1, "resize_nearest: bad target size");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (th == H && tw == W) return x;
  Tensor<T> y({static_cast<int>(B), static_cast<int>(C), th, tw});
  std::vector<int64_t> hmap(static_cast<size_t>(th)), wmap(static_cast<size_t>(tw));
  for (int64_t i = 0; i < th; ++i) hmap[static_cast<size_t>(i)] = i * H / th;
  for (int64_t i = 0; i < tw; ++i) wmap[static_cast<size_t>(i)] = i * W / tw;
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xc = x.data() + bc * H * W;
    T* yc = y.data() + bc * static_cast<int64_t>(th) * tw;
    for (int64_t oh = 0; oh < th; ++oh) {
      const T* xr = xc + hmap[static_cast<size_t>(oh)] * W;
      T* yr = yc + oh * tw;
      for (int64_t ow = 0; ow < tw; ++ow) yr[ow] = xr[wmap[static_cast<size_t>(ow)]];
    }
  }
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("resize_nearest", [x, y, B, C, H, W, th, tw, hmap,
                                                  wmap]() mutable {
      const T* gy = y.grad();
      T* gx = x.grad();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* gyc = gy + bc * static_cast<int64_t>(th) * tw;
        T* gxc = gx + bc * H * W;
        for (int64_t oh = 0; oh < th; ++oh) {
          const T* gr = gyc + oh * tw;
          T* gxr = gxc + hmap[static_cast<size_t>(oh)] * W;
          for (int64_t ow = 0; ow < tw; ++ow) gxr[wmap[static_cast<size_t>(ow)]] += gr[ow];
        }
      }
    });
  }
  return y;
}

// ---- layout bridges between image and token views ----

// (B,C,H,W) -> (B,HW,C)
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  detail::require<T>(x.rank() == 4, "to_tokens: input must be (B,C,H,W)");
  const int64_t B = x.dim(0), C = x.dim(1), HW = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor<T> y({static_cast<int>(B), static_cast<int>(HW), static_cast<int>(C)});
  for (int64_t b = 0; b < B; ++b) {
    const T* xb = x.data() + b * C * HW;
    T* yb = y.data() + b * HW * C;
    for (int64_t c = 0; c < C; ++c)
      for (int64_t s = 0; s < HW; ++s) yb[s * C + c] = xb[c * HW + s];
  }
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("to_tokens", [x, y, B, C, HW]() mutable {
      const T* gy = y.grad();
      T* gx = x.grad();
      for (int64_t b = 0; b < B; ++b) {
        const T* gyb = gy + b * HW * C;
        T* gxb = gx + b * C * HW;
        for (int64_t c = 0; c < C; ++c)
          for (int64_t s = 0; s < HW; ++s) gxb[c * HW + s] += gyb[s * C + c];
      }
    });
  }
  return y;
}

// (B,HW,C) -> (B,C,H,W)
template <typename T>
Tensor<T> from_tokens(const Tensor<T>& x, int H, int W) {
  detail::require<T>(x.rank() == 3, "from_tokens: input must be (B,N,C)");
  detail::require<T>(x.dim(1) == H * W, "from_tokens: token count != H*W");
  const int64_t B = x.dim(0), HW = x.dim(1), C = x.dim(2);
  Tensor<T> y({static_cast<int>(B), static_cast<int>(C), H, W});
  for (int64_t b = 0; b < B; ++b) {
    const T* xb = x.data() + b * HW * C;
    T* yb = y.data() + b * C * HW;
    for (int64_t s = 0; s < HW; ++s)
      for (int64_t c = 0; c < C; ++c) yb[c * HW + s] = xb[s * C + c];
  }
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("from_tokens", [x, y, B, C, HW]() mutable {
      const T* gy = y.grad();
      T* gx = x.grad();
      for (int64_t b = 0; b < B; ++b) {
        const T* gyb = gy + b * C * HW;
        T* gxb = gx + b * HW * C;
        for (int64_t s = 0; s < HW; ++s)
          for (int64_t c = 0; c < C; ++c) gxb[s * C + c] += gyb[c * HW + s];
      }
    });
  }
  return y;
}

// (B,N,C) -> (B*heads, N, C/heads)
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int heads) {
  detail::require<T>(x.rank() == 3, "split_heads: input must be (B,N,C)");
  detail::require<T>(x.dim(2) % heads == 0, "split_heads: C not divisible by heads");
  const int64_t B = x.dim(0), N = x.dim(1), C = x.dim(2), dk = C / heads;
  Tensor<T> y({static_cast<int>(B * heads), static_cast<int>(N), static_cast<int>(dk)});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t n = 0; n < N; ++n) {
        const T* src = x.data() + (b * N + n) * C + h * dk;
        T* dst = y.data() + ((b * heads + h) * N + n) * dk;
        std::copy(src, src + dk, dst);
      }
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("split_heads", [x, y, B, N, C, dk, heads]() mutable {
      const T* gy = y.grad();
      T* gx = x.grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < heads; ++h)
          for (int64_t n = 0; n < N; ++n) {
            const T* src = gy + ((b * heads + h) * N + n) * dk;
            T* dst = gx + (b * N + n) * C + h * dk;
            for (int64_t i = 0; i < dk; ++i) dst[i] += src[i];
          }
    });
  }
  return y;
}

// (B*heads, N, dk) -> (B, N, heads*dk)
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, int heads) {
  detail::require<T>(x.rank() == 3, "merge_heads: input must be (BH,N,dk)");
  detail::require<T>(x.dim(0) % heads == 0, "merge_heads: batch not divisible by heads");
  const int64_t B = x.dim(0) / heads, N = x.dim(1), dk = x.dim(2), C = dk * heads;
  Tensor<T> y({static_cast<int>(B), static_cast<int>(N), static_cast<int>(C)});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t n = 0; n < N; ++n) {
        const T* src = x.data() + ((b * heads + h) * N + n) * dk;
        T* dst = y.data() + (b * N + n) * C + h * dk;
        std::copy(src, src + dk, dst);
      }
  if (detail::tracking(x)) {
    y.mark_tracked();
    Tape<T>::current()->record("merge_heads", [x, y, B, N, dk, C, heads]() mutable {
      const T* gy = y.grad();
      T* gx = x.grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < heads; ++h)
          for (int64_t n = 0; n < N; ++n) {
            const T* src = gy + (b * N + n) * C + h * dk;
            T* dst = gx + ((b * heads + h) * N + n) * dk;
            for (int64_t i = 0; i < dk; ++i) dst[i] += src[i];
          }
    });
  }
  return y;
}

}  // namespace eit
