#pragma once

// Neural-net building blocks on top of the tape: conv2d (im2col + GEMM),
// differentiable bilinear sampling, dense layers, and the Adam optimizer.

#include <Eigen/Dense>

#include "nerfmark/tensor.hpp"

namespace nerfmark {

// --- conv2d --------------------------------------------------------------------

// x: [B, C, H, W], w: [OC, C, KH, KW], bias: [OC]; implicit zero padding.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     int stride = 1, int pad = 0) {
  NM_CHECK(x.rank() == 4, "conv2d: input must be [B,C,H,W], got " << shape_str(x.shape()));
  NM_CHECK(w.rank() == 4, "conv2d: weight must be [OC,C,KH,KW]");
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t OC = w.dim(0), KC = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  NM_CHECK(C == KC, "conv2d: channel mismatch (" << C << " vs " << KC << ")");
  NM_CHECK(bias.rank() == 1 && bias.dim(0) == OC, "conv2d: bias must be [OC]");
  NM_CHECK(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  int64_t OH = (H + 2 * pad - KH) / stride + 1;
  int64_t OW = (W + 2 * pad - KW) / stride + 1;
  NM_CHECK(OH >= 1 && OW >= 1, "conv2d: kernel larger than padded input");

  int64_t K = C * KH * KW;
  int64_t rows = B * OH * OW;
  auto col = std::make_shared<std::vector<float>>(static_cast<size_t>(rows * K), 0.0f);
  {
    float* pc = col->data();
    const float* px = x.data();
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t oy = 0; oy < OH; ++oy) {
        for (int64_t ox = 0; ox < OW; ++ox) {
          float* dst = pc + ((b * OH + oy) * OW + ox) * K;
          int64_t iy0 = oy * stride - pad;
          int64_t ix0 = ox * stride - pad;
          for (int64_t c = 0; c < C; ++c) {
            const float* plane = px + (b * C + c) * H * W;
            for (int64_t ky = 0; ky < KH; ++ky) {
              int64_t iy = iy0 + ky;
              if (iy < 0 || iy >= H) {
                dst += KW;
                continue;
              }
              for (int64_t kx = 0; kx < KW; ++kx) {
                int64_t ix = ix0 + kx;
                *dst++ = (ix >= 0 && ix < W) ? plane[iy * W + ix] : 0.0f;
              }
            }
          }
        }
      }
    }
  }

  using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;

  std::vector<float> flat(static_cast<size_t>(rows * OC));
  MMap(flat.data(), rows, OC).noalias() =
      CMap(col->data(), rows, K) * CMap(w.data(), OC, K).transpose();

  Tensor out = Tensor::zeros({B, OC, OH, OW});
  {
    float* po = out.data();
    const float* pb = bias.data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t oc = 0; oc < OC; ++oc) {
        float bs = pb[oc];
        float* dst = po + (b * OC + oc) * OH * OW;
        const float* src = flat.data() + (b * OH * OW) * OC + oc;
        for (int64_t i = 0; i < OH * OW; ++i) dst[i] = src[i * OC] + bs;
      }
  }

  bool gx = detail::wants_grad(x), gw = detail::wants_grad(w), gb = detail::wants_grad(bias);
  if (gx || gw || gb) {
    auto xd = x.d_, wd = w.d_, bd = bias.d_, od = out.d_;
    detail::record(out.d_, [=]() {
      // reorder grad to [rows, OC]
      std::vector<float> gflat(static_cast<size_t>(rows * OC));
      {
        const float* go = od->grad.data();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t oc = 0; oc < OC; ++oc) {
            const float* src = go + (b * OC + oc) * OH * OW;
            float* dst = gflat.data() + (b * OH * OW) * OC + oc;
            for (int64_t i = 0; i < OH * OW; ++i) dst[i * OC] = src[i];
          }
      }
      if (gb) {
        auto& g = detail::ensure_grad(bd);
        for (int64_t oc = 0; oc < OC; ++oc) {
          double acc = 0.0;
          const float* p = gflat.data() + oc;
          for (int64_t rIdx = 0; rIdx < rows; ++rIdx) acc += p[rIdx * OC];
          g[static_cast<size_t>(oc)] += static_cast<float>(acc);
        }
      }
      if (gw) {
        auto& g = detail::ensure_grad(wd);
        MMap(g.data(), OC, K).noalias() +=
            CMap(gflat.data(), rows, OC).transpose() * CMap(col->data(), rows, K);
      }
      if (gx) {
        auto& g = detail::ensure_grad(xd);
        std::vector<float> gcol(static_cast<size_t>(rows * K));
        MMap(gcol.data(), rows, K).noalias() =
            CMap(gflat.data(), rows, OC) * CMap(wd->value.data(), OC, K);
        // col2im scatter
        const float* pc = gcol.data();
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t oy = 0; oy < OH; ++oy) {
            for (int64_t ox = 0; ox < OW; ++ox) {
              const float* src = pc + ((b * OH + oy) * OW + ox) * K;
              int64_t iy0 = oy * stride - pad;
              int64_t ix0 = ox * stride - pad;
              for (int64_t c = 0; c < C; ++c) {
                float* plane = g.data() + (b * C + c) * H * W;
                for (int64_t ky = 0; ky < KH; ++ky) {
                  int64_t iy = iy0 + ky;
                  if (iy < 0 || iy >= H) {
                    src += KW;
                    continue;
                  }
                  for (int64_t kx = 0; kx < KW; ++kx) {
                    int64_t ix = ix0 + kx;
                    float v = *src++;
                    if (ix >= 0 && ix < W) plane[iy * W + ix] += v;
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// --- bilinear sampling ops -------------------------------------------------------

namespace detail {

struct Tap {
  int64_t src;   // flattened (y, x) within a plane, -1 = outside (zero fill)
  float weight;
};

// 4 taps per output pixel; linear in the input, so backward is the transpose.
inline Tensor sample_op(const Tensor& x, int64_t OH, int64_t OW,
                        const std::vector<std::array<Tap, 4>>& taps) {
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  (void)H;
  (void)W;
  Tensor out = Tensor::zeros({B, C, OH, OW});
  const float* px = x.data();
  float* po = out.data();
  int64_t planes = B * C;
  int64_t in_plane = H * W;
  int64_t out_plane = OH * OW;
  for (int64_t p = 0; p < planes; ++p) {
    const float* src = px + p * in_plane;
    float* dst = po + p * out_plane;
    for (int64_t i = 0; i < out_plane; ++i) {
      float acc = 0.0f;
      for (const Tap& t : taps[static_cast<size_t>(i)]) {
        if (t.src >= 0) acc += t.weight * src[t.src];
      }
      dst[i] = acc;
    }
  }
  if (wants_grad(x)) {
    auto xd = x.d_, od = out.d_;
    detail::record(out.d_, [xd, od, taps, planes, in_plane, out_plane]() {
      auto& g = ensure_grad(xd);
      const float* go = od->grad.data();
      for (int64_t p = 0; p < planes; ++p) {
        float* dst = g.data() + p * in_plane;
        const float* src = go + p * out_plane;
        for (int64_t i = 0; i < out_plane; ++i) {
          float v = src[i];
          for (const Tap& t : taps[static_cast<size_t>(i)]) {
            if (t.src >= 0) dst[t.src] += t.weight * v;
          }
        }
      }
    });
  }
  return out;
}

inline std::array<Tap, 4> bilinear_taps(double sy, double sx, int64_t H, int64_t W,
                                        bool zero_outside) {
  std::array<Tap, 4> t{};
  double fy = std::floor(sy), fx = std::floor(sx);
  double wy = sy - fy, wx = sx - fx;
  int64_t y0 = static_cast<int64_t>(fy), x0 = static_cast<int64_t>(fx);
  const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
  const double w10 = wy * (1 - wx), w11 = wy * wx;
  auto idx = [&](int64_t y, int64_t x) -> int64_t {
    if (zero_outside) {
      if (y < 0 || y >= H || x < 0 || x >= W) return -1;
    } else {
      y = std::clamp<int64_t>(y, 0, H - 1);
      x = std::clamp<int64_t>(x, 0, W - 1);
    }
    return y * W + x;
  };
  t[0] = {idx(y0, x0), static_cast<float>(w00)};
  t[1] = {idx(y0, x0 + 1), static_cast<float>(w01)};
  t[2] = {idx(y0 + 1, x0), static_cast<float>(w10)};
  t[3] = {idx(y0 + 1, x0 + 1), static_cast<float>(w11)};
  return t;
}

}  // namespace detail

// Bilinear resample of a source window [y0, y1) x [x0, x1) (continuous pixel
// coords) to OH x OW, half-pixel centers, edges clamped. The full-image case
// is y0 = 0, x0 = 0, y1 = H, x1 = W.
inline Tensor resize_rect(const Tensor& x, double y0, double x0, double y1, double x1,
                          int64_t OH, int64_t OW) {
  NM_CHECK(x.rank() == 4, "resize_rect: input must be [B,C,H,W]");
  NM_CHECK(y1 > y0 && x1 > x0 && OH >= 1 && OW >= 1, "resize_rect: bad rect/size");
  int64_t H = x.dim(2), W = x.dim(3);
  std::vector<std::array<detail::Tap, 4>> taps(static_cast<size_t>(OH * OW));
  double sy_scale = (y1 - y0) / static_cast<double>(OH);
  double sx_scale = (x1 - x0) / static_cast<double>(OW);
  for (int64_t oy = 0; oy < OH; ++oy) {
    for (int64_t ox = 0; ox < OW; ++ox) {
      double sy = y0 + (static_cast<double>(oy) + 0.5) * sy_scale - 0.5;
      double sx = x0 + (static_cast<double>(ox) + 0.5) * sx_scale - 0.5;
      taps[static_cast<size_t>(oy * OW + ox)] = detail::bilinear_taps(sy, sx, H, W, false);
    }
  }
  return detail::sample_op(x, OH, OW, taps);
}

inline Tensor resize_bilinear(const Tensor& x, int64_t OH, int64_t OW) {
  return resize_rect(x, 0.0, 0.0, static_cast<double>(x.dim(2)),
                     static_cast<double>(x.dim(3)), OH, OW);
}

// Rotation about the image center by `angle` radians (counterclockwise in
// image coordinates), bilinear, zero fill outside.
inline Tensor rotate_image(const Tensor& x, double angle) {
  NM_CHECK(x.rank() == 4, "rotate_image: input must be [B,C,H,W]");
  int64_t H = x.dim(2), W = x.dim(3);
  double cy = static_cast<double>(H) / 2.0, cx = static_cast<double>(W) / 2.0;
  double c = std::cos(angle), s = std::sin(angle);
  std::vector<std::array<detail::Tap, 4>> taps(static_cast<size_t>(H * W));
  for (int64_t oy = 0; oy < H; ++oy) {
    for (int64_t ox = 0; ox < W; ++ox) {
      // inverse map: rotate output center offsets by -angle
      double dy = static_cast<double>(oy) + 0.5 - cy;
      double dx = static_cast<double>(ox) + 0.5 - cx;
      double sx = c * dx + s * dy + cx - 0.5;
      double sy = -s * dx + c * dy + cy - 0.5;
      taps[static_cast<size_t>(oy * W + ox)] = detail::bilinear_taps(sy, sx, H, W, true);
    }
  }
  return detail::sample_op(x, H, W, taps);
}

// --- layers ----------------------------------------------------------------------

inline Tensor glorot_uniform(Shape shape, int64_t fan_in, int64_t fan_out, Rng& rng,
                             float gain = 1.0f) {
  float limit = gain * std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (float& v : t.values()) v = rng.uniformf(-limit, limit);
  return t;
}

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]

  static Linear init(int64_t in, int64_t out, Rng& rng, float gain = 1.0f) {
    Linear l;
    l.w = glorot_uniform({in, out}, in, out, rng, gain);
    l.b = Tensor::zeros({out}, true);
    return l;
  }
  Tensor operator()(const Tensor& x) const { return matmul(x, w) + b; }
  std::vector<Tensor> params() const { return {w, b}; }
};

struct Conv2d {
  Tensor w;  // [OC, C, KH, KW]
  Tensor b;  // [OC]
  int stride = 1;
  int pad = 0;

  static Conv2d init(int64_t in_ch, int64_t out_ch, int64_t k, int stride, int pad,
                     Rng& rng, float gain = 1.0f) {
    Conv2d c;
    c.w = glorot_uniform({out_ch, in_ch, k, k}, in_ch * k * k, out_ch * k * k, rng, gain);
    c.b = Tensor::zeros({out_ch}, true);
    c.stride = stride;
    c.pad = pad;
    return c;
  }
  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
  std::vector<Tensor> params() const { return {w, b}; }
};

// Global average pool [B,C,H,W] -> [B,C].
inline Tensor global_avg_pool(const Tensor& x) {
  NM_CHECK(x.rank() == 4, "global_avg_pool: input must be [B,C,H,W]");
  Tensor flat = reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)});
  return mean_axis(flat, 2, /*keepdim=*/false);
}

// --- Adam ------------------------------------------------------------------------

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    for (const Tensor& p : params_) {
      m_.emplace_back(p.numel(), 0.0f);
      v_.emplace_back(p.numel(), 0.0f);
    }
  }

  void set_lr(float lr) { cfg_.lr = lr; }
  float lr() const { return cfg_.lr; }
  int64_t step_count() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

  // Applies one Adam update with bias correction, then zeroes grads.
  void step() {
    ++t_;
    float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
    float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor& p = params_[pi];
      NM_CHECK(p.has_grad(), "adam: missing gradient on parameter " << pi);
      const std::vector<float>& g = p.grad();
      std::vector<float>& m = m_[pi];
      std::vector<float>& v = v_[pi];
      float* pv = p.data();
      for (size_t i = 0; i < g.size(); ++i) {
        float gi = g[i];
        NM_CHECK(std::isfinite(gi), "adam: non-finite gradient on parameter " << pi);
        m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * gi * gi;
        float mhat = m[i] / bc1;
        float vhat = v[i] / bc2;
        pv[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      p.zero_grad();
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  int64_t t_ = 0;
};

// Cosine decay from `start` to `end` over `total` steps.
inline float cosine_lr(float start, float end, int64_t step, int64_t total) {
  if (step >= total) return end;
  double f = 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                   static_cast<double>(total)));
  return static_cast<float>(end + (start - end) * f);
}

}  // namespace nerfmark
