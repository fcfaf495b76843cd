#pragma once

// The radiance field: frequency encodings, the density network f_sigma
// (one hidden layer, width 64, emitting a raw density plus a 64-wide feature),
// the color network f_color (one hidden layer, width 64, sigmoid RGB), the
// object-centric density offset, and differentiable volume rendering.

#include <atomic>

#include "nerfmark/camera.hpp"
#include "nerfmark/image.hpp"
#include "nerfmark/nn.hpp"
#include "nerfmark/tensor.hpp"

namespace nerfmark {

struct EncodingConfig {
  int pos_freqs = 10;   // L_x
  int dir_freqs = 4;    // L_d
  float bound = 1.0f;   // positions clamped to [-bound, bound]^3

  int pos_dim() const { return 3 + 2 * 3 * pos_freqs; }
  int dir_dim() const { return 3 + 2 * 3 * dir_freqs; }
};

struct DensityInitConfig {
  float strength = 10.0f;  // lambda_sigma
  float radius = 0.5f;     // r
};

struct FieldConfig {
  EncodingConfig enc;
  DensityInitConfig density_init;
  int hidden = 64;
  int feature = 64;
};

namespace detail {
inline std::atomic<long>& encode_clamp_count() {
  static std::atomic<long> n{0};
  return n;
}
}  // namespace detail

// Frequency encoding [v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^{L-1} pi v),
// cos(2^{L-1} pi v)] per component; raw components first, then per level the
// three sins followed by the three cos.
inline void encode_vec3(const float* v, int freqs, float* out) {
  out[0] = v[0];
  out[1] = v[1];
  out[2] = v[2];
  int k = 3;
  float scale = static_cast<float>(M_PI);
  for (int l = 0; l < freqs; ++l) {
    for (int d = 0; d < 3; ++d) out[k + d] = std::sin(scale * v[d]);
    for (int d = 0; d < 3; ++d) out[k + 3 + d] = std::cos(scale * v[d]);
    k += 6;
    scale *= 2.0f;
  }
}

// Positions outside the bound are clamped (counted, warned once).
inline std::vector<float> encode_position(const Vec3& x, const EncodingConfig& cfg) {
  float v[3] = {x.x, x.y, x.z};
  bool clamped = false;
  for (float& vi : v) {
    if (vi < -cfg.bound || vi > cfg.bound) {
      vi = std::clamp(vi, -cfg.bound, cfg.bound);
      clamped = true;
    }
  }
  if (clamped && detail::encode_clamp_count()++ == 0) {
    NM_LOG(LogLevel::Debug, "debug",
           "encode_position: input outside bound, clamped (warned once)");
  }
  std::vector<float> out(static_cast<size_t>(cfg.pos_dim()));
  encode_vec3(v, cfg.pos_freqs, out.data());
  return out;
}

// Non-unit directions are normalized, not rejected.
inline std::vector<float> encode_direction(const Vec3& d, const EncodingConfig& cfg) {
  Vec3 u = d.normalized();
  float v[3] = {u.x, u.y, u.z};
  std::vector<float> out(static_cast<size_t>(cfg.dir_dim()));
  encode_vec3(v, cfg.dir_freqs, out.data());
  return out;
}

class RadianceField {
 public:
  FieldConfig cfg;
  Linear sigma_hidden;  // enc_pos -> hidden
  Linear sigma_out;     // hidden -> 1 + feature
  Linear color_hidden;  // feature + enc_dir -> hidden
  Linear color_out;     // hidden -> 3

  static RadianceField init(const FieldConfig& cfg, Rng& rng) {
    RadianceField f;
    f.cfg = cfg;
    f.sigma_hidden = Linear::init(cfg.enc.pos_dim(), cfg.hidden, rng);
    f.sigma_out = Linear::init(cfg.hidden, 1 + cfg.feature, rng, /*gain=*/0.2f);
    f.color_hidden = Linear::init(cfg.feature + cfg.enc.dir_dim(), cfg.hidden, rng);
    f.color_out = Linear::init(cfg.hidden, 3, rng, /*gain=*/0.2f);
    return f;
  }

  std::vector<Tensor> sigma_params() const {
    return {sigma_hidden.w, sigma_hidden.b, sigma_out.w, sigma_out.b};
  }
  std::vector<Tensor> color_params() const {
    return {color_hidden.w, color_hidden.b, color_out.w, color_out.b};
  }
  std::vector<Tensor> params() const {
    auto p = sigma_params();
    auto c = color_params();
    p.insert(p.end(), c.begin(), c.end());
    return p;
  }

  void set_sigma_trainable(bool b) {
    for (Tensor& t : {sigma_hidden.w, sigma_hidden.b, sigma_out.w, sigma_out.b}) {
      Tensor tt = t;
      tt.set_requires_grad(b);
    }
  }

  float density_offset(const Vec3& x) const {
    return cfg.density_init.strength * (1.0f - x.norm() / cfg.density_init.radius);
  }

  // Batch query: enc [N, pos_dim], offsets [N, 1] -> (sigma [N,1], z [N,feature]).
  std::pair<Tensor, Tensor> density_from_encoding(const Tensor& enc,
                                                  const Tensor& offsets) const {
    Tensor h = relu(sigma_hidden(enc));
    Tensor out = sigma_out(h);
    Tensor raw = slice(out, 1, 0, 1);
    Tensor z = slice(out, 1, 1, cfg.feature);
    Tensor sigma = softplus(raw + offsets);
    return {sigma, z};
  }

  // Batch query: z [N, feature], enc_dir [N, dir_dim] -> rgb [N, 3] in [0,1].
  Tensor color_from_feature(const Tensor& z, const Tensor& enc_dir) const {
    Tensor h = relu(color_hidden(concat({z, enc_dir}, 1)));
    return sigmoid(color_out(h));
  }

  // Single-point conveniences (evaluation only).
  std::pair<float, std::vector<float>> query_density(const Vec3& x) const {
    NoGradGuard ng;
    Tensor enc = Tensor::from_vector({1, cfg.enc.pos_dim()}, encode_position(x, cfg.enc));
    Tensor off = Tensor::from_vector({1, 1}, {density_offset(x)});
    auto [sigma, z] = density_from_encoding(enc, off);
    return {sigma.values()[0], z.values()};
  }

  Vec3 query_color(const std::vector<float>& feature, const Vec3& d) const {
    NoGradGuard ng;
    NM_CHECK(static_cast<int>(feature.size()) == cfg.feature,
             "query_color: feature width mismatch");
    Tensor z = Tensor::from_vector({1, cfg.feature}, feature);
    Tensor enc = Tensor::from_vector({1, cfg.enc.dir_dim()}, encode_direction(d, cfg.enc));
    Tensor rgb = color_from_feature(z, enc);
    return {rgb.values()[0], rgb.values()[1], rgb.values()[2]};
  }
};

// --- volume rendering ------------------------------------------------------------

struct VolumeWeights {
  Tensor weights;   // [R, S], each in [0,1]
  Tensor wsum;      // [R, 1], sum over samples <= 1
  Tensor residual;  // [R, 1], transmittance past the last sample
};

// w_j = T_j (1 - exp(-sigma_j delta_j)), T_j = exp(-sum_{k<j} sigma_k delta_k).
inline VolumeWeights volume_weights(const Tensor& sigma, const Tensor& delta) {
  NM_CHECK(sigma.rank() == 2 && sigma.shape() == delta.shape(),
           "volume_weights: sigma/delta must both be [R,S]");
  Tensor sdel = sigma * delta;
  Tensor trans = exp(neg(cumsum_exclusive(sdel)));
  Tensor alpha = 1.0f - exp(neg(sdel));
  VolumeWeights vw;
  vw.weights = trans * alpha;
  vw.wsum = sum_axis(vw.weights, 1, /*keepdim=*/true);
  vw.residual = exp(neg(sum_axis(sdel, 1, /*keepdim=*/true)));
  return vw;
}

struct RenderResult {
  Tensor image;  // [H, W, 3]
  int rays = 0;
};

// Differentiable render of the field at a viewport. Stratified jitter and the
// background color are supplied by the caller; pass rng=nullptr (or
// sampling.stratified=false) for deterministic midpoint samples.
inline RenderResult render_field(const RadianceField& field, const CameraViewport& vp,
                                 const RaySamplingConfig& sampling, const Vec3& background,
                                 Rng* rng = nullptr) {
  sampling.validate();
  Rays rays = camera_rays(vp);
  const int R = rays.h * rays.w;
  const int S = sampling.samples_per_ray;
  const float range = sampling.far - sampling.near;
  const float step = range / static_cast<float>(S);
  const bool jitter = sampling.stratified && rng != nullptr;

  // sample depths and deltas (deltas: spacing to the next sample, last = step)
  std::vector<float> ts(static_cast<size_t>(R) * S);
  std::vector<float> deltas(static_cast<size_t>(R) * S);
  for (int r = 0; r < R; ++r) {
    float* trow = ts.data() + static_cast<size_t>(r) * S;
    for (int s = 0; s < S; ++s) {
      float u = jitter ? rng->uniformf(0.0f, 1.0f) : 0.5f;
      trow[s] = sampling.near + (static_cast<float>(s) + u) * step;
    }
    float* drow = deltas.data() + static_cast<size_t>(r) * S;
    for (int s = 0; s < S - 1; ++s) drow[s] = trow[s + 1] - trow[s];
    drow[S - 1] = step;
  }

  // positions, density offsets, encodings (constants on the tape)
  const int pd = field.cfg.enc.pos_dim();
  const int dd = field.cfg.enc.dir_dim();
  const float bound = field.cfg.enc.bound;
  std::vector<float> enc_pos(static_cast<size_t>(R) * S * pd);
  std::vector<float> offsets(static_cast<size_t>(R) * S);
  std::vector<float> enc_dir(static_cast<size_t>(R) * S * dd);
  parallel_for(R, [&](int64_t lo, int64_t hi) {
    std::vector<float> dir_enc_row(static_cast<size_t>(dd));
    for (int64_t r = lo; r < hi; ++r) {
      const float* o = rays.origins.data() + r * 3;
      const float* d = rays.directions.data() + r * 3;
      encode_vec3(d, field.cfg.enc.dir_freqs, dir_enc_row.data());
      for (int s = 0; s < S; ++s) {
        float t = ts[static_cast<size_t>(r) * S + s];
        float p[3] = {o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]};
        float pn = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        offsets[static_cast<size_t>(r) * S + s] =
            field.cfg.density_init.strength *
            (1.0f - pn / field.cfg.density_init.radius);
        float pc[3] = {std::clamp(p[0], -bound, bound), std::clamp(p[1], -bound, bound),
                       std::clamp(p[2], -bound, bound)};
        if (pc[0] != p[0] || pc[1] != p[1] || pc[2] != p[2])
          detail::encode_clamp_count()++;
        encode_vec3(pc, field.cfg.enc.pos_freqs,
                    enc_pos.data() + (static_cast<size_t>(r) * S + s) * pd);
        std::memcpy(enc_dir.data() + (static_cast<size_t>(r) * S + s) * dd,
                    dir_enc_row.data(), static_cast<size_t>(dd) * sizeof(float));
      }
    }
  });

  int64_t N = static_cast<int64_t>(R) * S;
  Tensor enc_pos_t = Tensor::from_vector({N, pd}, std::move(enc_pos));
  Tensor offs_t = Tensor::from_vector({N, 1}, std::move(offsets));
  Tensor enc_dir_t = Tensor::from_vector({N, dd}, std::move(enc_dir));
  Tensor delta_t = Tensor::from_vector({R, S}, std::move(deltas));

  auto [sigma, z] = field.density_from_encoding(enc_pos_t, offs_t);
  Tensor rgb = field.color_from_feature(z, enc_dir_t);

  VolumeWeights vw = volume_weights(reshape(sigma, {R, S}), delta_t);
  Tensor w3 = reshape(vw.weights, {R, S, 1});
  Tensor rgb3 = reshape(rgb, {R, S, 3});
  Tensor fg = sum_axis(w3 * rgb3, 1, /*keepdim=*/false);  // [R, 3]
  Tensor bg = Tensor::from_vector({3}, {background.x, background.y, background.z});
  Tensor img = fg + (1.0f - vw.wsum) * bg;  // [R,1] * [3] -> [R,3]

  RenderResult res;
  res.image = reshape(img, {rays.h, rays.w, 3});
  res.rays = R;
  return res;
}

// Evaluation render: no tape, no jitter.
inline Image render_image(const RadianceField& field, const CameraViewport& vp,
                          const RaySamplingConfig& sampling, const Vec3& background) {
  NoGradGuard ng;
  RaySamplingConfig s = sampling;
  s.stratified = false;
  return image_from_hwc_tensor(render_field(field, vp, s, background).image);
}

}  // namespace nerfmark
