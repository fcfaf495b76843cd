#pragma once

// Plain (non-differentiable) float images in [0,1], HWC row-major, plus PPM
// and DMKF I/O. DMKF is the lossless dump format: magic "DMKF", u32 height,
// width, channels, then channel-planar float32 data, all little-endian.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nerfmark/common.hpp"
#include "nerfmark/tensor.hpp"

namespace nerfmark {

struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<float> data;  // h * w * c, HWC

  Image() = default;
  Image(int h_, int w_, int c_, float fill = 0.0f)
      : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, fill) {}

  float& at(int y, int x, int ch) {
    return data[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  float at(int y, int x, int ch) const {
    return data[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  void clamp01() {
    for (float& v : data) v = std::min(1.0f, std::max(0.0f, v));
  }
};

// --- conversions ------------------------------------------------------------------

inline Image image_from_hwc_tensor(const Tensor& t) {
  NM_CHECK(t.rank() == 3, "image_from_hwc_tensor: expected [H,W,C]");
  Image img(static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)),
            static_cast<int>(t.dim(2)));
  img.data = t.values();
  return img;
}

inline Tensor hwc_tensor(const Image& img) {
  return Tensor::from_vector({img.h, img.w, img.c}, img.data);
}

// [1, C, H, W] layout used by the conv stacks.
inline Tensor chw_tensor(const Image& img) {
  Tensor t = Tensor::zeros({1, img.c, img.h, img.w});
  float* p = t.data();
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) *p++ = img.at(y, x, ch);
  return t;
}

inline Image image_from_chw(const Tensor& t, int batch_index = 0) {
  NM_CHECK(t.rank() == 4, "image_from_chw: expected [B,C,H,W]");
  int c = static_cast<int>(t.dim(1)), h = static_cast<int>(t.dim(2)),
      w = static_cast<int>(t.dim(3));
  Image img(h, w, c);
  const float* p = t.data() + static_cast<int64_t>(batch_index) * c * h * w;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) img.at(y, x, ch) = *p++;
  return img;
}

// --- resampling ---------------------------------------------------------------------

inline float bilinear_at(const Image& img, double y, double x, int ch) {
  double fy = std::floor(y), fx = std::floor(x);
  double wy = y - fy, wx = x - fx;
  auto sample = [&](int64_t yy, int64_t xx) -> float {
    yy = std::clamp<int64_t>(yy, 0, img.h - 1);
    xx = std::clamp<int64_t>(xx, 0, img.w - 1);
    return img.at(static_cast<int>(yy), static_cast<int>(xx), ch);
  };
  int64_t y0 = static_cast<int64_t>(fy), x0 = static_cast<int64_t>(fx);
  return static_cast<float>((1 - wy) * ((1 - wx) * sample(y0, x0) + wx * sample(y0, x0 + 1)) +
                            wy * ((1 - wx) * sample(y0 + 1, x0) + wx * sample(y0 + 1, x0 + 1)));
}

// Bilinear resample of the window [y0,y1) x [x0,x1) to oh x ow.
inline Image resize_rect_plain(const Image& img, double y0, double x0, double y1,
                               double x1, int oh, int ow) {
  NM_CHECK(y1 > y0 && x1 > x0 && oh >= 1 && ow >= 1, "resize_rect_plain: bad args");
  Image out(oh, ow, img.c);
  double sy = (y1 - y0) / oh, sx = (x1 - x0) / ow;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int ch = 0; ch < img.c; ++ch)
        out.at(y, x, ch) = bilinear_at(img, y0 + (y + 0.5) * sy - 0.5,
                                       x0 + (x + 0.5) * sx - 0.5, ch);
  return out;
}

inline Image resize_plain(const Image& img, int oh, int ow) {
  return resize_rect_plain(img, 0, 0, img.h, img.w, oh, ow);
}

// Rotation about the center, bilinear, zero fill outside.
inline Image rotate_plain(const Image& img, double angle) {
  Image out(img.h, img.w, img.c);
  double cy = img.h / 2.0, cx = img.w / 2.0;
  double c = std::cos(angle), s = std::sin(angle);
  for (int oy = 0; oy < img.h; ++oy) {
    for (int ox = 0; ox < img.w; ++ox) {
      double dy = oy + 0.5 - cy, dx = ox + 0.5 - cx;
      double sx = c * dx + s * dy + cx - 0.5;
      double sy = -s * dx + c * dy + cy - 0.5;
      if (sy < -1 || sy > img.h || sx < -1 || sx > img.w) continue;  // fully outside
      double fy = std::floor(sy), fx = std::floor(sx);
      double wy = sy - fy, wx = sx - fx;
      for (int ch = 0; ch < img.c; ++ch) {
        auto tap = [&](int64_t yy, int64_t xx) -> double {
          if (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) return 0.0;
          return img.at(static_cast<int>(yy), static_cast<int>(xx), ch);
        };
        int64_t iy = static_cast<int64_t>(fy), ix = static_cast<int64_t>(fx);
        out.at(oy, ox, ch) = static_cast<float>(
            (1 - wy) * ((1 - wx) * tap(iy, ix) + wx * tap(iy, ix + 1)) +
            wy * ((1 - wx) * tap(iy + 1, ix) + wx * tap(iy + 1, ix + 1)));
      }
    }
  }
  return out;
}

// Separable Gaussian blur, kernel radius ceil(3*sigma); sigma -> 0 degenerates
// to the identity. Edges are clamped.
inline Image gaussian_blur(const Image& img, double sigma) {
  NM_CHECK(sigma >= 0.0, "gaussian_blur: sigma must be >= 0");
  if (sigma == 0.0) return img;
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  if (radius < 1) radius = 1;
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double norm = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    norm += k[static_cast<size_t>(i + radius)];
  }
  for (double& v : k) v /= norm;

  Image tmp(img.h, img.w, img.c), out(img.h, img.w, img.c);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          int xx = std::clamp(x + i, 0, img.w - 1);
          acc += k[static_cast<size_t>(i + radius)] * img.at(y, xx, ch);
        }
        tmp.at(y, x, ch) = static_cast<float>(acc);
      }
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          int yy = std::clamp(y + i, 0, img.h - 1);
          acc += k[static_cast<size_t>(i + radius)] * tmp.at(yy, x, ch);
        }
        out.at(y, x, ch) = static_cast<float>(acc);
      }
  return out;
}

// --- metrics ------------------------------------------------------------------------

// -10 log10(MSE) for unit-range images; MSE == 0 is capped at 100 dB.
inline double psnr(const Image& a, const Image& b) {
  NM_CHECK(a.h == b.h && a.w == b.w && a.c == b.c,
           "psnr: shape mismatch " << a.h << "x" << a.w << "x" << a.c << " vs "
                                   << b.h << "x" << b.w << "x" << b.c);
  double acc = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = static_cast<double>(a.data[i]) - b.data[i];
    acc += d * d;
  }
  double mse = acc / static_cast<double>(a.data.size());
  if (mse <= 0.0) return 100.0;
  return std::min(100.0, -10.0 * std::log10(mse));
}

// --- PPM I/O ------------------------------------------------------------------------

inline void save_ppm(const Image& img, const std::string& path) {
  NM_CHECK(img.c == 3, "save_ppm: only 3-channel images");
  std::ofstream f(path, std::ios::binary);
  NM_CHECK(f.good(), "save_ppm: cannot open " << path);
  f << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(img.w) * 3);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        float v = std::min(1.0f, std::max(0.0f, img.at(y, x, ch)));
        row[static_cast<size_t>(x) * 3 + ch] =
            static_cast<uint8_t>(std::lround(v * 255.0f));
      }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  NM_CHECK(f.good(), "save_ppm: write failed for " << path);
}

inline Image load_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  NM_CHECK(f.good(), "load_ppm: cannot open " << path);
  std::string magic;
  f >> magic;
  NM_CHECK(magic == "P6", "load_ppm: not a binary PPM: " << path);
  auto skip_ws_comments = [&]() {
    while (true) {
      int ch = f.peek();
      if (ch == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(ch)) {
        f.get();
      } else {
        break;
      }
    }
  };
  int w, h, maxval;
  skip_ws_comments();
  f >> w;
  skip_ws_comments();
  f >> h;
  skip_ws_comments();
  f >> maxval;
  NM_CHECK(maxval == 255, "load_ppm: only maxval 255 supported");
  f.get();  // single whitespace after header
  Image img(h, w, 3);
  std::vector<uint8_t> buf(static_cast<size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  NM_CHECK(f.gcount() == static_cast<std::streamsize>(buf.size()),
           "load_ppm: truncated file " << path);
  for (size_t i = 0; i < buf.size(); ++i)
    img.data[i] = static_cast<float>(buf[i]) / 255.0f;
  return img;
}

// --- DMKF I/O -----------------------------------------------------------------------

inline void save_dmkf(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  NM_CHECK(f.good(), "save_dmkf: cannot open " << path);
  f.write("DMKF", 4);
  uint32_t dims[3] = {static_cast<uint32_t>(img.h), static_cast<uint32_t>(img.w),
                      static_cast<uint32_t>(img.c)};
  f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  // channel-planar
  std::vector<float> plane(static_cast<size_t>(img.h) * img.w);
  for (int ch = 0; ch < img.c; ++ch) {
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        plane[static_cast<size_t>(y) * img.w + x] = img.at(y, x, ch);
    f.write(reinterpret_cast<const char*>(plane.data()),
            static_cast<std::streamsize>(plane.size() * sizeof(float)));
  }
  NM_CHECK(f.good(), "save_dmkf: write failed for " << path);
}

inline Image load_dmkf(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  NM_CHECK(f.good(), "load_dmkf: cannot open " << path);
  char magic[4];
  f.read(magic, 4);
  NM_CHECK(f.gcount() == 4 && std::memcmp(magic, "DMKF", 4) == 0,
           "load_dmkf: bad magic in " << path);
  uint32_t dims[3];
  f.read(reinterpret_cast<char*>(dims), sizeof(dims));
  NM_CHECK(f.gcount() == sizeof(dims), "load_dmkf: truncated header");
  Image img(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
            static_cast<int>(dims[2]));
  std::vector<float> plane(static_cast<size_t>(img.h) * img.w);
  for (int ch = 0; ch < img.c; ++ch) {
    f.read(reinterpret_cast<char*>(plane.data()),
           static_cast<std::streamsize>(plane.size() * sizeof(float)));
    NM_CHECK(f.gcount() == static_cast<std::streamsize>(plane.size() * sizeof(float)),
             "load_dmkf: truncated data in " << path);
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        img.at(y, x, ch) = plane[static_cast<size_t>(y) * img.w + x];
  }
  return img;
}

}  // namespace nerfmark
