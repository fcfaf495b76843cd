#pragma once

// Spherical look-at camera around the origin (+y up, right-handed) and
// pinhole ray generation.

#include <cmath>
#include <vector>

#include "nerfmark/common.hpp"

namespace nerfmark {

struct Vec3 {
  float x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(float s) const { return {x * s, y * s, z * s}; }
  float dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  float norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    float n = norm();
    NM_CHECK(n > 0, "Vec3: cannot normalize zero vector");
    return {x / n, y / n, z / n};
  }
};

struct CameraViewport {
  double azimuth = 0.0;     // radians in [0, 2pi)
  double elevation = 0.0;   // radians
  double radius = 2.5;      // distance from origin
  double fov = 40.0 * M_PI / 180.0;  // vertical field of view, radians
  int height = 64, width = 64;

  Vec3 position() const {
    double ce = std::cos(elevation);
    return {static_cast<float>(radius * ce * std::sin(azimuth)),
            static_cast<float>(radius * std::sin(elevation)),
            static_cast<float>(radius * ce * std::cos(azimuth))};
  }
};

struct Rays {
  int h = 0, w = 0;
  std::vector<float> origins;     // h*w*3
  std::vector<float> directions;  // h*w*3, unit
};

inline Rays camera_rays(const CameraViewport& vp) {
  NM_CHECK(vp.fov > 0.0 && vp.fov < M_PI, "camera_rays: degenerate fov " << vp.fov);
  NM_CHECK(vp.height >= 8 && vp.width >= 8,
           "camera_rays: resolution must be at least 8x8");
  NM_CHECK(vp.radius > 0.0, "camera_rays: radius must be positive");

  Vec3 pos = vp.position();
  Vec3 forward = (Vec3{0, 0, 0} - pos).normalized();
  Vec3 world_up{0, 1, 0};
  // guard the poles
  if (std::abs(forward.y) > 0.999f) world_up = Vec3{0, 0, 1};
  // (right, up, -forward) is right-handed
  Vec3 right = forward.cross(world_up).normalized();
  Vec3 up = right.cross(forward).normalized();

  double tan_half = std::tan(vp.fov / 2.0);
  double aspect = static_cast<double>(vp.width) / vp.height;

  Rays rays;
  rays.h = vp.height;
  rays.w = vp.width;
  rays.origins.resize(static_cast<size_t>(vp.height) * vp.width * 3);
  rays.directions.resize(rays.origins.size());
  size_t idx = 0;
  for (int i = 0; i < vp.height; ++i) {
    double ndc_y = 1.0 - 2.0 * (i + 0.5) / vp.height;  // top row -> +1
    for (int j = 0; j < vp.width; ++j) {
      double ndc_x = 2.0 * (j + 0.5) / vp.width - 1.0;
      Vec3 d = forward + right * static_cast<float>(ndc_x * tan_half * aspect) +
               up * static_cast<float>(ndc_y * tan_half);
      d = d.normalized();
      rays.origins[idx] = pos.x;
      rays.origins[idx + 1] = pos.y;
      rays.origins[idx + 2] = pos.z;
      rays.directions[idx] = d.x;
      rays.directions[idx + 1] = d.y;
      rays.directions[idx + 2] = d.z;
      idx += 3;
    }
  }
  return rays;
}

struct RaySamplingConfig {
  int samples_per_ray = 32;
  float near = 1.3f;
  float far = 3.7f;
  bool stratified = true;

  void validate() const {
    NM_CHECK(samples_per_ray >= 2, "sampling: need at least 2 samples per ray");
    NM_CHECK(near > 0 && near < far, "sampling: need 0 < near < far");
  }

  static RaySamplingConfig for_radius(double radius, int samples = 32,
                                      bool stratified = true) {
    RaySamplingConfig s;
    s.samples_per_ray = samples;
    s.near = static_cast<float>(radius - 1.2);
    s.far = static_cast<float>(radius + 1.2);
    s.stratified = stratified;
    s.validate();
    return s;
  }
};

}  // namespace nerfmark
