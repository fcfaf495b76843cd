#pragma once

// Procedural target scenes: compositions of analytic shapes (sphere, box,
// torus) rendered by SDF sphere-tracing with Lambertian shading. A scene is
// a deterministic function of (spec, viewport, resolution, background), which
// makes it usable as the exact target image provider for guidance.

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>
#include <vector>

#include "nerfmark/camera.hpp"
#include "nerfmark/image.hpp"

namespace nerfmark {

struct SceneShape {
  enum class Type { Sphere, Box, Torus };
  Type type = Type::Sphere;
  Vec3 center{0, 0, 0};
  float radius = 0.3f;          // sphere
  Vec3 extents{0.2f, 0.2f, 0.2f};  // box half-extents
  float major = 0.3f, minor = 0.1f;  // torus (axis +y)
  Vec3 albedo{0.8f, 0.3f, 0.3f};

  float sdf(const Vec3& p) const {
    Vec3 q = p - center;
    switch (type) {
      case Type::Sphere:
        return q.norm() - radius;
      case Type::Box: {
        Vec3 d{std::abs(q.x) - extents.x, std::abs(q.y) - extents.y,
               std::abs(q.z) - extents.z};
        Vec3 dpos{std::max(d.x, 0.0f), std::max(d.y, 0.0f), std::max(d.z, 0.0f)};
        float inside = std::min(std::max(d.x, std::max(d.y, d.z)), 0.0f);
        return dpos.norm() + inside;
      }
      case Type::Torus: {
        float rxz = std::sqrt(q.x * q.x + q.z * q.z) - major;
        return std::sqrt(rxz * rxz + q.y * q.y) - minor;
      }
    }
    return 1e9f;
  }
};

struct SceneSpec {
  std::string id;
  std::vector<SceneShape> shapes;
  Vec3 light_dir{0.5f, 0.8f, 0.6f};  // normalized at use
  float ambient = 0.35f;
  float diffuse = 0.65f;

  float sdf(const Vec3& p, int* nearest = nullptr) const {
    float best = 1e9f;
    int bi = -1;
    for (size_t i = 0; i < shapes.size(); ++i) {
      float d = shapes[i].sdf(p);
      if (d < best) {
        best = d;
        bi = static_cast<int>(i);
      }
    }
    if (nearest) *nearest = bi;
    return best;
  }

  Vec3 normal(const Vec3& p) const {
    const float h = 1e-3f;
    float dx = sdf({p.x + h, p.y, p.z}) - sdf({p.x - h, p.y, p.z});
    float dy = sdf({p.x, p.y + h, p.z}) - sdf({p.x, p.y - h, p.z});
    float dz = sdf({p.x, p.y, p.z + h}) - sdf({p.x, p.y, p.z - h});
    Vec3 n{dx, dy, dz};
    float nn = n.norm();
    if (nn <= 0) return {0, 1, 0};
    return {n.x / nn, n.y / nn, n.z / nn};
  }
};

// Built-in scenes; shape positions stay inside the unit scene bound.
inline SceneSpec builtin_scene(const std::string& name) {
  SceneSpec s;
  s.id = name;
  if (name == "orb") {
    SceneShape a;
    a.type = SceneShape::Type::Sphere;
    a.center = {0.0f, 0.05f, 0.0f};
    a.radius = 0.32f;
    a.albedo = {0.85f, 0.25f, 0.2f};
    SceneShape b;
    b.type = SceneShape::Type::Torus;
    b.center = {0.0f, -0.12f, 0.0f};
    b.major = 0.42f;
    b.minor = 0.09f;
    b.albedo = {0.2f, 0.45f, 0.85f};
    s.shapes = {a, b};
  } else if (name == "blocks") {
    SceneShape a;
    a.type = SceneShape::Type::Box;
    a.center = {-0.18f, -0.1f, 0.05f};
    a.extents = {0.22f, 0.22f, 0.22f};
    a.albedo = {0.9f, 0.7f, 0.15f};
    SceneShape b;
    b.type = SceneShape::Type::Sphere;
    b.center = {0.22f, 0.12f, -0.08f};
    b.radius = 0.24f;
    b.albedo = {0.25f, 0.75f, 0.4f};
    s.shapes = {a, b};
  } else {
    NM_FAIL("builtin_scene: unknown scene '" << name << "' (try: orb, blocks)");
  }
  return s;
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.id = j.value("id", "custom");
  if (j.contains("ambient")) s.ambient = j["ambient"].get<float>();
  if (j.contains("diffuse")) s.diffuse = j["diffuse"].get<float>();
  if (j.contains("light_dir")) {
    auto v = j["light_dir"];
    s.light_dir = {v[0].get<float>(), v[1].get<float>(), v[2].get<float>()};
  }
  NM_CHECK(j.contains("shapes") && j["shapes"].is_array() && !j["shapes"].empty(),
           "scene: 'shapes' array required");
  for (const auto& sj : j["shapes"]) {
    SceneShape sh;
    std::string type = sj.at("type").get<std::string>();
    auto vec3 = [&](const char* key, Vec3 fallback) {
      if (!sj.contains(key)) return fallback;
      auto v = sj[key];
      return Vec3{v[0].get<float>(), v[1].get<float>(), v[2].get<float>()};
    };
    sh.center = vec3("center", {0, 0, 0});
    sh.albedo = vec3("albedo", {0.8f, 0.3f, 0.3f});
    if (type == "sphere") {
      sh.type = SceneShape::Type::Sphere;
      sh.radius = sj.value("radius", 0.3f);
    } else if (type == "box") {
      sh.type = SceneShape::Type::Box;
      sh.extents = vec3("extents", {0.2f, 0.2f, 0.2f});
    } else if (type == "torus") {
      sh.type = SceneShape::Type::Torus;
      sh.major = sj.value("major", 0.3f);
      sh.minor = sj.value("minor", 0.1f);
    } else {
      NM_FAIL("scene: unknown shape type '" << type << "'");
    }
    s.shapes.push_back(sh);
  }
  return s;
}

inline SceneSpec load_scene(const std::string& name_or_path) {
  if (name_or_path.size() > 5 &&
      name_or_path.substr(name_or_path.size() - 5) == ".json") {
    std::ifstream f(name_or_path);
    NM_CHECK(f.good(), "load_scene: cannot open " << name_or_path);
    nlohmann::json j = nlohmann::json::parse(f);
    return scene_from_json(j);
  }
  return builtin_scene(name_or_path);
}

// Sphere-traced render of the analytic scene; the exact target image for a
// viewport. Background is composited where rays miss.
inline Image render_scene_target(const SceneSpec& scene, const CameraViewport& vp,
                                 const Vec3& background) {
  Rays rays = camera_rays(vp);
  Image img(vp.height, vp.width, 3);
  Vec3 light = scene.light_dir.normalized();
  int n = vp.height * vp.width;
  parallel_for(n, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      Vec3 o{rays.origins[i * 3], rays.origins[i * 3 + 1], rays.origins[i * 3 + 2]};
      Vec3 d{rays.directions[i * 3], rays.directions[i * 3 + 1],
             rays.directions[i * 3 + 2]};
      float t = 0.0f;
      const float t_max = static_cast<float>(vp.radius) + 2.0f;
      bool hit = false;
      int nearest = -1;
      for (int step = 0; step < 160 && t < t_max; ++step) {
        Vec3 p = o + d * t;
        float dist = scene.sdf(p, &nearest);
        if (dist < 1e-4f) {
          hit = true;
          break;
        }
        t += std::max(dist, 1e-4f);
      }
      float* px = img.data.data() + i * 3;
      if (!hit || nearest < 0) {
        px[0] = background.x;
        px[1] = background.y;
        px[2] = background.z;
        continue;
      }
      Vec3 p = o + d * t;
      Vec3 nrm = scene.normal(p);
      float lambert = std::max(0.0f, nrm.dot(light));
      float shade = scene.ambient + scene.diffuse * lambert;
      const Vec3& alb = scene.shapes[static_cast<size_t>(nearest)].albedo;
      px[0] = std::min(1.0f, alb.x * shade);
      px[1] = std::min(1.0f, alb.y * shade);
      px[2] = std::min(1.0f, alb.z * shade);
    }
  });
  return img;
}

}  // namespace nerfmark
