// Copyright 2026 The ssflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>

#include "ssflow/geometry.hpp"
#include "ssflow/pipeline/scene.hpp"
#include "ssflow/random.hpp"

namespace ssflow {

struct MotionModel {
  double max_rotation_deg = 15.0;
  double max_translation = 1.0;
  // Overrides the random per-shape translation with one shared vector.
  std::optional<Vec3> fixed_translation;
};

struct SyntheticSpec {
  std::size_t shapes = 6;
  std::size_t points = 1024;  // total over all shapes
  MotionModel motion;
  double noise_sigma = 0.0;   // Gaussian jitter added to Q
  std::uint64_t seed = 0;
  double layout_extent = 3.0; // shape centers are drawn from a cube of this side
  double min_size = 0.3;      // half-size range of each shape
  double max_size = 0.7;
};

enum class ShapeKind { kBox, kSphere, kPlane };

namespace detail {

using Mat3 = std::array<Vec3, 3>;

inline Vec3 mat_vec(const Mat3& m, const Vec3& v) { return {dot(m[0], v), dot(m[1], v), dot(m[2], v)}; }

inline Vec3 random_unit(Rng& rng) {
  for (;;) {
    const Vec3 v{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
    const double n = norm(v);
    if (n > 1e-3 && n <= 1.0) return (1.0 / n) * v;
  }
}

// Rodrigues rotation minus identity, (R - I); exactly zero for angle 0.
inline Mat3 rotation_minus_identity(const Vec3& axis, double angle) {
  const double s = std::sin(angle);
  const double c1 = 1.0 - std::cos(angle);
  const double x = axis[0], y = axis[1], z = axis[2];
  return Mat3{Vec3{c1 * (x * x - 1.0), -s * z + c1 * x * y, s * y + c1 * x * z},
              Vec3{s * z + c1 * x * y, c1 * (y * y - 1.0), -s * x + c1 * y * z},
              Vec3{-s * y + c1 * x * z, s * x + c1 * y * z, c1 * (z * z - 1.0)}};
}

// Point on the surface of a shape centered at the origin.
inline Vec3 sample_surface(ShapeKind kind, const Vec3& half, const Vec3& normal, Rng& rng) {
  switch (kind) {
    case ShapeKind::kSphere:
      return half[0] * random_unit(rng);
    case ShapeKind::kBox: {
      const double areas[3] = {half[1] * half[2], half[0] * half[2], half[0] * half[1]};
      const double pick = uniform(rng, 0.0, areas[0] + areas[1] + areas[2]);
      const int axis = pick < areas[0] ? 0 : (pick < areas[0] + areas[1] ? 1 : 2);
      Vec3 p{uniform(rng, -half[0], half[0]), uniform(rng, -half[1], half[1]), uniform(rng, -half[2], half[2])};
      p[axis] = uniform01(rng) < 0.5 ? -half[axis] : half[axis];
      return p;
    }
    case ShapeKind::kPlane: {
      // Rectangle spanned by two directions orthogonal to `normal`.
      const Vec3 helper = std::abs(normal[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
      Vec3 u = helper - dot(helper, normal) * normal;
      u = (1.0 / norm(u)) * u;
      const Vec3 v{normal[1] * u[2] - normal[2] * u[1], normal[2] * u[0] - normal[0] * u[2],
                   normal[0] * u[1] - normal[1] * u[0]};
      return uniform(rng, -half[0], half[0]) * u + uniform(rng, -half[1], half[1]) * v;
    }
  }
  return {0, 0, 0};
}

}  // namespace detail

// Rigid shapes (boxes, spheres, planar patches) each moved by its own
// rigid motion. Q = P + flow (+ jitter); the flow is exact.
inline ScenePair generate_synthetic_scene(const SyntheticSpec& spec) {
  if (spec.shapes == 0 || spec.points == 0) throw ContractError("synthetic scene: counts must be >= 1");
  Rng rng = make_rng(spec.seed, "scene");
  ScenePair scene;
  scene.id = "synthetic-" + std::to_string(spec.seed);
  FlowField flow;
  const double pi = 3.14159265358979323846;
  for (std::size_t s = 0; s < spec.shapes; ++s) {
    const std::size_t count = spec.points / spec.shapes + (s < spec.points % spec.shapes ? 1 : 0);
    const auto kind = static_cast<ShapeKind>(uniform_index(rng, 3));
    const double h = spec.layout_extent / 2.0;
    const Vec3 center{uniform(rng, -h, h), uniform(rng, -h, h), uniform(rng, -h, h)};
    const Vec3 half{uniform(rng, spec.min_size, spec.max_size), uniform(rng, spec.min_size, spec.max_size),
                    uniform(rng, spec.min_size, spec.max_size)};
    const Vec3 plane_normal = detail::random_unit(rng);
    const Vec3 axis = detail::random_unit(rng);
    const double angle = uniform(rng, 0.0, spec.motion.max_rotation_deg) * pi / 180.0;
    Vec3 translation;
    if (spec.motion.fixed_translation) {
      translation = *spec.motion.fixed_translation;
    } else {
      translation = (spec.motion.max_translation * std::cbrt(uniform01(rng))) * detail::random_unit(rng);
    }
    const auto rot = detail::rotation_minus_identity(axis, angle);
    for (std::size_t k = 0; k < count; ++k) {
      const Vec3 local = detail::sample_surface(kind, half, plane_normal, rng);
      const Vec3 p = center + local;
      scene.p.coords.push_back(p);
      flow.push_back(detail::mat_vec(rot, local) + translation);
    }
  }
  scene.q = scene.p;
  for (std::size_t i = 0; i < scene.q.size(); ++i) {
    scene.q[i] = scene.p[i] + flow[i];
    if (spec.noise_sigma > 0.0) {
      for (double& c : scene.q[i]) c += spec.noise_sigma * normal(rng);
    }
  }
  scene.flow = std::move(flow);
  return scene;
}

}  // namespace ssflow
