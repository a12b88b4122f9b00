#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "pcq/synthesis.hpp"

namespace pcq {
namespace {

constexpr double kPi = std::numbers::pi;

// Weighted choice among surface patches by area.
std::size_t pick_patch(Rng& rng, const std::vector<double>& areas) {
  double total = 0.0;
  for (double a : areas) total += a;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < areas.size(); ++i) {
    if (u < areas[i]) return i;
    u -= areas[i];
  }
  return areas.size() - 1;
}

double sign(Rng& rng) { return rng.uniform() < 0.5 ? -1.0 : 1.0; }

Vec3 sample_box(Rng& rng, const Vec3& h, const Vec3& center = Vec3::Zero()) {
  const std::vector<double> areas{h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
  const auto axis = static_cast<int>(pick_patch(rng, areas));
  Vec3 p;
  for (int i = 0; i < 3; ++i) p[i] = rng.uniform(-h[i], h[i]);
  p[axis] = sign(rng) * h[axis];
  return p + center;
}

Vec3 sample_disk(Rng& rng, double radius) {
  const double r = radius * std::sqrt(rng.uniform());
  const double theta = 2.0 * kPi * rng.uniform();
  return {r * std::cos(theta), r * std::sin(theta), 0.0};
}

Vec3 sample_ellipsoid(Rng& rng, const Vec3& axes) {
  // Sphere point mapped onto the ellipsoid, accepted in proportion to the
  // local area stretch so the result is uniform in surface area.
  const double a = axes.x(), b = axes.y(), c = axes.z();
  const double g_max = std::max({b * c, a * c, a * b});
  for (;;) {
    Vec3 u(rng.normal(), rng.normal(), rng.normal());
    const double norm = u.norm();
    if (norm < 1e-12) continue;
    u /= norm;
    const double g = std::sqrt(std::pow(b * c * u.x(), 2) + std::pow(a * c * u.y(), 2) + std::pow(a * b * u.z(), 2));
    if (rng.uniform() * g_max <= g) return {a * u.x(), b * u.y(), c * u.z()};
  }
}

Vec3 sample_cylinder(Rng& rng, double radius, double half_height) {
  const std::vector<double> areas{2.0 * kPi * radius * 2.0 * half_height, 2.0 * kPi * radius * radius};
  if (pick_patch(rng, areas) == 0) {
    const double theta = 2.0 * kPi * rng.uniform();
    return {radius * std::cos(theta), radius * std::sin(theta), rng.uniform(-half_height, half_height)};
  }
  Vec3 p = sample_disk(rng, radius);
  p.z() = sign(rng) * half_height;
  return p;
}

Vec3 sample_car(Rng& rng, const ShapeParams& s) {
  const double L = s.size.x(), W = s.size.y(), H = s.size.z();
  const double rc = s.cabin_radius, lc = s.cabin_half_length, rw = s.wheel_radius;
  const double cabin_x = -0.1 * L;
  const double wheel_x = 0.65 * L;
  // body, cabin shell, cabin end caps, four wheels
  const std::vector<double> areas{8.0 * (L * W + L * H + W * H), kPi * rc * 2.0 * lc, kPi * rc * rc,
                                  4.0 * kPi * rw * rw};
  switch (pick_patch(rng, areas)) {
    case 0: return sample_box(rng, s.size);
    case 1: {
      const double theta = kPi * rng.uniform();
      return {cabin_x + rng.uniform(-lc, lc), rc * std::cos(theta), H + rc * std::sin(theta)};
    }
    case 2: {
      // half-disk: reflect the lower half upward
      Vec3 d = sample_disk(rng, rc);
      return {cabin_x + sign(rng) * lc, d.x(), H + std::abs(d.y())};
    }
    default: {
      const Vec3 d = sample_disk(rng, rw);
      const double x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * wheel_x;
      const double y = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (W + 0.02);
      return {x + d.x(), y, -H + d.y()};
    }
  }
}

}  // namespace

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::box: return "box";
    case ShapeKind::ellipsoid: return "ellipsoid";
    case ShapeKind::car_composite: return "car_composite";
    case ShapeKind::cylinder: return "cylinder";
  }
  return "unknown";
}

ShapeKind parse_shape_kind(std::string_view name) {
  for (auto kind : all_shape_kinds()) {
    if (to_string(kind) == name) return kind;
  }
  throw ConfigError(fmt::format("unknown shape kind '{}'", name));
}

std::vector<ShapeKind> all_shape_kinds() {
  return {ShapeKind::box, ShapeKind::ellipsoid, ShapeKind::car_composite, ShapeKind::cylinder};
}

ShapeParams random_shape_params(ShapeKind kind, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5ba9e));
  ShapeParams p;
  p.kind = kind;
  switch (kind) {
    case ShapeKind::box:
      p.size = {rng.uniform(0.6, 1.0), rng.uniform(0.3, 0.7), rng.uniform(0.2, 0.6)};
      break;
    case ShapeKind::ellipsoid:
      p.size = {rng.uniform(0.5, 1.0), rng.uniform(0.3, 0.8), rng.uniform(0.25, 0.6)};
      break;
    case ShapeKind::cylinder: {
      const double r = rng.uniform(0.3, 0.6);
      p.size = {r, r, rng.uniform(0.4, 1.0)};
      break;
    }
    case ShapeKind::car_composite:
      p.size = {rng.uniform(0.9, 1.1), rng.uniform(0.4, 0.5), rng.uniform(0.15, 0.22)};
      p.cabin_radius = rng.uniform(0.2, 0.3);
      p.cabin_half_length = rng.uniform(0.35, 0.55);
      p.wheel_radius = rng.uniform(0.12, 0.18);
      break;
  }
  return p;
}

PointCloud sample_surface(const ShapeParams& params, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Point> points;
  points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Vec3 p = Vec3::Zero();
    switch (params.kind) {
      case ShapeKind::box: p = sample_box(rng, params.size); break;
      case ShapeKind::ellipsoid: p = sample_ellipsoid(rng, params.size); break;
      case ShapeKind::cylinder: p = sample_cylinder(rng, params.size.x(), params.size.z()); break;
      case ShapeKind::car_composite: p = sample_car(rng, params); break;
    }
    points.push_back(p.cast<float>());
  }
  return PointCloud(std::move(points));
}

PointCloud generate_shape(ShapeKind kind, std::uint64_t seed) {
  const auto params = random_shape_params(kind, seed);
  auto cloud = normalize(sample_surface(params, kShapePoints, derive_seed(seed, 0x5a3f))).first;
  cloud.set_id(fmt::format("{}_{:016x}", to_string(kind), seed));
  return cloud;
}

ShapeBank generate_bank(const std::vector<ShapeKind>& kinds, std::size_t per_kind, std::uint64_t seed) {
  ShapeBank bank;
  for (auto kind : kinds) {
    for (std::size_t i = 0; i < per_kind; ++i) {
      const auto shape_seed = derive_seed(seed, (static_cast<std::uint64_t>(kind) << 32) | i);
      bank.add(fmt::format("{}_{:03}", to_string(kind), i), std::string(to_string(kind)),
               generate_shape(kind, shape_seed));
    }
  }
  return bank;
}

}  // namespace pcq
