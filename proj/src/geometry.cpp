#include "pcq/geometry.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <bit>
#include <limits>
#include <numeric>

namespace pcq {

bool PointCloud::is_finite() const {
  return std::all_of(points_.begin(), points_.end(), [](const Point& p) { return p.allFinite(); });
}

RigidTransform RigidTransform::yaw(double radians, const Vec3& translation, double scale) {
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(radians, Vec3::UnitZ()).toRotationMatrix();
  t.translation = translation;
  t.scale = scale;
  return t;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.scale = 1.0 / scale;
  inv.translation = -inv.scale * (inv.rotation * translation);
  return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& inner) const {
  RigidTransform out;
  out.rotation = rotation * inner.rotation;
  out.scale = scale * inner.scale;
  out.translation = scale * (rotation * inner.translation) + translation;
  return out;
}

bool RigidTransform::is_valid(double tol) const {
  if (!(scale > 0.0) || !std::isfinite(scale) || !translation.allFinite()) return false;
  return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol;
}

bool Aabb::contains(const Point& p) const {
  const Vec3 q = p.cast<double>();
  return (q.array() >= min.array()).all() && (q.array() <= max.array()).all();
}

bool Aabb::intersects(const Aabb& other) const {
  return (min.array() <= other.max.array()).all() && (other.min.array() <= max.array()).all();
}

Vec3 centroid(const PointCloud& cloud) {
  if (cloud.empty()) throw Error("empty operand");
  Vec3 sum = Vec3::Zero();
  for (const auto& p : cloud) sum += p.cast<double>();
  return sum / static_cast<double>(cloud.size());
}

Aabb bounds(const PointCloud& cloud) {
  if (cloud.empty()) throw Error("empty operand");
  Aabb box{cloud[0].cast<double>(), cloud[0].cast<double>()};
  for (const auto& p : cloud) {
    box.min = box.min.cwiseMin(p.cast<double>());
    box.max = box.max.cwiseMax(p.cast<double>());
  }
  return box;
}

std::pair<PointCloud, RigidTransform> normalize(const PointCloud& cloud) {
  const Vec3 c = centroid(cloud);
  double radius = 0.0;
  for (const auto& p : cloud) radius = std::max(radius, (p.cast<double>() - c).norm());
  if (!(radius > 0.0)) throw Error("zero extent");

  std::vector<Point> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.emplace_back(((p.cast<double>() - c) / radius).cast<float>());

  RigidTransform back;
  back.translation = c;
  back.scale = radius;
  return {PointCloud(std::move(out), cloud.id(), cloud.frame()), back};
}

std::pair<PointCloud, RigidTransform> normalize_or_identity(const PointCloud& cloud) {
  if (cloud.empty()) throw Error("empty operand");
  const bool degenerate =
      std::all_of(cloud.begin(), cloud.end(), [&](const Point& p) { return p == cloud[0]; });
  if (degenerate) return {cloud, RigidTransform::identity()};
  return normalize(cloud);
}

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t) {
  std::vector<Point> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.emplace_back(t.apply(p.cast<double>()).cast<float>());
  return PointCloud(std::move(out), cloud.id(), cloud.frame());
}

std::vector<std::uint32_t> farthest_point_indices(const PointCloud& cloud, std::size_t k, std::size_t start) {
  if (k == 0) throw Error("empty request");
  if (cloud.empty()) throw Error("empty operand");
  const std::size_t n = cloud.size();
  if (start >= n) throw Error("start index out of range");

  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::vector<std::uint32_t> picked;
  picked.reserve(k);
  std::size_t current = start;
  while (picked.size() < k) {
    picked.push_back(static_cast<std::uint32_t>(current));
    if (picked.size() == k) break;
    const Vec3 c = cloud[current].cast<double>();
    double best = -1.0;
    std::size_t best_index = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (cloud[i].cast<double>() - c).squaredNorm();
      if (d < nearest[i]) nearest[i] = d;
      if (nearest[i] > best) {
        best = nearest[i];
        best_index = i;
      }
    }
    if (!(best > 0.0)) break;  // every distinct point taken
    current = best_index;
  }
  const std::size_t distinct = picked.size();
  for (std::size_t i = distinct; i < k; ++i) picked.push_back(picked[i % distinct]);
  return picked;
}

PointCloud farthest_point_sample(const PointCloud& cloud, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw Error("empty request");
  if (cloud.empty()) throw Error("empty operand");
  Rng rng(seed);
  const auto start = static_cast<std::size_t>(rng.below(cloud.size()));
  const auto indices = farthest_point_indices(cloud, k, start);
  return gather(cloud, indices);
}

PointCloud random_subsample(const PointCloud& cloud, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw Error("empty request");
  if (cloud.empty()) throw Error("empty operand");
  const std::size_t n = cloud.size();
  if (k == n) return cloud;

  Rng rng(seed);
  std::vector<std::uint32_t> indices;
  if (k < n) {
    std::vector<std::uint32_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0U);
    for (std::size_t i = 0; i < k; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    indices = std::move(pool);
  } else {
    indices.resize(k);
    for (auto& index : indices) index = static_cast<std::uint32_t>(rng.below(n));
  }
  return gather(cloud, indices);
}

std::vector<std::uint32_t> crop_aabb_indices(const PointCloud& cloud, const Aabb& box) {
  if (!box.is_valid()) throw Error("invalid box");
  std::vector<std::uint32_t> kept;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (box.contains(cloud[i])) kept.push_back(static_cast<std::uint32_t>(i));
  }
  return kept;
}

PointCloud crop_aabb(const PointCloud& cloud, const Aabb& box) {
  return gather(cloud, crop_aabb_indices(cloud, box));
}

PointCloud gather(const PointCloud& cloud, std::span<const std::uint32_t> indices) {
  std::vector<Point> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(cloud[i]);
  return PointCloud(std::move(out), cloud.id(), cloud.frame());
}

std::uint64_t point_hash(const Point& p) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (int axis = 0; axis < 3; ++axis) {
    // +0.0f so that -0.0 and 0.0 hash alike.
    h = splitmix64(h ^ std::bit_cast<std::uint32_t>(p[axis] + 0.0f));
  }
  return h;
}

std::uint64_t content_hash(const PointCloud& cloud) {
  std::uint64_t sum = 0;
  for (const auto& p : cloud) sum += point_hash(p);
  return splitmix64(sum ^ cloud.size());
}

double covering_radius(const PointCloud& cloud, const PointCloud& samples) {
  if (cloud.empty() || samples.empty()) throw Error("empty operand");
  double worst = 0.0;
  for (const auto& p : cloud) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : samples) best = std::min(best, (p.cast<double>() - s.cast<double>()).squaredNorm());
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}

}  // namespace pcq
