#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcq/common.hpp"

namespace pcq {

using Point = Eigen::Vector3f;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class Frame { model, scene };

/// Ordered 3-D points plus a little provenance. Storage is 32-bit; anything
/// that accumulates (metrics, gradients) widens to double.
///
/// An empty cloud is a legal value (crop_aabb returns one); operations that
/// need points check for it and throw "empty operand"/"empty request".
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<Point> points, std::string id = {}, Frame frame = Frame::model)
      : points_(std::move(points)), id_(std::move(id)), frame_(frame) {}

  [[nodiscard]] std::size_t size() const { return points_.size(); }
  [[nodiscard]] bool empty() const { return points_.empty(); }

  [[nodiscard]] const Point& operator[](std::size_t i) const { return points_[i]; }
  [[nodiscard]] Point& operator[](std::size_t i) { return points_[i]; }

  [[nodiscard]] const std::vector<Point>& points() const { return points_; }
  [[nodiscard]] std::vector<Point>& points() { return points_; }

  [[nodiscard]] const std::string& id() const { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }

  [[nodiscard]] Frame frame() const { return frame_; }
  void set_frame(Frame frame) { frame_ = frame; }

  void push_back(const Point& p) { points_.push_back(p); }
  void reserve(std::size_t n) { points_.reserve(n); }

  auto begin() const { return points_.begin(); }
  auto end() const { return points_.end(); }

  /// True when every coordinate is finite.
  [[nodiscard]] bool is_finite() const;

  friend bool operator==(const PointCloud& a, const PointCloud& b) { return a.points_ == b.points_; }

 private:
  std::vector<Point> points_;
  std::string id_;
  Frame frame_ = Frame::model;
};

/// p -> scale * R * p + t.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  static RigidTransform identity() { return {}; }
  /// Rotation about +z by `radians`, the ground-plane yaw.
  static RigidTransform yaw(double radians, const Vec3& translation = Vec3::Zero(), double scale = 1.0);

  [[nodiscard]] Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
  [[nodiscard]] RigidTransform inverse() const;
  /// (*this ∘ inner)(p) = this->apply(inner.apply(p)).
  [[nodiscard]] RigidTransform compose(const RigidTransform& inner) const;
  /// Orthonormal within `tol` and positive scale.
  [[nodiscard]] bool is_valid(double tol = 1e-6) const;
};

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  [[nodiscard]] bool is_valid() const { return (min.array() <= max.array()).all(); }
  [[nodiscard]] bool contains(const Point& p) const;
  [[nodiscard]] Vec3 center() const { return 0.5 * (min + max); }
  [[nodiscard]] Vec3 extent() const { return max - min; }
  [[nodiscard]] bool intersects(const Aabb& other) const;
};

[[nodiscard]] Vec3 centroid(const PointCloud& cloud);
[[nodiscard]] Aabb bounds(const PointCloud& cloud);

/// Centers on the centroid and scales so the farthest point has norm 1.
/// The returned transform maps the output back onto the input.
/// Throws "zero extent" when all points coincide, "empty operand" when empty.
[[nodiscard]] std::pair<PointCloud, RigidTransform> normalize(const PointCloud& cloud);

/// normalize(), except a zero-extent cloud is returned unchanged with the
/// identity transform. Used by consumers that must accept single-point crops.
[[nodiscard]] std::pair<PointCloud, RigidTransform> normalize_or_identity(const PointCloud& cloud);

[[nodiscard]] PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t);

/// Greedy farthest point sampling seeded at `start`. Returns k indices into
/// `cloud`; once every distinct point is taken the sequence repeats
/// cyclically. Ties go to the lowest input index.
[[nodiscard]] std::vector<std::uint32_t> farthest_point_indices(const PointCloud& cloud, std::size_t k,
                                                                std::size_t start);

/// farthest_point_indices with the first point chosen by a seeded PRNG.
[[nodiscard]] PointCloud farthest_point_sample(const PointCloud& cloud, std::size_t k, std::uint64_t seed);

/// k points uniformly without replacement (with replacement if k > |cloud|).
/// k == |cloud| returns the cloud unchanged.
[[nodiscard]] PointCloud random_subsample(const PointCloud& cloud, std::size_t k, std::uint64_t seed);

/// Points with min <= p <= max, order preserved. May be empty.
[[nodiscard]] PointCloud crop_aabb(const PointCloud& cloud, const Aabb& box);

/// Same as crop_aabb but returns the kept indices.
[[nodiscard]] std::vector<std::uint32_t> crop_aabb_indices(const PointCloud& cloud, const Aabb& box);

[[nodiscard]] PointCloud gather(const PointCloud& cloud, std::span<const std::uint32_t> indices);

/// Order-independent hash of the cloud's coordinate bits. Two clouds that
/// are permutations of each other hash equal.
[[nodiscard]] std::uint64_t content_hash(const PointCloud& cloud);

/// Hash of a single point's coordinate bits.
[[nodiscard]] std::uint64_t point_hash(const Point& p);

/// Largest distance from any cloud point to its nearest sample point.
[[nodiscard]] double covering_radius(const PointCloud& cloud, const PointCloud& samples);

}  // namespace pcq
