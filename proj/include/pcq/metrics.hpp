#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pcq/geometry.hpp"

namespace pcq {

/// Balanced k-d tree over a cloud's points, immutable after construction.
/// Distances are evaluated in double on the stored float coordinates, the
/// same way the linear scan does, so both return bit-identical minima.
class KdIndex {
 public:
  struct Hit {
    std::uint32_t index = 0;
    double squared_distance = 0.0;
  };

  explicit KdIndex(const PointCloud& cloud, std::size_t leaf_size = 16);

  /// Nearest point to `query`; ties resolve to the lowest point index.
  [[nodiscard]] Hit nearest(const Point& query) const;

  [[nodiscard]] std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    // Leaf: [begin, end) into order_. Inner: split axis/value and children.
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    int axis = 0;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Vec3& q, Hit& best) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

/// (1/|A|) Σ_a min_b ‖a−b‖², accelerated with `b_index` built over b.
[[nodiscard]] double chamfer_one_sided(const PointCloud& a, const KdIndex& b_index);
[[nodiscard]] double chamfer_one_sided(const PointCloud& a, const PointCloud& b);

/// Symmetric squared-distance Chamfer distance, averaged per side.
[[nodiscard]] double chamfer(const PointCloud& a, const PointCloud& b);
[[nodiscard]] double chamfer(const PointCloud& a, const KdIndex& a_index, const PointCloud& b,
                             const KdIndex& b_index);

/// O(|A|·|B|) reference implementations.
[[nodiscard]] double chamfer_one_sided_brute(const PointCloud& a, const PointCloud& b);
[[nodiscard]] double chamfer_brute(const PointCloud& a, const PointCloud& b);

/// Complete reference shapes indexed for retrieval and minimal matching
/// distance. Every entry has the same point count and a unique id.
class ShapeBank {
 public:
  static constexpr std::size_t kEntryPoints = 2048;

  struct Entry {
    std::string id;
    std::string category;
    PointCloud cloud;
    std::shared_ptr<const KdIndex> index;
  };

  explicit ShapeBank(std::size_t entry_points = kEntryPoints) : entry_points_(entry_points) {}

  void add(std::string id, std::string category, PointCloud cloud);

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] bool empty() const { return entries_.empty(); }
  [[nodiscard]] const Entry& operator[](std::size_t i) const { return entries_[i]; }
  [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }
  [[nodiscard]] std::vector<std::string> categories() const;

  /// Directory layout: manifest.jsonl ({"id","category","file"} per line)
  /// plus one PCQ1 file per entry, paths relative to the directory.
  void save(const std::filesystem::path& dir) const;
  [[nodiscard]] static ShapeBank load(const std::filesystem::path& dir);

 private:
  std::vector<Entry> entries_;
  std::size_t entry_points_;
};

struct MmdResult {
  double distance = 0.0;
  std::string matched_id;
  std::size_t matched_index = 0;
};

/// Minimum Chamfer distance from `completed` to any bank entry of
/// `category`; ties resolve to the lowest entry index.
/// Throws "empty category" when the bank has no entry of that category.
[[nodiscard]] MmdResult mmd(const PointCloud& completed, const ShapeBank& bank, const std::string& category);

}  // namespace pcq
