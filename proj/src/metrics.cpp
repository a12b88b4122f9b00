#include "pcq/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include "json.hpp"

#include "pcq/cloud_io.hpp"

namespace pcq {

KdIndex::KdIndex(const PointCloud& cloud, std::size_t leaf_size) : leaf_size_(std::max<std::size_t>(1, leaf_size)) {
  if (cloud.empty()) throw Error("empty operand");
  points_.reserve(cloud.size());
  for (const auto& p : cloud) points_.push_back(p.cast<double>());
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0U);
  nodes_.reserve(2 * points_.size() / leaf_size_ + 2);
  build(0, static_cast<std::uint32_t>(points_.size()));
}

std::int32_t KdIndex::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size_) return id;

  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (auto i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all coincident: keep as one leaf

  const auto mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double pa = points_[a][axis];
                     const double pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const auto left = build(begin, mid);
  const auto right = build(mid, end);
  auto& node = nodes_[static_cast<std::size_t>(id)];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

void KdIndex::search(std::int32_t node_id, const Vec3& q, Hit& best) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  if (node.left < 0) {
    for (auto i = node.begin; i < node.end; ++i) {
      const auto index = order_[i];
      const double d = (q - points_[index]).squaredNorm();
      if (d < best.squared_distance || (d == best.squared_distance && index < best.index)) {
        best.squared_distance = d;
        best.index = index;
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const auto near = diff < 0.0 ? node.left : node.right;
  const auto far = diff < 0.0 ? node.right : node.left;
  search(near, q, best);
  // <= keeps equal-distance candidates reachable for the index tie-break.
  if (diff * diff <= best.squared_distance) search(far, q, best);
}

KdIndex::Hit KdIndex::nearest(const Point& query) const {
  Hit best{std::numeric_limits<std::uint32_t>::max(), std::numeric_limits<double>::infinity()};
  search(0, query.cast<double>(), best);
  return best;
}

double chamfer_one_sided(const PointCloud& a, const KdIndex& b_index) {
  if (a.empty() || b_index.size() == 0) throw Error("empty operand");
  double sum = 0.0;
  for (const auto& p : a) sum += b_index.nearest(p).squared_distance;
  return sum / static_cast<double>(a.size());
}

double chamfer_one_sided(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw Error("empty operand");
  return chamfer_one_sided(a, KdIndex(b));
}

double chamfer(const PointCloud& a, const KdIndex& a_index, const PointCloud& b, const KdIndex& b_index) {
  return chamfer_one_sided(a, b_index) + chamfer_one_sided(b, a_index);
}

double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw Error("empty operand");
  return chamfer(a, KdIndex(a), b, KdIndex(b));
}

double chamfer_one_sided_brute(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw Error("empty operand");
  double sum = 0.0;
  for (const auto& p : a) {
    const Vec3 q = p.cast<double>();
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : b) best = std::min(best, (q - r.cast<double>()).squaredNorm());
    sum += best;
  }
  return sum / static_cast<double>(a.size());
}

double chamfer_brute(const PointCloud& a, const PointCloud& b) {
  return chamfer_one_sided_brute(a, b) + chamfer_one_sided_brute(b, a);
}

void ShapeBank::add(std::string id, std::string category, PointCloud cloud) {
  if (cloud.size() != entry_points_) {
    throw Error(fmt::format("bank entry '{}' has {} points, expected {}", id, cloud.size(), entry_points_));
  }
  if (!cloud.is_finite()) throw Error(fmt::format("bank entry '{}' has non-finite coordinates", id));
  for (const auto& e : entries_) {
    if (e.id == id) throw Error(fmt::format("duplicate bank id '{}'", id));
  }
  auto index = std::make_shared<const KdIndex>(cloud);
  cloud.set_id(id);
  entries_.push_back(Entry{std::move(id), std::move(category), std::move(cloud), std::move(index)});
}

std::vector<std::string> ShapeBank::categories() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (std::find(out.begin(), out.end(), e.category) == out.end()) out.push_back(e.category);
  }
  return out;
}

void ShapeBank::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir / "clouds");
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw IoError(fmt::format("cannot write {}", (dir / "manifest.jsonl").string()));
  for (const auto& e : entries_) {
    const std::string file = "clouds/" + e.id + ".pcq";
    io::write_pcq(dir / file, e.cloud);
    nlohmann::json record{{"id", e.id}, {"category", e.category}, {"file", file}};
    manifest << record.dump() << '\n';
  }
}

ShapeBank ShapeBank::load(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw IoError(fmt::format("cannot open bank manifest in {}", dir.string()));
  // Entry size is taken from the first entry.
  std::optional<ShapeBank> bank;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto record = nlohmann::json::parse(line);
    PointCloud cloud = io::read_pcq(dir / record.at("file").get<std::string>());
    if (!bank) bank.emplace(cloud.size());
    bank->add(record.at("id").get<std::string>(), record.at("category").get<std::string>(), std::move(cloud));
  }
  return bank ? std::move(*bank) : ShapeBank{};
}

MmdResult mmd(const PointCloud& completed, const ShapeBank& bank, const std::string& category) {
  if (completed.empty()) throw Error("empty operand");
  const KdIndex query_index(completed);
  std::optional<MmdResult> best;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const auto& e = bank[i];
    if (e.category != category) continue;
    const double d = chamfer(completed, query_index, e.cloud, *e.index);
    if (!best || d < best->distance) best = MmdResult{d, e.id, i};
  }
  if (!best) throw Error("empty category");
  return *best;
}

}  // namespace pcq
