#include "pcq/oracle.hpp"

#include <algorithm>
#include <limits>

#include <fmt/format.h>

namespace pcq {

OracleKind parse_oracle_kind(std::string_view name) {
  if (name == "retrieval") return OracleKind::retrieval;
  if (name == "mirror") return OracleKind::mirror;
  if (name == "passthrough") return OracleKind::passthrough;
  throw ConfigError(fmt::format("unknown oracle '{}' (expected retrieval|mirror|passthrough)", name));
}

std::string_view to_string(OracleKind kind) {
  switch (kind) {
    case OracleKind::retrieval: return "retrieval";
    case OracleKind::mirror: return "mirror";
    case OracleKind::passthrough: return "passthrough";
  }
  return "unknown";
}

PointCloud resample_exact(const PointCloud& cloud, std::size_t count, double sigma) {
  if (cloud.empty()) throw Error("empty operand");
  if (count == 0) throw Error("empty request");
  const std::size_t n = cloud.size();
  if (n == count) return cloud;

  Rng rng(content_hash(cloud));
  if (n > count) {
    const auto start = static_cast<std::size_t>(rng.below(n));
    return gather(cloud, farthest_point_indices(cloud, count, start));
  }

  auto truncated = [&] {
    double v = rng.normal();
    while (std::abs(v) > 2.0) v = rng.normal();
    return v * sigma;
  };
  PointCloud out = cloud;
  out.reserve(count);
  for (std::size_t i = n; i < count; ++i) {
    const Point& src = cloud[i % n];
    const Vec3 offset(truncated(), truncated(), truncated());
    out.push_back((src.cast<double>() + offset).cast<float>());
  }
  return out;
}

std::size_t retrieve_index(const PointCloud& partial, const ShapeBank& bank) {
  if (partial.empty()) throw Error("empty operand");
  if (bank.empty()) throw Error("empty bank");
  const PointCloud query = normalize_or_identity(partial).first;

  std::size_t best_index = 0;
  double best_sum = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < bank.size(); ++e) {
    const KdIndex& index = *bank[e].index;
    double sum = 0.0;
    for (const auto& p : query) {
      sum += index.nearest(p).squared_distance;
      if (sum > best_sum) break;  // partial sums only grow
    }
    if (sum < best_sum) {
      best_sum = sum;
      best_index = e;
    }
  }
  return best_index;
}

PointCloud complete_retrieval(const PointCloud& partial, const ShapeBank& bank) {
  return bank[retrieve_index(partial, bank)].cloud;
}

PointCloud complete_mirror(const PointCloud& partial) {
  const PointCloud normalized = normalize_or_identity(partial).first;
  PointCloud united = normalized;
  united.reserve(2 * normalized.size());
  for (const auto& p : normalized) united.push_back(Point(-p.x(), p.y(), p.z()));
  return resample_exact(united, kCompletionPoints);
}

PointCloud complete_passthrough(const PointCloud& partial) { return resample_exact(partial, kCompletionPoints); }

RetrievalOracle::RetrievalOracle(std::shared_ptr<const ShapeBank> bank) : bank_(std::move(bank)) {
  if (!bank_ || bank_->empty()) throw Error("retrieval oracle needs a non-empty bank");
}

PointCloud RetrievalOracle::complete(const PointCloud& partial) const { return complete_retrieval(partial, *bank_); }

std::unique_ptr<CompletionOracle> make_oracle(OracleKind kind, std::shared_ptr<const ShapeBank> bank) {
  switch (kind) {
    case OracleKind::retrieval: return std::make_unique<RetrievalOracle>(std::move(bank));
    case OracleKind::mirror: return std::make_unique<MirrorOracle>();
    case OracleKind::passthrough: return std::make_unique<PassthroughOracle>();
  }
  throw Error("unknown oracle kind");
}

}  // namespace pcq
