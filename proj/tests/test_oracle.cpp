#include "doctest.h"

#include "pcq/oracle.hpp"
#include "pcq/synthesis.hpp"
#include "support/oracles.hpp"

using namespace pcq;
using pcq::testing::naive_chamfer;
using pcq::testing::naive_one_sided;
using pcq::testing::random_cloud;

namespace {

// Per-axis jitter is truncated at two sigma.
const double kJitterReach = 2.0 * kUpsampleSigma * std::sqrt(3.0) + 1e-6;

double nearest_distance(const Point& p, const PointCloud& c) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : c) best = std::min(best, pcq::testing::sq(p, q));
  return std::sqrt(best);
}

ShapeBank small_bank() {
  ShapeBank bank;
  for (int i = 0; i < 10; ++i) {
    const ShapeKind kind = all_shape_kinds()[static_cast<std::size_t>(i) % 4];
    bank.add("e" + std::to_string(i), std::string(to_string(kind)), generate_shape(kind, 500 + i));
  }
  return bank;
}

}  // namespace

TEST_CASE("oracle kinds parse") {
  for (auto k : {OracleKind::retrieval, OracleKind::mirror, OracleKind::passthrough}) {
    CHECK(parse_oracle_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS((void)parse_oracle_kind("gcc"), ConfigError);
  CHECK_THROWS_AS((void)make_oracle(OracleKind::retrieval, nullptr), Error);
}

TEST_CASE("retrieval returns the entry a subset was drawn from") {
  const ShapeBank bank = small_bank();
  for (std::size_t e = 0; e < bank.size(); ++e) {
    const PointCloud subset = normalize(farthest_point_sample(bank[e].cloud, 512, e)).first;
    // Exhaustive check on the oracle's own criterion.
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < bank.size(); ++i) {
      const double d = naive_one_sided(subset, bank[i].cloud);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    CHECK(best == e);
    CHECK(retrieve_index(subset, bank) == e);
    CHECK(complete_retrieval(subset, bank) == bank[e].cloud);
  }
}

TEST_CASE("retrieval from a single-entry bank returns that entry") {
  ShapeBank bank;
  bank.add("only", "box", generate_shape(ShapeKind::box, 1));
  const RetrievalOracle oracle(std::make_shared<const ShapeBank>(bank));
  CHECK(oracle.complete(random_cloud(50, 3)) == bank[0].cloud);
  CHECK(oracle.complete(PointCloud({Point(1, 2, 3)})) == bank[0].cloud);
  CHECK_THROWS_WITH_AS((void)oracle.complete(PointCloud{}), "empty operand", Error);
}

namespace {

struct Contamination {
  int trials = 200;
  int slab_ok = 0;
  int mixed_ok = 0;
};

const Contamination& contamination() {
  static const Contamination result = [] {
    Contamination c;
    auto bank = std::make_shared<const ShapeBank>(generate_bank(all_shape_kinds(), 12, 1));
    const RetrievalOracle oracle(bank);
    Rng rng(99);
    for (int t = 0; t < c.trials; ++t) {
      const ShapeKind kind = all_shape_kinds()[rng.below(4)];
      const PointCloud p_g = generate_shape(kind, rng.next());
      const Vec3 view = Vec3(rng.normal(), rng.normal(), std::abs(rng.normal()) + 0.2).normalized();
      const PointCloud p = render_partial(p_g, view, rng.next());
      const double clean = naive_chamfer(oracle.complete(p), p_g);

      const double z = bounds(p_g).min.z();
      std::vector<Point> slab;
      for (std::size_t i = 0; i < p.size(); ++i) {
        slab.emplace_back(static_cast<float>(rng.uniform(-1.2, 1.2)), static_cast<float>(rng.uniform(-1.2, 1.2)),
                          static_cast<float>(z));
      }
      c.slab_ok += naive_chamfer(oracle.complete(PointCloud(slab)), p_g) >= clean;

      // Half object, half ground.
      std::vector<Point> mixed(p.points());
      mixed.insert(mixed.end(), slab.begin(), slab.end());
      c.mixed_ok += naive_chamfer(oracle.complete(PointCloud(mixed)), p_g) >= clean;
    }
    return c;
  }();
  return result;
}

}  // namespace

TEST_CASE("retrieval prefers the clean partial over half ground contamination") {
  const auto& c = contamination();
  CHECK(c.mixed_ok >= 0.9 * c.trials);
}

TEST_CASE("retrieval prefers the clean partial over a pure ground slab" * doctest::may_fail()) {
  const auto& c = contamination();
  MESSAGE("slab comparisons won by the clean partial: ", c.slab_ok, "/", c.trials);
  CHECK(c.slab_ok >= 0.9 * c.trials);
}

TEST_CASE("mirror completion of a symmetric input reproduces it") {
  const PointCloud half = random_cloud(300, 6);
  std::vector<Point> pts(half.points());
  for (const auto& p : half) pts.emplace_back(-p.x(), p.y(), p.z());
  const PointCloud symmetric = normalize(PointCloud(pts)).first;
  const PointCloud out = complete_mirror(symmetric);
  CHECK(out.size() == kCompletionPoints);
  CHECK(out.is_finite());
  CHECK(naive_chamfer(out, symmetric) <= 5e-4);
  CHECK(complete_mirror(symmetric) == out);
}

TEST_CASE("mirror completion of a single point") {
  const PointCloud out = complete_mirror(PointCloud({Point(1, 0, 0)}));
  REQUIRE(out.size() == kCompletionPoints);
  int left = 0, right = 0;
  for (const auto& p : out) {
    const double dl = (p.cast<double>() - Vec3(-1, 0, 0)).norm();
    const double dr = (p.cast<double>() - Vec3(1, 0, 0)).norm();
    CHECK(std::min(dl, dr) <= kJitterReach);
    (dl < dr ? left : right) += 1;
  }
  CHECK(left > 0);
  CHECK(right > 0);
}

TEST_CASE("passthrough completion contracts") {
  const PointCloud full = random_cloud(kCompletionPoints, 2);
  CHECK(complete_passthrough(full) == full);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PointCloud small = random_cloud(1 + seed * 37, seed);
    const PointCloud out = complete_passthrough(small);
    REQUIRE(out.size() == kCompletionPoints);
    CHECK(out == complete_passthrough(small));
    for (const auto& p : out) CHECK(nearest_distance(p, small) <= kJitterReach);
    CHECK(naive_chamfer(out, small) <= 3.0 * kUpsampleSigma * kUpsampleSigma);
  }
  const PointCloud big = random_cloud(3000, 4);
  const PointCloud down = complete_passthrough(big);
  CHECK(down.size() == kCompletionPoints);
  for (const auto& p : down) CHECK(nearest_distance(p, big) == 0.0);
}

TEST_CASE("resample_exact is a pure function of the content") {
  const PointCloud c = random_cloud(100, 8);
  std::vector<Point> rev(c.points().rbegin(), c.points().rend());
  const PointCloud a = resample_exact(c, 500);
  const PointCloud b = resample_exact(c, 500);
  CHECK(a == b);
  CHECK(a.size() == 500);
  // The originals come first.
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(a[i] == c[i]);
  CHECK(resample_exact(PointCloud(rev), 500).size() == 500);
}

TEST_CASE("every oracle emits exactly the completion size") {
  auto bank = std::make_shared<const ShapeBank>(generate_bank({ShapeKind::box}, 2, 3));
  for (auto kind : {OracleKind::retrieval, OracleKind::mirror, OracleKind::passthrough}) {
    const auto oracle = make_oracle(kind, bank);
    CHECK(oracle->kind() == kind);
    for (std::size_t n : {1u, 7u, 2048u, 2500u}) {
      const PointCloud out = oracle->complete(random_cloud(n, n));
      CHECK(out.size() == kCompletionPoints);
      CHECK(out.is_finite());
    }
  }
}
