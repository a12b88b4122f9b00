#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pcq/cloud_io.hpp"
#include "pcq/synthesis.hpp"
#include "support/oracles.hpp"

using namespace pcq;
using pcq::testing::random_cloud;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::tuple<float, float, float>, int> multiset(const PointCloud& c) {
  std::map<std::tuple<float, float, float>, int> m;
  for (const auto& p : c) ++m[{p.x(), p.y(), p.z()}];
  return m;
}

bool submultiset(const PointCloud& sub, const PointCloud& super) {
  auto have = multiset(super);
  for (const auto& [key, n] : multiset(sub)) {
    if (have[key] < n) return false;
  }
  return true;
}

// Maps every input to p_g shifted by the input's centroid.
class ShiftOracle final : public CompletionOracle {
 public:
  explicit ShiftOracle(PointCloud base) : base_(std::move(base)) {}
  PointCloud complete(const PointCloud& partial) const override {
    return apply_transform(base_, RigidTransform{Mat3::Identity(), centroid(partial), 1.0});
  }
  OracleKind kind() const override { return OracleKind::passthrough; }

 private:
  PointCloud base_;
};

PointCloud ground_slab(int side, double half, double z) {
  std::vector<Point> pts;
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      pts.emplace_back(static_cast<float>(-half + 2 * half * i / (side - 1)),
                       static_cast<float>(-half + 2 * half * j / (side - 1)), static_cast<float>(z));
    }
  }
  return PointCloud(pts);
}

}  // namespace

TEST_CASE("box surface points lie on a face") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ShapeParams params;
    params.kind = ShapeKind::box;
    params.size = Vec3(0.7, 0.4, 0.3);
    const PointCloud c = sample_surface(params, 2048, seed);
    CHECK(c.size() == 2048);
    for (const auto& p : c) {
      double on_face = std::numeric_limits<double>::infinity();
      for (int a = 0; a < 3; ++a) {
        CHECK(std::abs(p[a]) <= params.size[a] + 1e-6);
        on_face = std::min(on_face, std::abs(std::abs(p[a]) - params.size[a]));
      }
      CHECK(on_face < 1e-6);
    }
  }
}

TEST_CASE("ellipsoid surface points satisfy the implicit equation") {
  ShapeParams params;
  params.kind = ShapeKind::ellipsoid;
  params.size = Vec3(1.0, 0.6, 0.35);
  for (const auto& p : sample_surface(params, 2048, 3)) {
    const Vec3 q = p.cast<double>().cwiseQuotient(params.size);
    CHECK(std::abs(q.squaredNorm() - 1.0) < 1e-4);
  }
}

TEST_CASE("generate_shape is normalized and deterministic") {
  for (ShapeKind kind : all_shape_kinds()) {
    const PointCloud a = generate_shape(kind, 42);
    CHECK(a.size() == kShapePoints);
    CHECK(a == generate_shape(kind, 42));
    CHECK(!(a == generate_shape(kind, 43)));
    CHECK(centroid(a).norm() < 1e-5);
    double far = 0.0;
    for (const auto& p : a) far = std::max(far, static_cast<double>(p.cast<double>().norm()));
    CHECK(far == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(parse_shape_kind(to_string(kind)) == kind);
  }
}

TEST_CASE("render_partial culls the back face of a box") {
  ShapeParams params;
  params.kind = ShapeKind::box;
  params.size = Vec3(0.5, 0.5, 0.5);
  const PointCloud box = sample_surface(params, 2048, 1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PointCloud view = render_partial(box, Vec3::UnitX(), seed);
    CHECK(!view.empty());
    CHECK(submultiset(view, box));
    int front = 0, behind = 0;
    for (const auto& p : view) {
      CHECK(p.x() > -0.5f + 0.02f);
      front += p.x() > 0.5f - 1e-6f;
      behind += p.x() < 0.0f;
    }
    // Grazing side-face points near an edge can slip through.
    CHECK(behind * 100 < static_cast<int>(view.size()));
    // The front face holds a sixth of the surface samples.
    CHECK(front > 2048 / 6 / 2);
  }
  CHECK_THROWS_WITH_AS((void)render_partial(box, Vec3::Zero(), 0), "degenerate view", Error);
  const PointCloud one({Point(0.1f, 0.2f, 0.3f)});
  CHECK(render_partial(one, Vec3::UnitZ(), 0) == one);
}

TEST_CASE("two opposite views cover a convex shape") {
  Rng rng(4);
  for (ShapeKind kind : {ShapeKind::box, ShapeKind::ellipsoid, ShapeKind::cylinder}) {
    for (int trial = 0; trial < 4; ++trial) {
      const PointCloud shape = generate_shape(kind, rng.next());
      const Vec3 v = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
      const auto a = render_partial_indices(shape, v, rng.next());
      const auto b = render_partial_indices(shape, -v, rng.next());
      std::set<std::uint32_t> seen(a.begin(), a.end());
      seen.insert(b.begin(), b.end());
      CHECK(static_cast<double>(seen.size()) >= 0.9 * shape.size());
    }
  }
}

TEST_CASE("augment with every enhancement disabled is the identity") {
  const PointCloud partial = random_cloud(300, 8);
  SceneSpec spec;
  spec.target_count = partial.size();
  const ShapeBank empty(16);
  const AugmentedScene scene = augment(partial, spec, empty);
  CHECK(scene.cloud == partial);
  CHECK(scene.sources.size() == partial.size());
}

TEST_CASE("augment scales the object extent exactly") {
  const PointCloud partial = random_cloud(400, 9);
  SceneSpec spec;
  spec.target_count = partial.size();
  spec.scale = 1.2;
  const AugmentedScene scene = augment(partial, spec, ShapeBank(16));
  const Vec3 before = bounds(partial).extent();
  const Vec3 after = bounds(scene.cloud).extent();
  CHECK((after - 1.2 * before).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("augment appends the ground patch and clutter") {
  const PointCloud partial = generate_shape(ShapeKind::box, 3);
  const ShapeBank bank = generate_bank({ShapeKind::cylinder}, 2, 5);
  SceneSpec spec;
  spec.target_count = 512;
  spec.ground = true;
  spec.clutter_count = 2;
  spec.seed = 17;
  const AugmentedScene scene = augment(partial, spec, bank, bounds(partial));
  std::map<PointSource, std::size_t> count;
  for (auto s : scene.sources) ++count[s];
  CHECK(count[PointSource::object] == 512);
  CHECK(count[PointSource::ground] == static_cast<std::size_t>(kGroundGrid * kGroundGrid));
  CHECK(count[PointSource::clutter] > 0);
  CHECK(scene.cloud.size() >= 512 + kGroundGrid * kGroundGrid);
  CHECK(scene.clutter_centers.size() == 2);

  SceneSpec bad = spec;
  bad.scale = 1.5;
  CHECK_THROWS_AS((void)augment(partial, bad, bank), ConfigError);
  bad = spec;
  bad.target_count = 100;
  CHECK_THROWS_AS((void)augment(partial, bad, bank), ConfigError);
}

TEST_CASE("propose_rois contracts") {
  const PointCloud partial = generate_shape(ShapeKind::car_composite, 1);
  const ShapeBank bank = generate_bank({ShapeKind::box}, 2, 5);
  SceneSpec spec;
  spec.target_count = 1024;
  spec.yaw = 0.7;
  spec.translation = Vec3(2, -1, 0.2);
  spec.clutter_count = 1;
  const AugmentedScene scene = augment(partial, spec, bank, bounds(partial));
  const RoiBox truth = true_object_box(scene);

  const auto exact = propose_rois(scene, 5, 3, 0.0);
  CHECK(exact[0].center.isApprox(truth.center));
  CHECK(exact[0].half_extents.isApprox(truth.half_extents));
  CHECK(exact[0].yaw == doctest::Approx(truth.yaw));
  CHECK(exact[0].confidence == 1.0);

  const Vec3 extent = 2.0 * truth.half_extents;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto boxes = propose_rois(scene, 5, seed);
    REQUIRE(boxes.size() == 5);
    for (std::size_t i = 1; i < boxes.size(); ++i) CHECK(boxes[i].confidence < boxes[i - 1].confidence);
    for (const auto& b : boxes) {
      CHECK((b.half_extents.array() > 0).all());
      CHECK(b.confidence > 0.0);
      CHECK(b.confidence <= 1.0);
    }
    const Vec3 offset = (boxes[0].center - truth.center).cwiseAbs().cwiseQuotient(extent);
    worst = std::max(worst, offset.maxCoeff());
    CHECK(boxes[0].scene_bounds().intersects(truth.scene_bounds()));
  }
  CHECK(worst <= 0.15 + 1e-12);
  CHECK(worst > 0.05);
  CHECK_THROWS_WITH_AS((void)propose_rois(scene, 0, 1), "empty request", Error);
}

TEST_CASE("roi crop returns box-frame points inside the box") {
  const PointCloud c = random_cloud(2000, 12, 2.0);
  RoiBox box;
  box.center = Vec3(0.3, -0.2, 0.1);
  box.half_extents = Vec3(0.8, 0.5, 0.6);
  box.yaw = 0.6;
  std::vector<std::uint32_t> kept;
  const PointCloud crop = box.crop(c, &kept);
  REQUIRE(crop.size() == kept.size());
  std::size_t expect = 0;
  for (std::uint32_t i = 0; i < c.size(); ++i) {
    const Vec3 local = box.to_local(c[i].cast<double>());
    expect += (local.cwiseAbs().array() <= box.half_extents.array()).all();
  }
  CHECK(crop.size() == expect);
  for (std::size_t i = 0; i < crop.size(); ++i) {
    CHECK((crop[i].cast<double>() - box.to_local(c[kept[i]].cast<double>())).norm() < 1e-5);
  }
}

TEST_CASE("label ratio examples") {
  CHECK(label_from_distances(0.3, 0.3).s_g == 1.0);
  CHECK(label_from_distances(1.0, 2.0).s_g == 0.5);
  CHECK(label_from_distances(3.0, 2.0).s_g == 1.0);
  CHECK(label_from_distances(3.0, 2.0).raw_ratio == 1.5);
  CHECK(label_from_distances(0.0, 0.0).s_g == 1.0);
  CHECK(std::isinf(label_from_distances(1.0, 0.0).raw_ratio));
  CHECK(label_from_distances(1.0, 0.0).s_g == 1.0);

  const PointCloud p = generate_shape(ShapeKind::ellipsoid, 2);
  const PointCloud p_g = generate_shape(ShapeKind::ellipsoid, 3);
  const PassthroughOracle pass;
  CHECK(label_group(p, p, p_g, pass).s_g == 1.0);
  CHECK_THROWS_WITH_AS((void)label_group(PointCloud{}, p, p_g, pass), "empty operand", Error);
}

TEST_CASE("label halves when the corrupted completion doubles the distance") {
  // A ground truth of coincident points turns Chamfer into 2|t|^2 exactly.
  const PointCloud p_g(std::vector<Point>(2048, Point(0.25f, -0.5f, 0.125f)));
  const ShiftOracle oracle(p_g);
  const PointCloud p({Point(1, 0, 0)});
  const PointCloud p_r({Point(1, 1, 0)});
  const QualityLabel label = label_group(p, p_r, p_g, oracle);
  CHECK(label.s_plus == 2.0);
  CHECK(label.s_minus == 4.0);
  CHECK(label.s_g == 0.5);
}

namespace {

std::vector<double> ground_crop_labels() {
  auto bank = std::make_shared<const ShapeBank>(generate_bank(all_shape_kinds(), 12, 1));
  const RetrievalOracle oracle(bank);
  std::vector<double> labels;
  Rng rng(3);
  for (int t = 0; t < 12; ++t) {
    const ShapeKind kind = all_shape_kinds()[static_cast<std::size_t>(t) % 4];
    const PointCloud p_g = generate_shape(kind, 1000 + t);
    const PointCloud p = render_partial(p_g, Vec3(rng.normal(), rng.normal(), 0.5).normalized(), rng.next());
    const PointCloud slab = ground_slab(20, 1.2, bounds(p_g).min.z());
    labels.push_back(label_group(p, slab, p_g, oracle).s_g);
  }
  return labels;
}

}  // namespace

TEST_CASE("a ground-only crop ranks below the clean crop") {
  auto labels = ground_crop_labels();
  for (double s : labels) {
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
  // The clean crop scores exactly 1.
  std::nth_element(labels.begin(), labels.begin() + 6, labels.end());
  CHECK(labels[6] <= 1.0 - 0.2);
}

TEST_CASE("every ground-only crop gets a label below 0.3" * doctest::may_fail()) {
  const auto labels = ground_crop_labels();
  for (double s : labels) CHECK(s < 0.3);
}

TEST_CASE("manifest lines round-trip") {
  SampleRecord r;
  r.id = "scene00003_r2";
  r.split = "test";
  r.shape_kind = ShapeKind::cylinder;
  r.shape_seed = 0xfeedfacecafebeefULL;
  r.seed = 12;
  r.scene = 3;
  r.roi_rank = 2;
  r.confidence = 1.0 / 3.5;
  r.p = "clouds/a.pcq";
  r.p_o = "clouds/b.pcq";
  r.p_r = "clouds/c.pcq";
  r.p_g = "clouds/d.pcq";
  r.label = label_from_distances(0.1234567891234, 0.3);
  r.n_points = 321;
  r.ground_fraction = 0.25;
  r.clutter_fraction = 0.125;
  const SampleRecord back = parse_manifest_line(manifest_line(r));
  CHECK(back.id == r.id);
  CHECK(back.split == r.split);
  CHECK(back.shape_kind == r.shape_kind);
  CHECK(back.shape_seed == r.shape_seed);
  CHECK(back.confidence == r.confidence);
  CHECK(back.label.s_g == r.label.s_g);
  CHECK(back.label.s_plus == r.label.s_plus);
  CHECK(back.p_r == r.p_r);
  CHECK(back.n_points == r.n_points);
  CHECK(manifest_line(back) == manifest_line(r));

  r.label = label_from_distances(1.0, 0.0);
  CHECK(std::isinf(parse_manifest_line(manifest_line(r)).label.raw_ratio));
}

TEST_CASE("build_dataset writes a deterministic, split-disjoint corpus") {
  const auto root = std::filesystem::temp_directory_path() / "pcq_dataset_test";
  std::filesystem::remove_all(root);
  BuildConfig config;
  config.samples = 10;
  config.bank_per_kind = 3;
  config.test_fraction = 0.4;
  config.threads = 2;
  const DatasetSummary a = build_dataset(config, root / "a");
  config.threads = 1;
  const DatasetSummary b = build_dataset(config, root / "b");
  CHECK(a.samples == 10);
  CHECK(a.train + a.test == 10);
  CHECK(b.samples == 10);
  CHECK(slurp(root / "a" / "manifest.jsonl") == slurp(root / "b" / "manifest.jsonl"));

  const auto records = read_manifest(root / "a");
  REQUIRE(records.size() == 10);
  std::set<std::uint64_t> train_seeds, test_seeds;
  for (const auto& r : records) {
    for (const auto& f : {r.p, r.p_o, r.p_r, r.p_g}) CHECK(std::filesystem::exists(root / "a" / f));
    CHECK(io::read_pcq(root / "a" / r.p_g).size() == kShapePoints);
    CHECK(io::read_pcq(root / "a" / r.p_r).size() == r.n_points);
    CHECK(r.label.s_g >= 0.0);
    CHECK(r.label.s_g <= 1.0);
    if (r.clean) {
      CHECK(r.label.s_g == 1.0);
      CHECK(slurp(root / "a" / r.p_r) == slurp(root / "a" / r.p));
    }
    (r.split == "train" ? train_seeds : test_seeds).insert(r.shape_seed);
  }
  for (auto s : test_seeds) CHECK(train_seeds.count(s) == 0);
  CHECK(std::filesystem::exists(root / "a" / "gt_bank" / "manifest.jsonl"));
  std::filesystem::remove_all(root);
}

TEST_CASE("build config validation") {
  KeyValueConfig kv;
  CHECK_THROWS_WITH_AS((void)BuildConfig::from(kv), "missing required key 'oracle'", ConfigError);
  kv.set("oracle", "retrieval");
  kv.set("samples", "0");
  CHECK_THROWS_AS(BuildConfig::from(kv).validate(), ConfigError);
  kv.set("samples", "5");
  kv.set("oracle", "magic");
  CHECK_THROWS_AS((void)BuildConfig::from(kv), ConfigError);
  kv.set("oracle", "mirror");
  kv.set("test_fraction", "1.5");
  CHECK_THROWS_AS(BuildConfig::from(kv).validate(), ConfigError);
}
