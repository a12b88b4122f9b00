#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "pcq/synthesis.hpp"

namespace pcq {
namespace {

constexpr double kDegree = std::numbers::pi / 180.0;

Vec3 random_direction(Rng& rng) {
  for (;;) {
    Vec3 d(rng.normal(), rng.normal(), rng.normal());
    const double n = d.norm();
    if (n > 1e-12) return d / n;
  }
}

double yaw_of(const Mat3& r) { return std::atan2(r(1, 0), r(0, 0)); }

/// Largest horizontal distance from `center` to any point.
double footprint_radius(const PointCloud& cloud, const Vec3& center) {
  double r = 0.0;
  for (const auto& p : cloud) r = std::max(r, (p.cast<double>() - center).head<2>().norm());
  return r;
}

/// Unit normals from a PCA fit over each point's k nearest neighbours,
/// oriented away from the centroid. Zero when the fit is degenerate.
std::vector<Vec3> estimate_normals(const PointCloud& cloud, std::size_t k) {
  const std::size_t n = cloud.size();
  std::vector<Vec3> normals(n, Vec3::Zero());
  if (n < 3) return normals;
  k = std::min(k, n);
  const Vec3 center = centroid(cloud);
  std::vector<std::pair<double, std::uint32_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p = cloud[i].cast<double>();
    for (std::size_t j = 0; j < n; ++j) dist[j] = {(cloud[j].cast<double>() - p).squaredNorm(), static_cast<std::uint32_t>(j)};
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
    Vec3 mean = Vec3::Zero();
    for (std::size_t m = 0; m < k; ++m) mean += cloud[dist[m].second].cast<double>();
    mean /= static_cast<double>(k);
    Mat3 cov = Mat3::Zero();
    for (std::size_t m = 0; m < k; ++m) {
      const Vec3 d = cloud[dist[m].second].cast<double>() - mean;
      cov += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    if (eig.info() != Eigen::Success || !(eig.eigenvalues()(1) > 0.0)) continue;
    Vec3 normal = eig.eigenvectors().col(0);
    if (normal.dot(p - center) < 0.0) normal = -normal;
    normals[i] = normal;
  }
  return normals;
}

}  // namespace

// ---------------------------------------------------------------------------
// render_partial
// ---------------------------------------------------------------------------

std::vector<std::uint32_t> render_partial_indices(const PointCloud& shape, const Vec3& view, std::uint64_t seed,
                                                  const RenderParams& params) {
  if (shape.empty()) throw Error("empty operand");
  const double view_norm = view.norm();
  if (!(view_norm > 1e-9)) throw Error("degenerate view");
  if (params.grid < 1 || params.neighbor_radius < 0 || params.normal_neighbors < 3 ||
      !(params.min_facing > 0.0 && params.min_facing < 1.0) || !(params.max_slope >= 0.0)) throw Error("invalid render parameters");

  const Vec3 v = view / view_norm;
  Vec3 helper = std::abs(v.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 u1 = v.cross(helper).normalized();
  const Vec3 u2 = v.cross(u1);

  const std::size_t n = shape.size();
  std::vector<double> s(n), t(n), depth(n);
  double s_min = std::numeric_limits<double>::infinity(), t_min = s_min;
  double s_max = -s_min, t_max = -s_min;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p = shape[i].cast<double>();
    s[i] = p.dot(u1);
    t[i] = p.dot(u2);
    depth[i] = -p.dot(v);
    s_min = std::min(s_min, s[i]);
    s_max = std::max(s_max, s[i]);
    t_min = std::min(t_min, t[i]);
    t_max = std::max(t_max, t[i]);
  }

  const int g = params.grid;
  const double span = std::max(s_max - s_min, t_max - t_min);
  const double cell = span > 0.0 ? span / std::max(1, g - 1) : 1.0;
  Rng rng(seed);
  const double off_s = rng.uniform() * cell;
  const double off_t = rng.uniform() * cell;

  auto cell_of = [&](double value, double lo, double offset) {
    const auto c = static_cast<int>(std::floor((value - lo + offset) / cell));
    return std::clamp(c, 0, g - 1);
  };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<int> cell_index(n);
  // Nearest point of every cell.
  std::vector<double> own(static_cast<std::size_t>(g) * g, inf);
  std::vector<std::uint32_t> front(own.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int ci = cell_of(s[i], s_min, off_s);
    const int cj = cell_of(t[i], t_min, off_t);
    cell_index[i] = ci * g + cj;
    if (depth[i] < own[cell_index[i]]) {
      own[cell_index[i]] = depth[i];
      front[cell_index[i]] = static_cast<std::uint32_t>(i);
    }
  }

  const auto normals = estimate_normals(shape, params.normal_neighbors);
  const int r = params.neighbor_radius;
  // One cell diagonal absorbs normal estimation error.
  const double slack = std::numbers::sqrt2 * cell;
  std::vector<std::uint32_t> kept;
  for (std::size_t i = 0; i < n; ++i) {
    // Back-facing or grazing points are never seen; degenerate fits are kept.
    double slope = 0.0;
    if (!normals[i].isZero()) {
      const double facing = normals[i].dot(v);
      if (facing < params.min_facing) continue;
      slope = std::min(params.max_slope, std::sqrt(std::max(0.0, 1.0 - facing * facing)) / facing);
    }
    const int c = cell_index[i];
    const int ci = c / g, cj = c % g;
    bool visible = true;
    for (int di = std::max(0, ci - r); visible && di <= std::min(g - 1, ci + r); ++di) {
      for (int dj = std::max(0, cj - r); dj <= std::min(g - 1, cj + r); ++dj) {
        const int nb = di * g + dj;
        if (own[nb] == inf) continue;
        const double lateral = std::hypot(s[i] - s[front[nb]], t[i] - t[front[nb]]);
        if (depth[i] > own[nb] + params.depth_tolerance + slope * (lateral + slack)) {
          visible = false;
          break;
        }
      }
    }
    if (visible) kept.push_back(static_cast<std::uint32_t>(i));
  }
  return kept;
}

PointCloud render_partial(const PointCloud& shape, const Vec3& view, std::uint64_t seed, const RenderParams& params) {
  return gather(shape, render_partial_indices(shape, view, seed, params));
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

void SceneSpec::validate() const {
  if (!(scale >= 0.8 && scale <= 1.2)) throw ConfigError(fmt::format("scene scale {} outside [0.8, 1.2]", scale));
  if (target_count < 128 || target_count > 2048) {
    throw ConfigError(fmt::format("target count {} outside [128, 2048]", target_count));
  }
  if (clutter_count < 0) throw ConfigError("negative clutter count");
  if (!(noise_sigma >= 0.0)) throw ConfigError("negative noise sigma");
  if (ground && !(ground_half_extent > 0.0)) throw ConfigError("ground extent must be positive");
  if (!(view.norm() > 1e-9)) throw Error("degenerate view");
}

AugmentedScene augment(const PointCloud& partial, const SceneSpec& spec, const ShapeBank& clutter_bank) {
  return augment(partial, spec, clutter_bank, bounds(partial));
}

AugmentedScene augment(const PointCloud& partial, const SceneSpec& spec, const ShapeBank& clutter_bank,
                       const Aabb& object_model_box) {
  if (partial.empty()) throw Error("empty operand");
  spec.validate();
  if (spec.clutter_count > 0 && clutter_bank.empty()) throw ConfigError("clutter requested with an empty bank");

  AugmentedScene scene;
  scene.pose = spec.pose();
  scene.object_model_box = object_model_box;

  // 1-3: subsample, pose disturbance, scale.
  const PointCloud object = apply_transform(
      random_subsample(partial, spec.target_count, derive_seed(spec.seed, 1)), scene.pose);
  std::vector<Point> points = object.points();
  scene.sources.assign(points.size(), PointSource::object);

  const Vec3 object_center = scene.pose.apply(object_model_box.center());
  const double object_min_z = object_center.z() - spec.scale * 0.5 * object_model_box.extent().z();
  // Footprint of the full object box, not of the (possibly sparse) partial.
  const Vec3 half = 0.5 * spec.scale * object_model_box.extent();
  const double object_radius = half.head<2>().norm();

  // 4: scene composition.
  if (spec.ground) {
    Rng rng(derive_seed(spec.seed, 2));
    const double cell = 2.0 * spec.ground_half_extent / kGroundGrid;
    const double z = object_min_z + spec.ground_height;
    for (int i = 0; i < kGroundGrid; ++i) {
      for (int j = 0; j < kGroundGrid; ++j) {
        const double x = -spec.ground_half_extent + (i + 0.5 + rng.uniform(-0.3, 0.3)) * cell;
        const double y = -spec.ground_half_extent + (j + 0.5 + rng.uniform(-0.3, 0.3)) * cell;
        points.emplace_back(Vec3(object_center.x() + x, object_center.y() + y, z).cast<float>());
        scene.sources.push_back(PointSource::ground);
      }
    }
  }

  if (spec.clutter_count > 0) {
    Rng rng(derive_seed(spec.seed, 3));
    for (int c = 0; c < spec.clutter_count; ++c) {
      const auto& entry = clutter_bank[static_cast<std::size_t>(rng.below(clutter_bank.size()))];
      PointCloud view = render_partial(entry.cloud, spec.view, rng.next());
      view = random_subsample(view, std::min(view.size(), kClutterPoints), rng.next());
      const double clutter_scale = spec.scale * rng.uniform(0.5, 0.9);
      const auto clutter_pose = RigidTransform::yaw(rng.uniform(0.0, 2.0 * std::numbers::pi), Vec3::Zero(),
                                                    clutter_scale);
      PointCloud posed = apply_transform(view, clutter_pose);
      const Aabb box = bounds(posed);
      const double clutter_radius = footprint_radius(posed, box.center());
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double distance = object_radius + clutter_radius * rng.uniform(1.0, 1.5);
      const Vec3 target(object_center.x() + distance * std::cos(angle),
                        object_center.y() + distance * std::sin(angle), object_min_z);
      const Vec3 shift(target.x() - box.center().x(), target.y() - box.center().y(), target.z() - box.min.z());
      for (const auto& p : posed) {
        points.emplace_back((p.cast<double>() + shift).cast<float>());
        scene.sources.push_back(PointSource::clutter);
      }
      scene.clutter_centers.push_back(box.center() + shift);
    }
  }

  if (spec.noise_sigma > 0.0) {
    Rng rng(derive_seed(spec.seed, 4));
    for (auto& p : points) {
      const Vec3 noise(rng.normal(), rng.normal(), rng.normal());
      p = (p.cast<double>() + spec.noise_sigma * noise).cast<float>();
    }
  }

  scene.cloud = PointCloud(std::move(points), partial.id(), Frame::scene);
  return scene;
}

// ---------------------------------------------------------------------------
// Detector proxy
// ---------------------------------------------------------------------------

Vec3 RoiBox::to_local(const Vec3& p) const {
  return Eigen::AngleAxisd(-yaw, Vec3::UnitZ()).toRotationMatrix() * (p - center);
}

PointCloud RoiBox::crop(const PointCloud& scene, std::vector<std::uint32_t>* kept) const {
  const Mat3 undo = Eigen::AngleAxisd(-yaw, Vec3::UnitZ()).toRotationMatrix();
  std::vector<Point> out;
  if (kept) kept->clear();
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const Vec3 local = undo * (scene[i].cast<double>() - center);
    if ((local.cwiseAbs().array() <= half_extents.array()).all()) {
      out.push_back(local.cast<float>());
      if (kept) kept->push_back(static_cast<std::uint32_t>(i));
    }
  }
  return PointCloud(std::move(out), scene.id(), Frame::model);
}

Aabb RoiBox::scene_bounds() const {
  const Mat3 rot = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
  const Vec3 reach = rot.cwiseAbs() * half_extents;
  return {center - reach, center + reach};
}

RoiBox true_object_box(const AugmentedScene& scene) {
  RoiBox box;
  box.center = scene.pose.apply(scene.object_model_box.center());
  box.half_extents = 0.5 * scene.pose.scale * scene.object_model_box.extent();
  box.yaw = yaw_of(scene.pose.rotation);
  box.confidence = 1.0;
  return box;
}

std::vector<RoiBox> propose_rois(const AugmentedScene& scene, std::size_t k, std::uint64_t seed, double amplitude) {
  if (k == 0) throw Error("empty request");
  if (!(amplitude >= 0.0 && amplitude <= 1.0)) throw ConfigError("jitter amplitude must lie in [0, 1]");
  const RoiBox truth = true_object_box(scene);
  const Vec3 extent = 2.0 * truth.half_extents;
  Rng rng(seed);

  std::vector<RoiBox> boxes;
  boxes.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    // Every box consumes the same draws so streams line up across configs.
    const Vec3 direction = random_direction(rng);
    const double u_offset = rng.uniform();
    const double u_yaw = rng.uniform();
    const double u_size = rng.uniform();
    const double yaw_sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    Vec3 size_sign;
    for (int a = 0; a < 3; ++a) size_sign[a] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double band = rng.uniform();
    const bool on_clutter = rng.uniform() < 0.5;
    const auto clutter_pick = rng.next();

    double offset_scale = 0.0, yaw_scale = 0.0, size_scale = 0.0, magnitude = 0.0;
    if (i == 0) {
      offset_scale = amplitude * u_offset;
      yaw_scale = amplitude * u_yaw;
      size_scale = amplitude * u_size;
      magnitude = std::max({offset_scale, yaw_scale, size_scale});
    } else {
      magnitude = static_cast<double>(i) + band;
      offset_scale = yaw_scale = size_scale = magnitude;
    }

    RoiBox box = truth;
    box.center += kCenterJitter * offset_scale * extent.cwiseProduct(direction);
    box.yaw += yaw_sign * kYawJitterDeg * kDegree * yaw_scale;
    for (int a = 0; a < 3; ++a) {
      box.half_extents[a] *= std::max(0.3, 1.0 + size_sign[a] * kSizeJitter * size_scale);
    }
    if (i > 0 && i + 1 == k && on_clutter && !scene.clutter_centers.empty()) {
      box.center = scene.clutter_centers[clutter_pick % scene.clutter_centers.size()];
    }
    box.confidence = 1.0 / (1.0 + magnitude);
    boxes.push_back(box);
  }
  return boxes;
}

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

QualityLabel label_from_distances(double s_plus, double s_minus) {
  QualityLabel label;
  label.s_plus = s_plus;
  label.s_minus = s_minus;
  if (s_minus == 0.0) {
    label.s_g = 1.0;
    label.raw_ratio = s_plus == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    return label;
  }
  label.raw_ratio = s_plus / s_minus;
  label.s_g = std::clamp(label.raw_ratio, 0.0, 1.0);
  return label;
}

QualityLabel label_group(const PointCloud& p, const PointCloud& p_r, const PointCloud& p_g,
                         const CompletionOracle& oracle) {
  if (p.empty() || p_r.empty() || p_g.empty()) throw Error("empty operand");
  const KdIndex truth(p_g);
  const PointCloud completed_p = oracle.complete(p);
  const PointCloud completed_r = oracle.complete(p_r);
  const double s_plus = chamfer(completed_p, KdIndex(completed_p), p_g, truth);
  const double s_minus = chamfer(completed_r, KdIndex(completed_r), p_g, truth);
  return label_from_distances(s_plus, s_minus);
}

}  // namespace pcq
