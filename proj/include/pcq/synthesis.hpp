#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcq/config.hpp"
#include "pcq/geometry.hpp"
#include "pcq/metrics.hpp"
#include "pcq/oracle.hpp"

namespace pcq {

/// Ground-truth clouds and dataset shapes all carry this many points.
inline constexpr std::size_t kShapePoints = 2048;

// ---------------------------------------------------------------------------
// Procedural shapes
// ---------------------------------------------------------------------------

enum class ShapeKind { box, ellipsoid, car_composite, cylinder };

[[nodiscard]] std::string_view to_string(ShapeKind kind);
[[nodiscard]] ShapeKind parse_shape_kind(std::string_view name);
[[nodiscard]] std::vector<ShapeKind> all_shape_kinds();

/// Unnormalized shape dimensions. `size` means:
///   box        half-extents (x, y, z)
///   ellipsoid  semi-axes (a, b, c)
///   cylinder   (radius, radius, half-height), axis along z
///   car        body half-extents (half-length, half-width, half-height);
///              the cabin and wheels derive from `cabin` and `wheel`.
struct ShapeParams {
  ShapeKind kind = ShapeKind::box;
  Vec3 size = Vec3::Ones();
  double cabin_radius = 0.0;       // car only: half-cylinder radius
  double cabin_half_length = 0.0;  // car only
  double wheel_radius = 0.0;       // car only
};

/// Seeded random proportions for a shape kind.
[[nodiscard]] ShapeParams random_shape_params(ShapeKind kind, std::uint64_t seed);

/// `count` points uniformly distributed over the surface area, in the
/// shape's own (unnormalized, origin-centered) frame.
[[nodiscard]] PointCloud sample_surface(const ShapeParams& params, std::size_t count, std::uint64_t seed);

/// kShapePoints surface points of a seeded random shape, normalized.
[[nodiscard]] PointCloud generate_shape(ShapeKind kind, std::uint64_t seed);

// ---------------------------------------------------------------------------
// 2.5D partial views
// ---------------------------------------------------------------------------

struct RenderParams {
  int grid = 64;                 // depth grid is grid x grid cells
  double depth_tolerance = 0.02; // normalized units
  /// Cells within this Chebyshev radius take part in the occlusion test.
  int neighbor_radius = 4;
  /// Normals come from a PCA fit over this many nearest neighbours.
  std::size_t normal_neighbors = 12;
  /// Points whose normal makes a cosine below this with the view are culled.
  double min_facing = 0.01;
  /// Cap on the slope allowance, so grazing points far behind a front
  /// surface are still hidden by it.
  double max_slope = 10.0;
};

/// Visible side of `shape` seen from direction `view` (camera on the +view
/// side looking back at the origin). A point is kept when its estimated
/// normal faces the camera and no point in a nearby depth-grid cell is
/// nearer by more than the tolerance plus what its own surface slope
/// explains. `seed` shifts the grid origin by a sub-cell offset. Output is
/// a subset of the input, order preserved.
/// Throws "degenerate view" for a near-zero view vector.
[[nodiscard]] PointCloud render_partial(const PointCloud& shape, const Vec3& view, std::uint64_t seed,
                                        const RenderParams& params = {});
[[nodiscard]] std::vector<std::uint32_t> render_partial_indices(const PointCloud& shape, const Vec3& view,
                                                                std::uint64_t seed, const RenderParams& params = {});

// ---------------------------------------------------------------------------
// Scene augmentation
// ---------------------------------------------------------------------------

struct SceneSpec {
  double yaw = 0.0;                  // [0, 2π)
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;                // [0.8, 1.2]
  Vec3 view = Vec3::UnitX();
  int clutter_count = 0;
  bool ground = false;
  double ground_height = 0.0;        // offset from the object's minimum z
  double ground_half_extent = 1.5;   // half side of the square ground patch
  double noise_sigma = 0.0;
  std::size_t target_count = 1024;   // [128, 2048]
  std::uint64_t seed = 0;

  /// Throws ConfigError when a field is outside its range.
  void validate() const;
  [[nodiscard]] RigidTransform pose() const { return RigidTransform::yaw(yaw, translation, scale); }
};

/// Ground patch resolution: a jittered kGroundGrid x kGroundGrid lattice.
inline constexpr int kGroundGrid = 20;
inline constexpr std::size_t kClutterPoints = 384;

enum class PointSource : std::uint8_t { object, ground, clutter };

struct AugmentedScene {
  PointCloud cloud;                  // scene frame
  std::vector<PointSource> sources;  // parallel to cloud
  RigidTransform pose;               // object model frame -> scene frame
  Aabb object_model_box;             // object AABB in its model frame
  std::vector<Vec3> clutter_centers; // scene frame
};

/// Subsample, pose, scale, then compose with a ground patch and clutter
/// objects, and finally add Gaussian noise to every point.
/// The object's true box defaults to the partial's bounds; pass the complete
/// shape's bounds when they are known.
[[nodiscard]] AugmentedScene augment(const PointCloud& partial, const SceneSpec& spec, const ShapeBank& clutter_bank);
[[nodiscard]] AugmentedScene augment(const PointCloud& partial, const SceneSpec& spec, const ShapeBank& clutter_bank,
                                     const Aabb& object_model_box);

// ---------------------------------------------------------------------------
// Detector proxy
// ---------------------------------------------------------------------------

struct RoiBox {
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Ones();
  double yaw = 0.0;
  double confidence = 1.0;

  /// Scene point expressed in the box frame (box center at the origin,
  /// box yaw undone).
  [[nodiscard]] Vec3 to_local(const Vec3& p) const;
  /// Box-frame coordinates of the scene points inside the box.
  [[nodiscard]] PointCloud crop(const PointCloud& scene, std::vector<std::uint32_t>* kept = nullptr) const;
  /// Scene-frame axis-aligned bounds of the oriented box.
  [[nodiscard]] Aabb scene_bounds() const;
};

/// Oriented box enclosing the posed object.
[[nodiscard]] RoiBox true_object_box(const AugmentedScene& scene);

/// Bounds on box-0 jitter, as fractions of the true box extent / degrees.
inline constexpr double kCenterJitter = 0.15;
inline constexpr double kYawJitterDeg = 10.0;
inline constexpr double kSizeJitter = 0.10;

/// k boxes sorted by strictly descending confidence. Box 0 is the true box
/// jittered by at most `amplitude` x (15% center, 10° yaw, 10% size); box i
/// carries jitter magnitude in [i, i+1) of the same units, and the last box
/// may be centered on a clutter object instead.
[[nodiscard]] std::vector<RoiBox> propose_rois(const AugmentedScene& scene, std::size_t k, std::uint64_t seed,
                                               double amplitude = 1.0);

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

struct QualityLabel {
  double s_g = 0.0;        // min(1, s_plus / s_minus); 1 when s_minus == 0
  double s_plus = 0.0;     // CD(F(p), p_g)
  double s_minus = 0.0;    // CD(F(p_r), p_g)
  double raw_ratio = 0.0;  // s_plus / s_minus before clamping (inf when s_minus == 0 < s_plus)
};

[[nodiscard]] QualityLabel label_from_distances(double s_plus, double s_minus);

/// Completes both crops with `oracle` and compares each to the ground truth.
[[nodiscard]] QualityLabel label_group(const PointCloud& p, const PointCloud& p_r, const PointCloud& p_g,
                                       const CompletionOracle& oracle);

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct BuildConfig {
  std::size_t samples = 500;
  std::uint64_t seed = 1;
  OracleKind oracle = OracleKind::retrieval;
  std::optional<std::filesystem::path> bank_path;  // generated when absent
  std::size_t bank_per_kind = 12;
  std::vector<ShapeKind> kinds = all_shape_kinds();
  double test_fraction = 0.2;
  std::size_t rois_per_scene = 5;
  double clean_fraction = 0.15;
  double ground_probability = 0.7;
  double ground_half_extent_min = 0.9;  // multiples of the object's footprint radius
  double ground_half_extent_max = 1.6;
  int clutter_max = 2;
  double noise_sigma_max = 0.01;
  double jitter = 1.0;
  std::size_t min_crop_points = 16;
  unsigned threads = 0;

  /// Keys accepted in a build-dataset config file.
  static const std::set<std::string>& keys();
  /// Reads every key; `oracle` is required.
  [[nodiscard]] static BuildConfig from(const KeyValueConfig& kv);
  void validate() const;
};

struct SampleRecord {
  std::string id;
  std::string split;  // "train" | "test"
  ShapeKind shape_kind = ShapeKind::box;
  std::uint64_t shape_seed = 0;
  std::uint64_t seed = 0;
  std::size_t scene = 0;
  int roi_rank = 0;
  double confidence = 1.0;
  bool clean = false;  // p_r is p itself
  std::string p, p_o, p_r, p_g;  // paths relative to the dataset directory
  QualityLabel label;
  std::size_t n_points = 0;
  double ground_fraction = 0.0;
  double clutter_fraction = 0.0;
};

struct DatasetSummary {
  std::size_t samples = 0;
  std::size_t train = 0;
  std::size_t test = 0;
  std::size_t scenes = 0;
};

/// Writes manifest.jsonl, clouds/, bank/ (the oracle and clutter bank when
/// generated) and gt_bank/ (train-split ground truths, the MMD reference).
/// Deterministic given the config.
DatasetSummary build_dataset(const BuildConfig& config, const std::filesystem::path& out_dir);

/// Shape bank of `per_kind` seeded shapes of each kind.
[[nodiscard]] ShapeBank generate_bank(const std::vector<ShapeKind>& kinds, std::size_t per_kind, std::uint64_t seed);

[[nodiscard]] std::vector<SampleRecord> read_manifest(const std::filesystem::path& dataset_dir);
[[nodiscard]] std::string manifest_line(const SampleRecord& record);
[[nodiscard]] SampleRecord parse_manifest_line(const std::string& line);

}  // namespace pcq
