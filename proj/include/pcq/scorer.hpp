#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pcq/geometry.hpp"

namespace pcq {

class ChecksumError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Layer widths. The default is the production network; tests use a small
/// shape so every parameter can be finite-differenced.
struct ScorerShape {
  std::size_t a1 = 64, a2 = 128, f0 = 256;  // per-point MLP A: 3 -> a1 -> a2 -> f0
  std::size_t b1 = 512, g1 = 1024;          // per-point MLP B: 2*f0 -> b1 -> g1
  std::size_t code = 1280;                  // fusion MLP C: 3*(f0+g1) -> code
  std::size_t head = 64;                    // head MLP D: code -> head -> 1
  /// FPS sizes of the second and third resolutions; the first is the full input.
  std::array<std::size_t, 2> fps{512, 256};

  [[nodiscard]] std::size_t feature() const { return f0 + g1; }
  /// (in, out) of each of the eight layers, in file order.
  [[nodiscard]] std::array<std::pair<std::size_t, std::size_t>, 8> layer_dims() const;
  friend bool operator==(const ScorerShape&, const ScorerShape&) = default;
};

enum LayerId : std::size_t { kA1, kA2, kA3, kB1, kB2, kC, kD1, kD2, kLayerCount };

template <typename T>
struct Layer {
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> w;  // out x in
  Eigen::Matrix<T, Eigen::Dynamic, 1> b;               // out
};

template <typename T>
struct Params {
  ScorerShape shape;
  std::array<Layer<T>, kLayerCount> layers;

  /// Zero-filled parameters of the given shape.
  [[nodiscard]] static Params zeros(const ScorerShape& shape);
  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] bool is_finite() const;
  template <typename U>
  [[nodiscard]] Params<U> cast() const {
    Params<U> out;
    out.shape = shape;
    for (std::size_t i = 0; i < kLayerCount; ++i) {
      out.layers[i].w = layers[i].w.template cast<U>();
      out.layers[i].b = layers[i].b.template cast<U>();
    }
    return out;
  }
  /// Every parameter block (each layer's weights, then its bias) as flat
  /// storage, in file order.
  [[nodiscard]] std::vector<std::span<T>> blocks();
  [[nodiscard]] std::vector<std::span<const T>> blocks() const;
};

using ScorerWeights = Params<float>;

/// Uniform(-sqrt(6/(in+out)), +sqrt(6/(in+out))) weights, zero biases.
[[nodiscard]] ScorerWeights init_weights(const ScorerShape& shape, std::uint64_t seed);

/// A cloud made ready for the network: normalized, 3 x n, plus the point
/// sets of each resolution. Depends only on the cloud, never on weights.
template <typename T>
struct PreparedCloud {
  Eigen::Matrix<T, 3, Eigen::Dynamic> points;
  /// Distinct point indices of each resolution; [0] is every point.
  std::array<std::vector<std::uint32_t>, 3> sets;
  /// alias[r] < r when resolution r has the same point set as resolution
  /// alias[r]; its features are then copied rather than recomputed.
  std::array<std::size_t, 3> alias{0, 1, 2};
};

/// Throws "empty operand" for an empty cloud.
template <typename T>
[[nodiscard]] PreparedCloud<T> prepare(const PointCloud& cloud, const ScorerShape& shape);

/// Scores in (0, 1), one per cloud, evaluated as one packed batch.
template <typename T>
[[nodiscard]] std::vector<double> forward(const Params<T>& weights, std::span<const PreparedCloud<T>* const> batch);

[[nodiscard]] double score(const ScorerWeights& weights, const PointCloud& cloud);

/// Huber loss on r = score - target. Throws when delta <= 0.
[[nodiscard]] double huber(double score, double target, double delta);
/// d huber / d score.
[[nodiscard]] double huber_grad(double score, double target, double delta);

/// Mean Huber loss over the batch; when `grad` is non-null it receives the
/// exact gradient of that mean with respect to every parameter (overwritten).
template <typename T>
double loss_and_gradient(const Params<T>& weights, std::span<const PreparedCloud<T>* const> batch,
                         std::span<const double> targets, double delta, Params<T>* grad);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t batch = 32;
  std::size_t epochs = 12;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double delta = 2.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  ScorerWeights weights;
  std::vector<EpochLog> log;
};

/// Adam on mini-batches of a seeded per-epoch shuffle. Deterministic given
/// the config. `on_epoch` sees each log entry as it is produced.
[[nodiscard]] TrainResult train(std::span<const PointCloud> clouds, std::span<const double> targets,
                                const TrainConfig& config, const ScorerShape& shape = {},
                                const std::function<void(const EpochLog&)>& on_epoch = {});

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct ScoreReport {
  std::string id;
  double score = 0.0;
  bool accepted = false;
  double threshold = 0.0;
  double latency_ms = 0.0;  // batch wall time shared evenly by its members
};

/// Scores clouds in packed batches of `batch_size`. Throws ConfigError when
/// the threshold is outside [0, 1].
[[nodiscard]] std::vector<ScoreReport> score_batch(const ScorerWeights& weights, std::span<const PointCloud> clouds,
                                                   double threshold, std::size_t batch_size = 32);

/// Area under the ROC curve; ties between a positive and a negative count 1/2.
/// Throws when either class is empty.
[[nodiscard]] double roc_auc(std::span<const double> scores, const std::vector<bool>& positive);

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

[[nodiscard]] std::vector<char> encode_weights(const ScorerWeights& weights);
/// Verifies the trailing CRC32 first (ChecksumError), then the layer
/// dimensions (DimensionError). FPS sizes are not stored; they come from
/// `fps`.
[[nodiscard]] ScorerWeights decode_weights(const std::vector<char>& bytes,
                                           std::array<std::size_t, 2> fps = ScorerShape{}.fps);
void save_weights(const std::filesystem::path& path, const ScorerWeights& weights);
[[nodiscard]] ScorerWeights load_weights(const std::filesystem::path& path,
                                         std::array<std::size_t, 2> fps = ScorerShape{}.fps);

}  // namespace pcq
