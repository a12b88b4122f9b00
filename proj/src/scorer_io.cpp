#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>

#include <fmt/format.h>
#include <zlib.h>

#include "pcq/cloud_io.hpp"
#include "pcq/scorer.hpp"

namespace pcq {
namespace {

constexpr char kWeightsMagic[4] = {'P', 'C', 'Q', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

std::uint32_t crc(const char* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; weight files stay far below 4 GiB.
  c = crc32(c, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(c);
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

}  // namespace

void TrainConfig::validate() const {
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (!(delta > 0.0)) throw ConfigError("delta must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
}

TrainResult train(std::span<const PointCloud> clouds, std::span<const double> targets, const TrainConfig& config,
                  const ScorerShape& shape, const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (clouds.empty()) throw Error("empty operand");
  if (clouds.size() != targets.size()) throw Error("one target per cloud required");

  std::vector<PreparedCloud<float>> prepared;
  prepared.reserve(clouds.size());
  for (const auto& c : clouds) prepared.push_back(prepare<float>(c, shape));

  TrainResult result;
  result.weights = init_weights(shape, derive_seed(config.seed, 0x1417));
  auto params = result.weights.blocks();
  auto m = ScorerWeights::zeros(shape);
  auto v = ScorerWeights::zeros(shape);
  auto m_blocks = m.blocks();
  auto v_blocks = v.blocks();
  ScorerWeights grad;

  std::vector<std::size_t> order(clouds.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const PreparedCloud<float>*> batch;
  std::vector<double> batch_targets;
  std::uint64_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = Clock::now();
    Rng rng(derive_seed(config.seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
    }
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      batch.clear();
      batch_targets.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&prepared[order[i]]);
        batch_targets.push_back(targets[order[i]]);
      }
      const double loss = loss_and_gradient<float>(result.weights, batch, batch_targets, config.delta, &grad);
      loss_sum += loss * static_cast<double>(end - start);

      ++step;
      const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      const auto b1 = static_cast<float>(config.beta1);
      const auto b2 = static_cast<float>(config.beta2);
      const auto lr = static_cast<float>(config.learning_rate / bc1);
      const auto inv_bc2 = static_cast<float>(1.0 / bc2);
      const auto eps = static_cast<float>(config.epsilon);
      const auto g_blocks = grad.blocks();
      for (std::size_t b = 0; b < params.size(); ++b) {
        auto p = params[b];
        auto mb = m_blocks[b];
        auto vb = v_blocks[b];
        const auto gb = g_blocks[b];
        for (std::size_t i = 0; i < p.size(); ++i) {
          mb[i] = b1 * mb[i] + (1.0F - b1) * gb[i];
          vb[i] = b2 * vb[i] + (1.0F - b2) * gb[i] * gb[i];
          p[i] -= lr * mb[i] / (std::sqrt(vb[i] * inv_bc2) + eps);
        }
      }
    }
    EpochLog entry{epoch, loss_sum / static_cast<double>(order.size()), seconds_since(t0)};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  if (!result.weights.is_finite()) throw Error("training diverged: non-finite weights");
  return result;
}

std::vector<ScoreReport> score_batch(const ScorerWeights& weights, std::span<const PointCloud> clouds,
                                     double threshold, std::size_t batch_size) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<ScoreReport> reports;
  reports.reserve(clouds.size());
  for (std::size_t start = 0; start < clouds.size(); start += batch_size) {
    const std::size_t end = std::min(clouds.size(), start + batch_size);
    const auto t0 = Clock::now();
    std::vector<PreparedCloud<float>> prepared;
    prepared.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) prepared.push_back(prepare<float>(clouds[i], weights.shape));
    std::vector<const PreparedCloud<float>*> ptrs;
    for (const auto& p : prepared) ptrs.push_back(&p);
    const auto scores = forward<float>(weights, ptrs);
    const double per_cloud_ms = 1e3 * seconds_since(t0) / static_cast<double>(end - start);
    for (std::size_t i = start; i < end; ++i) {
      ScoreReport r;
      r.id = clouds[i].id();
      r.score = scores[i - start];
      r.threshold = threshold;
      r.accepted = r.score >= threshold;
      r.latency_ms = per_cloud_ms;
      reports.push_back(std::move(r));
    }
  }
  return reports;
}

double roc_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw Error("one label per score required");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with mid-ranks for ties.
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t q = i; q < j; ++q) {
      if (positive[order[q]]) {
        rank_sum += mid_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw Error("both classes must be present");
  const auto p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

std::vector<char> encode_weights(const ScorerWeights& weights) {
  std::vector<char> out;
  out.reserve(16 + 4 * weights.parameter_count() + 8 * kLayerCount);
  for (char c : kWeightsMagic) out.push_back(c);
  put_u32(out, kWeightsVersion);
  put_u32(out, static_cast<std::uint32_t>(kLayerCount));
  for (const auto& layer : weights.layers) {
    put_u32(out, static_cast<std::uint32_t>(layer.w.cols()));
    put_u32(out, static_cast<std::uint32_t>(layer.w.rows()));
    for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.w.cols(); ++c) put_u32(out, std::bit_cast<std::uint32_t>(layer.w(r, c)));
    }
    for (Eigen::Index r = 0; r < layer.b.size(); ++r) put_u32(out, std::bit_cast<std::uint32_t>(layer.b(r)));
  }
  put_u32(out, crc(out.data(), out.size()));
  return out;
}

ScorerWeights decode_weights(const std::vector<char>& bytes, std::array<std::size_t, 2> fps) {
  if (bytes.size() < 16) throw ChecksumError("weights file truncated");
  const std::size_t body = bytes.size() - 4;
  if (crc(bytes.data(), body) != get_u32(bytes.data() + body)) throw ChecksumError("weights checksum mismatch");
  if (std::memcmp(bytes.data(), kWeightsMagic, 4) != 0) throw IoError("not a PCQW file");
  const auto version = get_u32(bytes.data() + 4);
  if (version != kWeightsVersion) throw IoError(fmt::format("unsupported weights version {}", version));
  const auto count = get_u32(bytes.data() + 8);
  if (count != kLayerCount) throw DimensionError(fmt::format("expected {} layers, file has {}", +kLayerCount, count));

  std::size_t at = 12;
  auto need = [&](std::size_t n) {
    if (at + n > body) throw DimensionError("layer dimensions exceed the payload");
  };
  std::array<std::pair<std::size_t, std::size_t>, kLayerCount> dims{};
  std::array<std::size_t, kLayerCount> data_at{};
  for (std::size_t i = 0; i < kLayerCount; ++i) {
    need(8);
    dims[i] = {get_u32(bytes.data() + at), get_u32(bytes.data() + at + 4)};
    at += 8;
    data_at[i] = at;
    const std::size_t floats = dims[i].first * dims[i].second + dims[i].second;
    if (floats > (body - at) / 4) throw DimensionError("layer dimensions exceed the payload");
    at += 4 * floats;
  }
  if (at != body) throw DimensionError("trailing bytes after the last layer");

  ScorerShape shape;
  shape.a1 = dims[kA1].second;
  shape.a2 = dims[kA2].second;
  shape.f0 = dims[kA3].second;
  shape.b1 = dims[kB1].second;
  shape.g1 = dims[kB2].second;
  shape.code = dims[kC].second;
  shape.head = dims[kD1].second;
  shape.fps = fps;
  if (shape.layer_dims() != dims) throw DimensionError("layer dimensions do not chain into a scorer network");

  auto weights = ScorerWeights::zeros(shape);
  for (std::size_t i = 0; i < kLayerCount; ++i) {
    const char* p = bytes.data() + data_at[i];
    auto& layer = weights.layers[i];
    for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.w.cols(); ++c, p += 4) layer.w(r, c) = std::bit_cast<float>(get_u32(p));
    }
    for (Eigen::Index r = 0; r < layer.b.size(); ++r, p += 4) layer.b(r) = std::bit_cast<float>(get_u32(p));
  }
  if (!weights.is_finite()) throw IoError("weights file holds non-finite values");
  return weights;
}

void save_weights(const std::filesystem::path& path, const ScorerWeights& weights) {
  io::write_file(path, encode_weights(weights));
}

ScorerWeights load_weights(const std::filesystem::path& path, std::array<std::size_t, 2> fps) {
  return decode_weights(io::read_file(path), fps);
}

}  // namespace pcq
