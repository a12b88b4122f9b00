#pragma once

#include <memory>
#include <string>
#include <string_view>

#include "pcq/geometry.hpp"
#include "pcq/metrics.hpp"

namespace pcq {

/// Point count every completion oracle emits.
inline constexpr std::size_t kCompletionPoints = 2048;
/// Standard deviation of the duplication jitter used when upsampling.
inline constexpr double kUpsampleSigma = 0.01;

enum class OracleKind { retrieval, mirror, passthrough };

[[nodiscard]] OracleKind parse_oracle_kind(std::string_view name);
[[nodiscard]] std::string_view to_string(OracleKind kind);

/// A completion function: partial cloud in, exactly kCompletionPoints finite
/// points out. Implementations are pure; the same input always produces the
/// same output and concurrent calls are safe.
class CompletionOracle {
 public:
  virtual ~CompletionOracle() = default;
  [[nodiscard]] virtual PointCloud complete(const PointCloud& partial) const = 0;
  [[nodiscard]] virtual OracleKind kind() const = 0;
};

/// Resamples to exactly `count` points: FPS when there are more, identity
/// when equal, otherwise the originals followed by jittered cyclic copies.
/// Jitter is Gaussian with `sigma` per axis, truncated at 2 sigma, and seeded
/// from the content hash so the result is a pure function of the input.
[[nodiscard]] PointCloud resample_exact(const PointCloud& cloud, std::size_t count, double sigma = kUpsampleSigma);

/// Bank entry minimizing the one-sided Chamfer distance from the
/// normalized partial to the entry. Ties go to the lowest entry index.
[[nodiscard]] PointCloud complete_retrieval(const PointCloud& partial, const ShapeBank& bank);
/// Index variant of complete_retrieval.
[[nodiscard]] std::size_t retrieve_index(const PointCloud& partial, const ShapeBank& bank);

/// Normalized partial united with its reflection across x = 0, resampled.
[[nodiscard]] PointCloud complete_mirror(const PointCloud& partial);

/// The partial resampled to kCompletionPoints without changing its shape.
[[nodiscard]] PointCloud complete_passthrough(const PointCloud& partial);

class RetrievalOracle final : public CompletionOracle {
 public:
  explicit RetrievalOracle(std::shared_ptr<const ShapeBank> bank);
  [[nodiscard]] PointCloud complete(const PointCloud& partial) const override;
  [[nodiscard]] OracleKind kind() const override { return OracleKind::retrieval; }
  [[nodiscard]] const ShapeBank& bank() const { return *bank_; }

 private:
  std::shared_ptr<const ShapeBank> bank_;
};

class MirrorOracle final : public CompletionOracle {
 public:
  [[nodiscard]] PointCloud complete(const PointCloud& partial) const override { return complete_mirror(partial); }
  [[nodiscard]] OracleKind kind() const override { return OracleKind::mirror; }
};

class PassthroughOracle final : public CompletionOracle {
 public:
  [[nodiscard]] PointCloud complete(const PointCloud& partial) const override {
    return complete_passthrough(partial);
  }
  [[nodiscard]] OracleKind kind() const override { return OracleKind::passthrough; }
};

/// `bank` is required for the retrieval variant and ignored otherwise.
[[nodiscard]] std::unique_ptr<CompletionOracle> make_oracle(OracleKind kind, std::shared_ptr<const ShapeBank> bank);

}  // namespace pcq
