#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "pcq/scorer.hpp"

namespace pcq {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
using IndexMat = Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic>;
using Cols = std::vector<Eigen::Index>;

// Logits beyond this saturate the logistic to within one ulp of 0 or 1;
// clamping keeps the score strictly inside (0, 1).
constexpr double kLogitClamp = 36.0;
// Column block for the widest per-point layer, so its output never has to
// be materialized for a whole cloud.
constexpr Eigen::Index kBlock = 256;

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename T>
auto relu(const Eigen::MatrixBase<T>& m) {
  return m.cwiseMax(typename T::Scalar(0));
}

template <typename T>
Mat<T> positive_mask(const Mat<T>& m) {
  return (m.array() > T(0)).template cast<T>().matrix();
}

template <typename T>
struct ResolutionCache {
  std::vector<std::size_t> clouds;  // batch slots computed at this resolution
  std::vector<std::size_t> seg;     // start of each computed cloud in `cols`
  std::vector<std::size_t> owner;   // computed-cloud position of each entry of `cols`
  Cols cols;                        // packed point columns
  Mat<T> g0;                        // f0 x clouds
  IndexMat arg0;                    // packed column of each g0 entry
  Mat<T> z1;                        // b1 x cols, after ReLU
  Mat<T> pre_max;                   // g1 x clouds, before ReLU
  IndexMat arg1;                    // position in `cols` of each pre_max entry
};

// Clouds are encoded in groups of about this many points: enough columns
// for efficient products, small enough that intermediates stay in cache.
constexpr Eigen::Index kGroupPoints = 2048;

template <typename T>
struct GroupCache {
  std::vector<std::size_t> members;  // batch slots
  std::vector<Eigen::Index> offset;  // first packed column of each member
  Mat<T> x, h1, h2, f0;
  std::array<ResolutionCache<T>, 3> res;
};

template <typename T>
struct Cache {
  std::vector<GroupCache<T>> groups;
  Mat<T> feat;  // 3*feature x batch
  Mat<T> c, d;  // after ReLU
  std::vector<double> logit;
};

template <typename T>
void encode_group(const Params<T>& w, std::span<const PreparedCloud<T>* const> batch, GroupCache<T>& k,
                  Mat<T>& feat) {
  const ScorerShape& s = w.shape;
  const auto& L = w.layers;
  const std::size_t B = k.members.size();
  const auto f0 = static_cast<Eigen::Index>(s.f0);
  const auto F = static_cast<Eigen::Index>(s.feature());

  k.offset.assign(B + 1, 0);
  for (std::size_t i = 0; i < B; ++i) k.offset[i + 1] = k.offset[i] + batch[k.members[i]]->points.cols();
  const Eigen::Index N = k.offset[B];
  k.x.resize(3, N);
  for (std::size_t i = 0; i < B; ++i) {
    k.x.middleCols(k.offset[i], k.offset[i + 1] - k.offset[i]) = batch[k.members[i]]->points;
  }

  k.h1 = relu((L[kA1].w * k.x).colwise() + L[kA1].b);
  k.h2 = relu((L[kA2].w * k.h1).colwise() + L[kA2].b);
  k.f0 = relu((L[kA3].w * k.h2).colwise() + L[kA3].b);
  // B1 sees [tiled g0; f0]; the f0 half is per point and shared by every
  // resolution, the g0 half is one column per cloud and resolution.
  const auto wg = L[kB1].w.leftCols(f0);
  const auto wf = L[kB1].w.rightCols(f0);
  const Mat<T> pf = (wf * k.f0).colwise() + L[kB1].b;

  for (std::size_t r = 0; r < 3; ++r) {
    auto& rc = k.res[r];
    rc.clouds.clear();
    rc.seg.assign(1, 0);
    rc.cols.clear();
    rc.owner.clear();
    for (std::size_t i = 0; i < B; ++i) {
      if (batch[k.members[i]]->alias[r] != r) continue;
      for (auto p : batch[k.members[i]]->sets[r]) {
        rc.cols.push_back(k.offset[i] + p);
        rc.owner.push_back(rc.clouds.size());
      }
      rc.clouds.push_back(i);
      rc.seg.push_back(rc.cols.size());
    }
    const auto C = static_cast<Eigen::Index>(rc.clouds.size());
    const auto M = static_cast<Eigen::Index>(rc.cols.size());

    rc.g0.resize(f0, C);
    rc.arg0.resize(f0, C);
    for (Eigen::Index c = 0; c < C; ++c) {
      const auto first = rc.cols[rc.seg[c]];
      rc.g0.col(c) = k.f0.col(first);
      rc.arg0.col(c).setConstant(first);
      for (auto p = rc.seg[c] + 1; p < rc.seg[c + 1]; ++p) {
        const auto col = rc.cols[p];
        for (Eigen::Index j = 0; j < f0; ++j) {
          if (k.f0(j, col) > rc.g0(j, c)) {
            rc.g0(j, c) = k.f0(j, col);
            rc.arg0(j, c) = col;
          }
        }
      }
    }

    const Mat<T> gg = wg * rc.g0;
    rc.z1.resize(static_cast<Eigen::Index>(s.b1), M);
    for (Eigen::Index p = 0; p < M; ++p) {
      rc.z1.col(p) = relu(pf.col(rc.cols[p]) + gg.col(static_cast<Eigen::Index>(rc.owner[p])));
    }

    const auto g1 = static_cast<Eigen::Index>(s.g1);
    rc.pre_max.setConstant(g1, C, -std::numeric_limits<T>::infinity());
    rc.arg1.setZero(g1, C);
    Mat<T> block;
    for (Eigen::Index start = 0; start < M; start += kBlock) {
      const Eigen::Index len = std::min(kBlock, M - start);
      block.noalias() = L[kB2].w * rc.z1.middleCols(start, len);
      block.colwise() += L[kB2].b;
      for (Eigen::Index q = 0; q < len; ++q) {
        const auto c = static_cast<Eigen::Index>(rc.owner[start + q]);
        for (Eigen::Index j = 0; j < g1; ++j) {
          if (block(j, q) > rc.pre_max(j, c)) {
            rc.pre_max(j, c) = block(j, q);
            rc.arg1(j, c) = start + q;
          }
        }
      }
    }

    for (Eigen::Index c = 0; c < C; ++c) {
      const auto slot = static_cast<Eigen::Index>(k.members[rc.clouds[c]]);
      feat.block(static_cast<Eigen::Index>(r) * F, slot, f0, 1) = rc.g0.col(c);
      feat.block(static_cast<Eigen::Index>(r) * F + f0, slot, g1, 1) = relu(rc.pre_max.col(c));
    }
  }
  for (auto slot : k.members) {
    for (std::size_t r = 1; r < 3; ++r) {
      const auto src = batch[slot]->alias[r];
      if (src == r) continue;
      const auto col = static_cast<Eigen::Index>(slot);
      feat.block(static_cast<Eigen::Index>(r) * F, col, F, 1) = feat.block(static_cast<Eigen::Index>(src) * F, col, F, 1);
    }
  }
}

template <typename T>
void forward_impl(const Params<T>& w, std::span<const PreparedCloud<T>* const> batch, Cache<T>& k,
                  bool keep_groups) {
  const auto& L = w.layers;
  const std::size_t B = batch.size();
  k.feat.setZero(3 * static_cast<Eigen::Index>(w.shape.feature()), static_cast<Eigen::Index>(B));
  k.groups.clear();
  Eigen::Index points = 0;
  for (std::size_t i = 0; i < B; ++i) {
    const auto n = batch[i]->points.cols();
    if (k.groups.empty() || points + n > kGroupPoints) {
      k.groups.emplace_back();
      points = 0;
    }
    k.groups.back().members.push_back(i);
    points += n;
  }
  if (keep_groups) {
    for (auto& group : k.groups) encode_group(w, batch, group, k.feat);
  } else {
    // Inference: one scratch group, reused so its buffers stay warm.
    GroupCache<T> scratch;
    for (auto& group : k.groups) {
      scratch.members = std::move(group.members);
      encode_group(w, batch, scratch, k.feat);
    }
    k.groups.clear();
  }

  k.c = relu((L[kC].w * k.feat).colwise() + L[kC].b);
  k.d = relu((L[kD1].w * k.c).colwise() + L[kD1].b);
  const Mat<T> out = (L[kD2].w * k.d).colwise() + L[kD2].b;
  k.logit.resize(B);
  for (std::size_t i = 0; i < B; ++i) k.logit[i] = static_cast<double>(out(0, static_cast<Eigen::Index>(i)));
}

double squash(double logit) { return logistic(std::clamp(logit, -kLogitClamp, kLogitClamp)); }

template <typename T>
void backward_group(const Params<T>& w, const GroupCache<T>& k, const Mat<T>& dfeat, Params<T>& g);

template <typename T>
void backward_impl(const Params<T>& w, std::span<const PreparedCloud<T>* const> batch, const Cache<T>& k,
                   const Mat<T>& d_logit, Params<T>& g) {
  const ScorerShape& s = w.shape;
  const auto& L = w.layers;
  auto& G = g.layers;
  const std::size_t B = batch.size();
  const auto F = static_cast<Eigen::Index>(s.feature());

  // Head.
  G[kD2].w.noalias() += d_logit * k.d.transpose();
  G[kD2].b += d_logit.rowwise().sum();
  const Mat<T> dd = (L[kD2].w.transpose() * d_logit).cwiseProduct(positive_mask(k.d));
  G[kD1].w.noalias() += dd * k.c.transpose();
  G[kD1].b += dd.rowwise().sum();
  const Mat<T> dc = (L[kD1].w.transpose() * dd).cwiseProduct(positive_mask(k.c));
  G[kC].w.noalias() += dc * k.feat.transpose();
  G[kC].b += dc.rowwise().sum();
  Mat<T> dfeat = L[kC].w.transpose() * dc;

  // Aliased resolutions hand their gradient to the resolution they copied.
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t r = 2; r >= 1; --r) {
      const auto src = batch[i]->alias[r];
      if (src == r) continue;
      const auto slot = static_cast<Eigen::Index>(i);
      dfeat.block(static_cast<Eigen::Index>(src) * F, slot, F, 1) +=
          dfeat.block(static_cast<Eigen::Index>(r) * F, slot, F, 1);
    }
  }

  for (const auto& group : k.groups) backward_group(w, group, dfeat, g);
}

template <typename T>
void backward_group(const Params<T>& w, const GroupCache<T>& k, const Mat<T>& dfeat, Params<T>& g) {
  const ScorerShape& s = w.shape;
  const auto& L = w.layers;
  auto& G = g.layers;
  const auto f0 = static_cast<Eigen::Index>(s.f0);
  const auto g1 = static_cast<Eigen::Index>(s.g1);
  const auto F = static_cast<Eigen::Index>(s.feature());
  const auto wg = L[kB1].w.leftCols(f0);
  const auto wf = L[kB1].w.rightCols(f0);
  const Eigen::Index N = k.x.cols();
  Mat<T> df0 = Mat<T>::Zero(f0, N);
  std::vector<char> touched(static_cast<std::size_t>(N), 0);

  for (std::size_t r = 0; r < 3; ++r) {
    const auto& rc = k.res[r];
    const auto C = static_cast<Eigen::Index>(rc.clouds.size());
    if (C == 0) continue;
    Mat<T> dg0(f0, C), dg1(g1, C);
    for (Eigen::Index c = 0; c < C; ++c) {
      const auto slot = static_cast<Eigen::Index>(k.members[rc.clouds[c]]);
      dg0.col(c) = dfeat.block(static_cast<Eigen::Index>(r) * F, slot, f0, 1);
      dg1.col(c) = dfeat.block(static_cast<Eigen::Index>(r) * F + f0, slot, g1, 1);
    }
    // Max-pool sends each channel's gradient to its argmax column only.
    const Mat<T> dmax = dg1.cwiseProduct(positive_mask(rc.pre_max));
    std::vector<Eigen::Index> slot_of(rc.cols.size(), -1);
    Cols hit;
    for (Eigen::Index c = 0; c < C; ++c) {
      for (Eigen::Index j = 0; j < g1; ++j) {
        if (dmax(j, c) == T(0)) continue;
        auto& t = slot_of[static_cast<std::size_t>(rc.arg1(j, c))];
        if (t < 0) {
          t = static_cast<Eigen::Index>(hit.size());
          hit.push_back(rc.arg1(j, c));
        }
      }
    }
    const auto H = static_cast<Eigen::Index>(hit.size());
    Mat<T> dz2 = Mat<T>::Zero(g1, H);
    for (Eigen::Index c = 0; c < C; ++c) {
      for (Eigen::Index j = 0; j < g1; ++j) {
        if (dmax(j, c) != T(0)) dz2(j, slot_of[static_cast<std::size_t>(rc.arg1(j, c))]) += dmax(j, c);
      }
    }
    Mat<T> dS = Mat<T>::Zero(static_cast<Eigen::Index>(s.b1), C);
    if (H > 0) {
      const Mat<T> z1h = rc.z1(Eigen::all, hit);
      G[kB2].w.noalias() += dz2 * z1h.transpose();
      G[kB2].b += dz2.rowwise().sum();
      const Mat<T> dq = (L[kB2].w.transpose() * dz2).cwiseProduct(positive_mask(z1h));
      Cols packed(hit.size());
      for (Eigen::Index t = 0; t < H; ++t) {
        const auto p = static_cast<std::size_t>(hit[static_cast<std::size_t>(t)]);
        packed[static_cast<std::size_t>(t)] = rc.cols[p];
        dS.col(static_cast<Eigen::Index>(rc.owner[p])) += dq.col(t);
      }
      const Mat<T> f0h = k.f0(Eigen::all, packed);
      G[kB1].w.rightCols(f0).noalias() += dq * f0h.transpose();
      G[kB1].b += dq.rowwise().sum();
      const Mat<T> df0h = wf.transpose() * dq;
      for (Eigen::Index t = 0; t < H; ++t) {
        const auto col = packed[static_cast<std::size_t>(t)];
        df0.col(col) += df0h.col(t);
        touched[static_cast<std::size_t>(col)] = 1;
      }
      G[kB1].w.leftCols(f0).noalias() += dS * rc.g0.transpose();
      dg0.noalias() += wg.transpose() * dS;
    }
    for (Eigen::Index c = 0; c < C; ++c) {
      for (Eigen::Index j = 0; j < f0; ++j) {
        if (dg0(j, c) == T(0)) continue;
        const auto col = rc.arg0(j, c);
        df0(j, col) += dg0(j, c);
        touched[static_cast<std::size_t>(col)] = 1;
      }
    }
  }

  // MLP A only on the columns that received gradient.
  Cols u;
  for (Eigen::Index col = 0; col < N; ++col) {
    if (touched[static_cast<std::size_t>(col)]) u.push_back(col);
  }
  if (u.empty()) return;
  const Mat<T> h1u = k.h1(Eigen::all, u);
  const Mat<T> h2u = k.h2(Eigen::all, u);
  const Mat<T> d3 = Mat<T>(df0(Eigen::all, u)).cwiseProduct(positive_mask(Mat<T>(k.f0(Eigen::all, u))));
  G[kA3].w.noalias() += d3 * h2u.transpose();
  G[kA3].b += d3.rowwise().sum();
  const Mat<T> d2 = (L[kA3].w.transpose() * d3).cwiseProduct(positive_mask(h2u));
  G[kA2].w.noalias() += d2 * h1u.transpose();
  G[kA2].b += d2.rowwise().sum();
  const Mat<T> d1 = (L[kA2].w.transpose() * d2).cwiseProduct(positive_mask(h1u));
  G[kA1].w.noalias() += d1 * Mat<T>(k.x(Eigen::all, u)).transpose();
  G[kA1].b += d1.rowwise().sum();
}

}  // namespace

std::array<std::pair<std::size_t, std::size_t>, 8> ScorerShape::layer_dims() const {
  return {{{3, a1}, {a1, a2}, {a2, f0}, {2 * f0, b1}, {b1, g1}, {3 * feature(), code}, {code, head}, {head, 1}}};
}

template <typename T>
Params<T> Params<T>::zeros(const ScorerShape& shape) {
  Params p;
  p.shape = shape;
  const auto dims = shape.layer_dims();
  for (std::size_t i = 0; i < kLayerCount; ++i) {
    const auto in = static_cast<Eigen::Index>(dims[i].first);
    const auto out = static_cast<Eigen::Index>(dims[i].second);
    p.layers[i].w.setZero(out, in);
    p.layers[i].b.setZero(out);
  }
  return p;
}

template <typename T>
std::size_t Params<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.w.size() + l.b.size());
  return n;
}

template <typename T>
bool Params<T>::is_finite() const {
  return std::all_of(layers.begin(), layers.end(),
                     [](const Layer<T>& l) { return l.w.allFinite() && l.b.allFinite(); });
}

template <typename T>
std::vector<std::span<T>> Params<T>::blocks() {
  std::vector<std::span<T>> out;
  for (auto& l : layers) {
    out.emplace_back(l.w.data(), static_cast<std::size_t>(l.w.size()));
    out.emplace_back(l.b.data(), static_cast<std::size_t>(l.b.size()));
  }
  return out;
}

template <typename T>
std::vector<std::span<const T>> Params<T>::blocks() const {
  std::vector<std::span<const T>> out;
  for (const auto& l : layers) {
    out.emplace_back(l.w.data(), static_cast<std::size_t>(l.w.size()));
    out.emplace_back(l.b.data(), static_cast<std::size_t>(l.b.size()));
  }
  return out;
}

ScorerWeights init_weights(const ScorerShape& shape, std::uint64_t seed) {
  auto p = ScorerWeights::zeros(shape);
  const auto dims = shape.layer_dims();
  for (std::size_t i = 0; i < kLayerCount; ++i) {
    const double bound = std::sqrt(6.0 / static_cast<double>(dims[i].first + dims[i].second));
    Rng rng(derive_seed(seed, i));
    auto& wm = p.layers[i].w;
    for (Eigen::Index r = 0; r < wm.rows(); ++r) {
      for (Eigen::Index c = 0; c < wm.cols(); ++c) wm(r, c) = static_cast<float>(rng.uniform(-bound, bound));
    }
  }
  return p;
}

template <typename T>
PreparedCloud<T> prepare(const PointCloud& cloud, const ScorerShape& shape) {
  if (cloud.empty()) throw Error("empty operand");
  const auto normalized = normalize_or_identity(cloud).first;
  const std::size_t n = cloud.size();

  // The FPS start is picked from the raw coordinates so it does not move when
  // the input is permuted.
  const std::uint64_t salt = content_hash(cloud);
  std::size_t start = 0;
  std::uint64_t best = std::numeric_limits<std::uint64_t>::max();
  for (std::size_t i = 0; i < n; ++i) {
    const auto h = point_hash(cloud[i]) ^ salt;
    if (h < best) {
      best = h;
      start = i;
    }
  }

  PreparedCloud<T> out;
  out.points.resize(3, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) out.points.col(static_cast<Eigen::Index>(i)) = normalized[i].cast<T>();
  out.sets[0].resize(n);
  for (std::size_t i = 0; i < n; ++i) out.sets[0][i] = static_cast<std::uint32_t>(i);
  for (std::size_t r = 1; r < 3; ++r) {
    const auto picked = farthest_point_indices(normalized, shape.fps[r - 1], start);
    // Cyclic repeats add nothing under max-pooling.
    std::vector<char> seen(n, 0);
    auto& set = out.sets[r];
    for (auto i : picked) {
      if (seen[i]) break;
      seen[i] = 1;
      set.push_back(i);
    }
    std::sort(set.begin(), set.end());
  }
  for (std::size_t r = 1; r < 3; ++r) {
    for (std::size_t q = 0; q < r; ++q) {
      if (out.alias[q] == q && out.sets[q] == out.sets[r]) {
        out.alias[r] = q;
        break;
      }
    }
  }
  return out;
}

template <typename T>
std::vector<double> forward(const Params<T>& weights, std::span<const PreparedCloud<T>* const> batch) {
  if (batch.empty()) return {};
  Cache<T> cache;
  forward_impl(weights, batch, cache, false);
  std::vector<double> scores(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) scores[i] = squash(cache.logit[i]);
  return scores;
}

double score(const ScorerWeights& weights, const PointCloud& cloud) {
  const auto prepared = prepare<float>(cloud, weights.shape);
  const PreparedCloud<float>* one[] = {&prepared};
  return forward<float>(weights, one).front();
}

double huber(double score, double target, double delta) {
  if (!(delta > 0.0)) throw Error("huber delta must be positive");
  const double r = std::abs(score - target);
  return r <= delta ? 0.5 * r * r : delta * (r - 0.5 * delta);
}

double huber_grad(double score, double target, double delta) {
  if (!(delta > 0.0)) throw Error("huber delta must be positive");
  return std::clamp(score - target, -delta, delta);
}

template <typename T>
double loss_and_gradient(const Params<T>& weights, std::span<const PreparedCloud<T>* const> batch,
                         std::span<const double> targets, double delta, Params<T>* grad) {
  if (batch.empty()) throw Error("empty operand");
  if (targets.size() != batch.size()) throw Error("one target per cloud required");
  Cache<T> cache;
  forward_impl(weights, batch, cache, grad != nullptr);
  const auto B = static_cast<double>(batch.size());
  double loss = 0.0;
  Mat<T> d_logit(1, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double z = cache.logit[i];
    const double sc = squash(z);
    loss += huber(sc, targets[i], delta);
    const double inside = std::abs(z) < kLogitClamp ? 1.0 : 0.0;
    d_logit(0, static_cast<Eigen::Index>(i)) = static_cast<T>(huber_grad(sc, targets[i], delta) * sc * (1.0 - sc) * inside / B);
  }
  if (grad) {
    *grad = Params<T>::zeros(weights.shape);
    backward_impl(weights, batch, cache, d_logit, *grad);
  }
  return loss / B;
}

template struct Params<float>;
template struct Params<double>;
template PreparedCloud<float> prepare<float>(const PointCloud&, const ScorerShape&);
template PreparedCloud<double> prepare<double>(const PointCloud&, const ScorerShape&);
template std::vector<double> forward<float>(const Params<float>&, std::span<const PreparedCloud<float>* const>);
template std::vector<double> forward<double>(const Params<double>&, std::span<const PreparedCloud<double>* const>);
template double loss_and_gradient<float>(const Params<float>&, std::span<const PreparedCloud<float>* const>,
                                         std::span<const double>, double, Params<float>*);
template double loss_and_gradient<double>(const Params<double>&, std::span<const PreparedCloud<double>* const>,
                                          std::span<const double>, double, Params<double>*);

}  // namespace pcq
