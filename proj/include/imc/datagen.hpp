#pragma once

// Synthetic instances: Gaussian low-rank cores, features from the singular
// vectors of a Gaussian matrix, and Bernoulli / fixed-count sampling of the
// lifted matrix L* = X_L M* X_R^T.

#include "imc/core.hpp"
#include "imc/random.hpp"
#include "imc/svd.hpp"
#include "imc/types.hpp"

#include <unordered_set>

namespace imc {

struct ProblemSpec {
  Index d1 = 0;
  Index d2 = 0;
  Index n1 = 0;
  Index n2 = 0;
  Index r = 0;
  std::uint64_t seed = 0;

  void validate() const {
    require(r >= 1, "rank must be positive");
    require(d1 >= n1 && n1 >= r, "dimension chain d1 >= n1 >= r violated");
    require(d2 >= n2 && n2 >= r, "dimension chain d2 >= n2 >= r violated");
  }
};

struct Problem {
  FeaturePair features;
  GroundTruth truth;
};

/// Raw Gaussian factors before re-balancing: U entries ~ N(0, 1/n1), V entries
/// ~ N(0, 1/n2).
inline FactorPair draw_raw_factors(const ProblemSpec& spec) {
  spec.validate();
  Rng left(spec.seed, Stream::left_factor);
  Rng right(spec.seed, Stream::right_factor);
  return {left.gaussian(spec.n1, spec.r, 1.0 / std::sqrt(static_cast<double>(spec.n1))),
          right.gaussian(spec.n2, spec.r, 1.0 / std::sqrt(static_cast<double>(spec.n2)))};
}

/// X_L, X_R = leading n1 left / n2 right singular vectors of one d1 x d2
/// standard Gaussian matrix.
inline FeaturePair draw_features(const ProblemSpec& spec) {
  spec.validate();
  Rng rng(spec.seed, Stream::features);
  const Matrix f = rng.gaussian(spec.d1, spec.d2);
  const TruncatedSvd svd = detail::dense_top_triplets(f, std::max(spec.n1, spec.n2));
  return FeaturePair(svd.left.leftCols(spec.n1), svd.right.leftCols(spec.n2));
}

inline Problem generate_problem(const ProblemSpec& spec) {
  const FactorPair raw = draw_raw_factors(spec);
  return {draw_features(spec), GroundTruth::from_matrix(raw.u * raw.v.transpose(), spec.r)};
}

namespace detail {

struct TruthLifts {
  RowMatrix left;   // X_L U*
  RowMatrix right;  // X_R V*

  TruthLifts(const FeaturePair& f, const GroundTruth& t)
      : left(f.x_left() * t.u_star()), right(f.x_right() * t.v_star()) {
    require(t.u_star().rows() == f.n1() && t.v_star().rows() == f.n2(),
            "ground truth shape does not match features");
  }

  double value(Index i, Index j) const { return left.row(i).dot(right.row(j)); }
};

}  // namespace detail

/// Each (i, j) is kept independently with probability p.
inline ObservationSet sample_bernoulli(const FeaturePair& features, const GroundTruth& truth, double p,
                                       std::uint64_t seed) {
  require(p > 0.0 && p <= 1.0, "sampling probability must lie in (0, 1]");
  const detail::TruthLifts lifts(features, truth);
  Rng rng(seed, Stream::sampling);
  std::vector<Entry> entries;
  entries.reserve(static_cast<std::size_t>(p * static_cast<double>(features.d1() * features.d2()) * 1.1) + 16);
  for (Index i = 0; i < features.d1(); ++i)
    for (Index j = 0; j < features.d2(); ++j)
      if (rng.uniform() < p)
        entries.push_back({static_cast<std::int32_t>(i), static_cast<std::int32_t>(j), lifts.value(i, j)});
  return ObservationSet(features.d1(), features.d2(), std::move(entries));
}

/// Uniform m-subset of the d1 x d2 grid without replacement (Floyd's method).
inline ObservationSet sample_fixed_count(const FeaturePair& features, const GroundTruth& truth,
                                         std::int64_t m, std::uint64_t seed) {
  const std::int64_t total = static_cast<std::int64_t>(features.d1() * features.d2());
  require(m >= 1 && m <= total, "observation count " + std::to_string(m) + " outside [1, " +
                                    std::to_string(total) + "]");
  const detail::TruthLifts lifts(features, truth);
  Rng rng(seed, Stream::sampling);
  std::unordered_set<std::int64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(m) * 2);
  std::vector<std::int64_t> picks;
  picks.reserve(static_cast<std::size_t>(m));
  for (std::int64_t j = total - m; j < total; ++j) {
    const auto t = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(j) + 1));
    const std::int64_t pick = chosen.contains(t) ? j : t;
    chosen.insert(pick);
    picks.push_back(pick);
  }
  std::vector<Entry> entries;
  entries.reserve(picks.size());
  const auto d2 = static_cast<std::int64_t>(features.d2());
  for (const std::int64_t flat : picks) {
    const auto i = static_cast<std::int32_t>(flat / d2);
    const auto j = static_cast<std::int32_t>(flat % d2);
    entries.push_back({i, j, lifts.value(i, j)});
  }
  return ObservationSet(features.d1(), features.d2(), std::move(entries));
}

}  // namespace imc
