#pragma once

// Shared operations on the domain types: feature orthonormalization,
// incoherence diagnostics, the Procrustes distance with its optimal
// rotation, sample splitting and the relative recovery error.

#include "imc/random.hpp"
#include "imc/types.hpp"

#include <numeric>

namespace imc {

/// Thin QR of a full-column-rank d x n matrix. Returns Q with orthonormal
/// columns spanning range(x_raw).
inline Matrix orthonormalize(const Matrix& x_raw, double rank_tolerance = tol::rank_ratio) {
  require(x_raw.cols() >= 1 && x_raw.rows() >= x_raw.cols(), "orthonormalize needs d >= n >= 1");
  Eigen::HouseholderQR<Matrix> qr(x_raw);
  const Matrix r = qr.matrixQR().topRows(x_raw.cols()).triangularView<Eigen::Upper>();
  const Vector s = Eigen::JacobiSVD<Matrix>(r).singularValues();
  const double cutoff = rank_tolerance * s(0);
  const auto deficient = (s.array() <= cutoff).count();
  if (s(0) == 0.0 || deficient > 0)
    fail(ErrorKind::invalid_argument,
         "rank-deficient input: " + std::to_string(s(0) == 0.0 ? x_raw.cols() : deficient) + " of " +
             std::to_string(x_raw.cols()) + " columns are linearly dependent");
  return qr.householderQ() * Matrix::Identity(x_raw.rows(), x_raw.cols());
}

/// max_i ||row_i(m)||_2^2
inline double max_row_norm_squared(const Matrix& m) { return m.rowwise().squaredNorm().maxCoeff(); }

/// Smallest mu0 with ||X_L Ubar*||_{2,inf} <= sqrt(mu0 r / d1) and the same
/// for the right side.
inline double coherence_mu0(const FeaturePair& features, const GroundTruth& truth) {
  require(truth.u_star().rows() == features.n1() && truth.v_star().rows() == features.n2(),
          "ground truth shape does not match features");
  const Vector& s = truth.singular_values();
  if (!(s.minCoeff() > 0.0)) fail(ErrorKind::invalid_argument, "zero singular value in ground truth");
  const double r = static_cast<double>(truth.rank());
  const double left = static_cast<double>(features.d1()) / r *
                      max_row_norm_squared(features.x_left() * truth.u_bar());
  const double right = static_cast<double>(features.d2()) / r *
                       max_row_norm_squared(features.x_right() * truth.v_bar());
  return std::max(left, right);
}

/// Smallest mu1 with ||X_L||_{2,inf} <= sqrt(mu1 n1 / d1) and the same for X_R.
inline double coherence_mu1(const FeaturePair& features) {
  const double left = static_cast<double>(features.d1()) / static_cast<double>(features.n1()) *
                      max_row_norm_squared(features.x_left());
  const double right = static_cast<double>(features.d2()) / static_cast<double>(features.n2()) *
                       max_row_norm_squared(features.x_right());
  return std::max(left, right);
}

inline CoherenceStats coherence(const FeaturePair& features, const GroundTruth& truth) {
  return {coherence_mu0(features, truth), coherence_mu1(features)};
}

inline void require_same_shape(const FactorPair& a, const FactorPair& b) {
  require(a.u.rows() == b.u.rows() && a.v.rows() == b.v.rows() && a.rank() == b.rank() &&
              a.u.cols() == a.v.cols() && b.u.cols() == b.v.cols(),
          "factor pairs have mismatched shapes");
}

/// Orthogonal R minimizing ||Z - Z* R||_F: with Z*^T Z = A S B^T, R = A B^T.
/// A vanishing cross-Gram makes every rotation optimal; identity is returned.
inline Matrix optimal_rotation(const FactorPair& z, const FactorPair& z_star) {
  require_same_shape(z, z_star);
  const Matrix cross = z_star.u.transpose() * z.u + z_star.v.transpose() * z.v;
  if (cross.cwiseAbs().maxCoeff() == 0.0) return Matrix::Identity(z.rank(), z.rank());
  Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

inline double procrustes_distance(const FactorPair& z, const FactorPair& z_star) {
  const Matrix rotation = optimal_rotation(z, z_star);
  const double du = (z.u - z_star.u * rotation).squaredNorm();
  const double dv = (z.v - z_star.v * rotation).squaredNorm();
  return std::sqrt(du + dv);
}

/// Omega_0 takes ceil(|Omega|/2) entries of a seeded uniform permutation; the
/// remaining entries are dealt round-robin into S subsets.
inline SampleSplit split_observations(const ObservationSet& obs, int s_count, std::uint64_t seed) {
  require(s_count >= 1, "split needs at least one subset");
  require(obs.size() >= 2 * static_cast<std::size_t>(s_count),
          "split needs at least 2S = " + std::to_string(2 * s_count) + " observations, got " +
              std::to_string(obs.size()));
  std::vector<std::size_t> order(obs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  const auto entries = obs.entries();
  const std::size_t head = (obs.size() + 1) / 2;
  std::vector<Entry> first;
  first.reserve(head);
  for (std::size_t k = 0; k < head; ++k) first.push_back(entries[order[k]]);

  std::vector<std::vector<Entry>> rest(static_cast<std::size_t>(s_count));
  for (std::size_t k = head; k < order.size(); ++k)
    rest[(k - head) % rest.size()].push_back(entries[order[k]]);

  SampleSplit split{ObservationSet(obs.d1(), obs.d2(), std::move(first)), {}};
  split.subsets.reserve(rest.size());
  for (auto& part : rest) split.subsets.emplace_back(obs.d1(), obs.d2(), std::move(part));
  return split;
}

/// ||U V^T - M*||_F / ||M*||_F. Because X_L and X_R have orthonormal columns
/// this equals ||X_L U V^T X_R^T - L*||_F / ||L*||_F.
inline double relative_error(const FactorPair& z, const GroundTruth& truth) {
  const double denom = truth.m_star().norm();
  if (denom == 0.0) fail(ErrorKind::invalid_argument, "relative error undefined for zero target");
  require(z.u.rows() == truth.m_star().rows() && z.v.rows() == truth.m_star().cols() &&
              z.u.cols() == z.v.cols(),
          "factor shapes do not match ground truth");
  return (z.u * z.v.transpose() - truth.m_star()).norm() / denom;
}

}  // namespace imc
