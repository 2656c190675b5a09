#pragma once

// Regularized sample loss
//   f(U, V) = 1/(2p) ||P_Omega(X_L U V^T X_R^T - L)||_F^2 + 1/8 ||U^T U - V^T V||_F^2
// its gradient, and the variant with an extra lambda ||P_{Omega^c}(X_L U V^T X_R^T)||_F^2
// penalty. Everything is evaluated through the lifts X_L U, X_R V and a
// residual list over Omega, never through a dense d1 x d2 matrix.

#include "imc/types.hpp"

namespace imc {

struct ResidualCache {
  RowMatrix left_lift;           // X_L U, d1 x r
  RowMatrix right_lift;          // X_R V, d2 x r
  std::vector<double> residual;  // <left_lift_i, right_lift_j> - L_ij, aligned with obs.entries()
};

namespace detail {

inline void check_shapes(const FactorPair& z, const FeaturePair& features, const ObservationSet& obs) {
  require(z.u.rows() == features.n1() && z.v.rows() == features.n2() && z.u.cols() == z.v.cols(),
          "factor shapes do not match features");
  require(obs.d1() == features.d1() && obs.d2() == features.d2(),
          "observation grid does not match features");
}

inline void require_observations(const ObservationSet& obs) {
  if (obs.empty()) fail(ErrorKind::invalid_argument, "empty observation set (p = 0)");
}

inline void require_lambda(double lambda) {
  require(lambda >= 0.0, "sparsity weight lambda must be non-negative");
}

/// S * right and S^T * left for the sparse matrix S with values `weights` on Omega.
inline std::pair<RowMatrix, RowMatrix> sparse_products(const ObservationSet& obs,
                                                       const std::vector<double>& weights,
                                                       const RowMatrix& left, const RowMatrix& right) {
  RowMatrix s_right = RowMatrix::Zero(obs.d1(), right.cols());
  RowMatrix st_left = RowMatrix::Zero(obs.d2(), left.cols());
  const auto entries = obs.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const Entry& e = entries[k];
    s_right.row(e.row).noalias() += weights[k] * right.row(e.col);
    st_left.row(e.col).noalias() += weights[k] * left.row(e.row);
  }
  return {std::move(s_right), std::move(st_left)};
}

inline double balance_penalty(const FactorPair& z) {
  return (z.u.transpose() * z.u - z.v.transpose() * z.v).squaredNorm() / 8.0;
}

}  // namespace detail

inline ResidualCache build_cache(const FactorPair& z, const FeaturePair& features, const ObservationSet& obs) {
  detail::check_shapes(z, features, obs);
  ResidualCache cache{features.x_left() * z.u, features.x_right() * z.v, {}};
  const auto entries = obs.entries();
  cache.residual.resize(entries.size());
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const Entry& e = entries[k];
    cache.residual[k] = cache.left_lift.row(e.row).dot(cache.right_lift.row(e.col)) - e.value;
  }
  return cache;
}

/// Loss from a cache built for the same (z, obs).
inline double loss(const ResidualCache& cache, const FactorPair& z, const ObservationSet& obs) {
  detail::require_observations(obs);
  double sum = 0.0;
  for (const double r : cache.residual) sum += r * r;
  return sum / (2.0 * obs.p()) + detail::balance_penalty(z);
}

inline double loss(const FactorPair& z, const FeaturePair& features, const ObservationSet& obs) {
  detail::require_observations(obs);
  return loss(build_cache(z, features, obs), z, obs);
}

/// Gradient blocks from a cache built for the same (z, obs):
///   G_U = (1/p) X_L^T S X_R V + 1/2 U (U^T U - V^T V)
///   G_V = (1/p) X_R^T S^T X_L U + 1/2 V (V^T V - U^T U)
/// with S = P_Omega(X_L U V^T X_R^T - L). Stacked, this is the lifted gradient
/// (1/p) X^T P(Sym(.)) X Z + 1/2 (P_diag - P_off)(Z Z^T) Z.
inline FactorPair gradient(const ResidualCache& cache, const FactorPair& z, const FeaturePair& features,
                           const ObservationSet& obs) {
  detail::require_observations(obs);
  const auto [s_right, st_left] =
      detail::sparse_products(obs, cache.residual, cache.left_lift, cache.right_lift);
  const double inv_p = 1.0 / obs.p();
  const Matrix imbalance = z.u.transpose() * z.u - z.v.transpose() * z.v;
  FactorPair g{inv_p * (features.x_left().transpose() * s_right), inv_p * (features.x_right().transpose() * st_left)};
  g.u.noalias() += 0.5 * z.u * imbalance;
  g.v.noalias() -= 0.5 * z.v * imbalance;
  return g;
}

inline FactorPair gradient(const FactorPair& z, const FeaturePair& features, const ObservationSet& obs) {
  detail::require_observations(obs);
  return gradient(build_cache(z, features, obs), z, features, obs);
}

/// lambda ||P_{Omega^c}(A)||_F^2 with A = X_L U V^T X_R^T, via
/// ||P_{Omega^c}(A)||^2 = ||U V^T||_F^2 - ||P_Omega(A)||^2.
inline double complement_penalty(const ResidualCache& cache, const FactorPair& z, const ObservationSet& obs,
                                 double lambda) {
  detail::require_lambda(lambda);
  if (lambda == 0.0) return 0.0;
  const double full = ((z.u.transpose() * z.u).cwiseProduct(z.v.transpose() * z.v)).sum();
  double observed = 0.0;
  const auto entries = obs.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const double a = cache.residual[k] + entries[k].value;
    observed += a * a;
  }
  return lambda * std::max(0.0, full - observed);
}

inline double loss_sparse_reg(const FactorPair& z, const FeaturePair& features, const ObservationSet& obs,
                              double lambda) {
  detail::require_lambda(lambda);
  detail::require_observations(obs);
  const ResidualCache cache = build_cache(z, features, obs);
  return loss(cache, z, obs) + complement_penalty(cache, z, obs, lambda);
}

/// Adds 2 lambda (U V^T V - X_L^T P_Omega(A) X_R V) to G_U and the mirror term
/// to G_V.
inline FactorPair gradient_sparse_reg(const ResidualCache& cache, const FactorPair& z,
                                      const FeaturePair& features, const ObservationSet& obs, double lambda) {
  detail::require_lambda(lambda);
  FactorPair g = gradient(cache, z, features, obs);
  if (lambda == 0.0) return g;
  const auto entries = obs.entries();
  std::vector<double> lifted(entries.size());
  for (std::size_t k = 0; k < entries.size(); ++k) lifted[k] = cache.residual[k] + entries[k].value;
  const auto [s_right, st_left] = detail::sparse_products(obs, lifted, cache.left_lift, cache.right_lift);
  g.u.noalias() += 2.0 * lambda * (z.u * (z.v.transpose() * z.v) - features.x_left().transpose() * s_right);
  g.v.noalias() += 2.0 * lambda * (z.v * (z.u.transpose() * z.u) - features.x_right().transpose() * st_left);
  return g;
}

inline FactorPair gradient_sparse_reg(const FactorPair& z, const FeaturePair& features, const ObservationSet& obs,
                                      double lambda) {
  detail::require_lambda(lambda);
  detail::require_observations(obs);
  return gradient_sparse_reg(build_cache(z, features, obs), z, features, obs, lambda);
}

/// Loss and gradient of the (optionally sparsity-regularized) objective at z,
/// sharing one residual pass.
struct Evaluation {
  double loss;
  FactorPair grad;
};

inline Evaluation evaluate(const ResidualCache& cache, const FactorPair& z, const FeaturePair& features,
                           const ObservationSet& obs, double lambda) {
  return {loss(cache, z, obs) + complement_penalty(cache, z, obs, lambda),
          gradient_sparse_reg(cache, z, features, obs, lambda)};
}

}  // namespace imc
