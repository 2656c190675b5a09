#pragma once

// Euclidean projection onto C = {U : ||X U||_{2,inf} <= b}, the row-norm
// constrained QCQP used by the resampling phase.
//
// The problem is solved in the lifted variable W = X U (d x r). U -> X U is an
// isometry onto range(X), so projecting U onto C is the same as projecting
// W0 = X U_hat onto the intersection of
//   A = {W : every row norm <= b}        (exact: per-row clipping)
//   B = {W : W = X X^T W}                (exact: column-space projection)
// which Dykstra's alternating projections does with closed-form steps.

#include "imc/types.hpp"

namespace imc {

enum class Side { left, right };

inline const char* to_string(Side side) { return side == Side::left ? "left" : "right"; }

struct RowNormConstraint {
  Matrix feature;  // d x n, orthonormal columns
  double bound;    // b
  Side side = Side::left;

  RowNormConstraint(Matrix x, double b, Side s = Side::left) : feature(std::move(x)), bound(b), side(s) {
    require(bound >= 0.0 && std::isfinite(bound), "row-norm bound must be finite and non-negative");
  }
};

/// sqrt(mu0 r / d) * ||[U_init; V_init]||_2.
inline double constraint_bound(const FactorPair& z_init, double mu0, Index r, Index d) {
  require(mu0 > 0.0 && r >= 1 && d >= 1, "constraint bound needs mu0 > 0, r >= 1, d >= 1");
  const Matrix stacked = z_init.stacked();
  const double spectral = stacked.size() == 0 ? 0.0 : Eigen::JacobiSVD<Matrix>(stacked).singularValues()(0);
  return std::sqrt(mu0 * static_cast<double>(r) / static_cast<double>(d)) * spectral;
}

/// max(0, ||X U||_{2,inf} - b)
inline double feasibility_violation(const Matrix& u, const RowNormConstraint& c) {
  require(c.feature.cols() == u.rows(), "constraint feature width does not match U");
  const double worst = std::sqrt((c.feature * u).rowwise().squaredNorm().maxCoeff());
  return std::max(0.0, worst - c.bound);
}

/// Exact projection onto the single constraint {U : ||x^T U||_2 <= b}.
inline Matrix project_single_row(const Matrix& u_hat, const Vector& x_row, double b) {
  require(b >= 0.0, "row-norm bound must be non-negative");
  require(x_row.size() == u_hat.rows(), "constraint row length does not match U");
  const double alpha2 = x_row.squaredNorm();
  if (alpha2 == 0.0) return u_hat;
  const Vector v = u_hat.transpose() * x_row;
  const double norm = v.norm();
  if (norm <= b) return u_hat;
  return u_hat + x_row * (((b / norm - 1.0) / alpha2) * v.transpose());
}

struct ProjectionResult {
  Matrix u;
  double gap_estimate = 0.0;  // Frobenius change over the last sweep
  int sweeps = 0;
};

namespace detail {

inline void clip_rows(Matrix& w, double b) {
  for (Index i = 0; i < w.rows(); ++i) {
    const double norm = w.row(i).norm();
    if (norm > b) w.row(i) *= (norm > 0.0 ? b / norm : 0.0);
  }
}

inline double max_row_norm(const Matrix& w) { return std::sqrt(w.rowwise().squaredNorm().maxCoeff()); }

}  // namespace detail

/// delta-approximate projection of u_hat onto the constraint set. Stops when
/// the candidate is feasible to 1e-12 (1 + b) and a full sweep moves the
/// iterate by at most delta / 2. The candidate after each sweep is the
/// column-space iterate, pulled radially into A when it is still outside
/// (A is star-shaped about 0 and B is a subspace, so the pull stays in both).
inline ProjectionResult project_qcqp(const Matrix& u_hat, const RowNormConstraint& c, double delta,
                                     int max_sweeps = 100000, double feasibility_tol = tol::feasibility) {
  require(delta > 0.0, "projection tolerance delta must be positive");
  require(max_sweeps >= 1, "max_sweeps must be positive");
  require(c.feature.cols() == u_hat.rows(), "constraint feature width does not match U");
  const Matrix& x = c.feature;
  const double b = c.bound;
  const double feasible_slack = feasibility_tol * (1.0 + b);

  Matrix w = x * u_hat;
  if (detail::max_row_norm(w) <= b) return {u_hat, 0.0, 1};

  const auto candidate = [&](const Matrix& lifted) {
    Matrix u = x.transpose() * lifted;
    const double worst = detail::max_row_norm(x * u);
    if (worst > b) u *= (worst > 0.0 ? b / worst : 0.0);
    const double violation = std::max(0.0, detail::max_row_norm(x * u) - b);
    return std::pair<Matrix, double>(std::move(u), violation);
  };

  Matrix inc_a = Matrix::Zero(w.rows(), w.cols());
  Matrix inc_b = Matrix::Zero(w.rows(), w.cols());
  double change = 0.0;
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    Matrix y = w + inc_a;
    detail::clip_rows(y, b);
    inc_a += w - y;
    const Matrix before = y + inc_b;
    Matrix next = x * (x.transpose() * before);
    inc_b = before - next;
    change = (next - w).norm();
    w = std::move(next);

    if (change <= delta / 2.0) {
      auto [u, violation] = candidate(w);
      if (violation <= feasible_slack) return {std::move(u), change, sweep};
    }
  }
  // Sweep budget spent: a feasible candidate is still returned and its gap
  // estimate reports how far from converged it is.
  auto [u, violation] = candidate(w);
  if (violation <= feasible_slack) return {std::move(u), change, max_sweeps};
  fail(ErrorKind::solver, std::string("row-norm projection (") + to_string(c.side) +
                              ") reached no feasible point in " + std::to_string(max_sweeps) +
                              " sweeps; last feasibility violation " + std::to_string(violation));
}

}  // namespace imc
