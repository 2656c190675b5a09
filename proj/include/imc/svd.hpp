#pragma once

// Rank-r truncated SVD of a sparse d1 x d2 matrix given as scaled observed
// entries. Small grids (d1 d2 <= 1e6) are densified and solved through the
// Gram eigenproblem; larger ones use seeded block subspace iteration with a
// Rayleigh-Ritz step.

#include "imc/random.hpp"
#include "imc/types.hpp"

#include <string_view>

namespace imc {

enum class SvdMethod { automatic, dense, subspace };

inline std::string_view to_string(SvdMethod m) {
  switch (m) {
    case SvdMethod::dense: return "dense";
    case SvdMethod::subspace: return "subspace";
    default: return "auto";
  }
}

inline SvdMethod parse_svd_method(std::string_view s) {
  if (s == "auto") return SvdMethod::automatic;
  if (s == "dense") return SvdMethod::dense;
  if (s == "subspace") return SvdMethod::subspace;
  fail(ErrorKind::invalid_argument, "unknown svd method '" + std::string(s) + "' (auto|dense|subspace)");
}

inline constexpr double kDenseSvdCellLimit = 1e6;

struct TruncatedSvd {
  Matrix left;   // d1 x r
  Vector sigma;  // r, descending
  Matrix right;  // d2 x r
};

namespace detail {

/// (scale * S) * m, S the sparse observation matrix
inline Matrix sparse_times(const ObservationSet& obs, double scale, const Matrix& m) {
  Matrix out = Matrix::Zero(obs.d1(), m.cols());
  for (const Entry& e : obs.entries()) out.row(e.row) += (scale * e.value) * m.row(e.col);
  return out;
}

/// (scale * S)^T * m
inline Matrix sparse_transpose_times(const ObservationSet& obs, double scale, const Matrix& m) {
  Matrix out = Matrix::Zero(obs.d2(), m.cols());
  for (const Entry& e : obs.entries()) out.row(e.col) += (scale * e.value) * m.row(e.row);
  return out;
}

inline Matrix thin_q(const Matrix& m) {
  Eigen::HouseholderQR<Matrix> qr(m);
  return qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
}

inline void check_rank(const Vector& sigma, Index r) {
  Index achieved = 0;
  if (sigma.size() > 0 && sigma(0) > 0.0)
    for (Index k = 0; k < sigma.size(); ++k)
      if (sigma(k) > tol::rank_ratio * sigma(0)) ++achieved;
  if (achieved < r)
    fail(ErrorKind::solver, "observed matrix has numerical rank " + std::to_string(achieved) +
                                ", below requested rank " + std::to_string(r));
}

/// Top-r triplets of a dense matrix: eigenvectors of the Gram matrix on the
/// smaller side, then an exact SVD of the d x r projection A V.
inline TruncatedSvd dense_top_triplets(const Matrix& a, Index r) {
  const bool wide = a.rows() < a.cols();
  const Matrix gram = wide ? Matrix(a * a.transpose()) : Matrix(a.transpose() * a);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const Index k = gram.rows();
  Matrix basis(k, r);
  for (Index j = 0; j < r; ++j) basis.col(j) = eig.eigenvectors().col(k - 1 - j);
  const Matrix projected = wide ? Matrix(a.transpose() * basis) : Matrix(a * basis);
  Eigen::JacobiSVD<Matrix> small(projected, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Matrix rotated = basis * small.matrixV();
  if (wide) return {rotated, small.singularValues(), small.matrixU()};
  return {small.matrixU(), small.singularValues(), rotated};
}

inline TruncatedSvd dense_truncated_svd(const ObservationSet& obs, double scale, Index r) {
  Matrix a = Matrix::Zero(obs.d1(), obs.d2());
  for (const Entry& e : obs.entries()) a(e.row, e.col) = scale * e.value;
  TruncatedSvd out = dense_top_triplets(a, r);
  check_rank(out.sigma, r);
  return out;
}

/// Stops once the top-r triplets satisfy ||A v_k - sigma_k u_k|| <= tolerance
/// sigma_1 for the whole block.
inline TruncatedSvd subspace_truncated_svd(const ObservationSet& obs, double scale, Index r, std::uint64_t seed,
                                           int max_iters, double tolerance) {
  const Index width = std::min<Index>(r + 10, std::min(obs.d1(), obs.d2()));
  Rng rng(seed, Stream::svd);
  Matrix q = thin_q(sparse_times(obs, scale, rng.gaussian(obs.d2(), width)));
  TruncatedSvd out;
  Vector sigma;
  for (int it = 0; it < max_iters; ++it) {
    const Matrix at_q = sparse_transpose_times(obs, scale, q);  // (Q^T A)^T
    Eigen::JacobiSVD<Matrix> small(at_q.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
    sigma = small.singularValues();
    out = {q * small.matrixU().leftCols(r), sigma.head(r), small.matrixV().leftCols(r)};
    const double top = std::max(sigma(0), std::numeric_limits<double>::min());
    const double residual = (sparse_times(obs, scale, out.right) - out.left * out.sigma.asDiagonal()).norm();
    if (residual <= tolerance * top) break;
    q = thin_q(sparse_times(obs, scale, thin_q(at_q)));
  }
  check_rank(sigma, r);
  return out;
}

}  // namespace detail

inline TruncatedSvd truncated_svd(const ObservationSet& obs, double scale, Index r,
                                  SvdMethod method = SvdMethod::automatic, std::uint64_t seed = 0,
                                  int max_iters = 300, double tolerance = 1e-12) {
  require(r >= 1 && r <= std::min(obs.d1(), obs.d2()), "truncated SVD rank out of range");
  require(!obs.empty(), "truncated SVD of an empty observation set");
  if (method == SvdMethod::automatic)
    method = static_cast<double>(obs.d1()) * static_cast<double>(obs.d2()) <= kDenseSvdCellLimit
                 ? SvdMethod::dense
                 : SvdMethod::subspace;
  return method == SvdMethod::dense ? detail::dense_truncated_svd(obs, scale, r)
                                    : detail::subspace_truncated_svd(obs, scale, r, seed, max_iters, tolerance);
}

}  // namespace imc
