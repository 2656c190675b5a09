#pragma once

// Dense reference computations used by the unit tests and the acceptance
// runner. Everything here is written against the textbook definitions, with
// no sparse caching, lifting tricks or shared helpers from the library.

#include "imc/core.hpp"
#include "imc/datagen.hpp"
#include "imc/types.hpp"

#include <functional>
#include <random>

namespace oracle {

using imc::FactorPair;
using imc::FeaturePair;
using imc::Index;
using imc::Matrix;
using imc::ObservationSet;
using imc::Vector;

inline Matrix mask(const ObservationSet& obs) {
  Matrix m = Matrix::Zero(obs.d1(), obs.d2());
  for (const auto& e : obs.entries()) m(e.row, e.col) = 1.0;
  return m;
}

inline Matrix observed_values(const ObservationSet& obs) {
  Matrix m = Matrix::Zero(obs.d1(), obs.d2());
  for (const auto& e : obs.entries()) m(e.row, e.col) = e.value;
  return m;
}

inline Matrix dense_residual(const FactorPair& z, const FeaturePair& f, const ObservationSet& obs) {
  const Matrix lifted = f.x_left() * z.u * z.v.transpose() * f.x_right().transpose();
  return (lifted - observed_values(obs)).cwiseProduct(mask(obs));
}

/// f = 1/(2p) ||P_Omega(X_L U V^T X_R^T - L)||^2 + 1/8 ||U^T U - V^T V||^2
///     + lambda ||P_Omega^c(X_L U V^T X_R^T)||^2
inline double loss(const FactorPair& z, const FeaturePair& f, const ObservationSet& obs, double lambda = 0.0) {
  const double p = static_cast<double>(obs.size()) / static_cast<double>(obs.d1() * obs.d2());
  const Matrix lifted = f.x_left() * z.u * z.v.transpose() * f.x_right().transpose();
  const Matrix m = mask(obs);
  const Matrix complement = Matrix::Ones(obs.d1(), obs.d2()) - m;
  const double data = ((lifted - observed_values(obs)).cwiseProduct(m)).squaredNorm() / (2.0 * p);
  const double reg = (z.u.transpose() * z.u - z.v.transpose() * z.v).squaredNorm() / 8.0;
  return data + reg + lambda * lifted.cwiseProduct(complement).squaredNorm();
}

/// Lifted gradient on Z = [U; V]:
///   (1/p) [X_L^T S X_R V; X_R^T S^T X_L U] + 1/2 (Pdiag - Poff)(Z Z^T) Z
/// with S = P_Omega(X_L U V^T X_R^T - L), built from the full (n1+n2) square
/// block matrix.
inline Matrix lifted_gradient(const FactorPair& z, const FeaturePair& f, const ObservationSet& obs) {
  const double p = static_cast<double>(obs.size()) / static_cast<double>(obs.d1() * obs.d2());
  const Matrix s = dense_residual(z, f, obs);
  const Index n1 = z.u.rows();
  const Index n2 = z.v.rows();
  Matrix stacked(n1 + n2, z.u.cols());
  stacked << z.u, z.v;
  Matrix zz = stacked * stacked.transpose();
  zz.topRightCorner(n1, n2) *= -1.0;
  zz.bottomLeftCorner(n2, n1) *= -1.0;
  Matrix data(n1 + n2, z.u.cols());
  data << f.x_left().transpose() * s * f.x_right() * z.v, f.x_right().transpose() * s.transpose() * f.x_left() * z.u;
  return data / p + 0.5 * zz * stacked;
}

/// Central difference of `fn` along `direction` at `z`.
inline double directional_fd(const std::function<double(const FactorPair&)>& fn, const FactorPair& z,
                             const FactorPair& direction, double h = 1e-6) {
  const FactorPair plus{z.u + h * direction.u, z.v + h * direction.v};
  const FactorPair minus{z.u - h * direction.u, z.v - h * direction.v};
  return (fn(plus) - fn(minus)) / (2.0 * h);
}

/// min over R in {+1, -1} of ||Z - Z* R||_F for rank one.
inline double sign_enumeration_distance(const FactorPair& z, const FactorPair& z_star) {
  double best = std::numeric_limits<double>::infinity();
  for (const double sign : {1.0, -1.0}) {
    const double d = std::sqrt((z.u - sign * z_star.u).squaredNorm() + (z.v - sign * z_star.v).squaredNorm());
    best = std::min(best, d);
  }
  return best;
}

inline double sign_enumeration_rotation(const FactorPair& z, const FactorPair& z_star) {
  const double plus = (z.u - z_star.u).squaredNorm() + (z.v - z_star.v).squaredNorm();
  const double minus = (z.u + z_star.u).squaredNorm() + (z.v + z_star.v).squaredNorm();
  return plus <= minus ? 1.0 : -1.0;
}

/// Cyclic Dykstra over the d single-row constraints {U : ||x_i^T U|| <= b}
/// in U-space, each projected in closed form.
inline Matrix row_dykstra(const Matrix& u_hat, const Matrix& x, double b, int sweeps) {
  const Index d = x.rows();
  Matrix u = u_hat;
  std::vector<Matrix> increments(static_cast<std::size_t>(d), Matrix::Zero(u.rows(), u.cols()));
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (Index i = 0; i < d; ++i) {
      const Matrix y = u + increments[static_cast<std::size_t>(i)];
      const Vector xi = x.row(i).transpose();
      Matrix proj = y;
      const Vector v = y.transpose() * xi;
      const double norm = v.norm();
      if (norm > b) proj = y + xi * (((b / norm) - 1.0) / xi.squaredNorm() * v.transpose());
      increments[static_cast<std::size_t>(i)] = y - proj;
      u = proj;
    }
  }
  return u;
}

/// Top-r SVD of p0^{-1} P_Omega0(L) via a full dense decomposition; returns
/// (X_L^T U Sigma^{1/2}, X_R^T V Sigma^{1/2}).
inline FactorPair dense_spectral_init(const ObservationSet& obs, const FeaturePair& f, Index r) {
  const double p = static_cast<double>(obs.size()) / static_cast<double>(obs.d1() * obs.d2());
  Eigen::JacobiSVD<Matrix> svd(observed_values(obs) / p, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector root = svd.singularValues().head(r).cwiseSqrt();
  return {f.x_left().transpose() * svd.matrixU().leftCols(r) * root.asDiagonal(),
          f.x_right().transpose() * svd.matrixV().leftCols(r) * root.asDiagonal()};
}

inline Matrix random_orthogonal(Index r, std::mt19937_64& gen) {
  std::normal_distribution<double> normal;
  Matrix g(r, r);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = normal(gen);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Vector signs = qr.matrixQR().diagonal().cwiseSign();
  return q * signs.asDiagonal();
}

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& gen, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(gen);
  return m;
}

inline Matrix random_orthonormal(Index d, Index n, std::mt19937_64& gen) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(d, n, gen));
  return qr.householderQ() * Matrix::Identity(d, n);
}

/// Each cell kept with probability p (independent of the library sampler).
inline ObservationSet random_observations(const FeaturePair& f, const Matrix& m_star, double p, std::mt19937_64& gen) {
  std::bernoulli_distribution keep(p);
  const Matrix l = f.x_left() * m_star * f.x_right().transpose();
  std::vector<imc::Entry> entries;
  for (Index i = 0; i < l.rows(); ++i)
    for (Index j = 0; j < l.cols(); ++j)
      if (keep(gen)) entries.push_back({static_cast<std::int32_t>(i), static_cast<std::int32_t>(j), l(i, j)});
  if (entries.empty()) entries.push_back({0, 0, l(0, 0)});
  return ObservationSet(l.rows(), l.cols(), std::move(entries));
}

/// Ordinary least squares of y on x; returns (slope, r_squared).
inline std::pair<double, double> linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double slope = sxy / sxx;
  const double r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return {slope, r2};
}

}  // namespace oracle
