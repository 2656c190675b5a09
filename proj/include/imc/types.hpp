#pragma once

// Domain vocabulary shared by every imc module: dense matrix aliases, the
// error type, and the value types describing an inductive matrix completion
// instance (features, ground truth, observations, factor iterates).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace imc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

enum class ErrorKind { invalid_argument, data_format, solver, io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::invalid_argument, what);
}

/// Default numerical tolerances. Every function that uses one takes it as a
/// defaulted parameter so callers can override.
namespace tol {
inline constexpr double orthonormal = 1e-10;
inline constexpr double balance = 1e-8;
inline constexpr double rank_ratio = 1e-12;
inline constexpr double feasibility = 1e-12;
}  // namespace tol

inline double max_abs_deviation_from_identity(const Matrix& gram) {
  return (gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

/// Side-information matrices X_L (d1 x n1) and X_R (d2 x n2) with orthonormal
/// columns.
class FeaturePair {
 public:
  FeaturePair(Matrix x_left, Matrix x_right, double tolerance = tol::orthonormal)
      : x_left_(std::move(x_left)), x_right_(std::move(x_right)) {
    require(x_left_.cols() >= 1 && x_left_.rows() >= x_left_.cols(),
            "left features must satisfy d1 >= n1 >= 1");
    require(x_right_.cols() >= 1 && x_right_.rows() >= x_right_.cols(),
            "right features must satisfy d2 >= n2 >= 1");
    const double dev_l = max_abs_deviation_from_identity(x_left_.transpose() * x_left_);
    const double dev_r = max_abs_deviation_from_identity(x_right_.transpose() * x_right_);
    require(dev_l <= tolerance,
            "left features are not orthonormal (max |X^T X - I| = " + std::to_string(dev_l) + ")");
    require(dev_r <= tolerance,
            "right features are not orthonormal (max |X^T X - I| = " + std::to_string(dev_r) + ")");
  }

  const Matrix& x_left() const noexcept { return x_left_; }
  const Matrix& x_right() const noexcept { return x_right_; }
  Index d1() const noexcept { return x_left_.rows(); }
  Index n1() const noexcept { return x_left_.cols(); }
  Index d2() const noexcept { return x_right_.rows(); }
  Index n2() const noexcept { return x_right_.cols(); }

  /// X_L M X_R^T, materialized densely.
  Matrix lift(const Matrix& core) const { return x_left_ * core * x_right_.transpose(); }

 private:
  Matrix x_left_;
  Matrix x_right_;
};

/// Iterate Z = [U; V].
struct FactorPair {
  Matrix u;  // n1 x r
  Matrix v;  // n2 x r

  Index rank() const noexcept { return u.cols(); }
  Matrix product() const { return u * v.transpose(); }

  Matrix stacked() const {
    Matrix z(u.rows() + v.rows(), u.cols());
    z << u, v;
    return z;
  }

  FactorPair operator*(const Matrix& rotation) const { return {u * rotation, v * rotation}; }
};

/// Rank-r target M* = U* V*^T with balanced factors U* = Ubar Sigma^{1/2},
/// V* = Vbar Sigma^{1/2}.
class GroundTruth {
 public:
  /// Wraps already-balanced factors; validates U^T U = V^T V = diag(sigma).
  GroundTruth(Matrix u_star, Matrix v_star, double tolerance = tol::balance)
      : u_star_(std::move(u_star)), v_star_(std::move(v_star)) {
    require(u_star_.cols() == v_star_.cols() && u_star_.cols() >= 1,
            "ground truth factors must share a positive rank");
    const Matrix gram_u = u_star_.transpose() * u_star_;
    const Matrix gram_v = v_star_.transpose() * v_star_;
    singular_values_ = gram_u.diagonal();
    const double scale = std::max(1.0, singular_values_.maxCoeff());
    const Matrix sigma = singular_values_.asDiagonal();
    require((gram_u - sigma).cwiseAbs().maxCoeff() <= tolerance * scale &&
                (gram_v - sigma).cwiseAbs().maxCoeff() <= tolerance * scale,
            "ground truth factors are not balanced (U^T U = V^T V = diag(sigma) violated)");
    for (Index k = 0; k < singular_values_.size(); ++k) {
      require(singular_values_(k) > 0.0, "ground truth singular values must be positive");
      if (k > 0)
        require(singular_values_(k) <= singular_values_(k - 1) * (1.0 + tolerance),
                "ground truth singular values must be non-increasing");
    }
    m_star_ = u_star_ * v_star_.transpose();
  }

  /// Balanced factorization of the leading rank-r part of `m`.
  static GroundTruth from_matrix(const Matrix& m, Index rank) {
    require(rank >= 1 && rank <= std::min(m.rows(), m.cols()), "rank out of range for matrix");
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector s = svd.singularValues().head(rank);
    if (!(s(rank - 1) > tol::rank_ratio * s(0)))
      fail(ErrorKind::invalid_argument, "matrix has numerical rank below " + std::to_string(rank));
    const Vector root = s.cwiseSqrt();
    return GroundTruth(svd.matrixU().leftCols(rank) * root.asDiagonal(),
                       svd.matrixV().leftCols(rank) * root.asDiagonal());
  }

  const Matrix& m_star() const noexcept { return m_star_; }
  const Matrix& u_star() const noexcept { return u_star_; }
  const Matrix& v_star() const noexcept { return v_star_; }
  const Vector& singular_values() const noexcept { return singular_values_; }
  Index rank() const noexcept { return u_star_.cols(); }
  double condition_number() const { return singular_values_(0) / singular_values_(rank() - 1); }

  FactorPair factors() const { return {u_star_, v_star_}; }
  Matrix u_bar() const { return u_star_ * singular_values_.cwiseSqrt().cwiseInverse().asDiagonal(); }
  Matrix v_bar() const { return v_star_ * singular_values_.cwiseSqrt().cwiseInverse().asDiagonal(); }

 private:
  Matrix u_star_;
  Matrix v_star_;
  Matrix m_star_;
  Vector singular_values_;
};

struct Entry {
  std::int32_t row;
  std::int32_t col;
  double value;

  friend bool operator==(const Entry&, const Entry&) = default;
};

/// Observed entries of L on the index set Omega, kept sorted row-major.
/// The sampling rate p is always the realized |Omega| / (d1 d2).
class ObservationSet {
 public:
  ObservationSet(Index d1, Index d2, std::vector<Entry> entries)
      : d1_(d1), d2_(d2), entries_(std::move(entries)) {
    require(d1 >= 1 && d2 >= 1, "observation grid must be non-empty");
    std::sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    for (std::size_t k = 0; k < entries_.size(); ++k) {
      const Entry& e = entries_[k];
      require(e.row >= 0 && e.row < d1_ && e.col >= 0 && e.col < d2_,
              "observation (" + std::to_string(e.row) + ", " + std::to_string(e.col) +
                  ") outside " + std::to_string(d1_) + "x" + std::to_string(d2_) + " grid");
      if (k > 0 && entries_[k - 1].row == e.row && entries_[k - 1].col == e.col)
        fail(ErrorKind::invalid_argument, "duplicate observation (" + std::to_string(e.row) + ", " +
                                              std::to_string(e.col) + ")");
    }
  }

  Index d1() const noexcept { return d1_; }
  Index d2() const noexcept { return d2_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::span<const Entry> entries() const noexcept { return entries_; }
  double p() const noexcept {
    return static_cast<double>(entries_.size()) / (static_cast<double>(d1_) * static_cast<double>(d2_));
  }

  friend bool operator==(const ObservationSet&, const ObservationSet&) = default;

 private:
  Index d1_;
  Index d2_;
  std::vector<Entry> entries_;
};

/// Omega_0 for initialization plus S fresh subsets for the resampling phase.
struct SampleSplit {
  ObservationSet omega0;
  std::vector<ObservationSet> subsets;
};

struct CoherenceStats {
  double mu0;
  double mu1;
};

}  // namespace imc
