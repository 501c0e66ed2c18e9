#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "coordinates.hpp"
#include "error.hpp"
#include "tables.hpp"

namespace downscale {

inline constexpr double kEigenvalueFloor = 1e-8;
inline constexpr int kMaxRepairIterations = 100;
inline constexpr double kCollinearClip = 1.0 - 1e-6;

namespace detail {

// Cholesky with a pivot floor; Eigen's LLT alone accepts pivots at rounding
// level on singular input.
inline bool try_cholesky(const Eigen::MatrixXd& a, Eigen::MatrixXd& lower) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return false;
  lower = llt.matrixL();
  for (Eigen::Index i = 0; i < lower.rows(); ++i)
    if (!(lower(i, i) * lower(i, i) > 1e-12)) return false;
  return true;
}

}  // namespace detail

/// Symmetric positive-definite matrix with unit diagonal, together with its
/// lower Cholesky factor. Only constructible through nearest_pd_repair.
class CorrelationMatrix {
 public:
  static CorrelationMatrix identity(Eigen::Index dim) {
    CorrelationMatrix c;
    c.entries_ = Eigen::MatrixXd::Identity(dim, dim);
    c.lower_ = c.entries_;
    return c;
  }

  Eigen::Index dim() const noexcept { return entries_.rows(); }
  const Eigen::MatrixXd& entries() const noexcept { return entries_; }
  const Eigen::MatrixXd& cholesky_factor() const noexcept { return lower_; }
  int repair_iterations() const noexcept { return iterations_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return entries_(i, j); }

  /// Principal submatrix over `indices`, repaired independently.
  CorrelationMatrix restrict_to(const std::vector<Eigen::Index>& indices) const;

 private:
  friend CorrelationMatrix nearest_pd_repair(const Eigen::MatrixXd& matrix);
  Eigen::MatrixXd entries_;
  Eigen::MatrixXd lower_;
  int iterations_ = 0;
};

/// Makes a symmetric unit-diagonal matrix positive definite: while Cholesky
/// fails, clip eigenvalues at 1e-8, rebuild, and rescale to unit diagonal.
inline CorrelationMatrix nearest_pd_repair(const Eigen::MatrixXd& matrix) {
  constexpr const char* op = "nearest_pd_repair: ";
  if (matrix.rows() != matrix.cols()) throw ValidationError(std::string(op) + "matrix is not square");
  if (!matrix.allFinite()) throw NumericalError(std::string(op) + "non-finite entries");
  const Eigen::Index n = matrix.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(matrix(i, i) - 1.0) > 1e-9)
      throw ValidationError(std::string(op) + "diagonal entries must be 1");
    for (Eigen::Index j = 0; j < i; ++j)
      if (std::abs(matrix(i, j) - matrix(j, i)) > 1e-9)
        throw ValidationError(std::string(op) + "matrix is not symmetric");
  }

  Eigen::MatrixXd a = 0.5 * (matrix + matrix.transpose());
  a.diagonal().setOnes();
  CorrelationMatrix out;
  int iter = 0;
  while (!detail::try_cholesky(a, out.lower_)) {
    if (iter == kMaxRepairIterations)
      throw NumericalError(std::string(op) + "no positive-definite repair within 100 iterations");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(kEigenvalueFloor);
    a = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
    Eigen::VectorXd inv_sd = a.diagonal().cwiseSqrt().cwiseInverse();
    a = inv_sd.asDiagonal() * a * inv_sd.asDiagonal();
    a = (0.5 * (a + a.transpose())).eval();
    a.diagonal().setOnes();
    a = a.cwiseMax(-1.0).cwiseMin(1.0);
    ++iter;
  }
  out.entries_ = std::move(a);
  out.iterations_ = iter;
  return out;
}

inline CorrelationMatrix CorrelationMatrix::restrict_to(const std::vector<Eigen::Index>& indices) const {
  const auto k = static_cast<Eigen::Index>(indices.size());
  Eigen::MatrixXd sub(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) sub(i, j) = entries_(indices[i], indices[j]);
  return nearest_pd_repair(sub);
}

/// Pearson correlation of the columns of `data` (rows = observations).
/// Constant columns get zero correlation with every other column.
inline Eigen::MatrixXd pearson_correlation(const Eigen::MatrixXd& data) {
  const Eigen::Index d = data.cols();
  Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered;
  std::vector<bool> constant(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i) {
    const double sd = std::sqrt(cov(i, i) / std::max<double>(1.0, static_cast<double>(data.rows())));
    const double scale = 1.0 + data.col(i).cwiseAbs().maxCoeff();
    constant[static_cast<std::size_t>(i)] = !(sd > 1e-12 * scale);
  }
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      double v = 0.0;
      if (!constant[static_cast<std::size_t>(i)] && !constant[static_cast<std::size_t>(j)])
        v = std::clamp(cov(i, j) / std::sqrt(cov(i, i) * cov(j, j)), -1.0, 1.0);
      r(i, j) = r(j, i) = v;
    }
  }
  return r;
}

/// Unit-level values of the given coordinates, one row per unit not in
/// `exclude`.
inline Eigen::MatrixXd coordinate_matrix(const CoarseTable& coarse,
                                         const std::vector<Coordinate>& coords,
                                         const std::set<std::string>& exclude) {
  std::vector<const AggregationUnit*> kept;
  for (const auto& u : coarse.units)
    if (!exclude.count(u.unit_id)) kept.push_back(&u);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(coords.size()));
  for (std::size_t i = 0; i < kept.size(); ++i)
    for (std::size_t j = 0; j < coords.size(); ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = coordinate_value(*kept[i], coords[j]);
  return x;
}

/// Pearson correlation of coordinate values across unflagged units, with
/// off-diagonals clipped to +-(1 - 1e-6), then repaired to positive definite.
inline CorrelationMatrix estimate_correlation(const CoarseTable& coarse,
                                              const std::vector<Coordinate>& coords,
                                              const std::set<std::string>& exclude = {}) {
  constexpr const char* op = "estimate_correlation: ";
  const Eigen::MatrixXd x = coordinate_matrix(coarse, coords, exclude);
  const auto needed = static_cast<Eigen::Index>(coords.size()) + 2;
  if (x.rows() < needed)
    throw ValidationError(std::string(op) + "need at least " + std::to_string(needed) +
                          " unflagged units for " + std::to_string(coords.size()) +
                          " coordinates, have " + std::to_string(x.rows()));
  if (!x.allFinite()) throw NumericalError(std::string(op) + "non-finite coordinate values");
  Eigen::MatrixXd r = pearson_correlation(x);
  r = r.cwiseMax(-kCollinearClip).cwiseMin(kCollinearClip);
  r.diagonal().setOnes();
  return nearest_pd_repair(r);
}

}  // namespace downscale
