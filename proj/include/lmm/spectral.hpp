#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lmm/errors.hpp"
#include "lmm/param_maps.hpp"

namespace lmm {

struct SpectrumReport {
  Vec computed_eigenvalues;
  Vec predicted_eigenvalues;
  double max_abs_deviation = 0.0;
};

/// Singular values at or below this fraction of the largest count as zero in
/// the rank checks.
inline constexpr double kRankRelTol = 1e-8;

namespace detail {

inline Vec sorted(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return Eigen::Map<Vec>(values.data(), Index(values.size()));
}

/// Ascending eigenvalues of J J^T.
inline Vec outer_gram_eigenvalues(const Mat &J) {
  const Mat G = J * J.transpose();
  Eigen::SelfAdjointEigenSolver<Mat> es(G, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

/// Singular values of M padded with zeros to length n.
inline Vec padded_singular_values(const Mat &M, Index n) {
  Vec out = Vec::Zero(n);
  if (M.size() == 0)
    return out;
  Eigen::JacobiSVD<Mat> svd(M);
  const Vec &s = svd.singularValues();
  out.head(std::min(n, s.size())) = s.head(std::min(n, s.size()));
  return out;
}

inline SpectrumReport make_report(Vec computed, Vec predicted) {
  require_dim(computed.size() == predicted.size(),
              "spectrum lengths disagree");
  SpectrumReport rep{std::move(computed), std::move(predicted), 0.0};
  if (rep.computed_eigenvalues.size() > 0)
    rep.max_abs_deviation =
        (rep.computed_eigenvalues - rep.predicted_eigenvalues).cwiseAbs().maxCoeff();
  return rep;
}

inline Index numeric_rank(const Vec &s, double rel_tol) {
  if (s.size() == 0 || s(0) == 0.0)
    return 0;
  Index k = 0;
  while (k < s.size() && s(k) > rel_tol * s(0))
    ++k;
  return k;
}

} // namespace detail

/// Eigenvalues of grad F grad F^T for F(X) = X X^T against the multiset
/// {2(s_i^2 + s_j^2) : i <= j} padded with d(d-1)/2 zeros, where s_k are the
/// singular values of X (zero beyond its rank).
inline SpectrumReport check_bm_spectrum(const Mat &X,
                                        std::int64_t cap = kDefaultDenseCap) {
  const Index d = X.rows(), r = X.cols();
  detail::require_param(d >= 1 && r >= 1, "factor must be nonempty");
  if (std::int64_t(d) * d * d * d > cap)
    throw SizeGuardError("outer Gram of size d^2 x d^2 exceeds the dense cap");
  const ParamMap map = ParamMap::burer_monteiro(d, r);
  const Mat J = dense_jacobian(map, detail::flatten(X), cap);

  const Vec s = detail::padded_singular_values(X, d);
  std::vector<double> pred;
  pred.reserve(std::size_t(d * d));
  for (Index i = 0; i < d; ++i)
    for (Index j = i; j < d; ++j)
      pred.push_back(2.0 * (s(i) * s(i) + s(j) * s(j)));
  pred.resize(std::size_t(d * d), 0.0);
  return detail::make_report(detail::outer_gram_eigenvalues(J),
                             detail::sorted(std::move(pred)));
}

/// Eigenvalues of grad F grad F^T for F(X, Y) = X Y^T against
/// {s_i(X)^2 + s_j(Y)^2 : i <= d1, j <= d2}.
inline SpectrumReport check_asym_spectrum(const Mat &X, const Mat &Y,
                                          std::int64_t cap = kDefaultDenseCap) {
  detail::require_dim(X.cols() == Y.cols(), "factors must share the rank");
  const Index d1 = X.rows(), d2 = Y.rows(), r = X.cols();
  detail::require_param(d1 >= 1 && d2 >= 1 && r >= 1, "factors must be nonempty");
  if (std::int64_t(d1) * d2 * d1 * d2 > cap)
    throw SizeGuardError("outer Gram of size d1 d2 x d1 d2 exceeds the dense cap");
  const ParamMap map = ParamMap::asymmetric_factor(d1, d2, r);
  const Mat J = dense_jacobian(map, detail::stack(X, Y), cap);

  const Vec sx = detail::padded_singular_values(X, d1);
  const Vec sy = detail::padded_singular_values(Y, d2);
  std::vector<double> pred;
  pred.reserve(std::size_t(d1 * d2));
  for (Index i = 0; i < d1; ++i)
    for (Index j = 0; j < d2; ++j)
      pred.push_back(sx(i) * sx(i) + sy(j) * sy(j));
  return detail::make_report(detail::outer_gram_eigenvalues(J),
                             detail::sorted(std::move(pred)));
}

struct RankReport {
  Index numeric_rank = 0;
  Index predicted = 0;
};

/// Numeric rank of the dense Jacobian at x against the constant-rank formulas
/// for full-rank factors: d r (symmetric CP), (d1 + d2 + d3 - 2) r
/// (asymmetric CP) and d r - r(r-1)/2 (Burer-Monteiro, r <= d).
inline RankReport check_cp_rank(const ParamMap &map, const Vec &x,
                                std::int64_t cap = kDefaultDenseCap) {
  Index predicted = 0;
  const ParamShape &shape = map.shape();
  switch (map.kind()) {
  case MapKind::SymmetricCP: {
    const auto &s = std::get<FactorShape>(shape);
    predicted = s.d * s.r;
    break;
  }
  case MapKind::AsymmetricCP: {
    const auto &s = std::get<FactorTripleShape>(shape);
    predicted = (s.d1 + s.d2 + s.d3 - 2) * s.r;
    break;
  }
  case MapKind::BurerMonteiro: {
    const auto &s = std::get<FactorShape>(shape);
    detail::require_param(s.r <= s.d, "full-rank factor needs r <= d");
    predicted = s.d * s.r - s.r * (s.r - 1) / 2;
    break;
  }
  default:
    throw ParameterError(std::string("no rank formula for map ") +
                         to_string(map.kind()));
  }
  const Mat J = dense_jacobian(map, x, cap);
  Eigen::BDCSVD<Mat> svd(J);
  return {detail::numeric_rank(svd.singularValues(), kRankRelTol), predicted};
}

struct AlignmentReport {
  /// Smallest number of leading left singular vectors whose span leaves a
  /// residual ratio <= rho, or the Jacobian rank if none does.
  Index j = 0;
  /// ||(I - Pi_j)(z - z*)|| / ||z - z*||.
  double residual_ratio = 1.0;
  /// Squared j-th singular value of the Jacobian (0 when j = 0).
  double sigma_j_sq = 0.0;
  /// Residual ratio after projecting onto the whole range.
  double range_residual_ratio = 1.0;
  Index rank = 0;
  /// For X Y^T: ||V_X - V_Y||_F between right singular vectors, columns
  /// sign-aligned. Recorded, not judged.
  std::optional<double> imbalance;
};

/// Frobenius distance between the right singular vectors of X and Y, with
/// each column of V_Y flipped to agree in sign with V_X.
inline double right_factor_imbalance(const Mat &X, const Mat &Y) {
  detail::require_dim(X.cols() == Y.cols(), "factors must share the rank");
  Eigen::JacobiSVD<Mat> sx(X, Eigen::ComputeFullV);
  Eigen::JacobiSVD<Mat> sy(Y, Eigen::ComputeFullV);
  const Mat &vx = sx.matrixV();
  Mat vy = sy.matrixV();
  for (Index k = 0; k < vy.cols(); ++k)
    if (vx.col(k).dot(vy.col(k)) < 0.0)
      vy.col(k) *= -1.0;
  return (vx - vy).norm();
}

/// How well z - z* is captured by the top singular directions of grad F(x).
inline AlignmentReport weak_alignment_probe(const ParamMap &map, const Vec &x,
                                            const Vec &z_star, double rho,
                                            std::int64_t cap = kDefaultDenseCap) {
  detail::check_output(map, z_star, "ground truth");
  detail::require_param(rho >= 0.0, "rho must be nonnegative");
  const Vec e = eval(map, x) - z_star;
  const double e_norm = e.norm();
  if (e_norm == 0.0)
    throw DegenerateInputError("alignment probe needs F(x) != z*");

  const Mat J = dense_jacobian(map, x, cap);
  Eigen::BDCSVD<Mat> svd(J, Eigen::ComputeThinU);
  const Vec &s = svd.singularValues();
  const Mat &U = svd.matrixU();

  AlignmentReport rep;
  rep.rank = detail::numeric_rank(s, kRangeRankTol);
  Vec res = e;
  std::optional<Index> hit;
  for (Index j = 1; j <= rep.rank; ++j) {
    res -= U.col(j - 1) * U.col(j - 1).dot(e);
    const double ratio = std::min(1.0, res.norm() / e_norm);
    if (!hit && ratio <= rho) {
      hit = j;
      rep.j = j;
      rep.residual_ratio = ratio;
    }
    if (j == rep.rank)
      rep.range_residual_ratio = ratio;
  }
  if (!hit) {
    rep.j = rep.rank;
    rep.residual_ratio = rep.range_residual_ratio;
  }
  rep.sigma_j_sq = rep.j > 0 ? s(rep.j - 1) * s(rep.j - 1) : 0.0;

  if (map.kind() == MapKind::AsymmetricFactor) {
    const detail::Blocks b = detail::blocks(map, x);
    rep.imbalance = right_factor_imbalance(b.a, b.b);
  }
  return rep;
}

/// Radius s(rho) = rho / max(sqrt(r - r*), 1) of the squared-variable
/// alignment guarantee.
inline double hadamard_alignment_s(double rho, Index r, Index r_star) {
  return rho / std::max(std::sqrt(double(r - r_star)), 1.0);
}

/// Radius delta(rho) of the ball around z* where that guarantee holds: the
/// minimum of half the smallest gap between distinct entries, z*_i / (1 + s)
/// and z*_i / 2 over the nonzero entries.
inline double hadamard_alignment_delta(const Vec &z_star, double rho,
                                       Index r_star) {
  const double s = hadamard_alignment_s(rho, z_star.size(), r_star);
  double out = INFINITY;
  std::vector<double> vals(z_star.data(), z_star.data() + z_star.size());
  std::sort(vals.begin(), vals.end());
  for (std::size_t i = 1; i < vals.size(); ++i)
    if (vals[i] > vals[i - 1])
      out = std::min(out, 0.5 * (vals[i] - vals[i - 1]));
  for (double v : vals)
    if (v != 0.0)
      out = std::min({out, v / (1.0 + s), v / 2.0});
  return out;
}

} // namespace lmm
