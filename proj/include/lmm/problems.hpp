#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "lmm/errors.hpp"
#include "lmm/losses.hpp"
#include "lmm/param_maps.hpp"
#include "lmm/rng.hpp"
#include "lmm/solver.hpp"

namespace lmm {

struct GroundTruth {
  Vec x_star;
  Vec z_star;
  double h_star = 0.0;
};

/// Generator parameters an instance was built from.
struct ProblemMeta {
  std::string kind;
  Index d1 = 0, d2 = 0, d3 = 0;
  Index r = 0, r_star = 0;
  double tau = 1.0;
  /// Number of measurements; equals the signal dimension for identity maps.
  Index m = 0;
  bool identity_map = false;
  double p_fail = 0.0;
  double kappa_A = 1.0;
  std::uint64_t seed = 0;
};

struct ProblemInstance {
  ParamMap map;
  OuterLoss loss;
  Vec x0;
  GroundTruth gt;
  ProblemMeta meta;
  /// Loss-proxy damping used by the experiments for this loss kind.
  DampingRule default_damping;
};

/// Initialization distance used throughout the experiments.
inline constexpr double kDefaultInitRelErr = 1e-2;

namespace stream {
inline constexpr std::uint64_t kFactorU = 1;
inline constexpr std::uint64_t kFactorV = 2;
inline constexpr std::uint64_t kFactorW = 3;
inline constexpr std::uint64_t kMeasure = 4;
inline constexpr std::uint64_t kSpurious = 5;
inline constexpr std::uint64_t kCorrupt = 6;
inline constexpr std::uint64_t kInit = 7;
} // namespace stream

/// `count` values linearly spaced from 1 down to 1/tau.
inline Vec spectrum_ramp(Index count, double tau) {
  Vec out(count);
  for (Index i = 0; i < count; ++i)
    out(i) = count == 1 ? 1.0
                        : 1.0 - double(i) * (1.0 - 1.0 / tau) / double(count - 1);
  return out;
}

/// Orthonormal columns from the QR factorization of a Gaussian draw, with
/// column signs chosen so that diag(R) > 0.
inline Mat orthonormal_columns(Index rows, Index cols, Rng &rng) {
  detail::require_param(cols <= rows, "cannot fit more orthonormal columns "
                                      "than rows");
  const Mat G = rng.gaussian(rows, cols);
  Eigen::HouseholderQR<Mat> qr(G);
  Mat Q = qr.householderQ() * Mat::Identity(rows, cols);
  const Mat &R = qr.matrixQR();
  for (Index j = 0; j < cols; ++j)
    if (R(j, j) < 0.0)
      Q.col(j) *= -1.0;
  return Q;
}

/// Gaussian m x n matrix whose singular values are replaced by a linear ramp
/// from the draw's largest singular value down to that value / kappa.
inline Mat conditioned_matrix(Index m, Index n, double kappa,
                              std::uint64_t seed) {
  detail::require_param(m >= n && n >= 1, "conditioned_matrix needs m >= n >= 1");
  detail::require_param(kappa >= 1.0, "condition number must be >= 1");
  detail::require_param(n > 1 || kappa == 1.0,
                        "a single column cannot have condition number > 1");
  Rng rng(seed);
  const Mat G = rng.gaussian(m, n, 1.0 / std::sqrt(double(m)));
  Eigen::JacobiSVD<Mat> svd(G, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double top = svd.singularValues()(0);
  const Vec sigma = top * spectrum_ramp(n, kappa);
  return svd.matrixU() * sigma.asDiagonal() * svd.matrixV().transpose();
}

/// x* + s * xi with xi a seeded unit direction and s found by bisection so
/// that ||F(x0) - z*|| / ||z*|| = rho0 to relative accuracy 1e-6.
inline Vec init_relative(const ParamMap &map, const Vec &x_star,
                         const Vec &z_star, double rho0, std::uint64_t seed) {
  detail::require_param(rho0 > 0.0, "initial relative error must be positive");
  Rng rng(seed);
  const Vec xi = rng.unit_vector(map.domain_dim());
  auto err_at = [&](double s) {
    return relative_error(eval(map, x_star + s * xi), z_star);
  };
  constexpr double kTol = 1e-6;
  double lo = 0.0;
  double hi = rho0 * std::max(1.0, x_star.norm());
  int grow = 0;
  while (err_at(hi) < rho0) {
    if (++grow > 100)
      throw GenerationError("could not bracket the requested initial error");
    hi *= 2.0;
  }
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double e = err_at(mid);
    if (!std::isfinite(e))
      throw GenerationError("non-finite error while bisecting initial point");
    if (std::abs(e - rho0) <= kTol * rho0)
      return x_star + mid * xi;
    (e < rho0 ? lo : hi) = mid;
  }
  throw GenerationError("bisection for the initial point did not converge "
                        "(bracket [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "])");
}

// ---------------------------------------------------------------------------
// Nonnegative least squares via the squared-variable map.

struct NnlsSpec {
  Index r = 10;
  Index r_star = 10;
  double tau = 1.0;
  Index m = 20;
  double kappa_A = 10.0;
  LossKind kind = LossKind::L2;
  std::uint64_t seed = 0;
  double init_rel_err = kDefaultInitRelErr;
};

inline ProblemInstance gen_nnls(const NnlsSpec &spec) {
  detail::require_param(spec.r_star >= 1 && spec.r >= spec.r_star,
                        "nnls needs r >= r_star >= 1");
  detail::require_param(spec.tau >= 1.0, "tau must be >= 1");
  detail::require_param(spec.m >= spec.r, "nnls needs m >= r");
  detail::require_param(spec.kind != LossKind::L1,
                        "nnls supports the l2 and squared l2 losses");

  const ParamMap map = ParamMap::hadamard(spec.r);
  Vec z_star = Vec::Zero(spec.r);
  z_star.head(spec.r_star) = spectrum_ramp(spec.r_star, spec.tau);
  const Vec x_star = z_star.cwiseSqrt();

  const Mat A = conditioned_matrix(spec.m, spec.r, spec.kappa_A,
                                   derive_seed(spec.seed, stream::kMeasure));
  Eigen::JacobiSVD<Mat> svd(A);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(spec.r - 1);
  const Regularity reg = spec.kind == LossKind::L2
                             ? Regularity{smin, smax}
                             : Regularity{smin * smin, smax * smax};
  Vec b = A * z_star;
  OuterLoss loss(spec.kind, MeasurementMap::dense(A), std::move(b), 0.0, reg);

  ProblemMeta meta;
  meta.kind = "nnls";
  meta.d1 = spec.r;
  meta.r = spec.r;
  meta.r_star = spec.r_star;
  meta.tau = spec.tau;
  meta.m = spec.m;
  meta.kappa_A = spec.kappa_A;
  meta.seed = spec.seed;

  // lambda_k = 1e-2 ||A z - b||, written in terms of f for either loss.
  const DampingRule damping = spec.kind == LossKind::L2
                                  ? DampingRule{LossProxy{1e-2, 1.0}}
                                  : DampingRule{LossProxy{1e-2 * std::sqrt(2.0), 0.5}};

  Vec x0 = init_relative(map, x_star, z_star, spec.init_rel_err,
                         derive_seed(spec.seed, stream::kInit));
  return ProblemInstance{map,   std::move(loss),
                         std::move(x0),
                         GroundTruth{x_star, z_star, 0.0},
                         meta,  damping};
}

// ---------------------------------------------------------------------------
// Low-rank matrix and CP tensor recovery.

namespace detail {

inline DampingRule default_damping_for(LossKind kind, double nonsmooth_c) {
  if (kind == LossKind::SquaredL2)
    return LossProxy{2.5e-3, 0.5};
  return LossProxy{nonsmooth_c, 1.0};
}

/// Shared tail: measurement map, corruption, loss, and initialization.
inline ProblemInstance finish_instance(const ParamMap &map, const Vec &x_star,
                                       const Vec &x_spurious,
                                       std::optional<Index> m, LossKind kind,
                                       double p_fail, bool beyond_breakdown,
                                       std::uint64_t seed,
                                       double init_rel_err, ProblemMeta meta,
                                       DampingRule damping) {
  require_param(p_fail >= 0.0 && p_fail < (beyond_breakdown ? 1.0 : 0.5),
                "p_fail must lie in [0, 1/2)");
  const Vec z_star = eval(map, x_star);
  const Index n_signal = map.codomain_dim();
  MeasurementMap A =
      m ? make_gaussian_map(*m, n_signal, derive_seed(seed, stream::kMeasure))
        : MeasurementMap::identity(n_signal);
  Vec b = A.apply(z_star);
  if (p_fail > 0.0)
    b = corrupt(b, CorruptionSpec{p_fail, derive_seed(seed, stream::kCorrupt),
                               beyond_breakdown},
                A, eval(map, x_spurious));

  meta.m = A.rows();
  meta.identity_map = A.is_identity();
  meta.p_fail = p_fail;
  meta.seed = seed;

  OuterLoss loss(kind, std::move(A), std::move(b));
  const double h_star = loss_value(loss, z_star);
  loss.h_star = h_star;
  Vec x0 = init_relative(map, x_star, z_star, init_rel_err,
                         derive_seed(seed, stream::kInit));
  return ProblemInstance{map,   std::move(loss),
                         std::move(x0),
                         GroundTruth{x_star, z_star, h_star},
                         meta,  damping};
}

/// Factor U * diag(spectrum^power) padded with zero columns up to width r.
inline Mat padded_factor(Index rows, Index r, const Vec &spectrum, double power,
                         Rng &rng) {
  const Index r_star = spectrum.size();
  Mat out = Mat::Zero(rows, r);
  out.leftCols(r_star) = orthonormal_columns(rows, r_star, rng) *
                         spectrum.array().pow(power).matrix().asDiagonal();
  return out;
}

} // namespace detail

struct MatrixSpec {
  bool symmetric = true;
  Index d1 = 20;
  /// Column dimension for the asymmetric problem; ignored when symmetric.
  Index d2 = 20;
  Index r = 2;
  Index r_star = 2;
  double tau = 1.0;
  /// Number of Gaussian measurements; empty for the identity map.
  std::optional<Index> m;
  LossKind kind = LossKind::L1;
  double p_fail = 0.0;
  /// See CorruptionSpec::beyond_breakdown.
  bool beyond_breakdown = false;
  std::uint64_t seed = 0;
  double init_rel_err = kDefaultInitRelErr;
};

/// PSD (X X^T) or asymmetric (X Y^T) low-rank recovery. The ground-truth
/// factors are U D^{1/2} and V D^{1/2} with D linearly spaced in [1/tau, 1],
/// padded with zero columns to rank r; outliers come from an independent
/// spurious ground truth drawn the same way.
inline ProblemInstance gen_matrix(const MatrixSpec &spec) {
  const Index d1 = spec.d1;
  const Index d2 = spec.symmetric ? spec.d1 : spec.d2;
  detail::require_param(d1 >= 1 && d2 >= 1, "matrix dimensions must be positive");
  detail::require_param(spec.r_star >= 1 && spec.r >= spec.r_star,
                        "matrix problems need r >= r_star >= 1");
  detail::require_param(spec.r_star <= std::min(d1, d2),
                        "r_star cannot exceed the matrix dimensions");
  detail::require_param(spec.tau >= 1.0, "tau must be >= 1");
  detail::require_param(!spec.m || *spec.m >= 1, "m must be positive");

  const Vec D = spectrum_ramp(spec.r_star, spec.tau);
  Rng rng_u(derive_seed(spec.seed, stream::kFactorU));
  Rng rng_v(derive_seed(spec.seed, stream::kFactorV));
  Rng rng_s(derive_seed(spec.seed, stream::kSpurious));

  ProblemMeta meta;
  meta.d1 = d1;
  meta.d2 = d2;
  meta.r = spec.r;
  meta.r_star = spec.r_star;
  meta.tau = spec.tau;

  if (spec.symmetric) {
    const ParamMap map = ParamMap::burer_monteiro(d1, spec.r);
    const Vec x_star = detail::flatten(detail::padded_factor(d1, spec.r, D, 0.5, rng_u));
    const Vec x_bar = detail::flatten(detail::padded_factor(d1, spec.r, D, 0.5, rng_s));
    meta.kind = "matrix_sym";
    return detail::finish_instance(map, x_star, x_bar, spec.m, spec.kind,
                                   spec.p_fail, spec.beyond_breakdown, spec.seed, spec.init_rel_err,
                                   meta,
                                   detail::default_damping_for(spec.kind, 1e-5));
  }
  const ParamMap map = ParamMap::asymmetric_factor(d1, d2, spec.r);
  const Mat X = detail::padded_factor(d1, spec.r, D, 0.5, rng_u);
  const Mat Y = detail::padded_factor(d2, spec.r, D, 0.5, rng_v);
  const Mat Xb = detail::padded_factor(d1, spec.r, D, 0.5, rng_s);
  const Mat Yb = detail::padded_factor(d2, spec.r, D, 0.5, rng_s);
  meta.kind = "matrix_asym";
  return detail::finish_instance(map, detail::stack(X, Y), detail::stack(Xb, Yb),
                                 spec.m, spec.kind, spec.p_fail, spec.beyond_breakdown, spec.seed,
                                 spec.init_rel_err, meta,
                                 detail::default_damping_for(spec.kind, 1e-5));
}

struct TensorSpec {
  bool symmetric = true;
  Index d1 = 20, d2 = 20, d3 = 20;
  Index r = 2;
  Index r_star = 2;
  double tau = 1.0;
  std::optional<Index> m;
  LossKind kind = LossKind::L2;
  double p_fail = 0.0;
  /// See CorruptionSpec::beyond_breakdown.
  bool beyond_breakdown = false;
  std::uint64_t seed = 0;
  double init_rel_err = kDefaultInitRelErr;
};

/// Symmetric or asymmetric CP recovery with factors U D^{1/3}.
inline ProblemInstance gen_tensor(const TensorSpec &spec) {
  const Index d1 = spec.d1;
  const Index d2 = spec.symmetric ? d1 : spec.d2;
  const Index d3 = spec.symmetric ? d1 : spec.d3;
  detail::require_param(d1 >= 1 && d2 >= 1 && d3 >= 1,
                        "tensor dimensions must be positive");
  detail::require_param(spec.r_star >= 1 && spec.r >= spec.r_star,
                        "tensor problems need r >= r_star >= 1");
  detail::require_param(spec.r_star <= std::min({d1, d2, d3}),
                        "r_star cannot exceed the tensor dimensions");
  detail::require_param(spec.tau >= 1.0, "tau must be >= 1");
  detail::require_param(!spec.m || *spec.m >= 1, "m must be positive");

  const Vec D = spectrum_ramp(spec.r_star, spec.tau);
  const double third = 1.0 / 3.0;
  Rng rng_u(derive_seed(spec.seed, stream::kFactorU));
  Rng rng_v(derive_seed(spec.seed, stream::kFactorV));
  Rng rng_w(derive_seed(spec.seed, stream::kFactorW));
  Rng rng_s(derive_seed(spec.seed, stream::kSpurious));

  ProblemMeta meta;
  meta.d1 = d1;
  meta.d2 = d2;
  meta.d3 = d3;
  meta.r = spec.r;
  meta.r_star = spec.r_star;
  meta.tau = spec.tau;
  const DampingRule damping = detail::default_damping_for(spec.kind, 1e-3);

  if (spec.symmetric) {
    const ParamMap map = ParamMap::symmetric_cp(d1, spec.r);
    const Vec x_star = detail::flatten(detail::padded_factor(d1, spec.r, D, third, rng_u));
    const Vec x_bar = detail::flatten(detail::padded_factor(d1, spec.r, D, third, rng_s));
    meta.kind = "tensor_sym";
    return detail::finish_instance(map, x_star, x_bar, spec.m, spec.kind,
                                   spec.p_fail, spec.beyond_breakdown, spec.seed, spec.init_rel_err,
                                   meta, damping);
  }
  const ParamMap map = ParamMap::asymmetric_cp(d1, d2, d3, spec.r);
  const Mat W = detail::padded_factor(d1, spec.r, D, third, rng_w);
  const Mat X = detail::padded_factor(d2, spec.r, D, third, rng_u);
  const Mat Y = detail::padded_factor(d3, spec.r, D, third, rng_v);
  const Mat Wb = detail::padded_factor(d1, spec.r, D, third, rng_s);
  const Mat Xb = detail::padded_factor(d2, spec.r, D, third, rng_s);
  const Mat Yb = detail::padded_factor(d3, spec.r, D, third, rng_s);
  meta.kind = "tensor_asym";
  return detail::finish_instance(map, detail::stack(W, X, Y),
                                 detail::stack(Wb, Xb, Yb), spec.m, spec.kind,
                                 spec.p_fail, spec.beyond_breakdown, spec.seed, spec.init_rel_err,
                                 meta, damping);
}

} // namespace lmm
