#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "lmm/errors.hpp"
#include "lmm/rng.hpp"

namespace lmm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Default cap on the number of entries a dense materialization may hold.
inline constexpr std::int64_t kDefaultDenseCap = 4'000'000;

/// A matrix-free linear map R^domain_dim -> R^codomain_dim with its adjoint.
struct LinearOperator {
  Index domain_dim = 0;
  Index codomain_dim = 0;
  std::function<Vec(const Vec &)> apply;
  std::function<Vec(const Vec &)> adjoint_apply;

  Vec operator()(const Vec &u) const {
    detail::require_dim(u.size() == domain_dim,
                        "operator input has wrong length");
    return apply(u);
  }

  Vec adjoint(const Vec &w) const {
    detail::require_dim(w.size() == codomain_dim,
                        "adjoint input has wrong length");
    return adjoint_apply(w);
  }

  /// Self-adjoint operator from a single action.
  static LinearOperator symmetric(Index n, std::function<Vec(const Vec &)> f) {
    LinearOperator op;
    op.domain_dim = n;
    op.codomain_dim = n;
    op.apply = f;
    op.adjoint_apply = std::move(f);
    return op;
  }

  static LinearOperator identity(Index n) {
    return symmetric(n, [](const Vec &u) { return u; });
  }

  static LinearOperator from_dense(Mat m) {
    auto shared = std::make_shared<const Mat>(std::move(m));
    LinearOperator op;
    op.domain_dim = shared->cols();
    op.codomain_dim = shared->rows();
    op.apply = [shared](const Vec &u) -> Vec { return (*shared) * u; };
    op.adjoint_apply = [shared](const Vec &w) -> Vec {
      return shared->transpose() * w;
    };
    return op;
  }
};

struct CGSettings {
  int max_iters = 100;
  /// Threshold on the Euclidean norm of the residual.
  double residual_tol = 1e-25;
};

struct CGResult {
  Vec solution;
  int iterations = 0;
  double final_residual_norm = 0.0;
  bool converged = false;
};

/// Conjugate gradients for a symmetric positive (semi)definite action,
/// started from the zero vector.
///
/// Throws NumericalBreakdown if a non-finite scalar appears. A zero
/// curvature direction with a nonzero residual is also reported as a
/// breakdown, since the step length is then undefined.
template <class GramApply>
CGResult cg_solve(const GramApply &gram_apply, const Vec &rhs,
                  const CGSettings &settings) {
  detail::require_param(settings.max_iters >= 1, "cg max_iters must be >= 1");
  detail::require_param(settings.residual_tol >= 0.0,
                        "cg residual_tol must be >= 0");

  CGResult out;
  out.solution = Vec::Zero(rhs.size());
  Vec r = rhs;
  double rr = r.squaredNorm();
  if (!std::isfinite(rr))
    throw NumericalBreakdown(0, "non-finite right-hand side");
  out.final_residual_norm = std::sqrt(rr);
  if (out.final_residual_norm <= settings.residual_tol) {
    out.converged = true;
    return out;
  }

  Vec p = r;
  for (int it = 1; it <= settings.max_iters; ++it) {
    const Vec q = gram_apply(p);
    const double curvature = p.dot(q);
    if (!std::isfinite(curvature) || curvature == 0.0)
      throw NumericalBreakdown(it, "degenerate curvature p'Ap");
    const double alpha = rr / curvature;
    out.solution.noalias() += alpha * p;
    r.noalias() -= alpha * q;
    const double rr_next = r.squaredNorm();
    if (!std::isfinite(alpha) || !std::isfinite(rr_next))
      throw NumericalBreakdown(it, "non-finite step");
    out.iterations = it;
    out.final_residual_norm = std::sqrt(rr_next);
    if (out.final_residual_norm <= settings.residual_tol) {
      out.converged = true;
      return out;
    }
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  return out;
}

inline CGResult cg_solve(const LinearOperator &gram, const Vec &rhs,
                         const CGSettings &settings) {
  detail::require_dim(gram.domain_dim == gram.codomain_dim,
                      "cg requires a square operator");
  detail::require_dim(rhs.size() == gram.domain_dim,
                      "cg right-hand side has wrong length");
  return cg_solve([&](const Vec &u) { return gram.apply(u); }, rhs, settings);
}

/// Dense matrix whose j-th column is op(e_j).
inline Mat materialize_dense(const LinearOperator &op,
                             std::int64_t cap = kDefaultDenseCap) {
  const std::int64_t entries =
      static_cast<std::int64_t>(op.domain_dim) * op.codomain_dim;
  if (entries > cap)
    throw SizeGuardError("dense materialization of " +
                         std::to_string(op.codomain_dim) + "x" +
                         std::to_string(op.domain_dim) +
                         " exceeds entry cap " + std::to_string(cap));
  Mat out(op.codomain_dim, op.domain_dim);
  Vec e = Vec::Zero(op.domain_dim);
  for (Index j = 0; j < op.domain_dim; ++j) {
    e(j) = 1.0;
    out.col(j) = op.apply(e);
    e(j) = 0.0;
  }
  return out;
}

/// Power iteration on op^T op. Returns the largest ||op u|| over the unit
/// iterates, so the estimate is a lower bound on ||op|| that never decreases
/// with more iterations.
inline double op_norm_estimate(const LinearOperator &op, int iters,
                               std::uint64_t seed) {
  detail::require_param(iters >= 1, "op_norm_estimate needs iters >= 1");
  Rng rng(seed);
  Vec u = rng.unit_vector(op.domain_dim);
  double best = 0.0;
  for (int it = 0; it < iters; ++it) {
    const Vec w = op.apply(u);
    best = std::max(best, w.norm());
    Vec next = op.adjoint_apply(w);
    const double nrm = next.norm();
    if (nrm == 0.0)
      break;
    u = next / nrm;
  }
  return best;
}

} // namespace lmm
