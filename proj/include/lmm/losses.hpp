#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "lmm/errors.hpp"
#include "lmm/operators.hpp"
#include "lmm/param_maps.hpp"
#include "lmm/rng.hpp"

namespace lmm {

/// Linear measurement map A : R^N -> R^m, either the identity or a dense
/// matrix. The dense matrix is shared, so copies are cheap.
class MeasurementMap {
public:
  static MeasurementMap identity(Index n) {
    detail::require_param(n >= 1, "identity map needs n >= 1");
    MeasurementMap out;
    out.rows_ = out.cols_ = n;
    return out;
  }

  static MeasurementMap dense(Mat A) {
    detail::require_param(A.rows() >= 1 && A.cols() >= 1,
                          "dense measurement map must be nonempty");
    MeasurementMap out;
    out.rows_ = A.rows();
    out.cols_ = A.cols();
    out.matrix_ = std::make_shared<const Mat>(std::move(A));
    return out;
  }

  bool is_identity() const noexcept { return matrix_ == nullptr; }
  /// Number of measurements m.
  Index rows() const noexcept { return rows_; }
  /// Signal dimension N.
  Index cols() const noexcept { return cols_; }
  /// Dense matrix; only valid when !is_identity().
  const Mat &matrix() const { return *matrix_; }

  Vec apply(const Vec &z) const {
    detail::require_dim(z.size() == cols_, "measurement input has wrong length");
    if (is_identity())
      return z;
    return (*matrix_) * z;
  }

  Vec adjoint(const Vec &y) const {
    detail::require_dim(y.size() == rows_,
                        "measurement adjoint input has wrong length");
    if (is_identity())
      return y;
    return matrix_->transpose() * y;
  }

private:
  MeasurementMap() = default;
  Index rows_ = 0;
  Index cols_ = 0;
  std::shared_ptr<const Mat> matrix_;
};

enum class LossKind { SquaredL2, L2, L1 };

inline const char *to_string(LossKind k) {
  switch (k) {
  case LossKind::SquaredL2:
    return "l2sq";
  case LossKind::L2:
    return "l2";
  case LossKind::L1:
    return "l1";
  }
  return "unknown";
}

/// Sharpness / Lipschitz constants of h on the image of F, when known.
struct Regularity {
  double mu;
  double L;
};

/// Convex outer function h(z) = loss(A z - b).
struct OuterLoss {
  LossKind kind;
  MeasurementMap map;
  Vec b;
  std::optional<double> h_star;
  std::optional<Regularity> regularity;

  OuterLoss(LossKind k, MeasurementMap a, Vec data,
            std::optional<double> hs = std::nullopt,
            std::optional<Regularity> reg = std::nullopt)
      : kind(k), map(std::move(a)), b(std::move(data)), h_star(hs),
        regularity(reg) {
    detail::require_dim(b.size() == map.rows(),
                        "data vector length must equal number of measurements");
  }

  Index signal_dim() const noexcept { return map.cols(); }
};

inline Vec residual(const OuterLoss &loss, const Vec &z) {
  return loss.map.apply(z) - loss.b;
}

inline double loss_value(const OuterLoss &loss, const Vec &z) {
  const Vec r = residual(loss, z);
  switch (loss.kind) {
  case LossKind::SquaredL2:
    return 0.5 * r.squaredNorm();
  case LossKind::L2:
    return r.norm();
  case LossKind::L1:
    return r.lpNorm<1>();
  }
  throw ParameterError("unknown loss kind");
}

/// Minimal-norm element of the subdifferential in residual space, pulled
/// back through A^T: sign(0) = 0 for L1 and the zero vector at r = 0 for L2.
inline Vec loss_subgradient(const OuterLoss &loss, const Vec &z) {
  const Vec r = residual(loss, z);
  switch (loss.kind) {
  case LossKind::SquaredL2:
    return loss.map.adjoint(r);
  case LossKind::L2: {
    const double nrm = r.norm();
    if (nrm == 0.0)
      return Vec::Zero(loss.signal_dim());
    return loss.map.adjoint(r / nrm);
  }
  case LossKind::L1: {
    const Vec s = r.unaryExpr([](double t) {
      return t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0);
    });
    return loss.map.adjoint(s);
  }
  }
  throw ParameterError("unknown loss kind");
}

/// Dense m x N map with i.i.d. N(0, 1/m) entries.
inline MeasurementMap make_gaussian_map(Index m, Index n, std::uint64_t seed) {
  detail::require_param(m >= 1 && n >= 1, "gaussian map needs m, N >= 1");
  Rng rng(seed);
  return MeasurementMap::dense(rng.gaussian(m, n, 1.0 / std::sqrt(double(m))));
}

struct CorruptionSpec {
  double p_fail = 0.0;
  std::uint64_t seed = 0;
  /// Admit p_fail in [1/2, 1), where the ground truth stops being the l1
  /// minimizer. Only the phase-transition grids use this.
  bool beyond_breakdown = false;
};

/// Seeded Fisher-Yates draw of floor(p_fail * m) distinct indices, sorted.
inline std::vector<Index> corrupted_indices(Index m, const CorruptionSpec &spec) {
  detail::require_param(spec.p_fail >= 0.0 &&
                            spec.p_fail < (spec.beyond_breakdown ? 1.0 : 0.5),
                        "p_fail must lie in [0, 1/2)");
  const auto count = static_cast<Index>(std::floor(spec.p_fail * double(m)));
  std::vector<Index> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(spec.seed);
  for (Index i = 0; i < count; ++i) {
    const auto j = i + static_cast<Index>(rng.below(std::uint64_t(m - i)));
    std::swap(perm[std::size_t(i)], perm[std::size_t(j)]);
  }
  perm.resize(std::size_t(count));
  std::sort(perm.begin(), perm.end());
  return perm;
}

/// Replace floor(p_fail * m) entries of b_clean by A(z_bar) at seeded indices.
inline Vec corrupt(const Vec &b_clean, const CorruptionSpec &spec,
                   const MeasurementMap &map, const Vec &z_bar) {
  detail::require_dim(b_clean.size() == map.rows(),
                      "clean data length must equal number of measurements");
  const auto idx = corrupted_indices(map.rows(), spec);
  Vec out = b_clean;
  if (idx.empty())
    return out;
  const Vec spurious = map.apply(z_bar);
  for (Index i : idx)
    out(i) = spurious(i);
  return out;
}

enum class RipNorm { L2Squared, L1 };

struct RipRatios {
  double ratio_min;
  double ratio_max;
};

/// Extreme ratios ||A(Z)|| / ||Z||_F over random low-rank signals Z = F(x)
/// with x drawn i.i.d. Gaussian in the shape of `param`. In L2Squared mode the
/// ratio is ||A(Z)||_2^2 / ||Z||_F^2; in L1 mode ||A(Z)||_1 / ||Z||_F.
inline RipRatios empirical_rip(const MeasurementMap &map, const ParamMap &param,
                               int trials, std::uint64_t seed,
                               RipNorm norm = RipNorm::L2Squared) {
  detail::require_param(trials >= 1, "empirical_rip needs trials >= 1");
  detail::require_dim(param.codomain_dim() == map.cols(),
                      "parameterization codomain must match map input");
  Rng rng(seed);
  RipRatios out{INFINITY, -INFINITY};
  for (int t = 0; t < trials; ++t) {
    const Vec z = eval(param, rng.gaussian_vector(param.domain_dim()));
    const Vec y = map.apply(z);
    const double ratio = norm == RipNorm::L2Squared
                             ? y.squaredNorm() / z.squaredNorm()
                             : y.lpNorm<1>() / z.norm();
    out.ratio_min = std::min(out.ratio_min, ratio);
    out.ratio_max = std::max(out.ratio_max, ratio);
  }
  return out;
}

} // namespace lmm
