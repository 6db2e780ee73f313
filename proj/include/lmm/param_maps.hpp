#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include <Eigen/Dense>

#include "lmm/errors.hpp"
#include "lmm/operators.hpp"

namespace lmm {

enum class MapKind {
  HadamardSquare,   ///< x -> x .* x
  BurerMonteiro,    ///< X -> X X^T
  AsymmetricFactor, ///< (X, Y) -> X Y^T
  SymmetricCP,      ///< X -> sum_j X_j (x) X_j (x) X_j
  AsymmetricCP,     ///< (W, X, Y) -> sum_j W_j (x) X_j (x) Y_j
};

inline const char *to_string(MapKind kind) {
  switch (kind) {
  case MapKind::HadamardSquare:
    return "hadamard";
  case MapKind::BurerMonteiro:
    return "burer_monteiro";
  case MapKind::AsymmetricFactor:
    return "asymmetric_factor";
  case MapKind::SymmetricCP:
    return "symmetric_cp";
  case MapKind::AsymmetricCP:
    return "asymmetric_cp";
  }
  return "unknown";
}

struct VectorShape {
  Index r;
};
struct FactorShape {
  Index d, r;
};
struct FactorPairShape {
  Index d1, d2, r;
};
struct FactorTripleShape {
  Index d1, d2, d3, r;
};

using ParamShape =
    std::variant<VectorShape, FactorShape, FactorPairShape, FactorTripleShape>;

/// A smooth parameterization F together with its shape.
///
/// Points are flat vectors. Factor matrices are stored column-major and
/// concatenated in order (X; Y) or (W; X; Y). Outputs are flattened
/// column-major with the first index fastest; a third-order tensor entry
/// (i1, i2, i3) lives at i1 + d1*i2 + d1*d2*i3. Symmetric outputs are stored
/// in full.
class ParamMap {
public:
  static ParamMap hadamard(Index r) {
    require_positive({r});
    return ParamMap(MapKind::HadamardSquare, VectorShape{r});
  }
  static ParamMap burer_monteiro(Index d, Index r) {
    require_positive({d, r});
    return ParamMap(MapKind::BurerMonteiro, FactorShape{d, r});
  }
  static ParamMap asymmetric_factor(Index d1, Index d2, Index r) {
    require_positive({d1, d2, r});
    return ParamMap(MapKind::AsymmetricFactor, FactorPairShape{d1, d2, r});
  }
  static ParamMap symmetric_cp(Index d, Index r) {
    require_positive({d, r});
    return ParamMap(MapKind::SymmetricCP, FactorShape{d, r});
  }
  static ParamMap asymmetric_cp(Index d1, Index d2, Index d3, Index r) {
    require_positive({d1, d2, d3, r});
    return ParamMap(MapKind::AsymmetricCP, FactorTripleShape{d1, d2, d3, r});
  }

  MapKind kind() const noexcept { return kind_; }
  const ParamShape &shape() const noexcept { return shape_; }

  Index rank() const {
    return std::visit([](const auto &s) { return s.r; }, shape_);
  }

  /// Flattened length n of a point.
  Index domain_dim() const {
    return std::visit(
        [](const auto &s) -> Index {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, VectorShape>)
            return s.r;
          else if constexpr (std::is_same_v<S, FactorShape>)
            return s.d * s.r;
          else if constexpr (std::is_same_v<S, FactorPairShape>)
            return (s.d1 + s.d2) * s.r;
          else
            return (s.d1 + s.d2 + s.d3) * s.r;
        },
        shape_);
  }

  /// Flattened length m of an output.
  Index codomain_dim() const {
    return std::visit(
        [this](const auto &s) -> Index {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, VectorShape>)
            return s.r;
          else if constexpr (std::is_same_v<S, FactorShape>)
            return kind_ == MapKind::BurerMonteiro ? s.d * s.d
                                                   : s.d * s.d * s.d;
          else if constexpr (std::is_same_v<S, FactorPairShape>)
            return s.d1 * s.d2;
          else
            return s.d1 * s.d2 * s.d3;
        },
        shape_);
  }

  /// Global Lipschitz constant of the Jacobian, when one exists.
  std::optional<double> lipschitz_jacobian() const {
    switch (kind_) {
    case MapKind::HadamardSquare:
    case MapKind::BurerMonteiro:
      return 2.0;
    case MapKind::AsymmetricFactor:
      return std::sqrt(2.0);
    default:
      return std::nullopt;
    }
  }

  bool operator==(const ParamMap &o) const {
    return kind_ == o.kind_ && domain_dim() == o.domain_dim() &&
           codomain_dim() == o.codomain_dim() && rank() == o.rank();
  }

private:
  ParamMap(MapKind kind, ParamShape shape) : kind_(kind), shape_(shape) {}

  static void require_positive(std::initializer_list<Index> dims) {
    for (Index v : dims)
      detail::require_param(v >= 1, "map dimensions must be positive");
  }

  MapKind kind_;
  ParamShape shape_;
};

namespace detail {

using ConstMatMap = Eigen::Map<const Mat>;
using MatMap = Eigen::Map<Mat>;

inline void check_point(const ParamMap &map, const Vec &x, const char *what) {
  if (x.size() != map.domain_dim())
    throw DimensionError(std::string(what) + " has length " +
                         std::to_string(x.size()) + ", expected " +
                         std::to_string(map.domain_dim()));
}

inline void check_output(const ParamMap &map, const Vec &w, const char *what) {
  if (w.size() != map.codomain_dim())
    throw DimensionError(std::string(what) + " has length " +
                         std::to_string(w.size()) + ", expected " +
                         std::to_string(map.codomain_dim()));
}

/// Factor blocks of a flat point, as views.
struct Blocks {
  ConstMatMap a, b, c;
};

inline Blocks blocks(const ParamMap &map, const Vec &x) {
  const double *p = x.data();
  return std::visit(
      [p](const auto &s) -> Blocks {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, VectorShape>) {
          return {ConstMatMap(p, s.r, 1), ConstMatMap(nullptr, 0, 0),
                  ConstMatMap(nullptr, 0, 0)};
        } else if constexpr (std::is_same_v<S, FactorShape>) {
          return {ConstMatMap(p, s.d, s.r), ConstMatMap(nullptr, 0, 0),
                  ConstMatMap(nullptr, 0, 0)};
        } else if constexpr (std::is_same_v<S, FactorPairShape>) {
          return {ConstMatMap(p, s.d1, s.r),
                  ConstMatMap(p + s.d1 * s.r, s.d2, s.r),
                  ConstMatMap(nullptr, 0, 0)};
        } else {
          return {ConstMatMap(p, s.d1, s.r),
                  ConstMatMap(p + s.d1 * s.r, s.d2, s.r),
                  ConstMatMap(p + (s.d1 + s.d2) * s.r, s.d3, s.r)};
        }
      },
      map.shape());
}

/// sum_j A_j (x) B_j (x) C_j, flattened with the first mode fastest.
inline Vec cp3(const Eigen::Ref<const Mat> &A, const Eigen::Ref<const Mat> &B,
               const Eigen::Ref<const Mat> &C) {
  const Index d1 = A.rows(), d2 = B.rows(), d3 = C.rows();
  Vec out(d1 * d2 * d3);
  for (Index k = 0; k < d3; ++k) {
    MatMap slice(out.data() + k * d1 * d2, d1, d2);
    slice.noalias() = A * C.row(k).asDiagonal() * B.transpose();
  }
  return out;
}

/// Mode-1 contraction: column l is T(., B_l, C_l).
inline Mat contract_mode1(const Vec &T, const Eigen::Ref<const Mat> &B,
                          const Eigen::Ref<const Mat> &C, Index d1) {
  const Index d2 = B.rows(), d3 = C.rows();
  Mat out = Mat::Zero(d1, B.cols());
  for (Index k = 0; k < d3; ++k) {
    ConstMatMap slice(T.data() + k * d1 * d2, d1, d2);
    out.noalias() += slice * B * C.row(k).asDiagonal();
  }
  return out;
}

/// Mode-2 contraction: column l is T(A_l, ., C_l).
inline Mat contract_mode2(const Vec &T, const Eigen::Ref<const Mat> &A,
                          const Eigen::Ref<const Mat> &C, Index d2) {
  const Index d1 = A.rows(), d3 = C.rows();
  Mat out = Mat::Zero(d2, A.cols());
  for (Index k = 0; k < d3; ++k) {
    ConstMatMap slice(T.data() + k * d1 * d2, d1, d2);
    out.noalias() += slice.transpose() * A * C.row(k).asDiagonal();
  }
  return out;
}

/// Mode-3 contraction: column l is T(A_l, B_l, .).
inline Mat contract_mode3(const Vec &T, const Eigen::Ref<const Mat> &A,
                          const Eigen::Ref<const Mat> &B, Index d3) {
  const Index d1 = A.rows(), d2 = B.rows();
  Mat out(d3, A.cols());
  for (Index k = 0; k < d3; ++k) {
    ConstMatMap slice(T.data() + k * d1 * d2, d1, d2);
    out.row(k) = A.cwiseProduct(slice * B).colwise().sum();
  }
  return out;
}

inline Vec flatten(const Mat &m) {
  return Eigen::Map<const Vec>(m.data(), m.size());
}

inline Vec stack(const Mat &a, const Mat &b) {
  Vec out(a.size() + b.size());
  out << flatten(a), flatten(b);
  return out;
}

inline Vec stack(const Mat &a, const Mat &b, const Mat &c) {
  Vec out(a.size() + b.size() + c.size());
  out << flatten(a), flatten(b), flatten(c);
  return out;
}

/// (Gram + lambda I) u for lambda >= 0, from the closed forms.
inline Vec gram_apply(const ParamMap &map, const Vec &x, double lambda,
                      const Vec &u) {
  const Blocks X = blocks(map, x);
  const Blocks U = blocks(map, u);
  switch (map.kind()) {
  case MapKind::HadamardSquare:
    return (4.0 * x.array().square() * u.array()).matrix() + lambda * u;
  case MapKind::BurerMonteiro: {
    // J^T J U = (J U + (J U)^T) X with J U = U X^T + X U^T.
    const Mat G = X.a.transpose() * X.a;
    const Mat out = 2.0 * (U.a * G + X.a * (U.a.transpose() * X.a)) +
                    lambda * Mat(U.a);
    return flatten(out);
  }
  case MapKind::AsymmetricFactor: {
    const Mat top = X.a * (U.b.transpose() * X.b) +
                    U.a * (X.b.transpose() * X.b) + lambda * Mat(U.a);
    const Mat bottom = X.b * (U.a.transpose() * X.a) +
                       U.b * (X.a.transpose() * X.a) + lambda * Mat(U.b);
    return stack(top, bottom);
  }
  case MapKind::SymmetricCP: {
    const Mat G = X.a.transpose() * X.a;
    const Mat GG = G.cwiseProduct(G);
    const Mat cross = (U.a.transpose() * X.a).cwiseProduct(G);
    const Mat out = 3.0 * U.a * GG + 6.0 * X.a * cross + lambda * Mat(U.a);
    return flatten(out);
  }
  case MapKind::AsymmetricCP: {
    const Mat GW = X.a.transpose() * X.a;
    const Mat GX = X.b.transpose() * X.b;
    const Mat GY = X.c.transpose() * X.c;
    const Mat CW = U.a.transpose() * X.a;
    const Mat CX = U.b.transpose() * X.b;
    const Mat CY = U.c.transpose() * X.c;
    const Mat w = U.a * GX.cwiseProduct(GY) +
                  X.a * (CX.cwiseProduct(GY) + GX.cwiseProduct(CY)) +
                  lambda * Mat(U.a);
    const Mat xx = U.b * GW.cwiseProduct(GY) +
                   X.b * (CW.cwiseProduct(GY) + GW.cwiseProduct(CY)) +
                   lambda * Mat(U.b);
    const Mat y = U.c * GW.cwiseProduct(GX) +
                  X.c * (CW.cwiseProduct(GX) + GW.cwiseProduct(CX)) +
                  lambda * Mat(U.c);
    return stack(w, xx, y);
  }
  }
  throw ParameterError("unknown map kind");
}

} // namespace detail

/// F(x).
inline Vec eval(const ParamMap &map, const Vec &x) {
  detail::check_point(map, x, "point");
  const auto X = detail::blocks(map, x);
  switch (map.kind()) {
  case MapKind::HadamardSquare:
    return x.array().square().matrix();
  case MapKind::BurerMonteiro:
    return detail::flatten(X.a * X.a.transpose());
  case MapKind::AsymmetricFactor:
    return detail::flatten(X.a * X.b.transpose());
  case MapKind::SymmetricCP:
    return detail::cp3(X.a, X.a, X.a);
  case MapKind::AsymmetricCP:
    return detail::cp3(X.a, X.b, X.c);
  }
  throw ParameterError("unknown map kind");
}

/// Jacobian-vector product grad F(x) u.
inline Vec jvp(const ParamMap &map, const Vec &x, const Vec &u) {
  detail::check_point(map, x, "point");
  detail::check_point(map, u, "direction");
  const auto X = detail::blocks(map, x);
  const auto U = detail::blocks(map, u);
  switch (map.kind()) {
  case MapKind::HadamardSquare:
    return (2.0 * x.array() * u.array()).matrix();
  case MapKind::BurerMonteiro: {
    const Mat P = U.a * X.a.transpose();
    return detail::flatten(P + P.transpose());
  }
  case MapKind::AsymmetricFactor:
    return detail::flatten(X.a * U.b.transpose() + U.a * X.b.transpose());
  case MapKind::SymmetricCP:
    return detail::cp3(U.a, X.a, X.a) + detail::cp3(X.a, U.a, X.a) +
           detail::cp3(X.a, X.a, U.a);
  case MapKind::AsymmetricCP:
    return detail::cp3(U.a, X.b, X.c) + detail::cp3(X.a, U.b, X.c) +
           detail::cp3(X.a, X.b, U.c);
  }
  throw ParameterError("unknown map kind");
}

/// Adjoint-Jacobian-vector product grad F(x)^T w.
inline Vec vjp(const ParamMap &map, const Vec &x, const Vec &w) {
  detail::check_point(map, x, "point");
  detail::check_output(map, w, "cotangent");
  const auto X = detail::blocks(map, x);
  switch (map.kind()) {
  case MapKind::HadamardSquare:
    return (2.0 * x.array() * w.array()).matrix();
  case MapKind::BurerMonteiro: {
    const Index d = X.a.rows();
    detail::ConstMatMap Z(w.data(), d, d);
    return detail::flatten((Z + Z.transpose()) * X.a);
  }
  case MapKind::AsymmetricFactor: {
    detail::ConstMatMap Z(w.data(), X.a.rows(), X.b.rows());
    return detail::stack(Z * X.b, Z.transpose() * X.a);
  }
  case MapKind::SymmetricCP: {
    const Index d = X.a.rows();
    return detail::flatten(detail::contract_mode1(w, X.a, X.a, d) +
                           detail::contract_mode2(w, X.a, X.a, d) +
                           detail::contract_mode3(w, X.a, X.a, d));
  }
  case MapKind::AsymmetricCP:
    return detail::stack(detail::contract_mode1(w, X.b, X.c, X.a.rows()),
                         detail::contract_mode2(w, X.a, X.c, X.b.rows()),
                         detail::contract_mode3(w, X.a, X.b, X.c.rows()));
  }
  throw ParameterError("unknown map kind");
}

/// (grad F(x)^T grad F(x) + lambda I) u, evaluated in closed form.
inline Vec gram_damped_apply(const ParamMap &map, const Vec &x, double lambda,
                             const Vec &u) {
  detail::require_param(lambda > 0.0, "damping must be positive");
  detail::check_point(map, x, "point");
  detail::check_point(map, u, "direction");
  return detail::gram_apply(map, x, lambda, u);
}

/// grad F(x) as a matrix-free operator.
inline LinearOperator jacobian_operator(const ParamMap &map, const Vec &x) {
  detail::check_point(map, x, "point");
  LinearOperator op;
  op.domain_dim = map.domain_dim();
  op.codomain_dim = map.codomain_dim();
  op.apply = [map, x](const Vec &u) { return jvp(map, x, u); };
  op.adjoint_apply = [map, x](const Vec &w) { return vjp(map, x, w); };
  return op;
}

inline Mat dense_jacobian(const ParamMap &map, const Vec &x,
                          std::int64_t cap = kDefaultDenseCap) {
  return materialize_dense(jacobian_operator(map, x), cap);
}

struct Direction {
  Vec delta;
  CGResult cg;
  /// Right-hand side grad F(x)^T v of the solve.
  Vec rhs;
};

namespace detail {

/// CG solve of (Gram + lambda I) delta = grad F(x)^T v with lambda >= 0.
inline Direction preconditioned_direction(const ParamMap &map, const Vec &x,
                                          double lambda, const Vec &v,
                                          const CGSettings &cg) {
  const Vec rhs = vjp(map, x, v);
  CGResult res = cg_solve(
      [&](const Vec &u) { return gram_apply(map, x, lambda, u); }, rhs, cg);
  Vec delta = res.solution;
  return {std::move(delta), std::move(res), rhs};
}

} // namespace detail

/// Damped Gauss-Newton direction (Gram + lambda I)^{-1} grad F(x)^T v.
/// The method steps to x - gamma * delta.
inline Direction lmm_direction(const ParamMap &map, const Vec &x,
                               double lambda, const Vec &v,
                               const CGSettings &cg = {}) {
  detail::require_param(lambda > 0.0, "damping must be positive");
  detail::check_point(map, x, "point");
  detail::check_output(map, v, "subgradient");
  return detail::preconditioned_direction(map, x, lambda, v, cg);
}

enum class ProjKind { Exact, Surrogate };

struct ProjectionMode {
  ProjKind kind = ProjKind::Surrogate;
  double delta_proj = 1e-6;

  static ProjectionMode exact() { return {ProjKind::Exact, 0.0}; }
  static ProjectionMode surrogate(double delta = 1e-6) {
    return {ProjKind::Surrogate, delta};
  }
};

/// Singular values at or below this fraction of the largest are treated as
/// zero when forming the range projector.
inline constexpr double kRangeRankTol = 1e-10;

struct ProjectedNorm {
  double value = 0.0;
  int cg_iters = 0;
};

/// ||Pi^x v||, the norm of v projected onto the range of grad F(x).
///
/// Exact mode forms the dense Jacobian and projects onto its left singular
/// vectors. Surrogate mode returns sqrt(<J^T v, w>) with
/// (J^T J + eps I) w = J^T v and eps = delta_proj * lambda_current, i.e.
/// sqrt(v^T P(x, eps) v), which tends to the exact value as eps -> 0.
inline ProjectedNorm projected_subgradient_norm(
    const ParamMap &map, const Vec &x, const Vec &v, const ProjectionMode &mode,
    double lambda_current = 0.0, const CGSettings &cg = {},
    std::int64_t cap = kDefaultDenseCap) {
  detail::check_point(map, x, "point");
  detail::check_output(map, v, "subgradient");
  if (mode.kind == ProjKind::Exact) {
    const Mat J = dense_jacobian(map, x, cap);
    Eigen::BDCSVD<Mat> svd(J, Eigen::ComputeThinU);
    const Vec &s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0)
      return {0.0, 0};
    Index rank = 0;
    while (rank < s.size() && s(rank) > kRangeRankTol * s(0))
      ++rank;
    return {(svd.matrixU().leftCols(rank).transpose() * v).norm(), 0};
  }
  detail::require_param(mode.delta_proj >= 0.0 && lambda_current >= 0.0,
                        "surrogate shift must be nonnegative");
  const double eps = mode.delta_proj * lambda_current;
  const Vec g = vjp(map, x, v);
  if (g.squaredNorm() == 0.0)
    return {0.0, 0};
  const CGResult res = cg_solve(
      [&](const Vec &u) { return detail::gram_apply(map, x, eps, u); }, g, cg);
  return {std::sqrt(std::max(0.0, g.dot(res.solution))), res.iterations};
}

} // namespace lmm
