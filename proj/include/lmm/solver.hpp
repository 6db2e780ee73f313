#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "lmm/errors.hpp"
#include "lmm/losses.hpp"
#include "lmm/operators.hpp"
#include "lmm/param_maps.hpp"

namespace lmm {

/// lambda_k = C * ||z_k - z*||; needs the ground truth.
struct ExactDistance {
  double C;
};

/// lambda_k = c * f(x_k)^p, evaluated before the step.
struct LossProxy {
  double c;
  double p = 1.0;
};

using DampingRule = std::variant<ExactDistance, LossProxy>;

/// gamma_k = gamma (h(z_k) - h*) / ||Pi v_k||^2 with damping from a rule.
struct PolyakCfg {
  double gamma = 1.0;
  DampingRule damping = LossProxy{1e-5, 1.0};
  double h_star = 0.0;
};

/// gamma_k = gamma q^k, lambda_k = lambda q^k.
struct GeometricCfg {
  double gamma;
  double lambda;
  double q;
};

/// gamma_k = gamma, lambda_k = lambda q^k.
struct ConstantCfg {
  double gamma;
  double lambda;
  double q;
};

using StepsizeConfig = std::variant<PolyakCfg, GeometricCfg, ConstantCfg>;

enum class Method { Lmm, Subgradient, Gnp };

inline const char *to_string(Method m) {
  switch (m) {
  case Method::Lmm:
    return "lmm";
  case Method::Subgradient:
    return "subgradient";
  case Method::Gnp:
    return "gnp";
  }
  return "unknown";
}

/// Relative error at or above this value counts as divergence.
inline constexpr double kDivergenceRelErr = 1e6;

struct SolverOptions {
  int max_iters = 500;
  double success_rel_err = 1e-8;
  CGSettings cg;
  ProjectionMode proj;
  int record_every = 1;
};

struct IterationRecord {
  int k = 0;
  double f = 0.0;
  std::optional<double> rel_err_z;
  double gamma_k = 0.0;
  double lambda_k = 0.0;
  /// Norm used in the Polyak denominator; empty when no step was taken or
  /// the configuration does not need it.
  std::optional<double> proj_norm;
  int cg_iters = 0;
  /// False for the terminal record, which describes an iterate only.
  bool step_taken = false;
};

enum class Termination { Converged, Budget, Diverged };

inline const char *to_string(Termination t) {
  switch (t) {
  case Termination::Converged:
    return "converged";
  case Termination::Budget:
    return "budget";
  case Termination::Diverged:
    return "diverged";
  }
  return "unknown";
}

/// Per-iteration history of a run. Record k describes iterate x_k and the
/// step taken from it; the terminal record only carries f and rel_err_z.
struct Trace {
  std::vector<IterationRecord> records;
  Termination termination = Termination::Budget;
  std::string reason;
  Vec final_x;
  int steps = 0;

  /// Relative error of the last evaluated iterate.
  std::optional<double> final_rel_err() const {
    return records.empty() ? std::nullopt : records.back().rel_err_z;
  }
};

inline double relative_error(const Vec &z, const Vec &z_star) {
  detail::require_dim(z.size() == z_star.size(),
                      "relative_error arguments differ in length");
  const double denom = z_star.norm();
  detail::require_param(denom > 0.0, "relative error needs nonzero z*");
  return (z - z_star).norm() / denom;
}

namespace detail {

/// Baselines ignore the damping fields, so they are only checked for LMM.
inline void validate_config(const StepsizeConfig &cfg, bool has_truth,
                            bool damped) {
  std::visit(
      [has_truth, damped](const auto &c) {
        using C = std::decay_t<decltype(c)>;
        require_param(c.gamma > 0.0, "gamma must be positive");
        if constexpr (std::is_same_v<C, PolyakCfg>) {
          require_param(std::isfinite(c.h_star), "Polyak needs a finite h*");
          if (!damped)
            return;
          if (const auto *e = std::get_if<ExactDistance>(&c.damping)) {
            require_param(e->C > 0.0, "damping constant C must be positive");
            require_param(has_truth,
                          "exact-distance damping needs the ground truth");
          } else {
            const auto &lp = std::get<LossProxy>(c.damping);
            require_param(lp.c > 0.0, "damping constant c must be positive");
            require_param(lp.p > 0.0, "damping exponent p must be positive");
          }
        } else {
          if (damped)
            require_param(c.lambda > 0.0, "lambda must be positive");
          require_param(c.q > 0.0 && c.q < 1.0, "q must lie in (0, 1)");
        }
      },
      cfg);
}

inline double damping_for(const StepsizeConfig &cfg, int k, double f,
                          const Vec &z, const std::optional<Vec> &z_star) {
  return std::visit(
      [&](const auto &c) -> double {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, PolyakCfg>) {
          if (const auto *e = std::get_if<ExactDistance>(&c.damping))
            return e->C * (z - *z_star).norm();
          const auto &lp = std::get<LossProxy>(c.damping);
          return lp.c * std::pow(f, lp.p);
        } else {
          return c.lambda * std::pow(c.q, k);
        }
      },
      cfg);
}

/// Zero-gap guard for the Polyak step. For the squared loss the gap is
/// compared on the residual-norm scale sqrt(2 (f - h*)), so the guard does not
/// fire while the residual is still far above roundoff.
inline bool gap_closed(LossKind kind, double f, double h_star) {
  const double gap = f - h_star;
  const double scale = 1e-15 * std::max(1.0, h_star);
  if (kind == LossKind::SquaredL2)
    return std::sqrt(std::max(0.0, 2.0 * gap)) <= scale;
  return gap <= scale;
}

inline Trace run_method(Method method, const ParamMap &map,
                        const OuterLoss &loss, const Vec &x0,
                        const StepsizeConfig &cfg, const SolverOptions &opts,
                        const std::optional<Vec> &z_star) {
  require_dim(loss.signal_dim() == map.codomain_dim(),
              "loss signal dimension must match the map codomain");
  require_dim(x0.size() == map.domain_dim(), "initial point has wrong length");
  if (z_star)
    require_dim(z_star->size() == map.codomain_dim(),
                "ground truth has wrong length");
  require_param(opts.max_iters >= 0, "max_iters must be nonnegative");
  require_param(opts.record_every >= 1, "record_every must be positive");
  validate_config(cfg, z_star.has_value(), method == Method::Lmm);

  const auto *polyak = std::get_if<PolyakCfg>(&cfg);
  Trace trace;
  Vec x = x0;
  if (opts.max_iters == 0) {
    trace.final_x = x;
    return trace;
  }

  for (int k = 0;; ++k) {
    const Vec z = eval(map, x);
    IterationRecord rec;
    rec.k = k;
    rec.f = loss_value(loss, z);
    if (z_star)
      rec.rel_err_z = relative_error(z, *z_star);

    auto stop = [&](Termination t, std::string reason) {
      trace.records.push_back(rec);
      trace.termination = t;
      trace.reason = std::move(reason);
      trace.final_x = x;
      trace.steps = k;
      return trace;
    };

    if (!std::isfinite(rec.f))
      return stop(Termination::Diverged, "non-finite loss");
    if (rec.rel_err_z && !(*rec.rel_err_z <= kDivergenceRelErr))
      return stop(Termination::Diverged, "relative error above 1e6");
    if (rec.rel_err_z && *rec.rel_err_z <= opts.success_rel_err)
      return stop(Termination::Converged, "relative error below threshold");
    if (polyak && gap_closed(loss.kind, rec.f, polyak->h_star)) {
      if (!rec.rel_err_z)
        return stop(Termination::Converged, "optimal value reached");
      return stop(Termination::Budget,
                  "optimality gap closed above the error threshold");
    }
    if (k == opts.max_iters)
      return stop(Termination::Budget, "iteration budget exhausted");

    const Vec v = loss_subgradient(loss, z);

    double lambda = 0.0;
    if (method == Method::Lmm) {
      lambda = damping_for(cfg, k, rec.f, z, z_star);
      if (!(lambda > 0.0)) {
        if (polyak && std::holds_alternative<ExactDistance>(polyak->damping) &&
            lambda == 0.0)
          return stop(Termination::Converged, "zero distance to solution");
        return stop(Termination::Diverged, "non-positive damping");
      }
    }
    rec.lambda_k = lambda;

    Vec step;
    double rhs_dot_step = 0.0;
    if (method == Method::Subgradient) {
      step = vjp(map, x, v);
      rec.proj_norm = step.norm();
    } else {
      try {
        Direction dir =
            preconditioned_direction(map, x, lambda, v, opts.cg);
        rec.cg_iters = dir.cg.iterations;
        rhs_dot_step = dir.rhs.dot(dir.delta);
        step = std::move(dir.delta);
      } catch (const NumericalBreakdown &e) {
        return stop(Termination::Diverged, e.what());
      }
    }

    if (polyak) {
      if (method != Method::Subgradient) {
        const ProjectionMode &mode = opts.proj;
        if (mode.kind == ProjKind::Surrogate &&
            mode.delta_proj * lambda == lambda) {
          // Same shifted system as the direction solve.
          rec.proj_norm = std::sqrt(std::max(0.0, rhs_dot_step));
        } else {
          try {
            const ProjectedNorm pn = projected_subgradient_norm(
                map, x, v, mode, lambda, opts.cg);
            rec.proj_norm = pn.value;
            rec.cg_iters += pn.cg_iters;
          } catch (const NumericalBreakdown &e) {
            return stop(Termination::Diverged, e.what());
          }
        }
      }
      const double pn = *rec.proj_norm;
      if (!(pn > 0.0) || !std::isfinite(pn))
        return stop(Termination::Diverged, "zero projected subgradient");
      rec.gamma_k = polyak->gamma * (rec.f - polyak->h_star) / (pn * pn);
    } else if (const auto *g = std::get_if<GeometricCfg>(&cfg)) {
      rec.gamma_k = g->gamma * std::pow(g->q, k);
    } else {
      rec.gamma_k = std::get<ConstantCfg>(cfg).gamma;
    }

    rec.step_taken = true;
    if (k % opts.record_every == 0)
      trace.records.push_back(rec);
    x -= rec.gamma_k * step;
  }
}

} // namespace detail

/// Damped preconditioned subgradient method: x_{k+1} = x_k - gamma_k *
/// (J^T J + lambda_k I)^{-1} J^T v_k with v_k in the subdifferential of h.
inline Trace lmm_run(const ParamMap &map, const OuterLoss &loss, const Vec &x0,
                     const StepsizeConfig &cfg, const SolverOptions &opts,
                     const std::optional<Vec> &z_star = std::nullopt) {
  return detail::run_method(Method::Lmm, map, loss, x0, cfg, opts, z_star);
}

/// Plain subgradient method on h o F; damping fields are ignored.
inline Trace subgradient_run(const ParamMap &map, const OuterLoss &loss,
                             const Vec &x0, const StepsizeConfig &cfg,
                             const SolverOptions &opts,
                             const std::optional<Vec> &z_star = std::nullopt) {
  detail::require_param(!std::holds_alternative<ConstantCfg>(cfg),
                        "subgradient baseline takes Polyak or geometric steps");
  return detail::run_method(Method::Subgradient, map, loss, x0, cfg, opts,
                            z_star);
}

/// Undamped Gauss-Newton preconditioned subgradient method (lambda_k = 0).
/// A singular Gram surfaces as a Diverged trace, not an exception.
inline Trace gnp_run(const ParamMap &map, const OuterLoss &loss, const Vec &x0,
                     const StepsizeConfig &cfg, const SolverOptions &opts,
                     const std::optional<Vec> &z_star = std::nullopt) {
  return detail::run_method(Method::Gnp, map, loss, x0, cfg, opts, z_star);
}

inline Trace run(Method method, const ParamMap &map, const OuterLoss &loss,
                 const Vec &x0, const StepsizeConfig &cfg,
                 const SolverOptions &opts,
                 const std::optional<Vec> &z_star = std::nullopt) {
  switch (method) {
  case Method::Lmm:
    return lmm_run(map, loss, x0, cfg, opts, z_star);
  case Method::Subgradient:
    return subgradient_run(map, loss, x0, cfg, opts, z_star);
  case Method::Gnp:
    return gnp_run(map, loss, x0, cfg, opts, z_star);
  }
  throw ParameterError("unknown method");
}

} // namespace lmm
