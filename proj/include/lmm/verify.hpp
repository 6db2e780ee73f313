#pragma once

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lmm/param_maps.hpp"
#include "lmm/rng.hpp"
#include "lmm/spectral.hpp"

namespace lmm {

/// Jacobian actions the checks exercise. Defaults to the library kernels;
/// tests swap in perturbed ones to confirm that failures are reported.
struct VerifyKernels {
  std::function<Vec(const ParamMap &, const Vec &, const Vec &)> jvp =
      [](const ParamMap &m, const Vec &x, const Vec &u) { return lmm::jvp(m, x, u); };
  std::function<Vec(const ParamMap &, const Vec &, const Vec &)> vjp =
      [](const ParamMap &m, const Vec &x, const Vec &w) { return lmm::vjp(m, x, w); };
};

struct CheckResult {
  std::string name;
  bool pass = false;
  double deviation = 0.0;
  double threshold = 0.0;
};

struct Check {
  std::string name;
  double threshold;
  /// Returns the measured deviation; the check passes when it is <= threshold.
  std::function<double(const VerifyKernels &)> measure;
};

namespace detail {

inline std::vector<std::pair<std::string, ParamMap>> verify_maps() {
  return {{"hadamard", ParamMap::hadamard(6)},
          {"burer_monteiro", ParamMap::burer_monteiro(5, 3)},
          {"asymmetric_factor", ParamMap::asymmetric_factor(4, 5, 2)},
          {"symmetric_cp", ParamMap::symmetric_cp(4, 2)},
          {"asymmetric_cp", ParamMap::asymmetric_cp(3, 4, 5, 2)}};
}

inline Mat kernel_jacobian(const VerifyKernels &k, const ParamMap &map, const Vec &x) {
  Mat J(map.codomain_dim(), map.domain_dim());
  Vec e = Vec::Zero(map.domain_dim());
  for (Index j = 0; j < J.cols(); ++j) {
    e(j) = 1.0;
    J.col(j) = k.jvp(map, x, e);
    e(j) = 0.0;
  }
  return J;
}

inline Vec box_unit(Rng &rng, Index n) {
  Vec v(n);
  for (Index i = 0; i < n; ++i)
    v(i) = 2.0 * rng.uniform() - 1.0;
  return v / v.norm();
}

inline double adjoint_deviation(const VerifyKernels &k, const ParamMap &map) {
  Rng rng(derive_seed(101, std::uint64_t(map.kind())));
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Vec x = rng.gaussian_vector(map.domain_dim());
    const Vec u = rng.gaussian_vector(map.domain_dim());
    const Vec w = rng.gaussian_vector(map.codomain_dim());
    const Vec Ju = k.jvp(map, x, u);
    const Vec Jtw = k.vjp(map, x, w);
    const double scale = std::max(Ju.norm() * w.norm(), u.norm() * Jtw.norm());
    worst = std::max(worst, std::abs(Ju.dot(w) - u.dot(Jtw)) / scale);
  }
  return worst;
}

inline double fd_deviation(const VerifyKernels &k, const ParamMap &map) {
  Rng rng(derive_seed(202, std::uint64_t(map.kind())));
  const double t = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x = box_unit(rng, map.domain_dim());
    const Vec u = box_unit(rng, map.domain_dim());
    const Vec fd = (eval(map, x + t * u) - eval(map, x - t * u)) / (2 * t);
    worst = std::max(worst, (fd - k.jvp(map, x, u)).norm());
  }
  return worst;
}

inline double gram_deviation(const VerifyKernels &k, const ParamMap &map) {
  Rng rng(derive_seed(303, std::uint64_t(map.kind())));
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x = rng.gaussian_vector(map.domain_dim());
    const Vec u = rng.gaussian_vector(map.domain_dim());
    const double lambda = 0.01 + rng.uniform();
    const Vec composed = k.vjp(map, x, k.jvp(map, x, u)) + lambda * u;
    const Vec closed = gram_damped_apply(map, x, lambda, u);
    worst = std::max(worst, (closed - composed).norm() / composed.norm());
  }
  return worst;
}

inline double direction_deviation(const VerifyKernels &k, const ParamMap &map) {
  Rng rng(derive_seed(404, std::uint64_t(map.kind())));
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const Vec x = rng.gaussian_vector(map.domain_dim());
    const Vec v = rng.gaussian_vector(map.codomain_dim());
    const double lambda = std::pow(10.0, -3.0 * rng.uniform());
    const Mat J = kernel_jacobian(k, map, x);
    const Mat A = J.transpose() * J + lambda * Mat::Identity(J.cols(), J.cols());
    const Vec expected = A.ldlt().solve(J.transpose() * v);
    const Vec got = lmm_direction(map, x, lambda, v).delta;
    worst = std::max(worst, (got - expected).norm() / expected.norm());
  }
  return worst;
}

/// Largest violation of ||P v|| <= ||v|| and ||P v|| <= ||Pi v||, relative
/// to ||v||, where P is the damped projection built from the kernels.
inline double nonexpansive_violation(const VerifyKernels &k, const ParamMap &map) {
  Rng rng(derive_seed(505, std::uint64_t(map.kind())));
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Vec x = rng.gaussian_vector(map.domain_dim());
    const Vec v = rng.gaussian_vector(map.codomain_dim());
    const double lambda = std::pow(10.0, -4.0 + 4.0 * rng.uniform());
    const Mat J = kernel_jacobian(k, map, x);
    const Mat A = J.transpose() * J + lambda * Mat::Identity(J.cols(), J.cols());
    const double pv = (J * A.ldlt().solve(J.transpose() * v)).norm();
    Eigen::BDCSVD<Mat> svd(J, Eigen::ComputeThinU);
    const Index rank = numeric_rank(svd.singularValues(), kRangeRankTol);
    const double piv = (svd.matrixU().leftCols(rank).transpose() * v).norm();
    worst = std::max({worst, (pv - v.norm()) / v.norm(), (pv - piv) / v.norm()});
  }
  return std::max(0.0, worst);
}

inline double bm_spectrum_deviation() {
  Rng rng(606);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const Index d = 2 + Index(rng.below(7)), r = 1 + Index(rng.below(4));
    worst = std::max(worst, check_bm_spectrum(rng.gaussian(d, r)).max_abs_deviation);
  }
  return worst;
}

inline double asym_spectrum_deviation() {
  Rng rng(707);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const Index d1 = 2 + Index(rng.below(7)), d2 = 2 + Index(rng.below(7));
    const Index r = 1 + Index(rng.below(4));
    worst = std::max(worst, check_asym_spectrum(rng.gaussian(d1, r), rng.gaussian(d2, r))
                                .max_abs_deviation);
  }
  return worst;
}

/// Largest |numeric rank - predicted rank| over 50 random full-rank instances.
inline double rank_mismatch(MapKind kind) {
  Rng rng(derive_seed(808, std::uint64_t(kind)));
  Index worst = 0;
  for (int t = 0; t < 50; ++t) {
    ParamMap map = ParamMap::hadamard(1);
    if (kind == MapKind::SymmetricCP)
      map = ParamMap::symmetric_cp(3 + Index(rng.below(4)), 1 + Index(rng.below(3)));
    else if (kind == MapKind::AsymmetricCP)
      map = ParamMap::asymmetric_cp(2 + Index(rng.below(4)), 2 + Index(rng.below(4)),
                                    2 + Index(rng.below(4)), 1 + Index(rng.below(2)));
    else {
      const Index d = 2 + Index(rng.below(7));
      map = ParamMap::burer_monteiro(d, 1 + Index(rng.below(std::uint64_t(d))));
    }
    const RankReport rep = check_cp_rank(map, rng.gaussian_vector(map.domain_dim()));
    worst = std::max(worst, std::abs(rep.numeric_rank - rep.predicted));
  }
  return double(worst);
}

/// Largest violation of sigma_j^2 >= s(rho) ||z - z*|| for the squared-variable
/// map over seeded points inside the delta(rho) ball, relative to s ||z - z*||.
inline double hadamard_alignment_violation() {
  Rng rng(909);
  double worst = 0.0;
  for (double rho : {0.1, 0.3}) {
    for (int t = 0; t < 100; ++t) {
      const Index r = 3 + Index(rng.below(6));
      Vec z_star(r);
      for (Index i = 0; i < r; ++i)
        z_star(i) = 0.1 + rng.uniform();
      const double delta = hadamard_alignment_delta(z_star, rho, r);
      const double radius = delta * (0.01 + 0.98 * rng.uniform());
      const Vec z = (z_star + radius * rng.unit_vector(r)).cwiseMax(0.0);
      if ((z - z_star).norm() == 0.0)
        continue;
      const ParamMap map = ParamMap::hadamard(r);
      const AlignmentReport rep = weak_alignment_probe(map, z.cwiseSqrt(), z_star, rho);
      const double need = hadamard_alignment_s(rho, r, r) * (z - z_star).norm();
      worst = std::max(worst, (need - rep.sigma_j_sq) / need);
    }
  }
  return std::max(0.0, worst);
}

} // namespace detail

/// Every oracle behind the verify command. Built once, never empty.
inline const std::vector<Check> &check_registry() {
  static const std::vector<Check> registry = [] {
    std::vector<Check> out;
    for (const auto &[name, map] : detail::verify_maps()) {
      const ParamMap m = map;
      out.push_back({"adjoint/" + name, 1e-10,
                     [m](const VerifyKernels &k) { return detail::adjoint_deviation(k, m); }});
      out.push_back({"finite_difference/" + name, 1e-6,
                     [m](const VerifyKernels &k) { return detail::fd_deviation(k, m); }});
      out.push_back({"damped_gram/" + name, 1e-12,
                     [m](const VerifyKernels &k) { return detail::gram_deviation(k, m); }});
      out.push_back({"direction/" + name, 1e-8,
                     [m](const VerifyKernels &k) { return detail::direction_deviation(k, m); }});
      out.push_back({"nonexpansive/" + name, 1e-10, [m](const VerifyKernels &k) {
                       return detail::nonexpansive_violation(k, m);
                     }});
    }
    out.push_back({"spectrum/burer_monteiro", 1e-8,
                   [](const VerifyKernels &) { return detail::bm_spectrum_deviation(); }});
    out.push_back({"spectrum/asymmetric_factor", 1e-8,
                   [](const VerifyKernels &) { return detail::asym_spectrum_deviation(); }});
    out.push_back({"rank/symmetric_cp", 0.0, [](const VerifyKernels &) {
                     return detail::rank_mismatch(MapKind::SymmetricCP);
                   }});
    out.push_back({"rank/asymmetric_cp", 0.0, [](const VerifyKernels &) {
                     return detail::rank_mismatch(MapKind::AsymmetricCP);
                   }});
    out.push_back({"rank/burer_monteiro", 0.0, [](const VerifyKernels &) {
                     return detail::rank_mismatch(MapKind::BurerMonteiro);
                   }});
    out.push_back({"alignment/hadamard", 0.0, [](const VerifyKernels &) {
                     return detail::hadamard_alignment_violation();
                   }});
    return out;
  }();
  return registry;
}

/// Runs the checks whose names match the shell glob `filter`. A check that
/// throws counts as failed with an infinite deviation.
inline std::vector<CheckResult> run_checks(const std::string &filter = "*",
                                           const VerifyKernels &kernels = {}) {
  std::vector<CheckResult> out;
  for (const Check &c : check_registry()) {
    if (fnmatch(filter.c_str(), c.name.c_str(), 0) != 0)
      continue;
    CheckResult res{c.name, false, INFINITY, c.threshold};
    try {
      res.deviation = c.measure(kernels);
      res.pass = std::isfinite(res.deviation) && res.deviation <= c.threshold;
    } catch (const std::exception &) {
      res.pass = false;
    }
    out.push_back(res);
  }
  return out;
}

} // namespace lmm
