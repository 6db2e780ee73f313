// Acceptance run: one PASS/FAIL line per criterion, followed by indented
// measurements. Exits 0 unless --strict is given and a criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lmm/experiment.hpp"

using namespace lmm;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 1;

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string &what) {
    pass = pass && ok;
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
  void info(const std::string &what) { notes.push_back("info " + what); }
};

std::string fmt(const char *f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int threads() { return int(std::max(1u, std::thread::hardware_concurrency())); }

/// Steps to success, or -1 when the run did not converge.
int steps_to_success(const Trace &t) {
  return t.termination == Termination::Converged ? t.steps : -1;
}

std::string describe(const Trace &t) {
  const auto e = t.final_rel_err();
  return fmt("%s after %d steps, rel err %.3g", to_string(t.termination), t.steps,
             e ? *e : NAN);
}

Trace polyak_run(Method method, const ProblemInstance &inst, int budget,
                 std::optional<DampingRule> damping = {}, double gamma = 1.0) {
  SolverOptions opts;
  opts.max_iters = budget;
  return run(method, inst.map, inst.loss, inst.x0,
             PolyakCfg{gamma, damping.value_or(inst.default_damping), inst.gt.h_star}, opts,
             inst.gt.z_star);
}

// ---------------------------------------------------------------------------

Outcome kernel_checks() {
  Outcome out;
  for (const char *glob : {"adjoint/*", "finite_difference/*", "damped_gram/*", "direction/*"})
    for (const auto &r : run_checks(glob))
      out.expect(r.pass, fmt("%-36s %.3g <= %.0e", r.name.c_str(), r.deviation, r.threshold));
  return out;
}

Outcome spectral_oracles() {
  Outcome out;
  for (const char *glob : {"spectrum/*", "rank/*"})
    for (const auto &r : run_checks(glob))
      out.expect(r.pass, fmt("%-36s %.3g <= %.0e", r.name.c_str(), r.deviation, r.threshold));
  return out;
}

ProblemInstance overparam_instance(double init) {
  MatrixSpec spec;
  spec.d1 = 50;
  spec.r = 3;
  spec.r_star = 2;
  spec.kind = LossKind::L2;
  spec.seed = kSeed;
  spec.init_rel_err = init;
  return gen_matrix(spec);
}

Outcome overparam_factorization() {
  Outcome out;
  const ProblemInstance inst = overparam_instance(1e-2);
  const Trace lmm = polyak_run(Method::Lmm, inst, 500);
  const Trace sub = polyak_run(Method::Subgradient, inst, 500);
  const Trace gnp = polyak_run(Method::Gnp, inst, 500);
  const double lmm_err = *lmm.final_rel_err();
  const double gnp_err = gnp.final_rel_err().value_or(INFINITY);
  out.expect(lmm.termination == Termination::Converged, "lmm: " + describe(lmm));
  out.expect(*sub.final_rel_err() >= 1e-3,
             "subgradient rel err >= 1e-3 at 500: " + describe(sub));
  out.expect(gnp.termination == Termination::Diverged || gnp_err >= 1e4 * lmm_err,
             "gnp diverged or >= 1e4x worse: " + describe(gnp));

  // Same instance started ten times farther out, for comparison.
  const ProblemInstance far = overparam_instance(1e-1);
  out.info("init 1e-1 lmm: " + describe(polyak_run(Method::Lmm, far, 500)));
  out.info("init 1e-1 subgradient: " + describe(polyak_run(Method::Subgradient, far, 500)));
  out.info("init 1e-1 gnp: " + describe(polyak_run(Method::Gnp, far, 500)));
  return out;
}

ProblemInstance psd_l1_instance(Index d, Index r, double tau) {
  MatrixSpec spec;
  spec.d1 = d;
  spec.r = r;
  spec.r_star = 2;
  spec.tau = tau;
  spec.m = 2 * d * r;
  spec.kind = LossKind::L1;
  spec.seed = kSeed;
  return gen_matrix(spec);
}

struct SensingCell {
  Index d, r;
  double tau;
  int lmm = -1, sub = -1;
};

/// LMM and subgradient iteration counts for the PSD l1 sensing cells.
std::vector<SensingCell> sensing_cells(Index d, bool with_subgradient) {
  std::vector<SensingCell> cells;
  for (Index r : {2, 5})
    for (double tau : {1.0, 100.0})
      cells.push_back({d, r, tau});
  return parallel_map<SensingCell>(cells.size(), threads(), [&](std::size_t i) {
    SensingCell c = cells[i];
    const ProblemInstance inst = psd_l1_instance(c.d, c.r, c.tau);
    c.lmm = steps_to_success(polyak_run(Method::Lmm, inst, 1000));
    if (with_subgradient)
      c.sub = steps_to_success(polyak_run(Method::Subgradient, inst, 1000));
    return c;
  });
}

std::string count(int n) { return n < 0 ? "budget" : std::to_string(n); }

std::vector<SensingCell> g_d40;

Outcome condition_independence() {
  Outcome out;
  g_d40 = sensing_cells(40, true);
  for (std::size_t i = 0; i < g_d40.size(); i += 2) {
    const SensingCell &a = g_d40[i], &b = g_d40[i + 1];
    out.expect(a.lmm > 0 && b.lmm > 0 && b.lmm <= 2.0 * a.lmm,
               fmt("r=%ld lmm iterations tau=1: %s, tau=100: %s (within 2x)", long(a.r),
                   count(a.lmm).c_str(), count(b.lmm).c_str()));
    out.expect(b.sub < 0 || (a.sub > 0 && b.sub >= 5 * a.sub),
               fmt("r=%ld subgradient iterations tau=1: %s, tau=100: %s (>= 5x or budget)",
                   long(a.r), count(a.sub).c_str(), count(b.sub).c_str()));
  }
  return out;
}

Outcome dimension_independence() {
  Outcome out;
  if (g_d40.empty())
    g_d40 = sensing_cells(40, false);
  const auto d80 = sensing_cells(80, false);
  for (std::size_t i = 0; i < d80.size(); ++i) {
    const int a = g_d40[i].lmm, b = d80[i].lmm;
    const bool ok = a > 0 && b > 0 && std::max(a, b) <= 1.5 * std::min(a, b);
    out.expect(ok, fmt("r=%ld tau=%g lmm iterations d=40: %s, d=80: %s (within 1.5x)",
                       long(d80[i].r), d80[i].tau, count(a).c_str(), count(b).c_str()));
  }
  return out;
}

Outcome nnls() {
  Outcome out;
  struct Cell {
    LossKind kind;
    Index r;
    double tau;
    int lmm = -1, sub = -1;
  };
  std::vector<Cell> cells;
  for (LossKind kind : {LossKind::L2, LossKind::SquaredL2})
    for (Index r : {10, 100})
      for (double tau : {1.0, 100.0})
        cells.push_back({kind, r, tau});
  cells = parallel_map<Cell>(cells.size(), threads(), [&](std::size_t i) {
    Cell c = cells[i];
    const ProblemInstance inst =
        gen_nnls(NnlsSpec{c.r, 10, c.tau, 2 * c.r, 10.0, c.kind, kSeed});
    c.lmm = steps_to_success(polyak_run(Method::Lmm, inst, 2000));
    c.sub = steps_to_success(polyak_run(Method::Subgradient, inst, 2000));
    return c;
  });
  for (const Cell &c : cells) {
    const char *loss = c.kind == LossKind::L2 ? "l2" : "l2sq";
    out.expect(c.lmm > 0, fmt("%-4s r=%-3ld tau=%-3g lmm: %s", loss, long(c.r), c.tau,
                              count(c.lmm).c_str()));
    if (c.r == 100 || c.tau == 100.0)
      out.expect(c.sub < 0, fmt("%-4s r=%-3ld tau=%-3g subgradient fails the budget: %s", loss,
                                long(c.r), c.tau, count(c.sub).c_str()));
    else
      out.info(fmt("%-4s r=%-3ld tau=%-3g subgradient: %s", loss, long(c.r), c.tau,
                   count(c.sub).c_str()));
  }
  return out;
}

Outcome phase_transition() {
  Outcome out;
  ExperimentConfig cfg;
  cfg.problem.kind = "matrix_sym";
  cfg.problem.d1 = cfg.problem.d2 = 20;
  cfg.problem.r = cfg.problem.r_star = 2;
  cfg.problem.loss = LossKind::L1;
  cfg.solvers = {default_grid_solver()};
  cfg.seeds = {kSeed};
  cfg.transition = TransitionSpec{{80, 120, 160, 200}, {0.0, 0.1, 0.2, 0.3, 0.4, 0.5}, 20};
  const auto cells = transition_cells(cfg, threads());
  const std::size_t np = cfg.transition->p_fail_grid.size();
  auto at = [&](std::size_t mi, std::size_t pi) { return cells[mi * np + pi].successes; };

  std::string grid = "successes/20 (rows m, columns p_fail 0..0.5):";
  for (std::size_t mi = 0; mi * np < cells.size(); ++mi) {
    grid += fmt("\n       m=%-3ld", long(cells[mi * np].m));
    for (std::size_t pi = 0; pi < np; ++pi)
      grid += fmt(" %2d", at(mi, pi));
  }
  out.info(grid);

  int violations = 0;
  const std::size_t nm = cells.size() / np;
  for (std::size_t mi = 0; mi < nm; ++mi)
    for (std::size_t pi = 0; pi < np; ++pi) {
      if (pi + 1 < np && at(mi, pi + 1) > at(mi, pi) + 1)
        ++violations;
      if (mi + 1 < nm && at(mi + 1, pi) < at(mi, pi) - 1)
        ++violations;
    }
  out.expect(violations == 0,
             fmt("monotone in p_fail and m with one-trial slack: %d violations", violations));
  const double clean = at(2, 0) / 20.0;
  out.expect(clean >= 0.9, fmt("p_fail=0, m=4dr=160: rate %.2f >= 0.9", clean));
  for (std::size_t mi = 0; mi < nm; ++mi)
    out.expect(at(mi, np - 1) <= 2,
               fmt("p_fail=0.5, m=%ld: rate %.2f <= 0.1", long(cells[mi * np].m),
                   at(mi, np - 1) / 20.0));
  return out;
}

Outcome tensors() {
  Outcome out;
  for (bool sym : {true, false}) {
    std::vector<std::pair<int, int>> counts; // (lmm, subgradient) per tau
    for (double tau : {1.0, 100.0}) {
      TensorSpec spec;
      spec.symmetric = sym;
      spec.tau = tau;
      spec.seed = kSeed;
      const ProblemInstance inst = gen_tensor(spec);
      counts.emplace_back(
          steps_to_success(polyak_run(Method::Lmm, inst, 1000, LossProxy{1e-3, 1.0}, 0.5)),
          steps_to_success(polyak_run(Method::Subgradient, inst, 1000)));
    }
    const char *name = sym ? "symmetric " : "asymmetric";
    const int a = counts[0].first, b = counts[1].first, s = counts[1].second;
    out.expect(a > 0 && b > 0 && b <= 2 * a,
               fmt("%s lmm iterations tau=1: %s, tau=100: %s (within 2x)", name,
                   count(a).c_str(), count(b).c_str()));
    out.expect(s < 0 || (b > 0 && s >= 3 * b),
               fmt("%s subgradient at tau=100: %s (>= 3x lmm or budget)", name,
                   count(s).c_str()));
  }
  return out;
}

Outcome rate_bound() {
  Outcome out;
  const double ceiling = std::sqrt(1.0 - 1.0 / 8.0) + 0.05;
  std::vector<std::pair<std::string, ProblemInstance>> cases;
  {
    const ParamMap map = ParamMap::hadamard(2);
    const Vec x_star{{1.0, 0.5}};
    const Vec z_star = eval(map, x_star);
    OuterLoss loss(LossKind::L2, MeasurementMap::identity(2), z_star);
    cases.emplace_back("hadamard z*=(1, 1/4)",
                       ProblemInstance{map, loss, init_relative(map, x_star, z_star, 1e-2, kSeed),
                                       GroundTruth{x_star, z_star, 0.0}, ProblemMeta{},
                                       LossProxy{1.0, 1.0}});
  }
  for (Index r : {2, 3}) {
    MatrixSpec spec;
    spec.d1 = 20;
    spec.r = r;
    spec.r_star = 2;
    spec.kind = LossKind::L2;
    spec.seed = kSeed;
    cases.emplace_back(fmt("burer-monteiro d=20 r=%ld r*=2", long(r)), gen_matrix(spec));
  }
  for (auto &[name, inst] : cases) {
    for (const DampingRule &damping : {DampingRule{ExactDistance{1.0}}, inst.default_damping}) {
      SolverOptions opts;
      opts.max_iters = 500;
      opts.success_rel_err = 1e-13;
      const Trace tr = run(Method::Lmm, inst.map, inst.loss, inst.x0,
                           PolyakCfg{1.0, damping, 0.0}, opts, inst.gt.z_star);
      int total = 0, within = 0;
      double worst = 0.0;
      for (std::size_t k = 0; k + 1 < tr.records.size(); ++k) {
        const double e0 = *tr.records[k].rel_err_z, e1 = *tr.records[k + 1].rel_err_z;
        if (e0 >= 1e-3)
          continue;
        ++total;
        within += e1 / e0 <= ceiling;
        worst = std::max(worst, e1 / e0);
      }
      const bool exact = std::holds_alternative<ExactDistance>(damping);
      out.expect(total > 0 && within >= 0.9 * total,
                 fmt("%s, %s damping: %d/%d steps contract by <= %.4f (worst %.3g); %s",
                     name.c_str(), exact ? "exact-distance" : "loss-proxy", within, total,
                     ceiling, worst, to_string(tr.termination)));
    }
  }
  return out;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  Outcome out;
  const fs::path root = fs::temp_directory_path() / "lmm_acceptance_determinism";
  fs::remove_all(root);
  const ExperimentConfig run_cfg = parse_config_text(R"({
    "problem": {"kind": "matrix_sym", "d": 10, "r": 3, "r_star": 2, "tau": 10, "m": 120,
                "loss": "l1", "p_fail": 0.1},
    "solvers": [{"method": "lmm", "options": {"max_iters": 300}},
                {"method": "lmm", "config": {"variant": "geometric", "gamma": 1e-4,
                 "lambda": 1e-5, "q": 0.97}, "options": {"max_iters": 300}},
                {"method": "subgradient", "options": {"max_iters": 300}},
                {"method": "gnp", "options": {"max_iters": 300}}],
    "seeds": [1, 2, 3]
  })");
  const ExperimentConfig grid_cfg = parse_config_text(R"({
    "problem": {"kind": "matrix_sym", "d": 8, "r": 2, "m": 64, "loss": "l1"},
    "transition": {"m_grid": [32, 48, 64], "p_fail_grid": [0, 0.2, 0.5], "trials": 3},
    "sensitivity": {"q_grid": [0.95, 0.97], "gamma_grid": [1e-1, 1e-3, 1e-6], "trials": 3,
                    "cap": 400},
    "seeds": [9]
  })");

  auto same_dirs = [&](const fs::path &a, const fs::path &b, std::size_t expected) {
    std::size_t n = 0;
    bool ok = true;
    for (const auto &e : fs::directory_iterator(a)) {
      ++n;
      ok = ok && slurp(e.path()) == slurp(b / e.path().filename());
    }
    return ok && n == expected;
  };

  const int t = std::max(2, threads());
  cmd_run(run_cfg, root / "run_a", t);
  cmd_run(run_cfg, root / "run_b", t);
  cmd_run(run_cfg, root / "run_c", 1);
  out.expect(same_dirs(root / "run_a", root / "run_b", 12), "run: repeated, same threads");
  out.expect(same_dirs(root / "run_a", root / "run_c", 12),
             fmt("run: %d threads against 1", t));
  for (const auto &[name, cmd] :
       {std::pair<std::string, decltype(&cmd_transition)>{"transition", &cmd_transition},
        {"sensitivity", &cmd_sensitivity}}) {
    cmd(grid_cfg, root / (name + "_a"), t);
    cmd(grid_cfg, root / (name + "_b"), t);
    cmd(grid_cfg, root / (name + "_c"), 1);
    out.expect(same_dirs(root / (name + "_a"), root / (name + "_b"), 1),
               name + ": repeated, same threads");
    out.expect(same_dirs(root / (name + "_a"), root / (name + "_c"), 1),
               fmt("%s: %d threads against 1", name.c_str(), t));
  }
  fs::remove_all(root);
  return out;
}

struct Criterion {
  int id;
  const char *title;
  double limit_s; // 0: no runtime limit
  std::function<Outcome()> body;
};

} // namespace

int main(int argc, char **argv) {
  const bool strict = argc > 1 && std::strcmp(argv[1], "--strict") == 0;
  const std::vector<Criterion> criteria{
      {1, "kernel correctness", 30, kernel_checks},
      {2, "spectral and rank oracles", 60, spectral_oracles},
      {3, "overparameterized factorization (d=50, r*=2, r=3)", 20, overparam_factorization},
      {4, "condition-number independence (PSD l1 sensing, d=40)", 120, condition_independence},
      {5, "dimension independence (d=40 vs d=80)", 240, dimension_independence},
      {6, "nonnegative least squares", 60, nnls},
      {7, "outlier phase transition (d=20)", 600, phase_transition},
      {8, "tensor factorization (d=20)", 120, tensors},
      {9, "contraction-rate ceiling", 5, rate_bound},
      {10, "determinism", 0, determinism},
  };
  int failed = 0;
  for (const Criterion &c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.body();
    } catch (const std::exception &e) {
      o.expect(false, std::string("threw: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0)
      o.expect(secs < c.limit_s, fmt("runtime %.1f s < %.0f s", secs, c.limit_s));
    failed += !o.pass;
    std::printf("%s criterion %d: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.title,
                secs);
    for (const auto &n : o.notes)
      std::printf("    %s\n", n.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", int(criteria.size()) - failed, criteria.size());
  return strict && failed > 0 ? 1 : 0;
}
