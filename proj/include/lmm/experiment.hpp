#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lmm/errors.hpp"
#include "lmm/problems.hpp"
#include "lmm/rng.hpp"
#include "lmm/solver.hpp"
#include "lmm/verify.hpp"

namespace lmm {

using Json = nlohmann::json;

struct ProblemConfig {
  std::string kind = "matrix_sym";
  Index d1 = 0, d2 = 0, d3 = 0;
  Index r = 0, r_star = 0;
  double tau = 1.0;
  /// Empty for the identity map.
  std::optional<Index> m;
  LossKind loss = LossKind::L1;
  double p_fail = 0.0;
  double kappa_A = 10.0;
  double init_rel_err = kDefaultInitRelErr;
};

enum class Variant { Polyak, Geometric, Constant };

struct SolverSpec {
  Method method = Method::Lmm;
  Variant variant = Variant::Polyak;
  double gamma = 1.0;
  double lambda = 0.0;
  double q = 0.0;
  /// Empty: the generator's default damping for the loss.
  std::optional<DampingRule> damping;
  /// Empty: the instance's optimal value.
  std::optional<double> h_star;
  SolverOptions options;
};

struct TransitionSpec {
  std::vector<Index> m_grid;
  std::vector<double> p_fail_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  int trials = 20;
};

struct SensitivitySpec {
  std::vector<double> q_grid{0.95, 0.96, 0.97};
  std::vector<double> gamma_grid{1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8};
  double lambda = 1e-5;
  int trials = 20;
  int cap = 1000;
};

struct ExperimentConfig {
  ProblemConfig problem;
  std::vector<SolverSpec> solvers;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "out";
  std::optional<TransitionSpec> transition;
  std::optional<SensitivitySpec> sensitivity;
};

// ---------------------------------------------------------------------------
// Config parsing. Every failure names the offending field.

namespace detail {

class Reader {
public:
  Reader(const Json &j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError(path_, "expected an object");
  }

  /// Rejects keys outside `allowed`, so typos do not pass silently.
  void only(std::initializer_list<const char *> allowed) const {
    for (const auto &item : j_.items()) {
      bool ok = false;
      for (const char *a : allowed)
        ok = ok || item.key() == a;
      if (!ok)
        throw ConfigError(at(item.key()), "unknown field");
    }
  }

  bool has(const char *key) const { return j_.contains(key); }
  const Json &raw(const char *key) const { return j_.at(key); }
  std::string at(const std::string &key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  double number(const char *key, std::optional<double> fallback = {}) const {
    if (!has(key)) {
      if (fallback)
        return *fallback;
      throw ConfigError(at(key), "missing required field");
    }
    const Json &v = j_.at(key);
    if (!v.is_number())
      throw ConfigError(at(key), "expected a number");
    const double out = v.get<double>();
    if (!std::isfinite(out))
      throw ConfigError(at(key), "expected a finite number");
    return out;
  }

  Index integer(const char *key, std::optional<Index> fallback = {}) const {
    if (!has(key)) {
      if (fallback)
        return *fallback;
      throw ConfigError(at(key), "missing required field");
    }
    return as_integer(j_.at(key), at(key));
  }

  std::string string(const char *key, std::optional<std::string> fallback = {}) const {
    if (!has(key)) {
      if (fallback)
        return *fallback;
      throw ConfigError(at(key), "missing required field");
    }
    const Json &v = j_.at(key);
    if (!v.is_string())
      throw ConfigError(at(key), "expected a string");
    return v.get<std::string>();
  }

  static Index as_integer(const Json &v, const std::string &path) {
    if (!v.is_number_integer())
      throw ConfigError(path, "expected an integer");
    return v.get<Index>();
  }

private:
  const Json &j_;
  std::string path_;
};

inline void check(bool ok, const std::string &path, const std::string &what) {
  if (!ok)
    throw ConfigError(path, what);
}

inline LossKind parse_loss(const std::string &s, const std::string &path) {
  if (s == "l2sq")
    return LossKind::SquaredL2;
  if (s == "l2")
    return LossKind::L2;
  if (s == "l1")
    return LossKind::L1;
  throw ConfigError(path, "expected one of l2sq, l2, l1");
}

inline Method parse_method(const std::string &s, const std::string &path) {
  if (s == "lmm")
    return Method::Lmm;
  if (s == "subgradient")
    return Method::Subgradient;
  if (s == "gnp")
    return Method::Gnp;
  throw ConfigError(path, "expected one of lmm, subgradient, gnp");
}

inline ProblemConfig parse_problem(const Json &j) {
  const Reader rd(j, "problem");
  rd.only({"kind", "d", "d1", "d2", "d3", "r", "r_star", "tau", "m", "loss", "p_fail",
           "kappa_A", "init_rel_err"});
  ProblemConfig p;
  p.kind = rd.string("kind");
  const std::set<std::string> kinds{"nnls", "matrix_sym", "matrix_asym", "tensor_sym",
                                    "tensor_asym"};
  check(kinds.count(p.kind) == 1, rd.at("kind"),
        "expected one of nnls, matrix_sym, matrix_asym, tensor_sym, tensor_asym");
  p.r = rd.integer("r");
  p.r_star = rd.integer("r_star", p.r);
  check(p.r >= 1, rd.at("r"), "must be >= 1");
  check(p.r_star >= 1 && p.r_star <= p.r, rd.at("r_star"), "must lie in [1, r]");
  p.tau = rd.number("tau", 1.0);
  check(p.tau >= 1.0, rd.at("tau"), "must be >= 1");
  p.p_fail = rd.number("p_fail", 0.0);
  check(p.p_fail >= 0.0 && p.p_fail < 1.0, rd.at("p_fail"), "must lie in [0, 1)");
  p.kappa_A = rd.number("kappa_A", 10.0);
  check(p.kappa_A >= 1.0, rd.at("kappa_A"), "must be >= 1");
  p.init_rel_err = rd.number("init_rel_err", kDefaultInitRelErr);
  check(p.init_rel_err > 0.0, rd.at("init_rel_err"), "must be positive");

  if (p.kind == "nnls") {
    p.loss = parse_loss(rd.string("loss", "l2"), rd.at("loss"));
    check(p.loss != LossKind::L1, rd.at("loss"), "nnls takes l2 or l2sq");
    p.d1 = p.r;
  } else {
    p.loss = parse_loss(rd.string("loss", "l1"), rd.at("loss"));
    const bool tensor = p.kind.rfind("tensor", 0) == 0;
    const bool asym = p.kind.find("asym") != std::string::npos;
    const Index d = rd.integer("d", 0);
    p.d1 = rd.integer("d1", d);
    p.d2 = asym ? rd.integer("d2", d) : p.d1;
    p.d3 = tensor ? (asym ? rd.integer("d3", d) : p.d1) : 0;
    check(p.d1 >= 1, rd.at(rd.has("d1") ? "d1" : "d"), "must be >= 1");
    check(p.d2 >= 1, rd.at(rd.has("d2") ? "d2" : "d"), "must be >= 1");
    check(!tensor || p.d3 >= 1, rd.at(rd.has("d3") ? "d3" : "d"), "must be >= 1");
    const Index dmin = tensor ? std::min({p.d1, p.d2, p.d3}) : std::min(p.d1, p.d2);
    check(p.r_star <= dmin, rd.at("r_star"), "cannot exceed the dimensions");
  }

  if (!rd.has("m")) {
    check(p.kind != "nnls", rd.at("m"), "missing required field");
  } else if (rd.raw("m").is_string()) {
    check(rd.raw("m").get<std::string>() == "identity" && p.kind != "nnls", rd.at("m"),
          p.kind == "nnls" ? "nnls needs an integer m" : "expected an integer or \"identity\"");
  } else {
    p.m = rd.integer("m");
    check(*p.m >= 1, rd.at("m"), "must be >= 1");
    check(p.kind != "nnls" || *p.m >= p.r, rd.at("m"), "nnls needs m >= r");
  }
  return p;
}

inline DampingRule parse_damping(const Json &j, const std::string &path) {
  const Reader rd(j, path);
  rd.only({"rule", "C", "c", "p"});
  const std::string rule = rd.string("rule");
  if (rule == "exact") {
    const double C = rd.number("C");
    check(C > 0.0, rd.at("C"), "must be positive");
    return ExactDistance{C};
  }
  check(rule == "loss_proxy", rd.at("rule"), "expected exact or loss_proxy");
  const double c = rd.number("c");
  const double p = rd.number("p", 1.0);
  check(c > 0.0, rd.at("c"), "must be positive");
  check(p > 0.0, rd.at("p"), "must be positive");
  return LossProxy{c, p};
}

inline SolverSpec parse_solver(const Json &j, const std::string &path) {
  const Reader rd(j, path);
  rd.only({"method", "config", "options"});
  SolverSpec s;
  s.method = parse_method(rd.string("method", "lmm"), rd.at("method"));

  if (rd.has("config")) {
    const std::string cpath = rd.at("config");
    const Reader c(rd.raw("config"), cpath);
    c.only({"variant", "gamma", "lambda", "q", "damping", "h_star"});
    const std::string variant = c.string("variant", "polyak");
    if (variant == "polyak") {
      s.variant = Variant::Polyak;
      s.gamma = c.number("gamma", 1.0);
      if (c.has("damping"))
        s.damping = parse_damping(c.raw("damping"), c.at("damping"));
      if (c.has("h_star"))
        s.h_star = c.number("h_star");
      check(!c.has("lambda") && !c.has("q"), cpath,
            "polyak takes gamma, damping and h_star only");
    } else {
      check(variant == "geometric" || variant == "constant", c.at("variant"),
            "expected polyak, geometric or constant");
      s.variant = variant == "geometric" ? Variant::Geometric : Variant::Constant;
      s.gamma = c.number("gamma");
      s.lambda = c.number("lambda", s.method == Method::Lmm ? std::nullopt
                                                              : std::optional<double>(1.0));
      s.q = c.number("q");
      check(s.lambda > 0.0, c.at("lambda"), "must be positive");
      check(s.q > 0.0 && s.q < 1.0, c.at("q"), "must lie in (0, 1)");
      check(!c.has("damping") && !c.has("h_star"), cpath,
            "damping and h_star apply to the polyak variant only");
    }
    check(s.gamma > 0.0, c.at("gamma"), "must be positive");
    check(!(s.method == Method::Subgradient && s.variant == Variant::Constant),
          c.at("variant"), "the subgradient baseline takes polyak or geometric steps");
  }

  if (rd.has("options")) {
    const Reader o(rd.raw("options"), rd.at("options"));
    o.only({"max_iters", "success_rel_err", "cg_max_iters", "cg_tol", "proj_mode",
            "delta_proj", "record_every"});
    SolverOptions &opt = s.options;
    opt.max_iters = int(o.integer("max_iters", opt.max_iters));
    check(opt.max_iters >= 0, o.at("max_iters"), "must be >= 0");
    opt.success_rel_err = o.number("success_rel_err", opt.success_rel_err);
    check(opt.success_rel_err >= 0.0, o.at("success_rel_err"), "must be >= 0");
    opt.cg.max_iters = int(o.integer("cg_max_iters", opt.cg.max_iters));
    check(opt.cg.max_iters >= 1, o.at("cg_max_iters"), "must be >= 1");
    opt.cg.residual_tol = o.number("cg_tol", opt.cg.residual_tol);
    check(opt.cg.residual_tol >= 0.0, o.at("cg_tol"), "must be >= 0");
    const std::string mode = o.string("proj_mode", "surrogate");
    check(mode == "exact" || mode == "surrogate", o.at("proj_mode"),
          "expected exact or surrogate");
    opt.proj = mode == "exact" ? ProjectionMode::exact()
                               : ProjectionMode::surrogate(o.number("delta_proj", 1e-6));
    check(mode == "surrogate" || !o.has("delta_proj"), o.at("delta_proj"),
          "only used by the surrogate projection");
    check(opt.proj.delta_proj >= 0.0, o.at("delta_proj"), "must be >= 0");
    opt.record_every = int(o.integer("record_every", 1));
    check(opt.record_every >= 1, o.at("record_every"), "must be >= 1");
  }
  return s;
}

template <class T, class F>
std::vector<T> parse_list(const Json &j, const std::string &path, F &&each) {
  check(j.is_array(), path, "expected an array");
  check(!j.empty(), path, "must be nonempty");
  std::vector<T> out;
  for (std::size_t i = 0; i < j.size(); ++i)
    out.push_back(each(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline double list_number(const Json &v, const std::string &path) {
  check(v.is_number() && std::isfinite(v.get<double>()), path, "expected a number");
  return v.get<double>();
}

inline TransitionSpec parse_transition(const Json &j, const ProblemConfig &p) {
  const Reader rd(j, "transition");
  rd.only({"m_grid", "p_fail_grid", "trials"});
  TransitionSpec t;
  if (rd.has("m_grid")) {
    t.m_grid = parse_list<Index>(rd.raw("m_grid"), rd.at("m_grid"),
                                 [](const Json &v, const std::string &path) {
                                   const Index m = Reader::as_integer(v, path);
                                   check(m >= 1, path, "must be >= 1");
                                   return m;
                                 });
  } else {
    // Default ramp m = 2dr, 3dr, 4dr, 5dr with d the leading dimension.
    for (Index k = 2; k <= 5; ++k)
      t.m_grid.push_back(k * p.d1 * p.r);
  }
  if (rd.has("p_fail_grid"))
    t.p_fail_grid = parse_list<double>(rd.raw("p_fail_grid"), rd.at("p_fail_grid"),
                                       [](const Json &v, const std::string &path) {
                                         const double x = list_number(v, path);
                                         check(x >= 0.0 && x < 1.0, path,
                                               "must lie in [0, 1)");
                                         return x;
                                       });
  t.trials = int(rd.integer("trials", 20));
  check(t.trials >= 1, rd.at("trials"), "must be >= 1");
  check(p.kind != "nnls", "problem.kind", "transition grids need a sensing problem");
  return t;
}

inline SensitivitySpec parse_sensitivity(const Json &j) {
  const Reader rd(j, "sensitivity");
  rd.only({"q_grid", "gamma_grid", "lambda", "trials", "cap"});
  SensitivitySpec s;
  auto positive = [](const Json &v, const std::string &path) {
    const double x = list_number(v, path);
    check(x > 0.0, path, "must be positive");
    return x;
  };
  if (rd.has("q_grid"))
    s.q_grid = parse_list<double>(rd.raw("q_grid"), rd.at("q_grid"),
                                  [](const Json &v, const std::string &path) {
                                    const double x = list_number(v, path);
                                    check(x > 0.0 && x < 1.0, path, "must lie in (0, 1)");
                                    return x;
                                  });
  if (rd.has("gamma_grid"))
    s.gamma_grid = parse_list<double>(rd.raw("gamma_grid"), rd.at("gamma_grid"), positive);
  s.lambda = rd.number("lambda", s.lambda);
  check(s.lambda > 0.0, rd.at("lambda"), "must be positive");
  s.trials = int(rd.integer("trials", s.trials));
  check(s.trials >= 1, rd.at("trials"), "must be >= 1");
  s.cap = int(rd.integer("cap", s.cap));
  check(s.cap >= 1, rd.at("cap"), "must be >= 1");
  return s;
}

} // namespace detail

inline ExperimentConfig parse_config(const Json &j) {
  const detail::Reader rd(j, "");
  rd.only({"problem", "solvers", "seeds", "output_dir", "transition", "sensitivity"});
  ExperimentConfig cfg;
  if (!rd.has("problem"))
    throw ConfigError("problem", "missing required field");
  cfg.problem = detail::parse_problem(rd.raw("problem"));
  if (rd.has("solvers"))
    cfg.solvers = detail::parse_list<SolverSpec>(rd.raw("solvers"), "solvers",
                                                 detail::parse_solver);
  if (rd.has("seeds"))
    cfg.seeds = detail::parse_list<std::uint64_t>(
        rd.raw("seeds"), "seeds", [](const Json &v, const std::string &path) {
          detail::check(v.is_number_unsigned() ||
                            (v.is_number_integer() && v.get<std::int64_t>() >= 0),
                        path, "expected a nonnegative 64-bit integer");
          return v.get<std::uint64_t>();
        });
  cfg.output_dir = rd.string("output_dir", cfg.output_dir);
  if (rd.has("transition"))
    cfg.transition = detail::parse_transition(rd.raw("transition"), cfg.problem);
  if (rd.has("sensitivity"))
    cfg.sensitivity = detail::parse_sensitivity(rd.raw("sensitivity"));
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string &text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error &e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::filesystem::path &file) {
  std::ifstream in(file, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open " + file.string() + ": " + std::strerror(errno));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// Instances and runs.

inline ProblemInstance build_instance(const ProblemConfig &p, std::uint64_t seed,
                                      std::optional<std::optional<Index>> m_override = {},
                                      std::optional<double> p_fail_override = {}) {
  const std::optional<Index> m = m_override ? *m_override : p.m;
  const double p_fail = p_fail_override.value_or(p.p_fail);
  const bool beyond = p_fail >= 0.5;
  if (p.kind == "nnls")
    return gen_nnls(NnlsSpec{p.r, p.r_star, p.tau, *m, p.kappa_A, p.loss, seed,
                             p.init_rel_err});
  if (p.kind == "matrix_sym" || p.kind == "matrix_asym")
    return gen_matrix(MatrixSpec{p.kind == "matrix_sym", p.d1, p.d2, p.r, p.r_star, p.tau,
                                 m, p.loss, p_fail, beyond, seed, p.init_rel_err});
  return gen_tensor(TensorSpec{p.kind == "tensor_sym", p.d1, p.d2, p.d3, p.r, p.r_star,
                               p.tau, m, p.loss, p_fail, beyond, seed, p.init_rel_err});
}

inline StepsizeConfig resolve_stepsize(const SolverSpec &s, const ProblemInstance &inst) {
  switch (s.variant) {
  case Variant::Polyak:
    return PolyakCfg{s.gamma, s.damping.value_or(inst.default_damping),
                     s.h_star.value_or(inst.gt.h_star)};
  case Variant::Geometric:
    return GeometricCfg{s.gamma, s.lambda, s.q};
  case Variant::Constant:
    return ConstantCfg{s.gamma, s.lambda, s.q};
  }
  throw ParameterError("unknown stepsize variant");
}

inline Trace run_solver(const SolverSpec &s, const ProblemInstance &inst) {
  return run(s.method, inst.map, inst.loss, inst.x0, resolve_stepsize(s, inst), s.options,
             inst.gt.z_star);
}

// ---------------------------------------------------------------------------
// Output helpers.

/// Shortest decimal string that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string trace_csv(const Trace &tr) {
  std::string out = "iter,f,rel_err_z,gamma,lambda,proj_norm,cg_iters\n";
  for (const IterationRecord &r : tr.records) {
    out += std::to_string(r.k);
    out += ',' + format_double(r.f);
    out += ',' + (r.rel_err_z ? format_double(*r.rel_err_z) : std::string());
    out += ',' + (r.step_taken ? format_double(r.gamma_k) : std::string());
    out += ',' + (r.step_taken ? format_double(r.lambda_k) : std::string());
    out += ',' + (r.proj_norm ? format_double(*r.proj_norm) : std::string());
    out += ',' + std::to_string(r.cg_iters);
    out += '\n';
  }
  return out;
}

inline void write_file(const std::filesystem::path &file, const std::string &content) {
  std::error_code ec;
  if (file.has_parent_path()) {
    std::filesystem::create_directories(file.parent_path(), ec);
    if (ec)
      throw std::runtime_error("cannot create " + file.parent_path().string() + ": " +
                               ec.message());
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot open " + file.string() + " for writing: " +
                             std::strerror(errno));
  out << content;
  out.flush();
  if (!out)
    throw std::runtime_error("write to " + file.string() + " failed");
}

/// Runs fn(0..n-1) on up to `threads` workers; results are stored by index,
/// so the output does not depend on scheduling. The first exception (by
/// index) is rethrown after all workers finish.
template <class T, class F>
std::vector<T> parallel_map(std::size_t n, int threads, F &&fn) {
  std::vector<std::optional<T>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t count =
      std::min<std::size_t>(n, std::size_t(std::max(1, threads)));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < count; ++t)
    pool.emplace_back(worker);
  worker();
  for (auto &th : pool)
    th.join();
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);
  std::vector<T> out;
  out.reserve(n);
  for (auto &s : slots)
    out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// Commands.

/// One trace CSV per (solver, seed), named run_<index>_<method>_seed<seed>.csv.
inline std::vector<std::filesystem::path> cmd_run(const ExperimentConfig &cfg,
                                                  const std::filesystem::path &out_dir,
                                                  int threads = 1) {
  if (cfg.solvers.empty())
    throw ConfigError("solvers", "run needs at least one solver");
  struct Task {
    std::size_t solver;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (std::size_t s = 0; s < cfg.solvers.size(); ++s)
    for (std::uint64_t seed : cfg.seeds)
      tasks.push_back({s, seed});
  auto csvs = parallel_map<std::string>(tasks.size(), threads, [&](std::size_t i) {
    const ProblemInstance inst = build_instance(cfg.problem, tasks[i].seed);
    return trace_csv(run_solver(cfg.solvers[tasks[i].solver], inst));
  });
  std::vector<std::filesystem::path> files;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto file = out_dir / ("run_" + std::to_string(tasks[i].solver) + "_" +
                                 to_string(cfg.solvers[tasks[i].solver].method) + "_seed" +
                                 std::to_string(tasks[i].seed) + ".csv");
    write_file(file, csvs[i]);
    files.push_back(file);
  }
  return files;
}

struct TransitionCell {
  Index m = 0;
  double p_fail = 0.0;
  int trials = 0;
  int successes = 0;
};

/// Seed of one transition trial: a 64-bit mix of the base seed, m, p_fail
/// scaled by 1e4 and rounded, and the trial index.
inline std::uint64_t transition_seed(std::uint64_t base, Index m, double p_fail, int trial) {
  const auto p_key = std::uint64_t(std::llround(p_fail * 1e4));
  return mix64(base ^ mix64(std::uint64_t(m) ^ mix64(p_key ^ mix64(std::uint64_t(trial)))));
}

/// Solver used by the grids when the config lists none: LMM with geometric
/// steps gamma = 1e-4, lambda = 1e-5, q = 0.97 and a 500-iteration budget.
inline SolverSpec default_grid_solver() {
  SolverSpec s;
  s.method = Method::Lmm;
  s.variant = Variant::Geometric;
  s.gamma = 1e-4;
  s.lambda = 1e-5;
  s.q = 0.97;
  s.options.max_iters = 500;
  return s;
}

inline std::vector<TransitionCell> transition_cells(const ExperimentConfig &cfg,
                                                    int threads = 1) {
  if (!cfg.transition)
    throw ConfigError("transition", "missing required field");
  const TransitionSpec &t = *cfg.transition;
  const SolverSpec solver = cfg.solvers.empty() ? default_grid_solver() : cfg.solvers[0];
  const std::uint64_t base = cfg.seeds.front();

  std::vector<Index> ms = t.m_grid;
  std::vector<double> ps = t.p_fail_grid;
  std::sort(ms.begin(), ms.end());
  ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
  std::sort(ps.begin(), ps.end());
  ps.erase(std::unique(ps.begin(), ps.end()), ps.end());

  struct Job {
    std::size_t cell;
    int trial;
  };
  std::vector<TransitionCell> cells;
  std::vector<Job> jobs;
  for (Index m : ms)
    for (double p : ps) {
      for (int k = 0; k < t.trials; ++k)
        jobs.push_back({cells.size(), k});
      cells.push_back({m, p, t.trials, 0});
    }
  const auto ok = parallel_map<char>(jobs.size(), threads, [&](std::size_t i) -> char {
    const TransitionCell &c = cells[jobs[i].cell];
    const ProblemInstance inst =
        build_instance(cfg.problem, transition_seed(base, c.m, c.p_fail, jobs[i].trial),
                       std::optional<Index>(c.m), c.p_fail);
    return run_solver(solver, inst).termination == Termination::Converged;
  });
  for (std::size_t i = 0; i < jobs.size(); ++i)
    cells[jobs[i].cell].successes += ok[i];
  return cells;
}

inline std::string transition_csv(const std::vector<TransitionCell> &cells) {
  std::string out = "m,p_fail,trials,successes,success_rate\n";
  for (const auto &c : cells)
    out += std::to_string(c.m) + ',' + format_double(c.p_fail) + ',' +
           std::to_string(c.trials) + ',' + std::to_string(c.successes) + ',' +
           format_double(double(c.successes) / double(c.trials)) + '\n';
  return out;
}

/// Writes <out_dir>/transition.csv.
inline std::filesystem::path cmd_transition(const ExperimentConfig &cfg,
                                            const std::filesystem::path &out_dir,
                                            int threads = 1) {
  const auto file = out_dir / "transition.csv";
  write_file(file, transition_csv(transition_cells(cfg, threads)));
  return file;
}

struct SensitivityCell {
  double q = 0.0;
  double gamma = 0.0;
  double median_iters = 0.0;
  double p5_iters = 0.0;
  double p95_iters = 0.0;
};

/// Percentile with linear interpolation between order statistics.
inline double percentile(std::vector<double> v, double pct) {
  detail::require_param(!v.empty(), "percentile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = pct / 100.0 * double(v.size() - 1);
  const auto lo = std::size_t(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

/// Trial k of every cell uses the instance seeded by derive_seed(seed, k), so
/// cells differ only in (q, gamma). Runs that miss the threshold count as
/// the cap.
inline std::vector<SensitivityCell> sensitivity_cells(const ExperimentConfig &cfg,
                                                      int threads = 1) {
  if (!cfg.sensitivity)
    throw ConfigError("sensitivity", "missing required field");
  const SensitivitySpec &s = *cfg.sensitivity;
  SolverSpec solver = cfg.solvers.empty() ? default_grid_solver() : cfg.solvers[0];
  solver.variant = Variant::Geometric;
  solver.lambda = s.lambda;
  solver.options.max_iters = s.cap;
  const std::uint64_t base = cfg.seeds.front();

  std::vector<double> qs = s.q_grid, gs = s.gamma_grid;
  std::sort(qs.begin(), qs.end());
  qs.erase(std::unique(qs.begin(), qs.end()), qs.end());
  std::sort(gs.begin(), gs.end());
  gs.erase(std::unique(gs.begin(), gs.end()), gs.end());

  std::vector<SensitivityCell> cells;
  for (double q : qs)
    for (double g : gs)
      cells.push_back({q, g, 0, 0, 0});
  const std::size_t per = std::size_t(s.trials);
  const auto iters = parallel_map<double>(cells.size() * per, threads, [&](std::size_t i) {
    const SensitivityCell &c = cells[i / per];
    SolverSpec local = solver;
    local.q = c.q;
    local.gamma = c.gamma;
    const ProblemInstance inst = build_instance(cfg.problem, derive_seed(base, i % per));
    const Trace tr = run_solver(local, inst);
    return tr.termination == Termination::Converged ? double(tr.steps) : double(s.cap);
  });
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const std::vector<double> sample(iters.begin() + std::ptrdiff_t(c * per),
                                     iters.begin() + std::ptrdiff_t((c + 1) * per));
    cells[c].median_iters = percentile(sample, 50);
    cells[c].p5_iters = percentile(sample, 5);
    cells[c].p95_iters = percentile(sample, 95);
  }
  return cells;
}

inline std::string sensitivity_csv(const std::vector<SensitivityCell> &cells) {
  std::string out = "q,gamma,median_iters,p5_iters,p95_iters\n";
  for (const auto &c : cells)
    out += format_double(c.q) + ',' + format_double(c.gamma) + ',' +
           format_double(c.median_iters) + ',' + format_double(c.p5_iters) + ',' +
           format_double(c.p95_iters) + '\n';
  return out;
}

/// Writes <out_dir>/sensitivity.csv.
inline std::filesystem::path cmd_sensitivity(const ExperimentConfig &cfg,
                                             const std::filesystem::path &out_dir,
                                             int threads = 1) {
  const auto file = out_dir / "sensitivity.csv";
  write_file(file, sensitivity_csv(sensitivity_cells(cfg, threads)));
  return file;
}

/// Writes the check table as CSV and returns the number of failed checks.
inline int cmd_verify(std::ostream &out, const std::string &filter = "*",
                      const VerifyKernels &kernels = {}) {
  const auto results = run_checks(filter, kernels);
  out << "name,status,deviation,threshold\n";
  int failed = 0;
  for (const auto &r : results) {
    failed += !r.pass;
    out << r.name << ',' << (r.pass ? "pass" : "fail") << ',' << format_double(r.deviation)
        << ',' << format_double(r.threshold) << '\n';
  }
  return failed;
}

} // namespace lmm
