#pragma once

// Batch front end: experiment configuration (flags or key=value file), the
// solve / simulate / sweep / table1 drivers, and CSV / JSON writers.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lbast/cavity.hpp"
#include "lbast/error.hpp"
#include "lbast/metrics.hpp"
#include "lbast/phase_type.hpp"
#include "lbast/policy.hpp"
#include "lbast/simulator.hpp"

namespace lbast::cli {

enum class Mode { Solve, Simulate, Sweep, Table1 };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::Solve: return "solve";
    case Mode::Simulate: return "simulate";
    case Mode::Sweep: return "sweep";
    case Mode::Table1: return "table1";
  }
  return "?";
}

/// Job sizes: an MErlang(scv, f, k) fit, or an explicit PH read from a JSON
/// file {"alpha": [...], "A": [[...], ...]}.
struct JobSize {
  double scv = 10.0;
  double f = 0.5;
  int k = 1;
  std::string ph_file;

  bool explicit_ph() const { return !ph_file.empty(); }
};

inline PhaseType load_phase_type(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("ph-file: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("ph-file '" + path + "': " + e.what());
  }
  if (!j.contains("alpha") || !j.contains("A")) throw ConfigError("ph-file '" + path + "': needs keys 'alpha' and 'A'");
  const auto alpha = j.at("alpha").get<std::vector<double>>();
  const auto rows = j.at("A").get<std::vector<std::vector<double>>>();
  const auto m = static_cast<Eigen::Index>(alpha.size());
  Vector a(m);
  Matrix A(m, m);
  if (static_cast<Eigen::Index>(rows.size()) != m) throw ConfigError("ph-file '" + path + "': A must be square of alpha's size");
  for (Eigen::Index i = 0; i < m; ++i) {
    a[i] = alpha[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != m) {
      throw ConfigError("ph-file '" + path + "': A must be square of alpha's size");
    }
    for (Eigen::Index c = 0; c < m; ++c) A(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
  }
  return PhaseType(a, A);
}

inline PhaseType build(const JobSize& js) {
  if (js.explicit_ph()) return load_phase_type(js.ph_file);
  return fit_merlang(js.scv, js.f, js.k);
}

struct ExperimentConfig {
  Mode mode = Mode::Solve;
  std::vector<Policy> policies{Policy::sq()};
  std::vector<double> lambdas;
  int d = 2;
  double delta = 0.1;
  std::optional<int> r;
  int r_cap = kDefaultLayerCap;
  JobSize job;
  SolverOptions solver;

  int servers = 1000;
  int runs = 40;
  double horizon = 0.0;
  double warmup = 0.30;
  std::uint64_t seed = 1;
  bool with_replacement = false;
  /// table1: server counts to simulate next to the cavity column.
  std::vector<int> table1_servers;

  /// Extra columns fw@w and fr@w per point (cavity modes).
  std::vector<double> tail_points;
  /// Extra column td (expected ties among the d sampled busy servers).
  bool ties = false;
  /// Fill ew_rel_vs_sq by also solving SQ(d) at the same point.
  bool baseline = true;

  std::string output = "-";
  std::string json;
  int jobs = 1;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& text, const std::string& field) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !std::isfinite(v)) throw ConfigError(field + ": '" + text + "' is not a number");
  return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

}  // namespace detail

/// `start:step:end` (inclusive), a comma list, or a single value. Empty text
/// gives an empty grid.
inline std::vector<double> parse_grid(const std::string& text, const std::string& field = "lambdas") {
  const std::string s = detail::trim(text);
  std::vector<double> out;
  if (s.empty()) return out;
  if (s.find(':') != std::string::npos) {
    const auto parts = detail::split(s, ':');
    if (parts.size() != 3) throw ConfigError(field + ": expected start:step:end, got '" + s + "'");
    const double a = detail::parse_double(parts[0], field);
    const double h = detail::parse_double(parts[1], field);
    const double b = detail::parse_double(parts[2], field);
    if (!(h > 0)) throw ConfigError(field + ": step must be positive");
    if (b < a) return out;
    const auto n = static_cast<long long>(std::floor((b - a) / h + 1e-9)) + 1;
    for (long long i = 0; i < n; ++i) out.push_back(a + static_cast<double>(i) * h);
    return out;
  }
  for (const auto& part : detail::split(s, ',')) {
    if (!part.empty()) out.push_back(detail::parse_double(part, field));
  }
  return out;
}

inline void validate(const ExperimentConfig& cfg) {
  for (double l : cfg.lambdas) {
    if (!(l >= 0.0 && l < 1.0)) {
      std::ostringstream os;
      os << "lambda: " << l << " outside [0, 1)";
      throw ConfigError(os.str());
    }
  }
  if (cfg.d < 1) throw ConfigError("d: must be >= 1");
  if (!(cfg.delta > 0)) throw ConfigError("delta: must be positive");
  if (cfg.r && *cfg.r < 1) throw ConfigError("r: must be >= 1");
  if (cfg.r_cap < 1) throw ConfigError("r-cap: must be >= 1");
  if (cfg.jobs < 1) throw ConfigError("jobs: must be >= 1");
  if (cfg.servers < 1) throw ConfigError("servers: must be >= 1");
  if (cfg.runs < 1) throw ConfigError("runs: must be >= 1");
  if (!(cfg.warmup >= 0 && cfg.warmup < 1)) throw ConfigError("warmup: must lie in [0, 1)");
  if (!(cfg.solver.tol > 0)) throw ConfigError("tol: must be positive");
  for (double w : cfg.tail_points)
    if (!(w >= 0)) throw ConfigError("tail: points must be >= 0");
  for (int n : cfg.table1_servers)
    if (n < 1) throw ConfigError("table1-servers: must be >= 1");
  if (cfg.mode != Mode::Table1 && cfg.policies.empty()) throw ConfigError("policy: at least one policy is required");
}

/// Raw option storage bound to the CLI11 app; `finish` turns it into a
/// validated ExperimentConfig.
struct Options {
  std::string mode = "solve";
  std::string policy;
  std::string policies;
  std::vector<double> lambda;
  std::string lambdas;
  int d = 2;
  double delta = 0.1;
  int r = 0;
  int r_cap = kDefaultLayerCap;
  double scv = 10.0;
  double f = 0.5;
  int k = 1;
  std::string ph_file;
  double tol = 1e-10;
  int max_iterations = 500;
  int max_buffer = 400;
  int servers = 1000;
  int runs = 40;
  double horizon = 0.0;
  double warmup = 0.30;
  std::uint64_t seed = 1;
  bool with_replacement = false;
  std::string table1_servers;
  std::string tail;
  bool ties = false;
  bool no_baseline = false;
  std::string output = "-";
  std::string json;
  int jobs = 1;
};

inline std::unique_ptr<CLI::App> make_app(Options& o) {
  auto app = std::make_unique<CLI::App>("Cavity solver and simulator for load balancing with attained service time");
  app->set_config("--config", "", "key=value configuration file (flags override it)");
  app->allow_config_extras(false);
  app->add_option("mode", o.mode, "solve | simulate | sweep | table1")
      ->check(CLI::IsMember({"solve", "simulate", "sweep", "table1"}));
  app->add_option("--policy", o.policy, "policy, e.g. sq, sq-rtb, sq-re:2, lew");
  app->add_option("--policies", o.policies, "comma-separated policy list");
  app->add_option("--lambda", o.lambda, "arrival rate per server (repeatable)");
  app->add_option("--lambdas", o.lambdas, "arrival-rate grid start:step:end or a comma list");
  app->add_option("--d", o.d, "number of sampled servers");
  app->add_option("--delta", o.delta, "layer width");
  app->add_option("--r", o.r, "number of finite layers (automatic when omitted)");
  app->add_option("--r-cap", o.r_cap, "upper bound for the automatic layer count");
  app->add_option("--scv", o.scv, "job size SCV");
  app->add_option("--f", o.f, "workload fraction of small jobs");
  app->add_option("--k", o.k, "Erlang stages per branch");
  app->add_option("--ph-file", o.ph_file, "explicit PH job sizes as JSON {alpha, A}");
  app->add_option("--tol", o.tol, "fixed-point tolerance");
  app->add_option("--max-iterations", o.max_iterations, "fixed-point iteration cap");
  app->add_option("--max-buffer", o.max_buffer, "queue length truncation cap");
  app->add_option("--servers,-N", o.servers, "servers in the simulation");
  app->add_option("--runs", o.runs, "simulation replications");
  app->add_option("--horizon", o.horizon, "simulated time (default 1e7/N)");
  app->add_option("--warmup", o.warmup, "warm-up fraction of the horizon");
  app->add_option("--seed", o.seed, "base seed");
  app->add_flag("--with-replacement", o.with_replacement, "sample the d servers with replacement");
  app->add_option("--table1-servers", o.table1_servers, "table1: comma list of N to simulate");
  app->add_option("--tail", o.tail, "comma list of w for extra columns fw@w, fr@w");
  app->add_flag("--ties", o.ties, "extra column td with the expected number of ties");
  app->add_flag("--no-baseline", o.no_baseline, "leave ew_rel_vs_sq empty");
  app->add_option("--output,-o", o.output, "CSV path, '-' for stdout");
  app->add_option("--json", o.json, "also write the rows as a JSON array to this path");
  app->add_option("--jobs,-j", o.jobs, "points evaluated concurrently");
  return app;
}

inline ExperimentConfig finish(const Options& o, const CLI::App& app) {
  ExperimentConfig cfg;
  if (o.mode == "solve") cfg.mode = Mode::Solve;
  else if (o.mode == "simulate") cfg.mode = Mode::Simulate;
  else if (o.mode == "sweep") cfg.mode = Mode::Sweep;
  else cfg.mode = Mode::Table1;

  cfg.policies.clear();
  if (!o.policy.empty()) cfg.policies.push_back(parse_policy(detail::trim(o.policy)));
  for (const auto& p : detail::split(o.policies, ','))
    if (!p.empty()) cfg.policies.push_back(parse_policy(p));
  if (cfg.policies.empty() && cfg.mode != Mode::Table1) cfg.policies.push_back(Policy::sq());

  cfg.lambdas = o.lambda;
  const auto grid = parse_grid(o.lambdas);
  cfg.lambdas.insert(cfg.lambdas.end(), grid.begin(), grid.end());
  if (cfg.mode != Mode::Table1 && cfg.lambdas.empty() && app.count("--lambdas") == 0) {
    throw ConfigError("lambda: give --lambda or --lambdas");
  }

  cfg.d = o.d;
  cfg.delta = o.delta;
  if (app.count("--r") > 0) cfg.r = o.r;
  cfg.r_cap = o.r_cap;
  cfg.job = {o.scv, o.f, o.k, o.ph_file};
  cfg.solver.tol = o.tol;
  cfg.solver.max_iterations = o.max_iterations;
  cfg.solver.max_buffer = o.max_buffer;
  cfg.servers = o.servers;
  cfg.runs = o.runs;
  cfg.horizon = o.horizon;
  cfg.warmup = o.warmup;
  cfg.seed = o.seed;
  cfg.with_replacement = o.with_replacement;
  for (double n : parse_grid(o.table1_servers, "table1-servers")) cfg.table1_servers.push_back(static_cast<int>(n));
  cfg.tail_points = parse_grid(o.tail, "tail");
  cfg.ties = o.ties;
  cfg.baseline = !o.no_baseline;
  cfg.output = o.output;
  cfg.json = o.json;
  cfg.jobs = o.jobs;
  validate(cfg);
  return cfg;
}

/// Parses command-line arguments (without the program name). CLI11 parse
/// errors, including unknown keys in a config file, become ConfigError.
inline ExperimentConfig parse_config(std::vector<std::string> args) {
  Options o;
  auto app = make_app(o);
  std::reverse(args.begin(), args.end());
  try {
    app->parse(args);
  } catch (const CLI::ParseError& e) {
    throw ConfigError(std::string("arguments: ") + e.what());
  }
  return finish(o, *app);
}

// ---------------------------------------------------------------------------
// Results

struct Row {
  std::string mode;
  std::string policy;
  int d = 0;
  double lambda = 0;
  std::optional<double> delta;
  int r = 0;
  double scv = 0;
  std::optional<double> f;
  std::optional<int> k;
  std::optional<double> T;
  std::optional<int> N;
  double ew = 0, eq = 0, er = 0;
  std::optional<double> ew_rel;
  std::optional<int> iters;
  std::optional<double> residual;
  std::optional<int> runs;
  std::optional<double> sd;
  std::vector<std::pair<std::string, double>> extra;
};

inline constexpr const char* kCsvHeader = "mode,policy,d,lambda,delta,r,scv,f,k,T,N,ew,eq,er,ew_rel_vs_sq,iters,residual,runs,sd";

inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

namespace detail {

inline std::string cell(double x) { return format_double(x); }
inline std::string cell(int x) { return std::to_string(x); }
inline std::string cell(const std::string& s) { return s; }
template <class T>
std::string cell(const std::optional<T>& x) {
  return x ? cell(*x) : std::string();
}

template <class T>
nlohmann::json jcell(const std::optional<T>& x) {
  return x ? nlohmann::json(*x) : nlohmann::json(nullptr);
}

}  // namespace detail

/// Column names of the extra cells, taken from the first row.
inline std::string csv_header(const std::vector<Row>& rows) {
  std::string h = kCsvHeader;
  if (!rows.empty())
    for (const auto& [name, value] : rows.front().extra) h += "," + name;
  return h;
}

inline void write_csv(std::ostream& out, const std::vector<Row>& rows) {
  using detail::cell;
  out << csv_header(rows) << '\n';
  for (const auto& r : rows) {
    out << r.mode << ',' << r.policy << ',' << r.d << ',' << cell(r.lambda) << ',' << cell(r.delta) << ',' << r.r << ','
        << cell(r.scv) << ',' << cell(r.f) << ',' << cell(r.k) << ',' << cell(r.T) << ',' << cell(r.N) << ','
        << cell(r.ew) << ',' << cell(r.eq) << ',' << cell(r.er) << ',' << cell(r.ew_rel) << ',' << cell(r.iters) << ','
        << cell(r.residual) << ',' << cell(r.runs) << ',' << cell(r.sd);
    for (const auto& [name, value] : r.extra) out << ',' << cell(value);
    out << '\n';
  }
}

inline nlohmann::json to_json(const std::vector<Row>& rows) {
  using detail::jcell;
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j;
    j["mode"] = r.mode;
    j["policy"] = r.policy;
    j["d"] = r.d;
    j["lambda"] = r.lambda;
    j["delta"] = jcell(r.delta);
    j["r"] = r.r;
    j["scv"] = r.scv;
    j["f"] = jcell(r.f);
    j["k"] = jcell(r.k);
    j["T"] = jcell(r.T);
    j["N"] = jcell(r.N);
    j["ew"] = r.ew;
    j["eq"] = r.eq;
    j["er"] = r.er;
    j["ew_rel_vs_sq"] = jcell(r.ew_rel);
    j["iters"] = jcell(r.iters);
    j["residual"] = jcell(r.residual);
    j["runs"] = jcell(r.runs);
    j["sd"] = jcell(r.sd);
    for (const auto& [name, value] : r.extra) j[name] = value;
    arr.push_back(std::move(j));
  }
  return arr;
}

// ---------------------------------------------------------------------------
// Drivers

/// One point of an experiment: policy, load, d, layer width and job sizes.
struct Point {
  Policy policy;
  double lambda = 0;
  int d = 2;
  double delta = 0.1;
  JobSize job;
};

namespace detail {

template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(jobs, static_cast<int>(n))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void fill_common(Row& row, const Point& p, const PhaseType& ph, const LayerGrid& grid) {
  row.policy = lbast::to_string(p.policy);
  row.d = p.d;
  row.lambda = p.lambda;
  if (!p.policy.ignores_layer() && !p.policy.single_threshold()) row.delta = p.delta;
  row.r = grid.r();
  if (p.job.explicit_ph()) {
    row.scv = moments(ph).scv;
  } else {
    row.scv = p.job.scv;
    row.f = p.job.f;
    row.k = p.job.k;
  }
  if (p.policy.uses_threshold()) row.T = p.policy.threshold;
}

}  // namespace detail

/// Cavity fixed point at one point, with mean metrics and optional tails.
inline Row solve_point(const Point& p, const ExperimentConfig& cfg) {
  const PhaseType ph = build(p.job);
  const LayerGrid grid = grid_for(p.policy, ph, p.delta, cfg.r, cfg.r_cap);
  const auto res = fixed_point(p.policy, p.lambda, ph, grid, p.d, cfg.solver);
  const auto mm = mean_metrics(res.pi, p.lambda);
  Row row;
  detail::fill_common(row, p, ph, grid);
  row.ew = mm.ew;
  row.eq = mm.eq;
  row.er = mm.er;
  row.iters = res.iterations;
  row.residual = res.residuals.empty() ? 0.0 : res.residuals.back();
  if (!cfg.tail_points.empty()) {
    const auto join = join_law(res.pi, p.policy, grid, p.d, &ph);
    const auto fw = waiting_survival(join, ph, cfg.tail_points);
    const auto fr = response_survival(join, ph, cfg.tail_points);
    for (std::size_t i = 0; i < cfg.tail_points.size(); ++i) {
      row.extra.emplace_back("fw@" + format_double(cfg.tail_points[i]), fw[i]);
      row.extra.emplace_back("fr@" + format_double(cfg.tail_points[i]), fr[i]);
    }
  }
  if (cfg.ties) {
    const auto u = res.pi.queue_tail();
    row.extra.emplace_back("td", u.size() > 1 && u[1] > 0 ? tie_expectation(u, p.d) : 0.0);
  }
  return row;
}

/// Simulated point; `servers` overrides cfg.servers when positive.
inline Row simulate_point(const Point& p, const ExperimentConfig& cfg, int servers = 0, std::ostream* log = nullptr) {
  SimConfig sc;
  sc.servers = servers > 0 ? servers : cfg.servers;
  sc.load = p.lambda;
  sc.d = p.d;
  sc.policy = p.policy;
  sc.job_size = build(p.job);
  sc.grid = grid_for(p.policy, sc.job_size, p.delta, cfg.r, cfg.r_cap);
  sc.horizon = cfg.horizon;
  sc.warmup_fraction = cfg.warmup;
  sc.runs = cfg.runs;
  sc.seed = cfg.seed;
  sc.with_replacement = cfg.with_replacement;
  sc.threads = 1;
  const auto stats = run_experiment(sc);
  Row row;
  detail::fill_common(row, p, sc.job_size, sc.grid);
  row.N = sc.servers;
  row.ew = stats.mean.mean_wait;
  row.eq = stats.mean.mean_queue;
  row.er = stats.mean.mean_response;
  row.runs = sc.runs;
  row.sd = stats.sd.mean_wait;
  if (log && stats.mean.final_backlog > 10.0 * (stats.mean.mean_queue + 1.0)) {
    *log << "warning: " << row.policy << " lambda=" << format_double(p.lambda) << " N=" << sc.servers
         << ": backlog at the horizon (" << format_double(stats.mean.final_backlog)
         << " jobs/server) far exceeds the time average; queues look unstable\n";
  }
  return row;
}

struct Table1Entry {
  const char* policy;
  int d;
  double lambda;
  double delta;
  double scv;
  double f;
  int k;
  /// Reference mean waiting time for N -> infinity.
  double reference;
};

inline const std::vector<Table1Entry>& table1_entries() {
  static const std::vector<Table1Entry> rows = {
      {"sq-rtb", 3, 0.7, 0.01, 10, 0.5, 2, 0.9172},
      {"sq-re:2", 5, 0.8, 0.1, 10, 0.1, 1, 1.5649},
      {"sq-rtb-re:2", 10, 0.8, 0.1, 15, 1.0 / 3.0, 5, 0.1366},
      {"las", 2, 0.6, 0.5, 20, 0.25, 1, 3.7156},
      {"las-qtb", 7, 0.9, 0.01, 20, 2.0 / 3.0, 5, 0.6462},
      {"re:2", 6, 0.8, 0.1, 10, 0.25, 1, 1.3846},
      {"lew", 8, 0.9, 0.5, 15, 1.0 / 3.0, 1, 0.8266},
  };
  return rows;
}

inline Point table1_point(const Table1Entry& e) {
  return {parse_policy(e.policy), e.lambda, e.d, e.delta, JobSize{e.scv, e.f, e.k, {}}};
}

/// Evaluates the experiment and returns rows in deterministic order:
/// policy-major, then lambda (table1: row order, cavity before simulations).
inline std::vector<Row> run(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  validate(cfg);
  struct Task {
    Point point;
    int servers;  ///< 0: cavity
  };
  std::vector<Task> tasks;
  if (cfg.mode == Mode::Table1) {
    for (const auto& e : table1_entries()) {
      tasks.push_back({table1_point(e), 0});
      for (int n : cfg.table1_servers) tasks.push_back({table1_point(e), n});
    }
  } else {
    for (const auto& pol : cfg.policies)
      for (double l : cfg.lambdas)
        tasks.push_back({Point{pol, l, cfg.d, cfg.delta, cfg.job}, cfg.mode == Mode::Simulate ? cfg.servers : 0});
  }

  std::vector<Row> rows(tasks.size());
  std::vector<std::optional<double>> baseline(tasks.size());
  detail::parallel_for(tasks.size(), cfg.jobs, [&](std::size_t i) {
    const auto& t = tasks[i];
    rows[i] = t.servers > 0 ? simulate_point(t.point, cfg, t.servers, log) : solve_point(t.point, cfg);
    rows[i].mode = to_string(cfg.mode);
    if (cfg.baseline && t.servers == 0 && t.point.lambda > 0) {
      Point sq = t.point;
      sq.policy = Policy::sq();
      ExperimentConfig plain = cfg;
      plain.tail_points.clear();
      plain.ties = false;
      const double ew_sq = t.point.policy == Policy::sq() ? rows[i].ew : solve_point(sq, plain).ew;
      if (ew_sq > 0) baseline[i] = ew_sq;
    }
  });
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (baseline[i]) rows[i].ew_rel = relative_improvement(*baseline[i], rows[i].ew);
  return rows;
}

/// Applies LBAST_OUTPUT_DIR to relative output paths.
inline std::string resolve_output(const std::string& path) {
  if (path.empty() || path == "-") return path;
  const std::filesystem::path p(path);
  const char* dir = std::getenv("LBAST_OUTPUT_DIR");
  if (p.is_relative() && dir && *dir) return (std::filesystem::path(dir) / p).string();
  return path;
}

/// Writes the CSV (and JSON when requested) for `rows`.
inline void write_outputs(const ExperimentConfig& cfg, const std::vector<Row>& rows, std::ostream& stdout_stream) {
  const std::string csv = resolve_output(cfg.output);
  if (csv.empty() || csv == "-") {
    write_csv(stdout_stream, rows);
  } else {
    const std::filesystem::path p(csv);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(csv);
    if (!out) throw Error("cannot write '" + csv + "'");
    write_csv(out, rows);
  }
  if (!cfg.json.empty()) {
    const std::string jp = resolve_output(cfg.json);
    const std::filesystem::path p(jp);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(jp);
    if (!out) throw Error("cannot write '" + jp + "'");
    out << to_json(rows).dump(2) << '\n';
  }
}

}  // namespace lbast::cli
