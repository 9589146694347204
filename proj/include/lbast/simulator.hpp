#pragma once

// Finite-N discrete-event simulation of N FCFS servers fed by a Poisson
// stream of rate load * N. Each arrival queries d servers for (layer, queue
// length) and joins the one with the smallest aversion score, ties uniform.
//
// Because servers are FCFS and nothing preempts, a job's service start and
// departure are fixed the moment it joins. Each server therefore only keeps
// the (start, departure) times of its jobs and is brought up to date lazily
// when queried; arrivals are the only events.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <random>
#include <thread>
#include <vector>

#include "lbast/error.hpp"
#include "lbast/phase_type.hpp"
#include "lbast/policy.hpp"

namespace lbast {

struct SimConfig {
  int servers = 1000;
  double load = 0.5;
  int d = 2;
  Policy policy = Policy::sq();
  LayerGrid grid;
  PhaseType job_size = exponential(1.0);
  /// Simulated time; 0 selects 1e7 / servers.
  double horizon = 0.0;
  double warmup_fraction = 0.30;
  int runs = 40;
  std::uint64_t seed = 1;
  /// Sample the d servers with replacement instead of distinct servers.
  bool with_replacement = false;
  /// Worker threads for independent runs; 0 uses the hardware concurrency.
  int threads = 0;

  double effective_horizon() const { return horizon > 0 ? horizon : 1e7 / servers; }
};

struct RunStats {
  double mean_wait = 0.0;
  double mean_response = 0.0;
  double mean_size = 0.0;
  /// Time-average number of jobs per server over the measurement window.
  double mean_queue = 0.0;
  double utilization = 0.0;
  /// Jobs per server still present at the horizon; grows with the horizon
  /// when the system is unstable.
  double final_backlog = 0.0;
  long long jobs = 0;
};

struct SimStats {
  std::vector<RunStats> runs;
  RunStats mean;
  RunStats sd;  ///< sample standard deviation across runs (0 for one run)
  long long jobs = 0;
};

namespace detail {

enum class Stream : std::uint64_t { Arrivals = 0, Sizes = 1, Sampling = 2, Ties = 3 };

inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t run, Stream purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(run), static_cast<std::uint32_t>(run >> 32),
                    static_cast<std::uint32_t>(purpose), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

/// FCFS server: start/departure times of jobs not yet known to have left.
class LazyServer {
 public:
  void advance(double now) {
    while (head_ < depart_.size() && depart_[head_] <= now) ++head_;
    if (head_ > 256 && 2 * head_ > depart_.size()) {
      start_.erase(start_.begin(), start_.begin() + static_cast<std::ptrdiff_t>(head_));
      depart_.erase(depart_.begin(), depart_.begin() + static_cast<std::ptrdiff_t>(head_));
      head_ = 0;
    }
  }

  int queue_length() const { return static_cast<int>(depart_.size() - head_); }
  double head_start() const { return start_[head_]; }

  /// Appends a job arriving at `now`; returns its service start time.
  double join(double now, double size) {
    const double start = std::max(now, last_departure_);
    last_departure_ = start + size;
    start_.push_back(start);
    depart_.push_back(last_departure_);
    return start;
  }

 private:
  std::vector<double> start_;
  std::vector<double> depart_;
  std::size_t head_ = 0;
  double last_departure_ = 0.0;
};

inline double overlap(double a, double b, double lo, double hi) { return std::max(0.0, std::min(b, hi) - std::max(a, lo)); }

}  // namespace detail

inline void validate(const SimConfig& cfg) {
  if (cfg.servers < 1) throw ConfigError("simulation: need at least one server");
  if (cfg.d < 1 || (!cfg.with_replacement && cfg.d > cfg.servers)) throw ConfigError("simulation: need 1 <= d <= N");
  if (!(cfg.load >= 0.0 && cfg.load < 1.0)) throw ConfigError("simulation: load must lie in [0, 1)");
  if (!(cfg.warmup_fraction >= 0.0 && cfg.warmup_fraction < 1.0)) throw ConfigError("simulation: warm-up fraction must lie in [0, 1)");
  if (cfg.runs < 1) throw ConfigError("simulation: need at least one run");
}

/// One replication. Deterministic in (cfg.seed, run).
inline RunStats run_replication(const SimConfig& cfg, int run) {
  validate(cfg);
  const ScoreTable scores(cfg.policy, cfg.grid, &cfg.job_size);
  const PhaseTypeSampler draw_size(cfg.job_size);
  auto arrivals = detail::make_stream(cfg.seed, static_cast<std::uint64_t>(run), detail::Stream::Arrivals);
  auto sizes = detail::make_stream(cfg.seed, static_cast<std::uint64_t>(run), detail::Stream::Sizes);
  auto sampling = detail::make_stream(cfg.seed, static_cast<std::uint64_t>(run), detail::Stream::Sampling);
  auto ties = detail::make_stream(cfg.seed, static_cast<std::uint64_t>(run), detail::Stream::Ties);

  const int N = cfg.servers;
  const double horizon = cfg.effective_horizon();
  const double warmup = cfg.warmup_fraction * horizon;
  const double window = horizon - warmup;
  const double total_rate = cfg.load * N;

  std::vector<detail::LazyServer> servers(static_cast<std::size_t>(N));
  std::vector<int> picked(static_cast<std::size_t>(cfg.d));

  RunStats out;
  double wait_sum = 0.0, size_sum = 0.0, in_system = 0.0, busy = 0.0;
  long long backlog = 0;
  if (total_rate <= 0.0) return out;

  double t = 0.0;
  for (;;) {
    t += -std::log1p(-detail::uniform01(arrivals)) / total_rate;
    if (t > horizon) break;
    const double size = draw_size(sizes);

    for (int i = 0; i < cfg.d; ++i) {
      int s;
      for (;;) {
        s = static_cast<int>(detail::uniform_below(sampling, static_cast<std::uint64_t>(N)));
        if (cfg.with_replacement) break;
        bool dup = false;
        for (int j = 0; j < i; ++j) dup |= picked[static_cast<std::size_t>(j)] == s;
        if (!dup) break;
      }
      picked[static_cast<std::size_t>(i)] = s;
    }

    int best = -1;
    int tied = 0;
    AversionScore best_score;
    for (int i = 0; i < cfg.d; ++i) {
      auto& srv = servers[static_cast<std::size_t>(picked[static_cast<std::size_t>(i)])];
      srv.advance(t);
      const int ell = srv.queue_length();
      const int k = ell == 0 ? 0 : cfg.grid.layer_of(t - srv.head_start(), true);
      const AversionScore sc = scores(k, ell);
      if (best < 0 || sc < best_score) {
        best = picked[static_cast<std::size_t>(i)];
        best_score = sc;
        tied = 1;
      } else if (sc == best_score) {
        // Reservoir choice keeps the pick uniform over all tied servers.
        ++tied;
        if (detail::uniform_below(ties, static_cast<std::uint64_t>(tied)) == 0) best = picked[static_cast<std::size_t>(i)];
      }
    }

    const double start = servers[static_cast<std::size_t>(best)].join(t, size);
    const double depart = start + size;
    in_system += detail::overlap(t, depart, warmup, horizon);
    busy += detail::overlap(start, depart, warmup, horizon);
    backlog += depart > horizon;
    if (t >= warmup) {
      wait_sum += start - t;
      size_sum += size;
      ++out.jobs;
    }
  }

  if (out.jobs > 0) {
    out.mean_wait = wait_sum / static_cast<double>(out.jobs);
    out.mean_size = size_sum / static_cast<double>(out.jobs);
    out.mean_response = out.mean_wait + out.mean_size;
  }
  out.final_backlog = static_cast<double>(backlog) / N;
  if (window > 0) {
    out.mean_queue = in_system / (window * N);
    out.utilization = busy / (window * N);
  }
  return out;
}

namespace detail {

inline RunStats reduce_mean(const std::vector<RunStats>& runs) {
  RunStats m;
  const double n = static_cast<double>(runs.size());
  for (const auto& r : runs) {
    m.mean_wait += r.mean_wait / n;
    m.mean_response += r.mean_response / n;
    m.mean_size += r.mean_size / n;
    m.mean_queue += r.mean_queue / n;
    m.utilization += r.utilization / n;
    m.final_backlog += r.final_backlog / n;
    m.jobs += r.jobs;
  }
  return m;
}

inline RunStats reduce_sd(const std::vector<RunStats>& runs, const RunStats& m) {
  RunStats s;
  if (runs.size() < 2) return s;
  const double n1 = static_cast<double>(runs.size() - 1);
  auto sq = [](double x) { return x * x; };
  for (const auto& r : runs) {
    s.mean_wait += sq(r.mean_wait - m.mean_wait) / n1;
    s.mean_response += sq(r.mean_response - m.mean_response) / n1;
    s.mean_size += sq(r.mean_size - m.mean_size) / n1;
    s.mean_queue += sq(r.mean_queue - m.mean_queue) / n1;
    s.utilization += sq(r.utilization - m.utilization) / n1;
    s.final_backlog += sq(r.final_backlog - m.final_backlog) / n1;
  }
  s.mean_wait = std::sqrt(s.mean_wait);
  s.mean_response = std::sqrt(s.mean_response);
  s.mean_size = std::sqrt(s.mean_size);
  s.mean_queue = std::sqrt(s.mean_queue);
  s.utilization = std::sqrt(s.utilization);
  s.final_backlog = std::sqrt(s.final_backlog);
  return s;
}

}  // namespace detail

/// Runs cfg.runs independent replications (in parallel when threads allow)
/// and reports their mean and sample standard deviation.
inline SimStats run_experiment(const SimConfig& cfg) {
  validate(cfg);
  SimStats out;
  out.runs.resize(static_cast<std::size_t>(cfg.runs));
  int threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, cfg.runs);
  if (threads == 1) {
    for (int r = 0; r < cfg.runs; ++r) out.runs[static_cast<std::size_t>(r)] = run_replication(cfg, r);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int r = w; r < cfg.runs; r += threads) out.runs[static_cast<std::size_t>(r)] = run_replication(cfg, r);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  out.mean = detail::reduce_mean(out.runs);
  out.sd = detail::reduce_sd(out.runs, out.mean);
  out.jobs = out.mean.jobs;
  return out;
}

}  // namespace lbast
