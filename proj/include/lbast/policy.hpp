#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lbast/error.hpp"
#include "lbast/phase_type.hpp"

namespace lbast {

/// Attained-service thresholds 0 = c_0 < c_1 < ... < c_r (< c_{r+1} = inf).
/// Layer k covers ages in (c_{k-1}, c_k]; age 0 belongs to layer 1 and
/// layer 0 means the server is idle.
class LayerGrid {
 public:
  LayerGrid() = default;

  explicit LayerGrid(std::vector<double> thresholds) : c_(std::move(thresholds)) {
    double prev = 0.0;
    for (double c : c_) {
      if (!(c > prev) || !std::isfinite(c)) throw ConfigError("layer grid thresholds must be finite and strictly increasing from 0");
      prev = c;
    }
  }

  /// c_k = k * delta for k = 1..r.
  static LayerGrid uniform(double delta, int r) {
    if (!(delta > 0)) throw ConfigError("layer width must be positive");
    if (r < 0) throw ConfigError("layer count must be >= 0");
    std::vector<double> c(static_cast<std::size_t>(r));
    for (int k = 1; k <= r; ++k) c[static_cast<std::size_t>(k - 1)] = k * delta;
    LayerGrid g(std::move(c));
    g.delta_ = delta;
    return g;
  }

  /// Number of finite thresholds.
  int r() const noexcept { return static_cast<int>(c_.size()); }
  /// Number of busy layers, r + 1.
  int layers() const noexcept { return r() + 1; }
  /// Uniform width when built by uniform(), else 0.
  double delta() const noexcept { return delta_; }
  const std::vector<double>& thresholds() const noexcept { return c_; }

  /// c_k for k in 0..r+1 (c_{r+1} = inf).
  double threshold(int k) const {
    if (k <= 0) return 0.0;
    if (k > r()) return std::numeric_limits<double>::infinity();
    return c_[static_cast<std::size_t>(k - 1)];
  }

  /// c_k - c_{k-1} for k in 1..r+1.
  double width(int k) const { return threshold(k) - threshold(k - 1); }

  int layer_of(double age, bool busy) const {
    if (!busy) return 0;
    if (delta_ > 0) {
      if (age <= delta_) return 1;
      const double k = std::ceil(age / delta_);
      // Guard against ceil landing one off at exact multiples.
      int kk = static_cast<int>(std::min(k, static_cast<double>(r() + 1)));
      if (kk <= r() && age > threshold(kk)) ++kk;
      if (kk > 1 && age <= threshold(kk - 1)) --kk;
      return std::min(kk, r() + 1);
    }
    // First threshold >= age.
    auto it = std::lower_bound(c_.begin(), c_.end(), age);
    return static_cast<int>(it - c_.begin()) + 1;
  }

 private:
  std::vector<double> c_;
  double delta_ = 0.0;
};

/// What a queried server reports: layer k and queue length ell (0, 0 = idle).
struct ServerObservation {
  int k = 0;
  int ell = 0;
};

/// Real tuple compared lexicographically. Arity is fixed per policy.
struct AversionScore {
  std::array<double, 3> v{0.0, 0.0, 0.0};
  std::uint8_t n = 1;

  static AversionScore of(double a) { return {{a, 0.0, 0.0}, 1}; }
  static AversionScore of(double a, double b) { return {{a, b, 0.0}, 2}; }
  static AversionScore of(double a, double b, double c) { return {{a, b, c}, 3}; }

  bool is_zero() const {
    for (int i = 0; i < n; ++i)
      if (v[static_cast<std::size_t>(i)] != 0.0) return false;
    return true;
  }

  // Same-arity comparison; callers mixing policies go through compare().
  friend std::partial_ordering operator<=>(const AversionScore& a, const AversionScore& b) {
    for (int i = 0; i < a.n; ++i) {
      const auto c = a.v[static_cast<std::size_t>(i)] <=> b.v[static_cast<std::size_t>(i)];
      if (c != 0) return c;
    }
    return std::partial_ordering::equivalent;
  }
  friend bool operator==(const AversionScore& a, const AversionScore& b) {
    return (a <=> b) == std::partial_ordering::equivalent;
  }
};

inline std::weak_ordering compare(const AversionScore& a, const AversionScore& b) {
  if (a.n != b.n) throw std::invalid_argument("compare: aversion scores of different arity");
  const auto c = a <=> b;
  if (c == std::partial_ordering::less) return std::weak_ordering::less;
  if (c == std::partial_ordering::greater) return std::weak_ordering::greater;
  return std::weak_ordering::equivalent;
}

enum class PolicyKind { Random, SQ, SQ_RTB, SQ_RE, SQ_RTB_RE, LAS, LAS_QTB, RE, LEW };

struct Policy {
  PolicyKind kind = PolicyKind::SQ;
  /// Threshold T for the runtime-exclusion variants.
  double threshold = 0.0;

  static Policy random() { return {PolicyKind::Random}; }
  static Policy sq() { return {PolicyKind::SQ}; }
  static Policy sq_rtb() { return {PolicyKind::SQ_RTB}; }
  static Policy sq_re(double T) { return {PolicyKind::SQ_RE, T}; }
  static Policy sq_rtb_re(double T) { return {PolicyKind::SQ_RTB_RE, T}; }
  static Policy las() { return {PolicyKind::LAS}; }
  static Policy las_qtb() { return {PolicyKind::LAS_QTB}; }
  static Policy re(double T) { return {PolicyKind::RE, T}; }
  static Policy lew() { return {PolicyKind::LEW}; }

  bool uses_threshold() const {
    return kind == PolicyKind::SQ_RE || kind == PolicyKind::SQ_RTB_RE || kind == PolicyKind::RE;
  }
  /// Only the exceed-T bit is reported: the grid is the single threshold T.
  bool single_threshold() const { return kind == PolicyKind::SQ_RE || kind == PolicyKind::RE; }
  /// The score ignores the layer entirely.
  bool ignores_layer() const { return kind == PolicyKind::Random || kind == PolicyKind::SQ; }
  bool needs_job_size() const { return kind == PolicyKind::LEW; }

  friend bool operator==(const Policy&, const Policy&) = default;
};

namespace detail {

inline std::string format_number(double x) {
  std::ostringstream os;
  os.precision(10);
  os << x;
  return os.str();
}

}  // namespace detail

inline std::string to_string(const Policy& p) {
  switch (p.kind) {
    case PolicyKind::Random: return "random";
    case PolicyKind::SQ: return "sq";
    case PolicyKind::SQ_RTB: return "sq-rtb";
    case PolicyKind::SQ_RE: return "sq-re:" + detail::format_number(p.threshold);
    case PolicyKind::SQ_RTB_RE: return "sq-rtb-re:" + detail::format_number(p.threshold);
    case PolicyKind::LAS: return "las";
    case PolicyKind::LAS_QTB: return "las-qtb";
    case PolicyKind::RE: return "re:" + detail::format_number(p.threshold);
    case PolicyKind::LEW: return "lew";
  }
  return "?";
}

/// Parses `random`, `sq`, `sq-rtb`, `sq-re:T`, `sq-rtb-re:T`, `las`,
/// `las-qtb`, `re:T`, `lew`.
inline Policy parse_policy(std::string_view text) {
  std::string name(text);
  std::optional<double> T;
  if (auto colon = name.find(':'); colon != std::string::npos) {
    const std::string arg = name.substr(colon + 1);
    name = name.substr(0, colon);
    std::size_t used = 0;
    double value = 0;
    try {
      value = std::stod(arg, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != arg.size() || !(value > 0) || !std::isfinite(value)) {
      throw ConfigError("policy '" + std::string(text) + "': threshold must be a positive number");
    }
    T = value;
  }
  Policy p;
  if (name == "random") p = Policy::random();
  else if (name == "sq") p = Policy::sq();
  else if (name == "sq-rtb") p = Policy::sq_rtb();
  else if (name == "sq-re") p = Policy::sq_re(0);
  else if (name == "sq-rtb-re") p = Policy::sq_rtb_re(0);
  else if (name == "las") p = Policy::las();
  else if (name == "las-qtb") p = Policy::las_qtb();
  else if (name == "re") p = Policy::re(0);
  else if (name == "lew") p = Policy::lew();
  else throw ConfigError("unknown policy '" + std::string(text) + "'");

  if (p.uses_threshold()) {
    if (!T) throw ConfigError("policy '" + name + "' needs a threshold, e.g. '" + name + ":2'");
    p.threshold = *T;
  } else if (T) {
    throw ConfigError("policy '" + name + "' takes no threshold");
  }
  return p;
}

/// Index s with c_s = T for threshold policies (relative match 1e-9).
inline int threshold_index(const Policy& p, const LayerGrid& grid) {
  if (!p.uses_threshold()) return 0;
  for (int s = 1; s <= grid.r(); ++s) {
    const double c = grid.threshold(s);
    if (std::abs(c - p.threshold) <= 1e-9 * std::max(1.0, p.threshold)) return s;
  }
  throw ConfigError("policy " + to_string(p) + ": threshold is not a grid point");
}

/// Precomputed aversion scores xi(k, ell) for one (policy, grid) pair.
/// For LEW the residual means E[X | X >= c_k] - c_k are tabulated per layer;
/// the last layer (c_{r+1} = inf) uses c_r.
class ScoreTable {
 public:
  ScoreTable(const Policy& policy, const LayerGrid& grid, const PhaseType* job_size = nullptr)
      : policy_(policy), layers_(grid.layers()) {
    if (policy.uses_threshold()) s_ = threshold_index(policy, grid);
    if (policy.needs_job_size()) {
      if (!job_size) throw ConfigError("LEW needs the job size distribution");
      residual_.resize(static_cast<std::size_t>(layers_ + 1));
      const Vector h = absorption_times(*job_size);
      const Matrix& A = job_size->generator();
      const double q = numerics::uniformization_rate(A);
      auto step = [&A, q](const RowVector& in, RowVector& out) { out = in + (in * A) / q; };
      // Walk the survival vector layer by layer instead of restarting at 0.
      RowVector v = job_size->alpha().transpose();
      residual_[0] = v.dot(h.transpose());
      for (int k = 1; k <= layers_; ++k) {
        const double dt = k <= grid.r() ? grid.width(k) : 0.0;
        v = numerics::propagate<RowVector>(v, q, dt, step).value;
        const double s = v.sum();
        if (!(s > 0.0)) throw VanishingSurvival("LEW: survival vanishes at layer " + std::to_string(k));
        v /= s;
        residual_[static_cast<std::size_t>(k)] = v.dot(h.transpose());
      }
    }
  }

  const Policy& policy() const noexcept { return policy_; }
  int layers() const noexcept { return layers_; }

  AversionScore operator()(int k, int ell) const {
    if (k == 0) {
      switch (policy_.kind) {
        case PolicyKind::SQ_RTB:
        case PolicyKind::SQ_RE:
        case PolicyKind::LAS_QTB: return AversionScore::of(0, 0);
        case PolicyKind::SQ_RTB_RE: return AversionScore::of(0, 0, 0);
        default: return AversionScore::of(0);
      }
    }
    const double kk = k;
    const double l = ell;
    switch (policy_.kind) {
      case PolicyKind::Random: return AversionScore::of(0);
      case PolicyKind::SQ: return AversionScore::of(l);
      case PolicyKind::SQ_RTB: return AversionScore::of(l, kk);
      case PolicyKind::SQ_RE: return AversionScore::of(kk, l);
      case PolicyKind::SQ_RTB_RE: return AversionScore::of(k > s_ ? 1.0 : 0.0, l, kk);
      case PolicyKind::LAS: return AversionScore::of(kk);
      case PolicyKind::LAS_QTB: return AversionScore::of(kk, l);
      case PolicyKind::RE: return AversionScore::of(kk);
      case PolicyKind::LEW:
        // E[X] = 1 by normalization.
        return AversionScore::of((l - 1.0) + residual_[static_cast<std::size_t>(std::min(k, layers_))]);
    }
    return AversionScore::of(0);
  }

  /// Residual mean used by LEW at layer k (LEW tables only).
  double lew_residual(int k) const { return residual_.at(static_cast<std::size_t>(k)); }

 private:
  Policy policy_;
  int layers_;
  int s_ = 0;
  std::vector<double> residual_;
};

/// xi(k, ell) for one observation. Builds the score table each call; hot
/// paths should hold a ScoreTable instead.
inline AversionScore aversion(const Policy& policy, const ServerObservation& obs, const LayerGrid& grid,
                              const PhaseType* job_size = nullptr) {
  if ((obs.k == 0) != (obs.ell == 0)) throw std::invalid_argument("aversion: k = 0 iff ell = 0");
  if (obs.k < 0 || obs.k > grid.layers()) throw std::invalid_argument("aversion: layer outside grid");
  return ScoreTable(policy, grid, job_size)(obs.k, obs.ell);
}

inline constexpr double kDefaultSurvivalTarget = 1e-3;
inline constexpr int kDefaultLayerCap = 5000;

/// Layer grid a policy needs: none for policies blind to the age, the
/// single threshold T for SQ-RE/RE, otherwise c_k = k*delta with r chosen as
/// the smallest value with survival(c_r) <= survival_target (capped), unless
/// `r_override` is given. SQ-RTB-RE always covers its threshold.
inline LayerGrid grid_for(const Policy& policy, const PhaseType& job_size, double delta,
                          std::optional<int> r_override = std::nullopt, int r_cap = kDefaultLayerCap,
                          double survival_target = kDefaultSurvivalTarget) {
  if (policy.ignores_layer()) return LayerGrid();
  if (policy.single_threshold()) return LayerGrid({policy.threshold});
  if (!(delta > 0)) throw ConfigError("policy " + to_string(policy) + " needs a positive layer width delta");
  int r = 0;
  if (r_override) {
    r = *r_override;
  } else {
    const Matrix& A = job_size.generator();
    const double q = numerics::uniformization_rate(A);
    auto step = [&A, q](const RowVector& in, RowVector& out) { out = in + (in * A) / q; };
    RowVector v = job_size.alpha().transpose();
    while (r < r_cap && v.sum() > survival_target) {
      v = numerics::propagate<RowVector>(v, q, delta, step).value;
      ++r;
    }
    r = std::max(r, 1);
  }
  if (policy.kind == PolicyKind::SQ_RTB_RE) {
    const int s = static_cast<int>(std::lround(policy.threshold / delta));
    if (s < 1 || std::abs(s * delta - policy.threshold) > 1e-9 * std::max(1.0, policy.threshold)) {
      throw ConfigError("policy " + to_string(policy) + ": threshold must be a multiple of delta");
    }
    r = std::max(r, s);
  }
  return LayerGrid::uniform(delta, r);
}

}  // namespace lbast
