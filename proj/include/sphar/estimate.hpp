#pragma once

// Per-multipole least squares for SPHAR(p) kernels.
//
// For each multipole the estimator pools the 2 ell + 1 series and regresses
// a_{ell,m}(t) on its p lags over t = p+1..n. The normal equations are
// accumulated in one pass (p x p Gram, no tall design matrix) and solved by
// Cholesky. The kernel estimate is k_N(z) = sum_{ell <= L_N} phi_hat_ell
// (2 ell + 1)/(4 pi) P_ell(z).

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sphar/errors.hpp"
#include "sphar/harmonics.hpp"
#include "sphar/simulate.hpp"

namespace sphar {

/// Running X'X, X'Y and X'eps for one multipole.
class MomentAccumulator {
 public:
  explicit MomentAccumulator(int order)
      : order_(order),
        xx_(static_cast<std::size_t>(order) * order, 0.0),
        xy_(order, 0.0),
        xe_(order, 0.0) {}

  /// Adds the regression rows t = p..n-1 (0-based) of one series.
  /// `innovations`, when given, feeds the score X'eps.
  void add_series(std::span<const double> values, std::span<const double> innovations = {}) {
    const int p = order_;
    const std::size_t n = values.size();
    if (n <= static_cast<std::size_t>(p)) return;
    const bool score = !innovations.empty();
    if (p == 1) {
      double sxx = 0.0, sxy = 0.0, sxe = 0.0;
      for (std::size_t t = 1; t < n; ++t) {
        const double x = values[t - 1];
        sxx += x * x;
        sxy += x * values[t];
        if (score) sxe += x * innovations[t];
      }
      xx_[0] += sxx;
      xy_[0] += sxy;
      xe_[0] += sxe;
    } else {
      for (std::size_t t = p; t < n; ++t) {
        const double* lag = values.data() + t - 1;  // lag[-j] = a(t-1-j)
        for (int i = 0; i < p; ++i) {
          const double xi = lag[-i];
          for (int j = 0; j <= i; ++j) xx_[i * p + j] += xi * lag[-j];
          xy_[i] += xi * values[t];
          if (score) xe_[i] += xi * innovations[t];
        }
      }
    }
    rows_ += n - p;
  }

  int order() const noexcept { return order_; }
  std::size_t rows() const noexcept { return rows_; }

  Eigen::MatrixXd gram() const {
    Eigen::MatrixXd g(order_, order_);
    for (int i = 0; i < order_; ++i)
      for (int j = 0; j <= i; ++j) g(i, j) = g(j, i) = xx_[i * order_ + j];
    return g;
  }
  Eigen::VectorXd cross() const { return Eigen::Map<const Eigen::VectorXd>(xy_.data(), order_); }
  Eigen::VectorXd score() const { return Eigen::Map<const Eigen::VectorXd>(xe_.data(), order_); }

 private:
  int order_;
  std::vector<double> xx_;  // lower triangle used
  std::vector<double> xy_;
  std::vector<double> xe_;
  std::size_t rows_ = 0;
};

struct MultipoleFit {
  int ell = 0;
  std::vector<double> coefficients;
  /// (n - p) times the number of pooled series; (n - p)(2 ell + 1) for a panel.
  std::size_t sample_size = 0;
  /// X'X / sample_size. Dividing by C_ell gives A_{ell;N}.
  Eigen::MatrixXd gram;
};

inline constexpr double kMinReciprocalCondition = 1e-12;

/// Solves the accumulated normal equations; rank deficiency
/// (reciprocal condition number < 1e-12) is an error, never regularised.
inline MultipoleFit solve_multipole(int ell, const MomentAccumulator& acc) {
  const Eigen::MatrixXd g = acc.gram();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g, Eigen::EigenvaluesOnly);
  const double hi = eig.eigenvalues().maxCoeff();
  const double lo = eig.eigenvalues().minCoeff();
  if (acc.rows() == 0 || !(hi > 0.0) || lo / hi < kMinReciprocalCondition) {
    throw SingularError("fit_multipole: rank-deficient design at ell=" + std::to_string(ell), ell);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(g);
  if (llt.info() != Eigen::Success) {
    throw SingularError("fit_multipole: Cholesky failed at ell=" + std::to_string(ell), ell);
  }
  const Eigen::VectorXd coef = llt.solve(acc.cross());
  MultipoleFit fit;
  fit.ell = ell;
  fit.coefficients.assign(coef.data(), coef.data() + coef.size());
  fit.sample_size = acc.rows();
  fit.gram = g / static_cast<double>(acc.rows());
  return fit;
}

/// Pooled least squares over the given series (all of one multipole).
inline MultipoleFit fit_multipole(int ell, std::span<const std::span<const double>> series, int order) {
  if (order < 1) throw DomainError("fit_multipole: order must be >= 1");
  MomentAccumulator acc(order);
  for (const auto& s : series) {
    if (s.size() <= static_cast<std::size_t>(order)) {
      throw DomainError("fit_multipole: series length must exceed the order");
    }
    acc.add_series(s);
  }
  return solve_multipole(ell, acc);
}

inline MultipoleFit fit_multipole(const CoefficientPanel& panel, int ell, int order) {
  std::vector<std::span<const double>> series;
  series.reserve(2 * ell + 1);
  for (int m = -ell; m <= ell; ++m) series.push_back(panel.series(ell, m));
  return fit_multipole(ell, series, order);
}

// ---------------------------------------------------------------------------

struct TruncationPolicy {
  enum class Kind { fixed, rate };
  Kind kind = Kind::fixed;
  int level = 0;
  double c = 1.0;
  double d = 0.0;

  static TruncationPolicy fixed(int level) { return {Kind::fixed, level, 1.0, 0.0}; }
  static TruncationPolicy rate(double c, double d) { return {Kind::rate, 0, c, d}; }

  /// L_N = floor(c N^d); the tiny relative nudge keeps exact powers such as
  /// 1000^(1/3) from rounding down.
  int level_for(long long N) const {
    if (kind == Kind::fixed) {
      if (level < 0) throw DomainError("truncation: fixed level must be >= 0");
      return level;
    }
    if (N < 1) throw DomainError("truncation: N must be >= 1");
    const double v = c * std::pow(static_cast<double>(N), d) * (1.0 + 1e-12);
    if (!(v >= 0.0)) throw DomainError("truncation: rate rule gives a negative level");
    return static_cast<int>(std::floor(v));
  }
};

struct KernelEstimate {
  int order = 1;
  int truncation = 0;  // L_N
  int n = 0;
  int N = 0;  // n - p
  std::vector<MultipoleFit> fits;  // fits[ell], ell = 0..L_N

  std::vector<double> operator()(double z) const;
};

/// k_hat(z) = sum_{ell <= L_N} phi_hat_ell (2 ell + 1)/(4 pi) P_ell(z).
inline std::vector<double> eval_estimate(const KernelEstimate& est, double z) {
  detail::require_unit_interval(z, "eval_estimate");
  std::vector<double> k(est.order, 0.0);
  double prev = 1.0, cur = z;
  for (int ell = 0; ell <= est.truncation; ++ell) {
    double pl = 1.0;
    if (ell == 1) {
      pl = z;
    } else if (ell > 1) {
      const double l = ell - 1.0;
      const double next = ((2.0 * l + 1.0) * z * cur - l * prev) / (l + 1.0);
      prev = cur;
      cur = next;
      pl = cur;
    }
    const double w = (2.0 * ell + 1.0) / kFourPi * pl;
    const auto& c = est.fits[ell].coefficients;
    for (int j = 0; j < est.order; ++j) k[j] += c[j] * w;
  }
  return k;
}

inline std::vector<double> KernelEstimate::operator()(double z) const { return eval_estimate(*this, z); }

inline KernelEstimate estimate_kernel(const CoefficientPanel& panel, const TruncationPolicy& policy,
                                      int order) {
  if (panel.length() <= order) throw DomainError("estimate_kernel: n must exceed the order");
  KernelEstimate est;
  est.order = order;
  est.n = panel.length();
  est.N = panel.length() - order;
  est.truncation = policy.level_for(est.N);
  if (est.truncation > panel.degree_max()) {
    throw DomainError("estimate_kernel: L_N=" + std::to_string(est.truncation) +
                      " exceeds panel degree " + std::to_string(panel.degree_max()));
  }
  est.fits.reserve(est.truncation + 1);
  for (int ell = 0; ell <= est.truncation; ++ell) est.fits.push_back(fit_multipole(panel, ell, order));
  return est;
}

// ---------------------------------------------------------------------------
// Streaming path: simulate one multipole and accumulate without storing the
// panel. Uses the same substreams as simulate_panel, so both paths see
// identical data.

struct StreamScratch {
  std::vector<double> values;
  std::vector<double> innovations;
};

inline MomentAccumulator accumulate_simulated(const SeriesRecipe& recipe, int n,
                                              const Initialization& init, StreamKey key, int order,
                                              StreamScratch& scratch, bool with_score = false) {
  MomentAccumulator acc(order);
  scratch.values.resize(n);
  if (with_score) scratch.innovations.resize(n);
  key.ell = recipe.ell;
  for (int m = -recipe.ell; m <= recipe.ell; ++m) {
    key.m = m;
    NormalStream normals(key);
    std::span<double> innov = with_score ? std::span<double>(scratch.innovations) : std::span<double>();
    simulate_series(recipe, init, normals, scratch.values, innov);
    acc.add_series(scratch.values, innov);
  }
  return acc;
}

/// Simulates and fits ell = 0..L_N for one replication.
inline KernelEstimate estimate_simulated(std::span<const SeriesRecipe> recipes, int n,
                                         const Initialization& init, const StreamKey& key,
                                         int truncation, int order, StreamScratch& scratch) {
  if (truncation + 1 > static_cast<int>(recipes.size())) {
    throw DomainError("estimate_simulated: not enough multipole recipes for L_N");
  }
  KernelEstimate est;
  est.order = order;
  est.truncation = truncation;
  est.n = n;
  est.N = n - order;
  est.fits.reserve(truncation + 1);
  for (int ell = 0; ell <= truncation; ++ell) {
    const MomentAccumulator acc = accumulate_simulated(recipes[ell], n, init, key, order, scratch);
    est.fits.push_back(solve_multipole(ell, acc));
  }
  return est;
}

// ---------------------------------------------------------------------------
// Plug-in decay exponent and bandwidth

enum class PluginVariant {
  /// beta = -sum(log ell log phi^2) / (2 sum (log ell)^2): regression through
  /// the origin, exact only when the multiplicative constant is one.
  paper_raw,
  /// Ordinary regression of log phi^2 on log ell with intercept.
  demeaned,
};

struct PluginResult {
  double beta_hat = 0.0;
  double d_star = 0.0;  // 1 / (2 beta_hat - 1)
};

inline PluginResult plugin_bandwidth(std::span<const int> ells, std::span<const double> phi_hat,
                                     PluginVariant variant = PluginVariant::demeaned) {
  if (ells.size() != phi_hat.size()) throw DomainError("plugin_bandwidth: size mismatch");
  if (ells.size() < 2) throw DomainError("plugin_bandwidth: need at least two multipoles");
  std::vector<double> x(ells.size()), y(ells.size());
  for (std::size_t i = 0; i < ells.size(); ++i) {
    if (ells[i] < 2) throw DomainError("plugin_bandwidth: multipoles must be >= 2");
    if (phi_hat[i] == 0.0 || !std::isfinite(phi_hat[i])) {
      throw DomainError("plugin_bandwidth: zero or non-finite estimate at ell=" +
                        std::to_string(ells[i]));
    }
    x[i] = std::log(static_cast<double>(ells[i]));
    y[i] = std::log(phi_hat[i] * phi_hat[i]);
  }

  double beta = 0.0;
  if (variant == PluginVariant::paper_raw) {
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sxy += x[i] * y[i];
      sxx += x[i] * x[i];
    }
    beta = -sxy / (2.0 * sxx);
  } else {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
    }
    beta = -(sxy / sxx) / 2.0;
  }
  if (!(beta > 0.5)) {
    throw DomainError("plugin_bandwidth: beta_hat=" + std::to_string(beta) +
                      " <= 1/2 leaves d* undefined");
  }
  return {beta, 1.0 / (2.0 * beta - 1.0)};
}

/// Plug-in from a fitted SPHAR(1) estimate over ell in [l_min, l_max].
inline PluginResult plugin_bandwidth(const KernelEstimate& est, int l_min, int l_max,
                                     PluginVariant variant = PluginVariant::demeaned) {
  if (est.order != 1) throw DomainError("plugin_bandwidth: defined for order-1 fits only");
  if (l_max > est.truncation || l_min > l_max) throw DomainError("plugin_bandwidth: bad ell range");
  std::vector<int> ells;
  std::vector<double> phi;
  for (int ell = l_min; ell <= l_max; ++ell) {
    ells.push_back(ell);
    phi.push_back(est.fits[ell].coefficients[0]);
  }
  return plugin_bandwidth(ells, phi, variant);
}

/// CSV `ell,j,phi_hat` preceded by `# key=value` metadata lines.
inline void write_estimate_csv(std::ostream& os, const KernelEstimate& est, std::uint64_t seed) {
  os << "# N=" << est.N << "\n# L_N=" << est.truncation << "\n# seed=" << seed << "\n";
  os << "ell,j,phi_hat\n";
  char buf[64];
  for (const MultipoleFit& f : est.fits)
    for (std::size_t j = 0; j < f.coefficients.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", f.coefficients[j]);
      os << f.ell << ',' << (j + 1) << ',' << buf << '\n';
    }
}

}  // namespace sphar
