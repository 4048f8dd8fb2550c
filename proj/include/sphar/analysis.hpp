#pragma once

// Monte Carlo harnesses and theory diagnostics for the kernel estimator:
// L2 bias/variance decomposition, sup-norm error, standardised CLT
// statistics with exact Wasserstein-1 distances to N(0,1), the V_N
// covariance, the finite-expansion limit covariance and score statistics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sphar/errors.hpp"
#include "sphar/estimate.hpp"
#include "sphar/harmonics.hpp"
#include "sphar/model.hpp"
#include "sphar/parallel.hpp"
#include "sphar/rng.hpp"
#include "sphar/simulate.hpp"

namespace sphar {

// ---------------------------------------------------------------------------
// L2 and sup-norm errors

struct ErrorDecomposition {
  double variance_term = 0.0;  // sum_{ell <= L_N} ||phi_hat - phi||^2 (2 ell + 1)/(8 pi^2)
  double bias_term = 0.0;      // sum_{L_N < ell <= L_model} ||phi||^2 (2 ell + 1)/(8 pi^2)
  double total() const { return variance_term + bias_term; }
};

inline constexpr double kEightPiSq = 8.0 * std::numbers::pi * std::numbers::pi;

/// Squared L2 norm of the omitted kernel tail; summed from the top so small
/// terms accumulate first.
inline double bias_tail(const SpharModel& model, int truncation) {
  double sum = 0.0;
  for (int ell = model.degree_max(); ell > truncation; --ell) {
    double sq = 0.0;
    for (double v : model.phi(ell)) sq += v * v;
    sum += sq * (2.0 * ell + 1.0) / kEightPiSq;
  }
  return sum;
}

inline double variance_part(const KernelEstimate& est, const SpharModel& model) {
  if (est.truncation > model.degree_max()) {
    throw DomainError("l2_error_decomposition: L_N exceeds model degree");
  }
  double sum = 0.0;
  for (int ell = 0; ell <= est.truncation; ++ell) {
    const auto truth = model.phi(ell);
    const auto& hat = est.fits[ell].coefficients;
    double sq = 0.0;
    for (int j = 0; j < est.order; ++j) sq += (hat[j] - truth[j]) * (hat[j] - truth[j]);
    sum += sq * (2.0 * ell + 1.0) / kEightPiSq;
  }
  return sum;
}

inline ErrorDecomposition l2_error_decomposition(const KernelEstimate& est, const SpharModel& model) {
  if (est.order != model.order()) throw DomainError("l2_error_decomposition: order mismatch");
  return {variance_part(est, model), bias_tail(model, est.truncation)};
}

/// Uniform grid on [-1, 1] with both endpoints, plus P_ell at every node.
class GridBasis {
 public:
  GridBasis(int resolution, int degree_max)
      : resolution_(resolution), degree_max_(degree_max) {
    if (resolution < 2) throw DomainError("grid resolution must be >= 2");
    nodes_.resize(resolution);
    for (int i = 0; i < resolution; ++i) nodes_[i] = -1.0 + 2.0 * i / (resolution - 1.0);
    nodes_.back() = 1.0;
    values_.resize(static_cast<std::size_t>(resolution) * (degree_max + 1));
    for (int i = 0; i < resolution; ++i) legendre_fill(nodes_[i], row(i));
  }

  int resolution() const noexcept { return resolution_; }
  int degree_max() const noexcept { return degree_max_; }
  std::span<const double> nodes() const noexcept { return nodes_; }
  std::span<const double> legendre(int i) const {
    return std::span<const double>(values_).subspan(static_cast<std::size_t>(i) * (degree_max_ + 1),
                                                    degree_max_ + 1);
  }

 private:
  std::span<double> row(int i) {
    return std::span<double>(values_).subspan(static_cast<std::size_t>(i) * (degree_max_ + 1),
                                              degree_max_ + 1);
  }

  int resolution_;
  int degree_max_;
  std::vector<double> nodes_;
  std::vector<double> values_;
};

/// True kernel k(z) on a uniform grid, using the whole model table.
/// Layout: [node * p + j].
inline std::vector<double> tabulate_kernel(const SpharModel& model, int resolution) {
  GridBasis grid(resolution, 0);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(resolution) * model.order());
  for (double z : grid.nodes()) {
    const auto k = kernel_eval(model, z);
    out.insert(out.end(), k.begin(), k.end());
  }
  return out;
}

inline double sup_error_on_grid(const KernelEstimate& est, const GridBasis& grid,
                                std::span<const double> truth) {
  if (grid.degree_max() < est.truncation) throw DomainError("sup_error: grid basis too short");
  const int p = est.order;
  double worst = 0.0;
  std::vector<double> k(p);
  for (int i = 0; i < grid.resolution(); ++i) {
    std::fill(k.begin(), k.end(), 0.0);
    const auto pl = grid.legendre(i);
    for (int ell = 0; ell <= est.truncation; ++ell) {
      const double w = (2.0 * ell + 1.0) / kFourPi * pl[ell];
      const auto& c = est.fits[ell].coefficients;
      for (int j = 0; j < p; ++j) k[j] += c[j] * w;
    }
    double sq = 0.0;
    for (int j = 0; j < p; ++j) {
      const double d = k[j] - truth[static_cast<std::size_t>(i) * p + j];
      sq += d * d;
    }
    worst = std::max(worst, std::sqrt(sq));
  }
  return worst;
}

/// max over a uniform z-grid (endpoints included) of ||k_hat(z) - k(z)||.
inline double sup_error(const KernelEstimate& est, const SpharModel& model, int resolution = 2001) {
  if (est.order != model.order()) throw DomainError("sup_error: order mismatch");
  const GridBasis grid(resolution, est.truncation);
  const auto truth = tabulate_kernel(model, resolution);
  return sup_error_on_grid(est, grid, truth);
}

// ---------------------------------------------------------------------------
// Experiment options shared by the harnesses

struct HarnessOptions {
  unsigned workers = 1;
  Initialization init{};
  int grid_resolution = 2001;
};

inline std::vector<SeriesRecipe> make_recipes(const SpharModel& model, int degree_max) {
  if (degree_max > model.degree_max()) {
    throw DomainError("truncation level " + std::to_string(degree_max) +
                      " exceeds model degree " + std::to_string(model.degree_max()));
  }
  std::vector<SeriesRecipe> recipes;
  recipes.reserve(degree_max + 1);
  for (int ell = 0; ell <= degree_max; ++ell) recipes.push_back(SeriesRecipe::from_model(model, ell));
  return recipes;
}

// ---------------------------------------------------------------------------
// MSE experiment

struct MSERow {
  long long N = 0;
  int truncation = 0;
  double variance = 0.0;
  double bias = 0.0;
  double mse = 0.0;
  double sup_error = 0.0;
  int replications = 0;  // successful
  int failures = 0;
};

struct MSEReport {
  std::vector<MSERow> rows;
  std::uint64_t seed = 0;
  int B = 0;
  TruncationPolicy policy;
};

/// For each N: B independent panels of length n = N + p, each estimated and
/// decomposed; rows hold Monte Carlo means over successful replications.
/// Replication b at sample size N uses substreams (seed, tag = N, b).
inline MSEReport run_mse_experiment(const SpharModel& model, std::span<const long long> Ns,
                                    const TruncationPolicy& policy, int B, std::uint64_t seed,
                                    const HarnessOptions& options = {}) {
  if (B < 1) throw DomainError("run_mse_experiment: B must be >= 1");
  const int p = model.order();
  MSEReport report;
  report.seed = seed;
  report.B = B;
  report.policy = policy;

  int max_level = 0;
  for (long long N : Ns) max_level = std::max(max_level, policy.level_for(N));
  const std::vector<SeriesRecipe> recipes = make_recipes(model, max_level);
  const GridBasis grid(options.grid_resolution, max_level);
  const std::vector<double> truth = tabulate_kernel(model, options.grid_resolution);

  for (long long N : Ns) {
    if (N <= p) throw DomainError("run_mse_experiment: N must exceed the order");
    const int level = policy.level_for(N);
    const int n = static_cast<int>(N) + p;
    const double bias = bias_tail(model, level);

    struct Outcome {
      bool ok = false;
      double variance = 0.0;
      double sup = 0.0;
    };
    std::vector<Outcome> outcomes(B);
    parallel_for(static_cast<std::size_t>(B), options.workers, [&](std::size_t b) {
      StreamScratch scratch;
      const StreamKey key{seed, static_cast<std::uint64_t>(N), b, 0, 0};
      try {
        const KernelEstimate est =
            estimate_simulated(recipes, n, options.init, key, level, p, scratch);
        outcomes[b] = {true, variance_part(est, model), sup_error_on_grid(est, grid, truth)};
      } catch (const SingularError&) {
        outcomes[b] = {};
      }
    });

    MSERow row;
    row.N = N;
    row.truncation = level;
    row.bias = bias;
    double sv = 0.0, sm = 0.0, ss = 0.0;
    for (const Outcome& o : outcomes) {
      if (!o.ok) {
        ++row.failures;
        continue;
      }
      ++row.replications;
      sv += o.variance;
      sm += o.variance + bias;
      ss += o.sup;
    }
    if (row.replications > 0) {
      row.variance = sv / row.replications;
      row.mse = sm / row.replications;
      row.sup_error = ss / row.replications;
    } else {
      row.variance = row.mse = row.sup_error = std::numeric_limits<double>::quiet_NaN();
    }
    report.rows.push_back(row);
  }
  return report;
}

/// Least-squares slope of log(mse) on log(N).
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

inline double mse_slope(const MSEReport& report) {
  std::vector<double> x, y;
  for (const MSERow& r : report.rows) {
    x.push_back(static_cast<double>(r.N));
    y.push_back(r.mse);
  }
  return loglog_slope(x, y);
}

// ---------------------------------------------------------------------------
// Wasserstein-1 distance to the standard normal

namespace detail {

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi); }
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

/// int_{-inf}^x Phi
inline double lower_partial(double x) { return x * normal_cdf(x) + normal_pdf(x); }
/// int_x^inf (1 - Phi)
inline double upper_partial(double x) { return normal_pdf(x) - x * normal_sf(x); }

/// int_a^b Phi(t) dt, arranged to avoid cancellation on either side of 0.
inline double integral_cdf(double a, double b) {
  if (b <= 0.0) return lower_partial(b) - lower_partial(a);
  if (a >= 0.0) return (b - a) - (upper_partial(a) - upper_partial(b));
  return (lower_partial(0.0) - lower_partial(a)) + b - (upper_partial(0.0) - upper_partial(b));
}

/// Phi^{-1}(c) restricted to [a, b] where Phi(a) < c < Phi(b): safeguarded Newton.
inline double bracketed_quantile(double c, double a, double b) {
  double x = 0.5 * (a + b);
  for (int iter = 0; iter < 200; ++iter) {
    const double f = normal_cdf(x) - c;
    if (f > 0.0) b = x; else a = x;
    const double d = normal_pdf(x);
    double next = d > 0.0 ? x - f / d : 0.5 * (a + b);
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    if (std::abs(next - x) <= 1e-15 * (1.0 + std::abs(x))) return next;
    x = next;
  }
  return x;
}

}  // namespace detail

/// Exact W1(F_n, Phi) = int |F_n - Phi| by piecewise integration between
/// order statistics, with closed-form tails.
inline double wasserstein_w1_normal(std::span<const double> sample) {
  if (sample.empty()) throw DomainError("wasserstein_w1_normal: empty sample");
  std::vector<double> x(sample.begin(), sample.end());
  for (double v : x) {
    if (!std::isfinite(v)) throw DomainError("wasserstein_w1_normal: non-finite sample value");
  }
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  double total = detail::lower_partial(x.front()) + detail::upper_partial(x.back());
  for (std::size_t i = 1; i < n; ++i) {
    const double a = x[i - 1], b = x[i];
    if (b <= a) continue;
    const double c = static_cast<double>(i) / static_cast<double>(n);
    const double fa = detail::normal_cdf(a), fb = detail::normal_cdf(b);
    if (c >= fb) {
      total += c * (b - a) - detail::integral_cdf(a, b);
    } else if (c <= fa) {
      total += detail::integral_cdf(a, b) - c * (b - a);
    } else {
      const double s = detail::bracketed_quantile(c, a, b);
      total += c * (s - a) - detail::integral_cdf(a, s);
      total += detail::integral_cdf(s, b) - c * (b - s);
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Standardised CLT statistics

/// K_N samples at one sample size. values[(b * m + i) * p + j] is component j
/// at location i in successful replication b.
struct CltSamples {
  long long N = 0;
  int truncation = 0;
  int order = 1;
  std::vector<double> locations;
  int replications = 0;  // successful
  int failures = 0;
  std::vector<double> values;

  double at(int b, int i, int j) const {
    return values[(static_cast<std::size_t>(b) * locations.size() + i) * order + j];
  }
  std::vector<double> component(int i, int j) const {
    std::vector<double> out(replications);
    for (int b = 0; b < replications; ++b) out[b] = at(b, i, j);
    return out;
  }
};

inline void require_open_distinct(std::span<const double> locations, const char* who) {
  if (locations.empty()) throw DomainError(std::string(who) + ": no locations");
  for (std::size_t i = 0; i < locations.size(); ++i) {
    if (!(locations[i] > -1.0 && locations[i] < 1.0)) {
      throw DomainError(std::string(who) + ": locations must lie in (-1, 1)");
    }
    for (std::size_t k = 0; k < i; ++k)
      if (locations[k] == locations[i]) throw DomainError(std::string(who) + ": locations must be distinct");
  }
}

/// K_N = sqrt(N / L_N(z_i)) (k_hat_N(z_i) - k(z_i)) with k the full model
/// kernel. Replication b uses substreams (seed, tag = N, b).
inline CltSamples standardized_samples(const SpharModel& model, long long N,
                                       const TruncationPolicy& policy,
                                       std::span<const double> locations, int B, std::uint64_t seed,
                                       const HarnessOptions& options = {}) {
  require_open_distinct(locations, "standardized_samples");
  if (B < 1) throw DomainError("standardized_samples: B must be >= 1");
  const int p = model.order();
  const int m = static_cast<int>(locations.size());
  const int level = policy.level_for(N);
  const int n = static_cast<int>(N) + p;
  const std::vector<SeriesRecipe> recipes = make_recipes(model, level);

  std::vector<double> truth, scale;
  for (double z : locations) {
    const auto k = kernel_eval(model, z);
    truth.insert(truth.end(), k.begin(), k.end());
    scale.push_back(std::sqrt(static_cast<double>(N) / ln_weight(z, level)));
  }

  std::vector<std::vector<double>> per_rep(B);
  parallel_for(static_cast<std::size_t>(B), options.workers, [&](std::size_t b) {
    StreamScratch scratch;
    const StreamKey key{seed, static_cast<std::uint64_t>(N), b, 0, 0};
    try {
      const KernelEstimate est = estimate_simulated(recipes, n, options.init, key, level, p, scratch);
      std::vector<double> row(static_cast<std::size_t>(m) * p);
      for (int i = 0; i < m; ++i) {
        const auto k = eval_estimate(est, locations[i]);
        for (int j = 0; j < p; ++j) row[i * p + j] = scale[i] * (k[j] - truth[i * p + j]);
      }
      per_rep[b] = std::move(row);
    } catch (const SingularError&) {
      per_rep[b].clear();
    }
  });

  CltSamples out;
  out.N = N;
  out.truncation = level;
  out.order = p;
  out.locations.assign(locations.begin(), locations.end());
  for (auto& row : per_rep) {
    if (row.empty()) {
      ++out.failures;
      continue;
    }
    ++out.replications;
    out.values.insert(out.values.end(), row.begin(), row.end());
  }
  return out;
}

struct CltBlock {
  CltSamples samples;
  /// W1 to N(0,1) per (location, component): [i * p + j].
  std::vector<double> wasserstein;
  /// Per component j, m x m sample correlation between locations.
  std::vector<Eigen::MatrixXd> correlations;
};

struct CLTReport {
  std::vector<CltBlock> blocks;
  std::uint64_t seed = 0;
  int B = 0;
};

inline Eigen::MatrixXd sample_correlation(const Eigen::MatrixXd& data) {
  // data: rows = replications, cols = variables
  const Eigen::RowVectorXd mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / std::max<Eigen::Index>(1, data.rows() - 1);
  const Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
  Eigen::MatrixXd corr = cov;
  for (Eigen::Index i = 0; i < corr.rows(); ++i)
    for (Eigen::Index j = 0; j < corr.cols(); ++j) corr(i, j) = cov(i, j) / (sd(i) * sd(j));
  return corr;
}

inline CLTReport run_clt_experiment(const SpharModel& model, std::span<const long long> Ns,
                                    const TruncationPolicy& policy, std::span<const double> locations,
                                    int B, std::uint64_t seed, const HarnessOptions& options = {}) {
  CLTReport report;
  report.seed = seed;
  report.B = B;
  const int p = model.order();
  const int m = static_cast<int>(locations.size());
  for (long long N : Ns) {
    CltBlock block;
    block.samples = standardized_samples(model, N, policy, locations, B, seed, options);
    const CltSamples& s = block.samples;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < p; ++j) {
        const auto comp = s.component(i, j);
        block.wasserstein.push_back(comp.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                 : wasserstein_w1_normal(comp));
      }
    for (int j = 0; j < p; ++j) {
      Eigen::MatrixXd data(s.replications, m);
      for (int b = 0; b < s.replications; ++b)
        for (int i = 0; i < m; ++i) data(b, i) = s.at(b, i, j);
      block.correlations.push_back(sample_correlation(data));
    }
    report.blocks.push_back(std::move(block));
  }
  return report;
}

// ---------------------------------------------------------------------------
// V_N, limit covariance and score statistics

/// (C_{ell;Z}/C_ell) Sigma_ell^{-1} = C_{ell;Z} Gamma_ell^{-1}.
inline Eigen::MatrixXd scaled_inverse_correlation(const SpharModel& model, int ell) {
  const SecondOrder so = second_order(model, ell);
  Eigen::LLT<Eigen::MatrixXd> llt(so.gamma);
  if (llt.info() != Eigen::Success) {
    throw SingularError("Gamma_ell not positive definite at ell=" + std::to_string(ell), ell);
  }
  const int p = model.order();
  return model.noise(ell) * llt.solve(Eigen::MatrixXd::Identity(p, p));
}

/// Block (i, j) = (L_N(z_i) L_N(z_j))^{-1/2} sum_{ell <= L_N}
/// (C_{ell;Z}/C_ell) Sigma_ell^{-1} (2 ell + 1)/(16 pi^2) P_ell(z_i) P_ell(z_j).
inline Eigen::MatrixXd compute_vn_at_level(const SpharModel& model, int truncation,
                                           std::span<const double> locations) {
  require_open_distinct(locations, "compute_vn");
  if (truncation > model.degree_max()) throw DomainError("compute_vn: L_N exceeds model degree");
  const int p = model.order();
  const int m = static_cast<int>(locations.size());
  std::vector<std::vector<double>> pl(m, std::vector<double>(truncation + 1));
  std::vector<double> norm(m);
  for (int i = 0; i < m; ++i) {
    legendre_fill(locations[i], pl[i]);
    norm[i] = ln_weight(locations[i], truncation);
  }
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(m * p, m * p);
  for (int ell = 0; ell <= truncation; ++ell) {
    const Eigen::MatrixXd s = scaled_inverse_correlation(model, ell);
    const double w = (2.0 * ell + 1.0) / kSixteenPiSq;
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < m; ++k) v.block(i * p, k * p, p, p) += s * (w * pl[i][ell] * pl[k][ell]);
  }
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < m; ++k) v.block(i * p, k * p, p, p) /= std::sqrt(norm[i] * norm[k]);
  return v;
}

/// V_N with L_N = floor(N^d).
inline Eigen::MatrixXd compute_vn(const SpharModel& model, long long N, double d,
                                  std::span<const double> locations) {
  return compute_vn_at_level(model, TruncationPolicy::rate(1.0, d).level_for(N), locations);
}

struct LimitCovariance {
  double z = 0.0;
  double z_prime = 0.0;
  Eigen::MatrixXd matrix;  // p x p
};

/// Gamma_k(z, z') = sum_{ell <= L} C_{ell;Z} Gamma_ell^{-1} (2 ell + 1)/(16 pi^2)
/// P_ell(z) P_ell(z'), for a model whose expansion stops at its degree_max.
inline LimitCovariance limit_covariance(const SpharModel& model, double z, double z_prime) {
  detail::require_unit_interval(z, "limit_covariance");
  detail::require_unit_interval(z_prime, "limit_covariance");
  const int L = model.degree_max();
  std::vector<double> pz(L + 1), pw(L + 1);
  legendre_fill(z, pz);
  legendre_fill(z_prime, pw);
  LimitCovariance out{z, z_prime, Eigen::MatrixXd::Zero(model.order(), model.order())};
  for (int ell = 0; ell <= L; ++ell) {
    out.matrix += scaled_inverse_correlation(model, ell) *
                  ((2.0 * ell + 1.0) / kSixteenPiSq * pz[ell] * pw[ell]);
  }
  return out;
}

/// b_tilde = Sigma_ell^{-1} B_{ell;N}, B_{ell;N} = X'eps / (C_ell sqrt(N(2 ell + 1))),
/// formed from the true innovations. Returns B rows of p values, row-major.
/// Replication b uses substreams (seed, tag = N, b).
inline std::vector<double> score_statistic_samples(const SpharModel& model, int ell, long long N,
                                                   int B, std::uint64_t seed,
                                                   const HarnessOptions& options = {}) {
  if (ell < 0 || ell > model.degree_max()) throw DomainError("score_statistic_samples: bad ell");
  if (B < 1) throw DomainError("score_statistic_samples: B must be >= 1");
  const int p = model.order();
  const int n = static_cast<int>(N) + p;
  const SeriesRecipe recipe = SeriesRecipe::from_model(model, ell);
  const SecondOrder so = second_order(model, ell);
  const Eigen::MatrixXd sigma_inv = so.sigma.inverse();
  const double denom = so.variance() * std::sqrt(static_cast<double>(N) * (2.0 * ell + 1.0));

  std::vector<double> out(static_cast<std::size_t>(B) * p);
  parallel_for(static_cast<std::size_t>(B), options.workers, [&](std::size_t b) {
    StreamScratch scratch;
    const StreamKey key{seed, static_cast<std::uint64_t>(N), b, 0, 0};
    const MomentAccumulator acc = accumulate_simulated(recipe, n, options.init, key, p, scratch, true);
    const Eigen::VectorXd tilde = sigma_inv * (acc.score() / denom);
    for (int j = 0; j < p; ++j) out[b * p + j] = tilde(j);
  });
  return out;
}

/// Leading CLT term U_N(z_i) = L_N(z_i)^{-1/2} sum_{ell <= L_N} Sigma_ell^{-1}
/// B_{ell;N} sqrt(2 ell + 1)/(4 pi) P_ell(z_i), whose covariance is V_N.
/// Returns B rows of m p values.
inline std::vector<double> leading_term_samples(const SpharModel& model, long long N, int truncation,
                                                std::span<const double> locations, int B,
                                                std::uint64_t seed,
                                                const HarnessOptions& options = {}) {
  require_open_distinct(locations, "leading_term_samples");
  const int p = model.order();
  const int m = static_cast<int>(locations.size());
  const int n = static_cast<int>(N) + p;
  const std::vector<SeriesRecipe> recipes = make_recipes(model, truncation);
  std::vector<Eigen::MatrixXd> sigma_inv;
  std::vector<double> denom;
  for (int ell = 0; ell <= truncation; ++ell) {
    const SecondOrder so = second_order(model, ell);
    sigma_inv.push_back(so.sigma.inverse());
    denom.push_back(so.variance() * std::sqrt(static_cast<double>(N) * (2.0 * ell + 1.0)));
  }
  std::vector<std::vector<double>> pl(m, std::vector<double>(truncation + 1));
  std::vector<double> norm(m);
  for (int i = 0; i < m; ++i) {
    legendre_fill(locations[i], pl[i]);
    norm[i] = std::sqrt(ln_weight(locations[i], truncation));
  }

  std::vector<double> out(static_cast<std::size_t>(B) * m * p);
  parallel_for(static_cast<std::size_t>(B), options.workers, [&](std::size_t b) {
    StreamScratch scratch;
    const StreamKey key{seed, static_cast<std::uint64_t>(N), b, 0, 0};
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(p, m);
    for (int ell = 0; ell <= truncation; ++ell) {
      const MomentAccumulator acc =
          accumulate_simulated(recipes[ell], n, options.init, key, p, scratch, true);
      const Eigen::VectorXd tilde = sigma_inv[ell] * (acc.score() / denom[ell]);
      const double r = std::sqrt(2.0 * ell + 1.0) / kFourPi;
      for (int i = 0; i < m; ++i) u.col(i) += tilde * (r * pl[i][ell]);
    }
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < p; ++j) out[(b * m + i) * p + j] = u(j, i) / norm[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Plug-in bandwidth experiment (order-1 models)

struct PluginRun {
  bool ok = false;
  double beta_hat = std::numeric_limits<double>::quiet_NaN();
  double d_star = std::numeric_limits<double>::quiet_NaN();
  std::string failure;
};

struct PluginReport {
  std::vector<PluginRun> runs;
  int successes() const {
    return static_cast<int>(std::count_if(runs.begin(), runs.end(), [](const PluginRun& r) { return r.ok; }));
  }
  /// Fraction of all runs with |beta_hat - target| < tolerance.
  double recovery_rate(double target, double tolerance) const {
    int hits = 0;
    for (const PluginRun& r : runs)
      if (r.ok && std::abs(r.beta_hat - target) < tolerance) ++hits;
    return runs.empty() ? 0.0 : static_cast<double>(hits) / runs.size();
  }
};

/// B independent panels of length n; fits ell = 0..l_max and regresses
/// log phi_hat^2 over [l_min, l_max]. Run b uses substreams (seed, tag = n, b).
inline PluginReport run_plugin_experiment(const SpharModel& model, int n, int B, int l_min, int l_max,
                                          PluginVariant variant, std::uint64_t seed,
                                          const HarnessOptions& options = {}) {
  if (model.order() != 1) throw DomainError("run_plugin_experiment: order-1 models only");
  if (B < 1) throw DomainError("run_plugin_experiment: B must be >= 1");
  const std::vector<SeriesRecipe> recipes = make_recipes(model, l_max);
  PluginReport report;
  report.runs.resize(B);
  parallel_for(static_cast<std::size_t>(B), options.workers, [&](std::size_t b) {
    StreamScratch scratch;
    const StreamKey key{seed, static_cast<std::uint64_t>(n), b, 0, 0};
    PluginRun run;
    try {
      const KernelEstimate est = estimate_simulated(recipes, n, options.init, key, l_max, 1, scratch);
      const PluginResult r = plugin_bandwidth(est, l_min, l_max, variant);
      run = {true, r.beta_hat, r.d_star, {}};
    } catch (const SingularError& e) {
      run.failure = e.what();
    } catch (const DomainError& e) {
      run.failure = e.what();
    }
    report.runs[b] = std::move(run);
  });
  return report;
}

// ---------------------------------------------------------------------------
// Table-shaped CSV output

inline void write_mse_csv(std::ostream& os, const MSEReport& report, const char* fmt = "%.5f") {
  os << "N,variance,bias,mse,sup_error,failures\n";
  char buf[64];
  for (const MSERow& r : report.rows) {
    os << r.N;
    for (double v : {r.variance, r.bias, r.mse, r.sup_error}) {
      std::snprintf(buf, sizeof buf, fmt, v);
      os << ',' << buf;
    }
    os << ',' << r.failures << '\n';
  }
}

inline void write_clt_csv(std::ostream& os, const CLTReport& report, const char* fmt = "%.2f") {
  os << "N,z,component,wasserstein\n";
  char zbuf[64], wbuf[64];
  for (const CltBlock& block : report.blocks) {
    const CltSamples& s = block.samples;
    for (std::size_t i = 0; i < s.locations.size(); ++i)
      for (int j = 0; j < s.order; ++j) {
        std::snprintf(zbuf, sizeof zbuf, "%g", s.locations[i]);
        std::snprintf(wbuf, sizeof wbuf, fmt, block.wasserstein[i * s.order + j]);
        os << s.N << ',' << zbuf << ',' << (j + 1) << ',' << wbuf << '\n';
      }
  }
}

}  // namespace sphar
