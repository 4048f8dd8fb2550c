// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "sphar.hpp"

using namespace sphar;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

SpharModel power_law(double beta, int degree_max, double gamma = 0.5) {
  ParametricFamily f;
  f.shape = FamilyShape::power_law;
  f.gamma = gamma;
  f.beta = beta;
  f.cap = 0.9;
  f.G_Z = 1.0;
  f.alpha_Z = 2.0;
  return build_parametric(f, degree_max);
}

HarnessOptions harness() {
  HarnessOptions o;
  o.workers = 0;
  return o;
}

/// Mean and standard error of i.i.d. values.
std::pair<double, double> mean_se(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= v.size();
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / (v.size() - 1) / v.size())};
}

// ---------------------------------------------------------------------------

Verdict special_functions() {
  Verdict v;
  const auto rule = gauss_nodes(64);
  std::vector<std::vector<double>> p;
  for (double z : rule.nodes) p.push_back(legendre_all(z, 60).values);
  double worst_rel = 0.0, worst_off = 0.0;
  for (int a = 0; a <= 60; ++a)
    for (int b = 0; b <= 60; ++b) {
      double s = 0.0;
      for (int i = 0; i < rule.order; ++i) s += rule.weights[i] * p[i][a] * p[i][b];
      if (a == b) worst_rel = std::max(worst_rel, std::abs(s / (2.0 / (2 * a + 1.0)) - 1.0));
      else worst_off = std::max(worst_off, std::abs(s));
    }
  v.require(worst_rel < 1e-10 && worst_off < 1e-10, "orthogonality");
  v.note("orthogonality rel " + fmt("%.1e", worst_rel));

  NormalStream u(StreamKey{101, 0, 0, 0, 0});
  double worst_add = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Direction x{std::acos(2 * u.uniform() - 1), 2 * kPi * u.uniform()};
    const Direction y{std::acos(2 * u.uniform() - 1), 2 * kPi * u.uniform()};
    const auto tx = real_sph_harmonics(x.theta, x.phi, 50);
    const auto ty = real_sph_harmonics(y.theta, y.phi, 50);
    const auto pl = legendre_all(cos_angle(x, y), 50);
    for (int ell = 0; ell <= 50; ++ell) {
      double s = 0.0;
      for (int m = -ell; m <= ell; ++m) s += tx(ell, m) * ty(ell, m);
      worst_add = std::max(worst_add, std::abs(s - (2.0 * ell + 1.0) / kFourPi * pl.values[ell]));
    }
  }
  v.require(worst_add < 1e-9, "addition formula");
  v.note("addition abs " + fmt("%.1e", worst_add));

  const Direction x{0.7, 0.4}, z{2.1, 3.9};
  const auto th = gauss_nodes(30);
  const int nph = 48;
  double worst_rep = 0.0;
  for (int ell : {0, 1, 5, 12, 20}) {
    const double c = (2.0 * ell + 1.0) / kFourPi;
    double integral = 0.0;
    for (int a = 0; a < th.order; ++a)
      for (int b = 0; b < nph; ++b) {
        const Direction y{std::acos(th.nodes[a]), 2 * kPi * b / nph};
        integral += th.weights[a] * (2 * kPi / nph) * c * legendre(ell, cos_angle(x, y)) * c *
                    legendre(ell, cos_angle(y, z));
      }
    worst_rep = std::max(worst_rep, std::abs(integral - c * legendre(ell, cos_angle(x, z))));
  }
  v.require(worst_rep < 1e-6, "reproducing property");
  v.note("reproducing " + fmt("%.1e", worst_rep));

  bool exact = true;
  for (int L : {0, 1, 2, 9, 100, 5000}) exact = exact && ln_weight(1.0, L) == (L + 1.0) * (L + 1.0) / kSixteenPiSq;
  v.require(exact, "L_N(1) identity");
  return v;
}

Verdict hilb_limit() {
  Verdict v;
  const double th = kPi / 3;
  const double ratio = hilb_average(std::cos(th), std::cos(th), 2000) / (2.0 / (kPi * std::sin(th)));
  v.require(std::abs(ratio - 1.0) < 1e-2, "Hilb ratio");
  v.note("ratio " + fmt("%.5f", ratio));
  std::vector<double> cross;
  for (int L : {100, 1000, 10000}) cross.push_back(std::abs(hilb_average(std::cos(th), std::cos(kPi / 2), L)));
  v.require(cross[1] < cross[0] && cross[2] < cross[1], "cross term decreasing");
  v.note("cross " + fmt("%.2e", cross[0]) + " > " + fmt("%.2e", cross[1]) + " > " + fmt("%.2e", cross[2]));
  return v;
}

/// Coefficients of a stationary AR(p) from partial autocorrelations (Durbin-Levinson).
std::vector<double> from_pacf(const std::vector<double>& pacf) {
  std::vector<double> phi;
  for (std::size_t k = 0; k < pacf.size(); ++k) {
    std::vector<double> next(k + 1);
    for (std::size_t j = 0; j < k; ++j) next[j] = phi[j] - pacf[k] * phi[k - 1 - j];
    next[k] = pacf[k];
    phi = next;
  }
  return phi;
}

Verdict yule_walker() {
  Verdict v;
  NormalStream u(StreamKey{202, 0, 0, 0, 0});
  const int n = 1000000, models = 10;
  int checks = 0, within = 0;
  double worst = 0.0;
  for (int k = 0; k < models;) {
    const int p = 1 + static_cast<int>(3 * u.uniform());
    std::vector<double> pacf(p);
    for (double& x : pacf) x = -0.7 + 1.4 * u.uniform();
    const double cz = 0.5 + 1.5 * u.uniform();
    const auto phi = from_pacf(pacf);
    if (!check_stationarity(phi, kDefaultMargin).stationary) continue;
    const SpharModel model(p, {phi}, {cz});
    const SeriesRecipe recipe = SeriesRecipe::from_model(model, 0);
    std::vector<double> x(n);
    NormalStream z(StreamKey{202, 1, static_cast<std::uint64_t>(k), 0, 0});
    simulate_series(recipe, {}, z, x);

    const int K = 4000;
    const auto c = autocovariances(phi, cz, K + p);
    auto cov = [&](int tau) { return c[std::abs(tau)]; };
    for (int tau = 0; tau <= p; ++tau) {
      double s = 0.0;
      for (int t = tau; t < n; ++t) s += x[t] * x[t - tau];
      const double chat = s / n;
      // Bartlett: n Var(c_hat(tau)) ~ sum_k C(k)^2 + C(k + tau) C(k - tau)
      double bart = 0.0;
      for (int j = -K; j <= K; ++j) bart += cov(j) * cov(j) + cov(j + tau) * cov(j - tau);
      const double dev = std::abs(chat - c[tau]) / std::sqrt(bart / n);
      worst = std::max(worst, dev);
      ++checks;
      within += dev < 3.0;
    }
    ++k;
  }
  v.require(within == checks, "autocovariance outside 3 SE");
  v.note(std::to_string(within) + "/" + std::to_string(checks) + " lags within 3 SE, max " + fmt("%.2f", worst) +
         " SE");
  return v;
}

Verdict estimator_identities() {
  Verdict v;
  // noiseless AR(2): recursion without innovations
  const std::vector<double> phi{0.5, -0.3};
  std::vector<std::vector<double>> series;
  NormalStream u(StreamKey{303, 0, 0, 0, 0});
  for (int m = 0; m < 3; ++m) {
    std::vector<double> x{u(), u()};
    for (int t = 2; t < 40; ++t) x.push_back(phi[0] * x[t - 1] + phi[1] * x[t - 2]);
    series.push_back(x);
  }
  std::vector<std::span<const double>> spans(series.begin(), series.end());
  const auto fit = fit_multipole(0, spans, 2);
  const double rec = std::max(std::abs(fit.coefficients[0] - phi[0]), std::abs(fit.coefficients[1] - phi[1]));
  v.require(rec < 1e-12, "noiseless recovery");
  v.note("noiseless error " + fmt("%.1e", rec));

  const std::vector<double> hand{1.0, 2.0, 4.0};
  const std::vector<std::span<const double>> hs{hand};
  v.require(fit_multipole(0, hs, 1).coefficients[0] == 2.0, "hand OLS example");

  ParametricFamily f;
  f.order = 2;
  f.lag_weights = {0.5, -0.3};
  const auto model = build_parametric(f, 30);
  const auto rule = gauss_nodes(40);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const int L = 3 + trial;
    KernelEstimate est;
    est.order = 2;
    est.truncation = L;
    for (int ell = 0; ell <= L; ++ell) {
      MultipoleFit mf;
      mf.ell = ell;
      for (double c : model.phi(ell)) mf.coefficients.push_back(c + 0.05 * u());
      est.fits.push_back(mf);
    }
    const auto d = l2_error_decomposition(est, model);
    auto sq = [](const std::vector<double>& a, const std::vector<double>& b) {
      return (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]);
    };
    const double var_q = rule.integrate([&](double z) { return sq(est(z), kernel_eval(model, z, L)); });
    const double bias_q = rule.integrate([&](double z) { return sq(kernel_eval(model, z), kernel_eval(model, z, L)); });
    worst = std::max({worst, std::abs(d.variance_term / var_q - 1.0), std::abs(d.bias_term / bias_q - 1.0)});
  }
  v.require(worst < 1e-10, "decomposition vs quadrature");
  v.note("decomposition rel " + fmt("%.1e", worst));

  const int top = 1000000;
  std::vector<std::vector<double>> tail(top + 1, {0.0});
  tail[1] = {0.5};  // outside the tail; phi_1 = 1 would be a unit root
  for (int ell = 2; ell <= top; ++ell) tail[ell] = {std::pow(ell, -3.0)};
  const double b = bias_tail(SpharModel(1, tail, std::vector<double>(top + 1, 1.0)), 1);
  v.require(std::abs(b - 1.15504e-3) < 1e-8, "bias tail");
  v.note("bias tail " + fmt("%.9e", b));
  return v;
}

Verdict mse_scaling() {
  Verdict v;
  const std::vector<long long> Ns{100, 300, 700};
  const double betas[] = {2.0, 2.5, 3.0};
  const double targets[] = {-0.66, -0.82, -0.92};
  for (int i = 0; i < 3; ++i) {
    const auto model = power_law(betas[i], 20000);
    const auto policy = TruncationPolicy::rate(1.0, 1.0 / (2 * betas[i] - 1));
    const auto report = run_mse_experiment(model, Ns, policy, 200, 20240502, harness());
    const double slope = mse_slope(report);
    int failures = 0;
    for (const auto& r : report.rows) failures += r.failures;
    v.require(std::abs(slope - targets[i]) <= 0.2, "slope for beta " + fmt("%g", betas[i]));
    v.require(failures == 0, "singular fits");
    v.note("beta " + fmt("%g", betas[i]) + " slope " + fmt("%.3f", slope) + " (target " + fmt("%.2f", targets[i]) +
           ")");
  }
  return v;
}

Verdict clt_wasserstein() {
  Verdict v;
  const auto model = power_law(3.0, 20000);
  std::vector<double> loc;
  for (int i = -4; i <= 4; ++i) loc.push_back(0.2 * i);
  const std::vector<long long> Ns{100, 1000, 10000};
  const auto report = run_clt_experiment(model, Ns, TruncationPolicy::rate(1.0, 0.4), loc, 500, 20240503, harness());
  int smaller = 0;
  double worst = 0.0;
  std::string row;
  for (std::size_t i = 0; i < loc.size(); ++i) {
    smaller += report.blocks[1].wasserstein[i] < report.blocks[0].wasserstein[i];
    worst = std::max(worst, report.blocks[2].wasserstein[i]);
    row += (i ? " " : "") + fmt("%.3f", report.blocks[2].wasserstein[i]);
  }
  v.require(smaller >= 7, "N=1e3 below N=1e2 at >= 7 locations");
  v.require(worst < 0.1, "all distances < 0.1 at N=1e4");
  v.note(std::to_string(smaller) + "/9 smaller at 1e3; N=1e4 row " + row);
  return v;
}

Verdict vn_convergence() {
  Verdict v;
  const auto model = power_law(3.0, 20000);
  const std::vector<double> at{0.3};
  std::vector<double> dev;
  for (long long N : {100LL, 1000LL, 10000LL}) {
    const auto m = compute_vn(model, N, 0.4, at);
    dev.push_back((m - Eigen::MatrixXd::Identity(m.rows(), m.cols())).cwiseAbs().maxCoeff());
  }
  v.require(dev[1] < dev[0] && dev[2] < dev[1], "deterministic decrease");
  v.require(dev[2] < 0.1, "||V_N - I|| < 0.1 at N=1e4");
  v.note("||V_N - I|| at z=0.3: " + fmt("%.4f", dev[0]) + ", " + fmt("%.4f", dev[1]) + ", " + fmt("%.4f", dev[2]));

  const std::vector<double> loc{0.3, -0.7};
  const int B = 2000;
  const long long N = 500;
  const int L = TruncationPolicy::rate(1.0, 0.4).level_for(N);
  const auto vn = compute_vn(model, N, 0.4, loc);
  const auto u = leading_term_samples(model, N, L, loc, B, 20240507, harness());
  double worst = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = i; j < 2; ++j) {
      std::vector<double> prod(B);
      for (int b = 0; b < B; ++b) prod[b] = u[b * 2 + i] * u[b * 2 + j];
      const auto [m, se] = mean_se(prod);
      worst = std::max(worst, std::abs(m - vn(i, j)) / se);
    }
  v.require(worst < 3.0, "Monte Carlo covariance vs V_N");
  v.note("MC vs V_N max " + fmt("%.2f", worst) + " SE");
  return v;
}

Verdict fourth_cumulant() {
  Verdict v;
  const double phi = 0.5;
  const SpharModel model(1, std::vector<std::vector<double>>(6, {phi}), std::vector<double>(6, 1.0));
  const int B = 20000, ell = 5;
  const long long N = 200;
  const auto b = score_statistic_samples(model, ell, N, B, 20240508, harness());
  double e2 = 0.0, e4 = 0.0;
  for (double x : b) {
    e2 += x * x;
    e4 += x * x * x * x;
  }
  e2 /= B;
  e4 /= B;
  const double k4 = e4 - 3 * e2 * e2;
  std::vector<double> infl(B);
  for (int i = 0; i < B; ++i) infl[i] = std::pow(b[i], 4) - 6 * e2 * b[i] * b[i];
  const double se = mean_se(infl).second;
  const double target = 6.0 / (N * (2.0 * ell + 1)) * (1 - phi * phi) * (1 - phi * phi);
  v.require(std::abs(k4 - target) < 3 * se, "cumulant within 3 SE");
  v.note("k4 " + fmt("%.5f", k4) + " vs " + fmt("%.5f", target) + ", SE " + fmt("%.5f", se));
  return v;
}

Verdict limit_cov() {
  Verdict v;
  const SpharModel model(1, {{0.5}, {0.3}, {-0.2}}, {1.0, 0.6, 0.4});
  const std::vector<double> loc{0.2, -0.4};
  const int B = 2000;
  const long long N = 10000;
  const auto s = standardized_samples(model, N, TruncationPolicy::fixed(2), loc, B, 20240509, harness());
  std::vector<std::vector<double>> x(2, std::vector<double>(s.replications));
  for (int i = 0; i < 2; ++i) {
    const double scale = std::sqrt(ln_weight(loc[i], 2));
    for (int b = 0; b < s.replications; ++b) x[i][b] = s.at(b, i, 0) * scale;
  }
  v.require(s.replications == B, "all replications fitted");
  double worst = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = i; j < 2; ++j) {
      const double mi = mean_se(x[i]).first, mj = mean_se(x[j]).first;
      std::vector<double> prod(s.replications);
      for (int b = 0; b < s.replications; ++b) prod[b] = (x[i][b] - mi) * (x[j][b] - mj);
      const auto [m, se] = mean_se(prod);
      const double target = limit_covariance(model, loc[i], loc[j]).matrix(0, 0);
      worst = std::max(worst, std::abs(m - target) / se);
    }
  v.require(worst < 3.0, "covariance within 3 SE");
  v.note("max deviation " + fmt("%.2f", worst) + " SE; Gamma(0.2,-0.4) = " +
         fmt("%.5f", limit_covariance(model, 0.2, -0.4).matrix(0, 0)));
  return v;
}

Verdict plugin() {
  Verdict v;
  std::vector<int> ells;
  std::vector<double> pure, scaled;
  for (int ell = 2; ell <= 60; ++ell) {
    ells.push_back(ell);
    pure.push_back(std::pow(ell, -3.0));
    scaled.push_back(5.0 * std::pow(ell, -3.0));
  }
  const double raw = plugin_bandwidth(ells, pure, PluginVariant::paper_raw).beta_hat;
  const double dem = plugin_bandwidth(ells, scaled, PluginVariant::demeaned).beta_hat;
  v.require(std::abs(raw - 3.0) < 1e-12, "paper_raw exactness");
  v.require(std::abs(dem - 3.0) < 1e-12, "demeaned exactness");

  const auto model = power_law(3.0, 40, 700.0);
  const auto report = run_plugin_experiment(model, 2001, 200, 10, 40, PluginVariant::demeaned, 20240504, harness());
  const double rate = report.recovery_rate(3.0, 0.3);
  v.require(rate >= 0.9, "recovery rate >= 90%");
  v.note("exactness errors " + fmt("%.1e", std::abs(raw - 3.0)) + ", " + fmt("%.1e", std::abs(dem - 3.0)) +
         "; recovery " + fmt("%.1f", 100 * rate) + "% of 200");
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict cli_reproducibility() {
  Verdict v;
  const fs::path dir = fs::temp_directory_path() / "sphar_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "clt.cfg") << "experiment.kind = clt\nexperiment.seed = 11\nexperiment.B = 100\n"
                                    "experiment.locations = -0.5, 0.1, 0.7\nmodel.family = power_law\n"
                                    "model.gamma = 0.5\nmodel.beta = 3\nmodel.alpha_Z = 2\nmodel.degree_max = 200\n"
                                    "simulation.N = 100, 1000\nestimation.policy = rate\nestimation.d = 0.4\n";
  const std::string configs = SPHAR_CONFIG_DIR;
  const std::vector<std::pair<std::string, std::string>> runs{
      {"run", configs + "/mse_beta2_d06.cfg"},     {"run", (dir / "clt.cfg").string()},
      {"run", configs + "/plugin.cfg"},     {"run", configs + "/hilb.cfg"},
      {"simulate", configs + "/simulate.cfg"}};
  int files = 0, identical = 0;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    for (int w : {1, 8}) {
      const fs::path out = dir / ("r" + std::to_string(k) + "_w" + std::to_string(w));
      const std::string cmd = std::string(SPHAR_CLI) + " " + runs[k].first + " " + runs[k].second +
                              " --quiet --workers " + std::to_string(w) + " --out-dir " + out.string();
      v.require(std::system(cmd.c_str()) == 0, "command failed: " + cmd);
    }
    const fs::path first = dir / ("r" + std::to_string(k) + "_w1");
    if (!fs::is_directory(first)) continue;
    for (const auto& e : fs::directory_iterator(first)) {
      if (e.path().extension() != ".csv") continue;
      ++files;
      const fs::path other = dir / ("r" + std::to_string(k) + "_w8") / e.path().filename();
      const bool same = fs::exists(other) && slurp(e.path()) == slurp(other);
      identical += same;
      v.require(same, e.path().filename().string() + " differs");
    }
  }
  v.require(files >= 8, "expected CSV outputs");
  v.note(std::to_string(identical) + "/" + std::to_string(files) + " CSV files byte-identical");
  fs::remove_all(dir);
  return v;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // <= 0: no runtime bound
    std::function<Verdict()> check;
  };
  const std::vector<Criterion> criteria{
      {1, "special functions", 10, special_functions},
      {2, "Hilb limit", 5, hilb_limit},
      {3, "Yule-Walker oracle", 30, yule_walker},
      {4, "estimator identities", 0, estimator_identities},
      {5, "MSE scaling", 600, mse_scaling},
      {6, "CLT Wasserstein", 900, clt_wasserstein},
      {7, "V_N convergence", 0, vn_convergence},
      {8, "fourth cumulant", 120, fourth_cumulant},
      {9, "limit covariance", 300, limit_cov},
      {10, "plug-in bandwidth", 0, plugin},
      {11, "CLI reproducibility", 0, cli_reproducibility},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_s > 0) v.require(secs <= c.budget_s, "runtime over " + fmt("%g", c.budget_s) + " s");
    failed += !v.pass;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
