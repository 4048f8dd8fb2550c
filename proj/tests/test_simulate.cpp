#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "sphar/simulate.hpp"

using namespace sphar;
using Catch::Approx;

namespace {

SpharModel constant_ar1(double phi, double cz, int L) {
  return SpharModel(1, std::vector<std::vector<double>>(L + 1, {phi}), std::vector<double>(L + 1, cz));
}

double mean_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / x.size();
}

/// Mean and standard error of per-item statistics.
std::pair<double, double> mean_se(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= v.size();
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / (v.size() - 1) / v.size())};
}

}  // namespace

TEST_CASE("rng substreams are deterministic and distinct", "[simulate]") {
  const StreamKey k{1, 2, 3, 4, -5};
  CHECK(derive_seed(k) == derive_seed(StreamKey{1, 2, 3, 4, -5}));
  CHECK(derive_seed(k) != derive_seed(StreamKey{1, 2, 3, 4, 5}));
  CHECK(derive_seed(k) != derive_seed(StreamKey{1, 2, 3, 5, -5}));
  CHECK(derive_seed(k) != derive_seed(StreamKey{1, 2, 4, 4, -5}));
  CHECK(derive_seed(k) != derive_seed(StreamKey{1, 3, 3, 4, -5}));
  CHECK(derive_seed(k) != derive_seed(StreamKey{2, 2, 3, 4, -5}));
  // SplitMix64 reference output for state 0
  CHECK(splitmix64(0) == 0xE220A8397B1DCDAFULL);

  NormalStream a(k), b(k);
  for (int i = 0; i < 1000; ++i) REQUIRE(a() == b());

  NormalStream z(StreamKey{7, 0, 0, 0, 0});
  const int n = 200000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = z();
    s1 += x;
    s2 += x * x;
  }
  CHECK(std::abs(s1 / n) < 4.0 / std::sqrt(n));
  CHECK(std::abs(s2 / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
}

TEST_CASE("white-noise panel has no lag-1 autocorrelation", "[simulate]") {
  const auto model = SpharModel::white_noise(1, {1.0, 1.0, 2.0});
  const int n = 100000;
  const auto panel = simulate_panel({model, n, 2, 42, {}, 0, 0});
  double num = 0.0, den = 0.0;
  for (int m = -2; m <= 2; ++m) {
    const auto s = panel.series(2, m);
    for (int t = 1; t < n; ++t) num += s[t] * s[t - 1];
    for (int t = 0; t < n; ++t) den += s[t] * s[t];
  }
  CHECK(std::abs(num / den) < 3.0 / std::sqrt(5.0 * n));
}

TEST_CASE("AR(1) panel variance matches C_Z / (1 - phi^2)", "[simulate]") {
  const auto model = constant_ar1(0.5, 1.0, 1);
  const int n = 100000;
  const auto panel = simulate_panel({model, n, 1, 5, {}, 0, 0});
  for (int m = -1; m <= 1; ++m) {
    const auto s = panel.series(1, m);
    double v = 0.0;
    for (double x : s) v += x * x;
    v /= n;
    // long-run variance of x^2 for AR(1): 2 C0^2 (1 + phi^2) / (1 - phi^2)
    const double c0 = 4.0 / 3.0;
    const double se = std::sqrt(2.0 * c0 * c0 * (1.25 / 0.75) / n);
    CHECK(std::abs(v - c0) < 3.0 * se);
  }
}

TEST_CASE("panels are identical for any worker count", "[simulate]") {
  ParametricFamily f;
  f.order = 2;
  f.lag_weights = {0.5, 0.3};
  const auto model = build_parametric(f, 12);
  const SimulationPlan plan{model, 300, 12, 77, {}, 0, 0};
  const auto a = simulate_panel(plan, 1);
  const auto b = simulate_panel(plan, 8);
  for (int ell = 0; ell <= 12; ++ell)
    for (int m = -ell; m <= ell; ++m)
      for (int t = 1; t <= 300; ++t) REQUIRE(a.at(ell, m, t) == b.at(ell, m, t));
  CHECK(a.seed() == 77);
  CHECK(a.model_hash() == model.fingerprint());

  SimulationPlan other = plan;
  other.seed = 78;
  CHECK(simulate_panel(other, 2).at(3, 1, 10) != a.at(3, 1, 10));
}

TEST_CASE("simulate_panel preconditions", "[simulate]") {
  const auto model = constant_ar1(0.3, 1.0, 4);
  CHECK_THROWS_AS(simulate_panel({model, 1, 2, 0, {}, 0, 0}), DomainError);
  CHECK_THROWS_AS(simulate_panel({model, 10, 5, 0, {}, 0, 0}), DomainError);
  const auto panel = simulate_panel({model, 10, 4, 0, {}, 0, 0});
  for (int ell = 0; ell <= 4; ++ell)
    for (int m = -ell; m <= ell; ++m)
      for (double v : panel.series(ell, m)) CHECK(std::isfinite(v));
}

TEST_CASE("series follow the recursion exactly", "[simulate]") {
  const SpharModel model(2, {{0.4, -0.2}}, {0.8});
  const SeriesRecipe r = SeriesRecipe::from_model(model, 0);
  std::vector<double> x(200), e(200);
  NormalStream z(StreamKey{3, 0, 0, 0, 0});
  simulate_series(r, {}, z, x, e);
  CHECK(e[0] == 0.0);
  CHECK(e[1] == 0.0);
  for (int t = 2; t < 200; ++t) CHECK(x[t] == 0.4 * x[t - 1] + -0.2 * x[t - 2] + e[t]);

  // burn-in start also follows the recursion after the head
  NormalStream z2(StreamKey{3, 0, 0, 0, 0});
  simulate_series(r, Initialization::with_burn_in(50), z2, x, e);
  for (int t = 2; t < 200; ++t) CHECK(x[t] == 0.4 * x[t - 1] + -0.2 * x[t - 2] + e[t]);
}

TEST_CASE("exact stationary start has no transient", "[simulate]") {
  const SpharModel model(2, {{0.6, 0.25}, {0.6, 0.25}}, {1.0, 1.0});
  const auto c = autocovariances(model.phi(0), 1.0, 2);
  const SeriesRecipe r = SeriesRecipe::from_model(model, 0);
  for (int ell : {0, 5, 20}) {
    const int reps = 4000;
    std::vector<std::vector<double>> stat(3);
    std::vector<double> x(50);
    for (int rep = 0; rep < reps; ++rep) {
      NormalStream z(StreamKey{8, 0, static_cast<std::uint64_t>(rep), ell, 0});
      simulate_series(r, {}, z, x);
      for (int tau = 0; tau <= 2; ++tau) {
        double s = 0.0;
        for (int t = tau; t < 50; ++t) s += x[t] * x[t - tau];
        stat[tau].push_back(s / (50 - tau));
      }
    }
    for (int tau = 0; tau <= 2; ++tau) {
      const auto [m, se] = mean_se(stat[tau]);
      CHECK(std::abs(m - c[tau]) < 3.5 * se);
    }
  }
  // a zero start would show the transient: E x_1^2 far below C(0)
  std::vector<double> first;
  std::vector<double> x(2);
  for (int rep = 0; rep < 4000; ++rep) {
    NormalStream z(StreamKey{9, 0, static_cast<std::uint64_t>(rep), 0, 0});
    simulate_series(r, {}, z, x);
    first.push_back(x[0] * x[0]);
  }
  CHECK(std::abs(mean_se(first).first - c[0]) < 4 * mean_se(first).second);
}

TEST_CASE("series for distinct m are uncorrelated and Gaussian", "[simulate]") {
  const auto model = constant_ar1(0.3, 2.0, 3);
  const int n = 100000;
  const auto panel = simulate_panel({model, n, 3, 11, {}, 0, 0});
  const auto a = panel.series(3, -1), b = panel.series(3, 2);
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (int t = 0; t < n; ++t) {
    sab += (a[t] - ma) * (b[t] - mb);
    saa += (a[t] - ma) * (a[t] - ma);
    sbb += (b[t] - mb) * (b[t] - mb);
  }
  CHECK(std::abs(sab / std::sqrt(saa * sbb)) < 3.0 / std::sqrt(n));

  // marginal moments; the bound is loose enough to absorb the AR(1) dependence
  double m3 = 0.0, m4 = 0.0;
  const double sd = std::sqrt(saa / n);
  for (double v : a) {
    const double u = (v - ma) / sd;
    m3 += u * u * u;
    m4 += u * u * u * u;
  }
  CHECK(std::abs(m3 / n) < 4 * std::sqrt(6.0 / n));
  CHECK(std::abs(m4 / n - 3.0) < 4 * std::sqrt(24.0 / n));
}

TEST_CASE("field synthesis", "[simulate]") {
  CoefficientPanel panel(3, 2, 0, 0);
  panel.at(0, 0, 1) = 2.5;
  const std::vector<Direction> dirs{{0.0, 0.0}, {1.0, 2.0}, {kPi, 5.0}};
  for (double v : synthesize_field(panel, 1, dirs)) CHECK(v == Approx(2.5 / std::sqrt(kFourPi)).epsilon(1e-14));
  for (double v : synthesize_field(panel, 2, dirs)) CHECK(v == 0.0);
  CHECK_THROWS_AS(synthesize_field(panel, 3, dirs), DomainError);
  CHECK_THROWS_AS(synthesize_field(panel, 0, dirs), DomainError);
}

TEST_CASE("field covariance matches the space-time covariance", "[simulate]") {
  const SpharModel model(1, {{0.5}, {0.3}, {-0.2}, {0.1}, {0.0}}, {1.0, 0.6, 0.4, 0.3, 0.2});
  // <x, y> = 0.5
  const Direction x{kPi / 3, 0.2}, y{kPi / 3 + kPi / 3, 0.2};
  REQUIRE(cos_angle(x, y) == Approx(0.5).epsilon(1e-14));
  const std::vector<Direction> dirs{x, y};
  const int B = 2000;
  std::vector<double> fx, fy;
  for (int b = 0; b < B; ++b) {
    const auto panel = simulate_panel({model, 3, 4, 1234, {}, 0, static_cast<std::uint64_t>(b)});
    const auto f = synthesize_field(panel, 2, dirs);
    fx.push_back(f[0]);
    fy.push_back(f[1]);
  }
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (int b = 0; b < B; ++b) {
    sxy += fx[b] * fy[b];
    sxx += fx[b] * fx[b];
    syy += fy[b] * fy[b];
  }
  sxy /= B;
  sxx /= B;
  syy /= B;
  const double cov = space_time_covariance(model, 0.5, 0);
  const double var = space_time_covariance(model, 1.0, 0);
  CHECK(std::abs(sxy - cov) < 3.0 * std::sqrt((var * var + cov * cov) / B));
  CHECK(std::abs(sxx - var) < 3.0 * std::sqrt(2.0 * var * var / B));
  CHECK(std::abs(syy - var) < 3.0 * std::sqrt(2.0 * var * var / B));
}

TEST_CASE("panel CSV export", "[simulate]") {
  CoefficientPanel panel(1, 2, 9, 0);
  panel.at(1, -1, 2) = 0.1;
  std::ostringstream os;
  write_panel_csv(os, panel);
  const std::string s = os.str();
  CHECK(s.rfind("ell,m,t,value\n0,0,1,0\n", 0) == 0);
  CHECK(s.find("1,-1,2,0.10000000000000001\n") != std::string::npos);
  std::size_t lines = 0;
  for (char c : s) lines += c == '\n';
  CHECK(lines == 1 + 4 * 2);
}
