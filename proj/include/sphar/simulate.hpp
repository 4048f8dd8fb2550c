#pragma once

// Exact-stationary simulation of harmonic coefficient series
// a_{ell,m}(t) = sum_j phi_{ell;j} a_{ell,m}(t-j) + a_{ell,m;Z}(t)
// and pointwise synthesis of the field T_t(x).

#include <Eigen/Cholesky>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <span>
#include <vector>

#include "sphar/errors.hpp"
#include "sphar/harmonics.hpp"
#include "sphar/model.hpp"
#include "sphar/parallel.hpp"
#include "sphar/rng.hpp"

namespace sphar {

enum class InitKind { stationary_exact, burn_in };

struct Initialization {
  InitKind kind = InitKind::stationary_exact;
  /// Burn-in length; 0 selects 100 p.
  int burn_in = 0;

  static Initialization stationary() { return {}; }
  static Initialization with_burn_in(int length) { return {InitKind::burn_in, length}; }
};

/// Everything needed to generate one multipole's series.
struct SeriesRecipe {
  int ell = 0;
  std::vector<double> phi;
  double innovation_sd = 1.0;
  /// Lower Cholesky factor of Gamma_ell, row-major p x p.
  std::vector<double> init_factor;

  static SeriesRecipe from_model(const SpharModel& model, int ell) {
    SeriesRecipe r;
    r.ell = ell;
    const auto phi = model.phi(ell);
    r.phi.assign(phi.begin(), phi.end());
    r.innovation_sd = std::sqrt(model.noise(ell));
    const SecondOrder so = second_order(model, ell);
    Eigen::LLT<Eigen::MatrixXd> llt(so.gamma);
    if (llt.info() != Eigen::Success) {
      throw SingularError("simulate: Cholesky of Gamma_ell failed at ell=" + std::to_string(ell),
                          ell);
    }
    const Eigen::MatrixXd lower = llt.matrixL();
    const int p = model.order();
    r.init_factor.resize(static_cast<std::size_t>(p) * p);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) r.init_factor[i * p + j] = lower(i, j);
    return r;
  }

  int order() const noexcept { return static_cast<int>(phi.size()); }
};

/// Writes one series of length values.size(). When `innovations` is
/// non-empty it receives the innovation added at each step; entries for the
/// first p (initial) values are zero. Draw order: the p initial normals, then
/// one normal per remaining step.
inline void simulate_series(const SeriesRecipe& recipe, const Initialization& init,
                            NormalStream& normals, std::span<double> values,
                            std::span<double> innovations = {}) {
  const int p = recipe.order();
  const std::size_t n = values.size();
  const bool keep = !innovations.empty();
  const double sd = recipe.innovation_sd;
  const double* phi = recipe.phi.data();

  auto step = [&](const double* past_end) {
    // past_end points one past the most recent value.
    double s = 0.0;
    for (int j = 0; j < p; ++j) s += phi[j] * past_end[-1 - j];
    return s;
  };

  std::size_t start = 0;
  if (init.kind == InitKind::stationary_exact) {
    const std::size_t head = std::min<std::size_t>(p, n);
    double z[16];
    std::vector<double> zbig;
    double* zp = z;
    if (p > 16) {
      zbig.resize(p);
      zp = zbig.data();
    }
    for (int i = 0; i < p; ++i) zp[i] = normals();
    for (std::size_t i = 0; i < head; ++i) {
      double v = 0.0;
      for (std::size_t j = 0; j <= i; ++j) v += recipe.init_factor[i * p + j] * zp[j];
      values[i] = v;
      if (keep) innovations[i] = 0.0;
    }
    start = head;
  } else {
    const int burn = init.burn_in > 0 ? init.burn_in : 100 * p;
    std::vector<double> warm(static_cast<std::size_t>(burn) + p, 0.0);
    for (std::size_t t = p; t < warm.size(); ++t) warm[t] = step(warm.data() + t) + sd * normals();
    const std::size_t head = std::min<std::size_t>(p, n);
    for (std::size_t i = 0; i < head; ++i) {
      values[i] = warm[warm.size() - p + i];
      if (keep) innovations[i] = 0.0;
    }
    start = head;
  }
  for (std::size_t t = start; t < n; ++t) {
    const double e = sd * normals();
    values[t] = step(values.data() + t) + e;
    if (keep) innovations[t] = e;
  }
}

struct SimulationPlan {
  SpharModel model;
  int n = 0;
  int degree_max = 0;
  std::uint64_t seed = 0;
  Initialization init{};
  /// Substream coordinates; distinct (tag, replication) pairs give
  /// independent panels under one seed.
  std::uint64_t tag = 0;
  std::uint64_t replication = 0;
};

/// a[ell][m][t], t = 1..n, stored series-contiguous.
class CoefficientPanel {
 public:
  CoefficientPanel(int degree_max, int n, std::uint64_t seed, std::uint64_t model_hash)
      : degree_max_(degree_max),
        n_(n),
        seed_(seed),
        model_hash_(model_hash),
        data_(static_cast<std::size_t>(degree_max + 1) * (degree_max + 1) * n, 0.0) {}

  int degree_max() const noexcept { return degree_max_; }
  int length() const noexcept { return n_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t model_hash() const noexcept { return model_hash_; }

  std::span<const double> series(int ell, int m) const {
    return std::span<const double>(data_).subspan(offset(ell, m), n_);
  }
  std::span<double> series(int ell, int m) {
    return std::span<double>(data_).subspan(offset(ell, m), n_);
  }
  /// t is 1-based.
  double at(int ell, int m, int t) const { return data_[offset(ell, m) + (t - 1)]; }
  double& at(int ell, int m, int t) { return data_[offset(ell, m) + (t - 1)]; }

 private:
  std::size_t offset(int ell, int m) const {
    return (static_cast<std::size_t>(ell) * ell + ell + m) * n_;
  }

  int degree_max_;
  int n_;
  std::uint64_t seed_;
  std::uint64_t model_hash_;
  std::vector<double> data_;
};

inline CoefficientPanel simulate_panel(const SimulationPlan& plan, unsigned workers = 1) {
  const int p = plan.model.order();
  if (plan.n <= p) throw DomainError("simulate_panel: n must exceed the order p");
  if (plan.degree_max < 0 || plan.degree_max > plan.model.degree_max()) {
    throw DomainError("simulate_panel: degree_max outside model range");
  }
  CoefficientPanel panel(plan.degree_max, plan.n, plan.seed, plan.model.fingerprint());

  std::vector<SeriesRecipe> recipes;
  recipes.reserve(plan.degree_max + 1);
  for (int ell = 0; ell <= plan.degree_max; ++ell) {
    recipes.push_back(SeriesRecipe::from_model(plan.model, ell));
  }

  const std::size_t count = static_cast<std::size_t>(plan.degree_max + 1) * (plan.degree_max + 1);
  parallel_for(count, workers, [&](std::size_t idx) {
    const int ell = static_cast<int>(std::sqrt(static_cast<double>(idx)));
    const int m = static_cast<int>(idx) - ell * ell - ell;
    NormalStream normals(StreamKey{plan.seed, plan.tag, plan.replication, ell, m});
    simulate_series(recipes[ell], plan.init, normals, panel.series(ell, m));
  });
  return panel;
}

/// T_t(x_i) = sum_{ell, m} a[ell][m][t] Y_{ell m}(x_i).
inline std::vector<double> synthesize_field(const CoefficientPanel& panel, int t,
                                            std::span<const Direction> directions) {
  if (t < 1 || t > panel.length()) throw DomainError("synthesize_field: time index out of range");
  std::vector<double> out;
  out.reserve(directions.size());
  for (const Direction& d : directions) {
    const HarmonicTable y = real_sph_harmonics(d.theta, d.phi, panel.degree_max());
    double sum = 0.0;
    for (int ell = 0; ell <= panel.degree_max(); ++ell)
      for (int m = -ell; m <= ell; ++m) sum += panel.at(ell, m, t) * y(ell, m);
    out.push_back(sum);
  }
  return out;
}

/// CSV `ell,m,t,value`, values printed with %.17g.
inline void write_panel_csv(std::ostream& os, const CoefficientPanel& panel) {
  os << "ell,m,t,value\n";
  char buf[64];
  for (int ell = 0; ell <= panel.degree_max(); ++ell)
    for (int m = -ell; m <= ell; ++m)
      for (int t = 1; t <= panel.length(); ++t) {
        std::snprintf(buf, sizeof buf, "%.17g", panel.at(ell, m, t));
        os << ell << ',' << m << ',' << t << ',' << buf << '\n';
      }
}

}  // namespace sphar
