#pragma once

// SPHAR(p) model tables and their exact second-order theory.
//
// Each multipole ell carries an AR(p) coefficient vector phi_ell and an
// innovation variance C_{ell;Z}. Everything downstream (autocovariances,
// Toeplitz matrices, kernels, space-time covariance) is a deterministic
// function of these tables.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sphar/errors.hpp"
#include "sphar/harmonics.hpp"

namespace sphar {

inline constexpr double kDefaultMargin = 0.05;

// ---------------------------------------------------------------------------
// Scalar AR(p) theory

struct StationarityReport {
  bool stationary = true;
  /// Smallest modulus among the roots of 1 - phi_1 z - ... - phi_p z^p;
  /// +inf when the polynomial is constant.
  double min_root_modulus = std::numeric_limits<double>::infinity();
};

/// Roots of the AR polynomial are the reciprocals of the eigenvalues of the
/// companion matrix, so min |root| = 1 / spectral radius.
inline StationarityReport check_stationarity(std::span<const double> phi, double margin) {
  if (phi.empty()) throw DomainError("check_stationarity: order must be >= 1");
  if (!(margin > 0.0)) throw DomainError("check_stationarity: margin must be > 0");

  const auto p = static_cast<Eigen::Index>(phi.size());
  double radius = 0.0;
  if (p == 1) {
    radius = std::abs(phi[0]);
  } else {
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index j = 0; j < p; ++j) companion(0, j) = phi[j];
    for (Eigen::Index i = 1; i < p; ++i) companion(i, i - 1) = 1.0;
    Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
    radius = solver.eigenvalues().cwiseAbs().maxCoeff();
  }
  StationarityReport report;
  report.min_root_modulus =
      radius == 0.0 ? std::numeric_limits<double>::infinity() : 1.0 / radius;
  report.stationary = report.min_root_modulus > 1.0 + margin;
  return report;
}

/// Autocorrelations rho(0..p) from the Yule-Walker equations
/// rho(k) = sum_j phi_j rho(|k - j|), k = 1..p-1.
inline std::vector<double> yule_walker_correlations(std::span<const double> phi) {
  const int p = static_cast<int>(phi.size());
  std::vector<double> rho(p + 1, 0.0);
  rho[0] = 1.0;
  if (p >= 2) {
    const int k = p - 1;
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(k, k);
    Eigen::VectorXd b(k);
    for (int row = 1; row <= k; ++row) {
      b(row - 1) = phi[row - 1];  // the rho(0) term
      for (int j = 1; j <= p; ++j) {
        const int lag = std::abs(row - j);
        if (lag == 0) continue;
        a(row - 1, lag - 1) -= phi[j - 1];
      }
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (!lu.isInvertible() || lu.rcond() < 1e-14) {
      throw SingularError("autocovariances: singular Yule-Walker system (non-stationary input)");
    }
    Eigen::VectorXd sol = lu.solve(b);
    for (int i = 0; i < k; ++i) rho[i + 1] = sol(i);
  }
  double last = 0.0;
  for (int j = 1; j <= p; ++j) last += phi[j - 1] * rho[std::abs(p - j)];
  rho[p] = last;
  return rho;
}

/// C(0..tau_max) of a stationary AR(p) with innovation variance c_z.
inline std::vector<double> autocovariances(std::span<const double> phi, double c_z, int tau_max) {
  if (phi.empty()) throw DomainError("autocovariances: order must be >= 1");
  if (tau_max < 0) throw DomainError("autocovariances: negative lag");
  const int p = static_cast<int>(phi.size());
  const std::vector<double> rho = yule_walker_correlations(phi);

  double denom = 1.0;
  for (int j = 1; j <= p; ++j) denom -= phi[j - 1] * rho[j];
  if (!(denom > 0.0) || !std::isfinite(denom)) {
    throw SingularError("autocovariances: non-positive innovation share (non-stationary input)");
  }
  const double c0 = c_z / denom;

  std::vector<double> out(std::max(tau_max, p) + 1);
  for (int tau = 0; tau <= p; ++tau) out[tau] = c0 * rho[tau];
  for (int tau = p + 1; tau <= tau_max; ++tau) {
    double c = 0.0;
    for (int j = 1; j <= p; ++j) c += phi[j - 1] * out[tau - j];
    out[tau] = c;
  }
  out.resize(tau_max + 1);
  return out;
}

/// Spectral density of the autocorrelation sequence on [-pi, pi];
/// integrates to one.
inline double correlation_spectral_density(std::span<const double> phi, double lambda) {
  const std::vector<double> rho = yule_walker_correlations(phi);
  double share = 1.0;
  std::complex<double> transfer(1.0, 0.0);
  for (std::size_t j = 1; j <= phi.size(); ++j) {
    share -= phi[j - 1] * rho[j];
    transfer -= phi[j - 1] * std::polar(1.0, lambda * static_cast<double>(j));
  }
  return share / (2.0 * kPi * std::norm(transfer));
}

// ---------------------------------------------------------------------------
// Model

class SpharModel {
 public:
  /// phi[ell] holds (phi_{ell;1}, ..., phi_{ell;p}); noise[ell] = C_{ell;Z}.
  SpharModel(int order, const std::vector<std::vector<double>>& phi,
             std::vector<double> noise, double margin = kDefaultMargin)
      : order_(order), margin_(margin), noise_(std::move(noise)) {
    if (order < 1) throw ModelError("model: order must be >= 1");
    if (!(margin > 0.0)) throw ModelError("model: stationarity margin must be > 0");
    if (phi.empty()) throw ModelError("model: empty coefficient table");
    if (phi.size() != noise_.size()) {
      throw ModelError("model: coefficient and noise tables differ in length");
    }
    phi_.reserve(phi.size() * order);
    for (std::size_t ell = 0; ell < phi.size(); ++ell) {
      if (phi[ell].size() != static_cast<std::size_t>(order)) {
        throw ModelError("model: phi at ell=" + std::to_string(ell) + " has " +
                         std::to_string(phi[ell].size()) + " entries, expected " +
                         std::to_string(order));
      }
      phi_.insert(phi_.end(), phi[ell].begin(), phi[ell].end());
    }
    validate();
  }

  /// White noise: phi = 0 at every multipole.
  static SpharModel white_noise(int order, std::vector<double> noise,
                                double margin = kDefaultMargin) {
    std::vector<std::vector<double>> phi(noise.size(), std::vector<double>(order, 0.0));
    return SpharModel(order, phi, std::move(noise), margin);
  }

  int order() const noexcept { return order_; }
  int degree_max() const noexcept { return static_cast<int>(noise_.size()) - 1; }
  double margin() const noexcept { return margin_; }

  std::span<const double> phi(int ell) const {
    return std::span<const double>(phi_).subspan(static_cast<std::size_t>(ell) * order_, order_);
  }
  double noise(int ell) const { return noise_.at(ell); }

  /// Whether phi_{ell;p} != 0 for some ell, i.e. the order is identified.
  bool order_identified() const {
    for (int ell = 0; ell <= degree_max(); ++ell) {
      if (phi(ell)[order_ - 1] != 0.0) return true;
    }
    return false;
  }

  /// FNV-1a over the raw tables; stable across runs on one platform.
  std::uint64_t fingerprint() const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t bytes) {
      const auto* p = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
      }
    };
    mix(&order_, sizeof order_);
    mix(&margin_, sizeof margin_);
    mix(phi_.data(), phi_.size() * sizeof(double));
    mix(noise_.data(), noise_.size() * sizeof(double));
    return h;
  }

 private:
  void validate() const {
    for (int ell = 0; ell <= degree_max(); ++ell) {
      const double c = noise_[ell];
      if (!(c > 0.0) || !std::isfinite(c)) {
        throw ModelError("model: innovation variance C_{ell;Z} must be > 0 at ell=" +
                         std::to_string(ell));
      }
      for (double v : phi(ell)) {
        if (!std::isfinite(v)) {
          throw ModelError("model: non-finite phi at ell=" + std::to_string(ell));
        }
      }
      const StationarityReport r = check_stationarity(phi(ell), margin_);
      if (!r.stationary) {
        std::ostringstream msg;
        msg << "model: stationarity margin violated at ell=" << ell
            << " (min root modulus " << r.min_root_modulus << " <= 1 + " << margin_ << ")";
        throw ModelError(msg.str());
      }
    }
  }

  int order_;
  double margin_;
  std::vector<double> phi_;
  std::vector<double> noise_;
};

// ---------------------------------------------------------------------------
// Second-order structure at one multipole

struct SecondOrder {
  int ell = 0;
  std::vector<double> autocov;  // C_ell(0..tau_max)
  Eigen::MatrixXd gamma;        // Toeplitz, entries C_ell(i - j)
  Eigen::MatrixXd sigma;        // gamma / C_ell
  double noise_ratio = 1.0;     // C_{ell;Z} / C_ell

  double variance() const { return autocov.front(); }
};

inline SecondOrder second_order(const SpharModel& model, int ell, int tau_max = -1) {
  if (ell < 0 || ell > model.degree_max()) {
    throw DomainError("second_order: multipole " + std::to_string(ell) + " outside model");
  }
  const int p = model.order();
  SecondOrder out;
  out.ell = ell;
  out.autocov = autocovariances(model.phi(ell), model.noise(ell), std::max(tau_max, p));
  out.gamma.resize(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) out.gamma(i, j) = out.autocov[std::abs(i - j)];
  out.sigma = out.gamma / out.autocov[0];
  out.noise_ratio = model.noise(ell) / out.autocov[0];
  if (tau_max >= 0) out.autocov.resize(tau_max + 1);
  return out;
}

// ---------------------------------------------------------------------------
// Kernels and covariances in the Legendre basis

/// k_j(z) = sum_{ell <= L} phi_{ell;j} (2 ell + 1)/(4 pi) P_ell(z).
inline std::vector<double> kernel_eval(const SpharModel& model, double z, int truncation) {
  detail::require_unit_interval(z, "kernel_eval");
  if (truncation > model.degree_max()) {
    throw DomainError("kernel_eval: truncation exceeds model degree");
  }
  const int p = model.order();
  std::vector<double> k(p, 0.0);
  double prev = 1.0, cur = z;
  for (int ell = 0; ell <= truncation; ++ell) {
    double pl;
    if (ell == 0) {
      pl = 1.0;
    } else if (ell == 1) {
      pl = z;
    } else {
      const double l = ell - 1.0;
      const double next = ((2.0 * l + 1.0) * z * cur - l * prev) / (l + 1.0);
      prev = cur;
      cur = next;
      pl = cur;
    }
    const double w = (2.0 * ell + 1.0) / kFourPi * pl;
    const auto phi = model.phi(ell);
    for (int j = 0; j < p; ++j) k[j] += phi[j] * w;
  }
  return k;
}

inline std::vector<double> kernel_eval(const SpharModel& model, double z) {
  return kernel_eval(model, z, model.degree_max());
}

/// Gamma_0(z, tau) = sum_ell C_ell(tau) (2 ell + 1)/(4 pi) P_ell(z).
inline double space_time_covariance(const SpharModel& model, double z, int tau) {
  detail::require_unit_interval(z, "space_time_covariance");
  const int lag = std::abs(tau);
  std::vector<double> pl(model.degree_max() + 1);
  legendre_fill(z, pl);
  double sum = 0.0;
  for (int ell = 0; ell <= model.degree_max(); ++ell) {
    const double c = autocovariances(model.phi(ell), model.noise(ell), lag)[lag];
    sum += c * (2.0 * ell + 1.0) / kFourPi * pl[ell];
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Parametric families

enum class FamilyShape {
  /// phi_ell = G (|ell - ell*| + 1)^{-alpha_phi}, 0 < G < 1, alpha_phi > 2,
  /// C_{ell;Z} = G_Z (1 + ell)^{-alpha_Z}, alpha_Z > 2.
  cupola,
  /// phi_ell = min(cap, gamma max(ell, 1)^{-beta}), beta > 1,
  /// C_{ell;Z} = G_Z (1 + ell)^{-alpha_Z}, alpha_Z >= 0.
  power_law,
};

struct ParametricFamily {
  FamilyShape shape = FamilyShape::cupola;
  int order = 1;
  /// Split of the per-multipole magnitude across lags; sum |w_j| <= 1.
  std::vector<double> lag_weights{1.0};

  double G = 0.7;
  int l_star = 0;
  double alpha_phi = 3.0;

  double gamma = 0.5;
  double beta = 3.0;
  double cap = 0.9;

  double G_Z = 1.0;
  double alpha_Z = 3.0;
  double margin = kDefaultMargin;

  double magnitude(int ell) const {
    if (shape == FamilyShape::cupola) {
      return G * std::pow(std::abs(ell - l_star) + 1.0, -alpha_phi);
    }
    return std::min(cap, gamma * std::pow(std::max(ell, 1), -beta));
  }

  double noise(int ell) const { return G_Z * std::pow(1.0 + ell, -alpha_Z); }

  /// Human-readable list of violated parameter ranges; empty when valid.
  std::vector<std::string> range_violations() const {
    std::vector<std::string> out;
    auto bad = [&out](const std::string& s) { out.push_back(s); };
    if (order < 1) bad("order must be >= 1");
    if (lag_weights.size() != static_cast<std::size_t>(std::max(order, 0))) {
      bad("lag_weights must have one entry per lag (" + std::to_string(order) + ")");
    }
    double wsum = 0.0;
    for (double w : lag_weights) wsum += std::abs(w);
    if (wsum > 1.0 + 1e-12) bad("lag_weights must satisfy sum |w_j| <= 1");
    if (!(margin > 0.0)) bad("margin must be > 0");
    if (!(G_Z > 0.0)) bad("G_Z must be > 0");
    if (shape == FamilyShape::cupola) {
      if (!(G > 0.0 && G < 1.0)) bad("G must lie in (0, 1)");
      if (l_star < 0) bad("l_star must be >= 0");
      if (!(alpha_phi > 2.0)) bad("alpha_phi must be > 2");
      if (!(alpha_Z > 2.0)) bad("alpha_Z must be > 2");
    } else {
      if (!(gamma > 0.0)) bad("gamma must be > 0");
      if (!(beta > 1.0)) bad("beta must be > 1");
      if (!(cap > 0.0 && cap < 1.0)) bad("cap must lie in (0, 1)");
      if (!(alpha_Z >= 0.0)) bad("alpha_Z must be >= 0");
    }
    return out;
  }
};

inline SpharModel build_parametric(const ParametricFamily& family, int degree_max) {
  if (degree_max < 0) throw ModelError("build_parametric: negative degree_max");
  const auto violations = family.range_violations();
  if (!violations.empty()) {
    std::string msg = "build_parametric: ";
    for (std::size_t i = 0; i < violations.size(); ++i) {
      msg += (i ? "; " : "") + violations[i];
    }
    throw ModelError(msg);
  }
  std::vector<std::vector<double>> phi(degree_max + 1, std::vector<double>(family.order));
  std::vector<double> noise(degree_max + 1);
  for (int ell = 0; ell <= degree_max; ++ell) {
    const double mag = family.magnitude(ell);
    for (int j = 0; j < family.order; ++j) phi[ell][j] = family.lag_weights[j] * mag;
    noise[ell] = family.noise(ell);
  }
  return SpharModel(family.order, phi, std::move(noise), family.margin);
}

/// Upper bound on sup_z ||k(z) - k_L(z)||_1 for the part of the family
/// beyond degree_max (integral comparison). +inf when the series does not
/// converge absolutely (decay exponent <= 2).
inline double sup_tail_bound(const ParametricFamily& family, int degree_max) {
  double wsum = 0.0;
  for (double w : family.lag_weights) wsum += std::abs(w);
  const double inf = std::numeric_limits<double>::infinity();
  const double L = degree_max;
  if (family.shape == FamilyShape::power_law) {
    const double b = family.beta;
    if (b <= 2.0 || degree_max < 1) return inf;
    return wsum * family.gamma / kFourPi *
           (2.0 * std::pow(L, 2.0 - b) / (b - 2.0) + std::pow(L, 1.0 - b) / (b - 1.0));
  }
  const double a = family.alpha_phi;
  if (a <= 2.0 || degree_max < family.l_star) return inf;
  // ell = k + l_star - 1 with k >= L - l_star + 2; (2 ell + 1) = 2k + 2 l_star - 1.
  const double k0 = L - family.l_star + 1.0;
  const double shift = std::max(0.0, 2.0 * family.l_star - 1.0);
  if (k0 <= 0.0) return inf;
  return wsum * family.G / kFourPi *
         (2.0 * std::pow(k0, 2.0 - a) / (a - 2.0) + shift * std::pow(k0, 1.0 - a) / (a - 1.0));
}

}  // namespace sphar
