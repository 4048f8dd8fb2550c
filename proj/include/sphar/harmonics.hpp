#pragma once

// Special-function primitives: Legendre polynomials, real spherical
// harmonics, the CLT normalisation L_N(z) and Gauss-Legendre rules.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sphar/errors.hpp"

namespace sphar {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kFourPi = 4.0 * std::numbers::pi;
inline constexpr double kSixteenPiSq = 16.0 * std::numbers::pi * std::numbers::pi;

namespace detail {

inline void require_unit_interval(double z, const char* who) {
  if (!(z >= -1.0 && z <= 1.0)) {
    throw DomainError(std::string(who) + ": argument " + std::to_string(z) +
                      " outside [-1, 1]");
  }
}

}  // namespace detail

/// P_0(z), ..., P_L(z) at a single point.
struct LegendreBatch {
  int degree_max = 0;
  double point = 0.0;
  std::vector<double> values;

  double operator[](std::size_t ell) const { return values[ell]; }
};

/// Fills out[0..out.size()-1] with P_ell(z) by the upward three-term
/// recurrence (ell+1) P_{ell+1} = (2 ell + 1) z P_ell - ell P_{ell-1}.
/// No domain check; callers in hot loops validate once.
inline void legendre_fill(double z, std::span<double> out) noexcept {
  if (out.empty()) return;
  out[0] = 1.0;
  if (out.size() == 1) return;
  out[1] = z;
  double prev = 1.0;
  double cur = z;
  for (std::size_t ell = 1; ell + 1 < out.size(); ++ell) {
    const double l = static_cast<double>(ell);
    const double next = ((2.0 * l + 1.0) * z * cur - l * prev) / (l + 1.0);
    out[ell + 1] = next;
    prev = cur;
    cur = next;
  }
}

inline LegendreBatch legendre_all(double z, int degree_max) {
  detail::require_unit_interval(z, "legendre_all");
  if (degree_max < 0) throw DomainError("legendre_all: negative degree");
  LegendreBatch batch{degree_max, z, std::vector<double>(degree_max + 1)};
  legendre_fill(z, batch.values);
  return batch;
}

/// Single P_ell(z); O(ell).
inline double legendre(int ell, double z) {
  detail::require_unit_interval(z, "legendre");
  if (ell < 0) throw DomainError("legendre: negative degree");
  if (ell == 0) return 1.0;
  double prev = 1.0, cur = z;
  for (int l = 1; l < ell; ++l) {
    const double next = ((2.0 * l + 1.0) * z * cur - l * prev) / (l + 1.0);
    prev = cur;
    cur = next;
  }
  return cur;
}

/// L_N(z) = sum_{ell <= L_N} (2 ell + 1) / (16 pi^2) P_ell(z)^2.
inline double ln_weight(double z, int truncation) {
  detail::require_unit_interval(z, "ln_weight");
  if (truncation < 0) throw DomainError("ln_weight: negative truncation");
  double prev = 1.0, cur = z;
  double sum = 1.0;
  for (int ell = 1; ell <= truncation; ++ell) {
    if (ell > 1) {
      const double l = ell - 1.0;
      const double next = ((2.0 * l + 1.0) * z * cur - l * prev) / (l + 1.0);
      prev = cur;
      cur = next;
    }
    sum += (2.0 * ell + 1.0) * cur * cur;
  }
  return sum / kSixteenPiSq;
}

/// Real orthonormal spherical harmonics Y[ell][m], -ell <= m <= ell, at one
/// direction. Convention: m > 0 -> sqrt(2) Pbar_ell^m cos(m phi),
/// m < 0 -> sqrt(2) Pbar_ell^|m| sin(|m| phi), no Condon-Shortley phase.
class HarmonicTable {
 public:
  HarmonicTable() = default;
  HarmonicTable(int degree_max, double theta, double phi)
      : degree_max_(degree_max),
        theta_(theta),
        phi_(phi),
        values_(static_cast<std::size_t>(degree_max + 1) * (degree_max + 1)) {}

  static constexpr std::size_t index(int ell, int m) noexcept {
    return static_cast<std::size_t>(ell * ell + ell + m);
  }

  double operator()(int ell, int m) const { return values_[index(ell, m)]; }
  double& operator()(int ell, int m) { return values_[index(ell, m)]; }

  int degree_max() const noexcept { return degree_max_; }
  double theta() const noexcept { return theta_; }
  double phi() const noexcept { return phi_; }
  std::span<const double> values() const noexcept { return values_; }

 private:
  int degree_max_ = -1;
  double theta_ = 0.0;
  double phi_ = 0.0;
  std::vector<double> values_;
};

inline HarmonicTable real_sph_harmonics(double theta, double phi, int degree_max) {
  if (!(theta >= 0.0 && theta <= kPi)) {
    throw DomainError("real_sph_harmonics: colatitude outside [0, pi]");
  }
  if (!std::isfinite(phi)) throw DomainError("real_sph_harmonics: non-finite longitude");
  if (degree_max < 0) throw DomainError("real_sph_harmonics: negative degree");

  HarmonicTable table(degree_max, theta, phi);
  const double x = std::cos(theta);
  // Exact zero at the poles so that only m = 0 survives there.
  const double s = (theta == 0.0 || theta == kPi) ? 0.0 : std::sin(theta);
  const double sqrt2 = std::numbers::sqrt2;

  // Normalised associated Legendre functions, diagonal first then upward in ell.
  double diag = 1.0 / std::sqrt(kFourPi);  // Pbar_0^0
  for (int m = 0; m <= degree_max; ++m) {
    if (m > 0) diag *= std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * s;
    const double cm = m == 0 ? 1.0 : sqrt2 * std::cos(m * phi);
    const double sm = m == 0 ? 0.0 : sqrt2 * std::sin(m * phi);

    double p_lm2 = 0.0;
    double p_lm1 = diag;
    for (int ell = m; ell <= degree_max; ++ell) {
      double p;
      if (ell == m) {
        p = diag;
      } else if (ell == m + 1) {
        p = std::sqrt(2.0 * m + 3.0) * x * diag;
        p_lm2 = diag;
        p_lm1 = p;
      } else {
        const double l2 = static_cast<double>(ell) * ell;
        const double mm = static_cast<double>(m) * m;
        const double a = std::sqrt((4.0 * l2 - 1.0) / (l2 - mm));
        const double lm1 = ell - 1.0;
        const double b = std::sqrt((lm1 * lm1 - mm) / (4.0 * lm1 * lm1 - 1.0));
        p = a * (x * p_lm1 - b * p_lm2);
        p_lm2 = p_lm1;
        p_lm1 = p;
      }
      if (m == 0) {
        table(ell, 0) = p;
      } else {
        table(ell, m) = p * cm;
        table(ell, -m) = p * sm;
      }
    }
  }
  return table;
}

/// Unit vector for (colatitude, longitude).
struct Direction {
  double theta = 0.0;
  double phi = 0.0;
};

inline double cos_angle(const Direction& a, const Direction& b) {
  const double c = std::cos(a.theta) * std::cos(b.theta) +
                   std::sin(a.theta) * std::sin(b.theta) * std::cos(a.phi - b.phi);
  return std::clamp(c, -1.0, 1.0);
}

/// Gauss-Legendre rule on [-1, 1].
struct QuadratureRule {
  int order = 0;
  std::vector<double> nodes;
  std::vector<double> weights;

  template <class F>
  double integrate(F&& f) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) sum += weights[i] * f(nodes[i]);
    return sum;
  }
};

/// Newton iteration on P_order from the Tricomi initial guess.
inline QuadratureRule gauss_nodes(int order) {
  if (order < 1) throw DomainError("gauss_nodes: order must be >= 1");
  QuadratureRule rule{order, std::vector<double>(order), std::vector<double>(order)};
  const int half = (order + 1) / 2;
  const double n = order;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = z;
      for (int k = 1; k < order; ++k) {
        const double p2 = ((2.0 * k + 1.0) * z * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
      }
      // p1 = P_n(z), p0 = P_{n-1}(z)
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    // One last derivative at the converged node.
    double p0 = 1.0, p1 = z;
    for (int k = 1; k < order; ++k) {
      const double p2 = ((2.0 * k + 1.0) * z * p1 - k * p0) / (k + 1.0);
      p0 = p1;
      p1 = p2;
    }
    dp = n * (z * p1 - p0) / (z * z - 1.0);
    const double w = 2.0 / ((1.0 - z * z) * dp * dp);
    rule.nodes[i] = -z;
    rule.nodes[order - 1 - i] = z;
    rule.weights[i] = w;
    rule.weights[order - 1 - i] = w;
  }
  if (order % 2 == 1) rule.nodes[order / 2] = 0.0;
  return rule;
}

/// (1/(L+1)) sum_{ell <= L} (2 ell + 1) P_ell(z) P_ell(w); tends to
/// 2/(pi sin theta) when z = w = cos theta, and to zero like log L / L otherwise.
inline double hilb_average(double z, double w, int degree_max) {
  detail::require_unit_interval(z, "hilb_average");
  detail::require_unit_interval(w, "hilb_average");
  double pz0 = 1.0, pz1 = z, pw0 = 1.0, pw1 = w;
  double sum = 1.0;
  for (int ell = 1; ell <= degree_max; ++ell) {
    if (ell > 1) {
      const double l = ell - 1.0;
      const double nz = ((2.0 * l + 1.0) * z * pz1 - l * pz0) / (l + 1.0);
      const double nw = ((2.0 * l + 1.0) * w * pw1 - l * pw0) / (l + 1.0);
      pz0 = pz1;
      pz1 = nz;
      pw0 = pw1;
      pw1 = nw;
    }
    sum += (2.0 * ell + 1.0) * pz1 * pw1;
  }
  return sum / (degree_max + 1.0);
}

}  // namespace sphar
