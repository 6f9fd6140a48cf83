#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace mss {

// Digamma for positive arguments. Shifts x above 10 with the recurrence
// psi(x) = psi(x + 1) - 1/x, then applies the asymptotic series.
inline double digamma(double x) {
  if (!(x > 0.0)) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double shift = 0.0;
  while (x < 10.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli terms B_2k / (2k), k = 1..7
  const double series =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 -
                              inv2 * (1.0 / 240 -
                                      inv2 * (1.0 / 132 -
                                              inv2 * (691.0 / 32760 -
                                                      inv2 * (1.0 / 12)))))));
  return shift + std::log(x) - 0.5 * inv - series;
}

inline double log_gamma(double x) { return std::lgamma(x); }

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

inline double logistic(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) {
    return -std::numeric_limits<double>::infinity();
  }
  const double hi = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(hi)) {
    return hi;
  }
  double acc = 0.0;
  for (double x : xs) {
    acc += std::exp(x - hi);
  }
  return hi + std::log(acc);
}

// Turns log-weights into a probability vector in place.
inline void normalize_log(std::span<double> log_weights) {
  // Shift by the max and divide, rather than subtracting the log-sum, so the
  // result sums to one to the last bit or two even at large offsets.
  if (log_weights.empty()) return;
  const double hi = *std::max_element(log_weights.begin(), log_weights.end());
  double total = 0.0;
  for (double& w : log_weights) {
    w = std::exp(w - hi);
    total += w;
  }
  for (double& w : log_weights) {
    w /= total;
  }
}

// x ln x with the 0 ln 0 = 0 convention.
inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

// E[ln pi_k] = psi(alpha_k) - psi(sum alpha) for pi ~ Dirichlet(alpha).
inline std::vector<double> dirichlet_expected_log(std::span<const double> alpha) {
  const double total = std::accumulate(alpha.begin(), alpha.end(), 0.0);
  const double psi_total = digamma(total);
  std::vector<double> out(alpha.size());
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    out[k] = digamma(alpha[k]) - psi_total;
  }
  return out;
}

// ln of the Dirichlet normalizer Gamma(sum a) / prod Gamma(a_k).
inline double dirichlet_log_norm(std::span<const double> alpha) {
  double total = 0.0;
  double acc = 0.0;
  for (double a : alpha) {
    total += a;
    acc -= std::lgamma(a);
  }
  return acc + std::lgamma(total);
}

struct BetaExpectations {
  double log_u;
  double log_one_minus_u;
};

inline BetaExpectations beta_expected_log(double a, double b) {
  const double psi_total = digamma(a + b);
  return {digamma(a) - psi_total, digamma(b) - psi_total};
}

// KL(Beta(a, b) || Beta(a0, b0)).
inline double beta_kl(double a, double b, double a0, double b0) {
  const double psi_a = digamma(a);
  const double psi_b = digamma(b);
  const double psi_ab = digamma(a + b);
  return log_beta(a0, b0) - log_beta(a, b) + (a - a0) * psi_a +
         (b - b0) * psi_b + (a0 - a + b0 - b) * psi_ab;
}

}  // namespace mss
