#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "claims.hpp"
#include "parallel.hpp"
#include "priors.hpp"
#include "rng.hpp"
#include "special.hpp"

namespace mss {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean-field posterior over memberships, group claim distributions, group
/// and object-level reliabilities, truths and sticks.
///
/// Per-object vectors (alpha, nu, expected log pi) are stored flat; object m
/// occupies [offset(m), offset(m + 1)) of each group's block. Membership
/// mass beyond the L explicit groups is kept in `tail` so that each row of
/// phi plus its tail sums to 1. Tail groups stay at their priors and carry
/// no sufficient statistics.
class VariationalState {
 public:
  VariationalState() = default;

  VariationalState(const ClaimSet& cs, std::size_t groups)
      : sources_(cs.num_sources()), objects_(cs.num_objects()), groups_(groups) {
    offsets_.resize(objects_ + 1, 0);
    for (std::size_t m = 0; m < objects_; ++m) {
      offsets_[m + 1] = offsets_[m] + cs.domain_size(m);
    }
    const std::size_t values = offsets_.back();
    phi_.assign(sources_ * groups_, 0.0);
    tail_.assign(sources_, 0.0);
    alpha_.assign(groups_ * values, 1.0);
    elog_pi_.assign(groups_ * values, 0.0);
    beta1_.assign(groups_, 1.0);
    beta2_.assign(groups_, 1.0);
    tau_.assign(groups_ * objects_, 0.5);
    nu_.assign(values, 0.0);
    stick1_.assign(groups_, 1.0);
    stick2_.assign(groups_, 1.0);
  }

  std::size_t num_sources() const { return sources_; }
  std::size_t num_objects() const { return objects_; }
  std::size_t num_groups() const { return groups_; }
  std::size_t domain_size(std::size_t m) const { return offsets_[m + 1] - offsets_[m]; }

  double& phi(std::size_t n, std::size_t l) { return phi_[n * groups_ + l]; }
  double phi(std::size_t n, std::size_t l) const { return phi_[n * groups_ + l]; }
  std::span<double> phi_row(std::size_t n) { return {phi_.data() + n * groups_, groups_}; }
  std::span<const double> phi_row(std::size_t n) const { return {phi_.data() + n * groups_, groups_}; }
  double& tail(std::size_t n) { return tail_[n]; }
  double tail(std::size_t n) const { return tail_[n]; }

  std::span<double> alpha(std::size_t l, std::size_t m) { return block(alpha_, l, m); }
  std::span<const double> alpha(std::size_t l, std::size_t m) const { return block(alpha_, l, m); }
  // Cached E[ln pi_{l,m,k}] under the current alpha.
  std::span<double> elog_pi(std::size_t l, std::size_t m) { return block(elog_pi_, l, m); }
  std::span<const double> elog_pi(std::size_t l, std::size_t m) const { return block(elog_pi_, l, m); }

  double& beta1(std::size_t l) { return beta1_[l]; }
  double beta1(std::size_t l) const { return beta1_[l]; }
  double& beta2(std::size_t l) { return beta2_[l]; }
  double beta2(std::size_t l) const { return beta2_[l]; }

  double& tau(std::size_t l, std::size_t m) { return tau_[l * objects_ + m]; }
  double tau(std::size_t l, std::size_t m) const { return tau_[l * objects_ + m]; }

  std::span<double> nu(std::size_t m) {
    return {nu_.data() + offsets_[m], offsets_[m + 1] - offsets_[m]};
  }
  std::span<const double> nu(std::size_t m) const {
    return {nu_.data() + offsets_[m], offsets_[m + 1] - offsets_[m]};
  }

  double& stick1(std::size_t l) { return stick1_[l]; }
  double stick1(std::size_t l) const { return stick1_[l]; }
  double& stick2(std::size_t l) { return stick2_[l]; }
  double stick2(std::size_t l) const { return stick2_[l]; }

  // Number of alpha entries clamped to stay positive (soft counts below 1).
  std::size_t alpha_clamps = 0;

  friend bool operator==(const VariationalState&, const VariationalState&) = default;

 private:
  template <class Vec>
  static auto make_span(Vec& v, std::size_t begin, std::size_t len) {
    return std::span(v.data() + begin, len);
  }
  std::span<double> block(std::vector<double>& v, std::size_t l, std::size_t m) {
    return make_span(v, l * offsets_.back() + offsets_[m], offsets_[m + 1] - offsets_[m]);
  }
  std::span<const double> block(const std::vector<double>& v, std::size_t l, std::size_t m) const {
    return make_span(v, l * offsets_.back() + offsets_[m], offsets_[m + 1] - offsets_[m]);
  }

  std::size_t sources_ = 0;
  std::size_t objects_ = 0;
  std::size_t groups_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<double> phi_;
  std::vector<double> tail_;
  std::vector<double> alpha_;
  std::vector<double> elog_pi_;
  std::vector<double> beta1_;
  std::vector<double> beta2_;
  std::vector<double> tau_;
  std::vector<double> nu_;
  std::vector<double> stick1_;
  std::vector<double> stick2_;
};

namespace detail {

// Per-domain-size constants of the Dirichlet prior for both reliability
// regimes, plus the prior-predictive E[ln pi_y] used by tail groups.
struct DomainConstants {
  double log_norm[2];      // ln Gamma(eta + (K-1) theta) - ln Gamma(eta) - (K-1) ln Gamma(theta)
  double tail_match;       // E[ln pi_y | t = y] under the prior, averaged over r ~ Bern(E[u])
  double tail_mismatch;    // same for t != y
};

inline DomainConstants domain_constants(const Hyperparams& h, std::size_t k) {
  DomainConstants c{};
  const double p1 = h.prior_reliability();
  const double kk = static_cast<double>(k);
  for (int r = 0; r < 2; ++r) {
    const double eta = h.eta(r == 1);
    const double theta = h.theta(r == 1);
    const double total = eta + (kk - 1.0) * theta;
    c.log_norm[r] = std::lgamma(total) - std::lgamma(eta) - (kk - 1.0) * std::lgamma(theta);
    const double weight = r == 1 ? p1 : 1.0 - p1;
    const double psi_total = digamma(total);
    c.tail_match += weight * (digamma(eta) - psi_total);
    c.tail_mismatch += weight * (digamma(theta) - psi_total);
  }
  return c;
}

inline std::vector<DomainConstants> object_constants(const ClaimSet& cs, const Hyperparams& h) {
  std::vector<DomainConstants> out;
  out.reserve(cs.num_objects());
  std::vector<std::pair<std::size_t, DomainConstants>> memo;
  for (std::size_t m = 0; m < cs.num_objects(); ++m) {
    const std::size_t k = cs.domain_size(m);
    auto it = std::find_if(memo.begin(), memo.end(), [k](const auto& e) { return e.first == k; });
    if (it == memo.end()) {
      memo.emplace_back(k, domain_constants(h, k));
      it = memo.end() - 1;
    }
    out.push_back(it->second);
  }
  return out;
}

// Prior-predictive E[ln pi_{m,y}] of a tail group given the current q(t_m).
inline double tail_expected_log(const DomainConstants& c, double nu_y) {
  return nu_y * c.tail_match + (1.0 - nu_y) * c.tail_mismatch;
}

// E[ln ρ] and E[ln(1 - ρ)] for every explicit stick.
struct StickExpectations {
  std::vector<double> log_weight;  // E ln lambda_l for l < L
  double tail_log_weight;          // E ln lambda_L (first tail level)
  double tail_log_geometric;       // -ln(1 - exp(-1/kappa)): geometric sum over tail levels
};

inline StickExpectations stick_expectations(const VariationalState& s, const Hyperparams& h) {
  StickExpectations e;
  e.log_weight.resize(s.num_groups());
  double prefix = 0.0;
  for (std::size_t l = 0; l < s.num_groups(); ++l) {
    const auto b = beta_expected_log(s.stick1(l), s.stick2(l));
    e.log_weight[l] = b.log_u + prefix;
    prefix += b.log_one_minus_u;
  }
  // Beta(1, kappa): E ln rho = psi(1) - psi(1 + kappa), E ln(1 - rho) = -1/kappa.
  e.tail_log_weight = digamma(1.0) - digamma(1.0 + h.kappa) + prefix;
  e.tail_log_geometric = -std::log(-std::expm1(-1.0 / h.kappa));
  return e;
}

}  // namespace detail

namespace detail {

// Step 1 for one (l, m); returns the number of clamped entries.
inline std::size_t refresh_alpha(VariationalState& s, const ClaimSet& cs, const Hyperparams& h,
                                 std::size_t l, std::size_t m) {
  auto alpha = s.alpha(l, m);
  const auto nu = s.nu(m);
  const double q1 = s.tau(l, m);
  const double q0 = 1.0 - q1;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    alpha[k] = q1 * ((h.eta_reliable - 1.0) * nu[k] + (h.theta_reliable - 1.0) * (1.0 - nu[k])) +
               q0 * ((h.eta_unreliable - 1.0) * nu[k] + (h.theta_unreliable - 1.0) * (1.0 - nu[k])) +
               1.0;
  }
  for (std::size_t i : cs.column(m)) {
    const Claim& c = cs.claim(i);
    alpha[c.value] += s.phi(c.source, l);
  }
  std::size_t clamps = 0;
  for (double& a : alpha) {
    if (!(a > 0.0)) {
      a = 1e-6;
      ++clamps;
    }
  }
  const auto e = dirichlet_expected_log(alpha);
  std::copy(e.begin(), e.end(), s.elog_pi(l, m).begin());
  return clamps;
}

// E_q ln p(pi_{l,m} | r, t) split by regime, without the q(r) weights.
inline void expected_prior_by_regime(const VariationalState& s, const Hyperparams& h,
                                     const DomainConstants& c, std::size_t l, std::size_t m,
                                     double out[2]) {
  const auto elog = s.elog_pi(l, m);
  const auto nu = s.nu(m);
  double total = 0.0;
  double at_truth = 0.0;
  for (std::size_t k = 0; k < elog.size(); ++k) {
    total += elog[k];
    at_truth += nu[k] * elog[k];
  }
  for (int r = 0; r < 2; ++r) {
    const double eta = h.eta(r == 1);
    const double theta = h.theta(r == 1);
    out[r] = c.log_norm[r] + (eta - theta) * at_truth + (theta - 1.0) * total;
  }
}

// Step 3 for one (l, m).
inline void refresh_tau(VariationalState& s, const Hyperparams& h, const DomainConstants& c,
                        const BetaExpectations& eu, std::size_t l, std::size_t m) {
  double score[2];
  expected_prior_by_regime(s, h, c, l, m, score);
  score[1] += eu.log_u;
  score[0] += eu.log_one_minus_u;
  s.tau(l, m) = logistic(score[1] - score[0]);
}

// Step 4 for one object.
inline void refresh_nu(VariationalState& s, const ClaimSet& cs, const Hyperparams& h,
                       const DomainConstants& c, std::size_t m) {
  auto nu = s.nu(m);
  std::vector<double> logits(nu.size(), 0.0);
  for (std::size_t l = 0; l < s.num_groups(); ++l) {
    const double q1 = s.tau(l, m);
    const double weight = q1 * (h.eta_reliable - h.theta_reliable) +
                          (1.0 - q1) * (h.eta_unreliable - h.theta_unreliable);
    const auto elog = s.elog_pi(l, m);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      logits[k] += weight * elog[k];
    }
  }
  const double tail_gain = c.tail_match - c.tail_mismatch;
  for (std::size_t i : cs.column(m)) {
    const Claim& claim = cs.claim(i);
    logits[claim.value] += s.tail(claim.source) * tail_gain;
  }
  normalize_log(logits);
  std::copy(logits.begin(), logits.end(), nu.begin());
}

inline double object_reliability_term(double q1, const BetaExpectations& eu) {
  return q1 * eu.log_u + (1.0 - q1) * eu.log_one_minus_u - xlogx(q1) - xlogx(1.0 - q1);
}

inline double truth_term(std::span<const double> nu) {
  double acc = -std::log(static_cast<double>(nu.size()));
  for (double v : nu) {
    acc -= xlogx(v);
  }
  return acc;
}

// E_q ln p(pi_{l,m} | r, t) - E_q ln q(pi_{l,m}).
inline double claim_param_term(const VariationalState& s, const Hyperparams& h, const DomainConstants& c,
                               std::size_t l, std::size_t m) {
  double by_regime[2];
  expected_prior_by_regime(s, h, c, l, m, by_regime);
  const double q1 = s.tau(l, m);
  const auto alpha = s.alpha(l, m);
  const auto elog = s.elog_pi(l, m);
  double core = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    core += (alpha[k] - 1.0) * elog[k];
  }
  return q1 * by_regime[1] + (1.0 - q1) * by_regime[0] - dirichlet_log_norm(alpha) - core;
}

inline double claim_likelihood_term(const VariationalState& s, const DomainConstants& c, const Claim& claim) {
  double acc = 0.0;
  for (std::size_t l = 0; l < s.num_groups(); ++l) {
    acc += s.phi(claim.source, l) * s.elog_pi(l, claim.object)[claim.value];
  }
  return acc + s.tail(claim.source) * tail_expected_log(c, s.nu(claim.object)[claim.value]);
}

// Every ELBO term that involves q(t_m), q(r_{.,m}) or q(pi_{.,m}).
inline double object_local_elbo(const VariationalState& s, const ClaimSet& cs, const Hyperparams& h,
                                const DomainConstants& c, const std::vector<BetaExpectations>& eu,
                                std::size_t m) {
  double acc = truth_term(s.nu(m));
  for (std::size_t l = 0; l < s.num_groups(); ++l) {
    acc += object_reliability_term(s.tau(l, m), eu[l]) + claim_param_term(s, h, c, l, m);
  }
  for (std::size_t i : cs.column(m)) {
    acc += claim_likelihood_term(s, c, cs.claim(i));
  }
  return acc;
}

inline std::vector<BetaExpectations> reliability_expectations(const VariationalState& s) {
  std::vector<BetaExpectations> eu(s.num_groups());
  for (std::size_t l = 0; l < s.num_groups(); ++l) {
    eu[l] = beta_expected_log(s.beta1(l), s.beta2(l));
  }
  return eu;
}

}  // namespace detail

/// Step 1: closed-form Dirichlet update of every alpha_{l,m}, then refreshes
/// the cached E[ln pi].
inline void update_alpha(VariationalState& s, const ClaimSet& cs, const Hyperparams& h,
                         std::size_t threads = 1) {
  const std::size_t M = s.num_objects();
  std::vector<std::size_t> clamps(s.num_groups() * M, 0);
  parallel_for(clamps.size(), threads, [&](std::size_t job) {
    clamps[job] = detail::refresh_alpha(s, cs, h, job / M, job % M);
  });
  s.alpha_clamps += std::accumulate(clamps.begin(), clamps.end(), std::size_t{0});
}

/// Step 2: beta_l = (sum_m tau_{l,m} + b1, sum_m (1 - tau_{l,m}) + b0).
inline void update_beta(VariationalState& s, const Hyperparams& h) {
  for (std::size_t l = 0; l < s.num_groups(); ++l) {
    double on = 0.0;
    double off = 0.0;
    for (std::size_t m = 0; m < s.num_objects(); ++m) {
      on += s.tau(l, m);
      off += 1.0 - s.tau(l, m);
    }
    s.beta1(l) = on + h.b1;
    s.beta2(l) = off + h.b0;
  }
}

/// Step 3: q(r_{l,m} = 1). Includes the regime-dependent Dirichlet log
/// normalizer, which does not cancel between r = 0 and r = 1 when the two
/// regimes have different soft counts.
inline void update_tau(VariationalState& s, const ClaimSet& cs, const Hyperparams& h,
                       std::size_t threads = 1) {
  const std::size_t M = s.num_objects();
  const auto consts = detail::object_constants(cs, h);
  const auto eu = detail::reliability_expectations(s);
  parallel_for(s.num_groups() * M, threads, [&](std::size_t job) {
    const std::size_t l = job / M;
    const std::size_t m = job % M;
    detail::refresh_tau(s, h, consts[m], eu[l], l, m);
  });
}

/// Step 4: q(t_m). Sums the explicit groups and the prior-predictive
/// contribution of each claimant's tail membership.
inline void update_nu(VariationalState& s, const ClaimSet& cs, const Hyperparams& h,
                      std::size_t threads = 1) {
  const auto consts = detail::object_constants(cs, h);
  parallel_for(s.num_objects(), threads, [&](std::size_t m) { detail::refresh_nu(s, cs, h, consts[m], m); });
}

/// Per-object mode switch. Coordinate updates cannot move an object from
/// "group A right, group B wrong, truth x" to "group B right, group A wrong,
/// truth y" because the three factors lock each other. For every object this
/// re-seeds q(t_m) at each other value, re-optimizes q(pi_{.,m}), q(r_{.,m})
/// and q(t_m) locally, and keeps the result only if the object's share of
/// the ELBO strictly increases. Memberships and q(u) are held fixed, so the
/// full ELBO never decreases. Returns the number of objects switched.
inline std::size_t switch_truth_modes(VariationalState& s, const ClaimSet& cs, const Hyperparams& h,
                                      std::size_t threads = 1, std::size_t local_iterations = 10) {
  const std::size_t L = s.num_groups();
  const auto consts = detail::object_constants(cs, h);
  const auto eu = detail::reliability_expectations(s);
  std::vector<std::uint8_t> switched(s.num_objects(), 0);
  parallel_for(s.num_objects(), threads, [&](std::size_t m) {
    const std::size_t K = s.domain_size(m);
    if (K < 2) {
      return;
    }
    auto snapshot = [&] {
      std::vector<double> v(s.nu(m).begin(), s.nu(m).end());
      for (std::size_t l = 0; l < L; ++l) {
        v.insert(v.end(), s.alpha(l, m).begin(), s.alpha(l, m).end());
        v.insert(v.end(), s.elog_pi(l, m).begin(), s.elog_pi(l, m).end());
        v.push_back(s.tau(l, m));
      }
      return v;
    };
    auto restore = [&](const std::vector<double>& v) {
      auto it = v.begin();
      std::copy(it, it + static_cast<std::ptrdiff_t>(K), s.nu(m).begin());
      it += static_cast<std::ptrdiff_t>(K);
      for (std::size_t l = 0; l < L; ++l) {
        std::copy(it, it + static_cast<std::ptrdiff_t>(K), s.alpha(l, m).begin());
        it += static_cast<std::ptrdiff_t>(K);
        std::copy(it, it + static_cast<std::ptrdiff_t>(K), s.elog_pi(l, m).begin());
        it += static_cast<std::ptrdiff_t>(K);
        s.tau(l, m) = *it++;
      }
    };
    const auto start = snapshot();
    const std::size_t current = [&] {
      const auto nu = s.nu(m);
      return static_cast<std::size_t>(std::max_element(nu.begin(), nu.end()) - nu.begin());
    }();
    auto best = start;
    double best_value = detail::object_local_elbo(s, cs, h, consts[m], eu, m);
    for (std::size_t k = 0; k < K; ++k) {
      if (k == current) {
        continue;
      }
      restore(start);
      auto nu = s.nu(m);
      std::fill(nu.begin(), nu.end(), 0.0);
      nu[k] = 1.0;
      for (std::size_t it = 0; it < local_iterations; ++it) {
        for (std::size_t l = 0; l < L; ++l) {
          detail::refresh_alpha(s, cs, h, l, m);
          detail::refresh_tau(s, h, consts[m], eu[l], l, m);
        }
        detail::refresh_nu(s, cs, h, consts[m], m);
      }
      for (std::size_t l = 0; l < L; ++l) {
        detail::refresh_alpha(s, cs, h, l, m);
      }
      const double value = detail::object_local_elbo(s, cs, h, consts[m], eu, m);
      if (value > best_value + 1e-9 * (std::abs(best_value) + 1.0)) {
        best_value = value;
        best = snapshot();
        switched[m] = 1;
      }
    }
    restore(best);
  });
  return static_cast<std::size_t>(std::count(switched.begin(), switched.end(), std::uint8_t{1}));
}

/// Step 5: q(g_n) over the L explicit groups plus the closed-form mass of
/// all levels beyond L, which sit at their prior sticks and prior-predictive
/// claim distributions.
inline void update_phi(VariationalState& s, const ClaimSet& cs, const Hyperparams& h,
                       std::size_t threads = 1) {
  const std::size_t L = s.num_groups();
  const auto consts = detail::object_constants(cs, h);
  const auto sticks = detail::stick_expectations(s, h);
  parallel_for(s.num_sources(), threads, [&](std::size_t n) {
    std::vector<double> logits(sticks.log_weight.begin(), sticks.log_weight.end());
    double tail_logit = sticks.tail_log_weight + sticks.tail_log_geometric;
    for (std::size_t i : cs.row(n)) {
      const Claim& c = cs.claim(i);
      for (std::size_t l = 0; l < L; ++l) {
        logits[l] += s.elog_pi(l, c.object)[c.value];
      }
      tail_logit += detail::tail_expected_log(consts[c.object], s.nu(c.object)[c.value]);
    }
    logits.push_back(tail_logit);
    normalize_log(logits);
    auto row = s.phi_row(n);
    std::copy(logits.begin(), logits.begin() + static_cast<std::ptrdiff_t>(L), row.begin());
    s.tail(n) = logits[L];
  });
}

/// Step 6: Beta posteriors of the explicit sticks. Mass beyond stick i
/// includes every source's tail mass.
inline void update_sticks(VariationalState& s, const Hyperparams& h) {
  const std::size_t L = s.num_groups();
  std::vector<double> mass(L, 0.0);
  double tail = 0.0;
  for (std::size_t n = 0; n < s.num_sources(); ++n) {
    for (std::size_t l = 0; l < L; ++l) {
      mass[l] += s.phi(n, l);
    }
    tail += s.tail(n);
  }
  double beyond = tail;
  for (std::size_t i = L; i-- > 0;) {
    s.stick1(i) = 1.0 + mass[i];
    s.stick2(i) = h.kappa + beyond;
    beyond += mass[i];
  }
}

/// The evidence lower bound split by factor.
struct ElboTerms {
  double sticks = 0.0;             // -KL of stick posteriors
  double memberships = 0.0;        // E ln p(g | rho) + H(q(g))
  double group_reliability = 0.0;  // -KL of q(u)
  double object_reliability = 0.0; // E ln p(r | u) + H(q(r))
  double truths = 0.0;             // E ln p(t) + H(q(t))
  double claim_params = 0.0;       // E ln p(pi | r, t) + H(q(pi))
  double likelihood = 0.0;         // E ln p(y | pi, g)

  double total() const {
    return sticks + memberships + group_reliability + object_reliability + truths +
           claim_params + likelihood;
  }

  std::string describe() const {
    std::ostringstream out;
    out.precision(17);
    out << "sticks=" << sticks << " memberships=" << memberships
        << " group_reliability=" << group_reliability << " object_reliability=" << object_reliability
        << " truths=" << truths << " claim_params=" << claim_params << " likelihood=" << likelihood;
    return out.str();
  }
};

/// Evaluates the bound E_q ln p(y, hidden) + H(q) in closed form. Sums run in
/// index order. Throws NumericalError naming the offending factor when any
/// term is not finite.
inline ElboTerms elbo_terms(const VariationalState& s, const ClaimSet& cs, const Hyperparams& h) {
  const std::size_t L = s.num_groups();
  const std::size_t M = s.num_objects();
  const auto consts = detail::object_constants(cs, h);
  const auto sticks = detail::stick_expectations(s, h);
  ElboTerms t;

  for (std::size_t l = 0; l < L; ++l) {
    t.sticks -= beta_kl(s.stick1(l), s.stick2(l), 1.0, h.kappa);
    t.group_reliability -= beta_kl(s.beta1(l), s.beta2(l), h.b1, h.b0);
  }

  for (std::size_t n = 0; n < s.num_sources(); ++n) {
    double acc = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      acc += s.phi(n, l) * sticks.log_weight[l] - xlogx(s.phi(n, l));
    }
    acc += s.tail(n) * (sticks.tail_log_weight + sticks.tail_log_geometric) - xlogx(s.tail(n));
    t.memberships += acc;
  }

  const auto eu = detail::reliability_expectations(s);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t m = 0; m < M; ++m) {
      t.object_reliability += detail::object_reliability_term(s.tau(l, m), eu[l]);
    }
  }

  for (std::size_t m = 0; m < M; ++m) {
    t.truths += detail::truth_term(s.nu(m));
  }

  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t m = 0; m < M; ++m) {
      t.claim_params += detail::claim_param_term(s, h, consts[m], l, m);
    }
  }

  for (const Claim& c : cs.claims()) {
    t.likelihood += detail::claim_likelihood_term(s, consts[c.object], c);
  }

  if (!std::isfinite(t.total())) {
    throw NumericalError("non-finite ELBO: " + t.describe());
  }
  return t;
}

inline double compute_elbo(const VariationalState& s, const ClaimSet& cs, const Hyperparams& h) {
  return elbo_terms(s, cs, h).total();
}

/// Starting point: Dirichlet(1, ..., 1) memberships drawn from a substream
/// keyed by each source's external ID, smoothed claim histograms for q(t),
/// reliabilities and sticks at their priors, then one alpha update.
inline VariationalState init_state(const ClaimSet& cs, const Hyperparams& h, const Rng& rng,
                                   std::size_t threads = 1) {
  h.validate();
  VariationalState s(cs, effective_truncation(h, cs.num_sources()));
  const std::size_t L = s.num_groups();
  const std::vector<double> ones(L, 1.0);
  for (std::size_t n = 0; n < cs.num_sources(); ++n) {
    Rng source_rng = rng.derive(cs.source_id(n));
    const auto draw = source_rng.dirichlet(ones);
    std::copy(draw.begin(), draw.end(), s.phi_row(n).begin());
    s.tail(n) = 0.0;
  }
  for (std::size_t m = 0; m < cs.num_objects(); ++m) {
    auto nu = s.nu(m);
    std::fill(nu.begin(), nu.end(), 1.0);
    for (std::size_t i : cs.column(m)) {
      nu[cs.claim(i).value] += 1.0;
    }
    const double total = std::accumulate(nu.begin(), nu.end(), 0.0);
    for (double& v : nu) {
      v /= total;
    }
  }
  for (std::size_t l = 0; l < L; ++l) {
    s.beta1(l) = h.b1;
    s.beta2(l) = h.b0;
    s.stick1(l) = 1.0;
    s.stick2(l) = h.kappa;
    for (std::size_t m = 0; m < cs.num_objects(); ++m) {
      s.tau(l, m) = h.prior_reliability();
    }
  }
  update_alpha(s, cs, h, threads);
  return s;
}

struct FitOptions {
  std::size_t max_sweeps = 200;
  double tol = 1e-6;
  std::uint64_t seed = 20130101;
  std::size_t threads = 1;
  // Sweeps at the start that hold q(r) at its prior, skipping Step 3.
  std::size_t warmup_sweeps = 0;
  // Record the ELBO after every individual step (six per sweep).
  bool trace_steps = false;
  // Try switching each object's truth mode after Step 4 of every sweep.
  bool mode_search = true;
  // Called after every sweep with the sweep count and the new ELBO.
  std::function<void(std::size_t, double)> on_sweep;
};

struct FitResult {
  VariationalState state;
  double initial_elbo = 0.0;
  std::vector<double> elbo_trace;  // one value per sweep
  std::vector<double> step_trace;  // six values per sweep when requested
  std::size_t iterations = 0;
  bool converged = false;

  double final_elbo() const { return elbo_trace.empty() ? initial_elbo : elbo_trace.back(); }
};

/// Runs one sweep of Steps 1-6 in order. With `mode_search` the truth-mode
/// switch runs right after Step 4 and its gain is folded into that step.
inline void sweep(VariationalState& s, const ClaimSet& cs, const Hyperparams& h, std::size_t threads,
                  std::vector<double>* step_trace = nullptr, bool update_reliability = true,
                  bool mode_search = false) {
  auto mark = [&] {
    if (step_trace != nullptr) {
      step_trace->push_back(compute_elbo(s, cs, h));
    }
  };
  update_alpha(s, cs, h, threads);
  mark();
  update_beta(s, h);
  mark();
  if (update_reliability) {
    update_tau(s, cs, h, threads);
  }
  mark();
  update_nu(s, cs, h, threads);
  if (mode_search) {
    switch_truth_modes(s, cs, h, threads);
  }
  mark();
  update_phi(s, cs, h, threads);
  mark();
  update_sticks(s, h);
  mark();
}

namespace detail {

// Claim set with sources and objects ordered by external ID, and the maps
// back to the caller's indices.
struct CanonicalClaims {
  ClaimSet claims;
  std::vector<std::size_t> source_from;  // canonical -> original
  std::vector<std::size_t> object_from;
  bool identity = true;
};

inline CanonicalClaims canonicalize(const ClaimSet& cs) {
  CanonicalClaims out;
  out.source_from.resize(cs.num_sources());
  out.object_from.resize(cs.num_objects());
  std::iota(out.source_from.begin(), out.source_from.end(), std::size_t{0});
  std::iota(out.object_from.begin(), out.object_from.end(), std::size_t{0});
  std::stable_sort(out.source_from.begin(), out.source_from.end(),
                   [&](std::size_t a, std::size_t b) { return cs.source_id(a) < cs.source_id(b); });
  std::stable_sort(out.object_from.begin(), out.object_from.end(),
                   [&](std::size_t a, std::size_t b) { return cs.object(a).id() < cs.object(b).id(); });
  std::vector<std::size_t> source_to(cs.num_sources());
  std::vector<std::size_t> object_to(cs.num_objects());
  for (std::size_t i = 0; i < out.source_from.size(); ++i) {
    source_to[out.source_from[i]] = i;
    out.identity = out.identity && out.source_from[i] == i;
  }
  for (std::size_t i = 0; i < out.object_from.size(); ++i) {
    object_to[out.object_from[i]] = i;
    out.identity = out.identity && out.object_from[i] == i;
  }
  std::vector<std::string> ids;
  for (std::size_t i : out.source_from) {
    ids.push_back(cs.source_id(i));
  }
  std::vector<ObjectDomain> objects;
  for (std::size_t i : out.object_from) {
    objects.push_back(cs.object(i));
  }
  std::vector<Claim> claims;
  claims.reserve(cs.num_claims());
  for (const Claim& c : cs.claims()) {
    claims.push_back({source_to[c.source], object_to[c.object], c.value});
  }
  std::sort(claims.begin(), claims.end(), [](const Claim& a, const Claim& b) {
    return a.source != b.source ? a.source < b.source : a.object < b.object;
  });
  out.identity = out.identity && claims == cs.claims();
  out.claims = ClaimSet(std::move(ids), std::move(objects), std::move(claims));
  return out;
}

// Moves a state fitted on the canonical claim set back to original indices.
inline VariationalState restore_order(const VariationalState& c, const CanonicalClaims& canon,
                                      const ClaimSet& original) {
  VariationalState s(original, c.num_groups());
  const std::size_t L = c.num_groups();
  for (std::size_t i = 0; i < canon.source_from.size(); ++i) {
    const std::size_t n = canon.source_from[i];
    std::copy(c.phi_row(i).begin(), c.phi_row(i).end(), s.phi_row(n).begin());
    s.tail(n) = c.tail(i);
  }
  for (std::size_t i = 0; i < canon.object_from.size(); ++i) {
    const std::size_t m = canon.object_from[i];
    std::copy(c.nu(i).begin(), c.nu(i).end(), s.nu(m).begin());
    for (std::size_t l = 0; l < L; ++l) {
      std::copy(c.alpha(l, i).begin(), c.alpha(l, i).end(), s.alpha(l, m).begin());
      std::copy(c.elog_pi(l, i).begin(), c.elog_pi(l, i).end(), s.elog_pi(l, m).begin());
      s.tau(l, m) = c.tau(l, i);
    }
  }
  for (std::size_t l = 0; l < L; ++l) {
    s.beta1(l) = c.beta1(l);
    s.beta2(l) = c.beta2(l);
    s.stick1(l) = c.stick1(l);
    s.stick2(l) = c.stick2(l);
  }
  s.alpha_clamps = c.alpha_clamps;
  return s;
}

}  // namespace detail

/// Coordinate ascent until the relative ELBO change |dL| / (|L| + 1) drops
/// below `opts.tol` or `opts.max_sweeps` sweeps have run.
///
/// Sources and objects are processed in external-ID order, so permuting the
/// input permutes the returned state and nothing else.
inline FitResult fit(const ClaimSet& cs, const Hyperparams& h, const FitOptions& opts = {}) {
  h.validate();
  const auto canon = detail::canonicalize(cs);
  const ClaimSet& work = canon.claims;

  FitResult result;
  result.state = init_state(work, h, Rng(opts.seed), opts.threads);
  result.initial_elbo = compute_elbo(result.state, work, h);
  double previous = result.initial_elbo;
  for (std::size_t it = 0; it < opts.max_sweeps; ++it) {
    const bool warming = it < opts.warmup_sweeps && it + 1 < opts.max_sweeps;
    sweep(result.state, work, h, opts.threads, opts.trace_steps ? &result.step_trace : nullptr, !warming,
          opts.mode_search && !warming);
    const double current = compute_elbo(result.state, work, h);
    result.elbo_trace.push_back(current);
    result.iterations = it + 1;
    if (opts.on_sweep) {
      opts.on_sweep(it + 1, current);
    }
    if (std::abs(current - previous) / (std::abs(current) + 1.0) < opts.tol) {
      result.converged = true;
      break;
    }
    previous = current;
  }
  if (!canon.identity) {
    result.state = detail::restore_order(result.state, canon, cs);
  }
  return result;
}

}  // namespace mss
