#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <gtest/gtest.h>

#include <mss/inference.hpp>
#include <mss/reporting.hpp>
#include <mss/sampler.hpp>

#include "support/exact_evidence.hpp"
#include "support/fixtures.hpp"

namespace {

using mss::ClaimFormat;
using mss::Hyperparams;
using mss::VariationalState;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Reference E_q[ln Dir(pi; c)] for pi ~ Dir(alpha), written out directly.
double expected_log_dirichlet(const std::vector<double>& c, std::span<const double> alpha) {
  const double a0 = std::accumulate(alpha.begin(), alpha.end(), 0.0);
  double acc = std::lgamma(std::accumulate(c.begin(), c.end(), 0.0));
  for (std::size_t k = 0; k < c.size(); ++k) {
    acc += -std::lgamma(c[k]) + (c[k] - 1.0) * (boost::math::digamma(alpha[k]) - boost::math::digamma(a0));
  }
  return acc;
}

void set_all(std::span<double> v, std::initializer_list<double> values) {
  std::copy(values.begin(), values.end(), v.begin());
}

// ---------------------------------------------------------------- init

TEST(InitState, TruthPosteriorIsSmoothedHistogram) {
  const auto domains = nlohmann::ordered_json::parse(R"({"b": ["A", "B"], "quiet": ["x", "y", "z"]})");
  std::istringstream in("s1,b,A\ns2,b,A\ns3,b,B\n");
  const auto cs = mss::parse_claims(in, ClaimFormat::Csv, &domains);
  const auto s = mss::init_state(cs, Hyperparams{}, mss::Rng(1));
  EXPECT_NEAR(s.nu(0)[0], 0.6, 1e-15);
  EXPECT_NEAR(s.nu(0)[1], 0.4, 1e-15);
  for (double v : s.nu(1)) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  for (std::size_t l = 0; l < s.num_groups(); ++l) {
    for (std::size_t m = 0; m < 2; ++m) EXPECT_DOUBLE_EQ(s.tau(l, m), 0.5);
  }
  for (std::size_t n = 0; n < 3; ++n) {
    const auto row = s.phi_row(n);
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), s.tail(n)), 1.0, 1e-12);
  }
}

// ---------------------------------------------------------------- Step 1

TEST(UpdateAlpha, PriorOnlyWithReliableTruthOne) {
  const auto domains = nlohmann::ordered_json::parse(R"({"m": ["a", "b"]})");
  std::istringstream in("s,other,z\n");
  const auto cs = mss::parse_claims(in, ClaimFormat::Csv, &domains);
  Hyperparams h;
  VariationalState s(cs, 2);
  s.tau(0, 0) = 1.0;
  set_all(s.nu(0), {0.0, 1.0});
  mss::update_alpha(s, cs, h);
  EXPECT_DOUBLE_EQ(s.alpha(0, 0)[0], 1.0);
  EXPECT_DOUBLE_EQ(s.alpha(0, 0)[1], 5.0);
}

TEST(UpdateAlpha, OneClaimFromCertainMemberCareless) {
  const auto cs = mss::parse_claims("s,m,a\ns2,m,b\ns2,o,c\n", ClaimFormat::Csv);
  Hyperparams h;  // careless eta0 = theta0 = 1
  VariationalState s(cs, 2);
  s.phi(0, 0) = 1.0;
  s.phi(1, 1) = 1.0;
  s.tau(0, 0) = 0.0;
  set_all(s.nu(0), {0.5, 0.5});
  mss::update_alpha(s, cs, h);
  EXPECT_DOUBLE_EQ(s.alpha(0, 0)[0], 2.0);
  EXPECT_DOUBLE_EQ(s.alpha(0, 0)[1], 1.0);
}

TEST(UpdateAlpha, VacuousEvidenceLeavesPrior) {
  const auto cs = mss::parse_claims("s,m,a\ns2,m,b\n", ClaimFormat::Csv);
  Hyperparams h;
  h.eta_reliable = h.theta_reliable = 1.0;
  VariationalState s(cs, 2);
  s.tail(0) = s.tail(1) = 1.0;  // no explicit membership mass
  set_all(s.nu(0), {0.3, 0.7});
  mss::update_alpha(s, cs, h);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_DOUBLE_EQ(s.alpha(l, 0)[0], 1.0);
    EXPECT_DOUBLE_EQ(s.alpha(l, 0)[1], 1.0);
  }
}

TEST(UpdateAlpha, CachedExpectationsMatchDigamma) {
  const auto cs = mss::parse_claims("s,m,a\ns2,m,b\n", ClaimFormat::Csv);
  auto s = mss::init_state(cs, Hyperparams{}, mss::Rng(3));
  for (std::size_t l = 0; l < s.num_groups(); ++l) {
    const auto a = s.alpha(l, 0);
    const double total = a[0] + a[1];
    EXPECT_NEAR(s.elog_pi(l, 0)[0], boost::math::digamma(a[0]) - boost::math::digamma(total), 1e-12);
  }
}

// ---------------------------------------------------------------- Step 2

TEST(UpdateBeta, DirectSums) {
  const auto cs = mss::parse_claims("s,m1,a\ns,m2,a\ns,m3,a\ns,m4,a\n", ClaimFormat::Csv);
  Hyperparams h;
  VariationalState s(cs, 2);
  for (std::size_t m = 0; m < 4; ++m) s.tau(0, m) = 1.0;
  mss::update_beta(s, h);
  EXPECT_DOUBLE_EQ(s.beta1(0), 6.0);
  EXPECT_DOUBLE_EQ(s.beta2(0), 2.0);

  std::string text;
  for (int m = 0; m < 10; ++m) text += "s,m" + std::to_string(m) + ",a\n";
  const auto cs10 = mss::parse_claims(text, ClaimFormat::Csv);
  h.b1 = h.b0 = 1.0;
  VariationalState s10(cs10, 2);  // tau defaults to 0.5
  mss::update_beta(s10, h);
  EXPECT_DOUBLE_EQ(s10.beta1(1), 6.0);
  EXPECT_DOUBLE_EQ(s10.beta2(1), 6.0);
}

TEST(UpdateBeta, NoObjectsGivesPrior) {
  const mss::ClaimSet empty({"s"}, {}, {});
  Hyperparams h;
  h.b1 = 3.0;
  h.b0 = 0.5;
  VariationalState s(empty, 2);
  mss::update_beta(s, h);
  EXPECT_DOUBLE_EQ(s.beta1(0), 3.0);
  EXPECT_DOUBLE_EQ(s.beta2(0), 0.5);
}

// ---------------------------------------------------------------- Step 3

TEST(UpdateTau, SymmetricEvidenceGivesHalf) {
  const auto cs = mss::parse_claims("s,m,a\ns2,m,b\n", ClaimFormat::Csv);
  Hyperparams h;
  h.eta_reliable = h.theta_reliable = 1.0;
  VariationalState s(cs, 2);
  s.beta1(0) = s.beta2(0) = 2.0;
  mss::update_tau(s, cs, h);
  EXPECT_NEAR(s.tau(0, 0), 0.5, 1e-15);
}

TEST(UpdateTau, DigammaTableValue) {
  const auto cs = mss::parse_claims("s,m,a\ns2,m,b\n", ClaimFormat::Csv);
  Hyperparams h;
  h.eta_reliable = h.theta_reliable = 1.0;
  VariationalState s(cs, 2);
  s.beta1(0) = 5.0;
  s.beta2(0) = 1.0;
  mss::update_tau(s, cs, h);
  // psi(5) - psi(1) = 1 + 1/2 + 1/3 + 1/4 = 25/12.
  EXPECT_NEAR(s.tau(0, 0), sigmoid(25.0 / 12.0), 1e-12);
  EXPECT_NEAR(s.tau(0, 0), 0.889, 5e-4);
}

TEST(UpdateTau, MatchesDirectEvaluationOfExpectedLogJoint) {
  const auto cs = mss::parse_claims("s,m,a\ns2,m,b\ns3,m,c\n", ClaimFormat::Csv);
  Hyperparams h;
  h.eta_reliable = 10.0;
  h.theta_reliable = 1.0;
  h.eta_unreliable = 1.0;
  h.theta_unreliable = 4.0;
  VariationalState s(cs, 2);
  set_all(s.alpha(0, 0), {30.0, 1.5, 2.0});
  set_all(s.nu(0), {0.8, 0.15, 0.05});
  s.beta1(0) = 3.0;
  s.beta2(0) = 2.0;
  mss::update_alpha(s, cs, h);  // refreshes the cache; overwrite alpha again
  set_all(s.alpha(0, 0), {30.0, 1.5, 2.0});
  const auto e = mss::dirichlet_expected_log(s.alpha(0, 0));
  std::copy(e.begin(), e.end(), s.elog_pi(0, 0).begin());
  mss::update_tau(s, cs, h);

  double score[2] = {0.0, 0.0};
  for (int r = 0; r < 2; ++r) {
    for (std::size_t t = 0; t < 3; ++t) {
      score[r] += s.nu(0)[t] * expected_log_dirichlet(mss::dirichlet_prior_counts(h, r == 1, t, 3), s.alpha(0, 0));
    }
  }
  score[1] += boost::math::digamma(3.0) - boost::math::digamma(5.0);
  score[0] += boost::math::digamma(2.0) - boost::math::digamma(5.0);
  EXPECT_NEAR(s.tau(0, 0), sigmoid(score[1] - score[0]), 1e-12);
  EXPECT_GT(s.tau(0, 0), 0.5);
}

// ---------------------------------------------------------------- Step 4

TEST(UpdateNu, EqualSoftCountsGiveUniform) {
  const auto cs = mss::parse_claims("s,m,a\ns2,m,b\ns3,m,b\n", ClaimFormat::Csv);
  Hyperparams h;
  h.eta_reliable = h.theta_reliable = 2.0;
  h.eta_unreliable = h.theta_unreliable = 2.0;
  auto s = mss::init_state(cs, Hyperparams{}, mss::Rng(2));
  for (std::size_t n = 0; n < 3; ++n) s.tail(n) = 0.3;
  mss::update_nu(s, cs, h);
  EXPECT_NEAR(s.nu(0)[0], 0.5, 1e-15);
  EXPECT_NEAR(s.nu(0)[1], 0.5, 1e-15);
}

TEST(UpdateNu, ReliableConcentratedGroupPicksItsValue) {
  const auto cs = mss::parse_claims("s,m,a\ns2,m,b\n", ClaimFormat::Csv);
  Hyperparams h;
  VariationalState s(cs, 2);
  s.tau(0, 0) = 1.0;
  s.tau(1, 0) = 1.0;
  set_all(s.alpha(0, 0), {1.0, 9.0});
  set_all(s.alpha(1, 0), {1.0, 1.0});
  for (std::size_t l = 0; l < 2; ++l) {
    const auto e = mss::dirichlet_expected_log(s.alpha(l, 0));
    std::copy(e.begin(), e.end(), s.elog_pi(l, 0).begin());
  }
  mss::update_nu(s, cs, h);
  EXPECT_GT(s.nu(0)[1], s.nu(0)[0]);
  // Only group 0 breaks symmetry: logit gap = (5 - 1)(E ln pi_1 - E ln pi_0).
  const double gap = 4.0 * (boost::math::digamma(9.0) - boost::math::digamma(1.0));
  EXPECT_NEAR(s.nu(0)[1], sigmoid(gap), 1e-12);
}

TEST(UpdateNu, OpposingGroupsCancel) {
  const auto cs = mss::parse_claims("s,m,a\ns2,m,b\n", ClaimFormat::Csv);
  Hyperparams h;
  VariationalState s(cs, 2);
  s.tau(0, 0) = s.tau(1, 0) = 0.7;
  set_all(s.alpha(0, 0), {1.0, 9.0});
  set_all(s.alpha(1, 0), {9.0, 1.0});
  for (std::size_t l = 0; l < 2; ++l) {
    const auto e = mss::dirichlet_expected_log(s.alpha(l, 0));
    std::copy(e.begin(), e.end(), s.elog_pi(l, 0).begin());
  }
  mss::update_nu(s, cs, h);
  EXPECT_NEAR(s.nu(0)[0], 0.5, 1e-14);
}

// ---------------------------------------------------------------- Step 5

TEST(UpdatePhi, NoClaimsFollowsStickPrior) {
  const mss::ClaimSet cs({"lonely"}, {}, {});
  Hyperparams h;
  VariationalState s(cs, 3);
  s.stick1(0) = 4.0;
  s.stick2(0) = 2.0;
  s.stick1(1) = 1.0;
  s.stick2(1) = 3.0;
  s.stick1(2) = 2.0;
  s.stick2(2) = 5.0;
  mss::update_phi(s, cs, h);
  // E ln lambda_l = E ln rho_l + sum_{i<l} E ln(1 - rho_i).
  auto elog = [](double a, double b) { return boost::math::digamma(a) - boost::math::digamma(a + b); };
  const double w0 = elog(4, 2);
  const double w1 = elog(1, 3) + elog(2, 4);
  const double w2 = elog(2, 5) + elog(2, 4) + elog(3, 1);
  EXPECT_NEAR(s.phi(0, 1) / s.phi(0, 0), std::exp(w1 - w0), 1e-12);
  EXPECT_NEAR(s.phi(0, 2) / s.phi(0, 0), std::exp(w2 - w0), 1e-12);
  const double prefix = elog(2, 4) + elog(3, 1) + elog(5, 2);
  const double tail = boost::math::digamma(1.0) - boost::math::digamma(1.0 + h.kappa) + prefix -
                      std::log(1.0 - std::exp(-1.0 / h.kappa));
  EXPECT_NEAR(s.tail(0) / s.phi(0, 0), std::exp(tail - w0), 1e-12);
  EXPECT_NEAR(s.phi(0, 0) + s.phi(0, 1) + s.phi(0, 2) + s.tail(0), 1.0, 1e-14);
}

TEST(UpdatePhi, TailGeometricDenominator) {
  const mss::ClaimSet cs({"s"}, {}, {});
  Hyperparams h;
  h.kappa = 1.0;
  VariationalState s(cs, 2);
  const auto e = mss::detail::stick_expectations(s, h);
  EXPECT_NEAR(std::exp(-e.tail_log_geometric), 1.0 - std::exp(-1.0), 1e-15);
  EXPECT_NEAR(1.0 - std::exp(-1.0), 0.6321, 1e-4);
}

TEST(UpdatePhi, IdenticalSourcesShareRows) {
  std::string text;
  for (int m = 0; m < 10; ++m) {
    const std::string v = m % 3 == 0 ? "x" : "y";
    text += "twin_a,o" + std::to_string(m) + "," + v + "\n";
    text += "twin_b,o" + std::to_string(m) + "," + v + "\n";
    text += "other,o" + std::to_string(m) + "," + (m % 2 ? "x" : "z") + "\n";
  }
  const auto cs = mss::parse_claims(text, ClaimFormat::Csv);
  Hyperparams h;
  h.truncation = 2;
  mss::FitOptions opts;
  opts.tol = 1e-12;
  opts.max_sweeps = 500;
  const auto fit = mss::fit(cs, h, opts);
  const auto a = *cs.find_source("twin_a");
  const auto b = *cs.find_source("twin_b");
  EXPECT_EQ(mss::argmax_first(fit.state.phi_row(a)), mss::argmax_first(fit.state.phi_row(b)));
  // Both rows are recomputed from the same claims and the same global state.
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(fit.state.phi(a, l), fit.state.phi(b, l));
  EXPECT_EQ(fit.state.tail(a), fit.state.tail(b));
}

// ---------------------------------------------------------------- Step 6

TEST(UpdateSticks, AllMassOnFirstGroup) {
  std::vector<std::string> ids;
  for (int n = 0; n < 10; ++n) ids.push_back("s" + std::to_string(n));
  const mss::ClaimSet cs(ids, {}, {});
  Hyperparams h;
  VariationalState s(cs, 3);
  for (std::size_t n = 0; n < 10; ++n) s.phi(n, 0) = 1.0;
  mss::update_sticks(s, h);
  EXPECT_DOUBLE_EQ(s.stick1(0), 11.0);
  EXPECT_DOUBLE_EQ(s.stick2(0), h.kappa);
}

TEST(UpdateSticks, UniformMembership) {
  const mss::ClaimSet cs({"a", "b", "c", "d"}, {}, {});
  Hyperparams h;
  h.kappa = 2.5;
  VariationalState s(cs, 4);
  for (std::size_t n = 0; n < 4; ++n) {
    for (std::size_t l = 0; l < 4; ++l) s.phi(n, l) = 0.25;
  }
  mss::update_sticks(s, h);
  EXPECT_DOUBLE_EQ(s.stick1(0), 2.0);
  EXPECT_DOUBLE_EQ(s.stick2(0), h.kappa + 3.0);
}

TEST(UpdateSticks, NoSourcesGivesPrior) {
  const mss::ClaimSet cs(std::vector<std::string>{}, {}, {});
  Hyperparams h;
  VariationalState s(cs, 2);
  mss::update_sticks(s, h);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_DOUBLE_EQ(s.stick1(l), 1.0);
    EXPECT_DOUBLE_EQ(s.stick2(l), h.kappa);
  }
}

// ---------------------------------------------------------------- ELBO

TEST(Elbo, ZeroWhenEverythingSitsAtThePrior) {
  const mss::ClaimSet cs(std::vector<std::string>{}, {}, {});
  Hyperparams h;
  VariationalState s(cs, 3);
  for (std::size_t l = 0; l < 3; ++l) {
    s.stick1(l) = 1.0;
    s.stick2(l) = h.kappa;
    s.beta1(l) = h.b1;
    s.beta2(l) = h.b0;
  }
  EXPECT_NEAR(mss::compute_elbo(s, cs, h), 0.0, 1e-14);
}

TEST(EvidenceOracle, SingleClaimHasEvidenceOneOverK) {
  // Uniform truths make every claimed value equally likely a priori.
  for (const char* text : {"s,o,a\n", "s,o,b\n"}) {
    const auto domains = nlohmann::ordered_json::parse(R"({"o": ["a", "b", "c"]})");
    std::istringstream in(text);
    const auto cs = mss::parse_claims(in, ClaimFormat::Csv, &domains);
    Hyperparams h;
    h.theta_unreliable = 3.0;
    EXPECT_NEAR(oracle::exact_log_evidence(cs, h), -std::log(3.0), 1e-12);
  }
}

TEST(EvidenceOracle, SumsToOneOverAllClaimPatterns) {
  // Every source claims every object: the evidence is a distribution over
  // the 2^(N*M) claim patterns.
  Hyperparams h;
  h.theta_unreliable = 4.0;
  double total = 0.0;
  for (int pattern = 0; pattern < 64; ++pattern) {
    total += std::exp(oracle::exact_log_evidence(fixtures::full_binary_pattern(3, 2, pattern), h));
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Elbo, BoundsExactEvidenceOnTinyInstances) {
  for (const auto& h : fixtures::tiny_configs()) {
    for (const auto& cs : fixtures::tiny_claim_sets()) {
      const double exact = oracle::exact_log_evidence(cs, h);
      mss::FitOptions opts;
      opts.tol = 1e-12;
      opts.max_sweeps = 2000;
      const auto fit = mss::fit(cs, h, opts);
      EXPECT_LE(fit.final_elbo(), exact + 1e-9);
      // Loose sanity ceiling on the gap: mean-field factorizes r from t,
      // which costs a few nats on these instances.
      EXPECT_GT(fit.final_elbo(), exact - 8.0);
    }
  }
}

// ---------------------------------------------------------------- fit

TEST(Fit, StepTraceIsMonotone) {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const auto [cs, h] = fixtures::random_problem(seed);
    mss::FitOptions opts;
    opts.trace_steps = true;
    opts.seed = seed;
    const auto fit = mss::fit(cs, h, opts);
    double prev = fit.initial_elbo;
    for (double v : fit.step_trace) {
      ASSERT_GE(v - prev, -1e-8) << "seed " << seed;
      prev = v;
    }
    EXPECT_EQ(fit.step_trace.size(), 6 * fit.iterations);
  }
}

void expect_valid_state(const VariationalState& s) {
  for (std::size_t n = 0; n < s.num_sources(); ++n) {
    const auto row = s.phi_row(n);
    double sum = s.tail(n);
    for (double v : row) {
      ASSERT_GE(v, 0.0);
      sum += v;
    }
    ASSERT_NEAR(sum, 1.0, 1e-9);
  }
  for (std::size_t m = 0; m < s.num_objects(); ++m) {
    const auto nu = s.nu(m);
    ASSERT_NEAR(std::accumulate(nu.begin(), nu.end(), 0.0), 1.0, 1e-9);
    for (std::size_t l = 0; l < s.num_groups(); ++l) {
      ASSERT_GE(s.tau(l, m), 0.0);
      ASSERT_LE(s.tau(l, m), 1.0);
      for (double a : s.alpha(l, m)) ASSERT_GT(a, 0.0);
    }
  }
  for (std::size_t l = 0; l < s.num_groups(); ++l) {
    ASSERT_GT(s.beta1(l), 0.0);
    ASSERT_GT(s.beta2(l), 0.0);
    ASSERT_GT(s.stick1(l), 0.0);
    ASSERT_GT(s.stick2(l), 0.0);
  }
}

TEST(Fit, NormalizationAndPositivityAfterEveryStep) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto [cs, h] = fixtures::random_problem(seed);
    auto s = mss::init_state(cs, h, mss::Rng(seed));
    expect_valid_state(s);
    for (int sweep = 0; sweep < 5; ++sweep) {
      mss::update_alpha(s, cs, h);
      expect_valid_state(s);
      mss::update_beta(s, h);
      expect_valid_state(s);
      mss::update_tau(s, cs, h);
      expect_valid_state(s);
      mss::update_nu(s, cs, h);
      expect_valid_state(s);
      mss::switch_truth_modes(s, cs, h);
      expect_valid_state(s);
      mss::update_phi(s, cs, h);
      expect_valid_state(s);
      mss::update_sticks(s, h);
      expect_valid_state(s);
    }
  }
}

TEST(Fit, ModeSwitchNeverLowersElbo) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto [cs, h] = fixtures::random_problem(seed);
    auto s = mss::init_state(cs, h, mss::Rng(seed));
    for (int sweep = 0; sweep < 4; ++sweep) {
      mss::sweep(s, cs, h, 1, nullptr, true, false);
      const double before = mss::compute_elbo(s, cs, h);
      mss::switch_truth_modes(s, cs, h);
      EXPECT_GE(mss::compute_elbo(s, cs, h), before - 1e-9);
    }
  }
}

TEST(Fit, InfiniteToleranceRunsOneSweep) {
  const auto [cs, h] = fixtures::random_problem(1);
  mss::FitOptions opts;
  opts.tol = INFINITY;
  const auto fit = mss::fit(cs, h, opts);
  EXPECT_EQ(fit.iterations, 1u);
  EXPECT_TRUE(fit.converged);
}

TEST(Fit, KeepsAllTruncatedGroups) {
  const auto [cs, h] = fixtures::random_problem(2);
  const auto fit = mss::fit(cs, h);
  EXPECT_EQ(fit.state.num_groups(), mss::effective_truncation(h, cs.num_sources()));
}

TEST(Fit, UnclaimedObjectStaysUniform) {
  const auto domains = nlohmann::ordered_json::parse(R"({"quiet": ["p", "q", "r"]})");
  std::istringstream in("a,o1,x\nb,o1,x\nc,o1,y\na,o2,u\nb,o2,v\n");
  const auto cs = mss::parse_claims(in, ClaimFormat::Csv, &domains);
  const auto fit = mss::fit(cs, Hyperparams{});
  for (double v : fit.state.nu(*cs.find_object("quiet"))) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(Fit, IndependentOfThreadCount) {
  const auto [cs, h] = fixtures::random_problem(3);
  mss::FitOptions one;
  mss::FitOptions many;
  many.threads = 7;
  const auto a = mss::fit(cs, h, one);
  const auto b = mss::fit(cs, h, many);
  EXPECT_TRUE(a.state == b.state);
  EXPECT_EQ(a.elbo_trace, b.elbo_trace);
}

namespace {

// Fits `cs` and a reordered copy and compares every posterior entry after
// mapping indices through the external IDs. `tol` of zero means bitwise.
void expect_equivariant(bool shuffle_labels, double tol) {
  auto near = [tol](double x, double y) { return tol == 0.0 ? x == y : std::abs(x - y) <= tol * (1.0 + std::abs(x)); };
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto [cs, h] = fixtures::random_problem(seed);
    const auto shuffled = fixtures::shuffled_copy(cs, seed + 100, shuffle_labels);
    const auto a = mss::fit(cs, h);
    const auto b = mss::fit(shuffled, h);
    ASSERT_EQ(a.elbo_trace.size(), b.elbo_trace.size());
    for (std::size_t i = 0; i < a.elbo_trace.size(); ++i) EXPECT_TRUE(near(a.elbo_trace[i], b.elbo_trace[i]));
    for (std::size_t n = 0; n < cs.num_sources(); ++n) {
      const auto nb = *shuffled.find_source(cs.source_id(n));
      for (std::size_t l = 0; l < a.state.num_groups(); ++l) EXPECT_TRUE(near(a.state.phi(n, l), b.state.phi(nb, l)));
      EXPECT_TRUE(near(a.state.tail(n), b.state.tail(nb)));
    }
    for (std::size_t m = 0; m < cs.num_objects(); ++m) {
      const auto mb = *shuffled.find_object(cs.object(m).id());
      for (std::size_t k = 0; k < cs.domain_size(m); ++k) {
        const auto kb = *shuffled.object(mb).find(cs.object(m).label(k));
        EXPECT_TRUE(near(a.state.nu(m)[k], b.state.nu(mb)[kb]));
        for (std::size_t l = 0; l < a.state.num_groups(); ++l) {
          EXPECT_TRUE(near(a.state.alpha(l, m)[k], b.state.alpha(l, mb)[kb]));
        }
      }
      for (std::size_t l = 0; l < a.state.num_groups(); ++l) EXPECT_TRUE(near(a.state.tau(l, m), b.state.tau(l, mb)));
    }
  }
}

}  // namespace

TEST(Fit, SourceAndObjectOrderDoNotMatter) { expect_equivariant(false, 0.0); }

// Reordering labels changes the summation order over each domain, so only
// agreement to rounding is expected.
TEST(Fit, LabelOrderMattersOnlyToRounding) { expect_equivariant(true, 1e-9); }

TEST(Fit, BeatsVotingWithMaliciousBloc) {
  Hyperparams gen;
  gen.eta_reliable = 10.0;
  gen.theta_unreliable = 5.0;
  mss::Rng rng(8);
  const auto ds = mss::sample_planted_dataset(gen, {{20, 15, 15}, {0.0, 1.0, 1.0}},
                                              std::vector<std::size_t>(100, 3), 0.5, rng);
  const auto fit = mss::fit(ds.claims, gen);
  const auto truths = mss::extract_truths(fit.state);
  const auto votes = mss::voting_baseline(ds.claims);
  std::size_t mss_hits = 0, vote_hits = 0;
  for (std::size_t m = 0; m < 100; ++m) {
    mss_hits += truths[m].value == ds.truth.true_values[m];
    vote_hits += votes[m].value == ds.truth.true_values[m];
  }
  EXPECT_GT(mss_hits, vote_hits);
  EXPECT_LT(fit.iterations, 50u);
}

TEST(Fit, RejectsInvalidHyperparams) {
  const auto [cs, h] = fixtures::random_problem(0);
  Hyperparams bad = h;
  bad.kappa = -1.0;
  EXPECT_THROW(mss::fit(cs, bad), std::invalid_argument);
}

}  // namespace
