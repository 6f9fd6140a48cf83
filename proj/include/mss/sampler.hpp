#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "claims.hpp"
#include "priors.hpp"
#include "rng.hpp"

namespace mss {

struct GemWeights {
  std::vector<double> sticks;   // rho_l ~ Beta(1, kappa)
  std::vector<double> weights;  // lambda_l = rho_l * prod_{i<l} (1 - rho_i)
  double remainder = 1.0;       // prod_l (1 - rho_l)
};

/// First `max_groups` stick-breaking weights of GEM(kappa) plus the unbroken
/// remainder of the stick.
inline GemWeights sample_gem_weights(double kappa, std::size_t max_groups, Rng& rng) {
  if (!(kappa > 0.0)) {
    throw std::invalid_argument("kappa must be positive");
  }
  if (max_groups < 1) {
    throw std::invalid_argument("max_groups must be at least 1");
  }
  GemWeights gem;
  gem.sticks.reserve(max_groups);
  gem.weights.reserve(max_groups);
  for (std::size_t l = 0; l < max_groups; ++l) {
    const double rho = rng.beta(1.0, kappa);
    gem.sticks.push_back(rho);
    gem.weights.push_back(rho * gem.remainder);
    gem.remainder *= 1.0 - rho;
  }
  return gem;
}

/// Draws two memberships from one fresh, untruncated GEM(kappa) and reports
/// whether they coincide. Sticks are broken lazily until both have landed.
inline bool sample_pair_coassigned(double kappa, Rng& rng) {
  if (!(kappa > 0.0)) {
    throw std::invalid_argument("kappa must be positive");
  }
  while (true) {
    const double rho = rng.beta(1.0, kappa);
    const bool first = rng.uniform() < rho;
    const bool second = rng.uniform() < rho;
    if (first && second) {
      return true;
    }
    if (first != second) {
      return false;
    }
  }
}

struct SyntheticTruth {
  std::vector<std::size_t> group_of_source;
  std::vector<double> stick_weights;  // explicit weights, then the remainder bucket
  std::vector<double> group_general_reliability;
  std::vector<std::vector<int>> object_specific_reliability;  // [group][object]
  std::vector<std::size_t> true_values;
  std::vector<std::vector<std::vector<double>>> observation_params;  // [group][object][k]
};

struct SyntheticDataset {
  ClaimSet claims;
  SyntheticTruth truth;
};

/// Fixed group layout for planted experiments: `sizes[l]` consecutive
/// sources form group l, whose general reliability is `reliability[l]`.
struct PlantedGroups {
  std::vector<std::size_t> sizes;
  std::vector<double> reliability;
};

namespace detail {

inline void check_synthesis_args(std::size_t num_objects, const std::vector<std::size_t>& domain_sizes,
                                 double density) {
  if (num_objects < 1) {
    throw std::invalid_argument("need at least one object");
  }
  if (domain_sizes.size() != num_objects) {
    throw std::invalid_argument("one domain size per object required");
  }
  for (std::size_t k : domain_sizes) {
    if (k < 2) {
      throw std::invalid_argument("synthetic domains need at least 2 values");
    }
  }
  if (!(density > 0.0 && density <= 1.0)) {
    throw std::invalid_argument("claim density must lie in (0, 1]");
  }
}

// Everything downstream of group memberships and general reliabilities.
inline SyntheticDataset sample_observations(const Hyperparams& h, SyntheticTruth truth,
                                            const std::vector<std::size_t>& domain_sizes,
                                            double density, Rng& rng) {
  const std::size_t num_sources = truth.group_of_source.size();
  const std::size_t num_objects = domain_sizes.size();
  const std::size_t num_groups = truth.group_general_reliability.size();

  std::vector<std::string> source_ids(num_sources);
  for (std::size_t n = 0; n < num_sources; ++n) {
    source_ids[n] = "s" + std::to_string(n);
  }
  std::vector<ObjectDomain> objects;
  objects.reserve(num_objects);
  for (std::size_t m = 0; m < num_objects; ++m) {
    objects.emplace_back("o" + std::to_string(m));
    for (std::size_t k = 0; k < domain_sizes[m]; ++k) {
      objects.back().intern("v" + std::to_string(k));
    }
  }

  truth.true_values.assign(num_objects, 0);
  truth.object_specific_reliability.assign(num_groups, std::vector<int>(num_objects, 0));
  truth.observation_params.assign(num_groups, std::vector<std::vector<double>>(num_objects));
  std::vector<Claim> claims;
  for (std::size_t m = 0; m < num_objects; ++m) {
    Rng obj_rng = rng.derive(std::uint64_t{m});
    const std::size_t k_m = domain_sizes[m];
    const std::size_t t = static_cast<std::size_t>(obj_rng.uniform() * static_cast<double>(k_m));
    truth.true_values[m] = t < k_m ? t : k_m - 1;
    for (std::size_t l = 0; l < num_groups; ++l) {
      const bool reliable = obj_rng.bernoulli(truth.group_general_reliability[l]);
      truth.object_specific_reliability[l][m] = reliable ? 1 : 0;
      const auto counts = dirichlet_prior_counts(h, reliable, truth.true_values[m], k_m);
      truth.observation_params[l][m] = obj_rng.dirichlet(counts);
    }
    for (std::size_t n = 0; n < num_sources; ++n) {
      if (density < 1.0 && !obj_rng.bernoulli(density)) {
        continue;
      }
      const auto& pi = truth.observation_params[truth.group_of_source[n]][m];
      claims.push_back({n, m, obj_rng.categorical(pi)});
    }
  }
  std::sort(claims.begin(), claims.end(), [](const Claim& a, const Claim& b) {
    return a.source != b.source ? a.source < b.source : a.object < b.object;
  });
  return {ClaimSet(std::move(source_ids), std::move(objects), std::move(claims)), std::move(truth)};
}

}  // namespace detail

/// Forward-samples the full generative model: memberships from a stick of
/// `h.truncation` breaks plus a remainder bucket, u_l ~ Beta(b1, b0),
/// r_{l,m} ~ Bern(u_l), uniform truths, group claim distributions from the
/// Dirichlet prior, then each (source, object) claim kept with probability
/// `density`.
inline SyntheticDataset sample_dataset(const Hyperparams& h, std::size_t num_sources,
                                       const std::vector<std::size_t>& domain_sizes, double density,
                                       Rng& rng) {
  if (num_sources < 1) {
    throw std::invalid_argument("need at least one source");
  }
  detail::check_synthesis_args(domain_sizes.size(), domain_sizes, density);

  const Rng base(rng());
  Rng group_rng = base.derive(std::string_view("groups"));
  const GemWeights gem = sample_gem_weights(h.kappa, h.truncation, group_rng);
  SyntheticTruth truth;
  truth.stick_weights = gem.weights;
  truth.stick_weights.push_back(gem.remainder);
  truth.group_of_source.resize(num_sources);
  for (std::size_t n = 0; n < num_sources; ++n) {
    truth.group_of_source[n] = group_rng.categorical(truth.stick_weights);
  }
  truth.group_general_reliability.resize(truth.stick_weights.size());
  for (double& u : truth.group_general_reliability) {
    u = group_rng.beta(h.b1, h.b0);
  }
  Rng obs_rng = base.derive(std::string_view("observations"));
  return detail::sample_observations(h, std::move(truth), domain_sizes, density, obs_rng);
}

/// Like `sample_dataset`, but with memberships and general reliabilities fixed.
inline SyntheticDataset sample_planted_dataset(const Hyperparams& h, const PlantedGroups& groups,
                                               const std::vector<std::size_t>& domain_sizes,
                                               double density, Rng& rng) {
  if (groups.sizes.empty() || groups.sizes.size() != groups.reliability.size()) {
    throw std::invalid_argument("planted groups need one reliability per group");
  }
  detail::check_synthesis_args(domain_sizes.size(), domain_sizes, density);
  SyntheticTruth truth;
  std::size_t total = 0;
  for (std::size_t l = 0; l < groups.sizes.size(); ++l) {
    const double u = groups.reliability[l];
    if (!(u >= 0.0 && u <= 1.0)) {
      throw std::invalid_argument("planted reliability must lie in [0, 1]");
    }
    truth.group_of_source.insert(truth.group_of_source.end(), groups.sizes[l], l);
    total += groups.sizes[l];
  }
  if (total == 0) {
    throw std::invalid_argument("need at least one source");
  }
  for (std::size_t l = 0; l < groups.sizes.size(); ++l) {
    truth.stick_weights.push_back(static_cast<double>(groups.sizes[l]) / static_cast<double>(total));
  }
  truth.group_general_reliability = groups.reliability;
  const Rng base(rng());
  Rng obs_rng = base.derive(std::string_view("observations"));
  return detail::sample_observations(h, std::move(truth), domain_sizes, density, obs_rng);
}

inline nlohmann::json to_json(const SyntheticTruth& truth, const ClaimSet& cs) {
  nlohmann::json j;
  nlohmann::json groups = nlohmann::json::object();
  for (std::size_t n = 0; n < truth.group_of_source.size(); ++n) {
    groups[cs.source_id(n)] = truth.group_of_source[n];
  }
  nlohmann::json values = nlohmann::json::object();
  for (std::size_t m = 0; m < truth.true_values.size(); ++m) {
    values[cs.object(m).id()] = cs.object(m).label(truth.true_values[m]);
  }
  j["group_of_source"] = std::move(groups);
  j["true_values"] = std::move(values);
  j["stick_weights"] = truth.stick_weights;
  j["group_general_reliability"] = truth.group_general_reliability;
  j["object_specific_reliability"] = truth.object_specific_reliability;
  j["observation_params"] = truth.observation_params;
  return j;
}

}  // namespace mss
