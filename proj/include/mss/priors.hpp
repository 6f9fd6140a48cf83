#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace mss {

enum class UnreliableMode { Careless, Malicious };

/// Hyperparameters of the multi-source sensing model.
///
/// `kappa` is the stick-breaking concentration, `b1`/`b0` the Beta soft
/// counts on group reliability, and each regime r in {reliable, unreliable}
/// draws a group's claim distribution from a Dirichlet with `eta` on the
/// true value and `theta` on every false value.
struct Hyperparams {
  double kappa = 5.0;
  double b1 = 2.0;
  double b0 = 2.0;
  double eta_reliable = 5.0;
  double theta_reliable = 1.0;
  double eta_unreliable = 1.0;
  double theta_unreliable = 1.0;
  std::size_t truncation = 20;

  double eta(bool reliable) const { return reliable ? eta_reliable : eta_unreliable; }
  double theta(bool reliable) const { return reliable ? theta_reliable : theta_unreliable; }

  UnreliableMode unreliable_mode() const {
    return theta_unreliable > eta_unreliable ? UnreliableMode::Malicious : UnreliableMode::Careless;
  }

  // Prior probability that a group is reliable on an object, E[u] = b1 / (b1 + b0).
  double prior_reliability() const { return b1 / (b1 + b0); }

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0)) {
        throw std::invalid_argument(std::string(name) + " must be positive");
      }
    };
    positive(kappa, "kappa");
    positive(b1, "b1");
    positive(b0, "b0");
    positive(eta_reliable, "eta_reliable");
    positive(theta_reliable, "theta_reliable");
    positive(eta_unreliable, "eta_unreliable");
    positive(theta_unreliable, "theta_unreliable");
    if (truncation < 2) {
      throw std::invalid_argument("truncation must be at least 2");
    }
    if (!(eta_reliable > theta_reliable)) {
      throw std::invalid_argument("reliable regime requires eta_reliable > theta_reliable");
    }
    if (eta_unreliable > theta_unreliable) {
      throw std::invalid_argument(
          "unreliable regime must be careless (eta == theta) or malicious (theta > eta)");
    }
  }

  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

/// Truncation actually used for N sources: at most N groups, never fewer than 2.
inline std::size_t effective_truncation(const Hyperparams& h, std::size_t num_sources) {
  const std::size_t cap = num_sources < 2 ? 2 : num_sources;
  return h.truncation < cap ? h.truncation : cap;
}

/// Dirichlet soft counts for a group with reliability bit `reliable` on an
/// object whose true value is `truth`: eta at `truth`, theta elsewhere.
inline std::vector<double> dirichlet_prior_counts(const Hyperparams& h, bool reliable,
                                                  std::size_t truth, std::size_t domain_size) {
  if (truth >= domain_size) {
    throw std::out_of_range("true value index outside the domain");
  }
  std::vector<double> counts(domain_size, h.theta(reliable));
  counts[truth] = h.eta(reliable);
  return counts;
}

/// Prior probability that two sources share a group under GEM(kappa).
inline double pair_coassignment_probability(double kappa) {
  if (!(kappa > 0.0)) {
    throw std::invalid_argument("kappa must be positive");
  }
  return 1.0 / (1.0 + kappa);
}

inline nlohmann::json to_json(const Hyperparams& h) {
  return {{"kappa", h.kappa},
          {"b1", h.b1},
          {"b0", h.b0},
          {"eta_reliable", h.eta_reliable},
          {"theta_reliable", h.theta_reliable},
          {"eta_unreliable", h.eta_unreliable},
          {"theta_unreliable", h.theta_unreliable},
          {"truncation", h.truncation},
          {"unreliable_mode", h.unreliable_mode() == UnreliableMode::Malicious ? "malicious" : "careless"}};
}

/// Overlays keys present in `j` onto `base`; unknown keys are rejected.
inline Hyperparams hyperparams_from_json(const nlohmann::json& j, Hyperparams base = {}) {
  if (!j.is_object()) {
    throw std::invalid_argument("hyperparameter config must be a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "kappa") {
      base.kappa = value.get<double>();
    } else if (key == "b1") {
      base.b1 = value.get<double>();
    } else if (key == "b0") {
      base.b0 = value.get<double>();
    } else if (key == "eta_reliable") {
      base.eta_reliable = value.get<double>();
    } else if (key == "theta_reliable") {
      base.theta_reliable = value.get<double>();
    } else if (key == "eta_unreliable") {
      base.eta_unreliable = value.get<double>();
    } else if (key == "theta_unreliable") {
      base.theta_unreliable = value.get<double>();
    } else if (key == "truncation") {
      base.truncation = value.get<std::size_t>();
    } else if (key != "unreliable_mode") {
      throw std::invalid_argument("unknown hyperparameter '" + key + "'");
    }
  }
  return base;
}

}  // namespace mss
