#pragma once

#include <atomic>
#include <cstddef>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "claims.hpp"
#include "inference.hpp"
#include "priors.hpp"

namespace mss {

struct GridSpec {
  std::vector<double> eta_theta_values{1.0, 2.0, 5.0, 10.0};
  std::vector<double> b_values{1.0, 2.0, 4.0};
  std::vector<double> kappa_values{1.0, 5.0, 10.0};
  std::size_t restarts_per_config = 3;
  bool careless = true;
  bool malicious = true;

  void validate() const {
    auto check = [](const std::vector<double>& v, const char* name) {
      if (v.empty()) {
        throw std::invalid_argument(std::string(name) + " must not be empty");
      }
      for (double x : v) {
        if (!(x > 0.0)) {
          throw std::invalid_argument(std::string(name) + " must be positive");
        }
      }
    };
    check(eta_theta_values, "eta_theta_values");
    check(b_values, "b_values");
    check(kappa_values, "kappa_values");
    if (restarts_per_config < 1) {
      throw std::invalid_argument("restarts_per_config must be at least 1");
    }
    if (!careless && !malicious) {
      throw std::invalid_argument("grid needs at least one unreliable mode");
    }
  }
};

inline GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec g;
  if (j.contains("eta_theta_values")) g.eta_theta_values = j.at("eta_theta_values").get<std::vector<double>>();
  if (j.contains("b_values")) g.b_values = j.at("b_values").get<std::vector<double>>();
  if (j.contains("kappa_values")) g.kappa_values = j.at("kappa_values").get<std::vector<double>>();
  if (j.contains("restarts_per_config")) g.restarts_per_config = j.at("restarts_per_config").get<std::size_t>();
  if (j.contains("careless")) g.careless = j.at("careless").get<bool>();
  if (j.contains("malicious")) g.malicious = j.at("malicious").get<bool>();
  g.validate();
  return g;
}

/// Every admissible configuration: reliable pairs with eta > theta,
/// careless pairs eta == theta and malicious pairs theta > eta, crossed with
/// (b1, b0) and kappa. `base` supplies the truncation.
inline std::vector<Hyperparams> enumerate_grid(const GridSpec& grid, const Hyperparams& base = {}) {
  grid.validate();
  std::vector<std::pair<double, double>> reliable;
  std::vector<std::pair<double, double>> unreliable;
  for (double eta : grid.eta_theta_values) {
    for (double theta : grid.eta_theta_values) {
      if (eta > theta) {
        reliable.emplace_back(eta, theta);
      }
      if ((grid.careless && eta == theta) || (grid.malicious && theta > eta)) {
        unreliable.emplace_back(eta, theta);
      }
    }
  }
  std::vector<Hyperparams> out;
  for (const auto& [eta1, theta1] : reliable) {
    for (const auto& [eta0, theta0] : unreliable) {
      for (double b1 : grid.b_values) {
        for (double b0 : grid.b_values) {
          for (double kappa : grid.kappa_values) {
            Hyperparams h = base;
            h.eta_reliable = eta1;
            h.theta_reliable = theta1;
            h.eta_unreliable = eta0;
            h.theta_unreliable = theta0;
            h.b1 = b1;
            h.b0 = b0;
            h.kappa = kappa;
            out.push_back(h);
          }
        }
      }
    }
  }
  return out;
}

inline auto config_key(const Hyperparams& h) {
  return std::make_tuple(h.kappa, h.b1, h.b0, h.eta_reliable, h.theta_reliable, h.eta_unreliable,
                         h.theta_unreliable, h.truncation);
}

struct LeaderboardEntry {
  Hyperparams hyperparams;
  std::optional<double> elbo;  // best over restarts; empty when every restart failed
  std::size_t best_restart = 0;
  std::size_t iterations = 0;
  bool converged = false;
  std::string error;
};

struct GridResult {
  Hyperparams best;
  FitResult best_fit;
  std::vector<LeaderboardEntry> leaderboard;  // in configuration order
};

struct GridOptions {
  FitOptions fit;          // seed of restart r is fit.seed + r; fit.threads is ignored
  std::size_t threads = 1; // configurations fitted concurrently
};

inline GridResult grid_search(const ClaimSet& cs, const std::vector<Hyperparams>& configs,
                              std::size_t restarts, const GridOptions& opts = {}) {
  if (configs.empty()) {
    throw std::invalid_argument("empty configuration list");
  }
  if (restarts < 1) {
    throw std::invalid_argument("restarts must be at least 1");
  }
  GridResult result;
  result.leaderboard.resize(configs.size());
  std::optional<FitResult> best_fit;
  std::size_t best_index = 0;
  std::mutex best_mutex;
  std::atomic<std::size_t> next{0};

  auto better = [&](double elbo, std::size_t index) {
    if (!best_fit) return true;
    const double incumbent = best_fit->final_elbo();
    if (elbo != incumbent) return elbo > incumbent;
    return config_key(configs[index]) < config_key(configs[best_index]);
  };

  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      LeaderboardEntry& entry = result.leaderboard[i];
      entry.hyperparams = configs[i];
      std::optional<FitResult> local;
      for (std::size_t r = 0; r < restarts; ++r) {
        FitOptions fo = opts.fit;
        fo.seed = opts.fit.seed + r;
        fo.threads = 1;
        try {
          FitResult f = fit(cs, configs[i], fo);
          if (!local || f.final_elbo() > local->final_elbo()) {
            entry.best_restart = r;
            local = std::move(f);
          }
        } catch (const std::exception& e) {
          entry.error = e.what();
        }
      }
      if (!local) {
        continue;
      }
      entry.elbo = local->final_elbo();
      entry.iterations = local->iterations;
      entry.converged = local->converged;
      std::lock_guard lock(best_mutex);
      if (better(*entry.elbo, i)) {
        best_index = i;
        best_fit = std::move(local);
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.threads, configs.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back(worker);
    }
  }
  if (!best_fit) {
    throw std::runtime_error("every configuration failed: " + result.leaderboard.front().error);
  }
  result.best = configs[best_index];
  result.best_fit = std::move(*best_fit);
  return result;
}

inline GridResult grid_search(const ClaimSet& cs, const GridSpec& grid, const Hyperparams& base = {},
                              const GridOptions& opts = {}) {
  return grid_search(cs, enumerate_grid(grid, base), grid.restarts_per_config, opts);
}

inline nlohmann::ordered_json leaderboard_to_json(const GridResult& g) {
  nlohmann::ordered_json j;
  j["best"] = to_json(g.best);
  j["best_elbo"] = g.best_fit.final_elbo();
  auto& rows = j["leaderboard"] = nlohmann::ordered_json::array();
  for (const auto& e : g.leaderboard) {
    nlohmann::ordered_json row;
    row["config"] = to_json(e.hyperparams);
    row["elbo"] = e.elbo ? nlohmann::ordered_json(*e.elbo) : nlohmann::ordered_json(nullptr);
    row["best_restart"] = e.best_restart;
    row["iterations"] = e.iterations;
    row["converged"] = e.converged;
    if (!e.error.empty()) {
      row["error"] = e.error;
    }
    rows.push_back(std::move(row));
  }
  return j;
}

inline void write_leaderboard_table(std::ostream& out, const GridResult& g) {
  out << std::right << std::setw(7) << "kappa" << std::setw(6) << "b1" << std::setw(6) << "b0"
      << std::setw(7) << "eta1" << std::setw(7) << "theta1" << std::setw(7) << "eta0" << std::setw(7)
      << "theta0" << std::setw(20) << "elbo" << std::setw(7) << "iters" << '\n';
  for (const auto& e : g.leaderboard) {
    const Hyperparams& h = e.hyperparams;
    out << std::setw(7) << h.kappa << std::setw(6) << h.b1 << std::setw(6) << h.b0 << std::setw(7)
        << h.eta_reliable << std::setw(7) << h.theta_reliable << std::setw(7) << h.eta_unreliable
        << std::setw(7) << h.theta_unreliable << std::setw(20);
    if (e.elbo) {
      out << std::fixed << std::setprecision(6) << *e.elbo << std::defaultfloat;
    } else {
      out << "failed";
    }
    out << std::setw(7) << e.iterations << '\n';
  }
}

}  // namespace mss
