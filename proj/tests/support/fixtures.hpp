#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <mss/claims.hpp>
#include <mss/priors.hpp>
#include <mss/rng.hpp>
#include <mss/sampler.hpp>

namespace fixtures {

// Every source claims every object; bit (n * objects + m) of `pattern` is
// the claimed value. Domains are {"0", "1"}.
inline mss::ClaimSet full_binary_pattern(int sources, int objects, unsigned pattern) {
  mss::ClaimSetBuilder b;
  for (int n = 0; n < sources; ++n) b.add_source("s" + std::to_string(n));
  for (int m = 0; m < objects; ++m) {
    b.add_label("o" + std::to_string(m), "0");
    b.add_label("o" + std::to_string(m), "1");
  }
  for (int n = 0; n < sources; ++n) {
    for (int m = 0; m < objects; ++m) {
      const unsigned bit = (pattern >> (n * objects + m)) & 1u;
      b.add_claim("s" + std::to_string(n), "o" + std::to_string(m), std::to_string(bit));
    }
  }
  return std::move(b).build();
}

// Enumerable instances: N <= 3, M <= 2, K = 2.
inline std::vector<mss::ClaimSet> tiny_claim_sets() {
  std::vector<mss::ClaimSet> out;
  out.push_back(full_binary_pattern(1, 1, 0));
  out.push_back(full_binary_pattern(1, 2, 2));
  for (unsigned p = 0; p < 4; ++p) out.push_back(full_binary_pattern(2, 1, p));
  for (unsigned p = 0; p < 16; ++p) out.push_back(full_binary_pattern(2, 2, p));
  for (unsigned p : {0u, 5u, 18u, 27u, 42u, 63u}) out.push_back(full_binary_pattern(3, 2, p));
  // Sparse instances: not every source claims every object.
  for (const char* text : {"a,x,0\nb,x,1\nc,y,1\n", "a,x,0\na,y,0\nb,y,1\nc,x,0\n", "a,x,1\nb,x,1\nc,x,0\nc,y,1\n"}) {
    mss::ClaimSetBuilder b;
    for (const char* o : {"x", "y"}) {
      b.add_label(o, "0");
      b.add_label(o, "1");
    }
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
      b.add_claim(line.substr(0, 1), line.substr(2, 1), line.substr(4, 1));
    }
    out.push_back(std::move(b).build());
  }
  return out;
}

inline std::vector<mss::Hyperparams> tiny_configs() {
  mss::Hyperparams careless;
  careless.truncation = 2;
  mss::Hyperparams malicious = careless;
  malicious.eta_reliable = 10.0;
  malicious.theta_unreliable = 5.0;
  malicious.kappa = 1.0;
  mss::Hyperparams skewed = careless;
  skewed.b1 = 4.0;
  skewed.b0 = 1.0;
  skewed.eta_reliable = 2.0;
  skewed.eta_unreliable = skewed.theta_unreliable = 2.0;
  skewed.kappa = 10.0;
  return {careless, malicious, skewed};
}

// A sampled claim set of moderate size with a random careless or malicious
// configuration.
inline std::pair<mss::ClaimSet, mss::Hyperparams> random_problem(std::uint64_t seed, std::size_t max_sources = 30,
                                                                 std::size_t max_objects = 40) {
  mss::Rng rng(seed * 7919 + 17);
  mss::Hyperparams h;
  const double grid[] = {1.0, 2.0, 5.0, 10.0};
  h.kappa = grid[rng() % 4];
  h.b1 = 1.0 + static_cast<double>(rng() % 4);
  h.b0 = 1.0 + static_cast<double>(rng() % 4);
  h.theta_reliable = grid[rng() % 2];
  h.eta_reliable = grid[2 + rng() % 2];
  h.eta_unreliable = grid[rng() % 2];
  h.theta_unreliable = rng() % 2 ? h.eta_unreliable : grid[2 + rng() % 2];
  h.truncation = 2 + rng() % 10;
  const std::size_t n = 2 + rng() % (max_sources - 1);
  const std::size_t m = 1 + rng() % max_objects;
  std::vector<std::size_t> domains(m);
  for (auto& k : domains) k = 2 + rng() % 4;
  const double density = 0.2 + 0.8 * rng.uniform();
  auto ds = mss::sample_dataset(h, n, domains, density, rng);
  return {std::move(ds.claims), h};
}

// Same claims with sources, objects, labels and claim order permuted.
// Same claims with sources, objects and claim rows reordered; labels within
// each domain too when `labels` is set.
inline mss::ClaimSet shuffled_copy(const mss::ClaimSet& cs, std::uint64_t seed, bool labels = true) {
  mss::Rng rng(seed);
  auto perm = [&](std::size_t size) {
    std::vector<std::size_t> p(size);
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::shuffle(p.begin(), p.end(), rng);
    return p;
  };
  auto label_order = [&](std::size_t size) {
    if (labels) return perm(size);
    std::vector<std::size_t> p(size);
    std::iota(p.begin(), p.end(), std::size_t{0});
    return p;
  };
  mss::ClaimSetBuilder b;
  for (std::size_t n : perm(cs.num_sources())) b.add_source(cs.source_id(n));
  for (std::size_t m : perm(cs.num_objects())) {
    const auto& obj = cs.object(m);
    b.add_object(obj.id());
    for (std::size_t k : label_order(obj.size())) b.add_label(obj.id(), obj.label(k));
  }
  for (std::size_t i : perm(cs.num_claims())) {
    const auto& c = cs.claim(i);
    b.add_claim(cs.source_id(c.source), cs.object(c.object).id(), cs.object(c.object).label(c.value));
  }
  return std::move(b).build();
}

}  // namespace fixtures
