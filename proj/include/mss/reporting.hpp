#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "claims.hpp"
#include "inference.hpp"
#include "priors.hpp"

namespace mss {

/// Reliability(S_n) = sum_l q(g_n = l) E[u_l]; tail mass scores at the prior mean.
inline std::vector<double> source_reliability(const VariationalState& s, const Hyperparams& h) {
  std::vector<double> expected(s.num_groups());
  for (std::size_t l = 0; l < s.num_groups(); ++l) {
    expected[l] = s.beta1(l) / (s.beta1(l) + s.beta2(l));
  }
  std::vector<double> scores(s.num_sources());
  for (std::size_t n = 0; n < s.num_sources(); ++n) {
    double acc = 0.0;
    for (std::size_t l = 0; l < s.num_groups(); ++l) {
      acc += s.phi(n, l) * expected[l];
    }
    scores[n] = acc + s.tail(n) * h.prior_reliability();
  }
  return scores;
}

// Index of the largest entry, smallest index on ties.
inline std::size_t argmax_first(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (v[k] > v[best]) {
      best = k;
    }
  }
  return best;
}

/// 1-based ranks by descending score; ties go to the smaller index.
inline std::vector<std::size_t> rank_descending(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> rank(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    rank[order[i]] = i + 1;
  }
  return rank;
}

inline std::vector<std::size_t> map_groups(const VariationalState& s) {
  std::vector<std::size_t> out(s.num_sources());
  for (std::size_t n = 0; n < s.num_sources(); ++n) {
    out[n] = argmax_first(s.phi_row(n));
  }
  return out;
}

struct TruthEstimate {
  std::size_t value = 0;
  double confidence = 0.0;
};

inline std::vector<TruthEstimate> extract_truths(const VariationalState& s) {
  std::vector<TruthEstimate> out(s.num_objects());
  for (std::size_t m = 0; m < s.num_objects(); ++m) {
    const auto nu = s.nu(m);
    const std::size_t k = argmax_first(nu);
    out[m] = {k, nu[k]};
  }
  return out;
}

struct VoteResult {
  std::size_t value = 0;
  std::size_t votes = 0;
  bool claimed = false;
};

/// Plurality vote per object; ties go to the smaller value index.
inline std::vector<VoteResult> voting_baseline(const ClaimSet& cs) {
  std::vector<VoteResult> out(cs.num_objects());
  for (std::size_t m = 0; m < cs.num_objects(); ++m) {
    std::vector<std::size_t> counts(cs.domain_size(m), 0);
    for (std::size_t i : cs.column(m)) {
      ++counts[cs.claim(i).value];
    }
    const auto best = std::max_element(counts.begin(), counts.end());
    out[m] = {static_cast<std::size_t>(best - counts.begin()), *best, !cs.column(m).empty()};
  }
  return out;
}

struct LabelScores {
  double precision = 0.0;
  double recall = 0.0;
};

struct Evaluation {
  std::size_t covered = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  std::map<std::string, LabelScores> per_label;
  std::optional<LabelScores> positive;
};

/// Scores predictions (object_id -> label) on the objects of `truth`.
/// Objects without a prediction count as wrong. Precision and recall with an
/// empty denominator are reported as 0.
inline Evaluation evaluate(const std::map<std::string, std::string>& predictions,
                           const std::map<std::string, std::string>& truth,
                           const std::optional<std::string>& positive_label = std::nullopt) {
  if (truth.empty()) {
    throw std::invalid_argument("ground truth is empty");
  }
  Evaluation e;
  std::map<std::string, std::size_t> tp;
  std::map<std::string, std::size_t> predicted;
  std::map<std::string, std::size_t> actual;
  for (const auto& [object, label] : truth) {
    ++e.covered;
    ++actual[label];
    tp.try_emplace(label, 0);
    predicted.try_emplace(label, 0);
    auto it = predictions.find(object);
    if (it == predictions.end()) {
      continue;
    }
    ++predicted[it->second];
    tp.try_emplace(it->second, 0);
    actual.try_emplace(it->second, 0);
    if (it->second == label) {
      ++e.correct;
      ++tp[label];
    }
  }
  e.accuracy = static_cast<double>(e.correct) / static_cast<double>(e.covered);
  auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  for (const auto& [label, hits] : tp) {
    e.per_label[label] = {ratio(hits, predicted[label]), ratio(hits, actual[label])};
  }
  if (positive_label) {
    auto it = e.per_label.find(*positive_label);
    e.positive = it == e.per_label.end() ? LabelScores{} : it->second;
  }
  return e;
}

/// Reads `object_id,value_label[,...]` rows into a map. A header row whose
/// first field is "object_id" is skipped, as are '#' comment lines.
inline std::map<std::string, std::string> read_label_map(std::istream& in) {
  std::map<std::string, std::string> out;
  const auto records = detail::read_csv(in);
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (r == 0 && !rec.fields.empty() && rec.fields[0] == "object_id") {
      continue;
    }
    if (rec.fields.size() < 2 || rec.fields[0].empty()) {
      throw ParseError(rec.line, "expected object_id,value_label");
    }
    if (!out.emplace(rec.fields[0], rec.fields[1]).second) {
      throw ParseError(rec.line, "object '" + rec.fields[0] + "' listed twice");
    }
  }
  return out;
}

/// Precision and recall from confusion counts.
inline LabelScores precision_recall(std::size_t true_pos, std::size_t false_pos, std::size_t false_neg) {
  const auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  return {ratio(true_pos, true_pos + false_pos), ratio(true_pos, true_pos + false_neg)};
}

/// Macro-average of accuracy and positive-label precision/recall over runs.
inline Evaluation macro_average(const std::vector<Evaluation>& runs) {
  if (runs.empty()) {
    throw std::invalid_argument("nothing to average");
  }
  Evaluation avg;
  LabelScores pos;
  std::size_t with_positive = 0;
  for (const auto& r : runs) {
    avg.covered += r.covered;
    avg.correct += r.correct;
    avg.accuracy += r.accuracy;
    if (r.positive) {
      pos.precision += r.positive->precision;
      pos.recall += r.positive->recall;
      ++with_positive;
    }
  }
  avg.accuracy /= static_cast<double>(runs.size());
  if (with_positive > 0) {
    pos.precision /= static_cast<double>(with_positive);
    pos.recall /= static_cast<double>(with_positive);
    avg.positive = pos;
  }
  return avg;
}

/// Fraction of each source's claims that match `true_values`; sources
/// without claims get 0.
inline std::vector<double> source_accuracy(const ClaimSet& cs, const std::vector<std::size_t>& true_values) {
  std::vector<double> out(cs.num_sources(), 0.0);
  for (std::size_t n = 0; n < cs.num_sources(); ++n) {
    std::size_t hits = 0;
    for (std::size_t i : cs.row(n)) {
      const Claim& c = cs.claim(i);
      hits += c.value == true_values.at(c.object) ? 1 : 0;
    }
    if (!cs.row(n).empty()) {
      out[n] = static_cast<double>(hits) / static_cast<double>(cs.row(n).size());
    }
  }
  return out;
}

// Ranks with ties averaged, 1-based.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
      ++j;
    }
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      ranks[order[k]] = r;
    }
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation (Pearson correlation of tie-averaged ranks).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman needs two equal-length samples of size >= 2");
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - mean) * (rb[i] - mean);
    saa += (ra[i] - mean) * (ra[i] - mean);
    sbb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (saa == 0.0 || sbb == 0.0) {
    return 0.0;
  }
  return sab / std::sqrt(saa * sbb);
}

struct SourceSummary {
  std::string id;
  double score = 0.0;
  std::size_t rank = 0;
  std::size_t map_group = 0;
};

struct ObjectSummary {
  std::string id;
  std::size_t value = 0;
  double confidence = 0.0;
  std::vector<double> posterior;
};

struct GroupSummary {
  std::size_t index = 0;
  double expected_reliability = 0.0;
  double effective_size = 0.0;
  std::vector<std::size_t> members;
};

struct InferenceReport {
  Hyperparams hyperparams;
  double elbo = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<ObjectSummary> objects;
  std::vector<SourceSummary> sources;
  std::vector<GroupSummary> groups;  // groups with at least one MAP member
};

inline InferenceReport make_report(const FitResult& fit, const ClaimSet& cs, const Hyperparams& h) {
  const VariationalState& s = fit.state;
  InferenceReport r;
  r.hyperparams = h;
  r.elbo = fit.final_elbo();
  r.iterations = fit.iterations;
  r.converged = fit.converged;

  const auto truths = extract_truths(s);
  for (std::size_t m = 0; m < cs.num_objects(); ++m) {
    const auto nu = s.nu(m);
    r.objects.push_back({cs.object(m).id(), truths[m].value, truths[m].confidence, {nu.begin(), nu.end()}});
  }
  const auto scores = source_reliability(s, h);
  const auto ranks = rank_descending(scores);
  const auto groups = map_groups(s);
  for (std::size_t n = 0; n < cs.num_sources(); ++n) {
    r.sources.push_back({cs.source_id(n), scores[n], ranks[n], groups[n]});
  }
  for (std::size_t l = 0; l < s.num_groups(); ++l) {
    GroupSummary g;
    g.index = l;
    g.expected_reliability = s.beta1(l) / (s.beta1(l) + s.beta2(l));
    for (std::size_t n = 0; n < s.num_sources(); ++n) {
      g.effective_size += s.phi(n, l);
      if (groups[n] == l) {
        g.members.push_back(n);
      }
    }
    if (!g.members.empty()) {
      r.groups.push_back(std::move(g));
    }
  }
  return r;
}

inline nlohmann::ordered_json to_json(const InferenceReport& r, const ClaimSet& cs) {
  nlohmann::ordered_json j;
  j["config"] = to_json(r.hyperparams);
  j["elbo"] = r.elbo;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  auto& objects = j["objects"] = nlohmann::ordered_json::array();
  for (std::size_t m = 0; m < r.objects.size(); ++m) {
    const auto& o = r.objects[m];
    nlohmann::ordered_json posterior = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < o.posterior.size(); ++k) {
      posterior[cs.object(m).label(k)] = o.posterior[k];
    }
    objects.push_back({{"object", o.id},
                       {"value", cs.object(m).label(o.value)},
                       {"confidence", o.confidence},
                       {"posterior", std::move(posterior)}});
  }
  auto& sources = j["sources"] = nlohmann::ordered_json::array();
  for (const auto& s : r.sources) {
    sources.push_back({{"source", s.id}, {"score", s.score}, {"rank", s.rank}, {"map_group", s.map_group}});
  }
  auto& groups = j["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : r.groups) {
    std::vector<std::string> members;
    for (std::size_t n : g.members) {
      members.push_back(cs.source_id(n));
    }
    groups.push_back({{"group", g.index},
                      {"expected_reliability", g.expected_reliability},
                      {"effective_size", g.effective_size},
                      {"members", members}});
  }
  return j;
}

inline std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

inline void write_truths_csv(std::ostream& out, const InferenceReport& r, const ClaimSet& cs) {
  out << "object_id,value_label,confidence\n";
  for (std::size_t m = 0; m < r.objects.size(); ++m) {
    const auto& o = r.objects[m];
    out << detail::csv_escape(o.id) << ',' << detail::csv_escape(cs.object(m).label(o.value)) << ','
        << format_double(o.confidence) << '\n';
  }
}

inline void write_reliability_csv(std::ostream& out, const InferenceReport& r) {
  out << "source_id,score,rank,map_group\n";
  for (const auto& s : r.sources) {
    out << detail::csv_escape(s.id) << ',' << format_double(s.score) << ',' << s.rank << ','
        << s.map_group << '\n';
  }
}

/// Top-k and bottom-k sources by reliability, side by side.
inline void write_ranking_table(std::ostream& out, const InferenceReport& r, std::size_t k = 10) {
  std::vector<const SourceSummary*> order;
  for (const auto& s : r.sources) {
    order.push_back(&s);
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->rank < b->rank; });
  k = std::min(k, order.size());
  std::size_t width = 6;
  for (const auto* s : order) {
    width = std::max(width, s->id.size());
  }
  out << std::left << std::setw(static_cast<int>(width)) << "top" << "  " << std::setw(8) << "score"
      << " | " << std::setw(static_cast<int>(width)) << "bottom" << "  " << "score" << '\n';
  for (std::size_t i = 0; i < k; ++i) {
    const auto* top = order[i];
    const auto* bottom = order[order.size() - 1 - i];
    out << std::left << std::setw(static_cast<int>(width)) << top->id << "  " << std::fixed
        << std::setprecision(4) << std::setw(8) << top->score << " | " << std::setw(static_cast<int>(width))
        << bottom->id << "  " << bottom->score << '\n';
  }
  out.unsetf(std::ios::fixed);
}

}  // namespace mss
