#pragma once

#include <algorithm>
#include <cstddef>
#include <iterator>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace mss {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ConflictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ClaimFormat { Csv, Json };

/// Categorical domain of one object. Labels are matched byte-exact.
class ObjectDomain {
 public:
  explicit ObjectDomain(std::string id) : id_(std::move(id)) {}

  const std::string& id() const { return id_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }
  const std::string& label(std::size_t k) const { return labels_.at(k); }

  std::optional<std::size_t> find(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) {
      return std::nullopt;
    }
    return it->second;
  }

  // Returns the index of `label`, appending it when new.
  std::size_t intern(const std::string& label) {
    auto [it, inserted] = index_.try_emplace(label, labels_.size());
    if (inserted) {
      labels_.push_back(label);
    }
    return it->second;
  }

 private:
  std::string id_;
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Claim {
  std::size_t source;
  std::size_t object;
  std::size_t value;

  friend bool operator==(const Claim&, const Claim&) = default;
};

/// Sparse source x object claim matrix with row and column indexes.
///
/// Row n lists the claims made by source n and column m the claims on
/// object m, both as positions into `claims()` in claim-list order.
/// Immutable after construction.
class ClaimSet {
 public:
  ClaimSet() = default;

  ClaimSet(std::vector<std::string> source_ids, std::vector<ObjectDomain> objects,
           std::vector<Claim> claims)
      : source_ids_(std::move(source_ids)),
        objects_(std::move(objects)),
        claims_(std::move(claims)),
        rows_(source_ids_.size()),
        cols_(objects_.size()) {
    for (std::size_t m = 0; m < objects_.size(); ++m) {
      if (objects_[m].size() == 0) {
        throw std::invalid_argument("object '" + objects_[m].id() + "' has an empty domain");
      }
    }
    for (std::size_t i = 0; i < claims_.size(); ++i) {
      const Claim& c = claims_[i];
      if (c.source >= source_ids_.size() || c.object >= objects_.size()) {
        throw std::invalid_argument("claim references an unknown source or object");
      }
      if (c.value >= objects_[c.object].size()) {
        throw std::invalid_argument("claim value outside the domain of object '" +
                                    objects_[c.object].id() + "'");
      }
      rows_[c.source].push_back(i);
      cols_[c.object].push_back(i);
    }
    for (std::size_t n = 0; n < rows_.size(); ++n) {
      std::vector<std::size_t> objs;
      objs.reserve(rows_[n].size());
      for (std::size_t i : rows_[n]) {
        objs.push_back(claims_[i].object);
      }
      std::sort(objs.begin(), objs.end());
      auto dup = std::adjacent_find(objs.begin(), objs.end());
      if (dup != objs.end()) {
        throw ConflictError("duplicate claim by source '" + source_ids_[n] + "' on object '" +
                            objects_[*dup].id() + "'");
      }
    }
  }

  std::size_t num_sources() const { return source_ids_.size(); }
  std::size_t num_objects() const { return objects_.size(); }
  std::size_t num_claims() const { return claims_.size(); }

  const std::vector<Claim>& claims() const { return claims_; }
  const Claim& claim(std::size_t i) const { return claims_[i]; }
  const std::string& source_id(std::size_t n) const { return source_ids_.at(n); }
  const std::vector<std::string>& source_ids() const { return source_ids_; }
  const ObjectDomain& object(std::size_t m) const { return objects_.at(m); }
  const std::vector<ObjectDomain>& objects() const { return objects_; }
  std::size_t domain_size(std::size_t m) const { return objects_.at(m).size(); }

  std::span<const std::size_t> row(std::size_t n) const { return rows_.at(n); }
  std::span<const std::size_t> column(std::size_t m) const { return cols_.at(m); }

  /// Sources with a claim on object m, ascending.
  std::vector<std::size_t> column_sources(std::size_t m) const {
    if (m >= objects_.size()) {
      throw std::out_of_range("object index " + std::to_string(m) + " out of range");
    }
    std::vector<std::size_t> out;
    out.reserve(cols_[m].size());
    for (std::size_t i : cols_[m]) {
      out.push_back(claims_[i].source);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Objects claimed by source n, ascending.
  std::vector<std::size_t> row_objects(std::size_t n) const {
    if (n >= source_ids_.size()) {
      throw std::out_of_range("source index " + std::to_string(n) + " out of range");
    }
    std::vector<std::size_t> out;
    for (std::size_t i : rows_[n]) {
      out.push_back(claims_[i].object);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::optional<std::size_t> find_source(const std::string& id) const {
    for (std::size_t n = 0; n < source_ids_.size(); ++n) {
      if (source_ids_[n] == id) {
        return n;
      }
    }
    return std::nullopt;
  }

  std::optional<std::size_t> find_object(const std::string& id) const {
    for (std::size_t m = 0; m < objects_.size(); ++m) {
      if (objects_[m].id() == id) {
        return m;
      }
    }
    return std::nullopt;
  }

 private:
  std::vector<std::string> source_ids_;
  std::vector<ObjectDomain> objects_;
  std::vector<Claim> claims_;
  std::vector<std::vector<std::size_t>> rows_;
  std::vector<std::vector<std::size_t>> cols_;
};

/// Same entities and claims, same external IDs and labels.
inline bool equivalent(const ClaimSet& a, const ClaimSet& b) {
  if (a.source_ids() != b.source_ids() || a.num_objects() != b.num_objects() ||
      a.claims() != b.claims()) {
    return false;
  }
  for (std::size_t m = 0; m < a.num_objects(); ++m) {
    if (a.object(m).id() != b.object(m).id() || a.object(m).labels() != b.object(m).labels()) {
      return false;
    }
  }
  return true;
}

/// Incrementally maps string IDs to dense indices in first-appearance order.
class ClaimSetBuilder {
 public:
  std::size_t add_source(const std::string& id) {
    auto [it, inserted] = source_index_.try_emplace(id, sources_.size());
    if (inserted) {
      sources_.push_back(id);
    }
    return it->second;
  }

  std::size_t add_object(const std::string& id) {
    auto [it, inserted] = object_index_.try_emplace(id, objects_.size());
    if (inserted) {
      objects_.emplace_back(id);
    }
    return it->second;
  }

  void add_label(const std::string& object, const std::string& label) {
    objects_[add_object(object)].intern(label);
  }

  // Throws ConflictError on a repeated (source, object) pair.
  void add_claim(const std::string& source, const std::string& object, const std::string& label) {
    const std::size_t n = add_source(source);
    const std::size_t m = add_object(object);
    if (!seen_.emplace(std::make_pair(n, m), true).second) {
      throw ConflictError("duplicate claim by source '" + source + "' on object '" + object + "'");
    }
    claims_.push_back({n, m, objects_[m].intern(label)});
  }

  std::size_t num_claims() const { return claims_.size(); }

  ClaimSet build() && { return ClaimSet(std::move(sources_), std::move(objects_), std::move(claims_)); }

 private:
  std::vector<std::string> sources_;
  std::vector<ObjectDomain> objects_;
  std::vector<Claim> claims_;
  std::unordered_map<std::string, std::size_t> source_index_;
  std::unordered_map<std::string, std::size_t> object_index_;
  std::map<std::pair<std::size_t, std::size_t>, bool> seen_;
};

namespace detail {

struct CsvRecord {
  std::size_t line;
  std::vector<std::string> fields;
};

// RFC 4180 reader. Lines starting with '#' outside quotes are skipped,
// as are blank lines.
inline std::vector<CsvRecord> read_csv(std::istream& in) {
  std::vector<CsvRecord> records;
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t line = 1;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const std::size_t start_line = line;
    if (text[i] == '#') {
      while (i < n && text[i] != '\n') {
        ++i;
      }
      ++i;
      ++line;
      continue;
    }
    if (text[i] == '\n' || (text[i] == '\r' && i + 1 < n && text[i + 1] == '\n')) {
      i += text[i] == '\r' ? 2 : 1;
      ++line;
      continue;
    }
    CsvRecord rec{start_line, {}};
    std::string field;
    bool done = false;
    while (!done) {
      field.clear();
      if (i < n && text[i] == '"') {
        ++i;
        while (true) {
          if (i >= n) {
            throw ParseError(start_line, "unterminated quoted field");
          }
          if (text[i] == '"') {
            if (i + 1 < n && text[i + 1] == '"') {
              field.push_back('"');
              i += 2;
              continue;
            }
            ++i;
            break;
          }
          if (text[i] == '\n') {
            ++line;
          }
          field.push_back(text[i++]);
        }
        if (i < n && text[i] != ',' && text[i] != '\n' && text[i] != '\r') {
          throw ParseError(start_line, "unexpected character after closing quote");
        }
      } else {
        while (i < n && text[i] != ',' && text[i] != '\n' && text[i] != '\r') {
          if (text[i] == '"') {
            throw ParseError(start_line, "quote inside unquoted field");
          }
          field.push_back(text[i++]);
        }
      }
      rec.fields.push_back(field);
      if (i < n && text[i] == ',') {
        ++i;
        continue;
      }
      if (i < n && text[i] == '\r') {
        ++i;
      }
      if (i < n && text[i] == '\n') {
        ++i;
        ++line;
      }
      done = true;
    }
    records.push_back(std::move(rec));
  }
  return records;
}

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n#") == std::string::npos) {
    return field;
  }
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') {
      out.push_back('"');
    }
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline bool is_claim_header(const std::vector<std::string>& f) {
  return f.size() == 3 && f[0] == "source_id" && f[1] == "object_id" && f[2] == "value_label";
}

inline void apply_domains(ClaimSetBuilder& builder, const nlohmann::ordered_json& domains) {
  if (!domains.is_object()) {
    throw ParseError(1, "domain file must be a JSON object of object_id -> [labels]");
  }
  for (const auto& [object, labels] : domains.items()) {
    if (!labels.is_array()) {
      throw ParseError(1, "domain of '" + object + "' is not an array");
    }
    builder.add_object(object);
    for (const auto& label : labels) {
      if (!label.is_string()) {
        throw ParseError(1, "domain of '" + object + "' has a non-string label");
      }
      builder.add_label(object, label.get<std::string>());
    }
  }
}

}  // namespace detail

/// Parses claims from CSV (`source_id,object_id,value_label`, header row
/// optional) or JSON (array of {"source","object","value"}). When a domain
/// map is given its objects and labels are registered first.
inline ClaimSet parse_claims(std::istream& in, ClaimFormat format,
                             const nlohmann::ordered_json* domains = nullptr) {
  ClaimSetBuilder builder;
  if (domains != nullptr) {
    detail::apply_domains(builder, *domains);
  }
  if (format == ClaimFormat::Csv) {
    auto records = detail::read_csv(in);
    std::size_t first = 0;
    if (!records.empty() && detail::is_claim_header(records.front().fields)) {
      first = 1;
    }
    for (std::size_t r = first; r < records.size(); ++r) {
      const auto& rec = records[r];
      if (rec.fields.size() != 3) {
        throw ParseError(rec.line, "expected 3 fields, found " + std::to_string(rec.fields.size()));
      }
      if (rec.fields[0].empty() || rec.fields[1].empty()) {
        throw ParseError(rec.line, "empty source or object id");
      }
      try {
        builder.add_claim(rec.fields[0], rec.fields[1], rec.fields[2]);
      } catch (const ConflictError& e) {
        throw ConflictError("line " + std::to_string(rec.line) + ": " + e.what());
      }
    }
  } else {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(1, std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_array()) {
      throw ParseError(1, "claims JSON must be an array");
    }
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const auto& row = doc[i];
      auto field = [&](const char* key) -> std::string {
        if (!row.is_object() || !row.contains(key) || !row[key].is_string()) {
          throw ParseError(i + 1, std::string("entry missing string field '") + key + "'");
        }
        return row[key].get<std::string>();
      };
      builder.add_claim(field("source"), field("object"), field("value"));
    }
  }
  if (builder.num_claims() == 0) {
    throw ParseError(1, "no claims in input");
  }
  return std::move(builder).build();
}

inline ClaimSet parse_claims(const std::string& text, ClaimFormat format) {
  std::istringstream in(text);
  return parse_claims(in, format);
}

inline void write_claims_csv(std::ostream& out, const ClaimSet& cs) {
  out << "source_id,object_id,value_label\n";
  for (const Claim& c : cs.claims()) {
    const ObjectDomain& obj = cs.object(c.object);
    out << detail::csv_escape(cs.source_id(c.source)) << ',' << detail::csv_escape(obj.id()) << ','
        << detail::csv_escape(obj.label(c.value)) << '\n';
  }
}

inline nlohmann::json claims_to_json(const ClaimSet& cs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Claim& c : cs.claims()) {
    const ObjectDomain& obj = cs.object(c.object);
    arr.push_back({{"source", cs.source_id(c.source)}, {"object", obj.id()}, {"value", obj.label(c.value)}});
  }
  return arr;
}

}  // namespace mss
