#include "cltmle/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "cltmle/csv.hpp"
#include "cltmle/error.hpp"

namespace cltmle {

namespace {

std::string join_issues(const std::vector<std::string>& issues) {
  std::ostringstream out;
  out << "validation failed (" << issues.size() << " issue" << (issues.size() == 1 ? "" : "s")
      << ")";
  const std::size_t shown = std::min<std::size_t>(issues.size(), 20);
  for (std::size_t i = 0; i < shown; ++i) out << "\n  " << issues[i];
  if (shown < issues.size()) out << "\n  ... " << issues.size() - shown << " more";
  return out.str();
}

std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

bool is_missing_token(std::string_view s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "." || s == "null";
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_real(std::string_view s) {
  s = trim(s);
  if (is_missing_token(s)) return std::nullopt;
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error("not a number: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> issues)
    : Error(join_issues(issues)), issues_(std::move(issues)) {}

int LongitudinalRecord::first_censored_visit() const noexcept {
  for (std::size_t t = 0; t < c.size(); ++t) {
    if (c[t] == 1) return static_cast<int>(t) + 1;
  }
  return static_cast<int>(c.size()) + 1;
}

// ---------------------------------------------------------------- Regimen

Regimen::Regimen(std::vector<Indicator> a_bar) : a_bar_(std::move(a_bar)) {
  for (std::size_t t = 0; t < a_bar_.size(); ++t) {
    if (a_bar_[t] != 0 && a_bar_[t] != 1) throw ArgumentError("regimen entries must be 0 or 1");
    if (t > 0 && a_bar_[t - 1] == 0 && a_bar_[t] == 1) {
      throw ArgumentError("regimen " + to_string() + " is not monotone nonincreasing");
    }
  }
}

Regimen Regimen::parse(std::string_view text) {
  std::vector<Indicator> v;
  for (char ch : text) {
    if (ch == '0' || ch == '1') {
      v.push_back(static_cast<Indicator>(ch - '0'));
    } else if (ch != '[' && ch != ']' && ch != ',' && ch != ' ' && ch != '(' && ch != ')') {
      throw ArgumentError("cannot parse regimen '" + std::string(text) + "'");
    }
  }
  if (v.empty()) throw ArgumentError("empty regimen '" + std::string(text) + "'");
  return Regimen(std::move(v));
}

Indicator Regimen::at(int t) const {
  if (t < 1 || t > size()) throw ArgumentError("regimen index out of range");
  return a_bar_[static_cast<std::size_t>(t - 1)];
}

std::string Regimen::to_string() const {
  std::string s = "[";
  for (std::size_t t = 0; t < a_bar_.size(); ++t) {
    if (t) s += ',';
    s += static_cast<char>('0' + a_bar_[t]);
  }
  return s + "]";
}

// ---------------------------------------------------------------- Dataset

Dataset::Dataset(std::vector<LongitudinalRecord> records, int k)
    : records_(std::move(records)), k_(k) {
  std::vector<std::string> issues;
  if (k_ < 2) throw ValidationError({"K must be at least 2 (got " + std::to_string(k_) + ")"});

  const std::size_t n = records_.size();
  const std::size_t p = n ? records_.front().w.size() : 0;
  const auto ku = static_cast<std::size_t>(k_);

  std::unordered_set<std::string> seen;
  seen.reserve(n);
  canonical_ = true;
  for (const auto& r : records_) {
    const std::string who = "subject " + r.subject_id;
    if (!seen.insert(r.subject_id).second) issues.push_back(who + ": duplicate subject id");
    if (r.c.size() != ku || r.l.size() != ku - 1 || r.a.size() != ku - 1) {
      issues.push_back(who + ": vector lengths inconsistent with K=" + std::to_string(k_));
      continue;
    }
    if (r.w.size() != p) {
      issues.push_back(who + ": baseline covariate count differs from first record");
      continue;
    }
    if (std::any_of(r.w.begin(), r.w.end(), [](double v) { return !std::isfinite(v); })) {
      issues.push_back(who + ": missing baseline value");
    }
    bool censored = false;
    for (std::size_t t = 0; t < ku; ++t) {
      if (r.c[t] != 0 && r.c[t] != 1) {
        issues.push_back(who + ": censoring indicator must be 0/1");
        break;
      }
      if (censored && r.c[t] == 0) {
        issues.push_back(who + ": non-monotone censoring");
        break;
      }
      censored = r.c[t] == 1;
    }
    const int first_cens = r.first_censored_visit();
    bool stopped = false;
    for (std::size_t t = 0; t + 1 < ku; ++t) {
      const bool observed = static_cast<int>(t) + 1 < first_cens;
      if (observed) {
        if (r.l[t] != 0 && r.l[t] != 1) issues.push_back(who + ": missing or non-binary L");
        if (r.a[t] != 0 && r.a[t] != 1) issues.push_back(who + ": missing or non-binary A");
        if (stopped && r.a[t] == 1) issues.push_back(who + ": non-monotone treatment");
        stopped = stopped || r.a[t] == 0;
      } else {
        if (r.l[t] != 0) canonical_ = false;
        if (r.a[t] != 0) canonical_ = false;
        if (r.l[t] != 0 && r.l[t] != 1 && r.l[t] != kMissing) {
          issues.push_back(who + ": invalid L value");
        }
      }
    }
    if (first_cens > k_) {
      if (r.y < 0) issues.push_back(who + ": missing outcome for uncensored subject");
    } else if (r.y != 0) {
      canonical_ = false;
    }
  }
  if (!issues.empty()) throw ValidationError(std::move(issues));

  const auto nn = static_cast<Eigen::Index>(n);
  w_.resize(nn, static_cast<Eigen::Index>(p));
  c_.resize(nn, k_);
  l_.resize(nn, k_ - 1);
  a_.resize(nn, k_ - 1);
  y_.resize(nn);
  std::uint64_t h = fnv1a(1469598103934665603ULL, std::to_string(k_) + ":" + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = records_[i];
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < p; ++j) w_(ii, static_cast<Eigen::Index>(j)) = r.w[j];
    for (int t = 0; t < k_; ++t) c_(ii, t) = r.c[static_cast<std::size_t>(t)];
    for (int t = 0; t + 1 < k_; ++t) {
      l_(ii, t) = r.l[static_cast<std::size_t>(t)];
      a_(ii, t) = r.a[static_cast<std::size_t>(t)];
    }
    y_(ii) = r.y < 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(r.y);
    cluster_index_[r.cluster_id].push_back(i);
    h = fnv1a(h, r.subject_id);
    h = fnv1a(h, "\x1f");
  }
  fingerprint_ = h;
  cluster_of_.assign(n, 0);
  int m = 0;
  for (const auto& [id, members] : cluster_index_) {
    for (auto i : members) cluster_of_[i] = m;
    ++m;
  }
}

// ---------------------------------------------------------------- OutcomeScaler

OutcomeScaler::OutcomeScaler(double lo, double hi) : lo_(lo), hi_(hi) {
  if (!(hi_ > lo_)) throw ArgumentError("outcome scaler requires hi > lo");
}

// ---------------------------------------------------------------- CsvSchema

CsvSchema CsvSchema::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open schema file " + path.string());
  CsvSchema s;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto cut = line.find_first_of("#;");
    std::string_view v = trim(std::string_view(line).substr(0, cut));
    if (v.empty()) continue;
    auto eq = v.find('=');
    if (eq == std::string_view::npos) {
      throw SchemaError("schema line " + std::to_string(lineno) + ": expected 'name = column'");
    }
    s.set(std::string(trim(v.substr(0, eq))), std::string(trim(v.substr(eq + 1))));
  }
  return s;
}

void CsvSchema::set(const std::string& canonical, const std::string& column) {
  mapping_[canonical] = column;
}

std::string CsvSchema::column(const std::string& canonical) const {
  auto it = mapping_.find(canonical);
  return it == mapping_.end() ? canonical : it->second;
}

// ---------------------------------------------------------------- loading

namespace {

// Largest j such that "<prefix>.<1..j>" all resolve to file columns.
int count_indexed(const csv::Table& t, const CsvSchema& s, const std::string& prefix) {
  int j = 0;
  while (t.column(s.column(prefix + "." + std::to_string(j + 1))) >= 0) ++j;
  return j;
}

int require_column(const csv::Table& t, const CsvSchema& s, const std::string& canonical) {
  const auto name = s.column(canonical);
  int idx = t.column(name);
  if (idx < 0) {
    throw SchemaError("missing column '" + name + "' (canonical name '" + canonical + "')");
  }
  return idx;
}

struct RawRow {
  std::size_t row_number;  // 1-based file line, header is line 1
  LongitudinalRecord rec;
  bool baseline_missing = false;
};

Indicator parse_indicator(std::string_view s, const std::string& what) {
  auto v = parse_real(s);
  if (!v) return kMissing;
  if (*v == 0.0) return 0;
  if (*v == 1.0) return 1;
  throw Error(what + " must be 0/1, got '" + std::string(s) + "'");
}

int parse_count(std::string_view s) {
  auto v = parse_real(s);
  if (!v) return kMissingOutcome;
  if (*v < 0 || std::floor(*v) != *v) {
    throw Error("outcome must be a nonnegative integer, got '" + std::string(s) + "'");
  }
  return static_cast<int>(*v);
}

std::vector<RawRow> read_wide(const csv::Table& t, const CsvSchema& s, int& k) {
  k = count_indexed(t, s, "c");
  if (k < 2) throw SchemaError("need censoring columns c.1 ... c.K with K >= 2");
  const int p = count_indexed(t, s, "w");
  const int id = require_column(t, s, "id");
  const int cl = require_column(t, s, "cluster");
  std::vector<int> wc, cc, lc, ac;
  for (int j = 1; j <= p; ++j) wc.push_back(require_column(t, s, "w." + std::to_string(j)));
  for (int j = 1; j <= k; ++j) cc.push_back(require_column(t, s, "c." + std::to_string(j)));
  for (int j = 1; j < k; ++j) {
    lc.push_back(require_column(t, s, "l." + std::to_string(j)));
    ac.push_back(require_column(t, s, "a." + std::to_string(j)));
  }
  const int yc = require_column(t, s, "y");

  std::vector<RawRow> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    RawRow raw;
    raw.row_number = r + 2;
    auto& rec = raw.rec;
    rec.subject_id = std::string(trim(row[static_cast<std::size_t>(id)]));
    rec.cluster_id = std::string(trim(row[static_cast<std::size_t>(cl)]));
    try {
      for (int j : wc) {
        auto v = parse_real(row[static_cast<std::size_t>(j)]);
        if (!v) raw.baseline_missing = true;
        rec.w.push_back(v.value_or(std::numeric_limits<double>::quiet_NaN()));
      }
      for (int j : cc) rec.c.push_back(parse_indicator(row[static_cast<std::size_t>(j)], "C"));
      for (int j : lc) rec.l.push_back(parse_indicator(row[static_cast<std::size_t>(j)], "L"));
      for (int j : ac) rec.a.push_back(parse_indicator(row[static_cast<std::size_t>(j)], "A"));
      rec.y = parse_count(row[static_cast<std::size_t>(yc)]);
    } catch (const Error& e) {
      throw ValidationError({"row " + std::to_string(raw.row_number) + " (subject " +
                             rec.subject_id + "): " + e.what()});
    }
    out.push_back(std::move(raw));
  }
  return out;
}

std::vector<RawRow> read_long(const csv::Table& t, const CsvSchema& s, int& k) {
  const int id = require_column(t, s, "id");
  const int cl = require_column(t, s, "cluster");
  const int vc = require_column(t, s, "visit");
  const int cc = require_column(t, s, "c");
  const int lc = require_column(t, s, "l");
  const int ac = require_column(t, s, "a");
  const int yc = require_column(t, s, "y");
  const int p = count_indexed(t, s, "w");
  std::vector<int> wc;
  for (int j = 1; j <= p; ++j) wc.push_back(require_column(t, s, "w." + std::to_string(j)));

  struct Visit {
    std::size_t row_number;
    const std::vector<std::string>* row;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, std::map<int, Visit>> by_subject;
  k = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    std::string sid(trim(row[static_cast<std::size_t>(id)]));
    auto v = parse_real(row[static_cast<std::size_t>(vc)]);
    if (!v || *v < 1 || std::floor(*v) != *v) {
      throw ValidationError({"row " + std::to_string(r + 2) + ": invalid visit number"});
    }
    const int visit = static_cast<int>(*v);
    k = std::max(k, visit);
    auto [it, inserted] = by_subject.try_emplace(sid);
    if (inserted) order.push_back(sid);
    if (!it->second.emplace(visit, Visit{r + 2, &row}).second) {
      throw ValidationError({"row " + std::to_string(r + 2) + " (subject " + sid +
                             "): duplicate visit " + std::to_string(visit)});
    }
  }
  if (k < 2) throw SchemaError("long format needs visits 1..K with K >= 2");

  std::vector<RawRow> out;
  out.reserve(order.size());
  for (const auto& sid : order) {
    const auto& visits = by_subject[sid];
    const Visit& first = visits.begin()->second;
    RawRow raw;
    raw.row_number = first.row_number;
    auto& rec = raw.rec;
    rec.subject_id = sid;
    rec.cluster_id = std::string(trim((*first.row)[static_cast<std::size_t>(cl)]));
    try {
      for (int j : wc) {
        auto v = parse_real((*first.row)[static_cast<std::size_t>(j)]);
        if (!v) raw.baseline_missing = true;
        rec.w.push_back(v.value_or(std::numeric_limits<double>::quiet_NaN()));
      }
      bool censored = false;
      for (int t = 1; t <= k; ++t) {
        auto it = visits.find(t);
        if (it == visits.end()) {
          if (!censored) throw Error("missing visit " + std::to_string(t) + " before censoring");
          rec.c.push_back(1);
          if (t < k) {
            rec.l.push_back(kMissing);
            rec.a.push_back(kMissing);
          }
          continue;
        }
        const auto& row = *it->second.row;
        rec.c.push_back(parse_indicator(row[static_cast<std::size_t>(cc)], "C"));
        censored = censored || rec.c.back() == 1;
        if (t < k) {
          rec.l.push_back(parse_indicator(row[static_cast<std::size_t>(lc)], "L"));
          rec.a.push_back(parse_indicator(row[static_cast<std::size_t>(ac)], "A"));
        } else {
          rec.y = parse_count(row[static_cast<std::size_t>(yc)]);
        }
      }
    } catch (const Error& e) {
      throw ValidationError({"row " + std::to_string(raw.row_number) + " (subject " + sid +
                             "): " + e.what()});
    }
    out.push_back(std::move(raw));
  }
  return out;
}

// Row-level checks reported with file row numbers.
void check_row(const RawRow& raw, std::vector<std::string>& issues) {
  const auto& r = raw.rec;
  const std::string where =
      "row " + std::to_string(raw.row_number) + " (subject " + r.subject_id + "): ";
  if (r.subject_id.empty()) issues.push_back(where + "missing subject id");
  if (r.cluster_id.empty()) issues.push_back(where + "missing cluster id");
  for (std::size_t t = 0; t < r.c.size(); ++t) {
    if (r.c[t] == kMissing) {
      issues.push_back(where + "missing censoring indicator c." + std::to_string(t + 1));
      return;
    }
    if (t > 0 && r.c[t - 1] == 1 && r.c[t] == 0) {
      issues.push_back(where + "non-monotone censoring");
      return;
    }
  }
  const int first_cens = r.first_censored_visit();
  bool stopped = false;
  for (std::size_t t = 0; t < r.a.size(); ++t) {
    if (static_cast<int>(t) + 1 >= first_cens) break;
    if (r.l[t] == kMissing) issues.push_back(where + "missing l." + std::to_string(t + 1));
    if (r.a[t] == kMissing) {
      issues.push_back(where + "missing a." + std::to_string(t + 1));
      continue;
    }
    if (stopped && r.a[t] == 1) issues.push_back(where + "non-monotone treatment");
    stopped = stopped || r.a[t] == 0;
  }
  if (first_cens > r.k() && r.y == kMissingOutcome) {
    issues.push_back(where + "missing outcome for uncensored subject");
  }
}

}  // namespace

LoadResult load_dataset(const std::filesystem::path& path, const CsvSchema& schema,
                        const LoadOptions& options) {
  if (!std::filesystem::exists(path)) throw Error("no such file: " + path.string());
  const auto table = csv::read(path);
  int k = 0;
  auto raw = options.long_format ? read_long(table, schema, k) : read_wide(table, schema, k);

  LoadResult result;
  std::vector<std::string> issues;
  std::vector<LongitudinalRecord> records;
  records.reserve(raw.size());
  for (auto& row : raw) {
    if (row.baseline_missing) {
      if (options.drop_incomplete_baseline) {
        result.dropped_subjects.push_back(row.rec.subject_id);
        continue;
      }
      issues.push_back("row " + std::to_string(row.row_number) + " (subject " +
                       row.rec.subject_id + "): missing baseline value");
      continue;
    }
    check_row(row, issues);
    records.push_back(std::move(row.rec));
  }
  if (!issues.empty()) throw ValidationError(std::move(issues));
  result.dataset = Dataset(std::move(records), k);
  return result;
}

Dataset impute_after_censoring(const Dataset& d) {
  if (d.is_canonical()) return d;
  std::vector<LongitudinalRecord> records = d.records();
  for (auto& r : records) {
    const int first_cens = r.first_censored_visit();
    for (int t = first_cens; t < r.k(); ++t) {
      r.l[static_cast<std::size_t>(t - 1)] = 0;
      r.a[static_cast<std::size_t>(t - 1)] = 0;
    }
    if (first_cens <= r.k()) r.y = 0;
  }
  return Dataset(std::move(records), d.k());
}

bool follows_regimen(const LongitudinalRecord& r, const Regimen& reg, int t) {
  if (t < 1 || t > r.k()) throw ArgumentError("visit index out of range");
  if (reg.size() < t - 1) throw ArgumentError("regimen shorter than visit history");
  if (r.c[static_cast<std::size_t>(t - 1)] != 0) return false;
  for (int s = 1; s < t; ++s) {
    if (r.a[static_cast<std::size_t>(s - 1)] != reg.at(s)) return false;
  }
  return true;
}

bool follows_regimen(const Dataset& d, std::size_t i, const Regimen& reg, int t) {
  if (t < 1 || t > d.k()) throw ArgumentError("visit index out of range");
  if (d.c(i, t) != 0) return false;
  for (int s = 1; s < t; ++s) {
    if (d.a(i, s) != reg.at(s)) return false;
  }
  return true;
}

OutcomeScaler make_scaler(const Dataset& d) {
  double hi = -std::numeric_limits<double>::infinity();
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.c(i, d.k()) != 0) continue;
    hi = std::max(hi, d.y(i));
    lo = std::min(lo, d.y(i));
  }
  if (!std::isfinite(hi)) throw ArgumentError("no uncensored outcome to scale");
  if (hi == lo) throw ArgumentError("degenerate outcome scale: all observed outcomes equal");
  return OutcomeScaler(0.0, hi);
}

void write_dataset_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "id,cluster";
  for (int j = 1; j <= d.baseline_dim(); ++j) out << ",w." << j;
  for (int t = 1; t <= d.k(); ++t) out << ",c." << t;
  for (int t = 1; t < d.k(); ++t) out << ",l." << t;
  for (int t = 1; t < d.k(); ++t) out << ",a." << t;
  out << ",y\n";
  auto ind = [](Indicator v) { return v == kMissing ? std::string("NA") : std::to_string(v); };
  for (const auto& r : d.records()) {
    out << csv::escape(r.subject_id) << ',' << csv::escape(r.cluster_id);
    for (double v : r.w) out << ',' << csv::format_double(v);
    for (auto v : r.c) out << ',' << ind(v);
    for (auto v : r.l) out << ',' << ind(v);
    for (auto v : r.a) out << ',' << ind(v);
    out << ',' << (r.y < 0 ? std::string("NA") : std::to_string(r.y)) << '\n';
  }
  csv::write_atomic(path, out.str());
}

}  // namespace cltmle
