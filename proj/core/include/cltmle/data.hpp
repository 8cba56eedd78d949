#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace cltmle {

// Binary indicators are stored as int8; kMissing marks an unobserved value.
using Indicator = std::int8_t;
inline constexpr Indicator kMissing = -1;
inline constexpr int kMissingOutcome = -1;

// One subject's observed data O = (W, C_1, L_1, A_1, ..., A_{K-1}, C_K, Y).
//
// Vectors are 0-based: c[t-1] holds C_t (1 = censored before visit t),
// l[t-1] holds L_t and a[t-1] holds A_t.
struct LongitudinalRecord {
  std::string subject_id;
  std::string cluster_id;
  std::vector<double> w;
  std::vector<Indicator> c;  // length K
  std::vector<Indicator> l;  // length K-1
  std::vector<Indicator> a;  // length K-1
  int y = kMissingOutcome;

  int k() const noexcept { return static_cast<int>(c.size()); }
  // 1-based index of the first censored visit, or K+1 if never censored.
  int first_censored_visit() const noexcept;
};

// Fixed, monotone nonincreasing treatment regimen over visits 1..K-1.
class Regimen {
 public:
  Regimen() = default;
  explicit Regimen(std::vector<Indicator> a_bar);

  // Accepts "[1,1,0]", "1,1,0" or "110".
  static Regimen parse(std::string_view text);

  std::span<const Indicator> a_bar() const noexcept { return a_bar_; }
  int size() const noexcept { return static_cast<int>(a_bar_.size()); }
  // Treatment prescribed at visit t (1-based).
  Indicator at(int t) const;
  std::string to_string() const;  // "[1,1,0]"

  friend bool operator==(const Regimen&, const Regimen&) = default;

 private:
  std::vector<Indicator> a_bar_;
};

// Immutable collection of records sharing K, with a cluster index and
// column-major copies of the observed variables for the estimators.
class Dataset {
 public:
  using ClusterIndex = std::map<std::string, std::vector<std::size_t>>;

  Dataset() = default;
  // Validates every invariant; throws ValidationError listing all problems.
  Dataset(std::vector<LongitudinalRecord> records, int k);

  const std::vector<LongitudinalRecord>& records() const noexcept { return records_; }
  const LongitudinalRecord& record(std::size_t i) const { return records_.at(i); }
  std::size_t size() const noexcept { return records_.size(); }
  int k() const noexcept { return k_; }
  int baseline_dim() const noexcept { return static_cast<int>(w_.cols()); }

  const ClusterIndex& cluster_index() const noexcept { return cluster_index_; }
  std::size_t cluster_count() const noexcept { return cluster_index_.size(); }
  // Dense cluster number (position in cluster_index order) per subject.
  std::span<const int> cluster_of() const noexcept { return cluster_of_; }

  // Columnar views. Missing indicators are stored as kMissing, missing Y as NaN.
  const Eigen::MatrixXd& w() const noexcept { return w_; }
  Indicator c(std::size_t i, int t) const { return c_(static_cast<Eigen::Index>(i), t - 1); }
  Indicator l(std::size_t i, int t) const { return l_(static_cast<Eigen::Index>(i), t - 1); }
  Indicator a(std::size_t i, int t) const { return a_(static_cast<Eigen::Index>(i), t - 1); }
  double y(std::size_t i) const { return y_(static_cast<Eigen::Index>(i)); }

  // True when every post-censoring L, A and Y is exactly 0.
  bool is_canonical() const noexcept { return canonical_; }
  // Order-sensitive hash of K, n and subject ids; used to detect mismatched contrasts.
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }

 private:
  std::vector<LongitudinalRecord> records_;
  int k_ = 0;
  ClusterIndex cluster_index_;
  std::vector<int> cluster_of_;
  Eigen::MatrixXd w_;
  Eigen::Matrix<Indicator, Eigen::Dynamic, Eigen::Dynamic> c_, l_, a_;
  Eigen::VectorXd y_;
  bool canonical_ = false;
  std::uint64_t fingerprint_ = 0;
};

// Affine map of the outcome onto [0,1].
class OutcomeScaler {
 public:
  OutcomeScaler(double lo, double hi);
  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  double range() const noexcept { return hi_ - lo_; }
  double scale(double y) const noexcept { return (y - lo_) / (hi_ - lo_); }
  double unscale(double s) const noexcept { return lo_ + s * (hi_ - lo_); }

 private:
  double lo_;
  double hi_;
};

// Column mapping from canonical names (id, cluster, w.<j>, c.<t>, l.<t>,
// a.<t>, y; plus visit, c, l, a for long files) to file columns.
class CsvSchema {
 public:
  CsvSchema() = default;
  // Reads `canonical = column` lines; '#' and ';' start comments.
  static CsvSchema from_file(const std::filesystem::path& path);
  void set(const std::string& canonical, const std::string& column);
  // Column mapped to `canonical`, or `canonical` itself when unmapped.
  std::string column(const std::string& canonical) const;
  bool empty() const noexcept { return mapping_.empty(); }
  const std::map<std::string, std::string>& mapping() const noexcept { return mapping_; }

 private:
  std::map<std::string, std::string> mapping_;
};

struct LoadOptions {
  bool long_format = false;               // one row per subject-visit
  bool drop_incomplete_baseline = false;  // drop (and report) subjects missing W
};

struct LoadResult {
  Dataset dataset;
  std::vector<std::string> dropped_subjects;
};

LoadResult load_dataset(const std::filesystem::path& path, const CsvSchema& schema,
                        const LoadOptions& options = {});

// Sets L_t to 0 wherever C_t = 1, Y to 0 when C_K = 1, and unobserved
// post-censoring A_t to 0. Idempotent.
Dataset impute_after_censoring(const Dataset& d);

// I(C_t = 0, A_s = a_s for all s < t); t is 1-based in [1, K].
bool follows_regimen(const LongitudinalRecord& r, const Regimen& reg, int t);
bool follows_regimen(const Dataset& d, std::size_t i, const Regimen& reg, int t);

// lo = 0, hi = max observed Y among subjects uncensored at K.
OutcomeScaler make_scaler(const Dataset& d);

// Writes a dataset in wide canonical form.
void write_dataset_csv(const Dataset& d, const std::filesystem::path& path);

}  // namespace cltmle
