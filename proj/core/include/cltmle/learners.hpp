#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace cltmle {

// Probability predictions are clamped to [kPredictionBound, 1 - kPredictionBound].
inline constexpr double kPredictionBound = 1e-4;

double logit(double p) noexcept;
double expit(double x) noexcept;
double clamp_probability(double p) noexcept;

// Features, [0,1] targets and optional nonnegative case weights.
struct TrainingSet {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd weights;  // empty means unit weights

  Eigen::Index rows() const noexcept { return x.rows(); }
  bool weighted() const noexcept { return weights.size() != 0; }
  // Throws ArgumentError on size mismatch, non-finite entries or y outside [0,1].
  void validate() const;
};

enum class LearnerKind { logistic, mean, knn, ensemble };

// Declarative description of a learner, parsed from run configs such as
// "logistic", "logistic(ridge=0, saturated)", "mean", "knn(k=30)".
struct LearnerSpec {
  LearnerKind kind = LearnerKind::logistic;
  double ridge = 1e-6;     // logistic: L2 penalty on non-intercept terms
  bool saturated = false;  // logistic: expand to all interactions of the features
  int k = 30;              // knn: neighbours
  std::vector<LearnerSpec> library;  // ensemble members
  int folds = 10;                    // ensemble: V
  bool cluster_folds = true;         // ensemble: keep clusters within one fold

  static LearnerSpec logistic(double ridge = 1e-6);
  static LearnerSpec saturated_logistic(double ridge = 0.0);
  static LearnerSpec mean();
  static LearnerSpec knn(int k = 30);
  static LearnerSpec super_learner(std::vector<LearnerSpec> library, int folds = 10);

  std::string to_string() const;
};

LearnerSpec parse_learner(std::string_view text);
// "[a, b, ...]": one member yields that learner, several yield a Super Learner.
LearnerSpec parse_learner_list(std::string_view text);

struct IrlsOptions {
  double ridge = 1e-6;
  bool intercept = true;
  int max_iter = 100;
  double tol = 1e-8;            // on max |penalized score| / n
  double coef_cap = 30.0;       // |coefficient| above this is treated as separation
  double fallback_ridge = 1.0;  // ridge used for the separation refit
};

struct LogisticModel {
  Eigen::VectorXd coef;  // intercept first when fitted
  bool intercept = true;
  bool saturated = false;
  bool ridge_fallback = false;  // separation detected, refit with fallback_ridge
  int iterations = 0;
  double score_norm = 0.0;  // max |penalized score| / n at the returned coefficients
};

struct MeanModel {
  double value = 0.5;
};

class KnnIndex;

struct KnnModel {
  std::shared_ptr<const KnnIndex> index;
  Eigen::VectorXd y;
  Eigen::VectorXd weights;
  int k = 30;
};

class FittedLearner;

struct EnsembleModel {
  std::vector<FittedLearner> members;
  std::vector<std::string> member_names;
  Eigen::VectorXd alpha;
  Eigen::VectorXd member_cv_risk;
  double ensemble_cv_risk = 0.0;
  std::vector<std::string> warnings;  // members dropped after failing on a fold
};

class FittedLearner {
 public:
  using Model = std::variant<LogisticModel, MeanModel, KnnModel, EnsembleModel>;

  FittedLearner() = default;
  explicit FittedLearner(Model m) : model_(std::move(m)) {}

  LearnerKind kind() const noexcept;
  const Model& model() const noexcept { return model_; }
  const LogisticModel* logistic() const noexcept { return std::get_if<LogisticModel>(&model_); }
  const EnsembleModel* ensemble() const noexcept { return std::get_if<EnsembleModel>(&model_); }
  int input_dim() const noexcept { return input_dim_; }
  void set_input_dim(int p) noexcept { input_dim_ = p; }

 private:
  Model model_;
  int input_dim_ = -1;
};

// Newton-Raphson/IRLS for the (weighted, ridge-penalized) Bernoulli
// quasi-likelihood with a fixed offset. Accepts fractional targets.
FittedLearner fit_logistic_irls(const TrainingSet& ts, std::optional<Eigen::VectorXd> offset,
                                const IrlsOptions& options = {});
FittedLearner fit_logistic_irls(const TrainingSet& ts, std::optional<Eigen::VectorXd> offset,
                                double ridge);

// Penalized quasi-log-likelihood and its gradient in (intercept, beta) order.
double logistic_penalized_loglik(const TrainingSet& ts, const Eigen::VectorXd* offset,
                                 const Eigen::VectorXd& coef, double ridge, bool intercept);
Eigen::VectorXd logistic_penalized_score(const TrainingSet& ts, const Eigen::VectorXd* offset,
                                         const Eigen::VectorXd& coef, double ridge,
                                         bool intercept);

// All products of non-empty subsets of the columns of x (2^p - 1 columns).
Eigen::MatrixXd saturated_design(const Eigen::MatrixXd& x);

// Probabilities clamped to the prediction bounds; offset only for logistic models.
Eigen::VectorXd predict(const FittedLearner& f, const Eigen::MatrixXd& x,
                        const Eigen::VectorXd* offset = nullptr);

// Fold id in [0, V) per row; whole clusters share a fold when cluster ids are given.
std::vector<int> make_folds(Eigen::Index n, int folds, std::span<const int> cluster_ids,
                            std::uint64_t seed);

struct SuperLearnerOptions {
  int folds = 10;
  bool cluster_folds = true;
  std::uint64_t seed = 0;
};

// Cross-validated convex ensemble over `library` with squared-error loss.
FittedLearner fit_super_learner(const TrainingSet& ts, const std::vector<LearnerSpec>& library,
                                const SuperLearnerOptions& options,
                                std::span<const int> cluster_ids = {});

// Mean held-out squared error of `spec` over the folds.
double cross_validated_loss(const TrainingSet& ts, const LearnerSpec& spec, int folds,
                            std::span<const int> cluster_ids, std::uint64_t seed);

// Fits any spec; ensembles go through fit_super_learner.
FittedLearner fit_learner(const TrainingSet& ts, const LearnerSpec& spec,
                          std::span<const int> cluster_ids = {}, std::uint64_t seed = 0);

// Minimizes ||y - Z alpha||^2_w over the probability simplex by projected
// gradient descent with step halving, starting at the best vertex.
Eigen::VectorXd simplex_least_squares(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                      const Eigen::VectorXd& weights, int max_iter = 1000,
                                      double tol = 1e-10);

// Euclidean projection onto {alpha >= 0, sum alpha = 1}.
Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v);

}  // namespace cltmle
