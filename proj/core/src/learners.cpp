#include "cltmle/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>

#include "cltmle/csv.hpp"
#include "cltmle/error.hpp"
#include "knn_index.hpp"

namespace cltmle {

double logit(double p) noexcept { return std::log(p / (1.0 - p)); }

double expit(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_probability(double p) noexcept {
  return std::clamp(p, kPredictionBound, 1.0 - kPredictionBound);
}

void TrainingSet::validate() const {
  if (y.size() != x.rows()) throw ArgumentError("training set: x and y row counts differ");
  if (weighted() && weights.size() != x.rows()) {
    throw ArgumentError("training set: weight vector length differs from row count");
  }
  if (!x.allFinite() || !y.allFinite()) throw ArgumentError("training set: non-finite entry");
  if ((y.array() < 0.0).any() || (y.array() > 1.0).any()) {
    throw ArgumentError("training set: targets must lie in [0,1]");
  }
  if (weighted() && (!weights.allFinite() || (weights.array() < 0.0).any())) {
    throw ArgumentError("training set: weights must be finite and nonnegative");
  }
}

// ---------------------------------------------------------------- specs

LearnerSpec LearnerSpec::logistic(double ridge) {
  LearnerSpec s;
  s.kind = LearnerKind::logistic;
  s.ridge = ridge;
  return s;
}

LearnerSpec LearnerSpec::saturated_logistic(double ridge) {
  LearnerSpec s = logistic(ridge);
  s.saturated = true;
  return s;
}

LearnerSpec LearnerSpec::mean() {
  LearnerSpec s;
  s.kind = LearnerKind::mean;
  return s;
}

LearnerSpec LearnerSpec::knn(int k) {
  LearnerSpec s;
  s.kind = LearnerKind::knn;
  s.k = k;
  return s;
}

LearnerSpec LearnerSpec::super_learner(std::vector<LearnerSpec> library, int folds) {
  LearnerSpec s;
  s.kind = LearnerKind::ensemble;
  s.library = std::move(library);
  s.folds = folds;
  return s;
}

std::string LearnerSpec::to_string() const {
  std::ostringstream out;
  switch (kind) {
    case LearnerKind::logistic: {
      out << "logistic";
      std::vector<std::string> args;
      if (ridge != 1e-6) args.push_back("ridge=" + csv::format_double(ridge));
      if (saturated) args.emplace_back("saturated");
      if (!args.empty()) {
        out << '(';
        for (std::size_t i = 0; i < args.size(); ++i) out << (i ? "," : "") << args[i];
        out << ')';
      }
      break;
    }
    case LearnerKind::mean:
      out << "mean";
      break;
    case LearnerKind::knn:
      out << "knn(k=" << k << ')';
      break;
    case LearnerKind::ensemble:
      out << '[';
      for (std::size_t i = 0; i < library.size(); ++i) {
        out << (i ? ", " : "") << library[i].to_string();
      }
      out << ']';
      break;
  }
  return out.str();
}

namespace {

std::string strip(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::vector<std::string> split_top_level(std::string_view s) {
  std::vector<std::string> parts;
  int depth = 0;
  std::string cur;
  for (char ch : s) {
    if (ch == '(' || ch == '[') ++depth;
    if (ch == ')' || ch == ']') --depth;
    if (ch == ',' && depth == 0) {
      parts.push_back(strip(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!strip(cur).empty()) parts.push_back(strip(cur));
  return parts;
}

double to_number(const std::string& s, const std::string& ctx) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ArgumentError("learner spec: bad number '" + s + "' in " + ctx);
  }
}

}  // namespace

LearnerSpec parse_learner(std::string_view text) {
  const std::string t = strip(text);
  const auto open = t.find('(');
  const std::string name = strip(t.substr(0, open));
  std::vector<std::string> args;
  if (open != std::string::npos) {
    if (t.back() != ')') throw ArgumentError("learner spec: unbalanced parentheses in '" + t + "'");
    args = split_top_level(std::string_view(t).substr(open + 1, t.size() - open - 2));
  }
  LearnerSpec spec;
  if (name == "logistic" || name == "glm") {
    spec = LearnerSpec::logistic();
    for (const auto& arg : args) {
      const auto eq = arg.find('=');
      const std::string key = strip(arg.substr(0, eq));
      const std::string val = eq == std::string::npos ? "" : strip(arg.substr(eq + 1));
      if (key == "ridge") {
        spec.ridge = to_number(val, t);
        if (spec.ridge < 0) throw ArgumentError("learner spec: ridge must be nonnegative");
      } else if (key == "saturated") {
        spec.saturated = val.empty() || val == "true" || val == "1";
      } else {
        throw ArgumentError("learner spec: unknown logistic option '" + key + "'");
      }
    }
  } else if (name == "mean") {
    if (!args.empty()) throw ArgumentError("learner spec: mean takes no options");
    spec = LearnerSpec::mean();
  } else if (name == "knn") {
    spec = LearnerSpec::knn();
    for (const auto& arg : args) {
      const auto eq = arg.find('=');
      const std::string key = strip(arg.substr(0, eq));
      if (key != "k" || eq == std::string::npos) {
        throw ArgumentError("learner spec: unknown knn option '" + key + "'");
      }
      const double k = to_number(strip(arg.substr(eq + 1)), t);
      if (k < 1 || std::floor(k) != k) throw ArgumentError("learner spec: k must be a positive integer");
      spec.k = static_cast<int>(k);
    }
  } else {
    throw ArgumentError("unknown learner '" + name + "' (valid: logistic, mean, knn)");
  }
  return spec;
}

LearnerSpec parse_learner_list(std::string_view text) {
  std::string t = strip(text);
  if (!t.empty() && t.front() == '[') {
    if (t.back() != ']') throw ArgumentError("learner list: missing ']'");
    t = t.substr(1, t.size() - 2);
  }
  auto parts = split_top_level(t);
  if (parts.empty()) throw ArgumentError("learner list is empty");
  if (parts.size() == 1) return parse_learner(parts.front());
  std::vector<LearnerSpec> lib;
  for (const auto& p : parts) lib.push_back(parse_learner(p));
  return LearnerSpec::super_learner(std::move(lib));
}

// ---------------------------------------------------------------- logistic

Eigen::MatrixXd saturated_design(const Eigen::MatrixXd& x) {
  const auto p = x.cols();
  if (p > 12) throw ArgumentError("saturated design limited to 12 features");
  const Eigen::Index cols = (Eigen::Index{1} << p) - 1;
  Eigen::MatrixXd out(x.rows(), cols);
  for (Eigen::Index mask = 1; mask <= cols; ++mask) {
    Eigen::VectorXd prod = Eigen::VectorXd::Ones(x.rows());
    for (Eigen::Index j = 0; j < p; ++j) {
      if (mask & (Eigen::Index{1} << j)) prod.array() *= x.col(j).array();
    }
    out.col(mask - 1) = prod;
  }
  return out;
}

namespace {

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x, bool intercept) {
  if (!intercept) return x;
  Eigen::MatrixXd out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

double log1pexp(double eta) noexcept {
  return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

struct LogisticProblem {
  LogisticProblem(const Eigen::MatrixXd& x, const Eigen::VectorXd& target) : design(x), y(target) {}

  const Eigen::MatrixXd& design;
  const Eigen::VectorXd& y;
  Eigen::VectorXd w;  // case weights (ones when unweighted)
  Eigen::VectorXd offset;
  Eigen::VectorXd penalty;  // ridge per coefficient (0 for intercept)
  // Row-wise nonzero columns; used when the design is mostly zeros.
  std::vector<std::vector<int>> nonzeros;
  bool sparse = false;

  double loglik(const Eigen::VectorXd& coef, const Eigen::VectorXd& eta) const {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      ll += w(i) * (y(i) * eta(i) - log1pexp(eta(i)));
    }
    return ll - 0.5 * (penalty.array() * coef.array().square()).sum();
  }

  Eigen::VectorXd eta(const Eigen::VectorXd& coef) const {
    Eigen::VectorXd e = design * coef;
    if (offset.size()) e += offset;
    return e;
  }

  void prepare_sparsity() {
    const auto n = design.rows(), p = design.cols();
    if (p < 8) return;
    const Eigen::Index nnz = (design.array() != 0.0).count();
    if (nnz * 2 > n * p) return;
    sparse = true;
    nonzeros.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < p; ++j) {
        if (design(i, j) != 0.0) nonzeros[static_cast<std::size_t>(i)].push_back(static_cast<int>(j));
      }
    }
  }

  Eigen::MatrixXd hessian(const Eigen::VectorXd& v) const {
    const auto p = design.cols();
    Eigen::MatrixXd h;
    if (!sparse) {
      Eigen::MatrixXd xw = design.array().colwise() * v.array().sqrt();
      h.noalias() = xw.transpose() * xw;
    } else {
      h = Eigen::MatrixXd::Zero(p, p);
      for (Eigen::Index i = 0; i < design.rows(); ++i) {
        const auto& nz = nonzeros[static_cast<std::size_t>(i)];
        const double vi = v(i);
        for (std::size_t a = 0; a < nz.size(); ++a) {
          const double xa = design(i, nz[a]) * vi;
          for (std::size_t b = 0; b <= a; ++b) h(nz[a], nz[b]) += xa * design(i, nz[b]);
        }
      }
      h.triangularView<Eigen::StrictlyUpper>() = h.transpose();
    }
    h.diagonal() += penalty;
    return h;
  }
};

struct IrlsOutcome {
  Eigen::VectorXd coef;
  int iterations = 0;
  double score_norm = 0.0;
  bool converged = false;
};

IrlsOutcome run_irls(LogisticProblem& prob, const IrlsOptions& opt, double n_eff, bool intercept) {
  const auto p = prob.design.cols();
  IrlsOutcome out;
  out.coef = Eigen::VectorXd::Zero(p);
  if (intercept && prob.offset.size() == 0) {
    const double ybar = prob.w.dot(prob.y) / std::max(prob.w.sum(), 1e-300);
    out.coef(0) = logit(std::clamp(ybar, 1e-6, 1.0 - 1e-6));
  }
  Eigen::VectorXd eta = prob.eta(out.coef);
  double ll = prob.loglik(out.coef, eta);
  auto score_at = [&](const Eigen::VectorXd& coef, const Eigen::VectorXd& e, Eigen::VectorXd& mu) {
    mu = e.unaryExpr([](double v) { return expit(v); });
    Eigen::VectorXd resid = prob.w.array() * (prob.y - mu).array();
    Eigen::VectorXd score = prob.design.transpose() * resid;
    return (score - prob.penalty.cwiseProduct(coef)).eval();
  };
  auto newton_step = [&](const Eigen::VectorXd& mu, const Eigen::VectorXd& score) {
    Eigen::VectorXd v = prob.w.array() * mu.array() * (1.0 - mu.array());
    Eigen::MatrixXd h = prob.hessian(v);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    Eigen::VectorXd step = ldlt.solve(score);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      // Singular information: fall back to a damped gradient step.
      step = score / (h.diagonal().maxCoeff() + 1.0);
    }
    return step;
  };
  Eigen::VectorXd mu;
  for (int it = 0; it <= opt.max_iter; ++it) {
    Eigen::VectorXd score = score_at(out.coef, eta, mu);
    out.score_norm = score.cwiseAbs().maxCoeff() / n_eff;
    out.iterations = it;
    if (out.score_norm < opt.tol) {
      out.converged = true;
      // One more Newton step usually lands near machine precision.
      Eigen::VectorXd cand = out.coef + newton_step(mu, score);
      Eigen::VectorXd cand_eta = prob.eta(cand);
      Eigen::VectorXd cand_mu;
      const double cand_norm = score_at(cand, cand_eta, cand_mu).cwiseAbs().maxCoeff() / n_eff;
      if (std::isfinite(cand_norm) && cand_norm < out.score_norm) {
        out.coef = std::move(cand);
        out.score_norm = cand_norm;
      }
      return out;
    }
    if (it == opt.max_iter) break;
    const Eigen::VectorXd step = newton_step(mu, score);
    double scale = 1.0;
    bool accepted = false;
    for (int half = 0; half < 40; ++half) {
      Eigen::VectorXd cand = out.coef + scale * step;
      Eigen::VectorXd cand_eta = prob.eta(cand);
      const double cand_ll = prob.loglik(cand, cand_eta);
      if (std::isfinite(cand_ll) && cand_ll >= ll - 1e-12 * (1.0 + std::abs(ll))) {
        out.coef = std::move(cand);
        eta = std::move(cand_eta);
        ll = cand_ll;
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) break;
  }
  return out;
}

}  // namespace

double logistic_penalized_loglik(const TrainingSet& ts, const Eigen::VectorXd* offset,
                                 const Eigen::VectorXd& coef, double ridge, bool intercept) {
  const Eigen::MatrixXd design = with_intercept(ts.x, intercept);
  LogisticProblem prob(design, ts.y);
  prob.w = ts.weighted() ? ts.weights : Eigen::VectorXd::Ones(ts.rows());
  if (offset) prob.offset = *offset;
  prob.penalty = Eigen::VectorXd::Constant(design.cols(), ridge);
  if (intercept) prob.penalty(0) = 0.0;
  return prob.loglik(coef, prob.eta(coef));
}

Eigen::VectorXd logistic_penalized_score(const TrainingSet& ts, const Eigen::VectorXd* offset,
                                         const Eigen::VectorXd& coef, double ridge,
                                         bool intercept) {
  const Eigen::MatrixXd design = with_intercept(ts.x, intercept);
  Eigen::VectorXd eta = design * coef;
  if (offset) eta += *offset;
  Eigen::VectorXd mu = eta.unaryExpr([](double e) { return expit(e); });
  Eigen::VectorXd resid = (ts.y - mu);
  if (ts.weighted()) resid.array() *= ts.weights.array();
  Eigen::VectorXd score = design.transpose() * resid;
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(design.cols(), ridge);
  if (intercept) penalty(0) = 0.0;
  return score - penalty.cwiseProduct(coef);
}

FittedLearner fit_logistic_irls(const TrainingSet& ts, std::optional<Eigen::VectorXd> offset,
                                double ridge) {
  IrlsOptions opt;
  opt.ridge = ridge;
  return fit_logistic_irls(ts, std::move(offset), opt);
}

FittedLearner fit_logistic_irls(const TrainingSet& ts, std::optional<Eigen::VectorXd> offset,
                                const IrlsOptions& options) {
  ts.validate();
  if (ts.rows() == 0) throw ArgumentError("logistic: empty training set");
  if (offset && offset->size() != ts.rows()) throw ArgumentError("logistic: offset length mismatch");
  if (options.ridge < 0) throw ArgumentError("logistic: ridge must be nonnegative");

  const Eigen::MatrixXd design = with_intercept(ts.x, options.intercept);
  if (design.cols() == 0) throw ArgumentError("logistic: no coefficients to fit");
  LogisticProblem prob(design, ts.y);
  prob.w = ts.weighted() ? ts.weights : Eigen::VectorXd::Ones(ts.rows());
  if (offset) prob.offset = *offset;
  prob.prepare_sparsity();
  const double n_eff = std::max(prob.w.sum(), 1e-300);

  auto penalty_for = [&](double ridge) {
    Eigen::VectorXd pen = Eigen::VectorXd::Constant(design.cols(), ridge);
    if (options.intercept) pen(0) = 0.0;
    return pen;
  };
  auto slopes_capped = [&](const Eigen::VectorXd& coef) {
    const Eigen::Index first = options.intercept ? 1 : 0;
    for (Eigen::Index j = first; j < coef.size(); ++j) {
      if (std::abs(coef(j)) > options.coef_cap) return true;
    }
    return false;
  };

  prob.penalty = penalty_for(options.ridge);
  IrlsOutcome res = run_irls(prob, options, n_eff, options.intercept);
  bool fallback = false;
  if (slopes_capped(res.coef) && options.ridge < options.fallback_ridge) {
    prob.penalty = penalty_for(options.fallback_ridge);
    res = run_irls(prob, options, n_eff, options.intercept);
    fallback = true;
  }
  if (!res.converged) {
    std::ostringstream msg;
    msg << "logistic IRLS did not converge after " << res.iterations
        << " iterations (max |score|/n = " << res.score_norm << ")";
    throw ConvergenceError(msg.str(), std::vector<double>(res.coef.data(), res.coef.data() + res.coef.size()),
                           res.score_norm);
  }
  LogisticModel m;
  m.coef = std::move(res.coef);
  m.intercept = options.intercept;
  m.ridge_fallback = fallback;
  m.iterations = res.iterations;
  m.score_norm = res.score_norm;
  FittedLearner f(std::move(m));
  f.set_input_dim(static_cast<int>(ts.x.cols()));
  return f;
}

// ---------------------------------------------------------------- prediction

LearnerKind FittedLearner::kind() const noexcept {
  switch (model_.index()) {
    case 0:
      return LearnerKind::logistic;
    case 1:
      return LearnerKind::mean;
    case 2:
      return LearnerKind::knn;
    default:
      return LearnerKind::ensemble;
  }
}

namespace {

Eigen::VectorXd predict_knn(const KnnModel& m, const Eigen::MatrixXd& x) {
  Eigen::VectorXd out(x.rows());
  std::vector<std::pair<double, int>> nb;
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  const bool weighted = m.weights.size() != 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) row[static_cast<std::size_t>(j)] = x(i, j);
    m.index->query(row.data(), m.k, nb);
    double num = 0.0, den = 0.0;
    for (const auto& [d2, r] : nb) {
      const double wr = weighted ? m.weights(r) : 1.0;
      num += wr * m.y(r);
      den += wr;
    }
    out(i) = den > 0 ? num / den : 0.5;
  }
  return out;
}

}  // namespace

Eigen::VectorXd predict(const FittedLearner& f, const Eigen::MatrixXd& x,
                        const Eigen::VectorXd* offset) {
  if (f.input_dim() >= 0 && x.cols() != f.input_dim()) {
    throw ArgumentError("predict: feature dimension " + std::to_string(x.cols()) +
                        " does not match fitted dimension " + std::to_string(f.input_dim()));
  }
  if (offset && offset->size() != x.rows()) throw ArgumentError("predict: offset length mismatch");
  if (offset && f.kind() != LearnerKind::logistic) {
    throw ArgumentError("predict: offsets are only supported for logistic models");
  }
  Eigen::VectorXd p;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LogisticModel>) {
          const Eigen::MatrixXd feats = m.saturated ? saturated_design(x) : x;
          Eigen::VectorXd eta(x.rows());
          if (m.intercept) {
            eta = (feats * m.coef.tail(m.coef.size() - 1)).array() + m.coef(0);
          } else {
            eta = feats * m.coef;
          }
          if (offset) eta += *offset;
          p = eta.unaryExpr([](double e) { return expit(e); });
        } else if constexpr (std::is_same_v<T, MeanModel>) {
          p = Eigen::VectorXd::Constant(x.rows(), m.value);
        } else if constexpr (std::is_same_v<T, KnnModel>) {
          p = predict_knn(m, x);
        } else {
          p = Eigen::VectorXd::Zero(x.rows());
          for (std::size_t j = 0; j < m.members.size(); ++j) {
            const double a = m.alpha(static_cast<Eigen::Index>(j));
            if (a == 0.0) continue;
            p += a * predict(m.members[j], x);
          }
        }
      },
      f.model());
  return p.unaryExpr([](double v) { return clamp_probability(v); });
}

// ---------------------------------------------------------------- ensembles

std::vector<int> make_folds(Eigen::Index n, int folds, std::span<const int> cluster_ids,
                            std::uint64_t seed) {
  if (folds < 2) throw ArgumentError("cross-validation needs at least 2 folds");
  if (n < folds) throw ArgumentError("cross-validation needs at least as many rows as folds");
  std::mt19937_64 rng(seed);
  std::vector<int> fold(static_cast<std::size_t>(n));
  if (!cluster_ids.empty()) {
    if (static_cast<Eigen::Index>(cluster_ids.size()) != n) {
      throw ArgumentError("cluster id vector length differs from row count");
    }
    std::vector<int> uniq(cluster_ids.begin(), cluster_ids.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    if (uniq.size() >= 2) {
      std::shuffle(uniq.begin(), uniq.end(), rng);
      const int v = std::min<int>(folds, static_cast<int>(uniq.size()));
      std::vector<std::pair<int, int>> assign;
      assign.reserve(uniq.size());
      for (std::size_t j = 0; j < uniq.size(); ++j) {
        assign.emplace_back(uniq[j], static_cast<int>(j % static_cast<std::size_t>(v)));
      }
      std::sort(assign.begin(), assign.end());
      for (Eigen::Index i = 0; i < n; ++i) {
        auto it = std::lower_bound(assign.begin(), assign.end(),
                                   std::make_pair(cluster_ids[static_cast<std::size_t>(i)],
                                                  std::numeric_limits<int>::min()));
        fold[static_cast<std::size_t>(i)] = it->second;
      }
      return fold;
    }
  }
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t j = 0; j < perm.size(); ++j) {
    fold[static_cast<std::size_t>(perm[j])] = static_cast<int>(j % static_cast<std::size_t>(folds));
  }
  return fold;
}

Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v) {
  const auto m = v.size();
  std::vector<double> u(v.data(), v.data() + m);
  std::sort(u.begin(), u.end(), std::greater<>());
  double css = 0.0, theta = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    css += u[static_cast<std::size_t>(j)];
    const double t = (css - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0) theta = t;
  }
  Eigen::VectorXd out = (v.array() - theta).max(0.0);
  const double s = out.sum();
  if (s > 0) out /= s;
  return out;
}

Eigen::VectorXd simplex_least_squares(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                      const Eigen::VectorXd& weights, int max_iter, double tol) {
  const auto m = z.cols();
  if (m == 0) throw ArgumentError("simplex least squares: no columns");
  const Eigen::VectorXd w = weights.size() ? weights : Eigen::VectorXd::Ones(y.size());
  const double wsum = std::max(w.sum(), 1e-300);
  auto risk = [&](const Eigen::VectorXd& a) {
    return (w.array() * (y - z * a).array().square()).sum() / wsum;
  };
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(m);
  if (m == 1) {
    alpha(0) = 1.0;
    return alpha;
  }
  Eigen::Index best = 0;
  double best_risk = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::VectorXd e = Eigen::VectorXd::Unit(m, j);
    const double r = risk(e);
    if (r < best_risk) {
      best_risk = r;
      best = j;
    }
  }
  alpha(best) = 1.0;
  double f = best_risk;
  const Eigen::MatrixXd zw = z.array().colwise() * w.array();
  const Eigen::MatrixXd gram = z.transpose() * zw / wsum;
  const Eigen::VectorXd zty = zw.transpose() * y / wsum;
  double step = 1.0 / std::max(2.0 * gram.trace(), 1e-12);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd grad = 2.0 * (gram * alpha - zty);
    bool improved = false;
    for (int half = 0; half < 60; ++half) {
      Eigen::VectorXd cand = project_to_simplex(alpha - step * grad);
      const double fc = risk(cand);
      if (fc <= f) {
        const double gain = f - fc;
        alpha = std::move(cand);
        f = fc;
        improved = gain > tol * std::max(1.0, f);
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;
  }
  return alpha;
}

namespace {

struct CvPredictions {
  Eigen::VectorXd z;
  bool ok = true;
  std::string error;
};

CvPredictions cross_validate(const TrainingSet& ts, const LearnerSpec& spec,
                             const std::vector<int>& fold, std::span<const int> cluster_ids,
                             std::uint64_t seed) {
  CvPredictions out;
  out.z = Eigen::VectorXd::Constant(ts.rows(), std::numeric_limits<double>::quiet_NaN());
  const int v = *std::max_element(fold.begin(), fold.end()) + 1;
  for (int f = 0; f < v; ++f) {
    std::vector<Eigen::Index> train, test;
    for (Eigen::Index i = 0; i < ts.rows(); ++i) {
      (fold[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
    }
    if (test.empty()) continue;
    if (train.empty()) {
      out.ok = false;
      out.error = "empty training fold";
      return out;
    }
    TrainingSet sub;
    sub.x = ts.x(train, Eigen::all);
    sub.y = ts.y(train);
    if (ts.weighted()) sub.weights = ts.weights(train);
    std::vector<int> sub_clusters;
    if (!cluster_ids.empty()) {
      for (auto i : train) sub_clusters.push_back(cluster_ids[static_cast<std::size_t>(i)]);
    }
    try {
      FittedLearner fit = fit_learner(sub, spec, sub_clusters, seed + static_cast<std::uint64_t>(f));
      Eigen::MatrixXd xt = ts.x(test, Eigen::all);
      out.z(test) = predict(fit, xt);
    } catch (const Error& e) {
      out.ok = false;
      out.error = e.what();
      return out;
    }
  }
  return out;
}

double weighted_mse(const Eigen::VectorXd& y, const Eigen::VectorXd& pred, const Eigen::VectorXd& w) {
  if (w.size() == 0) return (y - pred).squaredNorm() / static_cast<double>(y.size());
  return (w.array() * (y - pred).array().square()).sum() / std::max(w.sum(), 1e-300);
}

}  // namespace

FittedLearner fit_super_learner(const TrainingSet& ts, const std::vector<LearnerSpec>& library,
                                const SuperLearnerOptions& options,
                                std::span<const int> cluster_ids) {
  ts.validate();
  if (library.empty()) throw ArgumentError("super learner: empty library");
  for (const auto& s : library) {
    if (s.kind == LearnerKind::ensemble) throw ArgumentError("super learner: nested ensembles unsupported");
  }
  const auto n = ts.rows();
  const auto fold = make_folds(n, options.folds,
                               options.cluster_folds ? cluster_ids : std::span<const int>{},
                               options.seed);
  EnsembleModel ens;
  std::vector<std::size_t> kept;
  std::vector<Eigen::VectorXd> columns;
  for (std::size_t j = 0; j < library.size(); ++j) {
    auto cv = cross_validate(ts, library[j], fold, cluster_ids, options.seed * 31 + j);
    if (!cv.ok) {
      ens.warnings.push_back("dropped " + library[j].to_string() + ": " + cv.error);
      continue;
    }
    kept.push_back(j);
    columns.push_back(std::move(cv.z));
  }
  if (kept.empty()) throw FitError("super learner: every library member failed");

  Eigen::MatrixXd z(n, static_cast<Eigen::Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j) z.col(static_cast<Eigen::Index>(j)) = columns[j];
  ens.alpha = simplex_least_squares(z, ts.y, ts.weights);
  ens.member_cv_risk.resize(z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    ens.member_cv_risk(j) = weighted_mse(ts.y, z.col(j), ts.weights);
  }
  ens.ensemble_cv_risk = weighted_mse(ts.y, z * ens.alpha, ts.weights);
  for (std::size_t j = 0; j < kept.size(); ++j) {
    const auto& spec = library[kept[j]];
    ens.member_names.push_back(spec.to_string());
    if (ens.alpha(static_cast<Eigen::Index>(j)) == 0.0) {
      ens.members.emplace_back(MeanModel{0.5});  // never evaluated
      continue;
    }
    ens.members.push_back(fit_learner(ts, spec, cluster_ids, options.seed));
  }
  FittedLearner f(std::move(ens));
  f.set_input_dim(static_cast<int>(ts.x.cols()));
  return f;
}

double cross_validated_loss(const TrainingSet& ts, const LearnerSpec& spec, int folds,
                            std::span<const int> cluster_ids, std::uint64_t seed) {
  ts.validate();
  const auto fold = make_folds(ts.rows(), folds, cluster_ids, seed);
  auto cv = cross_validate(ts, spec, fold, cluster_ids, seed);
  if (!cv.ok) throw FitError("cross-validation failed: " + cv.error);
  return weighted_mse(ts.y, cv.z, ts.weights);
}

FittedLearner fit_learner(const TrainingSet& ts, const LearnerSpec& spec,
                          std::span<const int> cluster_ids, std::uint64_t seed) {
  switch (spec.kind) {
    case LearnerKind::logistic: {
      IrlsOptions opt;
      opt.ridge = spec.ridge;
      if (!spec.saturated) return fit_logistic_irls(ts, std::nullopt, opt);
      TrainingSet expanded{saturated_design(ts.x), ts.y, ts.weights};
      FittedLearner f = fit_logistic_irls(expanded, std::nullopt, opt);
      LogisticModel m = *f.logistic();
      m.saturated = true;
      FittedLearner out(std::move(m));
      out.set_input_dim(static_cast<int>(ts.x.cols()));
      return out;
    }
    case LearnerKind::mean: {
      ts.validate();
      if (ts.rows() == 0) throw ArgumentError("mean learner: empty training set");
      const double v = ts.weighted() ? ts.weights.dot(ts.y) / std::max(ts.weights.sum(), 1e-300)
                                     : ts.y.mean();
      FittedLearner f(MeanModel{v});
      f.set_input_dim(static_cast<int>(ts.x.cols()));
      return f;
    }
    case LearnerKind::knn: {
      ts.validate();
      if (ts.rows() == 0) throw ArgumentError("knn: empty training set");
      KnnModel m;
      m.index = std::make_shared<const KnnIndex>(ts.x);
      m.y = ts.y;
      m.weights = ts.weights;
      m.k = std::min<int>(spec.k, static_cast<int>(ts.rows()));
      FittedLearner f(std::move(m));
      f.set_input_dim(static_cast<int>(ts.x.cols()));
      return f;
    }
    case LearnerKind::ensemble: {
      SuperLearnerOptions opt{spec.folds, spec.cluster_folds, seed};
      return fit_super_learner(ts, spec.library, opt, cluster_ids);
    }
  }
  throw ArgumentError("unknown learner kind");
}

}  // namespace cltmle
