#include "medcca/eval.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "medcca/error.h"
#include "medcca/parallel.h"
#include "medcca/seed.h"

namespace medcca {

namespace {

using SparseTriplet = Eigen::Triplet<double, int64_t>;

// log(1 + exp(t)) without overflow.
double Softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double Sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  double e = std::exp(t);
  return e / (1.0 + e);
}

void CheckLabels(std::span<const int> labels, size_t rows) {
  if (labels.size() != rows) throw DataError("label count does not match row count");
  bool pos = false, neg = false;
  for (int y : labels) {
    if (y == 1) {
      pos = true;
    } else if (y == 0) {
      neg = true;
    } else {
      throw DataError("labels must be 0 or 1");
    }
  }
  if (!pos || !neg) throw DataError("degenerate labels: both classes are required");
}

struct Evaluation {
  double objective;
  Eigen::VectorXd margin;  // s_i * (w.x_i + b)
};

Evaluation Evaluate(const Eigen::VectorXd& xw, double b, const Eigen::VectorXd& sign, const Eigen::VectorXd& w,
                    double C) {
  Evaluation e;
  e.margin = sign.array() * (xw.array() + b);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < e.margin.size(); ++i) loss += Softplus(-e.margin(i));
  e.objective = 0.5 * w.squaredNorm() + C * loss;
  return e;
}

// F(trial) - F(current), evaluated term by term so that it stays accurate
// after F itself has stopped resolving progress. Per example,
//   softplus(-m') - softplus(-m) = log1p(sigmoid(-m) * expm1(m - m')).
// The margin change dm = m' - m is passed in rather than recomputed, since
// the difference of two rounded margins loses the small steps near the optimum.
double ObjectiveChange(const Eigen::VectorXd& margin, const Eigen::VectorXd& dm, const Eigen::VectorXd& w,
                       const Eigen::VectorXd& dw, double C) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < margin.size(); ++i) {
    const double m = margin(i);
    if (std::abs(dm(i)) < 30.0) {
      loss += std::log1p(Sigmoid(-m) * std::expm1(-dm(i)));
    } else {
      loss += Softplus(-(m + dm(i))) - Softplus(-m);
    }
  }
  return dw.dot(w + 0.5 * dw) + C * loss;
}

}  // namespace

Design::Design(Eigen::MatrixXd dense) : n_(dense.rows()), dense_(std::move(dense)) {
  sparse_.resize(n_, 0);
}

Design::Design(const FeatureMatrix& fm, std::span<const size_t> rows, const Standardizer* standardizer)
    : n_(static_cast<Eigen::Index>(rows.size())) {
  const Eigen::Index d = fm.dense.cols();
  const Eigen::Index q = fm.sparse.cols();
  if (standardizer && (standardizer->mean.size() != d + q || standardizer->inv_scale.size() != d + q)) {
    throw DataError("standardizer does not match feature matrix width");
  }
  dense_.resize(n_, d);
  for (Eigen::Index i = 0; i < n_; ++i) dense_.row(i) = fm.dense.row(static_cast<Eigen::Index>(rows[i]));
  if (standardizer && d > 0) {
    dense_ = (dense_.rowwise() - standardizer->mean.head(d).transpose()).array().rowwise() *
             standardizer->inv_scale.head(d).transpose().array();
  }
  std::vector<SparseTriplet> trip;
  for (Eigen::Index i = 0; i < n_; ++i) {
    for (SparseRowMatrix::InnerIterator it(fm.sparse, static_cast<int64_t>(rows[i])); it; ++it) {
      trip.emplace_back(i, it.col(), it.value());
    }
  }
  sparse_.resize(n_, q);
  sparse_.setFromTriplets(trip.begin(), trip.end());
  shift_ = standardizer ? Eigen::VectorXd(standardizer->mean.tail(q)) : Eigen::VectorXd::Zero(q);
  scale_ = standardizer ? Eigen::VectorXd(standardizer->inv_scale.tail(q)) : Eigen::VectorXd::Ones(q);
}

Eigen::VectorXd Design::Multiply(const Eigen::VectorXd& w) const {
  if (static_cast<size_t>(w.size()) != cols()) throw DataError("design multiply: dimension mismatch");
  const Eigen::Index d = dense_.cols();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n_);
  if (d > 0) out.noalias() = dense_ * w.head(d);
  if (sparse_.cols() > 0) {
    Eigen::VectorXd ws = scale_.cwiseProduct(w.tail(sparse_.cols()));
    out.noalias() += sparse_ * ws;
    out.array() -= shift_.dot(ws);
  }
  return out;
}

Eigen::VectorXd Design::MultiplyTranspose(const Eigen::VectorXd& r) const {
  if (r.size() != n_) throw DataError("design multiply-transpose: dimension mismatch");
  const Eigen::Index d = dense_.cols();
  Eigen::VectorXd out(static_cast<Eigen::Index>(cols()));
  if (d > 0) out.head(d).noalias() = dense_.transpose() * r;
  if (sparse_.cols() > 0) {
    Eigen::VectorXd t = sparse_.transpose() * r;
    out.tail(sparse_.cols()) = scale_.cwiseProduct(t - shift_ * r.sum());
  }
  return out;
}

Eigen::VectorXd Design::WeightedColumnSquares(const Eigen::VectorXd& dw) const {
  const Eigen::Index d = dense_.cols();
  const Eigen::Index q = sparse_.cols();
  Eigen::VectorXd out(d + q);
  if (d > 0) out.head(d).noalias() = dense_.cwiseAbs2().transpose() * dw;
  if (q > 0) {
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(q), lin = Eigen::VectorXd::Zero(q);
    for (Eigen::Index i = 0; i < n_; ++i) {
      for (SparseRowMatrix::InnerIterator it(sparse_, i); it; ++it) {
        sq(it.col()) += dw(i) * it.value() * it.value();
        lin(it.col()) += dw(i) * it.value();
      }
    }
    const double total = dw.sum();
    out.tail(q) = scale_.cwiseAbs2().cwiseProduct(sq - 2.0 * shift_.cwiseProduct(lin) + shift_.cwiseAbs2() * total);
  }
  return out;
}

Eigen::MatrixXd Design::ToDense() const {
  Eigen::MatrixXd out(n_, static_cast<Eigen::Index>(cols()));
  out.leftCols(dense_.cols()) = dense_;
  if (sparse_.cols() > 0) {
    Eigen::MatrixXd s = Eigen::MatrixXd(sparse_);
    out.rightCols(sparse_.cols()) = (s.rowwise() - shift_.transpose()).array().rowwise() * scale_.transpose().array();
  }
  return out;
}

double LogRegObjective(const Design& x, std::span<const int> labels, const Eigen::VectorXd& w, double b, double C) {
  Eigen::VectorXd sign(static_cast<Eigen::Index>(labels.size()));
  for (size_t i = 0; i < labels.size(); ++i) sign(static_cast<Eigen::Index>(i)) = labels[i] == 1 ? 1.0 : -1.0;
  return Evaluate(x.Multiply(w), b, sign, w, C).objective;
}

Eigen::VectorXd LogRegGradient(const Design& x, std::span<const int> labels, const Eigen::VectorXd& w, double b,
                               double C) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  Eigen::VectorXd xw = x.Multiply(w);
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = labels[static_cast<size_t>(i)] == 1 ? 1.0 : -1.0;
    r(i) = -C * s * Sigmoid(-s * (xw(i) + b));
  }
  Eigen::VectorXd g(w.size() + 1);
  g.head(w.size()) = w + x.MultiplyTranspose(r);
  g(w.size()) = r.sum();
  return g;
}

LogRegModel FitLogReg(const Design& x, std::span<const int> labels, const LogRegOptions& options,
                      const LogRegModel* warm_start) {
  CheckLabels(labels, x.rows());
  if (!(options.C > 0.0)) throw ConfigError("C must be > 0");
  const auto n = static_cast<Eigen::Index>(x.rows());
  const auto p = static_cast<Eigen::Index>(x.cols());
  const double C = options.C;

  Eigen::VectorXd sign(n);
  for (Eigen::Index i = 0; i < n; ++i) sign(i) = labels[static_cast<size_t>(i)] == 1 ? 1.0 : -1.0;

  LogRegModel model;
  model.C = C;
  model.weights = Eigen::VectorXd::Zero(p);
  if (warm_start && warm_start->weights.size() == p) {
    model.weights = warm_start->weights;
    model.intercept = warm_start->intercept;
  }
  Eigen::VectorXd& w = model.weights;
  double& b = model.intercept;

  Eigen::VectorXd xw = x.Multiply(w);
  Evaluation cur = Evaluate(xw, b, sign, w, C);
  model.objective_trace.push_back(cur.objective);

  Eigen::VectorXd resid(n);
  auto gradient = [&](const Eigen::VectorXd& wv, const Evaluation& e, Eigen::VectorXd& grad, Eigen::VectorXd& curv) {
    curv.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double miss = Sigmoid(-e.margin(i));
      resid(i) = -C * sign(i) * miss;
      curv(i) = miss * (1.0 - miss);
    }
    grad.resize(p + 1);
    grad.head(p) = wv + x.MultiplyTranspose(resid);
    grad(p) = resid.sum();
  };
  Eigen::VectorXd g, curvature;
  gradient(w, cur, g, curvature);
  const double threshold = std::max(options.tol, options.rel_tol * g.norm());

  for (model.iterations = 0; model.iterations < options.max_iter; ++model.iterations) {
    const double gnorm = g.norm();
    model.grad_norm = gnorm;
    if (gnorm <= threshold) {
      model.converged = true;
      return model;
    }

    // Preconditioned CG on H d = -g.
    const Eigen::VectorXd dcurv = C * curvature;
    Eigen::VectorXd precond(p + 1);
    precond.head(p) = Eigen::VectorXd::Ones(p) + x.WeightedColumnSquares(dcurv);
    precond(p) = std::max(dcurv.sum(), 1e-12);
    auto hess = [&](const Eigen::VectorXd& v) {
      Eigen::VectorXd t = x.Multiply(v.head(p));
      t.array() += v(p);
      Eigen::VectorXd u = dcurv.cwiseProduct(t);
      Eigen::VectorXd out(p + 1);
      out.head(p) = v.head(p) + x.MultiplyTranspose(u);
      out(p) = u.sum();
      return out;
    };
    const double forcing = std::min(0.5, std::sqrt(gnorm)) * gnorm;
    Eigen::VectorXd step = Eigen::VectorXd::Zero(p + 1);
    Eigen::VectorXd r = -g;
    Eigen::VectorXd z = r.cwiseQuotient(precond);
    Eigen::VectorXd dir = z;
    double rz = r.dot(z);
    for (int cg = 0; cg < options.max_cg_iter && r.norm() > forcing; ++cg) {
      Eigen::VectorXd hd = hess(dir);
      double curv = dir.dot(hd);
      if (!(curv > 0.0)) break;
      double alpha = rz / curv;
      step += alpha * dir;
      r -= alpha * hd;
      z = r.cwiseQuotient(precond);
      double rz_next = r.dot(z);
      dir = z + (rz_next / rz) * dir;
      rz = rz_next;
    }
    if (step.squaredNorm() == 0.0) step = -g.cwiseQuotient(precond);

    // Backtracking (Armijo) line search along the Newton direction.
    const Eigen::VectorXd xstep = x.Multiply(step.head(p));
    const double slope = g.dot(step);
    bool accepted = false;
    for (double t = 1.0; t > 1e-18; t *= 0.5) {
      const Eigen::VectorXd dw = t * step.head(p);
      Eigen::VectorXd w_trial = w + dw;
      Evaluation trial = Evaluate(xw + t * xstep, b + t * step(p), sign, w_trial, C);
      const Eigen::VectorXd dm = sign.cwiseProduct(t * (xstep.array() + step(p)).matrix());
      const double change = ObjectiveChange(cur.margin, dm, w, dw, C);
      if (!(change <= 1e-4 * t * slope)) continue;
      w = std::move(w_trial);
      b += t * step(p);
      xw += t * xstep;
      cur = std::move(trial);
      gradient(w, cur, g, curvature);
      model.objective_trace.push_back(model.objective_trace.back() + change);
      accepted = true;
      break;
    }
    if (!accepted) {
      model.grad_norm = gnorm;
      model.converged = false;
      return model;
    }
  }
  model.grad_norm = g.norm();
  model.converged = model.grad_norm <= threshold;
  return model;
}

Eigen::VectorXd PredictProba(const LogRegModel& model, const Design& x) {
  if (static_cast<size_t>(model.weights.size()) != x.cols()) throw DataError("predict: column count mismatch");
  Eigen::VectorXd z = x.Multiply(model.weights);
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = Sigmoid(z(i) + model.intercept);
  return z;
}

double Auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DataError("auc: scores and labels differ in length");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  int64_t n_pos = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw DataError("auc: NaN score");
    if (labels[i] != 0 && labels[i] != 1) throw DataError("auc: labels must be 0 or 1");
    n_pos += labels[i];
  }
  const int64_t n_neg = static_cast<int64_t>(scores.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("auc undefined: both classes are required");
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  // Twice the positive rank sum, using midranks for ties; stays integral.
  int64_t twice_rank_sum = 0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const int64_t twice_midrank = static_cast<int64_t>(i + 1 + j);
    for (size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) twice_rank_sum += twice_midrank;
    }
    i = j;
  }
  const int64_t twice_u = twice_rank_sum - n_pos * (n_pos + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<int> StratifiedFolds(std::span<const int> labels, size_t k, uint64_t seed) {
  if (k < 2) throw ConfigError("number of folds must be >= 2");
  std::vector<size_t> by_class[2];
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("labels must be 0 or 1");
    by_class[labels[i]].push_back(i);
  }
  const size_t minority = std::min(by_class[0].size(), by_class[1].size());
  if (minority < k) {
    throw DataError("stratification error: minority class has " + std::to_string(minority) + " rows, fewer than " +
                    std::to_string(k) + " folds");
  }
  std::mt19937_64 rng(seed);
  std::vector<int> fold(labels.size(), -1);
  size_t next = 0;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (size_t idx : members) fold[idx] = static_cast<int>(next++ % k);
  }
  return fold;
}

std::vector<double> DefaultCGrid() {
  std::vector<double> grid(10);
  for (size_t i = 0; i < grid.size(); ++i) grid[i] = std::pow(10.0, -4.0 + 8.0 * static_cast<double>(i) / 9.0);
  return grid;
}

namespace {

// A train/test split with standardization fitted on the training rows; the
// designs are built once and reused across the C grid.
struct Split {
  Split(const FeatureMatrix& fm, const std::vector<size_t>& train, const std::vector<size_t>& test)
      : standardizer(Standardizer::Fit(fm, train)), x_train(fm, train, &standardizer), x_test(fm, test, &standardizer) {
    for (size_t r : train) y_train.push_back(fm.labels[r]);
    for (size_t r : test) y_test.push_back(fm.labels[r]);
  }

  double FitAndScore(double C, const LogRegOptions& solver, LogRegModel* warm, bool* converged) const {
    LogRegOptions opts = solver;
    opts.C = C;
    LogRegModel model = FitLogReg(x_train, y_train, opts, warm);
    *converged = *converged && model.converged;
    Eigen::VectorXd scores = PredictProba(model, x_test);
    if (warm) *warm = std::move(model);
    return Auc(std::span<const double>(scores.data(), static_cast<size_t>(scores.size())), y_test);
  }

  Standardizer standardizer;
  Design x_train;
  Design x_test;
  std::vector<int> y_train;
  std::vector<int> y_test;
};

}  // namespace

CvReport CrossValidate(const FeatureMatrix& fm, const CvOptions& options) {
  fm.Validate();
  if (options.folds < 2 || options.inner_folds < 2) throw ConfigError("fold counts must be >= 2");
  if (options.grid.empty()) throw ConfigError("empty C grid");
  std::vector<double> grid = options.grid;
  for (double c : grid) {
    if (!(c > 0.0) || !std::isfinite(c)) throw ConfigError("C grid values must be positive and finite");
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const std::vector<int> outer = StratifiedFolds(fm.labels, options.folds, DeriveSeed(options.seed, "cv-outer"));
  CvReport report;
  report.feature_set = fm.name;
  report.columns = fm.cols();
  report.folds.resize(options.folds);

  ParallelFor(options.folds, options.threads, [&](size_t f) {
    std::vector<size_t> train, test;
    for (size_t i = 0; i < fm.rows(); ++i) (outer[i] == static_cast<int>(f) ? test : train).push_back(i);
    std::vector<int> train_labels;
    for (size_t r : train) train_labels.push_back(fm.labels[r]);
    const std::vector<int> inner =
        StratifiedFolds(train_labels, options.inner_folds, DeriveSeed(options.seed, "cv-inner", f));

    FoldResult& result = report.folds[f];
    std::vector<double> inner_auc(grid.size(), 0.0);
    for (size_t j = 0; j < options.inner_folds; ++j) {
      std::vector<size_t> fit_rows, val_rows;
      for (size_t t = 0; t < train.size(); ++t) (inner[t] == static_cast<int>(j) ? val_rows : fit_rows).push_back(train[t]);
      const Split split(fm, fit_rows, val_rows);
      LogRegModel warm;
      for (size_t c = 0; c < grid.size(); ++c) {
        inner_auc[c] += split.FitAndScore(grid[c], options.solver, &warm, &result.converged) /
                        static_cast<double>(options.inner_folds);
      }
    }
    size_t best = 0;
    for (size_t c = 1; c < grid.size(); ++c) {
      if (inner_auc[c] > inner_auc[best]) best = c;
    }
    result.fold = f;
    result.chosen_C = grid[best];
    result.n_train = train.size();
    result.n_test = test.size();
    for (size_t r : test) result.test_positives += static_cast<size_t>(fm.labels[r]);
    result.auc = Split(fm, train, test).FitAndScore(grid[best], options.solver, nullptr, &result.converged);
  });

  double sum = 0.0;
  for (const auto& f : report.folds) sum += f.auc;
  report.mean_auc = sum / static_cast<double>(report.folds.size());
  double ss = 0.0;
  for (const auto& f : report.folds) ss += (f.auc - report.mean_auc) * (f.auc - report.mean_auc);
  report.std_auc = std::sqrt(ss / static_cast<double>(report.folds.size()));
  return report;
}

std::string CvReportJsonLines(const CvReport& report) {
  std::ostringstream out;
  for (const auto& f : report.folds) {
    nlohmann::json j = {{"feature_set", report.feature_set}, {"fold", f.fold},       {"auc", f.auc},
                        {"chosen_C", f.chosen_C},            {"n_train", f.n_train}, {"n_test", f.n_test},
                        {"test_positives", f.test_positives}, {"converged", f.converged}};
    out << j.dump() << '\n';
  }
  nlohmann::json summary = {{"feature_set", report.feature_set}, {"mean_auc", report.mean_auc},
                            {"std_auc", report.std_auc},         {"folds", report.folds.size()},
                            {"columns", report.columns}};
  out << summary.dump() << '\n';
  return out.str();
}

}  // namespace medcca
