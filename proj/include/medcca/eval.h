#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "medcca/featurize.h"

namespace medcca {

// Row subset of a feature matrix with an optional standardization applied
// implicitly: x_std = (x - mean) * inv_scale, so sparse blocks stay sparse.
class Design {
 public:
  explicit Design(Eigen::MatrixXd dense);
  Design(const FeatureMatrix& fm, std::span<const size_t> rows, const Standardizer* standardizer = nullptr);

  size_t rows() const { return static_cast<size_t>(n_); }
  size_t cols() const { return static_cast<size_t>(dense_.cols() + sparse_.cols()); }

  Eigen::VectorXd Multiply(const Eigen::VectorXd& w) const;             // X w
  Eigen::VectorXd MultiplyTranspose(const Eigen::VectorXd& r) const;    // X^T r
  Eigen::VectorXd WeightedColumnSquares(const Eigen::VectorXd& d) const;  // sum_i d_i x_ij^2
  Eigen::MatrixXd ToDense() const;

 private:
  Eigen::Index n_ = 0;
  Eigen::MatrixXd dense_;   // already standardized
  SparseRowMatrix sparse_;  // raw values; shift/scale applied on the fly
  Eigen::VectorXd shift_;   // sparse block means
  Eigen::VectorXd scale_;   // sparse block inverse scales
};

struct LogRegOptions {
  double C = 1.0;
  double tol = 1e-8;       // absolute bound on the gradient norm
  double rel_tol = 0.0;    // optional bound relative to the initial gradient norm
  int max_iter = 500;
  int max_cg_iter = 500;
};

struct LogRegModel {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  double C = 1.0;
  int iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
  std::vector<double> objective_trace;  // objective at the start and after each iteration
};

// (1/2)||w||^2 + C * sum_i log(1 + exp(-s_i (w.x_i + b))), s_i = 2 y_i - 1.
double LogRegObjective(const Design& x, std::span<const int> labels, const Eigen::VectorXd& w, double b, double C);
// Gradient with respect to (w, b); the last entry is the intercept component.
Eigen::VectorXd LogRegGradient(const Design& x, std::span<const int> labels, const Eigen::VectorXd& w, double b,
                               double C);

// Deterministic Newton-CG with Armijo backtracking; the intercept is not
// penalized. Throws DataError for single-class labels; non-convergence only
// clears `converged`.
LogRegModel FitLogReg(const Design& x, std::span<const int> labels, const LogRegOptions& options,
                      const LogRegModel* warm_start = nullptr);

Eigen::VectorXd PredictProba(const LogRegModel& model, const Design& x);

// Mann-Whitney AUC with half credit for ties, via midranks in O(n log n).
double Auc(std::span<const double> scores, std::span<const int> labels);

// Fold id per row; each class is shuffled with the seed and dealt round-robin.
std::vector<int> StratifiedFolds(std::span<const int> labels, size_t k, uint64_t seed);

// Ten values log-spaced over [1e-4, 1e4].
std::vector<double> DefaultCGrid();

struct CvOptions {
  size_t folds = 10;
  size_t inner_folds = 3;
  std::vector<double> grid = DefaultCGrid();
  uint64_t seed = 0;  // root seed; fold seeds derive from it
  LogRegOptions solver{1.0, 1e-8, 1e-6, 500, 500};
  unsigned threads = 1;
};

struct FoldResult {
  size_t fold = 0;
  double auc = 0.0;
  double chosen_C = 0.0;
  size_t n_train = 0;
  size_t n_test = 0;
  size_t test_positives = 0;
  bool converged = true;
};

struct CvReport {
  std::string feature_set;
  size_t columns = 0;
  std::vector<FoldResult> folds;
  double mean_auc = 0.0;
  double std_auc = 0.0;  // population convention
};

// Outer stratified k-fold; inside each training fold an inner stratified
// k-fold picks C by mean AUC (ties go to the smaller C). Standardization is
// fitted on training rows only.
CvReport CrossValidate(const FeatureMatrix& fm, const CvOptions& options);

std::string CvReportJsonLines(const CvReport& report);

}  // namespace medcca
