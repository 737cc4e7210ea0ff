#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "medcca/cooccur.h"
#include "medcca/ingest.h"

namespace medcca {

// Matrix-free operator interface used by the truncated SVD.
class LinearOperator {
 public:
  virtual ~LinearOperator() = default;
  virtual size_t rows() const = 0;
  virtual size_t cols() const = 0;
  // out = A * in, in has cols() rows.
  virtual Eigen::MatrixXd Apply(const Eigen::MatrixXd& in) const = 0;
  // out = A^T * in, in has rows() rows.
  virtual Eigen::MatrixXd ApplyTranspose(const Eigen::MatrixXd& in) const = 0;
  virtual Eigen::MatrixXd ToDense() const = 0;
};

class DenseOperator final : public LinearOperator {
 public:
  explicit DenseOperator(Eigen::MatrixXd matrix) : matrix_(std::move(matrix)) {}
  size_t rows() const override { return static_cast<size_t>(matrix_.rows()); }
  size_t cols() const override { return static_cast<size_t>(matrix_.cols()); }
  Eigen::MatrixXd Apply(const Eigen::MatrixXd& in) const override { return matrix_ * in; }
  Eigen::MatrixXd ApplyTranspose(const Eigen::MatrixXd& in) const override { return matrix_.transpose() * in; }
  Eigen::MatrixXd ToDense() const override { return matrix_; }

 private:
  Eigen::MatrixXd matrix_;
};

// The correlation-scaled co-occurrence matrix
//   omega[w, c] = pair[w, c] / sqrt((row_sum[w] + lambda_x) * (col_sum[c] + lambda_y))
// with lambda_x = lambda_frac * max(row_sums), lambda_y likewise for columns.
// Stored as scaled CSR rows plus the transposed CSR, never densified.
class OmegaOperator final : public LinearOperator {
 public:
  OmegaOperator(const CooccurrenceStats& stats, double lambda_frac, unsigned threads = 1);

  size_t rows() const override { return row_sums_.size(); }
  size_t cols() const override { return col_sums_.size(); }
  Eigen::MatrixXd Apply(const Eigen::MatrixXd& in) const override;
  Eigen::MatrixXd ApplyTranspose(const Eigen::MatrixXd& in) const override;
  Eigen::MatrixXd ToDense() const override;

  double entry(uint32_t row, uint32_t col) const;
  double lambda_frac() const { return lambda_frac_; }
  double lambda_x() const { return lambda_x_; }
  double lambda_y() const { return lambda_y_; }
  const std::vector<double>& row_sums() const { return row_sums_; }
  const std::vector<double>& col_sums() const { return col_sums_; }

 private:
  struct Csr {
    std::vector<size_t> offsets;
    std::vector<uint32_t> indices;
    std::vector<double> values;
  };
  Eigen::MatrixXd Multiply(const Csr& csr, size_t out_rows, const Eigen::MatrixXd& in) const;

  Csr forward_;
  Csr transposed_;
  std::vector<double> row_sums_;
  std::vector<double> col_sums_;
  double lambda_frac_;
  double lambda_x_;
  double lambda_y_;
  unsigned threads_;
};

struct SvdOptions {
  size_t rank = 25;
  uint64_t seed = 0;
  size_t oversample = 10;
  size_t power_iters = 2;
  // Matrices with max(rows, cols) at or below this use an exact dense SVD.
  size_t dense_threshold = 500;
  // Extra subspace iterations allowed when the residual check fails.
  size_t max_extra_iters = 100;
  double residual_tol = 1e-6;  // relative to the top singular value
};

struct SvdResult {
  Eigen::MatrixXd left;    // rows x rank, orthonormal columns
  Eigen::VectorXd values;  // non-increasing
  Eigen::MatrixXd right;   // cols x rank, orthonormal columns
  double max_residual = 0.0;  // max_i ||A v_i - s_i u_i|| / s_1
  bool dense_path = false;
};

// Top-`rank` singular triplets. Columns are sign-fixed so that the entry of
// largest magnitude in each left vector is positive (right vectors follow).
// Throws ConfigError when rank is out of range and ConvergenceError when the
// randomized path cannot meet residual_tol within its iteration budget.
SvdResult TruncatedSvd(const LinearOperator& op, const SvdOptions& options);

enum class ScalingMode { kSingularVectors, kWhitened, kSvWeighted };

ScalingMode ParseScalingMode(std::string_view name);
std::string_view ToString(ScalingMode mode);

// Per-code embedding vectors plus the context-side vectors and fit metadata.
struct EmbeddingModel {
  std::vector<std::string> codes;
  Eigen::MatrixXd vectors;   // |V| x dims
  Eigen::MatrixXd context;   // |V| x dims
  Eigen::VectorXd sigma;
  double lambda_frac = 0.0;
  ScalingMode mode = ScalingMode::kSingularVectors;
  uint64_t seed = 0;
  uint64_t vocab_hash = 0;

  size_t dims() const { return static_cast<size_t>(vectors.cols()); }
  size_t size() const { return codes.size(); }
};

EmbeddingModel ExtractEmbeddings(const SvdResult& svd, const OmegaOperator& omega, const Vocabulary& vocab,
                                 ScalingMode mode);

struct FitOptions {
  size_t dims = 25;
  double lambda_frac = 0.01;
  ScalingMode mode = ScalingMode::kSingularVectors;
  uint64_t seed = 0;  // stored in the model; the SVD seed is derived from it
  size_t oversample = 10;
  size_t power_iters = 2;
  size_t dense_threshold = 500;
  unsigned threads = 1;
};

// stats -> omega -> truncated SVD -> embeddings.
EmbeddingModel FitEmbeddings(const CooccurrenceStats& stats, const Vocabulary& vocab, const FitOptions& options);

}  // namespace medcca
