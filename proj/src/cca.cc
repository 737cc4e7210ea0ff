#include "medcca/cca.h"

#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <random>

#include "medcca/error.h"
#include "medcca/parallel.h"
#include "medcca/seed.h"

namespace medcca {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr size_t kRowsPerChunk = 256;

Eigen::MatrixXd Orthonormalize(const Eigen::MatrixXd& y) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
  return qr.householderQ() * Eigen::MatrixXd::Identity(y.rows(), y.cols());
}

void FixSigns(SvdResult& r) {
  for (Eigen::Index j = 0; j < r.left.cols(); ++j) {
    Eigen::Index arg = 0;
    r.left.col(j).cwiseAbs().maxCoeff(&arg);
    if (r.left(arg, j) < 0) {
      r.left.col(j) *= -1.0;
      r.right.col(j) *= -1.0;
    }
  }
}

double MaxRelativeResidual(const Eigen::MatrixXd& av, const SvdResult& r) {
  const double top = r.values.size() > 0 ? r.values(0) : 0.0;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < r.values.size(); ++j) {
    double res = (av.col(j) - r.values(j) * r.left.col(j)).norm();
    worst = std::max(worst, top > 0 ? res / top : res);
  }
  return worst;
}

SvdResult DenseSvd(const LinearOperator& op, size_t rank) {
  Eigen::MatrixXd a = op.ToDense();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdResult r;
  r.dense_path = true;
  r.left = svd.matrixU().leftCols(rank);
  r.right = svd.matrixV().leftCols(rank);
  r.values = svd.singularValues().head(rank);
  FixSigns(r);
  r.max_residual = MaxRelativeResidual(a * r.right, r);
  return r;
}

// Removes the components of y that lie in span(basis) (two passes for
// stability) and orthonormalizes what is left.
Eigen::MatrixXd OrthonormalizeAgainst(const Eigen::MatrixXd& basis, Eigen::MatrixXd y) {
  for (int pass = 0; pass < 2; ++pass) y -= basis * (basis.transpose() * y);
  Eigen::MatrixXd q = Orthonormalize(y);
  for (int pass = 0; pass < 2; ++pass) q -= basis * (basis.transpose() * q);
  return Orthonormalize(q);
}

// Rayleigh-Ritz over range(basis), given w = A^T basis. Since basis^T A =
// Z S W^T for the thin SVD w = W S Z^T, the Ritz triplets are (basis Z, S, W).
struct Ritz {
  Eigen::MatrixXd left;
  Eigen::VectorXd values;
  Eigen::MatrixXd right;
};

Ritz RayleighRitz(const Eigen::MatrixXd& basis, const Eigen::MatrixXd& w) {
  Eigen::BDCSVD<Eigen::MatrixXd> small(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return {basis * small.matrixV(), small.singularValues(), small.matrixU()};
}

// Randomized range finder with power iterations. When the Ritz residuals
// miss the tolerance, the range is refined by block Krylov steps (span of
// q, (AA^T)q, (AA^T)^2 q, ...), restarting from the leading Ritz vectors
// whenever the basis reaches its size cap.
SvdResult RandomizedSvd(const LinearOperator& op, const SvdOptions& options) {
  const size_t rank = options.rank;
  const size_t min_dim = std::min(op.rows(), op.cols());
  const size_t k = std::min(rank + options.oversample, min_dim);
  const size_t max_basis = std::min(op.rows(), 4 * k);

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd g(op.cols(), k);
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
  }

  Eigen::MatrixXd q = Orthonormalize(op.Apply(g));
  for (size_t it = 0; it < options.power_iters; ++it) {
    q = Orthonormalize(op.ApplyTranspose(q));
    q = Orthonormalize(op.Apply(q));
  }

  Eigen::MatrixXd basis = q;
  Eigen::MatrixXd w = op.ApplyTranspose(q);  // A^T basis
  Eigen::MatrixXd last_w = w;                // A^T of the newest block
  double residual = 0.0;
  for (size_t extra = 0;; ++extra) {
    Ritz ritz = RayleighRitz(basis, w);
    SvdResult r;
    r.left = ritz.left.leftCols(rank);
    r.right = ritz.right.leftCols(rank);
    r.values = ritz.values.head(rank);
    residual = MaxRelativeResidual(op.Apply(r.right), r);
    if (residual <= options.residual_tol) {
      FixSigns(r);
      r.max_residual = residual;
      return r;
    }
    if (extra >= options.max_extra_iters) break;

    if (static_cast<size_t>(basis.cols()) + k > max_basis && static_cast<size_t>(basis.cols()) > k) {
      // Thick restart: keep the k leading Ritz vectors.
      basis = ritz.left.leftCols(k);
      w = ritz.right.leftCols(k) * ritz.values.head(k).asDiagonal();
      last_w = w;
    }
    const size_t block = std::min(k, max_basis - static_cast<size_t>(basis.cols()));
    if (block == 0) break;
    Eigen::MatrixXd next = OrthonormalizeAgainst(basis, op.Apply(last_w.leftCols(block)));
    last_w = op.ApplyTranspose(next);
    Eigen::MatrixXd grown(basis.rows(), basis.cols() + next.cols());
    grown << basis, next;
    basis = std::move(grown);
    Eigen::MatrixXd grown_w(w.rows(), w.cols() + last_w.cols());
    grown_w << w, last_w;
    w = std::move(grown_w);
  }
  throw ConvergenceError("truncated SVD did not reach the residual tolerance", residual);
}

}  // namespace

OmegaOperator::OmegaOperator(const CooccurrenceStats& stats, double lambda_frac, unsigned threads)
    : row_sums_(stats.row_sums()),
      col_sums_(stats.col_sums()),
      lambda_frac_(lambda_frac),
      threads_(std::max(1u, threads)) {
  if (!(lambda_frac >= 0.0) || !std::isfinite(lambda_frac)) throw ConfigError("lambda_frac must be finite and >= 0");
  if (stats.triplets().empty()) throw DataError("empty co-occurrence statistics");
  lambda_x_ = lambda_frac * *std::max_element(row_sums_.begin(), row_sums_.end());
  lambda_y_ = lambda_frac * *std::max_element(col_sums_.begin(), col_sums_.end());

  std::vector<double> scale_x(rows()), scale_y(cols());
  for (size_t w = 0; w < rows(); ++w) {
    double d = row_sums_[w] + lambda_x_;
    if (!(d > 0.0)) {
      throw NumericalError("ill-conditioned input: code index " + std::to_string(w) +
                           " has zero row sum and no regularization (lambda_frac = 0)");
    }
    scale_x[w] = 1.0 / std::sqrt(d);
  }
  for (size_t c = 0; c < cols(); ++c) {
    double d = col_sums_[c] + lambda_y_;
    if (!(d > 0.0)) {
      throw NumericalError("ill-conditioned input: context index " + std::to_string(c) +
                           " has zero column sum and no regularization (lambda_frac = 0)");
    }
    scale_y[c] = 1.0 / std::sqrt(d);
  }

  auto triplets = stats.triplets();
  forward_.offsets.assign(rows() + 1, 0);
  transposed_.offsets.assign(cols() + 1, 0);
  for (const auto& t : triplets) {
    ++forward_.offsets[t.row + 1];
    ++transposed_.offsets[t.col + 1];
  }
  for (size_t i = 0; i < rows(); ++i) forward_.offsets[i + 1] += forward_.offsets[i];
  for (size_t i = 0; i < cols(); ++i) transposed_.offsets[i + 1] += transposed_.offsets[i];
  forward_.indices.resize(triplets.size());
  forward_.values.resize(triplets.size());
  transposed_.indices.resize(triplets.size());
  transposed_.values.resize(triplets.size());
  std::vector<size_t> cursor(transposed_.offsets.begin(), transposed_.offsets.end() - 1);
  // Triplets are sorted by (row, col), so both CSR layouts come out column-sorted.
  for (size_t i = 0; i < triplets.size(); ++i) {
    const auto& t = triplets[i];
    double v = t.weight * scale_x[t.row] * scale_y[t.col];
    forward_.indices[i] = t.col;
    forward_.values[i] = v;
    size_t pos = cursor[t.col]++;
    transposed_.indices[pos] = t.row;
    transposed_.values[pos] = v;
  }
}

Eigen::MatrixXd OmegaOperator::Multiply(const Csr& csr, size_t out_rows, const Eigen::MatrixXd& in) const {
  RowMatrix src = in;
  RowMatrix dst = RowMatrix::Zero(static_cast<Eigen::Index>(out_rows), in.cols());
  const size_t chunks = (out_rows + kRowsPerChunk - 1) / kRowsPerChunk;
  ParallelFor(chunks, threads_, [&](size_t chunk) {
    const size_t end = std::min(out_rows, (chunk + 1) * kRowsPerChunk);
    for (size_t r = chunk * kRowsPerChunk; r < end; ++r) {
      auto out_row = dst.row(static_cast<Eigen::Index>(r));
      for (size_t p = csr.offsets[r]; p < csr.offsets[r + 1]; ++p) {
        out_row.noalias() += csr.values[p] * src.row(csr.indices[p]);
      }
    }
  });
  return dst;
}

Eigen::MatrixXd OmegaOperator::Apply(const Eigen::MatrixXd& in) const {
  if (static_cast<size_t>(in.rows()) != cols()) throw ConfigError("omega apply: dimension mismatch");
  return Multiply(forward_, rows(), in);
}

Eigen::MatrixXd OmegaOperator::ApplyTranspose(const Eigen::MatrixXd& in) const {
  if (static_cast<size_t>(in.rows()) != rows()) throw ConfigError("omega apply-transpose: dimension mismatch");
  return Multiply(transposed_, cols(), in);
}

Eigen::MatrixXd OmegaOperator::ToDense() const {
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  for (size_t r = 0; r < rows(); ++r) {
    for (size_t p = forward_.offsets[r]; p < forward_.offsets[r + 1]; ++p) dense(r, forward_.indices[p]) = forward_.values[p];
  }
  return dense;
}

double OmegaOperator::entry(uint32_t row, uint32_t col) const {
  auto begin = forward_.indices.begin() + static_cast<std::ptrdiff_t>(forward_.offsets[row]);
  auto end = forward_.indices.begin() + static_cast<std::ptrdiff_t>(forward_.offsets[row + 1]);
  auto it = std::lower_bound(begin, end, col);
  if (it == end || *it != col) return 0.0;
  return forward_.values[static_cast<size_t>(it - forward_.indices.begin())];
}

SvdResult TruncatedSvd(const LinearOperator& op, const SvdOptions& options) {
  const size_t limit = std::min(op.rows(), op.cols());
  if (options.rank < 1 || options.rank > limit) {
    throw ConfigError("SVD rank " + std::to_string(options.rank) + " outside [1, " + std::to_string(limit) + "]");
  }
  if (std::max(op.rows(), op.cols()) <= options.dense_threshold) return DenseSvd(op, options.rank);
  return RandomizedSvd(op, options);
}

ScalingMode ParseScalingMode(std::string_view name) {
  if (name == "singular-vectors") return ScalingMode::kSingularVectors;
  if (name == "whitened") return ScalingMode::kWhitened;
  if (name == "sv-weighted") return ScalingMode::kSvWeighted;
  throw ConfigError("unknown scaling mode '" + std::string(name) +
                    "' (expected singular-vectors, whitened or sv-weighted)");
}

std::string_view ToString(ScalingMode mode) {
  switch (mode) {
    case ScalingMode::kSingularVectors: return "singular-vectors";
    case ScalingMode::kWhitened: return "whitened";
    case ScalingMode::kSvWeighted: return "sv-weighted";
  }
  return "unknown";
}

EmbeddingModel ExtractEmbeddings(const SvdResult& svd, const OmegaOperator& omega, const Vocabulary& vocab,
                                 ScalingMode mode) {
  const auto n = static_cast<Eigen::Index>(vocab.size());
  if (svd.left.rows() != n || svd.right.rows() != n || static_cast<size_t>(omega.rows()) != vocab.size() ||
      svd.left.cols() != svd.values.size() || svd.right.cols() != svd.values.size()) {
    throw ConfigError("embedding extraction: inconsistent SVD / vocabulary shapes");
  }
  EmbeddingModel model;
  model.codes = vocab.codes();
  model.sigma = svd.values;
  model.lambda_frac = omega.lambda_frac();
  model.mode = mode;
  model.vocab_hash = vocab.Hash();
  model.vectors = svd.left;
  model.context = svd.right;
  switch (mode) {
    case ScalingMode::kSingularVectors:
      break;
    case ScalingMode::kWhitened:
      for (Eigen::Index w = 0; w < n; ++w) {
        model.vectors.row(w) /= std::sqrt(omega.row_sums()[w] + omega.lambda_x());
        model.context.row(w) /= std::sqrt(omega.col_sums()[w] + omega.lambda_y());
      }
      break;
    case ScalingMode::kSvWeighted:
      model.vectors = model.vectors * svd.values.asDiagonal();
      model.context = model.context * svd.values.asDiagonal();
      break;
  }
  return model;
}

EmbeddingModel FitEmbeddings(const CooccurrenceStats& stats, const Vocabulary& vocab, const FitOptions& options) {
  if (stats.vocab_size() != vocab.size()) {
    throw DataError("stats vocabulary size " + std::to_string(stats.vocab_size()) + " does not match vocabulary size " +
                    std::to_string(vocab.size()));
  }
  OmegaOperator omega(stats, options.lambda_frac, options.threads);
  SvdOptions svd_options;
  svd_options.rank = options.dims;
  svd_options.seed = DeriveSeed(options.seed, "fit");
  svd_options.oversample = options.oversample;
  svd_options.power_iters = options.power_iters;
  svd_options.dense_threshold = options.dense_threshold;
  SvdResult svd = TruncatedSvd(omega, svd_options);
  EmbeddingModel model = ExtractEmbeddings(svd, omega, vocab, options.mode);
  model.seed = options.seed;
  return model;
}

}  // namespace medcca
