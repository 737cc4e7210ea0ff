#include "medcca/embed_store.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "medcca/text_io.h"

namespace medcca {

namespace {

size_t EditDistance(std::string_view a, std::string_view b) {
  std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), size_t{0});
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<std::string> ClosestCodes(const std::vector<std::string>& codes, std::string_view query, size_t n) {
  std::vector<std::pair<size_t, size_t>> scored;
  scored.reserve(codes.size());
  for (size_t i = 0; i < codes.size(); ++i) scored.emplace_back(EditDistance(codes[i], query), i);
  n = std::min(n, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end());
  std::vector<std::string> out;
  for (size_t i = 0; i < n; ++i) out.push_back(codes[scored[i].second]);
  return out;
}

std::string JoinSigma(const Eigen::VectorXd& sigma) {
  std::string s;
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (i) s += ',';
    s += text::FormatDouble(sigma(i));
  }
  return s;
}

}  // namespace

NeighborResult NearestNeighbors(const EmbeddingModel& model, uint32_t index, size_t k) {
  if (index >= model.size()) throw DataError("neighbor query index out of range");
  if (k < 1) throw ConfigError("k must be >= 1");
  NeighborResult result;
  result.query = model.codes[index];
  const auto query = model.vectors.row(index);
  std::vector<std::pair<double, uint32_t>> scored;
  scored.reserve(model.size());
  for (uint32_t i = 0; i < model.size(); ++i) {
    if (i == index) continue;
    scored.emplace_back((model.vectors.row(i) - query).squaredNorm(), i);
  }
  k = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end());
  for (size_t i = 0; i < k; ++i) {
    result.neighbors.push_back({model.codes[scored[i].second], scored[i].second, std::sqrt(scored[i].first)});
  }
  return result;
}

NeighborResult NearestNeighbors(const EmbeddingModel& model, std::string_view code, size_t k) {
  auto it = std::find(model.codes.begin(), model.codes.end(), code);
  if (it == model.codes.end()) {
    auto hints = ClosestCodes(model.codes, code, 5);
    std::string msg = "unknown code '" + std::string(code) + "'";
    if (!hints.empty()) {
      msg += "; closest matches:";
      for (const auto& h : hints) msg += " " + h;
    }
    throw LookupError(msg, std::move(hints));
  }
  return NearestNeighbors(model, static_cast<uint32_t>(it - model.codes.begin()), k);
}

std::filesystem::path ContextPath(const std::filesystem::path& model_path) {
  return model_path.string() + ".context";
}

void WriteModelVectors(std::ostream& out, const EmbeddingModel& model, const Eigen::MatrixXd& vectors) {
  out << "# dims=" << model.dims() << '\n';
  out << "# lambda_frac=" << text::FormatDouble(model.lambda_frac) << '\n';
  out << "# mode=" << ToString(model.mode) << '\n';
  out << "# seed=" << model.seed << '\n';
  out << "# sigma=" << JoinSigma(model.sigma) << '\n';
  out << "# vocab_hash=" << model.vocab_hash << '\n';
  out << "# codes=" << model.size() << '\n';
  for (size_t i = 0; i < model.size(); ++i) {
    out << model.codes[i];
    for (Eigen::Index j = 0; j < vectors.cols(); ++j) out << '\t' << text::FormatDouble(vectors(i, j));
    out << '\n';
  }
}

EmbeddingModel ReadModelVectors(std::istream& in, std::string_view source) {
  const std::string src(source);
  EmbeddingModel model;
  std::optional<size_t> dims, n_codes;
  bool have_lambda = false, have_mode = false, have_seed = false, have_sigma = false, have_hash = false;
  std::vector<std::vector<double>> rows;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = text::StripCr(line);
    if (view.empty()) continue;
    if (view[0] == '#') {
      if (!rows.empty()) throw FormatError(src, line_no, "header line after data");
      auto header = text::ParseHeader(view);
      if (!header) throw FormatError(src, line_no, "malformed header line");
      auto [key, value] = *header;
      if (key == "dims") {
        dims = text::ParseInt<size_t>(value);
        if (!dims || *dims == 0) throw FormatError(src, line_no, "bad dims");
      } else if (key == "lambda_frac") {
        auto v = text::ParseDouble(value);
        if (!v) throw FormatError(src, line_no, "bad lambda_frac");
        model.lambda_frac = *v;
        have_lambda = true;
      } else if (key == "mode") {
        try {
          model.mode = ParseScalingMode(value);
        } catch (const ConfigError& e) {
          throw FormatError(src, line_no, e.what());
        }
        have_mode = true;
      } else if (key == "seed") {
        auto v = text::ParseInt<uint64_t>(value);
        if (!v) throw FormatError(src, line_no, "bad seed");
        model.seed = *v;
        have_seed = true;
      } else if (key == "sigma") {
        auto parts = text::Split(value, ',');
        model.sigma.resize(static_cast<Eigen::Index>(parts.size()));
        for (size_t i = 0; i < parts.size(); ++i) {
          auto v = text::ParseDouble(parts[i]);
          if (!v) throw FormatError(src, line_no, "bad sigma value");
          model.sigma(static_cast<Eigen::Index>(i)) = *v;
        }
        have_sigma = true;
      } else if (key == "vocab_hash") {
        auto v = text::ParseInt<uint64_t>(value);
        if (!v) throw FormatError(src, line_no, "bad vocab_hash");
        model.vocab_hash = *v;
        have_hash = true;
      } else if (key == "codes") {
        n_codes = text::ParseInt<size_t>(value);
        if (!n_codes) throw FormatError(src, line_no, "bad codes count");
      }
      continue;
    }
    if (!dims || !have_lambda || !have_mode || !have_seed || !have_sigma || !have_hash || !n_codes) {
      throw FormatError(src, line_no, "incomplete model header");
    }
    if (static_cast<size_t>(model.sigma.size()) != *dims) {
      throw FormatError(src, line_no, "sigma list length does not match dims");
    }
    auto fields = text::Split(view, '\t');
    if (fields.size() != *dims + 1) {
      throw FormatError(src, line_no,
                        "expected code plus " + std::to_string(*dims) + " values, got " + std::to_string(fields.size() - 1));
    }
    if (fields[0].empty()) throw FormatError(src, line_no, "empty code");
    std::vector<double> row(*dims);
    for (size_t j = 0; j < *dims; ++j) {
      auto v = text::ParseDouble(fields[j + 1]);
      if (!v) throw FormatError(src, line_no, "bad vector value '" + std::string(fields[j + 1]) + "'");
      row[j] = *v;
    }
    model.codes.emplace_back(fields[0]);
    rows.push_back(std::move(row));
  }
  if (!dims || !n_codes) throw FormatError(src, line_no, "incomplete model header");
  if (rows.size() != *n_codes) {
    throw FormatError(src, line_no,
                      "expected " + std::to_string(*n_codes) + " code rows, found " + std::to_string(rows.size()));
  }
  model.vectors.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(*dims));
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < *dims; ++j) model.vectors(i, j) = rows[i][j];
  }
  return model;
}

void SaveModel(const EmbeddingModel& model, const std::filesystem::path& path) {
  for (const auto& [p, m] : {std::pair{path, &model.vectors}, std::pair{ContextPath(path), &model.context}}) {
    std::ofstream out(p);
    if (!out) throw DataError("cannot write model file: " + p.string());
    WriteModelVectors(out, model, *m);
    if (!out) throw DataError("write failed: " + p.string());
  }
}

EmbeddingModel LoadModel(const std::filesystem::path& path, const Vocabulary* expected) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file: " + path.string());
  EmbeddingModel model = ReadModelVectors(in, path.string());

  std::ifstream ctx_in(ContextPath(path));
  if (ctx_in) {
    EmbeddingModel ctx = ReadModelVectors(ctx_in, ContextPath(path).string());
    if (ctx.codes != model.codes || ctx.dims() != model.dims()) {
      throw DataError("context file does not match model file: " + ContextPath(path).string());
    }
    model.context = std::move(ctx.vectors);
  }
  if (expected && expected->Hash() != model.vocab_hash) {
    throw DataError("model " + path.string() + " was fitted on a different vocabulary (hash mismatch)");
  }
  return model;
}

}  // namespace medcca
