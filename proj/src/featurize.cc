#include "medcca/featurize.h"

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include "medcca/error.h"
#include "medcca/text_io.h"

namespace medcca {

namespace {

using SparseTriplet = Eigen::Triplet<double, int64_t>;

// Window events (date <= cutoff) in date-then-input order.
std::vector<const EventRecord*> WindowEvents(const std::vector<uint32_t>* indices, std::span<const EventRecord> events,
                                             const PersonWindow& w) {
  std::vector<const EventRecord*> out;
  if (!indices) return out;
  for (uint32_t i : *indices) {
    if (events[i].date <= w.cutoff) out.push_back(&events[i]);
  }
  std::stable_sort(out.begin(), out.end(), [](const EventRecord* a, const EventRecord* b) { return a->date < b->date; });
  return out;
}

void CheckUniqueIds(std::span<const PersonWindow> windows) {
  std::unordered_set<std::string> seen;
  for (const auto& w : windows) {
    if (!seen.insert(w.person_id).second) throw DataError("duplicate window for person '" + w.person_id + "'");
  }
}

}  // namespace

std::vector<PersonWindow> ReadWindows(std::istream& in, int32_t followup_days, std::string_view source) {
  if (followup_days < 0) throw ConfigError("followup days must be >= 0");
  const std::string src(source);
  std::vector<PersonWindow> windows;
  std::string line;
  size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = text::StripCr(line);
    if (view.empty()) continue;
    auto fields = text::Split(view, ',');
    if (first) {
      first = false;
      if (fields.size() == 3 && fields[1] == "index_date") continue;
    }
    if (fields.size() != 3) throw FormatError(src, line_no, "expected person_id,index_date,label");
    if (fields[0].empty()) throw FormatError(src, line_no, "empty person_id");
    auto date = ParseIsoDate(fields[1]);
    if (!date) throw FormatError(src, line_no, "invalid index_date '" + std::string(fields[1]) + "'");
    if (fields[2] != "0" && fields[2] != "1") throw FormatError(src, line_no, "label must be 0 or 1");
    windows.push_back({std::string(fields[0]), *date, *date + followup_days, fields[2] == "1" ? 1 : 0});
  }
  CheckUniqueIds(windows);
  return windows;
}

std::vector<PersonWindow> ReadWindowFile(const std::filesystem::path& path, int32_t followup_days) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open windows file: " + path.string());
  return ReadWindows(in, followup_days, path.string());
}

void WriteWindows(std::ostream& out, std::span<const PersonWindow> windows) {
  out << "person_id,index_date,label\n";
  for (const auto& w : windows) out << w.person_id << ',' << FormatIsoDate(w.index_date) << ',' << w.label << '\n';
}

std::vector<EventRecord> TruncateToWindows(std::span<const EventRecord> events, std::span<const PersonWindow> windows) {
  std::unordered_map<std::string, Date> cutoff;
  for (const auto& w : windows) cutoff.emplace(w.person_id, w.cutoff);
  std::vector<EventRecord> out;
  out.reserve(events.size());
  for (const auto& e : events) {
    auto it = cutoff.find(e.person_id);
    if (it == cutoff.end() || e.date <= it->second) out.push_back(e);
  }
  return out;
}

double FeatureMatrix::value(size_t row, size_t col) const {
  if (col < dense_cols()) return dense(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col));
  return sparse.coeff(static_cast<int64_t>(row), static_cast<int64_t>(col - dense_cols()));
}

void FeatureMatrix::Validate() const {
  const auto n = static_cast<Eigen::Index>(ids.size());
  if (labels.size() != ids.size()) throw DataError("feature matrix: labels do not align with rows");
  if (dense.rows() != n && dense.cols() > 0) throw DataError("feature matrix: dense block row count mismatch");
  if (sparse.rows() != n && sparse.cols() > 0) throw DataError("feature matrix: sparse block row count mismatch");
  if (columns.size() != dense_cols() + static_cast<size_t>(sparse.cols())) {
    throw DataError("feature matrix: column names do not match column count");
  }
  std::unordered_set<std::string> seen;
  for (const auto& c : columns) {
    if (!seen.insert(c).second) throw DataError("feature matrix: duplicate column name '" + c + "'");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("feature matrix: labels must be 0 or 1");
  }
}

FeatureMatrix HConcat(const FeatureMatrix& a, const FeatureMatrix& b, std::string name) {
  if (a.ids != b.ids || a.labels != b.labels) throw DataError("cannot concatenate feature matrices over different rows");
  FeatureMatrix out;
  out.name = std::move(name);
  out.ids = a.ids;
  out.labels = a.labels;
  const auto n = static_cast<Eigen::Index>(a.rows());
  out.dense.resize(n, a.dense.cols() + b.dense.cols());
  if (a.dense.cols() > 0) out.dense.leftCols(a.dense.cols()) = a.dense;
  if (b.dense.cols() > 0) out.dense.rightCols(b.dense.cols()) = b.dense;

  std::vector<SparseTriplet> trip;
  trip.reserve(static_cast<size_t>(a.sparse.nonZeros() + b.sparse.nonZeros()));
  for (int64_t r = 0; r < a.sparse.outerSize(); ++r) {
    for (SparseRowMatrix::InnerIterator it(a.sparse, r); it; ++it) trip.emplace_back(r, it.col(), it.value());
  }
  for (int64_t r = 0; r < b.sparse.outerSize(); ++r) {
    for (SparseRowMatrix::InnerIterator it(b.sparse, r); it; ++it) trip.emplace_back(r, a.sparse.cols() + it.col(), it.value());
  }
  out.sparse.resize(n, a.sparse.cols() + b.sparse.cols());
  out.sparse.setFromTriplets(trip.begin(), trip.end());

  out.columns.insert(out.columns.end(), a.columns.begin(), a.columns.begin() + static_cast<std::ptrdiff_t>(a.dense_cols()));
  out.columns.insert(out.columns.end(), b.columns.begin(), b.columns.begin() + static_cast<std::ptrdiff_t>(b.dense_cols()));
  out.columns.insert(out.columns.end(), a.columns.begin() + static_cast<std::ptrdiff_t>(a.dense_cols()), a.columns.end());
  out.columns.insert(out.columns.end(), b.columns.begin() + static_cast<std::ptrdiff_t>(b.dense_cols()), b.columns.end());
  out.Validate();
  return out;
}

void SaveFeatures(const FeatureMatrix& fm, std::ostream& out) {
  fm.Validate();
  const bool sparse = fm.sparse.cols() > 0;
  out << "# feature_set=" << fm.name << '\n';
  out << "# format=" << (sparse ? "sparse" : "dense") << '\n';
  if (sparse) out << "# dense_columns=" << fm.dense_cols() << '\n';
  out << "person_id\tlabel";
  for (const auto& c : fm.columns) {
    if (c.find('\t') != std::string::npos) throw DataError("column name contains a tab: " + c);
    out << '\t' << c;
  }
  out << '\n';
  for (size_t r = 0; r < fm.rows(); ++r) {
    out << fm.ids[r] << '\t' << fm.labels[r];
    const auto row = static_cast<Eigen::Index>(r);
    if (!sparse) {
      for (Eigen::Index j = 0; j < fm.dense.cols(); ++j) out << '\t' << text::FormatDouble(fm.dense(row, j));
    } else {
      for (Eigen::Index j = 0; j < fm.dense.cols(); ++j) {
        if (fm.dense(row, j) != 0.0) out << '\t' << j << ':' << text::FormatDouble(fm.dense(row, j));
      }
      for (SparseRowMatrix::InnerIterator it(fm.sparse, row); it; ++it) {
        if (it.value() != 0.0) {
          out << '\t' << (fm.dense.cols() + it.col()) << ':' << text::FormatDouble(it.value());
        }
      }
    }
    out << '\n';
  }
}

void SaveFeatures(const FeatureMatrix& fm, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write features file: " + path.string());
  SaveFeatures(fm, out);
  if (!out) throw DataError("write failed: " + path.string());
}

FeatureMatrix LoadFeatures(std::istream& in, std::string_view source) {
  const std::string src(source);
  FeatureMatrix fm;
  std::optional<std::string> format;
  size_t dense_cols = 0;
  bool have_columns = false;
  std::vector<std::vector<double>> dense_rows;
  std::vector<SparseTriplet> trip;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = text::StripCr(line);
    if (view.empty()) continue;
    if (view[0] == '#' && !have_columns) {
      auto header = text::ParseHeader(view);
      if (!header) throw FormatError(src, line_no, "malformed header line");
      if (header->first == "feature_set") fm.name = std::string(header->second);
      if (header->first == "format") format = std::string(header->second);
      if (header->first == "dense_columns") {
        auto v = text::ParseInt<size_t>(header->second);
        if (!v) throw FormatError(src, line_no, "bad dense_columns");
        dense_cols = *v;
      }
      continue;
    }
    auto fields = text::Split(view, '\t');
    if (!have_columns) {
      if (!format || (*format != "dense" && *format != "sparse")) {
        throw FormatError(src, line_no, "missing or unknown '# format=' header");
      }
      if (fields.size() < 2 || fields[0] != "person_id" || fields[1] != "label") {
        throw FormatError(src, line_no, "expected column header starting with person_id<TAB>label");
      }
      for (size_t j = 2; j < fields.size(); ++j) fm.columns.emplace_back(fields[j]);
      if (*format == "dense") dense_cols = fm.columns.size();
      if (dense_cols > fm.columns.size()) throw FormatError(src, line_no, "dense_columns exceeds column count");
      have_columns = true;
      continue;
    }
    if (fields.size() < 2) throw FormatError(src, line_no, "expected person_id<TAB>label");
    if (fields[1] != "0" && fields[1] != "1") throw FormatError(src, line_no, "label must be 0 or 1");
    const auto row = static_cast<int64_t>(fm.ids.size());
    fm.ids.emplace_back(fields[0]);
    fm.labels.push_back(fields[1] == "1" ? 1 : 0);
    std::vector<double> dense_row(dense_cols, 0.0);
    if (*format == "dense") {
      if (fields.size() != fm.columns.size() + 2) throw FormatError(src, line_no, "wrong number of values");
      for (size_t j = 0; j < dense_cols; ++j) {
        auto v = text::ParseDouble(fields[j + 2]);
        if (!v) throw FormatError(src, line_no, "bad value '" + std::string(fields[j + 2]) + "'");
        dense_row[j] = *v;
      }
    } else {
      for (size_t f = 2; f < fields.size(); ++f) {
        auto colon = fields[f].find(':');
        if (colon == std::string_view::npos) throw FormatError(src, line_no, "expected col:value");
        auto j = text::ParseInt<size_t>(fields[f].substr(0, colon));
        auto v = text::ParseDouble(fields[f].substr(colon + 1));
        if (!j || !v || *j >= fm.columns.size()) throw FormatError(src, line_no, "bad sparse entry");
        if (*j < dense_cols) {
          dense_row[*j] = *v;
        } else if (*v != 0.0) {
          trip.emplace_back(row, static_cast<int64_t>(*j - dense_cols), *v);
        }
      }
    }
    dense_rows.push_back(std::move(dense_row));
  }
  if (!have_columns) throw FormatError(src, line_no, "missing column header");
  const auto n = static_cast<Eigen::Index>(fm.ids.size());
  fm.dense.resize(n, static_cast<Eigen::Index>(dense_cols));
  for (Eigen::Index r = 0; r < n; ++r) {
    for (size_t j = 0; j < dense_cols; ++j) fm.dense(r, static_cast<Eigen::Index>(j)) = dense_rows[r][j];
  }
  fm.sparse.resize(n, static_cast<int64_t>(fm.columns.size() - dense_cols));
  fm.sparse.setFromTriplets(trip.begin(), trip.end());
  try {
    fm.Validate();
  } catch (const DataError& e) {
    throw FormatError(src, line_no, e.what());
  }
  return fm;
}

FeatureMatrix LoadFeatures(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open features file: " + path.string());
  return LoadFeatures(in, path.string());
}

CcaFeaturizer::CcaFeaturizer(const EmbeddingModel& model) : model_(model) {
  for (uint32_t i = 0; i < model.size(); ++i) index_.emplace(model.codes[i], i);
}

Eigen::VectorXd CcaFeaturizer::Row(std::span<const EventRecord* const> events, const PersonWindow& window,
                                   CcaFeatureStats* stats) const {
  const auto m = static_cast<Eigen::Index>(model_.dims());
  // Sorting by (date, code row) makes the sums independent of same-day order.
  std::vector<std::pair<int32_t, uint32_t>> pre, post;
  for (const EventRecord* e : events) {
    if (e->date > window.cutoff) continue;
    auto it = index_.find(e->code);
    if (it == index_.end()) {
      if (stats) ++stats->skipped_codes;
      continue;
    }
    (e->date < window.index_date ? pre : post).emplace_back(e->date.days(), it->second);
  }
  Eigen::VectorXd row = Eigen::VectorXd::Zero(2 * m);
  auto average = [&](std::vector<std::pair<int32_t, uint32_t>>& segment, Eigen::Index offset) {
    if (segment.empty()) return;
    std::sort(segment.begin(), segment.end());
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(m);
    for (const auto& [day, idx] : segment) sum += model_.vectors.row(idx).transpose();
    row.segment(offset, m) = sum / static_cast<double>(segment.size());
  };
  average(pre, 0);
  average(post, m);
  if (pre.empty() && post.empty() && stats) ++stats->empty_rows;
  return row;
}

Eigen::VectorXd CcaFeaturizer::Row(std::span<const EventRecord> events, const PersonWindow& window,
                                   CcaFeatureStats* stats) const {
  std::vector<const EventRecord*> ptrs;
  for (const auto& e : events) ptrs.push_back(&e);
  return Row(std::span<const EventRecord* const>(ptrs), window, stats);
}

FeatureMatrix BuildCcaFeatures(std::span<const EventRecord> events, std::span<const PersonWindow> windows,
                               const EmbeddingModel& model, CcaFeatureStats* stats) {
  CheckUniqueIds(windows);
  CcaFeaturizer featurizer(model);
  PersonGroups groups = GroupByPerson(events);
  FeatureMatrix fm;
  fm.name = "cca";
  const auto m = model.dims();
  for (size_t j = 0; j < m; ++j) fm.columns.push_back("cca_pre_" + std::to_string(j));
  for (size_t j = 0; j < m; ++j) fm.columns.push_back("cca_post_" + std::to_string(j));
  fm.dense.resize(static_cast<Eigen::Index>(windows.size()), static_cast<Eigen::Index>(2 * m));
  fm.sparse.resize(static_cast<Eigen::Index>(windows.size()), 0);
  std::vector<const EventRecord*> person;
  for (size_t r = 0; r < windows.size(); ++r) {
    const auto& w = windows[r];
    person.clear();
    if (auto it = groups.position.find(w.person_id); it != groups.position.end()) {
      for (uint32_t i : groups.event_indices[it->second]) person.push_back(&events[i]);
    }
    fm.dense.row(static_cast<Eigen::Index>(r)) = featurizer.Row(std::span<const EventRecord* const>(person), w, stats);
    fm.ids.push_back(w.person_id);
    fm.labels.push_back(w.label);
  }
  return fm;
}

FeatureMatrix BuildNgramFeatures(std::span<const EventRecord> events, std::span<const PersonWindow> windows, int n,
                                 uint64_t min_count) {
  if (n != 1 && n != 2) throw ConfigError("n-gram order must be 1 or 2");
  CheckUniqueIds(windows);
  PersonGroups groups = GroupByPerson(events);

  // Per-person term counts keyed by column name, built in window order.
  std::vector<std::map<std::string, double>> per_person(windows.size());
  std::unordered_map<std::string, uint64_t> corpus;
  for (size_t r = 0; r < windows.size(); ++r) {
    auto it = groups.position.find(windows[r].person_id);
    auto seq = WindowEvents(it == groups.position.end() ? nullptr : &groups.event_indices[it->second], events, windows[r]);
    auto& counts = per_person[r];
    if (n == 1) {
      for (const EventRecord* e : seq) counts["uni:" + e->code] += 1.0;
    } else {
      for (size_t i = 0; i + 1 < seq.size(); ++i) counts["bi:" + seq[i]->code + "|" + seq[i + 1]->code] += 1.0;
    }
    for (const auto& [name, c] : counts) corpus[name] += static_cast<uint64_t>(c);
  }

  std::vector<std::pair<std::string, uint64_t>> kept;
  for (const auto& [name, c] : corpus) {
    if (c >= min_count) kept.emplace_back(name, c);
  }
  std::sort(kept.begin(), kept.end(),
            [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
  std::unordered_map<std::string, int64_t> column;
  FeatureMatrix fm;
  fm.name = n == 1 ? "unigram" : "bigram";
  for (size_t j = 0; j < kept.size(); ++j) {
    column.emplace(kept[j].first, static_cast<int64_t>(j));
    fm.columns.push_back(kept[j].first);
  }
  std::vector<SparseTriplet> trip;
  for (size_t r = 0; r < windows.size(); ++r) {
    for (const auto& [name, c] : per_person[r]) {
      if (auto it = column.find(name); it != column.end()) trip.emplace_back(static_cast<int64_t>(r), it->second, c);
    }
    fm.ids.push_back(windows[r].person_id);
    fm.labels.push_back(windows[r].label);
  }
  fm.dense.resize(static_cast<Eigen::Index>(windows.size()), 0);
  fm.sparse.resize(static_cast<int64_t>(windows.size()), static_cast<int64_t>(kept.size()));
  fm.sparse.setFromTriplets(trip.begin(), trip.end());
  return fm;
}

Standardizer Standardizer::Fit(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 2) throw DataError("standardization needs at least 2 training rows");
  Standardizer s;
  const double n = static_cast<double>(rows.rows());
  s.mean = rows.colwise().mean().transpose();
  s.inv_scale.resize(rows.cols());
  for (Eigen::Index j = 0; j < rows.cols(); ++j) {
    auto col = rows.col(j);
    if (col.maxCoeff() == col.minCoeff()) {
      s.inv_scale(j) = 0.0;
      continue;
    }
    double var = (col.array() - s.mean(j)).square().sum() / n;
    s.inv_scale(j) = 1.0 / std::sqrt(var);
  }
  return s;
}

Standardizer Standardizer::Fit(const FeatureMatrix& fm, std::span<const size_t> rows) {
  if (rows.size() < 2) throw DataError("standardization needs at least 2 training rows");
  const Eigen::Index d = fm.dense.cols();
  const Eigen::Index p = d + fm.sparse.cols();
  const double n = static_cast<double>(rows.size());
  Standardizer s;
  s.mean = Eigen::VectorXd::Zero(p);
  s.inv_scale = Eigen::VectorXd::Zero(p);

  if (d > 0) {
    Eigen::MatrixXd block(static_cast<Eigen::Index>(rows.size()), d);
    for (size_t i = 0; i < rows.size(); ++i) block.row(static_cast<Eigen::Index>(i)) = fm.dense.row(static_cast<Eigen::Index>(rows[i]));
    Standardizer dense = Fit(block);
    s.mean.head(d) = dense.mean;
    s.inv_scale.head(d) = dense.inv_scale;
  }

  const Eigen::Index q = fm.sparse.cols();
  if (q == 0) return s;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(q);
  std::vector<size_t> nnz(static_cast<size_t>(q), 0);
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(q, std::numeric_limits<double>::infinity());
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(q, -std::numeric_limits<double>::infinity());
  for (size_t r : rows) {
    for (SparseRowMatrix::InnerIterator it(fm.sparse, static_cast<int64_t>(r)); it; ++it) {
      sum(it.col()) += it.value();
      ++nnz[static_cast<size_t>(it.col())];
      lo(it.col()) = std::min(lo(it.col()), it.value());
      hi(it.col()) = std::max(hi(it.col()), it.value());
    }
  }
  Eigen::VectorXd mean = sum / n;
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(q);
  for (size_t r : rows) {
    for (SparseRowMatrix::InnerIterator it(fm.sparse, static_cast<int64_t>(r)); it; ++it) {
      double dev = it.value() - mean(it.col());
      ss(it.col()) += dev * dev;
    }
  }
  for (Eigen::Index j = 0; j < q; ++j) {
    const size_t zeros = rows.size() - nnz[static_cast<size_t>(j)];
    if (zeros > 0) {
      lo(j) = std::min(lo(j), 0.0);
      hi(j) = std::max(hi(j), 0.0);
    }
    s.mean(d + j) = mean(j);
    if (hi(j) == lo(j)) continue;
    double var = (ss(j) + static_cast<double>(zeros) * mean(j) * mean(j)) / n;
    s.inv_scale(d + j) = 1.0 / std::sqrt(var);
  }
  return s;
}

Eigen::MatrixXd Standardizer::Apply(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != mean.size()) throw DataError("standardizer: column count mismatch");
  return (rows.rowwise() - mean.transpose()).array().rowwise() * inv_scale.transpose().array();
}

}  // namespace medcca
