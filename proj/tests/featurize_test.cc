#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "medcca/error.h"
#include "medcca/featurize.h"
#include "test_support.h"

namespace {

using namespace medcca;
using testing_support::D;
using testing_support::Ev;

const Date kIndex = D(2011, 6, 1);

PersonWindow Window(std::string id, int label = 0, Date index = kIndex) {
  return {std::move(id), index, index + kDefaultFollowupDays, label};
}

EmbeddingModel TwoDimModel() {
  EmbeddingModel m;
  m.codes = {"A", "B", "C"};
  m.vectors.resize(3, 2);
  m.vectors << 1, 0, 0, 1, 2, 2;
  m.context = m.vectors;
  m.sigma = Eigen::Vector2d(0.9, 0.5);
  return m;
}

TEST(CcaFeaturesTest, SingleCodeBeforeAndEmptyAfter) {
  auto model = TwoDimModel();
  CcaFeaturizer f(model);
  std::vector<EventRecord> ev{Ev("p", "C", kIndex - 3)};
  Eigen::VectorXd row = f.Row(ev, Window("p"));
  ASSERT_EQ(row.size(), 4);
  EXPECT_EQ(row, Eigen::Vector4d(2, 2, 0, 0));
}

TEST(CcaFeaturesTest, DuplicatesWeightTheMean) {
  auto model = TwoDimModel();
  CcaFeaturizer f(model);
  std::vector<EventRecord> ev{Ev("p", "A", kIndex - 10), Ev("p", "A", kIndex - 5), Ev("p", "B", kIndex - 1)};
  Eigen::VectorXd row = f.Row(ev, Window("p"));
  EXPECT_NEAR(row(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(row(1), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(row(2), 0.0);
  EXPECT_EQ(row(3), 0.0);
}

TEST(CcaFeaturesTest, IndexDayIsPostAndCutoffIsInclusive) {
  auto model = TwoDimModel();
  CcaFeaturizer f(model);
  auto w = Window("p");
  std::vector<EventRecord> ev{Ev("p", "A", kIndex), Ev("p", "B", w.cutoff), Ev("p", "C", w.cutoff + 1)};
  Eigen::VectorXd row = f.Row(ev, w);
  EXPECT_EQ(row, Eigen::Vector4d(0, 0, 0.5, 0.5));
}

TEST(CcaFeaturesTest, CountsSkippedAndEmptyRows) {
  auto model = TwoDimModel();
  CcaFeaturizer f(model);
  CcaFeatureStats stats;
  std::vector<EventRecord> ev{Ev("p", "Z", kIndex - 1), Ev("p", "Q", kIndex + 1)};
  Eigen::VectorXd row = f.Row(ev, Window("p"), &stats);
  EXPECT_TRUE(row.isZero());
  EXPECT_EQ(stats.skipped_codes, 2u);
  EXPECT_EQ(stats.empty_rows, 1u);
}

TEST(CcaFeaturesTest, TwentyFiveDimsGiveFiftyColumns) {
  EmbeddingModel m;
  m.codes = {"A"};
  m.vectors = Eigen::MatrixXd::Ones(1, 25);
  m.context = m.vectors;
  m.sigma = Eigen::VectorXd::Ones(25);
  std::vector<EventRecord> ev{Ev("p", "A", kIndex)};
  std::vector<PersonWindow> w{Window("p")};
  auto fm = BuildCcaFeatures(ev, w, m);
  EXPECT_EQ(fm.cols(), 50u);
  EXPECT_EQ(fm.columns.front(), "cca_pre_0");
  EXPECT_EQ(fm.columns.back(), "cca_post_24");
}

TEST(CcaFeaturesTest, SameDayOrderDoesNotMatter) {
  std::mt19937_64 rng(40);
  EmbeddingModel m;
  for (int i = 0; i < 10; ++i) m.codes.push_back("c" + std::to_string(i));
  m.vectors = testing_support::RandomMatrix(rng, 10, 3);
  m.context = m.vectors;
  m.sigma = Eigen::VectorXd::Ones(3);
  CcaFeaturizer f(m);
  std::uniform_int_distribution<int> code(0, 9), day(-4, 4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<EventRecord> ev;
    for (int i = 0; i < 30; ++i) ev.push_back(Ev("p", "c" + std::to_string(code(rng)), kIndex + day(rng)));
    auto shuffled = ev;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::stable_sort(shuffled.begin(), shuffled.end(), [](auto& a, auto& b) { return a.date < b.date; });
    EXPECT_TRUE(f.Row(ev, Window("p")) == f.Row(shuffled, Window("p")));
  }
}

TEST(NgramFeaturesTest, UnigramCounts) {
  std::vector<EventRecord> ev{Ev("p", "A", kIndex), Ev("p", "B", kIndex + 1), Ev("p", "A", kIndex + 2)};
  std::vector<PersonWindow> w{Window("p")};
  auto fm = BuildNgramFeatures(ev, w, 1, 1);
  ASSERT_EQ(fm.columns, (std::vector<std::string>{"uni:A", "uni:B"}));
  EXPECT_EQ(fm.value(0, 0), 2.0);
  EXPECT_EQ(fm.value(0, 1), 1.0);
}

TEST(NgramFeaturesTest, BigramsFollowDateThenInputOrder) {
  std::vector<EventRecord> ev{Ev("p", "A", kIndex), Ev("p", "B", kIndex + 1), Ev("p", "A", kIndex + 2)};
  std::vector<PersonWindow> w{Window("p")};
  auto fm = BuildNgramFeatures(ev, w, 2, 1);
  ASSERT_EQ(fm.columns, (std::vector<std::string>{"bi:A|B", "bi:B|A"}));
  EXPECT_EQ(fm.value(0, 0), 1.0);
  EXPECT_EQ(fm.value(0, 1), 1.0);

  // Out-of-order input is sorted by date; same-day events keep input order.
  std::vector<EventRecord> ev2{Ev("p", "C", kIndex + 5), Ev("p", "A", kIndex), Ev("p", "B", kIndex)};
  auto fm2 = BuildNgramFeatures(ev2, w, 2, 1);
  ASSERT_EQ(fm2.columns, (std::vector<std::string>{"bi:A|B", "bi:B|C"}));
}

TEST(NgramFeaturesTest, MinCountThresholdDropsColumns) {
  std::vector<EventRecord> ev;
  std::vector<PersonWindow> w;
  for (int p = 0; p < 9; ++p) {
    std::string id = "p" + std::to_string(p);
    ev.push_back(Ev(id, "A", kIndex));
    ev.push_back(Ev(id, "B", kIndex + 1));
    w.push_back(Window(id));
  }
  EXPECT_EQ(BuildNgramFeatures(ev, w, 2, 10).cols(), 0u);
  EXPECT_EQ(BuildNgramFeatures(ev, w, 2, 9).cols(), 1u);
  ev.push_back(Ev("p0", "A", kIndex + 2));
  ev.push_back(Ev("p0", "B", kIndex + 3));
  EXPECT_EQ(BuildNgramFeatures(ev, w, 2, 10).cols(), 1u);
}

TEST(NgramFeaturesTest, IgnoresEventsAfterCutoffAndCountsHistory) {
  auto win = Window("p");
  std::vector<EventRecord> ev{Ev("p", "A", kIndex - 400), Ev("p", "B", win.cutoff + 1)};
  std::vector<PersonWindow> w{win};
  auto fm = BuildNgramFeatures(ev, w, 1, 1);
  ASSERT_EQ(fm.columns, (std::vector<std::string>{"uni:A"}));
}

TEST(NgramFeaturesTest, MatchesEnumerationOracle) {
  std::mt19937_64 rng(41);
  auto events = testing_support::RandomCorpus(rng, 40, 30, 8, 700);
  std::vector<PersonWindow> windows;
  for (int p = 0; p < 40; ++p) windows.push_back(Window("p" + std::to_string(p), p % 2, D(2010, 6, 1)));
  auto fm = BuildNgramFeatures(events, windows, 2, 3);
  for (size_t r = 0; r < windows.size(); ++r) {
    std::vector<EventRecord> seq;
    for (const auto& e : events)
      if (e.person_id == windows[r].person_id && e.date <= windows[r].cutoff) seq.push_back(e);
    std::stable_sort(seq.begin(), seq.end(), [](auto& a, auto& b) { return a.date < b.date; });
    std::map<std::string, double> expect;
    for (size_t i = 0; i + 1 < seq.size(); ++i) expect["bi:" + seq[i].code + "|" + seq[i + 1].code] += 1;
    for (size_t c = 0; c < fm.cols(); ++c) {
      double want = expect.count(fm.columns[c]) ? expect[fm.columns[c]] : 0.0;
      ASSERT_EQ(fm.value(r, c), want) << fm.columns[c];
    }
  }
}

TEST(StandardizerTest, PopulationSigmaAndConstantColumns) {
  Eigen::MatrixXd x(2, 2);
  x << 1, 5, 3, 5;
  auto s = Standardizer::Fit(x);
  Eigen::MatrixXd z = s.Apply(x);
  EXPECT_EQ(z(0, 0), -1.0);
  EXPECT_EQ(z(1, 0), 1.0);
  EXPECT_EQ(z(0, 1), 0.0);
  EXPECT_EQ(z(1, 1), 0.0);
  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(3, 1, 5.0);
  EXPECT_TRUE(Standardizer::Fit(c).Apply(c).isZero());
  EXPECT_THROW(Standardizer::Fit(Eigen::MatrixXd::Ones(1, 3)), DataError);
}

TEST(StandardizerTest, AppliesTrainingStatisticsOnly) {
  Eigen::MatrixXd train(2, 1), test(2, 1);
  train << 1, 3;
  test << 10, 2;
  auto s = Standardizer::Fit(train);
  Eigen::MatrixXd z = s.Apply(test);
  EXPECT_EQ(z(0, 0), 8.0);
  EXPECT_EQ(z(1, 0), 0.0);
}

TEST(StandardizerTest, TrainingColumnsHaveUnitMoments) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd x = testing_support::RandomMatrix(rng, 50, 6);
    for (int j = 0; j < 6; ++j) x.col(j) = x.col(j) * scale(rng) + Eigen::VectorXd::Constant(50, scale(rng));
    Eigen::MatrixXd z = Standardizer::Fit(x).Apply(x);
    for (int j = 0; j < 6; ++j) {
      double mean = z.col(j).mean();
      double var = (z.col(j).array() - mean).square().mean();
      EXPECT_LE(std::abs(mean), 1e-10);
      EXPECT_NEAR(std::sqrt(var), 1.0, 1e-10);
    }
  }
}

TEST(StandardizerTest, SparseFitMatchesDenseFit) {
  std::mt19937_64 rng(43);
  auto events = testing_support::RandomCorpus(rng, 30, 20, 10, 300);
  std::vector<PersonWindow> windows;
  for (int p = 0; p < 30; ++p) windows.push_back(Window("p" + std::to_string(p), 0, D(2010, 6, 1)));
  auto fm = BuildNgramFeatures(events, windows, 1, 1);
  Eigen::MatrixXd dense(fm.rows(), fm.cols());
  for (size_t r = 0; r < fm.rows(); ++r)
    for (size_t c = 0; c < fm.cols(); ++c) dense(r, c) = fm.value(r, c);
  std::vector<size_t> rows{0, 3, 4, 7, 9, 10, 20, 29};
  Eigen::MatrixXd subset(rows.size(), fm.cols());
  for (size_t i = 0; i < rows.size(); ++i) subset.row(i) = dense.row(rows[i]);
  auto a = Standardizer::Fit(fm, rows);
  auto b = Standardizer::Fit(subset);
  EXPECT_LE((a.mean - b.mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((a.inv_scale - b.inv_scale).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FeatureMatrixTest, ConcatenationPreservesBlocks) {
  std::mt19937_64 rng(44);
  auto events = testing_support::RandomCorpus(rng, 20, 15, 6, 300);
  std::vector<PersonWindow> windows;
  for (int p = 0; p < 20; ++p) windows.push_back(Window("p" + std::to_string(p), p % 3 == 0, D(2010, 6, 1)));
  EmbeddingModel m;
  for (int i = 0; i < 6; ++i) m.codes.push_back("c" + std::to_string(i));
  m.vectors = testing_support::RandomMatrix(rng, 6, 2);
  m.context = m.vectors;
  m.sigma = Eigen::VectorXd::Ones(2);
  auto cca = BuildCcaFeatures(events, windows, m);
  auto uni = BuildNgramFeatures(events, windows, 1, 1);
  auto bi = BuildNgramFeatures(events, windows, 2, 1);
  auto all = HConcat(cca, HConcat(uni, bi, "ngrams"), "all");
  all.Validate();
  ASSERT_EQ(all.cols(), cca.cols() + uni.cols() + bi.cols());
  for (size_t r = 0; r < all.rows(); ++r) {
    size_t c = 0;
    for (const auto* block : {&cca, &uni, &bi})
      for (size_t j = 0; j < block->cols(); ++j, ++c) ASSERT_EQ(all.value(r, c), block->value(r, j));
  }
  EXPECT_EQ(all.labels, cca.labels);
}

TEST(FeatureMatrixTest, SaveLoadRoundTrip) {
  std::mt19937_64 rng(45);
  auto events = testing_support::RandomCorpus(rng, 20, 15, 6, 300);
  std::vector<PersonWindow> windows;
  for (int p = 0; p < 20; ++p) windows.push_back(Window("p" + std::to_string(p), p % 2, D(2010, 6, 1)));
  EmbeddingModel m;
  for (int i = 0; i < 6; ++i) m.codes.push_back("c" + std::to_string(i));
  m.vectors = testing_support::RandomMatrix(rng, 6, 2);
  m.context = m.vectors;
  m.sigma = Eigen::VectorXd::Ones(2);
  auto all = HConcat(BuildCcaFeatures(events, windows, m), BuildNgramFeatures(events, windows, 2, 1), "all");
  for (const auto* fm : {&all}) {
    std::stringstream buf;
    SaveFeatures(*fm, buf);
    auto back = LoadFeatures(buf);
    EXPECT_EQ(back.name, fm->name);
    EXPECT_EQ(back.ids, fm->ids);
    EXPECT_EQ(back.labels, fm->labels);
    EXPECT_EQ(back.columns, fm->columns);
    for (size_t r = 0; r < fm->rows(); ++r)
      for (size_t c = 0; c < fm->cols(); ++c) ASSERT_EQ(back.value(r, c), fm->value(r, c));
  }
}

TEST(WindowsTest, ParsesHeaderAndComputesCutoff) {
  std::istringstream in("person_id,index_date,label\np1,2011-06-01,1\np2,2011-01-01,0\n");
  auto w = ReadWindows(in);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].person_id, "p1");
  EXPECT_EQ(w[0].label, 1);
  EXPECT_EQ(w[0].cutoff, D(2011, 6, 1) + 336);
  std::ostringstream out;
  WriteWindows(out, w);
  std::istringstream again(out.str());
  auto w2 = ReadWindows(again);
  EXPECT_EQ(w2[1].index_date, w[1].index_date);
}

TEST(WindowsTest, RejectsBadRows) {
  auto read = [](const std::string& s) {
    std::istringstream in(s);
    return ReadWindows(in);
  };
  EXPECT_THROW(read("p1,2011-06-01,2\n"), FormatError);
  EXPECT_THROW(read("p1,2011-02-30,1\n"), FormatError);
  EXPECT_THROW(read("p1,2011-06-01\n"), FormatError);
  EXPECT_THROW(read("p1,2011-06-01,1\np1,2011-06-02,0\n"), DataError);
}

TEST(WindowsTest, TruncationKeepsUnwindowedPersons) {
  auto w = Window("p");
  std::vector<EventRecord> ev{Ev("p", "A", kIndex), Ev("p", "B", w.cutoff + 1), Ev("q", "C", w.cutoff + 100)};
  std::vector<PersonWindow> ws{w};
  auto kept = TruncateToWindows(ev, ws);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].code, "A");
  EXPECT_EQ(kept[1].code, "C");
}

}  // namespace
