#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

#include "medcca/cca.h"
#include "medcca/cooccur.h"
#include "medcca/error.h"
#include "medcca/synthgen.h"
#include "test_support.h"

namespace {

using namespace medcca;
using testing_support::TempDir;

SynthConfig Small(uint64_t seed = 0) {
  SynthConfig c;
  c.n_persons = 400;
  c.n_codes = 60;
  c.n_topics = 6;
  c.seed = seed;
  return c;
}

TEST(SynthTest, IdenticalSeedGivesIdenticalFiles) {
  TempDir a, b, c;
  WriteSynthCorpus(GenerateSynth(Small(3)), a.path());
  WriteSynthCorpus(GenerateSynth(Small(3)), b.path());
  WriteSynthCorpus(GenerateSynth(Small(4)), c.path());
  for (const char* f : {"events.csv", "windows.csv", "topics.tsv"}) {
    EXPECT_EQ(testing_support::ReadFile(a / f), testing_support::ReadFile(b / f)) << f;
  }
  EXPECT_NE(testing_support::ReadFile(a / "events.csv"), testing_support::ReadFile(c / "events.csv"));
}

TEST(SynthTest, OutputsParseWithTheRegularReaders) {
  TempDir dir;
  auto corpus = GenerateSynth(Small());
  WriteSynthCorpus(corpus, dir.path());
  auto events = ReadEventFile(dir / "events.csv").events;
  auto windows = ReadWindowFile(dir / "windows.csv");
  EXPECT_EQ(events, corpus.events);
  ASSERT_EQ(windows.size(), corpus.windows.size());
  for (size_t i = 0; i < windows.size(); ++i) {
    EXPECT_EQ(windows[i].person_id, corpus.windows[i].person_id);
    EXPECT_EQ(windows[i].label, corpus.windows[i].label);
    EXPECT_EQ(windows[i].cutoff, corpus.windows[i].cutoff);
  }
}

TEST(SynthTest, InfeasibleConfigsAreRejected) {
  auto bad = [](auto mutate) {
    SynthConfig c = Small();
    mutate(c);
    return c;
  };
  EXPECT_THROW(GenerateSynth(bad([](SynthConfig& c) { c.n_topics = 0; })), ConfigError);
  EXPECT_THROW(GenerateSynth(bad([](SynthConfig& c) { c.n_codes = 3; })), ConfigError);
  EXPECT_THROW(GenerateSynth(bad([](SynthConfig& c) { c.noise = 1.5; })), ConfigError);
  EXPECT_THROW(GenerateSynth(bad([](SynthConfig& c) { c.base_rate = 0.0; })), ConfigError);
  EXPECT_THROW(GenerateSynth(bad([](SynthConfig& c) { c.target_topic = 6; })), ConfigError);
  EXPECT_THROW(GenerateSynth(bad([](SynthConfig& c) { c.n_persons = 0; })), ConfigError);
}

TEST(SynthTest, TopicsPartitionTheCodes) {
  auto corpus = GenerateSynth(Small());
  ASSERT_EQ(corpus.codes.size(), 60u);
  std::map<size_t, size_t> sizes;
  for (size_t t : corpus.code_topic) {
    ASSERT_LT(t, 6u);
    ++sizes[t];
  }
  ASSERT_EQ(sizes.size(), 6u);
  for (auto [t, n] : sizes) EXPECT_EQ(n, 10u);
  std::set<std::string> unique(corpus.codes.begin(), corpus.codes.end());
  EXPECT_EQ(unique.size(), 60u);
}

TEST(SynthTest, EventsStayOnEachPersonsTimeline) {
  SynthConfig cfg = Small();
  auto corpus = GenerateSynth(cfg);
  std::map<std::string, PersonWindow> window;
  for (const auto& w : corpus.windows) {
    EXPECT_EQ(w.cutoff, w.index_date + cfg.followup_days);
    window[w.person_id] = w;
  }
  for (const auto& e : corpus.events) {
    const auto& w = window.at(e.person_id);
    EXPECT_GE(e.date, w.index_date - cfg.history_days);
    EXPECT_LE(e.date, w.cutoff + cfg.tail_days);
  }
}

TEST(SynthTest, DefaultBaseRateIsNearTarget) {
  auto corpus = GenerateSynth(SynthConfig{});
  size_t positives = 0;
  for (const auto& w : corpus.windows) positives += static_cast<size_t>(w.label);
  double rate = static_cast<double>(positives) / static_cast<double>(corpus.windows.size());
  EXPECT_NEAR(rate, 0.05, 0.01);
  EXPECT_NEAR(static_cast<double>(corpus.events.size()) / 5000.0, 40.0, 1.0);
}

TEST(SynthTest, PureNoiseGivesChancePurity) {
  double total = 0.0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    SynthConfig cfg;
    cfg.n_persons = 800;
    cfg.n_codes = 200;
    cfg.noise = 1.0;
    cfg.seed = seed;
    auto corpus = GenerateSynth(cfg);
    auto vocab = Vocabulary::Build(corpus.events, 1);
    auto model = FitEmbeddings(BuildCooccurrence(corpus.events, vocab), vocab, FitOptions{});
    total += testing_support::NearestNeighborPurity(model, corpus.codes, corpus.code_topic);
  }
  EXPECT_NEAR(total / 10.0, 1.0 / 20.0, 0.03);
}

TEST(SynthTest, SingleTopicCollapsesEmbeddings) {
  SynthConfig cfg;
  cfg.n_persons = 2000;
  cfg.n_codes = 30;
  cfg.n_topics = 1;
  cfg.noise = 0.0;
  auto corpus = GenerateSynth(cfg);
  auto vocab = Vocabulary::Build(corpus.events, 1);
  FitOptions fit;
  fit.dims = 5;
  fit.mode = ScalingMode::kSvWeighted;
  auto model = FitEmbeddings(BuildCooccurrence(corpus.events, vocab), vocab, fit);

  // Baseline: independent vectors with the same per-coordinate spread.
  std::mt19937_64 rng(1);
  Eigen::VectorXd rms = (model.vectors.cwiseAbs2().colwise().mean()).cwiseSqrt().transpose();
  Eigen::MatrixXd baseline = testing_support::RandomMatrix(rng, model.vectors.rows(), 5) * rms.asDiagonal();
  auto mean_distance = [](const Eigen::MatrixXd& v) {
    double sum = 0.0;
    size_t n = 0;
    for (Eigen::Index a = 0; a < v.rows(); ++a)
      for (Eigen::Index b = a + 1; b < v.rows(); ++b, ++n) sum += (v.row(a) - v.row(b)).norm();
    return sum / static_cast<double>(n);
  };
  EXPECT_LT(mean_distance(model.vectors), 0.5 * mean_distance(baseline));
}

TEST(ShuffledControlTest, PermutesCodesAcrossSlots) {
  auto corpus = GenerateSynth(Small());
  auto shuffled = ShuffledControl(corpus.events, 9);
  ASSERT_EQ(shuffled.size(), corpus.events.size());
  std::multiset<std::string> before, after;
  size_t moved = 0;
  for (size_t i = 0; i < shuffled.size(); ++i) {
    EXPECT_EQ(shuffled[i].person_id, corpus.events[i].person_id);
    EXPECT_EQ(shuffled[i].date, corpus.events[i].date);
    before.insert(corpus.events[i].code);
    after.insert(shuffled[i].code);
    moved += shuffled[i].code != corpus.events[i].code;
  }
  EXPECT_EQ(before, after);
  EXPECT_GT(moved, shuffled.size() / 2);
  EXPECT_EQ(ShuffledControl(corpus.events, 9), shuffled);
}

}  // namespace
