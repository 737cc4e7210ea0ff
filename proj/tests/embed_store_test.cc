#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "medcca/embed_store.h"
#include "medcca/error.h"
#include "test_support.h"

namespace {

using namespace medcca;
using testing_support::TempDir;

EmbeddingModel MakeModel(std::vector<std::string> codes, Eigen::MatrixXd vectors) {
  EmbeddingModel m;
  m.codes = std::move(codes);
  m.vectors = vectors;
  m.context = -vectors;
  m.sigma = Eigen::VectorXd::LinSpaced(vectors.cols(), 0.9, 0.1);
  m.lambda_frac = 0.01;
  m.mode = ScalingMode::kWhitened;
  m.seed = 77;
  m.vocab_hash = 0x1234abcdull;
  return m;
}

EmbeddingModel RandomModel(std::mt19937_64& rng, size_t n, Eigen::Index dims) {
  std::vector<std::string> codes;
  for (size_t i = 0; i < n; ++i) codes.push_back("code" + std::to_string(i));
  return MakeModel(codes, testing_support::RandomMatrix(rng, static_cast<Eigen::Index>(n), dims));
}

TEST(NearestNeighborsTest, CollinearPoints) {
  Eigen::MatrixXd v(3, 2);
  v << 0, 0, 1, 0, 3, 0;
  auto model = MakeModel({"e1", "e2", "e3"}, v);
  auto r = NearestNeighbors(model, "e1", 2);
  ASSERT_EQ(r.neighbors.size(), 2u);
  EXPECT_EQ(r.neighbors[0].code, "e2");
  EXPECT_EQ(r.neighbors[0].distance, 1.0);
  EXPECT_EQ(r.neighbors[1].code, "e3");
  EXPECT_EQ(r.neighbors[1].distance, 3.0);
}

TEST(NearestNeighborsTest, ClampsKToVocabularyMinusOne) {
  Eigen::MatrixXd v(2, 2);
  v << 0, 0, 1, 1;
  auto model = MakeModel({"a", "b"}, v);
  auto r = NearestNeighbors(model, "a", 3);
  ASSERT_EQ(r.neighbors.size(), 1u);
  EXPECT_EQ(r.neighbors[0].code, "b");
}

TEST(NearestNeighborsTest, TiesGoToLowerIndex) {
  Eigen::MatrixXd v(4, 1);
  v << 0, 1, -1, 1;
  auto model = MakeModel({"q", "r", "s", "t"}, v);
  auto r = NearestNeighbors(model, 0u, 3);
  ASSERT_EQ(r.neighbors.size(), 3u);
  EXPECT_EQ(r.neighbors[0].index, 1u);
  EXPECT_EQ(r.neighbors[1].index, 2u);
  EXPECT_EQ(r.neighbors[2].index, 3u);
}

TEST(NearestNeighborsTest, UnknownCodeSuggestsCloseStrings) {
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(3, 2);
  auto model = MakeModel({"icd9-56211", "icd9-78900", "cpt-72193"}, v);
  try {
    NearestNeighbors(model, "icd9-56212", 2);
    FAIL() << "expected LookupError";
  } catch (const LookupError& e) {
    ASSERT_FALSE(e.suggestions().empty());
    EXPECT_EQ(e.suggestions()[0], "icd9-56211");
    EXPECT_NE(std::string(e.what()).find("icd9-56211"), std::string::npos);
  }
}

TEST(NearestNeighborsTest, MatchesLinearScanOracle) {
  std::mt19937_64 rng(31);
  for (size_t n : {2u, 10u, 200u, 1000u}) {
    auto model = RandomModel(rng, n, 6);
    std::uniform_int_distribution<uint32_t> pick(0, static_cast<uint32_t>(n - 1));
    for (int q = 0; q < 20; ++q) {
      uint32_t query = pick(rng);
      std::vector<std::pair<double, uint32_t>> scan;
      for (uint32_t j = 0; j < n; ++j) {
        if (j == query) continue;
        scan.push_back({(model.vectors.row(query) - model.vectors.row(j)).norm(), j});
      }
      std::sort(scan.begin(), scan.end());
      auto r = NearestNeighbors(model, query, 5);
      ASSERT_EQ(r.neighbors.size(), std::min<size_t>(5, n - 1));
      for (size_t i = 0; i < r.neighbors.size(); ++i) {
        EXPECT_EQ(r.neighbors[i].index, scan[i].second);
        EXPECT_NEAR(r.neighbors[i].distance, scan[i].first, 1e-12);
        if (i > 0) { EXPECT_LE(r.neighbors[i - 1].distance, r.neighbors[i].distance); }
      }
    }
  }
}

TEST(NearestNeighborsTest, DistanceIsSymmetric) {
  std::mt19937_64 rng(32);
  auto model = RandomModel(rng, 50, 4);
  for (uint32_t a = 0; a < 50; a += 7) {
    auto ra = NearestNeighbors(model, a, 49);
    for (const auto& nb : ra.neighbors) {
      auto rb = NearestNeighbors(model, nb.index, 49);
      auto it = std::find_if(rb.neighbors.begin(), rb.neighbors.end(), [&](auto& x) { return x.index == a; });
      ASSERT_NE(it, rb.neighbors.end());
      EXPECT_EQ(it->distance, nb.distance);
    }
  }
}

TEST(ModelIoTest, RoundTripIsBitExact) {
  TempDir dir;
  std::mt19937_64 rng(33);
  auto model = RandomModel(rng, 3, 4);
  model.vectors(0, 0) = 1.0 / 3.0;
  model.vectors(1, 1) = -5e-300;
  auto path = dir / "model.tsv";
  SaveModel(model, path);
  EXPECT_TRUE(std::filesystem::exists(ContextPath(path)));
  auto back = LoadModel(path);
  EXPECT_EQ(back.codes, model.codes);
  EXPECT_TRUE(back.vectors == model.vectors);
  EXPECT_TRUE(back.context == model.context);
  EXPECT_TRUE(back.sigma == model.sigma);
  EXPECT_EQ(back.lambda_frac, model.lambda_frac);
  EXPECT_EQ(back.mode, model.mode);
  EXPECT_EQ(back.seed, model.seed);
  EXPECT_EQ(back.vocab_hash, model.vocab_hash);
}

TEST(ModelIoTest, WritesDocumentedHeader) {
  Eigen::MatrixXd v(1, 2);
  v << 0.5, -0.25;
  auto model = MakeModel({"a"}, v);
  std::ostringstream out;
  WriteModelVectors(out, model, model.vectors);
  const std::string text = out.str();
  for (const char* key : {"# dims=2\n", "# lambda_frac=0.01\n", "# mode=whitened\n", "# seed=77\n", "# sigma="})
    EXPECT_NE(text.find(key), std::string::npos) << key;
  EXPECT_NE(text.find("a\t0.5\t-0.25\n"), std::string::npos);
}

TEST(ModelIoTest, TruncatedLastLineIsFormatErrorAtThatLine) {
  TempDir dir;
  std::mt19937_64 rng(34);
  auto model = RandomModel(rng, 3, 4);
  auto path = dir / "model.tsv";
  SaveModel(model, path);
  std::string text = testing_support::ReadFile(path);
  size_t lines = static_cast<size_t>(std::count(text.begin(), text.end(), '\n'));
  text = text.substr(0, text.size() - 1);
  text = text.substr(0, text.rfind('\t'));  // drop the last value
  testing_support::WriteFile(path, text);
  try {
    LoadModel(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), lines);
  }
}

TEST(ModelIoTest, RejectsMalformedFiles) {
  auto read = [](const std::string& s) {
    std::istringstream in(s);
    return ReadModelVectors(in, "m.tsv");
  };
  EXPECT_THROW(read("a\t1\t2\n"), FormatError);
  EXPECT_THROW(read("# dims=x\n# lambda_frac=0\n# mode=whitened\n# seed=0\n# sigma=1\na\t1\n"), FormatError);
  EXPECT_THROW(read("# dims=1\n# lambda_frac=0\n# mode=bogus\n# seed=0\n# sigma=1\na\t1\n"), Error);
  EXPECT_THROW(read("# dims=2\n# lambda_frac=0\n# mode=whitened\n# seed=0\n# sigma=1\na\t1\t2\n"), FormatError);
  EXPECT_THROW(read("# dims=1\n# lambda_frac=0\n# mode=whitened\n# seed=0\n# sigma=1\na\tnan?\n"), FormatError);
}

TEST(ModelIoTest, VocabularyHashMismatchIsRejected) {
  TempDir dir;
  auto vocab = Vocabulary::FromEntries({{"a", 2}, {"b", 1}}, 1);
  Eigen::MatrixXd v(2, 1);
  v << 1, 2;
  auto model = MakeModel({"a", "b"}, v);
  model.vocab_hash = vocab.Hash();
  SaveModel(model, dir / "m.tsv");
  EXPECT_NO_THROW(LoadModel(dir / "m.tsv", &vocab));
  auto other = Vocabulary::FromEntries({{"b", 2}, {"a", 1}}, 1);
  EXPECT_THROW(LoadModel(dir / "m.tsv", &other), DataError);
}

TEST(ModelIoTest, MissingFileIsDataError) {
  EXPECT_THROW(LoadModel("/nonexistent/model.tsv"), DataError);
}

}  // namespace
