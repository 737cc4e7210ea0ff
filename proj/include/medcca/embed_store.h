#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "medcca/cca.h"
#include "medcca/error.h"
#include "medcca/ingest.h"

namespace medcca {

struct Neighbor {
  std::string code;
  uint32_t index = 0;
  double distance = 0.0;
};

struct NeighborResult {
  std::string query;
  std::vector<Neighbor> neighbors;  // ascending distance, ties by index
};

// Unknown query code; the message lists the closest code strings.
class LookupError : public DataError {
 public:
  LookupError(const std::string& what, std::vector<std::string> suggestions)
      : DataError(what), suggestions_(std::move(suggestions)) {}
  const std::vector<std::string>& suggestions() const { return suggestions_; }

 private:
  std::vector<std::string> suggestions_;
};

// Exact Euclidean k-NN by linear scan; the query itself is excluded and k is
// clamped to |V| - 1.
NeighborResult NearestNeighbors(const EmbeddingModel& model, uint32_t index, size_t k);
NeighborResult NearestNeighbors(const EmbeddingModel& model, std::string_view code, size_t k);

// Writes `path` (code vectors) and `path`.context (context vectors).
void SaveModel(const EmbeddingModel& model, const std::filesystem::path& path);
// With `expected` set, a vocabulary hash mismatch is a DataError.
EmbeddingModel LoadModel(const std::filesystem::path& path, const Vocabulary* expected = nullptr);

// Stream forms of a single vector file (header + code rows).
void WriteModelVectors(std::ostream& out, const EmbeddingModel& model, const Eigen::MatrixXd& vectors);
EmbeddingModel ReadModelVectors(std::istream& in, std::string_view source);

std::filesystem::path ContextPath(const std::filesystem::path& model_path);

}  // namespace medcca
