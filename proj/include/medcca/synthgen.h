#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "medcca/featurize.h"
#include "medcca/ingest.h"

namespace medcca {

// Planted-topic corpus generator. Each person gets bursts of events: a burst
// picks one topic and drops its codes within `burst_span_days` of each other.
// A `noise` fraction of events are uniform over codes and the person's
// timeline. The label is Bernoulli(sigmoid(a + label_coefficient * I)), where
// I counts target-topic events in the post-index window and a is calibrated so
// the expected base rate equals `base_rate`.
struct SynthConfig {
  size_t n_persons = 5000;
  size_t n_codes = 500;
  size_t n_topics = 20;
  double mean_events = 40.0;        // Poisson mean per person
  double mean_burst_size = 5.0;
  int32_t burst_span_days = 14;
  double noise = 0.2;
  size_t target_topic = 0;
  double target_topic_weight = 3.0;  // burst-topic prior weight relative to other topics
  double label_coefficient = 0.5;
  double base_rate = 0.05;
  int32_t history_days = 730;        // timeline before the index date
  int32_t followup_days = kDefaultFollowupDays;
  int32_t tail_days = 112;           // timeline after the feature cutoff
  uint64_t seed = 0;

  // Throws ConfigError for infeasible settings.
  void Validate() const;
};

struct SynthCorpus {
  std::vector<EventRecord> events;
  std::vector<PersonWindow> windows;
  std::vector<std::string> codes;
  std::vector<size_t> code_topic;  // parallel to codes
  double intercept = 0.0;          // calibrated label-model intercept
};

SynthCorpus GenerateSynth(const SynthConfig& config);

// Writes events.csv, windows.csv and topics.tsv ("code<TAB>topic_id") into dir.
void WriteSynthCorpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

// Null-structure control: codes are permuted across all (person, date) slots,
// so code frequencies survive but temporal and per-person structure does not.
std::vector<EventRecord> ShuffledControl(std::span<const EventRecord> events, uint64_t seed);

}  // namespace medcca
