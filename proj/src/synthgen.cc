#include "medcca/synthgen.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "medcca/error.h"
#include "medcca/seed.h"

namespace medcca {

namespace {

double Sigmoid(double t) { return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

const Date kTimelineOrigin = *Date::FromCivil(2008, 1, 1);

// Intercept a with mean_p sigmoid(a + beta * I_p) = rate; the mean is monotone in a.
double CalibrateIntercept(const std::vector<int>& intensity, double beta, double rate) {
  auto mean_rate = [&](double a) {
    double s = 0.0;
    for (int v : intensity) s += Sigmoid(a + beta * v);
    return s / static_cast<double>(intensity.size());
  };
  double lo = -60.0, hi = 60.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (mean_rate(mid) < rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

void SynthConfig::Validate() const {
  if (n_persons == 0) throw ConfigError("synth: n_persons must be >= 1");
  if (n_topics == 0) throw ConfigError("synth: n_topics must be >= 1");
  if (n_codes < n_topics) throw ConfigError("synth: n_codes must be >= n_topics so topics partition the codes");
  if (!(mean_events > 0.0)) throw ConfigError("synth: mean_events must be > 0");
  if (!(mean_burst_size >= 1.0)) throw ConfigError("synth: mean_burst_size must be >= 1");
  if (burst_span_days < 1) throw ConfigError("synth: burst_span_days must be >= 1");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("synth: noise must be in [0, 1]");
  if (!(base_rate > 0.0 && base_rate < 1.0)) throw ConfigError("synth: base_rate must be in (0, 1)");
  if (target_topic >= n_topics) throw ConfigError("synth: target_topic out of range");
  if (!(target_topic_weight > 0.0)) throw ConfigError("synth: target_topic_weight must be > 0");
  if (history_days < 0 || followup_days < 0 || tail_days < 0) throw ConfigError("synth: negative timeline length");
  if (history_days + followup_days + tail_days + 1 < burst_span_days) {
    throw ConfigError("synth: timeline shorter than the burst span");
  }
}

SynthCorpus GenerateSynth(const SynthConfig& config) {
  config.Validate();
  SynthCorpus corpus;

  const int width = static_cast<int>(std::to_string(config.n_codes - 1).size());
  for (size_t i = 0; i < config.n_codes; ++i) {
    std::string digits = std::to_string(i);
    corpus.codes.push_back("c" + std::string(static_cast<size_t>(std::max(0, width - static_cast<int>(digits.size()))), '0') + digits);
  }
  std::vector<size_t> perm(config.n_codes);
  std::iota(perm.begin(), perm.end(), size_t{0});
  std::mt19937_64 topic_rng(DeriveSeed(config.seed, "synth-topics"));
  std::shuffle(perm.begin(), perm.end(), topic_rng);
  std::vector<std::vector<uint32_t>> topic_codes(config.n_topics);
  corpus.code_topic.assign(config.n_codes, 0);
  for (size_t i = 0; i < config.n_codes; ++i) {
    // Contiguous blocks of the permutation; sizes differ by at most one.
    size_t topic = i * config.n_topics / config.n_codes;
    topic_codes[topic].push_back(static_cast<uint32_t>(perm[i]));
    corpus.code_topic[perm[i]] = topic;
  }

  std::vector<double> topic_weights(config.n_topics, 1.0);
  topic_weights[config.target_topic] = config.target_topic_weight;

  const int32_t timeline = config.history_days + config.followup_days + config.tail_days + 1;
  std::vector<int> intensity(config.n_persons, 0);
  std::vector<double> label_draw(config.n_persons, 0.0);
  const int pid_width = static_cast<int>(std::to_string(config.n_persons).size());

  for (size_t p = 0; p < config.n_persons; ++p) {
    std::mt19937_64 rng(DeriveSeed(config.seed, "synth", p));
    std::string digits = std::to_string(p + 1);
    std::string pid = "p" + std::string(static_cast<size_t>(std::max(0, pid_width - static_cast<int>(digits.size()))), '0') + digits;

    const Date index = kTimelineOrigin + config.history_days + std::uniform_int_distribution<int32_t>(0, 364)(rng);
    const Date start = index - config.history_days;
    const Date cutoff = index + config.followup_days;

    const auto n_events = std::poisson_distribution<int>(config.mean_events)(rng);
    const int n_noise = std::binomial_distribution<int>(n_events, config.noise)(rng);
    std::vector<std::pair<Date, uint32_t>> person;
    person.reserve(static_cast<size_t>(n_events));

    std::discrete_distribution<size_t> pick_topic(topic_weights.begin(), topic_weights.end());
    std::poisson_distribution<int> burst_extra(config.mean_burst_size - 1.0);
    std::uniform_int_distribution<int32_t> burst_start(0, timeline - config.burst_span_days);
    std::uniform_int_distribution<int32_t> burst_offset(0, config.burst_span_days - 1);
    for (int remaining = n_events - n_noise; remaining > 0;) {
      int size = std::min(remaining, 1 + (config.mean_burst_size > 1.0 ? burst_extra(rng) : 0));
      const auto& codes = topic_codes[pick_topic(rng)];
      std::uniform_int_distribution<size_t> pick_code(0, codes.size() - 1);
      const Date origin = start + burst_start(rng);
      for (int e = 0; e < size; ++e) person.emplace_back(origin + burst_offset(rng), codes[pick_code(rng)]);
      remaining -= size;
    }
    std::uniform_int_distribution<uint32_t> any_code(0, static_cast<uint32_t>(config.n_codes - 1));
    std::uniform_int_distribution<int32_t> any_day(0, timeline - 1);
    for (int e = 0; e < n_noise; ++e) {
      Date d = start + any_day(rng);
      person.emplace_back(d, any_code(rng));
    }
    label_draw[p] = std::uniform_real_distribution<double>(0.0, 1.0)(rng);

    std::stable_sort(person.begin(), person.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [date, code] : person) {
      if (date >= index && date <= cutoff && corpus.code_topic[code] == config.target_topic) ++intensity[p];
      corpus.events.push_back({pid, corpus.codes[code], date});
    }
    corpus.windows.push_back({pid, index, cutoff, 0});
  }

  corpus.intercept = CalibrateIntercept(intensity, config.label_coefficient, config.base_rate);
  for (size_t p = 0; p < config.n_persons; ++p) {
    double prob = Sigmoid(corpus.intercept + config.label_coefficient * intensity[p]);
    corpus.windows[p].label = label_draw[p] < prob ? 1 : 0;
  }
  return corpus;
}

void WriteSynthCorpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "events.csv");
    if (!out) throw DataError("cannot write " + (dir / "events.csv").string());
    WriteEvents(out, corpus.events);
  }
  {
    std::ofstream out(dir / "windows.csv");
    if (!out) throw DataError("cannot write " + (dir / "windows.csv").string());
    WriteWindows(out, corpus.windows);
  }
  std::ofstream out(dir / "topics.tsv");
  if (!out) throw DataError("cannot write " + (dir / "topics.tsv").string());
  for (size_t i = 0; i < corpus.codes.size(); ++i) out << corpus.codes[i] << '\t' << corpus.code_topic[i] << '\n';
}

std::vector<EventRecord> ShuffledControl(std::span<const EventRecord> events, uint64_t seed) {
  std::vector<size_t> perm(events.size());
  std::iota(perm.begin(), perm.end(), size_t{0});
  std::mt19937_64 rng(DeriveSeed(seed, "shuffled-control"));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<EventRecord> out(events.begin(), events.end());
  for (size_t i = 0; i < events.size(); ++i) out[i].code = events[perm[i]].code;
  return out;
}

}  // namespace medcca
