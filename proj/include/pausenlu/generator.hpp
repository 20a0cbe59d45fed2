#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pausenlu/corpus.hpp"

namespace pausenlu {

struct LexiconEntry {
  std::string name;  // space-separated tokens
  std::string entity_type;
};

struct DomainProfile {
  std::string domain;
  std::vector<LexiconEntry> entity_lexicon;
  // Token patterns, each with exactly one entity slot. A plain "<E>" slot
  // accepts any lexicon entry; "<E:Type>" restricts the slot to entities of
  // that type, so the carrier context correlates with the entity type.
  std::vector<std::vector<std::string>> carrier_templates;
  // Means are of the full zero-inflated mixture (zeros included), so the
  // sample mean of a pair group converges to the configured value.
  double boundary_pause_mean_ms = 55.04;
  double within_pause_mean_ms = 18.17;
  double zero_pause_prob = 0.5;
  double noise_sd_ms = 80.0;  // sd of the nonzero log-normal component
};

struct GeneratorConfig {
  std::uint64_t seed = 1;
  std::size_t n_utterances = 0;
  std::vector<DomainProfile> domains;

  void validate() const;  // throws std::runtime_error on a bad config

  // Builtin synthetic-domain profiles (music/movies/sports lexicons).
  // french_defaults: every domain uses the same boundary/within means.
  // experiment_defaults: per-domain means and span lengths differ, movies
  // having the longest spans and pauses, sports the shortest.
  static GeneratorConfig french_defaults(std::size_t n, std::uint64_t seed);
  static GeneratorConfig experiment_defaults(std::size_t n,
                                             std::uint64_t seed);

  static GeneratorConfig from_json_file(const std::string& path);
  static GeneratorConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

// Deterministic for a fixed config; per-utterance RNG streams are derived
// from (seed, utterance index). All pauses lie in [0, 10000] ms.
Corpus generate(const GeneratorConfig& config);

struct SplitFractions {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
};

struct CorpusSplit {
  Corpus train, dev, test;
};

// Deterministic shuffle + floor-then-largest-remainder allocation (ties go
// to the earlier split). Splits are disjoint and their union is the input.
CorpusSplit split_corpus(const Corpus& corpus, SplitFractions fractions,
                         std::uint64_t seed);

}  // namespace pausenlu
