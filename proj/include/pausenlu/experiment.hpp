#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pausenlu/encoder.hpp"
#include "pausenlu/generator.hpp"
#include "pausenlu/metrics.hpp"
#include "pausenlu/pausestats.hpp"
#include "pausenlu/tagger.hpp"

namespace pausenlu {

// One full run: generate a corpus, then for every (seed, mode) pretrain an
// encoder on the train split and for every domain train + evaluate a parser
// on that domain's slices. Aggregates are means over seeds.
struct ExperimentConfig {
  std::vector<std::uint64_t> seeds;  // default 1..10
  std::vector<EncoderMode> modes;    // default baseline, hbc, nlr
  std::size_t n_utterances = 5000;
  std::uint64_t corpus_seed = 42;
  std::uint64_t split_seed = 7;
  SplitFractions fractions;
  // Per-domain cap on parser training utterances (0 = unlimited). The
  // miniature setup keeps the parser data-limited so embedding quality is
  // what differentiates modes.
  std::size_t parser_train_cap = 600;
  EncoderConfig encoder;  // template; seed and mode are set per cell
  TaggerConfig tagger;    // template; seed is set per cell
  std::string out_dir = "out";

  static ExperimentConfig defaults();
  void validate() const;
  std::string to_json_text() const;
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_json_file(const std::string& path);
  // Hash over everything that affects artifact content (out_dir excluded).
  std::string config_hash() const;
};

struct DomainSummary {
  std::string domain;
  std::size_t train_n = 0;
  std::size_t dev_n = 0;
  std::size_t test_n = 0;
  double mean_pause_ms = 0.0;     // over pauses between adjacent tokens
  double mean_span_tokens = 0.0;  // over gold entity spans
};

struct ExperimentResult {
  std::string dir;  // artifact directory (out_dir/exp_<hash>)
  std::vector<std::string> domains;
  // cell key "s<seed>/<mode>/<domain>"
  std::map<std::string, EvalReport> cell_reports;
  // mode -> domain -> mean-over-seeds report (rates averaged, counts summed)
  std::map<std::string, std::map<std::string, EvalReport>> aggregate;
  // mode -> mean of the per-domain aggregate rates
  std::map<std::string, EvalReport> overall;
  std::vector<ComparisonRow> comparison;  // per domain plus "overall"
  std::vector<DomainSummary> domain_summaries;
  AnalysisReport analysis;  // pause statistics of the generated corpus
  std::vector<std::string> failures;
};

// Resumable: completed stages are skipped when their artifact exists.
// A failing cell is recorded in .failures and the rest continue.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                int threads = 1);

std::string report_render(const ExperimentResult& result);  // human-readable
std::string report_tsv(const ExperimentResult& result);     // aggregate rates
std::string report_json(const ExperimentResult& result);

}  // namespace pausenlu
