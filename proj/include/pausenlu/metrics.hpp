#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pausenlu/corpus.hpp"

namespace pausenlu {

// utterance id -> one joint label per token
using Predictions = std::map<std::string, std::vector<std::string>>;

struct EvalCounts {
  std::size_t entities_total = 0;
  std::size_t entities_wrong = 0;
  std::size_t tokens_total = 0;
  std::size_t tokens_wrong = 0;
  std::size_t utterances_total = 0;
  std::size_t utterances_wrong = 0;
};

struct EvalReport {
  double eer = 0.0;  // wrong entities / total entities
  double ter = 0.0;  // wrong tokens / total tokens
  double uer = 0.0;  // utterances with >= 1 wrong entity / total utterances
  EvalCounts counts;
};

struct EvalOptions {
  // When set, TER counts only errors on tokens inside gold entity spans.
  bool ter_entities_only = false;
};

// An entity is wrong iff any token inside its gold span has a predicted
// joint label differing from gold. Throws when an utterance id is missing
// from predictions or the label count mismatches; extra prediction ids are
// ignored. Empty denominators yield a rate of 0.
EvalReport evaluate(const Corpus& gold, const Predictions& preds,
                    const EvalOptions& opts = {});

// Exact-span precision/recall/F1 (offered for comparison; not the headline
// metrics). Invalid predicted BIO is read leniently: any I starting a run
// opens a span.
struct SpanScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t gold_spans = 0;
  std::size_t pred_spans = 0;
  std::size_t matched = 0;
};
SpanScores span_scores(const Corpus& gold, const Predictions& preds);

// Relative percent change vs a baseline, negative = improvement. A zero
// baseline rate makes the delta undefined (nullopt), never a crash.
struct ComparisonRow {
  std::string model;
  std::string domain;
  std::optional<double> delta_eer;
  std::optional<double> delta_ter;
  std::optional<double> delta_uer;
};

ComparisonRow compare_reports(const EvalReport& baseline,
                              const EvalReport& variant,
                              const std::string& model,
                              const std::string& domain);

std::vector<ComparisonRow> compare(
    const EvalReport& baseline,
    const std::vector<std::pair<std::string, EvalReport>>& variants,
    const std::string& domain);

// Text table in the model x domain x {EER,TER,UER} layout; the best
// (most negative) delta per (domain, metric) is flagged with '*', ties all
// flagged, missing cells rendered as n/a. Also available as TSV.
std::string render_comparison_text(const std::vector<ComparisonRow>& rows);
std::string render_comparison_tsv(const std::vector<ComparisonRow>& rows);

// Report and prediction file formats (JSON and TSV "id<TAB>lab1 lab2 ...").
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
void write_predictions(const std::string& path, const Predictions& preds);
Predictions read_predictions(const std::string& path);

}  // namespace pausenlu
