#pragma once

#include <cstddef>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "pausenlu/corpus.hpp"

namespace pausenlu {

// A single observed pause between two adjacent tokens, keyed by the BIO
// positions of the tokens around it, e.g. "O-B", "I-I", "B-O".
struct PausePair {
  std::string pair_type;
  double pause_ms = 0.0;
};

// Per pair type: one sample vector.
using PairSamples = std::map<std::string, std::vector<double>>;

PairSamples extract_pairs(const Corpus& corpus);

struct SampleSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (n - 1 denominator)
};

SampleSummary summarize(const std::vector<double>& xs);

// Pooled boundary-relative groups: "before" = {O-B}, "within" = {B-I, I-I},
// "after" = {B-O, I-O}. Each group must contain at least two samples.
struct GroupSummaries {
  SampleSummary before;
  SampleSummary within;
  SampleSummary after;
  std::vector<double> before_samples;
  std::vector<double> within_samples;
  std::vector<double> after_samples;
};

GroupSummaries group_summaries(const PairSamples& pairs);

struct WelchResult {
  double t = 0.0;
  double p = 0.0;   // two-sided
  double dof = 0.0;
};

// Welch's unequal-variance t-test, two-sided. Each sample needs n >= 2.
// Degenerate zero-variance pairs: equal means give t = 0, p = 1; otherwise
// t = +/-inf, p = 0 (dof falls back to n_a + n_b - 2).
WelchResult welch_t_test(const std::vector<double>& a,
                         const std::vector<double>& b);

struct HistogramBin {
  double lower = 0.0;  // inclusive lower edge; width is uniform
  double value = 0.0;  // count, or ln(1 + count) when log_normalized
};

// Fixed-width histogram from 0. Samples above mean + clip_sd * sd are
// dropped before binning. Trailing empty bins are trimmed; interior empty
// bins are kept.
std::vector<HistogramBin> histogram(const std::vector<double>& xs,
                                    double bin_width_ms, double clip_sd,
                                    bool log_normalized);

// Percentage (0..100) of samples >= threshold_ms.
double long_pause_frequency(const std::vector<double>& xs,
                            double threshold_ms);

struct PairAnalysis {
  SampleSummary summary;
  double long_pause_freq = 0.0;  // at the analysis threshold
  std::vector<HistogramBin> hist;
};

struct AnalysisOptions {
  double long_pause_threshold_ms = 60.0;
  double hist_bin_width_ms = 20.0;
  double hist_clip_sd = 3.0;
  bool hist_log_normalized = true;
};

struct AnalysisReport {
  std::map<std::string, PairAnalysis> per_pair;
  GroupSummaries groups;
  WelchResult before_vs_within;
  WelchResult after_vs_within;
};

AnalysisReport analyze_corpus(const Corpus& corpus,
                              const AnalysisOptions& opts = {});

// Human-readable TSV tables (pair summaries, group comparison, histograms).
void write_analysis(std::ostream& out, const AnalysisReport& report);

}  // namespace pausenlu
