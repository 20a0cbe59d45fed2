#include "pausenlu/pausestats.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

namespace pausenlu {

PairSamples extract_pairs(const Corpus& corpus) {
  PairSamples pairs;
  for (const Utterance& u : corpus) {
    for (std::size_t i = 0; i + 1 < u.tokens.size(); ++i) {
      const std::string key = u.tokens[i].tag.position_str() + "-" +
                              u.tokens[i + 1].tag.position_str();
      pairs[key].push_back(u.tokens[i].pause_after_ms);
    }
  }
  return pairs;
}

SampleSummary summarize(const std::vector<double>& xs) {
  SampleSummary s;
  s.n = xs.size();
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

GroupSummaries group_summaries(const PairSamples& pairs) {
  GroupSummaries g;
  auto pool = [&pairs](std::initializer_list<const char*> keys) {
    std::vector<double> out;
    for (const char* k : keys) {
      auto it = pairs.find(k);
      if (it != pairs.end())
        out.insert(out.end(), it->second.begin(), it->second.end());
    }
    return out;
  };
  g.before_samples = pool({"O-B"});
  g.within_samples = pool({"B-I", "I-I"});
  g.after_samples = pool({"B-O", "I-O"});
  auto require = [](const std::vector<double>& xs, const char* name) {
    if (xs.size() < 2)
      throw std::runtime_error(std::string("group_summaries: group '") + name +
                               "' needs at least 2 samples, has " +
                               std::to_string(xs.size()));
  };
  require(g.before_samples, "before");
  require(g.within_samples, "within");
  require(g.after_samples, "after");
  g.before = summarize(g.before_samples);
  g.within = summarize(g.within_samples);
  g.after = summarize(g.after_samples);
  return g;
}

WelchResult welch_t_test(const std::vector<double>& a,
                         const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::runtime_error("welch_t_test: each sample needs n >= 2");
  const SampleSummary sa = summarize(a);
  const SampleSummary sb = summarize(b);
  const double na = static_cast<double>(sa.n);
  const double nb = static_cast<double>(sb.n);
  const double va = sa.sd * sa.sd;
  const double vb = sb.sd * sb.sd;
  const double se2 = va / na + vb / nb;

  WelchResult r;
  if (se2 == 0.0) {
    r.dof = na + nb - 2.0;
    if (sa.mean == sb.mean) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = sa.mean > sb.mean ? std::numeric_limits<double>::infinity()
                              : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }

  r.t = (sa.mean - sb.mean) / std::sqrt(se2);
  const double num = se2 * se2;
  const double den = (va / na) * (va / na) / (na - 1.0) +
                     (vb / nb) * (vb / nb) / (nb - 1.0);
  r.dof = num / den;
  boost::math::students_t dist(r.dof);
  r.p = 2.0 * boost::math::cdf(dist, -std::abs(r.t));
  return r;
}

std::vector<HistogramBin> histogram(const std::vector<double>& xs,
                                    double bin_width_ms, double clip_sd,
                                    bool log_normalized) {
  if (bin_width_ms <= 0.0)
    throw std::runtime_error("histogram: bin width must be positive");
  std::vector<HistogramBin> bins;
  if (xs.empty()) return bins;

  const SampleSummary s = summarize(xs);
  const double bound = s.mean + clip_sd * s.sd;

  std::vector<std::size_t> counts;
  for (double x : xs) {
    if (x < 0.0 || x > bound) continue;
    const std::size_t idx = static_cast<std::size_t>(x / bin_width_ms);
    if (idx >= counts.size()) counts.resize(idx + 1, 0);
    ++counts[idx];
  }
  while (!counts.empty() && counts.back() == 0) counts.pop_back();

  bins.reserve(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    HistogramBin b;
    b.lower = static_cast<double>(i) * bin_width_ms;
    b.value = log_normalized
                  ? std::log1p(static_cast<double>(counts[i]))
                  : static_cast<double>(counts[i]);
    bins.push_back(b);
  }
  return bins;
}

double long_pause_frequency(const std::vector<double>& xs,
                            double threshold_ms) {
  if (xs.empty()) return 0.0;
  std::size_t hits = 0;
  for (double x : xs)
    if (x >= threshold_ms) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(xs.size());
}

AnalysisReport analyze_corpus(const Corpus& corpus,
                              const AnalysisOptions& opts) {
  AnalysisReport rep;
  const PairSamples pairs = extract_pairs(corpus);
  for (const auto& [key, xs] : pairs) {
    PairAnalysis pa;
    pa.summary = summarize(xs);
    pa.long_pause_freq = long_pause_frequency(xs, opts.long_pause_threshold_ms);
    pa.hist = histogram(xs, opts.hist_bin_width_ms, opts.hist_clip_sd,
                        opts.hist_log_normalized);
    rep.per_pair.emplace(key, std::move(pa));
  }
  rep.groups = group_summaries(pairs);
  rep.before_vs_within =
      welch_t_test(rep.groups.before_samples, rep.groups.within_samples);
  rep.after_vs_within =
      welch_t_test(rep.groups.after_samples, rep.groups.within_samples);
  return rep;
}

void write_analysis(std::ostream& out, const AnalysisReport& report) {
  out << std::setprecision(6);
  out << "# pause pairs\n";
  out << "pair\tn\tmean_ms\tsd_ms\tlong_pause_freq\n";
  for (const auto& [key, pa] : report.per_pair)
    out << key << '\t' << pa.summary.n << '\t' << pa.summary.mean << '\t'
        << pa.summary.sd << '\t' << pa.long_pause_freq << '\n';

  out << "\n# boundary-relative groups\n";
  out << "group\tn\tmean_ms\tsd_ms\n";
  auto grp = [&out](const char* name, const SampleSummary& s) {
    out << name << '\t' << s.n << '\t' << s.mean << '\t' << s.sd << '\n';
  };
  grp("before", report.groups.before);
  grp("within", report.groups.within);
  grp("after", report.groups.after);

  out << "\n# welch tests vs within\n";
  out << "comparison\tt\tp\tdof\n";
  out << "before_vs_within\t" << report.before_vs_within.t << '\t'
      << report.before_vs_within.p << '\t' << report.before_vs_within.dof
      << '\n';
  out << "after_vs_within\t" << report.after_vs_within.t << '\t'
      << report.after_vs_within.p << '\t' << report.after_vs_within.dof
      << '\n';

  out << "\n# histograms (value = ln(1+count) unless configured otherwise)\n";
  for (const auto& [key, pa] : report.per_pair) {
    out << key << ':';
    for (const HistogramBin& b : pa.hist)
      out << ' ' << b.lower << '=' << b.value;
    out << '\n';
  }
}

}  // namespace pausenlu
