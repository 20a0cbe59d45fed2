#include "pausenlu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace pausenlu {

using nlohmann::json;

namespace {

double rate(std::size_t wrong, std::size_t total) {
  return total == 0 ? 0.0
                    : static_cast<double>(wrong) / static_cast<double>(total);
}

const std::vector<std::string>& labels_for(const Predictions& preds,
                                           const Utterance& u) {
  auto it = preds.find(u.id);
  if (it == preds.end())
    throw std::runtime_error("evaluate: no predictions for utterance " + u.id);
  if (it->second.size() != u.tokens.size())
    throw std::runtime_error(
        "evaluate: utterance " + u.id + " has " +
        std::to_string(u.tokens.size()) + " tokens but " +
        std::to_string(it->second.size()) + " predicted labels");
  return it->second;
}

}  // namespace

EvalReport evaluate(const Corpus& gold, const Predictions& preds,
                    const EvalOptions& opts) {
  EvalReport rep;
  for (const Utterance& u : gold) {
    const std::vector<std::string>& pred = labels_for(preds, u);
    std::vector<bool> token_wrong(u.tokens.size(), false);
    for (std::size_t i = 0; i < u.tokens.size(); ++i)
      token_wrong[i] = pred[i] != u.tokens[i].tag.str();

    const std::vector<EntitySpan> spans = entity_spans(u);
    bool any_entity_wrong = false;
    for (const EntitySpan& s : spans) {
      bool wrong = false;
      for (std::size_t i = s.start; i <= s.end; ++i)
        if (token_wrong[i]) wrong = true;
      ++rep.counts.entities_total;
      if (wrong) {
        ++rep.counts.entities_wrong;
        any_entity_wrong = true;
      }
    }

    std::vector<bool> in_entity(u.tokens.size(), false);
    for (const EntitySpan& s : spans)
      for (std::size_t i = s.start; i <= s.end; ++i) in_entity[i] = true;
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      if (opts.ter_entities_only && !in_entity[i]) continue;
      ++rep.counts.tokens_total;
      if (token_wrong[i]) ++rep.counts.tokens_wrong;
    }

    ++rep.counts.utterances_total;
    if (any_entity_wrong) ++rep.counts.utterances_wrong;
  }
  rep.eer = rate(rep.counts.entities_wrong, rep.counts.entities_total);
  rep.ter = rate(rep.counts.tokens_wrong, rep.counts.tokens_total);
  rep.uer = rate(rep.counts.utterances_wrong, rep.counts.utterances_total);
  return rep;
}

namespace {

// Lenient span reading for possibly invalid BIO: B starts a span; I extends
// a span of the same type, otherwise starts one.
std::vector<EntitySpan> spans_of_labels(const std::vector<std::string>& labels) {
  std::vector<EntitySpan> spans;
  std::size_t i = 0;
  while (i < labels.size()) {
    BioTag t = BioTag::parse(labels[i]);
    if (t.position == BioPos::O) {
      ++i;
      continue;
    }
    EntitySpan s;
    s.start = i;
    s.entity_type = t.entity_type;
    std::size_t j = i + 1;
    while (j < labels.size()) {
      BioTag n = BioTag::parse(labels[j]);
      if (n.position == BioPos::I && n.entity_type == t.entity_type)
        ++j;
      else
        break;
    }
    s.end = j - 1;
    spans.push_back(s);
    i = j;
  }
  return spans;
}

}  // namespace

SpanScores span_scores(const Corpus& gold, const Predictions& preds) {
  SpanScores s;
  for (const Utterance& u : gold) {
    const std::vector<std::string>& pred = labels_for(preds, u);
    const std::vector<EntitySpan> gs = entity_spans(u);
    const std::vector<EntitySpan> ps = spans_of_labels(pred);
    s.gold_spans += gs.size();
    s.pred_spans += ps.size();
    for (const EntitySpan& g : gs)
      for (const EntitySpan& p : ps)
        if (g.start == p.start && g.end == p.end &&
            g.entity_type == p.entity_type) {
          ++s.matched;
          break;
        }
  }
  s.precision = rate(s.matched, s.pred_spans);
  s.recall = rate(s.matched, s.gold_spans);
  s.f1 = (s.precision + s.recall) == 0.0
             ? 0.0
             : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

namespace {

std::optional<double> delta_pct(double baseline, double variant) {
  if (baseline == 0.0) return std::nullopt;
  return 100.0 * (variant - baseline) / baseline;
}

}  // namespace

ComparisonRow compare_reports(const EvalReport& baseline,
                              const EvalReport& variant,
                              const std::string& model,
                              const std::string& domain) {
  ComparisonRow row;
  row.model = model;
  row.domain = domain;
  row.delta_eer = delta_pct(baseline.eer, variant.eer);
  row.delta_ter = delta_pct(baseline.ter, variant.ter);
  row.delta_uer = delta_pct(baseline.uer, variant.uer);
  return row;
}

std::vector<ComparisonRow> compare(
    const EvalReport& baseline,
    const std::vector<std::pair<std::string, EvalReport>>& variants,
    const std::string& domain) {
  std::vector<ComparisonRow> rows;
  rows.reserve(variants.size());
  for (const auto& [model, report] : variants)
    rows.push_back(compare_reports(baseline, report, model, domain));
  return rows;
}

namespace {

struct TableLayout {
  std::vector<std::string> domains;  // first-appearance order
  std::vector<std::string> models;
};

TableLayout layout_of(const std::vector<ComparisonRow>& rows) {
  TableLayout lay;
  for (const ComparisonRow& r : rows) {
    if (std::find(lay.domains.begin(), lay.domains.end(), r.domain) ==
        lay.domains.end())
      lay.domains.push_back(r.domain);
    if (std::find(lay.models.begin(), lay.models.end(), r.model) ==
        lay.models.end())
      lay.models.push_back(r.model);
  }
  return lay;
}

const ComparisonRow* find_row(const std::vector<ComparisonRow>& rows,
                              const std::string& model,
                              const std::string& domain) {
  for (const ComparisonRow& r : rows)
    if (r.model == model && r.domain == domain) return &r;
  return nullptr;
}

std::optional<double> metric_of(const ComparisonRow& r, int m) {
  return m == 0 ? r.delta_eer : m == 1 ? r.delta_ter : r.delta_uer;
}

// best (lowest) delta per (domain, metric); ties all flagged
bool is_best(const std::vector<ComparisonRow>& rows, const std::string& model,
             const std::string& domain, int m, double value) {
  for (const ComparisonRow& r : rows) {
    if (r.domain != domain || r.model == model) continue;
    const std::optional<double> other = metric_of(r, m);
    if (other && *other < value) return false;
  }
  return true;
}

std::string cell_text(const std::vector<ComparisonRow>& rows,
                      const std::string& model, const std::string& domain,
                      int m, bool flag_best) {
  const ComparisonRow* r = find_row(rows, model, domain);
  if (!r) return "n/a";
  const std::optional<double> v = metric_of(*r, m);
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::showpos << std::fixed << std::setprecision(2) << *v;
  std::string s = os.str();
  if (flag_best && is_best(rows, model, domain, m, *v)) s += "*";
  return s;
}

}  // namespace

std::string render_comparison_text(const std::vector<ComparisonRow>& rows) {
  const TableLayout lay = layout_of(rows);
  const char* metrics[3] = {"EER", "TER", "UER"};

  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> head{"Model"};
  for (const std::string& d : lay.domains)
    for (const char* m : metrics) head.push_back(d + " " + m);
  grid.push_back(head);
  for (const std::string& model : lay.models) {
    std::vector<std::string> line{model};
    for (const std::string& d : lay.domains)
      for (int m = 0; m < 3; ++m)
        line.push_back(cell_text(rows, model, d, m, true));
    grid.push_back(line);
  }

  std::vector<std::size_t> widths(head.size(), 0);
  for (const auto& line : grid)
    for (std::size_t c = 0; c < line.size(); ++c)
      widths[c] = std::max(widths[c], line[c].size());

  std::ostringstream os;
  os << "Relative change vs baseline (%); lower is better, * = best per "
        "column\n";
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      os << std::left << std::setw(static_cast<int>(widths[c]) + 2) << line[c];
    }
    os << '\n';
  }
  return os.str();
}

std::string render_comparison_tsv(const std::vector<ComparisonRow>& rows) {
  std::ostringstream os;
  os << "model\tdomain\tdelta_eer_pct\tdelta_ter_pct\tdelta_uer_pct\n";
  os << std::fixed << std::setprecision(6);
  for (const ComparisonRow& r : rows) {
    os << r.model << '\t' << r.domain << '\t';
    auto put = [&os](const std::optional<double>& v) {
      if (v)
        os << *v;
      else
        os << "n/a";
    };
    put(r.delta_eer);
    os << '\t';
    put(r.delta_ter);
    os << '\t';
    put(r.delta_uer);
    os << '\n';
  }
  return os.str();
}

std::string report_to_json(const EvalReport& report) {
  json j;
  j["eer"] = report.eer;
  j["ter"] = report.ter;
  j["uer"] = report.uer;
  j["counts"] = {{"entities_total", report.counts.entities_total},
                 {"entities_wrong", report.counts.entities_wrong},
                 {"tokens_total", report.counts.tokens_total},
                 {"tokens_wrong", report.counts.tokens_wrong},
                 {"utterances_total", report.counts.utterances_total},
                 {"utterances_wrong", report.counts.utterances_wrong}};
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  const json j = json::parse(text);
  EvalReport r;
  r.eer = j.at("eer").get<double>();
  r.ter = j.at("ter").get<double>();
  r.uer = j.at("uer").get<double>();
  const json& c = j.at("counts");
  r.counts.entities_total = c.at("entities_total").get<std::size_t>();
  r.counts.entities_wrong = c.at("entities_wrong").get<std::size_t>();
  r.counts.tokens_total = c.at("tokens_total").get<std::size_t>();
  r.counts.tokens_wrong = c.at("tokens_wrong").get<std::size_t>();
  r.counts.utterances_total = c.at("utterances_total").get<std::size_t>();
  r.counts.utterances_wrong = c.at("utterances_wrong").get<std::size_t>();
  return r;
}

void write_predictions(const std::string& path, const Predictions& preds) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("write_predictions: cannot open " + path);
  for (const auto& [id, labels] : preds) {
    out << id << '\t';
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (i) out << ' ';
      out << labels[i];
    }
    out << '\n';
  }
  if (!out)
    throw std::runtime_error("write_predictions: write failed: " + path);
}

Predictions read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_predictions: cannot open " + path);
  Predictions preds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("read_predictions: line " +
                               std::to_string(lineno) + ": missing tab");
    const std::string id = line.substr(0, tab);
    std::istringstream rest(line.substr(tab + 1));
    std::vector<std::string> labels;
    std::string lab;
    while (rest >> lab) labels.push_back(lab);
    if (!preds.emplace(id, std::move(labels)).second)
      throw std::runtime_error("read_predictions: duplicate utterance id " +
                               id);
  }
  return preds;
}

}  // namespace pausenlu
