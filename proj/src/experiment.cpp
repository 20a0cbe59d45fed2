#include "pausenlu/experiment.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "pausenlu/rng.hpp"

namespace pausenlu {

namespace fs = std::filesystem;
using nlohmann::json;

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  for (std::uint64_t s = 1; s <= 10; ++s) c.seeds.push_back(s);
  c.modes = {EncoderMode::kBaseline, EncoderMode::kHbc, EncoderMode::kNlr};
  // Miniature encoder sized for a laptop-class 30-minute budget. Eight
  // pretraining epochs let the pause heads converge instead of merely
  // perturbing the trunk. The tagger trains until its dev error has
  // plateaued (the generated task is too combinatorial to saturate), with
  // a moderate learning rate so checkpoint selection is not dominated by
  // optimizer bounce.
  c.encoder.n_layers = 1;
  c.encoder.n_heads = 4;
  c.encoder.hidden = 48;
  c.encoder.ff_dim = 96;
  c.encoder.max_len = 16;
  c.encoder.vocab_max = 600;
  c.encoder.epochs = 8;
  c.encoder.batch_size = 16;
  c.encoder.lr = 2e-3;
  c.tagger.hidden = 48;
  c.tagger.max_epochs = 24;
  c.tagger.patience = 5;
  c.tagger.batch_size = 16;
  c.tagger.lr = 2e-3;
  return c;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw std::runtime_error("experiment: no seeds");
  if (modes.empty()) throw std::runtime_error("experiment: no modes");
  if (n_utterances == 0)
    throw std::runtime_error("experiment: n_utterances must be > 0");
  encoder.validate();
  tagger.validate();
}

std::string ExperimentConfig::to_json_text() const {
  json j;
  j["seeds"] = seeds;
  std::vector<std::string> ms;
  for (EncoderMode m : modes) ms.push_back(mode_str(m));
  j["modes"] = ms;
  j["n_utterances"] = n_utterances;
  j["corpus_seed"] = corpus_seed;
  j["split_seed"] = split_seed;
  j["fractions"] = {{"train", fractions.train},
                    {"dev", fractions.dev},
                    {"test", fractions.test}};
  j["parser_train_cap"] = parser_train_cap;
  j["encoder"] = json::parse(encoder.to_json_text());
  j["tagger"] = json::parse(tagger.to_json_text());
  j["out_dir"] = out_dir;
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  ExperimentConfig c = defaults();
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("modes")) {
    c.modes.clear();
    for (const json& m : j.at("modes"))
      c.modes.push_back(mode_parse(m.get<std::string>()));
  }
  c.n_utterances = j.value("n_utterances", c.n_utterances);
  c.corpus_seed = j.value("corpus_seed", c.corpus_seed);
  c.split_seed = j.value("split_seed", c.split_seed);
  if (j.contains("fractions")) {
    const json& f = j.at("fractions");
    c.fractions.train = f.value("train", c.fractions.train);
    c.fractions.dev = f.value("dev", c.fractions.dev);
    c.fractions.test = f.value("test", c.fractions.test);
  }
  c.parser_train_cap = j.value("parser_train_cap", c.parser_train_cap);
  if (j.contains("encoder"))
    c.encoder = EncoderConfig::from_json_text(j.at("encoder").dump());
  if (j.contains("tagger"))
    c.tagger = TaggerConfig::from_json_text(j.at("tagger").dump());
  c.out_dir = j.value("out_dir", c.out_dir);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open experiment config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string ExperimentConfig::config_hash() const {
  ExperimentConfig c = *this;
  c.out_dir.clear();
  const std::uint64_t h = hash_str(c.to_json_text());
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(8)
     << static_cast<std::uint32_t>(h ^ (h >> 32));
  return os.str();
}

namespace {

std::string cell_key(std::uint64_t seed, EncoderMode mode,
                     const std::string& domain) {
  return "s" + std::to_string(seed) + "/" + mode_str(mode) + "/" + domain;
}

std::string enc_stem(std::uint64_t seed, EncoderMode mode) {
  return "enc_s" + std::to_string(seed) + "_" + mode_str(mode);
}

std::string cell_stem(std::uint64_t seed, EncoderMode mode,
                      const std::string& domain) {
  return "s" + std::to_string(seed) + "_" + mode_str(mode) + "_" + domain;
}

Corpus filter_domain(const Corpus& corpus, const std::string& domain) {
  Corpus out;
  for (const Utterance& u : corpus)
    if (u.domain == domain) out.push_back(u);
  return out;
}

void log_line(std::mutex& mu, const std::string& stage,
              const std::string& msg) {
  std::lock_guard<std::mutex> lock(mu);
  std::cout << "[" << stage << "] " << msg << "\n" << std::flush;
}

struct CellJob {
  std::uint64_t seed = 0;
  EncoderMode mode = EncoderMode::kBaseline;
  std::string domain;  // empty for pretrain jobs
};

void run_jobs(const std::vector<CellJob>& jobs, int threads,
              const std::function<void(const CellJob&)>& fn) {
  const int n_workers =
      std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  if (n_workers == 1) {
    for (const CellJob& job : jobs) fn(job);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(n_workers));
  for (int w = 0; w < n_workers; ++w)
    workers.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        fn(jobs[i]);
      }
    });
  for (std::thread& t : workers) t.join();
}

EvalReport mean_report(const std::vector<EvalReport>& reports) {
  EvalReport m;
  if (reports.empty()) return m;
  for (const EvalReport& r : reports) {
    m.eer += r.eer;
    m.ter += r.ter;
    m.uer += r.uer;
    m.counts.entities_total += r.counts.entities_total;
    m.counts.entities_wrong += r.counts.entities_wrong;
    m.counts.tokens_total += r.counts.tokens_total;
    m.counts.tokens_wrong += r.counts.tokens_wrong;
    m.counts.utterances_total += r.counts.utterances_total;
    m.counts.utterances_wrong += r.counts.utterances_wrong;
  }
  const double n = static_cast<double>(reports.size());
  m.eer /= n;
  m.ter /= n;
  m.uer /= n;
  return m;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, int threads) {
  config.validate();
  ExperimentResult result;
  const std::string dir =
      (fs::path(config.out_dir) / ("exp_" + config.config_hash())).string();
  result.dir = dir;
  fs::create_directories(dir);

  {
    std::ofstream cfg(fs::path(dir) / "experiment.json");
    cfg << config.to_json_text() << "\n";
  }

  std::mutex mu;

  // corpus (shared by every cell)
  const std::string corpus_path = (fs::path(dir) / "corpus.jsonl").string();
  Corpus corpus;
  if (fs::exists(corpus_path)) {
    log_line(mu, "generate", "reusing " + corpus_path);
    corpus = load_corpus(corpus_path);
  } else {
    log_line(mu, "generate",
             "generating " + std::to_string(config.n_utterances) +
                 " utterances");
    GeneratorConfig gen = GeneratorConfig::experiment_defaults(
        config.n_utterances, config.corpus_seed);
    corpus = generate(gen);
    save_corpus(corpus, corpus_path);
  }

  for (const Utterance& u : corpus) {
    bool known = false;
    for (const std::string& d : result.domains)
      if (d == u.domain) known = true;
    if (!known) result.domains.push_back(u.domain);
  }

  const CorpusSplit split =
      split_corpus(corpus, config.fractions, config.split_seed);

  // pause analysis of the full corpus
  result.analysis = analyze_corpus(corpus);
  {
    std::ofstream out(fs::path(dir) / "analysis.tsv");
    write_analysis(out, result.analysis);
  }

  // per-domain slices and summaries
  std::map<std::string, Corpus> train_by, dev_by, test_by;
  for (const std::string& d : result.domains) {
    train_by[d] = filter_domain(split.train, d);
    if (config.parser_train_cap > 0 &&
        train_by[d].size() > config.parser_train_cap)
      train_by[d].resize(config.parser_train_cap);
    dev_by[d] = filter_domain(split.dev, d);
    test_by[d] = filter_domain(split.test, d);

    DomainSummary s;
    s.domain = d;
    s.train_n = train_by[d].size();
    s.dev_n = dev_by[d].size();
    s.test_n = test_by[d].size();
    double pause_sum = 0.0;
    std::size_t pause_n = 0;
    double span_sum = 0.0;
    std::size_t span_n = 0;
    for (const Utterance& u : corpus) {
      if (u.domain != d) continue;
      for (std::size_t i = 0; i + 1 < u.tokens.size(); ++i) {
        pause_sum += u.tokens[i].pause_after_ms;
        ++pause_n;
      }
      for (const EntitySpan& sp : entity_spans(u)) {
        span_sum += static_cast<double>(sp.end - sp.start + 1);
        ++span_n;
      }
    }
    s.mean_pause_ms = pause_n ? pause_sum / static_cast<double>(pause_n) : 0.0;
    s.mean_span_tokens = span_n ? span_sum / static_cast<double>(span_n) : 0.0;
    result.domain_summaries.push_back(s);
  }

  auto record_failure = [&mu, &result](const std::string& where,
                                       const std::string& what) {
    std::lock_guard<std::mutex> lock(mu);
    result.failures.push_back(where + ": " + what);
  };

  // phase 1: pretraining, one encoder per (seed, mode)
  std::vector<CellJob> pre_jobs;
  for (std::uint64_t seed : config.seeds)
    for (EncoderMode mode : config.modes)
      pre_jobs.push_back({seed, mode, ""});

  run_jobs(pre_jobs, threads, [&](const CellJob& job) {
    const std::string stem = enc_stem(job.seed, job.mode);
    const std::string ckpt = (fs::path(dir) / (stem + ".ckpt")).string();
    if (fs::exists(ckpt)) {
      log_line(mu, "pretrain", "skip " + stem + " (checkpoint exists)");
      return;
    }
    try {
      EncoderConfig ec = config.encoder;
      ec.mode = job.mode;
      ec.seed = Rng::derive_seed(job.seed, "encoder");
      log_line(mu, "pretrain", "start " + stem);
      PretrainResult pr = pretrain(split.train, ec);
      {
        std::ofstream curve(fs::path(dir) / (stem + ".curve.tsv"));
        curve << "epoch\tl_bert\tl_aux\ttotal\tclamped\n";
        curve << std::setprecision(12);
        for (const EpochStats& st : pr.curve)
          curve << st.epoch << '\t' << st.l_bert << '\t' << st.l_aux << '\t'
                << st.total << '\t' << st.clamped << '\n';
      }
      pr.model.save(ckpt);
      log_line(mu, "pretrain", "done " + stem);
    } catch (const std::exception& e) {
      record_failure("pretrain " + stem, e.what());
      log_line(mu, "pretrain", "FAILED " + stem + ": " + e.what());
    }
  });

  // phase 2: parser training + evaluation per (seed, mode, domain)
  std::vector<CellJob> tag_jobs;
  for (std::uint64_t seed : config.seeds)
    for (EncoderMode mode : config.modes)
      for (const std::string& d : result.domains)
        tag_jobs.push_back({seed, mode, d});

  std::mutex cell_mu;
  run_jobs(tag_jobs, threads, [&](const CellJob& job) {
    const std::string stem = cell_stem(job.seed, job.mode, job.domain);
    const std::string enc_ckpt =
        (fs::path(dir) / (enc_stem(job.seed, job.mode) + ".ckpt")).string();
    const std::string report_path =
        (fs::path(dir) / ("report_" + stem + ".json")).string();
    try {
      EvalReport report;
      if (fs::exists(report_path)) {
        log_line(mu, "parser", "skip " + stem + " (report exists)");
        std::ifstream in(report_path);
        std::stringstream buf;
        buf << in.rdbuf();
        report = report_from_json(buf.str());
      } else {
        if (!fs::exists(enc_ckpt))
          throw std::runtime_error("missing encoder checkpoint " + enc_ckpt);
        const EncoderModel encoder = EncoderModel::load(enc_ckpt);
        TaggerConfig tc = config.tagger;
        tc.seed = Rng::derive_seed(job.seed, "tagger/" + job.domain);
        log_line(mu, "parser", "start " + stem);
        TrainResult tr = train_tagger(train_by.at(job.domain),
                                      dev_by.at(job.domain), encoder, tc);
        tr.model.save((fs::path(dir) / ("tag_" + stem + ".ckpt")).string());
        {
          std::ofstream hist(fs::path(dir) / ("tag_" + stem + ".history.tsv"));
          hist << "epoch\ttrain_nll\tdev_eer\n";
          hist << std::setprecision(12);
          for (const TrainEpoch& ep : tr.history)
            hist << ep.epoch << '\t' << ep.train_nll << '\t' << ep.dev_eer
                 << '\n';
        }
        Predictions preds;
        for (const Utterance& u : test_by.at(job.domain))
          preds.emplace(u.id, tag(tr.model, encoder, u));
        write_predictions(
            (fs::path(dir) / ("preds_" + stem + ".tsv")).string(), preds);
        report = evaluate(test_by.at(job.domain), preds);
        std::ofstream out(report_path);
        out << report_to_json(report) << "\n";
        log_line(mu, "parser",
                 "done " + stem + " eer=" + std::to_string(report.eer));
      }
      std::lock_guard<std::mutex> lock(cell_mu);
      result.cell_reports.emplace(cell_key(job.seed, job.mode, job.domain),
                                  report);
    } catch (const std::exception& e) {
      record_failure("parser " + stem, e.what());
      log_line(mu, "parser", "FAILED " + stem + ": " + e.what());
    }
  });

  // aggregation: means over seeds, then across domains
  for (EncoderMode mode : config.modes) {
    const std::string m = mode_str(mode);
    std::vector<EvalReport> domain_means;
    for (const std::string& d : result.domains) {
      std::vector<EvalReport> reports;
      for (std::uint64_t seed : config.seeds) {
        auto it = result.cell_reports.find(cell_key(seed, mode, d));
        if (it != result.cell_reports.end()) reports.push_back(it->second);
      }
      if (reports.empty()) continue;
      result.aggregate[m][d] = mean_report(reports);
      domain_means.push_back(result.aggregate[m][d]);
    }
    if (!domain_means.empty()) result.overall[m] = mean_report(domain_means);
  }

  // Table 2 analogue: relative change vs baseline per domain and overall
  const auto base_it = result.aggregate.find("baseline");
  if (base_it != result.aggregate.end()) {
    for (const std::string& d : result.domains) {
      const auto bd = base_it->second.find(d);
      if (bd == base_it->second.end()) continue;
      for (EncoderMode mode : config.modes) {
        if (mode == EncoderMode::kBaseline) continue;
        const std::string m = mode_str(mode);
        auto md = result.aggregate.find(m);
        if (md == result.aggregate.end()) continue;
        auto cell = md->second.find(d);
        if (cell == md->second.end()) continue;
        std::string label = m == "hbc" ? "HBC" : "NLR";
        result.comparison.push_back(
            compare_reports(bd->second, cell->second, label, d));
      }
    }
    const auto base_all = result.overall.find("baseline");
    if (base_all != result.overall.end()) {
      for (EncoderMode mode : config.modes) {
        if (mode == EncoderMode::kBaseline) continue;
        const std::string m = mode_str(mode);
        auto it = result.overall.find(m);
        if (it == result.overall.end()) continue;
        std::string label = m == "hbc" ? "HBC" : "NLR";
        result.comparison.push_back(
            compare_reports(base_all->second, it->second, label, "overall"));
      }
    }
  }

  // final reports
  {
    std::ofstream txt(fs::path(dir) / "report.txt");
    txt << report_render(result);
    std::ofstream tsv(fs::path(dir) / "report.tsv");
    tsv << report_tsv(result);
    std::ofstream js(fs::path(dir) / "report.json");
    js << report_json(result) << "\n";
  }
  if (!result.failures.empty()) {
    std::ofstream f(fs::path(dir) / "failures.txt");
    for (const std::string& s : result.failures) f << s << '\n';
  }
  return result;
}

std::string report_render(const ExperimentResult& result) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);

  os << "# Corpus\n";
  os << "domain\ttrain\tdev\ttest\tmean_pause_ms\tmean_span_tokens\n";
  for (const DomainSummary& s : result.domain_summaries)
    os << s.domain << '\t' << s.train_n << '\t' << s.dev_n << '\t' << s.test_n
       << '\t' << s.mean_pause_ms << '\t' << s.mean_span_tokens << '\n';

  os << "\n# Pause groups (before / within / after entity boundaries)\n";
  const GroupSummaries& g = result.analysis.groups;
  os << "before: mean " << g.before.mean << " ms (n=" << g.before.n << ")\n";
  os << "within: mean " << g.within.mean << " ms (n=" << g.within.n << ")\n";
  os << "after:  mean " << g.after.mean << " ms (n=" << g.after.n << ")\n";
  os << "welch before vs within: t=" << result.analysis.before_vs_within.t
     << " p=" << std::scientific << result.analysis.before_vs_within.p
     << std::fixed << "\n";
  os << "welch after vs within:  t=" << result.analysis.after_vs_within.t
     << " p=" << std::scientific << result.analysis.after_vs_within.p
     << std::fixed << "\n";

  os << "\n# Mean error rates over seeds\n";
  os << "mode\tdomain\teer\tter\tuer\n";
  for (const auto& [mode, by_domain] : result.aggregate)
    for (const auto& [domain, rep] : by_domain)
      os << mode << '\t' << domain << '\t' << rep.eer << '\t' << rep.ter
         << '\t' << rep.uer << '\n';
  for (const auto& [mode, rep] : result.overall)
    os << mode << "\toverall\t" << rep.eer << '\t' << rep.ter << '\t'
       << rep.uer << '\n';

  if (!result.comparison.empty()) {
    os << "\n# Relative change vs baseline\n";
    os << render_comparison_text(result.comparison);
  }

  if (!result.failures.empty()) {
    os << "\n# Failures\n";
    for (const std::string& f : result.failures) os << f << '\n';
  }
  return os.str();
}

std::string report_tsv(const ExperimentResult& result) {
  std::ostringstream os;
  os << std::setprecision(12);
  os << "mode\tdomain\teer\tter\tuer\n";
  for (const auto& [mode, by_domain] : result.aggregate)
    for (const auto& [domain, rep] : by_domain)
      os << mode << '\t' << domain << '\t' << rep.eer << '\t' << rep.ter
         << '\t' << rep.uer << '\n';
  for (const auto& [mode, rep] : result.overall)
    os << mode << "\toverall\t" << rep.eer << '\t' << rep.ter << '\t'
       << rep.uer << '\n';
  return os.str();
}

std::string report_json(const ExperimentResult& result) {
  json j;
  j["dir"] = result.dir;
  j["domains"] = result.domains;
  auto rep_json = [](const EvalReport& r) {
    return json::parse(report_to_json(r));
  };
  json cells = json::object();
  for (const auto& [key, rep] : result.cell_reports) cells[key] = rep_json(rep);
  j["cells"] = std::move(cells);
  json agg = json::object();
  for (const auto& [mode, by_domain] : result.aggregate) {
    json dm = json::object();
    for (const auto& [domain, rep] : by_domain) dm[domain] = rep_json(rep);
    agg[mode] = std::move(dm);
  }
  j["aggregate"] = std::move(agg);
  json overall = json::object();
  for (const auto& [mode, rep] : result.overall) overall[mode] = rep_json(rep);
  j["overall"] = std::move(overall);
  json rows = json::array();
  for (const ComparisonRow& r : result.comparison) {
    json row;
    row["model"] = r.model;
    row["domain"] = r.domain;
    auto put = [&row](const char* key, const std::optional<double>& v) {
      if (v)
        row[key] = *v;
      else
        row[key] = nullptr;
    };
    put("delta_eer_pct", r.delta_eer);
    put("delta_ter_pct", r.delta_ter);
    put("delta_uer_pct", r.delta_uer);
    rows.push_back(std::move(row));
  }
  j["comparison"] = std::move(rows);
  j["failures"] = result.failures;
  return j.dump(2);
}

}  // namespace pausenlu
