#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "pausenlu/corpus.hpp"
#include "pausenlu/encoder.hpp"
#include "pausenlu/experiment.hpp"
#include "pausenlu/generator.hpp"
#include "pausenlu/metrics.hpp"
#include "pausenlu/pausestats.hpp"
#include "pausenlu/tagger.hpp"

namespace fs = std::filesystem;
using namespace pausenlu;

namespace {

void log_stage(const std::string& stage, const std::string& msg) {
  std::cout << "[" << stage << "] " << msg << "\n" << std::flush;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speech-pause statistics and pause-grounded sequence tagging"};
  app.require_subcommand(1);

  std::uint64_t g_seed = 1;
  std::string g_config;
  std::string g_out_dir = "out";
  int g_threads = static_cast<int>(std::thread::hardware_concurrency());
  if (g_threads < 1) g_threads = 1;
  app.add_option("--seed", g_seed, "global seed")->capture_default_str();
  app.add_option("--config", g_config, "config file for the subcommand");
  app.add_option("--out-dir", g_out_dir, "output directory")
      ->capture_default_str();
  app.add_option("--threads", g_threads, "worker threads where supported")
      ->capture_default_str();
  app.fallthrough();

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "generate a synthetic corpus");
  std::size_t gen_n = 10000;
  std::string gen_out = "corpus.jsonl";
  std::string gen_profile = "french";
  gen_cmd->add_option("--n", gen_n, "number of utterances")
      ->capture_default_str();
  gen_cmd->add_option("--out", gen_out, "corpus output path")
      ->capture_default_str();
  gen_cmd
      ->add_option("--profile", gen_profile,
                   "builtin profile when no --config is given")
      ->check(CLI::IsMember({"french", "experiment"}))
      ->capture_default_str();

  // analyze
  auto* ana_cmd =
      app.add_subcommand("analyze", "pause statistics for a corpus");
  std::string ana_corpus;
  std::string ana_out;
  double ana_threshold = 60.0;
  ana_cmd->add_option("--corpus", ana_corpus, "corpus path")->required();
  ana_cmd->add_option("--out", ana_out, "output path (default: stdout)");
  ana_cmd->add_option("--long-pause-ms", ana_threshold,
                      "long-pause threshold in ms")
      ->capture_default_str();

  // pretrain
  auto* pre_cmd = app.add_subcommand("pretrain", "pretrain an encoder");
  std::string pre_mode = "baseline";
  std::string pre_corpus, pre_out = "encoder.ckpt", pre_log;
  pre_cmd->add_option("--mode", pre_mode, "baseline|hbc|nlr")
      ->check(CLI::IsMember({"baseline", "hbc", "nlr"}))
      ->capture_default_str();
  pre_cmd->add_option("--corpus", pre_corpus, "training corpus")->required();
  pre_cmd->add_option("--out", pre_out, "checkpoint path")
      ->capture_default_str();
  pre_cmd->add_option("--log", pre_log, "loss-curve file (appended)");

  // train-parser
  auto* par_cmd = app.add_subcommand("train-parser", "train the tagger");
  std::string par_corpus, par_dev, par_encoder, par_out = "tagger.ckpt",
                                                par_history;
  par_cmd->add_option("--corpus", par_corpus, "training corpus")->required();
  par_cmd->add_option("--dev", par_dev, "development corpus")->required();
  par_cmd->add_option("--encoder", par_encoder, "encoder checkpoint")
      ->required();
  par_cmd->add_option("--out", par_out, "checkpoint path")
      ->capture_default_str();
  par_cmd->add_option("--history", par_history, "epoch history file");

  // tag
  auto* tag_cmd = app.add_subcommand("tag", "label a corpus");
  std::string tg_encoder, tg_parser, tg_corpus, tg_out = "predictions.tsv";
  tag_cmd->add_option("--encoder", tg_encoder, "encoder checkpoint")
      ->required();
  tag_cmd->add_option("--parser", tg_parser, "tagger checkpoint")->required();
  tag_cmd->add_option("--corpus", tg_corpus, "corpus path")->required();
  tag_cmd->add_option("--out", tg_out, "predictions path")
      ->capture_default_str();

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "score predictions");
  std::string ev_gold, ev_pred, ev_out;
  bool ev_ter_entities = false, ev_spans = false;
  eval_cmd->add_option("--gold", ev_gold, "gold corpus")->required();
  eval_cmd->add_option("--pred", ev_pred, "predictions file")->required();
  eval_cmd->add_option("--out", ev_out, "report path (default: stdout)");
  eval_cmd->add_flag("--ter-entities-only", ev_ter_entities,
                     "TER counts errors on entity tokens only");
  eval_cmd->add_flag("--spans", ev_spans,
                     "also print exact-span precision/recall/F1");

  // compare
  auto* cmp_cmd =
      app.add_subcommand("compare", "relative change vs a baseline report");
  std::string cmp_baseline, cmp_domain = "all", cmp_out;
  std::vector<std::string> cmp_variants;
  cmp_cmd->add_option("--baseline", cmp_baseline, "baseline report")
      ->required();
  cmp_cmd
      ->add_option("--variant", cmp_variants,
                   "variant report, NAME=PATH or PATH (repeatable)")
      ->required();
  cmp_cmd->add_option("--domain", cmp_domain, "domain label for the rows")
      ->capture_default_str();
  cmp_cmd->add_option("--out", cmp_out,
                      "output prefix; writes <prefix>.txt and <prefix>.tsv");

  // run-experiment
  auto* exp_cmd =
      app.add_subcommand("run-experiment", "full multi-seed comparison");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) {
      GeneratorConfig cfg;
      if (!g_config.empty()) {
        cfg = GeneratorConfig::from_json_file(g_config);
      } else if (gen_profile == "experiment") {
        cfg = GeneratorConfig::experiment_defaults(gen_n, g_seed);
      } else {
        cfg = GeneratorConfig::french_defaults(gen_n, g_seed);
      }
      log_stage("generate", "writing " + std::to_string(cfg.n_utterances) +
                                " utterances to " + gen_out);
      save_corpus(generate(cfg), gen_out);
    } else if (ana_cmd->parsed()) {
      const Corpus corpus = load_corpus(ana_corpus);
      AnalysisOptions opts;
      opts.long_pause_threshold_ms = ana_threshold;
      const AnalysisReport report = analyze_corpus(corpus, opts);
      std::ostringstream os;
      write_analysis(os, report);
      if (ana_out.empty()) {
        std::cout << os.str();
      } else {
        write_file(ana_out, os.str());
        log_stage("analyze", "wrote " + ana_out);
      }
    } else if (pre_cmd->parsed()) {
      EncoderConfig cfg;
      if (!g_config.empty()) cfg = EncoderConfig::from_json_file(g_config);
      cfg.mode = mode_parse(pre_mode);
      if (app.count("--seed")) cfg.seed = g_seed;
      const Corpus corpus = load_corpus(pre_corpus);
      log_stage("pretrain", "mode " + pre_mode + " on " +
                                std::to_string(corpus.size()) + " utterances");
      PretrainResult result = pretrain(corpus, cfg);
      if (!pre_log.empty()) {
        std::ofstream log(pre_log, std::ios::app);
        for (const EpochStats& st : result.curve)
          log << st.epoch << '\t' << st.l_bert << '\t' << st.l_aux << '\t'
              << st.total << '\t' << st.clamped << '\n';
      }
      for (const EpochStats& st : result.curve)
        log_stage("pretrain",
                  "epoch " + std::to_string(st.epoch) + " total " +
                      std::to_string(st.total));
      result.model.save(pre_out);
      log_stage("pretrain", "wrote " + pre_out);
    } else if (par_cmd->parsed()) {
      TaggerConfig cfg;
      if (!g_config.empty()) cfg = TaggerConfig::from_json_file(g_config);
      if (app.count("--seed")) cfg.seed = g_seed;
      const Corpus train = load_corpus(par_corpus);
      const Corpus dev = load_corpus(par_dev);
      const EncoderModel encoder = EncoderModel::load(par_encoder);
      log_stage("train-parser",
                "training on " + std::to_string(train.size()) + " utterances");
      TrainResult result = train_tagger(train, dev, encoder, cfg);
      if (!par_history.empty()) {
        std::ofstream hist(par_history);
        hist << "epoch\ttrain_nll\tdev_eer\n";
        for (const TrainEpoch& ep : result.history)
          hist << ep.epoch << '\t' << ep.train_nll << '\t' << ep.dev_eer
               << '\n';
      }
      log_stage("train-parser",
                "best dev EER " + std::to_string(result.best_dev_eer) +
                    " at epoch " + std::to_string(result.best_epoch));
      result.model.save(par_out);
      log_stage("train-parser", "wrote " + par_out);
    } else if (tag_cmd->parsed()) {
      const EncoderModel encoder = EncoderModel::load(tg_encoder);
      const TaggerModel tagger = TaggerModel::load(tg_parser);
      const Corpus corpus = load_corpus(tg_corpus);
      Predictions preds;
      for (const Utterance& u : corpus)
        preds.emplace(u.id, tag(tagger, encoder, u));
      write_predictions(tg_out, preds);
      log_stage("tag", "wrote " + tg_out);
    } else if (eval_cmd->parsed()) {
      const Corpus gold = load_corpus(ev_gold);
      const Predictions preds = read_predictions(ev_pred);
      EvalOptions opts;
      opts.ter_entities_only = ev_ter_entities;
      const EvalReport report = evaluate(gold, preds, opts);
      std::string text = report_to_json(report);
      if (ev_spans) {
        const SpanScores s = span_scores(gold, preds);
        text += "\nspan P/R/F1: " + std::to_string(s.precision) + " " +
                std::to_string(s.recall) + " " + std::to_string(s.f1);
      }
      if (ev_out.empty()) {
        std::cout << text << "\n";
      } else {
        write_file(ev_out, text + "\n");
        log_stage("evaluate", "wrote " + ev_out);
      }
    } else if (cmp_cmd->parsed()) {
      const EvalReport baseline = report_from_json(read_file(cmp_baseline));
      std::vector<std::pair<std::string, EvalReport>> variants;
      for (const std::string& spec : cmp_variants) {
        const std::size_t eq = spec.find('=');
        std::string name = eq == std::string::npos
                               ? fs::path(spec).stem().string()
                               : spec.substr(0, eq);
        const std::string path =
            eq == std::string::npos ? spec : spec.substr(eq + 1);
        variants.emplace_back(name, report_from_json(read_file(path)));
      }
      const std::vector<ComparisonRow> rows =
          compare(baseline, variants, cmp_domain);
      const std::string text = render_comparison_text(rows);
      if (cmp_out.empty()) {
        std::cout << text;
      } else {
        write_file(cmp_out + ".txt", text);
        write_file(cmp_out + ".tsv", render_comparison_tsv(rows));
        log_stage("compare", "wrote " + cmp_out + ".txt and .tsv");
      }
    } else if (exp_cmd->parsed()) {
      ExperimentConfig cfg = g_config.empty()
                                 ? ExperimentConfig::defaults()
                                 : ExperimentConfig::from_json_file(g_config);
      if (app.count("--out-dir")) cfg.out_dir = g_out_dir;
      const ExperimentResult result = run_experiment(cfg, g_threads);
      std::cout << report_render(result);
      log_stage("run-experiment", "artifacts in " + result.dir);
      if (!result.failures.empty()) {
        log_stage("run-experiment",
                  std::to_string(result.failures.size()) + " cell(s) failed");
        return 1;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "[error] " << e.what() << "\n";
    return 1;
  }
  return 0;
}
