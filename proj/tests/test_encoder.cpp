#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "fd_check.hpp"
#include "pausenlu/corpus.hpp"
#include "pausenlu/encoder.hpp"
#include "pausenlu/generator.hpp"

using namespace pausenlu;

namespace {

Utterance utt(std::string id, const std::vector<std::string>& texts,
              const std::vector<double>& pauses) {
  Utterance u;
  u.id = std::move(id);
  u.domain = "music";
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const double p = i < pauses.size() ? pauses[i] : 0.0;
    u.tokens.push_back(Token{texts[i], p, BioTag{}});
  }
  return u;
}

// Word frequencies: delta x4, alpha x3, bravo x3, echo x2, charlie x1.
Corpus vocab_corpus() {
  return {utt("v1", {"delta", "alpha", "bravo", "delta"}, {}),
          utt("v2", {"delta", "alpha", "bravo", "echo"}, {}),
          utt("v3", {"delta", "alpha", "bravo", "echo", "charlie"}, {})};
}

// Six distinct words so the vocabulary is small and fully known.
const std::vector<std::string> kProbeTexts = {"play", "the",    "song",
                                              "by",   "artist", "now"};

Corpus probe_corpus() { return {utt("p1", kProbeTexts, {})}; }

EncoderConfig tiny_config(EncoderMode mode) {
  EncoderConfig cfg;
  cfg.mode = mode;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.hidden = 8;
  cfg.ff_dim = 16;
  cfg.max_len = 8;
  cfg.vocab_max = 100;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 11;
  return cfg;
}

// Uncorrupted example over kProbeTexts: the plain inference route then sees
// exactly the same ids, so head outputs can be recomputed from embed().
PretrainExample probe_example(const Vocabulary& vocab) {
  PretrainExample ex;
  ex.utterance_id = "probe";
  for (const std::string& t : kProbeTexts)
    ex.original_ids.push_back(vocab.id_of(t));
  ex.input_ids = ex.original_ids;
  ex.pause_ms = {0.0, 12.0, 0.0, 80.0, 400.0, 0.0};
  ex.mlm_positions = {1, 3};
  ex.pause_positions = {0, 1, 4};  // absent, S, L under the default scheme
  return ex;
}

Mat rows_at(const Mat& h, const std::vector<int>& positions) {
  Mat out(static_cast<Eigen::Index>(positions.size()), h.cols());
  for (std::size_t i = 0; i < positions.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = h.row(positions[i]);
  return out;
}

Mat manual_softmax_rows(const Mat& a) {
  Mat out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mx = a.row(r).maxCoeff();
    Eigen::ArrayXd e = (a.row(r).array() - mx).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return out;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  return (a - b).cwiseAbs().maxCoeff();
}

std::string scratch_path(const std::string& leaf) {
  return (std::filesystem::temp_directory_path() / leaf).string();
}

}  // namespace

TEST_CASE("vocabulary keeps the most frequent tokens, ties lexicographic") {
  const Corpus corpus = vocab_corpus();

  SUBCASE("truncation drops the rarest tokens") {
    const Vocabulary v = build_vocabulary(corpus, 4 + 3);
    REQUIRE(v.size() == 7);
    // delta (4) first, then the count-3 tie alpha < bravo.
    CHECK(v.id_of("delta") == 4);
    CHECK(v.id_of("alpha") == 5);
    CHECK(v.id_of("bravo") == 6);
    CHECK(v.id_of("echo") == Vocabulary::kUnk);
    CHECK(v.id_of("charlie") == Vocabulary::kUnk);
    CHECK(v.token_of(4) == "delta");
  }

  SUBCASE("a generous cap keeps every distinct token") {
    const Vocabulary v = build_vocabulary(corpus, 1000);
    CHECK(v.size() == 4 + 5);
    CHECK(v.id_of("charlie") != Vocabulary::kUnk);
  }

  SUBCASE("the special ids occupy the first four slots") {
    const Vocabulary v = build_vocabulary(corpus, 100);
    REQUIRE(v.id_to_token.size() >= 4);
    CHECK(v.id_of(v.id_to_token[Vocabulary::kPad]) == Vocabulary::kPad);
    CHECK(v.id_of(v.id_to_token[Vocabulary::kMask]) == Vocabulary::kMask);
  }

  SUBCASE("a cap below the special count is rejected") {
    CHECK_THROWS(build_vocabulary(corpus, 3));
  }

  SUBCASE("json round trip preserves ids") {
    const Vocabulary v = build_vocabulary(corpus, 7);
    const Vocabulary w = Vocabulary::from_json_text(v.to_json_text());
    CHECK(w.id_to_token == v.id_to_token);
    CHECK(w.id_of("alpha") == v.id_of("alpha"));
    CHECK(w.id_of("charlie") == Vocabulary::kUnk);
  }
}

TEST_CASE("vocabulary coverage is the non-unknown token fraction") {
  const Corpus corpus = vocab_corpus();
  const Vocabulary v = build_vocabulary(corpus, 7);  // keeps 10 of 13 tokens
  CHECK(vocabulary_coverage(corpus, v) == doctest::Approx(10.0 / 13.0));
  const Vocabulary full = build_vocabulary(corpus, 1000);
  CHECK(vocabulary_coverage(corpus, full) == doctest::Approx(1.0));
}

TEST_CASE("pause binning boundary fixtures") {
  const BinningScheme scheme;

  SUBCASE("zero means absent") {
    CHECK_FALSE(bin_pause(0.0, scheme).present);
  }

  SUBCASE("boundary durations land in the documented bins") {
    struct Fixture {
      double ms;
      FineBin fine;
    };
    const std::vector<Fixture> fixtures = {
        {59.0, FineBin::S},  {59.999, FineBin::S}, {60.0, FineBin::M},
        {310.0, FineBin::M}, {311.0, FineBin::L},  {10000.0, FineBin::L}};
    for (const Fixture& f : fixtures) {
      CAPTURE(f.ms);
      const PauseBin b = bin_pause(f.ms, scheme);
      CHECK(b.present);
      CHECK(b.fine == f.fine);
    }
  }

  SUBCASE("negative durations are rejected") {
    CHECK_THROWS(bin_pause(-1.0, scheme));
    CHECK_THROWS(normalize_pause(-0.5, scheme));
  }

  SUBCASE("normalization divides by the configured span") {
    CHECK(normalize_pause(0.0, scheme) == 0.0);
    CHECK(normalize_pause(10000.0, scheme) == 1.0);
    CHECK(normalize_pause(55.04, scheme) ==
          doctest::Approx(0.005504).epsilon(1e-12));
  }

  SUBCASE("scheme validation") {
    BinningScheme bad = scheme;
    bad.s_upper_ms = 0.0;
    CHECK_THROWS(bad.validate());
    bad = scheme;
    bad.s_upper_ms = bad.m_upper_ms;
    CHECK_THROWS(bad.validate());
    bad = scheme;
    bad.m_upper_ms = bad.noise_cutoff_ms;
    CHECK_THROWS(bad.validate());
    bad = scheme;
    bad.norm_divisor_ms = 0.0;
    CHECK_THROWS(bad.validate());
    CHECK_NOTHROW(scheme.validate());
  }
}

TEST_CASE("tertile scheme splits the nonzero pauses into thirds") {
  SUBCASE("boundaries come from the sorted nonzero durations") {
    const BinningScheme s =
        tertile_scheme({0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0});
    CHECK(s.s_upper_ms == 30.0);
    CHECK(s.m_upper_ms == 50.0);
    CHECK(s.noise_cutoff_ms == 10000.0);  // carried over from the base
    CHECK(bin_pause(25.0, s).fine == FineBin::S);
    CHECK(bin_pause(30.0, s).fine == FineBin::M);
    CHECK(bin_pause(50.0, s).fine == FineBin::M);
    CHECK(bin_pause(55.0, s).fine == FineBin::L);
  }

  SUBCASE("durations beyond the noise cutoff are not candidates") {
    const BinningScheme s =
        tertile_scheme({10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 20000.0});
    CHECK(s.s_upper_ms == 30.0);
    CHECK(s.m_upper_ms == 50.0);
  }

  SUBCASE("too few or degenerate samples are rejected") {
    CHECK_THROWS_WITH_AS(tertile_scheme({0.0, 5.0, 7.0}),
                         doctest::Contains("at least 3"), std::runtime_error);
    CHECK_THROWS_WITH_AS(tertile_scheme({5.0, 5.0, 5.0, 5.0}),
                         doctest::Contains("degenerate"), std::runtime_error);
  }
}

TEST_CASE("closed-form masked-token loss fixtures") {
  CHECK(loss_bert_from_probs({0.1}) ==
        doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(loss_bert_from_probs({1.0}) == 0.0);
  CHECK(loss_bert_from_probs({0.5, 0.25}) ==
        doctest::Approx(std::log(8.0)).epsilon(1e-12));
  // the probability floor engages below the clamp
  CHECK(loss_bert_from_probs({0.0}) ==
        doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
  CHECK(loss_bert_from_probs({0.0}, 0.5) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(loss_bert_from_probs({}) == 0.0);
}

TEST_CASE("closed-form hierarchical pause loss fixtures") {
  SUBCASE("confident absence costs nothing") {
    CHECK(loss_hbc_from_probs({{1.0, false, 0.0}}) == 0.0);
  }
  SUBCASE("an even coarse/fine split costs ln 4") {
    CHECK(loss_hbc_from_probs({{0.5, true, 0.5}}) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("absent positions reduce to the coarse cross-entropy") {
    const std::vector<HbcTerm> terms = {{0.8, false, 0.123},
                                        {0.5, false, 0.456}};
    CHECK(loss_hbc_from_probs(terms) ==
          doctest::Approx(loss_bert_from_probs({0.8, 0.5})).epsilon(1e-12));
  }
  SUBCASE("a perfect present prediction costs nothing") {
    CHECK(loss_hbc_from_probs({{1.0, true, 1.0}}) == 0.0);
  }
}

TEST_CASE("closed-form pause regression loss fixtures") {
  CHECK(loss_nlr_from_values({{0.3, 0.3}}) == 0.0);
  CHECK(loss_nlr_from_values({{0.2, 0.5}}) ==
        doctest::Approx(0.09).epsilon(1e-12));
  CHECK(loss_nlr_from_values({{0.2, 0.5}, {1.0, 0.0}}) ==
        doctest::Approx(1.09).epsilon(1e-12));
  CHECK(loss_nlr_from_values({}) == 0.0);
}

TEST_CASE("pretraining examples follow the corruption recipe") {
  Corpus corpus;
  std::vector<std::string> words;
  for (int i = 0; i < 200; ++i) words.push_back("w" + std::to_string(i));
  // 300 utterances of 20 tokens; position 7 carries the only nonzero pause.
  for (int n = 0; n < 300; ++n) {
    std::vector<std::string> texts;
    std::vector<double> pauses(20, 0.0);
    for (int i = 0; i < 20; ++i) texts.push_back(words[(n * 20 + i) % 200]);
    pauses[7] = 42.0;
    corpus.push_back(utt("u" + std::to_string(n), texts, pauses));
  }
  const Vocabulary vocab = build_vocabulary(corpus, 400);
  const BinningScheme scheme;

  const auto examples = make_pretrain_examples(corpus, vocab, scheme, 7);
  REQUIRE(examples.size() == corpus.size());

  SUBCASE("regeneration with the same seed is identical") {
    const auto again = make_pretrain_examples(corpus, vocab, scheme, 7);
    REQUIRE(again.size() == examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
      CHECK(again[i].input_ids == examples[i].input_ids);
      CHECK(again[i].mlm_positions == examples[i].mlm_positions);
      CHECK(again[i].pause_positions == examples[i].pause_positions);
    }
  }

  SUBCASE("a different seed corrupts differently") {
    const auto other = make_pretrain_examples(corpus, vocab, scheme, 8);
    bool any_difference = false;
    for (std::size_t i = 0; i < examples.size(); ++i)
      if (other[i].input_ids != examples[i].input_ids ||
          other[i].pause_positions != examples[i].pause_positions)
        any_difference = true;
    CHECK(any_difference);
  }

  SUBCASE("target counts and the nonzero-pause guarantee hold") {
    for (const PretrainExample& ex : examples) {
      CHECK(ex.mlm_positions.size() == 3);  // round(0.15 * 20)
      CHECK(ex.pause_positions.size() == 3);
      bool has_nonzero = false;
      for (int p : ex.pause_positions)
        if (ex.pause_ms[static_cast<std::size_t>(p)] > 0.0) has_nonzero = true;
      CHECK(has_nonzero);
      for (std::size_t i = 1; i < ex.mlm_positions.size(); ++i)
        CHECK(ex.mlm_positions[i - 1] < ex.mlm_positions[i]);
      for (std::size_t i = 1; i < ex.pause_positions.size(); ++i)
        CHECK(ex.pause_positions[i - 1] < ex.pause_positions[i]);
    }
  }

  SUBCASE("corruption touches only the picked positions at 80/10/10") {
    std::size_t picks = 0, masked = 0, randomized = 0, kept = 0;
    for (const PretrainExample& ex : examples) {
      std::vector<bool> is_pick(ex.input_ids.size(), false);
      for (int p : ex.mlm_positions) is_pick[static_cast<std::size_t>(p)] = true;
      for (std::size_t i = 0; i < ex.input_ids.size(); ++i) {
        if (!is_pick[i]) {
          CHECK(ex.input_ids[i] == ex.original_ids[i]);
          continue;
        }
        ++picks;
        if (ex.input_ids[i] == Vocabulary::kMask)
          ++masked;
        else if (ex.input_ids[i] == ex.original_ids[i])
          ++kept;
        else
          ++randomized;
      }
    }
    REQUIRE(picks == 900);
    const double n = static_cast<double>(picks);
    CHECK(static_cast<double>(masked) / n > 0.74);
    CHECK(static_cast<double>(masked) / n < 0.86);
    CHECK(static_cast<double>(randomized) / n > 0.05);
    CHECK(static_cast<double>(randomized) / n < 0.15);
    CHECK(static_cast<double>(kept) / n > 0.05);
    CHECK(static_cast<double>(kept) / n < 0.15);
  }

  SUBCASE("pauses beyond the noise cutoff are never regression targets") {
    Corpus noisy = {utt("n0", {"w0", "w1", "w2", "w3", "w4"},
                        {20000.0, 20000.0, 5.0, 20000.0, 20000.0})};
    const auto exs = make_pretrain_examples(noisy, vocab, scheme, 3);
    REQUIRE(exs.size() == 1);
    CHECK(exs[0].pause_positions == std::vector<int>{2});
  }

  SUBCASE("short utterances still get one target of each kind") {
    Corpus tiny = {utt("t0", {"w0"}, {0.0}), utt("t1", {"w0", "w1"}, {9.0})};
    const auto exs = make_pretrain_examples(tiny, vocab, scheme, 3);
    REQUIRE(exs.size() == 2);
    CHECK(exs[0].mlm_positions.size() == 1);
    CHECK(exs[0].pause_positions.size() == 1);
    CHECK(exs[1].mlm_positions.size() == 1);
    REQUIRE(exs[1].pause_positions.size() == 1);
    CHECK(exs[1].pause_ms[static_cast<std::size_t>(
              exs[1].pause_positions[0])] == 9.0);
  }

  SUBCASE("over-long utterances are truncated to max_len") {
    Corpus longu;
    std::vector<std::string> texts(40, "w0");
    longu.push_back(utt("l0", texts, std::vector<double>(40, 1.0)));
    const auto exs = make_pretrain_examples(longu, vocab, scheme, 3, 32);
    REQUIRE(exs.size() == 1);
    CHECK(exs[0].input_ids.size() == 32);
    CHECK(exs[0].pause_ms.size() == 32);
    CHECK(exs[0].mlm_positions.size() == 5);  // round(0.15 * 32)
    for (int p : exs[0].mlm_positions) CHECK(p < 32);
  }
}

TEST_CASE("encoder config json round trip and validation") {
  SUBCASE("round trip preserves every field") {
    EncoderConfig cfg = tiny_config(EncoderMode::kHbc);
    cfg.lr = 0.0025;
    cfg.lambda_aux = 0.75;
    cfg.dropout_prob = 0.1;
    cfg.scheme.s_upper_ms = 50.0;
    const std::string text = cfg.to_json_text();
    CHECK(text.find("\"lambda\"") != std::string::npos);
    const EncoderConfig back = EncoderConfig::from_json_text(text);
    CHECK(mode_str(back.mode) == "hbc");
    CHECK(back.n_layers == cfg.n_layers);
    CHECK(back.n_heads == cfg.n_heads);
    CHECK(back.hidden == cfg.hidden);
    CHECK(back.ff_dim == cfg.ff_dim);
    CHECK(back.max_len == cfg.max_len);
    CHECK(back.vocab_max == cfg.vocab_max);
    CHECK(back.epochs == cfg.epochs);
    CHECK(back.batch_size == cfg.batch_size);
    CHECK(back.lr == cfg.lr);
    CHECK(back.lambda_aux == cfg.lambda_aux);
    CHECK(back.dropout_prob == cfg.dropout_prob);
    CHECK(back.seed == cfg.seed);
    CHECK(back.scheme.s_upper_ms == 50.0);
  }

  SUBCASE("mode names round trip and bad names are rejected") {
    for (EncoderMode m :
         {EncoderMode::kBaseline, EncoderMode::kHbc, EncoderMode::kNlr})
      CHECK(mode_parse(mode_str(m)) == m);
    CHECK_THROWS(mode_parse("bert"));
  }

  SUBCASE("invalid settings are rejected") {
    EncoderConfig cfg = tiny_config(EncoderMode::kBaseline);
    cfg.hidden = 9;  // not divisible by n_heads = 2
    CHECK_THROWS(cfg.validate());
    cfg = tiny_config(EncoderMode::kBaseline);
    cfg.lr = 0.0;
    CHECK_THROWS(cfg.validate());
    cfg = tiny_config(EncoderMode::kBaseline);
    cfg.lambda_aux = -0.1;
    CHECK_THROWS(cfg.validate());
    cfg = tiny_config(EncoderMode::kBaseline);
    cfg.dropout_prob = 1.0;
    CHECK_THROWS(cfg.validate());
    cfg = tiny_config(EncoderMode::kBaseline);
    cfg.vocab_max = 2;
    CHECK_THROWS(cfg.validate());
    CHECK_NOTHROW(tiny_config(EncoderMode::kNlr).validate());
  }
}

TEST_CASE("plain inference matches the taped trunk and mutates nothing") {
  const Corpus corpus = probe_corpus();
  const Vocabulary vocab = build_vocabulary(corpus, 100);
  EncoderModel model(tiny_config(EncoderMode::kBaseline), vocab);

  std::vector<int> ids;
  for (const std::string& t : kProbeTexts) ids.push_back(vocab.id_of(t));

  SUBCASE("the two forward routes agree to machine precision") {
    const Mat plain = model.embed(kProbeTexts);
    Tape tape;
    std::vector<Value> leaves = model.param_leaves(tape, false);
    const Mat taped = model.trunk_on_tape(tape, leaves, ids).val();
    REQUIRE(plain.rows() == static_cast<Eigen::Index>(kProbeTexts.size()));
    REQUIRE(plain.cols() == model.config().hidden);
    CHECK(max_abs_diff(plain, taped) <= 1e-12);
  }

  SUBCASE("unknown tokens share the unknown embedding row") {
    const Mat a = model.embed({"zzz-never-seen", "play"});
    const Mat b = model.embed({"another-miss", "play"});
    CHECK(max_abs_diff(a, b) == 0.0);
  }

  SUBCASE("sequences past max_len reuse the last position slot") {
    std::vector<std::string> many(12, "play");
    const Mat h = model.embed(many);
    REQUIRE(h.rows() == 12);
    // positions 7.. all clamp to the final slot, so those rows coincide
    CHECK((h.row(8) - h.row(10)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((h.row(3) - h.row(4)).cwiseAbs().maxCoeff() > 0.0);
  }

  SUBCASE("inference is pure") {
    const Mat before = model.params().at("tok_emb").value;
    const Mat first = model.embed(kProbeTexts);
    const Mat second = model.embed(kProbeTexts);
    CHECK(max_abs_diff(first, second) == 0.0);
    CHECK(max_abs_diff(before, model.params().at("tok_emb").value) == 0.0);
  }
}

TEST_CASE("taped pretraining losses agree with the closed-form routes") {
  const Corpus corpus = probe_corpus();
  const Vocabulary vocab = build_vocabulary(corpus, 100);
  const PretrainExample ex = probe_example(vocab);

  auto masked_loss_by_hand = [&](const EncoderModel& model) {
    const Mat h = model.embed(kProbeTexts);
    const Mat xb = rows_at(h, ex.mlm_positions);
    Mat logits = xb * model.params().at("mlm.w").value;
    logits.rowwise() += model.params().at("mlm.b").value.row(0);
    const Mat probs = manual_softmax_rows(logits);
    std::vector<double> picked;
    for (std::size_t i = 0; i < ex.mlm_positions.size(); ++i)
      picked.push_back(probs(
          static_cast<Eigen::Index>(i),
          ex.original_ids[static_cast<std::size_t>(ex.mlm_positions[i])]));
    return loss_bert_from_probs(picked, model.config().prob_clamp);
  };

  SUBCASE("baseline: the masked-token term is the whole loss") {
    EncoderModel model(tiny_config(EncoderMode::kBaseline), vocab);
    Tape tape;
    std::vector<Value> leaves = model.param_leaves(tape, false);
    const ExampleLoss el = model.build_loss(tape, leaves, ex);
    CHECK(el.l_bert == doctest::Approx(masked_loss_by_hand(model)).epsilon(1e-10));
    CHECK(el.l_aux == 0.0);
    CHECK(el.total.val()(0, 0) == el.l_bert);
  }

  SUBCASE("hierarchical mode: coarse/fine terms match a by-hand rebuild") {
    EncoderModel model(tiny_config(EncoderMode::kHbc), vocab);
    Tape tape;
    std::vector<Value> leaves = model.param_leaves(tape, false);
    const ExampleLoss el = model.build_loss(tape, leaves, ex);

    const Mat h = model.embed(kProbeTexts);
    const Mat xs = rows_at(h, ex.pause_positions);
    Mat cs = xs * model.params().at("hbc.coarse.w").value;
    cs.array() += model.params().at("hbc.coarse.b").value(0, 0);
    Mat flogits = xs * model.params().at("hbc.fine.w").value;
    flogits.rowwise() += model.params().at("hbc.fine.b").value.row(0);
    const Mat fprobs = manual_softmax_rows(flogits);

    std::vector<HbcTerm> terms;
    for (std::size_t i = 0; i < ex.pause_positions.size(); ++i) {
      const double pause =
          ex.pause_ms[static_cast<std::size_t>(ex.pause_positions[i])];
      const PauseBin bin = bin_pause(pause, model.config().scheme);
      const double p =
          1.0 / (1.0 + std::exp(-cs(static_cast<Eigen::Index>(i), 0)));
      HbcTerm term;
      term.present = bin.present;
      term.coarse_prob_true = bin.present ? p : 1.0 - p;
      term.fine_prob_true =
          bin.present ? fprobs(static_cast<Eigen::Index>(i),
                               static_cast<int>(bin.fine))
                      : 0.0;
      terms.push_back(term);
    }
    CHECK(el.l_aux == doctest::Approx(loss_hbc_from_probs(terms)).epsilon(1e-10));
    CHECK(el.l_bert == doctest::Approx(masked_loss_by_hand(model)).epsilon(1e-10));
    CHECK(el.total.val()(0, 0) ==
          doctest::Approx(el.l_bert + model.config().lambda_aux * el.l_aux)
              .epsilon(1e-12));
  }

  SUBCASE("hierarchical mode with only absent targets is pure coarse loss") {
    EncoderModel model(tiny_config(EncoderMode::kHbc), vocab);
    PretrainExample absent = ex;
    absent.pause_positions = {0, 2, 5};  // all zero pauses
    Tape tape;
    std::vector<Value> leaves = model.param_leaves(tape, false);
    const ExampleLoss el = model.build_loss(tape, leaves, absent);

    const Mat h = model.embed(kProbeTexts);
    const Mat xs = rows_at(h, absent.pause_positions);
    double coarse = 0.0;
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
      const double s =
          (xs.row(i) * model.params().at("hbc.coarse.w").value)(0, 0) +
          model.params().at("hbc.coarse.b").value(0, 0);
      coarse -= std::log(1.0 - 1.0 / (1.0 + std::exp(-s)));
    }
    CHECK(el.l_aux == doctest::Approx(coarse).epsilon(1e-10));
  }

  SUBCASE("regression mode: squared error against normalized durations") {
    EncoderModel model(tiny_config(EncoderMode::kNlr), vocab);
    Tape tape;
    std::vector<Value> leaves = model.param_leaves(tape, false);
    const ExampleLoss el = model.build_loss(tape, leaves, ex);

    const Mat h = model.embed(kProbeTexts);
    const Mat xs = rows_at(h, ex.pause_positions);
    std::vector<NlrTerm> terms;
    for (std::size_t i = 0; i < ex.pause_positions.size(); ++i) {
      const double s =
          (xs.row(static_cast<Eigen::Index>(i)) *
           model.params().at("nlr.w").value)(0, 0) +
          model.params().at("nlr.b").value(0, 0);
      NlrTerm term;
      term.target = normalize_pause(
          ex.pause_ms[static_cast<std::size_t>(ex.pause_positions[i])],
          model.config().scheme);
      term.predicted = 1.0 / (1.0 + std::exp(-s));
      terms.push_back(term);
    }
    CHECK(el.l_aux ==
          doctest::Approx(loss_nlr_from_values(terms)).epsilon(1e-10));
  }

  SUBCASE("regression loss ignores pauses outside the target set") {
    EncoderModel model(tiny_config(EncoderMode::kNlr), vocab);
    Tape t1;
    std::vector<Value> l1 = model.param_leaves(t1, false);
    const ExampleLoss a = model.build_loss(t1, l1, ex);

    PretrainExample shifted = ex;
    shifted.pause_ms[3] = 999.0;  // position 3 is not a regression target
    Tape t2;
    std::vector<Value> l2 = model.param_leaves(t2, false);
    const ExampleLoss b = model.build_loss(t2, l2, shifted);
    CHECK(a.l_aux == b.l_aux);
    CHECK(a.l_bert == b.l_bert);
  }

  SUBCASE("no pause targets means the auxiliary term vanishes") {
    EncoderModel model(tiny_config(EncoderMode::kNlr), vocab);
    PretrainExample bare = ex;
    bare.pause_positions.clear();
    Tape tape;
    std::vector<Value> leaves = model.param_leaves(tape, false);
    const ExampleLoss el = model.build_loss(tape, leaves, bare);
    CHECK(el.l_aux == 0.0);
    CHECK(el.total.val()(0, 0) == el.l_bert);
  }

  SUBCASE("the auxiliary weight scales the total") {
    EncoderConfig cfg = tiny_config(EncoderMode::kNlr);
    cfg.lambda_aux = 0.5;
    EncoderModel model(cfg, vocab);
    Tape tape;
    std::vector<Value> leaves = model.param_leaves(tape, false);
    const ExampleLoss el = model.build_loss(tape, leaves, ex);
    CHECK(el.total.val()(0, 0) ==
          doctest::Approx(el.l_bert + 0.5 * el.l_aux).epsilon(1e-12));
  }

  SUBCASE("an example without masked positions is rejected") {
    EncoderModel model(tiny_config(EncoderMode::kBaseline), vocab);
    PretrainExample bad = ex;
    bad.mlm_positions.clear();
    Tape tape;
    std::vector<Value> leaves = model.param_leaves(tape, false);
    CHECK_THROWS(model.build_loss(tape, leaves, bad));
  }

  SUBCASE("the probability floor fires and is counted") {
    EncoderConfig cfg = tiny_config(EncoderMode::kBaseline);
    cfg.prob_clamp = 0.4;  // above any near-uniform softmax output
    EncoderModel model(cfg, vocab);
    Tape tape;
    std::vector<Value> leaves = model.param_leaves(tape, false);
    const ExampleLoss el = model.build_loss(tape, leaves, ex);
    CHECK(el.clamped == ex.mlm_positions.size());
    CHECK(el.l_bert ==
          doctest::Approx(-2.0 * std::log(0.4)).epsilon(1e-12));
  }
}

TEST_CASE("finite differences confirm the pretraining loss gradients") {
  const Corpus corpus = probe_corpus();
  const Vocabulary vocab = build_vocabulary(corpus, 100);
  const PretrainExample ex = probe_example(vocab);

  for (EncoderMode mode :
       {EncoderMode::kBaseline, EncoderMode::kHbc, EncoderMode::kNlr}) {
    CAPTURE(mode_str(mode));
    EncoderModel model(tiny_config(mode), vocab);
    std::vector<Mat> inputs;
    for (const Param& p : model.params().all()) inputs.push_back(p.value);
    const auto f = [&](Tape& tape, std::vector<Value>& leaves) {
      return model.build_loss(tape, leaves, ex).total;
    };
    CHECK(fdcheck::max_grad_error(inputs, f) < 1e-4);
  }
}

TEST_CASE("pretraining drives the loss down deterministically") {
  const Corpus corpus = generate(GeneratorConfig::french_defaults(80, 21));

  EncoderConfig cfg = tiny_config(EncoderMode::kNlr);
  cfg.hidden = 16;
  cfg.ff_dim = 32;
  cfg.max_len = 16;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.lr = 3e-3;
  cfg.vocab_max = 400;
  cfg.seed = 5;

  const PretrainResult run = pretrain(corpus, cfg);
  REQUIRE(run.curve.size() == 4);

  SUBCASE("the training curve improves and its totals are consistent") {
    CHECK(run.curve.back().total < run.curve.front().total);
    for (const EpochStats& s : run.curve) {
      CHECK(s.total ==
            doctest::Approx(s.l_bert + cfg.lambda_aux * s.l_aux)
                .epsilon(1e-12));
      CHECK(std::isfinite(s.total));
    }
    CHECK(run.curve.front().epoch == 1);
    CHECK(run.curve.back().epoch == 4);
  }

  SUBCASE("the same seed reproduces the run bit for bit") {
    const PretrainResult again = pretrain(corpus, cfg);
    REQUIRE(again.curve.size() == run.curve.size());
    for (std::size_t i = 0; i < run.curve.size(); ++i) {
      CHECK(again.curve[i].l_bert == run.curve[i].l_bert);
      CHECK(again.curve[i].l_aux == run.curve[i].l_aux);
      CHECK(again.curve[i].total == run.curve[i].total);
      CHECK(again.curve[i].clamped == run.curve[i].clamped);
    }
    const std::vector<std::string> probe = {"play", "some", "music"};
    CHECK(max_abs_diff(again.model.embed(probe), run.model.embed(probe)) ==
          0.0);
  }

  SUBCASE("a different seed changes the model") {
    EncoderConfig other = cfg;
    other.seed = 6;
    const PretrainResult alt = pretrain(corpus, other);
    const std::vector<std::string> probe = {"play", "some", "music"};
    CHECK(max_abs_diff(alt.model.embed(probe), run.model.embed(probe)) > 0.0);
  }
}

TEST_CASE("a zero auxiliary weight reproduces the baseline trunk exactly") {
  const Corpus corpus = generate(GeneratorConfig::french_defaults(40, 9));

  EncoderConfig base = tiny_config(EncoderMode::kBaseline);
  base.epochs = 2;
  base.vocab_max = 300;
  base.seed = 13;
  EncoderConfig off = base;
  off.mode = EncoderMode::kHbc;
  off.lambda_aux = 0.0;

  const PretrainResult a = pretrain(corpus, base);
  const PretrainResult b = pretrain(corpus, off);
  const std::vector<std::string> probe = {"play", "the", "latest", "hits"};
  CHECK(max_abs_diff(a.model.embed(probe), b.model.embed(probe)) == 0.0);
  for (std::size_t i = 0; i < a.curve.size(); ++i)
    CHECK(a.curve[i].l_bert == b.curve[i].l_bert);
}

TEST_CASE("encoder checkpoints round trip through disk") {
  const Corpus corpus = generate(GeneratorConfig::french_defaults(30, 17));
  EncoderConfig cfg = tiny_config(EncoderMode::kHbc);
  cfg.epochs = 1;
  cfg.vocab_max = 300;
  const PretrainResult run = pretrain(corpus, cfg);

  const std::string path = scratch_path("pausenlu_encoder_roundtrip.json");
  run.model.save(path);
  const EncoderModel back = EncoderModel::load(path);
  std::remove(path.c_str());

  CHECK(back.config().mode == EncoderMode::kHbc);
  CHECK(back.config().hidden == cfg.hidden);
  CHECK(back.config().seed == cfg.seed);
  CHECK(back.vocab().id_to_token == run.model.vocab().id_to_token);
  CHECK(back.params().count_scalars() == run.model.params().count_scalars());

  const std::vector<std::string> probe = {"play", "something", "good"};
  CHECK(max_abs_diff(back.embed(probe), run.model.embed(probe)) == 0.0);
}
