#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pausenlu/corpus.hpp"
#include "pausenlu/numcore.hpp"
#include "pausenlu/rng.hpp"

namespace pausenlu {

// Token vocabulary with dense ids; the four special ids come first.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kMask = 2;
  static constexpr int kCls = 3;  // reserved; sequences carry no leading CLS
  static constexpr int kNumSpecials = 4;

  std::vector<std::string> id_to_token;  // [0..3] are special markers
  std::unordered_map<std::string, int> token_to_id;

  int id_of(const std::string& token) const;  // unknown -> kUnk
  const std::string& token_of(int id) const;
  int size() const { return static_cast<int>(id_to_token.size()); }

  std::string to_json_text() const;
  static Vocabulary from_json_text(const std::string& text);
};

// Keeps the most frequent tokens (ties broken lexicographically); max_size
// includes the specials.
Vocabulary build_vocabulary(const Corpus& corpus, std::size_t max_size);

// Fraction of corpus tokens that map to a non-UNK id.
double vocabulary_coverage(const Corpus& corpus, const Vocabulary& vocab);

// Pause duration bins: S = (0, s_upper), M = [s_upper, m_upper],
// L = (m_upper, ...]. Zero means no pause. Durations above noise_cutoff are
// excluded upstream, never here.
struct BinningScheme {
  double s_upper_ms = 60.0;
  double m_upper_ms = 310.0;
  double noise_cutoff_ms = 10000.0;
  double norm_divisor_ms = 10000.0;

  void validate() const;
};

enum class FineBin : int { S = 0, M = 1, L = 2 };

struct PauseBin {
  bool present = false;
  FineBin fine = FineBin::S;  // meaningful only when present
};

PauseBin bin_pause(double duration_ms, const BinningScheme& scheme);
double normalize_pause(double duration_ms, const BinningScheme& scheme);

// Recomputes s_upper/m_upper so the nonzero pauses split into three
// equal-count parts; other fields are taken from base.
BinningScheme tertile_scheme(const std::vector<double>& pauses_ms,
                             const BinningScheme& base = {});

struct PretrainExample {
  std::string utterance_id;
  std::vector<int> input_ids;     // after MLM corruption
  std::vector<int> original_ids;  // pre-corruption ids
  std::vector<double> pause_ms;   // per position
  std::vector<int> mlm_positions;    // T_b, sorted
  std::vector<int> pause_positions;  // T_s, sorted
};

// Deterministic per (seed, utterance id). MLM picks max(1, round(0.15 n))
// positions with the 80/10/10 corruption recipe; T_s holds
// max(1, min(3, round(0.15 n))) positions drawn from tokens whose pause is
// within the noise cutoff, and includes at least one nonzero-pause position
// whenever the utterance has one. Utterances beyond max_len are truncated
// with a warning.
std::vector<PretrainExample> make_pretrain_examples(
    const Corpus& corpus, const Vocabulary& vocab, const BinningScheme& scheme,
    std::uint64_t seed, std::size_t max_len = 32);

enum class EncoderMode { kBaseline, kHbc, kNlr };

std::string mode_str(EncoderMode mode);
EncoderMode mode_parse(const std::string& s);

struct EncoderConfig {
  EncoderMode mode = EncoderMode::kBaseline;
  int n_layers = 2;
  int n_heads = 4;
  int hidden = 64;
  int ff_dim = 256;
  int max_len = 32;
  std::size_t vocab_max = 2000;
  int epochs = 5;
  int batch_size = 16;
  double lr = 1e-3;
  double lambda_aux = 1.0;   // weight on the pause loss
  double dropout_prob = 0.0;
  double prob_clamp = 1e-12;  // probability floor before logs
  std::uint64_t seed = 1;
  BinningScheme scheme;

  void validate() const;
  std::string to_json_text() const;
  static EncoderConfig from_json_text(const std::string& text);
  static EncoderConfig from_json_file(const std::string& path);
};

struct LossBreakdown {
  double l_bert = 0.0;
  double l_aux = 0.0;
  double lambda = 1.0;
  double total = 0.0;  // l_bert + lambda * l_aux
};

// Closed-form loss routes used by tests and diagnostics; the graph route in
// pretraining must agree with these.
double loss_bert_from_probs(const std::vector<double>& true_token_probs,
                            double clamp = 1e-12);

struct HbcTerm {
  double coarse_prob_true = 0.0;  // predicted prob of the true present/absent
  bool present = false;
  double fine_prob_true = 0.0;  // predicted prob of the true S/M/L bin
};
double loss_hbc_from_probs(const std::vector<HbcTerm>& terms,
                           double clamp = 1e-12);

struct NlrTerm {
  double target = 0.0;     // normalized gold duration
  double predicted = 0.0;  // squashed head output in (0,1)
};
double loss_nlr_from_values(const std::vector<NlrTerm>& terms);

// Per-example loss graph outputs.
struct ExampleLoss {
  Value total;
  double l_bert = 0.0;
  double l_aux = 0.0;
  std::size_t clamped = 0;  // positions where the probability floor fired
};

class EncoderModel {
 public:
  EncoderModel(EncoderConfig config, Vocabulary vocab);

  const EncoderConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // Creates one leaf per parameter, in registration order.
  std::vector<Value> param_leaves(Tape& tape, bool requires_grad) const;

  // Final-layer hidden states on the tape; ids beyond max_len keep running
  // with their position clamped to max_len - 1. Training passes supply
  // dropout masks; inference passes none.
  struct DropoutPlan {
    Mat embed_mask;
    std::vector<Mat> attn_masks;  // per layer
    std::vector<Mat> ff_masks;    // per layer
  };
  Value trunk_on_tape(Tape& tape, const std::vector<Value>& leaves,
                      const std::vector<int>& ids,
                      const DropoutPlan* dropout = nullptr) const;

  // Loss graph for one pretraining example (mode decides the aux head).
  ExampleLoss build_loss(Tape& tape, const std::vector<Value>& leaves,
                         const PretrainExample& ex,
                         const DropoutPlan* dropout = nullptr) const;

  DropoutPlan make_dropout_plan(Rng& rng, std::size_t n_tokens) const;

  // Inference: plain forward pass, no graph, no corruption, parameters
  // untouched. Consumes token texts only — pauses can never reach it.
  Mat embed(const std::vector<std::string>& tokens) const;

  void save(const std::string& path) const;
  static EncoderModel load(const std::string& path);

 private:
  Mat trunk_plain(const std::vector<int>& ids) const;
  std::vector<int> ids_of(const std::vector<std::string>& tokens) const;
  int leaf_index(const std::string& name) const;

  EncoderConfig config_;
  Vocabulary vocab_;
  ParamSet params_;
  std::unordered_map<std::string, int> param_index_;
};

struct EpochStats {
  int epoch = 0;
  double l_bert = 0.0;  // mean per example
  double l_aux = 0.0;
  double total = 0.0;  // l_bert + lambda * l_aux, exactly
  std::size_t clamped = 0;
};

struct PretrainResult {
  EncoderModel model;
  std::vector<EpochStats> curve;
};

// Deterministic for a fixed config.seed; aborts on non-finite loss.
PretrainResult pretrain(const Corpus& corpus, const EncoderConfig& config);

}  // namespace pausenlu
