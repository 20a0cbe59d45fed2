#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pausenlu/corpus.hpp"
#include "pausenlu/encoder.hpp"
#include "pausenlu/numcore.hpp"

namespace pausenlu {

// Joint labels ("O", "B-<type>", "I-<type>") with dense ids; "O" is always
// id 0, the rest follow sorted. START/STOP live only in the transition
// matrix, at ids K and K+1.
struct LabelAlphabet {
  std::vector<std::string> labels;
  std::unordered_map<std::string, int> ids;

  static LabelAlphabet from_corpus(const Corpus& corpus);
  int id_of(const std::string& label) const;  // unknown -> error
  const std::string& label_of(int id) const;
  int size() const { return static_cast<int>(labels.size()); }
  int start_id() const { return size(); }
  int stop_id() const { return size() + 1; }
};

// Scores for one utterance: emissions (n x K) and transitions
// ((K+2) x (K+2), rows = from, cols = to, START/STOP included).
struct TagLattice {
  Mat emissions;
  Mat transitions;

  int n_tokens() const { return static_cast<int>(emissions.rows()); }
  int n_labels() const { return static_cast<int>(emissions.cols()); }
};

// Log of the sum over all label paths of exp(path score); path score =
// sum of emissions + transitions including START -> first and last -> STOP.
double crf_log_partition(const TagLattice& lattice);

// log_partition - gold path score; >= 0 up to rounding.
double crf_nll(const TagLattice& lattice, const std::vector<int>& gold);

struct ViterbiResult {
  std::vector<int> labels;
  double score = 0.0;
};

// Argmax path; ties broken toward the lowest label id.
ViterbiResult viterbi_decode(const TagLattice& lattice);

// Graph-route NLL used in training; must agree with the plain route.
Value crf_nll_on_tape(Value emissions, Value transitions,
                      const std::vector<int>& gold);

struct TaggerConfig {
  int hidden = 64;  // per direction
  int max_epochs = 50;
  int patience = 5;  // epochs without a new best dev EER
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  bool bio_transition_mask = false;  // hard-forbid invalid BIO transitions

  void validate() const;
  std::string to_json_text() const;
  static TaggerConfig from_json_text(const std::string& text);
  static TaggerConfig from_json_file(const std::string& path);
};

class TaggerModel {
 public:
  TaggerModel(TaggerConfig config, LabelAlphabet alphabet, int input_dim);

  const TaggerConfig& config() const { return config_; }
  const LabelAlphabet& alphabet() const { return alphabet_; }
  int input_dim() const { return input_dim_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  std::vector<Value> param_leaves(Tape& tape, bool requires_grad) const;

  // Emission scores over the tape (for training); embeddings is an
  // (n x input_dim) leaf.
  Value emissions_on_tape(Tape& tape, const std::vector<Value>& leaves,
                          Value embeddings) const;
  Value transitions_on_tape(Tape& tape,
                            const std::vector<Value>& leaves) const;

  // Plain (graph-free) scoring used at inference.
  TagLattice lattice_for(const Mat& embeddings) const;

  // One joint label per token.
  std::vector<std::string> tag(const Mat& embeddings) const;

  void save(const std::string& path) const;
  static TaggerModel load(const std::string& path);

 private:
  Mat bilstm_plain(const Mat& embeddings) const;
  Mat transition_mask() const;  // 0 or -1e30 per entry

  TaggerConfig config_;
  LabelAlphabet alphabet_;
  int input_dim_ = 0;
  ParamSet params_;
  std::unordered_map<std::string, int> param_index_;

  int leaf_index(const std::string& name) const;
};

// Convenience: embeddings from the frozen encoder, then Viterbi labels.
std::vector<std::string> tag(const TaggerModel& tagger,
                             const EncoderModel& encoder,
                             const Utterance& utterance);

struct TrainEpoch {
  int epoch = 0;
  double train_nll = 0.0;  // mean per utterance
  double dev_eer = 0.0;
};

struct TrainResult {
  TaggerModel model;
  std::vector<TrainEpoch> history;
  int best_epoch = 0;
  double best_dev_eer = 1.0;
};

// Trains on frozen encoder embeddings (computed once up front); early stops
// on dev EER; deterministic per config.seed. The encoder is never modified.
TrainResult train_tagger(const Corpus& train, const Corpus& dev,
                         const EncoderModel& encoder,
                         const TaggerConfig& config);

}  // namespace pausenlu
