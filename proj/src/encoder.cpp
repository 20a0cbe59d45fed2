#include "pausenlu/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "pausenlu/checkpoint.hpp"

namespace pausenlu {

using nlohmann::json;

namespace {

const char* kSpecialMarkers[Vocabulary::kNumSpecials] = {"<pad>", "<unk>",
                                                         "<mask>", "<cls>"};

bool is_special_marker(const std::string& s) {
  for (const char* m : kSpecialMarkers)
    if (s == m) return true;
  return false;
}

}  // namespace

int Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size())
    throw std::runtime_error("Vocabulary: id " + std::to_string(id) +
                             " out of range");
  return id_to_token[static_cast<std::size_t>(id)];
}

std::string Vocabulary::to_json_text() const {
  json j;
  j["tokens"] = std::vector<std::string>(
      id_to_token.begin() + kNumSpecials, id_to_token.end());
  return j.dump();
}

Vocabulary Vocabulary::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  Vocabulary v;
  for (const char* m : kSpecialMarkers) v.id_to_token.emplace_back(m);
  for (const json& t : j.at("tokens"))
    v.id_to_token.push_back(t.get<std::string>());
  for (std::size_t i = 0; i < v.id_to_token.size(); ++i)
    v.token_to_id.emplace(v.id_to_token[i], static_cast<int>(i));
  return v;
}

Vocabulary build_vocabulary(const Corpus& corpus, std::size_t max_size) {
  if (corpus.empty())
    throw std::runtime_error("build_vocabulary: empty corpus");
  if (max_size < Vocabulary::kNumSpecials)
    throw std::runtime_error(
        "build_vocabulary: max_size " + std::to_string(max_size) +
        " is below the " + std::to_string(Vocabulary::kNumSpecials) +
        " special ids");
  std::unordered_map<std::string, std::size_t> counts;
  for (const Utterance& u : corpus)
    for (const Token& t : u.tokens)
      if (!is_special_marker(t.text)) ++counts[t.text];

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(),
                                                          counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  for (const char* m : kSpecialMarkers) v.id_to_token.emplace_back(m);
  const std::size_t keep =
      std::min(ranked.size(), max_size - Vocabulary::kNumSpecials);
  for (std::size_t i = 0; i < keep; ++i)
    v.id_to_token.push_back(ranked[i].first);
  for (std::size_t i = 0; i < v.id_to_token.size(); ++i)
    v.token_to_id.emplace(v.id_to_token[i], static_cast<int>(i));
  return v;
}

double vocabulary_coverage(const Corpus& corpus, const Vocabulary& vocab) {
  std::size_t total = 0, known = 0;
  for (const Utterance& u : corpus)
    for (const Token& t : u.tokens) {
      ++total;
      if (vocab.id_of(t.text) != Vocabulary::kUnk) ++known;
    }
  return total == 0 ? 0.0
                    : static_cast<double>(known) / static_cast<double>(total);
}

void BinningScheme::validate() const {
  if (!(0.0 < s_upper_ms && s_upper_ms < m_upper_ms &&
        m_upper_ms < noise_cutoff_ms))
    throw std::runtime_error(
        "BinningScheme: need 0 < s_upper < m_upper < noise_cutoff");
  if (norm_divisor_ms <= 0.0)
    throw std::runtime_error("BinningScheme: norm_divisor must be positive");
}

PauseBin bin_pause(double duration_ms, const BinningScheme& scheme) {
  if (duration_ms < 0.0)
    throw std::runtime_error("bin_pause: negative duration " +
                             std::to_string(duration_ms));
  PauseBin b;
  if (duration_ms == 0.0) return b;  // absent
  b.present = true;
  if (duration_ms < scheme.s_upper_ms)
    b.fine = FineBin::S;
  else if (duration_ms <= scheme.m_upper_ms)
    b.fine = FineBin::M;
  else
    b.fine = FineBin::L;
  return b;
}

double normalize_pause(double duration_ms, const BinningScheme& scheme) {
  if (duration_ms < 0.0)
    throw std::runtime_error("normalize_pause: negative duration " +
                             std::to_string(duration_ms));
  return duration_ms / scheme.norm_divisor_ms;
}

BinningScheme tertile_scheme(const std::vector<double>& pauses_ms,
                             const BinningScheme& base) {
  std::vector<double> nz;
  for (double p : pauses_ms)
    if (p > 0.0 && p <= base.noise_cutoff_ms) nz.push_back(p);
  if (nz.size() < 3)
    throw std::runtime_error(
        "tertile_scheme: need at least 3 nonzero pauses, have " +
        std::to_string(nz.size()));
  std::sort(nz.begin(), nz.end());
  BinningScheme s = base;
  s.s_upper_ms = nz[nz.size() / 3];
  s.m_upper_ms = nz[2 * nz.size() / 3];
  if (!(s.s_upper_ms < s.m_upper_ms))
    throw std::runtime_error(
        "tertile_scheme: degenerate tertile boundaries (too many ties)");
  s.validate();
  return s;
}

std::vector<PretrainExample> make_pretrain_examples(
    const Corpus& corpus, const Vocabulary& vocab, const BinningScheme& scheme,
    std::uint64_t seed, std::size_t max_len) {
  std::vector<PretrainExample> out;
  out.reserve(corpus.size());
  const int n_real = vocab.size() - Vocabulary::kNumSpecials;
  for (const Utterance& u : corpus) {
    std::size_t len = u.tokens.size();
    if (len == 0) continue;
    if (len > max_len) {
      std::cerr << "[encoder] warning: utterance " << u.id
                << " truncated from " << len << " to " << max_len
                << " tokens\n";
      len = max_len;
    }

    PretrainExample ex;
    ex.utterance_id = u.id;
    ex.original_ids.reserve(len);
    ex.pause_ms.reserve(len);
    for (std::size_t i = 0; i < len; ++i) {
      ex.original_ids.push_back(vocab.id_of(u.tokens[i].text));
      ex.pause_ms.push_back(u.tokens[i].pause_after_ms);
    }
    ex.input_ids = ex.original_ids;

    // MLM corruption: 15% of positions, 80/10/10 mask/random/keep.
    Rng mlm_rng = Rng::derive(seed, u.id + "/mlm");
    const std::size_t n_mask = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(len))));
    std::vector<std::size_t> picks =
        mlm_rng.sample_indices(len, std::min(n_mask, len));
    for (std::size_t p : picks) {
      const double r = mlm_rng.uniform();
      if (r < 0.8) {
        ex.input_ids[p] = Vocabulary::kMask;
      } else if (r < 0.9 && n_real > 0) {
        ex.input_ids[p] = Vocabulary::kNumSpecials +
                          static_cast<int>(mlm_rng.below(
                              static_cast<std::uint64_t>(n_real)));
      }  // else keep the original id
      ex.mlm_positions.push_back(static_cast<int>(p));
    }
    std::sort(ex.mlm_positions.begin(), ex.mlm_positions.end());

    // Pause-target positions: pauses above the noise cutoff are not
    // candidates; at least one nonzero-pause position is included whenever
    // the utterance has one.
    Rng pause_rng = Rng::derive(seed, u.id + "/pause");
    std::vector<std::size_t> candidates;
    std::vector<std::size_t> nonzero;
    for (std::size_t i = 0; i < len; ++i) {
      if (ex.pause_ms[i] > scheme.noise_cutoff_ms) continue;
      candidates.push_back(i);
      if (ex.pause_ms[i] > 0.0) nonzero.push_back(i);
    }
    if (!candidates.empty()) {
      const std::size_t want = std::max<std::size_t>(
          1, std::min<std::size_t>(
                 3, static_cast<std::size_t>(std::llround(
                        0.15 * static_cast<double>(len)))));
      const std::size_t k = std::min(want, candidates.size());
      std::vector<std::size_t> sel =
          pause_rng.sample_indices(candidates.size(), k);
      std::vector<std::size_t> chosen;
      for (std::size_t s : sel) chosen.push_back(candidates[s]);
      bool has_nonzero = false;
      for (std::size_t c : chosen)
        if (ex.pause_ms[c] > 0.0) has_nonzero = true;
      if (!has_nonzero && !nonzero.empty()) {
        // swap-in rule: replace the first pick with a random nonzero position
        chosen[0] = nonzero[static_cast<std::size_t>(
            pause_rng.below(nonzero.size()))];
      }
      std::sort(chosen.begin(), chosen.end());
      chosen.erase(std::unique(chosen.begin(), chosen.end()), chosen.end());
      for (std::size_t c : chosen)
        ex.pause_positions.push_back(static_cast<int>(c));
    }

    out.push_back(std::move(ex));
  }
  return out;
}

std::string mode_str(EncoderMode mode) {
  switch (mode) {
    case EncoderMode::kBaseline:
      return "baseline";
    case EncoderMode::kHbc:
      return "hbc";
    case EncoderMode::kNlr:
      return "nlr";
  }
  return "baseline";
}

EncoderMode mode_parse(const std::string& s) {
  if (s == "baseline") return EncoderMode::kBaseline;
  if (s == "hbc") return EncoderMode::kHbc;
  if (s == "nlr") return EncoderMode::kNlr;
  throw std::runtime_error("unknown encoder mode '" + s +
                           "' (expected baseline|hbc|nlr)");
}

void EncoderConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || hidden < 1 || ff_dim < 1 || max_len < 1)
    throw std::runtime_error("encoder config: dimensions must be positive");
  if (hidden % n_heads != 0)
    throw std::runtime_error("encoder config: hidden (" +
                             std::to_string(hidden) +
                             ") must be divisible by n_heads (" +
                             std::to_string(n_heads) + ")");
  if (vocab_max < Vocabulary::kNumSpecials)
    throw std::runtime_error("encoder config: vocab_max below special count");
  if (epochs < 1 || batch_size < 1)
    throw std::runtime_error("encoder config: epochs/batch_size must be >= 1");
  if (lr <= 0.0) throw std::runtime_error("encoder config: lr must be > 0");
  if (lambda_aux < 0.0)
    throw std::runtime_error("encoder config: lambda must be >= 0");
  if (dropout_prob < 0.0 || dropout_prob >= 1.0)
    throw std::runtime_error("encoder config: dropout_prob must be in [0,1)");
  if (prob_clamp <= 0.0 || prob_clamp >= 1.0)
    throw std::runtime_error("encoder config: prob_clamp must be in (0,1)");
  scheme.validate();
}

static json scheme_to_json(const BinningScheme& s) {
  return json{{"s_upper_ms", s.s_upper_ms},
              {"m_upper_ms", s.m_upper_ms},
              {"noise_cutoff_ms", s.noise_cutoff_ms},
              {"norm_divisor_ms", s.norm_divisor_ms}};
}

static BinningScheme scheme_from_json(const json& j) {
  BinningScheme s;
  s.s_upper_ms = j.value("s_upper_ms", s.s_upper_ms);
  s.m_upper_ms = j.value("m_upper_ms", s.m_upper_ms);
  s.noise_cutoff_ms = j.value("noise_cutoff_ms", s.noise_cutoff_ms);
  s.norm_divisor_ms = j.value("norm_divisor_ms", s.norm_divisor_ms);
  return s;
}

std::string EncoderConfig::to_json_text() const {
  json j;
  j["mode"] = mode_str(mode);
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["hidden"] = hidden;
  j["ff_dim"] = ff_dim;
  j["max_len"] = max_len;
  j["vocab_max"] = vocab_max;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["lambda"] = lambda_aux;
  j["dropout_prob"] = dropout_prob;
  j["prob_clamp"] = prob_clamp;
  j["seed"] = seed;
  j["scheme"] = scheme_to_json(scheme);
  return j.dump(2);
}

EncoderConfig EncoderConfig::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  EncoderConfig c;
  c.mode = mode_parse(j.value("mode", std::string("baseline")));
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.hidden = j.value("hidden", c.hidden);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.max_len = j.value("max_len", c.max_len);
  c.vocab_max = j.value("vocab_max", c.vocab_max);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.lambda_aux = j.value("lambda", c.lambda_aux);
  c.dropout_prob = j.value("dropout_prob", c.dropout_prob);
  c.prob_clamp = j.value("prob_clamp", c.prob_clamp);
  c.seed = j.value("seed", c.seed);
  if (j.contains("scheme")) c.scheme = scheme_from_json(j.at("scheme"));
  c.validate();
  return c;
}

EncoderConfig EncoderConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open encoder config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

double loss_bert_from_probs(const std::vector<double>& true_token_probs,
                            double clamp) {
  double loss = 0.0;
  for (double p : true_token_probs) loss -= std::log(std::max(p, clamp));
  return loss;
}

double loss_hbc_from_probs(const std::vector<HbcTerm>& terms, double clamp) {
  double loss = 0.0;
  for (const HbcTerm& t : terms) {
    loss -= std::log(std::max(t.coarse_prob_true, clamp));
    if (t.present) loss -= std::log(std::max(t.fine_prob_true, clamp));
  }
  return loss;
}

double loss_nlr_from_values(const std::vector<NlrTerm>& terms) {
  double loss = 0.0;
  for (const NlrTerm& t : terms) {
    const double d = t.target - t.predicted;
    loss += d * d;
  }
  return loss;
}

EncoderModel::EncoderModel(EncoderConfig config, Vocabulary vocab)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.validate();
  const int V = vocab_.size();
  const int H = config_.hidden;
  const int F = config_.ff_dim;

  auto w = [this](const std::string& name, int rows, int cols) {
    Rng rng = Rng::derive(config_.seed, "init/" + name);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = rng.normal() * 0.02;
    params_.add(name, std::move(m));
  };
  auto zeros = [this](const std::string& name, int rows, int cols) {
    params_.add(name, Mat::Zero(rows, cols));
  };
  auto ones = [this](const std::string& name, int rows, int cols) {
    params_.add(name, Mat::Ones(rows, cols));
  };

  w("tok_emb", V, H);
  w("pos_emb", config_.max_len, H);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    w(p + "attn.wq", H, H);
    zeros(p + "attn.bq", 1, H);
    w(p + "attn.wk", H, H);
    zeros(p + "attn.bk", 1, H);
    w(p + "attn.wv", H, H);
    zeros(p + "attn.bv", 1, H);
    w(p + "attn.wo", H, H);
    zeros(p + "attn.bo", 1, H);
    ones(p + "ln1.gain", 1, H);
    zeros(p + "ln1.bias", 1, H);
    w(p + "ff.w1", H, F);
    zeros(p + "ff.b1", 1, F);
    w(p + "ff.w2", F, H);
    zeros(p + "ff.b2", 1, H);
    ones(p + "ln2.gain", 1, H);
    zeros(p + "ln2.bias", 1, H);
  }
  w("mlm.w", H, V);
  zeros("mlm.b", 1, V);
  if (config_.mode == EncoderMode::kHbc) {
    w("hbc.coarse.w", H, 1);
    zeros("hbc.coarse.b", 1, 1);
    w("hbc.fine.w", H, 3);
    zeros("hbc.fine.b", 1, 3);
  } else if (config_.mode == EncoderMode::kNlr) {
    w("nlr.w", H, 1);
    zeros("nlr.b", 1, 1);
  }

  int i = 0;
  for (const Param& p : params_.all()) param_index_.emplace(p.name, i++);
}

int EncoderModel::leaf_index(const std::string& name) const {
  auto it = param_index_.find(name);
  if (it == param_index_.end())
    throw std::runtime_error("encoder: no parameter '" + name + "'");
  return it->second;
}

std::vector<Value> EncoderModel::param_leaves(Tape& tape,
                                              bool requires_grad) const {
  std::vector<Value> leaves;
  leaves.reserve(params_.all().size());
  for (const Param& p : params_.all())
    leaves.push_back(tape.leaf(p.value, requires_grad));
  return leaves;
}

EncoderModel::DropoutPlan EncoderModel::make_dropout_plan(
    Rng& rng, std::size_t n_tokens) const {
  DropoutPlan plan;
  const double keep = 1.0 - config_.dropout_prob;
  auto mask = [&rng, keep](Eigen::Index r, Eigen::Index c) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = rng.uniform() < keep ? 1.0 : 0.0;
    return m;
  };
  const auto n = static_cast<Eigen::Index>(n_tokens);
  plan.embed_mask = mask(n, config_.hidden);
  for (int l = 0; l < config_.n_layers; ++l) {
    plan.attn_masks.push_back(mask(n, config_.hidden));
    plan.ff_masks.push_back(mask(n, config_.hidden));
  }
  return plan;
}

std::vector<int> EncoderModel::ids_of(
    const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(vocab_.id_of(t));
  return ids;
}

Value EncoderModel::trunk_on_tape(Tape& tape, const std::vector<Value>& leaves,
                                  const std::vector<int>& ids,
                                  const DropoutPlan* dropout) const {
  if (ids.empty()) throw std::runtime_error("encoder: empty token sequence");
  if (leaves.size() != params_.all().size() || leaves[0].tape != &tape)
    throw std::runtime_error("encoder: parameter leaves do not match tape");
  const int H = config_.hidden;
  const int nh = config_.n_heads;
  const int dh = H / nh;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double keep = 1.0 - config_.dropout_prob;

  std::vector<int> pos(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    pos[i] = std::min(static_cast<int>(i), config_.max_len - 1);

  auto L = [&](const std::string& name) { return leaves[static_cast<std::size_t>(leaf_index(name))]; };

  Value x = add(lookup_rows(L("tok_emb"), ids), lookup_rows(L("pos_emb"), pos));
  if (dropout) x = pausenlu::dropout(x, dropout->embed_mask, keep);

  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    Value q = add_rowvec(matmul(x, L(p + "attn.wq")), L(p + "attn.bq"));
    Value k = add_rowvec(matmul(x, L(p + "attn.wk")), L(p + "attn.bk"));
    Value v = add_rowvec(matmul(x, L(p + "attn.wv")), L(p + "attn.bv"));
    std::vector<Value> heads;
    heads.reserve(static_cast<std::size_t>(nh));
    for (int h = 0; h < nh; ++h) {
      Value qh = slice_cols(q, h * dh, dh);
      Value kh = slice_cols(k, h * dh, dh);
      Value vh = slice_cols(v, h * dh, dh);
      Value scores = scale(matmul(qh, transpose(kh)), att_scale);
      heads.push_back(matmul(softmax_rows(scores), vh));
    }
    Value att = add_rowvec(matmul(concat_cols(heads), L(p + "attn.wo")),
                           L(p + "attn.bo"));
    if (dropout)
      att = pausenlu::dropout(att, dropout->attn_masks[static_cast<std::size_t>(l)], keep);
    x = layer_norm(add(x, att), L(p + "ln1.gain"), L(p + "ln1.bias"));

    Value f1 = gelu(add_rowvec(matmul(x, L(p + "ff.w1")), L(p + "ff.b1")));
    Value f2 = add_rowvec(matmul(f1, L(p + "ff.w2")), L(p + "ff.b2"));
    if (dropout)
      f2 = pausenlu::dropout(f2, dropout->ff_masks[static_cast<std::size_t>(l)], keep);
    x = layer_norm(add(x, f2), L(p + "ln2.gain"), L(p + "ln2.bias"));
  }
  return x;
}

ExampleLoss EncoderModel::build_loss(Tape& tape,
                                     const std::vector<Value>& leaves,
                                     const PretrainExample& ex,
                                     const DropoutPlan* dropout) const {
  const double clamp = config_.prob_clamp;
  auto L = [&](const std::string& name) { return leaves[static_cast<std::size_t>(leaf_index(name))]; };

  Value x = trunk_on_tape(tape, leaves, ex.input_ids, dropout);

  ExampleLoss out{Value{}, 0.0, 0.0, 0};

  // MLM term over T_b
  if (ex.mlm_positions.empty())
    throw std::runtime_error("encoder: example " + ex.utterance_id +
                             " has no MLM positions");
  Value xb = lookup_rows(x, ex.mlm_positions);
  Value logits = add_rowvec(matmul(xb, L("mlm.w")), L("mlm.b"));
  Value probs = softmax_rows(logits);
  std::vector<int> rows, cols;
  for (std::size_t i = 0; i < ex.mlm_positions.size(); ++i) {
    rows.push_back(static_cast<int>(i));
    cols.push_back(
        ex.original_ids[static_cast<std::size_t>(ex.mlm_positions[i])]);
  }
  Value picked = gather(probs, rows, cols);
  for (Eigen::Index i = 0; i < picked.val().size(); ++i)
    if (picked.val().data()[i] < clamp) ++out.clamped;
  Value l_bert = scale(sum_all(log_clamped(picked, clamp)), -1.0);
  out.l_bert = l_bert.val()(0, 0);

  Value total = l_bert;
  if (config_.mode != EncoderMode::kBaseline && !ex.pause_positions.empty()) {
    Value xs = lookup_rows(x, ex.pause_positions);
    const std::size_t k = ex.pause_positions.size();
    Value l_aux;
    if (config_.mode == EncoderMode::kHbc) {
      Value cs =
          add_rowvec(matmul(xs, L("hbc.coarse.w")), L("hbc.coarse.b"));
      Value p = sigmoid(cs);
      // prob of the true presence label: present -> p, absent -> 1-p,
      // built as a + b*p with constants a = 1-c, b = 2c-1.
      Mat a(static_cast<Eigen::Index>(k), 1), b(static_cast<Eigen::Index>(k), 1);
      std::vector<int> present_rows, present_bins;
      for (std::size_t i = 0; i < k; ++i) {
        const double pause =
            ex.pause_ms[static_cast<std::size_t>(ex.pause_positions[i])];
        const PauseBin bin = bin_pause(pause, config_.scheme);
        const double c = bin.present ? 1.0 : 0.0;
        a(static_cast<Eigen::Index>(i), 0) = 1.0 - c;
        b(static_cast<Eigen::Index>(i), 0) = 2.0 * c - 1.0;
        if (bin.present) {
          present_rows.push_back(static_cast<int>(i));
          present_bins.push_back(static_cast<int>(bin.fine));
        }
      }
      Value ptrue = add(tape.leaf(a), mul(tape.leaf(b), p));
      for (Eigen::Index i = 0; i < ptrue.val().size(); ++i)
        if (ptrue.val().data()[i] < clamp) ++out.clamped;
      Value loss_sum = sum_all(log_clamped(ptrue, clamp));
      if (!present_rows.empty()) {
        Value flogits =
            add_rowvec(matmul(xs, L("hbc.fine.w")), L("hbc.fine.b"));
        Value fprobs = softmax_rows(flogits);
        Value fpicked = gather(fprobs, present_rows, present_bins);
        for (Eigen::Index i = 0; i < fpicked.val().size(); ++i)
          if (fpicked.val().data()[i] < clamp) ++out.clamped;
        loss_sum = add(loss_sum, sum_all(log_clamped(fpicked, clamp)));
      }
      l_aux = scale(loss_sum, -1.0);
    } else {  // NLR
      Value r = sigmoid(add_rowvec(matmul(xs, L("nlr.w")), L("nlr.b")));
      Mat g(static_cast<Eigen::Index>(k), 1);
      for (std::size_t i = 0; i < k; ++i)
        g(static_cast<Eigen::Index>(i), 0) = normalize_pause(
            ex.pause_ms[static_cast<std::size_t>(ex.pause_positions[i])],
            config_.scheme);
      Value diff = sub(tape.leaf(g), r);
      l_aux = sum_all(mul(diff, diff));
    }
    out.l_aux = l_aux.val()(0, 0);
    total = add(l_bert, scale(l_aux, config_.lambda_aux));
  }

  out.total = total;
  return out;
}

namespace {

// plain (graph-free) math used by the inference path
Mat plain_softmax_rows(const Mat& a) {
  Mat out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mx = a.row(r).maxCoeff();
    Eigen::ArrayXd e = (a.row(r).array() - mx).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return out;
}

Mat plain_layer_norm(const Mat& x, const Mat& gain, const Mat& bias,
                     double eps) {
  Mat out(x.rows(), x.cols());
  const auto n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().sum() / n;
    const double inv = 1.0 / std::sqrt(var + eps);
    out.row(r) =
        (((x.row(r).array() - mu) * inv) * gain.row(0).array() +
         bias.row(0).array())
            .matrix();
  }
  return out;
}

Mat plain_gelu(const Mat& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  return x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  });
}

}  // namespace

Mat EncoderModel::trunk_plain(const std::vector<int>& ids) const {
  if (ids.empty()) throw std::runtime_error("encoder: empty token sequence");
  const int H = config_.hidden;
  const int nh = config_.n_heads;
  const int dh = H / nh;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto n = static_cast<Eigen::Index>(ids.size());

  auto P = [&](const std::string& name) -> const Mat& {
    return params_.at(name).value;
  };

  Mat x(n, H);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int pos = std::min(static_cast<int>(i), config_.max_len - 1);
    x.row(i) = P("tok_emb").row(ids[static_cast<std::size_t>(i)]) +
               P("pos_emb").row(pos);
  }

  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    Mat q = (x * P(p + "attn.wq")).rowwise() + P(p + "attn.bq").row(0);
    Mat k = (x * P(p + "attn.wk")).rowwise() + P(p + "attn.bk").row(0);
    Mat v = (x * P(p + "attn.wv")).rowwise() + P(p + "attn.bv").row(0);
    Mat att(n, H);
    for (int h = 0; h < nh; ++h) {
      const Mat qh = q.middleCols(h * dh, dh);
      const Mat kh = k.middleCols(h * dh, dh);
      const Mat vh = v.middleCols(h * dh, dh);
      Mat scores = (qh * kh.transpose()) * att_scale;
      att.middleCols(h * dh, dh) = plain_softmax_rows(scores) * vh;
    }
    Mat att_out = (att * P(p + "attn.wo")).rowwise() + P(p + "attn.bo").row(0);
    x = plain_layer_norm(x + att_out, P(p + "ln1.gain"), P(p + "ln1.bias"),
                         1e-5);
    Mat f1 = plain_gelu((x * P(p + "ff.w1")).rowwise() + P(p + "ff.b1").row(0));
    Mat f2 = (f1 * P(p + "ff.w2")).rowwise() + P(p + "ff.b2").row(0);
    x = plain_layer_norm(x + f2, P(p + "ln2.gain"), P(p + "ln2.bias"), 1e-5);
  }
  return x;
}

Mat EncoderModel::embed(const std::vector<std::string>& tokens) const {
  return trunk_plain(ids_of(tokens));
}

void EncoderModel::save(const std::string& path) const {
  Checkpoint ckpt;
  json meta;
  meta["kind"] = "encoder";
  meta["config"] = json::parse(config_.to_json_text());
  meta["vocab"] = json::parse(vocab_.to_json_text());
  ckpt.metadata_json = meta.dump();
  for (const Param& p : params_.all())
    ckpt.tensors.push_back({p.name, p.value});
  save_checkpoint(path, ckpt, 8);
}

EncoderModel EncoderModel::load(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  const json meta = json::parse(ckpt.metadata_json);
  if (meta.value("kind", std::string()) != "encoder")
    throw std::runtime_error(path + " is not an encoder checkpoint");
  EncoderConfig config = EncoderConfig::from_json_text(meta.at("config").dump());
  Vocabulary vocab = Vocabulary::from_json_text(meta.at("vocab").dump());
  EncoderModel model(std::move(config), std::move(vocab));
  for (Param& p : model.params_.all()) {
    const Mat& t = ckpt.tensor(p.name);
    if (t.rows() != p.value.rows() || t.cols() != p.value.cols())
      throw std::runtime_error("checkpoint tensor '" + p.name +
                               "' has unexpected shape");
    p.value = t;
  }
  return model;
}

PretrainResult pretrain(const Corpus& corpus, const EncoderConfig& config) {
  config.validate();
  if (corpus.empty()) throw std::runtime_error("pretrain: empty corpus");
  Vocabulary vocab = build_vocabulary(corpus, config.vocab_max);
  EncoderModel model(config, std::move(vocab));
  AdamOptimizer opt(config.lr);

  std::vector<EpochStats> curve;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const std::uint64_t ex_seed =
        Rng::derive_seed(config.seed, "examples", static_cast<std::uint64_t>(epoch));
    std::vector<PretrainExample> examples =
        make_pretrain_examples(corpus, model.vocab(), config.scheme, ex_seed,
                               static_cast<std::size_t>(config.max_len));
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng =
        Rng::derive(config.seed, "order", static_cast<std::uint64_t>(epoch));
    order_rng.shuffle(order);

    double sum_bert = 0.0, sum_aux = 0.0;
    std::size_t clamped = 0;
    const std::size_t bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      Tape tape;
      std::vector<Value> leaves = model.param_leaves(tape, true);
      Value batch_total;
      bool first = true;
      for (std::size_t j = start; j < end; ++j) {
        const PretrainExample& ex = examples[order[j]];
        EncoderModel::DropoutPlan plan;
        const EncoderModel::DropoutPlan* plan_ptr = nullptr;
        if (config.dropout_prob > 0.0) {
          Rng drop_rng = Rng::derive(ex_seed, ex.utterance_id + "/drop");
          plan = model.make_dropout_plan(drop_rng, ex.input_ids.size());
          plan_ptr = &plan;
        }
        ExampleLoss el = model.build_loss(tape, leaves, ex, plan_ptr);
        if (!std::isfinite(el.total.val()(0, 0)))
          throw std::runtime_error(
              "pretrain: non-finite loss at epoch " + std::to_string(epoch) +
              ", utterance " + ex.utterance_id +
              " (l_bert=" + std::to_string(el.l_bert) +
              ", l_aux=" + std::to_string(el.l_aux) + ")");
        sum_bert += el.l_bert;
        sum_aux += el.l_aux;
        clamped += el.clamped;
        batch_total = first ? el.total : add(batch_total, el.total);
        first = false;
      }
      tape.backward(batch_total);
      auto& ps = model.params().all();
      for (std::size_t i = 0; i < ps.size(); ++i)
        ps[i].grad += leaves[i].grad();
      opt.step(model.params());
    }

    EpochStats st;
    st.epoch = epoch;
    const double n = static_cast<double>(examples.size());
    st.l_bert = sum_bert / n;
    st.l_aux = sum_aux / n;
    st.total = st.l_bert + config.lambda_aux * st.l_aux;
    st.clamped = clamped;
    curve.push_back(st);
  }
  return PretrainResult{std::move(model), std::move(curve)};
}

}  // namespace pausenlu
