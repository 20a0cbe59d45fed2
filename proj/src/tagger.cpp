#include "pausenlu/tagger.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "pausenlu/checkpoint.hpp"
#include "pausenlu/metrics.hpp"
#include "pausenlu/rng.hpp"

namespace pausenlu {

using nlohmann::json;

LabelAlphabet LabelAlphabet::from_corpus(const Corpus& corpus) {
  std::set<std::string> seen;
  for (const Utterance& u : corpus)
    for (const Token& t : u.tokens) seen.insert(t.tag.str());
  LabelAlphabet a;
  a.labels.push_back("O");
  for (const std::string& l : seen)
    if (l != "O") a.labels.push_back(l);
  for (std::size_t i = 0; i < a.labels.size(); ++i)
    a.ids.emplace(a.labels[i], static_cast<int>(i));
  return a;
}

int LabelAlphabet::id_of(const std::string& label) const {
  auto it = ids.find(label);
  if (it == ids.end())
    throw std::runtime_error("LabelAlphabet: unknown label '" + label + "'");
  return it->second;
}

const std::string& LabelAlphabet::label_of(int id) const {
  if (id < 0 || id >= size())
    throw std::runtime_error("LabelAlphabet: id " + std::to_string(id) +
                             " out of range");
  return labels[static_cast<std::size_t>(id)];
}

namespace {

double logsumexp_vec(const Eigen::VectorXd& v) {
  const double mx = v.maxCoeff();
  return mx + std::log((v.array() - mx).exp().sum());
}

void check_lattice(const TagLattice& lattice) {
  const int k = lattice.n_labels();
  if (lattice.n_tokens() < 1)
    throw std::runtime_error("crf: lattice needs at least one token");
  if (lattice.transitions.rows() != k + 2 || lattice.transitions.cols() != k + 2)
    throw std::runtime_error(
        "crf: transition matrix must be (labels+2) square, got " +
        std::to_string(lattice.transitions.rows()) + "x" +
        std::to_string(lattice.transitions.cols()) + " for " +
        std::to_string(k) + " labels");
}

void check_gold(const TagLattice& lattice, const std::vector<int>& gold) {
  if (static_cast<int>(gold.size()) != lattice.n_tokens())
    throw std::runtime_error("crf_nll: gold length " +
                             std::to_string(gold.size()) + " != token count " +
                             std::to_string(lattice.n_tokens()));
  for (int y : gold)
    if (y < 0 || y >= lattice.n_labels())
      throw std::runtime_error("crf_nll: label id " + std::to_string(y) +
                               " out of range");
}

}  // namespace

double crf_log_partition(const TagLattice& lattice) {
  check_lattice(lattice);
  const int n = lattice.n_tokens();
  const int k = lattice.n_labels();
  const Mat& T = lattice.transitions;
  const int start = k, stop = k + 1;

  Eigen::VectorXd alpha(k);
  for (int y = 0; y < k; ++y)
    alpha(y) = T(start, y) + lattice.emissions(0, y);
  for (int t = 1; t < n; ++t) {
    Eigen::VectorXd next(k);
    for (int y = 0; y < k; ++y) {
      Eigen::VectorXd scores = alpha + T.block(0, y, k, 1);
      next(y) = logsumexp_vec(scores) + lattice.emissions(t, y);
    }
    alpha = next;
  }
  Eigen::VectorXd fin = alpha + T.block(0, stop, k, 1);
  return logsumexp_vec(fin);
}

double crf_nll(const TagLattice& lattice, const std::vector<int>& gold) {
  check_lattice(lattice);
  check_gold(lattice, gold);
  const int n = lattice.n_tokens();
  const int k = lattice.n_labels();
  const Mat& T = lattice.transitions;

  double score = T(k, gold[0]) + lattice.emissions(0, gold[0]);
  for (int t = 1; t < n; ++t)
    score += T(gold[static_cast<std::size_t>(t - 1)],
               gold[static_cast<std::size_t>(t)]) +
             lattice.emissions(t, gold[static_cast<std::size_t>(t)]);
  score += T(gold[static_cast<std::size_t>(n - 1)], k + 1);
  return crf_log_partition(lattice) - score;
}

ViterbiResult viterbi_decode(const TagLattice& lattice) {
  check_lattice(lattice);
  const int n = lattice.n_tokens();
  const int k = lattice.n_labels();
  const Mat& T = lattice.transitions;

  Mat best(n, k);
  Eigen::MatrixXi back(n, k);
  for (int y = 0; y < k; ++y)
    best(0, y) = T(k, y) + lattice.emissions(0, y);
  for (int t = 1; t < n; ++t) {
    for (int y = 0; y < k; ++y) {
      int argmax = 0;
      double mx = best(t - 1, 0) + T(0, y);
      for (int p = 1; p < k; ++p) {
        const double s = best(t - 1, p) + T(p, y);
        if (s > mx) {  // strict: ties keep the lowest previous id
          mx = s;
          argmax = p;
        }
      }
      best(t, y) = mx + lattice.emissions(t, y);
      back(t, y) = argmax;
    }
  }

  int last = 0;
  double mx = best(n - 1, 0) + T(0, k + 1);
  for (int y = 1; y < k; ++y) {
    const double s = best(n - 1, y) + T(y, k + 1);
    if (s > mx) {
      mx = s;
      last = y;
    }
  }

  ViterbiResult res;
  res.score = mx;
  res.labels.assign(static_cast<std::size_t>(n), 0);
  res.labels[static_cast<std::size_t>(n - 1)] = last;
  for (int t = n - 1; t > 0; --t)
    res.labels[static_cast<std::size_t>(t - 1)] =
        back(t, res.labels[static_cast<std::size_t>(t)]);
  return res;
}

Value crf_nll_on_tape(Value emissions, Value transitions,
                      const std::vector<int>& gold) {
  const int n = static_cast<int>(emissions.rows());
  const int k = static_cast<int>(emissions.cols());
  if (transitions.rows() != k + 2 || transitions.cols() != k + 2)
    throw std::runtime_error("crf_nll_on_tape: transition shape mismatch");
  if (static_cast<int>(gold.size()) != n)
    throw std::runtime_error("crf_nll_on_tape: gold length mismatch");

  Value label_block = slice_cols(slice_rows(transitions, 0, k), 0, k);
  Value start_row = slice_cols(slice_rows(transitions, k, 1), 0, k);  // 1 x k
  Value stop_col = slice_rows(slice_cols(transitions, k + 1, 1), 0, k);  // k x 1

  // forward recursion in log space; alpha is 1 x k
  Value alpha = add(start_row, slice_rows(emissions, 0, 1));
  for (int t = 1; t < n; ++t) {
    Value m = add_colvec(label_block, transpose(alpha));  // k x k
    alpha = add(logsumexp_cols(m), slice_rows(emissions, t, 1));
  }
  Value log_z = logsumexp_all(add(transpose(alpha), stop_col));

  // gold path score
  std::vector<int> erows(static_cast<std::size_t>(n)),
      ecols(gold.begin(), gold.end());
  for (int t = 0; t < n; ++t) erows[static_cast<std::size_t>(t)] = t;
  std::vector<int> trows, tcols;
  trows.push_back(k);
  tcols.push_back(gold[0]);
  for (int t = 1; t < n; ++t) {
    trows.push_back(gold[static_cast<std::size_t>(t - 1)]);
    tcols.push_back(gold[static_cast<std::size_t>(t)]);
  }
  trows.push_back(gold[static_cast<std::size_t>(n - 1)]);
  tcols.push_back(k + 1);
  Value gold_score = add(sum_all(gather(emissions, erows, ecols)),
                         sum_all(gather(transitions, trows, tcols)));
  return sub(log_z, gold_score);
}

void TaggerConfig::validate() const {
  if (hidden < 1) throw std::runtime_error("tagger config: hidden must be >= 1");
  if (max_epochs < 1 || patience < 0)
    throw std::runtime_error("tagger config: bad epoch/patience settings");
  if (batch_size < 1)
    throw std::runtime_error("tagger config: batch_size must be >= 1");
  if (lr <= 0.0) throw std::runtime_error("tagger config: lr must be > 0");
}

std::string TaggerConfig::to_json_text() const {
  json j;
  j["hidden"] = hidden;
  j["max_epochs"] = max_epochs;
  j["patience"] = patience;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["seed"] = seed;
  j["bio_transition_mask"] = bio_transition_mask;
  return j.dump(2);
}

TaggerConfig TaggerConfig::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  TaggerConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  c.bio_transition_mask = j.value("bio_transition_mask", c.bio_transition_mask);
  c.validate();
  return c;
}

TaggerConfig TaggerConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open tagger config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

TaggerModel::TaggerModel(TaggerConfig config, LabelAlphabet alphabet,
                         int input_dim)
    : config_(std::move(config)),
      alphabet_(std::move(alphabet)),
      input_dim_(input_dim) {
  config_.validate();
  if (input_dim_ < 1)
    throw std::runtime_error("tagger: input_dim must be >= 1");
  if (alphabet_.size() < 1)
    throw std::runtime_error("tagger: empty label alphabet");
  const int h = config_.hidden;
  const int k = alphabet_.size();

  auto w = [this](const std::string& name, int rows, int cols) {
    Rng rng = Rng::derive(config_.seed, "init/" + name);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = rng.normal() * 0.02;
    params_.add(name, std::move(m));
  };

  // gate layout in the 4h dimension: input, forget, cell, output
  w("lstm.fw.w", input_dim_ + h, 4 * h);
  w("lstm.bw.w", input_dim_ + h, 4 * h);
  Mat bias = Mat::Zero(1, 4 * h);
  bias.middleCols(h, h).setOnes();  // forget-gate bias 1
  params_.add("lstm.fw.b", bias);
  params_.add("lstm.bw.b", bias);
  w("emit.w", 2 * h, k);
  params_.add("emit.b", Mat::Zero(1, k));
  w("crf.trans", k + 2, k + 2);

  int i = 0;
  for (const Param& p : params_.all()) param_index_.emplace(p.name, i++);
}

int TaggerModel::leaf_index(const std::string& name) const {
  auto it = param_index_.find(name);
  if (it == param_index_.end())
    throw std::runtime_error("tagger: no parameter '" + name + "'");
  return it->second;
}

std::vector<Value> TaggerModel::param_leaves(Tape& tape,
                                             bool requires_grad) const {
  std::vector<Value> leaves;
  leaves.reserve(params_.all().size());
  for (const Param& p : params_.all())
    leaves.push_back(tape.leaf(p.value, requires_grad));
  return leaves;
}

namespace {

// one BiLSTM direction on the tape; returns the per-token state rows
std::vector<Value> lstm_direction(Value embeddings, Value w, Value b, int h,
                                  bool backward_dir) {
  Tape& tape = *embeddings.tape;
  const int n = static_cast<int>(embeddings.rows());
  Value h_prev = tape.leaf(Mat::Zero(1, h));
  Value c_prev = tape.leaf(Mat::Zero(1, h));
  std::vector<Value> states(static_cast<std::size_t>(n));
  for (int step = 0; step < n; ++step) {
    const int t = backward_dir ? n - 1 - step : step;
    Value xt = slice_rows(embeddings, t, 1);
    Value z = add_rowvec(matmul(concat_cols({xt, h_prev}), w), b);
    Value gi = sigmoid(slice_cols(z, 0, h));
    Value gf = sigmoid(slice_cols(z, h, h));
    Value gc = tanh(slice_cols(z, 2 * h, h));
    Value go = sigmoid(slice_cols(z, 3 * h, h));
    Value c = add(mul(gf, c_prev), mul(gi, gc));
    Value hh = mul(go, tanh(c));
    states[static_cast<std::size_t>(t)] = hh;
    h_prev = hh;
    c_prev = c;
  }
  return states;
}

}  // namespace

Value TaggerModel::emissions_on_tape(Tape& tape,
                                     const std::vector<Value>& leaves,
                                     Value embeddings) const {
  if (leaves.size() != params_.all().size() || leaves[0].tape != &tape)
    throw std::runtime_error("tagger: parameter leaves do not match tape");
  if (static_cast<int>(embeddings.cols()) != input_dim_)
    throw std::runtime_error(
        "tagger: embedding width " + std::to_string(embeddings.cols()) +
        " != expected input dim " + std::to_string(input_dim_));
  const int h = config_.hidden;
  auto L = [&](const std::string& name) {
    return leaves[static_cast<std::size_t>(leaf_index(name))];
  };
  std::vector<Value> fw =
      lstm_direction(embeddings, L("lstm.fw.w"), L("lstm.fw.b"), h, false);
  std::vector<Value> bw =
      lstm_direction(embeddings, L("lstm.bw.w"), L("lstm.bw.b"), h, true);
  std::vector<Value> rows;
  rows.reserve(fw.size());
  for (std::size_t t = 0; t < fw.size(); ++t)
    rows.push_back(concat_cols({fw[t], bw[t]}));
  Value states = concat_rows(rows);
  return add_rowvec(matmul(states, L("emit.w")), L("emit.b"));
}

Value TaggerModel::transitions_on_tape(Tape& tape,
                                       const std::vector<Value>& leaves) const {
  Value trans = leaves[static_cast<std::size_t>(leaf_index("crf.trans"))];
  if (config_.bio_transition_mask) {
    Value mask = tape.leaf(transition_mask());
    trans = add(trans, mask);
  }
  return trans;
}

Mat TaggerModel::transition_mask() const {
  const int k = alphabet_.size();
  Mat mask = Mat::Zero(k + 2, k + 2);
  const double forbid = -1e30;
  auto tag_of = [this](int id) { return BioTag::parse(alphabet_.label_of(id)); };
  for (int to = 0; to < k; ++to) {
    const BioTag t = tag_of(to);
    if (t.position != BioPos::I) continue;
    // I-x is only reachable from B-x or I-x
    mask(k, to) = forbid;  // START -> I-x
    for (int from = 0; from < k; ++from) {
      const BioTag f = tag_of(from);
      const bool ok = (f.position == BioPos::B || f.position == BioPos::I) &&
                      f.entity_type == t.entity_type;
      if (!ok) mask(from, to) = forbid;
    }
  }
  return mask;
}

namespace {

Mat plain_lstm_direction(const Mat& x, const Mat& w, const Mat& b, int h,
                         bool backward_dir) {
  const Eigen::Index n = x.rows();
  Mat out(n, h);
  Eigen::RowVectorXd hp = Eigen::RowVectorXd::Zero(h);
  Eigen::RowVectorXd cp = Eigen::RowVectorXd::Zero(h);
  Eigen::RowVectorXd zin(x.cols() + h);
  for (Eigen::Index step = 0; step < n; ++step) {
    const Eigen::Index t = backward_dir ? n - 1 - step : step;
    zin << x.row(t), hp;
    Eigen::RowVectorXd z = zin * w + b.row(0);
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    Eigen::RowVectorXd gi = z.segment(0, h).unaryExpr(sig);
    Eigen::RowVectorXd gf = z.segment(h, h).unaryExpr(sig);
    Eigen::RowVectorXd gc =
        z.segment(2 * h, h).unaryExpr([](double v) { return std::tanh(v); });
    Eigen::RowVectorXd go = z.segment(3 * h, h).unaryExpr(sig);
    cp = gf.cwiseProduct(cp) + gi.cwiseProduct(gc);
    hp = go.cwiseProduct(
        cp.unaryExpr([](double v) { return std::tanh(v); }));
    out.row(t) = hp;
  }
  return out;
}

}  // namespace

Mat TaggerModel::bilstm_plain(const Mat& embeddings) const {
  const int h = config_.hidden;
  auto P = [&](const std::string& name) -> const Mat& {
    return params_.at(name).value;
  };
  Mat fw = plain_lstm_direction(embeddings, P("lstm.fw.w"), P("lstm.fw.b"), h,
                                false);
  Mat bw = plain_lstm_direction(embeddings, P("lstm.bw.w"), P("lstm.bw.b"), h,
                                true);
  Mat states(embeddings.rows(), 2 * h);
  states << fw, bw;
  return states;
}

TagLattice TaggerModel::lattice_for(const Mat& embeddings) const {
  if (static_cast<int>(embeddings.cols()) != input_dim_)
    throw std::runtime_error(
        "tagger: embedding width " + std::to_string(embeddings.cols()) +
        " != expected input dim " + std::to_string(input_dim_));
  TagLattice lat;
  Mat states = bilstm_plain(embeddings);
  lat.emissions = (states * params_.at("emit.w").value).rowwise() +
                  params_.at("emit.b").value.row(0);
  lat.transitions = params_.at("crf.trans").value;
  if (config_.bio_transition_mask) lat.transitions += transition_mask();
  return lat;
}

std::vector<std::string> TaggerModel::tag(const Mat& embeddings) const {
  const ViterbiResult res = viterbi_decode(lattice_for(embeddings));
  std::vector<std::string> out;
  out.reserve(res.labels.size());
  for (int id : res.labels) out.push_back(alphabet_.label_of(id));
  return out;
}

void TaggerModel::save(const std::string& path) const {
  Checkpoint ckpt;
  json meta;
  meta["kind"] = "tagger";
  meta["config"] = json::parse(config_.to_json_text());
  meta["labels"] = alphabet_.labels;
  meta["input_dim"] = input_dim_;
  ckpt.metadata_json = meta.dump();
  for (const Param& p : params_.all())
    ckpt.tensors.push_back({p.name, p.value});
  save_checkpoint(path, ckpt, 8);
}

TaggerModel TaggerModel::load(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  const json meta = json::parse(ckpt.metadata_json);
  if (meta.value("kind", std::string()) != "tagger")
    throw std::runtime_error(path + " is not a tagger checkpoint");
  TaggerConfig config = TaggerConfig::from_json_text(meta.at("config").dump());
  LabelAlphabet alphabet;
  alphabet.labels = meta.at("labels").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < alphabet.labels.size(); ++i)
    alphabet.ids.emplace(alphabet.labels[i], static_cast<int>(i));
  TaggerModel model(std::move(config), std::move(alphabet),
                    meta.at("input_dim").get<int>());
  for (Param& p : model.params_.all()) {
    const Mat& t = ckpt.tensor(p.name);
    if (t.rows() != p.value.rows() || t.cols() != p.value.cols())
      throw std::runtime_error("checkpoint tensor '" + p.name +
                               "' has unexpected shape");
    p.value = t;
  }
  return model;
}

std::vector<std::string> tag(const TaggerModel& tagger,
                             const EncoderModel& encoder,
                             const Utterance& utterance) {
  std::vector<std::string> texts;
  texts.reserve(utterance.tokens.size());
  for (const Token& t : utterance.tokens) texts.push_back(t.text);
  return tagger.tag(encoder.embed(texts));
}

TrainResult train_tagger(const Corpus& train, const Corpus& dev,
                         const EncoderModel& encoder,
                         const TaggerConfig& config) {
  config.validate();
  if (train.empty() || dev.empty())
    throw std::runtime_error("train_tagger: empty train or dev corpus");

  LabelAlphabet alphabet = LabelAlphabet::from_corpus(train);
  TaggerModel model(config, std::move(alphabet), encoder.config().hidden);
  AdamOptimizer opt(config.lr);

  // frozen embeddings, computed once
  auto embed_all = [&encoder](const Corpus& corpus) {
    std::vector<Mat> out;
    out.reserve(corpus.size());
    for (const Utterance& u : corpus) {
      std::vector<std::string> texts;
      texts.reserve(u.tokens.size());
      for (const Token& t : u.tokens) texts.push_back(t.text);
      out.push_back(encoder.embed(texts));
    }
    return out;
  };
  const std::vector<Mat> train_emb = embed_all(train);
  const std::vector<Mat> dev_emb = embed_all(dev);

  std::vector<std::vector<int>> train_gold;
  train_gold.reserve(train.size());
  for (const Utterance& u : train) {
    std::vector<int> ids;
    ids.reserve(u.tokens.size());
    for (const Token& t : u.tokens)
      ids.push_back(model.alphabet().id_of(t.tag.str()));
    train_gold.push_back(std::move(ids));
  }

  TrainResult result{std::move(model), {}, 0, 1.0};

  auto dev_eer_now = [&]() {
    Predictions preds;
    for (std::size_t i = 0; i < dev.size(); ++i)
      preds.emplace(dev[i].id, result.model.tag(dev_emb[i]));
    return evaluate(dev, preds).eer;
  };
  std::vector<Mat> best_params;
  bool have_best = false;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng order_rng =
        Rng::derive(config.seed, "order", static_cast<std::uint64_t>(epoch));
    order_rng.shuffle(order);

    double nll_sum = 0.0;
    const std::size_t bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      Tape tape;
      std::vector<Value> leaves = result.model.param_leaves(tape, true);
      Value trans = result.model.transitions_on_tape(tape, leaves);
      Value batch_total;
      bool first = true;
      for (std::size_t j = start; j < end; ++j) {
        const std::size_t idx = order[j];
        Value emb = tape.leaf(train_emb[idx]);
        Value emissions = result.model.emissions_on_tape(tape, leaves, emb);
        Value nll = crf_nll_on_tape(emissions, trans, train_gold[idx]);
        const double nll_val = nll.val()(0, 0);
        if (!std::isfinite(nll_val))
          throw std::runtime_error("train_tagger: non-finite NLL at epoch " +
                                   std::to_string(epoch) + ", utterance " +
                                   train[idx].id);
        nll_sum += nll_val;
        batch_total = first ? nll : add(batch_total, nll);
        first = false;
      }
      tape.backward(batch_total);
      auto& ps = result.model.params().all();
      for (std::size_t i = 0; i < ps.size(); ++i)
        ps[i].grad += leaves[i].grad();
      opt.step(result.model.params());
    }

    TrainEpoch ep;
    ep.epoch = epoch;
    ep.train_nll = nll_sum / static_cast<double>(train.size());
    ep.dev_eer = dev_eer_now();
    result.history.push_back(ep);

    if (!have_best || ep.dev_eer < result.best_dev_eer) {
      result.best_dev_eer = ep.dev_eer;
      result.best_epoch = epoch;
      best_params.clear();
      for (const Param& p : result.model.params().all())
        best_params.push_back(p.value);
      have_best = true;
    } else if (epoch - result.best_epoch >= config.patience) {
      break;
    }
  }

  // restore the best-dev parameters
  auto& ps = result.model.params().all();
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i].value = best_params[i];
  return result;
}

}  // namespace pausenlu
