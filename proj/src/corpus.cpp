#include "pausenlu/corpus.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace pausenlu {

using nlohmann::json;

BioTag BioTag::parse(const std::string& label) {
  if (label == "O") return BioTag{BioPos::O, ""};
  if (label.size() >= 3 && (label[0] == 'B' || label[0] == 'I') &&
      label[1] == '-') {
    BioTag tag;
    tag.position = label[0] == 'B' ? BioPos::B : BioPos::I;
    tag.entity_type = label.substr(2);
    return tag;
  }
  throw std::runtime_error("invalid BIO label '" + label +
                           "' (expected O, B-<type> or I-<type>)");
}

std::string BioTag::str() const {
  switch (position) {
    case BioPos::O:
      return "O";
    case BioPos::B:
      return "B-" + entity_type;
    case BioPos::I:
      return "I-" + entity_type;
  }
  return "O";
}

std::string BioTag::position_str() const {
  switch (position) {
    case BioPos::B:
      return "B";
    case BioPos::I:
      return "I";
    default:
      return "O";
  }
}

void validate_utterance(const Utterance& u) {
  if (u.tokens.empty())
    throw std::runtime_error("utterance '" + u.id + "': no tokens");
  for (std::size_t i = 0; i < u.tokens.size(); ++i) {
    const Token& t = u.tokens[i];
    const std::string where =
        "utterance '" + u.id + "' token " + std::to_string(i);
    if (t.text.empty()) throw std::runtime_error(where + ": empty text");
    if (t.pause_after_ms < 0.0)
      throw std::runtime_error(where + ": negative pause");
    if (t.tag.position == BioPos::O) {
      if (!t.tag.entity_type.empty())
        throw std::runtime_error(where + ": O tag carries an entity type");
    } else {
      if (t.tag.entity_type.empty())
        throw std::runtime_error(where + ": B/I tag without entity type");
    }
    if (t.tag.position == BioPos::I) {
      if (i == 0)
        throw std::runtime_error(where + ": BIO violation, I at start");
      const BioTag& prev = u.tokens[i - 1].tag;
      if (prev.position == BioPos::O || prev.entity_type != t.tag.entity_type)
        throw std::runtime_error(
            where + ": BIO violation, I-" + t.tag.entity_type +
            " not preceded by B/I of the same type");
    }
  }
}

static Utterance utterance_from_json(const json& rec) {
  Utterance u;
  u.id = rec.at("id").get<std::string>();
  u.domain = rec.value("domain", std::string{});
  for (const json& jt : rec.at("tokens")) {
    Token t;
    t.text = jt.at("text").get<std::string>();
    t.pause_after_ms = jt.value("pause_ms", 0.0);
    t.tag = BioTag::parse(jt.at("tag").get<std::string>());
    u.tokens.push_back(std::move(t));
  }
  return u;
}

Corpus parse_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Utterance u;
    try {
      u = utterance_from_json(json::parse(line));
    } catch (const std::exception& e) {
      throw std::runtime_error("corpus line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    validate_utterance(u);
    corpus.push_back(std::move(u));
  }
  return corpus;
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  return parse_corpus(in);
}

std::string serialize_utterance(const Utterance& u) {
  json rec;
  rec["id"] = u.id;
  rec["domain"] = u.domain;
  json toks = json::array();
  for (const Token& t : u.tokens) {
    toks.push_back(
        {{"text", t.text}, {"pause_ms", t.pause_after_ms}, {"tag", t.tag.str()}});
  }
  rec["tokens"] = std::move(toks);
  return rec.dump();
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
  for (const Utterance& u : corpus) out << serialize_utterance(u) << '\n';
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  write_corpus(corpus, out);
}

CorpusStats corpus_stats(const Corpus& corpus) {
  if (corpus.empty()) throw std::runtime_error("corpus_stats: empty corpus");
  CorpusStats s;
  s.n_utterances = corpus.size();
  std::size_t tokens = 0;
  std::size_t entity_tokens = 0;
  double pause_sum = 0.0;
  for (const Utterance& u : corpus) {
    tokens += u.tokens.size();
    for (const Token& t : u.tokens) {
      if (t.tag.position != BioPos::O) ++entity_tokens;
      pause_sum += t.pause_after_ms;
    }
  }
  s.avg_tokens_per_utterance =
      static_cast<double>(tokens) / static_cast<double>(s.n_utterances);
  s.entity_token_fraction =
      static_cast<double>(entity_tokens) / static_cast<double>(tokens);
  s.avg_pause_per_token_ms = pause_sum / static_cast<double>(tokens);
  return s;
}

std::vector<EntitySpan> entity_spans(const Utterance& u) {
  std::vector<EntitySpan> spans;
  for (std::size_t i = 0; i < u.tokens.size(); ++i) {
    if (u.tokens[i].tag.position != BioPos::B) continue;
    EntitySpan span;
    span.start = i;
    span.end = i;
    span.entity_type = u.tokens[i].tag.entity_type;
    while (span.end + 1 < u.tokens.size() &&
           u.tokens[span.end + 1].tag.position == BioPos::I)
      ++span.end;
    spans.push_back(std::move(span));
  }
  return spans;
}

}  // namespace pausenlu
