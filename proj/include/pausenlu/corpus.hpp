#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace pausenlu {

enum class BioPos { O, B, I };

// Joint BIO label: "O", or "B-<type>" / "I-<type>" with a non-empty type.
struct BioTag {
  BioPos position = BioPos::O;
  std::string entity_type;  // present iff position is B or I

  static BioTag parse(const std::string& label);
  std::string str() const;
  std::string position_str() const;  // "O", "B", or "I"
  bool operator==(const BioTag&) const = default;
};

struct Token {
  std::string text;
  double pause_after_ms = 0.0;  // pause following this token, milliseconds
  BioTag tag;
  bool operator==(const Token&) const = default;
};

struct Utterance {
  std::string id;
  std::string domain;
  std::vector<Token> tokens;
  bool operator==(const Utterance&) const = default;
};

using Corpus = std::vector<Utterance>;

struct CorpusStats {
  std::size_t n_utterances = 0;
  double avg_tokens_per_utterance = 0.0;
  double entity_token_fraction = 0.0;  // tokens tagged B or I / all tokens
  double avg_pause_per_token_ms = 0.0;
};

struct EntitySpan {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  std::string entity_type;
  bool operator==(const EntitySpan&) const = default;
};

// Throws std::runtime_error naming the utterance id and token index on the
// first violation (empty token text, negative pause, I not preceded by a
// B/I of the same entity type, empty token list).
void validate_utterance(const Utterance& u);

// Line-delimited JSON records; one utterance per line. A record with a
// missing pause_ms has its pause treated as 0 ms. Errors carry the 1-based
// line number.
Corpus parse_corpus(std::istream& in);
Corpus load_corpus(const std::string& path);

std::string serialize_utterance(const Utterance& u);
void write_corpus(const Corpus& corpus, std::ostream& out);
void save_corpus(const Corpus& corpus, const std::string& path);

// Throws on an empty corpus.
CorpusStats corpus_stats(const Corpus& corpus);

// Maximal B(I)* runs in order; requires a BIO-valid utterance.
std::vector<EntitySpan> entity_spans(const Utterance& u);

}  // namespace pausenlu
