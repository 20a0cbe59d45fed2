#include "pausenlu/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "pausenlu/rng.hpp"

namespace pausenlu {

using nlohmann::json;

namespace {

constexpr double kMaxPauseMs = 10000.0;

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

// Entity slots come in two shapes: "<E>" accepts any lexicon entry, while
// "<E:Type>" restricts the slot to entities of that type. Returns whether
// `token` is a slot; `type` is left empty for the untyped form.
bool parse_slot(const std::string& token, std::string* type) {
  type->clear();
  if (token == "<E>") return true;
  if (token.size() > 4 && token.rfind("<E:", 0) == 0 && token.back() == '>') {
    *type = token.substr(3, token.size() - 4);
    return true;
  }
  return false;
}

// Builtin lexicons. Entity names deliberately share words with carrier
// tails ("now", "next", "again", "tonight") so that span boundaries are not
// recoverable from token identity alone.
DomainProfile builtin_music() {
  DomainProfile p;
  p.domain = "music";
  const char* songs[] = {
      "thank you next", "hold on",        "bad guy",       "let it be",
      "yesterday",      "help",           "someone like you", "believer",
      "shallow",        "one more time",  "stay",          "closer",
      "burn",           "love me now",    "better now",    "circles",
      "dynamite",       "butter",         "happier",       "again",
      "forever young",  "angels",         "lights up",     "golden hour",
      "midnight rain",  "cruel summer",   "the night we met",
      "drivers license", "good days",     "heat waves",    "play it again",
      "next to me",     "on my way",      "lost",          "photograph"};
  const char* artists[] = {
      "adele",        "drake",        "queen",         "the weeknd",
      "dua lipa",     "post malone",  "bad bunny",     "taylor swift",
      "elton john",   "doja cat",     "the rolling stones",
      "imagine dragons", "billie eilish", "bruno mars", "harry styles"};
  for (const char* s : songs) p.entity_lexicon.push_back({s, "Song"});
  for (const char* a : artists) p.entity_lexicon.push_back({a, "Artist"});
  p.carrier_templates = {
      {"play", "<E>"},
      {"play", "<E>", "now"},
      {"play", "<E>", "next"},
      {"play", "<E>", "again"},
      {"put", "on", "<E>"},
      {"i", "want", "to", "hear", "<E>"},
      {"queue", "<E>", "please"},
      {"play", "the", "song", "<E>"},
      {"play", "some", "<E>"},
      {"shuffle", "<E>"},
      {"<E>", "please"},
      {"skip", "this", "and", "play", "<E>"},
  };
  return p;
}

DomainProfile builtin_movies() {
  DomainProfile p;
  p.domain = "movies";
  const char* movies[] = {
      "the dark knight",          "inception",
      "the godfather",            "pulp fiction",
      "forrest gump",             "the lion king",
      "back to the future",       "home alone",
      "the matrix",               "jurassic park",
      "finding nemo",             "toy story",
      "the silence of the lambs", "a quiet place",
      "knives out",               "good will hunting",
      "the grand budapest hotel", "mad max fury road",
      "the shawshank redemption", "no time to die",
      "once upon a time in hollywood",
      "everything everywhere all at once",
      "top gun maverick",         "a star is born",
      "the wolf of wall street",  "gone girl",
      "the big short",            "now you see me",
      "edge of tomorrow",         "about time"};
  for (const char* m : movies) p.entity_lexicon.push_back({m, "Movie"});
  p.carrier_templates = {
      {"watch", "<E>"},
      {"play", "the", "movie", "<E>"},
      {"show", "me", "<E>"},
      {"put", "on", "<E>", "tonight"},
      {"i", "want", "to", "watch", "<E>"},
      {"rent", "<E>"},
      {"find", "<E>"},
      {"watch", "<E>", "again"},
      {"is", "<E>", "on", "tonight"},
      {"play", "<E>", "trailer"},
  };
  return p;
}

DomainProfile builtin_sports() {
  DomainProfile p;
  p.domain = "sports";
  const char* teams[] = {"lakers",    "celtics",   "warriors", "arsenal",
                         "chelsea",   "liverpool", "barcelona", "juventus",
                         "yankees",   "dodgers",   "patriots", "eagles",
                         "real madrid", "red sox", "manchester united"};
  const char* players[] = {"messi",  "ronaldo", "lebron", "curry",
                           "serena", "federer", "mbappe", "ohtani"};
  for (const char* t : teams) p.entity_lexicon.push_back({t, "Team"});
  for (const char* pl : players) p.entity_lexicon.push_back({pl, "Player"});
  p.carrier_templates = {
      {"did", "the", "<E>", "win"},
      {"when", "do", "the", "<E>", "play"},
      {"show", "me", "the", "<E>", "game"},
      {"turn", "on", "the", "<E>", "game"},
      {"<E>", "score"},
      {"how", "did", "<E>", "do", "tonight"},
      {"score", "for", "the", "<E>"},
      {"highlights", "for", "<E>"},
  };
  return p;
}

// Experiment lexicons. These are larger and partly compositional so that the
// (template x entity) space runs to a few thousand combinations per domain --
// far more than a parser training slice of a few hundred utterances can
// memorize. Entity names reuse carrier words ("now", "again", "the", "time",
// "good") and nest inside one another ("the night" / "the night we met"), so
// span boundaries must be read from context rather than token identity. Name
// pools are chosen so that no surface string has two distinct derivations:
// every utterance keeps a unique gold labeling. Templates whose wording
// implies an entity type use typed slots ("did the <E:Team> win"), while
// neutral templates ("<E> score") accept any entity, so type decisions mix
// contextual rules with name identity.
DomainProfile experiment_music() {
  DomainProfile p;
  p.domain = "music";
  const std::vector<std::string> adjectives = {
      "golden", "midnight", "cruel",  "wild", "summer", "winter",
      "electric", "broken", "silver", "neon", "lonely", "sweet"};
  const std::vector<std::string> nouns = {"hour",   "rain",  "summer", "love",
                                          "heart",  "lights", "dreams",
                                          "river",  "road",  "sky"};
  for (const std::string& a : adjectives)
    for (const std::string& n : nouns) {
      if (a == n) continue;
      p.entity_lexicon.push_back({a + " " + n, "Song"});
    }
  const char* short_songs[] = {"again",    "stay",      "closer",  "burn",
                               "help",     "yesterday", "believer", "shallow",
                               "dynamite", "butter",    "happier", "lost",
                               "photograph", "home",    "fire",    "rain",
                               "gold",     "forever",   "tonight", "now"};
  for (const char* s : short_songs) p.entity_lexicon.push_back({s, "Song"});
  const char* two_word_songs[] = {"better now", "hold on",   "bad guy",
                                  "the one",    "say so",    "heat waves",
                                  "good days",  "the night"};
  for (const char* s : two_word_songs) p.entity_lexicon.push_back({s, "Song"});
  const char* long_songs[] = {
      "one more time",  "love me now",        "love me again",
      "hold on tight",  "the way home",       "the night we met",
      "out of time",    "back to you",        "waiting for you",
      "all too well",   "dancing in the dark", "house of gold"};
  for (const char* s : long_songs) p.entity_lexicon.push_back({s, "Song"});
  const std::vector<std::string> first_names = {
      "luna", "ivy", "nova", "ruby", "june",
      "stella", "jade", "pearl", "iris", "wren"};
  const std::vector<std::string> last_names = {
      "gray", "stone", "rivers", "fox", "wilde",
      "moon", "snow", "vale", "cross", "banks"};
  for (const std::string& f : first_names)
    for (const std::string& l : last_names)
      p.entity_lexicon.push_back({f + " " + l, "Artist"});
  const char* solo_artists[] = {"adele", "drake", "queen", "prince", "pink",
                                "seal",  "sting", "beck",  "usher",  "common"};
  for (const char* a : solo_artists) p.entity_lexicon.push_back({a, "Artist"});
  p.carrier_templates = {
      {"play", "<E>"},
      {"play", "<E>", "now"},
      {"play", "<E>", "next"},
      {"play", "<E>", "again"},
      {"play", "<E>", "first"},
      {"put", "on", "<E>"},
      {"put", "on", "some", "<E>"},
      {"i", "want", "to", "hear", "<E>"},
      {"i", "want", "to", "hear", "<E>", "again"},
      {"queue", "<E>", "please"},
      {"queue", "up", "<E>"},
      {"play", "the", "song", "<E:Song>"},
      {"play", "some", "<E>"},
      {"play", "something", "by", "<E:Artist>"},
      {"shuffle", "<E>"},
      {"shuffle", "songs", "by", "<E:Artist>"},
      {"<E>", "please"},
      {"skip", "this", "and", "play", "<E>"},
      {"play", "<E>", "one", "more", "time"},
      {"have", "you", "heard", "<E>"},
  };
  return p;
}

DomainProfile experiment_movies() {
  DomainProfile p;
  p.domain = "movies";
  const std::vector<std::string> adjectives = {
      "dark",   "last",   "first",    "lost",    "silent", "hidden",
      "golden", "broken", "midnight", "crimson", "iron",   "paper"};
  const std::vector<std::string> nouns = {
      "knight", "kingdom", "garden", "island", "letter",
      "river",  "forest",  "crown",  "city",   "train"};
  for (const std::string& a : adjectives)
    for (const std::string& n : nouns)
      p.entity_lexicon.push_back({"the " + a + " " + n, "Movie"});
  const std::vector<std::string> of_tails = {"winter", "smoke",    "glass",
                                             "thunder", "midnight", "stone"};
  for (const std::string& n : nouns)
    for (const std::string& t : of_tails)
      p.entity_lexicon.push_back({"the " + n + " of " + t, "Movie"});
  const char* classics[] = {"back to the future",
                            "no time to die",
                            "once upon a time in hollywood",
                            "everything everywhere all at once",
                            "edge of tomorrow",
                            "now you see me",
                            "about time",
                            "a quiet place",
                            "knives out",
                            "good will hunting"};
  for (const char* m : classics) p.entity_lexicon.push_back({m, "Movie"});
  p.carrier_templates = {
      {"watch", "<E>"},
      {"play", "the", "movie", "<E>"},
      {"show", "me", "<E>"},
      {"put", "on", "<E>", "tonight"},
      {"i", "want", "to", "watch", "<E>"},
      {"rent", "<E>"},
      {"find", "<E>"},
      {"watch", "<E>", "again"},
      {"is", "<E>", "on", "tonight"},
      {"play", "<E>", "trailer"},
      {"watch", "the", "movie", "<E>"},
      {"stream", "<E>"},
      {"is", "<E>", "any", "good"},
      {"what", "time", "is", "<E>", "playing"},
  };
  return p;
}

DomainProfile experiment_sports() {
  DomainProfile p;
  p.domain = "sports";
  const char* players[] = {"young", "rose",  "love",   "green", "brown",
                           "white", "ball",  "hill",   "wall",  "king",
                           "wood",  "stone", "rivers", "banks", "moon",
                           "west",  "lane",  "day",    "knight", "power",
                           "best",  "strong", "savage", "law",   "chase",
                           "sharp", "swift", "bolt",   "gold",  "reed",
                           "snow",  "field", "price",  "page",  "bell",
                           "fox",   "marsh", "frost"};
  for (const char* pl : players) p.entity_lexicon.push_back({pl, "Player"});
  const char* nicknames[] = {"lakers",   "celtics",  "warriors", "arsenal",
                             "chelsea",  "liverpool", "barcelona", "juventus",
                             "yankees",  "dodgers",  "patriots", "eagles",
                             "heat",     "jazz",     "magic",    "thunder",
                             "bulls",    "hawks",    "wolves",   "kings",
                             "suns",     "storm"};
  for (const char* t : nicknames) p.entity_lexicon.push_back({t, "Team"});
  const std::vector<std::string> places = {"river", "bay",    "north", "west",
                                           "golden", "salt",  "iron",  "twin"};
  const std::vector<std::string> club_words = {"city", "united", "rovers",
                                               "rangers"};
  for (const std::string& c : places)
    for (const std::string& w : club_words)
      p.entity_lexicon.push_back({c + " " + w, "Team"});
  const char* classic_teams[] = {"real madrid", "red sox",     "manchester united",
                                 "inter milan", "golden state", "red wings"};
  for (const char* t : classic_teams) p.entity_lexicon.push_back({t, "Team"});
  p.carrier_templates = {
      {"did", "the", "<E:Team>", "win"},
      {"when", "do", "the", "<E:Team>", "play"},
      {"show", "me", "the", "<E:Team>", "game"},
      {"turn", "on", "the", "<E:Team>", "game"},
      {"<E>", "score"},
      {"how", "did", "<E:Player>", "do", "tonight"},
      {"score", "for", "the", "<E:Team>"},
      {"highlights", "for", "<E>"},
      {"did", "<E:Player>", "score", "tonight"},
      {"how", "many", "points", "did", "<E:Player>", "get"},
      {"is", "<E>", "playing", "tonight"},
      {"who", "won", "the", "<E:Team>", "game"},
      {"stats", "for", "<E>"},
      {"when", "is", "the", "next", "<E:Team>", "game"},
      {"did", "the", "<E:Team>", "win", "last", "night"},
      {"show", "<E>", "highlights"},
  };
  return p;
}

void check_template(const std::vector<std::string>& tpl,
                    const DomainProfile& profile) {
  std::size_t slots = 0;
  std::string slot_type;
  for (const std::string& t : tpl) {
    std::string type;
    if (!parse_slot(t, &type)) continue;
    ++slots;
    slot_type = type;
  }
  if (slots != 1)
    throw std::runtime_error("generator config: template in domain '" +
                             profile.domain +
                             "' must contain exactly one <E> slot");
  if (!slot_type.empty()) {
    bool known = false;
    for (const LexiconEntry& e : profile.entity_lexicon)
      if (e.entity_type == slot_type) known = true;
    if (!known)
      throw std::runtime_error("generator config: domain '" + profile.domain +
                               "' has a template slot for type '" + slot_type +
                               "' but no such entity in the lexicon");
  }
}

}  // namespace

void GeneratorConfig::validate() const {
  if (domains.empty())
    throw std::runtime_error("generator config: no domain profiles");
  for (const DomainProfile& p : domains) {
    const std::string tag = "generator config, domain '" + p.domain + "': ";
    if (p.entity_lexicon.empty())
      throw std::runtime_error(tag + "empty entity lexicon");
    if (p.carrier_templates.empty())
      throw std::runtime_error(tag + "empty carrier templates");
    for (const auto& tpl : p.carrier_templates) check_template(tpl, p);
    for (const LexiconEntry& e : p.entity_lexicon) {
      if (split_ws(e.name).empty())
        throw std::runtime_error(tag + "empty entity name");
      if (e.entity_type.empty())
        throw std::runtime_error(tag + "entity '" + e.name + "' has no type");
    }
    if (p.within_pause_mean_ms < 0.0 || p.boundary_pause_mean_ms < 0.0)
      throw std::runtime_error(tag + "negative pause mean");
    if (!(p.boundary_pause_mean_ms > p.within_pause_mean_ms))
      throw std::runtime_error(tag +
                               "boundary mean must exceed within mean");
    if (p.zero_pause_prob < 0.0 || p.zero_pause_prob >= 1.0)
      throw std::runtime_error(tag + "zero_pause_prob must be in [0, 1)");
    if (p.noise_sd_ms < 0.0)
      throw std::runtime_error(tag + "negative noise sd");
  }
}

GeneratorConfig GeneratorConfig::french_defaults(std::size_t n,
                                                 std::uint64_t seed) {
  GeneratorConfig c;
  c.seed = seed;
  c.n_utterances = n;
  c.domains = {builtin_music(), builtin_movies(), builtin_sports()};
  for (DomainProfile& p : c.domains) {
    p.boundary_pause_mean_ms = 55.04;
    p.within_pause_mean_ms = 18.17;
    p.zero_pause_prob = 0.5;
    p.noise_sd_ms = 80.0;
  }
  return c;
}

GeneratorConfig GeneratorConfig::experiment_defaults(std::size_t n,
                                                     std::uint64_t seed) {
  GeneratorConfig c;
  c.seed = seed;
  c.n_utterances = n;
  c.domains = {experiment_music(), experiment_movies(), experiment_sports()};
  // music
  c.domains[0].boundary_pause_mean_ms = 55.04;
  c.domains[0].within_pause_mean_ms = 18.17;
  c.domains[0].noise_sd_ms = 60.0;
  // movies: longest spans and pauses
  c.domains[1].boundary_pause_mean_ms = 120.0;
  c.domains[1].within_pause_mean_ms = 35.0;
  c.domains[1].noise_sd_ms = 110.0;
  // sports: shortest
  c.domains[2].boundary_pause_mean_ms = 35.0;
  c.domains[2].within_pause_mean_ms = 12.0;
  c.domains[2].noise_sd_ms = 40.0;
  for (DomainProfile& p : c.domains) p.zero_pause_prob = 0.5;
  return c;
}

static DomainProfile profile_from_json(const json& j) {
  DomainProfile p;
  p.domain = j.at("domain").get<std::string>();
  for (const json& e : j.at("entity_lexicon")) {
    if (e.is_string())
      p.entity_lexicon.push_back(
          {e.get<std::string>(), j.value("entity_type", "Entity")});
    else
      p.entity_lexicon.push_back({e.at("name").get<std::string>(),
                                  e.at("type").get<std::string>()});
  }
  for (const json& t : j.at("carrier_templates"))
    p.carrier_templates.push_back(t.get<std::vector<std::string>>());
  p.boundary_pause_mean_ms =
      j.value("boundary_pause_mean_ms", p.boundary_pause_mean_ms);
  p.within_pause_mean_ms =
      j.value("within_pause_mean_ms", p.within_pause_mean_ms);
  p.zero_pause_prob = j.value("zero_pause_prob", p.zero_pause_prob);
  p.noise_sd_ms = j.value("noise_sd_ms", p.noise_sd_ms);
  return p;
}

GeneratorConfig GeneratorConfig::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  GeneratorConfig c;
  c.seed = j.value("seed", std::uint64_t{1});
  c.n_utterances = j.at("n_utterances").get<std::size_t>();
  for (const json& d : j.at("domains")) c.domains.push_back(profile_from_json(d));
  c.validate();
  return c;
}

GeneratorConfig GeneratorConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open generator config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string GeneratorConfig::to_json_text() const {
  json j;
  j["seed"] = seed;
  j["n_utterances"] = n_utterances;
  json ds = json::array();
  for (const DomainProfile& p : domains) {
    json d;
    d["domain"] = p.domain;
    json lex = json::array();
    for (const LexiconEntry& e : p.entity_lexicon)
      lex.push_back({{"name", e.name}, {"type", e.entity_type}});
    d["entity_lexicon"] = std::move(lex);
    d["carrier_templates"] = p.carrier_templates;
    d["boundary_pause_mean_ms"] = p.boundary_pause_mean_ms;
    d["within_pause_mean_ms"] = p.within_pause_mean_ms;
    d["zero_pause_prob"] = p.zero_pause_prob;
    d["noise_sd_ms"] = p.noise_sd_ms;
    ds.push_back(std::move(d));
  }
  j["domains"] = std::move(ds);
  return j.dump(2);
}

namespace {

// Zero-inflated log-normal draw. The configured mean is of the full mixture,
// so the nonzero component's mean is mean / (1 - p0).
double draw_pause(Rng& rng, double mixture_mean_ms, double sd_ms,
                  double zero_prob) {
  if (rng.uniform() < zero_prob) return 0.0;
  const double component_mean = mixture_mean_ms / (1.0 - zero_prob);
  const double d = rng.lognormal_mean_sd(component_mean, sd_ms);
  return std::clamp(d, 0.0, kMaxPauseMs);
}

}  // namespace

Corpus generate(const GeneratorConfig& config) {
  config.validate();
  Corpus corpus;
  corpus.reserve(config.n_utterances);
  const std::size_t n_domains = config.domains.size();

  // per-domain entity index pools: all entities plus one pool per type
  struct EntityPools {
    std::vector<std::size_t> all;
    std::map<std::string, std::vector<std::size_t>> by_type;
  };
  std::vector<EntityPools> pools(n_domains);
  for (std::size_t d = 0; d < n_domains; ++d) {
    const auto& lex = config.domains[d].entity_lexicon;
    for (std::size_t e = 0; e < lex.size(); ++e) {
      pools[d].all.push_back(e);
      pools[d].by_type[lex[e].entity_type].push_back(e);
    }
  }

  for (std::size_t i = 0; i < config.n_utterances; ++i) {
    const std::size_t d = i % n_domains;
    const DomainProfile& p = config.domains[d];
    Rng rng = Rng::derive(config.seed, "utt", i);

    const auto& tpl = p.carrier_templates[rng.below(p.carrier_templates.size())];
    std::string slot_type;
    for (const std::string& word : tpl) {
      std::string type;
      if (parse_slot(word, &type)) slot_type = type;
    }
    const std::vector<std::size_t>& pool =
        slot_type.empty() ? pools[d].all : pools[d].by_type.at(slot_type);
    const LexiconEntry& ent = p.entity_lexicon[pool[rng.below(pool.size())]];
    const std::vector<std::string> ent_tokens = split_ws(ent.name);

    Utterance u;
    {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "-%06zu", i);
      u.id = p.domain + buf;
    }
    u.domain = p.domain;
    for (const std::string& word : tpl) {
      std::string type;
      if (parse_slot(word, &type)) {
        for (std::size_t k = 0; k < ent_tokens.size(); ++k) {
          Token t;
          t.text = ent_tokens[k];
          t.tag.position = k == 0 ? BioPos::B : BioPos::I;
          t.tag.entity_type = ent.entity_type;
          u.tokens.push_back(std::move(t));
        }
      } else {
        Token t;
        t.text = word;
        u.tokens.push_back(std::move(t));
      }
    }

    // Pause after token i is governed by the (tag_i, tag_{i+1}) transition:
    // entity boundaries (O-B, B-O, I-O) use the boundary law, everything
    // else (B-I, I-I, O-O, and the final token) the within/background law.
    for (std::size_t k = 0; k < u.tokens.size(); ++k) {
      bool boundary = false;
      if (k + 1 < u.tokens.size()) {
        const BioPos a = u.tokens[k].tag.position;
        const BioPos b = u.tokens[k + 1].tag.position;
        boundary = (a == BioPos::O && b == BioPos::B) ||
                   (a != BioPos::O && b == BioPos::O);
      }
      const double mean =
          boundary ? p.boundary_pause_mean_ms : p.within_pause_mean_ms;
      u.tokens[k].pause_after_ms =
          draw_pause(rng, mean, p.noise_sd_ms, p.zero_pause_prob);
    }

    validate_utterance(u);
    corpus.push_back(std::move(u));
  }
  return corpus;
}

CorpusSplit split_corpus(const Corpus& corpus, SplitFractions fractions,
                         std::uint64_t seed) {
  const double f[3] = {fractions.train, fractions.dev, fractions.test};
  double sum = 0.0;
  for (double x : f) {
    if (x <= 0.0)
      throw std::runtime_error("split_corpus: fractions must be positive");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::runtime_error("split_corpus: fractions must sum to 1");

  const std::size_t n = corpus.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derive(seed, "split");
  rng.shuffle(order);

  // floor then largest remainder; ties broken by split order
  std::size_t counts[3];
  double rem[3];
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = f[s] * static_cast<double>(n);
    counts[s] = static_cast<std::size_t>(std::floor(exact));
    rem[s] = exact - std::floor(exact);
    assigned += counts[s];
  }
  while (assigned < n) {
    int best = 0;
    for (int s = 1; s < 3; ++s)
      if (rem[s] > rem[best]) best = s;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }

  CorpusSplit split;
  Corpus* dests[3] = {&split.train, &split.dev, &split.test};
  std::size_t pos = 0;
  for (int s = 0; s < 3; ++s) {
    std::vector<std::size_t> ids(order.begin() + pos,
                                 order.begin() + pos + counts[s]);
    std::sort(ids.begin(), ids.end());  // keep original corpus order
    for (std::size_t idx : ids) dests[s]->push_back(corpus[idx]);
    pos += counts[s];
  }
  return split;
}

}  // namespace pausenlu
