#include <cmath>
#include <sstream>

#include "doctest.h"
#include "pausenlu/corpus.hpp"
#include "pausenlu/pausestats.hpp"

using namespace pausenlu;

#include "welch_cases.inc"

namespace {

Token tok(const std::string& text, const std::string& tag, double pause) {
  return Token{text, pause, BioTag::parse(tag)};
}

// play(10) thank(0) you(5) next(80) by(0) ariana(12)
// pairs: O-B 10, B-I 0, I-I 5, I-O 80, O-B 0; trailing pause unused
Utterance demo() {
  Utterance u;
  u.id = "u1";
  u.tokens = {tok("play", "O", 10.0),     tok("thank", "B-song", 0.0),
              tok("you", "I-song", 5.0),  tok("next", "I-song", 80.0),
              tok("by", "O", 0.0),        tok("ariana", "B-artist", 12.0)};
  return u;
}

}  // namespace

TEST_CASE("pause pairs are keyed by the surrounding BIO positions") {
  const PairSamples pairs = extract_pairs({demo()});
  REQUIRE(pairs.count("O-B") == 1);
  CHECK(pairs.at("O-B") == std::vector<double>{10.0, 0.0});
  CHECK(pairs.at("B-I") == std::vector<double>{0.0});
  CHECK(pairs.at("I-I") == std::vector<double>{5.0});
  CHECK(pairs.at("I-O") == std::vector<double>{80.0});
  CHECK(pairs.count("B-O") == 0);
  CHECK(pairs.count("O-O") == 0);
  // the pause after the final token belongs to no pair
  std::size_t total = 0;
  for (const auto& [k, v] : pairs) total += v.size();
  CHECK(total == demo().tokens.size() - 1);
}

TEST_CASE("sample summary matches hand numbers") {
  const SampleSummary s = summarize({2.0, 4.0, 6.0, 8.0});
  CHECK(s.n == 4);
  CHECK(s.mean == doctest::Approx(5.0));
  // sample variance (n-1): ((9+1+1+9)/3) = 20/3
  CHECK(s.sd == doctest::Approx(std::sqrt(20.0 / 3.0)));

  CHECK(summarize({}).n == 0);
  CHECK(summarize({3.0}).mean == doctest::Approx(3.0));
  CHECK(summarize({3.0}).sd == 0.0);
}

TEST_CASE("boundary-relative groups pool the right pair types") {
  Utterance u = demo();
  // add a B-O pair: ... ariana(12) B + stop(7) O
  u.tokens.push_back(tok("stop", "O", 7.0));
  PairSamples pairs = extract_pairs({u});
  const GroupSummaries g = group_summaries(pairs);
  CHECK(g.before_samples == std::vector<double>{10.0, 0.0});  // O-B
  CHECK(g.within_samples == std::vector<double>{0.0, 5.0});   // B-I, I-I
  CHECK(g.after_samples == std::vector<double>{12.0, 80.0});  // B-O, I-O
  CHECK(g.before.mean == doctest::Approx(5.0));
  CHECK(g.within.mean == doctest::Approx(2.5));
  CHECK(g.after.mean == doctest::Approx(46.0));
}

TEST_CASE("groups with fewer than two samples are an error naming the group") {
  // two O-B pairs and two B-O pairs, but no B-I / I-I samples at all
  Utterance u;
  u.id = "x";
  u.tokens = {tok("play", "O", 3.0), tok("stay", "B-song", 4.0),
              tok("by", "O", 3.0), tok("adele", "B-artist", 0.0)};
  try {
    group_summaries(extract_pairs({u, u}));
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("within") != std::string::npos);
  }
}

TEST_CASE("welch t-test matches the frozen reference values") {
  for (const WelchCase& c : kWelchCases) {
    const WelchResult r = welch_t_test(c.a, c.b);
    CHECK(std::abs(r.t - c.t) <= 1e-9 * std::max(1.0, std::abs(c.t)));
    CHECK(std::abs(r.p - c.p) <= 1e-6);
    CHECK(std::abs(r.dof - c.dof) <= 1e-6 * std::max(1.0, std::abs(c.dof)));
  }
}

TEST_CASE("welch t-test degenerate cases") {
  SUBCASE("identical constant samples: t = 0, p = 1") {
    const WelchResult r = welch_t_test({5.0, 5.0, 5.0}, {5.0, 5.0});
    CHECK(r.t == 0.0);
    CHECK(r.p == 1.0);
    CHECK(r.dof == doctest::Approx(3.0));
  }
  SUBCASE("identical samples with variance: t = 0, p = 1") {
    const WelchResult r = welch_t_test({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0});
    CHECK(r.t == 0.0);
    CHECK(r.p == doctest::Approx(1.0));
  }
  SUBCASE("distinct constant samples: infinite t, p = 0") {
    const WelchResult r = welch_t_test({2.0, 2.0}, {1.0, 1.0});
    CHECK(std::isinf(r.t));
    CHECK(r.t > 0);
    CHECK(r.p == 0.0);
    const WelchResult r2 = welch_t_test({1.0, 1.0}, {2.0, 2.0});
    CHECK(r2.t < 0);
  }
  SUBCASE("samples of one are rejected") {
    CHECK_THROWS_AS(welch_t_test({1.0}, {1.0, 2.0}), std::runtime_error);
  }
}

TEST_CASE("histogram bins from zero with clipping and log values") {
  // values: bin0 x3, bin1 x1, bin3 x1 (bin2 interior empty)
  const std::vector<double> xs = {1.0, 5.0, 19.0, 25.0, 65.0};

  SUBCASE("raw counts, no effective clip") {
    const auto bins = histogram(xs, 20.0, 100.0, false);
    REQUIRE(bins.size() == 4);
    CHECK(bins[0].lower == 0.0);
    CHECK(bins[0].value == 3.0);
    CHECK(bins[1].value == 1.0);
    CHECK(bins[2].value == 0.0);  // interior empty bin kept
    CHECK(bins[3].lower == 60.0);
    CHECK(bins[3].value == 1.0);
  }
  SUBCASE("log-normalized values are ln(1 + count)") {
    const auto bins = histogram(xs, 20.0, 100.0, true);
    CHECK(bins[0].value == doctest::Approx(std::log(4.0)));
    CHECK(bins[1].value == doctest::Approx(std::log(2.0)));
    CHECK(bins[2].value == 0.0);
  }
  SUBCASE("outliers above mean + k sd are dropped, trailing bins trimmed") {
    std::vector<double> with_outlier = xs;
    with_outlier.push_back(10000.0);
    const SampleSummary s = summarize(with_outlier);
    REQUIRE(10000.0 > s.mean + 2.0 * s.sd);
    const auto bins = histogram(with_outlier, 20.0, 2.0, false);
    REQUIRE(!bins.empty());
    CHECK(bins.back().lower <= 80.0);  // outlier gone, no huge tail
  }
  SUBCASE("empty input gives no bins") {
    CHECK(histogram({}, 20.0, 3.0, false).empty());
  }
  SUBCASE("bad bin width throws") {
    CHECK_THROWS_AS(histogram(xs, 0.0, 3.0, false), std::runtime_error);
  }
}

TEST_CASE("long-pause frequency is the percentage at or above the threshold") {
  const std::vector<double> xs = {0.0, 10.0, 59.9, 60.0, 100.0};
  CHECK(long_pause_frequency(xs, 60.0) == doctest::Approx(40.0));
  CHECK(long_pause_frequency(xs, 0.0) == doctest::Approx(100.0));
  CHECK(long_pause_frequency({}, 60.0) == 0.0);
}

TEST_CASE("corpus analysis wires pairs, groups and tests together") {
  Corpus corpus;
  for (int i = 0; i < 40; ++i) {
    Utterance u = demo();
    u.id = "u" + std::to_string(i);
    // vary values so group variances are nonzero
    for (Token& t : u.tokens) t.pause_after_ms += static_cast<double>(i % 7);
    u.tokens.push_back(tok("stop", "O", 3.0));
    corpus.push_back(u);
  }
  const AnalysisReport rep = analyze_corpus(corpus);
  CHECK(rep.per_pair.count("O-B") == 1);
  CHECK(rep.per_pair.at("O-B").summary.n == 80);
  CHECK(rep.groups.before.n == 80);
  CHECK(rep.groups.within.n == 80);
  CHECK(rep.groups.after.n == 80);
  CHECK(rep.before_vs_within.p > 0.0);
  CHECK(rep.before_vs_within.p <= 1.0);

  std::ostringstream os;
  write_analysis(os, rep);
  const std::string text = os.str();
  CHECK(text.find("pair\tn\tmean_ms") != std::string::npos);
  CHECK(text.find("before_vs_within") != std::string::npos);
  CHECK(text.find("O-B") != std::string::npos);
}
