#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <string>
#include <vector>

#include "mslm/corpus.hpp"
#include "mslm/dictcoder.hpp"
#include "mslm/lattice.hpp"
#include "support/lattice_naive.hpp"
#include "support/random_dicts.hpp"

using namespace mslm;
using boost::multiprecision::cpp_int;

namespace {

// "hello " with tokens {h,e,l,o,space,hell,lo,"o "}. Composites carry
// dash-dash lineage (their constituents are not in the dictionary).
struct HelloFixture {
    SymbolSequence seq = make_sequence("hello ", Policy::raw);  // h,e,l,o,' ' = ids 0..4
    Dictionary dict;

    HelloFixture() {
        dict = base_dictionary(seq.alphabet, 8);
        dict.tokens.push_back(Token{5, {0, 1, 2, 2}, {{-1, -1}}});  // hell
        dict.tokens.push_back(Token{6, {2, 3}, {{-1, -1}}});        // lo
        dict.tokens.push_back(Token{7, {3, 4}, {{-1, -1}}});        // "o "
        validate(dict);
    }
};


}  // namespace

TEST_CASE("matcher finds every token ending at a position", "[lattice]") {
    HelloFixture fx;
    TokenMatcher matcher(fx.dict);
    REQUIRE(matcher.l_max() == 4);

    std::vector<std::pair<std::int32_t, std::int32_t>> hits;
    matcher.for_matches(fx.seq.ids.data(), 0, 3, [&](std::int32_t tok, std::int32_t len) {
        hits.emplace_back(tok, len);
    });
    // position of the second l: the single symbol and the four-symbol token
    REQUIRE(hits == std::vector<std::pair<std::int32_t, std::int32_t>>{{2, 1}, {5, 4}});
}

TEST_CASE("matcher on a base-only dictionary returns one token everywhere", "[lattice]") {
    SymbolSequence seq = make_sequence("abcba", Policy::raw);
    Dictionary dict = base_dictionary(seq.alphabet, 3);
    TokenMatcher matcher(dict);
    REQUIRE(matcher.l_max() == 1);
    for (std::size_t t = 0; t < seq.size(); ++t) {
        int count = 0;
        matcher.for_matches(seq.ids.data(), 0, t, [&](std::int32_t tok, std::int32_t) {
            ++count;
            REQUIRE(tok == seq.ids[t]);
        });
        REQUIRE(count == 1);
    }
}

TEST_CASE("hello lattice matches the hand enumeration", "[lattice]") {
    HelloFixture fx;
    TokenMatcher matcher(fx.dict);
    Lattice lat = build_lattice(fx.seq, matcher);

    REQUIRE(lat.n() == 6);
    std::vector<std::vector<std::int32_t>> want{{0}, {1}, {2}, {2, 5}, {3, 6}, {4, 7}};
    for (std::size_t t = 0; t < 6; ++t) {
        std::vector<std::int32_t> got;
        for (const Arc* a = lat.arcs_begin(t); a != lat.arcs_end(t); ++a) {
            got.push_back(a->token);
            REQUIRE(a->start == t + 1 - static_cast<std::size_t>(
                                            matcher.token_length(a->token)));
        }
        REQUIRE(got == want[t]);
    }

    REQUIRE(count_segmentations(lat) == 5);

    ArcStats stats = arc_stats(lat);
    REQUIRE(stats.positions() == 6);
    REQUIRE(stats.arcs() == 9);  // 1+1+1+2+2+2 over the six positions
    REQUIRE(stats.mean() == Catch::Approx(1.5));
    REQUIRE(stats.max_span() == 4);
    std::map<std::size_t, std::size_t> want_hist{{1, 3}, {2, 3}};
    REQUIRE(stats.histogram() == want_hist);
}

TEST_CASE("prefix path counts grow like the hand trace", "[lattice]") {
    HelloFixture fx;
    TokenMatcher matcher(fx.dict);
    std::vector<cpp_int> want{1, 1, 1, 2, 3, 5};
    for (std::size_t len = 1; len <= 6; ++len) {
        Lattice lat = build_lattice(fx.seq.ids, 0, len, matcher);
        REQUIRE(count_segmentations(lat) == want[len - 1]);
    }
}

TEST_CASE("base dictionary gives one segmentation and mean one", "[lattice]") {
    SymbolSequence seq = make_sequence("the quick brown fox", Policy::text8);
    Dictionary dict = base_dictionary(seq.alphabet, 27);
    TokenMatcher matcher(dict);
    Lattice lat = build_lattice(seq, matcher);
    REQUIRE(count_segmentations(lat) == 1);
    ArcStats stats = arc_stats(lat);
    REQUIRE(stats.mean() == 1.0);
    REQUIRE(stats.max_span() == 1);
}

TEST_CASE("run of a with a pair token counts like Fibonacci", "[lattice]") {
    SymbolSequence base = make_sequence("aaaa", Policy::raw);
    Dictionary dict = base_dictionary(base.alphabet, 2);
    dict.tokens.push_back(Token{1, {0, 0}, {{0, 0}}});
    validate(dict);
    TokenMatcher matcher(dict);

    REQUIRE(count_segmentations(build_lattice(base, matcher)) == 5);

    // ways(n) = ways(n-1) + ways(n-2); check far past overflow of any
    // fixed-width integer
    std::vector<std::int32_t> ids(300, 0);
    cpp_int prev = 1, cur = 1;
    for (std::size_t n = 2; n <= ids.size(); ++n) {
        cpp_int next = cur + prev;
        prev = cur;
        cur = next;
    }
    REQUIRE(count_segmentations(build_lattice(ids, 0, ids.size(), matcher)) == cur);
}

TEST_CASE("arcs match exhaustive substring checking on random instances", "[lattice]") {
    std::mt19937 gen(2024);
    for (int round = 0; round < 60; ++round) {
        std::int32_t alpha_n = 2 + static_cast<std::int32_t>(gen() % 3u);
        std::string letters;
        for (std::int32_t i = 0; i < alpha_n; ++i) letters.push_back(static_cast<char>('a' + i));
        SymbolSequence probe = make_sequence(letters, Policy::raw);
        Dictionary dict =
            testsup::random_dictionary(gen, probe.alphabet, alpha_n + 2 + static_cast<std::int32_t>(gen() % 27u));
        TokenMatcher matcher(dict);
        std::size_t n = 1 + gen() % 64u;
        std::vector<std::int32_t> ids = testsup::random_ids(gen, alpha_n, n);

        INFO("round " << round << " alphabet " << alpha_n << " tokens " << dict.size()
                      << " length " << n);
        Lattice lat = build_lattice(ids, 0, n, matcher);
        std::size_t l_max = static_cast<std::size_t>(matcher.l_max());
        REQUIRE(lat.total_arcs() <= n * (n + 1) / 2);
        REQUIRE(lat.total_arcs() <= n * l_max);
        for (std::size_t t = 0; t < n; ++t) {
            auto want = naive::arcs_at(ids, dict, t);
            REQUIRE(lat.arc_count(t) >= 1);
            REQUIRE(lat.arc_count(t) == want.size());
            std::size_t k = 0;
            for (const Arc* a = lat.arcs_begin(t); a != lat.arcs_end(t); ++a, ++k) {
                REQUIRE(a->token == want[k].first);
                REQUIRE(a->start == want[k].second);
            }
        }
    }
}

TEST_CASE("windowed lattices agree with the whole-sequence lattice", "[lattice]") {
    std::mt19937 gen(55);
    SymbolSequence probe = make_sequence("abc", Policy::raw);
    Dictionary dict = testsup::random_dictionary(gen, probe.alphabet, 14);
    TokenMatcher matcher(dict);
    std::vector<std::int32_t> ids = testsup::random_ids(gen, 3, 120);
    Lattice full = build_lattice(ids, 0, ids.size(), matcher);

    for (std::size_t b = 0; b < ids.size(); b += 37) {
        std::size_t e = std::min(ids.size(), b + 37);
        Lattice win = build_lattice(ids, b, e, matcher);
        REQUIRE(win.n() == e - b);
        for (std::size_t t = b; t < e; ++t) {
            REQUIRE(win.arc_count(t) == full.arc_count(t));
            const Arc* wa = win.arcs_begin(t);
            for (const Arc* fa = full.arcs_begin(t); fa != full.arcs_end(t); ++fa, ++wa) {
                REQUIRE(wa->token == fa->token);
                REQUIRE(wa->start == fa->start);  // starts may lie before b
            }
        }
    }
}

TEST_CASE("segmentation counts match recursive enumeration", "[lattice]") {
    std::mt19937 gen(99);
    for (int round = 0; round < 25; ++round) {
        std::int32_t alpha_n = 2 + static_cast<std::int32_t>(gen() % 2u);
        std::string letters;
        for (std::int32_t i = 0; i < alpha_n; ++i) letters.push_back(static_cast<char>('a' + i));
        SymbolSequence probe = make_sequence(letters, Policy::raw);
        Dictionary dict = testsup::random_dictionary(gen, probe.alphabet,
                                            alpha_n + 1 + static_cast<std::int32_t>(gen() % 9u));
        TokenMatcher matcher(dict);
        std::vector<std::int32_t> ids = testsup::random_ids(gen, alpha_n, 2 + gen() % 16u);

        INFO("round " << round);
        cpp_int got = count_segmentations(build_lattice(ids, 0, ids.size(), matcher));
        REQUIRE(got == naive::count_segmentations(ids, dict));
    }
}

TEST_CASE("learned dictionaries drive the lattice end to end", "[lattice]") {
    // bound far beyond what the corpus supports: exercises the learner's
    // divergence guard and still must yield a valid dictionary
    SymbolSequence seq = make_sequence(
        "the cat sat on the mat the cat sat on the mat the cat sat on the mat", Policy::text8);
    Dictionary dict = learn_dictionary(seq, 40, true);
    TokenMatcher matcher(dict);
    Lattice lat = build_lattice(seq, matcher);
    REQUIRE(count_segmentations(lat) >= 1);
    ArcStats stats = arc_stats(lat);
    REQUIRE(stats.mean() >= 1.0);
    REQUIRE(stats.max_span() <= static_cast<std::size_t>(matcher.l_max()));
}

TEST_CASE("lattice rejects bad input", "[lattice]") {
    SymbolSequence seq = make_sequence("ab", Policy::raw);
    Dictionary dict = base_dictionary(seq.alphabet, 2);
    TokenMatcher matcher(dict);
    std::vector<std::int32_t> bad{0, 7};
    REQUIRE_THROWS_AS(build_lattice(bad, 0, bad.size(), matcher), DataError);
    REQUIRE_THROWS_AS(build_lattice(seq.ids, 0, 5, matcher), DataError);
}
