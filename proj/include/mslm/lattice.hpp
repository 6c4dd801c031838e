#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "mslm/dictionary.hpp"
#include "mslm/errors.hpp"

namespace mslm {

// Trie over reversed token symbol sequences. Walking backward from a symbol
// position enumerates every dictionary token ending there in one descent, so
// a position costs O(matches + longest token) instead of O(|tokens|).
class TokenMatcher {
public:
    explicit TokenMatcher(const Dictionary& dict) : alphabet_size_(dict.alphabet.size()) {
        terminal_.push_back(-1);
        children_.resize(static_cast<std::size_t>(alphabet_size_), -1);
        for (const Token& tok : dict.tokens) {
            std::int32_t node = 0;
            for (auto it = tok.symbols.rbegin(); it != tok.symbols.rend(); ++it) {
                node = child_or_create(node, *it);
            }
            terminal_[static_cast<std::size_t>(node)] = tok.id;  // tokens are distinct, so nodes are
            l_max_ = std::max(l_max_, static_cast<std::int32_t>(tok.symbols.size()));
            lengths_.resize(std::max(lengths_.size(), static_cast<std::size_t>(tok.id) + 1));
            lengths_[static_cast<std::size_t>(tok.id)] =
                static_cast<std::int32_t>(tok.symbols.size());
        }
    }

    std::int32_t l_max() const { return l_max_; }
    std::int32_t alphabet_size() const { return alphabet_size_; }
    std::int32_t token_length(std::int32_t id) const {
        return lengths_[static_cast<std::size_t>(id)];
    }

    // Calls fn(token_id, length) for every token whose symbols equal
    // ids[t-length+1 .. t], shortest first. floor bounds how far back the
    // walk may read (the first readable index).
    template <class F>
    void for_matches(const std::int32_t* ids, std::size_t floor, std::size_t t, F&& fn) const {
        std::int32_t node = 0;
        for (std::size_t back = 0;; ++back) {
            std::size_t pos = t - back;
            std::int32_t sym = ids[pos];
            if (sym < 0 || sym >= alphabet_size_) {
                throw DataError("symbol id outside the dictionary alphabet");
            }
            node = children_[static_cast<std::size_t>(node) *
                                 static_cast<std::size_t>(alphabet_size_) +
                             static_cast<std::size_t>(sym)];
            if (node < 0) return;
            std::int32_t tok = terminal_[static_cast<std::size_t>(node)];
            if (tok >= 0) fn(tok, static_cast<std::int32_t>(back + 1));
            if (pos == floor) return;
        }
    }

private:
    std::int32_t child_or_create(std::int32_t node, std::int32_t sym) {
        std::size_t slot = static_cast<std::size_t>(node) *
                               static_cast<std::size_t>(alphabet_size_) +
                           static_cast<std::size_t>(sym);
        if (children_[slot] < 0) {
            std::int32_t fresh = static_cast<std::int32_t>(terminal_.size());
            terminal_.push_back(-1);
            children_.resize(children_.size() + static_cast<std::size_t>(alphabet_size_), -1);
            children_[slot] = fresh;
        }
        return children_[slot];
    }

    std::int32_t alphabet_size_;
    std::int32_t l_max_ = 0;
    std::vector<std::int32_t> children_;  // node-major, one slot per symbol
    std::vector<std::int32_t> terminal_;  // token ending at this node, or -1
    std::vector<std::int32_t> lengths_;
};

// One token occurrence: it covers symbols [start, end state). States count
// consumed symbols, so the arc runs from state `start` to the end state it
// is grouped under.
struct Arc {
    std::int32_t token;
    std::size_t start;
};

// Incoming arcs grouped by end position for a window [begin, end) of a
// symbol sequence. Arcs may start before `begin` (tokens crossing the left
// edge of a window); each group is sorted by token id.
class Lattice {
public:
    std::size_t begin = 0, end = 0;
    std::vector<std::size_t> offsets;  // size n()+1
    std::vector<Arc> arcs;

    std::size_t n() const { return end - begin; }
    std::size_t total_arcs() const { return arcs.size(); }

    // Arcs of tokens ending at symbol position t (global index in [begin, end)).
    const Arc* arcs_begin(std::size_t t) const { return arcs.data() + offsets[t - begin]; }
    const Arc* arcs_end(std::size_t t) const { return arcs.data() + offsets[t - begin + 1]; }
    std::size_t arc_count(std::size_t t) const {
        return offsets[t - begin + 1] - offsets[t - begin];
    }
};

// Arcs for end positions [begin, end) of ids; the backward walk may read any
// symbol from index 0 on, which is what lets consecutive windows tile a long
// corpus without losing edge-crossing tokens.
inline Lattice build_lattice(const std::vector<std::int32_t>& ids, std::size_t begin,
                             std::size_t end, const TokenMatcher& matcher) {
    if (end > ids.size() || begin > end) throw DataError("lattice window out of range");
    Lattice lat;
    lat.begin = begin;
    lat.end = end;
    lat.offsets.reserve(end - begin + 1);
    lat.offsets.push_back(0);
    for (std::size_t t = begin; t < end; ++t) {
        std::size_t first = lat.arcs.size();
        matcher.for_matches(ids.data(), 0, t, [&](std::int32_t tok, std::int32_t len) {
            lat.arcs.push_back(Arc{tok, t + 1 - static_cast<std::size_t>(len)});
        });
        if (lat.arcs.size() == first) {
            throw DataError("no dictionary token ends at position " + std::to_string(t));
        }
        std::sort(lat.arcs.begin() + static_cast<std::ptrdiff_t>(first), lat.arcs.end(),
                  [](const Arc& a, const Arc& b) { return a.token < b.token; });
        lat.offsets.push_back(lat.arcs.size());
    }
    return lat;
}

inline Lattice build_lattice(const SymbolSequence& seq, const TokenMatcher& matcher) {
    return build_lattice(seq.ids, 0, seq.ids.size(), matcher);
}

// Number of distinct segmentations of the whole sequence: ways(0) = 1,
// ways(t) = sum over arcs ending at t of ways(arc start). Exact at any size.
inline boost::multiprecision::cpp_int count_segmentations(const Lattice& lat) {
    if (lat.begin != 0) throw DataError("segmentation count needs a whole-sequence lattice");
    std::vector<boost::multiprecision::cpp_int> ways(lat.n() + 1);
    ways[0] = 1;
    for (std::size_t t = 0; t < lat.n(); ++t) {
        boost::multiprecision::cpp_int acc = 0;
        for (const Arc* a = lat.arcs_begin(t); a != lat.arcs_end(t); ++a) {
            acc += ways[a->start];
        }
        ways[t + 1] = acc;
    }
    return ways[lat.n()];
}

// Arc statistics accumulator; add() merges one lattice window so a long
// corpus can be streamed window by window.
class ArcStats {
public:
    void add(const Lattice& lat) {
        positions_ += lat.n();
        arcs_ += lat.total_arcs();
        for (std::size_t t = lat.begin; t < lat.end; ++t) {
            ++histogram_[lat.arc_count(t)];
            for (const Arc* a = lat.arcs_begin(t); a != lat.arcs_end(t); ++a) {
                max_span_ = std::max(max_span_, t + 1 - a->start);
            }
        }
    }

    std::size_t positions() const { return positions_; }
    std::size_t arcs() const { return arcs_; }
    std::size_t max_span() const { return max_span_; }
    const std::map<std::size_t, std::size_t>& histogram() const { return histogram_; }
    double mean() const {
        return positions_ == 0 ? 0.0
                               : static_cast<double>(arcs_) / static_cast<double>(positions_);
    }

private:
    std::size_t positions_ = 0;
    std::size_t arcs_ = 0;
    std::size_t max_span_ = 0;
    std::map<std::size_t, std::size_t> histogram_;  // arc count -> positions
};

inline ArcStats arc_stats(const Lattice& lat) {
    ArcStats stats;
    stats.add(lat);
    return stats;
}

}  // namespace mslm
