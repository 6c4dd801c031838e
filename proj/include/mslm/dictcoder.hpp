#pragma once

#include <cassert>
#include <cstdint>
#include <map>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mslm/corpus.hpp"
#include "mslm/dheap.hpp"
#include "mslm/dictionary.hpp"
#include "mslm/errors.hpp"

namespace mslm {

namespace detail {

inline std::uint64_t pack_pair(std::int32_t a, std::int32_t b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

struct PairEntry {
    std::int64_t count;
    std::int32_t left, right;
};

// Max-heap order: higher count first, ties to the lexicographically smaller
// (left id, right id). This is the argmax tie-break, baked into the heap.
struct PairAbove {
    bool operator()(const PairEntry& a, const PairEntry& b) const {
        if (a.count != b.count) return a.count > b.count;
        if (a.left != b.left) return a.left < b.left;
        return a.right < b.right;
    }
};

struct TokenEntry {
    std::int64_t count;
    std::int32_t id;
};

// Min-heap order: removal candidates surface in ascending (count, id).
struct TokenBelow {
    bool operator()(const TokenEntry& a, const TokenEntry& b) const {
        if (a.count != b.count) return a.count < b.count;
        return a.id < b.id;
    }
};

}  // namespace detail

struct PairMax {
    std::int32_t left, right;
    std::int64_t count;
};

// Working state of dictionary learning. The segmentation is the base symbol
// sequence plus a bit array: bit i set means position i is merged with
// position i+1, so maximal runs of set bits (with their terminator) span
// exactly one current token. Frequency tables hold adjacency counts over the
// current segmentation; for two distinct tokens that is exactly the number of
// non-overlapping occurrences, which is also the number of merges a
// substitution performs.
class MergeState {
public:
    struct Entry {
        std::vector<std::int32_t> symbols;
        std::int32_t left = -1, right = -1;  // creation-time parts, -1 for base
        bool alive = true;
        std::int64_t count = 0;
    };

    explicit MergeState(const SymbolSequence& seq)
        : seq_(seq.ids), alphabet_size_(seq.alphabet.size()) {
        const std::size_t n = seq_.size();
        bits_.assign((n + 63) / 64, 0);
        span_token_.assign(n, -1);
        entries_.reserve(static_cast<std::size_t>(alphabet_size_) + 64);
        for (std::int32_t s = 0; s < alphabet_size_; ++s) {
            entries_.push_back(Entry{{s}, -1, -1, true, 0});
            index_[{s}] = s;
        }
        live_count_ = alphabet_size_;
        span_count_ = static_cast<std::int64_t>(n);
        // Bulk build of the tables, then one heap entry per eligible pair:
        // pushing on every unit increment would make the initial heap as
        // large as the corpus.
        for (std::size_t i = 0; i < n; ++i) {
            std::int32_t t = seq_[i];
            span_token_[i] = t;
            ++entries_[t].count;
            if (i + 1 < n) ++pair_counts_[detail::pack_pair(t, seq_[i + 1])];
        }
        seed_pair_heap();
    }

    const std::vector<std::int32_t>& seq() const { return seq_; }
    const std::vector<std::uint64_t>& merged_bits() const { return bits_; }
    bool merged_with_next(std::size_t i) const { return (bits_[i >> 6] >> (i & 63)) & 1; }

    std::int32_t alphabet_size() const { return alphabet_size_; }
    std::int32_t live_tokens() const { return live_count_; }
    std::int64_t span_count() const { return span_count_; }
    const std::vector<Entry>& entries() const { return entries_; }

    std::int64_t token_count(std::int32_t id) const { return entries_[id].count; }
    std::int64_t pair_count(std::int32_t a, std::int32_t b) const {
        auto it = pair_counts_.find(detail::pack_pair(a, b));
        return it == pair_counts_.end() ? 0 : it->second;
    }

    // Token id whose span starts at position i, or -1 inside a span.
    std::int32_t span_at(std::size_t i) const { return span_token_[i]; }
    std::size_t span_length(std::int32_t id) const { return entries_[id].symbols.size(); }

    // Most frequent adjacent pair of two distinct tokens that has never been
    // merged, or nothing when no such pair occurs at least twice (the
    // learner's termination signal). A merge consumes its pair for good:
    // occurrences re-exposed by later merge reversals stay as parts, which is
    // what lets learning keep descending once reversals start re-splitting
    // tokens instead of recycling the same merges forever.
    // Lazy heap: a fresh entry is pushed whenever a count rises through a
    // value >= 2, so an exact entry always exists for any eligible pair;
    // popped entries that disagree with the table are discarded and, if the
    // pair is still eligible, reinserted with the corrected count.
    std::optional<PairMax> pair_argmax() {
        while (!pair_heap_.empty()) {
            detail::PairEntry top = pair_heap_.top();
            std::int64_t cur = eligible_pair_count(top.left, top.right);
            if (cur == top.count) return PairMax{top.left, top.right, top.count};
            pair_heap_.pop();
            if (cur >= 2) pair_heap_.push(detail::PairEntry{cur, top.left, top.right});
        }
        return std::nullopt;
    }

    // Marks a pair as consumed by its merge; retired pairs never win
    // pair_argmax again.
    void retire_pair(std::int32_t left, std::int32_t right) {
        retired_.insert(detail::pack_pair(left, right));
    }

    // Existing live token for the concatenation, or a fresh entry recording
    // the merge. Re-creating a previously removed sequence makes a new id:
    // creation order is what argmax ties are broken on, so ids never move.
    std::pair<std::int32_t, bool> find_or_create(std::int32_t left, std::int32_t right) {
        std::vector<std::int32_t> symbols = entries_[left].symbols;
        const auto& rs = entries_[right].symbols;
        symbols.insert(symbols.end(), rs.begin(), rs.end());
        auto it = index_.find(symbols);
        if (it != index_.end()) return {it->second, false};
        std::int32_t id = static_cast<std::int32_t>(entries_.size());
        entries_.push_back(Entry{std::move(symbols), left, right, true, 0});
        index_[entries_.back().symbols] = id;
        ++live_count_;
        return {id, true};
    }

    // Merge every occurrence of (left, right) into target, scanning left to
    // right; a merged site is skipped over, so occurrences never overlap.
    // Returns the number of merges performed.
    std::int64_t substitute(std::int32_t left, std::int32_t right, std::int32_t target) {
        const std::size_t n = seq_.size();
        std::int64_t merges = 0;
        std::int32_t prev = -1;
        std::size_t i = 0;
        while (i < n) {
            std::int32_t t = span_token_[i];
            std::size_t len = span_length(t);
            std::size_t j = i + len;
            if (t == left && j < n && span_token_[j] == right) {
                std::size_t end = j + span_length(right);
                std::int32_t after = end < n ? span_token_[end] : -1;
                bump_pair(prev, left, -1);
                bump_pair(left, right, -1);
                bump_pair(right, after, -1);
                bump_token(left, -1);
                bump_token(right, -1);
                set_bit(j - 1);
                span_token_[i] = target;
                span_token_[j] = -1;
                bump_token(target, +1);
                bump_pair(prev, target, +1);
                bump_pair(target, after, +1);
                --span_count_;
                ++merges;
                prev = target;
                i = end;
            } else {
                prev = t;
                i = j;
            }
        }
        return merges;
    }

    // Merge reversal: every occurrence of the token is re-split into parts,
    // recursively through parts that are themselves no longer alive, so the
    // emitted cover consists of live tokens only. The entry stays in the
    // registry (dead) because later reversals may need its lineage.
    void remove_token(std::int32_t id) {
        assert(id >= alphabet_size_ && entries_[id].alive);
        std::vector<std::int32_t> cover;
        expand_live(id, cover);
        if (entries_[id].count > 0) {
            const std::size_t n = seq_.size();
            std::int32_t prev = -1;
            std::size_t i = 0;
            while (i < n) {
                std::int32_t t = span_token_[i];
                std::size_t len = span_length(t);
                if (t != id) {
                    prev = t;
                    i += len;
                    continue;
                }
                std::size_t end = i + len;
                std::int32_t after = end < n ? span_token_[end] : -1;
                bump_pair(prev, id, -1);
                bump_pair(id, after, -1);
                bump_token(id, -1);
                std::size_t pos = i;
                std::int32_t last = prev;
                for (std::int32_t part : cover) {
                    if (pos > i) clear_bit(pos - 1);
                    span_token_[pos] = part;
                    bump_token(part, +1);
                    bump_pair(last, part, +1);
                    last = part;
                    pos += span_length(part);
                }
                assert(pos == end);
                bump_pair(last, after, +1);
                span_count_ += static_cast<std::int64_t>(cover.size()) - 1;
                prev = last;
                i = end;
            }
        }
        assert(entries_[id].count == 0);
        entries_[id].alive = false;
        --live_count_;
        index_.erase(entries_[id].symbols);
    }

    // Cheapest live composite below the threshold count, ascending (count,
    // id); same lazy-entry discipline as the pair heap.
    std::optional<std::int32_t> removal_candidate(std::int64_t threshold) {
        while (!token_heap_.empty()) {
            detail::TokenEntry top = token_heap_.top();
            const Entry& e = entries_[top.id];
            if (!e.alive || e.count != top.count) {
                token_heap_.pop();
                if (e.alive) token_heap_.push(detail::TokenEntry{e.count, top.id});
                continue;
            }
            if (top.count >= threshold) return std::nullopt;
            return top.id;
        }
        return std::nullopt;
    }

    // Full-rescan views of the frequency tables, for the incremental-update
    // equality checks.
    std::map<std::pair<std::int32_t, std::int32_t>, std::int64_t> rescan_pairs() const {
        std::map<std::pair<std::int32_t, std::int32_t>, std::int64_t> out;
        const std::size_t n = seq_.size();
        std::size_t i = 0;
        std::int32_t prev = -1;
        while (i < n) {
            std::int32_t t = span_token_[i];
            if (prev >= 0) ++out[{prev, t}];
            prev = t;
            i += span_length(t);
        }
        return out;
    }

    std::vector<std::int64_t> rescan_tokens() const {
        std::vector<std::int64_t> out(entries_.size(), 0);
        const std::size_t n = seq_.size();
        for (std::size_t i = 0; i < n; i += span_length(span_token_[i])) {
            ++out[span_token_[i]];
        }
        return out;
    }

    std::map<std::pair<std::int32_t, std::int32_t>, std::int64_t> stored_pairs() const {
        std::map<std::pair<std::int32_t, std::int32_t>, std::int64_t> out;
        for (const auto& [key, count] : pair_counts_) {
            if (count != 0) {
                out[{static_cast<std::int32_t>(key >> 32),
                     static_cast<std::int32_t>(key & 0xffffffffu)}] = count;
            }
        }
        return out;
    }

    // Stale lazy entries accumulate one per count change; rebuilding from the
    // tables once they dominate keeps heap memory proportional to the number
    // of distinct pairs and live tokens. Heap content is a pure function of
    // the tables, so this never changes what argmax or the removal scan see.
    void maybe_compact_heaps() {
        if (pair_heap_.size() > 2 * pair_counts_.size() + 1024) {
            std::erase_if(pair_counts_, [](const auto& kv) { return kv.second == 0; });
            seed_pair_heap();
        }
        if (token_heap_.size() > 2 * entries_.size() + 1024) {
            token_heap_.clear();
            for (std::size_t id = static_cast<std::size_t>(alphabet_size_);
                 id < entries_.size(); ++id) {
                if (entries_[id].alive) {
                    token_heap_.push(detail::TokenEntry{entries_[id].count,
                                                        static_cast<std::int32_t>(id)});
                }
            }
        }
    }

private:
    void seed_pair_heap() {
        pair_heap_.clear();
        for (const auto& [key, count] : pair_counts_) {
            std::int32_t a = static_cast<std::int32_t>(key >> 32);
            std::int32_t b = static_cast<std::int32_t>(key & 0xffffffffu);
            if (count >= 2 && a != b && entries_[a].alive && entries_[b].alive) {
                pair_heap_.push(detail::PairEntry{count, a, b});
            }
        }
    }

    void set_bit(std::size_t i) { bits_[i >> 6] |= 1ull << (i & 63); }
    void clear_bit(std::size_t i) { bits_[i >> 6] &= ~(1ull << (i & 63)); }

    std::int64_t eligible_pair_count(std::int32_t a, std::int32_t b) const {
        if (!entries_[a].alive || !entries_[b].alive) return 0;
        if (retired_.count(detail::pack_pair(a, b))) return 0;
        return pair_count(a, b);
    }

    void bump_pair(std::int32_t a, std::int32_t b, std::int64_t delta) {
        if (a < 0 || b < 0) return;
        std::int64_t& c = pair_counts_[detail::pack_pair(a, b)];
        c += delta;
        assert(c >= 0);
        // Self-pairs and retired pairs are tracked (the tables must match a
        // rescan) but never pushed: a token adjacent to itself is not a merge
        // candidate, and a merged pair is consumed.
        if (delta > 0 && c >= 2 && a != b &&
            !retired_.count(detail::pack_pair(a, b))) {
            pair_heap_.push(detail::PairEntry{c, a, b});
        }
    }

    void bump_token(std::int32_t id, std::int64_t delta) {
        Entry& e = entries_[id];
        e.count += delta;
        assert(e.count >= 0);
        if (id >= alphabet_size_ && e.alive) {
            token_heap_.push(detail::TokenEntry{e.count, id});
        }
    }

    void expand_live(std::int32_t id, std::vector<std::int32_t>& out) const {
        const Entry& e = entries_[id];
        for (std::int32_t part : {e.left, e.right}) {
            if (entries_[part].alive) {
                out.push_back(part);
            } else {
                expand_live(part, out);
            }
        }
    }

    std::vector<std::int32_t> seq_;
    std::int32_t alphabet_size_;
    std::vector<std::uint64_t> bits_;
    std::vector<std::int32_t> span_token_;
    std::vector<Entry> entries_;
    std::map<std::vector<std::int32_t>, std::int32_t> index_;  // live symbol seq -> id
    std::unordered_map<std::uint64_t, std::int64_t> pair_counts_;
    std::unordered_set<std::uint64_t> retired_;
    DaryHeap<detail::PairEntry, detail::PairAbove, 4> pair_heap_;
    DaryHeap<detail::TokenEntry, detail::TokenBelow, 4> token_heap_;
    std::int32_t live_count_ = 0;
    std::int64_t span_count_ = 0;
};

struct LearnReport {
    std::vector<std::int64_t> counts;  // per final token id, final segmentation
    std::int64_t spans = 0;
    std::int64_t symbols = 0;
};

// One learning iteration, in this order: pick the argmax pair, add the merged
// token, stop if the bound is reached (the just-added token is then never
// substituted), substitute occurrences, then reverse the merges of every
// composite token rarer than the new one, cheapest first, re-evaluating
// after each removal (expansion can raise other counts, including the
// threshold token's own).
inline Dictionary learn_dictionary(const SymbolSequence& seq, std::int32_t t_max,
                                   bool removal, LearnReport* report = nullptr) {
    if (seq.size() < 2) throw DataError("dictionary learning needs at least 2 symbols");
    if (t_max < seq.alphabet.size()) {
        throw DataError("token bound smaller than the alphabet");
    }
    MergeState state(seq);
    // Each iteration consumes one pair for good, so runs end close to the
    // creation count; the cap is a deterministic backstop far above the
    // churn of any observed run, in case reversal cascades on some corpus
    // keep minting fresh pairs longer than expected.
    std::int64_t iterations_left = 64 + 16ll * static_cast<std::int64_t>(t_max);
    while (state.live_tokens() < t_max && iterations_left-- > 0) {
        std::optional<PairMax> best = state.pair_argmax();
        if (!best) break;
        state.retire_pair(best->left, best->right);
        auto [target, created] = state.find_or_create(best->left, best->right);
        if (created && state.live_tokens() == t_max) break;
        std::int64_t merges = state.substitute(best->left, best->right, target);
        assert(merges == best->count);
        (void)merges;
        if (removal) {
            for (;;) {
                std::optional<std::int32_t> victim =
                    state.removal_candidate(state.token_count(target));
                if (!victim) break;
                state.remove_token(*victim);
            }
        }
        state.maybe_compact_heaps();
    }

    // Compact live entries into dense ids, preserving creation order. Parts
    // that did not survive serialize as absent.
    const auto& entries = state.entries();
    std::vector<std::int32_t> remap(entries.size(), -1);
    Dictionary dict;
    dict.alphabet = seq.alphabet;
    dict.t_max = t_max;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!entries[i].alive) continue;
        std::int32_t id = dict.size();
        remap[i] = id;
        Token tok;
        tok.id = id;
        tok.symbols = entries[i].symbols;
        if (entries[i].left >= 0) {
            tok.parts = std::array<std::int32_t, 2>{remap[entries[i].left],
                                                    remap[entries[i].right]};
        }
        dict.tokens.push_back(std::move(tok));
    }
    validate(dict);
    if (report) {
        report->counts.assign(dict.tokens.size(), 0);
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (remap[i] >= 0) report->counts[remap[i]] = entries[i].count;
        }
        report->spans = state.span_count();
        report->symbols = static_cast<std::int64_t>(seq.size());
    }
    return dict;
}

}  // namespace mslm
