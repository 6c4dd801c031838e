#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mslm/errors.hpp"

namespace mslm {

// Symbols are single bytes. A dense id per distinct byte keeps sequences,
// dictionary entries and embedding rows aligned on the same index space.
class Alphabet {
public:
    Alphabet() { index_.fill(-1); }

    static Alphabet text8() {
        Alphabet a;
        for (char c = 'a'; c <= 'z'; ++c) a.add(c);
        a.add(' ');
        return a;
    }

    std::int32_t add(char symbol) {
        unsigned char u = static_cast<unsigned char>(symbol);
        if (index_[u] >= 0) return index_[u];
        index_[u] = static_cast<std::int32_t>(symbols_.size());
        symbols_.push_back(symbol);
        return index_[u];
    }

    std::int32_t id_of(char symbol) const { return index_[static_cast<unsigned char>(symbol)]; }
    char symbol(std::int32_t id) const { return symbols_[static_cast<std::size_t>(id)]; }
    std::int32_t size() const { return static_cast<std::int32_t>(symbols_.size()); }

    bool operator==(const Alphabet& other) const { return symbols_ == other.symbols_; }

private:
    std::vector<char> symbols_;
    std::array<std::int32_t, 256> index_;
};

struct SymbolSequence {
    Alphabet alphabet;
    std::vector<std::int32_t> ids;

    std::size_t size() const { return ids.size(); }

    std::string to_bytes() const {
        std::string out;
        out.reserve(ids.size());
        for (std::int32_t id : ids) out.push_back(alphabet.symbol(id));
        return out;
    }
};

enum class Policy { raw, text8 };

inline Policy parse_policy(std::string_view name) {
    if (name == "raw") return Policy::raw;
    if (name == "text8") return Policy::text8;
    throw DataError("unknown normalization policy: " + std::string(name));
}

// raw: every byte is a symbol, ids assigned in first-occurrence order.
// text8: fixed alphabet a-z plus space; anything else is rejected with the
// byte offset of the first offender.
inline SymbolSequence make_sequence(std::string_view bytes, Policy policy) {
    SymbolSequence seq;
    seq.ids.reserve(bytes.size());
    if (policy == Policy::text8) {
        seq.alphabet = Alphabet::text8();
        for (std::size_t i = 0; i < bytes.size(); ++i) {
            char c = bytes[i];
            std::int32_t id = seq.alphabet.id_of(c);
            if (id < 0) {
                throw DataError("text8 policy: invalid character at byte offset " +
                                std::to_string(i));
            }
            seq.ids.push_back(id);
        }
    } else {
        for (char c : bytes) seq.ids.push_back(seq.alphabet.add(c));
    }
    return seq;
}

inline SymbolSequence load_corpus(const std::string& path, Policy policy) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return make_sequence(buf.str(), policy);
}

struct SplitRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

// Boundary positions are floor(n * cumulative fraction), so the three ranges
// always partition [0, n) exactly.
inline std::array<SplitRange, 3> split(const SymbolSequence& seq,
                                       const std::array<double, 3>& fractions) {
    double sum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw DataError("split fractions must be non-negative");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DataError("split fractions must sum to 1");
    const double n = static_cast<double>(seq.size());
    std::size_t b1 = static_cast<std::size_t>(std::floor(n * fractions[0]));
    std::size_t b2 = static_cast<std::size_t>(std::floor(n * (fractions[0] + fractions[1])));
    return {SplitRange{0, b1}, SplitRange{b1, b2}, SplitRange{b2, seq.size()}};
}

// Rendering used by the alphabet and dictionary files and by reports:
// space prints as the middle-dot marker, and tab / newline / backslash /
// a literal middle dot are backslash-escaped so lines stay parseable.
inline const std::string kBoundaryMarker = "\xc2\xb7";

inline std::string escape_symbol_text(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        char c = raw[i];
        if (c == ' ') {
            out += kBoundaryMarker;
        } else if (c == '\\') {
            out += "\\\\";
        } else if (c == '\t') {
            out += "\\t";
        } else if (c == '\n') {
            out += "\\n";
        } else if (c == '\xc2' && i + 1 < raw.size() && raw[i + 1] == '\xb7') {
            out += "\\";
            out += kBoundaryMarker;
            ++i;
        } else {
            out.push_back(c);
        }
    }
    return out;
}

inline std::string unescape_symbol_text(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c == '\\') {
            if (i + 1 >= text.size()) throw DataError("dangling escape in symbol text");
            char e = text[++i];
            if (e == '\\') {
                out.push_back('\\');
            } else if (e == 't') {
                out.push_back('\t');
            } else if (e == 'n') {
                out.push_back('\n');
            } else if (e == '\xc2' && i + 1 < text.size() && text[i + 1] == '\xb7') {
                out += kBoundaryMarker;
                ++i;
            } else {
                throw DataError("unknown escape in symbol text");
            }
        } else if (c == '\xc2' && i + 1 < text.size() && text[i + 1] == '\xb7') {
            out.push_back(' ');
            ++i;
        } else {
            out.push_back(c);
        }
    }
    return out;
}

inline void save_alphabet(const Alphabet& alphabet, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write alphabet file: " + path);
    for (std::int32_t i = 0; i < alphabet.size(); ++i) {
        char c = alphabet.symbol(i);
        out << escape_symbol_text(std::string_view(&c, 1)) << '\n';
    }
    if (!out) throw DataError("failed writing alphabet file: " + path);
}

inline Alphabet load_alphabet(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open alphabet file: " + path);
    Alphabet alphabet;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string raw = unescape_symbol_text(line);
        if (raw.size() != 1) {
            throw DataError("alphabet file line " + std::to_string(lineno) +
                            ": expected one symbol");
        }
        if (alphabet.id_of(raw[0]) >= 0) {
            throw DataError("alphabet file line " + std::to_string(lineno) +
                            ": duplicate symbol");
        }
        alphabet.add(raw[0]);
    }
    return alphabet;
}

}  // namespace mslm
