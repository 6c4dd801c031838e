#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mslm/corpus.hpp"
#include "mslm/errors.hpp"

namespace mslm {

// parts records the merge that created a composite token. A part id can be -1
// when that constituent was later removed from the dictionary; base symbols
// have no parts at all.
struct Token {
    std::int32_t id = -1;
    std::vector<std::int32_t> symbols;
    std::optional<std::array<std::int32_t, 2>> parts;

    bool is_base() const { return !parts.has_value(); }
};

struct Dictionary {
    Alphabet alphabet;
    std::vector<Token> tokens;
    std::int32_t t_max = 0;

    std::int32_t size() const { return static_cast<std::int32_t>(tokens.size()); }

    std::string render(std::int32_t id) const {
        std::string out;
        for (std::int32_t s : tokens[static_cast<std::size_t>(id)].symbols) {
            out.push_back(alphabet.symbol(s));
        }
        return out;
    }

    // Table-style display: spaces shown as the boundary marker.
    std::string render_display(std::int32_t id) const { return escape_symbol_text(render(id)); }
};

inline Dictionary base_dictionary(const Alphabet& alphabet, std::int32_t t_max) {
    Dictionary dict;
    dict.alphabet = alphabet;
    dict.t_max = t_max;
    dict.tokens.reserve(static_cast<std::size_t>(alphabet.size()));
    for (std::int32_t i = 0; i < alphabet.size(); ++i) {
        dict.tokens.push_back(Token{i, {i}, std::nullopt});
    }
    return dict;
}

// Invariants every dictionary must satisfy: ids are dense and equal to the
// position in the list, the alphabet occupies ids 0..|Sigma|-1 as base tokens,
// symbol sequences are pairwise distinct, and recorded parts concatenate to
// the token they created.
inline void validate(const Dictionary& dict) {
    const std::int32_t k = dict.alphabet.size();
    if (dict.size() < k) throw DataError("dictionary smaller than its alphabet");
    if (dict.size() > dict.t_max) throw DataError("dictionary exceeds its size bound");
    std::map<std::vector<std::int32_t>, std::int32_t> seen;
    for (std::int32_t i = 0; i < dict.size(); ++i) {
        const Token& tok = dict.tokens[static_cast<std::size_t>(i)];
        if (tok.id != i) throw DataError("token ids are not dense");
        if (tok.symbols.empty()) throw DataError("token with empty symbol sequence");
        for (std::int32_t s : tok.symbols) {
            if (s < 0 || s >= k) throw DataError("token symbol outside the alphabet");
        }
        if (i < k) {
            if (!tok.is_base() || tok.symbols.size() != 1 || tok.symbols[0] != i) {
                throw DataError("base token does not match its alphabet slot");
            }
        } else if (!tok.is_base()) {
            for (std::int32_t p : *tok.parts) {
                if (p == -1) continue;  // constituent removed later
                if (p < 0 || p >= i) throw DataError("part reference to a missing token");
            }
            if ((*tok.parts)[0] >= 0 && (*tok.parts)[1] >= 0) {
                std::vector<std::int32_t> cat = dict.tokens[(*tok.parts)[0]].symbols;
                const auto& right = dict.tokens[(*tok.parts)[1]].symbols;
                cat.insert(cat.end(), right.begin(), right.end());
                if (cat != tok.symbols) throw DataError("token parts do not concatenate to it");
            }
        } else {
            throw DataError("composite token without parts record");
        }
        if (!seen.emplace(tok.symbols, i).second) throw DataError("duplicate token");
    }
}

inline void save_dictionary(const Dictionary& dict, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write dictionary file: " + path);
    out << "tmax=" << dict.t_max << " alphabet=" << dict.alphabet.size() << '\n';
    for (const Token& tok : dict.tokens) {
        out << tok.id << '\t' << escape_symbol_text(dict.render(tok.id)) << '\t';
        if (tok.is_base()) {
            out << "- -";
        } else {
            for (int side = 0; side < 2; ++side) {
                if (side) out << ' ';
                std::int32_t p = (*tok.parts)[side];
                if (p < 0)
                    out << '-';
                else
                    out << p;
            }
        }
        out << '\n';
    }
    if (!out) throw DataError("failed writing dictionary file: " + path);
}

inline Dictionary load_dictionary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dictionary file: " + path);
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& why) -> DataError {
        return DataError(path + ":" + std::to_string(lineno) + ": " + why);
    };

    ++lineno;
    if (!std::getline(in, line)) throw fail("missing header");
    std::int32_t t_max = 0, alpha_n = 0;
    if (std::sscanf(line.c_str(), "tmax=%d alphabet=%d", &t_max, &alpha_n) != 2 ||
        t_max <= 0 || alpha_n <= 0) {
        throw fail("malformed header");
    }

    Dictionary dict;
    dict.t_max = t_max;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t tab1 = line.find('\t');
        std::size_t tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos) throw fail("expected three tab-separated fields");
        std::int32_t id;
        try {
            id = std::stoi(line.substr(0, tab1));
        } catch (const std::exception&) {
            throw fail("malformed token id");
        }
        if (id != static_cast<std::int32_t>(dict.tokens.size())) throw fail("token ids out of order");
        std::string symbols = unescape_symbol_text(line.substr(tab1 + 1, tab2 - tab1 - 1));
        if (symbols.empty()) throw fail("empty token");

        std::string parts_field = line.substr(tab2 + 1);
        std::size_t sp = parts_field.find(' ');
        if (sp == std::string::npos) throw fail("expected two part ids");
        auto parse_part = [&](const std::string& f) -> std::int32_t {
            if (f == "-") return -1;
            try {
                return std::stoi(f);
            } catch (const std::exception&) {
                throw fail("malformed part id");
            }
        };
        std::int32_t left = parse_part(parts_field.substr(0, sp));
        std::int32_t right = parse_part(parts_field.substr(sp + 1));

        Token tok;
        tok.id = id;
        if (id < alpha_n) {
            if (symbols.size() != 1) throw fail("base token must be a single symbol");
            if (left != -1 || right != -1) throw fail("base token cannot have parts");
            dict.alphabet.add(symbols[0]);
            tok.symbols = {dict.alphabet.id_of(symbols[0])};
        } else {
            for (char c : symbols) {
                std::int32_t s = dict.alphabet.id_of(c);
                if (s < 0) throw fail("token symbol outside the alphabet");
                tok.symbols.push_back(s);
            }
            tok.parts = std::array<std::int32_t, 2>{left, right};
        }
        dict.tokens.push_back(std::move(tok));
    }
    if (dict.alphabet.size() != alpha_n) throw DataError(path + ": alphabet size mismatch");
    validate(dict);
    return dict;
}

}  // namespace mslm
