#pragma once

#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mslm/errors.hpp"

namespace mslm {

// Line-oriented `key = value` settings file. Blank lines and lines starting
// with '#' are skipped; every diagnostic carries path:line so a bad file can
// be fixed without guessing.
struct ConfigFile {
    struct Entry {
        std::string value;
        std::size_t line = 0;
    };

    std::string path;
    std::map<std::string, Entry> entries;

    bool has(const std::string& key) const { return entries.count(key) > 0; }

    DataError at(std::size_t line, const std::string& why) const {
        return DataError(path + ":" + std::to_string(line) + ": " + why);
    }

    std::optional<std::string> get_string(const std::string& key) const {
        auto it = entries.find(key);
        if (it == entries.end()) return std::nullopt;
        return it->second.value;
    }

    std::optional<std::int64_t> get_i64(const std::string& key) const {
        auto it = entries.find(key);
        if (it == entries.end()) return std::nullopt;
        const std::string& v = it->second.value;
        std::int64_t out = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || ptr != v.data() + v.size()) {
            throw at(it->second.line, "expected an integer for '" + key + "', got '" + v + "'");
        }
        return out;
    }

    std::optional<std::uint64_t> get_u64(const std::string& key) const {
        auto it = entries.find(key);
        if (it == entries.end()) return std::nullopt;
        const std::string& v = it->second.value;
        std::uint64_t out = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || ptr != v.data() + v.size()) {
            throw at(it->second.line,
                     "expected a non-negative integer for '" + key + "', got '" + v + "'");
        }
        return out;
    }

    std::optional<double> get_f64(const std::string& key) const {
        auto it = entries.find(key);
        if (it == entries.end()) return std::nullopt;
        const std::string& v = it->second.value;
        char* end = nullptr;
        const double out = std::strtod(v.c_str(), &end);
        if (v.empty() || end != v.c_str() + v.size()) {
            throw at(it->second.line, "expected a number for '" + key + "', got '" + v + "'");
        }
        return out;
    }

    // Rejects any key outside the documented set, naming the offending line.
    void ensure_known(const std::vector<std::string>& allowed) const {
        for (const auto& [key, entry] : entries) {
            bool ok = false;
            for (const std::string& a : allowed) {
                if (key == a) {
                    ok = true;
                    break;
                }
            }
            if (!ok) throw at(entry.line, "unknown key '" + key + "'");
        }
    }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace detail

inline ConfigFile parse_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open config file: " + path);
    ConfigFile cfg;
    cfg.path = path;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view stripped = detail::trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string_view::npos) {
            throw cfg.at(lineno, "expected 'key = value', got '" + std::string(stripped) + "'");
        }
        const std::string key(detail::trim(stripped.substr(0, eq)));
        const std::string value(detail::trim(stripped.substr(eq + 1)));
        if (key.empty()) throw cfg.at(lineno, "empty key");
        const auto [it, inserted] = cfg.entries.emplace(key, ConfigFile::Entry{value, lineno});
        if (!inserted) {
            throw cfg.at(lineno, "duplicate key '" + key + "' (first set at line " +
                                     std::to_string(it->second.line) + ")");
        }
    }
    return cfg;
}

}  // namespace mslm
