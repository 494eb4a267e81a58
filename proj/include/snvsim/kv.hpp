// kv.hpp - line-oriented key/value config format
//
// Grammar, one construct per line:
//   # comment (also ; comment, full-line or trailing after whitespace)
//   [section]
//   key = value
// Blank lines are ignored.  Keys must appear inside a [section].  Section
// names may repeat (sequence files use repeated [segment] blocks); order is
// preserved.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace snvsim {

inline std::string kv_trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

struct KvEntry {
    std::string key;
    std::string value;
    int line = 0;
};

struct KvSection {
    std::string name;
    int line = 0;
    std::vector<KvEntry> entries;

    const KvEntry* find(std::string_view key) const {
        for (const auto& e : entries)
            if (e.key == key) return &e;
        return nullptr;
    }
    bool has(std::string_view key) const { return find(key) != nullptr; }
};

struct KvDocument {
    std::string origin = "<string>";
    std::vector<KvSection> sections;

    static KvDocument parse(std::string_view text, std::string_view origin = "<string>") {
        KvDocument doc;
        doc.origin = std::string(origin);
        int lineno = 0;
        size_t pos = 0;
        while (pos <= text.size()) {
            size_t nl = text.find('\n', pos);
            std::string_view raw = (nl == std::string_view::npos)
                                       ? text.substr(pos)
                                       : text.substr(pos, nl - pos);
            pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
            ++lineno;
            for (size_t i = 0; i < raw.size(); ++i) {
                if ((raw[i] == '#' || raw[i] == ';') &&
                    (i == 0 || std::isspace(static_cast<unsigned char>(raw[i - 1])))) {
                    raw = raw.substr(0, i);
                    break;
                }
            }
            std::string line = kv_trim(raw);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ParseError(doc.origin, lineno, "unterminated section header");
                std::string name = kv_trim(std::string_view(line).substr(1, line.size() - 2));
                if (name.empty())
                    throw ParseError(doc.origin, lineno, "empty section name");
                doc.sections.push_back(KvSection{name, lineno, {}});
                continue;
            }
            size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ParseError(doc.origin, lineno, "expected 'key = value', got '" + line + "'");
            std::string key = kv_trim(std::string_view(line).substr(0, eq));
            std::string value = kv_trim(std::string_view(line).substr(eq + 1));
            if (key.empty())
                throw ParseError(doc.origin, lineno, "empty key");
            if (doc.sections.empty())
                throw ParseError(doc.origin, lineno,
                                 "key '" + key + "' before any [section] header");
            doc.sections.back().entries.push_back(KvEntry{key, value, lineno});
        }
        return doc;
    }

    static KvDocument load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open file: " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path);
    }

    std::vector<const KvSection*> find_all(std::string_view name) const {
        std::vector<const KvSection*> out;
        for (const auto& s : sections)
            if (s.name == name) out.push_back(&s);
        return out;
    }

    const KvSection* find(std::string_view name) const {
        for (const auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }
};

inline double kv_double(const KvEntry& e, const std::string& origin) {
    const char* begin = e.value.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0')
        throw ParseError(origin, e.line, "key '" + e.key + "': not a number: '" + e.value + "'");
    return v;
}

inline long long kv_int(const KvEntry& e, const std::string& origin) {
    const char* begin = e.value.c_str();
    char* end = nullptr;
    long long v = std::strtoll(begin, &end, 10);
    if (end == begin || *end != '\0')
        throw ParseError(origin, e.line, "key '" + e.key + "': not an integer: '" + e.value + "'");
    return v;
}

inline bool kv_bool(const KvEntry& e, const std::string& origin) {
    if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
    if (e.value == "false" || e.value == "0" || e.value == "no") return false;
    throw ParseError(origin, e.line, "key '" + e.key + "': not a boolean: '" + e.value + "'");
}

// Every loader names its full key set; anything else is a typo, not a hint.
inline void kv_require_known(const KvSection& sec, const std::vector<std::string>& allowed,
                             const std::string& origin) {
    for (const auto& e : sec.entries) {
        if (std::find(allowed.begin(), allowed.end(), e.key) == allowed.end())
            throw ParseError(origin, e.line,
                             "unknown key '" + e.key + "' in section [" + sec.name + "]");
    }
}

inline const KvEntry& kv_require(const KvSection& sec, std::string_view key,
                                 const std::string& origin) {
    const KvEntry* e = sec.find(key);
    if (!e)
        throw ParseError(origin, sec.line,
                         "missing required key '" + std::string(key) + "' in section [" +
                             sec.name + "]");
    return *e;
}

}  // namespace snvsim
