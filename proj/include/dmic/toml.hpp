#pragma once

// Small TOML-subset reader/writer: [sections], key = value with strings,
// integers, floats, booleans, and flat arrays. Enough for run configs.

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "dmic/common.hpp"

namespace dmic::toml {

using Value = std::variant<std::string, long long, double, bool,
                           std::vector<double>, std::vector<std::string>>;

struct Table {
    std::map<std::string, Value> kv;  // flattened "section.key"

    bool has(const std::string& k) const { return kv.count(k) > 0; }

    template <typename T>
    T get(const std::string& k, const T& def) const {
        auto it = kv.find(k);
        if (it == kv.end()) return def;
        if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
            if (auto* i = std::get_if<long long>(&it->second))
                return static_cast<T>(*i);
            throw ConfigError("config key '" + k + "' must be an integer");
        } else if constexpr (std::is_same_v<T, double>) {
            if (auto* i = std::get_if<long long>(&it->second))
                return static_cast<double>(*i);
            if (auto* v = std::get_if<double>(&it->second)) return *v;
            throw ConfigError("config key '" + k + "' must be a number");
        } else {
            if (auto* v = std::get_if<T>(&it->second)) return *v;
            throw ConfigError("config key '" + k + "' has the wrong type");
        }
    }
    template <typename T>
    void set(const std::string& k, const T& v) {
        kv[k] = v;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

inline Value parse_scalar(const std::string& tok) {
    if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"')
        return tok.substr(1, tok.size() - 2);
    if (tok == "true") return true;
    if (tok == "false") return false;
    {
        long long i;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), i);
        if (ec == std::errc() && p == tok.data() + tok.size()) return i;
    }
    try {
        size_t pos;
        double d = std::stod(tok, &pos);
        if (pos == tok.size()) return d;
    } catch (...) {
    }
    throw ConfigError("cannot parse config value: " + tok);
}

}  // namespace detail

inline Table parse(std::istream& in) {
    Table t;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        // naive comment strip is fine: our strings never contain '#'
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("bad section header at line " +
                                  std::to_string(lineno));
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key = value at line " +
                              std::to_string(lineno));
        std::string key = detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));
        std::string full = section.empty() ? key : section + "." + key;
        if (!val.empty() && val.front() == '[') {
            if (val.back() != ']')
                throw ConfigError("unterminated array at line " +
                                  std::to_string(lineno));
            std::string inner = val.substr(1, val.size() - 2);
            std::vector<double> nums;
            std::vector<std::string> strs;
            bool is_str = false;
            std::stringstream ss(inner);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                tok = detail::trim(tok);
                if (tok.empty()) continue;
                Value v = detail::parse_scalar(tok);
                if (auto* s = std::get_if<std::string>(&v)) {
                    is_str = true;
                    strs.push_back(*s);
                } else if (auto* d = std::get_if<double>(&v))
                    nums.push_back(*d);
                else if (auto* i = std::get_if<long long>(&v))
                    nums.push_back(static_cast<double>(*i));
            }
            if (is_str)
                t.kv[full] = strs;
            else
                t.kv[full] = nums;
        } else {
            t.kv[full] = detail::parse_scalar(val);
        }
    }
    return t;
}

inline Table parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse(in);
}

inline std::string format_double(double d) {
    char buf[64];
    snprintf(buf, sizeof(buf), "%.17g", d);
    std::string s = buf;
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

inline void emit(const Table& t, std::ostream& out) {
    std::map<std::string, std::vector<std::pair<std::string, const Value*>>> by_sec;
    for (auto& [k, v] : t.kv) {
        auto dot = k.rfind('.');
        std::string sec = dot == std::string::npos ? "" : k.substr(0, dot);
        std::string key = dot == std::string::npos ? k : k.substr(dot + 1);
        by_sec[sec].emplace_back(key, &v);
    }
    for (auto& [sec, kvs] : by_sec) {
        if (!sec.empty()) out << "[" << sec << "]\n";
        for (auto& [key, vp] : kvs) {
            out << key << " = ";
            std::visit(
                [&](auto&& v) {
                    using T = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<T, std::string>)
                        out << '"' << v << '"';
                    else if constexpr (std::is_same_v<T, bool>)
                        out << (v ? "true" : "false");
                    else if constexpr (std::is_same_v<T, long long>)
                        out << v;
                    else if constexpr (std::is_same_v<T, double>)
                        out << format_double(v);
                    else if constexpr (std::is_same_v<T, std::vector<double>>) {
                        out << "[";
                        for (size_t i = 0; i < v.size(); ++i)
                            out << (i ? ", " : "") << format_double(v[i]);
                        out << "]";
                    } else {
                        out << "[";
                        for (size_t i = 0; i < v.size(); ++i)
                            out << (i ? ", " : "") << '"' << v[i] << '"';
                        out << "]";
                    }
                },
                *vp);
            out << "\n";
        }
        out << "\n";
    }
}

inline std::string emit_string(const Table& t) {
    std::ostringstream os;
    emit(t, os);
    return os.str();
}

}  // namespace dmic::toml
