// Flat key-value run configuration.
//
// Format: one `dotted.key = value` per line, `#` starts a comment, blank
// lines ignored. Values are scalars, lists (comma separated), or matrices
// (rows separated by `;`). Complex entries are written `(re,im)`. Keys may
// appear at most once. Every key must be consumed by the run that loads the
// file; leftovers are a hard error, so typos cannot silently fall back to
// defaults.
#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qfilter/common.hpp"

namespace qfilter {

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// Split on top-level occurrences of sep (parentheses protect commas).
inline std::vector<std::string> split_top(const std::string& s, char sep) {
    std::vector<std::string> out;
    int depth = 0;
    std::string cur;
    for (char c : s) {
        if (c == '(') ++depth;
        if (c == ')') --depth;
        if (c == sep && depth == 0) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline double parse_double(const std::string& s, const std::string& key) {
    const std::string t = trim(s);
    if (t.empty()) throw config_error("empty number for key '" + key + "'");
    char* end = nullptr;
    double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size())
        throw config_error("bad number '" + t + "' for key '" + key + "'");
    return v;
}

inline Complex parse_complex(const std::string& s, const std::string& key) {
    const std::string t = trim(s);
    if (!t.empty() && t.front() == '(') {
        if (t.back() != ')')
            throw config_error("unbalanced complex literal for key '" + key + "'");
        auto parts = split_top(t.substr(1, t.size() - 2), ',');
        if (parts.size() != 2)
            throw config_error("complex literal needs (re,im) for key '" + key + "'");
        return Complex(parse_double(parts[0], key), parse_double(parts[1], key));
    }
    return Complex(parse_double(t, key), 0.0);
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_complex(Complex v) {
    if (v.imag() == 0.0) return format_double(v.real());
    return "(" + format_double(v.real()) + "," + format_double(v.imag()) + ")";
}

} // namespace detail

class Config {
public:
    static Config parse_string(const std::string& text,
                               const std::string& origin = "<string>") {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw config_error(origin + ":" + std::to_string(lineno) +
                                   ": expected 'key = value'");
            std::string key = detail::trim(line.substr(0, eq));
            std::string value = detail::trim(line.substr(eq + 1));
            if (key.empty())
                throw config_error(origin + ":" + std::to_string(lineno) +
                                   ": empty key");
            for (char c : key)
                if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' &&
                    c != '_')
                    throw config_error(origin + ":" + std::to_string(lineno) +
                                       ": bad key '" + key + "'");
            if (cfg.values_.count(key))
                throw config_error(origin + ":" + std::to_string(lineno) +
                                   ": duplicate key '" + key + "'");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw config_error("cannot open config file '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse_string(ss.str(), path);
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    // CLI overrides; replaces any file-provided value.
    void set(const std::string& key, const std::string& value) {
        values_[key] = value;
    }

    std::string get_string(const std::string& key) {
        auto it = values_.find(key);
        if (it == values_.end())
            throw config_error("missing required key '" + key + "'");
        consumed_.insert(key);
        return it->second;
    }

    std::string get_string_or(const std::string& key, const std::string& dflt) {
        if (!has(key)) return dflt;
        return get_string(key);
    }

    double get_double(const std::string& key) {
        return detail::parse_double(get_string(key), key);
    }

    double get_double_or(const std::string& key, double dflt) {
        if (!has(key)) return dflt;
        return get_double(key);
    }

    long long get_int(const std::string& key) {
        std::string s = get_string(key);
        char* end = nullptr;
        long long v = std::strtoll(s.c_str(), &end, 10);
        if (s.empty() || end != s.c_str() + s.size())
            throw config_error("bad integer '" + s + "' for key '" + key + "'");
        return v;
    }

    long long get_int_or(const std::string& key, long long dflt) {
        if (!has(key)) return dflt;
        return get_int(key);
    }

    bool get_bool(const std::string& key) {
        std::string s = get_string(key);
        if (s == "true") return true;
        if (s == "false") return false;
        throw config_error("bad bool '" + s + "' for key '" + key +
                           "' (use true/false)");
    }

    bool get_bool_or(const std::string& key, bool dflt) {
        if (!has(key)) return dflt;
        return get_bool(key);
    }

    std::vector<double> get_real_list(const std::string& key) {
        auto parts = detail::split_top(get_string(key), ',');
        std::vector<double> out;
        for (const auto& p : parts) out.push_back(detail::parse_double(p, key));
        return out;
    }

    // Matrix literal: rows split on ';', entries on top-level ','.
    Operator get_complex_matrix(const std::string& key) {
        auto rows = detail::split_top(get_string(key), ';');
        size_t cols = 0;
        std::vector<std::vector<Complex>> data;
        for (const auto& r : rows) {
            auto entries = detail::split_top(r, ',');
            if (cols == 0) cols = entries.size();
            else if (entries.size() != cols)
                throw config_error("ragged matrix for key '" + key + "'");
            std::vector<Complex> row;
            for (const auto& e : entries)
                row.push_back(detail::parse_complex(e, key));
            data.push_back(std::move(row));
        }
        Operator m(data.size(), cols);
        for (size_t i = 0; i < data.size(); ++i)
            for (size_t j = 0; j < cols; ++j) m(i, j) = data[i][j];
        return m;
    }

    // Hard error on keys nothing consumed: catches typos and stale options.
    void require_consumed() const {
        std::vector<std::string> unknown;
        for (const auto& kv : values_)
            if (!consumed_.count(kv.first)) unknown.push_back(kv.first);
        if (!unknown.empty()) {
            std::string msg = "unknown config key(s):";
            for (const auto& k : unknown) msg += " '" + k + "'";
            throw config_error(msg);
        }
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    std::set<std::string> consumed_;
};

// Canonical value formatting used by the manifest writer, chosen so that a
// parse -> format cycle is byte-stable.
namespace manifest {

inline std::string canonical_double(double v) { return detail::format_double(v); }

inline std::string canonical_matrix(const Operator& m) {
    std::string out;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (i) out += "; ";
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out += ", ";
            out += detail::format_complex(m(i, j));
        }
    }
    return out;
}

inline std::string canonical_list(const std::vector<double>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        out += detail::format_double(v[i]);
    }
    return out;
}

} // namespace manifest

} // namespace qfilter
