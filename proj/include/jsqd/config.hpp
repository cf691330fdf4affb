#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jsqd/params.hpp"
#include "jsqd/simulator.hpp"

namespace jsqd {

// Flat key = value configuration. Blank lines and lines starting with '#'
// are skipped; keys may not repeat. Lists separate entries with commas or
// whitespace; matrices separate rows with ';'. Keys outside the documented
// schema can be rejected wholesale after loading (reject_unknown_keys).
class Config {
public:
    Config() = default;

    static Config load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot open config: " + path);
        Config cfg;
        cfg.path_ = path;
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                fail(path, lineno, "expected 'key = value'");
            const std::string key = trim(t.substr(0, eq));
            const std::string val = trim(t.substr(eq + 1));
            if (key.empty()) fail(path, lineno, "empty key");
            if (cfg.kv_.count(key))
                fail(path, lineno,
                     "duplicate key '" + key + "' (first at line " +
                         std::to_string(cfg.line_of_.at(key)) + ")");
            cfg.kv_[key] = val;
            cfg.line_of_[key] = lineno;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    const std::string& path() const { return path_; }

    std::string get_string(const std::string& key) const {
        const auto it = kv_.find(key);
        if (it == kv_.end())
            throw std::runtime_error(path_ + ": missing required key '" + key + "'");
        return it->second;
    }

    std::string get_string(const std::string& key, const std::string& dflt) const {
        if (!has(key)) return dflt;
        return get_string(key);
    }

    double get_double(const std::string& key) const {
        return to_double(key, get_string(key));
    }
    double get_double(const std::string& key, double dflt) const {
        if (!has(key)) return dflt;
        return get_double(key);
    }

    long long get_int(const std::string& key) const {
        return to_int(key, get_string(key));
    }
    long long get_int(const std::string& key, long long dflt) const {
        if (!has(key)) return dflt;
        return get_int(key);
    }

    std::uint64_t get_uint64(const std::string& key, std::uint64_t dflt) const {
        if (!has(key)) return dflt;
        const std::string s = get_string(key);
        try {
            size_t used = 0;
            const std::uint64_t v = std::stoull(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            key_fail(key, "expected an unsigned integer, got '" + s + "'");
        }
    }

    std::vector<double> get_list(const std::string& key) const {
        return parse_list(key, get_string(key));
    }

    std::vector<double> get_list(const std::string& key,
                                 const std::vector<double>& dflt) const {
        if (!has(key)) return dflt;
        return get_list(key);
    }

    // Rows separated by ';', entries by commas/whitespace; rectangular.
    std::vector<std::vector<double>> get_matrix(const std::string& key) const {
        const std::string s = get_string(key);
        std::vector<std::vector<double>> rows;
        std::string cur;
        auto flush = [&]() {
            rows.push_back(parse_list(key, cur));
            cur.clear();
        };
        for (char c : s) {
            if (c == ';') flush();
            else cur += c;
        }
        flush();
        for (const auto& r : rows)
            if (r.size() != rows[0].size())
                key_fail(key, "matrix rows must have equal length");
        return rows;
    }

    // Throws if the file holds keys outside the schema. Configs are shared
    // across subcommands, so this checks against the full schema rather than
    // what one particular run happened to read.
    void reject_unknown_keys() const {
        static const std::set<std::string> schema = {
            "model.K",        "model.M",          "model.d",
            "rates.lambda",   "rates.xi",         "rates.u",
            "fractions.w",    "fractions.v",      "compat.p",
            "sim.N",          "sim.horizon",      "sim.snapshot_dt",
            "sim.seeds",      "sim.master_seed",  "sim.coupling_pairs",
            "sim.sizes",      "sim.coupling_sizes",
            "init.levels",    "init.q",           "init.q_alt1",
            "init.q_alt2",    "ode.levels",       "ode.step",
            "ode.horizon"};
        std::string bad;
        for (const auto& [key, val] : kv_)
            if (!schema.count(key))
                bad += "\n  line " + std::to_string(line_of_.at(key)) + ": " + key;
        if (!bad.empty())
            throw std::runtime_error(path_ + ": unknown configuration keys:" + bad);
    }

private:
    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t");
        return s.substr(a, b - a + 1);
    }

    [[noreturn]] static void fail(const std::string& path, int line,
                                  const std::string& what) {
        throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
    }

    [[noreturn]] void key_fail(const std::string& key,
                               const std::string& what) const {
        const auto it = line_of_.find(key);
        const std::string at =
            it == line_of_.end() ? path_ : path_ + ":" + std::to_string(it->second);
        throw std::runtime_error(at + ": key '" + key + "': " + what);
    }

    double to_double(const std::string& key, const std::string& s) const {
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (end == s.c_str() || *end != '\0')
            key_fail(key, "expected a number, got '" + s + "'");
        return v;
    }

    long long to_int(const std::string& key, const std::string& s) const {
        char* end = nullptr;
        const long long v = std::strtoll(s.c_str(), &end, 10);
        if (end == s.c_str() || *end != '\0')
            key_fail(key, "expected an integer, got '" + s + "'");
        return v;
    }

    std::vector<double> parse_list(const std::string& key,
                                   const std::string& s) const {
        std::vector<double> out;
        std::string tok;
        auto flush = [&]() {
            if (!tok.empty()) {
                out.push_back(to_double(key, tok));
                tok.clear();
            }
        };
        for (char c : s) {
            if (c == ',' || c == ' ' || c == '\t') flush();
            else tok += c;
        }
        flush();
        if (out.empty()) key_fail(key, "expected a non-empty list");
        return out;
    }

    std::string path_;
    std::map<std::string, std::string> kv_;
    std::map<std::string, int> line_of_;
};

// System parameters from a config; `need_p` controls whether compat.p is
// required (matrix design derives its own).
inline SystemParams params_from_config(const Config& cfg, bool need_p = true) {
    SystemParams P;
    P.K = static_cast<int>(cfg.get_int("model.K"));
    P.M = static_cast<int>(cfg.get_int("model.M"));
    P.d = static_cast<int>(cfg.get_int("model.d"));
    P.lambda = cfg.get_double("rates.lambda");
    P.xi = cfg.get_double("rates.xi");
    P.u = cfg.get_list("rates.u");
    P.w = cfg.get_list("fractions.w");
    P.v = cfg.get_list("fractions.v");
    if (need_p || cfg.has("compat.p")) {
        const auto rows = cfg.get_matrix("compat.p");
        if (static_cast<int>(rows.size()) != P.K ||
            static_cast<int>(rows[0].size()) != P.M)
            throw std::runtime_error(cfg.path() +
                                     ": compat.p must be K rows of M entries");
        P.p.clear();
        for (const auto& r : rows) P.p.insert(P.p.end(), r.begin(), r.end());
    }
    if (need_p) P.validate();
    return P;
}

// Initial queue-length pmfs (rows are per-type pmfs over 0..init.levels).
inline InitMatrix init_from_config(const Config& cfg, const SystemParams& P,
                                   const std::string& key) {
    if (!cfg.has(key)) {
        if (key == "init.q") return {};  // default: empty system
        throw std::runtime_error(cfg.path() + ": missing key '" + key + "'");
    }
    const int levels = static_cast<int>(cfg.get_int("init.levels"));
    const auto rows = cfg.get_matrix(key);
    if (static_cast<int>(rows.size()) != P.M ||
        static_cast<int>(rows[0].size()) != levels + 1)
        throw std::runtime_error(cfg.path() + ": " + key + " must be M rows of " +
                                 std::to_string(levels + 1) + " entries");
    check_init_matrix(rows, P.M);
    return rows;
}

struct SimSettings {
    int N = 0;
    double horizon = 0.0;
    double snapshot_dt = 0.05;
    int seeds = 0;
    std::uint64_t master_seed = 1;
    int coupling_pairs = 20;
    std::vector<int> sizes;           // system sizes for the scaling study
    std::vector<int> coupling_sizes;  // system sizes for the coupled study
};

inline SimSettings sim_from_config(const Config& cfg) {
    SimSettings s;
    s.N = static_cast<int>(cfg.get_int("sim.N"));
    s.horizon = cfg.get_double("sim.horizon");
    s.snapshot_dt = cfg.get_double("sim.snapshot_dt", 0.05);
    s.seeds = static_cast<int>(cfg.get_int("sim.seeds"));
    s.master_seed = cfg.get_uint64("sim.master_seed", 1);
    s.coupling_pairs = static_cast<int>(cfg.get_int("sim.coupling_pairs", 20));
    for (double x : cfg.get_list("sim.sizes", {100, 500, 1000}))
        s.sizes.push_back(static_cast<int>(x));
    for (double x : cfg.get_list("sim.coupling_sizes", {100, 1000}))
        s.coupling_sizes.push_back(static_cast<int>(x));
    if (s.N <= 0 || s.horizon <= 0 || s.seeds <= 0 || s.snapshot_dt <= 0)
        throw std::runtime_error(cfg.path() + ": sim.* values must be positive");
    return s;
}

struct OdeSettings {
    int levels = 64;
    double step = 1e-3;
    double horizon = 50.0;
};

inline OdeSettings ode_from_config(const Config& cfg) {
    OdeSettings s;
    s.levels = static_cast<int>(cfg.get_int("ode.levels", 64));
    s.step = cfg.get_double("ode.step", 1e-3);
    s.horizon = cfg.get_double("ode.horizon", 50.0);
    if (s.levels <= 0 || s.step <= 0 || s.horizon <= 0)
        throw std::runtime_error(cfg.path() + ": ode.* values must be positive");
    return s;
}

// FNV-1a fingerprint of the full parameter vector, for stamping outputs.
inline std::string params_hash(const SystemParams& P) {
    std::string canon;
    char buf[40];
    auto add = [&](double x) {
        std::snprintf(buf, sizeof buf, "%.17g|", x);
        canon += buf;
    };
    canon += std::to_string(P.K) + "|" + std::to_string(P.M) + "|" +
             std::to_string(P.d) + "|";
    add(P.lambda);
    add(P.xi);
    for (double x : P.u) add(x);
    for (double x : P.w) add(x);
    for (double x : P.v) add(x);
    for (double x : P.p) add(x);
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace jsqd
