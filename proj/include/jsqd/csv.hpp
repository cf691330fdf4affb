#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jsqd/occupancy.hpp"
#include "jsqd/simulator.hpp"

namespace jsqd {

namespace detail {

inline std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

[[noreturn]] inline void parse_fail(const std::string& name, int line,
                                    const std::string& what) {
    throw std::runtime_error(name + ":" + std::to_string(line) + ": " + what);
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double_tok(const std::string& tok, const std::string& name,
                               int line) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
        parse_fail(name, line, "expected a number, got '" + tok + "'");
    return v;
}

inline long long parse_int_tok(const std::string& tok, const std::string& name,
                               int line) {
    char* end = nullptr;
    const long long v = std::strtoll(tok.c_str(), &end, 10);
    if (end == tok.c_str() || *end != '\0')
        parse_fail(name, line, "expected an integer, got '" + tok + "'");
    return v;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    return f;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    return f;
}

}  // namespace detail

// Trajectory format: '#'-prefixed key=value metadata, a "t,m,l,q" header row,
// then one row per (time, type, level) with every snapshot emitted at the
// deepest level any snapshot reached (shallower snapshots pad with zero tail).
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    int depth = 1;
    for (const auto& s : traj.snaps) depth = std::max(depth, s.L);
    os << "# N=" << traj.N << "\n";
    os << "# seed=" << traj.seed << "\n";
    os << "# policy=" << traj.policy << "\n";
    os << "# params_hash=" << traj.params_hash << "\n";
    os << "t,m,l,q\n";
    for (size_t s = 0; s < traj.times.size(); ++s) {
        const OccupancyVector& occ = traj.snaps[s];
        for (int m = 0; m < occ.M; ++m)
            for (int l = 0; l <= depth; ++l)
                os << detail::fmt17(traj.times[s]) << ',' << m << ',' << l << ','
                   << detail::fmt17(occ.tail(m, l)) << "\n";
    }
}

inline void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
    auto f = detail::open_out(path);
    write_trajectory_csv(f, traj);
}

inline Trajectory read_trajectory_csv(std::istream& is,
                                      const std::string& name = "<stream>") {
    Trajectory traj;
    std::string line;
    int lineno = 0;
    bool saw_header = false;
    // Rows arrive grouped by time; accumulate one snapshot at a time.
    double cur_t = 0.0;
    bool have_group = false;
    std::vector<std::array<double, 3>> group;  // m, l, q

    auto flush_group = [&]() {
        if (!have_group) return;
        int M = 0, L = 0;
        for (const auto& r : group) {
            M = std::max(M, static_cast<int>(r[0]) + 1);
            L = std::max(L, static_cast<int>(r[1]));
        }
        OccupancyVector occ(M, L);
        std::vector<char> seen(static_cast<size_t>(M) * (L + 1), 0);
        for (const auto& r : group) {
            const int m = static_cast<int>(r[0]), l = static_cast<int>(r[1]);
            occ.at(m, l) = r[2];
            seen[static_cast<size_t>(m) * (L + 1) + l] = 1;
        }
        for (char c : seen)
            if (!c)
                detail::parse_fail(name, lineno,
                                   "snapshot at t=" + detail::fmt17(cur_t) +
                                       " is missing (type, level) rows");
        const std::string bad = occupancy_violation(occ);
        if (!bad.empty())
            detail::parse_fail(name, lineno,
                               "snapshot at t=" + detail::fmt17(cur_t) + ": " + bad);
        if (!traj.times.empty() && !(cur_t > traj.times.back()))
            detail::parse_fail(name, lineno, "times must be strictly increasing");
        traj.times.push_back(cur_t);
        traj.snaps.push_back(std::move(occ));
        group.clear();
        have_group = false;
    };

    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(1, eq - 1);
            const std::string val = line.substr(eq + 1);
            while (!key.empty() && key.front() == ' ') key.erase(key.begin());
            while (!key.empty() && key.back() == ' ') key.pop_back();
            if (key == "N")
                traj.N = static_cast<int>(detail::parse_int_tok(val, name, lineno));
            else if (key == "seed")
                traj.seed = static_cast<std::uint64_t>(
                    detail::parse_int_tok(val, name, lineno));
            else if (key == "policy")
                traj.policy = val;
            else if (key == "params_hash")
                traj.params_hash = val;
            continue;
        }
        if (!saw_header) {
            if (line != "t,m,l,q")
                detail::parse_fail(name, lineno, "expected header 't,m,l,q'");
            saw_header = true;
            continue;
        }
        const auto tok = detail::split_csv(line);
        if (tok.size() != 4)
            detail::parse_fail(name, lineno, "expected 4 comma-separated fields");
        const double t = detail::parse_double_tok(tok[0], name, lineno);
        const long long m = detail::parse_int_tok(tok[1], name, lineno);
        const long long l = detail::parse_int_tok(tok[2], name, lineno);
        const double q = detail::parse_double_tok(tok[3], name, lineno);
        if (m < 0 || l < 0)
            detail::parse_fail(name, lineno, "type and level must be >= 0");
        if (have_group && t != cur_t) flush_group();
        cur_t = t;
        have_group = true;
        group.push_back({static_cast<double>(m), static_cast<double>(l), q});
    }
    flush_group();
    if (!saw_header) detail::parse_fail(name, lineno, "missing 't,m,l,q' header");
    return traj;
}

inline Trajectory read_trajectory_csv_file(const std::string& path) {
    auto f = detail::open_in(path);
    return read_trajectory_csv(f, path);
}

// Occupancy format: "m,l,q" rows for one occupancy vector.
inline void write_occupancy_csv(const std::string& path,
                                const OccupancyVector& occ) {
    auto f = detail::open_out(path);
    f << "m,l,q\n";
    for (int m = 0; m < occ.M; ++m)
        for (int l = 0; l <= occ.L; ++l)
            f << m << ',' << l << ',' << detail::fmt17(occ.at(m, l)) << "\n";
}

inline OccupancyVector read_occupancy_csv(const std::string& path) {
    auto f = detail::open_in(path);
    std::string line;
    int lineno = 0;
    std::vector<std::array<double, 3>> rows;
    int M = 0, L = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (lineno == 1 || line == "m,l,q") {
            if (line != "m,l,q") detail::parse_fail(path, lineno, "expected header 'm,l,q'");
            continue;
        }
        const auto tok = detail::split_csv(line);
        if (tok.size() != 3)
            detail::parse_fail(path, lineno, "expected 3 comma-separated fields");
        const long long m = detail::parse_int_tok(tok[0], path, lineno);
        const long long l = detail::parse_int_tok(tok[1], path, lineno);
        const double q = detail::parse_double_tok(tok[2], path, lineno);
        if (m < 0 || l < 0) detail::parse_fail(path, lineno, "indices must be >= 0");
        M = std::max(M, static_cast<int>(m) + 1);
        L = std::max(L, static_cast<int>(l));
        rows.push_back({static_cast<double>(m), static_cast<double>(l), q});
    }
    if (rows.empty()) detail::parse_fail(path, lineno, "no occupancy rows");
    OccupancyVector occ(M, L);
    for (const auto& r : rows)
        occ.at(static_cast<int>(r[0]), static_cast<int>(r[1])) = r[2];
    const std::string bad = occupancy_violation(occ);
    if (!bad.empty()) detail::parse_fail(path, lineno, bad);
    return occ;
}

// Mismatch curve format: "t,delta,delta_over_n" with an "# N=" header.
inline void write_mismatch_csv(const std::string& path, int N,
                               const std::vector<double>& times,
                               const std::vector<long long>& mismatch) {
    if (times.size() != mismatch.size())
        throw std::invalid_argument("write_mismatch_csv: length mismatch");
    auto f = detail::open_out(path);
    f << "# N=" << N << "\n";
    f << "t,delta,delta_over_n\n";
    for (size_t s = 0; s < times.size(); ++s)
        f << detail::fmt17(times[s]) << ',' << mismatch[s] << ','
          << detail::fmt17(static_cast<double>(mismatch[s]) / N) << "\n";
}

}  // namespace jsqd
