#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "streamrak/common.hpp"

namespace streamrak {

/// Every tunable of a streaming run. Defaults are the values used when a key is absent.
struct RunConfig {
    // damped cover tree
    double alpha = 0.01;     // running-average weight of covering fractions
    double d_cf = 0.7;       // node covering-fraction threshold (damping)
    double d_level = 0.8;    // level covering-fraction threshold (readiness)
    double h = 10.0;         // hardness of the separation bypass
    bool bypass = true;      // false: strict separation check
    double r0 = 0.0;         // <= 0: derive from the warm-up buffer
    std::size_t warmup = 1000;
    double r0_factor = 2.0;  // r0 = factor * max distance from the first warm-up point

    // landmarks
    double delta0 = 10.0;
    double min_pool_fraction = 0.0;   // wait until |pool| >= fraction * min(target m, |Q_l|)
    std::uint64_t pool_patience = 0;  // give up waiting after this many samples (0: never)

    // sufficiency of the streamed matrices
    double delta1 = 1e-3;
    double delta2 = 1e-4;
    std::uint64_t delta3 = 200000;
    std::uint64_t sufficiency_cadence = 100;

    // solver
    double lambda = 1e-6;
    int max_cg_iter = 20;
    double cg_tol = 1e-8;

    // pyramid
    int first_level = 0;
    int max_levels = 32;
    double bandwidth_scale = 1.0;

    std::uint64_t seed = 1;

    /// Canonical `key = value` text, one key per line, fixed order.
    std::string to_text() const;
    /// FNV-1a over the canonical text.
    std::uint64_t hash() const;
    /// Returns one message per offending key; empty when valid.
    std::vector<std::string> validation_errors() const;
    void validate() const;

    /// Merge `key = value` lines into `base`. Unknown keys and unparsable values are collected
    /// and reported together.
    static RunConfig parse(const std::string& text, RunConfig base);
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::string& path, RunConfig base);
    static RunConfig load(const std::string& path);
};

namespace config_detail {

struct Field {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<bool(RunConfig&, const std::string&)> set;
};

// shortest text that parses back to v
inline std::string fmt_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
    std::istringstream is(s);
    T v{};
    is >> v;
    if (is.fail()) return false;
    is >> std::ws;
    if (!is.eof()) return false;
    out = v;
    return true;
}

inline bool parse_bool(const std::string& s, bool& out) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") {
        out = true;
        return true;
    }
    if (s == "false" || s == "0" || s == "no" || s == "off") {
        out = false;
        return true;
    }
    return false;
}

#define STREAMRAK_DOUBLE_FIELD(name)                                                       \
    Field {                                                                                \
        #name, [](const RunConfig& c) { return fmt_double(c.name); },                      \
            [](RunConfig& c, const std::string& v) { return parse_number(v, c.name); }     \
    }
#define STREAMRAK_INT_FIELD(name)                                                          \
    Field {                                                                                \
        #name, [](const RunConfig& c) { return std::to_string(c.name); },                  \
            [](RunConfig& c, const std::string& v) { return parse_number(v, c.name); }     \
    }

inline const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        STREAMRAK_DOUBLE_FIELD(alpha),
        STREAMRAK_DOUBLE_FIELD(d_cf),
        STREAMRAK_DOUBLE_FIELD(d_level),
        STREAMRAK_DOUBLE_FIELD(h),
        Field{"bypass", [](const RunConfig& c) { return std::string(c.bypass ? "true" : "false"); },
              [](RunConfig& c, const std::string& v) { return parse_bool(v, c.bypass); }},
        STREAMRAK_DOUBLE_FIELD(r0),
        STREAMRAK_INT_FIELD(warmup),
        STREAMRAK_DOUBLE_FIELD(r0_factor),
        STREAMRAK_DOUBLE_FIELD(delta0),
        STREAMRAK_DOUBLE_FIELD(min_pool_fraction),
        STREAMRAK_INT_FIELD(pool_patience),
        STREAMRAK_DOUBLE_FIELD(delta1),
        STREAMRAK_DOUBLE_FIELD(delta2),
        STREAMRAK_INT_FIELD(delta3),
        STREAMRAK_INT_FIELD(sufficiency_cadence),
        STREAMRAK_DOUBLE_FIELD(lambda),
        STREAMRAK_INT_FIELD(max_cg_iter),
        STREAMRAK_DOUBLE_FIELD(cg_tol),
        STREAMRAK_INT_FIELD(first_level),
        STREAMRAK_INT_FIELD(max_levels),
        STREAMRAK_DOUBLE_FIELD(bandwidth_scale),
        STREAMRAK_INT_FIELD(seed),
    };
    return table;
}

#undef STREAMRAK_DOUBLE_FIELD
#undef STREAMRAK_INT_FIELD

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace config_detail

inline std::string RunConfig::to_text() const {
    std::ostringstream os;
    for (const auto& f : config_detail::fields()) os << f.key << " = " << f.get(*this) << '\n';
    return os.str();
}

inline std::uint64_t RunConfig::hash() const {
    std::uint64_t h64 = 1469598103934665603ull;
    for (unsigned char ch : to_text()) {
        h64 ^= ch;
        h64 *= 1099511628211ull;
    }
    return h64;
}

inline std::vector<std::string> RunConfig::validation_errors() const {
    std::vector<std::string> errs;
    auto open01 = [&](const char* key, double v) {
        if (!(v > 0.0 && v < 1.0)) errs.push_back(std::string(key) + " must lie in (0,1)");
    };
    open01("alpha", alpha);
    open01("d_cf", d_cf);
    open01("d_level", d_level);
    if (!(h > 0.0)) errs.push_back("h must be positive");
    if (!(r0 >= 0.0) || !std::isfinite(r0)) errs.push_back("r0 must be >= 0 (0 derives it from warm-up)");
    if (r0 <= 0.0 && warmup == 0) errs.push_back("warmup must be >= 1 when r0 is derived");
    if (!(r0_factor > 0.0)) errs.push_back("r0_factor must be positive");
    if (!(delta0 > 0.0)) errs.push_back("delta0 must be positive");
    if (!(min_pool_fraction >= 0.0 && min_pool_fraction <= 1.0))
        errs.push_back("min_pool_fraction must lie in [0,1]");
    if (!(delta1 > 0.0)) errs.push_back("delta1 must be positive");
    if (!(delta2 > 0.0)) errs.push_back("delta2 must be positive");
    if (delta3 < 2) errs.push_back("delta3 must be >= 2");
    if (sufficiency_cadence < 1) errs.push_back("sufficiency_cadence must be >= 1");
    if (!(lambda > 0.0)) errs.push_back("lambda must be positive");
    if (max_cg_iter < 1) errs.push_back("max_cg_iter must be >= 1");
    if (!(cg_tol > 0.0)) errs.push_back("cg_tol must be positive");
    if (first_level < 0 || first_level > 60) errs.push_back("first_level must lie in [0,60]");
    if (max_levels < 1) errs.push_back("max_levels must be >= 1");
    if (!(bandwidth_scale > 0.0)) errs.push_back("bandwidth_scale must be positive");
    return errs;
}

inline void RunConfig::validate() const {
    const auto errs = validation_errors();
    if (errs.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw UsageError(msg);
}

inline RunConfig RunConfig::parse(const std::string& text, RunConfig base) {
    std::vector<std::string> errs;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line.erase(hash_pos);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            errs.push_back("line " + std::to_string(lineno) + ": expected `key = value`");
            continue;
        }
        const std::string key = config_detail::trim(line.substr(0, eq));
        const std::string value = config_detail::trim(line.substr(eq + 1));
        bool found = false;
        for (const auto& f : config_detail::fields()) {
            if (key == f.key) {
                found = true;
                if (!f.set(base, value)) errs.push_back(key + ": cannot parse `" + value + "`");
                break;
            }
        }
        if (!found) errs.push_back(key + ": unknown key");
    }
    for (auto& e : base.validation_errors()) errs.push_back(std::move(e));
    if (!errs.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& e : errs) msg += "\n  " + e;
        throw UsageError(msg);
    }
    return base;
}

inline RunConfig RunConfig::parse(const std::string& text) { return parse(text, RunConfig{}); }

inline RunConfig RunConfig::load(const std::string& path) { return load(path, RunConfig{}); }

inline RunConfig RunConfig::load(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), base);
}

}  // namespace streamrak
