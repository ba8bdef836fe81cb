#pragma once

// Flat key=value run configuration with a versioned schema: parsing,
// validation, defaults and echo. Unknown keys are rejected and every value
// is range-checked before any computation starts; error messages carry the
// offending key so the command line can report it.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "apsim/experiments.hpp"
#include "apsim/source.hpp"

namespace apsim {

constexpr int kConfigSchema = 1;

/// Full run configuration: physics model plus execution options.
struct RunConfig {
    ModelParams model;
    double tau_us = 0.5;
    RunMode mode = RunMode::analytic;
    std::uint64_t trials = 1000000;
    std::uint64_t seed = 12345;

    void validate() const {
        model.validate();
        if (tau_us < 0.0) throw std::invalid_argument("tau_us out of range (must be >= 0)");
        if (mode == RunMode::sampled && trials == 0)
            throw std::invalid_argument("trials out of range (sampled mode needs trials >= 1)");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        if (!std::isfinite(v)) throw std::invalid_argument("not finite");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("invalid number for key '" + key + "': '" + value + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("invalid integer for key '" + key + "': '" + value + "'");
    }
}

inline Vec3 parse_vec3(const std::string& key, const std::string& value) {
    std::vector<double> parts;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) parts.push_back(parse_double(key, trim(item)));
    if (parts.size() != 3)
        throw std::invalid_argument("invalid vector for key '" + key + "': expected x,y,z");
    return {parts[0], parts[1], parts[2]};
}

inline std::string format_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

/// Applies one key=value setting. Throws std::invalid_argument naming the
/// key for unknown keys or out-of-range values.
inline void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_double;
    using detail::parse_u64;
    using detail::parse_vec3;

    if (key == "schema") {
        if (parse_u64(key, value) != std::uint64_t(kConfigSchema))
            throw std::invalid_argument("unsupported schema version '" + value + "'");
    } else if (key == "chi_L") {
        cfg.model.source.chi_L = parse_double(key, value);
    } else if (key == "chi_R") {
        cfg.model.source.chi_R = parse_double(key, value);
    } else if (key == "phi1_rad") {
        cfg.model.source.phi1 = parse_double(key, value);
    } else if (key == "phi2_rad") {
        cfg.model.source.phi2 = parse_double(key, value);
    } else if (key == "phase_jitter_sigma_rad") {
        cfg.model.source.phase_jitter_sigma = parse_double(key, value);
    } else if (key == "mode_overlap") {
        cfg.model.source.mode_overlap = parse_double(key, value);
    } else if (key == "memory_shape") {
        if (value == "gaussian")
            cfg.model.memory.shape = DecayShape::gaussian;
        else if (value == "exponential")
            cfg.model.memory.shape = DecayShape::exponential;
        else
            throw std::invalid_argument("memory_shape must be 'gaussian' or 'exponential'");
    } else if (key == "memory_T_us") {
        cfg.model.memory.T_us = parse_double(key, value);
    } else if (key == "dephase_T_us") {
        cfg.model.memory.dephase_T_us = parse_double(key, value);
    } else if (key == "eta_r0") {
        cfg.model.memory.eta_r0 = parse_double(key, value);
    } else if (key == "eta_AS") {
        cfg.model.detector.eta_AS = parse_double(key, value);
    } else if (key == "eta_S") {
        cfg.model.detector.eta_S = parse_double(key, value);
    } else if (key == "dark_prob_AS") {
        cfg.model.detector.dark_prob_AS = parse_double(key, value);
    } else if (key == "dark_prob_S") {
        cfg.model.detector.dark_prob_S = parse_double(key, value);
    } else if (key == "k_W") {
        cfg.model.geometry.k_W = parse_vec3(key, value);
    } else if (key == "k_R") {
        cfg.model.geometry.k_R = parse_vec3(key, value);
    } else if (key == "k_AS_L") {
        cfg.model.geometry.k_AS_L = parse_vec3(key, value);
    } else if (key == "k_AS_R") {
        cfg.model.geometry.k_AS_R = parse_vec3(key, value);
    } else if (key == "wavenumber_rad_per_m") {
        cfg.model.geometry.wavenumber = parse_double(key, value);
    } else if (key == "n_max") {
        cfg.model.n_max = int(parse_u64(key, value));
    } else if (key == "tau_us") {
        cfg.tau_us = parse_double(key, value);
    } else if (key == "mode") {
        if (value == "analytic")
            cfg.mode = RunMode::analytic;
        else if (value == "sampled")
            cfg.mode = RunMode::sampled;
        else
            throw std::invalid_argument("mode must be 'analytic' or 'sampled'");
    } else if (key == "trials") {
        cfg.trials = parse_u64(key, value);
    } else if (key == "seed") {
        cfg.seed = parse_u64(key, value);
    } else {
        throw std::invalid_argument("unknown config key '" + key + "'");
    }
}

/// Parses a flat key=value config file ('#' starts a comment). Keys not
/// present keep their defaults; every value is validated afterwards with a
/// message that names the offending key.
inline RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        apply_config_key(cfg, detail::trim(line.substr(0, eq)),
                         detail::trim(line.substr(eq + 1)));
    }
    return cfg;
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

/// Validates ranges (invalid_argument, naming the key) and physical
/// consistency of the efficiency chain (domain_error).
inline void validate_config(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.model.memory.retrieval(0.0) * cfg.model.detector.eta_S > 1.0)
        throw std::domain_error("retrieval efficiency chain exceeds 1");
}

/// The full resolved key -> value map, in schema order, full precision.
inline std::vector<std::pair<std::string, std::string>> config_key_values(const RunConfig& cfg) {
    using detail::format_full;
    auto vec = [](const Vec3& v) {
        return detail::format_full(v.x) + "," + detail::format_full(v.y) + "," +
               detail::format_full(v.z);
    };
    return {
        {"schema", std::to_string(kConfigSchema)},
        {"chi_L", format_full(cfg.model.source.chi_L)},
        {"chi_R", format_full(cfg.model.source.chi_R)},
        {"phi1_rad", format_full(cfg.model.source.phi1)},
        {"phi2_rad", format_full(cfg.model.source.phi2)},
        {"phase_jitter_sigma_rad", format_full(cfg.model.source.phase_jitter_sigma)},
        {"mode_overlap", format_full(cfg.model.source.mode_overlap)},
        {"memory_shape", cfg.model.memory.shape == DecayShape::gaussian ? "gaussian" : "exponential"},
        {"memory_T_us", format_full(cfg.model.memory.T_us)},
        {"dephase_T_us", format_full(cfg.model.memory.dephase_T_us)},
        {"eta_r0", format_full(cfg.model.memory.eta_r0)},
        {"eta_AS", format_full(cfg.model.detector.eta_AS)},
        {"eta_S", format_full(cfg.model.detector.eta_S)},
        {"dark_prob_AS", format_full(cfg.model.detector.dark_prob_AS)},
        {"dark_prob_S", format_full(cfg.model.detector.dark_prob_S)},
        {"k_W", vec(cfg.model.geometry.k_W)},
        {"k_R", vec(cfg.model.geometry.k_R)},
        {"k_AS_L", vec(cfg.model.geometry.k_AS_L)},
        {"k_AS_R", vec(cfg.model.geometry.k_AS_R)},
        {"wavenumber_rad_per_m", format_full(cfg.model.geometry.wavenumber)},
        {"n_max", std::to_string(cfg.model.n_max)},
        {"tau_us", format_full(cfg.tau_us)},
        {"mode", to_string(cfg.mode)},
        {"trials", std::to_string(cfg.trials)},
        {"seed", std::to_string(cfg.seed)},
    };
}

}  // namespace apsim
