#pragma once

// Machine-readable outputs: the sweep CSV formats, click-record files and
// JSON summaries. Numbers are written in full precision decimal so files
// round-trip losslessly.

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "apsim/config.hpp"
#include "apsim/experiments.hpp"
#include "apsim/montecarlo.hpp"

namespace apsim {

using json = nlohmann::ordered_json;

namespace detail {

inline std::string csv_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// sweep CSV emission
// ---------------------------------------------------------------------------

inline std::string visibility_sweep_csv(const VisibilitySweep& sweep) {
    std::string out = "p_AS,V,V_err\n";
    for (const auto& p : sweep.points)
        out += detail::csv_num(p.p_as) + "," + detail::csv_num(p.visibility.value) + "," +
               detail::csv_num(p.visibility.std_err) + "\n";
    return out;
}

inline std::string bell_sweep_csv(const BellSweep& sweep) {
    std::string out = "tau_us,S,S_err,sigma_violation\n";
    for (const auto& p : sweep.points) {
        double sig = p.significance ? *p.significance : std::nan("");
        out += detail::csv_num(p.tau_us) + "," + detail::csv_num(p.S.value) + "," +
               detail::csv_num(p.S.std_err) + "," + detail::csv_num(sig) + "\n";
    }
    return out;
}

inline std::string decay_sweep_csv(const DecaySweep& sweep) {
    std::string out = "tau_us,eta_retrieve,eta_err,g2,g2_err\n";
    for (const auto& p : sweep.points)
        out += detail::csv_num(p.tau_us) + "," + detail::csv_num(p.eta_retrieve.value) + "," +
               detail::csv_num(p.eta_retrieve.std_err) + "," + detail::csv_num(p.g2.value) + "," +
               detail::csv_num(p.g2.std_err) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// click records and setting maps
// ---------------------------------------------------------------------------

inline std::string click_records_csv(const std::vector<ClickRecord>& records) {
    std::string out = "trial_index,setting_id,pattern\n";
    for (const auto& r : records)
        out += std::to_string(r.trial_index) + "," + std::to_string(r.setting_id) + "," +
               std::to_string(int(r.pattern)) + "\n";
    return out;
}

inline std::string settings_map_csv(const std::vector<std::pair<double, double>>& settings) {
    std::string out = "setting_id,theta_AS_rad,theta_S_rad\n";
    for (std::size_t i = 0; i < settings.size(); ++i)
        out += std::to_string(i) + "," + detail::csv_num(settings[i].first) + "," +
               detail::csv_num(settings[i].second) + "\n";
    return out;
}

/// Parses a click-record CSV. Malformed rows raise invalid_argument with
/// the 1-based line number.
inline std::vector<ClickRecord> parse_click_records_csv(const std::string& text) {
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    std::vector<ClickRecord> out;
    while (std::getline(ss, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1) {
            if (line != "trial_index,setting_id,pattern")
                throw std::invalid_argument("records line 1: bad header");
            continue;
        }
        if (line.empty()) continue;
        std::uint64_t trial = 0;
        int setting = 0, pattern = 0;
        char tail = 0;
        if (std::sscanf(line.c_str(), "%llu,%d,%d%c", (unsigned long long*)&trial, &setting,
                        &pattern, &tail) != 3 ||
            pattern < 0 || pattern > 15 || setting < 0)
            throw std::invalid_argument("records line " + std::to_string(lineno) +
                                        ": malformed row '" + line + "'");
        out.push_back({trial, setting, std::uint8_t(pattern)});
    }
    if (out.empty()) throw std::invalid_argument("records file has no data rows");
    return out;
}

inline std::vector<std::pair<double, double>> parse_settings_map_csv(const std::string& text) {
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    std::vector<std::pair<double, double>> out;
    while (std::getline(ss, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1) {
            if (line != "setting_id,theta_AS_rad,theta_S_rad")
                throw std::invalid_argument("settings line 1: bad header");
            continue;
        }
        if (line.empty()) continue;
        int id = 0;
        double ta = 0.0, ts = 0.0;
        char tail = 0;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf%c", &id, &ta, &ts, &tail) != 3 ||
            id != int(out.size()))
            throw std::invalid_argument("settings line " + std::to_string(lineno) +
                                        ": malformed row '" + line + "'");
        out.push_back({ta, ts});
    }
    if (out.empty()) throw std::invalid_argument("settings file has no data rows");
    return out;
}

/// Rebuilds the per-setting counts table from raw click records.
inline CountsTable counts_from_records(const std::vector<ClickRecord>& records,
                                       const std::vector<std::pair<double, double>>& settings) {
    CountsTable table;
    for (std::size_t i = 0; i < settings.size(); ++i) {
        SettingRecord rec;
        rec.setting_id = int(i);
        rec.theta_AS = settings[i].first;
        rec.theta_S = settings[i].second;
        table.settings.push_back(rec);
    }
    for (const auto& r : records) {
        if (r.setting_id < 0 || r.setting_id >= int(settings.size()))
            throw std::invalid_argument("record references unknown setting " +
                                        std::to_string(r.setting_id));
        tally_record(table.settings[std::size_t(r.setting_id)], r.pattern);
    }
    return table;
}

// ---------------------------------------------------------------------------
// anchor files for the calibration command
// ---------------------------------------------------------------------------

/// Anchor file format: key = tau:value:sigma triples, comma separated, e.g.
///   retrieval = 0.5:0.122:0.004, 20.5:0.022:0.001
///   g2 = 0.5:38:1, 20.5:9.8:0.7
///   s_param = 0.5:2.60:0.03, 20.5:2.17:0.07
///   visibility_intercept = 0.95
inline Anchors parse_anchors_text(const std::string& text) {
    Anchors anchors;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    auto parse_points = [&](const std::string& key, const std::string& value) {
        std::vector<AnchorPoint> pts;
        std::stringstream items(value);
        std::string item;
        while (std::getline(items, item, ',')) {
            item = detail::trim(item);
            AnchorPoint p;
            char tail = 0;
            int n = std::sscanf(item.c_str(), "%lf:%lf:%lf%c", &p.tau_us, &p.value, &p.sigma,
                                &tail);
            if (n != 3) {
                p.sigma = 0.0;
                n = std::sscanf(item.c_str(), "%lf:%lf%c", &p.tau_us, &p.value, &tail);
                if (n != 2)
                    throw std::invalid_argument("anchors line " + std::to_string(lineno) +
                                                ": malformed " + key + " entry '" + item + "'");
            }
            pts.push_back(p);
        }
        return pts;
    };
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("anchors line " + std::to_string(lineno) +
                                        ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        if (key == "retrieval")
            anchors.retrieval = parse_points(key, value);
        else if (key == "g2")
            anchors.g2 = parse_points(key, value);
        else if (key == "s_param")
            anchors.s_param = parse_points(key, value);
        else if (key == "visibility_intercept")
            anchors.visibility_intercept = detail::parse_double(key, value);
        else
            throw std::invalid_argument("unknown anchors key '" + key + "'");
    }
    return anchors;
}

// ---------------------------------------------------------------------------
// JSON pieces
// ---------------------------------------------------------------------------

inline json estimate_json(const Estimate& e) {
    json j;
    j["value"] = e.defined ? json(e.value) : json(nullptr);
    j["std_err"] = e.std_err;
    j["defined"] = e.defined;
    return j;
}

inline json config_json(const RunConfig& cfg) {
    json j;
    for (const auto& [k, v] : config_key_values(cfg)) j[k] = v;
    return j;
}

inline json linear_fit_json(const LinearFit& f) {
    json j;
    j["intercept"] = f.intercept;
    j["slope"] = f.slope;
    j["intercept_err"] = f.intercept_err;
    j["slope_err"] = f.slope_err;
    return j;
}

inline json provenance_json(const Provenance& p) {
    json j;
    j["mode"] = to_string(p.mode);
    j["seed"] = p.seed;
    j["trials_per_point"] = p.trials_per_point;
    return j;
}

inline json calibration_json(const Calibration& cal) {
    json j;
    j["memory_T_us"] = cal.memory.T_us;
    j["eta_r0"] = cal.memory.eta_r0;
    j["dephase_T_us"] = cal.memory.dephase_T_us;
    j["background_dark_prob_S"] = cal.background_dark_prob_S;
    j["intrinsic_visibility"] = cal.intrinsic_visibility;
    json res = json::array();
    for (const auto& r : cal.residuals) {
        json e;
        e["name"] = r.name;
        e["model"] = r.model;
        e["anchor"] = r.anchor;
        e["residual"] = r.residual;
        res.push_back(e);
    }
    j["residuals"] = res;
    return j;
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file '" + path + "'");
    out << content;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace apsim
