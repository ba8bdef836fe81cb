// Command-line front end: configuration ingestion, experiment execution and
// machine-readable output. Exit codes: 0 ok, 2 invalid input, 3 infeasible
// physics.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "apsim/config.hpp"
#include "apsim/experiments.hpp"
#include "apsim/io.hpp"

using namespace apsim;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = ".";
    std::string grid_spec;
    bool seed_set = false, trials_set = false, mode_set = false;
    std::uint64_t seed = 0, trials = 0;
    std::string mode_str;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "configuration file (flat key = value)");
    cmd->add_option("--set", o.overrides, "override one key, e.g. --set chi_L=0.01")
        ->type_name("KEY=VALUE");
    cmd->add_option("--out-dir", o.out_dir, "directory for emitted data files");
    cmd->add_option("--seed", o.seed, "random seed")->each([&](const std::string&) {
        o.seed_set = true;
    });
    cmd->add_option("--trials", o.trials, "trials per setting in sampled mode")
        ->each([&](const std::string&) { o.trials_set = true; });
    cmd->add_option("--mode", o.mode_str, "analytic or sampled")
        ->each([&](const std::string&) { o.mode_set = true; });
}

RunConfig resolve_config(const CommonOpts& o) {
    RunConfig cfg;
    if (!o.config_path.empty()) cfg = load_config_file(o.config_path);
    for (const auto& kv : o.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects KEY=VALUE, got '" + kv + "'");
        apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed_set) cfg.seed = o.seed;
    if (o.trials_set) cfg.trials = o.trials;
    if (o.mode_set) apply_config_key(cfg, "mode", o.mode_str);
    validate_config(cfg);
    return cfg;
}

std::vector<double> parse_grid(const std::string& spec) {
    double start = 0, stop = 0;
    int steps = 0;
    char tail = 0;
    if (std::sscanf(spec.c_str(), "%lf:%lf:%d%c", &start, &stop, &steps, &tail) != 3 ||
        steps < 1 || (steps > 1 && stop <= start))
        throw std::invalid_argument("--grid expects start:stop:steps with stop > start");
    std::vector<double> g;
    for (int i = 0; i < steps; ++i)
        g.push_back(steps == 1 ? start
                               : start + (stop - start) * double(i) / double(steps - 1));
    return g;
}

std::string timestamp_utc() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json metadata_json() {
    json m;
    m["tool"] = "apsim";
    m["schema"] = kConfigSchema;
    m["timestamp"] = timestamp_utc();
    return m;
}

// The settings a sampled simulate run records: the four Bell pairs, one
// correlation setting with both analyzers at 0, and an 8-point fringe scan
// at the 45-degree anti-Stokes basis.
std::vector<std::pair<double, double>> simulate_setting_list() {
    auto bell = bell_settings();
    std::vector<std::pair<double, double>> settings(bell.begin(), bell.end());
    settings.push_back({0.0, 0.0});
    for (int i = 0; i < 8; ++i) settings.push_back({kPi / 4.0, kPi * double(i) / 8.0});
    return settings;
}

constexpr int kCorrelationSetting = 4;
constexpr int kFringeFirstSetting = 5;
constexpr int kFringePoints = 8;

struct DerivedEstimates {
    double p_as = 0.0;
    Estimate g2 = Estimate::undefined();
    Estimate visibility = Estimate::undefined();
    std::array<Estimate, 4> E{{Estimate::undefined(), Estimate::undefined(),
                               Estimate::undefined(), Estimate::undefined()}};
    Estimate S = Estimate::undefined();
    std::optional<double> significance;
};

// Shared between `simulate --mode sampled` and `analyze`: everything that
// can be estimated from a counts table over (a subset of) the standard
// setting list.
DerivedEstimates estimates_from_counts(const CountsTable& table) {
    DerivedEstimates out;
    auto bell = bell_settings();
    std::array<const SettingRecord*, 4> bell_recs{{nullptr, nullptr, nullptr, nullptr}};
    const SettingRecord* corr = nullptr;
    std::vector<const SettingRecord*> fringe;
    for (const auto& rec : table.settings) {
        for (std::size_t i = 0; i < 4; ++i)
            if (std::abs(rec.theta_AS - bell[i].first) < 1e-12 &&
                std::abs(rec.theta_S - bell[i].second) < 1e-12)
                bell_recs[i] = &rec;
        if (rec.theta_AS == 0.0 && rec.theta_S == 0.0) corr = &rec;
        if (std::abs(rec.theta_AS - kPi / 4.0) < 1e-12) fringe.push_back(&rec);
    }
    if (corr) {
        // at analyzer angle 0 the matched partner of the AS "+" detector is
        // the S "-" detector (the spin of arm L retrieves onto S_V)
        out.g2 = g2_estimator(corr->n_pm, corr->singles[0], corr->singles[3], corr->trials);
        out.p_as = 0.5 * (double(corr->singles[0]) + double(corr->singles[1])) /
                   double(corr->trials);
    }
    if (fringe.size() >= 4) {
        std::vector<FringePoint> scan;
        for (const auto* rec : fringe)
            scan.push_back({rec->theta_S, double(rec->n_pp),
                            std::sqrt(std::max(double(rec->n_pp), 1.0))});
        try {
            out.visibility = fringe_visibility(scan).visibility;
        } catch (const std::invalid_argument&) {
            out.visibility = Estimate::undefined();  // no coincidences at all
        }
    }
    if (bell_recs[0] && bell_recs[1] && bell_recs[2] && bell_recs[3]) {
        for (std::size_t i = 0; i < 4; ++i) out.E[i] = correlation_E(*bell_recs[i]);
        out.S = chsh_S(out.E[0], out.E[1], out.E[2], out.E[3]);
        if (out.S.defined && out.S.std_err > 0.0)
            out.significance = violation_significance(out.S);
    }
    return out;
}

json derived_json(const DerivedEstimates& d, double truncation_leak) {
    json r;
    r["p_AS"] = d.p_as;
    r["g2"] = estimate_json(d.g2);
    r["visibility"] = estimate_json(d.visibility);
    json es = json::array();
    auto bell = bell_settings();
    for (std::size_t i = 0; i < 4; ++i) {
        json e = estimate_json(d.E[i]);
        e["theta_AS_rad"] = bell[i].first;
        e["theta_S_rad"] = bell[i].second;
        es.push_back(e);
    }
    r["E"] = es;
    r["S"] = estimate_json(d.S);
    r["significance"] = d.significance ? json(*d.significance) : json(nullptr);
    r["truncation_leak"] = truncation_leak;
    return r;
}

int cmd_simulate(const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    auto pre = chain_state(cfg.model, cfg.tau_us);
    double leak = pre.truncation_occupancy();

    DerivedEstimates d;
    if (cfg.mode == RunMode::analytic) {
        d.p_as = anti_stokes_detection_rate(cfg.model);
        auto corr = pair_g2_from_state(pre, cfg.model.detector, true);
        d.g2 = corr.g2 ? Estimate::exact(*corr.g2) : Estimate::undefined();
        try {
            d.visibility =
                detail::chain_fringe_visibility(cfg.model, cfg.tau_us, RunMode::analytic, 0, 0,
                                                kFringePoints, kFringeFirstSetting);
        } catch (const std::invalid_argument&) {
            d.visibility = Estimate::undefined();  // no coincidence fringe (dark source)
        }
        auto bell = bell_settings();
        std::vector<std::pair<double, double>> setting_list(bell.begin(), bell.end());
        auto dists = setting_distributions(pre, setting_list, cfg.model.detector);
        for (std::size_t i = 0; i < 4; ++i)
            d.E[i] = detail::correlation_from_distribution(dists[i]);
        d.S = chsh_S(d.E[0], d.E[1], d.E[2], d.E[3]);
    } else {
        auto settings = simulate_setting_list();
        RngSpec rng{cfg.seed};
        auto run = run_experiment(cfg.model, cfg.tau_us, settings, cfg.trials, rng, true);
        d = estimates_from_counts(run.counts);
        std::filesystem::create_directories(opts.out_dir);
        write_file(opts.out_dir + "/records.csv", click_records_csv(run.records));
        write_file(opts.out_dir + "/settings.csv", settings_map_csv(settings));
    }

    json out;
    out["metadata"] = metadata_json();
    out["config"] = config_json(cfg);
    out["results"] = derived_json(d, leak);
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_sweep(const std::string& kind, const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    std::filesystem::create_directories(opts.out_dir);

    json out;
    out["metadata"] = metadata_json();
    out["config"] = config_json(cfg);
    out["kind"] = kind;

    if (kind == "visibility") {
        auto grid = opts.grid_spec.empty() ? default_visibility_grid() : parse_grid(opts.grid_spec);
        auto sweep = sweep_visibility_vs_pas(cfg.model, grid, cfg.mode, cfg.trials, cfg.seed,
                                             cfg.tau_us);
        write_file(opts.out_dir + "/visibility.csv", visibility_sweep_csv(sweep));
        out["fit"] = linear_fit_json(sweep.fit);
        out["bell_bound_crossing_pas"] = sweep.bell_bound_crossing_pas;
        out["provenance"] = provenance_json(sweep.provenance);
        out["csv"] = opts.out_dir + "/visibility.csv";
        out["rows"] = sweep.points.size();
    } else if (kind == "bell") {
        auto grid = opts.grid_spec.empty() ? default_bell_tau_grid() : parse_grid(opts.grid_spec);
        auto sweep = scan_bell_vs_tau(cfg.model, grid, cfg.mode, cfg.trials, cfg.seed);
        write_file(opts.out_dir + "/bell.csv", bell_sweep_csv(sweep));
        json flags = json::array();
        for (const auto& p : sweep.points) {
            json f;
            f["tau_us"] = p.tau_us;
            f["above_classical"] = p.above_classical;
            f["above_classical_2sigma"] = p.above_classical_2sigma;
            flags.push_back(f);
        }
        out["flags"] = flags;
        out["provenance"] = provenance_json(sweep.provenance);
        out["csv"] = opts.out_dir + "/bell.csv";
        out["rows"] = sweep.points.size();
    } else if (kind == "decay") {
        auto grid = opts.grid_spec.empty() ? default_decay_tau_grid() : parse_grid(opts.grid_spec);
        auto sweep = scan_retrieval_g2_vs_tau(cfg.model, grid, cfg.mode, cfg.trials, cfg.seed);
        write_file(opts.out_dir + "/decay.csv", decay_sweep_csv(sweep));
        out["nonclassical_threshold_crossing_tau_us"] =
            g2_threshold_crossing_tau(cfg.model, 3.0 + 2.0 * std::sqrt(2.0), grid.front(),
                                      grid.back() + 10.0);
        out["provenance"] = provenance_json(sweep.provenance);
        out["csv"] = opts.out_dir + "/decay.csv";
        out["rows"] = sweep.points.size();
    } else {
        throw std::invalid_argument("unknown sweep kind '" + kind + "'");
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_analyze(const std::string& records_path, const std::string& settings_path) {
    auto records = parse_click_records_csv(read_file(records_path));
    auto settings = parse_settings_map_csv(read_file(settings_path));
    auto table = counts_from_records(records, settings);
    auto d = estimates_from_counts(table);

    json out;
    out["metadata"] = metadata_json();
    out["records"] = records_path;
    out["n_records"] = records.size();
    json per_setting = json::array();
    for (const auto& rec : table.settings) {
        json s;
        s["setting_id"] = rec.setting_id;
        s["theta_AS_rad"] = rec.theta_AS;
        s["theta_S_rad"] = rec.theta_S;
        s["trials"] = rec.trials;
        s["E"] = estimate_json(correlation_E(rec));
        per_setting.push_back(s);
    }
    out["settings"] = per_setting;
    out["results"] = derived_json(d, 0.0);
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_calibrate(const std::string& anchors_path, const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    auto anchors = parse_anchors_text(read_file(anchors_path));
    auto cal = calibrate(cfg.model, anchors);

    RunConfig calibrated_cfg = cfg;
    calibrated_cfg.model = cal.calibrated;

    json out;
    out["metadata"] = metadata_json();
    out["calibration"] = calibration_json(cal);
    out["calibrated_config"] = config_json(calibrated_cfg);
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"numerical model of a dual-rail atom-photon entanglement source with "
                 "built-in quantum memory"};
    app.require_subcommand(1);

    CommonOpts sim_opts, sweep_opts, cal_opts;
    std::string sweep_kind, records_path, settings_path, anchors_path;

    auto* sim = app.add_subcommand("simulate", "one chain evaluation at the configured point");
    add_common(sim, sim_opts);

    auto* sw = app.add_subcommand("sweep", "visibility, bell or decay sweep over a grid");
    sw->add_option("kind", sweep_kind, "visibility | bell | decay")->required();
    sw->add_option("--grid", sweep_opts.grid_spec, "grid as start:stop:steps");
    add_common(sw, sweep_opts);

    auto* an = app.add_subcommand("analyze", "estimators over a stored click-record file");
    an->add_option("--records", records_path, "click-record CSV")->required();
    an->add_option("--settings", settings_path, "setting-map CSV")->required();

    auto* cal = app.add_subcommand("calibrate", "fit memory and noise constants to anchors");
    cal->add_option("--anchors", anchors_path, "anchor file")->required();
    add_common(cal, cal_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(sim_opts);
        if (sw->parsed()) return cmd_sweep(sweep_kind, sweep_opts);
        if (an->parsed()) return cmd_analyze(records_path, settings_path);
        if (cal->parsed()) return cmd_calibrate(anchors_path, cal_opts);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
