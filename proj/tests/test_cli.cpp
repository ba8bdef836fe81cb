#define CATCH_CONFIG_MAIN
#include <catch2/catch.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "apsim/config.hpp"
#include "apsim/io.hpp"

using namespace apsim;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

fs::path scratch_dir() {
    auto d = fs::temp_directory_path() / "apsim_cli_test";
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

CmdResult run_cli(const std::string& args) {
    auto d = scratch_dir();
    auto out = d / "stdout.txt";
    auto err = d / "stderr.txt";
    std::string cmd = std::string(APSIM_CLI_PATH) + " " + args + " > " + out.string() + " 2> " +
                      err.string();
    int rc = std::system(cmd.c_str());
    CmdResult r;
    r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

// strips the timestamp line so byte-identity can be checked across runs
std::string without_timestamp(const std::string& json_text) {
    std::string out;
    std::stringstream ss(json_text);
    std::string line;
    while (std::getline(ss, line))
        if (line.find("\"timestamp\"") == std::string::npos) out += line + "\n";
    return out;
}

}  // namespace

TEST_CASE("config parsing") {
    SECTION("shipped default config resolves to the built-in defaults") {
        auto cfg = load_config_file(std::string(APSIM_SOURCE_DIR) + "/configs/default.cfg");
        RunConfig defaults;
        CHECK(config_key_values(cfg) == config_key_values(defaults));
    }
    SECTION("unknown keys are rejected by name") {
        RunConfig cfg;
        CHECK_THROWS_WITH(apply_config_key(cfg, "tau", "1.0"),
                          Catch::Contains("unknown config key 'tau'"));
    }
    SECTION("bad values name the key") {
        RunConfig cfg;
        CHECK_THROWS_WITH(apply_config_key(cfg, "chi_L", "abc"), Catch::Contains("chi_L"));
        CHECK_THROWS_WITH(apply_config_key(cfg, "k_W", "1,2"), Catch::Contains("k_W"));
    }
    SECTION("out-of-range values fail validation with the key name") {
        RunConfig cfg;
        apply_config_key(cfg, "eta_AS", "1.5");
        CHECK_THROWS_WITH(validate_config(cfg), Catch::Contains("eta_AS"));
    }
    SECTION("echo and re-parse round-trip exactly") {
        RunConfig cfg;
        apply_config_key(cfg, "chi_L", "0.0123456789012345");
        apply_config_key(cfg, "mode", "sampled");
        std::string text;
        for (const auto& [k, v] : config_key_values(cfg)) text += k + " = " + v + "\n";
        auto cfg2 = parse_config_text(text);
        CHECK(config_key_values(cfg2) == config_key_values(cfg));
    }
    SECTION("unsupported schema version is rejected") {
        CHECK_THROWS_AS(parse_config_text("schema = 2\n"), std::invalid_argument);
    }
}

TEST_CASE("anchor file parsing") {
    auto anchors = parse_anchors_text(read_file(std::string(APSIM_SOURCE_DIR) +
                                                "/data/published_anchors.txt"));
    auto ref = published_anchors();
    REQUIRE(anchors.retrieval.size() == ref.retrieval.size());
    CHECK(anchors.retrieval[0].value == ref.retrieval[0].value);
    CHECK(anchors.g2[1].value == ref.g2[1].value);
    CHECK(anchors.g2[1].sigma == ref.g2[1].sigma);
    CHECK(anchors.s_param[1].tau_us == ref.s_param[1].tau_us);
    CHECK(anchors.visibility_intercept == ref.visibility_intercept);
    CHECK_THROWS_AS(parse_anchors_text("bogus = 1\n"), std::invalid_argument);
    CHECK_THROWS_WITH(parse_anchors_text("g2 = 0.5;38\n"), Catch::Contains("line 1"));
}

TEST_CASE("record and settings CSV round-trip") {
    std::vector<ClickRecord> records{{0, 0, 5}, {1, 0, 0}, {2, 1, 15}};
    std::vector<std::pair<double, double>> settings{{0.0, 0.19634954084936207},
                                                    {0.78539816339744828, -0.5}};
    auto rec_csv = click_records_csv(records);
    auto set_csv = settings_map_csv(settings);
    auto records2 = parse_click_records_csv(rec_csv);
    auto settings2 = parse_settings_map_csv(set_csv);
    REQUIRE(records2.size() == records.size());
    CHECK(records2[2].pattern == 15);
    CHECK(records2[2].setting_id == 1);
    REQUIRE(settings2.size() == 2);
    CHECK(settings2[1].first == settings[1].first);  // lossless at full precision
    CHECK(settings2[0].second == settings[0].second);

    SECTION("malformed rows report the line number") {
        CHECK_THROWS_WITH(parse_click_records_csv("trial_index,setting_id,pattern\n1,2\n"),
                          Catch::Contains("line 2"));
        CHECK_THROWS_WITH(parse_click_records_csv("trial_index,setting_id,pattern\n1,0,99\n"),
                          Catch::Contains("line 2"));
        CHECK_THROWS_AS(parse_click_records_csv("wrong,header\n"), std::invalid_argument);
        CHECK_THROWS_AS(parse_click_records_csv("trial_index,setting_id,pattern\n"),
                        std::invalid_argument);
    }
}

TEST_CASE("sweep CSV emission") {
    VisibilitySweep sweep;
    sweep.points.push_back({1e-3, {0.923456789012345, 0.01, 100, true}});
    auto csv = visibility_sweep_csv(sweep);
    CHECK(csv.rfind("p_AS,V,V_err\n", 0) == 0);
    // lossless at 12 significant digits
    double v = 0.0;
    std::sscanf(csv.c_str() + csv.find('\n') + 1, "%*f,%lf", &v);
    CHECK(v == Approx(0.923456789012345).epsilon(1e-13));
}

TEST_CASE("cli simulate") {
    SECTION("vacuum source: defined flags off, exit 0") {
        auto r = run_cli("simulate --set chi_L=0 --set chi_R=0 --set n_max=2");
        REQUIRE(r.exit_code == 0);
        auto j = nlohmann::json::parse(r.out);
        CHECK_FALSE(j["results"]["g2"]["defined"].get<bool>());
        CHECK(j["results"]["p_AS"].get<double>() == 0.0);
    }
    SECTION("invalid config exits 2 and names the key") {
        auto r = run_cli("simulate --set eta_AS=1.5");
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("eta_AS") != std::string::npos);
    }
    SECTION("unknown key exits 2") {
        auto r = run_cli("simulate --set nonsense=1");
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("nonsense") != std::string::npos);
    }
    SECTION("operating-point summary carries the calibrated observables") {
        auto r = run_cli("simulate --config " + std::string(APSIM_SOURCE_DIR) +
                         "/configs/default.cfg --set n_max=4");
        REQUIRE(r.exit_code == 0);
        auto j = nlohmann::json::parse(r.out);
        CHECK(j["results"]["p_AS"].get<double>() == Approx(2e-3).epsilon(0.05));
        double s = j["results"]["S"]["value"].get<double>();
        CHECK(s > 2.45);
        CHECK(s < 2.75);
        CHECK(j["results"]["g2"]["value"].get<double>() > 10.0);
        CHECK(j["config"]["n_max"] == "4");  // echo reflects the override
    }
    SECTION("same config and seed give byte-identical output modulo timestamps") {
        auto d = (scratch_dir() / "rep").string();
        std::string args = "simulate --set n_max=3 --mode sampled --trials 20000 --seed 99 "
                           "--out-dir " + d;
        auto r1 = run_cli(args);
        auto records1 = slurp(fs::path(d) / "records.csv");
        auto r2 = run_cli(args);
        auto records2 = slurp(fs::path(d) / "records.csv");
        REQUIRE(r1.exit_code == 0);
        REQUIRE(r2.exit_code == 0);
        CHECK(without_timestamp(r1.out) == without_timestamp(r2.out));
        CHECK(records1 == records2);
        CHECK(!records1.empty());
    }
}

TEST_CASE("cli sweep") {
    SECTION("bell sweep: pinned columns, monotone S") {
        auto d = (scratch_dir() / "sweep").string();
        auto r = run_cli("sweep bell --set n_max=3 --grid 0.5:20.5:5 --out-dir " + d);
        REQUIRE(r.exit_code == 0);
        auto csv = slurp(fs::path(d) / "bell.csv");
        REQUIRE(csv.rfind("tau_us,S,S_err,sigma_violation\n", 0) == 0);
        std::stringstream ss(csv);
        std::string line;
        std::getline(ss, line);
        double prev = 10.0;
        int rows = 0;
        while (std::getline(ss, line)) {
            double tau = 0, s = 0;
            REQUIRE(std::sscanf(line.c_str(), "%lf,%lf", &tau, &s) == 2);
            CHECK(s <= prev + 1e-12);
            prev = s;
            ++rows;
        }
        CHECK(rows == 5);
    }
    SECTION("single-point visibility grid emits one data row") {
        auto d = (scratch_dir() / "vis1").string();
        auto r = run_cli("sweep visibility --set n_max=3 --grid 1e-3:1e-3:1 --out-dir " + d);
        REQUIRE(r.exit_code == 0);
        auto csv = slurp(fs::path(d) / "visibility.csv");
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);  // header + 1 row
    }
    SECTION("bell sweep default grid emits ten rows") {
        auto d = (scratch_dir() / "bell10").string();
        auto r = run_cli("sweep bell --set n_max=3 --out-dir " + d);
        REQUIRE(r.exit_code == 0);
        auto csv = slurp(fs::path(d) / "bell.csv");
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);  // header + 10 rows
    }
    SECTION("unknown kind exits 2") {
        auto r = run_cli("sweep nonsense");
        CHECK(r.exit_code == 2);
    }
}

TEST_CASE("cli analyze round-trip") {
    auto d = (scratch_dir() / "rt").string();
    auto sim = run_cli("simulate --set n_max=3 --mode sampled --trials 30000 --seed 5 "
                       "--out-dir " + d);
    REQUIRE(sim.exit_code == 0);
    auto an = run_cli("analyze --records " + d + "/records.csv --settings " + d +
                      "/settings.csv");
    REQUIRE(an.exit_code == 0);
    auto js = nlohmann::json::parse(sim.out)["results"];
    auto ja = nlohmann::json::parse(an.out)["results"];
    CHECK(js["g2"] == ja["g2"]);
    CHECK(js["S"] == ja["S"]);
    CHECK(js["E"] == ja["E"]);
    CHECK(js["visibility"] == ja["visibility"]);
    CHECK(js["p_AS"] == ja["p_AS"]);

    SECTION("empty and malformed files exit 2") {
        auto empty = scratch_dir() / "empty.csv";
        write_file(empty.string(), "");
        auto r = run_cli("analyze --records " + empty.string() + " --settings " + d +
                         "/settings.csv");
        CHECK(r.exit_code == 2);
        auto bad = scratch_dir() / "bad.csv";
        write_file(bad.string(), "trial_index,setting_id,pattern\n0,0,3\nnot,a,row,x\n");
        auto r2 = run_cli("analyze --records " + bad.string() + " --settings " + d +
                          "/settings.csv");
        CHECK(r2.exit_code == 2);
        CHECK(r2.err.find("line 3") != std::string::npos);
    }
    SECTION("hand-built perfectly correlated counts give E = 1") {
        auto recs = scratch_dir() / "hand_records.csv";
        auto sets = scratch_dir() / "hand_settings.csv";
        // 500 (AS+, S+) and 500 (AS-, S-) coincidences at one setting
        std::string text = "trial_index,setting_id,pattern\n";
        for (int i = 0; i < 500; ++i) text += std::to_string(i) + ",0,5\n";
        for (int i = 500; i < 1000; ++i) text += std::to_string(i) + ",0,10\n";
        write_file(recs.string(), text);
        write_file(sets.string(), "setting_id,theta_AS_rad,theta_S_rad\n0,0.1,0.2\n");
        auto r = run_cli("analyze --records " + recs.string() + " --settings " + sets.string());
        REQUIRE(r.exit_code == 0);
        auto j = nlohmann::json::parse(r.out);
        CHECK(j["settings"][0]["E"]["value"].get<double>() == Approx(1.0));
    }
}

TEST_CASE("cli calibrate") {
    SECTION("shipped anchors reproduce the default configuration") {
        auto r = run_cli("calibrate --anchors " + std::string(APSIM_SOURCE_DIR) +
                         "/data/published_anchors.txt --set n_max=4");
        REQUIRE(r.exit_code == 0);
        auto j = nlohmann::json::parse(r.out);
        RunConfig defaults;
        CHECK(j["calibration"]["memory_T_us"].get<double>() ==
              Approx(defaults.model.memory.T_us).epsilon(1e-12));
        CHECK(j["calibration"]["dephase_T_us"].get<double>() ==
              Approx(defaults.model.memory.dephase_T_us).epsilon(1e-5));
        CHECK(j["calibration"]["background_dark_prob_S"].get<double>() ==
              Approx(defaults.model.detector.dark_prob_S).epsilon(1e-5));
    }
    SECTION("insufficient anchors exit 2") {
        auto p = scratch_dir() / "insufficient.txt";
        write_file(p.string(), "retrieval = 0.5:0.122\ng2 = 0.5:38, 20.5:9.8\n"
                               "visibility_intercept = 0.95\n");
        auto r = run_cli("calibrate --anchors " + p.string() + " --set n_max=2");
        CHECK(r.exit_code == 2);
    }
    SECTION("infeasible anchors exit 3") {
        auto p = scratch_dir() / "infeasible.txt";
        write_file(p.string(), "retrieval = 0.5:0.122, 20.5:0.122\ng2 = 0.5:38, 20.5:9.8\n"
                               "visibility_intercept = 0.95\n");
        auto r = run_cli("calibrate --anchors " + p.string() + " --set n_max=2");
        CHECK(r.exit_code == 3);
    }
}
