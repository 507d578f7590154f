#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "canalnav/cli.hpp"
#include "canalnav/perception.hpp"
#include "canalnav/sysid.hpp"
#include "json.hpp"

using namespace canal;
namespace fs = std::filesystem;

namespace
{

struct Run
{
    int code;
    std::string out;
    std::string err;
};

Run cli(const std::vector<std::string> &args)
{
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string &name)
{
    const fs::path p = fs::temp_directory_path() / ("canalnav_test_cli_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path &p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream b;
    b << in.rdbuf();
    return b.str();
}

std::map<std::string, std::string> snapshot(const fs::path &dir)
{
    std::map<std::string, std::string> files;
    for (const auto &e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file())
            files[fs::relative(e.path(), dir).string()] = slurp(e.path());
    return files;
}

void write(const fs::path &p, const std::string &text)
{
    std::ofstream(p) << text;
}

const std::string kScenarios = CANAL_SCENARIO_DIR;
const std::string kFixtures = CANAL_FIXTURE_DIR;

} // namespace

TEST_CASE("usage errors exit with 1")
{
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"fly"}).code == kExitUsage);
    CHECK(cli({"simulate", "--out", scratch("u1").string()}).code == kExitUsage); // --config missing
    CHECK(cli({"simulate", "--config", kScenarios + "/straight_corridor.json"}).code == kExitUsage);
    CHECK(cli({"detect", "--out", scratch("u2").string(), "--seed", "abc"}).code == kExitUsage);
    const Run help = cli({"--help"});
    CHECK(help.code == kExitOk);
    CHECK(help.out.find("sysid") != std::string::npos);
    CHECK(cli({"--version"}).out == version_string() + "\n");
}

TEST_CASE("manifest is written first and records the run")
{
    const fs::path out = scratch("manifest");
    // Bad override: the run stops before any result but the manifest is there.
    const Run r = cli({"simulate", "--config", kScenarios + "/straight_corridor.json", "--out", out.string(),
                       "--controller", "autopilot"});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("autopilot") != std::string::npos);
    REQUIRE(fs::exists(out / "manifest.json"));
    CHECK_FALSE(fs::exists(out / "log.csv"));

    const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
    CHECK(m["command"] == "simulate");
    CHECK(m["version"] == version_string());
    CHECK(m["out_dir"] == out.string());
    CHECK(m["config_paths"][0] == kScenarios + "/straight_corridor.json");
}

TEST_CASE("unwritable output directory is a runtime failure")
{
    const fs::path base = scratch("blocked");
    fs::create_directories(base);
    write(base / "file", "x");
    const Run r = cli({"trials", "--out", (base / "file" / "sub").string()});
    CHECK(r.code == kExitRuntime);
    CHECK(r.err.find("output directory") != std::string::npos);
}

TEST_CASE("trials then sysid recovers the identifiable parameters")
{
    const fs::path tr = scratch("trials");
    REQUIRE(cli({"trials", "--out", tr.string(), "--seed", "4"}).code == kExitOk);
    for (const char *k : {"acceleration", "deceleration", "zigzag"})
        CHECK(fs::exists(tr / (std::string(k) + ".csv")));

    const fs::path out = scratch("sysid");
    const std::vector<std::string> args = {"sysid",   "--out",   out.string(),
                                           "--trial", (tr / "acceleration.csv").string(),
                                           "--trial", (tr / "deceleration.csv").string(),
                                           "--trial", (tr / "zigzag.csv").string()};
    const Run r = cli(args);
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const ParamSet fit = load_params((out / "params.txt").string());
    const ParamSet truth = canal_boat_params();

    // m11 is pinned at the 1700 kg dry mass; the data fix everything relative to it.
    const double k = 1700.0 / truth.m11;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
    CHECK(rel(fit.m11, 1700.0) < 1e-3);
    for (double (ParamSet::*f) : {&ParamSet::X_u, &ParamSet::X_uu, &ParamSet::c})
        CHECK(rel(fit.*f / fit.m11, truth.*f / truth.m11) < 1e-4);
    for (double (ParamSet::*f) : {&ParamSet::m22, &ParamSet::m33, &ParamSet::Y_v, &ParamSet::N_r, &ParamSet::Y_vv,
                                  &ParamSet::N_rr})
        CHECK(rel(fit.*f, k * (truth.*f)) < 0.1);
    CHECK(steady_speed(fit, 50.6) == doctest::Approx(steady_speed(truth, 50.6)).epsilon(1e-4));

    const auto report = nlohmann::json::parse(slurp(out / "report.json"));
    CHECK(report["surge"]["converged"] == true);
    CHECK(report["sway_yaw"]["converged"] == true);
    CHECK(report["trials"].size() == 3);
    CHECK(fs::exists(out / "residuals_2_zigzag.csv"));

    // Rerun into the same directory: every result byte-identical.
    const auto first = snapshot(out);
    REQUIRE(cli(args).code == kExitOk);
    const auto second = snapshot(out);
    for (const auto &[name, bytes] : first)
        if (name != "timing.json")
            CHECK_MESSAGE(second.at(name) == bytes, name);
}

TEST_CASE("sysid needs both trial kinds")
{
    const fs::path tr = scratch("trials_zz");
    write(scratch("cfg_zz").string() + ".json", R"({"kinds": ["zigzag"]})");
    REQUIRE(cli({"trials", "--out", tr.string(), "--config", scratch("cfg_zz").string() + ".json"}).code == kExitOk);
    CHECK_FALSE(fs::exists(tr / "acceleration.csv"));

    const Run zz = cli({"sysid", "--out", scratch("sysid_zz").string(), "--trial", (tr / "zigzag.csv").string()});
    CHECK(zz.code == kExitUsage);
    CHECK(zz.err.find("acceleration or deceleration") != std::string::npos);

    const fs::path acc = scratch("trials_acc");
    write(scratch("cfg_acc").string() + ".json", R"({"kinds": ["acceleration"]})");
    REQUIRE(cli({"trials", "--out", acc.string(), "--config", scratch("cfg_acc").string() + ".json"}).code == kExitOk);
    const Run a = cli({"sysid", "--out", scratch("sysid_acc").string(), "--trial", (acc / "acceleration.csv").string()});
    CHECK(a.code == kExitUsage);
    CHECK(a.err.find("zigzag") != std::string::npos);

    CHECK(cli({"sysid", "--out", scratch("sysid_none").string()}).code == kExitUsage);
    CHECK(cli({"sysid", "--out", scratch("sysid_missing").string(), "--trial", "/nonexistent.csv"}).code ==
          kExitUsage);
}

TEST_CASE("config schema errors name the key and line")
{
    const fs::path cfg = scratch("bad_cfg.json");
    write(cfg, "{\n  \"kinds\": [\"zigzag\"],\n  \"noise\": 1\n}\n");
    const Run r = cli({"trials", "--config", cfg.string(), "--out", scratch("bad_out").string()});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("/noise (line 3): unknown key") != std::string::npos);

    write(cfg, "{ \"kinds\": [\"zigzag\" }");
    const Run s = cli({"trials", "--config", cfg.string(), "--out", scratch("bad_out").string()});
    CHECK(s.code == kExitUsage);
    CHECK(s.err.find("JSON syntax") != std::string::npos);

    write(cfg, R"({"kinds": ["spiral"]})");
    CHECK(cli({"trials", "--config", cfg.string(), "--out", scratch("bad_out").string()}).code == kExitUsage);
}

TEST_CASE("simulate writes the result files and reports scenario errors")
{
    const fs::path out = scratch("simulate");
    const Run r = cli({"simulate", "--config", kScenarios + "/pohang_like.json", "--out", out.string()});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    for (const char *f : {"manifest.json", "scenario.json", "log.csv", "separation.csv", "metrics.json", "timing.csv",
                          "timing.json"})
        CHECK_MESSAGE(fs::exists(out / f), f);
    const auto m = nlohmann::json::parse(slurp(out / "metrics.json"));
    CHECK(m["collision"] == false);
    CHECK(m["termination"] == "completed");

    CHECK(cli({"simulate", "--config", "/nonexistent.json", "--out", scratch("sim_missing").string()}).code ==
          kExitUsage);

    const fs::path bad = scratch("bad_scenario.json");
    std::string text = slurp(kScenarios + "/straight_corridor.json");
    text.insert(text.find("\"duration\""), "\"durration\": 5,\n  ");
    write(bad, text);
    const Run e = cli({"simulate", "--config", bad.string(), "--out", scratch("sim_bad").string()});
    CHECK(e.code == kExitUsage);
    CHECK(e.err.find("/durration (line") != std::string::npos);
}

TEST_CASE("simulate seed override and rerun determinism")
{
    const fs::path out = scratch("sim_seed");
    const std::vector<std::string> args = {"simulate", "--config", kScenarios + "/straight_corridor.json", "--out",
                                           out.string(), "--seed", "77", "--perception", "sensor", "--duration", "20"};
    REQUIRE(cli(args).code == kExitOk);
    const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
    CHECK(m["seed"] == 77);
    CHECK(m["options"]["perception"] == "sensor");
    CHECK(nlohmann::json::parse(slurp(out / "scenario.json"))["seed"] == 77);

    const auto first = snapshot(out);
    REQUIRE(cli(args).code == kExitOk);
    const auto second = snapshot(out);
    for (const auto &[name, bytes] : first)
        if (name.rfind("timing", 0) != 0)
            CHECK_MESSAGE(second.at(name) == bytes, name);
}

TEST_CASE("compare always reports three rows")
{
    const fs::path out = scratch("compare");
    const Run r = cli({"compare", "--config", kScenarios + "/straight_corridor.json", "--out", out.string(),
                       "--duration", "20"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    std::istringstream table(slurp(out / "comparison.csv"));
    std::string line;
    std::vector<std::string> rows;
    std::getline(table, line);
    while (std::getline(table, line))
        rows.push_back(line);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].rfind("nmpc,ok,", 0) == 0);
    CHECK(rows[1].rfind("baseline1,ok,", 0) == 0);
    CHECK(rows[2].rfind("baseline2,ok,", 0) == 0);
    for (const char *c : {"nmpc", "baseline1", "baseline2"})
        CHECK(fs::exists(out / c / "log.csv"));

    CHECK(cli({"compare", "--config", kScenarios + "/straight_corridor.json", "--out", out.string(), "--controller",
               "nmpc"})
              .code == kExitUsage);
}

TEST_CASE("comparison records a failing controller and keeps the others")
{
    Scenario s = load_scenario(kScenarios + "/straight_corridor.json");
    s.duration = 5.0;
    const auto runner = [](const Scenario &sc) -> SimResult {
        if (sc.controller == ControllerKind::baseline1)
            throw std::runtime_error("planner exploded, badly");
        return run_closed_loop(sc);
    };
    const fs::path out = scratch("compare_fail");
    const auto rows = run_comparison(s, out.string(), runner);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].metrics.has_value());
    CHECK_FALSE(rows[1].metrics.has_value());
    CHECK(rows[1].error == "planner exploded, badly");
    CHECK(rows[2].metrics.has_value());
    CHECK_FALSE(fs::exists(out / "baseline1"));
    CHECK(fs::exists(out / "baseline2" / "metrics.json"));

    std::ostringstream table;
    write_comparison_csv(table, rows);
    std::istringstream in(table.str());
    std::string header, line;
    std::getline(in, header);
    const auto columns = std::count(header.begin(), header.end(), ',');
    int n = 0;
    while (std::getline(in, line))
    {
        ++n;
        CHECK(std::count(line.begin(), line.end(), ',') == columns);
    }
    CHECK(n == 3);
    CHECK(table.str().find("baseline1,error: planner exploded; badly,") != std::string::npos);
}

TEST_CASE("detect finds the corridor walls and warns on an empty cloud")
{
    const fs::path out = scratch("detect");
    const std::string cloud = kFixtures + "/corridor_cloud.csv";
    const Run r = cli({"detect", "--cloud", cloud, "--out", out.string(), "--pgm"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    std::istringstream in(slurp(out / "segments.csv"));
    const auto segs = read_segments_csv(in);
    REQUIRE(segs.size() == 2);
    for (const LineSegment &s : segs)
    {
        CHECK(std::abs(std::sin(s.theta)) < std::sin(deg2rad(2.0)));
        CHECK(std::abs(std::abs(s.y_c) - 7.5) < 0.2);
    }
    CHECK(slurp(out / "grid.pgm").rfind("P2", 0) == 0);

    const auto first = snapshot(out);
    REQUIRE(cli({"detect", "--cloud", cloud, "--out", out.string(), "--pgm"}).code == kExitOk);
    CHECK(snapshot(out) == first);

    const fs::path cfg = scratch("detect_high.json");
    write(cfg, R"({"filter": {"z_min": 10.0, "z_max": 12.0}})");
    const fs::path out2 = scratch("detect_empty");
    const Run e = cli({"detect", "--cloud", cloud, "--config", cfg.string(), "--out", out2.string()});
    CHECK(e.code == kExitOk);
    CHECK(e.err.find("warning") != std::string::npos);
    CHECK(slurp(out2 / "segments.csv") == "x_c,y_c,theta,l\n");

    CHECK(cli({"detect", "--out", scratch("detect_none").string()}).code == kExitUsage);
}
