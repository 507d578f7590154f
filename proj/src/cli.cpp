#include "canalnav/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iomanip>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "canalnav/perception.hpp"
#include "canalnav/sim.hpp"
#include "canalnav/sysid.hpp"
#include "json_reader.hpp"

#ifndef CANALNAV_VERSION
#define CANALNAV_VERSION "0.0.0-unknown"
#endif

namespace canal
{

namespace fs = std::filesystem;

namespace
{

using Reader = JsonReader<ConfigError>;
using Clock = std::chrono::steady_clock;

struct Common
{
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_given = false;
    bool verbose = false;
};

class Log
{
public:
    Log(std::ostream &out, std::ostream &err, bool verbose) : out_(out), err_(err), verbose_(verbose) {}

    void info(const std::string &msg) const { out_ << msg << '\n'; }
    void detail(const std::string &msg) const
    {
        if (verbose_)
            err_ << "[canalnav] " << msg << '\n';
    }
    void warn(const std::string &msg) const { err_ << "warning: " << msg << '\n'; }

private:
    std::ostream &out_;
    std::ostream &err_;
    bool verbose_;
};

std::string read_text(const std::string &path, const char *what)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw UsageError(std::string("cannot open ") + what + " '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path &path, const std::function<void(std::ostream &)> &body)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot write '" + path.string() + "'");
    body(os);
    os.close();
    if (!os)
        throw std::runtime_error("write failed for '" + path.string() + "'");
}

void write_text(const fs::path &path, const std::string &text)
{
    write_file(path, [&](std::ostream &os) { os << text; });
}

fs::path prepare_out_dir(const std::string &out)
{
    const fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw std::runtime_error("cannot create output directory '" + out + "'");
    return dir;
}

// Paths inside a config file are relative to the file's directory.
std::string resolve(const std::string &config_path, const std::string &p)
{
    const fs::path q(p);
    if (q.is_absolute() || config_path.empty())
        return q.string();
    return (fs::path(config_path).parent_path() / q).lexically_normal().string();
}

nlohmann::ordered_json parse_config(const std::string &text, const std::string &path)
{
    try
    {
        return nlohmann::ordered_json::parse(text);
    }
    catch (const nlohmann::json::parse_error &e)
    {
        throw ConfigError(path + ": JSON syntax: " + e.what());
    }
}

// Rethrows reader errors with the file name in front.
template <class F> auto with_file(const std::string &path, F &&f)
{
    try
    {
        return f();
    }
    catch (const ConfigError &e)
    {
        throw ConfigError(path + ": " + e.what());
    }
}

std::string num(double v)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

nlohmann::ordered_json vec6_json(const Vec6 &v)
{
    auto a = nlohmann::ordered_json::array();
    for (int i = 0; i < 6; ++i)
        a.push_back(v[i]);
    return a;
}

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

RunManifest manifest_for(const std::string &command, const Common &c, std::uint64_t seed)
{
    RunManifest m;
    m.command = command;
    if (!c.config.empty())
        m.config_paths.push_back(c.config);
    m.out_dir = c.out;
    m.seed = seed;
    m.version = version_string();
    return m;
}

void add_common(CLI::App *sub, Common &c, bool config_required)
{
    auto *cfg = sub->add_option("--config", c.config, "JSON config file");
    if (config_required)
        cfg->required();
    sub->add_option("--out", c.out, "output directory (created if missing)")->required();
    sub->add_option("--seed", c.seed, "random seed")->each([&c](const std::string &) { c.seed_given = true; });
    sub->add_flag("--verbose", c.verbose, "progress messages on stderr");
}

// ---------------------------------------------------------------------------
// trials

struct TrialsOptions
{
    ParamSet params = canal_boat_params();
    Vec6 noise = Vec6::Zero();
    std::vector<TrialKind> kinds{TrialKind::acceleration, TrialKind::deceleration, TrialKind::zigzag};
};

TrialsOptions read_trials_config(const std::string &path)
{
    TrialsOptions o;
    if (path.empty())
        return o;
    const std::string text = read_text(path, "config");
    const auto j = parse_config(text, path);
    return with_file(path, [&] {
        const Reader rd(text);
        rd.object(j, {});
        rd.allow_keys(j, {}, {"params_file", "noise_std", "kinds"});
        if (j.contains("params_file"))
        {
            const std::string p = resolve(path, rd.string(j["params_file"], {"params_file"}));
            try
            {
                o.params = load_params(p);
            }
            catch (const std::exception &e)
            {
                rd.fail({"params_file"}, e.what());
            }
        }
        if (j.contains("noise_std"))
            o.noise = rd.vector<6>(j["noise_std"], {"noise_std"});
        if (j.contains("kinds"))
        {
            if (!j["kinds"].is_array() || j["kinds"].empty())
                rd.fail({"kinds"}, "expected a non-empty array of trial kinds");
            o.kinds.clear();
            for (std::size_t i = 0; i < j["kinds"].size(); ++i)
            {
                const std::vector<std::string> kp = {"kinds", "[" + std::to_string(i) + "]"};
                try
                {
                    o.kinds.push_back(parse_trial_kind(rd.string(j["kinds"][i], kp)));
                }
                catch (const ParseError &e)
                {
                    rd.fail(kp, e.what());
                }
            }
        }
        if ((o.noise.array() < 0.0).any())
            rd.fail({"noise_std"}, "standard deviations must be >= 0");
        return o;
    });
}

int cmd_trials(const Common &c, const Log &log)
{
    const fs::path dir = prepare_out_dir(c.out);
    RunManifest m = manifest_for("trials", c, c.seed);
    write_text(dir / "manifest.json", manifest_to_json(m));

    const TrialsOptions o = read_trials_config(c.config);
    o.params.validate();
    save_params((dir / "truth_params.txt").string(), o.params);
    for (std::size_t i = 0; i < o.kinds.size(); ++i)
    {
        const TrialKind kind = o.kinds[i];
        TrialSpec spec;
        switch (kind)
        {
        case TrialKind::acceleration: spec = TrialSpec::acceleration(); break;
        case TrialKind::deceleration: spec = TrialSpec::deceleration(); break;
        case TrialKind::zigzag: spec = TrialSpec::zigzag(); break;
        }
        // One seed per trial so adding a kind does not change the others.
        const TrialDataset d = generate_trial(spec, o.params, o.noise, c.seed + static_cast<std::uint64_t>(kind));
        const std::string name = std::string(to_string(kind)) + ".csv";
        save_trial_csv((dir / name).string(), d);
        log.detail("wrote " + name + " (" + std::to_string(d.num_steps()) + " steps)");
    }
    log.info("trials: wrote " + std::to_string(o.kinds.size()) + " trial(s) to " + c.out);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sysid

struct SysIdOptions
{
    std::vector<std::string> trials;
    double m11 = 1700.0; // dry mass, kg
    std::optional<std::string> initial_guess;
    int max_iters = 200;
    int segment_length = 50;
    double l_y = canal_boat_params().l_y;
    double delta_max = canal_boat_params().delta_max;
};

SysIdOptions read_sysid_config(const std::string &path)
{
    SysIdOptions o;
    if (path.empty())
        return o;
    const std::string text = read_text(path, "config");
    const auto j = parse_config(text, path);
    return with_file(path, [&] {
        const Reader rd(text);
        rd.object(j, {});
        rd.allow_keys(j, {}, {"trials", "m11", "initial_guess", "max_iters", "segment_length", "l_y", "delta_max_deg"});
        if (j.contains("trials"))
        {
            if (!j["trials"].is_array())
                rd.fail({"trials"}, "expected an array of CSV paths");
            for (std::size_t i = 0; i < j["trials"].size(); ++i)
                o.trials.push_back(resolve(path, rd.string(j["trials"][i], {"trials", "[" + std::to_string(i) + "]"})));
        }
        rd.opt(j, {}, "m11", o.m11);
        if (j.contains("initial_guess"))
            o.initial_guess = resolve(path, rd.string(j["initial_guess"], {"initial_guess"}));
        rd.opt(j, {}, "max_iters", o.max_iters);
        rd.opt(j, {}, "segment_length", o.segment_length);
        rd.opt(j, {}, "l_y", o.l_y);
        if (j.contains("delta_max_deg"))
            o.delta_max = deg2rad(rd.number(j["delta_max_deg"], {"delta_max_deg"}));
        if (!(o.m11 > 0.0))
            rd.fail({"m11"}, "must be > 0");
        if (o.max_iters < 1)
            rd.fail({"max_iters"}, "must be >= 1");
        if (o.segment_length < 1)
            rd.fail({"segment_length"}, "must be >= 1");
        return o;
    });
}

nlohmann::ordered_json report_json(const SysIdReport &r)
{
    return {
        {"converged", r.converged},   {"iterations", r.iterations}, {"initial_cost", r.initial_cost},
        {"final_cost", r.final_cost}, {"rms", vec6_json(r.rms)},
    };
}

int cmd_sysid(const Common &c, const std::vector<std::string> &cli_trials, const Log &log)
{
    SysIdOptions o = read_sysid_config(c.config);
    o.trials.insert(o.trials.end(), cli_trials.begin(), cli_trials.end());
    if (o.trials.empty())
        throw UsageError("sysid needs trial CSVs (--trial or \"trials\" in --config)");

    std::vector<TrialDataset> surge, zigzag;
    std::vector<TrialDataset> all;
    all.reserve(o.trials.size());
    for (const std::string &p : o.trials)
    {
        try
        {
            all.push_back(load_trial_csv(p));
        }
        catch (const std::exception &e)
        {
            throw UsageError("trial '" + p + "': " + e.what());
        }
    }
    for (const TrialDataset &d : all)
        (d.kind == TrialKind::zigzag ? zigzag : surge).push_back(d);
    if (surge.empty())
        throw UsageError("sysid needs at least one acceleration or deceleration trial; surge parameters are "
                         "identified from straight-line speed changes");
    if (zigzag.empty())
        throw UsageError("sysid needs at least one zigzag trial; sway-yaw parameters are identified from turning data");

    const fs::path dir = prepare_out_dir(c.out);
    RunManifest m = manifest_for("sysid", c, c.seed);
    m.inputs = o.trials;
    m.options = {{"m11", num(o.m11)},
                 {"max_iters", std::to_string(o.max_iters)},
                 {"segment_length", std::to_string(o.segment_length)}};
    if (o.initial_guess)
        m.options.emplace_back("initial_guess", *o.initial_guess);
    write_text(dir / "manifest.json", manifest_to_json(m));

    ParamSet guess;
    if (o.initial_guess)
        guess = load_params(*o.initial_guess);
    else
    {
        log.detail("equation-error initial guess with m11 = " + num(o.m11));
        guess = equation_error_guess(surge, zigzag, o.m11, o.l_y, o.delta_max);
    }
    save_params((dir / "initial_guess.txt").string(), guess);

    SysIdConfig sc = SysIdConfig::surge(guess);
    sc.max_iters = o.max_iters;
    sc.segment_length = o.segment_length;
    log.detail("surge fit on " + std::to_string(surge.size()) + " trial(s)");
    const SysIdReport rs = identify_surge(surge, sc);

    SysIdConfig yc = SysIdConfig::sway_yaw(rs.fitted);
    yc.max_iters = o.max_iters;
    yc.segment_length = o.segment_length;
    log.detail("sway-yaw fit on " + std::to_string(zigzag.size()) + " trial(s)");
    const SysIdReport ry = identify_sway_yaw(zigzag, rs.fitted, yc);

    save_params((dir / "params.txt").string(), ry.fitted);

    nlohmann::ordered_json trials = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < all.size(); ++i)
    {
        const std::string name = "residuals_" + std::to_string(i) + "_" + std::string(to_string(all[i].kind)) + ".csv";
        const ResidualTrace tr = sysid_residuals(ry.fitted, all[i], o.segment_length);
        write_file(dir / name, [&](std::ostream &os) { write_residual_csv(os, tr); });
        trials.push_back({{"path", o.trials[i]},
                          {"kind", std::string(to_string(all[i].kind))},
                          {"steps", all[i].num_steps()},
                          {"residuals", name}});
    }
    const nlohmann::ordered_json report = {
        {"surge", report_json(rs)},
        {"sway_yaw", report_json(ry)},
        {"trials", trials},
    };
    write_text(dir / "report.json", report.dump(2) + "\n");
    const nlohmann::ordered_json timing = {{"surge_runtime", rs.runtime}, {"sway_yaw_runtime", ry.runtime}};
    write_text(dir / "timing.json", timing.dump(2) + "\n");

    if (!rs.converged)
        log.warn("surge fit did not converge in " + std::to_string(rs.iterations) + " iterations");
    if (!ry.converged)
        log.warn("sway-yaw fit did not converge in " + std::to_string(ry.iterations) + " iterations");
    log.info("sysid: surge cost " + num(rs.final_cost) + ", sway-yaw cost " + num(ry.final_cost) + "; params in " +
             (dir / "params.txt").string());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate / compare

struct SimOverrides
{
    std::string controller;
    std::string perception;
    double duration = 0.0;
};

Scenario load_with_overrides(const Common &c, const SimOverrides &ov, RunManifest &m)
{
    Scenario s;
    try
    {
        s = load_scenario(c.config);
    }
    catch (const ScenarioError &e)
    {
        throw UsageError(e.what());
    }
    if (c.seed_given)
        s.seed = c.seed;
    try
    {
        if (!ov.controller.empty())
        {
            s.controller = parse_controller(ov.controller);
            m.options.emplace_back("controller", ov.controller);
        }
        if (!ov.perception.empty())
        {
            s.perception = parse_perception_mode(ov.perception);
            m.options.emplace_back("perception", ov.perception);
        }
        if (ov.duration > 0.0)
        {
            s.duration = ov.duration;
            m.options.emplace_back("duration", num(ov.duration));
        }
        s.validate();
    }
    catch (const ScenarioError &e)
    {
        throw UsageError(e.what());
    }
    m.seed = s.seed;
    return s;
}

void write_sim_outputs(const fs::path &dir, const Scenario &s, const SimResult &r)
{
    write_text(dir / "scenario.json", scenario_to_json(s));
    write_file(dir / "log.csv", [&](std::ostream &os) { write_log_csv(os, r.log); });
    write_file(dir / "separation.csv", [&](std::ostream &os) { write_separation_csv(os, r.log); });
    write_text(dir / "metrics.json", metrics_to_json(r.metrics));
    write_file(dir / "timing.csv", [&](std::ostream &os) { write_timing_csv(os, r.log); });
    write_text(dir / "timing.json", timing_to_json(r.metrics));
}

std::string summary(const Metrics &m)
{
    return "min separation " + num(m.min_separation) + " m, J_c " + num(m.control_effort) + ", cross-track RMS " +
           num(m.cross_track_rms) + " m, " + std::string(to_string(m.termination)) +
           (m.collision ? " (COLLISION)" : "");
}

int cmd_simulate(const Common &c, const SimOverrides &ov, const Log &log)
{
    const fs::path dir = prepare_out_dir(c.out);
    RunManifest m = manifest_for("simulate", c, c.seed);
    // The manifest goes out before the scenario is read; it is rewritten with
    // the effective seed and overrides once they are known.
    write_text(dir / "manifest.json", manifest_to_json(m));
    const Scenario s = load_with_overrides(c, ov, m);
    write_text(dir / "manifest.json", manifest_to_json(m));

    log.detail("simulating '" + s.name + "' with " + std::string(to_string(s.controller)));
    const SimResult r = run_closed_loop(s);
    write_sim_outputs(dir, s, r);
    if (!r.log.diagnostics.empty())
        log.detail(r.log.diagnostics);
    log.info("simulate " + std::string(to_string(s.controller)) + ": " + summary(r.metrics));
    return kExitOk;
}

int cmd_compare(const Common &c, const SimOverrides &ov, const Log &log)
{
    const fs::path dir = prepare_out_dir(c.out);
    RunManifest m = manifest_for("compare", c, c.seed);
    write_text(dir / "manifest.json", manifest_to_json(m));
    if (!ov.controller.empty())
        throw UsageError("compare always runs all three controllers; drop --controller");
    const Scenario base = load_with_overrides(c, ov, m);
    write_text(dir / "manifest.json", manifest_to_json(m));

    log.detail("running nmpc, baseline1 and baseline2 on '" + base.name + "'");
    const std::vector<ComparisonRow> rows = run_comparison(base, c.out);
    write_file(dir / "comparison.csv", [&](std::ostream &os) { write_comparison_csv(os, rows); });
    write_file(dir / "comparison_timing.csv", [&](std::ostream &os) { write_comparison_timing_csv(os, rows); });
    int failures = 0;
    for (const ComparisonRow &row : rows)
    {
        const std::string name(to_string(row.controller));
        if (row.metrics)
            log.info(name + ": " + summary(*row.metrics));
        else
        {
            ++failures;
            log.warn(name + " failed: " + row.error);
        }
    }
    if (failures > 0)
    {
        log.warn(std::to_string(failures) + " controller run(s) failed; see comparison.csv");
        return kExitRuntime;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// detect

struct DetectOptions
{
    DetectionConfig detection;
    std::string cloud;
};

DetectOptions read_detect_config(const std::string &path)
{
    DetectOptions o;
    if (path.empty())
        return o;
    const std::string text = read_text(path, "config");
    const auto j = parse_config(text, path);
    return with_file(path, [&] {
        const Reader rd(text);
        rd.object(j, {});
        rd.allow_keys(j, {}, {"cloud", "filter", "grid_resolution", "grid_extent", "hough"});
        if (j.contains("cloud"))
            o.cloud = resolve(path, rd.string(j["cloud"], {"cloud"}));
        DetectionConfig &d = o.detection;
        rd.opt(j, {}, "grid_resolution", d.grid_resolution);
        rd.opt(j, {}, "grid_extent", d.grid_extent);
        if (j.contains("filter"))
        {
            const std::vector<std::string> fp = {"filter"};
            const auto &fj = rd.object(j["filter"], fp);
            rd.allow_keys(fj, fp, {"z_min", "z_max", "x_min", "x_max", "y_min", "y_max", "keepout"});
            FilterSpec &f = d.filter;
            rd.opt(fj, fp, "z_min", f.z_min);
            rd.opt(fj, fp, "z_max", f.z_max);
            rd.opt(fj, fp, "x_min", f.x_min);
            rd.opt(fj, fp, "x_max", f.x_max);
            rd.opt(fj, fp, "y_min", f.y_min);
            rd.opt(fj, fp, "y_max", f.y_max);
            if (fj.contains("keepout"))
            {
                const auto kp = Reader::sub(fp, "keepout");
                const auto &kj = rd.object(fj["keepout"], kp);
                rd.allow_keys(kj, kp, {"enabled", "x_min", "x_max", "y_min", "y_max"});
                if (kj.contains("enabled"))
                {
                    if (!kj["enabled"].is_boolean())
                        rd.fail(Reader::sub(kp, "enabled"), "expected true or false");
                    f.keepout_enabled = kj["enabled"].get<bool>();
                }
                rd.opt(kj, kp, "x_min", f.keepout_x_min);
                rd.opt(kj, kp, "x_max", f.keepout_x_max);
                rd.opt(kj, kp, "y_min", f.keepout_y_min);
                rd.opt(kj, kp, "y_max", f.keepout_y_max);
            }
        }
        if (j.contains("hough"))
        {
            const std::vector<std::string> hp = {"hough"};
            const auto &hj = rd.object(j["hough"], hp);
            rd.allow_keys(hj, hp, {"theta_bins", "rho_resolution", "vote_threshold", "max_gap", "min_length"});
            rd.opt(hj, hp, "theta_bins", d.hough.theta_bins);
            rd.opt(hj, hp, "rho_resolution", d.hough.rho_resolution);
            rd.opt(hj, hp, "vote_threshold", d.hough.vote_threshold);
            rd.opt(hj, hp, "max_gap", d.hough.max_gap);
            rd.opt(hj, hp, "min_length", d.hough.min_length);
        }
        try
        {
            d.filter.validate();
            d.hough.validate();
            if (!(d.grid_resolution > 0.0) || !(d.grid_extent > d.grid_resolution))
                throw std::invalid_argument("need 0 < grid_resolution < grid_extent");
        }
        catch (const std::invalid_argument &e)
        {
            rd.fail({}, e.what());
        }
        return o;
    });
}

int cmd_detect(const Common &c, const std::string &cli_cloud, bool pgm, const Log &log)
{
    DetectOptions o = read_detect_config(c.config);
    if (!cli_cloud.empty())
        o.cloud = cli_cloud;
    if (o.cloud.empty())
        throw UsageError("detect needs a point cloud (--cloud or \"cloud\" in --config)");

    const fs::path dir = prepare_out_dir(c.out);
    RunManifest m = manifest_for("detect", c, c.seed);
    m.inputs = {o.cloud};
    if (pgm)
        m.options.emplace_back("pgm", "true");
    write_text(dir / "manifest.json", manifest_to_json(m));

    PointCloud cloud;
    try
    {
        cloud = load_cloud_csv(o.cloud);
    }
    catch (const std::exception &e)
    {
        throw UsageError("cloud '" + o.cloud + "': " + e.what());
    }
    const PointCloud kept = filter_points(cloud, o.detection.filter);
    log.detail(std::to_string(kept.points.size()) + " of " + std::to_string(cloud.points.size()) +
               " points pass the filter");
    if (kept.points.empty())
        log.warn("no points left after filtering; writing an empty segment file");
    const std::vector<LineSegment> segs = detect_segments(cloud, o.detection);
    write_file(dir / "segments.csv", [&](std::ostream &os) { write_segments_csv(os, segs); });
    if (pgm)
    {
        const OccupancyGrid grid = rasterize(kept, o.detection.grid_resolution, o.detection.grid_extent);
        write_file(dir / "grid.pgm", [&](std::ostream &os) { write_pgm(os, grid); });
    }
    log.info("detect: " + std::to_string(segs.size()) + " segment(s) in " + (dir / "segments.csv").string());
    return kExitOk;
}

} // namespace

std::vector<ComparisonRow> run_comparison(const Scenario &scenario, const std::string &out_dir,
                                          const ScenarioRunner &runner)
{
    const std::array<ControllerKind, 3> kinds{ControllerKind::nmpc, ControllerKind::baseline1,
                                              ControllerKind::baseline2};
    std::vector<std::future<ComparisonRow>> jobs;
    for (ControllerKind k : kinds)
        jobs.push_back(std::async(std::launch::async, [&, k] {
            ComparisonRow row;
            row.controller = k;
            const auto t0 = Clock::now();
            try
            {
                Scenario s = scenario;
                s.controller = k;
                const SimResult r = runner(s);
                if (!out_dir.empty())
                {
                    const fs::path sub = fs::path(out_dir) / std::string(to_string(k));
                    fs::create_directories(sub);
                    write_sim_outputs(sub, s, r);
                }
                row.metrics = r.metrics;
            }
            catch (const std::exception &e)
            {
                row.error = e.what();
            }
            row.wall_time = seconds_since(t0);
            return row;
        }));
    std::vector<ComparisonRow> rows;
    for (auto &f : jobs)
        rows.push_back(f.get());
    return rows;
}

void write_comparison_csv(std::ostream &os, const std::vector<ComparisonRow> &rows)
{
    std::ostringstream b;
    b << "controller,status,min_separation,min_separation_bow,min_separation_stern,p5_separation,"
         "control_effort,cross_track_rms,cross_track_rms_steady,constraint_violation_time,collision,"
         "termination,solver_failures,infeasible_plans\n";
    for (const ComparisonRow &row : rows)
    {
        b << to_string(row.controller) << ',';
        if (!row.metrics)
        {
            std::string msg = row.error;
            for (char &ch : msg)
                if (ch == ',' || ch == '\n')
                    ch = ';';
            b << "error: " << msg << ",,,,,,,,,,,,\n";
            continue;
        }
        const Metrics &m = *row.metrics;
        b << "ok," << num(m.min_separation) << ',' << num(m.min_separation_bow) << ','
          << num(m.min_separation_stern) << ',' << num(m.p5_separation) << ',' << num(m.control_effort) << ','
          << num(m.cross_track_rms) << ',' << num(m.cross_track_rms_steady) << ','
          << num(m.constraint_violation_time) << ',' << (m.collision ? "true" : "false") << ','
          << to_string(m.termination) << ',' << m.solver_failures << ',' << m.infeasible_plans << '\n';
    }
    os << b.str();
}

void write_comparison_timing_csv(std::ostream &os, const std::vector<ComparisonRow> &rows)
{
    std::ostringstream b;
    b << "controller,mean_solve_time,max_solve_time,wall_time\n";
    for (const ComparisonRow &row : rows)
    {
        b << to_string(row.controller) << ',';
        if (row.metrics)
            b << num(row.metrics->mean_solve_time) << ',' << num(row.metrics->max_solve_time);
        else
            b << ',';
        b << ',' << num(row.wall_time) << '\n';
    }
    os << b.str();
}

std::string version_string()
{
    return CANALNAV_VERSION;
}

std::string manifest_to_json(const RunManifest &m)
{
    nlohmann::ordered_json options = nlohmann::ordered_json::object();
    for (const auto &[k, v] : m.options)
        options[k] = v;
    const nlohmann::ordered_json j = {
        {"command", m.command}, {"version", m.version}, {"config_paths", m.config_paths}, {"inputs", m.inputs},
        {"out_dir", m.out_dir}, {"seed", m.seed},       {"options", options},
    };
    return j.dump(2) + "\n";
}

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err)
{
    CLI::App app{"Canal navigation toolkit: system identification, perception and closed-loop simulation", "canalnav"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1);

    Common common;
    std::vector<std::string> trials;
    std::string cloud;
    bool pgm = false;
    SimOverrides ov;

    auto *trials_cmd = app.add_subcommand("trials", "generate synthetic identification trials");
    add_common(trials_cmd, common, false);

    auto *sysid_cmd = app.add_subcommand("sysid", "identify model parameters from trial CSVs");
    add_common(sysid_cmd, common, false);
    sysid_cmd->add_option("--trial", trials, "trial CSV (repeatable)");

    auto *sim_cmd = app.add_subcommand("simulate", "closed-loop run of one scenario");
    add_common(sim_cmd, common, true);
    sim_cmd->add_option("--controller", ov.controller, "nmpc | baseline1 | baseline2");
    sim_cmd->add_option("--perception", ov.perception, "precise | sensor");
    sim_cmd->add_option("--duration", ov.duration, "override the scenario duration (s)");

    auto *cmp_cmd = app.add_subcommand("compare", "run all three controllers on one scenario");
    add_common(cmp_cmd, common, true);
    cmp_cmd->add_option("--perception", ov.perception, "precise | sensor");
    cmp_cmd->add_option("--duration", ov.duration, "override the scenario duration (s)");

    auto *det_cmd = app.add_subcommand("detect", "line segments from a point cloud CSV");
    add_common(det_cmd, common, false);
    det_cmd->add_option("--cloud", cloud, "point cloud CSV (x,y,z)");
    det_cmd->add_flag("--pgm", pgm, "also write the occupancy grid as grid.pgm");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp &)
    {
        out << app.help();
        return kExitOk;
    }
    catch (const CLI::CallForVersion &)
    {
        out << version_string() << '\n';
        return kExitOk;
    }
    catch (const CLI::ParseError &e)
    {
        err << "error: " << e.what() << "\n" << "run 'canalnav --help' for usage\n";
        return kExitUsage;
    }

    const Log log(out, err, common.verbose);
    try
    {
        if (*trials_cmd)
            return cmd_trials(common, log);
        if (*sysid_cmd)
            return cmd_sysid(common, trials, log);
        if (*sim_cmd)
            return cmd_simulate(common, ov, log);
        if (*cmp_cmd)
            return cmd_compare(common, ov, log);
        if (*det_cmd)
            return cmd_detect(common, cloud, pgm, log);
    }
    catch (const UsageError &e)
    {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    catch (const ConfigError &e)
    {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    catch (const std::exception &e)
    {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err)
{
    std::vector<const char *> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("canalnav");
    for (const std::string &a : args)
        argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace canal
