#include "canalnav/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "json_reader.hpp"

namespace canal
{


std::string_view to_string(ControllerKind c)
{
    switch (c)
    {
    case ControllerKind::nmpc: return "nmpc";
    case ControllerKind::baseline1: return "baseline1";
    case ControllerKind::baseline2: return "baseline2";
    }
    return "?";
}

ControllerKind parse_controller(std::string_view s)
{
    if (s == "nmpc")
        return ControllerKind::nmpc;
    if (s == "baseline1")
        return ControllerKind::baseline1;
    if (s == "baseline2")
        return ControllerKind::baseline2;
    throw ScenarioError("unknown controller '" + std::string(s) + "' (expected nmpc, baseline1 or baseline2)");
}

std::string_view to_string(PerceptionMode m)
{
    return m == PerceptionMode::precise ? "precise" : "sensor";
}

PerceptionMode parse_perception_mode(std::string_view s)
{
    if (s == "precise")
        return PerceptionMode::precise;
    if (s == "sensor")
        return PerceptionMode::sensor;
    throw ScenarioError("unknown perception mode '" + std::string(s) + "' (expected precise or sensor)");
}

std::string_view to_string(TickStatus s)
{
    switch (s)
    {
    case TickStatus::ok: return "ok";
    case TickStatus::solver_failure: return "solver_failure";
    case TickStatus::plan_infeasible: return "plan_infeasible";
    }
    return "?";
}

std::string_view to_string(Termination t)
{
    switch (t)
    {
    case Termination::completed: return "completed";
    case Termination::duration: return "duration";
    case Termination::collision: return "collision";
    }
    return "?";
}

void SensorSpec::validate() const
{
    if (!(range_min >= 0.0 && range_max > range_min))
        throw ScenarioError("sensor: need 0 <= range_min < range_max");
    if (!(resolution_deg > 0.0 && resolution_deg <= 90.0))
        throw ScenarioError("sensor: resolution_deg must be in (0, 90]");
    if (!(noise_std >= 0.0))
        throw ScenarioError("sensor: noise_std must be >= 0");
    if (!(z_max >= z_min))
        throw ScenarioError("sensor: z_max must be >= z_min");
}

namespace
{
constexpr double kViolationTolerance = 0.01; // m

double cross(const Vec2 &a, const Vec2 &b)
{
    return a.x() * b.y() - a.y() * b.x();
}

// Closed segments p1p2 and q1q2 share a point.
bool segments_intersect(const Vec2 &p1, const Vec2 &p2, const Vec2 &q1, const Vec2 &q2)
{
    const double d1 = cross(q2 - q1, p1 - q1);
    const double d2 = cross(q2 - q1, p2 - q1);
    const double d3 = cross(p2 - p1, q1 - p1);
    const double d4 = cross(p2 - p1, q2 - p1);
    if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
        return true;
    auto on = [](const Vec2 &a, const Vec2 &b, const Vec2 &p, double d) {
        return d == 0.0 && p.x() >= std::min(a.x(), b.x()) && p.x() <= std::max(a.x(), b.x()) &&
               p.y() >= std::min(a.y(), b.y()) && p.y() <= std::max(a.y(), b.y());
    };
    return on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4);
}
} // namespace

std::vector<LineSegment> Scenario::wall_segments() const
{
    std::vector<LineSegment> out;
    for (const Wall &w : walls)
        for (std::size_t i = 0; i + 1 < w.points.size(); ++i)
            if ((w.points[i + 1] - w.points[i]).norm() > 0.0)
                out.push_back(LineSegment::from_endpoints(w.points[i], w.points[i + 1]));
    return out;
}

std::vector<LineSegment> Scenario::wall_chunks() const
{
    std::vector<LineSegment> out;
    for (const Wall &w : walls)
        for (std::size_t i = 0; i + 1 < w.points.size(); ++i)
        {
            const Vec2 a = w.points[i];
            const Vec2 b = w.points[i + 1];
            const double len = (b - a).norm();
            if (len <= 0.0)
                continue;
            const int pieces = std::max(1, static_cast<int>(std::ceil(len / wall_chunk - 1e-9)));
            for (int k = 0; k < pieces; ++k)
                out.push_back(LineSegment::from_endpoints(a + (b - a) * (static_cast<double>(k) / pieces),
                                                          a + (b - a) * (static_cast<double>(k + 1) / pieces)));
        }
    return out;
}

void Scenario::validate() const
{
    if (walls.empty())
        throw ScenarioError("scenario: at least one wall is required");
    for (const Wall &w : walls)
    {
        if (w.points.size() < 2)
            throw ScenarioError("wall '" + w.name + "': needs at least two points");
        for (const Vec2 &p : w.points)
            if (!p.allFinite())
                throw ScenarioError("wall '" + w.name + "': non-finite point");
        // Non-adjacent edges of one polyline must not touch.
        for (std::size_t i = 0; i + 1 < w.points.size(); ++i)
            for (std::size_t j = i + 2; j + 1 < w.points.size(); ++j)
                if (segments_intersect(w.points[i], w.points[i + 1], w.points[j], w.points[j + 1]))
                    throw ScenarioError("wall '" + w.name + "': self-intersecting at edges " + std::to_string(i) +
                                        " and " + std::to_string(j));
    }
    try
    {
        path().validate();
    }
    catch (const std::exception &e)
    {
        throw ScenarioError(std::string("waypoints: ") + e.what());
    }
    if (!initial.finite())
        throw ScenarioError("initial: non-finite state");
    if (std::abs(initial_actuators.n_T) > 100.0 || std::abs(initial_actuators.n_S) > 100.0)
        throw ScenarioError("initial: actuator commands must be within [-100, 100]");
    if (hull_intersects(initial, wall_segments()))
        throw ScenarioError("initial: hull intersects a wall");
    if (!(duration > 0.0 && control_period > 0.0 && wall_chunk > 0.0))
        throw ScenarioError("scenario: duration, control_period and wall_chunk must be positive");
    if (!(plant_drag_scale > 0.0))
        throw ScenarioError("plant: drag_scale must be positive");
    if (!(pose_noise_xy >= 0.0 && pose_noise_psi_deg >= 0.0 && transient >= 0.0))
        throw ScenarioError("scenario: noise levels and transient must be non-negative");
    try
    {
        nmpc.validate();
        baseline.validate();
        params.validate();
        detection.filter.validate();
        detection.hough.validate();
    }
    catch (const ScenarioError &)
    {
        throw;
    }
    catch (const std::exception &e)
    {
        throw ScenarioError(e.what());
    }
    sensor.validate();
}

// ---------------------------------------------------------------------------
// JSON

namespace
{
using Reader = JsonReader<ScenarioError>;

void read_pid(const Reader &rd, const json &j, const std::vector<std::string> &path, PidGains &g)
{
    rd.object(j, path);
    rd.allow_keys(j, path, {"k_p", "k_i", "k_d", "integrator_limit", "output_limit"});
    rd.opt(j, path, "k_p", g.k_p);
    rd.opt(j, path, "k_i", g.k_i);
    rd.opt(j, path, "k_d", g.k_d);
    rd.opt(j, path, "integrator_limit", g.integrator_limit);
    rd.opt(j, path, "output_limit", g.output_limit);
}

void read_nmpc(const Reader &rd, const json &j, const std::vector<std::string> &path, NmpcConfig &c)
{
    rd.object(j, path);
    rd.allow_keys(j, path,
                  {"N_p", "T_s", "Q", "Q_T", "R", "rho", "n_T_max", "n_S_max", "dn_T_max", "dn_S_max", "R_b", "d_p",
                   "l_b", "l_s", "u_ref", "detection_radius"});
    rd.opt(j, path, "N_p", c.N_p);
    rd.opt(j, path, "T_s", c.T_s);
    if (j.contains("Q"))
    {
        c.Q = rd.vector<8>(j["Q"], Reader::sub(path, "Q"));
        c.Q_T = 25.0 * c.Q;
    }
    if (j.contains("Q_T"))
        c.Q_T = rd.vector<8>(j["Q_T"], Reader::sub(path, "Q_T"));
    if (j.contains("R"))
        c.R = rd.vector<2>(j["R"], Reader::sub(path, "R"));
    rd.opt(j, path, "rho", c.rho);
    rd.opt(j, path, "n_T_max", c.n_T_max);
    rd.opt(j, path, "n_S_max", c.n_S_max);
    rd.opt(j, path, "dn_T_max", c.dn_T_max);
    rd.opt(j, path, "dn_S_max", c.dn_S_max);
    rd.opt(j, path, "R_b", c.R_b);
    rd.opt(j, path, "d_p", c.d_p);
    rd.opt(j, path, "l_b", c.l_b);
    rd.opt(j, path, "l_s", c.l_s);
    rd.opt(j, path, "u_ref", c.u_ref);
    rd.opt(j, path, "detection_radius", c.detection_radius);
}

void read_baseline(const Reader &rd, const json &j, const std::vector<std::string> &path, BaselineConfig &c)
{
    rd.object(j, path);
    rd.allow_keys(j, path,
                  {"N_b", "dt", "target_speed", "u_max", "u_min", "r_max", "cap_margin", "plan_distance", "replan_period",
                   "lookahead", "max_sqp_iterations", "polish_iterations", "heading_pid", "speed_pid"});
    rd.opt(j, path, "N_b", c.N_b);
    rd.opt(j, path, "dt", c.dt);
    rd.opt(j, path, "target_speed", c.target_speed);
    rd.opt(j, path, "u_max", c.u_max);
    rd.opt(j, path, "u_min", c.u_min);
    rd.opt(j, path, "r_max", c.r_max);
    rd.opt(j, path, "cap_margin", c.cap_margin);
    rd.opt(j, path, "plan_distance", c.plan_distance);
    rd.opt(j, path, "replan_period", c.replan_period);
    rd.opt(j, path, "lookahead", c.lookahead);
    rd.opt(j, path, "max_sqp_iterations", c.max_sqp_iterations);
    rd.opt(j, path, "polish_iterations", c.polish_iterations);
    if (j.contains("heading_pid"))
        read_pid(rd, j["heading_pid"], Reader::sub(path, "heading_pid"), c.heading);
    if (j.contains("speed_pid"))
        read_pid(rd, j["speed_pid"], Reader::sub(path, "speed_pid"), c.speed);
}

void read_params_object(const Reader &rd, const json &j, const std::vector<std::string> &path, ParamSet &p)
{
    rd.object(j, path);
    for (auto it = j.begin(); it != j.end(); ++it)
    {
        const auto kp = Reader::sub(path, it.key());
        const double v = rd.number(it.value(), kp);
        if (it.key() == "l_y")
        {
            p.l_y = v;
            continue;
        }
        if (it.key() == "delta_max_deg")
        {
            p.delta_max = deg2rad(v);
            continue;
        }
        bool found = false;
        for (int i = 0; i < kNumIdentified; ++i)
            if (param_name(static_cast<Param>(i)) == it.key())
            {
                p[static_cast<Param>(i)] = v;
                found = true;
            }
        if (!found)
            rd.fail(kp, "unknown parameter");
    }
}

json point_json(const Vec2 &p)
{
    return json::array({p.x(), p.y()});
}

template <int N> json vector_json(const Eigen::Matrix<double, N, 1> &v)
{
    json a = json::array();
    for (int i = 0; i < N; ++i)
        a.push_back(v[i]);
    return a;
}

json pid_json(const PidGains &g)
{
    return {{"k_p", g.k_p},
            {"k_i", g.k_i},
            {"k_d", g.k_d},
            {"integrator_limit", g.integrator_limit},
            {"output_limit", g.output_limit}};
}

// Finite doubles as numbers, infinities as null.
json finite_or_null(double v)
{
    return std::isfinite(v) ? json(v) : json(nullptr);
}
} // namespace

Scenario parse_scenario(std::string_view text)
{
    json j;
    try
    {
        j = json::parse(text.begin(), text.end());
    }
    catch (const json::parse_error &e)
    {
        throw ScenarioError(std::string("JSON syntax: ") + e.what());
    }
    const Reader rd(text);
    const std::vector<std::string> root;
    rd.object(j, root);
    rd.allow_keys(j, root,
                  {"name", "walls", "waypoints", "initial", "controller", "duration", "control_period", "seed",
                   "perception", "pose_noise", "plant", "params", "nmpc", "baseline", "metrics"});

    Scenario s;
    if (j.contains("name"))
        s.name = rd.string(j["name"], {"name"});

    if (!j.contains("walls"))
        rd.fail(root, "missing key 'walls'");
    if (!j["walls"].is_array())
        rd.fail({"walls"}, "expected an array");
    for (std::size_t i = 0; i < j["walls"].size(); ++i)
    {
        const std::vector<std::string> wp = {"walls", "[" + std::to_string(i) + "]"};
        const json &w = rd.object(j["walls"][i], wp);
        rd.allow_keys(w, wp, {"name", "points"});
        Wall wall;
        wall.name = w.contains("name") ? rd.string(w["name"], Reader::sub(wp, "name")) : "wall" + std::to_string(i);
        if (!w.contains("points"))
            rd.fail(wp, "missing key 'points'");
        wall.points = rd.points(w["points"], Reader::sub(wp, "points"));
        s.walls.push_back(std::move(wall));
    }

    if (!j.contains("waypoints"))
        rd.fail(root, "missing key 'waypoints'");
    s.waypoints = rd.points(j["waypoints"], {"waypoints"});

    if (j.contains("initial"))
    {
        const std::vector<std::string> ip = {"initial"};
        const json &in = rd.object(j["initial"], ip);
        rd.allow_keys(in, ip, {"x", "y", "psi_deg", "u", "v", "r", "n_T", "n_S"});
        double psi_deg = rad2deg(s.initial.psi);
        rd.opt(in, ip, "x", s.initial.x);
        rd.opt(in, ip, "y", s.initial.y);
        rd.opt(in, ip, "psi_deg", psi_deg);
        s.initial.psi = deg2rad(psi_deg);
        rd.opt(in, ip, "u", s.initial.u);
        rd.opt(in, ip, "v", s.initial.v);
        rd.opt(in, ip, "r", s.initial.r);
        rd.opt(in, ip, "n_T", s.initial_actuators.n_T);
        rd.opt(in, ip, "n_S", s.initial_actuators.n_S);
    }

    if (j.contains("controller"))
    {
        try
        {
            s.controller = parse_controller(rd.string(j["controller"], {"controller"}));
        }
        catch (const ScenarioError &e)
        {
            rd.fail({"controller"}, e.what());
        }
    }
    rd.opt(j, root, "duration", s.duration);
    rd.opt(j, root, "control_period", s.control_period);
    if (j.contains("seed"))
    {
        if (!j["seed"].is_number_unsigned())
            rd.fail({"seed"}, "expected a non-negative integer");
        s.seed = j["seed"].get<std::uint64_t>();
    }

    if (j.contains("perception"))
    {
        const std::vector<std::string> pp = {"perception"};
        const json &pj = rd.object(j["perception"], pp);
        rd.allow_keys(pj, pp, {"mode", "wall_chunk", "sensor", "grid_resolution", "grid_extent", "z_min", "z_max"});
        if (pj.contains("mode"))
        {
            try
            {
                s.perception = parse_perception_mode(rd.string(pj["mode"], Reader::sub(pp, "mode")));
            }
            catch (const ScenarioError &e)
            {
                rd.fail(Reader::sub(pp, "mode"), e.what());
            }
        }
        rd.opt(pj, pp, "wall_chunk", s.wall_chunk);
        rd.opt(pj, pp, "grid_resolution", s.detection.grid_resolution);
        rd.opt(pj, pp, "grid_extent", s.detection.grid_extent);
        rd.opt(pj, pp, "z_min", s.detection.filter.z_min);
        rd.opt(pj, pp, "z_max", s.detection.filter.z_max);
        if (pj.contains("sensor"))
        {
            const auto sp = Reader::sub(pp, "sensor");
            const json &sj = rd.object(pj["sensor"], sp);
            rd.allow_keys(sj, sp, {"range_min", "range_max", "resolution_deg", "noise_std", "z_min", "z_max"});
            rd.opt(sj, sp, "range_min", s.sensor.range_min);
            rd.opt(sj, sp, "range_max", s.sensor.range_max);
            rd.opt(sj, sp, "resolution_deg", s.sensor.resolution_deg);
            rd.opt(sj, sp, "noise_std", s.sensor.noise_std);
            rd.opt(sj, sp, "z_min", s.sensor.z_min);
            rd.opt(sj, sp, "z_max", s.sensor.z_max);
        }
    }

    if (j.contains("pose_noise"))
    {
        const std::vector<std::string> np = {"pose_noise"};
        const json &nj = rd.object(j["pose_noise"], np);
        rd.allow_keys(nj, np, {"xy", "psi_deg"});
        rd.opt(nj, np, "xy", s.pose_noise_xy);
        rd.opt(nj, np, "psi_deg", s.pose_noise_psi_deg);
    }
    if (j.contains("plant"))
    {
        const std::vector<std::string> pp = {"plant"};
        const json &pj = rd.object(j["plant"], pp);
        rd.allow_keys(pj, pp, {"drag_scale"});
        rd.opt(pj, pp, "drag_scale", s.plant_drag_scale);
    }
    if (j.contains("params"))
        read_params_object(rd, j["params"], {"params"}, s.params);
    if (j.contains("nmpc"))
        read_nmpc(rd, j["nmpc"], {"nmpc"}, s.nmpc);
    if (j.contains("baseline"))
        read_baseline(rd, j["baseline"], {"baseline"}, s.baseline);
    // The lexicographic planner shares the safety geometry and actuator limits.
    s.baseline.safety = s.nmpc;
    if (j.contains("metrics"))
    {
        const std::vector<std::string> mp = {"metrics"};
        const json &mj = rd.object(j["metrics"], mp);
        rd.allow_keys(mj, mp, {"transient"});
        rd.opt(mj, mp, "transient", s.transient);
    }

    s.validate();
    return s;
}

Scenario load_scenario(const std::string &path)
{
    std::ifstream in(path);
    if (!in)
        throw ScenarioError("cannot open scenario file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    try
    {
        return parse_scenario(buf.str());
    }
    catch (const ScenarioError &e)
    {
        throw ScenarioError(path + ": " + e.what());
    }
}

std::string scenario_to_json(const Scenario &s)
{
    json walls = json::array();
    for (const Wall &w : s.walls)
    {
        json pts = json::array();
        for (const Vec2 &p : w.points)
            pts.push_back(point_json(p));
        walls.push_back({{"name", w.name}, {"points", pts}});
    }
    json wps = json::array();
    for (const Vec2 &p : s.waypoints)
        wps.push_back(point_json(p));
    json params = json::object();
    for (int i = 0; i < kNumIdentified; ++i)
        params[std::string(param_name(static_cast<Param>(i)))] = s.params[static_cast<Param>(i)];
    params["l_y"] = s.params.l_y;
    params["delta_max_deg"] = rad2deg(s.params.delta_max);
    const NmpcConfig &n = s.nmpc;
    const BaselineConfig &b = s.baseline;
    json j = {
        {"name", s.name},
        {"walls", walls},
        {"waypoints", wps},
        {"initial",
         {{"x", s.initial.x},
          {"y", s.initial.y},
          {"psi_deg", rad2deg(s.initial.psi)},
          {"u", s.initial.u},
          {"v", s.initial.v},
          {"r", s.initial.r},
          {"n_T", s.initial_actuators.n_T},
          {"n_S", s.initial_actuators.n_S}}},
        {"controller", std::string(to_string(s.controller))},
        {"duration", s.duration},
        {"control_period", s.control_period},
        {"seed", s.seed},
        {"perception",
         {{"mode", std::string(to_string(s.perception))},
          {"wall_chunk", s.wall_chunk},
          {"grid_resolution", s.detection.grid_resolution},
          {"grid_extent", s.detection.grid_extent},
          {"z_min", s.detection.filter.z_min},
          {"z_max", s.detection.filter.z_max},
          {"sensor",
           {{"range_min", s.sensor.range_min},
            {"range_max", s.sensor.range_max},
            {"resolution_deg", s.sensor.resolution_deg},
            {"noise_std", s.sensor.noise_std},
            {"z_min", s.sensor.z_min},
            {"z_max", s.sensor.z_max}}}}},
        {"pose_noise", {{"xy", s.pose_noise_xy}, {"psi_deg", s.pose_noise_psi_deg}}},
        {"plant", {{"drag_scale", s.plant_drag_scale}}},
        {"params", params},
        {"nmpc",
         {{"N_p", n.N_p},
          {"T_s", n.T_s},
          {"Q", vector_json<8>(n.Q)},
          {"Q_T", vector_json<8>(n.Q_T)},
          {"R", vector_json<2>(n.R)},
          {"rho", n.rho},
          {"n_T_max", n.n_T_max},
          {"n_S_max", n.n_S_max},
          {"dn_T_max", n.dn_T_max},
          {"dn_S_max", n.dn_S_max},
          {"R_b", n.R_b},
          {"d_p", n.d_p},
          {"l_b", n.l_b},
          {"l_s", n.l_s},
          {"u_ref", n.u_ref},
          {"detection_radius", n.detection_radius}}},
        {"baseline",
         {{"N_b", b.N_b},
          {"dt", b.dt},
          {"target_speed", b.target_speed},
          {"u_max", b.u_max},
          {"u_min", b.u_min},
          {"r_max", b.r_max},
          {"cap_margin", b.cap_margin},
          {"plan_distance", b.plan_distance},
          {"replan_period", b.replan_period},
          {"lookahead", b.lookahead},
          {"max_sqp_iterations", b.max_sqp_iterations},
          {"polish_iterations", b.polish_iterations},
          {"heading_pid", pid_json(b.heading)},
          {"speed_pid", pid_json(b.speed)}}},
        {"metrics", {{"transient", s.transient}}},
    };
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Geometry

PointCloud lidar_scan(const VesselState &pose, const std::vector<LineSegment> &walls, const SensorSpec &spec,
                      std::mt19937_64 &rng)
{
    spec.validate();
    PointCloud cloud;
    const Vec2 o(pose.x, pose.y);
    // Only walls that can be hit at all.
    std::vector<std::pair<Vec2, Vec2>> near;
    for (const LineSegment &w : walls)
        if (point_segment_distance(o.x(), o.y(), w) <= spec.range_max)
            near.emplace_back(w.endpoint_a(), w.endpoint_b());
    if (near.empty())
        return cloud;

    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> height(spec.z_min, spec.z_max);
    const int rays = static_cast<int>(std::lround(360.0 / spec.resolution_deg));
    for (int k = 0; k < rays; ++k)
    {
        const double rel = deg2rad(-180.0 + k * spec.resolution_deg);
        const Vec2 d(std::cos(pose.psi + rel), std::sin(pose.psi + rel));
        double best = std::numeric_limits<double>::infinity();
        for (const auto &[a, b] : near)
        {
            const Vec2 e = b - a;
            const double den = cross(d, e);
            if (std::abs(den) < 1e-12)
                continue;
            const Vec2 ao = a - o;
            const double t = cross(ao, e) / den; // along the ray
            const double u = cross(ao, d) / den; // along the wall
            if (t > 0.0 && u >= 0.0 && u <= 1.0)
                best = std::min(best, t);
        }
        if (!(best >= spec.range_min && best <= spec.range_max))
            continue;
        double range = best;
        if (spec.noise_std > 0.0)
            range += spec.noise_std * noise(rng);
        const double z = height(rng);
        cloud.points.emplace_back(range * std::cos(rel), range * std::sin(rel), z);
    }
    return cloud;
}

Separation closest_separation(const VesselState &pose, const std::vector<LineSegment> &segments, const NmpcConfig &cfg)
{
    Separation s;
    const SafetyCircles c = safety_circle_centers(pose, cfg);
    for (const LineSegment &seg : segments)
    {
        s.bow = std::min(s.bow, point_segment_distance(c.bow.x(), c.bow.y(), seg));
        s.stern = std::min(s.stern, point_segment_distance(c.stern.x(), c.stern.y(), seg));
    }
    return s;
}

std::array<Vec2, 4> hull_corners(const VesselState &pose)
{
    const Vec2 c(pose.x, pose.y);
    const Vec2 f = 0.5 * kHullLength * Vec2(std::cos(pose.psi), std::sin(pose.psi));
    const Vec2 l = 0.5 * kHullBeam * Vec2(-std::sin(pose.psi), std::cos(pose.psi));
    return {c - f - l, c + f - l, c + f + l, c - f + l};
}

bool hull_intersects(const VesselState &pose, const std::vector<LineSegment> &segments)
{
    const std::array<Vec2, 4> h = hull_corners(pose);
    const Vec2 c(pose.x, pose.y);
    const Vec2 fwd(std::cos(pose.psi), std::sin(pose.psi));
    const Vec2 left(-std::sin(pose.psi), std::cos(pose.psi));
    auto inside = [&](const Vec2 &p) {
        const Vec2 d = p - c;
        return std::abs(d.dot(fwd)) <= 0.5 * kHullLength && std::abs(d.dot(left)) <= 0.5 * kHullBeam;
    };
    for (const LineSegment &s : segments)
    {
        const Vec2 a = s.endpoint_a();
        const Vec2 b = s.endpoint_b();
        if (inside(a) || inside(b))
            return true;
        for (int i = 0; i < 4; ++i)
            if (segments_intersect(a, b, h[static_cast<std::size_t>(i)], h[static_cast<std::size_t>((i + 1) % 4)]))
                return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// Closed loop

double control_effort(const SimLog &log, const Vec2 &R)
{
    double J = 0.0;
    for (const TickRecord &t : log.ticks)
        J += R[0] * t.command.dn_T * t.command.dn_T + R[1] * t.command.dn_S * t.command.dn_S;
    return J;
}

Metrics compute_metrics(const SimLog &log, const Scenario &scenario)
{
    Metrics m;
    m.termination = log.termination;
    m.collision = log.termination == Termination::collision;
    m.ticks = static_cast<int>(log.ticks.size());
    m.control_effort = control_effort(log, scenario.nmpc.R);
    const double D = scenario.nmpc.separation();
    std::vector<double> mins;
    double xte2 = 0.0, xte2_steady = 0.0;
    int steady = 0;
    double tsum = 0.0;
    for (const TickRecord &t : log.ticks)
    {
        m.min_separation_bow = std::min(m.min_separation_bow, t.separation.bow);
        m.min_separation_stern = std::min(m.min_separation_stern, t.separation.stern);
        mins.push_back(t.separation.min());
        if (t.separation.min() < D - kViolationTolerance)
            m.constraint_violation_time += scenario.control_period;
        xte2 += t.cross_track * t.cross_track;
        if (t.t >= scenario.transient)
        {
            xte2_steady += t.cross_track * t.cross_track;
            ++steady;
        }
        tsum += t.solve_time;
        m.max_solve_time = std::max(m.max_solve_time, t.solve_time);
        if (t.status == TickStatus::solver_failure)
            ++m.solver_failures;
    }
    m.min_separation = std::min(m.min_separation_bow, m.min_separation_stern);
    if (!mins.empty())
    {
        std::sort(mins.begin(), mins.end());
        m.p5_separation = mins[static_cast<std::size_t>(0.05 * static_cast<double>(mins.size() - 1))];
        m.cross_track_rms = std::sqrt(xte2 / static_cast<double>(mins.size()));
        m.mean_solve_time = tsum / static_cast<double>(mins.size());
    }
    if (steady > 0)
        m.cross_track_rms_steady = std::sqrt(xte2_steady / steady);
    return m;
}

namespace
{
ParamSet plant_params(const Scenario &s)
{
    ParamSet p = s.params;
    for (Param id : {Param::X_u, Param::Y_v, Param::Y_r, Param::N_v, Param::N_r, Param::X_uu, Param::Y_vv, Param::Y_rr,
                     Param::N_vv, Param::N_rr})
        p[id] *= s.plant_drag_scale;
    return p;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Controller state shared across ticks.
class Controller
{
public:
    explicit Controller(const Scenario &s) : s_(s) {}

    struct Output
    {
        RateInput command;
        TickStatus status = TickStatus::ok;
        double slack_max = 0.0;
        bool replanned_infeasible = false;
    };

    // Throws PathComplete when the reference is exhausted.
    Output step(double t, const VesselState &pose, const ActuatorState &act, const WaypointPath &path,
                const std::vector<LineSegment> &segments)
    {
        switch (s_.controller)
        {
        case ControllerKind::nmpc: return nmpc(pose, act, path, segments);
        case ControllerKind::baseline1: return baseline1(t, pose, act, path, segments);
        case ControllerKind::baseline2: return baseline2(t, pose, act, path, segments);
        }
        return {};
    }

private:
    Output nmpc(const VesselState &pose, const ActuatorState &act, const WaypointPath &path,
                const std::vector<LineSegment> &segments)
    {
        Output out;
        out.command = last_;
        const OcpProblem ocp = assemble(pose, act, path, segments, s_.nmpc, s_.params, guess_);
        try
        {
            const SolveResult r = sqp_rti_step(ocp);
            if (r.status == SolveStatus::infeasible_qp || r.inputs.empty())
                throw std::runtime_error("QP infeasible");
            out.command = {r.inputs[0][0], r.inputs[0][1]};
            out.slack_max = r.slacks.empty() ? 0.0 : *std::max_element(r.slacks.begin(), r.slacks.end());
            guess_ = shift_warm_start(r, s_.control_period / s_.nmpc.T_s);
        }
        catch (const PathComplete &)
        {
            throw;
        }
        catch (const std::exception &)
        {
            out.status = TickStatus::solver_failure;
            guess_.reset();
        }
        last_ = out.command;
        return out;
    }

    bool replan_due(double t)
    {
        const long slot = std::lround(std::floor(t / s_.baseline.replan_period + 1e-9));
        if (planned_.waypoints.empty() || slot != last_slot_)
        {
            last_slot_ = slot;
            return true;
        }
        return false;
    }

    // The NMPC prediction, refreshed every replan period, is the planned path.
    Output baseline1(double t, const VesselState &pose, const ActuatorState &act, const WaypointPath &path,
                     const std::vector<LineSegment> &segments)
    {
        Output out;
        if (replan_due(t))
        {
            const OcpProblem ocp = assemble(pose, act, path, segments, s_.nmpc, s_.params, guess_);
            SolveResult r;
            bool ok = true;
            try
            {
                r = sqp_rti_step(ocp);
                ok = r.status != SolveStatus::infeasible_qp;
            }
            catch (const PathComplete &)
            {
                throw;
            }
            catch (const std::exception &)
            {
                ok = false;
            }
            if (ok)
            {
                WaypointPath p;
                for (const Vec8 &x : r.states)
                    if (p.waypoints.empty() || (Vec2(x[0], x[1]) - p.waypoints.back()).norm() > 1e-6)
                        p.waypoints.emplace_back(x[0], x[1]);
                if (p.waypoints.size() >= 2)
                    planned_ = p;
                out.slack_max = r.slacks.empty() ? 0.0 : *std::max_element(r.slacks.begin(), r.slacks.end());
                guess_ = shift_warm_start(r, s_.baseline.replan_period / s_.nmpc.T_s);
            }
            else
            {
                out.status = TickStatus::solver_failure;
                guess_.reset();
                if (planned_.waypoints.empty())
                    planned_ = path;
            }
        }
        out.command = baseline1_step(pose, act, planned_, pid_, s_.baseline, s_.control_period);
        return out;
    }

    // Lexicographic plan toward the reference point plan_distance ahead.
    Output baseline2(double t, const VesselState &pose, const ActuatorState &act, const WaypointPath &path,
                     const std::vector<LineSegment> &segments)
    {
        Output out;
        if (project_onto_path(path, {pose.x, pose.y}).complete)
            throw PathComplete();
        if (replan_due(t))
        {
            const KinematicState x_i{pose.x, pose.y, pose.psi};
            const KinematicState x_f = point_ahead(path, {pose.x, pose.y}, s_.baseline.plan_distance);
            const LexiPlan plan =
                lexi_plan(x_i, x_f, segments_in_range(segments, {pose.x, pose.y}, s_.nmpc.detection_radius),
                          s_.baseline);
            if (plan.status != PlanStatus::infeasible)
                planned_ = plan.to_path();
            else
            {
                out.replanned_infeasible = true;
                planned_ = path;
            }
            plan_ok_ = plan.status != PlanStatus::infeasible;
        }
        if (!plan_ok_)
            out.status = TickStatus::plan_infeasible;
        out.command = baseline1_step(pose, act, planned_, pid_, s_.baseline, s_.control_period);
        return out;
    }

    const Scenario &s_;
    RateInput last_;
    std::optional<InitialGuess> guess_;
    WaypointPath planned_;
    long last_slot_ = -1;
    bool plan_ok_ = true;
    Baseline1State pid_;
};
} // namespace

SimResult run_closed_loop(const Scenario &scenario)
{
    scenario.validate();
    const ParamSet plant = plant_params(scenario);
    const std::vector<LineSegment> walls = scenario.wall_segments();
    const std::vector<LineSegment> chunks = scenario.wall_chunks();

    // Independent streams for the sensor and the pose feedback.
    std::seed_seq seq{scenario.seed, static_cast<std::uint64_t>(0x5eed)};
    std::mt19937_64 master(seq);
    std::mt19937_64 lidar_rng(master());
    std::mt19937_64 pose_rng(master());
    std::normal_distribution<double> unit(0.0, 1.0);

    SimResult res;
    SimLog &log = res.log;
    Controller controller(scenario);
    WaypointPath path = scenario.path();
    VesselState truth = scenario.initial;
    ActuatorState act = scenario.initial_actuators;
    const double dt = scenario.control_period;
    const long steps = std::lround(std::floor(scenario.duration / dt + 1e-9));
    int infeasible_plans = 0;

    for (long k = 0; k <= steps; ++k)
    {
        TickRecord rec;
        rec.t = static_cast<double>(k) * dt;
        rec.state = truth;
        rec.act = act;
        rec.separation = closest_separation(truth, walls, scenario.nmpc);
        const PathProjection proj = project_onto_path(path, {truth.x, truth.y});
        path.active_leg = proj.leg;
        rec.cross_track = proj.cross_track;

        if (hull_intersects(truth, walls))
        {
            log.ticks.push_back(rec);
            log.termination = Termination::collision;
            log.diagnostics = "hull contact with a wall at t = " + std::to_string(rec.t) + " s";
            break;
        }
        if (proj.complete)
        {
            log.ticks.push_back(rec);
            log.termination = Termination::completed;
            break;
        }
        if (k == steps)
        {
            log.ticks.push_back(rec);
            log.termination = Termination::duration;
            break;
        }

        VesselState measured = truth;
        if (scenario.pose_noise_xy > 0.0)
        {
            measured.x += scenario.pose_noise_xy * unit(pose_rng);
            measured.y += scenario.pose_noise_xy * unit(pose_rng);
        }
        if (scenario.pose_noise_psi_deg > 0.0)
            measured.psi += deg2rad(scenario.pose_noise_psi_deg) * unit(pose_rng);

        std::vector<LineSegment> perceived;
        if (scenario.perception == PerceptionMode::precise)
            perceived = segments_in_range(chunks, {measured.x, measured.y}, scenario.nmpc.detection_radius);
        else
        {
            const PointCloud cloud = lidar_scan(truth, walls, scenario.sensor, lidar_rng);
            perceived = segments_to_world(detect_segments(cloud, scenario.detection), measured);
        }
        rec.active_segments = static_cast<int>(perceived.size());

        const auto t0 = Clock::now();
        try
        {
            const auto out = controller.step(rec.t, measured, act, path, perceived);
            rec.command = out.command;
            rec.status = out.status;
            rec.slack_max = out.slack_max;
            if (out.replanned_infeasible)
                ++infeasible_plans;
        }
        catch (const PathComplete &)
        {
            rec.solve_time = seconds_since(t0);
            log.ticks.push_back(rec);
            log.termination = Termination::completed;
            break;
        }
        rec.solve_time = seconds_since(t0);
        log.ticks.push_back(rec);

        const AugmentedState next = augmented_step(truth, act, rec.command, plant, dt);
        truth = next.vessel;
        act = next.act;
        if (!truth.finite())
        {
            log.termination = Termination::duration;
            log.diagnostics = "plant state became non-finite";
            break;
        }
    }

    res.metrics = compute_metrics(log, scenario);
    res.metrics.infeasible_plans = infeasible_plans;
    if (res.metrics.constraint_violation_time > 0.0)
    {
        std::ostringstream d;
        d << (log.diagnostics.empty() ? "" : "; ") << "separation below R_b + d_p for "
          << res.metrics.constraint_violation_time << " s";
        log.diagnostics += d.str();
    }
    if (res.metrics.solver_failures > 0)
        log.diagnostics += (log.diagnostics.empty() ? "" : "; ") + std::to_string(res.metrics.solver_failures) +
                           " solver failures (previous command held)";
    if (infeasible_plans > 0)
        log.diagnostics += (log.diagnostics.empty() ? "" : "; ") + std::to_string(infeasible_plans) +
                           " infeasible plans";
    return res;
}

// ---------------------------------------------------------------------------
// Output

void write_log_csv(std::ostream &os, const SimLog &log)
{
    std::ostringstream b;
    b << std::setprecision(17);
    b << "t,x,y,psi,u,v,r,n_T,n_S,dn_T,dn_S,active_segments,slack_max,d_bow,d_stern,cross_track,status\n";
    for (const TickRecord &t : log.ticks)
        b << t.t << ',' << t.state.x << ',' << t.state.y << ',' << t.state.psi << ',' << t.state.u << ','
          << t.state.v << ',' << t.state.r << ',' << t.act.n_T << ',' << t.act.n_S << ',' << t.command.dn_T << ','
          << t.command.dn_S << ',' << t.active_segments << ',' << t.slack_max << ',' << t.separation.bow << ','
          << t.separation.stern << ',' << t.cross_track << ',' << to_string(t.status) << '\n';
    b << "# termination: " << to_string(log.termination) << '\n';
    if (!log.diagnostics.empty())
        b << "# diagnostics: " << log.diagnostics << '\n';
    os << b.str();
}

void write_separation_csv(std::ostream &os, const SimLog &log)
{
    std::ostringstream b;
    b << std::setprecision(17) << "t,d_bow,d_stern,d_min\n";
    for (const TickRecord &t : log.ticks)
        b << t.t << ',' << t.separation.bow << ',' << t.separation.stern << ',' << t.separation.min() << '\n';
    os << b.str();
}

void write_timing_csv(std::ostream &os, const SimLog &log)
{
    std::ostringstream b;
    b << std::setprecision(9) << "t,solve_time\n";
    for (const TickRecord &t : log.ticks)
        b << t.t << ',' << t.solve_time << '\n';
    os << b.str();
}

std::string metrics_to_json(const Metrics &m)
{
    const json j = {
        {"termination", std::string(to_string(m.termination))},
        {"collision", m.collision},
        {"ticks", m.ticks},
        {"min_separation", finite_or_null(m.min_separation)},
        {"min_separation_bow", finite_or_null(m.min_separation_bow)},
        {"min_separation_stern", finite_or_null(m.min_separation_stern)},
        {"p5_separation", finite_or_null(m.p5_separation)},
        {"constraint_violation_time", m.constraint_violation_time},
        {"control_effort", m.control_effort},
        {"cross_track_rms", m.cross_track_rms},
        {"cross_track_rms_steady", m.cross_track_rms_steady},
        {"solver_failures", m.solver_failures},
        {"infeasible_plans", m.infeasible_plans},
    };
    return j.dump(2) + "\n";
}

std::string timing_to_json(const Metrics &m)
{
    const json j = {{"mean_solve_time", m.mean_solve_time}, {"max_solve_time", m.max_solve_time}};
    return j.dump(2) + "\n";
}

} // namespace canal
