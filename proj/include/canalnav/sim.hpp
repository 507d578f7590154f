#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "canalnav/baselines.hpp"
#include "canalnav/nmpc.hpp"
#include "canalnav/perception.hpp"

namespace canal
{

class ScenarioError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

enum class ControllerKind
{
    nmpc,
    baseline1,
    baseline2,
};

std::string_view to_string(ControllerKind c);
ControllerKind parse_controller(std::string_view s);

enum class PerceptionMode
{
    precise, // exact wall chunks within the detection radius
    sensor,  // lidar_scan -> detect_segments
};

std::string_view to_string(PerceptionMode m);
PerceptionMode parse_perception_mode(std::string_view s);

struct Wall
{
    std::string name;
    std::vector<Vec2> points; // polyline
};

struct SensorSpec
{
    double range_min = 0.5;   // m
    double range_max = 120.0; // m
    double resolution_deg = 0.5;
    double noise_std = 0.0; // m, on range
    double z_min = 0.2;     // wall height band of the returns
    double z_max = 1.5;

    void validate() const;
};

struct Scenario
{
    std::string name = "unnamed";
    std::vector<Wall> walls;
    std::vector<Vec2> waypoints;
    VesselState initial;
    ActuatorState initial_actuators;
    ControllerKind controller = ControllerKind::nmpc;
    NmpcConfig nmpc;
    BaselineConfig baseline;
    ParamSet params = canal_boat_params(); // predictor model
    double plant_drag_scale = 1.0;         // plant drag = scale * predictor drag
    double duration = 600.0;               // s
    double control_period = 0.1;           // s
    double wall_chunk = 10.0;              // m, chunk length of the walls in precise mode
    PerceptionMode perception = PerceptionMode::precise;
    SensorSpec sensor;
    DetectionConfig detection;
    double pose_noise_xy = 0.0;      // m
    double pose_noise_psi_deg = 0.0; // deg
    double transient = 30.0;         // s excluded from the steady cross-track RMS
    std::uint64_t seed = 0;

    // Throws ScenarioError naming the first violated invariant.
    void validate() const;
    WaypointPath path() const { return {waypoints, 0}; }
    // All wall polyline edges as segments.
    std::vector<LineSegment> wall_segments() const;
    // Wall edges split into pieces no longer than wall_chunk.
    std::vector<LineSegment> wall_chunks() const;
};

// JSON scenario I/O; errors carry the offending key path or the parse position.
Scenario parse_scenario(std::string_view json_text);
Scenario load_scenario(const std::string &path);
std::string scenario_to_json(const Scenario &s);

/// 2D raycast fan from the vessel origin against the wall polylines. Points are
/// in the body frame; z is drawn uniformly in the sensor's height band.
PointCloud lidar_scan(const VesselState &pose, const std::vector<LineSegment> &walls, const SensorSpec &spec,
                      std::mt19937_64 &rng);

struct Separation
{
    double bow = std::numeric_limits<double>::infinity();
    double stern = std::numeric_limits<double>::infinity();

    double min() const { return bow < stern ? bow : stern; }
};

/// Distance from the bow and stern circle centres to the nearest segment.
Separation closest_separation(const VesselState &pose, const std::vector<LineSegment> &segments,
                              const NmpcConfig &cfg);

inline constexpr double kHullLength = 7.9; // m
inline constexpr double kHullBeam = 2.6;   // m

/// Corners of the hull rectangle centred on the pose, counter-clockwise.
std::array<Vec2, 4> hull_corners(const VesselState &pose);
bool hull_intersects(const VesselState &pose, const std::vector<LineSegment> &segments);

enum class TickStatus
{
    ok,
    solver_failure, // previous command held
    plan_infeasible,
};

std::string_view to_string(TickStatus s);

struct TickRecord
{
    double t = 0.0;
    VesselState state;
    ActuatorState act;
    RateInput command;
    int active_segments = 0;
    double slack_max = 0.0;
    double solve_time = 0.0; // s, wall clock of the controller call
    Separation separation;   // exact walls
    double cross_track = 0.0;
    TickStatus status = TickStatus::ok;
};

enum class Termination
{
    completed,
    duration,
    collision,
};

std::string_view to_string(Termination t);

struct SimLog
{
    std::vector<TickRecord> ticks;
    Termination termination = Termination::duration;
    std::string diagnostics;
};

struct Metrics
{
    double min_separation_bow = std::numeric_limits<double>::infinity();
    double min_separation_stern = std::numeric_limits<double>::infinity();
    double min_separation = std::numeric_limits<double>::infinity();
    double p5_separation = std::numeric_limits<double>::infinity(); // 5th percentile of per-tick min
    double control_effort = 0.0;
    double cross_track_rms = 0.0;
    double cross_track_rms_steady = 0.0; // after the scenario transient
    double mean_solve_time = 0.0;
    double max_solve_time = 0.0;
    double constraint_violation_time = 0.0; // s with separation more than 1 cm below R_b + d_p
    bool collision = false;
    int ticks = 0;
    int solver_failures = 0;
    int infeasible_plans = 0;
    Termination termination = Termination::duration;
};

/// J_c = sum of u^T R u over the logged rate commands.
double control_effort(const SimLog &log, const Vec2 &R);

Metrics compute_metrics(const SimLog &log, const Scenario &scenario);

struct SimResult
{
    SimLog log;
    Metrics metrics;
};

SimResult run_closed_loop(const Scenario &scenario);

// Deterministic outputs; solve times are excluded and written separately.
void write_log_csv(std::ostream &os, const SimLog &log);
void write_separation_csv(std::ostream &os, const SimLog &log);
void write_timing_csv(std::ostream &os, const SimLog &log);
std::string metrics_to_json(const Metrics &m);
std::string timing_to_json(const Metrics &m);

} // namespace canal
