#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "canalnav/perception.hpp"
#include "canalnav/qp.hpp"
#include "canalnav/vessel.hpp"

namespace canal
{

class InvalidPath : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown by assemble() once the vessel has passed the end of the final leg.
class PathComplete : public std::runtime_error
{
public:
    PathComplete() : std::runtime_error("waypoint path complete") {}
};

struct NmpcConfig
{
    int N_p = 25;
    double T_s = 1.0;
    Vec8 Q = (Vec8() << 1.0, 1.0, 500.0, 10.0, 0.0, 1000.0, 0.0, 0.0).finished();
    Vec8 Q_T = Q * 25.0;
    Vec2 R = Vec2(1e-4, 1e-4);
    double rho = 1e4;
    double n_T_max = 100.0;
    double n_S_max = 100.0;
    double dn_T_max = 10.0; // %/s
    double dn_S_max = 40.0; // %/s
    double R_b = 3.0;
    double d_p = 2.0;
    double l_b = 2.0;
    double l_s = 2.0;
    double u_ref = 2.0;
    double detection_radius = 50.0;

    double separation() const { return R_b + d_p; }
    void validate() const;
};

struct WaypointPath
{
    std::vector<Vec2> waypoints;
    int active_leg = 0;

    int num_legs() const { return static_cast<int>(waypoints.size()) - 1; }
    void validate() const;
};

struct PathProjection
{
    int leg = 0;
    double along = 0.0; // distance from the start of `leg`
    Vec2 point = Vec2::Zero();
    double cross_track = 0.0; // signed, positive to the left of the leg direction
    bool complete = false;    // projected onto the end of the final leg
};

double reference_heading(const Vec2 &a, const Vec2 &b);

// Projects onto the active leg, advancing legs while the projection sits at a
// leg end. Never moves backwards past `path.active_leg`.
PathProjection project_onto_path(const WaypointPath &path, const Vec2 &position);

struct ReferenceTrajectory
{
    // Each entry is [x_r, y_r, psi_r, u_r, 0, 0, 0, 0].
    std::vector<Vec8> points;
    int active_leg = 0;
};

ReferenceTrajectory build_reference(const WaypointPath &path, const VesselState &pose, const NmpcConfig &cfg);

// Heading error wrapped to (-pi, pi]; actuator and velocity errors are plain differences.
Vec8 tracking_error(const Vec8 &x, const Vec8 &r);

double stage_cost(const Vec8 &x, const Vec8 &r, const Vec2 &u, double s, const NmpcConfig &cfg);
double terminal_cost(const Vec8 &x, const Vec8 &r, double s, const NmpcConfig &cfg);

struct SafetyCircles
{
    Vec2 bow;
    Vec2 stern;
};

SafetyCircles safety_circle_centers(const VesselState &pose, const NmpcConfig &cfg);

inline constexpr double kDenominatorFloor = 0.1; // m

/// Super-ellipse approximation of "distance(p, seg) >= R_b + d_p - s"; satisfied iff >= 0.
double obstacle_constraint_value(const Vec2 &p, const LineSegment &seg, double s, const NmpcConfig &cfg);

struct ConstraintGradient
{
    double value = 0.0;
    Vec2 d_position = Vec2::Zero();
    double d_slack = 0.0;
};

ConstraintGradient obstacle_constraint_gradient(const Vec2 &p, const LineSegment &seg, double s, const NmpcConfig &cfg);

/// Smallest s >= 0 with obstacle_constraint_value(p, seg, s) >= 0, ignoring the floor.
double required_slack(const Vec2 &p, const LineSegment &seg, const NmpcConfig &cfg);

/// Signed distance to the quartic boundary measured along the ray from the
/// segment center (s = 0): zero on the boundary, positive outside. Through the
/// center along the normal it equals distance - (R_b + d_p).
double quartic_clearance(const Vec2 &p, const LineSegment &seg, const NmpcConfig &cfg);

struct InitialGuess
{
    std::vector<Vec8> states;  // N_p + 1
    std::vector<Vec2> inputs;  // N_p
    std::vector<double> slacks; // N_p + 1
    std::vector<ActiveConstraint> active_set; // QP active set of the previous solve
};

/// Multiple-shooting OCP snapshot handed to the solver.
struct OcpProblem
{
    Vec8 x_init = Vec8::Zero();
    ReferenceTrajectory reference;
    std::vector<LineSegment> segments; // within detection_radius
    NmpcConfig cfg;
    ParamSet params;
    InitialGuess guess;

    int horizon() const { return cfg.N_p; }
    int num_obstacle_constraints() const { return 2 * static_cast<int>(segments.size()) * (cfg.N_p + 1); }
};

std::vector<LineSegment> segments_in_range(const std::vector<LineSegment> &segments, const Vec2 &position,
                                           double radius);

OcpProblem assemble(const VesselState &pose, const ActuatorState &act, const WaypointPath &path,
                    const std::vector<LineSegment> &segments, const NmpcConfig &cfg, const ParamSet &params,
                    const std::optional<InitialGuess> &warm_start = std::nullopt);

} // namespace canal
