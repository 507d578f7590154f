#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "canalnav/ocp.hpp"

namespace canal
{

struct PidGains
{
    double k_p = 0.0;
    double k_i = 0.0;
    double k_d = 0.0;
    double integrator_limit = 100.0; // bound on the integral term k_i * sum(e dt)
    double output_limit = 100.0;

    void validate() const;
};

struct PidState
{
    double integral = 0.0; // integral term, already multiplied by k_i
    double prev_error = 0.0;
    bool primed = false; // false until the first call; the first derivative term is zero
};

/// PID with clamped integral term and clamped output. With `angular` the error
/// and its difference are wrapped to (-pi, pi].
double pid_step(double error, PidState &state, const PidGains &gains, double dt, bool angular = false);

struct KinematicState
{
    double x = 0.0;
    double y = 0.0;
    double psi = 0.0;

    Vec3 to_vector() const { return {x, y, psi}; }
    static KinematicState from_vector(const Vec3 &v) { return {v[0], v[1], v[2]}; }
    Vec2 position() const { return {x, y}; }
};

using Mat32 = Eigen::Matrix<double, 3, 2>;

/// RK4 step of x' = u cos psi, y' = u sin psi, psi' = r with input (u, r).
/// Optionally returns the exact sensitivities of the discrete map.
KinematicState kinematic_step(const KinematicState &s, const Vec2 &input, double dt, Mat3 *A = nullptr,
                              Mat32 *B = nullptr);

struct BaselineConfig
{
    int N_b = 50;
    double dt = 0.5; // s
    double target_speed = 2.0;
    double u_max = 4.0;
    double u_min = 0.0; // forward only; -u_max gives the symmetric box
    double r_max = 0.1;
    Vec2 stage1_weight = Vec2(0.0, 1.0); // heading effort first
    Vec2 stage2_weight = Vec2(1.0, 0.0); // then speed effort
    double cap_margin = 5e-7;            // stage-2 bound is J1* + cap_margin
    double plan_distance = 50.0;         // endpoint ahead on the reference path
    double replan_period = 1.0;          // s
    double lookahead = 15.8;             // LOS lookahead, two boat lengths
    int max_sqp_iterations = 60;
    int polish_iterations = 20; // capped stage-2 iterations after the frozen-turn-rate solve
    double step_tolerance = 1e-8;
    double feasibility_tolerance = 1e-8;
    double proximal_weight = 1e-6;
    PidGains heading{400.0, 0.0, 200.0, 100.0, 100.0};
    PidGains speed{25.0, 5.0, 0.0, 100.0, 100.0};
    NmpcConfig safety; // circle geometry, separation and actuator limits shared with the NMPC

    void validate() const;
};

/// Point at arc length `distance` ahead of the projection of `position` on the
/// path (extrapolated past the last waypoint), with the heading of its leg.
KinematicState point_ahead(const WaypointPath &path, const Vec2 &position, double distance);

/// Line-of-sight heading toward the path point `lookahead` metres ahead of the
/// projection of the pose.
double los_heading(const VesselState &pose, const WaypointPath &path, double lookahead);

enum class PlanStatus
{
    optimal,
    max_iter,
    infeasible,
};

std::string_view to_string(PlanStatus s);

struct LexiPlan
{
    PlanStatus status = PlanStatus::infeasible;
    std::vector<KinematicState> states; // N_b + 1
    std::vector<Vec2> inputs;           // N_b, (u, r)
    double J1 = 0.0;                    // stage-1 optimum, sum of r^2
    double J2 = 0.0;                    // stage-2 optimum, sum of u^2
    double heading_cost = 0.0;          // sum of r^2 of the returned trajectory
    double endpoint_error = 0.0;        // max-norm, heading wrapped
    double min_clearance = 0.0;         // min quartic clearance of bow/stern circles over nodes 1..N_b
    int stage1_iterations = 0;
    int stage2_iterations = 0;
    bool stage2_fallback = false; // stage 2 could not keep the cap; the stage-1 trajectory is returned
    std::string diagnostics;

    WaypointPath to_path() const;
};

double heading_cost(const std::vector<Vec2> &inputs);
double speed_cost(const std::vector<Vec2> &inputs);

/**
 * Lexicographic two-point boundary value planner on the kinematic model.
 * Stage 1 minimizes sum r^2 under the endpoint equalities, the input box and
 * the quartic obstacle constraints on the bow and stern circles; stage 2
 * minimizes sum u^2 with the extra constraint sum r^2 <= J1* + cap_margin.
 * Stage 2 is solved first with the stage-1 turn rates held fixed and then
 * refined over all inputs with the cap linearized per iteration; a refinement
 * is kept only if it is feasible and cheaper. Both stages run trust-region SQP
 * on single-shooting sensitivities.
 */
LexiPlan lexi_plan(const KinematicState &x_i, const KinematicState &x_f, const std::vector<LineSegment> &segments,
                   const BaselineConfig &cfg);

void write_plan_csv(std::ostream &os, const LexiPlan &plan);

struct Baseline1State
{
    PidState heading;
    PidState speed;
};

/**
 * LOS guidance with a heading PID on n_S and a speed PID on n_T. The PID
 * outputs are actuator targets; the returned rates move toward them within the
 * rate limits and keep the actuators inside their range after `dt`. On the
 * first call the speed integrator is seeded with the current throttle.
 */
RateInput baseline1_step(const VesselState &pose, const ActuatorState &act, const WaypointPath &planned,
                         Baseline1State &state, const BaselineConfig &cfg, double dt);

} // namespace canal
