#include "canalnav/ocp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace canal
{

void NmpcConfig::validate() const
{
    if (N_p < 1)
        throw std::invalid_argument("NmpcConfig: N_p must be >= 1");
    if (!(T_s > 0.0))
        throw std::invalid_argument("NmpcConfig: T_s must be positive");
    if ((Q.array() < 0.0).any() || (Q_T.array() < 0.0).any() || (R.array() < 0.0).any())
        throw std::invalid_argument("NmpcConfig: weights must be non-negative");
    if (!(rho > 0.0))
        throw std::invalid_argument("NmpcConfig: rho must be positive");
    if (!(R_b > 0.0 && d_p > 0.0 && l_b > 0.0 && l_s > 0.0))
        throw std::invalid_argument("NmpcConfig: R_b, d_p, l_b, l_s must be positive");
    if (!(n_T_max > 0.0 && n_S_max > 0.0 && dn_T_max > 0.0 && dn_S_max > 0.0))
        throw std::invalid_argument("NmpcConfig: actuator limits must be positive");
    if (!(detection_radius > 0.0))
        throw std::invalid_argument("NmpcConfig: detection_radius must be positive");
}

void WaypointPath::validate() const
{
    if (waypoints.size() < 2)
        throw InvalidPath("waypoint path needs at least two waypoints");
    for (std::size_t i = 1; i < waypoints.size(); ++i)
        if ((waypoints[i] - waypoints[i - 1]).norm() == 0.0)
            throw InvalidPath("consecutive waypoints " + std::to_string(i - 1) + " and " + std::to_string(i) +
                              " coincide");
    if (active_leg < 0 || active_leg >= num_legs())
        throw InvalidPath("active leg index out of range");
}

double reference_heading(const Vec2 &a, const Vec2 &b)
{
    const Vec2 d = b - a;
    if (d.norm() == 0.0)
        throw InvalidPath("reference_heading: coincident waypoints");
    return std::atan2(d.y(), d.x());
}

PathProjection project_onto_path(const WaypointPath &path, const Vec2 &position)
{
    path.validate();
    PathProjection proj;
    for (int leg = path.active_leg; leg < path.num_legs(); ++leg)
    {
        const Vec2 &a = path.waypoints[static_cast<std::size_t>(leg)];
        const Vec2 &b = path.waypoints[static_cast<std::size_t>(leg) + 1];
        const double len = (b - a).norm();
        const Vec2 dir = (b - a) / len;
        const Vec2 rel = position - a;
        const double t = std::clamp(rel.dot(dir), 0.0, len);
        proj.leg = leg;
        proj.along = t;
        proj.point = a + t * dir;
        proj.cross_track = dir.x() * rel.y() - dir.y() * rel.x();
        const bool at_end = t >= len - 1e-9;
        if (!at_end)
            break;
        if (leg + 1 == path.num_legs())
            proj.complete = true;
    }
    return proj;
}

ReferenceTrajectory build_reference(const WaypointPath &path, const VesselState &pose, const NmpcConfig &cfg)
{
    const PathProjection proj = project_onto_path(path, {pose.x, pose.y});
    const int last = path.num_legs() - 1;

    auto leg_geometry = [&](int leg) {
        const Vec2 &a = path.waypoints[static_cast<std::size_t>(leg)];
        const Vec2 &b = path.waypoints[static_cast<std::size_t>(leg) + 1];
        return std::tuple<Vec2, Vec2, double>(a, (b - a).normalized(), (b - a).norm());
    };

    ReferenceTrajectory ref;
    ref.active_leg = proj.leg;
    ref.points.reserve(static_cast<std::size_t>(cfg.N_p) + 1);

    int leg = proj.leg;
    double along = proj.along;
    double psi_prev = pose.psi;
    for (int i = 0; i <= cfg.N_p; ++i)
    {
        if (i > 0)
        {
            double remaining = cfg.u_ref * cfg.T_s;
            while (true)
            {
                const double len = std::get<2>(leg_geometry(leg));
                if (leg == last || along + remaining < len)
                {
                    along += remaining;
                    break;
                }
                remaining -= len - along;
                ++leg;
                along = 0.0;
            }
        }
        const auto [a, dir, len] = leg_geometry(leg);
        const Vec2 p = a + along * dir;
        const double heading = std::atan2(dir.y(), dir.x());
        const double psi = psi_prev + wrap_angle(heading - psi_prev);
        psi_prev = psi;
        Vec8 r = Vec8::Zero();
        r << p.x(), p.y(), psi, cfg.u_ref, 0.0, 0.0, 0.0, 0.0;
        ref.points.push_back(r);
    }
    return ref;
}

Vec8 tracking_error(const Vec8 &x, const Vec8 &r)
{
    Vec8 e = x - r;
    e[2] = wrap_angle(e[2]);
    return e;
}

double stage_cost(const Vec8 &x, const Vec8 &r, const Vec2 &u, double s, const NmpcConfig &cfg)
{
    const Vec8 e = tracking_error(x, r);
    return e.dot(cfg.Q.cwiseProduct(e)) + u.dot(cfg.R.cwiseProduct(u)) + cfg.rho * s * s;
}

double terminal_cost(const Vec8 &x, const Vec8 &r, double s, const NmpcConfig &cfg)
{
    const Vec8 e = tracking_error(x, r);
    return e.dot(cfg.Q_T.cwiseProduct(e)) + cfg.rho * s * s;
}

SafetyCircles safety_circle_centers(const VesselState &pose, const NmpcConfig &cfg)
{
    const Vec2 heading(std::cos(pose.psi), std::sin(pose.psi));
    const Vec2 p(pose.x, pose.y);
    return {p + cfg.l_b * heading, p - cfg.l_s * heading};
}

namespace
{
struct LocalCoords
{
    double along;   // projection on the segment direction
    double normal;  // projection on the left normal
    double A;       // axial semi-axis
    double B;       // lateral semi-axis (floored)
    bool floored;
};

LocalCoords local_coords(const Vec2 &p, const LineSegment &seg, double s, const NmpcConfig &cfg)
{
    const double c = std::cos(seg.theta), sn = std::sin(seg.theta);
    const double dx = p.x() - seg.x_c, dy = p.y() - seg.y_c;
    LocalCoords lc;
    lc.along = dx * c + dy * sn;
    lc.normal = -dx * sn + dy * c;
    lc.A = 0.5 * seg.l + cfg.R_b + cfg.d_p;
    const double B = cfg.R_b + cfg.d_p - s;
    lc.floored = B < kDenominatorFloor;
    lc.B = lc.floored ? kDenominatorFloor : B;
    return lc;
}

double pow4(double v)
{
    const double v2 = v * v;
    return v2 * v2;
}
} // namespace

double obstacle_constraint_value(const Vec2 &p, const LineSegment &seg, double s, const NmpcConfig &cfg)
{
    const LocalCoords lc = local_coords(p, seg, s, cfg);
    return pow4(lc.along / lc.A) + pow4(lc.normal / lc.B) - 1.0;
}

ConstraintGradient obstacle_constraint_gradient(const Vec2 &p, const LineSegment &seg, double s, const NmpcConfig &cfg)
{
    const LocalCoords lc = local_coords(p, seg, s, cfg);
    const double a = lc.along / lc.A, b = lc.normal / lc.B;
    const double c = std::cos(seg.theta), sn = std::sin(seg.theta);
    ConstraintGradient g;
    g.value = pow4(a) + pow4(b) - 1.0;
    const double ga = 4.0 * a * a * a / lc.A;
    const double gb = 4.0 * b * b * b / lc.B;
    g.d_position = Vec2(ga * c - gb * sn, ga * sn + gb * c);
    g.d_slack = lc.floored ? 0.0 : 4.0 * pow4(b) / lc.B;
    return g;
}

double required_slack(const Vec2 &p, const LineSegment &seg, const NmpcConfig &cfg)
{
    const LocalCoords lc = local_coords(p, seg, 0.0, cfg);
    const double a4 = pow4(lc.along / lc.A);
    if (a4 >= 1.0)
        return 0.0;
    const double k = std::pow(1.0 - a4, 0.25);
    return std::max(0.0, cfg.separation() - std::abs(lc.normal) / k);
}

double quartic_clearance(const Vec2 &p, const LineSegment &seg, const NmpcConfig &cfg)
{
    const LocalCoords lc = local_coords(p, seg, 0.0, cfg);
    const double radius = std::hypot(lc.along, lc.normal);
    if (radius == 0.0)
        return -std::min(lc.A, lc.B);
    const double scale = std::pow(pow4(lc.along / lc.A) + pow4(lc.normal / lc.B), 0.25);
    return radius - radius / scale;
}

std::vector<LineSegment> segments_in_range(const std::vector<LineSegment> &segments, const Vec2 &position,
                                           double radius)
{
    std::vector<LineSegment> out;
    for (const LineSegment &s : segments)
        if ((s.center() - position).norm() <= radius)
            out.push_back(s);
    return out;
}

OcpProblem assemble(const VesselState &pose, const ActuatorState &act, const WaypointPath &path,
                    const std::vector<LineSegment> &segments, const NmpcConfig &cfg, const ParamSet &params,
                    const std::optional<InitialGuess> &warm_start)
{
    cfg.validate();
    params.validate();
    const PathProjection proj = project_onto_path(path, {pose.x, pose.y});
    if (proj.complete)
        throw PathComplete();

    OcpProblem ocp;
    ocp.cfg = cfg;
    ocp.params = params;
    ocp.x_init = to_vector(AugmentedState{pose, act});
    ocp.reference = build_reference(path, pose, cfg);
    ocp.segments = segments_in_range(segments, {pose.x, pose.y}, cfg.detection_radius);

    const auto N = static_cast<std::size_t>(cfg.N_p);
    const bool warm_ok = warm_start && warm_start->states.size() == N + 1 && warm_start->inputs.size() == N &&
                         warm_start->slacks.size() == N + 1;
    if (warm_ok)
    {
        ocp.guess = *warm_start;
        // Keep the stored headings on the same branch as the measured one.
        const double shift = ocp.x_init[2] - ocp.guess.states[0][2];
        const double turns = std::round(shift / (2.0 * std::numbers::pi));
        if (turns != 0.0)
            for (Vec8 &x : ocp.guess.states)
                x[2] += turns * 2.0 * std::numbers::pi;
    }
    else
    {
        // Cold start: reference states with the actuators held at their measured
        // values (zero throttle would linearize away the thrust sensitivity).
        ocp.guess.states = ocp.reference.points;
        for (Vec8 &x : ocp.guess.states)
        {
            x[6] = act.n_T;
            x[7] = act.n_S;
        }
        ocp.guess.states[0] = ocp.x_init;
        ocp.guess.inputs.assign(N, Vec2::Zero());
        // Slacks start at the smallest value the guessed states need.
        ocp.guess.slacks.assign(N + 1, 0.0);
        for (std::size_t k = 0; k <= N; ++k)
        {
            const Vec8 &x = ocp.guess.states[k];
            const SafetyCircles c = safety_circle_centers({x[0], x[1], x[2], x[3], x[4], x[5]}, cfg);
            double s = 0.0;
            for (const LineSegment &seg : ocp.segments)
                s = std::max({s, required_slack(c.bow, seg, cfg), required_slack(c.stern, seg, cfg)});
            ocp.guess.slacks[k] = std::min(s, cfg.separation() - kDenominatorFloor);
        }
    }
    return ocp;
}

} // namespace canal
