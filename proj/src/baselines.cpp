#include "canalnav/baselines.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "canalnav/qp.hpp"

namespace canal
{

void PidGains::validate() const
{
    if (!(k_p >= 0.0 && k_i >= 0.0 && k_d >= 0.0))
        throw std::invalid_argument("PidGains: gains must be non-negative");
    if (!(integrator_limit > 0.0 && output_limit > 0.0))
        throw std::invalid_argument("PidGains: limits must be positive");
}

double pid_step(double error, PidState &state, const PidGains &gains, double dt, bool angular)
{
    if (!(dt > 0.0))
        throw std::invalid_argument("pid_step: dt must be positive");
    if (angular)
        error = wrap_angle(error);
    double derivative = 0.0;
    if (state.primed)
    {
        const double de = angular ? wrap_angle(error - state.prev_error) : error - state.prev_error;
        derivative = de / dt;
    }
    state.integral =
        std::clamp(state.integral + gains.k_i * error * dt, -gains.integrator_limit, gains.integrator_limit);
    state.prev_error = error;
    state.primed = true;
    const double out = gains.k_p * error + state.integral + gains.k_d * derivative;
    return std::clamp(out, -gains.output_limit, gains.output_limit);
}

namespace
{
std::string sci(double v)
{
    std::ostringstream os;
    os << std::setprecision(3) << v;
    return os.str();
}

Vec3 kin_rhs(const Vec3 &x, const Vec2 &w)
{
    return {w[0] * std::cos(x[2]), w[0] * std::sin(x[2]), w[1]};
}

Mat3 kin_dx(const Vec3 &x, const Vec2 &w)
{
    Mat3 A = Mat3::Zero();
    A(0, 2) = -w[0] * std::sin(x[2]);
    A(1, 2) = w[0] * std::cos(x[2]);
    return A;
}

Mat32 kin_dw(const Vec3 &x)
{
    Mat32 B = Mat32::Zero();
    B(0, 0) = std::cos(x[2]);
    B(1, 0) = std::sin(x[2]);
    B(2, 1) = 1.0;
    return B;
}
} // namespace

KinematicState kinematic_step(const KinematicState &s, const Vec2 &w, double dt, Mat3 *A, Mat32 *B)
{
    if (!(dt > 0.0))
        throw std::invalid_argument("kinematic_step: dt must be positive");
    const Vec3 x = s.to_vector();
    const Vec3 k1 = kin_rhs(x, w);
    const Vec3 x2 = x + 0.5 * dt * k1;
    const Vec3 k2 = kin_rhs(x2, w);
    const Vec3 x3 = x + 0.5 * dt * k2;
    const Vec3 k3 = kin_rhs(x3, w);
    const Vec3 x4 = x + dt * k3;
    const Vec3 k4 = kin_rhs(x4, w);
    const Vec3 next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

    if (A != nullptr || B != nullptr)
    {
        const Mat3 I = Mat3::Identity();
        const Mat3 K1x = kin_dx(x, w);
        const Mat32 K1w = kin_dw(x);
        const Mat3 K2x = kin_dx(x2, w) * (I + 0.5 * dt * K1x);
        const Mat32 K2w = kin_dx(x2, w) * (0.5 * dt * K1w) + kin_dw(x2);
        const Mat3 K3x = kin_dx(x3, w) * (I + 0.5 * dt * K2x);
        const Mat32 K3w = kin_dx(x3, w) * (0.5 * dt * K2w) + kin_dw(x3);
        const Mat3 K4x = kin_dx(x4, w) * (I + dt * K3x);
        const Mat32 K4w = kin_dx(x4, w) * (dt * K3w) + kin_dw(x4);
        if (A != nullptr)
            *A = I + dt / 6.0 * (K1x + 2.0 * K2x + 2.0 * K3x + K4x);
        if (B != nullptr)
            *B = dt / 6.0 * (K1w + 2.0 * K2w + 2.0 * K3w + K4w);
    }
    return KinematicState::from_vector(next);
}

void BaselineConfig::validate() const
{
    if (N_b < 1)
        throw std::invalid_argument("BaselineConfig: N_b must be >= 1");
    if (!(dt > 0.0 && u_max > 0.0 && r_max > 0.0 && target_speed > 0.0))
        throw std::invalid_argument("BaselineConfig: dt, bounds and target speed must be positive");
    if (!(u_min < u_max && u_min >= -u_max))
        throw std::invalid_argument("BaselineConfig: need -u_max <= u_min < u_max");
    if ((stage1_weight.array() < 0.0).any() || (stage2_weight.array() < 0.0).any())
        throw std::invalid_argument("BaselineConfig: stage weights must be non-negative");
    if (!(plan_distance > 0.0 && lookahead > 0.0 && replan_period > 0.0))
        throw std::invalid_argument("BaselineConfig: plan distance, lookahead and replan period must be positive");
    if (max_sqp_iterations < 1 || !(proximal_weight > 0.0) || cap_margin < 0.0)
        throw std::invalid_argument("BaselineConfig: bad solver settings");
    heading.validate();
    speed.validate();
    safety.validate();
}

KinematicState point_ahead(const WaypointPath &path, const Vec2 &position, double distance)
{
    const PathProjection proj = project_onto_path(path, position);
    int leg = proj.leg;
    double along = proj.along + distance;
    const int last = path.num_legs() - 1;
    while (true)
    {
        const Vec2 &a = path.waypoints[static_cast<std::size_t>(leg)];
        const Vec2 &b = path.waypoints[static_cast<std::size_t>(leg) + 1];
        const double len = (b - a).norm();
        if (along <= len || leg == last)
        {
            const Vec2 dir = (b - a) / len;
            const Vec2 p = a + along * dir;
            return {p.x(), p.y(), std::atan2(dir.y(), dir.x())};
        }
        along -= len;
        ++leg;
    }
}

double los_heading(const VesselState &pose, const WaypointPath &path, double lookahead)
{
    if (!(lookahead > 0.0))
        throw std::invalid_argument("los_heading: lookahead must be positive");
    const KinematicState target = point_ahead(path, {pose.x, pose.y}, lookahead);
    const Vec2 d = target.position() - Vec2(pose.x, pose.y);
    return std::atan2(d.y(), d.x());
}

std::string_view to_string(PlanStatus s)
{
    switch (s)
    {
    case PlanStatus::optimal: return "optimal";
    case PlanStatus::max_iter: return "max_iter";
    case PlanStatus::infeasible: return "infeasible";
    }
    return "unknown";
}

WaypointPath LexiPlan::to_path() const
{
    WaypointPath path;
    for (const KinematicState &s : states)
        if (path.waypoints.empty() || (s.position() - path.waypoints.back()).norm() > 1e-6)
            path.waypoints.push_back(s.position());
    if (path.waypoints.size() < 2)
    {
        const KinematicState &s = states.empty() ? KinematicState{} : states.back();
        path.waypoints.push_back(s.position() + Vec2(std::cos(s.psi), std::sin(s.psi)));
    }
    return path;
}

double heading_cost(const std::vector<Vec2> &inputs)
{
    double c = 0.0;
    for (const Vec2 &w : inputs)
        c += w[1] * w[1];
    return c;
}

double speed_cost(const std::vector<Vec2> &inputs)
{
    double c = 0.0;
    for (const Vec2 &w : inputs)
        c += w[0] * w[0];
    return c;
}

namespace
{
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kObstacleRange = 20.0; // rows for farther node-segment pairs are dropped

struct Rollout
{
    std::vector<KinematicState> states;
    std::vector<Mat3> A;
    std::vector<Mat32> B;
};

Rollout roll(const KinematicState &x0, const std::vector<Vec2> &U, double dt, bool with_jacobians)
{
    Rollout r;
    r.states.reserve(U.size() + 1);
    r.states.push_back(x0);
    if (with_jacobians)
    {
        r.A.resize(U.size());
        r.B.resize(U.size());
    }
    for (std::size_t k = 0; k < U.size(); ++k)
        r.states.push_back(with_jacobians ? kinematic_step(r.states.back(), U[k], dt, &r.A[k], &r.B[k])
                                          : kinematic_step(r.states.back(), U[k], dt));
    return r;
}

Vec3 endpoint_residual(const KinematicState &x_N, const KinematicState &x_f)
{
    return {x_f.x - x_N.x, x_f.y - x_N.y, wrap_angle(x_f.psi - x_N.psi)};
}

// Signed circle offsets along the heading: bow ahead, stern behind.
std::array<double, 2> circle_offsets(const NmpcConfig &c)
{
    return {c.l_b, -c.l_s};
}

Vec2 circle_center(const KinematicState &s, double offset)
{
    return s.position() + offset * Vec2(std::cos(s.psi), std::sin(s.psi));
}

double min_quartic_clearance(const std::vector<KinematicState> &states, const std::vector<LineSegment> &segs,
                             const NmpcConfig &c)
{
    double best = kInf;
    for (std::size_t k = 1; k < states.size(); ++k)
        for (double o : circle_offsets(c))
            for (const LineSegment &s : segs)
                best = std::min(best, quartic_clearance(circle_center(states[k], o), s, c));
    return best;
}

// Samples a cubic Hermite curve between the two poses at uniform parameter steps
// and reads off speed and turn rate.
std::vector<Vec2> hermite_guess(const KinematicState &a, const KinematicState &b, const BaselineConfig &cfg)
{
    const int N = cfg.N_b;
    const double L = (b.position() - a.position()).norm();
    const Vec2 p0 = a.position(), p1 = b.position();
    const Vec2 m0 = L * Vec2(std::cos(a.psi), std::sin(a.psi));
    const Vec2 m1 = L * Vec2(std::cos(b.psi), std::sin(b.psi));
    auto point = [&](double s) {
        const double s2 = s * s, s3 = s2 * s;
        return Vec2((2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * m0 + (-2 * s3 + 3 * s2) * p1 + (s3 - s2) * m1);
    };
    std::vector<Vec2> pts;
    for (int k = 0; k <= N; ++k)
        pts.push_back(point(static_cast<double>(k) / N));
    std::vector<double> heading(static_cast<std::size_t>(N) + 1);
    heading[0] = a.psi;
    for (int k = 1; k < N; ++k)
    {
        const Vec2 d = pts[static_cast<std::size_t>(k) + 1] - pts[static_cast<std::size_t>(k) - 1];
        const double h = std::atan2(d.y(), d.x());
        heading[static_cast<std::size_t>(k)] = heading[static_cast<std::size_t>(k) - 1] +
                                               wrap_angle(h - heading[static_cast<std::size_t>(k) - 1]);
    }
    heading[static_cast<std::size_t>(N)] =
        heading[static_cast<std::size_t>(N) - 1] + wrap_angle(b.psi - heading[static_cast<std::size_t>(N) - 1]);
    std::vector<Vec2> U;
    for (int k = 0; k < N; ++k)
    {
        const auto i = static_cast<std::size_t>(k);
        const double u = (pts[i + 1] - pts[i]).norm() / cfg.dt;
        const double r = (heading[i + 1] - heading[i]) / cfg.dt;
        U.emplace_back(std::clamp(u, cfg.u_min, cfg.u_max), std::clamp(r, -cfg.r_max, cfg.r_max));
    }
    return U;
}

struct StageResult
{
    PlanStatus status = PlanStatus::infeasible;
    std::vector<Vec2> U;
    int iterations = 0;
    std::string message;
};

struct Violation
{
    double max = 0.0; // largest single violation
    double l1 = 0.0;  // sum of violations, for the merit function
};

Violation violation(const KinematicState &x_i, const KinematicState &x_f, const std::vector<Vec2> &U,
                    const std::vector<LineSegment> &segs, const BaselineConfig &cfg, double cap)
{
    const Rollout r = roll(x_i, U, cfg.dt, false);
    Violation v;
    const Vec3 e = endpoint_residual(r.states.back(), x_f).cwiseAbs();
    v.max = e.maxCoeff();
    v.l1 = e.sum();
    for (std::size_t k = 1; k < r.states.size(); ++k)
        for (double o : circle_offsets(cfg.safety))
            for (const LineSegment &seg : segs)
            {
                const double g = obstacle_constraint_value(circle_center(r.states[k], o), seg, 0.0, cfg.safety);
                if (g < 0.0)
                {
                    v.max = std::max(v.max, -g);
                    v.l1 -= g;
                }
            }
    if (std::isfinite(cap) && heading_cost(U) > cap)
    {
        v.max = std::max(v.max, heading_cost(U) - cap);
        v.l1 += heading_cost(U) - cap;
    }
    return v;
}

double stage_objective(const std::vector<Vec2> &U, const Vec2 &weight)
{
    double f = 0.0;
    for (const Vec2 &w : U)
        f += weight.dot(w.cwiseAbs2());
    return f;
}

struct Linearization
{
    Eigen::MatrixXd A;
    Eigen::VectorXd lo, hi;
    int cap_row = -1;
    int num_equalities = 0; // leading rows: endpoint residual
};

// Constraint rows of the SQP subproblem at U, in the step variables.
Linearization linearize(const KinematicState &x_i, const KinematicState &x_f, const std::vector<Vec2> &U,
                        const std::vector<LineSegment> &segs, const BaselineConfig &cfg, double cap,
                        bool freeze_turn_rate)
{
    const int N = cfg.N_b;
    const int n = 2 * N;
    const Rollout r = roll(x_i, U, cfg.dt, true);
    std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> S(static_cast<std::size_t>(N) + 1,
                                                            Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, n));
    for (int k = 0; k < N; ++k)
    {
        const auto i = static_cast<std::size_t>(k);
        S[i + 1] = r.A[i] * S[i];
        S[i + 1].middleCols(2 * k, 2) += r.B[i];
    }

    struct Row
    {
        Eigen::RowVectorXd a;
        double lo, hi;
    };
    std::vector<Row> rows;
    Linearization lin;
    const Vec3 res = endpoint_residual(r.states.back(), x_f);
    // With frozen turn rates the final heading cannot change; its row would be all zeros.
    lin.num_equalities = freeze_turn_rate ? 2 : 3;
    for (int j = 0; j < lin.num_equalities; ++j)
        rows.push_back({S.back().row(j), res[j], res[j]});
    if (std::isfinite(cap))
    {
        lin.cap_row = static_cast<int>(rows.size());
        Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(n);
        for (int k = 0; k < N; ++k)
            a[2 * k + 1] = 2.0 * U[static_cast<std::size_t>(k)][1];
        rows.push_back({a, -kInf, cap - heading_cost(U)});
    }
    for (int k = 1; k <= N; ++k)
    {
        const KinematicState &s = r.states[static_cast<std::size_t>(k)];
        for (double o : circle_offsets(cfg.safety))
        {
            const Vec2 c = circle_center(s, o);
            Eigen::Matrix<double, 2, 3> J;
            J << 1.0, 0.0, -o * std::sin(s.psi), 0.0, 1.0, o * std::cos(s.psi);
            for (const LineSegment &seg : segs)
            {
                if (point_segment_distance(c.x(), c.y(), seg) > kObstacleRange)
                    continue;
                const ConstraintGradient g = obstacle_constraint_gradient(c, seg, 0.0, cfg.safety);
                rows.push_back({g.d_position.transpose() * J * S[static_cast<std::size_t>(k)], -g.value, kInf});
            }
        }
    }
    lin.A.resize(static_cast<Eigen::Index>(rows.size()), n);
    lin.lo.resize(static_cast<Eigen::Index>(rows.size()));
    lin.hi.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
    {
        lin.A.row(static_cast<Eigen::Index>(i)) = rows[i].a;
        lin.lo[static_cast<Eigen::Index>(i)] = rows[i].lo;
        lin.hi[static_cast<Eigen::Index>(i)] = rows[i].hi;
    }
    return lin;
}

/**
 * Elastic form of an inconsistent subproblem: the endpoint rows and every row
 * violated at the current point get nonnegative slacks with an l1 penalty, so
 * the step reduces the linearized violation as far as the bounds allow.
 */
QpResult solve_elastic(const QpProblem &qp, int num_equalities)
{
    const int n = qp.num_vars();
    std::vector<std::pair<int, double>> slacks; // (row, sign)
    for (int i = 0; i < qp.num_rows(); ++i)
    {
        const bool elastic = i < num_equalities || qp.lbA[i] > 0.0 || qp.ubA[i] < 0.0;
        if (!elastic)
            continue;
        if (std::isfinite(qp.lbA[i]))
            slacks.emplace_back(i, 1.0);
        if (std::isfinite(qp.ubA[i]))
            slacks.emplace_back(i, -1.0);
    }
    const int m = static_cast<int>(slacks.size());
    constexpr double penalty = 1e4;
    QpProblem e;
    e.H = Eigen::MatrixXd::Zero(n + m, n + m);
    e.H.topLeftCorner(n, n) = qp.H;
    e.H.bottomRightCorner(m, m).diagonal().setConstant(1e-8);
    e.g = Eigen::VectorXd::Constant(n + m, penalty);
    e.g.head(n) = qp.g;
    e.A = Eigen::MatrixXd::Zero(qp.num_rows(), n + m);
    e.A.leftCols(n) = qp.A;
    for (int j = 0; j < m; ++j)
        e.A(slacks[static_cast<std::size_t>(j)].first, n + j) = slacks[static_cast<std::size_t>(j)].second;
    e.lbA = qp.lbA;
    e.ubA = qp.ubA;
    e.lb = Eigen::VectorXd::Zero(n + m);
    e.ub = Eigen::VectorXd::Constant(n + m, kInf);
    e.lb.head(n) = qp.lb;
    e.ub.head(n) = qp.ub;
    QpOptions opt;
    opt.max_iter = 50000;
    QpResult r = solve_qp(e, {}, opt);
    if (r.status == QpStatus::optimal)
    {
        r.x.conservativeResize(n);
        r.row_multipliers.setZero();
        r.active.clear();
    }
    return r;
}

// Trust-region SQP with filter-style step acceptance. The QP Hessian carries the
// objective, a small proximal term and the curvature of the heading-cost cap
// weighted by its last multiplier; the dynamics enter through single-shooting
// sensitivities. An inconsistent subproblem falls back to its elastic form, and
// a run that stops slightly infeasible gets minimum-norm feasibility steps.
StageResult run_stage(const KinematicState &x_i, const KinematicState &x_f, std::vector<Vec2> U,
                      const std::vector<LineSegment> &segs, const BaselineConfig &cfg, const Vec2 &weight, double cap,
                      bool freeze_turn_rate, int max_iterations)
{
    const int N = cfg.N_b;
    const int n = 2 * N;
    const Vec2 lo(cfg.u_min, -cfg.r_max);
    const Vec2 hi(cfg.u_max, cfg.r_max);
    const Vec2 trust_max(0.5 * cfg.u_max, cfg.r_max);
    StageResult out;
    std::vector<ActiveConstraint> warm;
    double radius = 1.0; // fraction of trust_max
    double cap_multiplier = 0.0;

    auto subproblem = [&](const Linearization &lin) {
        QpProblem qp;
        qp.A = lin.A;
        qp.lbA = lin.lo;
        qp.ubA = lin.hi;
        qp.H = Eigen::MatrixXd::Zero(n, n);
        qp.g = Eigen::VectorXd::Zero(n);
        return qp;
    };
    auto set_box = [&](QpProblem &qp, double scale) {
        qp.lb.resize(n);
        qp.ub.resize(n);
        for (int v = 0; v < n; ++v)
        {
            const double w = U[static_cast<std::size_t>(v / 2)][v % 2];
            qp.lb[v] = std::max(lo[v % 2] - w, -scale * trust_max[v % 2]);
            qp.ub[v] = std::min(hi[v % 2] - w, scale * trust_max[v % 2]);
            if (freeze_turn_rate && v % 2 == 1)
                qp.lb[v] = qp.ub[v] = 0.0;
        }
    };
    auto apply = [&](const Eigen::VectorXd &x) {
        std::vector<Vec2> trial = U;
        for (int k = 0; k < N; ++k)
        {
            Vec2 &w = trial[static_cast<std::size_t>(k)];
            w[0] = std::clamp(w[0] + x[2 * k], lo[0], hi[0]);
            w[1] = std::clamp(w[1] + x[2 * k + 1], lo[1], hi[1]);
        }
        return trial;
    };

    Violation viol = violation(x_i, x_f, U, segs, cfg, cap);
    const double ceiling = std::max(10.0 * viol.l1, 1e-4);
    bool converged = false;
    for (int it = 0; it < max_iterations && !converged; ++it)
    {
        out.iterations = it + 1;
        const Linearization lin = linearize(x_i, x_f, U, segs, cfg, cap, freeze_turn_rate);
        QpProblem qp = subproblem(lin);
        for (int k = 0; k < N; ++k)
            for (int j = 0; j < 2; ++j)
            {
                const int v = 2 * k + j;
                const double curvature = j == 1 ? 2.0 * cap_multiplier : 0.0;
                qp.H(v, v) = 2.0 * weight[j] + cfg.proximal_weight + curvature;
                qp.g[v] = 2.0 * weight[j] * U[static_cast<std::size_t>(k)][j];
            }

        const double f0 = stage_objective(U, weight);
        bool accepted = false;
        double step = 0.0;
        while (radius >= 1e-9)
        {
            set_box(qp, radius);
            QpResult sol = solve_qp(qp, warm);
            if (sol.status == QpStatus::infeasible)
            {
                // The trust region can make the linearization infeasible; retry with
                // the full box, then in elastic form.
                set_box(qp, kInf);
                sol = solve_qp(qp);
                if (sol.status == QpStatus::infeasible)
                {
                    set_box(qp, radius);
                    sol = solve_elastic(qp, lin.num_equalities);
                }
            }
            if (sol.status != QpStatus::optimal)
            {
                out.status = PlanStatus::infeasible;
                out.message =
                    "QP " + std::string(to_string(sol.status)) + " at SQP iteration " + std::to_string(it + 1);
                out.U = U;
                return out;
            }
            warm = sol.active;

            const std::vector<Vec2> trial = apply(sol.x);
            const Violation tv = violation(x_i, x_f, trial, segs, cfg, cap);
            const double f_new = stage_objective(trial, weight);
            step = sol.x.lpNorm<Eigen::Infinity>();
            // Filter-style acceptance: less infeasible, or cheaper while staying
            // below the violation ceiling.
            const bool less_infeasible = tv.l1 <= 0.9 * viol.l1;
            const bool cheaper = f_new < f0 && tv.l1 <= ceiling;
            if (less_infeasible || cheaper || step <= cfg.step_tolerance)
            {
                U = trial;
                viol = tv;
                if (lin.cap_row >= 0 && sol.row_multipliers.size() > lin.cap_row)
                    cap_multiplier = std::abs(sol.row_multipliers[lin.cap_row]);
                radius = std::min(1.0, 2.0 * radius);
                accepted = true;
                break;
            }
            radius *= 0.25;
        }
        if (!accepted)
            break; // no merit decrease even for tiny steps
        converged = step <= cfg.step_tolerance && viol.max <= cfg.feasibility_tolerance;
    }
    if (converged)
    {
        out.status = PlanStatus::optimal;
        out.U = U;
        return out;
    }

    // Feasibility restoration: minimum-norm steps onto the linearized constraints.
    for (int it = 0; it < 10 && viol.max > cfg.feasibility_tolerance; ++it)
    {
        const Linearization lin = linearize(x_i, x_f, U, segs, cfg, cap, freeze_turn_rate);
        QpProblem qp = subproblem(lin);
        qp.H.diagonal().setOnes();
        set_box(qp, kInf);
        QpResult sol = solve_qp(qp);
        if (sol.status != QpStatus::optimal)
            sol = solve_elastic(qp, lin.num_equalities);
        if (sol.status != QpStatus::optimal)
            break;
        const std::vector<Vec2> trial = apply(sol.x);
        const Violation tv = violation(x_i, x_f, trial, segs, cfg, cap);
        if (!(tv.max < viol.max))
            break;
        U = trial;
        viol = tv;
    }
    out.status = viol.max <= cfg.feasibility_tolerance ? PlanStatus::max_iter : PlanStatus::infeasible;
    out.message = viol.max <= cfg.feasibility_tolerance
                      ? "SQP stopped before the step tolerance was met"
                      : "SQP stopped with constraint violation " + sci(viol.max) + " after " +
                            std::to_string(out.iterations) + " iterations";
    out.U = U;
    return out;
}

void finish(LexiPlan &plan, const KinematicState &x_i, const KinematicState &x_f, const std::vector<Vec2> &U,
            const std::vector<LineSegment> &segs, const BaselineConfig &cfg)
{
    const Rollout r = roll(x_i, U, cfg.dt, false);
    plan.states = r.states;
    plan.inputs = U;
    plan.heading_cost = heading_cost(U);
    plan.endpoint_error = endpoint_residual(r.states.back(), x_f).lpNorm<Eigen::Infinity>();
    plan.min_clearance = segs.empty() ? kInf : min_quartic_clearance(r.states, segs, cfg.safety);
}
} // namespace

LexiPlan lexi_plan(const KinematicState &x_i, const KinematicState &x_f, const std::vector<LineSegment> &segments,
                   const BaselineConfig &cfg)
{
    cfg.validate();
    LexiPlan plan;
    const double reach = cfg.N_b * cfg.dt * cfg.u_max;
    const double dist = (x_f.position() - x_i.position()).norm();
    if (dist > reach)
    {
        plan.diagnostics = "endpoint " + std::to_string(dist) + " m away exceeds reach " + std::to_string(reach) + " m";
        finish(plan, x_i, x_f, std::vector<Vec2>(static_cast<std::size_t>(cfg.N_b), Vec2::Zero()), segments, cfg);
        return plan;
    }

    // The last node is pinned to the endpoint, so an endpoint inside the
    // obstacle constraints makes the problem infeasible outright.
    for (double o : circle_offsets(cfg.safety))
        for (const LineSegment &seg : segments)
        {
            const double g = obstacle_constraint_value(circle_center(x_f, o), seg, 0.0, cfg.safety);
            if (g < -cfg.feasibility_tolerance)
            {
                plan.diagnostics = "endpoint violates an obstacle constraint (value " + sci(g) + ")";
                finish(plan, x_i, x_f, std::vector<Vec2>(static_cast<std::size_t>(cfg.N_b), Vec2::Zero()), segments,
                       cfg);
                return plan;
            }
        }

    const StageResult s1 = run_stage(x_i, x_f, hermite_guess(x_i, x_f, cfg), segments, cfg, cfg.stage1_weight, kInf,
                                     false, cfg.max_sqp_iterations);
    plan.stage1_iterations = s1.iterations;
    if (s1.status == PlanStatus::infeasible)
    {
        plan.diagnostics = "stage 1: " + s1.message;
        finish(plan, x_i, x_f, s1.U, segments, cfg);
        return plan;
    }
    plan.J1 = heading_cost(s1.U);
    const double cap = plan.J1 + cfg.cap_margin;

    // Stage 2 first with the stage-1 turn rates frozen, which keeps the heading
    // cost at J1* exactly, then the capped problem over all inputs from there.
    const StageResult frozen = run_stage(x_i, x_f, s1.U, segments, cfg, cfg.stage2_weight, kInf, true,
                                         cfg.max_sqp_iterations);
    plan.stage2_iterations = frozen.iterations;
    std::vector<Vec2> best = s1.U;
    PlanStatus best_status = s1.status;
    if (frozen.status != PlanStatus::infeasible)
    {
        best = frozen.U;
        best_status = frozen.status == PlanStatus::optimal ? s1.status : frozen.status;
    }
    else
    {
        plan.stage2_fallback = true;
        plan.diagnostics = "stage 2: " + frozen.message;
    }
    if (cfg.polish_iterations > 0 && !plan.stage2_fallback)
    {
        const StageResult polished =
            run_stage(x_i, x_f, best, segments, cfg, cfg.stage2_weight, cap, false, cfg.polish_iterations);
        plan.stage2_iterations += polished.iterations;
        if (polished.status != PlanStatus::infeasible && heading_cost(polished.U) <= cap &&
            speed_cost(polished.U) < speed_cost(best))
            best = polished.U;
    }
    plan.status = best_status;
    plan.J2 = speed_cost(best);
    finish(plan, x_i, x_f, best, segments, cfg);
    return plan;
}

void write_plan_csv(std::ostream &os, const LexiPlan &plan)
{
    std::ostringstream buf;
    buf << std::setprecision(17) << "k,x,y,psi,u,r\n";
    for (std::size_t k = 0; k < plan.states.size(); ++k)
    {
        const KinematicState &s = plan.states[k];
        const Vec2 w = k < plan.inputs.size() ? plan.inputs[k] : Vec2::Zero();
        buf << k << ',' << s.x << ',' << s.y << ',' << s.psi << ',' << w[0] << ',' << w[1] << '\n';
    }
    os << buf.str();
}

RateInput baseline1_step(const VesselState &pose, const ActuatorState &act, const WaypointPath &planned,
                         Baseline1State &state, const BaselineConfig &cfg, double dt)
{
    const double psi_d = los_heading(pose, planned, cfg.lookahead);
    // Positive steering turns toward negative heading, hence the sign.
    const double steer = -pid_step(psi_d - pose.psi, state.heading, cfg.heading, dt, true);

    const double speed_error = cfg.target_speed - pose.u;
    if (!state.speed.primed)
        state.speed.integral =
            std::clamp(act.n_T - cfg.speed.k_p * speed_error, -cfg.speed.integrator_limit, cfg.speed.integrator_limit);
    const double throttle = pid_step(speed_error, state.speed, cfg.speed, dt);

    const NmpcConfig &lim = cfg.safety;
    auto rate = [&](double target, double current, double max_abs, double max_rate) {
        target = std::clamp(target, -max_abs, max_abs);
        return std::clamp((target - current) / dt, -max_rate, max_rate);
    };
    return {rate(throttle, act.n_T, lim.n_T_max, lim.dn_T_max), rate(steer, act.n_S, lim.n_S_max, lim.dn_S_max)};
}

} // namespace canal
