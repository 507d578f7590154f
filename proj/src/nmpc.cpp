#include "canalnav/nmpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace canal
{

std::string_view to_string(SolveStatus s)
{
    switch (s)
    {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::max_iter: return "max-iter";
    case SolveStatus::infeasible_qp: return "infeasible-QP";
    }
    return "unknown";
}

Vec8 rk4_augmented(const Vec8 &x, const Vec2 &rate, const ParamSet &p, double h, Mat8 *A, Mat82 *B)
{
    const Vec8 k1 = augmented_derivative(x, rate, p);
    const Vec8 x2 = x + 0.5 * h * k1;
    const Vec8 k2 = augmented_derivative(x2, rate, p);
    const Vec8 x3 = x + 0.5 * h * k2;
    const Vec8 k3 = augmented_derivative(x3, rate, p);
    const Vec8 x4 = x + h * k3;
    const Vec8 k4 = augmented_derivative(x4, rate, p);

    if (A != nullptr && B != nullptr)
    {
        const Mat8 I = Mat8::Identity();
        Mat8 Ac;
        Mat82 Bc;
        augmented_jacobian(x, p, Ac, Bc);
        const Mat8 K1x = Ac;
        const Mat82 K1u = Bc;
        augmented_jacobian(x2, p, Ac, Bc);
        const Mat8 K2x = Ac * (I + 0.5 * h * K1x);
        const Mat82 K2u = Ac * (0.5 * h * K1u) + Bc;
        augmented_jacobian(x3, p, Ac, Bc);
        const Mat8 K3x = Ac * (I + 0.5 * h * K2x);
        const Mat82 K3u = Ac * (0.5 * h * K2u) + Bc;
        augmented_jacobian(x4, p, Ac, Bc);
        const Mat8 K4x = Ac * (I + h * K3x);
        const Mat82 K4u = Ac * (h * K3u) + Bc;
        *A = I + h / 6.0 * (K1x + 2.0 * K2x + 2.0 * K3x + K4x);
        *B = h / 6.0 * (K1u + 2.0 * K2u + 2.0 * K3u + K4u);
    }
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

namespace
{

VesselState pose_of(const Vec8 &x)
{
    return VesselState{x[0], x[1], x[2], x[3], x[4], x[5]};
}

// d(circle center)/d(x, y, psi) for the bow (sign = +1, offset l_b) or stern (sign = -1, offset l_s).
Eigen::Matrix<double, 2, 3> circle_jacobian(double psi, double signed_offset)
{
    Eigen::Matrix<double, 2, 3> J;
    J << 1.0, 0.0, -signed_offset * std::sin(psi),
         0.0, 1.0, signed_offset * std::cos(psi);
    return J;
}

double stage_required_slack(const Vec8 &x, const OcpProblem &ocp)
{
    const SafetyCircles c = safety_circle_centers(pose_of(x), ocp.cfg);
    double s = 0.0;
    for (const LineSegment &seg : ocp.segments)
        s = std::max({s, required_slack(c.bow, seg, ocp.cfg), required_slack(c.stern, seg, ocp.cfg)});
    return s;
}

struct Iterate
{
    std::vector<Vec8> states;
    std::vector<Vec2> inputs;
    std::vector<double> slacks;
};

struct Condensed
{
    QpProblem qp;
    std::vector<Vec8> free_response;                        // c_k
    std::vector<Eigen::Matrix<double, 8, Eigen::Dynamic>> S; // dx_k / dU
};

Condensed condense(const OcpProblem &ocp, const Iterate &it, double regularization)
{
    const NmpcConfig &cfg = ocp.cfg;
    const int N = cfg.N_p;
    const int nu = 2 * N;
    const int n = nu + N + 1;
    const double inf = std::numeric_limits<double>::infinity();

    Condensed out;
    out.free_response.resize(static_cast<std::size_t>(N) + 1);
    out.S.assign(static_cast<std::size_t>(N) + 1, Eigen::Matrix<double, 8, Eigen::Dynamic>::Zero(8, nu));
    out.free_response[0] = ocp.x_init - it.states[0];
    for (int k = 0; k < N; ++k)
    {
        const auto ks = static_cast<std::size_t>(k);
        Mat8 A;
        Mat82 B;
        const Vec8 next = rk4_augmented(it.states[ks], it.inputs[ks], ocp.params, cfg.T_s, &A, &B);
        const Vec8 defect = next - it.states[ks + 1];
        out.free_response[ks + 1] = A * out.free_response[ks] + defect;
        out.S[ks + 1].leftCols(2 * k) = A * out.S[ks].leftCols(2 * k);
        out.S[ks + 1].middleCols(2 * k, 2) = B;
    }

    QpProblem &qp = out.qp;
    qp.H = Eigen::MatrixXd::Zero(n, n);
    qp.g = Eigen::VectorXd::Zero(n);
    for (int k = 1; k <= N; ++k)
    {
        const auto ks = static_cast<std::size_t>(k);
        const Vec8 &W = k < N ? cfg.Q : cfg.Q_T;
        const Vec8 e = tracking_error(it.states[ks] + out.free_response[ks], ocp.reference.points[ks]);
        const auto Sk = out.S[ks].leftCols(2 * k);
        const Eigen::MatrixXd WS = W.asDiagonal() * Sk;
        qp.H.topLeftCorner(2 * k, 2 * k).noalias() += 2.0 * Sk.transpose() * WS;
        qp.g.head(2 * k).noalias() += 2.0 * WS.transpose() * e;
    }
    for (int k = 0; k < N; ++k)
    {
        const Vec2 &u = it.inputs[static_cast<std::size_t>(k)];
        qp.H(2 * k, 2 * k) += 2.0 * cfg.R[0];
        qp.H(2 * k + 1, 2 * k + 1) += 2.0 * cfg.R[1];
        qp.g[2 * k] += 2.0 * cfg.R[0] * u[0];
        qp.g[2 * k + 1] += 2.0 * cfg.R[1] * u[1];
    }
    for (int k = 0; k <= N; ++k)
        qp.H(nu + k, nu + k) += 2.0 * cfg.rho;
    qp.H.diagonal().array() += regularization;
    qp.H = 0.5 * (qp.H + qp.H.transpose()).eval();

    qp.lb.resize(n);
    qp.ub.resize(n);
    for (int k = 0; k < N; ++k)
    {
        const Vec2 &u = it.inputs[static_cast<std::size_t>(k)];
        qp.lb[2 * k] = -cfg.dn_T_max - u[0];
        qp.ub[2 * k] = cfg.dn_T_max - u[0];
        qp.lb[2 * k + 1] = -cfg.dn_S_max - u[1];
        qp.ub[2 * k + 1] = cfg.dn_S_max - u[1];
    }
    qp.lb.tail(N + 1).setZero();
    qp.ub.tail(N + 1).setConstant(cfg.separation() - kDenominatorFloor);

    const int num_segments = static_cast<int>(ocp.segments.size());
    const int rows = 2 * N + 2 * num_segments * (N + 1);
    qp.A = Eigen::MatrixXd::Zero(rows, n);
    qp.lbA.resize(rows);
    qp.ubA.resize(rows);
    int row = 0;
    for (int k = 1; k <= N; ++k)
    {
        const auto ks = static_cast<std::size_t>(k);
        for (int ch = 0; ch < 2; ++ch)
        {
            const int idx = 6 + ch;
            const double limit = ch == 0 ? cfg.n_T_max : cfg.n_S_max;
            const double base = it.states[ks][idx] + out.free_response[ks][idx];
            qp.A.row(row).head(nu) = out.S[ks].row(idx);
            qp.lbA[row] = -limit - base;
            qp.ubA[row] = limit - base;
            ++row;
        }
    }
    for (int k = 0; k <= N; ++k)
    {
        const auto ks = static_cast<std::size_t>(k);
        const Vec8 &xbar = it.states[ks];
        const double sbar = it.slacks[ks];
        const SafetyCircles centers = safety_circle_centers(pose_of(xbar), cfg);
        const Eigen::Matrix<double, 2, 3> Jb = circle_jacobian(xbar[2], cfg.l_b);
        const Eigen::Matrix<double, 2, 3> Js = circle_jacobian(xbar[2], -cfg.l_s);
        const Eigen::Matrix<double, 3, Eigen::Dynamic> Spos = out.S[ks].topRows(3);
        const Vec3 cpos = out.free_response[ks].head<3>();
        for (const LineSegment &seg : ocp.segments)
        {
            for (int circle = 0; circle < 2; ++circle)
            {
                const Vec2 &p = circle == 0 ? centers.bow : centers.stern;
                const auto &Jc = circle == 0 ? Jb : Js;
                const ConstraintGradient cg = obstacle_constraint_gradient(p, seg, sbar, cfg);
                const Eigen::RowVector3d G = cg.d_position.transpose() * Jc;
                qp.A.row(row).head(nu) = G * Spos;
                qp.A(row, nu + k) = cg.d_slack;
                qp.lbA[row] = -cg.value - G.dot(cpos) + cg.d_slack * sbar;
                qp.ubA[row] = inf;
                ++row;
            }
        }
    }
    return out;
}

Iterate apply_step(const Iterate &it, const Condensed &c, const Eigen::VectorXd &z, double alpha, int N)
{
    Iterate next = it;
    const Eigen::VectorXd dU = z.head(2 * N);
    for (int k = 0; k <= N; ++k)
    {
        const auto ks = static_cast<std::size_t>(k);
        next.states[ks] += alpha * (c.free_response[ks] + c.S[ks] * dU);
        const double s = z[2 * N + k];
        next.slacks[ks] = std::max(0.0, (1.0 - alpha) * it.slacks[ks] + alpha * s);
        if (k < N)
            next.inputs[ks] += alpha * dU.segment<2>(2 * k);
    }
    return next;
}

} // namespace

double rollout_objective(const OcpProblem &ocp, const std::vector<Vec2> &inputs)
{
    const int N = ocp.cfg.N_p;
    Vec8 x = ocp.x_init;
    double cost = 0.0;
    for (int k = 0; k <= N; ++k)
    {
        const auto ks = static_cast<std::size_t>(k);
        const double s = stage_required_slack(x, ocp);
        if (k < N)
        {
            cost += stage_cost(x, ocp.reference.points[ks], inputs[ks], s, ocp.cfg);
            x = rk4_augmented(x, inputs[ks], ocp.params, ocp.cfg.T_s);
        }
        else
        {
            cost += terminal_cost(x, ocp.reference.points[ks], s, ocp.cfg);
        }
    }
    return cost;
}

SolveResult sqp_rti_step(const OcpProblem &ocp, const SqpOptions &opt)
{
    const auto t0 = std::chrono::steady_clock::now();
    const int N = ocp.cfg.N_p;

    Iterate it{ocp.guess.states, ocp.guess.inputs, ocp.guess.slacks};
    std::vector<ActiveConstraint> active = ocp.guess.active_set;

    SolveResult res;
    res.status = SolveStatus::max_iter;
    double merit = std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < std::max(1, opt.iterations); ++iter)
    {
        const Condensed c = condense(ocp, it, opt.regularization);
        const QpResult qr = solve_qp(c.qp, active);
        res.sqp_iterations = iter + 1;
        if (qr.status != QpStatus::optimal)
        {
            res.status = SolveStatus::infeasible_qp;
            break;
        }
        active = qr.active;
        res.kkt_residual = kkt_residual(c.qp, qr);

        if (iter == 0)
        {
            it = apply_step(it, c, qr.x, 1.0, N);
            merit = rollout_objective(ocp, it.inputs);
            if (opt.iterations <= 1)
            {
                res.status = SolveStatus::optimal;
                break;
            }
            if (qr.x.head(2 * N).lpNorm<Eigen::Infinity>() < opt.tolerance)
            {
                res.status = SolveStatus::optimal;
                break;
            }
            continue;
        }

        bool accepted = false;
        double alpha = 1.0;
        for (int ls = 0; ls < 12; ++ls, alpha *= 0.5)
        {
            Iterate trial = apply_step(it, c, qr.x, alpha, N);
            const double m = rollout_objective(ocp, trial.inputs);
            if (m <= merit)
            {
                it = std::move(trial);
                merit = m;
                accepted = true;
                break;
            }
        }
        const double step = alpha * qr.x.head(2 * N).lpNorm<Eigen::Infinity>();
        if (!accepted || step < opt.tolerance)
        {
            res.status = SolveStatus::optimal;
            break;
        }
    }

    for (Vec2 &u : it.inputs)
    {
        u[0] = std::clamp(u[0], -ocp.cfg.dn_T_max, ocp.cfg.dn_T_max);
        u[1] = std::clamp(u[1], -ocp.cfg.dn_S_max, ocp.cfg.dn_S_max);
    }
    res.inputs = std::move(it.inputs);
    res.states = std::move(it.states);
    res.slacks = std::move(it.slacks);
    res.active_set = std::move(active);
    res.objective = rollout_objective(ocp, res.inputs);
    res.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

InitialGuess shift_warm_start(const SolveResult &prev)
{
    return shift_warm_start(prev, 1.0);
}

InitialGuess shift_warm_start(const SolveResult &prev, double fraction)
{
    fraction = std::clamp(fraction, 0.0, 1.0);
    InitialGuess g;
    g.active_set = prev.active_set;
    auto shifted = [fraction](const auto &v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        std::vector<T> out(v.size());
        const std::size_t last = v.size() - 1;
        for (std::size_t k = 0; k < v.size(); ++k)
        {
            const T &a = v[k];
            const T &b = v[std::min(k + 1, last)];
            out[k] = (1.0 - fraction) * a + fraction * b;
        }
        return out;
    };
    if (!prev.states.empty())
        g.states = shifted(prev.states);
    if (!prev.inputs.empty())
        g.inputs = shifted(prev.inputs);
    if (!prev.slacks.empty())
        g.slacks = shifted(prev.slacks);
    return g;
}

} // namespace canal
