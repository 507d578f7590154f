#include "canalnav/sysid.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "csv_util.hpp"

namespace canal
{

std::string_view to_string(TrialKind k)
{
    switch (k)
    {
    case TrialKind::acceleration: return "acceleration";
    case TrialKind::deceleration: return "deceleration";
    case TrialKind::zigzag: return "zigzag";
    }
    return "unknown";
}

TrialKind parse_trial_kind(std::string_view s)
{
    for (TrialKind k : {TrialKind::acceleration, TrialKind::deceleration, TrialKind::zigzag})
        if (s == to_string(k))
            return k;
    throw ParseError("unknown trial kind '" + std::string(s) + "'");
}

double TrialDataset::dt() const
{
    if (t.size() < 2)
        throw InvalidDataset("trial needs at least two samples");
    return t[1] - t[0];
}

void TrialDataset::validate() const
{
    if (states.size() < 2)
        throw InvalidDataset("trial needs at least two samples");
    if (t.size() != states.size())
        throw InvalidDataset("trial: timestamp and state counts differ");
    if (inputs.size() + 1 != states.size())
        throw InvalidDataset("trial: expected one input fewer than states");
    const double h = dt();
    if (!(h > 0.0))
        throw InvalidDataset("trial: timestamps must be strictly increasing");
    for (std::size_t i = 1; i < t.size(); ++i)
    {
        if (!(t[i] > t[i - 1]))
            throw InvalidDataset("trial: timestamps must be strictly increasing (row " + std::to_string(i) + ")");
        if (std::abs((t[i] - t[i - 1]) - h) > 1e-6)
            throw InvalidDataset("trial: non-uniform sampling at row " + std::to_string(i));
    }
    for (const VesselState &s : states)
        if (!s.finite())
            throw InvalidDataset("trial: non-finite state");
    for (const ActuatorState &a : inputs)
        if (!(std::abs(a.n_T) <= 100.0 && std::abs(a.n_S) <= 100.0))
            throw InvalidDataset("trial: actuator command outside [-100, 100]");
}

namespace
{
const std::vector<std::string> kTrialColumns = {"t", "x", "y", "psi", "u", "v", "r", "n_T", "n_S"};
} // namespace

void write_trial_csv(std::ostream &os, const TrialDataset &d)
{
    d.validate();
    std::ostringstream buf;
    buf << std::setprecision(17);
    buf << "# kind: " << to_string(d.kind) << '\n';
    buf << "t,x,y,psi,u,v,r,n_T,n_S\n";
    for (std::size_t i = 0; i < d.states.size(); ++i)
    {
        const VesselState &s = d.states[i];
        const ActuatorState &a = d.inputs[std::min(i, d.inputs.size() - 1)];
        buf << d.t[i] << ',' << s.x << ',' << s.y << ',' << s.psi << ',' << s.u << ',' << s.v << ',' << s.r << ','
            << a.n_T << ',' << a.n_S << '\n';
    }
    os << buf.str();
}

TrialDataset read_trial_csv(std::istream &is, const TrialKind *kind_override)
{
    std::vector<std::string> comments;
    const auto rows = csv::read_numeric(is, kTrialColumns, "trial", &comments);
    TrialDataset d;
    bool have_kind = false;
    for (const std::string &c : comments)
    {
        const auto pos = c.find("kind:");
        if (pos == std::string::npos)
            continue;
        std::string name = c.substr(pos + 5);
        name.erase(0, name.find_first_not_of(" \t"));
        name.erase(name.find_last_not_of(" \t\r") + 1);
        d.kind = parse_trial_kind(name);
        have_kind = true;
    }
    if (kind_override != nullptr)
    {
        d.kind = *kind_override;
        have_kind = true;
    }
    if (!have_kind)
        throw ParseError("trial CSV: missing '# kind: ...' line and no kind given");
    for (std::size_t i = 0; i < rows.size(); ++i)
    {
        const auto &r = rows[i];
        d.t.push_back(r[0]);
        d.states.push_back({r[1], r[2], r[3], r[4], r[5], r[6]});
        if (i + 1 < rows.size())
            d.inputs.push_back({r[7], r[8]});
    }
    d.validate();
    return d;
}

void save_trial_csv(const std::string &path, const TrialDataset &d)
{
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("cannot write " + path);
    write_trial_csv(os, d);
}

TrialDataset load_trial_csv(const std::string &path, const TrialKind *kind_override)
{
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("cannot open " + path);
    return read_trial_csv(is, kind_override);
}

FreeMask surge_mask()
{
    FreeMask m{};
    for (Param p : {Param::m11, Param::X_u, Param::X_uu, Param::c})
        m[static_cast<std::size_t>(p)] = true;
    return m;
}

FreeMask sway_yaw_mask()
{
    FreeMask m{};
    for (Param p : {Param::m22, Param::m33, Param::Y_v, Param::Y_r, Param::N_v, Param::N_r, Param::Y_vv, Param::Y_rr,
                    Param::N_vv, Param::N_rr})
        m[static_cast<std::size_t>(p)] = true;
    return m;
}

void SysIdConfig::validate() const
{
    if ((W.array() < 0.0).any())
        throw std::invalid_argument("SysIdConfig: weights must be non-negative");
    if (segment_length < 2)
        throw std::invalid_argument("SysIdConfig: segment_length must be >= 2");
    if (max_iters < 0)
        throw std::invalid_argument("SysIdConfig: max_iters must be >= 0");
    if (!(fd_step > 0.0))
        throw std::invalid_argument("SysIdConfig: fd_step must be positive");
    initial_guess.validate();
    for (int i = 0; i < kNumIdentified; ++i)
        if (free_mask[static_cast<std::size_t>(i)] && initial_guess[static_cast<Param>(i)] == 0.0)
            throw std::invalid_argument("SysIdConfig: free parameter " +
                                        std::string(param_name(static_cast<Param>(i))) +
                                        " needs a nonzero initial guess");
}

SysIdConfig SysIdConfig::surge(const ParamSet &guess)
{
    SysIdConfig c;
    c.W << 0.0, 0.0, 0.0, 1.0, 0.0, 0.0;
    c.initial_guess = guess;
    c.free_mask = surge_mask();
    return c;
}

SysIdConfig SysIdConfig::sway_yaw(const ParamSet &guess)
{
    SysIdConfig c;
    c.W << 1.0, 1.0, 100.0, 0.0, 100.0, 100.0;
    c.initial_guess = guess;
    c.free_mask = sway_yaw_mask();
    return c;
}

std::vector<VesselState> simulate_rollout(const VesselState &x0, std::span<const ActuatorState> inputs,
                                          const ParamSet &p, double dt)
{
    std::vector<VesselState> out;
    out.reserve(inputs.size() + 1);
    out.push_back(x0);
    for (const ActuatorState &a : inputs)
        out.push_back(rk4_step(out.back(), a, p, dt));
    return out;
}

namespace
{

Vec6 state_error(const VesselState &pred, const VesselState &meas)
{
    Vec6 e = pred.to_vector() - meas.to_vector();
    e[2] = wrap_angle(e[2]);
    return e;
}

// Calls f(i, predicted_state) for every sample i >= 1 of the re-anchored rollouts.
template <class F>
void for_each_prediction(const ParamSet &p, const TrialDataset &d, int segment_length, F &&f)
{
    const double h = d.dt();
    const std::size_t N = d.num_steps();
    for (std::size_t start = 0; start < N; start += static_cast<std::size_t>(segment_length))
    {
        VesselState x = d.states[start];
        const std::size_t end = std::min(N, start + static_cast<std::size_t>(segment_length));
        for (std::size_t i = start; i < end; ++i)
        {
            x = rk4_step(x, d.inputs[i], p, h);
            f(i + 1, x);
        }
    }
}

std::size_t residual_size(std::span<const TrialDataset> data, const Vec6 &W)
{
    const auto active = static_cast<std::size_t>((W.array() > 0.0).count());
    std::size_t n = 0;
    for (const TrialDataset &d : data)
        n += d.num_steps() * active;
    return n;
}

Eigen::VectorXd weighted_residuals(const ParamSet &p, std::span<const TrialDataset> data, const SysIdConfig &cfg)
{
    Eigen::VectorXd r(static_cast<Eigen::Index>(residual_size(data, cfg.W)));
    const Vec6 sw = cfg.W.cwiseSqrt();
    Eigen::Index k = 0;
    for (const TrialDataset &d : data)
    {
        for_each_prediction(p, d, cfg.segment_length, [&](std::size_t i, const VesselState &x) {
            const Vec6 e = state_error(x, d.states[i]);
            for (int j = 0; j < 6; ++j)
                if (cfg.W[j] > 0.0)
                    r[k++] = sw[j] * e[j];
        });
    }
    return r;
}

double cost_of(const Eigen::VectorXd &r)
{
    const double c = r.squaredNorm();
    return std::isfinite(c) ? c : std::numeric_limits<double>::infinity();
}

class LogParamMap
{
public:
    LogParamMap(const ParamSet &base, const FreeMask &mask) : base_(base)
    {
        for (int i = 0; i < kNumIdentified; ++i)
            if (mask[static_cast<std::size_t>(i)])
                free_.push_back(static_cast<Param>(i));
    }

    int size() const { return static_cast<int>(free_.size()); }

    Eigen::VectorXd to_theta(const ParamSet &p) const
    {
        Eigen::VectorXd th(size());
        for (int k = 0; k < size(); ++k)
            th[k] = std::log(std::abs(p[free_[static_cast<std::size_t>(k)]]));
        return th;
    }

    ParamSet from_theta(const Eigen::VectorXd &th) const
    {
        ParamSet p = base_;
        for (int k = 0; k < size(); ++k)
        {
            const Param id = free_[static_cast<std::size_t>(k)];
            p[id] = std::copysign(std::exp(th[k]), base_[id]);
        }
        return p;
    }

private:
    ParamSet base_;
    std::vector<Param> free_;
};

SysIdReport levenberg_marquardt(std::span<const TrialDataset> data, const SysIdConfig &cfg)
{
    const auto t0 = std::chrono::steady_clock::now();
    const LogParamMap map(cfg.initial_guess, cfg.free_mask);
    Eigen::VectorXd theta = map.to_theta(cfg.initial_guess);
    ParamSet current = cfg.initial_guess;

    auto residuals = [&](const Eigen::VectorXd &th) {
        try
        {
            return weighted_residuals(map.from_theta(th), data, cfg);
        }
        catch (const InvalidParameters &)
        {
            return Eigen::VectorXd(Eigen::VectorXd::Constant(1, std::numeric_limits<double>::infinity()));
        }
    };

    Eigen::VectorXd r = residuals(theta);
    double cost = cost_of(r);

    SysIdReport rep;
    rep.initial_cost = cost;
    const int n = map.size();
    double lambda = -1.0;

    for (int iter = 0; iter < cfg.max_iters && n > 0; ++iter)
    {
        rep.iterations = iter + 1;
        Eigen::MatrixXd J(r.size(), n);
        for (int k = 0; k < n; ++k)
        {
            Eigen::VectorXd tp = theta, tm = theta;
            tp[k] += cfg.fd_step;
            tm[k] -= cfg.fd_step;
            J.col(k) = (residuals(tp) - residuals(tm)) / (2.0 * cfg.fd_step);
        }
        const Eigen::MatrixXd JtJ = J.transpose() * J;
        const Eigen::VectorXd grad = J.transpose() * r;
        if (!JtJ.allFinite() || !grad.allFinite())
            break;
        if (grad.lpNorm<Eigen::Infinity>() <= 1e-14 * std::max(1.0, cost) || cost <= 1e-28)
        {
            rep.converged = true;
            break;
        }
        if (lambda < 0.0)
            lambda = 1e-3 * std::max(JtJ.diagonal().maxCoeff(), 1e-12);

        // Levenberg damping (identity in log space) keeps steps orthogonal to
        // directions the residuals do not depend on.
        bool accepted = false;
        double new_cost = cost;
        Eigen::VectorXd step;
        for (int tries = 0; tries < 30; ++tries)
        {
            const Eigen::MatrixXd Hd = JtJ + lambda * Eigen::MatrixXd::Identity(n, n);
            step = Hd.ldlt().solve(-grad);
            const Eigen::VectorXd trial_theta = theta + step;
            const Eigen::VectorXd trial_r = residuals(trial_theta);
            new_cost = cost_of(trial_r);
            if (new_cost < cost)
            {
                theta = trial_theta;
                r = trial_r;
                accepted = true;
                lambda = std::max(lambda / 3.0, 1e-15);
                break;
            }
            lambda *= 4.0;
        }
        if (!accepted)
        {
            // No decrease along any damped direction: a stationary point to working precision.
            rep.converged = grad.lpNorm<Eigen::Infinity>() <= 1e-6 * std::max(1.0, cost);
            break;
        }
        const double decrease = cost - new_cost;
        cost = new_cost;
        if (decrease <= cfg.tolerance * cost || step.lpNorm<Eigen::Infinity>() <= 1e-12)
        {
            rep.converged = true;
            break;
        }
    }
    if (n == 0)
        rep.converged = true;

    current = map.from_theta(theta);
    rep.fitted = current;
    rep.final_cost = cost;

    // Unweighted RMS per state.
    Vec6 sq = Vec6::Zero();
    std::size_t count = 0;
    for (const TrialDataset &d : data)
    {
        for_each_prediction(current, d, cfg.segment_length, [&](std::size_t i, const VesselState &x) {
            sq += state_error(x, d.states[i]).cwiseAbs2();
            ++count;
        });
    }
    if (count > 0)
        rep.rms = (sq / static_cast<double>(count)).cwiseSqrt();
    rep.runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

void require_kinds(std::span<const TrialDataset> data, std::initializer_list<TrialKind> kinds, const char *what)
{
    if (data.empty())
        throw InvalidDataset(std::string(what) + ": no trial data");
    for (const TrialDataset &d : data)
    {
        d.validate();
        if (std::find(kinds.begin(), kinds.end(), d.kind) == kinds.end())
            throw InvalidDataset(std::string(what) + ": unexpected trial kind '" + std::string(to_string(d.kind)) + "'");
    }
}

} // namespace

double sysid_cost(const ParamSet &p, const TrialDataset &data, const SysIdConfig &cfg)
{
    return sysid_cost(p, std::span<const TrialDataset>(&data, 1), cfg);
}

double sysid_cost(const ParamSet &p, std::span<const TrialDataset> data, const SysIdConfig &cfg)
{
    cfg.validate();
    for (const TrialDataset &d : data)
        d.validate();
    return cost_of(weighted_residuals(p, data, cfg));
}

ResidualTrace sysid_residuals(const ParamSet &p, const TrialDataset &data, int segment_length)
{
    data.validate();
    ResidualTrace tr;
    for_each_prediction(p, data, segment_length, [&](std::size_t i, const VesselState &x) {
        tr.t.push_back(data.t[i]);
        tr.residual.push_back(state_error(x, data.states[i]));
    });
    return tr;
}

void write_residual_csv(std::ostream &os, const ResidualTrace &r)
{
    std::ostringstream buf;
    buf << std::setprecision(17) << "t,e_x,e_y,e_psi,e_u,e_v,e_r\n";
    for (std::size_t i = 0; i < r.t.size(); ++i)
    {
        buf << r.t[i];
        for (int j = 0; j < 6; ++j)
            buf << ',' << r.residual[i][j];
        buf << '\n';
    }
    os << buf.str();
}

SysIdReport identify_surge(std::span<const TrialDataset> data, const SysIdConfig &cfg)
{
    require_kinds(data, {TrialKind::acceleration, TrialKind::deceleration}, "identify_surge");
    cfg.validate();
    double umax = 0.0;
    for (const TrialDataset &d : data)
        for (const VesselState &s : d.states)
            umax = std::max(umax, std::abs(s.u));
    if (umax < 1e-6)
        throw DegenerateData("identify_surge: surge speed is identically zero; surge dynamics are not excited");
    return levenberg_marquardt(data, cfg);
}

SysIdReport identify_sway_yaw(std::span<const TrialDataset> data, const ParamSet &surge, const SysIdConfig &cfg)
{
    require_kinds(data, {TrialKind::zigzag}, "identify_sway_yaw");
    double smax = 0.0, rmax = 0.0;
    for (const TrialDataset &d : data)
    {
        for (const ActuatorState &a : d.inputs)
            smax = std::max(smax, std::abs(a.n_S));
        for (const VesselState &s : d.states)
            rmax = std::max(rmax, std::abs(s.r));
    }
    if (smax < 1e-9 || rmax < 1e-9)
        throw DegenerateData("identify_sway_yaw: steering never applied; sway-yaw dynamics are not excited");

    SysIdConfig c = cfg;
    for (Param id : {Param::m11, Param::X_u, Param::X_uu, Param::c})
    {
        c.initial_guess[id] = surge[id];
        c.free_mask[static_cast<std::size_t>(id)] = false;
    }
    c.initial_guess.l_y = surge.l_y;
    c.initial_guess.delta_max = surge.delta_max;
    c.validate();
    return levenberg_marquardt(data, c);
}

ParamSet equation_error_guess(std::span<const TrialDataset> surge_data, std::span<const TrialDataset> zigzag_data,
                              double m11, double l_y, double delta_max)
{
    if (!(m11 > 0.0))
        throw std::invalid_argument("equation_error_guess: m11 must be positive");
    ParamSet p;
    p.m11 = m11;
    p.l_y = l_y;
    p.delta_max = delta_max;
    const double alpha = delta_max / 100.0;

    // Centered differences over +-kHalf samples where the input is constant,
    // with the regressors averaged over the same window to damp noise.
    constexpr std::size_t kHalf = 2;
    struct Mid
    {
        double u, v, r, du, dv, dr, nT, nS;
    };
    auto midpoints = [](const TrialDataset &d) {
        std::vector<Mid> out;
        const double h = d.dt();
        for (std::size_t i = kHalf; i + kHalf < d.states.size(); ++i)
        {
            bool held = true;
            for (std::size_t k = i - kHalf; k + 1 < i + kHalf && held; ++k)
                held = d.inputs[k].n_T == d.inputs[k + 1].n_T && d.inputs[k].n_S == d.inputs[k + 1].n_S;
            if (!held)
                continue;
            Vec6 mean = Vec6::Zero();
            for (std::size_t k = i - kHalf; k <= i + kHalf; ++k)
                mean += d.states[k].to_vector();
            mean /= static_cast<double>(2 * kHalf + 1);
            const Vec6 diff = (d.states[i + kHalf].to_vector() - d.states[i - kHalf].to_vector()) /
                              (2.0 * static_cast<double>(kHalf) * h);
            out.push_back({mean[3], mean[4], mean[5], diff[3], diff[4], diff[5], d.inputs[i].n_T, d.inputs[i].n_S});
        }
        return out;
    };
    auto solve = [](const std::vector<Eigen::RowVectorXd> &rows, const std::vector<double> &rhs, int n) {
        Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), n);
        Eigen::VectorXd b(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i)
        {
            A.row(static_cast<Eigen::Index>(i)) = rows[i];
            b[static_cast<Eigen::Index>(i)] = rhs[i];
        }
        return Eigen::VectorXd(A.colPivHouseholderQr().solve(b));
    };
    auto drag = [](double v, double scale) { return std::min(v, -1e-9 * scale); };

    {
        std::vector<Eigen::RowVectorXd> rows;
        std::vector<double> rhs;
        for (const TrialDataset &d : surge_data)
            for (const Mid &m : midpoints(d))
            {
                Eigen::RowVectorXd row(3);
                row << m.nT * std::abs(m.nT) * std::cos(alpha * m.nS), m.u, std::abs(m.u) * m.u;
                rows.push_back(row);
                rhs.push_back(m11 * m.du);
            }
        if (rows.size() < 3)
            throw DegenerateData("equation_error_guess: not enough surge samples");
        const Eigen::VectorXd s = solve(rows, rhs, 3);
        p.c = std::max(s[0], 1e-12);
        p.X_u = drag(s[1], m11);
        p.X_uu = drag(s[2], m11);
    }

    p.m22 = p.m11;
    p.m33 = p.m11;
    if (!zigzag_data.empty())
    {
        std::vector<Eigen::RowVectorXd> rows;
        std::vector<double> rhs;
        for (const TrialDataset &d : zigzag_data)
            for (const Mid &m : midpoints(d))
            {
                const double tauY = p.c * m.nT * std::abs(m.nT) * std::sin(alpha * m.nS);
                Eigen::RowVectorXd row(5);
                row << m.dv, -m.v, -std::abs(m.v) * m.v, -m.r, -std::abs(m.r) * m.r;
                rows.push_back(row);
                rhs.push_back(tauY - p.m11 * m.u * m.r);
            }
        if (rows.size() < 5)
            throw DegenerateData("equation_error_guess: not enough zigzag samples");
        const Eigen::VectorXd s = solve(rows, rhs, 5);
        p.m22 = std::max(s[0], 1e-3 * m11);
        p.Y_v = drag(s[1], m11);
        p.Y_vv = drag(s[2], m11);
        p.Y_r = drag(s[3], m11);
        p.Y_rr = drag(s[4], m11);

        rows.clear();
        rhs.clear();
        for (const TrialDataset &d : zigzag_data)
            for (const Mid &m : midpoints(d))
            {
                const double tauN = -l_y * p.c * m.nT * std::abs(m.nT) * std::sin(alpha * m.nS);
                Eigen::RowVectorXd row(5);
                row << m.dr, -m.v, -std::abs(m.v) * m.v, -m.r, -std::abs(m.r) * m.r;
                rows.push_back(row);
                rhs.push_back(tauN - (p.m22 - p.m11) * m.u * m.v);
            }
        const Eigen::VectorXd y = solve(rows, rhs, 5);
        p.m33 = std::max(y[0], 1e-3 * m11);
        p.N_v = drag(y[1], m11);
        p.N_vv = drag(y[2], m11);
        p.N_r = drag(y[3], m11);
        p.N_rr = drag(y[4], m11);
    }
    else
    {
        p.Y_v = p.N_r = p.Y_vv = p.N_rr = -m11;
        p.Y_r = p.N_v = p.Y_rr = p.N_vv = -1e-3;
    }
    return p;
}

TrialSpec TrialSpec::acceleration()
{
    TrialSpec s;
    s.kind = TrialKind::acceleration;
    s.throttle_steps = {31.0, 34.9, 38.6, 41.0, 50.6};
    return s;
}

TrialSpec TrialSpec::deceleration()
{
    TrialSpec s;
    s.kind = TrialKind::deceleration;
    s.throttle_steps = {50.6, 39.4, 20.0};
    return s;
}

TrialSpec TrialSpec::zigzag()
{
    TrialSpec s;
    s.kind = TrialKind::zigzag;
    return s;
}

double steady_speed(const ParamSet &p, double n_T)
{
    const double F = p.c * std::abs(n_T) * std::abs(n_T);
    double u = 0.0;
    if (p.X_uu == 0.0)
        u = -F / p.X_u;
    else
        u = (p.X_u + std::sqrt(p.X_u * p.X_u - 4.0 * p.X_uu * F)) / (-2.0 * p.X_uu);
    return n_T < 0.0 ? -u : u;
}

TrialDataset generate_trial(const TrialSpec &spec, const ParamSet &p, const Vec6 &noise_std, std::uint64_t seed)
{
    p.validate();
    if (!(spec.dt > 0.0))
        throw std::invalid_argument("generate_trial: dt must be positive");
    TrialDataset d;
    d.kind = spec.kind;
    std::vector<VesselState> truth;
    VesselState x;
    constexpr double kMinHold = 5.0;

    auto record_step = [&](const ActuatorState &a) {
        d.inputs.push_back(a);
        x = rk4_step(x, a, p, spec.dt);
        truth.push_back(x);
    };

    if (spec.kind == TrialKind::zigzag)
    {
        x.u = steady_speed(p, spec.zigzag_throttle);
        truth.push_back(x);
        double steer = spec.zigzag_steering;
        int switches = 0;
        const int max_steps = static_cast<int>(spec.max_hold / spec.dt);
        for (int k = 0; k < max_steps; ++k)
        {
            record_step({spec.zigzag_throttle, steer});
            if (steer > 0.0 && x.psi <= -spec.zigzag_heading)
            {
                steer = -spec.zigzag_steering;
                ++switches;
            }
            else if (steer < 0.0 && x.psi >= spec.zigzag_heading)
            {
                steer = spec.zigzag_steering;
                ++switches;
            }
            // After the last switch the heading keeps going until the yaw rate
            // reverses; that extreme is the final overshoot.
            if (switches == spec.overshoots)
            {
                // Positive steering turns towards negative heading.
                const double turning = steer > 0.0 ? -1.0 : 1.0;
                if (x.r * turning >= 0.0)
                    break;
            }
        }
        if (switches < spec.overshoots)
            throw std::runtime_error("generate_trial: zigzag did not complete within max_hold");
    }
    else
    {
        if (spec.throttle_steps.empty())
            throw std::invalid_argument("generate_trial: no throttle steps");
        if (spec.kind == TrialKind::deceleration)
            x.u = steady_speed(p, spec.throttle_steps.front());
        truth.push_back(x);
        for (double nT : spec.throttle_steps)
        {
            const ActuatorState a{nT, 0.0};
            double held = 0.0;
            while (held < spec.max_hold)
            {
                record_step(a);
                held += spec.dt;
                if (held >= kMinHold && std::abs(state_derivative(x, a, p).u) < spec.settle_accel)
                    break;
            }
        }
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    d.states.reserve(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i)
    {
        Vec6 s = truth[i].to_vector();
        for (int j = 0; j < 6; ++j)
            if (noise_std[j] > 0.0)
                s[j] += noise_std[j] * n01(rng);
        d.states.push_back(VesselState::from_vector(s));
        d.t.push_back(static_cast<double>(i) * spec.dt);
    }
    return d;
}

std::vector<double> zigzag_overshoots(const TrialDataset &d, double threshold)
{
    std::vector<double> peaks;
    if (d.inputs.empty())
        return peaks;
    // Split the trace at steering reversals and take the heading extreme of each
    // part that follows a reversal.
    std::size_t begin = 0;
    for (std::size_t i = 1; i <= d.inputs.size(); ++i)
    {
        const bool reversal = i < d.inputs.size() && d.inputs[i].n_S * d.inputs[i - 1].n_S < 0.0;
        if (!reversal && i < d.inputs.size())
            continue;
        if (begin > 0)
        {
            double extreme = d.states[begin].psi;
            for (std::size_t k = begin; k <= i; ++k)
                if (std::abs(d.states[k].psi) > std::abs(extreme))
                    extreme = d.states[k].psi;
            if (std::abs(extreme) > threshold)
                peaks.push_back(extreme);
        }
        begin = i;
    }
    return peaks;
}

} // namespace canal
