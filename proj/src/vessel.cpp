#include "canalnav/vessel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

namespace canal
{

namespace
{
constexpr std::array<std::string_view, kNumIdentified> kParamNames = {
    "m11", "m22", "m33", "X_u", "Y_v", "Y_r", "N_v", "N_r",
    "X_uu", "Y_vv", "Y_rr", "N_vv", "N_rr", "c"};

double signed_square(double n) { return n * std::abs(n); }
} // namespace

double wrap_angle(double a)
{
    a = std::remainder(a, 2.0 * std::numbers::pi);
    if (a <= -std::numbers::pi)
        a += 2.0 * std::numbers::pi;
    return a;
}

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

Vec6 VesselState::to_vector() const
{
    Vec6 s;
    s << x, y, psi, u, v, r;
    return s;
}

VesselState VesselState::from_vector(const Vec6 &s)
{
    return {s[0], s[1], s[2], s[3], s[4], s[5]};
}

bool VesselState::finite() const
{
    return to_vector().allFinite();
}

std::string_view param_name(Param p)
{
    return kParamNames.at(static_cast<std::size_t>(p));
}

double &ParamSet::operator[](Param p)
{
    switch (p)
    {
    case Param::m11: return m11;
    case Param::m22: return m22;
    case Param::m33: return m33;
    case Param::X_u: return X_u;
    case Param::Y_v: return Y_v;
    case Param::Y_r: return Y_r;
    case Param::N_v: return N_v;
    case Param::N_r: return N_r;
    case Param::X_uu: return X_uu;
    case Param::Y_vv: return Y_vv;
    case Param::Y_rr: return Y_rr;
    case Param::N_vv: return N_vv;
    case Param::N_rr: return N_rr;
    case Param::c: return c;
    default: break;
    }
    throw std::out_of_range("invalid parameter index");
}

double ParamSet::operator[](Param p) const
{
    return const_cast<ParamSet &>(*this)[p];
}

void ParamSet::validate() const
{
    for (int i = 0; i < kNumIdentified; ++i)
    {
        const auto id = static_cast<Param>(i);
        if (!std::isfinite((*this)[id]))
            throw InvalidParameters(std::string(param_name(id)) + " is not finite");
    }
    if (m11 <= 0.0 || m22 <= 0.0 || m33 <= 0.0)
        throw InvalidParameters("inertia terms m11, m22, m33 must be positive");
    for (Param id : {Param::X_u, Param::Y_v, Param::Y_r, Param::N_v, Param::N_r,
                     Param::X_uu, Param::Y_vv, Param::Y_rr, Param::N_vv, Param::N_rr})
    {
        if ((*this)[id] > 0.0)
            throw InvalidParameters(std::string(param_name(id)) + " must be <= 0 (dissipative)");
    }
    if (!(c > 0.0))
        throw InvalidParameters("control coefficient c must be positive");
    if (!(l_y > 0.0))
        throw InvalidParameters("lever arm l_y must be positive");
    if (!(delta_max > 0.0 && delta_max < std::numbers::pi / 2.0))
        throw InvalidParameters("delta_max must lie in (0, pi/2)");
}

ParamSet published_params()
{
    ParamSet p;
    p.m11 = 1.9149e+03;
    p.m22 = 1.8238e+03;
    p.m33 = 1.9351e+03;
    p.X_u = -29.220;
    p.Y_v = -3.6284e+03;
    p.Y_r = -1.6080e-04;
    p.N_v = -1.3102e-04;
    p.N_r = -2.1940e+03;
    p.X_uu = -54.344;
    p.Y_vv = -282.62;
    p.Y_rr = -0.0025;
    p.N_vv = -0.0010;
    p.N_rr = -206.44;
    p.c = 1.3331e-05;
    p.l_y = 3.0;
    p.delta_max = deg2rad(25.0);
    return p;
}

ParamSet canal_boat_params()
{
    ParamSet p = published_params();
    p.c *= kRpmPerPercent * kRpmPerPercent;
    return p;
}

void write_params(std::ostream &os, const ParamSet &p)
{
    std::ostringstream buf;
    buf << std::setprecision(17);
    for (int i = 0; i < kNumIdentified; ++i)
    {
        const auto id = static_cast<Param>(i);
        buf << param_name(id) << ' ' << p[id] << '\n';
    }
    buf << "l_y " << p.l_y << '\n';
    buf << "delta_max_deg " << rad2deg(p.delta_max) << '\n';
    os << buf.str();
}

ParamSet read_params(std::istream &is)
{
    std::map<std::string, double> values;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line))
    {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key))
            continue;
        double value = 0.0;
        if (!(ls >> value))
            throw ParseError("parameter file line " + std::to_string(lineno) + ": missing value for '" + key + "'");
        std::string extra;
        if (ls >> extra)
            throw ParseError("parameter file line " + std::to_string(lineno) + ": trailing token '" + extra + "'");
        if (!values.emplace(key, value).second)
            throw ParseError("parameter file line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }

    auto take = [&](std::string_view key) {
        auto it = values.find(std::string(key));
        if (it == values.end())
            throw ParseError("parameter file: missing key '" + std::string(key) + "'");
        const double v = it->second;
        values.erase(it);
        return v;
    };

    ParamSet p;
    for (int i = 0; i < kNumIdentified; ++i)
    {
        const auto id = static_cast<Param>(i);
        p[id] = take(param_name(id));
    }
    p.l_y = take("l_y");
    p.delta_max = deg2rad(take("delta_max_deg"));
    if (!values.empty())
        throw ParseError("parameter file: unknown key '" + values.begin()->first + "'");
    return p;
}

void save_params(const std::string &path, const ParamSet &p)
{
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("cannot write " + path);
    write_params(os, p);
}

ParamSet load_params(const std::string &path)
{
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("cannot open " + path);
    return read_params(is);
}

Mat3 rotation_matrix(double psi)
{
    const double c = std::cos(psi);
    const double s = std::sin(psi);
    Mat3 R;
    R << c, -s, 0.0,
         s, c, 0.0,
         0.0, 0.0, 1.0;
    return R;
}

Mat3 coriolis_matrix(const Vec3 &nu, const ParamSet &p)
{
    const double u = nu[0];
    const double v = nu[1];
    Mat3 C;
    C << 0.0, 0.0, -p.m22 * v,
         0.0, 0.0, p.m11 * u,
         p.m22 * v, -p.m11 * u, 0.0;
    return C;
}

Mat3 damping_matrix(const Vec3 &nu, const ParamSet &p)
{
    const double au = std::abs(nu[0]);
    const double av = std::abs(nu[1]);
    const double ar = std::abs(nu[2]);
    Mat3 D;
    D << -(p.X_u + p.X_uu * au), 0.0, 0.0,
         0.0, -(p.Y_v + p.Y_vv * av), -(p.Y_r + p.Y_rr * ar),
         0.0, -(p.N_v + p.N_vv * av), -(p.N_r + p.N_rr * ar);
    return D;
}

Mat3 inertia_matrix(const ParamSet &p)
{
    return Vec3(p.m11, p.m22, p.m33).asDiagonal();
}

Wrench thrust_map(const ActuatorState &act, const ParamSet &p)
{
    const double alpha = p.delta_max / 100.0;
    const double F = p.c * signed_square(act.n_T);
    const double delta = alpha * act.n_S;
    Wrench w;
    w.X = F * std::cos(delta);
    w.Y = F * std::sin(delta);
    w.N = -p.l_y * w.Y;
    return w;
}

VesselState state_derivative(const VesselState &s, const ActuatorState &act, const ParamSet &p)
{
    if (!(p.m11 > 0.0 && p.m22 > 0.0 && p.m33 > 0.0))
        throw InvalidParameters("inertia terms m11, m22, m33 must be positive");

    const Wrench tau = thrust_map(act, p);
    const double u = s.u, v = s.v, r = s.r;
    const double cpsi = std::cos(s.psi), spsi = std::sin(s.psi);

    // M is diagonal, so M^-1 (tau - C nu - D nu) reduces to three divisions.
    const double Fu = tau.X + p.m22 * v * r + (p.X_u + p.X_uu * std::abs(u)) * u;
    const double Fv = tau.Y - p.m11 * u * r + (p.Y_v + p.Y_vv * std::abs(v)) * v
                      + (p.Y_r + p.Y_rr * std::abs(r)) * r;
    const double Fr = tau.N - (p.m22 - p.m11) * u * v + (p.N_v + p.N_vv * std::abs(v)) * v
                      + (p.N_r + p.N_rr * std::abs(r)) * r;

    VesselState d;
    d.x = u * cpsi - v * spsi;
    d.y = u * spsi + v * cpsi;
    d.psi = r;
    d.u = Fu / p.m11;
    d.v = Fv / p.m22;
    d.r = Fr / p.m33;
    return d;
}

VesselState rk4_step(const VesselState &s, const ActuatorState &act, const ParamSet &p, double dt)
{
    if (!(dt > 0.0))
        throw std::invalid_argument("rk4_step: dt must be positive");
    const Vec6 x0 = s.to_vector();
    auto f = [&](const Vec6 &x) { return state_derivative(VesselState::from_vector(x), act, p).to_vector(); };
    const Vec6 k1 = f(x0);
    const Vec6 k2 = f(x0 + 0.5 * dt * k1);
    const Vec6 k3 = f(x0 + 0.5 * dt * k2);
    const Vec6 k4 = f(x0 + dt * k3);
    return VesselState::from_vector(x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

double kinetic_energy(const VesselState &s, const ParamSet &p)
{
    return 0.5 * (p.m11 * s.u * s.u + p.m22 * s.v * s.v + p.m33 * s.r * s.r);
}

Vec8 to_vector(const AugmentedState &a)
{
    Vec8 x;
    x << a.vessel.x, a.vessel.y, a.vessel.psi, a.vessel.u, a.vessel.v, a.vessel.r, a.act.n_T, a.act.n_S;
    return x;
}

AugmentedState augmented_from_vector(const Vec8 &x)
{
    return {{x[0], x[1], x[2], x[3], x[4], x[5]}, {x[6], x[7]}};
}

Vec8 augmented_derivative(const Vec8 &x, const Eigen::Vector2d &rate, const ParamSet &p)
{
    const VesselState d = state_derivative(VesselState::from_vector(x.head<6>()), {x[6], x[7]}, p);
    Vec8 dx;
    dx << d.to_vector(), rate;
    return dx;
}

void augmented_jacobian(const Vec8 &x, const ParamSet &p, Mat8 &A, Mat82 &B)
{
    const double psi = x[2], u = x[3], v = x[4], r = x[5], nT = x[6], nS = x[7];
    const double cpsi = std::cos(psi), spsi = std::sin(psi);
    const double alpha = p.delta_max / 100.0;
    const double ca = std::cos(alpha * nS), sa = std::sin(alpha * nS);
    const double F = p.c * signed_square(nT);
    const double dF = 2.0 * p.c * std::abs(nT);

    A.setZero();
    A(0, 2) = -u * spsi - v * cpsi;
    A(0, 3) = cpsi;
    A(0, 4) = -spsi;
    A(1, 2) = u * cpsi - v * spsi;
    A(1, 3) = spsi;
    A(1, 4) = cpsi;
    A(2, 5) = 1.0;

    A(3, 3) = (p.X_u + 2.0 * p.X_uu * std::abs(u)) / p.m11;
    A(3, 4) = p.m22 * r / p.m11;
    A(3, 5) = p.m22 * v / p.m11;
    A(3, 6) = dF * ca / p.m11;
    A(3, 7) = -F * alpha * sa / p.m11;

    A(4, 3) = -p.m11 * r / p.m22;
    A(4, 4) = (p.Y_v + 2.0 * p.Y_vv * std::abs(v)) / p.m22;
    A(4, 5) = (-p.m11 * u + p.Y_r + 2.0 * p.Y_rr * std::abs(r)) / p.m22;
    A(4, 6) = dF * sa / p.m22;
    A(4, 7) = F * alpha * ca / p.m22;

    A(5, 3) = -(p.m22 - p.m11) * v / p.m33;
    A(5, 4) = (-(p.m22 - p.m11) * u + p.N_v + 2.0 * p.N_vv * std::abs(v)) / p.m33;
    A(5, 5) = (p.N_r + 2.0 * p.N_rr * std::abs(r)) / p.m33;
    A(5, 6) = -p.l_y * dF * sa / p.m33;
    A(5, 7) = -p.l_y * F * alpha * ca / p.m33;

    B.setZero();
    B(6, 0) = 1.0;
    B(7, 1) = 1.0;
}

AugmentedState augmented_step(const VesselState &s, const ActuatorState &act, const RateInput &rate,
                              const ParamSet &p, double dt)
{
    if (!(dt > 0.0))
        throw std::invalid_argument("augmented_step: dt must be positive");
    const Vec8 x0 = to_vector({s, act});
    const Eigen::Vector2d w(rate.dn_T, rate.dn_S);
    const Vec8 k1 = augmented_derivative(x0, w, p);
    const Vec8 k2 = augmented_derivative(x0 + 0.5 * dt * k1, w, p);
    const Vec8 k3 = augmented_derivative(x0 + 0.5 * dt * k2, w, p);
    const Vec8 k4 = augmented_derivative(x0 + dt * k3, w, p);
    Vec8 x1 = x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    x1[6] = std::clamp(x1[6], -100.0, 100.0);
    x1[7] = std::clamp(x1[7], -100.0, 100.0);
    return augmented_from_vector(x1);
}

} // namespace canal
