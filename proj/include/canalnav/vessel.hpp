#pragma once

#include <array>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace canal
{

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat8 = Eigen::Matrix<double, 8, 8>;
using Mat82 = Eigen::Matrix<double, 8, 2>;

class InvalidParameters : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

double wrap_angle(double a); // (-pi, pi]
double deg2rad(double d);
double rad2deg(double r);

// Pose and body velocities. psi is kept unwrapped.
struct VesselState
{
    double x = 0.0;
    double y = 0.0;
    double psi = 0.0;
    double u = 0.0;
    double v = 0.0;
    double r = 0.0;

    Vec6 to_vector() const;
    static VesselState from_vector(const Vec6 &s);
    Vec3 nu() const { return {u, v, r}; }
    bool finite() const;
};

// Throttle and steering in percent, each within [-100, 100].
struct ActuatorState
{
    double n_T = 0.0;
    double n_S = 0.0;
};

// Actuator rates in percent per second.
struct RateInput
{
    double dn_T = 0.0;
    double dn_S = 0.0;
};

struct Wrench
{
    double X = 0.0;
    double Y = 0.0;
    double N = 0.0;
};

// Index of each identified constant inside ParamSet::identified().
enum class Param : int
{
    m11, m22, m33,
    X_u, Y_v, Y_r, N_v, N_r,
    X_uu, Y_vv, Y_rr, N_vv, N_rr,
    c,
    count
};

inline constexpr int kNumIdentified = static_cast<int>(Param::count);

std::string_view param_name(Param p);

/**
 * Hydrodynamic constants of the 3-DOF model plus fixed actuator geometry.
 *
 * Drag coefficients follow the dissipative sign convention (all <= 0), so the
 * damping matrix is D = -(linear) - (|.|-scaled nonlinear).
 */
struct ParamSet
{
    double m11 = 0.0, m22 = 0.0, m33 = 0.0;
    double X_u = 0.0, Y_v = 0.0, Y_r = 0.0, N_v = 0.0, N_r = 0.0;
    double X_uu = 0.0, Y_vv = 0.0, Y_rr = 0.0, N_vv = 0.0, N_rr = 0.0;
    double c = 0.0;
    double l_y = 3.0;
    double delta_max = 25.0 * 3.14159265358979323846 / 180.0; // rad

    double &operator[](Param p);
    double operator[](Param p) const;

    // Throws InvalidParameters naming the first violated invariant.
    void validate() const;

    bool operator==(const ParamSet &) const = default;
};

// Identified values as published for the 7.9 m cruise boat. The control
// coefficient multiplies the squared propeller speed, not the percent command.
ParamSet published_params();

// Published values with the control coefficient re-expressed for throttle in
// percent, assuming 100 rpm per percent (c_pct = c * 100^2). This is the
// model used for trials and closed-loop simulation.
ParamSet canal_boat_params();

inline constexpr double kRpmPerPercent = 100.0;

// Flat "key value" text; keys are the symbol names plus l_y and delta_max_deg.
void write_params(std::ostream &os, const ParamSet &p);
ParamSet read_params(std::istream &is);
void save_params(const std::string &path, const ParamSet &p);
ParamSet load_params(const std::string &path);

Mat3 rotation_matrix(double psi);
Mat3 coriolis_matrix(const Vec3 &nu, const ParamSet &p);
Mat3 damping_matrix(const Vec3 &nu, const ParamSet &p);
Mat3 inertia_matrix(const ParamSet &p);

// Signed-square thrust: tau_X = c n_T |n_T| cos(alpha n_S), alpha = delta_max / 100.
Wrench thrust_map(const ActuatorState &act, const ParamSet &p);

VesselState state_derivative(const VesselState &s, const ActuatorState &act, const ParamSet &p);

VesselState rk4_step(const VesselState &s, const ActuatorState &act, const ParamSet &p, double dt);

double kinetic_energy(const VesselState &s, const ParamSet &p);

struct AugmentedState
{
    VesselState vessel;
    ActuatorState act;
};

Vec8 to_vector(const AugmentedState &a);
AugmentedState augmented_from_vector(const Vec8 &x);

// 8-state model [x y psi u v r n_T n_S] driven by actuator rates.
Vec8 augmented_derivative(const Vec8 &x, const Eigen::Vector2d &rate, const ParamSet &p);

// Analytic partial derivatives of augmented_derivative. n_T |n_T| is C1, so
// the Jacobian is continuous everywhere.
void augmented_jacobian(const Vec8 &x, const ParamSet &p, Mat8 &A, Mat82 &B);

// RK4 over dt with the rate held; actuator states clamped to +-100 afterwards.
AugmentedState augmented_step(const VesselState &s, const ActuatorState &act, const RateInput &rate,
                              const ParamSet &p, double dt);

} // namespace canal
