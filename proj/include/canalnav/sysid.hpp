#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "canalnav/vessel.hpp"

namespace canal
{

class InvalidDataset : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// The data does not excite the parameters being identified.
class DegenerateData : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

enum class TrialKind
{
    acceleration,
    deceleration,
    zigzag,
};

std::string_view to_string(TrialKind k);
TrialKind parse_trial_kind(std::string_view s);

struct TrialDataset
{
    TrialKind kind = TrialKind::acceleration;
    std::vector<double> t;              // N + 1 uniformly spaced timestamps
    std::vector<VesselState> states;    // N + 1 measured states
    std::vector<ActuatorState> inputs;  // N inputs, inputs[i] held over [t_i, t_i+1)

    double dt() const;
    std::size_t num_steps() const { return inputs.size(); }
    void validate() const; // throws InvalidDataset
};

// CSV with header t,x,y,psi,u,v,r,n_T,n_S and a leading "# kind: <name>" line.
// The final row repeats the last input so every row is complete.
void write_trial_csv(std::ostream &os, const TrialDataset &d);
TrialDataset read_trial_csv(std::istream &is, const TrialKind *kind_override = nullptr);
void save_trial_csv(const std::string &path, const TrialDataset &d);
TrialDataset load_trial_csv(const std::string &path, const TrialKind *kind_override = nullptr);

using FreeMask = std::array<bool, kNumIdentified>;

FreeMask surge_mask();    // m11, X_u, X_uu, c
FreeMask sway_yaw_mask(); // m22, m33 and the sway/yaw drag terms

struct SysIdConfig
{
    Vec6 W = Vec6::Zero(); // diagonal weight on [x y psi u v r]
    ParamSet initial_guess;
    FreeMask free_mask{};
    int max_iters = 200;
    double tolerance = 1e-12; // relative cost decrease that counts as converged
    int segment_length = 50;  // samples per re-anchored rollout
    double fd_step = 1e-6;    // central-difference step in log-parameter space

    void validate() const;

    static SysIdConfig surge(const ParamSet &guess);
    static SysIdConfig sway_yaw(const ParamSet &guess);
};

struct SysIdReport
{
    ParamSet fitted;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    Vec6 rms = Vec6::Zero(); // per-state RMS of unweighted residuals (heading wrapped)
    int iterations = 0;
    bool converged = false;
    double runtime = 0.0; // s
};

/// RK4 rollout at dt; result has inputs.size() + 1 states, the first equal to x0.
std::vector<VesselState> simulate_rollout(const VesselState &x0, std::span<const ActuatorState> inputs,
                                          const ParamSet &p, double dt);

/// Weighted squared error of segment-wise rollouts re-anchored at the measured
/// state every cfg.segment_length samples.
double sysid_cost(const ParamSet &p, const TrialDataset &data, const SysIdConfig &cfg);
double sysid_cost(const ParamSet &p, std::span<const TrialDataset> data, const SysIdConfig &cfg);

/// Per-sample residuals (predicted - measured, heading wrapped) of the re-anchored rollouts.
struct ResidualTrace
{
    std::vector<double> t;
    std::vector<Vec6> residual;
};
ResidualTrace sysid_residuals(const ParamSet &p, const TrialDataset &data, int segment_length);
void write_residual_csv(std::ostream &os, const ResidualTrace &r);

/**
 * Surge identification on acceleration / deceleration trials. Levenberg-Marquardt
 * on the weighted residuals over the logarithms of the free parameters; parameters
 * outside the mask keep their initial values bitwise.
 *
 * Straight-line surge data is invariant under a common scaling of m11, X_u,
 * X_uu and c, so only their ratios are determined by the data; the common
 * scale stays at that of the initial guess.
 */
SysIdReport identify_surge(std::span<const TrialDataset> data, const SysIdConfig &cfg);

/// Sway-yaw identification on zigzag trials with the surge parameters of `surge` held fixed.
SysIdReport identify_sway_yaw(std::span<const TrialDataset> data, const ParamSet &surge, const SysIdConfig &cfg);

/**
 * Equation-error initial guess: with m11 fixed (e.g. from the dry mass) the
 * surge equation is linear in c, X_u, X_uu; with the surge terms known the sway
 * and yaw equations are linear in the remaining constants. Accelerations are
 * centered differences over short windows with a constant input.
 * Drag terms are clipped to be negative.
 */
ParamSet equation_error_guess(std::span<const TrialDataset> surge_data, std::span<const TrialDataset> zigzag_data,
                              double m11, double l_y, double delta_max);

struct TrialSpec
{
    TrialKind kind = TrialKind::acceleration;
    std::vector<double> throttle_steps;  // acceleration / deceleration
    double zigzag_throttle = 42.0;       // %
    double zigzag_steering = 50.0;       // %
    double zigzag_heading = deg2rad(20.0);
    int overshoots = 3;
    double dt = 0.1;           // sampling period (10 Hz)
    double settle_accel = 1e-3; // m/s^2, steady-state test for step changes
    double max_hold = 600.0;   // s per step / for the whole zigzag

    static TrialSpec acceleration();
    static TrialSpec deceleration();
    static TrialSpec zigzag();
};

/**
 * Synthetic trial. Acceleration starts from rest and deceleration from the
 * steady state of the first step; each step is held until |du/dt| drops below
 * settle_accel. The zigzag starts from the steady state at zigzag_throttle,
 * applies +steering (which turns to negative heading), toggles when the heading
 * passes -/+ zigzag_heading, and stops at the peak of the final overshoot.
 * Gaussian noise with the given per-state standard deviation is added to the
 * recorded states.
 */
TrialDataset generate_trial(const TrialSpec &spec, const ParamSet &p, const Vec6 &noise_std, std::uint64_t seed);

/// Surge speed with c n|n| + X_u u + X_uu u|u| = 0.
double steady_speed(const ParamSet &p, double n_T);

/// Heading extremes beyond the switching threshold (rad, signed) in a zigzag trace.
std::vector<double> zigzag_overshoots(const TrialDataset &d, double threshold);

} // namespace canal
