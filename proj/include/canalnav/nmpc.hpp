#pragma once

#include <string_view>
#include <vector>

#include "canalnav/ocp.hpp"
#include "canalnav/qp.hpp"

namespace canal
{

enum class SolveStatus
{
    optimal,
    max_iter,
    infeasible_qp,
};

std::string_view to_string(SolveStatus s);

struct SolveResult
{
    std::vector<Vec2> inputs;   // [dn_T, dn_S] per stage, N_p entries
    std::vector<Vec8> states;   // N_p + 1 predicted augmented states
    std::vector<double> slacks; // N_p + 1, >= 0
    double objective = 0.0;     // NLP cost of the input sequence (see sqp_rti_step)
    SolveStatus status = SolveStatus::optimal;
    double solve_time = 0.0; // s
    int sqp_iterations = 0;
    double kkt_residual = 0.0;
    std::vector<ActiveConstraint> active_set;
};

/// RK4 of the augmented model over h with exact sensitivities dx+/dx and dx+/du.
Vec8 rk4_augmented(const Vec8 &x, const Vec2 &rate, const ParamSet &p, double h, Mat8 *A = nullptr,
                   Mat82 *B = nullptr);

/**
 * NLP cost of an input sequence: the augmented model is rolled out from
 * x_init, each stage's slack is set to the smallest value satisfying all of
 * its obstacle constraints, and stage plus terminal costs are summed.
 */
double rollout_objective(const OcpProblem &ocp, const std::vector<Vec2> &inputs);

struct SqpOptions
{
    int iterations = 1;       // 1 = real-time iteration
    double tolerance = 1e-6;  // on the max-norm input step, iterations > 1 only
    double regularization = 1e-8;
};

/**
 * Gauss-Newton SQP on the multiple-shooting OCP. Each iteration linearizes the
 * dynamics defects and the quartic obstacle constraints around the current
 * guess, condenses the states away (QP over input steps and slacks), solves the
 * QP, and applies the step. The first iteration always takes the full step, so
 * iterations = 1 is the classical RTI scheme; later iterations backtrack on
 * rollout_objective and stop once no decrease is possible.
 */
SolveResult sqp_rti_step(const OcpProblem &ocp, const SqpOptions &opt = {});

/// Shifts the previous solution one full stage; the last stage is duplicated.
InitialGuess shift_warm_start(const SolveResult &prev);

/// Shifts by a fraction of a stage (control period / T_s) with linear interpolation.
InitialGuess shift_warm_start(const SolveResult &prev, double fraction);

} // namespace canal
