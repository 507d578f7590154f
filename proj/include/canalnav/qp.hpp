#pragma once

#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace canal
{

/**
 * Dense convex QP
 *
 *   minimize    1/2 x'Hx + g'x
 *   subject to  lbA <= A x <= ubA,   lb <= x <= ub
 *
 * Infinite bounds are ignored; lbA == ubA (or lb == ub) marks an equality.
 * H must be positive definite; callers regularize semidefinite Hessians.
 */
struct QpProblem
{
    Eigen::MatrixXd H;
    Eigen::VectorXd g;
    Eigen::MatrixXd A;
    Eigen::VectorXd lbA, ubA;
    Eigen::VectorXd lb, ub;

    int num_vars() const { return static_cast<int>(g.size()); }
    int num_rows() const { return static_cast<int>(A.rows()); }

    // Fills missing bound vectors with +-infinity and checks dimensions.
    void normalize();
    void validate() const;
};

enum class QpStatus
{
    optimal,
    infeasible,
    max_iter,
};

std::string_view to_string(QpStatus s);

/// One side of a constraint that holds with equality at the solution.
/// `index` < n addresses the bound on x[index]; otherwise row index - n of A.
struct ActiveConstraint
{
    int index = 0;
    bool upper = false;

    bool operator==(const ActiveConstraint &) const = default;
};

struct QpOptions
{
    int max_iter = 5000;
    double feasibility_tol = 1e-10; // on unit-normalized constraint rows
};

struct QpResult
{
    Eigen::VectorXd x;
    // Signed multipliers: positive for an active lower side, negative for upper.
    Eigen::VectorXd bound_multipliers;
    Eigen::VectorXd row_multipliers;
    std::vector<ActiveConstraint> active;
    QpStatus status = QpStatus::infeasible;
    int iterations = 0;
    double objective = 0.0;
};

/**
 * Goldfarb-Idnani dual active-set method. Starting from the unconstrained
 * minimizer it adds violated constraints one at a time while keeping dual
 * feasibility, so no phase-1 is needed and an inconsistent constraint set is
 * reported as infeasible instead of failing.
 *
 * Warm start: constraints listed in `warm` are preferred when choosing the
 * next violated constraint, which reproduces the previous active set in as
 * many iterations as it has members.
 */
QpResult solve_qp(const QpProblem &qp, const std::vector<ActiveConstraint> &warm = {}, const QpOptions &opt = {});

/// Max-norm KKT violation: stationarity, primal and dual feasibility, complementarity.
double kkt_residual(const QpProblem &qp, const QpResult &res);

} // namespace canal
