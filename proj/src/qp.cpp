#include "canalnav/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace canal
{

namespace
{
constexpr double kInf = std::numeric_limits<double>::infinity();

// Unit-normalized half-space n'x >= rhs (or n'x == rhs for equalities).
struct Constraint
{
    bool is_row = false;
    int index = 0;     // variable index or row index
    double coef = 1.0; // n = coef * (e_index or A.row(index)')
    double rhs = 0.0;
    bool equality = false;
    ActiveConstraint id;
};

class DualActiveSet
{
public:
    DualActiveSet(const QpProblem &qp, const QpOptions &opt) : qp_(qp), opt_(opt), n_(qp.num_vars()) {}

    QpResult run(const std::vector<ActiveConstraint> &warm)
    {
        QpResult res;
        res.x = Eigen::VectorXd::Zero(n_);
        res.bound_multipliers = Eigen::VectorXd::Zero(n_);
        res.row_multipliers = Eigen::VectorXd::Zero(qp_.num_rows());

        if (!build_constraints())
        {
            res.status = QpStatus::infeasible;
            return res;
        }
        for (std::size_t k = 0; k < cons_.size(); ++k)
            if (std::find(warm.begin(), warm.end(), cons_[k].id) != warm.end())
                preferred_[k] = true;

        Eigen::LLT<Eigen::MatrixXd> llt(qp_.H);
        if (llt.info() != Eigen::Success)
            throw std::invalid_argument("solve_qp: Hessian is not positive definite");
        const Eigen::MatrixXd L = llt.matrixL();
        J_ = L.transpose().triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(n_, n_));
        R_ = Eigen::MatrixXd::Zero(n_, n_);
        x_ = -llt.solve(qp_.g);
        iq_ = 0;
        R_norm_ = 1.0;
        active_.clear();
        u_.clear();

        QpStatus status = solve_loop(res.iterations);
        res.status = status;
        res.x = x_;
        res.objective = 0.5 * x_.dot(qp_.H * x_) + qp_.g.dot(x_);
        for (int k = 0; k < iq_; ++k)
        {
            const Constraint &c = cons_[static_cast<std::size_t>(active_[static_cast<std::size_t>(k)])];
            const double mult = u_[static_cast<std::size_t>(k)] * c.coef;
            if (c.is_row)
                res.row_multipliers[c.index] += mult;
            else
                res.bound_multipliers[c.index] += mult;
            res.active.push_back(c.id);
        }
        return res;
    }

private:
    bool add_bound_or_row(bool is_row, int index, double scale, double lo, double hi, int id_index)
    {
        if (lo > hi)
            return false;
        const bool lo_fin = std::isfinite(lo), hi_fin = std::isfinite(hi);
        if (!lo_fin && !hi_fin)
            return true;
        if (scale <= 0.0)
            return (!lo_fin || lo <= 0.0) && (!hi_fin || hi >= 0.0);
        const double inv = 1.0 / scale;
        if (lo_fin && hi_fin && lo == hi)
        {
            cons_.push_back({is_row, index, inv, lo * inv, true, {id_index, false}});
            return true;
        }
        if (lo_fin)
            cons_.push_back({is_row, index, inv, lo * inv, false, {id_index, false}});
        if (hi_fin)
            cons_.push_back({is_row, index, -inv, -hi * inv, false, {id_index, true}});
        return true;
    }

    bool build_constraints()
    {
        for (int j = 0; j < n_; ++j)
            if (!add_bound_or_row(false, j, 1.0, qp_.lb[j], qp_.ub[j], j))
                return false;
        for (int i = 0; i < qp_.num_rows(); ++i)
            if (!add_bound_or_row(true, i, qp_.A.row(i).norm(), qp_.lbA[i], qp_.ubA[i], n_ + i))
                return false;
        // Equalities first: they are added before any inequality.
        std::stable_partition(cons_.begin(), cons_.end(), [](const Constraint &c) { return c.equality; });
        preferred_.assign(cons_.size(), false);
        return true;
    }

    Eigen::VectorXd normal(const Constraint &c) const
    {
        if (c.is_row)
            return c.coef * qp_.A.row(c.index).transpose();
        Eigen::VectorXd v = Eigen::VectorXd::Zero(n_);
        v[c.index] = c.coef;
        return v;
    }

    double value(const Constraint &c, const Eigen::VectorXd &Ax) const
    {
        return (c.is_row ? c.coef * Ax[c.index] : c.coef * x_[c.index]) - c.rhs;
    }

    void compute_d(const Eigen::VectorXd &np)
    {
        d_ = J_.transpose() * np;
    }

    void update_z()
    {
        z_ = J_.rightCols(n_ - iq_) * d_.tail(n_ - iq_);
    }

    void update_r()
    {
        r_ = R_.topLeftCorner(iq_, iq_).triangularView<Eigen::Upper>().solve(d_.head(iq_));
    }

    bool add_constraint()
    {
        for (int j = n_ - 1; j >= iq_ + 1; --j)
        {
            double cc = d_[j - 1];
            double ss = d_[j];
            const double h = std::hypot(cc, ss);
            if (h == 0.0)
                continue;
            d_[j] = 0.0;
            ss /= h;
            cc /= h;
            if (cc < 0.0)
            {
                cc = -cc;
                ss = -ss;
                d_[j - 1] = -h;
            }
            else
            {
                d_[j - 1] = h;
            }
            const double xny = ss / (1.0 + cc);
            for (int k = 0; k < n_; ++k)
            {
                const double t1 = J_(k, j - 1);
                const double t2 = J_(k, j);
                J_(k, j - 1) = t1 * cc + t2 * ss;
                J_(k, j) = xny * (t1 + J_(k, j - 1)) - t2;
            }
        }
        ++iq_;
        R_.col(iq_ - 1).head(iq_) = d_.head(iq_);
        if (std::abs(d_[iq_ - 1]) <= std::numeric_limits<double>::epsilon() * R_norm_)
            return false; // linearly dependent on the active set
        R_norm_ = std::max(R_norm_, std::abs(d_[iq_ - 1]));
        return true;
    }

    void delete_constraint(int con)
    {
        int qq = -1;
        for (int i = 0; i < iq_; ++i)
            if (active_[static_cast<std::size_t>(i)] == con)
            {
                qq = i;
                break;
            }
        if (qq < 0)
            throw std::logic_error("solve_qp: deleting a constraint that is not active");

        // u_ and active_ hold iq_ + 1 entries: the last one is the constraint being added.
        active_.erase(active_.begin() + qq);
        u_.erase(u_.begin() + qq);
        for (int i = qq; i < iq_ - 1; ++i)
            R_.col(i) = R_.col(i + 1);
        R_.col(iq_ - 1).setZero();
        --iq_;
        if (iq_ == 0)
            return;

        for (int j = qq; j < iq_; ++j)
        {
            double cc = R_(j, j);
            double ss = R_(j + 1, j);
            const double h = std::hypot(cc, ss);
            if (h == 0.0)
                continue;
            cc /= h;
            ss /= h;
            R_(j + 1, j) = 0.0;
            if (cc < 0.0)
            {
                R_(j, j) = -h;
                cc = -cc;
                ss = -ss;
            }
            else
            {
                R_(j, j) = h;
            }
            const double xny = ss / (1.0 + cc);
            for (int k = j + 1; k < iq_; ++k)
            {
                const double t1 = R_(j, k);
                const double t2 = R_(j + 1, k);
                R_(j, k) = t1 * cc + t2 * ss;
                R_(j + 1, k) = xny * (t1 + R_(j, k)) - t2;
            }
            for (int k = 0; k < n_; ++k)
            {
                const double t1 = J_(k, j);
                const double t2 = J_(k, j + 1);
                J_(k, j) = t1 * cc + t2 * ss;
                J_(k, j + 1) = xny * (J_(k, j) + t1) - t2;
            }
        }
    }

    QpStatus solve_loop(int &iterations)
    {
        const double eps = std::numeric_limits<double>::epsilon();
        std::size_t num_eq = 0;
        while (num_eq < cons_.size() && cons_[num_eq].equality)
            ++num_eq;

        for (std::size_t k = 0; k < num_eq; ++k)
        {
            const Constraint &c = cons_[k];
            const Eigen::VectorXd np = normal(c);
            compute_d(np);
            update_z();
            update_r();
            double t2 = 0.0;
            const double zn = z_.dot(np);
            if (std::abs(zn) > eps)
                t2 = (c.rhs - np.dot(x_)) / zn;
            else if (std::abs(c.rhs - np.dot(x_)) > opt_.feasibility_tol)
                return QpStatus::infeasible;
            x_ += t2 * z_;
            for (int i = 0; i < iq_; ++i)
                u_[static_cast<std::size_t>(i)] -= t2 * r_[i];
            u_.push_back(t2);
            active_.push_back(static_cast<int>(k));
            if (!add_constraint())
            {
                // Dependent equality: consistent only if already satisfied.
                u_.pop_back();
                active_.pop_back();
                --iq_;
                R_.col(iq_).setZero();
                if (std::abs(c.rhs - np.dot(x_)) > 1e3 * opt_.feasibility_tol)
                    return QpStatus::infeasible;
            }
        }
        num_eq_active_ = iq_;

        const std::size_t m = cons_.size();
        std::vector<bool> is_active(m, false);
        std::vector<bool> excluded(m, false);
        Eigen::VectorXd s(static_cast<Eigen::Index>(m));

        while (true)
        {
            if (++iterations > opt_.max_iter)
                return QpStatus::max_iter;

            std::fill(is_active.begin(), is_active.end(), false);
            for (int i = 0; i < iq_; ++i)
                is_active[static_cast<std::size_t>(active_[static_cast<std::size_t>(i)])] = true;

            const Eigen::VectorXd Ax = qp_.num_rows() > 0 ? Eigen::VectorXd(qp_.A * x_) : Eigen::VectorXd();
            for (std::size_t k = num_eq; k < m; ++k)
                s[static_cast<Eigen::Index>(k)] = value(cons_[k], Ax);

            const std::vector<int> active_backup = active_;
            const std::vector<double> u_backup = u_;
            const Eigen::VectorXd x_backup = x_;
            const int iq_backup = iq_;
            const Eigen::MatrixXd J_backup = J_;
            const Eigen::MatrixXd R_backup = R_;

        choose:
            int ip = pick_violated(s, is_active, excluded, num_eq);
            if (ip < 0)
                return QpStatus::optimal;

            const Eigen::VectorXd np = normal(cons_[static_cast<std::size_t>(ip)]);
            u_.push_back(0.0);
            active_.push_back(ip);

            while (true)
            {
                if (++iterations > opt_.max_iter)
                    return QpStatus::max_iter;
                compute_d(np);
                update_z();
                update_r();

                // Partial step: largest dual step before an active multiplier hits zero.
                int drop = -1;
                double t1 = kInf;
                for (int k = num_eq_active_; k < iq_; ++k)
                {
                    if (r_[k] > 0.0)
                    {
                        const double ratio = u_[static_cast<std::size_t>(k)] / r_[k];
                        if (ratio < t1)
                        {
                            t1 = ratio;
                            drop = active_[static_cast<std::size_t>(k)];
                        }
                    }
                }
                // Full step: primal step making constraint ip active.
                double t2 = kInf;
                const double zn = z_.dot(np);
                if (z_.squaredNorm() > eps && zn > 0.0)
                    t2 = -s[ip] / zn;
                const double t = std::min(t1, t2);
                if (!std::isfinite(t))
                    return QpStatus::infeasible;

                if (!std::isfinite(t2))
                {
                    for (int k = 0; k < iq_; ++k)
                        u_[static_cast<std::size_t>(k)] -= t * r_[k];
                    u_[static_cast<std::size_t>(iq_)] += t;
                    delete_constraint(drop);
                    is_active[static_cast<std::size_t>(drop)] = false;
                    continue;
                }

                x_ += t * z_;
                for (int k = 0; k < iq_; ++k)
                    u_[static_cast<std::size_t>(k)] -= t * r_[k];
                u_[static_cast<std::size_t>(iq_)] += t;

                if (t2 <= t1)
                {
                    if (!add_constraint())
                    {
                        // Degenerate: restore and exclude this constraint for now.
                        excluded[static_cast<std::size_t>(ip)] = true;
                        active_ = active_backup;
                        u_ = u_backup;
                        x_ = x_backup;
                        iq_ = iq_backup;
                        J_ = J_backup;
                        R_ = R_backup;
                        std::fill(is_active.begin(), is_active.end(), false);
                        for (int i = 0; i < iq_; ++i)
                            is_active[static_cast<std::size_t>(active_[static_cast<std::size_t>(i)])] = true;
                        goto choose;
                    }
                    std::fill(excluded.begin(), excluded.end(), false);
                    break;
                }

                delete_constraint(drop);
                is_active[static_cast<std::size_t>(drop)] = false;
                const Eigen::VectorXd n_ip = np;
                s[ip] = n_ip.dot(x_) - cons_[static_cast<std::size_t>(ip)].rhs;
            }
        }
    }

    int pick_violated(const Eigen::VectorXd &s, const std::vector<bool> &is_active,
                      const std::vector<bool> &excluded, std::size_t num_eq) const
    {
        int best = -1, best_pref = -1;
        double worst = -opt_.feasibility_tol, worst_pref = -opt_.feasibility_tol;
        for (std::size_t k = num_eq; k < cons_.size(); ++k)
        {
            if (is_active[k] || excluded[k])
                continue;
            const double v = s[static_cast<Eigen::Index>(k)];
            if (v < worst)
            {
                worst = v;
                best = static_cast<int>(k);
            }
            if (preferred_[k] && v < worst_pref)
            {
                worst_pref = v;
                best_pref = static_cast<int>(k);
            }
        }
        return best_pref >= 0 ? best_pref : best;
    }

    const QpProblem &qp_;
    const QpOptions &opt_;
    int n_;
    std::vector<Constraint> cons_;
    std::vector<bool> preferred_;

    Eigen::MatrixXd J_, R_;
    Eigen::VectorXd x_, d_, z_, r_;
    std::vector<int> active_;
    std::vector<double> u_;
    int iq_ = 0;
    int num_eq_active_ = 0;
    double R_norm_ = 1.0;
};

} // namespace

void QpProblem::normalize()
{
    const auto n = g.size();
    if (lb.size() == 0)
        lb = Eigen::VectorXd::Constant(n, -kInf);
    if (ub.size() == 0)
        ub = Eigen::VectorXd::Constant(n, kInf);
    if (A.size() == 0)
        A.resize(0, n);
    if (lbA.size() == 0)
        lbA = Eigen::VectorXd::Constant(A.rows(), -kInf);
    if (ubA.size() == 0)
        ubA = Eigen::VectorXd::Constant(A.rows(), kInf);
}

void QpProblem::validate() const
{
    const auto n = g.size();
    if (H.rows() != n || H.cols() != n)
        throw std::invalid_argument("QpProblem: H must be n x n");
    if (lb.size() != n || ub.size() != n)
        throw std::invalid_argument("QpProblem: bound vectors must have n entries");
    if (A.cols() != n || lbA.size() != A.rows() || ubA.size() != A.rows())
        throw std::invalid_argument("QpProblem: constraint matrix dimensions are inconsistent");
    if (!H.isApprox(H.transpose(), 1e-12))
        throw std::invalid_argument("QpProblem: H must be symmetric");
}

std::string_view to_string(QpStatus s)
{
    switch (s)
    {
    case QpStatus::optimal: return "optimal";
    case QpStatus::infeasible: return "infeasible";
    case QpStatus::max_iter: return "max-iter";
    }
    return "unknown";
}

QpResult solve_qp(const QpProblem &input, const std::vector<ActiveConstraint> &warm, const QpOptions &opt)
{
    QpProblem qp = input;
    qp.normalize();
    qp.validate();
    DualActiveSet solver(qp, opt);
    return solver.run(warm);
}

double kkt_residual(const QpProblem &input, const QpResult &res)
{
    QpProblem qp = input;
    qp.normalize();
    const Eigen::VectorXd &x = res.x;
    const Eigen::VectorXd Ax = qp.A * x;

    double worst = (qp.H * x + qp.g - qp.A.transpose() * res.row_multipliers - res.bound_multipliers)
                       .lpNorm<Eigen::Infinity>();
    auto check = [&](double val, double lo, double hi, double y) {
        if (std::isfinite(lo))
            worst = std::max(worst, lo - val);
        if (std::isfinite(hi))
            worst = std::max(worst, val - hi);
        if (y > 0.0)
            worst = std::max(worst, std::isfinite(lo) ? std::abs(y * (val - lo)) : y);
        else if (y < 0.0)
            worst = std::max(worst, std::isfinite(hi) ? std::abs(y * (hi - val)) : -y);
    };
    for (int j = 0; j < x.size(); ++j)
        check(x[j], qp.lb[j], qp.ub[j], res.bound_multipliers[j]);
    for (int i = 0; i < Ax.size(); ++i)
        check(Ax[i], qp.lbA[i], qp.ubA[i], res.row_multipliers[i]);
    return worst;
}

} // namespace canal
