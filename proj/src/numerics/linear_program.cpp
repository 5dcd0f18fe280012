#include "gcav/linear_program.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "gcav/errors.h"

namespace gcav {

namespace {

constexpr double kPivotTol = 1e-11;
constexpr double kCostTol = 1e-11;
constexpr int kMaxPivots = 100000;

// Equality-form program: A y = rhs, y >= 0, rhs >= 0.
struct StandardForm {
    Eigen::MatrixXd a;
    Eigen::VectorXd rhs;
    Eigen::VectorXd cost;
    std::vector<int> initial_basis;
    std::size_t structural = 0;  // split decision variables
    std::size_t artificial_begin = 0;
};

StandardForm to_standard_form(const LinearProgram& p) {
    const std::size_t n = p.variable_count;
    const std::size_t structural = p.nonnegative ? n : 2 * n;
    const std::size_t m = p.constraints.size();

    // Normalize signs first so that we know which rows need an artificial.
    struct Row {
        std::vector<double> coeff;
        bool less_equal;
        double rhs;
    };
    std::vector<Row> rows;
    rows.reserve(m);
    for (const auto& c : p.constraints) {
        Row r{std::vector<double>(structural, 0.0), c.relation == Relation::LessEqual, c.bound};
        for (std::size_t j = 0; j < n; ++j) {
            r.coeff[j] = c.coefficients[j];
            if (!p.nonnegative) {
                r.coeff[n + j] = -c.coefficients[j];
            }
        }
        if (r.rhs < 0.0 || (r.rhs == 0.0 && !r.less_equal)) {
            for (double& v : r.coeff) {
                v = -v;
            }
            r.rhs = -r.rhs;
            r.less_equal = !r.less_equal;
        }
        rows.push_back(std::move(r));
    }

    std::size_t artificials = 0;
    for (const auto& r : rows) {
        if (!r.less_equal) {
            ++artificials;
        }
    }
    const std::size_t cols = structural + m + artificials;

    StandardForm sf;
    sf.structural = structural;
    sf.artificial_begin = structural + m;
    sf.a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(cols));
    sf.rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    sf.cost = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cols));
    for (std::size_t j = 0; j < n; ++j) {
        sf.cost(static_cast<Eigen::Index>(j)) = p.objective[j];
        if (!p.nonnegative) {
            sf.cost(static_cast<Eigen::Index>(n + j)) = -p.objective[j];
        }
    }
    std::size_t next_artificial = sf.artificial_begin;
    for (std::size_t i = 0; i < m; ++i) {
        auto ii = static_cast<Eigen::Index>(i);
        for (std::size_t j = 0; j < structural; ++j) {
            sf.a(ii, static_cast<Eigen::Index>(j)) = rows[i].coeff[j];
        }
        sf.rhs(ii) = rows[i].rhs;
        auto slack = static_cast<Eigen::Index>(structural + i);
        if (rows[i].less_equal) {
            sf.a(ii, slack) = 1.0;
            sf.initial_basis.push_back(static_cast<int>(slack));
        } else {
            sf.a(ii, slack) = -1.0;
            auto art = static_cast<Eigen::Index>(next_artificial++);
            sf.a(ii, art) = 1.0;
            sf.initial_basis.push_back(static_cast<int>(art));
        }
    }
    return sf;
}

class Tableau {
public:
    Tableau(const Eigen::MatrixXd& a, const Eigen::VectorXd& rhs, std::vector<int> basis)
        : t_(a.rows(), a.cols() + 1), basis_(std::move(basis)) {
        t_.leftCols(a.cols()) = a;
        t_.col(a.cols()) = rhs;
    }

    Eigen::Index rows() const { return t_.rows(); }
    Eigen::Index cols() const { return t_.cols() - 1; }
    const std::vector<int>& basis() const { return basis_; }
    double rhs(Eigen::Index i) const { return t_(i, cols()); }
    double at(Eigen::Index i, Eigen::Index j) const { return t_(i, j); }

    void pivot(Eigen::Index row, Eigen::Index col) {
        t_.row(row) /= t_(row, col);
        for (Eigen::Index i = 0; i < t_.rows(); ++i) {
            if (i != row) {
                double f = t_(i, col);
                if (f != 0.0) {
                    t_.row(i) -= f * t_.row(row);
                }
            }
        }
        basis_[static_cast<std::size_t>(row)] = static_cast<int>(col);
    }

    void drop_row(Eigen::Index row) {
        Eigen::MatrixXd next(t_.rows() - 1, t_.cols());
        Eigen::Index k = 0;
        for (Eigen::Index i = 0; i < t_.rows(); ++i) {
            if (i != row) {
                next.row(k++) = t_.row(i);
            }
        }
        t_.swap(next);
        basis_.erase(basis_.begin() + row);
    }

    // Reduced costs c_j - c_B B^-1 A_j over the first `active_cols` columns.
    Eigen::VectorXd reduced_costs(const Eigen::VectorXd& cost, Eigen::Index active_cols) const {
        Eigen::VectorXd rc = cost.head(active_cols);
        for (Eigen::Index i = 0; i < t_.rows(); ++i) {
            double cb = cost(basis_[static_cast<std::size_t>(i)]);
            if (cb != 0.0) {
                rc -= cb * t_.row(i).head(active_cols).transpose();
            }
        }
        return rc;
    }

    enum class Outcome { Optimal, Unbounded, IterationLimit };

    // Bland's rule: lowest-index improving column enters; among minimum
    // ratios the lowest-index basic variable leaves.
    Outcome run(const Eigen::VectorXd& cost, Eigen::Index active_cols, int& pivots) {
        while (pivots < kMaxPivots) {
            Eigen::VectorXd rc = reduced_costs(cost, active_cols);
            Eigen::Index entering = -1;
            for (Eigen::Index j = 0; j < active_cols; ++j) {
                if (rc(j) < -kCostTol) {
                    entering = j;
                    break;
                }
            }
            if (entering < 0) {
                return Outcome::Optimal;
            }
            Eigen::Index leaving = -1;
            double best_ratio = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < t_.rows(); ++i) {
                double coef = t_(i, entering);
                if (coef > kPivotTol) {
                    double ratio = rhs(i) / coef;
                    if (ratio < best_ratio - 1e-14 ||
                        (std::abs(ratio - best_ratio) <= 1e-14 && leaving >= 0 &&
                         basis_[static_cast<std::size_t>(i)] <
                             basis_[static_cast<std::size_t>(leaving)])) {
                        best_ratio = ratio;
                        leaving = i;
                    }
                }
            }
            if (leaving < 0) {
                return Outcome::Unbounded;
            }
            pivot(leaving, entering);
            ++pivots;
        }
        return Outcome::IterationLimit;
    }

private:
    Eigen::MatrixXd t_;
    std::vector<int> basis_;
};

}  // namespace

std::string to_string(LpStatus status) {
    switch (status) {
        case LpStatus::Optimal:
            return "optimal";
        case LpStatus::Infeasible:
            return "infeasible";
        case LpStatus::Unbounded:
            return "unbounded";
    }
    return "unknown";
}

void LinearProgram::validate() const {
    if (variable_count == 0) {
        throw DimensionMismatchError("LinearProgram: no variables");
    }
    if (variable_count > kMaxLpVariables) {
        throw DomainError("LinearProgram: at most " + std::to_string(kMaxLpVariables) +
                          " variables supported");
    }
    if (objective.size() != variable_count) {
        throw DimensionMismatchError("LinearProgram: objective length " +
                                     std::to_string(objective.size()) + " != variable count " +
                                     std::to_string(variable_count));
    }
    for (double c : objective) {
        if (!std::isfinite(c)) {
            throw DomainError("LinearProgram: non-finite objective coefficient");
        }
    }
    for (std::size_t i = 0; i < constraints.size(); ++i) {
        const auto& c = constraints[i];
        if (c.coefficients.size() != variable_count) {
            throw DimensionMismatchError("LinearProgram: constraint " + std::to_string(i) +
                                         " has " + std::to_string(c.coefficients.size()) +
                                         " coefficients");
        }
        if (!std::isfinite(c.bound) ||
            !std::all_of(c.coefficients.begin(), c.coefficients.end(),
                         [](double v) { return std::isfinite(v); })) {
            throw DomainError("LinearProgram: non-finite data in constraint " + std::to_string(i));
        }
    }
}

double max_constraint_violation(const LinearProgram& program, std::span<const double> x) {
    double worst = 0.0;
    for (const auto& c : program.constraints) {
        double lhs = 0.0;
        for (std::size_t j = 0; j < program.variable_count; ++j) {
            lhs += c.coefficients[j] * x[j];
        }
        double v = c.relation == Relation::GreaterEqual ? c.bound - lhs : lhs - c.bound;
        worst = std::max(worst, v);
    }
    if (program.nonnegative) {
        for (std::size_t j = 0; j < program.variable_count; ++j) {
            worst = std::max(worst, -x[j]);
        }
    }
    return worst;
}

LpResult solve_lp(const LinearProgram& program) {
    program.validate();
    StandardForm sf = to_standard_form(program);
    const Eigen::Index total_cols = sf.a.cols();
    const auto art_begin = static_cast<Eigen::Index>(sf.artificial_begin);

    LpResult result;
    Tableau tableau(sf.a, sf.rhs, sf.initial_basis);

    if (art_begin < total_cols) {
        Eigen::VectorXd phase1_cost = Eigen::VectorXd::Zero(total_cols);
        phase1_cost.tail(total_cols - art_begin).setOnes();
        tableau.run(phase1_cost, total_cols, result.pivots);
        double infeasibility = 0.0;
        for (Eigen::Index i = 0; i < tableau.rows(); ++i) {
            if (tableau.basis()[static_cast<std::size_t>(i)] >= art_begin) {
                infeasibility += tableau.rhs(i);
            }
        }
        double scale = 1.0 + (sf.rhs.size() > 0 ? sf.rhs.cwiseAbs().maxCoeff() : 0.0);
        if (infeasibility > 1e-9 * scale) {
            result.status = LpStatus::Infeasible;
            return result;
        }
        // Drive zero-level artificials out of the basis; rows where that is
        // impossible are linearly dependent and can be dropped.
        for (Eigen::Index i = tableau.rows() - 1; i >= 0; --i) {
            if (tableau.basis()[static_cast<std::size_t>(i)] < art_begin) {
                continue;
            }
            Eigen::Index replacement = -1;
            for (Eigen::Index j = 0; j < art_begin; ++j) {
                if (std::abs(tableau.at(i, j)) > 1e-9) {
                    replacement = j;
                    break;
                }
            }
            if (replacement >= 0) {
                tableau.pivot(i, replacement);
                ++result.pivots;
            } else {
                tableau.drop_row(i);
            }
        }
    }

    auto outcome = tableau.run(sf.cost, art_begin, result.pivots);
    if (outcome == Tableau::Outcome::Unbounded) {
        result.status = LpStatus::Unbounded;
        return result;
    }
    if (outcome == Tableau::Outcome::IterationLimit) {
        throw DomainError("solve_lp: pivot limit reached");
    }

    // Recover the basic solution from the original system rather than the
    // pivoted tableau to shed accumulated rounding.
    Eigen::VectorXd y = Eigen::VectorXd::Zero(art_begin);
    const auto& basis = tableau.basis();
    const auto m = static_cast<Eigen::Index>(basis.size());
    if (m > 0) {
        // With dropped (redundant) rows the system is overdetermined but consistent.
        Eigen::MatrixXd basis_cols(sf.a.rows(), m);
        for (Eigen::Index k = 0; k < m; ++k) {
            basis_cols.col(k) = sf.a.col(basis[static_cast<std::size_t>(k)]);
        }
        Eigen::VectorXd yb;
        if (sf.a.rows() == m) {
            yb = basis_cols.partialPivLu().solve(sf.rhs);
        } else {
            yb = basis_cols.colPivHouseholderQr().solve(sf.rhs);
        }
        for (Eigen::Index k = 0; k < m; ++k) {
            double v = yb(k);
            if (!std::isfinite(v)) {
                v = tableau.rhs(k);
            }
            y(basis[static_cast<std::size_t>(k)]) = std::max(0.0, v);
        }
    }

    const std::size_t n = program.variable_count;
    result.solution.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double v = y(static_cast<Eigen::Index>(j));
        if (!program.nonnegative) {
            v -= y(static_cast<Eigen::Index>(n + j));
        }
        result.solution[j] = v;
    }
    result.objective_value = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        result.objective_value += program.objective[j] * result.solution[j];
    }
    result.status = LpStatus::Optimal;
    return result;
}

}  // namespace gcav
