#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gcav {

enum class Relation { GreaterEqual, LessEqual };

struct LinearConstraint {
    std::vector<double> coefficients;
    Relation relation = Relation::GreaterEqual;
    double bound = 0.0;
};

// minimize objective . x subject to every constraint. Variables are free
// reals unless `nonnegative` is set.
struct LinearProgram {
    std::vector<double> objective;
    std::vector<LinearConstraint> constraints;
    std::size_t variable_count = 0;
    bool nonnegative = false;

    // Throws DimensionMismatchError / DomainError on malformed programs.
    void validate() const;
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

std::string to_string(LpStatus status);

struct LpResult {
    LpStatus status = LpStatus::Infeasible;
    // Empty unless status is Optimal.
    std::vector<double> solution;
    double objective_value = 0.0;
    int pivots = 0;
};

inline constexpr std::size_t kMaxLpVariables = 64;

// Two-phase dense tableau simplex with Bland's anti-cycling rule. Free
// variables are split as x = x+ - x-. The optimal basis is re-solved against
// the original system with an LU factorization before the point is returned.
LpResult solve_lp(const LinearProgram& program);

// Largest amount by which x violates any constraint (0 when feasible).
double max_constraint_violation(const LinearProgram& program, std::span<const double> x);

}  // namespace gcav
