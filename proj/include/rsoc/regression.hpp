#pragma once

#include "rsoc/error.hpp"
#include "rsoc/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace rsoc {

/// Rows above this condition estimate are treated as rank deficient.
inline constexpr double kMaxRegressionCondition = 1e10;

/// Multi-indices of total degree <= degree over `dims` variables, in
/// graded order (constant first).
inline std::vector<std::vector<int>> monomial_exponents(std::size_t dims, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> current(dims, 0);
    for (int total = 0; total <= degree; ++total) {
        // Enumerate compositions of `total` into `dims` parts.
        auto rec = [&](auto&& self, std::size_t pos, int remaining) -> void {
            if (pos + 1 >= dims) {
                if (dims > 0) current[pos] = remaining;
                if (dims > 0 || remaining == 0) out.push_back(current);
                return;
            }
            for (int e = remaining; e >= 0; --e) {
                current[pos] = e;
                self(self, pos + 1, remaining - e);
            }
        };
        rec(rec, 0, total);
    }
    return out;
}

/// Least-squares projection onto polynomials of the state at one time step.
///
/// Components are standardized; components with (numerically) zero spread
/// are dropped, so a deterministic state yields the constant basis and the
/// projection reduces to the sample mean. A ridge term 1e-8 * trace on the
/// non-constant coefficients keeps the normal equations positive definite.
class StepRegressor {
public:
    /// `states` is M x n row-major.
    StepRegressor(std::span<const double> states, std::size_t paths, std::size_t n, int degree, std::size_t step)
        : paths_(paths), step_(step) {
        if (degree < 0) {
            throw PreconditionError("polynomial degree must be nonnegative");
        }
        if (paths == 0 || states.size() != paths * n) {
            throw PreconditionError("regression design does not match the path count");
        }
        std::vector<std::size_t> active;
        std::vector<double> mean(n, 0.0), scale(n, 1.0);
        for (std::size_t l = 0; l < n; ++l) {
            double s = 0.0;
            for (std::size_t m = 0; m < paths; ++m) s += states[m * n + l];
            mean[l] = s / static_cast<double>(paths);
            double v = 0.0;
            for (std::size_t m = 0; m < paths; ++m) {
                const double e = states[m * n + l] - mean[l];
                v += e * e;
            }
            const double sd = std::sqrt(v / static_cast<double>(paths));
            if (sd > 1e-12 * std::max(1.0, std::abs(mean[l]))) {
                active.push_back(l);
                scale[l] = sd;
            }
        }
        const auto exps = monomial_exponents(active.size(), degree);
        basis_size_ = exps.size();
        if (paths < 2 * basis_size_) {
            throw PreconditionError("step " + std::to_string(step) + ": " + std::to_string(paths) +
                                    " paths are too few for a basis of size " + std::to_string(basis_size_));
        }

        design_.resize(static_cast<Eigen::Index>(paths), static_cast<Eigen::Index>(basis_size_));
        parallel_for(paths, [&](std::size_t begin, std::size_t end) {
            std::vector<double> xi(active.size());
            for (std::size_t m = begin; m < end; ++m) {
                for (std::size_t a = 0; a < active.size(); ++a) {
                    const std::size_t l = active[a];
                    xi[a] = (states[m * n + l] - mean[l]) / scale[l];
                }
                for (std::size_t b = 0; b < basis_size_; ++b) {
                    double v = 1.0;
                    for (std::size_t a = 0; a < active.size(); ++a) {
                        for (int e = 0; e < exps[b][a]; ++e) v *= xi[a];
                    }
                    design_(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(b)) = v;
                }
            }
        });

        const Eigen::MatrixXd gram = design_.transpose() * design_;
        if (basis_size_ == 1) {
            condition_ = 1.0;
        } else {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
            const double lo = eig.eigenvalues().minCoeff();
            const double hi = eig.eigenvalues().maxCoeff();
            condition_ = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
        }
        if (!(condition_ <= kMaxRegressionCondition)) {
            throw NumericalError("rank-deficient regression at step " + std::to_string(step) +
                                 " (condition estimate " + std::to_string(condition_) + ")");
        }
        // The intercept is not penalized, so residuals keep an exact zero mean.
        Eigen::MatrixXd reg = gram;
        const double ridge = 1e-8 * gram.trace();
        reg.diagonal().tail(reg.rows() - 1).array() += ridge;
        solver_.compute(reg);
        if (solver_.info() != Eigen::Success) {
            throw NumericalError("regression factorization failed at step " + std::to_string(step));
        }
    }

    [[nodiscard]] std::size_t basis_size() const noexcept { return basis_size_; }
    [[nodiscard]] double condition() const noexcept { return condition_; }

    /// Fitted values of the projection of `target` (length M).
    [[nodiscard]] std::vector<double> project(std::span<const double> target) const {
        if (target.size() != paths_) {
            throw PreconditionError("regression target does not match the path count");
        }
        const Eigen::Map<const Eigen::VectorXd> rhs(target.data(), static_cast<Eigen::Index>(paths_));
        const Eigen::VectorXd beta = solver_.solve(design_.transpose() * rhs);
        const Eigen::VectorXd fitted = design_ * beta;
        for (Eigen::Index m = 0; m < fitted.size(); ++m) {
            if (!std::isfinite(fitted(m))) {
                throw NumericalError("non-finite regression output at step " + std::to_string(step_));
            }
        }
        return {fitted.data(), fitted.data() + fitted.size()};
    }

private:
    std::size_t paths_;
    std::size_t step_;
    std::size_t basis_size_ = 0;
    double condition_ = 1.0;
    Eigen::MatrixXd design_;
    Eigen::LDLT<Eigen::MatrixXd> solver_;
};

}  // namespace rsoc
