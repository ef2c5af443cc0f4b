#pragma once

#include "rsoc/error.hpp"
#include "rsoc/forward.hpp"
#include "rsoc/parallel.hpp"
#include "rsoc/problem.hpp"
#include "rsoc/regression.hpp"
#include "rsoc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rsoc {

struct BackwardOptions {
    int p_deg = 3;
    /// Extra fixed-point sweeps of the driver in y (0 = explicit scheme).
    int picard_iterations = 0;
};

/// Driver of a vector BSDE  -dY = F ds - Z dW  evaluated on path m at step i.
/// y has D entries, z is D x d row-major, out has D entries.
using SystemDriver = std::function<void(std::size_t m, std::size_t i, std::span<const double> y,
                                        std::span<const double> z, std::span<double> out)>;

/// Solution of a vector BSDE on a path batch.
struct BsdeSystemSolution {
    std::size_t paths = 0;
    std::size_t steps = 0;
    std::size_t dim = 0;      // D
    std::size_t noise = 0;    // d
    std::vector<double> Y;    // M x (N+1) x D
    std::vector<double> Z;    // M x N x D x d
    // M x D pathwise values phi(X_N) + sum_i F_i dt. Projections keep sample
    // means, so their average equals the step-0 average of Y.
    std::vector<double> initial_samples;
    std::vector<double> condition;        // per step
    std::vector<std::size_t> basis_size;  // per step

    [[nodiscard]] double y(std::size_t m, std::size_t i, std::size_t r = 0) const noexcept {
        return Y[(m * (steps + 1) + i) * dim + r];
    }
    [[nodiscard]] double z(std::size_t m, std::size_t i, std::size_t r, std::size_t j) const noexcept {
        return Z[((m * steps + i) * dim + r) * noise + j];
    }
};

/// Least-squares Monte Carlo backward recursion:
///   cont_i = E[Y_{i+1} | X_i],
///   Z_i    = E[(Y_{i+1} - cont_i) dW_i | X_i] / dt,
///   Y_i    = cont_i + F(cont_i, Z_i) dt   (then `picard` sweeps Y_i <- cont_i + F(Y_i, Z_i) dt).
/// Conditional expectations are projections onto polynomials of X_i.
inline BsdeSystemSolution solve_bsde_system(const PathBatch& batch, std::size_t dim, std::vector<double> terminal,
                                            const SystemDriver& driver, int p_deg, int picard = 0) {
    const std::size_t M = batch.paths, N = batch.grid.steps(), n = batch.n, d = batch.increments.dim;
    if (terminal.size() != M * dim) {
        throw PreconditionError("terminal values do not match the batch");
    }
    if (picard < 0) {
        throw PreconditionError("Picard iteration count must be nonnegative");
    }
    const double dt = batch.grid.dt();
    BsdeSystemSolution sol{M, N, dim, d, std::vector<double>(M * (N + 1) * dim), std::vector<double>(M * N * dim * d),
                           std::vector<double>(M * dim), std::vector<double>(N), std::vector<std::size_t>(N)};
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t r = 0; r < dim; ++r) sol.Y[(m * (N + 1) + N) * dim + r] = terminal[m * dim + r];
    }
    sol.initial_samples = terminal;

    std::vector<double> x(M * n), next(M), work(M);
    std::vector<double> cont(M * dim);
    for (std::size_t step = N; step-- > 0;) {
        for (std::size_t m = 0; m < M; ++m) {
            const auto xs = batch.state(m, step);
            std::copy(xs.begin(), xs.end(), x.begin() + static_cast<std::ptrdiff_t>(m * n));
        }
        const StepRegressor reg(x, M, n, p_deg, step);
        sol.condition[step] = reg.condition();
        sol.basis_size[step] = reg.basis_size();

        for (std::size_t r = 0; r < dim; ++r) {
            for (std::size_t m = 0; m < M; ++m) next[m] = sol.y(m, step + 1, r);
            const auto c = reg.project(next);
            for (std::size_t m = 0; m < M; ++m) cont[m * dim + r] = c[m];
            for (std::size_t j = 0; j < d; ++j) {
                for (std::size_t m = 0; m < M; ++m) work[m] = (next[m] - c[m]) * batch.increments(m, step, j);
                const auto zj = reg.project(work);
                for (std::size_t m = 0; m < M; ++m) sol.Z[((m * N + step) * dim + r) * d + j] = zj[m] / dt;
            }
        }

        parallel_for(M, [&](std::size_t begin, std::size_t end) {
            std::vector<double> f(dim), y(dim);
            for (std::size_t m = begin; m < end; ++m) {
                const std::span<const double> z(sol.Z.data() + (m * N + step) * dim * d, dim * d);
                const std::span<const double> c(cont.data() + m * dim, dim);
                std::copy(c.begin(), c.end(), y.begin());
                for (int it = 0; it <= picard; ++it) {
                    driver(m, step, y, z, f);
                    for (std::size_t r = 0; r < dim; ++r) y[r] = c[r] + f[r] * dt;
                }
                for (std::size_t r = 0; r < dim; ++r) {
                    if (!std::isfinite(y[r])) {
                        throw NumericalError("non-finite backward value on path " + std::to_string(m) +
                                             " at step " + std::to_string(step));
                    }
                    sol.Y[(m * (N + 1) + step) * dim + r] = y[r];
                    sol.initial_samples[m * dim + r] += f[r] * dt;
                }
            }
        });
    }
    return sol;
}

struct BackwardSolution {
    TimeGrid grid;
    std::size_t paths = 0;
    std::size_t n = 0;
    std::size_t d = 0;
    int p_deg = 3;
    std::vector<double> Y;  // M x (N+1)
    std::vector<double> Z;  // M x N x d
    std::vector<double> condition;        // per step
    std::vector<std::size_t> basis_size;  // per step
    std::vector<double> initial_samples;  // pathwise phi(X_N) + sum_i f_i dt, averaging to Y(t)
    std::string policy_id;
    std::uint64_t seed = 0;

    [[nodiscard]] double y(std::size_t m, std::size_t i) const noexcept { return Y[m * (grid.steps() + 1) + i]; }
    [[nodiscard]] double z(std::size_t m, std::size_t i, std::size_t j) const noexcept {
        return Z[(m * grid.steps() + i) * d + j];
    }
    [[nodiscard]] std::span<const double> z(std::size_t m, std::size_t i) const noexcept {
        return {Z.data() + (m * grid.steps() + i) * d, d};
    }
    /// Y(t): the average of the step-0 values (the time-t conditional
    /// expectation is a constant for a deterministic initial state).
    [[nodiscard]] double initial_value() const noexcept {
        double s = 0.0;
        for (std::size_t m = 0; m < paths; ++m) s += y(m, 0);
        return s / static_cast<double>(paths);
    }
};

inline void require_same_problem(const ProblemSpec& spec, const PathBatch& batch) {
    if (batch.n != spec.n || batch.increments.dim != spec.d) {
        throw PreconditionError("path batch dimensions do not match the problem (n=" + std::to_string(batch.n) +
                                ", d=" + std::to_string(batch.increments.dim) + ")");
    }
}

inline BackwardSolution solve_backward(const ProblemSpec& spec, const ControlPolicy& policy, const PathBatch& batch,
                                       const BackwardOptions& options = {}) {
    spec.validate();
    require_same_problem(spec, batch);
    if (policy.id() != batch.policy_id) {
        throw PreconditionError("batch was simulated under policy '" + batch.policy_id + "', not '" + policy.id() +
                                "'");
    }
    const std::size_t M = batch.paths, N = batch.grid.steps(), k = spec.k;
    std::vector<double> terminal(M);
    for (std::size_t m = 0; m < M; ++m) terminal[m] = spec.terminal(batch.state(m, N));

    const SystemDriver driver = [&](std::size_t m, std::size_t i, std::span<const double> y,
                                    std::span<const double> z, std::span<double> out) {
        const double t = batch.grid.time(i);
        const auto x = batch.state(m, i);
        double small[8];
        Vec large;
        std::span<double> u(small, std::min<std::size_t>(k, 8));
        if (k > 8) {
            large.resize(k);
            u = large;
        }
        policy(spec, t, x, u);
        out[0] = spec.driver(t, x, y[0], z, u);
    };
    auto sys = solve_bsde_system(batch, 1, std::move(terminal), driver, options.p_deg, options.picard_iterations);
    BackwardSolution sol{batch.grid,
                         M,
                         spec.n,
                         spec.d,
                         options.p_deg,
                         std::move(sys.Y),
                         std::move(sys.Z),
                         std::move(sys.condition),
                         std::move(sys.basis_size),
                         std::move(sys.initial_samples),
                         batch.policy_id,
                         batch.seed};
    return sol;
}

inline BackwardSolution solve_backward(const ProblemSpec& spec, const ControlPolicy& policy, const PathBatch& batch,
                                       int p_deg) {
    return solve_backward(spec, policy, batch, BackwardOptions{p_deg, 0});
}

struct CostReport {
    double J = 0.0;
    double standard_error = 0.0;
    std::size_t M = 0;
    std::size_t N = 0;
    std::uint64_t seed = 0;
    std::string policy_id;
};

inline constexpr std::size_t kBootstrapResamples = 200;

/// Bootstrap standard error of the sample mean.
inline double bootstrap_standard_error(std::span<const double> samples, std::uint64_t seed,
                                       std::size_t resamples = kBootstrapResamples) {
    const std::size_t M = samples.size();
    if (M < 2) {
        return 0.0;
    }
    std::vector<double> means(resamples);
    for (std::size_t b = 0; b < resamples; ++b) {
        double s = 0.0;
        for (std::size_t r = 0; r < M; r += 2) {
            const auto [u0, u1] = uniform_pair(seed, Stream::bootstrap, static_cast<std::uint32_t>(b),
                                               static_cast<std::uint32_t>(r / 2), 0);
            s += samples[std::min(M - 1, static_cast<std::size_t>(u0 * static_cast<double>(M)))];
            if (r + 1 < M) s += samples[std::min(M - 1, static_cast<std::size_t>(u1 * static_cast<double>(M)))];
        }
        means[b] = s / static_cast<double>(M);
    }
    double mean = 0.0;
    for (double v : means) mean += v;
    mean /= static_cast<double>(resamples);
    double var = 0.0;
    for (double v : means) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(resamples - 1));
}

/// J(t, x; u) = -Y(t), with a bootstrap standard error over the pathwise
/// samples whose mean is Y(t).
inline CostReport cost(const ProblemSpec& spec, const ControlPolicy& policy, std::span<const double> x,
                       const TimeGrid& grid, std::size_t M, std::uint64_t seed, const BackwardOptions& options = {}) {
    const PathBatch batch = simulate_forward(spec, policy, x, grid, M, seed);
    const BackwardSolution sol = solve_backward(spec, policy, batch, options);
    CostReport r;
    r.J = 0.0 - sol.initial_value();
    r.standard_error = bootstrap_standard_error(sol.initial_samples, seed);
    r.M = M;
    r.N = grid.steps();
    r.seed = seed;
    r.policy_id = policy.id();
    return r;
}

/// Cost at (t, x) on an N-step grid over [t, T]; at t = T it is -phi(x).
inline CostReport cost(const ProblemSpec& spec, const ControlPolicy& policy, double t, std::span<const double> x,
                       std::size_t N, std::size_t M, std::uint64_t seed, const BackwardOptions& options = {}) {
    spec.validate();
    if (t < 0.0 || t > spec.horizon) {
        throw PreconditionError("initial time outside [0, T]");
    }
    if (t == spec.horizon) {
        if (x.size() != spec.n) {
            throw PreconditionError("initial state has the wrong dimension");
        }
        return CostReport{0.0 - spec.terminal(x), 0.0, M, 0, seed, policy.id()};
    }
    return cost(spec, policy, x, TimeGrid(t, spec.horizon, N), M, seed, options);
}

struct EnvelopeEntry {
    Vec x;
    double J = 0.0;
    double standard_error = 0.0;
    std::string policy_id;
};

/// Minimum cost over the candidate policies at each x: an upper bound on
/// the value function. Ties keep the earlier policy.
inline std::vector<EnvelopeEntry> value_envelope(const ProblemSpec& spec, const std::vector<ControlPolicy>& policies,
                                                 double t, const std::vector<Vec>& xs, std::size_t N, std::size_t M,
                                                 std::uint64_t seed, const BackwardOptions& options = {}) {
    if (policies.empty()) {
        throw PreconditionError("value envelope needs at least one policy");
    }
    std::vector<EnvelopeEntry> out;
    for (const Vec& x : xs) {
        EnvelopeEntry best{x, 0.0, 0.0, {}};
        for (std::size_t p = 0; p < policies.size(); ++p) {
            const CostReport r = cost(spec, policies[p], t, x, N, M, seed, options);
            if (p == 0 || r.J < best.J) {
                best.J = r.J;
                best.standard_error = r.standard_error;
                best.policy_id = r.policy_id;
            }
        }
        out.push_back(std::move(best));
    }
    return out;
}

struct BackwardPerturbationReport {
    PerturbationReport y;  // E[sup |Y_hat|^{2k}]
    PerturbationReport z;  // E[(int |Z_hat|^2 dr)^k]
    bool pass = false;
};

/// Paired backward solutions from x_base and x_base + size * e_1 on common
/// random numbers.
inline BackwardPerturbationReport backward_perturbation_probe(const ProblemSpec& spec, const ControlPolicy& policy,
                                                              std::span<const double> x_base,
                                                              std::span<const double> sizes, int k,
                                                              const TimeGrid& grid, std::size_t M, std::uint64_t seed,
                                                              const BackwardOptions& options = {}) {
    forward_detail::validate_sizes(sizes, k);
    const Increments inc = generate_increments(grid, M, spec.d, seed);
    const BackwardSolution base = solve_backward(spec, policy, simulate_forward(spec, policy, x_base, grid, inc), options);
    BackwardPerturbationReport report;
    for (PerturbationReport* r : {&report.y, &report.z}) {
        r->moment_order = 2 * k;
        r->sizes.assign(sizes.begin(), sizes.end());
        r->seed = seed;
    }
    const std::size_t N = grid.steps(), d = spec.d;
    const double dt = grid.dt();
    for (double size : sizes) {
        Vec x1(x_base.begin(), x_base.end());
        x1[0] += size;
        const BackwardSolution pert = solve_backward(spec, policy, simulate_forward(spec, policy, x1, grid, inc), options);
        double acc_y = 0.0, acc_z = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            double sup = 0.0, integral = 0.0;
            for (std::size_t i = 0; i <= N; ++i) {
                sup = std::max(sup, std::abs(pert.y(m, i) - base.y(m, i)));
                if (i < N) {
                    for (std::size_t j = 0; j < d; ++j) {
                        const double e = pert.z(m, i, j) - base.z(m, i, j);
                        integral += e * e * dt;
                    }
                }
            }
            acc_y += std::pow(sup, 2 * k);
            acc_z += std::pow(integral, k);
        }
        report.y.moments.push_back(acc_y / static_cast<double>(M));
        report.z.moments.push_back(acc_z / static_cast<double>(M));
    }
    forward_detail::finish_report(report.y);
    forward_detail::finish_report(report.z);
    report.pass = report.y.pass && report.z.pass;
    return report;
}

}  // namespace rsoc
