#pragma once

#include "rsoc/backward.hpp"
#include "rsoc/error.hpp"
#include "rsoc/forward.hpp"
#include "rsoc/parallel.hpp"
#include "rsoc/problem.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rsoc {

/// Forward multiplier q with a positivity summary.
struct QSolution {
    std::size_t paths = 0;
    std::size_t steps = 0;
    std::vector<double> q;  // M x (N+1)
    double min_value = 1.0;
    std::size_t nonpositive = 0;  // number of (m, i) with q <= 0

    [[nodiscard]] double operator()(std::size_t m, std::size_t i) const noexcept { return q[m * (steps + 1) + i]; }
    [[nodiscard]] bool positive() const noexcept { return nonpositive == 0; }
};

struct AdjointTriple {
    TimeGrid grid;
    std::size_t paths = 0;
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> p;  // M x (N+1) x n
    std::vector<double> q;  // M x (N+1)
    std::vector<double> k;  // M x N x (n x d), row-major n x d
    std::string problem;
    std::string policy_id;
    std::uint64_t seed = 0;

    [[nodiscard]] double p_at(std::size_t m, std::size_t i, std::size_t l = 0) const noexcept {
        return p[(m * (grid.steps() + 1) + i) * n + l];
    }
    [[nodiscard]] std::span<const double> p_at_node(std::size_t m, std::size_t i) const noexcept {
        return {p.data() + (m * (grid.steps() + 1) + i) * n, n};
    }
    [[nodiscard]] double q_at(std::size_t m, std::size_t i) const noexcept { return q[m * (grid.steps() + 1) + i]; }
    [[nodiscard]] double k_at(std::size_t m, std::size_t i, std::size_t r, std::size_t j) const noexcept {
        return k[((m * grid.steps() + i) * n + r) * d + j];
    }
    [[nodiscard]] std::span<const double> k_at_node(std::size_t m, std::size_t i) const noexcept {
        return {k.data() + (m * grid.steps() + i) * n * d, n * d};
    }
};

namespace adjoint_detail {

inline void require_pair(const ProblemSpec& spec, const ControlPolicy& policy, const PathBatch& batch,
                         const BackwardSolution& bw) {
    require_same_problem(spec, batch);
    if (policy.id() != batch.policy_id || bw.policy_id != batch.policy_id) {
        throw PreconditionError("batch, backward solution and policy do not belong together");
    }
    if (!(bw.grid == batch.grid) || bw.paths != batch.paths) {
        throw PreconditionError("backward solution was computed on a different batch");
    }
}

}  // namespace adjoint_detail

/// dq = f_y q ds + f_z^T q dW, q(t) = 1, by Euler-Maruyama on the batch's
/// own increments, with (f_y, f_z) taken along (X, Y, Z, u).
inline QSolution solve_q(const ProblemSpec& spec, const ControlPolicy& policy, const PathBatch& batch,
                         const BackwardSolution& bw) {
    adjoint_detail::require_pair(spec, policy, batch, bw);
    const std::size_t M = batch.paths, N = batch.grid.steps(), d = spec.d;
    const double dt = batch.grid.dt();
    QSolution out{M, N, std::vector<double>(M * (N + 1)), 1.0, 0};
    parallel_for(M, [&](std::size_t begin, std::size_t end) {
        Vec u(spec.k), fz(d);
        for (std::size_t m = begin; m < end; ++m) {
            double q = 1.0;
            out.q[m * (N + 1)] = q;
            for (std::size_t i = 0; i < N; ++i) {
                const double t = batch.grid.time(i);
                const auto x = batch.state(m, i);
                policy(spec, t, x, u);
                const double fy = driver_y(spec, t, x, bw.y(m, i), bw.z(m, i), u);
                driver_z(spec, t, x, bw.y(m, i), bw.z(m, i), u, fz);
                double noise = 0.0;
                for (std::size_t j = 0; j < d; ++j) noise += fz[j] * batch.increments(m, i, j);
                q += q * (fy * dt + noise);
                if (!std::isfinite(q)) {
                    throw NumericalError("non-finite q on path " + std::to_string(m) + " at step " +
                                         std::to_string(i + 1));
                }
                out.q[m * (N + 1) + i + 1] = q;
            }
        }
    });
    for (double v : out.q) {
        out.min_value = std::min(out.min_value, v);
        if (v <= 0.0) ++out.nonpositive;
    }
    return out;
}

/// Linear BSDE for (p, k):
///   -dp = [b_x^T p - f_x q + sum_j (sigma^j_x)^T k^j] ds - k dW,  p(T) = -phi_x(X_N) q_N,
/// solved with the same regression recursion as the value BSDE.
inline AdjointTriple solve_pk(const ProblemSpec& spec, const ControlPolicy& policy, const PathBatch& batch,
                              const BackwardSolution& bw, const QSolution& q, const BackwardOptions& options = {}) {
    adjoint_detail::require_pair(spec, policy, batch, bw);
    const std::size_t M = batch.paths, N = batch.grid.steps(), n = spec.n, d = spec.d, k = spec.k;
    if (q.paths != M || q.steps != N) {
        throw PreconditionError("q was solved on a different batch");
    }
    std::vector<double> terminal(M * n);
    {
        Vec g(n);
        for (std::size_t m = 0; m < M; ++m) {
            terminal_x(spec, batch.state(m, N), g);
            for (std::size_t l = 0; l < n; ++l) terminal[m * n + l] = -g[l] * q(m, N);
        }
    }
    const SystemDriver driver = [&](std::size_t m, std::size_t i, std::span<const double> p,
                                    std::span<const double> kk, std::span<double> out) {
        const double t = batch.grid.time(i);
        const auto x = batch.state(m, i);
        Vec u(k), bx(n * n), sx(n * d * n), fx(n);
        policy(spec, t, x, u);
        drift_x(spec, t, x, u, bx);
        diffusion_x(spec, t, x, u, sx);
        driver_x(spec, t, x, bw.y(m, i), bw.z(m, i), u, fx);
        const double qi = q(m, i);
        for (std::size_t l = 0; l < n; ++l) {
            double v = -fx[l] * qi;
            for (std::size_t r = 0; r < n; ++r) v += bx[r * n + l] * p[r];
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t j = 0; j < d; ++j) v += sx[(r * d + j) * n + l] * kk[r * d + j];
            }
            out[l] = v;
        }
    };
    auto sys = solve_bsde_system(batch, n, std::move(terminal), driver, options.p_deg, options.picard_iterations);
    return AdjointTriple{batch.grid, M, n, d, std::move(sys.Y), q.q, std::move(sys.Z),
                         spec.name, batch.policy_id, batch.seed};
}

/// q then (p, k) on one batch.
inline AdjointTriple solve_adjoint(const ProblemSpec& spec, const ControlPolicy& policy, const PathBatch& batch,
                                   const BackwardSolution& bw, const BackwardOptions& options = {}) {
    const QSolution q = solve_q(spec, policy, batch, bw);
    if (!q.positive()) {
        throw NumericalError("q lost positivity (" + std::to_string(q.nonpositive) + " nonpositive values)");
    }
    return solve_pk(spec, policy, batch, bw, q, options);
}

/// H = <p, b> - q f + tr(sigma^T k).
inline double hamiltonian(const ProblemSpec& spec, double t, std::span<const double> x, double y,
                          std::span<const double> z, std::span<const double> u, std::span<const double> p, double q,
                          std::span<const double> k) {
    detail::require_control(spec, u);
    const std::size_t n = spec.n, d = spec.d;
    Vec b(n), sig(n * d);
    spec.drift(t, x, u, b);
    spec.diffusion(t, x, u, sig);
    double h = -q * spec.driver(t, x, y, z, u);
    for (std::size_t i = 0; i < n; ++i) h += p[i] * b[i];
    for (std::size_t e = 0; e < n * d; ++e) h += sig[e] * k[e];
    return h;
}

/// Gradient of H in u: analytic when b_u, sigma_u and f_u are all supplied,
/// otherwise central differences (one-sided at box faces, zero on
/// degenerate axes).
inline void hamiltonian_u(const ProblemSpec& spec, double t, std::span<const double> x, double y,
                          std::span<const double> z, std::span<const double> u, std::span<const double> p, double q,
                          std::span<const double> k, std::span<double> out) {
    const std::size_t n = spec.n, d = spec.d, kk = spec.k;
    const auto& g = spec.gradients;
    if (g.drift_u && g.diffusion_u && g.driver_u) {
        Vec bu(n * kk), su(n * d * kk), fu(kk);
        g.drift_u(t, x, u, bu);
        g.diffusion_u(t, x, u, su);
        g.driver_u(t, x, y, z, u, fu);
        for (std::size_t l = 0; l < kk; ++l) {
            double v = -q * fu[l];
            for (std::size_t i = 0; i < n; ++i) v += bu[i * kk + l] * p[i];
            for (std::size_t e = 0; e < n * d; ++e) v += su[e * kk + l] * k[e];
            out[l] = v;
        }
        return;
    }
    detail::require_fd(spec, "H_u");
    Vec up(u.begin(), u.end()), um(u.begin(), u.end());
    for (std::size_t l = 0; l < kk; ++l) {
        const double lo = spec.control.lo[l], hi = spec.control.hi[l];
        if (lo == hi) {
            out[l] = 0.0;
            continue;
        }
        const double h = std::min(detail::fd_step(u[l]), 0.5 * (hi - lo));
        double a = u[l] - h, b = u[l] + h;
        if (b > hi) {
            a = u[l] - h;
            b = u[l];
        } else if (a < lo) {
            a = u[l];
            b = u[l] + h;
        }
        up[l] = b;
        um[l] = a;
        out[l] = (hamiltonian(spec, t, x, y, z, up, p, q, k) - hamiltonian(spec, t, x, y, z, um, p, q, k)) / (b - a);
        up[l] = um[l] = u[l];
    }
}

struct MaxConditionReport {
    std::vector<double> times;            // t_i, i < N
    std::vector<double> residual;         // r_i = min over the control grid of mean <H_u, u - u_bar>, capped at 0
    std::vector<double> standard_error;   // of the path mean at the minimizing grid point
    double global_min = 0.0;
    std::size_t worst_step = 0;
    double tol_mc = 1e-2;
    std::size_t grid_points = 0;
    bool pass = true;
};

/// Checks <H_u, u - u_bar> >= 0 on a uniform control grid. A step passes
/// when r_i >= -(tol_mc + 3 se_i); the ū candidate itself contributes 0, so
/// r_i <= 0 always.
inline MaxConditionReport check_maximum_condition(const ProblemSpec& spec, const ControlPolicy& policy,
                                                  const PathBatch& batch, const BackwardSolution& bw,
                                                  const AdjointTriple& triple, std::size_t grid_size,
                                                  double tol_mc = 1e-2) {
    adjoint_detail::require_pair(spec, policy, batch, bw);
    if (triple.paths != batch.paths || !(triple.grid == batch.grid)) {
        throw PreconditionError("adjoint triple was solved on a different batch");
    }
    if (!(tol_mc >= 0.0)) {
        throw PreconditionError("tol_mc must be nonnegative");
    }
    const auto grid = spec.control.grid(grid_size);
    const std::size_t M = batch.paths, N = batch.grid.steps(), k = spec.k, G = grid.size();
    MaxConditionReport report;
    report.tol_mc = tol_mc;
    report.grid_points = G;
    report.times.resize(N);
    report.residual.assign(N, 0.0);
    report.standard_error.assign(N, 0.0);

    // sums[i][g] and squares for the path means.
    std::vector<double> sums(N * G, 0.0), squares(N * G, 0.0);
    std::vector<double> values(M * G);
    for (std::size_t i = 0; i < N; ++i) {
        const double t = batch.grid.time(i);
        report.times[i] = t;
        parallel_for(M, [&](std::size_t begin, std::size_t end) {
            Vec u(k), hu(k);
            for (std::size_t m = begin; m < end; ++m) {
                const auto x = batch.state(m, i);
                policy(spec, t, x, u);
                hamiltonian_u(spec, t, x, bw.y(m, i), bw.z(m, i), u, triple.p_at_node(m, i), triple.q_at(m, i),
                              triple.k_at_node(m, i), hu);
                for (std::size_t g = 0; g < G; ++g) {
                    double v = 0.0;
                    for (std::size_t l = 0; l < k; ++l) v += hu[l] * (grid[g][l] - u[l]);
                    values[m * G + g] = v;
                }
            }
        });
        for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t g = 0; g < G; ++g) {
                sums[i * G + g] += values[m * G + g];
                squares[i * G + g] += values[m * G + g] * values[m * G + g];
            }
        }
        for (std::size_t g = 0; g < G; ++g) {
            const double mean = sums[i * G + g] / static_cast<double>(M);
            if (mean < report.residual[i]) {
                report.residual[i] = mean;
                const double var = std::max(0.0, squares[i * G + g] / static_cast<double>(M) - mean * mean);
                report.standard_error[i] = std::sqrt(var / static_cast<double>(M));
            }
        }
        if (report.residual[i] < -(tol_mc + 3.0 * report.standard_error[i])) {
            report.pass = false;
        }
        if (report.residual[i] < report.global_min) {
            report.global_min = report.residual[i];
            report.worst_step = i;
        }
    }
    return report;
}

}  // namespace rsoc
