#pragma once

#include "rsoc/error.hpp"
#include "rsoc/forward.hpp"
#include "rsoc/parallel.hpp"
#include "rsoc/problem.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rsoc {

/// G(t, x, r, p, A, u) = 1/2 tr(sigma^T A sigma) + <p, b> + f(t, x, r, sigma^T p, u).
/// A is n x n row-major and must be symmetric.
inline double generalized_hamiltonian(const ProblemSpec& spec, double t, std::span<const double> x, double r,
                                      std::span<const double> p, std::span<const double> A,
                                      std::span<const double> u) {
    const std::size_t n = spec.n;
    const std::size_t d = spec.d;
    if (p.size() != n || A.size() != n * n) {
        throw PreconditionError("generalized_hamiltonian: p must have n entries and A n*n");
    }
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            if (A[a * n + b] != A[b * n + a]) {
                throw PreconditionError("generalized_hamiltonian: A is not symmetric");
            }
        }
    }
    const auto c = eval_coefficients(spec, t, x, u);
    double trace = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = 0; b < n; ++b) {
                trace += c.diffusion[a * d + j] * A[a * n + b] * c.diffusion[b * d + j];
            }
        }
    }
    double pb = 0.0;
    Vec z(d, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
        pb += p[a] * c.drift[a];
        for (std::size_t j = 0; j < d; ++j) {
            z[j] += c.diffusion[a * d + j] * p[a];
        }
    }
    return 0.5 * trace + pb + spec.driver(t, x, r, z, u);
}

/// Solved grid of v on [-L, L] x TimeGrid. Long sweeps keep every
/// `stride`-th time level (plus the terminal one); values between kept
/// levels are interpolated linearly in time.
struct ValueGrid {
    double L = 0.0;
    std::size_t J = 0;
    double dx = 0.0;
    TimeGrid grid{0.0, 1.0, 1};
    std::string boundary_rule = "linear-extrapolation";
    std::size_t control_grid_size = 0;
    double cfl_ratio = 0.0;
    std::vector<std::size_t> slice_steps;
    std::vector<double> values;  // slice_steps.size() x (J + 1)

    /// Grid holding every time level of `grid`; `all_values` is (N+1) x (J+1).
    static ValueGrid from_slices(double L, std::size_t J, const TimeGrid& grid, std::vector<double> all_values) {
        if (!(L > 0.0) || J < 2) {
            throw PreconditionError("value grid needs L > 0 and J >= 2");
        }
        if (all_values.size() != (grid.steps() + 1) * (J + 1)) {
            throw PreconditionError("value grid: expected (N+1)*(J+1) values");
        }
        ValueGrid g;
        g.L = L;
        g.J = J;
        g.dx = 2.0 * L / static_cast<double>(J);
        g.grid = grid;
        g.slice_steps.resize(grid.steps() + 1);
        for (std::size_t i = 0; i <= grid.steps(); ++i) g.slice_steps[i] = i;
        g.values = std::move(all_values);
        return g;
    }

    [[nodiscard]] double x(std::size_t j) const noexcept {
        return j == J ? L : -L + static_cast<double>(j) * dx;
    }
    [[nodiscard]] std::size_t slices() const noexcept { return slice_steps.size(); }
    [[nodiscard]] double slice_time(std::size_t s) const { return grid.time(slice_steps.at(s)); }
    [[nodiscard]] double at(std::size_t s, std::size_t j) const { return values[s * (J + 1) + j]; }
    [[nodiscard]] std::span<const double> slice(std::size_t s) const {
        return {values.data() + s * (J + 1), J + 1};
    }
    [[nodiscard]] std::span<const double> terminal_slice() const { return slice(slices() - 1); }

    /// Stored slice nearest to t.
    [[nodiscard]] std::size_t nearest_slice(double t) const {
        require_time(t);
        std::size_t best = 0;
        for (std::size_t s = 1; s < slices(); ++s) {
            if (std::abs(slice_time(s) - t) < std::abs(slice_time(best) - t)) best = s;
        }
        return best;
    }

    [[nodiscard]] std::size_t nearest_node(double xv) const {
        require_x(xv);
        return std::min(J, static_cast<std::size_t>(std::llround((xv + L) / dx)));
    }

    /// Time-s profile, linear in time between stored slices.
    [[nodiscard]] Vec slice_at(double t) const {
        require_time(t);
        std::size_t hi = 1;
        while (hi + 1 < slices() && slice_time(hi) < t) ++hi;
        if (slices() == 1) return Vec(slice(0).begin(), slice(0).end());
        const std::size_t lo = hi - 1;
        const double t0 = slice_time(lo);
        const double t1 = slice_time(hi);
        const double w = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
        Vec out(J + 1);
        for (std::size_t j = 0; j <= J; ++j) out[j] = (1.0 - w) * at(lo, j) + w * at(hi, j);
        if (w == 0.0) return Vec(slice(lo).begin(), slice(lo).end());
        if (w == 1.0) return Vec(slice(hi).begin(), slice(hi).end());
        return out;
    }

    /// Linear interpolation of a profile at xv.
    [[nodiscard]] double interpolate(std::span<const double> profile, double xv) const {
        require_x(xv);
        const double pos = (xv + L) / dx;
        const std::size_t j = std::min(J - 1, static_cast<std::size_t>(std::floor(pos)));
        const double w = pos - static_cast<double>(j);
        if (w == 0.0) return profile[j];
        return (1.0 - w) * profile[j] + w * profile[j + 1];
    }

    [[nodiscard]] double value(double t, double xv) const { return interpolate(slice_at(t), xv); }

    void require_time(double t) const {
        if (!(t >= grid.start() - 1e-12 && t <= grid.end() + 1e-12)) {
            throw PreconditionError("time " + std::to_string(t) + " outside the value grid");
        }
    }
    void require_x(double xv) const {
        if (!(xv >= -L - 1e-12 && xv <= L + 1e-12)) {
            throw PreconditionError("state " + std::to_string(xv) + " outside the value grid [-L, L]");
        }
    }
};

/// Monotonicity bound for the explicit upwind sweep.
struct CflBound {
    double dt_max = std::numeric_limits<double>::infinity();
    double sigma2 = 0.0;   // max |sigma|^2
    double drift = 0.0;    // max |b| + |sigma . f_z|
    double driver_y = 0.0; // max |f_y|
};

/// Pre-scan over grid nodes, the control grid and 11 times in [t0, T].
/// Driver derivatives are sampled at r = -phi(x), z = 0.
inline CflBound cfl_bound(const ProblemSpec& spec, double L, std::size_t J, double t0,
                          std::size_t control_grid_size) {
    spec.validate();
    if (spec.n != 1) {
        throw PreconditionError("the finite-difference solver is one-dimensional; problem has n = " +
                                std::to_string(spec.n));
    }
    if (!(L > 0.0) || !std::isfinite(L)) throw PreconditionError("L must be positive");
    if (J < 4) throw PreconditionError("J must be at least 4");
    const auto controls = spec.control.grid(control_grid_size);
    const double dx = 2.0 * L / static_cast<double>(J);
    const std::size_t d = spec.d;
    CflBound c;
    double worst = 0.0;
    Vec xv(1), b(1), sig(d), z(d, 0.0), fz(d);
    for (int ti = 0; ti <= 10; ++ti) {
        const double t = ti == 10 ? spec.horizon : t0 + (spec.horizon - t0) * ti / 10.0;
        for (std::size_t j = 0; j <= J; ++j) {
            xv[0] = j == J ? L : -L + static_cast<double>(j) * dx;
            const double r = -spec.terminal(xv);
            for (const Vec& u : controls) {
                spec.drift(t, xv, u, b);
                spec.diffusion(t, xv, u, sig);
                driver_z(spec, t, xv, r, z, u, fz);
                const double fy = std::abs(driver_y(spec, t, xv, r, z, u));
                double s2 = 0.0, sfz = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    s2 += sig[k] * sig[k];
                    sfz += std::abs(sig[k] * fz[k]);
                }
                const double adv = std::abs(b[0]) + sfz;
                c.sigma2 = std::max(c.sigma2, s2);
                c.drift = std::max(c.drift, adv);
                c.driver_y = std::max(c.driver_y, fy);
                worst = std::max(worst, s2 + dx * adv + dx * dx * fy);
            }
        }
    }
    if (worst > 0.0) c.dt_max = dx * dx / worst;
    return c;
}

/// Smallest number of steps on [t0, T] that satisfies the monotonicity bound.
inline std::size_t cfl_steps(const ProblemSpec& spec, double L, std::size_t J, double t0,
                             std::size_t control_grid_size) {
    const auto c = cfl_bound(spec, L, J, t0, control_grid_size);
    if (!std::isfinite(c.dt_max)) return 1;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((spec.horizon - t0) / c.dt_max - 1e-9)));
}

/// One explicit step from level t_next to t_next - dt on nodes x_j = -L + j dx:
/// v_now_j = v_next_j - dt sup_u G(t_next, x_j, -v_j, -D v, -D2 v, u), upwinded by
/// the sign of b + sigma . f_z, then linear extrapolation at j = 0 and j = J.
inline void hjb_step(const ProblemSpec& spec, double t_next, double dt, double L, double dx,
                     std::span<const double> v_next, const std::vector<Vec>& controls, std::span<double> v_now) {
    const std::size_t J = v_next.size() - 1;
    const std::size_t d = spec.d;
    parallel_for(J - 1, [&](std::size_t begin, std::size_t end) {
        Vec xv(1), b(1), sig(d), z(d), fz(d);
        for (std::size_t idx = begin; idx < end; ++idx) {
            const std::size_t j = idx + 1;
            xv[0] = -L + static_cast<double>(j) * dx;
            const double vj = v_next[j];
            const double fwd = (v_next[j + 1] - vj) / dx;
            const double bwd = (vj - v_next[j - 1]) / dx;
            const double cen = 0.5 * (fwd + bwd);
            const double second = (v_next[j + 1] - 2.0 * vj + v_next[j - 1]) / (dx * dx);
            double best = -std::numeric_limits<double>::infinity();
            for (const Vec& u : controls) {
                spec.drift(t_next, xv, u, b);
                spec.diffusion(t_next, xv, u, sig);
                double s2 = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    s2 += sig[k] * sig[k];
                    z[k] = -sig[k] * cen;
                }
                driver_z(spec, t_next, xv, -vj, z, u, fz);
                double beta = b[0];
                for (std::size_t k = 0; k < d; ++k) beta += sig[k] * fz[k];
                const double p = -(beta >= 0.0 ? fwd : bwd);
                for (std::size_t k = 0; k < d; ++k) z[k] = sig[k] * p;
                const double g = -0.5 * s2 * second + p * b[0] + spec.driver(t_next, xv, -vj, z, u);
                best = std::max(best, g);
            }
            v_now[j] = vj - dt * best;
        }
    });
    v_now[0] = 2.0 * v_now[1] - v_now[2];
    v_now[J] = 2.0 * v_now[J - 1] - v_now[J - 2];
}

inline constexpr std::size_t kDefaultMaxSlices = 1025;

inline ValueGrid solve_hjb_fd(const ProblemSpec& spec, double L, std::size_t J, const TimeGrid& grid,
                              std::size_t control_grid_size, std::size_t max_slices = kDefaultMaxSlices) {
    if (grid.end() != spec.horizon) throw PreconditionError("solve_hjb_fd: time grid must end at T");
    if (max_slices < 2) throw PreconditionError("solve_hjb_fd: max_slices must be at least 2");
    const CflBound bound = cfl_bound(spec, L, J, grid.start(), control_grid_size);
    const auto controls = spec.control.grid(control_grid_size);
    const double dt = grid.dt();
    if (dt > bound.dt_max * (1.0 + 1e-12)) {
        const auto need = static_cast<std::size_t>(std::ceil((grid.end() - grid.start()) / bound.dt_max - 1e-9));
        char msg[256];
        std::snprintf(msg, sizeof msg,
                      "CFL violation: dt = %.6g exceeds the monotonicity bound %.6g; use dt <= %.6g (N >= %zu)", dt,
                      bound.dt_max, bound.dt_max, need);
        throw NumericalError(msg);
    }

    const std::size_t N = grid.steps();
    const std::size_t stride = (N + max_slices - 2) / (max_slices - 1);
    ValueGrid out;
    out.L = L;
    out.J = J;
    out.dx = 2.0 * L / static_cast<double>(J);
    out.grid = grid;
    out.control_grid_size = control_grid_size;
    out.cfl_ratio = std::isfinite(bound.dt_max) ? dt / bound.dt_max : 0.0;
    for (std::size_t i = 0; i < N; i += stride) out.slice_steps.push_back(i);
    out.slice_steps.push_back(N);
    const std::size_t S = out.slice_steps.size();
    out.values.assign(S * (J + 1), 0.0);

    Vec next(J + 1), now(J + 1), xv(1);
    for (std::size_t j = 0; j <= J; ++j) {
        xv[0] = out.x(j);
        next[j] = -spec.terminal(xv);
    }
    std::copy(next.begin(), next.end(), out.values.begin() + static_cast<std::ptrdiff_t>((S - 1) * (J + 1)));
    std::size_t s = S - 1;
    for (std::size_t i = N; i-- > 0;) {
        hjb_step(spec, grid.time(i + 1), dt, L, out.dx, next, controls, now);
        for (std::size_t j = 0; j <= J; ++j) {
            if (!std::isfinite(now[j])) {
                throw NumericalError("non-finite value at step " + std::to_string(i) + ", node " + std::to_string(j));
            }
        }
        std::swap(next, now);
        if (s > 0 && out.slice_steps[s - 1] == i) {
            --s;
            std::copy(next.begin(), next.end(), out.values.begin() + static_cast<std::ptrdiff_t>(s * (J + 1)));
        }
    }
    return out;
}

/// CFL-coupled run on [t0, T].
inline ValueGrid solve_hjb_fd(const ProblemSpec& spec, double L, std::size_t J, std::size_t control_grid_size,
                              double t0 = 0.0) {
    const std::size_t N = cfl_steps(spec, L, J, t0, control_grid_size);
    return solve_hjb_fd(spec, L, J, TimeGrid(t0, spec.horizon, N), control_grid_size);
}

/// -v_t + sup_u G(t, x, -v, -v_x, -v_xx, u) for a 1-d problem.
inline double hjb_pde_residual(const ProblemSpec& spec, double t, double x, double v, double v_t, double v_x,
                               double v_xx, const std::vector<Vec>& controls) {
    const Vec xv{x};
    const Vec p{-v_x};
    const Vec A{-v_xx};
    double best = -std::numeric_limits<double>::infinity();
    for (const Vec& u : controls) best = std::max(best, generalized_hamiltonian(spec, t, xv, -v, p, A, u));
    return -v_t + best;
}

/// Residual of the stored grid at slice s (s + 1 < slices) and interior node
/// j, with a forward time quotient and central space differences.
inline double grid_pde_residual(const ValueGrid& g, const ProblemSpec& spec, std::size_t s, std::size_t j) {
    if (s + 1 >= g.slices() || j == 0 || j >= g.J) {
        throw PreconditionError("grid_pde_residual needs an interior node and a later slice");
    }
    const double dt = g.slice_time(s + 1) - g.slice_time(s);
    const double v = g.at(s, j);
    const double vt = (g.at(s + 1, j) - v) / dt;
    const double vx = (g.at(s, j + 1) - g.at(s, j - 1)) / (2.0 * g.dx);
    const double vxx = (g.at(s, j + 1) - 2.0 * v + g.at(s, j - 1)) / (g.dx * g.dx);
    return hjb_pde_residual(spec, g.slice_time(s), g.x(j), v, vt, vx, vxx,
                            spec.control.grid(std::max<std::size_t>(2, g.control_grid_size)));
}

inline constexpr double kTouchTolerance = 1e-9;
/// A side is vacuous when the extra curvature needed to touch exceeds this
/// multiple of dx (1 + |phi_x|), the size a slope jump leaves on a window.
inline constexpr double kVacuousCurvature = 1e-2;

struct ViscosityProbe {
    double t = 0.0;
    double x = 0.0;
    std::size_t slice = 0;
    std::size_t node = 0;
    double phi_t = 0.0;
    double phi_x = 0.0;
    double phi_xx = 0.0;  // curvature of the fitted quadratic before the touching correction
    double kappa_sub = 0.0;
    double kappa_super = 0.0;
    bool sub_vacuous = false;
    bool super_vacuous = false;
    double sub_residual = std::numeric_limits<double>::quiet_NaN();    // <= 0 for a subsolution
    double super_residual = std::numeric_limits<double>::quiet_NaN();  // >= 0 for a supersolution
    double pde_residual = 0.0;  // fitted quadratic, no correction
};

struct ViscosityCheckReport {
    std::vector<ViscosityProbe> probes;
    std::size_t fit_radius = 0;
    double worst_violation = 0.0;
};

inline ViscosityCheckReport viscosity_check(const ValueGrid& g, const ProblemSpec& spec,
                                            const std::vector<std::pair<double, double>>& probe_points,
                                            std::size_t fit_radius) {
    if (fit_radius < 2) throw PreconditionError("viscosity_check: fit_radius must be at least 2");
    if (spec.n != 1) throw PreconditionError("viscosity_check is one-dimensional");
    const std::size_t R = fit_radius;
    const std::size_t width = 2 * R + 1;
    if (g.slices() < width || g.J + 1 < width) {
        throw PreconditionError("viscosity_check: grid is smaller than the fit window");
    }
    const auto controls = spec.control.grid(std::max<std::size_t>(2, g.control_grid_size));
    ViscosityCheckReport rep;
    rep.fit_radius = R;
    for (const auto& [t, xv] : probe_points) {
        if (!(t >= g.grid.start() && t <= g.grid.end() && xv >= -g.L && xv <= g.L)) {
            throw PreconditionError("viscosity_check: probe point outside grid");
        }
        ViscosityProbe pr;
        pr.t = t;
        pr.x = xv;
        pr.slice = g.nearest_slice(t);
        pr.node = g.nearest_node(xv);
        const std::size_t s_lo = std::min(pr.slice - std::min(pr.slice, R), g.slices() - width);
        const std::size_t j_lo = std::min(pr.node - std::min(pr.node, R), g.J + 1 - width);
        const double t0 = g.slice_time(pr.slice);
        const double x0 = g.x(pr.node);
        const double ht = (g.slice_time(s_lo + width - 1) - g.slice_time(s_lo)) / static_cast<double>(width - 1);
        const double v0 = g.at(pr.slice, pr.node);

        const std::size_t npts = width * width;
        Eigen::MatrixXd X(npts, 6);
        Eigen::VectorXd y(npts);
        std::vector<double> tau(npts), xi(npts);
        std::size_t row = 0;
        for (std::size_t s = s_lo; s < s_lo + width; ++s) {
            for (std::size_t j = j_lo; j < j_lo + width; ++j, ++row) {
                const double a = (g.slice_time(s) - t0) / ht;
                const double b = (g.x(j) - x0) / g.dx;
                tau[row] = a;
                xi[row] = b;
                X.row(row) << 1.0, a, b, a * a, a * b, b * b;
                y[row] = g.at(s, j);
            }
        }
        Eigen::VectorXd c = X.colPivHouseholderQr().solve(y);
        c[0] = v0;  // shift so the quadratic touches v at the probe
        const Eigen::VectorXd fit = X * c;
        double ks = 0.0, kp = 0.0;
        for (std::size_t w = 0; w < npts; ++w) {
            const double rho2 = tau[w] * tau[w] + xi[w] * xi[w];
            if (rho2 == 0.0) continue;
            const double gap = y[w] - fit[w];
            ks = std::max(ks, (gap - kTouchTolerance) / rho2);
            kp = std::max(kp, (-gap - kTouchTolerance) / rho2);
        }
        pr.kappa_sub = ks;
        pr.kappa_super = kp;
        pr.phi_t = c[1] / ht;
        pr.phi_x = c[2] / g.dx;
        pr.phi_xx = 2.0 * c[5] / (g.dx * g.dx);
        const double limit = kVacuousCurvature * g.dx * (1.0 + std::abs(pr.phi_x));
        pr.sub_vacuous = ks > limit;
        pr.super_vacuous = kp > limit;
        const double tnode = g.slice_time(pr.slice);
        pr.pde_residual = hjb_pde_residual(spec, tnode, x0, v0, pr.phi_t, pr.phi_x, pr.phi_xx, controls);
        if (!pr.sub_vacuous) {
            const double curv = 2.0 * (c[5] + ks) / (g.dx * g.dx);
            pr.sub_residual = hjb_pde_residual(spec, tnode, x0, v0, pr.phi_t, pr.phi_x, curv, controls);
            rep.worst_violation = std::max(rep.worst_violation, pr.sub_residual);
        }
        if (!pr.super_vacuous) {
            const double curv = 2.0 * (c[5] - kp) / (g.dx * g.dx);
            pr.super_residual = hjb_pde_residual(spec, tnode, x0, v0, pr.phi_t, pr.phi_x, curv, controls);
            rep.worst_violation = std::max(rep.worst_violation, -pr.super_residual);
        }
        rep.probes.push_back(pr);
    }
    return rep;
}

struct RegularityReport {
    double lipschitz = 0.0;
    double growth = 0.0;
};

inline RegularityReport regularity_of_slice(const ValueGrid& g, std::span<const double> v) {
    RegularityReport r;
    for (std::size_t j = 0; j <= g.J; ++j) {
        r.growth = std::max(r.growth, std::abs(v[j]) / (1.0 + std::abs(g.x(j))));
        if (j < g.J) r.lipschitz = std::max(r.lipschitz, std::abs(v[j + 1] - v[j]) / g.dx);
    }
    return r;
}

/// Maximal adjacent-node slope and |v| / (1 + |x|) over all stored slices.
inline RegularityReport regularity_probe(const ValueGrid& g) {
    RegularityReport r;
    for (std::size_t s = 0; s < g.slices(); ++s) {
        const auto one = regularity_of_slice(g, g.slice(s));
        r.lipschitz = std::max(r.lipschitz, one.lipschitz);
        r.growth = std::max(r.growth, one.growth);
    }
    return r;
}

/// Same probe restricted to the profile at time t.
inline RegularityReport regularity_probe(const ValueGrid& g, double t) {
    const Vec v = g.slice_at(t);
    return regularity_of_slice(g, v);
}

}  // namespace rsoc
