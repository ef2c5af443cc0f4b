#pragma once

#include "rsoc/error.hpp"
#include "rsoc/expression.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace rsoc {

using Vec = std::vector<double>;

/// Axis-aligned box [lo_i, hi_i] in R^k; lo_i == hi_i is allowed.
struct ControlBox {
    Vec lo;
    Vec hi;

    [[nodiscard]] std::size_t dim() const noexcept { return lo.size(); }

    [[nodiscard]] bool contains(std::span<const double> u) const noexcept {
        if (u.size() != lo.size()) {
            return false;
        }
        for (std::size_t i = 0; i < u.size(); ++i) {
            if (!(u[i] >= lo[i] && u[i] <= hi[i])) {
                return false;
            }
        }
        return true;
    }

    [[nodiscard]] Vec midpoint() const {
        Vec m(lo.size());
        for (std::size_t i = 0; i < m.size(); ++i) {
            m[i] = 0.5 * (lo[i] + hi[i]);
        }
        return m;
    }

    /// Uniform tensor grid with `per_dim` points per axis (degenerate axes
    /// contribute a single point). Axis 0 varies fastest.
    [[nodiscard]] std::vector<Vec> grid(std::size_t per_dim) const {
        if (per_dim < 2) {
            throw PreconditionError("control grid needs at least 2 points per dimension");
        }
        std::vector<Vec> axes(dim());
        for (std::size_t i = 0; i < dim(); ++i) {
            if (lo[i] == hi[i]) {
                axes[i] = {lo[i]};
                continue;
            }
            axes[i].resize(per_dim);
            for (std::size_t j = 0; j < per_dim; ++j) {
                axes[i][j] = j + 1 == per_dim
                                 ? hi[i]
                                 : lo[i] + (hi[i] - lo[i]) * static_cast<double>(j) / static_cast<double>(per_dim - 1);
            }
        }
        std::vector<Vec> points{Vec{}};
        for (std::size_t i = 0; i < dim(); ++i) {
            std::vector<Vec> next;
            next.reserve(points.size() * axes[i].size());
            for (double v : axes[i]) {
                for (const Vec& p : points) {
                    Vec q = p;
                    q.push_back(v);
                    next.push_back(std::move(q));
                }
            }
            points = std::move(next);
        }
        return points;
    }
};

// Evaluator signatures. Matrices are row-major: sigma(i, j) at i * d + j.
using DriftFn = std::function<void(double s, std::span<const double> x, std::span<const double> u,
                                   std::span<double> out)>;
using DiffusionFn = DriftFn;
using DriverFn = std::function<double(double s, std::span<const double> x, double y, std::span<const double> z,
                                      std::span<const double> u)>;
using TerminalFn = std::function<double(std::span<const double> x)>;
/// State-feedback control law (s, x) -> u.
using FeedbackFn = std::function<void(double s, std::span<const double> x, std::span<double> u)>;

// Gradient evaluators.
//   drift_x:     out[i * n + l] = d b_i / d x_l
//   diffusion_x: out[(i * d + j) * n + l] = d sigma_ij / d x_l
//   drift_u:     out[i * k + l] = d b_i / d u_l
//   diffusion_u: out[(i * d + j) * k + l] = d sigma_ij / d u_l
//   driver_x / driver_z / driver_u: gradient vectors; driver_y: scalar
using DriverGradFn = std::function<void(double s, std::span<const double> x, double y, std::span<const double> z,
                                        std::span<const double> u, std::span<double> out)>;
using TerminalGradFn = std::function<void(std::span<const double> x, std::span<double> out)>;

struct AnalyticGradients {
    DriftFn drift_x;
    DiffusionFn diffusion_x;
    DriftFn drift_u;
    DiffusionFn diffusion_u;
    DriverGradFn driver_x;
    DriverFn driver_y;
    DriverGradFn driver_z;
    DriverGradFn driver_u;
    TerminalGradFn terminal_x;
};

/// Expression sources of a problem, kept so a spec can be rendered back to
/// config text.
struct ProblemSource {
    std::vector<std::string> drift;      // n entries
    std::vector<std::string> diffusion;  // n*d entries, row-major
    std::string driver;
    std::string terminal;
};

struct ProblemSpec {
    std::string name;
    std::size_t n = 1;
    std::size_t d = 1;
    std::size_t k = 1;
    double horizon = 1.0;
    ControlBox control;
    DriftFn drift;
    DiffusionFn diffusion;
    DriverFn driver;
    TerminalFn terminal;
    AnalyticGradients gradients;
    bool allow_finite_differences = true;
    double lipschitz_hint = 1.0;
    std::optional<ProblemSource> source;

    void validate() const {
        if (n == 0 || d == 0 || k == 0) {
            throw PreconditionError("dimensions n, d, k must be positive");
        }
        if (!(horizon > 0.0) || !std::isfinite(horizon)) {
            throw PreconditionError("horizon T must be positive and finite");
        }
        if (control.lo.size() != k || control.hi.size() != k) {
            throw PreconditionError("control box dimension does not match k");
        }
        for (std::size_t i = 0; i < k; ++i) {
            if (!(control.lo[i] <= control.hi[i])) {
                throw PreconditionError("empty control box: lo > hi on axis " + std::to_string(i + 1));
            }
        }
        if (!drift || !diffusion || !driver || !terminal) {
            throw PreconditionError("problem '" + name + "' is missing a coefficient evaluator");
        }
        if (!(lipschitz_hint >= 0.0)) {
            throw PreconditionError("lipschitz_hint must be nonnegative");
        }
    }
};

/// Componentwise clamp onto the control box.
inline Vec project_control(std::span<const double> u_raw, const ProblemSpec& spec) {
    Vec u(u_raw.begin(), u_raw.end());
    for (std::size_t i = 0; i < u.size() && i < spec.control.dim(); ++i) {
        u[i] = std::clamp(u[i], spec.control.lo[i], spec.control.hi[i]);
    }
    return u;
}

namespace detail {

inline std::string format_point(std::span<const double> v) {
    std::ostringstream out;
    out.precision(17);
    out << '(';
    for (std::size_t i = 0; i < v.size(); ++i) {
        out << (i ? ", " : "") << v[i];
    }
    out << ')';
    return out.str();
}

inline void require_control(const ProblemSpec& spec, std::span<const double> u) {
    if (!spec.control.contains(u)) {
        throw PreconditionError("control " + format_point(u) + " lies outside the control box");
    }
}

inline double fd_step(double arg) { return 1e-5 * (1.0 + std::abs(arg)); }

inline void require_fd(const ProblemSpec& spec, const char* what) {
    if (!spec.allow_finite_differences) {
        throw PreconditionError(std::string("no analytic ") + what +
                                " evaluator and finite differences are disabled");
    }
}

}  // namespace detail

struct Coefficients {
    Vec drift;      // n
    Vec diffusion;  // n*d row-major
};

/// Drift and diffusion at (s, x, u) with range checks.
inline Coefficients eval_coefficients(const ProblemSpec& spec, double s, std::span<const double> x,
                                      std::span<const double> u) {
    if (s < 0.0 || s > spec.horizon) {
        throw PreconditionError("time " + std::to_string(s) + " outside [0, T]");
    }
    if (x.size() != spec.n) {
        throw PreconditionError("state dimension mismatch");
    }
    detail::require_control(spec, u);
    Coefficients c{Vec(spec.n), Vec(spec.n * spec.d)};
    spec.drift(s, x, u, c.drift);
    spec.diffusion(s, x, u, c.diffusion);
    return c;
}

// Gradient helpers: analytic evaluator when present, otherwise central
// differences with step 1e-5 * (1 + |argument|).

inline void drift_x(const ProblemSpec& spec, double s, std::span<const double> x, std::span<const double> u,
                    std::span<double> out) {
    if (spec.gradients.drift_x) {
        spec.gradients.drift_x(s, x, u, out);
        return;
    }
    detail::require_fd(spec, "b_x");
    const std::size_t n = spec.n;
    Vec xp(x.begin(), x.end()), bp(n), bm(n);
    for (std::size_t l = 0; l < n; ++l) {
        const double h = detail::fd_step(x[l]);
        xp[l] = x[l] + h;
        spec.drift(s, xp, u, bp);
        xp[l] = x[l] - h;
        spec.drift(s, xp, u, bm);
        xp[l] = x[l];
        for (std::size_t i = 0; i < n; ++i) {
            out[i * n + l] = (bp[i] - bm[i]) / (2.0 * h);
        }
    }
}

inline void diffusion_x(const ProblemSpec& spec, double s, std::span<const double> x, std::span<const double> u,
                        std::span<double> out) {
    if (spec.gradients.diffusion_x) {
        spec.gradients.diffusion_x(s, x, u, out);
        return;
    }
    detail::require_fd(spec, "sigma_x");
    const std::size_t n = spec.n, m = spec.n * spec.d;
    Vec xp(x.begin(), x.end()), sp(m), sm(m);
    for (std::size_t l = 0; l < n; ++l) {
        const double h = detail::fd_step(x[l]);
        xp[l] = x[l] + h;
        spec.diffusion(s, xp, u, sp);
        xp[l] = x[l] - h;
        spec.diffusion(s, xp, u, sm);
        xp[l] = x[l];
        for (std::size_t e = 0; e < m; ++e) {
            out[e * n + l] = (sp[e] - sm[e]) / (2.0 * h);
        }
    }
}

inline void driver_x(const ProblemSpec& spec, double s, std::span<const double> x, double y,
                     std::span<const double> z, std::span<const double> u, std::span<double> out) {
    if (spec.gradients.driver_x) {
        spec.gradients.driver_x(s, x, y, z, u, out);
        return;
    }
    detail::require_fd(spec, "f_x");
    Vec xp(x.begin(), x.end());
    for (std::size_t l = 0; l < spec.n; ++l) {
        const double h = detail::fd_step(x[l]);
        xp[l] = x[l] + h;
        const double fp = spec.driver(s, xp, y, z, u);
        xp[l] = x[l] - h;
        const double fm = spec.driver(s, xp, y, z, u);
        xp[l] = x[l];
        out[l] = (fp - fm) / (2.0 * h);
    }
}

inline double driver_y(const ProblemSpec& spec, double s, std::span<const double> x, double y,
                       std::span<const double> z, std::span<const double> u) {
    if (spec.gradients.driver_y) {
        return spec.gradients.driver_y(s, x, y, z, u);
    }
    detail::require_fd(spec, "f_y");
    const double h = detail::fd_step(y);
    return (spec.driver(s, x, y + h, z, u) - spec.driver(s, x, y - h, z, u)) / (2.0 * h);
}

inline void driver_z(const ProblemSpec& spec, double s, std::span<const double> x, double y,
                     std::span<const double> z, std::span<const double> u, std::span<double> out) {
    if (spec.gradients.driver_z) {
        spec.gradients.driver_z(s, x, y, z, u, out);
        return;
    }
    detail::require_fd(spec, "f_z");
    Vec zp(z.begin(), z.end());
    for (std::size_t j = 0; j < spec.d; ++j) {
        const double h = detail::fd_step(z[j]);
        zp[j] = z[j] + h;
        const double fp = spec.driver(s, x, y, zp, u);
        zp[j] = z[j] - h;
        const double fm = spec.driver(s, x, y, zp, u);
        zp[j] = z[j];
        out[j] = (fp - fm) / (2.0 * h);
    }
}

inline void terminal_x(const ProblemSpec& spec, std::span<const double> x, std::span<double> out) {
    if (spec.gradients.terminal_x) {
        spec.gradients.terminal_x(x, out);
        return;
    }
    detail::require_fd(spec, "phi_x");
    Vec xp(x.begin(), x.end());
    for (std::size_t l = 0; l < spec.n; ++l) {
        const double h = detail::fd_step(x[l]);
        xp[l] = x[l] + h;
        const double fp = spec.terminal(xp);
        xp[l] = x[l] - h;
        const double fm = spec.terminal(xp);
        xp[l] = x[l];
        out[l] = (fp - fm) / (2.0 * h);
    }
}

inline ProblemSpec make_expression_problem(std::string name, std::size_t n, std::size_t d, std::size_t k,
                                    double horizon, ControlBox control, const ProblemSource& src,
                                    std::vector<CoefficientExpr> b, std::vector<CoefficientExpr> sig,
                                    CoefficientExpr f, CoefficientExpr phi, double lipschitz_hint);

/// Builds a spec whose evaluators interpret parsed expressions. Gradients
/// fall back to central differences.
inline ProblemSpec make_expression_problem(std::string name, std::size_t n, std::size_t d, std::size_t k,
                                           double horizon, ControlBox control, const ProblemSource& src,
                                           double lipschitz_hint = 1.0) {
    const auto sc = VariableSet::state_control(n, d, k);
    const auto dv = VariableSet::driver(n, d, k);
    const auto tv = VariableSet::terminal(n, d, k);
    if (src.drift.size() != n) {
        throw PreconditionError("expected " + std::to_string(n) + " drift entries, got " +
                                std::to_string(src.drift.size()));
    }
    if (src.diffusion.size() != n * d) {
        throw PreconditionError("expected " + std::to_string(n * d) + " diffusion entries, got " +
                                std::to_string(src.diffusion.size()));
    }
    std::vector<CoefficientExpr> b, sig;
    for (const auto& e : src.drift) b.push_back(CoefficientExpr::parse(e, sc));
    for (const auto& e : src.diffusion) sig.push_back(CoefficientExpr::parse(e, sc));
    auto f = CoefficientExpr::parse(src.driver, dv);
    auto phi = CoefficientExpr::parse(src.terminal, tv);
    return make_expression_problem(std::move(name), n, d, k, horizon, std::move(control), src, std::move(b),
                                   std::move(sig), std::move(f), std::move(phi), lipschitz_hint);
}

/// Overload taking already-parsed expressions (the config parser uses this
/// so parse errors carry config line/column).
inline ProblemSpec make_expression_problem(std::string name, std::size_t n, std::size_t d, std::size_t k,
                                           double horizon, ControlBox control, const ProblemSource& src,
                                           std::vector<CoefficientExpr> b, std::vector<CoefficientExpr> sig,
                                           CoefficientExpr f, CoefficientExpr phi, double lipschitz_hint) {
    const VariableSet layout = VariableSet::driver(n, d, k);
    const std::size_t slots = layout.slot_count();

    auto fill = [layout](std::span<double> buf, double s, std::span<const double> x, double y,
                         std::span<const double> z, std::span<const double> u) {
        buf[layout.s_slot()] = s;
        for (std::size_t i = 0; i < x.size(); ++i) buf[layout.x_slot(i)] = x[i];
        buf[layout.y_slot()] = y;
        for (std::size_t j = 0; j < z.size(); ++j) buf[layout.z_slot(j)] = z[j];
        for (std::size_t l = 0; l < u.size(); ++l) buf[layout.u_slot(l)] = u[l];
    };

    ProblemSpec spec;
    spec.name = std::move(name);
    spec.n = n;
    spec.d = d;
    spec.k = k;
    spec.horizon = horizon;
    spec.control = std::move(control);
    spec.lipschitz_hint = lipschitz_hint;
    spec.source = src;

    auto vec_eval = [fill, slots](std::vector<CoefficientExpr> exprs) {
        return [fill, slots, exprs = std::move(exprs)](double s, std::span<const double> x,
                                                       std::span<const double> u, std::span<double> out) {
            double small[32];
            std::vector<double> large;
            std::span<double> buf(small, std::min<std::size_t>(slots, 32));
            if (slots > 32) {
                large.assign(slots, 0.0);
                buf = large;
            }
            std::fill(buf.begin(), buf.end(), 0.0);
            fill(buf, s, x, 0.0, {}, u);
            for (std::size_t i = 0; i < exprs.size(); ++i) {
                out[i] = exprs[i].eval(buf);
            }
        };
    };
    spec.drift = vec_eval(std::move(b));
    spec.diffusion = vec_eval(std::move(sig));
    spec.driver = [fill, slots, f = std::move(f)](double s, std::span<const double> x, double y,
                                                  std::span<const double> z, std::span<const double> u) {
        double small[32];
        std::vector<double> large;
        std::span<double> buf(small, std::min<std::size_t>(slots, 32));
        if (slots > 32) {
            large.assign(slots, 0.0);
            buf = large;
        }
        std::fill(buf.begin(), buf.end(), 0.0);
        fill(buf, s, x, y, z, u);
        return f.eval(buf);
    };
    spec.terminal = [fill, slots, phi = std::move(phi)](std::span<const double> x) {
        double small[32];
        std::vector<double> large;
        std::span<double> buf(small, std::min<std::size_t>(slots, 32));
        if (slots > 32) {
            large.assign(slots, 0.0);
            buf = large;
        }
        std::fill(buf.begin(), buf.end(), 0.0);
        fill(buf, 0.0, x, 0.0, {}, {});
        return phi.eval(buf);
    };
    spec.validate();
    return spec;
}

}  // namespace rsoc
