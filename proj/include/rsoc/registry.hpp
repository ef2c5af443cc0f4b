#pragma once

// Built-in problems. Each carries native evaluators with analytic gradients
// and the equivalent expression sources, so render_problem/parse_problem
// reproduce it.

#include "rsoc/error.hpp"
#include "rsoc/problem.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace rsoc {

struct BuiltinProblem {
    ProblemSpec spec;
    /// Known optimal feedback, if any.
    std::optional<FeedbackFn> optimal_feedback;
    double default_t0 = 0.0;
    Vec default_x0;
    /// Closed-form value function V(t, x) for 1-d problems, if known.
    std::function<double(double t, double x)> exact_value;
};

namespace registry_detail {

inline BuiltinProblem example31() {
    BuiltinProblem p;
    ProblemSpec& s = p.spec;
    s.name = "example31";
    s.n = s.d = s.k = 1;
    s.horizon = 1.0;
    s.control = {{0.0}, {1.0}};
    s.lipschitz_hint = 2.0;
    s.drift = [](double, auto x, auto u, auto out) { out[0] = x[0] * u[0]; };
    s.diffusion = [](double, auto x, auto, auto out) { out[0] = x[0]; };
    s.driver = [](double, auto x, double y, auto, auto) { return x[0] - y; };
    s.terminal = [](auto x) { return x[0]; };
    s.gradients.drift_x = [](double, auto, auto u, auto out) { out[0] = u[0]; };
    s.gradients.diffusion_x = [](double, auto, auto, auto out) { out[0] = 1.0; };
    s.gradients.drift_u = [](double, auto x, auto, auto out) { out[0] = x[0]; };
    s.gradients.diffusion_u = [](double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.driver_x = [](double, auto, double, auto, auto, auto out) { out[0] = 1.0; };
    s.gradients.driver_y = [](double, auto, double, auto, auto) { return -1.0; };
    s.gradients.driver_z = [](double, auto, double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.driver_u = [](double, auto, double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.terminal_x = [](auto, auto out) { out[0] = 1.0; };
    s.source = ProblemSource{{"x1*u1"}, {"x1"}, "x1 - y", "x1"};
    p.optimal_feedback = [](double, std::span<const double> x, std::span<double> u) { u[0] = x[0] > 0.0 ? 1.0 : 0.0; };
    p.default_x0 = {0.0};
    p.exact_value = [T = s.horizon](double t, double x) { return x <= 0.0 ? -x : -x * (T - t) - x; };
    return p;
}

// dX = 0.5 dW, f = 0, phi = sin(x): V(t, x) = -sin(x) exp(-0.125 (T - t)).
inline BuiltinProblem heat1d() {
    BuiltinProblem p;
    ProblemSpec& s = p.spec;
    s.name = "heat1d";
    s.n = s.d = s.k = 1;
    s.horizon = 1.0;
    s.control = {{0.0}, {0.0}};
    s.lipschitz_hint = 1.0;
    s.drift = [](double, auto, auto, auto out) { out[0] = 0.0; };
    s.diffusion = [](double, auto, auto, auto out) { out[0] = 0.5; };
    s.driver = [](double, auto, double, auto, auto) { return 0.0; };
    s.terminal = [](auto x) { return std::sin(x[0]); };
    s.gradients.drift_x = [](double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.diffusion_x = [](double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.drift_u = [](double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.diffusion_u = [](double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.driver_x = [](double, auto, double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.driver_y = [](double, auto, double, auto, auto) { return 0.0; };
    s.gradients.driver_z = [](double, auto, double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.driver_u = [](double, auto, double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.terminal_x = [](auto x, auto out) { out[0] = std::cos(x[0]); };
    s.source = ProblemSource{{"0"}, {"0.5"}, "0", "sin(x1)"};
    p.optimal_feedback = [](double, std::span<const double>, std::span<double> u) { u[0] = 0.0; };
    p.default_x0 = {0.0};
    p.exact_value = [T = s.horizon](double t, double x) { return -std::sin(x) * std::exp(-0.125 * (T - t)); };
    return p;
}

inline BuiltinProblem smooth1d() {
    BuiltinProblem p;
    ProblemSpec& s = p.spec;
    s.name = "smooth1d";
    s.n = s.d = s.k = 1;
    s.horizon = 1.0;
    s.control = {{-1.0}, {1.0}};
    s.lipschitz_hint = 1.0;
    s.drift = [](double, auto x, auto u, auto out) { out[0] = u[0] * std::sin(x[0]); };
    s.diffusion = [](double, auto x, auto, auto out) { out[0] = 0.5 * std::cos(x[0]); };
    s.driver = [](double, auto x, double y, auto z, auto u) { return std::sin(x[0]) - 0.5 * y + 0.25 * z[0] * u[0]; };
    s.terminal = [](auto x) { return std::cos(x[0]); };
    s.gradients.drift_x = [](double, auto x, auto u, auto out) { out[0] = u[0] * std::cos(x[0]); };
    s.gradients.diffusion_x = [](double, auto x, auto, auto out) { out[0] = -0.5 * std::sin(x[0]); };
    s.gradients.drift_u = [](double, auto x, auto, auto out) { out[0] = std::sin(x[0]); };
    s.gradients.diffusion_u = [](double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.driver_x = [](double, auto x, double, auto, auto, auto out) { out[0] = std::cos(x[0]); };
    s.gradients.driver_y = [](double, auto, double, auto, auto) { return -0.5; };
    s.gradients.driver_z = [](double, auto, double, auto, auto u, auto out) { out[0] = 0.25 * u[0]; };
    s.gradients.driver_u = [](double, auto, double, auto z, auto, auto out) { out[0] = 0.25 * z[0]; };
    s.gradients.terminal_x = [](auto x, auto out) { out[0] = -std::sin(x[0]); };
    s.source = ProblemSource{{"u1*sin(x1)"}, {"0.5*cos(x1)"}, "sin(x1) - 0.5*y + 0.25*z1*u1", "cos(x1)"};
    p.default_x0 = {0.5};
    return p;
}

inline BuiltinProblem coupled2d() {
    BuiltinProblem p;
    ProblemSpec& s = p.spec;
    s.name = "coupled2d";
    s.n = 2;
    s.d = 2;
    s.k = 1;
    s.horizon = 1.0;
    s.control = {{-1.0}, {1.0}};
    s.lipschitz_hint = 2.0;
    s.drift = [](double, auto x, auto u, auto out) {
        out[0] = u[0] - x[0];
        out[1] = x[0] - x[1];
    };
    s.diffusion = [](double, auto, auto, auto out) {
        out[0] = 0.2;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = 0.3;
    };
    s.driver = [](double, auto x, double y, auto, auto) { return x[0] + x[1] - 0.1 * y; };
    s.terminal = [](auto x) { return 0.5 * x[0] + 0.5 * x[1]; };
    s.gradients.drift_x = [](double, auto, auto, auto out) {
        out[0] = -1.0;
        out[1] = 0.0;
        out[2] = 1.0;
        out[3] = -1.0;
    };
    s.gradients.diffusion_x = [](double, auto, auto, auto out) { std::fill(out.begin(), out.end(), 0.0); };
    s.gradients.drift_u = [](double, auto, auto, auto out) {
        out[0] = 1.0;
        out[1] = 0.0;
    };
    s.gradients.diffusion_u = [](double, auto, auto, auto out) { std::fill(out.begin(), out.end(), 0.0); };
    s.gradients.driver_x = [](double, auto, double, auto, auto, auto out) {
        out[0] = 1.0;
        out[1] = 1.0;
    };
    s.gradients.driver_y = [](double, auto, double, auto, auto) { return -0.1; };
    s.gradients.driver_z = [](double, auto, double, auto, auto, auto out) { std::fill(out.begin(), out.end(), 0.0); };
    s.gradients.driver_u = [](double, auto, double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.terminal_x = [](auto, auto out) {
        out[0] = 0.5;
        out[1] = 0.5;
    };
    s.source = ProblemSource{{"u1 - x1", "x1 - x2"}, {"0.2", "0", "0", "0.3"}, "x1 + x2 - 0.1*y", "0.5*x1 + 0.5*x2"};
    p.default_x0 = {0.5, -0.5};
    return p;
}

// Frozen dynamics with linear terminal data: V(t, x) = -x.
inline BuiltinProblem frozen() {
    BuiltinProblem p;
    ProblemSpec& s = p.spec;
    s.name = "frozen";
    s.n = s.d = s.k = 1;
    s.horizon = 1.0;
    s.control = {{0.0}, {1.0}};
    s.lipschitz_hint = 1.0;
    s.drift = [](double, auto, auto, auto out) { out[0] = 0.0; };
    s.diffusion = [](double, auto, auto, auto out) { out[0] = 0.0; };
    s.driver = [](double, auto, double, auto, auto) { return 0.0; };
    s.terminal = [](auto x) { return x[0]; };
    s.gradients.drift_x = [](double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.diffusion_x = [](double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.drift_u = [](double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.diffusion_u = [](double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.driver_x = [](double, auto, double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.driver_y = [](double, auto, double, auto, auto) { return 0.0; };
    s.gradients.driver_z = [](double, auto, double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.driver_u = [](double, auto, double, auto, auto, auto out) { out[0] = 0.0; };
    s.gradients.terminal_x = [](auto, auto out) { out[0] = 1.0; };
    s.source = ProblemSource{{"0"}, {"0"}, "0", "x1"};
    p.optimal_feedback = [](double, std::span<const double>, std::span<double> u) { u[0] = 0.0; };
    p.default_x0 = {0.0};
    p.exact_value = [](double, double x) { return -x; };
    return p;
}

}  // namespace registry_detail

inline std::vector<std::string> builtin_ids() { return {"example31", "heat1d", "smooth1d", "coupled2d", "frozen"}; }

inline BuiltinProblem builtin_problem(const std::string& id) {
    BuiltinProblem p;
    if (id == "example31") {
        p = registry_detail::example31();
    } else if (id == "heat1d") {
        p = registry_detail::heat1d();
    } else if (id == "smooth1d") {
        p = registry_detail::smooth1d();
    } else if (id == "coupled2d") {
        p = registry_detail::coupled2d();
    } else if (id == "frozen") {
        p = registry_detail::frozen();
    } else {
        throw PreconditionError("unknown builtin problem '" + id + "'");
    }
    p.spec.validate();
    return p;
}

/// example31 with a different horizon.
inline BuiltinProblem example31_with_horizon(double T) {
    BuiltinProblem p = registry_detail::example31();
    p.spec.horizon = T;
    p.exact_value = [T](double t, double x) { return x <= 0.0 ? -x : -x * (T - t) - x; };
    p.spec.validate();
    return p;
}

}  // namespace rsoc
