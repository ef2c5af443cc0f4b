#pragma once

// Closed-form references for example31: dX = X u ds + X dW, f = x - y,
// phi(x) = x, U = [0, 1].

#include "rsoc/error.hpp"
#include "rsoc/jets.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rsoc {

namespace oracle_detail {

inline void require_time(double tt, double T, const char* what) {
    if (!(T > 0.0) || !std::isfinite(T)) throw PreconditionError(std::string(what) + ": horizon must be positive");
    if (!(tt >= 0.0 && tt <= T)) {
        throw PreconditionError(std::string(what) + ": time " + std::to_string(tt) + " outside [0, T]");
    }
}

}  // namespace oracle_detail

/// V(tt, x) = -x for x <= 0 and -x (T - tt) - x for x > 0.
inline double example31_value(double tt, double x, double T = 1.0) {
    oracle_detail::require_time(tt, T, "example31_value");
    return x <= 0.0 ? -x : -x * (T - tt) - x;
}

struct AdjointPoint {
    double p = 0.0;
    double q = 0.0;
    double k = 0.0;
};

/// (p, q, k)(s) = (-e^{t-s}, e^{t-s}, 0) along X = 0, u = 0 started at t.
inline AdjointPoint example31_adjoint(double t, double s, double T = 1.0) {
    oracle_detail::require_time(t, T, "example31_adjoint");
    oracle_detail::require_time(s, T, "example31_adjoint");
    if (s < t) throw PreconditionError("example31_adjoint: s must not precede t");
    const double e = std::exp(t - s);
    return {-e, e, 0.0};
}

struct Example31Jets {
    JetSet subjet;
    JetSet superjet;
};

/// Jets of V(s, .) at the kink x = 0: subjet empty, superjet [-(T - s) - 1, -1].
inline Example31Jets example31_jets(double s, double T = 1.0) {
    return {JetSet::none(), JetSet::between(-(T - s) - 1.0, -1.0)};
}

/// -V_t - x^2 V_xx / 2 + sup_u (-x u V_x) + x + V at a point where V is
/// smooth; h is the radius of the neighbourhood that must avoid the kink.
inline double example31_hjb_residual(double tt, double x, double T, double h) {
    oracle_detail::require_time(tt, T, "example31_hjb_residual");
    if (!(h > 0.0)) throw PreconditionError("example31_hjb_residual: h must be positive");
    if (x == 0.0 || std::abs(x) <= h) {
        throw DomainError("example31_hjb_residual: V has a kink at x = 0; use the viscosity check there");
    }
    const double v = example31_value(tt, x, T);
    const double v_t = x > 0.0 ? x : 0.0;
    const double v_x = x > 0.0 ? -(T - tt) - 1.0 : -1.0;
    const double v_xx = 0.0;
    const double sup = std::max(0.0, -x * v_x);  // linear in u, so an endpoint of [0, 1]
    return -v_t - 0.5 * x * x * v_xx + sup + x + v;
}

}  // namespace rsoc
