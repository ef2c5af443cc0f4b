#pragma once

#include "rsoc/adjoint.hpp"
#include "rsoc/backward.hpp"
#include "rsoc/error.hpp"
#include "rsoc/forward.hpp"
#include "rsoc/hjb.hpp"
#include "rsoc/problem.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rsoc {

inline constexpr double kDefaultTolJet = 5e-3;
inline constexpr double kDefaultTolConn = 2e-2;
inline constexpr double kMinInvertibleQ = 1e-10;

inline std::vector<double> default_jet_steps() { return {0.1, 0.05, 0.025, 0.0125}; }

enum class JetKind { empty, interval, membership_only };

inline const char* to_string(JetKind k) {
    switch (k) {
        case JetKind::empty: return "empty";
        case JetKind::interval: return "interval";
        case JetKind::membership_only: return "membership_only";
    }
    return "?";
}

struct JetSet {
    JetKind kind = JetKind::empty;
    double lo = 0.0;
    double hi = 0.0;

    static JetSet none() { return {}; }
    static JetSet between(double a, double b) { return {JetKind::interval, a, b}; }

    [[nodiscard]] bool empty() const noexcept { return kind == JetKind::empty; }
    [[nodiscard]] bool singleton() const noexcept { return kind == JetKind::interval && lo == hi; }

    /// Negative inside, positive outside, +inf for an empty set.
    [[nodiscard]] double signed_distance(double p) const noexcept {
        if (kind != JetKind::interval) return std::numeric_limits<double>::infinity();
        if (p < lo) return lo - p;
        if (p > hi) return p - hi;
        return -std::min(p - lo, hi - p);
    }
};

struct JetEstimate {
    Vec point;
    double left_slope = 0.0;
    double right_slope = 0.0;
    std::vector<std::pair<Vec, double>> directional;
    JetSet superjet;
    JetSet subjet;
    double tol_jet = kDefaultTolJet;
};

namespace jets_detail {

inline void require_steps(std::span<const double> steps) {
    if (steps.size() < 2) throw PreconditionError("jet estimation needs at least two steps");
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (!(steps[i] > 0.0) || !std::isfinite(steps[i])) throw PreconditionError("jet steps must be positive");
        if (i > 0 && !(steps[i] < steps[i - 1])) throw PreconditionError("jet steps must be strictly decreasing");
    }
}

/// Two-point Richardson extrapolation to h -> 0 of a first-order quotient,
/// using the two smallest steps.
inline double extrapolate(std::span<const double> steps, const std::function<double(double)>& quotient) {
    const double h1 = steps[steps.size() - 2];
    const double h2 = steps[steps.size() - 1];
    return (h1 * quotient(h2) - h2 * quotient(h1)) / (h1 - h2);
}

}  // namespace jets_detail

/// One-sided slopes at x_hat and the resulting 1-d sub/superjet descriptors.
inline JetEstimate estimate_jets_1d(const std::function<double(double)>& v, double x_hat,
                                    std::span<const double> steps, double tol_jet = kDefaultTolJet) {
    jets_detail::require_steps(steps);
    const double v0 = v(x_hat);
    // Domain check on the widest stencil; only the two smallest steps enter the estimate.
    (void)v(x_hat + steps.front());
    (void)v(x_hat - steps.front());
    JetEstimate e;
    e.point = {x_hat};
    e.tol_jet = tol_jet;
    e.right_slope = jets_detail::extrapolate(steps, [&](double h) { return (v(x_hat + h) - v0) / h; });
    e.left_slope = jets_detail::extrapolate(steps, [&](double h) { return (v0 - v(x_hat - h)) / h; });
    e.directional = {{Vec{1.0}, e.right_slope}, {Vec{-1.0}, -e.left_slope}};
    const double sl = e.left_slope;
    const double sr = e.right_slope;
    if (std::abs(sr - sl) <= tol_jet) {
        const double mid = 0.5 * (sl + sr);
        e.superjet = e.subjet = JetSet::between(mid, mid);
    } else if (sr < sl) {
        e.superjet = JetSet::between(sr, sl);
    } else {
        e.subjet = JetSet::between(sl, sr);
    }
    return e;
}

/// Same estimate on a grid profile, linearly interpolated.
inline JetEstimate estimate_jets_1d(const ValueGrid& g, std::span<const double> profile, double x_hat,
                                    std::span<const double> steps, double tol_jet = kDefaultTolJet) {
    return estimate_jets_1d([&](double xv) { return g.interpolate(profile, xv); }, x_hat, steps, tol_jet);
}

struct MembershipResult {
    bool member = false;
    double worst_violation = 0.0;
    std::vector<double> violations;  // one per direction
};

/// Extrapolated (v(x+he) - v(x) - h<c, e>) / h per direction; member iff all
/// are <= tol_jet.
inline MembershipResult superjet_membership(const std::function<double(std::span<const double>)>& v,
                                            std::span<const double> x_hat, std::span<const double> candidate,
                                            const std::vector<Vec>& directions, std::span<const double> steps,
                                            double tol_jet = kDefaultTolJet) {
    jets_detail::require_steps(steps);
    const std::size_t n = x_hat.size();
    if (candidate.size() != n) throw PreconditionError("superjet_membership: candidate dimension mismatch");
    for (std::size_t a = 0; a < n; ++a) {
        bool plus = false, minus = false;
        for (const Vec& e : directions) {
            if (e.size() != n) throw PreconditionError("superjet_membership: direction dimension mismatch");
            bool axis = true;
            for (std::size_t b = 0; b < n; ++b) {
                if (b != a && e[b] != 0.0) axis = false;
            }
            if (axis && e[a] == 1.0) plus = true;
            if (axis && e[a] == -1.0) minus = true;
        }
        if (!plus || !minus) {
            throw PreconditionError("superjet_membership: directions must include +/- every coordinate axis");
        }
    }
    const double v0 = v(x_hat);
    MembershipResult r;
    r.worst_violation = -std::numeric_limits<double>::infinity();
    Vec y(n);
    for (const Vec& e : directions) {
        double norm = 0.0, ce = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
            norm += e[b] * e[b];
            ce += candidate[b] * e[b];
        }
        if (std::abs(norm - 1.0) > 1e-12) throw PreconditionError("superjet_membership: directions must be unit vectors");
        const double viol = jets_detail::extrapolate(steps, [&](double h) {
            for (std::size_t b = 0; b < n; ++b) y[b] = x_hat[b] + h * e[b];
            return (v(y) - v0 - h * ce) / h;
        });
        r.violations.push_back(viol);
        r.worst_violation = std::max(r.worst_violation, viol);
    }
    r.member = r.worst_violation <= tol_jet;
    return r;
}

/// 1-d convenience form with directions {+1, -1}.
inline MembershipResult superjet_membership(const std::function<double(double)>& v, double x_hat, double candidate,
                                            std::span<const double> steps, double tol_jet = kDefaultTolJet) {
    const Vec x{x_hat};
    const Vec c{candidate};
    return superjet_membership([&](std::span<const double> y) { return v(y[0]); }, x, c, {Vec{1.0}, Vec{-1.0}},
                               steps, tol_jet);
}

struct ConnectionOptions {
    double tol_jet = kDefaultTolJet;
    std::vector<double> steps = default_jet_steps();  // scaled by (1 + |x_hat|)
    std::size_t max_paths = 200;
    double member_fraction = 0.95;
};

struct ConnectionNode {
    double s = 0.0;
    std::size_t step = 0;
    std::size_t paths_checked = 0;
    double pq_inv_median = 0.0;
    double pq_inv_iqr = 0.0;
    double state_median = 0.0;
    JetSet superjet;  // at the median-state path
    JetSet subjet;
    double superjet_distance = 0.0;  // signed distance of the median p/q to the superjet
    double member_fraction = 0.0;
    bool member = false;
    bool subjet_ok = false;
    bool pass = false;
};

struct ConnectionReport {
    std::vector<ConnectionNode> nodes;
    double tol_conn = kDefaultTolConn;
    double tol_jet = kDefaultTolJet;
    bool pass = false;
    std::string note;
};

namespace jets_detail {

inline double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace jets_detail

/// Checks D^{1,-}V(s, X(s)) in {p q^-1} in D^{1,+}V(s, X(s)) at each check
/// time on a strided sample of paths.
inline ConnectionReport verify_connection(const ProblemSpec& spec, const PathBatch& batch, const BackwardSolution& bw,
                                          const AdjointTriple& triple, const ValueGrid& vgrid,
                                          const std::vector<double>& check_times, double tol_conn = kDefaultTolConn,
                                          const ConnectionOptions& options = {}) {
    if (spec.n != 1) throw PreconditionError("verify_connection needs a one-dimensional state");
    if (!(triple.grid == batch.grid) || triple.paths != batch.paths || triple.policy_id != batch.policy_id ||
        bw.policy_id != batch.policy_id || !(bw.grid == batch.grid)) {
        throw PreconditionError("verify_connection: batch, backward solution and adjoint triple do not match");
    }
    if (check_times.empty()) throw PreconditionError("verify_connection: no check times");
    if (options.max_paths == 0) throw PreconditionError("verify_connection: max_paths must be positive");
    jets_detail::require_steps(options.steps);
    const std::size_t N = batch.grid.steps();
    for (std::size_t m = 0; m < batch.paths; ++m) {
        for (std::size_t i = 0; i <= N; ++i) {
            if (!(std::abs(triple.q_at(m, i)) >= kMinInvertibleQ)) {
                throw NumericalError("q is not invertible on path " + std::to_string(m) + " at step " +
                                     std::to_string(i) + " (|q| < 1e-10)");
            }
        }
    }
    const std::size_t stride = std::max<std::size_t>(1, (batch.paths + options.max_paths - 1) / options.max_paths);

    ConnectionReport rep;
    rep.tol_conn = tol_conn;
    rep.tol_jet = options.tol_jet;
    rep.pass = true;
    for (double s : check_times) {
        if (s < batch.grid.start() || s > batch.grid.end()) {
            throw PreconditionError("verify_connection: check time outside the batch grid");
        }
        ConnectionNode node;
        node.step = batch.grid.nearest(s);
        node.s = batch.grid.time(node.step);
        const Vec profile = vgrid.slice_at(node.s);
        std::vector<double> ratios, states;
        std::size_t members = 0;
        bool subjet_ok = true;
        std::vector<JetEstimate> estimates;
        for (std::size_t m = 0; m < batch.paths; m += stride) {
            const double xs = batch.state(m, node.step, 0);
            const double xhat = vgrid.x(vgrid.nearest_node(xs));
            const double ratio = triple.p_at(m, node.step, 0) / triple.q_at(m, node.step);
            Vec steps = options.steps;
            for (double& h : steps) h *= 1.0 + std::abs(xhat);
            auto interp = [&](double xv) { return vgrid.interpolate(profile, xv); };
            estimates.push_back(estimate_jets_1d(interp, xhat, steps, options.tol_jet));
            const auto mem = superjet_membership(interp, xhat, ratio, steps, tol_conn);
            if (mem.member) ++members;
            const JetSet& sub = estimates.back().subjet;
            if (!sub.empty()) {
                const bool nondegenerate = !sub.singleton();
                if (nondegenerate || sub.lo < ratio - tol_conn || sub.hi > ratio + tol_conn) subjet_ok = false;
            }
            ratios.push_back(ratio);
            states.push_back(xs);
        }
        node.paths_checked = ratios.size();
        node.pq_inv_median = jets_detail::quantile(ratios, 0.5);
        node.pq_inv_iqr = jets_detail::quantile(ratios, 0.75) - jets_detail::quantile(ratios, 0.25);
        node.state_median = jets_detail::quantile(states, 0.5);
        std::size_t rep_idx = 0;
        for (std::size_t a = 1; a < states.size(); ++a) {
            if (std::abs(states[a] - node.state_median) < std::abs(states[rep_idx] - node.state_median)) rep_idx = a;
        }
        node.superjet = estimates[rep_idx].superjet;
        node.subjet = estimates[rep_idx].subjet;
        node.superjet_distance = node.superjet.signed_distance(node.pq_inv_median);
        node.member_fraction = static_cast<double>(members) / static_cast<double>(node.paths_checked);
        node.member = node.member_fraction >= options.member_fraction;
        node.subjet_ok = subjet_ok;
        node.pass = node.member && node.subjet_ok;
        rep.pass = rep.pass && node.pass;
        rep.nodes.push_back(node);
    }
    rep.note = "finite-sample surrogate: " + std::to_string(rep.nodes.size()) + " check times, up to " +
               std::to_string(rep.nodes.front().paths_checked) +
               " sampled paths each; the almost-sure statement for all s is not checkable";
    return rep;
}

}  // namespace rsoc
