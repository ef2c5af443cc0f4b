#pragma once

#include "rsoc/error.hpp"
#include "rsoc/parallel.hpp"
#include "rsoc/problem.hpp"
#include "rsoc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace rsoc {

/// Uniform grid on [start, end] with `steps` intervals. Node `steps` is
/// exactly `end`.
class TimeGrid {
public:
    TimeGrid(double start, double end, std::size_t steps) : start_(start), end_(end), steps_(steps) {
        if (!(start >= 0.0) || !(start < end) || !std::isfinite(end)) {
            throw PreconditionError("time grid needs 0 <= t < T");
        }
        if (steps == 0) {
            throw PreconditionError("time grid needs at least one step");
        }
    }

    [[nodiscard]] double start() const noexcept { return start_; }
    [[nodiscard]] double end() const noexcept { return end_; }
    [[nodiscard]] std::size_t steps() const noexcept { return steps_; }
    [[nodiscard]] double dt() const noexcept { return (end_ - start_) / static_cast<double>(steps_); }

    [[nodiscard]] double time(std::size_t i) const noexcept {
        return i >= steps_ ? end_ : start_ + static_cast<double>(i) * dt();
    }

    /// Index of the node closest to t (clamped to the grid).
    [[nodiscard]] std::size_t nearest(double t) const noexcept {
        const double pos = (t - start_) / dt();
        if (pos <= 0.0) return 0;
        return std::min(steps_, static_cast<std::size_t>(std::llround(pos)));
    }

    friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

private:
    double start_;
    double end_;
    std::size_t steps_;
};

/// Constant or state-feedback control law, always projected onto the box.
class ControlPolicy {
public:
    enum class Kind { constant, feedback };

    static ControlPolicy constant(Vec value, std::string id = {}) {
        ControlPolicy p;
        p.kind_ = Kind::constant;
        if (id.empty()) {
            id = "const:";
            for (std::size_t i = 0; i < value.size(); ++i) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%s%.17g", i ? "," : "", value[i]);
                id += buf;
            }
        }
        p.value_ = std::move(value);
        p.id_ = std::move(id);
        return p;
    }

    static ControlPolicy feedback(FeedbackFn law, std::string id) {
        ControlPolicy p;
        p.kind_ = Kind::feedback;
        p.law_ = std::move(law);
        p.id_ = std::move(id);
        return p;
    }

    [[nodiscard]] Kind kind() const noexcept { return kind_; }
    [[nodiscard]] const std::string& id() const noexcept { return id_; }
    [[nodiscard]] const Vec& value() const noexcept { return value_; }

    /// Control at (s, x), clamped onto the spec's box. `out` has size k.
    void operator()(const ProblemSpec& spec, double s, std::span<const double> x, std::span<double> out) const {
        if (kind_ == Kind::constant) {
            if (value_.size() != spec.k) {
                throw PreconditionError("constant policy '" + id_ + "' has the wrong control dimension");
            }
            std::copy(value_.begin(), value_.end(), out.begin());
        } else {
            law_(s, x, out);
        }
        for (std::size_t l = 0; l < spec.k; ++l) {
            out[l] = std::clamp(out[l], spec.control.lo[l], spec.control.hi[l]);
        }
    }

private:
    Kind kind_ = Kind::constant;
    Vec value_;
    FeedbackFn law_;
    std::string id_;
};

/// M x N x d Brownian increments, row-major.
struct Increments {
    std::size_t paths = 0;
    std::size_t steps = 0;
    std::size_t dim = 0;
    double dt = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> data;

    [[nodiscard]] double operator()(std::size_t m, std::size_t i, std::size_t j) const noexcept {
        return data[(m * steps + i) * dim + j];
    }
    [[nodiscard]] std::span<const double> at(std::size_t m, std::size_t i) const noexcept {
        return {data.data() + (m * steps + i) * dim, dim};
    }
};

/// Gaussian increments N(0, dt I_d). Draw (m, i, j) depends only on
/// (seed, m, i, j), never on the worker layout.
inline Increments generate_increments(const TimeGrid& grid, std::size_t paths, std::size_t dim, std::uint64_t seed) {
    if (paths == 0) {
        throw PreconditionError("need at least one path");
    }
    if (dim == 0) {
        throw PreconditionError("Brownian dimension must be positive");
    }
    if (paths > std::numeric_limits<std::uint32_t>::max() || grid.steps() > std::numeric_limits<std::uint32_t>::max()) {
        throw PreconditionError("path or step count exceeds the generator's counter range");
    }
    Increments inc{paths, grid.steps(), dim, grid.dt(), seed, std::vector<double>(paths * grid.steps() * dim)};
    const double scale = std::sqrt(grid.dt());
    parallel_for(paths, [&](std::size_t begin, std::size_t end) {
        for (std::size_t m = begin; m < end; ++m) {
            for (std::size_t i = 0; i < inc.steps; ++i) {
                double* row = inc.data.data() + (m * inc.steps + i) * dim;
                for (std::size_t j = 0; j < dim; j += 2) {
                    const auto [z0, z1] = normal_pair(seed, Stream::brownian, static_cast<std::uint32_t>(m),
                                                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j / 2));
                    row[j] = scale * z0;
                    if (j + 1 < dim) row[j + 1] = scale * z1;
                }
            }
        }
    });
    return inc;
}

/// Sums groups of `factor` consecutive increments: the same Brownian path
/// seen on a grid `factor` times coarser.
inline Increments coarsen_increments(const Increments& fine, std::size_t factor) {
    if (factor == 0 || fine.steps % factor != 0) {
        throw PreconditionError("coarsening factor must divide the step count");
    }
    Increments out{fine.paths, fine.steps / factor, fine.dim, fine.dt * static_cast<double>(factor), fine.seed,
                   std::vector<double>(fine.paths * (fine.steps / factor) * fine.dim, 0.0)};
    for (std::size_t m = 0; m < fine.paths; ++m) {
        for (std::size_t i = 0; i < out.steps; ++i) {
            for (std::size_t r = 0; r < factor; ++r) {
                for (std::size_t j = 0; j < fine.dim; ++j) {
                    out.data[(m * out.steps + i) * out.dim + j] += fine(m, i * factor + r, j);
                }
            }
        }
    }
    return out;
}

/// Monte Carlo batch of forward paths. states is M x (N+1) x n row-major.
struct PathBatch {
    TimeGrid grid;
    std::size_t paths = 0;
    std::size_t n = 0;
    std::vector<double> states;
    Increments increments;
    std::uint64_t seed = 0;
    std::string policy_id;

    [[nodiscard]] std::span<const double> state(std::size_t m, std::size_t i) const noexcept {
        return {states.data() + (m * (grid.steps() + 1) + i) * n, n};
    }
    [[nodiscard]] double state(std::size_t m, std::size_t i, std::size_t l) const noexcept {
        return states[(m * (grid.steps() + 1) + i) * n + l];
    }
};

/// Euler-Maruyama on the supplied increments:
///   X_{i+1} = X_i + b(t_i, X_i, u_i) dt + sigma(t_i, X_i, u_i) dW_i,  u_i = policy(t_i, X_i).
inline PathBatch simulate_forward(const ProblemSpec& spec, const ControlPolicy& policy, std::span<const double> x0,
                                  const TimeGrid& grid, Increments increments) {
    spec.validate();
    if (x0.size() != spec.n) {
        throw PreconditionError("initial state has dimension " + std::to_string(x0.size()) + ", expected " +
                                std::to_string(spec.n));
    }
    if (grid.end() > spec.horizon * (1.0 + 1e-12) || grid.end() < spec.horizon * (1.0 - 1e-12)) {
        throw PreconditionError("time grid must end at the horizon T");
    }
    if (increments.steps != grid.steps() || increments.dim != spec.d) {
        throw PreconditionError("increments do not match the grid or Brownian dimension");
    }
    const std::size_t M = increments.paths, N = grid.steps(), n = spec.n, d = spec.d, k = spec.k;
    PathBatch batch{grid, M, n, std::vector<double>(M * (N + 1) * n), std::move(increments), 0, policy.id()};
    batch.seed = batch.increments.seed;
    const double dt = grid.dt();

    parallel_for(M, [&](std::size_t begin, std::size_t end) {
        Vec u(k), b(n), sig(n * d);
        for (std::size_t m = begin; m < end; ++m) {
            double* path = batch.states.data() + m * (N + 1) * n;
            std::copy(x0.begin(), x0.end(), path);
            for (std::size_t i = 0; i < N; ++i) {
                const double t = grid.time(i);
                std::span<const double> x(path + i * n, n);
                policy(spec, t, x, u);
                spec.drift(t, x, u, b);
                spec.diffusion(t, x, u, sig);
                const auto dw = batch.increments.at(m, i);
                double* next = path + (i + 1) * n;
                for (std::size_t r = 0; r < n; ++r) {
                    double v = x[r] + b[r] * dt;
                    for (std::size_t j = 0; j < d; ++j) v += sig[r * d + j] * dw[j];
                    if (!std::isfinite(v)) {
                        throw NumericalError("non-finite state on path " + std::to_string(m) + " at step " +
                                             std::to_string(i + 1));
                    }
                    next[r] = v;
                }
            }
        }
    });
    return batch;
}

inline PathBatch simulate_forward(const ProblemSpec& spec, const ControlPolicy& policy, std::span<const double> x0,
                                  const TimeGrid& grid, std::size_t paths, std::uint64_t seed) {
    return simulate_forward(spec, policy, x0, grid, generate_increments(grid, paths, spec.d, seed));
}

/// Convenience overload taking the initial time explicitly; the grid must
/// start there.
inline PathBatch simulate_forward(const ProblemSpec& spec, const ControlPolicy& policy, double t,
                                  std::span<const double> x0, const TimeGrid& grid, std::size_t paths,
                                  std::uint64_t seed) {
    if (std::abs(grid.start() - t) > 1e-12 * (1.0 + std::abs(t))) {
        throw PreconditionError("time grid must start at the initial time");
    }
    return simulate_forward(spec, policy, x0, grid, paths, seed);
}

/// Empirical moments of a perturbed solution against a base solution,
/// E[sup |difference|^{2k}] per perturbation size, and the fitted constants
/// moment / size^{2k}.
struct PerturbationReport {
    int moment_order = 2;  // 2k
    std::vector<double> sizes;
    std::vector<double> moments;
    std::vector<double> constants;
    double fitted_constant = 0.0;
    double spread = 1.0;  // max constant / min constant
    bool pass = false;
    std::uint64_t seed = 0;
};

namespace forward_detail {

inline void validate_sizes(std::span<const double> sizes, int k) {
    if (k < 1) {
        throw PreconditionError("moment index k must be at least 1");
    }
    if (sizes.empty()) {
        throw PreconditionError("perturbation size list is empty");
    }
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (!(sizes[i] > 0.0)) {
            throw PreconditionError("perturbation sizes must be strictly positive");
        }
        if (i > 0 && !(sizes[i] < sizes[i - 1])) {
            throw PreconditionError("perturbation sizes must be strictly decreasing");
        }
    }
}

// Fills constants, fitted constant, spread and pass (constants within a
// factor 3 of each other; all-zero constants count as stable).
inline void finish_report(PerturbationReport& r) {
    r.constants.resize(r.sizes.size());
    for (std::size_t i = 0; i < r.sizes.size(); ++i) {
        r.constants[i] = r.moments[i] / std::pow(r.sizes[i], r.moment_order);
    }
    const double hi = *std::max_element(r.constants.begin(), r.constants.end());
    const double lo = *std::min_element(r.constants.begin(), r.constants.end());
    r.fitted_constant = hi;
    if (hi == 0.0) {
        r.spread = 1.0;
    } else {
        r.spread = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    }
    r.pass = std::isfinite(r.spread) && r.spread <= 3.0;
}

}  // namespace forward_detail

/// Paired simulations from x_base and x_base + size * e_1 on common random
/// numbers, starting at time s.
inline PerturbationReport perturbation_moment_probe(const ProblemSpec& spec, const ControlPolicy& policy,
                                                    std::span<const double> x_base, std::span<const double> sizes,
                                                    int k, const TimeGrid& grid, std::size_t paths,
                                                    std::uint64_t seed) {
    forward_detail::validate_sizes(sizes, k);
    const Increments inc = generate_increments(grid, paths, spec.d, seed);
    const PathBatch base = simulate_forward(spec, policy, x_base, grid, inc);
    PerturbationReport report;
    report.moment_order = 2 * k;
    report.sizes.assign(sizes.begin(), sizes.end());
    report.seed = seed;
    const std::size_t N = grid.steps(), n = spec.n;
    for (double size : sizes) {
        Vec x1(x_base.begin(), x_base.end());
        x1[0] += size;
        const PathBatch pert = simulate_forward(spec, policy, x1, grid, inc);
        double acc = 0.0;
        for (std::size_t m = 0; m < paths; ++m) {
            double sup = 0.0;
            for (std::size_t i = 0; i <= N; ++i) {
                double sq = 0.0;
                for (std::size_t l = 0; l < n; ++l) {
                    const double diff = pert.state(m, i, l) - base.state(m, i, l);
                    sq += diff * diff;
                }
                sup = std::max(sup, sq);
            }
            acc += std::pow(sup, k);
        }
        report.moments.push_back(acc / static_cast<double>(paths));
    }
    forward_detail::finish_report(report);
    return report;
}

}  // namespace rsoc
