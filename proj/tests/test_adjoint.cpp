#include "rsoc/adjoint.hpp"
#include "rsoc/registry.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

using namespace rsoc;

namespace {

const ProblemSpec& ex31() {
    static const ProblemSpec spec = builtin_problem("example31").spec;
    return spec;
}

struct Pipeline {
    ControlPolicy policy;
    PathBatch batch;
    BackwardSolution bw;
    QSolution q;
    AdjointTriple triple;
};

Pipeline run(const ProblemSpec& spec, const ControlPolicy& policy, Vec x, std::size_t N, std::size_t M,
             std::uint64_t seed) {
    auto batch = simulate_forward(spec, policy, x, TimeGrid(0.0, spec.horizon, N), M, seed);
    auto bw = solve_backward(spec, policy, batch);
    auto q = solve_q(spec, policy, batch, bw);
    auto triple = solve_pk(spec, policy, batch, bw, q);
    return {policy, std::move(batch), std::move(bw), std::move(q), std::move(triple)};
}

double max_q_error(const Pipeline& r) {
    double worst = 0.0;
    for (std::size_t m = 0; m < r.batch.paths; ++m) {
        for (std::size_t i = 0; i <= r.batch.grid.steps(); ++i) {
            worst = std::max(worst, std::abs(r.q(m, i) - std::exp(-r.batch.grid.time(i))));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("q follows e^(t - s) on example31") {
    const auto r = run(ex31(), ControlPolicy::constant({0.0}), {0.0}, 200, 200, 1);
    for (std::size_t m = 0; m < r.batch.paths; ++m) REQUIRE(r.q(m, 0) == 1.0);
    CHECK(max_q_error(r) <= 1e-3);
    CHECK(r.q.positive());
    CHECK(r.q.min_value > 0.0);
}

TEST_CASE("q error is first order in the time step") {
    const auto coarse = run(ex31(), ControlPolicy::constant({1.0}), {1.0}, 50, 500, 2);
    const auto fine = run(ex31(), ControlPolicy::constant({1.0}), {1.0}, 100, 500, 2);
    const double ratio = max_q_error(coarse) / max_q_error(fine);
    CHECK(ratio >= 1.7);
    CHECK(ratio <= 2.3);
}

TEST_CASE("a driver free of (y, z) gives q = 1") {
    const auto spec = builtin_problem("heat1d").spec;
    const auto r = run(spec, ControlPolicy::constant({0.0}), {0.3}, 20, 1000, 3);
    for (double v : r.q.q) REQUIRE(v == 1.0);
}

TEST_CASE("one Euler step of q") {
    const auto spec = builtin_problem("smooth1d").spec;  // f_y = -0.5, f_z = 0.25 u
    const auto r = run(spec, ControlPolicy::constant({0.5}), {0.5}, 1, 50, 4);
    for (std::size_t m = 0; m < 50; ++m) {
        const double dw = r.batch.increments(m, 0, 0);
        CHECK(r.q(m, 1) == Catch::Approx(1.0 - 0.5 + 0.125 * dw).margin(1e-9));
    }
}

TEST_CASE("adjoint triple along the optimal zero trajectory") {
    const auto r = run(ex31(), ControlPolicy::constant({0.0}), {0.0}, 200, 1000, 5);
    double p_err = 0.0;
    for (std::size_t m = 0; m < r.batch.paths; ++m) {
        for (std::size_t i = 0; i <= 200; ++i) {
            p_err = std::max(p_err, std::abs(r.triple.p_at(m, i) + std::exp(-r.batch.grid.time(i))));
        }
    }
    CHECK(p_err <= 2e-2);
    for (double v : r.triple.k) REQUIRE(std::abs(v) <= 1e-12);
    // Terminal condition with phi(x) = x: p(T) = -q(T).
    for (std::size_t m = 0; m < r.batch.paths; ++m) REQUIRE(r.triple.p_at(m, 200) == -r.q(m, 200));
    CHECK(std::abs(r.q(0, 200) - std::exp(-1.0)) <= 1e-3);
}

TEST_CASE("terminal identity p(T) + phi_x q(T) = 0 on every path") {
    const auto spec = builtin_problem("smooth1d").spec;
    const auto r = run(spec, ControlPolicy::constant({-0.5}), {0.5}, 20, 4000, 6);
    Vec g(1);
    for (std::size_t m = 0; m < r.batch.paths; ++m) {
        terminal_x(spec, r.batch.state(m, 20), g);
        REQUIRE(std::abs(r.triple.p_at(m, 20) + g[0] * r.q(m, 20)) <= 1e-12);
    }
    CHECK(r.q.positive());
}

TEST_CASE("null terminal and x-free driver give p = k = 0") {
    auto spec = make_expression_problem("null", 1, 1, 1, 1.0, ControlBox{{0.0}, {1.0}},
                                        ProblemSource{{"x1*u1"}, {"x1"}, "0.3*y", "0"});
    const auto r = run(spec, ControlPolicy::constant({1.0}), {1.0}, 10, 2000, 7);
    for (double v : r.triple.p) REQUIRE(v == 0.0);
    for (double v : r.triple.k) REQUIRE(v == 0.0);
}

TEST_CASE("scaling the backward data scales (p, k) and keeps q") {
    ProblemSpec scaled = ex31();
    scaled.driver = [](double, std::span<const double> x, double y, std::span<const double>,
                       std::span<const double>) { return 2.0 * x[0] - y; };
    scaled.terminal = [](std::span<const double> x) { return 2.0 * x[0]; };
    scaled.gradients.driver_x = [](double, auto, double, auto, auto, auto out) { out[0] = 2.0; };
    scaled.gradients.terminal_x = [](auto, auto out) { out[0] = 2.0; };
    const auto a = run(ex31(), ControlPolicy::constant({0.5}), {1.0}, 20, 4000, 8);
    const auto b = run(scaled, ControlPolicy::constant({0.5}), {1.0}, 20, 4000, 8);
    CHECK(a.q.q == b.q.q);
    for (std::size_t e = 0; e < a.triple.p.size(); ++e) {
        REQUIRE(std::abs(b.triple.p[e] - 2.0 * a.triple.p[e]) <= 1e-6 * std::abs(2.0 * a.triple.p[e]) + 1e-12);
    }
    for (std::size_t e = 0; e < a.triple.k.size(); ++e) {
        REQUIRE(std::abs(b.triple.k[e] - 2.0 * a.triple.k[e]) <= 1e-6 * std::abs(2.0 * a.triple.k[e]) + 1e-12);
    }
}

TEST_CASE("Hamiltonian by hand") {
    const Vec zero{0.0};
    CHECK(hamiltonian(ex31(), 0.0, Vec{1.0}, 0.0, zero, Vec{0.0}, Vec{-1.0}, 1.0, zero) == -1.0);
    CHECK(hamiltonian(ex31(), 0.3, Vec{2.0}, 0.7, Vec{0.4}, Vec{0.5}, zero, 0.0, zero) == 0.0);
    for (double u : {0.0, 0.4, 1.0}) {
        CHECK(hamiltonian(ex31(), 0.1, Vec{0.0}, 1.5, zero, Vec{u}, Vec{-3.0}, 2.0, Vec{5.0}) == 3.0);
    }
    CHECK_THROWS_AS(hamiltonian(ex31(), 0.0, Vec{1.0}, 0.0, zero, Vec{2.0}, zero, 1.0, zero), PreconditionError);
}

TEST_CASE("analytic and finite-difference H_u agree") {
    const auto exact = builtin_problem("smooth1d").spec;
    ProblemSpec fd = exact;
    fd.gradients.drift_u = nullptr;
    Vec a(1), b(1);
    for (double u : {-1.0, -0.3, 0.0, 0.8, 1.0}) {
        hamiltonian_u(exact, 0.2, Vec{0.7}, 0.4, Vec{-0.6}, Vec{u}, Vec{-1.3}, 0.9, Vec{0.5}, a);
        hamiltonian_u(fd, 0.2, Vec{0.7}, 0.4, Vec{-0.6}, Vec{u}, Vec{-1.3}, 0.9, Vec{0.5}, b);
        CAPTURE(u);
        CHECK(a[0] == Catch::Approx(b[0]).margin(1e-8));
    }
    // Degenerate control axis: zero derivative.
    const auto heat = builtin_problem("heat1d").spec;
    ProblemSpec heat_fd = heat;
    heat_fd.gradients = {};
    hamiltonian_u(heat_fd, 0.0, Vec{0.1}, 0.0, Vec{0.0}, Vec{0.0}, Vec{1.0}, 1.0, Vec{1.0}, b);
    CHECK(b[0] == 0.0);
}

TEST_CASE("maximum condition holds exactly on the optimal zero trajectory") {
    const auto r = run(ex31(), ControlPolicy::constant({0.0}), {0.0}, 50, 1000, 9);
    const auto mc = check_maximum_condition(ex31(), r.policy, r.batch, r.bw, r.triple, 11, 1e-2);
    CHECK(mc.pass);
    CHECK(mc.global_min == 0.0);
    CHECK(mc.grid_points == 11);
    for (double v : mc.residual) REQUIRE(v == 0.0);
}

TEST_CASE("maximum condition detects the suboptimal control from x = 1") {
    const auto r = run(ex31(), ControlPolicy::constant({0.0}), {1.0}, 50, 20000, 10);
    const auto mc = check_maximum_condition(ex31(), r.policy, r.batch, r.bw, r.triple, 2, 1e-2);
    CHECK_FALSE(mc.pass);
    CHECK(mc.grid_points == 2);
    CHECK(mc.global_min < -1e-2);
    // H_u = p X < 0 along positive paths, so moving to u = 1 lowers H.
    for (double v : mc.residual) CHECK(v < -0.1);
}

TEST_CASE("the optimal feedback passes the maximum condition from x = 1") {
    const auto bp = builtin_problem("example31");
    const auto policy = ControlPolicy::feedback(*bp.optimal_feedback, "optimal");
    const auto r = run(ex31(), policy, {1.0}, 50, 20000, 11);
    const auto mc = check_maximum_condition(ex31(), policy, r.batch, r.bw, r.triple, 11, 1e-2);
    CHECK(mc.pass);
}

TEST_CASE("adjoint operations reject mismatched inputs") {
    const auto r = run(ex31(), ControlPolicy::constant({0.0}), {1.0}, 10, 500, 12);
    const auto other = run(ex31(), ControlPolicy::constant({0.0}), {1.0}, 20, 500, 12);
    CHECK_THROWS_AS(solve_q(ex31(), r.policy, r.batch, other.bw), PreconditionError);
    CHECK_THROWS_AS(solve_q(ex31(), ControlPolicy::constant({1.0}), r.batch, r.bw), PreconditionError);
    CHECK_THROWS_AS(solve_pk(ex31(), r.policy, r.batch, r.bw, other.q), PreconditionError);
    CHECK_THROWS_AS(check_maximum_condition(ex31(), r.policy, r.batch, r.bw, r.triple, 1, 1e-2), PreconditionError);
    ProblemSpec no_fd = ex31();
    no_fd.gradients.driver_y = nullptr;
    no_fd.allow_finite_differences = false;
    CHECK_THROWS_AS(solve_q(no_fd, r.policy, r.batch, r.bw), PreconditionError);
}
