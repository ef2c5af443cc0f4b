#include "rsoc/backward.hpp"
#include "rsoc/parallel.hpp"
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

// Discrete expectation of the scheme for Y = a_i X on example31 under a
// constant control c: E[X_{i+1} | X_i] = (1 + c dt) X_i, driver x - y.
double scheme_slope(double c, std::size_t N, bool implicit) {
    const double dt = 1.0 / static_cast<double>(N);
    double a = 1.0;
    for (std::size_t i = 0; i < N; ++i) {
        const double cont = a * (1.0 + c * dt);
        a = implicit ? (cont + dt) / (1.0 + dt) : cont + (1.0 - cont) * dt;
    }
    return a;
}

struct ThreadGuard {
    unsigned saved = max_threads().load();
    ~ThreadGuard() { set_max_threads(saved); }
};

}  // namespace

TEST_CASE("terminal values are phi(X_N) and Y(t) is a constant") {
    const auto policy = ControlPolicy::constant({0.5});
    const auto batch = simulate_forward(ex31(), policy, Vec{1.0}, TimeGrid(0.0, 1.0, 20), 4000, 2);
    const auto sol = solve_backward(ex31(), policy, batch);
    for (std::size_t m = 0; m < batch.paths; ++m) {
        REQUIRE(sol.y(m, 20) == ex31().terminal(batch.state(m, 20)));
        REQUIRE(sol.y(m, 0) == sol.y(0, 0));
    }
    CHECK(sol.basis_size[0] == 1);
    CHECK(sol.basis_size[5] == 4);
    for (double c : sol.condition) CHECK(c <= kMaxRegressionCondition);
    double mean = 0.0;
    for (double v : sol.initial_samples) mean += v;
    CHECK(mean / 4000.0 == Catch::Approx(sol.initial_value()).epsilon(1e-12));
}

TEST_CASE("example31 with u = 0 from x = 1 gives Y(0) = 1") {
    const auto policy = ControlPolicy::constant({0.0});
    const auto batch = simulate_forward(ex31(), policy, Vec{1.0}, TimeGrid(0.0, 1.0, 50), 50000, 1);
    const auto sol = solve_backward(ex31(), policy, batch, 3);
    CHECK(std::abs(sol.initial_value() - 1.0) <= 0.02);
}

TEST_CASE("example31 with u = 1 from x = 1 gives Y(0) = 2") {
    const auto policy = ControlPolicy::constant({1.0});
    const TimeGrid grid(0.0, 1.0, 50);
    const auto explicit_r = cost(ex31(), policy, Vec{1.0}, grid, 50000, 1);
    const auto implicit_r = cost(ex31(), policy, Vec{1.0}, grid, 50000, 1, BackwardOptions{3, 2});
    CHECK(std::abs(-implicit_r.J - 2.0) <= 0.03);
    // Each scheme is unbiased for its own discrete recursion; the explicit
    // one carries an O(dt) bias of about 0.03 at N = 50.
    CHECK(std::abs(-explicit_r.J - scheme_slope(1.0, 50, false)) <= 3.0 * explicit_r.standard_error);
    CHECK(std::abs(-implicit_r.J - scheme_slope(1.0, 50, true)) <= 3.0 * implicit_r.standard_error);
    CHECK(scheme_slope(1.0, 50, false) == Catch::Approx(1.9702).margin(1e-3));
}

TEST_CASE("example31 from the origin has Y = Z = 0 exactly") {
    for (double c : {0.0, 1.0}) {
        const auto policy = ControlPolicy::constant({c});
        const auto batch = simulate_forward(ex31(), policy, Vec{0.0}, TimeGrid(0.0, 1.0, 30), 2000, 4);
        const auto sol = solve_backward(ex31(), policy, batch);
        for (double v : sol.Y) REQUIRE(v == 0.0);
        for (double v : sol.Z) REQUIRE(v == 0.0);
        const auto r = cost(ex31(), policy, 0.0, Vec{0.0}, 30, 2000, 4);
        CHECK(r.J == 0.0);
        CHECK_FALSE(std::signbit(r.J));
        CHECK(r.standard_error == 0.0);
    }
}

TEST_CASE("cost reports J = -Y(t) with its sizes") {
    const auto r = cost(ex31(), ControlPolicy::constant({0.0}), 0.0, Vec{1.0}, 50, 50000, 1);
    CHECK(std::abs(r.J + 1.0) <= 0.02);
    CHECK(r.standard_error > 0.0);
    CHECK(r.standard_error < 0.02);
    CHECK(r.M == 50000);
    CHECK(r.N == 50);
    CHECK(r.seed == 1);
    CHECK(r.policy_id == "const:0");

    const auto at_end = cost(ex31(), ControlPolicy::constant({0.0}), 1.0, Vec{3.0}, 50, 100, 1);
    CHECK(at_end.J == -3.0);
    CHECK(at_end.standard_error == 0.0);
    CHECK_THROWS_AS(cost(ex31(), ControlPolicy::constant({0.0}), 1.5, Vec{3.0}, 50, 100, 1), PreconditionError);
}

TEST_CASE("cost is seed-deterministic and independent of the worker count") {
    ThreadGuard guard;
    const auto policy = ControlPolicy::constant({0.5});
    set_max_threads(1);
    const auto batch = simulate_forward(ex31(), policy, Vec{1.0}, TimeGrid(0.0, 1.0, 10), 3000, 9);
    const auto a = solve_backward(ex31(), policy, batch);
    set_max_threads(4);
    const auto b = solve_backward(ex31(), policy, batch);
    CHECK(a.Y == b.Y);
    CHECK(a.Z == b.Z);
    const auto c1 = cost(ex31(), policy, Vec{1.0}, TimeGrid(0.0, 1.0, 10), 3000, 9);
    set_max_threads(1);
    const auto c2 = cost(ex31(), policy, Vec{1.0}, TimeGrid(0.0, 1.0, 10), 3000, 9);
    CHECK(c1.J == c2.J);
    CHECK(c1.standard_error == c2.standard_error);
}

TEST_CASE("value envelope picks the best constant policy") {
    const std::vector<ControlPolicy> policies{ControlPolicy::constant({0.0}), ControlPolicy::constant({0.5}),
                                              ControlPolicy::constant({1.0})};
    const auto env = value_envelope(ex31(), policies, 0.0, {Vec{1.0}, Vec{-1.0}}, 50, 20000, 3);
    REQUIRE(env.size() == 2);
    CHECK(env[0].policy_id == "const:1");
    CHECK(std::abs(env[0].J + 2.0) <= 0.05);
    CHECK(env[1].policy_id == "const:0");
    CHECK(std::abs(env[1].J - 1.0) <= 0.03);
    CHECK_THROWS_AS(value_envelope(ex31(), {}, 0.0, {Vec{1.0}}, 10, 100, 1), PreconditionError);
}

TEST_CASE("raising the terminal function by delta raises Y(0) by delta e^-(T-t)") {
    const double delta = 0.25;
    ProblemSpec shifted = ex31();
    shifted.terminal = [delta](std::span<const double> x) { return x[0] + delta; };
    const auto policy = ControlPolicy::constant({0.0});
    const TimeGrid grid(0.0, 1.0, 50);
    const auto base = cost(ex31(), policy, Vec{1.0}, grid, 20000, 5);
    const auto up = cost(shifted, policy, Vec{1.0}, grid, 20000, 5);
    const double shift = base.J - up.J;
    CHECK(shift > 0.0);
    CHECK(std::abs(shift - delta * std::exp(-1.0)) <= 2.0 * base.standard_error);
}

TEST_CASE("the discrete martingale residual has zero mean") {
    const auto spec = builtin_problem("smooth1d").spec;
    const auto policy = ControlPolicy::constant({0.5});
    const std::size_t M = 20000, N = 20;
    const auto batch = simulate_forward(spec, policy, Vec{0.5}, TimeGrid(0.0, 1.0, N), M, 6);
    const auto sol = solve_backward(spec, policy, batch, BackwardOptions{3, 2});
    const double dt = batch.grid.dt();
    for (std::size_t i = 0; i < N; ++i) {
        double s = 0.0, s2 = 0.0, zs = 0.0, zs2 = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            const double zdw = sol.z(m, i, 0) * batch.increments(m, i, 0);
            const double f = spec.driver(batch.grid.time(i), batch.state(m, i), sol.y(m, i), sol.z(m, i), Vec{0.5});
            const double r = sol.y(m, i + 1) - sol.y(m, i) + f * dt - zdw;
            s += r;
            s2 += r * r;
            zs += zdw;
            zs2 += zdw * zdw;
        }
        const double mean = s / M;
        const double se = std::sqrt(std::max(0.0, s2 / M - mean * mean) / M) +
                          std::sqrt(std::max(0.0, zs2 / M - (zs / M) * (zs / M)) / M);
        CAPTURE(i, mean, se);
        CHECK(std::abs(mean) <= 4.0 * se);
    }
}

TEST_CASE("doubling paths and steps moves Y(0) by less than two standard errors") {
    const auto policy = ControlPolicy::constant({0.0});
    const std::size_t M = 20000, N = 25;
    const auto fine = generate_increments(TimeGrid(0.0, 1.0, 2 * N), 2 * M, 1, 12);
    Increments coarse = coarsen_increments(fine, 2);
    coarse.paths = M;
    coarse.data.resize(M * N);
    const auto small = solve_backward(ex31(), policy, simulate_forward(ex31(), policy, Vec{1.0}, TimeGrid(0.0, 1.0, N), coarse));
    const auto large = solve_backward(ex31(), policy, simulate_forward(ex31(), policy, Vec{1.0}, TimeGrid(0.0, 1.0, 2 * N), fine));
    const double se = bootstrap_standard_error(small.initial_samples, 12);
    CHECK(std::abs(small.initial_value() - large.initial_value()) <= 2.0 * se);
}

TEST_CASE("backward perturbation moments scale with the perturbation size") {
    const std::vector<double> sizes{0.1, 0.05, 0.025};
    const auto r = backward_perturbation_probe(ex31(), ControlPolicy::constant({0.0}), Vec{1.0}, sizes, 1,
                                               TimeGrid(0.0, 1.0, 20), 10000, 3);
    CHECK(r.y.pass);
    CHECK(r.z.pass);
    CHECK(r.pass);
    CHECK(r.y.spread <= 3.0);
    CHECK(r.z.spread <= 3.0);
    for (double m : r.z.moments) CHECK(m > 0.0);

    const auto single = backward_perturbation_probe(ex31(), ControlPolicy::constant({0.0}), Vec{1.0},
                                                    std::vector<double>{0.1}, 1, TimeGrid(0.0, 1.0, 10), 2000, 3);
    CHECK(single.y.constants.size() == 1);
    CHECK(single.pass);
}

TEST_CASE("null backward data gives zero backward perturbations") {
    auto spec = make_expression_problem("null", 1, 1, 1, 1.0, ControlBox{{0.0}, {1.0}},
                                        ProblemSource{{"x1*u1"}, {"x1"}, "0", "0"});
    const auto r = backward_perturbation_probe(spec, ControlPolicy::constant({1.0}), Vec{1.0},
                                               std::vector<double>{0.1, 0.05}, 1, TimeGrid(0.0, 1.0, 10), 2000, 3);
    for (double c : r.y.constants) CHECK(c == 0.0);
    for (double c : r.z.constants) CHECK(c == 0.0);
    CHECK(r.pass);
}

TEST_CASE("backward solver rejects bad inputs") {
    const auto policy = ControlPolicy::constant({0.0});
    const auto batch = simulate_forward(ex31(), policy, Vec{1.0}, TimeGrid(0.0, 1.0, 5), 100, 1);
    CHECK_THROWS_AS(solve_backward(builtin_problem("coupled2d").spec, policy, batch), PreconditionError);
    CHECK_THROWS_AS(solve_backward(ex31(), ControlPolicy::constant({1.0}), batch), PreconditionError);
    CHECK_THROWS_AS(solve_backward(ex31(), policy, batch, -1), PreconditionError);

    // Too few paths for a cubic basis.
    const auto tiny = simulate_forward(ex31(), policy, Vec{1.0}, TimeGrid(0.0, 1.0, 5), 6, 1);
    CHECK_THROWS_AS(solve_backward(ex31(), policy, tiny), PreconditionError);

    // Two identical state components make the design singular.
    auto twin = make_expression_problem("twin", 2, 1, 1, 1.0, ControlBox{{0.0}, {1.0}},
                                        ProblemSource{{"0", "0"}, {"x1", "x2"}, "0", "x1 + x2"});
    const auto tb = simulate_forward(twin, policy, Vec{1.0, 1.0}, TimeGrid(0.0, 1.0, 5), 500, 1);
    try {
        (void)solve_backward(twin, policy, tb, 1);
        FAIL("expected a rank-deficiency error");
    } catch (const NumericalError& e) {
        CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("rank-deficient regression at step 4"));
    }
}
