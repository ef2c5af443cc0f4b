#include "rsoc/forward.hpp"
#include "rsoc/parallel.hpp"
#include "rsoc/registry.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

using namespace rsoc;

namespace {

struct Moments {
    double mean = 0.0;
    double sd = 0.0;
};

Moments node_moments(const PathBatch& b, std::size_t i) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t m = 0; m < b.paths; ++m) {
        const double v = b.state(m, i, 0);
        s += v;
        s2 += v * v;
    }
    const double M = static_cast<double>(b.paths);
    const double mean = s / M;
    return {mean, std::sqrt(std::max(0.0, s2 / M - mean * mean))};
}

struct ThreadGuard {
    unsigned saved = max_threads().load();
    ~ThreadGuard() { set_max_threads(saved); }
};

}  // namespace

TEST_CASE("time grid nodes") {
    const TimeGrid g(0.25, 1.0, 3);
    CHECK(g.dt() == 0.25);
    CHECK(g.time(0) == 0.25);
    CHECK(g.time(3) == 1.0);
    CHECK(g.nearest(0.74) == 2);
    CHECK_THROWS_AS(TimeGrid(1.0, 1.0, 4), PreconditionError);
    CHECK_THROWS_AS(TimeGrid(0.0, 1.0, 0), PreconditionError);
    CHECK_THROWS_AS(TimeGrid(-0.5, 1.0, 2), PreconditionError);
}

TEST_CASE("Brownian increments have the right mean and variance") {
    const TimeGrid g(0.0, 1.0, 100);
    const std::size_t M = 100000;
    const auto inc = generate_increments(g, M, 1, 42);
    REQUIRE(inc.data.size() == M * 100);
    double worst = 0.0, var_sum = 0.0;
    for (std::size_t i = 0; i < 100; ++i) {
        double s = 0.0, s2 = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            s += inc(m, i, 0);
            s2 += inc(m, i, 0) * inc(m, i, 0);
        }
        worst = std::max(worst, std::abs(s / M));
        var_sum += s2 / M;
    }
    CHECK(worst <= 4.0 * std::sqrt(g.dt()) / std::sqrt(double(M)));
    CHECK(var_sum / 100.0 == Catch::Approx(g.dt()).epsilon(0.01));
}

TEST_CASE("smallest increment batch and bit-exact regeneration") {
    const auto one = generate_increments(TimeGrid(0.0, 1.0, 1), 1, 1, 5);
    CHECK(one.data.size() == 1);
    const TimeGrid g(0.0, 1.0, 16);
    const auto a = generate_increments(g, 300, 3, 9);
    const auto b = generate_increments(g, 300, 3, 9);
    CHECK(a.data == b.data);
    const auto c = generate_increments(g, 300, 3, 10);
    CHECK(a.data != c.data);
    CHECK_THROWS_AS(generate_increments(g, 0, 1, 1), PreconditionError);
}

TEST_CASE("coarsened increments are sums of fine ones") {
    const TimeGrid g(0.0, 1.0, 8);
    const auto fine = generate_increments(g, 4, 2, 1);
    const auto coarse = coarsen_increments(fine, 4);
    CHECK(coarse.steps == 2);
    CHECK(coarse.dt == 0.5);
    CHECK(coarse(3, 1, 1) ==
          Catch::Approx(fine(3, 4, 1) + fine(3, 5, 1) + fine(3, 6, 1) + fine(3, 7, 1)).margin(1e-15));
    CHECK_THROWS_AS(coarsen_increments(fine, 3), PreconditionError);
}

TEST_CASE("example31 from the origin stays at the origin") {
    const auto spec = builtin_problem("example31").spec;
    const auto batch =
        simulate_forward(spec, ControlPolicy::constant({0.0}), Vec{0.0}, TimeGrid(0.0, 1.0, 50), 1000, 3);
    for (double v : batch.states) REQUIRE(v == 0.0);
    CHECK(batch.policy_id == "const:0");
    CHECK(batch.seed == 3);
}

TEST_CASE("driftless example31 dynamics are a martingale") {
    const auto spec = builtin_problem("example31").spec;
    const std::size_t M = 100000;
    const auto batch = simulate_forward(spec, ControlPolicy::constant({0.0}), Vec{1.0}, TimeGrid(0.0, 1.0, 100), M, 17);
    for (std::size_t m = 0; m < M; ++m) REQUIRE(batch.state(m, 0, 0) == 1.0);
    const double sqrtM = std::sqrt(double(M));
    const auto end = node_moments(batch, 100);
    CHECK(std::abs(end.mean - 1.0) <= 3.0 * end.sd / sqrtM);
    for (std::size_t i = 0; i <= 100; ++i) {
        const auto mo = node_moments(batch, i);
        CHECK(std::abs(mo.mean - 1.0) <= 4.0 * mo.sd / sqrtM + 1e-15);
    }
}

TEST_CASE("example31 with u = 1 grows like e^(T - t) on average") {
    const auto spec = builtin_problem("example31").spec;
    const std::size_t M = 100000;
    const auto batch = simulate_forward(spec, ControlPolicy::constant({1.0}), Vec{1.0}, TimeGrid(0.0, 1.0, 100), M, 23);
    const auto end = node_moments(batch, 100);
    // Euler gives E X(T) = (1 + dt)^N exactly; the check uses the continuous value.
    CHECK(std::abs(end.mean - std::exp(1.0)) <= 3.0 * end.sd / std::sqrt(double(M)));
}

TEST_CASE("policies are clamped onto the control box") {
    const auto spec = builtin_problem("example31").spec;
    const auto over = ControlPolicy::constant({3.0});
    Vec u(1);
    over(spec, 0.0, Vec{1.0}, u);
    CHECK(u[0] == 1.0);
    const auto fb = ControlPolicy::feedback([](double, std::span<const double> x, std::span<double> out) { out[0] = -x[0]; },
                                            "neg");
    fb(spec, 0.0, Vec{0.3}, u);
    CHECK(u[0] == 0.0);
    fb(spec, 0.0, Vec{-0.3}, u);
    CHECK(u[0] == Catch::Approx(0.3));
}

TEST_CASE("path batches do not depend on the worker count") {
    ThreadGuard guard;
    const auto spec = builtin_problem("coupled2d").spec;
    const TimeGrid g(0.0, 1.0, 20);
    set_max_threads(1);
    const auto a = simulate_forward(spec, ControlPolicy::constant({0.3}), Vec{0.5, -0.5}, g, 3000, 77);
    set_max_threads(4);
    const auto b = simulate_forward(spec, ControlPolicy::constant({0.3}), Vec{0.5, -0.5}, g, 3000, 77);
    CHECK(a.states == b.states);
    CHECK(a.increments.data == b.increments.data);
}

TEST_CASE("Euler-Maruyama has strong order one half on multiplicative noise") {
    const auto spec = builtin_problem("example31").spec;
    const auto policy = ControlPolicy::constant({0.0});
    const std::size_t M = 20000;
    const auto fine = generate_increments(TimeGrid(0.0, 1.0, 400), M, 1, 31);
    const auto x400 = simulate_forward(spec, policy, Vec{1.0}, TimeGrid(0.0, 1.0, 400), fine);
    const auto x200 = simulate_forward(spec, policy, Vec{1.0}, TimeGrid(0.0, 1.0, 200), coarsen_increments(fine, 2));
    const auto x100 = simulate_forward(spec, policy, Vec{1.0}, TimeGrid(0.0, 1.0, 100), coarsen_increments(fine, 4));
    double e1 = 0.0, e2 = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        const double a = x100.state(m, 100, 0) - x200.state(m, 200, 0);
        const double b = x200.state(m, 200, 0) - x400.state(m, 400, 0);
        e1 += a * a;
        e2 += b * b;
    }
    const double ratio = std::sqrt(e1 / e2);
    CHECK(ratio >= 1.2);
    CHECK(ratio <= 1.8);
}

TEST_CASE("non-finite states abort with path and step") {
    auto spec = make_expression_problem("blowup", 1, 1, 1, 1.0, ControlBox{{0.0}, {1.0}},
                                        ProblemSource{{"exp(exp(x1))"}, {"0"}, "0", "x1"});
    try {
        (void)simulate_forward(spec, ControlPolicy::constant({0.0}), Vec{10.0}, TimeGrid(0.0, 1.0, 4), 3, 1);
        FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
        CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("path 0 at step 1"));
    }
}

TEST_CASE("simulate_forward checks its inputs") {
    const auto spec = builtin_problem("example31").spec;
    const auto p = ControlPolicy::constant({0.0});
    CHECK_THROWS_AS(simulate_forward(spec, p, Vec{1.0, 2.0}, TimeGrid(0.0, 1.0, 4), 3, 1), PreconditionError);
    CHECK_THROWS_AS(simulate_forward(spec, p, Vec{1.0}, TimeGrid(0.0, 2.0, 4), 3, 1), PreconditionError);
    CHECK_THROWS_AS(simulate_forward(spec, p, 0.5, Vec{1.0}, TimeGrid(0.0, 1.0, 4), 3, 1), PreconditionError);
    CHECK_NOTHROW(simulate_forward(spec, p, 0.5, Vec{1.0}, TimeGrid(0.5, 1.0, 4), 3, 1));
    CHECK_THROWS_AS(simulate_forward(spec, ControlPolicy::constant({0.0, 1.0}), Vec{1.0}, TimeGrid(0.0, 1.0, 4), 3, 1),
                    PreconditionError);
}

TEST_CASE("forward perturbation moments scale with the perturbation size") {
    const auto spec = builtin_problem("example31").spec;
    const std::vector<double> sizes{0.1, 0.05, 0.025};
    const auto r = perturbation_moment_probe(spec, ControlPolicy::constant({0.0}), Vec{1.0}, sizes, 1,
                                             TimeGrid(0.0, 1.0, 50), 20000, 8);
    CHECK(r.pass);
    CHECK(r.moment_order == 2);
    CHECK(r.seed == 8);
    REQUIRE(r.moments.size() == 3);
    for (double m : r.moments) CHECK(m >= 0.0);
    CHECK(r.spread <= 3.0);
    // Linear dynamics: X^ = size * X / x, so the fitted constant is E sup X^2.
    CHECK(r.constants[0] == Catch::Approx(r.constants[2]).epsilon(1e-6));

    const auto later = perturbation_moment_probe(spec, ControlPolicy::constant({1.0}), Vec{0.5}, sizes, 2,
                                                 TimeGrid(0.5, 1.0, 25), 5000, 8);
    CHECK(later.pass);
    CHECK(later.moment_order == 4);
}

TEST_CASE("frozen dynamics give moments equal to size^(2k)") {
    const auto spec = builtin_problem("frozen").spec;
    const std::vector<double> sizes{0.5, 0.25};
    const auto r = perturbation_moment_probe(spec, ControlPolicy::constant({0.0}), Vec{0.0}, sizes, 1,
                                             TimeGrid(0.0, 1.0, 10), 10, 1);
    CHECK(r.moments[0] == 0.25);
    CHECK(r.moments[1] == 0.0625);
    CHECK(r.pass);
}

TEST_CASE("perturbation sizes must be positive and decreasing") {
    const auto spec = builtin_problem("example31").spec;
    const auto p = ControlPolicy::constant({0.0});
    const TimeGrid g(0.0, 1.0, 10);
    CHECK_THROWS_AS(perturbation_moment_probe(spec, p, Vec{1.0}, std::vector<double>{0.0}, 1, g, 10, 1),
                    PreconditionError);
    CHECK_THROWS_AS(perturbation_moment_probe(spec, p, Vec{1.0}, std::vector<double>{0.1, 0.2}, 1, g, 10, 1),
                    PreconditionError);
    CHECK_THROWS_AS(perturbation_moment_probe(spec, p, Vec{1.0}, std::vector<double>{0.1}, 0, g, 10, 1),
                    PreconditionError);
}
