#include "rsoc/oracles.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace rsoc;

TEST_CASE("example31 value") {
    CHECK(example31_value(0.5, -1.0, 1.0) == 1.0);
    CHECK(example31_value(0.0, 1.0, 1.0) == -2.0);
    for (double tt : {0.0, 0.3, 1.0}) CHECK(example31_value(tt, 0.0, 1.0) == 0.0);
    CHECK_THROWS_AS(example31_value(1.5, 0.0, 1.0), PreconditionError);
    CHECK_THROWS_AS(example31_value(-0.1, 0.0, 1.0), PreconditionError);
}

TEST_CASE("example31 adjoint triple") {
    const auto a = example31_adjoint(0.0, 0.0);
    CHECK(a.p == -1.0);
    CHECK(a.q == 1.0);
    CHECK(a.k == 0.0);
    const auto b = example31_adjoint(0.0, 1.0);
    CHECK(b.p == Catch::Approx(-std::exp(-1.0)));
    CHECK(b.q == Catch::Approx(std::exp(-1.0)));
    CHECK(b.k == 0.0);
    for (double s : {0.2, 0.5, 0.9}) {
        const auto c = example31_adjoint(0.1, s);
        CHECK(c.p / c.q == -1.0);
    }
    CHECK_THROWS_AS(example31_adjoint(0.5, 0.2), PreconditionError);
}

TEST_CASE("example31 jets") {
    const auto j0 = example31_jets(0.0, 1.0);
    CHECK(j0.subjet.empty());
    CHECK(j0.superjet.lo == -2.0);
    CHECK(j0.superjet.hi == -1.0);
    const auto jT = example31_jets(1.0, 1.0);
    CHECK(jT.superjet.singleton());
    CHECK(jT.superjet.lo == -1.0);
    for (double s : {0.1, 0.4, 0.8}) CHECK(example31_jets(s, 1.0).subjet.empty());
}

TEST_CASE("example31 classical residual") {
    CHECK(example31_hjb_residual(0.5, -1.0, 1.0, 1e-3) == 0.0);
    CHECK(example31_hjb_residual(0.5, 1.0, 1.0, 1e-3) == 0.0);
    CHECK_THROWS_AS(example31_hjb_residual(0.5, 0.0, 1.0, 1e-3), DomainError);
    CHECK_THROWS_AS(example31_hjb_residual(0.5, 1e-4, 1.0, 1e-3), DomainError);
    CHECK_THROWS_AS(example31_hjb_residual(0.5, 1.0, 1.0, 0.0), PreconditionError);
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> t(0.0, 2.0), x(-5.0, 5.0);
    for (int i = 0; i < 200; ++i) {
        const double xv = x(gen);
        if (std::abs(xv) < 1e-2) continue;
        REQUIRE(std::abs(example31_hjb_residual(t(gen), xv, 2.0, 1e-3)) <= 1e-12);
    }
}

TEST_CASE("example31 value is Lipschitz with C = T + 1 and grows linearly") {
    std::mt19937_64 gen(6);
    for (double T : {0.5, 1.0, 3.0}) {
        std::uniform_real_distribution<double> t(0.0, T), x(-10.0, 10.0);
        for (int i = 0; i < 500; ++i) {
            const double tt = t(gen), a = x(gen), b = x(gen);
            const double va = example31_value(tt, a, T), vb = example31_value(tt, b, T);
            REQUIRE(std::abs(va - vb) <= (T + 1.0) * std::abs(a - b) + 1e-12);
            REQUIRE(std::abs(va) <= (T + 1.0) * (1.0 + std::abs(a)));
        }
    }
}

TEST_CASE("adjoint triple solves its ODE system") {
    // dq/ds = -q and dp/ds = q; the central-difference error is O(h^2).
    const double t = 0.2;
    double prev = 0.0;
    for (double h : {1e-2, 5e-3}) {
        double worst = 0.0;
        for (double s : {0.3, 0.5, 0.8}) {
            const auto up = example31_adjoint(t, s + h), dn = example31_adjoint(t, s - h), mid = example31_adjoint(t, s);
            worst = std::max(worst, std::abs((up.q - dn.q) / (2 * h) + mid.q));
            worst = std::max(worst, std::abs((up.p - dn.p) / (2 * h) - mid.q));
        }
        CHECK(worst <= 2.0 * h * h);
        if (prev > 0.0) CHECK(prev / worst == Catch::Approx(4.0).epsilon(0.05));
        prev = worst;
    }
}

TEST_CASE("p / q lies in the superjet for every s") {
    for (int i = 0; i <= 20; ++i) {
        const double s = 0.05 * i;
        const auto a = example31_adjoint(0.0, s);
        const auto j = example31_jets(s, 1.0);
        CHECK(j.superjet.signed_distance(a.p / a.q) <= 0.0);
    }
}

TEST_CASE("terminal consistency") {
    for (double x : {-2.0, -0.5, 0.0, 0.7, 3.0}) CHECK(example31_value(1.0, x, 1.0) == -x);
}
