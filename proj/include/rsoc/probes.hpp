#pragma once

// Statistical probes of the standing assumptions on the coefficients:
//   H1  b, sigma Lipschitz in x with linear growth
//   H2  f Lipschitz in (x, y, z), phi Lipschitz, linear growth of f(., 0, 0) and phi
//   H3  bounded first derivatives of b, sigma, f, phi
// These are sampled lower bounds on the true constants, not proofs.

#include "rsoc/error.hpp"
#include "rsoc/parallel.hpp"
#include "rsoc/problem.hpp"
#include "rsoc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace rsoc {

enum class Assumption { H1, H2, H3 };

inline const char* to_string(Assumption a) {
    switch (a) {
        case Assumption::H1: return "H1";
        case Assumption::H2: return "H2";
        case Assumption::H3: return "H3";
    }
    return "?";
}

inline constexpr double kProbeSafetyFactor = 1.05;

struct ProbeTerm {
    std::string name;
    double lipschitz = 0.0;
    double growth = 0.0;
};

struct AssumptionProbeReport {
    Assumption assumption = Assumption::H1;
    std::size_t samples = 0;
    double lipschitz_ratio = 0.0;
    double growth_ratio = 0.0;
    double threshold = 0.0;
    bool pass = false;
    std::vector<ProbeTerm> terms;
};

namespace probe_detail {

inline double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// Draws for one probe sample, all keyed by (seed, sample index, draw index).
class SampleDraws {
public:
    SampleDraws(std::uint64_t seed, std::size_t sample) : seed_(seed), sample_(static_cast<std::uint32_t>(sample)) {}

    double uniform() {
        if (!have_spare_) {
            const auto [a, b] = uniform_pair(seed_, Stream::probe, sample_, counter_++, 0);
            spare_ = b;
            have_spare_ = true;
            return a;
        }
        have_spare_ = false;
        return spare_;
    }

    double normal() {
        const auto [a, b] = normal_pair(seed_, Stream::probe, sample_, counter_++, 1);
        (void)b;
        return a;
    }

    double in_interval(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform in the closed ball of the given radius.
    Vec in_ball(std::size_t dim, double radius) {
        Vec v(dim);
        for (double& c : v) c = normal();
        const double len = norm(v);
        const double r = radius * std::pow(uniform(), 1.0 / static_cast<double>(dim));
        for (double& c : v) c = len > 0.0 ? c * r / len : 0.0;
        return v;
    }

private:
    std::uint64_t seed_;
    std::uint32_t sample_;
    std::uint32_t counter_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

struct SampleResult {
    std::vector<double> lipschitz;
    std::vector<double> growth;
};

}  // namespace probe_detail

/// Draws `sample_count` random points with |x|, |x^| <= radius and reports
/// the largest observed Lipschitz and growth ratios for the coefficients
/// covered by `assumption`. Deterministic given the seed.
inline AssumptionProbeReport probe_assumptions(const ProblemSpec& spec, Assumption assumption,
                                               std::size_t sample_count, double radius, std::uint64_t seed) {
    using namespace probe_detail;
    if (sample_count == 0) {
        throw PreconditionError("probe needs at least one sample");
    }
    if (!(radius > 0.0)) {
        throw PreconditionError("probe radius must be positive");
    }
    spec.validate();
    const std::size_t n = spec.n, d = spec.d, k = spec.k;

    std::vector<std::string> names;
    switch (assumption) {
        case Assumption::H1: names = {"b", "sigma"}; break;
        case Assumption::H2: names = {"f", "phi"}; break;
        case Assumption::H3: names = {"b_x", "sigma_x", "f_x", "f_y", "f_z", "phi_x"}; break;
    }
    std::vector<SampleResult> results(sample_count);

    parallel_for(sample_count, [&](std::size_t begin, std::size_t end) {
        for (std::size_t m = begin; m < end; ++m) {
            SampleDraws draw(seed, m);
            const double s = draw.in_interval(0.0, spec.horizon);
            const Vec x = draw.in_ball(n, radius);
            const Vec xh = draw.in_ball(n, radius);
            Vec u(k);
            for (std::size_t l = 0; l < k; ++l) u[l] = draw.in_interval(spec.control.lo[l], spec.control.hi[l]);
            const double y = draw.in_interval(-radius, radius);
            const double yh = draw.in_interval(-radius, radius);
            Vec z(d), zh(d);
            for (std::size_t j = 0; j < d; ++j) z[j] = draw.in_interval(-radius, radius);
            for (std::size_t j = 0; j < d; ++j) zh[j] = draw.in_interval(-radius, radius);

            SampleResult& r = results[m];
            try {
                const double dx = dist(x, xh);
                switch (assumption) {
                    case Assumption::H1: {
                        Vec b(n), bh(n), sg(n * d), sgh(n * d);
                        spec.drift(s, x, u, b);
                        spec.drift(s, xh, u, bh);
                        spec.diffusion(s, x, u, sg);
                        spec.diffusion(s, xh, u, sgh);
                        const double lb = dx > 0.0 ? dist(b, bh) / dx : 0.0;
                        const double ls = dx > 0.0 ? dist(sg, sgh) / dx : 0.0;
                        const double gb = std::max(norm(b) / (1.0 + norm(x)), norm(bh) / (1.0 + norm(xh)));
                        const double gs = std::max(norm(sg) / (1.0 + norm(x)), norm(sgh) / (1.0 + norm(xh)));
                        const double gsum = std::max((norm(b) + norm(sg)) / (1.0 + norm(x)),
                                                     (norm(bh) + norm(sgh)) / (1.0 + norm(xh)));
                        r.lipschitz = {lb, ls, lb + ls};
                        r.growth = {gb, gs, gsum};
                        break;
                    }
                    case Assumption::H2: {
                        const double f1 = spec.driver(s, x, y, z, u);
                        const double f2 = spec.driver(s, xh, yh, zh, u);
                        const double dxyz = dx + std::abs(y - yh) + dist(z, zh);
                        const double p1 = spec.terminal(x);
                        const double p2 = spec.terminal(xh);
                        const Vec zero(d, 0.0);
                        const double f0 = spec.driver(s, x, 0.0, zero, u);
                        const double f0h = spec.driver(s, xh, 0.0, zero, u);
                        const double lf = dxyz > 0.0 ? std::abs(f1 - f2) / dxyz : 0.0;
                        const double lp = dx > 0.0 ? std::abs(p1 - p2) / dx : 0.0;
                        const double gf = std::max(std::abs(f0) / (1.0 + norm(x)), std::abs(f0h) / (1.0 + norm(xh)));
                        const double gp = std::max(std::abs(p1) / (1.0 + norm(x)), std::abs(p2) / (1.0 + norm(xh)));
                        const double gsum = std::max((std::abs(f0) + std::abs(p1)) / (1.0 + norm(x)),
                                                     (std::abs(f0h) + std::abs(p2)) / (1.0 + norm(xh)));
                        r.lipschitz = {lf, lp, std::max(lf, lp)};
                        r.growth = {gf, gp, gsum};
                        break;
                    }
                    case Assumption::H3: {
                        Vec bx(n * n), sx(n * d * n), fx(n), fz(d), px(n);
                        drift_x(spec, s, x, u, bx);
                        diffusion_x(spec, s, x, u, sx);
                        driver_x(spec, s, x, y, z, u, fx);
                        const double fy = driver_y(spec, s, x, y, z, u);
                        driver_z(spec, s, x, y, z, u, fz);
                        terminal_x(spec, x, px);
                        const std::vector<double> norms{norm(bx), norm(sx), norm(fx), std::abs(fy), norm(fz), norm(px)};
                        r.lipschitz = norms;
                        r.lipschitz.push_back(*std::max_element(norms.begin(), norms.end()));
                        r.growth.assign(norms.size() + 1, 0.0);
                        break;
                    }
                }
            } catch (const DomainError& e) {
                throw DomainError(std::string(e.what()) + " at sample " + std::to_string(m) + ": s = " +
                                  std::to_string(s) + ", x = " + detail::format_point(x) +
                                  ", x^ = " + detail::format_point(xh) + ", u = " + detail::format_point(u));
            }
        }
    });

    AssumptionProbeReport report;
    report.assumption = assumption;
    report.samples = sample_count;
    report.threshold = spec.lipschitz_hint * kProbeSafetyFactor;
    report.terms.resize(names.size());
    for (std::size_t t = 0; t < names.size(); ++t) report.terms[t].name = names[t];
    for (const auto& r : results) {
        for (std::size_t t = 0; t < names.size(); ++t) {
            report.terms[t].lipschitz = std::max(report.terms[t].lipschitz, r.lipschitz[t]);
            report.terms[t].growth = std::max(report.terms[t].growth, r.growth[t]);
        }
        report.lipschitz_ratio = std::max(report.lipschitz_ratio, r.lipschitz.back());
        report.growth_ratio = std::max(report.growth_ratio, r.growth.back());
    }
    report.pass = report.lipschitz_ratio <= report.threshold && report.growth_ratio <= report.threshold;
    return report;
}

}  // namespace rsoc
