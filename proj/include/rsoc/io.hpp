#pragma once

// Export formats.
//
// Path dump (little-endian, native doubles):
//   bytes 0..7   magic "RSOCPATH"
//   uint32       format version (1)
//   uint32       reserved (0)
//   uint64       paths M, steps N, state dim n, noise dim d, seed
//   double       t_start, t_end
//   uint64       length of the policy id, then its bytes
//   double[M * (N+1) * n]  states, row-major (path, step, component)
//   double[M * N * d]      Brownian increments, row-major (path, step, component)
//
// CSV numbers use 17 significant digits. JSON numbers use the shortest
// representation that reads back to the same double.

#include "rsoc/adjoint.hpp"
#include "rsoc/backward.hpp"
#include "rsoc/error.hpp"
#include "rsoc/forward.hpp"
#include "rsoc/hjb.hpp"
#include "rsoc/jets.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

namespace rsoc {

using Json = nlohmann::ordered_json;

inline constexpr char kPathMagic[8] = {'R', 'S', 'O', 'C', 'P', 'A', 'T', 'H'};
inline constexpr std::uint32_t kPathFormatVersion = 1;

namespace io_detail {

template <class T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw PreconditionError("path dump is truncated");
    return v;
}

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) throw PreconditionError("cannot open '" + path + "' for writing");
    return out;
}

}  // namespace io_detail

inline void write_path_batch(const std::string& path, const PathBatch& b) {
    auto out = io_detail::open_out(path, std::ios::out | std::ios::binary);
    out.write(kPathMagic, sizeof kPathMagic);
    io_detail::put(out, kPathFormatVersion);
    io_detail::put(out, std::uint32_t{0});
    io_detail::put(out, static_cast<std::uint64_t>(b.paths));
    io_detail::put(out, static_cast<std::uint64_t>(b.grid.steps()));
    io_detail::put(out, static_cast<std::uint64_t>(b.n));
    io_detail::put(out, static_cast<std::uint64_t>(b.increments.dim));
    io_detail::put(out, static_cast<std::uint64_t>(b.seed));
    io_detail::put(out, b.grid.start());
    io_detail::put(out, b.grid.end());
    io_detail::put(out, static_cast<std::uint64_t>(b.policy_id.size()));
    out.write(b.policy_id.data(), static_cast<std::streamsize>(b.policy_id.size()));
    out.write(reinterpret_cast<const char*>(b.states.data()),
              static_cast<std::streamsize>(b.states.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(b.increments.data.data()),
              static_cast<std::streamsize>(b.increments.data.size() * sizeof(double)));
    if (!out) throw PreconditionError("failed writing '" + path + "'");
}

inline PathBatch read_path_batch(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionError("cannot open '" + path + "'");
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kPathMagic, sizeof magic) != 0) {
        throw PreconditionError("'" + path + "' is not a path dump");
    }
    if (io_detail::get<std::uint32_t>(in) != kPathFormatVersion) {
        throw PreconditionError("unsupported path dump version");
    }
    (void)io_detail::get<std::uint32_t>(in);
    const auto M = io_detail::get<std::uint64_t>(in);
    const auto N = io_detail::get<std::uint64_t>(in);
    const auto n = io_detail::get<std::uint64_t>(in);
    const auto d = io_detail::get<std::uint64_t>(in);
    const auto seed = io_detail::get<std::uint64_t>(in);
    const auto t0 = io_detail::get<double>(in);
    const auto t1 = io_detail::get<double>(in);
    const auto id_len = io_detail::get<std::uint64_t>(in);
    if (id_len > 4096) throw PreconditionError("path dump header is corrupt");
    std::string id(id_len, '\0');
    in.read(id.data(), static_cast<std::streamsize>(id_len));
    const TimeGrid grid(t0, t1, N);
    Increments inc{M, N, d, grid.dt(), seed, std::vector<double>(M * N * d)};
    std::vector<double> states(M * (N + 1) * n);
    in.read(reinterpret_cast<char*>(states.data()), static_cast<std::streamsize>(states.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(inc.data.data()), static_cast<std::streamsize>(inc.data.size() * sizeof(double)));
    if (!in) throw PreconditionError("path dump is truncated");
    return PathBatch{grid, M, n, std::move(states), std::move(inc), seed, std::move(id)};
}

/// t, then mean and std of every state component.
inline void write_forward_csv(std::ostream& out, const PathBatch& b) {
    out << "t";
    for (std::size_t l = 0; l < b.n; ++l) out << ",mean_x" << l + 1 << ",std_x" << l + 1;
    out << '\n';
    std::vector<double> col(b.paths);
    for (std::size_t i = 0; i <= b.grid.steps(); ++i) {
        out << io_detail::num(b.grid.time(i));
        for (std::size_t l = 0; l < b.n; ++l) {
            for (std::size_t m = 0; m < b.paths; ++m) col[m] = b.state(m, i, l);
            out << ',' << io_detail::num(io_detail::mean_of(col)) << ',' << io_detail::num(io_detail::std_of(col));
        }
        out << '\n';
    }
}

/// t, mean Y, std Y, mean |Z| (Z at the last node is reported as 0).
inline void write_backward_csv(std::ostream& out, const BackwardSolution& s) {
    out << "t,mean_y,std_y,mean_abs_z\n";
    const std::size_t N = s.grid.steps();
    std::vector<double> col(s.paths);
    for (std::size_t i = 0; i <= N; ++i) {
        for (std::size_t m = 0; m < s.paths; ++m) col[m] = s.y(m, i);
        double zabs = 0.0;
        if (i < N) {
            for (std::size_t m = 0; m < s.paths; ++m) {
                double z2 = 0.0;
                for (std::size_t j = 0; j < s.d; ++j) z2 += s.z(m, i, j) * s.z(m, i, j);
                zabs += std::sqrt(z2);
            }
            zabs /= static_cast<double>(s.paths);
        }
        out << io_detail::num(s.grid.time(i)) << ',' << io_detail::num(io_detail::mean_of(col)) << ','
            << io_detail::num(io_detail::std_of(col)) << ',' << io_detail::num(zabs) << '\n';
    }
}

/// t, mean p (first component), mean q, mean |k|, maximum-condition residual.
inline void write_adjoint_csv(std::ostream& out, const AdjointTriple& a, const MaxConditionReport* mc) {
    out << "t,mean_p,mean_q,mean_abs_k,max_condition_residual\n";
    const std::size_t N = a.grid.steps();
    for (std::size_t i = 0; i <= N; ++i) {
        double p = 0.0, q = 0.0, k = 0.0;
        for (std::size_t m = 0; m < a.paths; ++m) {
            p += a.p_at(m, i, 0);
            q += a.q_at(m, i);
            if (i < N) {
                double k2 = 0.0;
                for (double v : a.k_at_node(m, i)) k2 += v * v;
                k += std::sqrt(k2);
            }
        }
        const double inv = 1.0 / static_cast<double>(a.paths);
        out << io_detail::num(a.grid.time(i)) << ',' << io_detail::num(p * inv) << ',' << io_detail::num(q * inv)
            << ',' << io_detail::num(k * inv) << ','
            << (mc && i < mc->residual.size() ? io_detail::num(mc->residual[i]) : std::string("")) << '\n';
    }
}

/// (t, x, v) rows over the stored slices.
inline void write_value_grid_csv(std::ostream& out, const ValueGrid& g) {
    out << "t,x,v\n";
    for (std::size_t s = 0; s < g.slices(); ++s) {
        const std::string t = io_detail::num(g.slice_time(s));
        for (std::size_t j = 0; j <= g.J; ++j) out << t << ',' << io_detail::num(g.x(j)) << ',' << io_detail::num(g.at(s, j)) << '\n';
    }
}

inline void write_connection_csv(std::ostream& out, const ConnectionReport& r) {
    out << "s,pq_inv_median,pq_inv_iqr,superjet_kind,superjet_lo,superjet_hi,subjet_kind,subjet_lo,subjet_hi,"
           "member_fraction,member,subjet_ok,pass\n";
    for (const auto& n : r.nodes) {
        out << io_detail::num(n.s) << ',' << io_detail::num(n.pq_inv_median) << ',' << io_detail::num(n.pq_inv_iqr)
            << ',' << to_string(n.superjet.kind) << ',' << io_detail::num(n.superjet.lo) << ','
            << io_detail::num(n.superjet.hi) << ',' << to_string(n.subjet.kind) << ','
            << io_detail::num(n.subjet.lo) << ',' << io_detail::num(n.subjet.hi) << ','
            << io_detail::num(n.member_fraction) << ',' << n.member << ',' << n.subjet_ok << ',' << n.pass << '\n';
    }
}

inline Json to_json(const CostReport& r) {
    return Json{{"J", r.J}, {"stderr", r.standard_error}, {"M", r.M}, {"N", r.N}, {"seed", r.seed},
                {"policy", r.policy_id}};
}

inline Json to_json(const MaxConditionReport& r) {
    return Json{{"times", r.times},           {"residual", r.residual}, {"standard_error", r.standard_error},
                {"global_min", r.global_min}, {"worst_step", r.worst_step}, {"tol_mc", r.tol_mc},
                {"grid_points", r.grid_points}, {"pass", r.pass}};
}

inline Json value_grid_metadata(const ValueGrid& g) {
    return Json{{"L", g.L},
                {"J", g.J},
                {"N", g.grid.steps()},
                {"control_grid_size", g.control_grid_size},
                {"cfl_ratio", g.cfl_ratio},
                {"boundary_rule", g.boundary_rule},
                {"stored_slices", g.slices()}};
}

inline Json to_json(const JetSet& s) {
    if (s.empty()) return Json{{"kind", to_string(s.kind)}, {"lo", nullptr}, {"hi", nullptr}};
    return Json{{"kind", to_string(s.kind)}, {"lo", s.lo}, {"hi", s.hi}};
}

inline Json to_json(const ConnectionReport& r) {
    Json nodes = Json::array();
    for (const auto& n : r.nodes) {
        nodes.push_back(Json{{"s", n.s},
                             {"pq_inv_median", n.pq_inv_median},
                             {"pq_inv_iqr", n.pq_inv_iqr},
                             {"superjet", to_json(n.superjet)},
                             {"subjet", to_json(n.subjet)},
                             {"superjet_distance", std::isfinite(n.superjet_distance) ? Json(n.superjet_distance)
                                                                                      : Json(nullptr)},
                             {"member_fraction", n.member_fraction},
                             {"member", n.member},
                             {"subjet_ok", n.subjet_ok},
                             {"paths_checked", n.paths_checked},
                             {"pass", n.pass}});
    }
    return Json{{"nodes", nodes}, {"tol_conn", r.tol_conn}, {"tol_jet", r.tol_jet}, {"pass", r.pass},
                {"note", r.note}};
}

inline Json to_json(const ViscosityCheckReport& r) {
    auto opt = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
    Json probes = Json::array();
    for (const auto& p : r.probes) {
        probes.push_back(Json{{"t", p.t},
                              {"x", p.x},
                              {"sub_residual", opt(p.sub_residual)},
                              {"super_residual", opt(p.super_residual)},
                              {"sub_vacuous", p.sub_vacuous},
                              {"super_vacuous", p.super_vacuous},
                              {"pde_residual", p.pde_residual}});
    }
    return Json{{"probes", probes}, {"fit_radius", r.fit_radius}, {"worst_violation", r.worst_violation}};
}

}  // namespace rsoc
