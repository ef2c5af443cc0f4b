#pragma once

// Pipeline driver behind the CLI: problem loading, stage orchestration,
// artifact files and the summary JSON.

#include "rsoc/adjoint.hpp"
#include "rsoc/backward.hpp"
#include "rsoc/config.hpp"
#include "rsoc/error.hpp"
#include "rsoc/forward.hpp"
#include "rsoc/hjb.hpp"
#include "rsoc/io.hpp"
#include "rsoc/jets.hpp"
#include "rsoc/oracles.hpp"
#include "rsoc/parallel.hpp"
#include "rsoc/registry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace rsoc {

/// Invalid experiment configuration (CLI exit status 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {"forward", "backward", "envelope", "adjoint", "hjb", "jets"};
    return names;
}

/// Tolerance on |J - V| when a closed-form value and the optimal policy are available.
inline constexpr double kValueTolerance = 3e-2;
inline constexpr double kDefaultTolHjb = 5e-2;
inline constexpr double kDefaultTolMc = 1e-2;
inline constexpr std::size_t kEnvelopeGridPoints = 5;

struct ExperimentConfig {
    std::string builtin;
    std::string problem_path;
    std::vector<std::string> stages;
    std::size_t M = 20000;
    std::size_t N = 50;
    double L = 2.0;
    std::size_t J = 200;
    int p_deg = 3;
    std::size_t ugrid = 11;
    std::uint64_t seed = 1;
    double tol_jet = kDefaultTolJet;
    double tol_conn = kDefaultTolConn;
    double tol_mc = kDefaultTolMc;
    double tol_hjb = kDefaultTolHjb;
    std::string out_dir;
    bool csv = true;
    bool json = true;
    unsigned threads = 1;
    std::optional<double> t0;
    std::optional<Vec> x0;
    std::string policy;  // "", "optimal" or "const:u1,u2,..."
    bool dump_paths = false;
};

namespace experiment_detail {

template <class T>
void require_range(const char* name, T v, T lo, T hi) {
    if (!(v >= lo && v <= hi)) {
        std::ostringstream msg;
        msg << "--" << name << " = " << v << " is outside [" << lo << ", " << hi << "]";
        throw ConfigError(msg.str());
    }
}

inline bool has(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace experiment_detail

inline void validate_config(const ExperimentConfig& c) {
    using experiment_detail::has;
    using experiment_detail::require_range;
    if (c.builtin.empty() == c.problem_path.empty()) {
        throw ConfigError("exactly one of --builtin and --problem is required");
    }
    if (c.stages.empty()) throw ConfigError("no stage selected (use --stage or --all)");
    for (std::size_t i = 0; i < c.stages.size(); ++i) {
        if (!has(stage_names(), c.stages[i])) throw ConfigError("unknown stage '" + c.stages[i] + "'");
        for (std::size_t j = 0; j < i; ++j) {
            if (c.stages[j] == c.stages[i]) throw ConfigError("stage '" + c.stages[i] + "' selected twice");
        }
    }
    const std::vector<std::pair<std::string, std::vector<std::string>>> deps = {
        {"backward", {"forward"}}, {"envelope", {"backward"}}, {"adjoint", {"backward"}}, {"jets", {"adjoint", "hjb"}}};
    for (const auto& [stage, needs] : deps) {
        if (!has(c.stages, stage)) continue;
        for (const auto& need : needs) {
            if (!has(c.stages, need)) {
                throw ConfigError("stage '" + stage + "' requires stage '" + need + "'; select it explicitly");
            }
        }
    }
    require_range<std::size_t>("M", c.M, 2, 100000000);
    require_range<std::size_t>("N", c.N, 1, 1000000);
    require_range<std::size_t>("J", c.J, 4, 100000);
    require_range<double>("L", c.L, 1e-6, 1e6);
    require_range<int>("pdeg", c.p_deg, 0, 8);
    require_range<std::size_t>("ugrid", c.ugrid, 2, 1001);
    require_range<double>("tol-jet", c.tol_jet, 1e-12, 1.0);
    require_range<double>("tol-conn", c.tol_conn, 1e-12, 1.0);
    require_range<double>("tol-mc", c.tol_mc, 1e-12, 1.0);
    require_range<double>("tol-hjb", c.tol_hjb, 1e-12, 1e3);
    require_range<unsigned>("threads", c.threads, 1, 1024);
    if (!c.policy.empty() && c.policy != "optimal" && c.policy.rfind("const:", 0) != 0) {
        throw ConfigError("--policy must be 'optimal' or 'const:u1,...'");
    }
}

struct LoadedProblem {
    ProblemSpec spec;
    std::optional<FeedbackFn> optimal_feedback;
    std::function<double(double, double)> exact_value;
    double t0 = 0.0;
    Vec x0;
    bool example31 = false;
};

inline LoadedProblem load_problem(const ExperimentConfig& c) {
    LoadedProblem p;
    if (!c.builtin.empty()) {
        BuiltinProblem b;
        try {
            b = builtin_problem(c.builtin);
        } catch (const PreconditionError& e) {
            throw ConfigError(e.what());
        }
        p.spec = std::move(b.spec);
        p.optimal_feedback = std::move(b.optimal_feedback);
        p.exact_value = std::move(b.exact_value);
        p.t0 = b.default_t0;
        p.x0 = b.default_x0;
        p.example31 = c.builtin == "example31";
    } else {
        std::ifstream in(c.problem_path);
        if (!in) throw ConfigError("cannot read problem file '" + c.problem_path + "'");
        std::stringstream text;
        text << in.rdbuf();
        p.spec = parse_problem(text.str());  // ParseError carries line and column
    }
    if (p.x0.size() != p.spec.n) p.x0.assign(p.spec.n, 0.0);
    if (c.t0) p.t0 = *c.t0;
    if (c.x0) p.x0 = *c.x0;
    if (!(p.t0 >= 0.0 && p.t0 < p.spec.horizon)) throw ConfigError("--t0 must lie in [0, T)");
    if (p.x0.size() != p.spec.n) {
        throw ConfigError("--x0 has " + std::to_string(p.x0.size()) + " entries; the problem has n = " +
                          std::to_string(p.spec.n));
    }
    return p;
}

inline ControlPolicy resolve_policy(const ExperimentConfig& c, const LoadedProblem& p) {
    if (c.policy.empty() || c.policy == "optimal") {
        if (p.optimal_feedback) return ControlPolicy::feedback(*p.optimal_feedback, "optimal");
        if (c.policy == "optimal") throw ConfigError("problem has no known optimal feedback; use --policy const:...");
        return ControlPolicy::constant(p.spec.control.midpoint());
    }
    Vec u;
    std::stringstream list(c.policy.substr(6));
    std::string item;
    while (std::getline(list, item, ',')) {
        try {
            std::size_t used = 0;
            u.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("--policy: '" + item + "' is not a number");
        }
    }
    if (u.size() != p.spec.k) throw ConfigError("--policy needs k = " + std::to_string(p.spec.k) + " values");
    if (!p.spec.control.contains(u)) throw ConfigError("--policy control lies outside the control box");
    return ControlPolicy::constant(u);
}

struct StageOutcome {
    std::string name;
    Json metrics = Json::object();
    bool pass = false;
    bool skipped = false;
    std::string error;
};

struct ExperimentResult {
    Json summary;
    int exit_code = 0;
    std::vector<StageOutcome> stages;
};

/// Intermediate products shared between stages.
struct PipelineState {
    std::optional<PathBatch> batch;
    std::optional<BackwardSolution> bw;
    std::optional<AdjointTriple> triple;
    std::optional<ValueGrid> grid;
};

namespace experiment_detail {

inline void write_text(const ExperimentConfig& c, const std::string& file, const std::function<void(std::ostream&)>& fn) {
    if (c.out_dir.empty()) return;
    auto out = io_detail::open_out((std::filesystem::path(c.out_dir) / file).string());
    fn(out);
}

inline void write_json(const ExperimentConfig& c, const std::string& file, const Json& j) {
    if (c.out_dir.empty() || !c.json) return;
    write_text(c, file, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
}

inline void write_csv(const ExperimentConfig& c, const std::string& file, const std::function<void(std::ostream&)>& fn) {
    if (c.csv) write_text(c, file, fn);
}

// Adding +0.0 maps -0.0 to 0.0 so the artifacts never print "-0".
inline double unsigned_zero(double v) { return v + 0.0; }

inline bool is_optimal(const ControlPolicy& policy) { return policy.id() == "optimal"; }

inline std::vector<double> check_times(double t0, double T) {
    return {t0, t0 + 0.25 * (T - t0), t0 + 0.5 * (T - t0), t0 + 0.75 * (T - t0)};
}

inline void stage_forward(const ExperimentConfig& c, const LoadedProblem& p, const ControlPolicy& policy,
                          PipelineState& st, StageOutcome& out) {
    st.batch = simulate_forward(p.spec, policy, p.t0, p.x0, TimeGrid(p.t0, p.spec.horizon, c.N), c.M, c.seed);
    const auto& b = *st.batch;
    Vec mean(p.spec.n, 0.0), sd(p.spec.n, 0.0);
    for (std::size_t l = 0; l < p.spec.n; ++l) {
        std::vector<double> col(b.paths);
        for (std::size_t m = 0; m < b.paths; ++m) col[m] = b.state(m, c.N, l);
        mean[l] = io_detail::mean_of(col);
        sd[l] = io_detail::std_of(col);
    }
    out.metrics = Json{{"paths", c.M}, {"steps", c.N}, {"t0", p.t0}, {"x0", p.x0}, {"policy", policy.id()},
                       {"mean_terminal", mean}, {"std_terminal", sd}};
    out.pass = true;
    write_csv(c, "forward.csv", [&](std::ostream& o) { write_forward_csv(o, b); });
    if (c.dump_paths && !c.out_dir.empty()) {
        write_path_batch((std::filesystem::path(c.out_dir) / "paths.bin").string(), b);
    }
}

inline void stage_backward(const ExperimentConfig& c, const LoadedProblem& p, const ControlPolicy& policy,
                           PipelineState& st, StageOutcome& out) {
    st.bw = solve_backward(p.spec, policy, *st.batch, BackwardOptions{c.p_deg, 0});
    const auto& bw = *st.bw;
    CostReport cr;
    cr.J = unsigned_zero(-bw.initial_value());
    cr.standard_error = bootstrap_standard_error(bw.initial_samples, c.seed);
    cr.M = c.M;
    cr.N = c.N;
    cr.seed = c.seed;
    cr.policy_id = policy.id();
    const double cond = bw.condition.empty() ? 1.0 : *std::max_element(bw.condition.begin(), bw.condition.end());
    out.metrics = Json{{"Y0", bw.initial_value()}, {"cost", to_json(cr)}, {"regression_condition", cond}};
    out.pass = true;
    if (p.exact_value && p.spec.n == 1 && is_optimal(policy)) {
        const double v = unsigned_zero(p.exact_value(p.t0, p.x0[0]));
        const double err = std::abs(cr.J - v);
        out.metrics["reference_value"] = v;
        out.metrics["value_error"] = err;
        out.pass = err <= kValueTolerance + 3.0 * cr.standard_error;
    }
    write_csv(c, "backward.csv", [&](std::ostream& o) { write_backward_csv(o, bw); });
    write_json(c, "cost.json", to_json(cr));
}

inline void stage_envelope(const ExperimentConfig& c, const LoadedProblem& p, StageOutcome& out) {
    std::vector<ControlPolicy> policies;
    for (const Vec& u : p.spec.control.grid(std::min(c.ugrid, kEnvelopeGridPoints))) {
        policies.push_back(ControlPolicy::constant(u));
    }
    const auto env = value_envelope(p.spec, policies, p.t0, {p.x0}, c.N, c.M, c.seed, BackwardOptions{c.p_deg, 0});
    const auto& e = env.front();
    out.metrics = Json{{"J", e.J}, {"stderr", e.standard_error}, {"policy", e.policy_id},
                       {"policies", policies.size()}};
    out.pass = std::isfinite(e.J);
    if (p.exact_value && p.spec.n == 1) {
        // Constant controls cannot beat the value function.
        const double v = unsigned_zero(p.exact_value(p.t0, p.x0[0]));
        out.metrics["reference_value"] = v;
        out.pass = out.pass && e.J >= v - (kValueTolerance + 3.0 * e.standard_error);
    }
}

inline void stage_adjoint(const ExperimentConfig& c, const LoadedProblem& p, const ControlPolicy& policy,
                          PipelineState& st, StageOutcome& out) {
    const auto& batch = *st.batch;
    const auto& bw = *st.bw;
    const BackwardOptions opts{c.p_deg, 0};
    const QSolution q = solve_q(p.spec, policy, batch, bw);
    st.triple = solve_pk(p.spec, policy, batch, bw, q, opts);
    const auto& tr = *st.triple;
    const auto mc = check_maximum_condition(p.spec, policy, batch, bw, tr, c.ugrid, c.tol_mc);
    double k_max = 0.0;
    for (double v : tr.k) k_max = std::max(k_max, std::abs(v));
    out.metrics = Json{{"q_min", q.min_value},
                       {"q_nonpositive", q.nonpositive},
                       {"max_abs_k", k_max},
                       {"max_condition", to_json(mc)}};
    out.pass = q.positive() && mc.pass;
    if (p.example31 && p.x0[0] == 0.0) {
        // Along X = 0 every admissible control leaves the state at 0.
        double q_err = 0.0, p_err = 0.0;
        for (std::size_t m = 0; m < batch.paths; ++m) {
            for (std::size_t i = 0; i <= batch.grid.steps(); ++i) {
                const auto ref = example31_adjoint(p.t0, batch.grid.time(i), p.spec.horizon);
                q_err = std::max(q_err, std::abs(tr.q_at(m, i) - ref.q));
                p_err = std::max(p_err, std::abs(tr.p_at(m, i) - ref.p));
            }
        }
        out.metrics["oracle"] = Json{{"q_max_error", q_err}, {"p_max_error", p_err}, {"k_max_abs", k_max}};
    }
    write_csv(c, "adjoint.csv", [&](std::ostream& o) { write_adjoint_csv(o, tr, &mc); });
    write_json(c, "max_condition.json", to_json(mc));
}

/// Max error at the initial slice over |x| <= L / 2, away from the
/// extrapolated boundary layer.
inline double hjb_max_error(const LoadedProblem& p, const ValueGrid& g) {
    double err = 0.0;
    for (std::size_t j = 1; j < g.J; ++j) {
        if (std::abs(g.x(j)) > 0.5 * g.L * (1.0 + 1e-12)) continue;
        err = std::max(err, std::abs(g.at(0, j) - p.exact_value(g.slice_time(0), g.x(j))));
    }
    return err;
}

inline void stage_hjb(const ExperimentConfig& c, const LoadedProblem& p, PipelineState& st, StageOutcome& out) {
    st.grid = solve_hjb_fd(p.spec, c.L, c.J, c.ugrid, p.t0);
    const auto& g = *st.grid;
    const auto reg0 = regularity_probe(g, g.slice_time(0));
    const auto reg = regularity_probe(g);
    out.metrics = Json{{"grid", value_grid_metadata(g)},
                       {"lipschitz_t0", reg0.lipschitz},
                       {"growth_t0", reg0.growth},
                       {"lipschitz", reg.lipschitz},
                       {"growth", reg.growth}};
    out.pass = true;
    if (p.exact_value) {
        const double err = hjb_max_error(p, g);
        out.metrics["max_error"] = err;
        out.metrics["tol_hjb"] = c.tol_hjb;
        out.pass = err <= c.tol_hjb;
    }
    if (g.slices() >= 5 && g.J >= 4) {
        const double tm = 0.5 * (g.grid.start() + g.grid.end());
        const auto vc = viscosity_check(g, p.spec, {{tm, -0.5 * c.L}, {tm, 0.0}, {tm, 0.5 * c.L}}, 2);
        out.metrics["viscosity"] = to_json(vc);
    }
    write_csv(c, "value_grid.csv", [&](std::ostream& o) { write_value_grid_csv(o, g); });
    write_json(c, "value_grid.json", value_grid_metadata(g));
}

inline void stage_jets(const ExperimentConfig& c, const LoadedProblem& p, PipelineState& st, StageOutcome& out) {
    ConnectionOptions opts;
    opts.tol_jet = c.tol_jet;
    const auto rep = verify_connection(p.spec, *st.batch, *st.bw, *st.triple, *st.grid,
                                       check_times(p.t0, p.spec.horizon), c.tol_conn, opts);
    out.metrics = to_json(rep);
    out.pass = rep.pass;
    write_csv(c, "connection.csv", [&](std::ostream& o) { write_connection_csv(o, rep); });
    write_json(c, "connection.json", out.metrics);
}

inline Json config_json(const ExperimentConfig& c, const LoadedProblem& p, const ControlPolicy& policy) {
    return Json{{"M", c.M},           {"N", c.N},           {"L", c.L},
                {"J", c.J},           {"p_deg", c.p_deg},   {"control_grid_size", c.ugrid},
                {"tol_jet", c.tol_jet}, {"tol_conn", c.tol_conn}, {"tol_mc", c.tol_mc},
                {"tol_hjb", c.tol_hjb}, {"t0", p.t0},         {"x0", p.x0},
                {"policy", policy.id()}, {"stages", c.stages}};
}

}  // namespace experiment_detail

/// Runs the selected stages in dependency order. Throws ConfigError or
/// ParseError for invalid input; stage failures are reported in the result.
inline ExperimentResult run_experiment(const ExperimentConfig& config) {
    using namespace experiment_detail;
    validate_config(config);
    const LoadedProblem p = load_problem(config);
    if ((has(config.stages, "hjb") || has(config.stages, "jets")) && p.spec.n != 1) {
        throw ConfigError("stages hjb and jets need a one-dimensional state; problem has n = " +
                          std::to_string(p.spec.n));
    }
    const ControlPolicy policy = resolve_policy(config, p);
    if (!config.out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(config.out_dir, ec);
        if (ec) throw ConfigError("cannot create output directory '" + config.out_dir + "'");
    }
    set_max_threads(config.threads);

    PipelineState st;
    ExperimentResult res;
    bool failed = false;
    std::vector<std::string> broken;  // stages that errored or were skipped
    const std::vector<std::pair<std::string, std::vector<std::string>>> deps = {
        {"forward", {}}, {"backward", {"forward"}}, {"envelope", {"backward"}},
        {"adjoint", {"backward"}}, {"hjb", {}}, {"jets", {"adjoint", "hjb"}}};
    for (const auto& [name, needs] : deps) {
        if (!has(config.stages, name)) continue;
        StageOutcome out;
        out.name = name;
        const bool blocked = std::any_of(needs.begin(), needs.end(), [&](const std::string& s) { return has(broken, s); });
        if (blocked) {
            out.skipped = true;
            out.error = "skipped: a required stage failed";
            broken.push_back(name);
        } else {
            try {
                if (name == "forward") stage_forward(config, p, policy, st, out);
                if (name == "backward") stage_backward(config, p, policy, st, out);
                if (name == "envelope") stage_envelope(config, p, out);
                if (name == "adjoint") stage_adjoint(config, p, policy, st, out);
                if (name == "hjb") stage_hjb(config, p, st, out);
                if (name == "jets") stage_jets(config, p, st, out);
            } catch (const Error& e) {
                out.pass = false;
                out.error = e.what();
                broken.push_back(name);
            }
        }
        failed = failed || !out.pass;
        res.stages.push_back(std::move(out));
    }

    Json stages = Json::array();
    for (const auto& s : res.stages) {
        Json j{{"name", s.name}, {"metrics", s.metrics}, {"pass", s.pass}};
        if (!s.error.empty()) j["error"] = s.error;
        if (s.skipped) j["skipped"] = true;
        stages.push_back(std::move(j));
    }
    res.summary = Json{{"problem", p.spec.name},
                       {"seed", config.seed},
                       {"config", config_json(config, p, policy)},
                       {"stages", stages},
                       {"pass", !failed}};
    res.exit_code = failed ? 1 : 0;
    write_json(config, "summary.json", res.summary);
    return res;
}

struct ConvergenceRow {
    double value = 0.0;
    double metric = 0.0;
};

struct ConvergenceTable {
    std::string parameter;
    std::string metric;
    std::vector<ConvergenceRow> rows;
};

/// Reruns the relevant stages for each parameter value with a fixed seed.
/// J drives the HJB error; M, N and p_deg drive the backward cost.
inline ConvergenceTable convergence_table(const ExperimentConfig& config, const std::string& parameter,
                                          const std::vector<double>& values) {
    using namespace experiment_detail;
    if (parameter != "M" && parameter != "N" && parameter != "J" && parameter != "p_deg") {
        throw ConfigError("convergence parameter must be one of M, N, J, p_deg (got '" + parameter + "')");
    }
    if (values.empty()) throw ConfigError("convergence needs at least one value");
    ExperimentConfig base = config;
    base.stages = parameter == "J" ? std::vector<std::string>{"hjb"} : std::vector<std::string>{"forward", "backward"};
    base.out_dir.clear();
    validate_config(base);
    const LoadedProblem p = load_problem(base);
    const ControlPolicy policy = resolve_policy(base, p);
    set_max_threads(base.threads);

    ConvergenceTable table;
    table.parameter = parameter;
    const bool reference = static_cast<bool>(p.exact_value) && p.spec.n == 1;
    if (parameter == "J") {
        table.metric = reference ? "max_error" : "value_at_x0";
    } else {
        table.metric = reference && is_optimal(policy) ? "value_error" : "J";
    }
    for (double v : values) {
        if (!(v >= 0.0) || v != std::floor(v)) throw ConfigError("convergence values must be nonnegative integers");
        ExperimentConfig c = base;
        if (parameter == "M") c.M = static_cast<std::size_t>(v);
        if (parameter == "N") c.N = static_cast<std::size_t>(v);
        if (parameter == "J") c.J = static_cast<std::size_t>(v);
        if (parameter == "p_deg") c.p_deg = static_cast<int>(v);
        validate_config(c);
        PipelineState st;
        StageOutcome out;
        double metric = 0.0;
        if (parameter == "J") {
            if (p.spec.n != 1) throw ConfigError("J convergence needs a one-dimensional state");
            stage_hjb(c, p, st, out);
            metric = reference ? hjb_max_error(p, *st.grid) : st.grid->value(p.t0, p.x0[0]);
        } else {
            stage_forward(c, p, policy, st, out);
            stage_backward(c, p, policy, st, out);
            const double J = unsigned_zero(-st.bw->initial_value());
            metric = table.metric == "value_error" ? std::abs(J - p.exact_value(p.t0, p.x0[0])) : J;
        }
        table.rows.push_back({v, metric});
    }
    return table;
}

inline void write_convergence_csv(std::ostream& out, const ConvergenceTable& t) {
    out << t.parameter << ',' << t.metric << '\n';
    for (const auto& r : t.rows) out << io_detail::num(r.value) << ',' << io_detail::num(r.metric) << '\n';
}

}  // namespace rsoc
