// rsoc: command-line driver for the recursive stochastic control pipeline.
//
//   rsoc run --builtin example31 --all --seed 42 --out results/
//   rsoc convergence --builtin heat1d --param J --values 50,100,200 --out conv/
//   rsoc oracle --t 0 --x 1
//   rsoc probe --builtin example31 --assumption H1
//   rsoc render --builtin heat1d
//
// Exit status: 0 all checks pass, 1 a stage failed, 2 invalid configuration.

#include "rsoc/rsoc.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct CommonFlags {
    rsoc::ExperimentConfig config;
    std::vector<std::string> formats;
    std::vector<double> x0;
    double t0 = -1.0;
};

void add_problem_flags(CLI::App& app, CommonFlags& f) {
    auto* builtin = app.add_option("--builtin", f.config.builtin, "Builtin problem id")
                        ->check(CLI::IsMember(rsoc::builtin_ids()));
    auto* problem = app.add_option("--problem", f.config.problem_path, "Problem config file");
    builtin->excludes(problem);
}

void add_numeric_flags(CLI::App& app, CommonFlags& f) {
    auto& c = f.config;
    app.add_option("--M", c.M, "Monte Carlo paths")->capture_default_str();
    app.add_option("--N", c.N, "Time steps of the forward/backward grid")->capture_default_str();
    app.add_option("--L", c.L, "Half-width of the HJB space domain")->capture_default_str();
    app.add_option("--J", c.J, "HJB space intervals")->capture_default_str();
    app.add_option("--pdeg", c.p_deg, "Regression polynomial degree")->capture_default_str();
    app.add_option("--ugrid", c.ugrid, "Control grid points per dimension")->capture_default_str();
    app.add_option("--seed", c.seed, "Random seed")->capture_default_str();
    app.add_option("--tol-jet", c.tol_jet, "Jet singleton tolerance")->capture_default_str();
    app.add_option("--tol-conn", c.tol_conn, "Connection tolerance")->capture_default_str();
    app.add_option("--tol-mc", c.tol_mc, "Maximum condition tolerance")->capture_default_str();
    app.add_option("--tol-hjb", c.tol_hjb, "HJB max error tolerance against a closed form")->capture_default_str();
    app.add_option("--out", c.out_dir, "Output directory");
    app.add_option("--format", f.formats, "Output formats (csv, json)")
        ->delimiter(',')
        ->check(CLI::IsMember({"csv", "json"}));
    app.add_option("--threads", c.threads, "Worker thread cap")->capture_default_str();
    app.add_option("--t0", f.t0, "Initial time");
    app.add_option("--x0", f.x0, "Initial state, comma separated")->delimiter(',');
    app.add_option("--policy", c.policy, "optimal or const:u1,...");
}

void finish_flags(CommonFlags& f, const CLI::App& app) {
    if (!f.formats.empty()) {
        f.config.csv = std::find(f.formats.begin(), f.formats.end(), "csv") != f.formats.end();
        f.config.json = std::find(f.formats.begin(), f.formats.end(), "json") != f.formats.end();
    }
    if (app.count("--t0") > 0) f.config.t0 = f.t0;
    if (app.count("--x0") > 0) f.config.x0 = f.x0;
}

void print_summary(const rsoc::ExperimentResult& r) {
    for (const auto& s : r.stages) {
        std::cout << (s.pass ? "PASS " : "FAIL ") << s.name;
        if (!s.error.empty()) std::cout << "  (" << s.error << ")";
        std::cout << '\n';
    }
    std::cout << (r.exit_code == 0 ? "overall PASS" : "overall FAIL") << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Recursive stochastic optimal control: simulation, adjoints, HJB and jets"};
    app.require_subcommand(1);

    CommonFlags run_flags;
    bool all = false;
    std::vector<std::string> stages;
    auto* run = app.add_subcommand("run", "Run pipeline stages and write artifacts");
    add_problem_flags(*run, run_flags);
    add_numeric_flags(*run, run_flags);
    run->add_option("--stage", stages, "Stage to run (repeatable)")->check(CLI::IsMember(rsoc::stage_names()));
    run->add_flag("--all", all, "Run every stage");
    run->add_flag("--dump-paths", run_flags.config.dump_paths, "Write the simulated paths to paths.bin");

    CommonFlags conv_flags;
    std::string param;
    std::vector<double> values;
    auto* conv = app.add_subcommand("convergence", "Tabulate the primary error metric over a parameter");
    add_problem_flags(*conv, conv_flags);
    add_numeric_flags(*conv, conv_flags);
    conv->add_option("--param", param, "One of M, N, J, p_deg")->required();
    conv->add_option("--values", values, "Comma separated values")->delimiter(',')->required();

    double ot = 0.0, ox = 0.0, oT = 1.0, os = -1.0;
    auto* oracle = app.add_subcommand("oracle", "Closed-form example31 references");
    oracle->add_option("--t", ot, "Time")->capture_default_str();
    oracle->add_option("--x", ox, "State")->capture_default_str();
    oracle->add_option("--T", oT, "Horizon")->capture_default_str();
    oracle->add_option("--s", os, "Adjoint time (defaults to t)");

    CommonFlags probe_flags;
    std::string assumption = "H1";
    std::size_t samples = 2000;
    double radius = 5.0;
    auto* probe = app.add_subcommand("probe", "Sample the Lipschitz and growth assumptions");
    add_problem_flags(*probe, probe_flags);
    probe->add_option("--assumption", assumption, "H1, H2 or H3")->check(CLI::IsMember({"H1", "H2", "H3"}));
    probe->add_option("--samples", samples, "Sample count")->capture_default_str();
    probe->add_option("--radius", radius, "Sampling radius")->capture_default_str();
    probe->add_option("--seed", probe_flags.config.seed, "Random seed")->capture_default_str();

    CommonFlags render_flags;
    auto* render = app.add_subcommand("render", "Print a problem in config-file form");
    add_problem_flags(*render, render_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) {
            finish_flags(run_flags, *run);
            auto& c = run_flags.config;
            if (all && !stages.empty()) throw rsoc::ConfigError("--all and --stage are mutually exclusive");
            c.stages = all ? rsoc::stage_names() : stages;
            const auto result = rsoc::run_experiment(c);
            print_summary(result);
            if (c.out_dir.empty()) std::cout << result.summary.dump(2) << '\n';
            return result.exit_code;
        }
        if (*conv) {
            finish_flags(conv_flags, *conv);
            const auto table = rsoc::convergence_table(conv_flags.config, param, values);
            const std::string& dir = conv_flags.config.out_dir;
            if (dir.empty()) {
                rsoc::write_convergence_csv(std::cout, table);
            } else {
                std::filesystem::create_directories(dir);
                auto out = rsoc::io_detail::open_out((std::filesystem::path(dir) / ("convergence_" + param + ".csv")).string());
                rsoc::write_convergence_csv(out, table);
            }
            return 0;
        }
        if (*oracle) {
            const double s = os < 0.0 ? ot : os;
            const auto adj = rsoc::example31_adjoint(ot, s, oT);
            const auto jets = rsoc::example31_jets(s, oT);
            rsoc::Json j{{"t", ot},
                         {"x", ox},
                         {"T", oT},
                         {"value", rsoc::example31_value(ot, ox, oT)},
                         {"adjoint", {{"s", s}, {"p", adj.p}, {"q", adj.q}, {"k", adj.k}}},
                         {"superjet", rsoc::to_json(jets.superjet)},
                         {"subjet", rsoc::to_json(jets.subjet)}};
            std::cout << j.dump(2) << '\n';
            return 0;
        }
        if (*probe) {
            auto& c = probe_flags.config;
            c.stages = {"forward"};
            rsoc::validate_config(c);
            const auto p = rsoc::load_problem(c);
            const rsoc::Assumption a = assumption == "H1"   ? rsoc::Assumption::H1
                                       : assumption == "H2" ? rsoc::Assumption::H2
                                                            : rsoc::Assumption::H3;
            const auto r = rsoc::probe_assumptions(p.spec, a, samples, radius, c.seed);
            rsoc::Json j{{"problem", p.spec.name},     {"assumption", rsoc::to_string(r.assumption)},
                         {"samples", r.samples},       {"lipschitz_ratio", r.lipschitz_ratio},
                         {"growth_ratio", r.growth_ratio}, {"threshold", r.threshold},
                         {"pass", r.pass}};
            std::cout << j.dump(2) << '\n';
            return r.pass ? 0 : 1;
        }
        if (*render) {
            auto& c = render_flags.config;
            c.stages = {"forward"};
            rsoc::validate_config(c);
            std::cout << rsoc::render_problem(rsoc::load_problem(c).spec);
            return 0;
        }
    } catch (const rsoc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const rsoc::ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return 2;
    } catch (const rsoc::PreconditionError& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return 2;
    } catch (const rsoc::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
