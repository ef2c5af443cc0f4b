#include "rsoc/experiment.hpp"

#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int status = -1;
    std::string out;
    std::string err;
};

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("rsoc_cli_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

CliResult cli(const std::string& args, const std::string& tag) {
    const fs::path dir = scratch("io_" + tag);
    const std::string cmd = std::string(RSOC_CLI_PATH) + " " + args + " > " + (dir / "out").string() + " 2> " +
                            (dir / "err").string();
    const int raw = std::system(cmd.c_str());
    CliResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(dir / "out");
    r.err = slurp(dir / "err");
    return r;
}

}  // namespace

TEST_CASE("full example run passes and writes every artifact") {
    const fs::path out = scratch("full");
    const auto r = cli("run --builtin example31 --all --seed 42 --M 4000 --out " + out.string(), "full");
    INFO(r.out << r.err);
    REQUIRE(r.status == 0);
    for (const char* f : {"summary.json", "forward.csv", "backward.csv", "cost.json", "adjoint.csv",
                          "max_condition.json", "value_grid.csv", "value_grid.json", "connection.csv",
                          "connection.json"}) {
        CHECK(fs::exists(out / f));
    }
    const auto summary = rsoc::Json::parse(slurp(out / "summary.json"));
    CHECK(summary["pass"] == true);
    CHECK(summary["seed"] == 42);
    CHECK(summary["problem"] == "example31");
    REQUIRE(summary["stages"].size() == 6);
    for (const auto& s : summary["stages"]) CHECK(s["pass"] == true);
    CHECK(summary["stages"][4]["name"] == "hjb");
    CHECK(summary["stages"][4]["metrics"]["max_error"].get<double>() <= 0.05);
    CHECK(summary["stages"][5]["metrics"]["pass"] == true);
    CHECK_FALSE(summary["config"].contains("threads"));
}

TEST_CASE("coarse HJB run honours the configured tolerance") {
    const auto ok = cli("run --builtin example31 --stage hjb --J 10", "coarse");
    CHECK(ok.status == 0);
    CHECK(ok.out.find("max_error") != std::string::npos);
    // heat1d has a smooth closed form, so a coarse grid carries a visible error.
    const auto strict = cli("run --builtin heat1d --stage hjb --J 10 --L 4 --tol-hjb 1e-9", "strict");
    CHECK(strict.status == 1);
    const auto loose = cli("run --builtin heat1d --stage hjb --J 10 --L 4 --tol-hjb 1", "loose");
    CHECK(loose.status == 0);
}

TEST_CASE("configuration errors exit with status 2") {
    const fs::path dir = scratch("bad");
    {
        std::ofstream f(dir / "bad.cfg");
        f << "[dims]\nn = 1\nd = 1\nk = 1\n[horizon]\nT = one\n";
    }
    const auto parse = cli("run --problem " + (dir / "bad.cfg").string() + " --stage hjb", "parse");
    CHECK(parse.status == 2);
    CHECK(parse.err.find("line") != std::string::npos);
    CHECK(cli("run --problem " + (dir / "missing.cfg").string() + " --stage hjb", "missing").status == 2);
    CHECK(cli("run --builtin example31 --stage jets", "dep").status == 2);
    CHECK(cli("run --builtin example31 --stage backward", "dep2").status == 2);
    CHECK(cli("run --builtin example31 --stage hjb --J 2", "range").status == 2);
    CHECK(cli("run --builtin example31 --stage hjb --bogus 3", "unknown").status == 2);
    CHECK(cli("run --builtin nosuch --stage hjb", "builtin").status == 2);
    CHECK(cli("run --builtin coupled2d --stage hjb", "dim").status == 2);
    CHECK(cli("run --stage hjb", "noproblem").status == 2);
    CHECK(cli("run --builtin example31 --stage forward --policy const:2", "policy").status == 2);
}

TEST_CASE("problem files drive the pipeline") {
    const fs::path dir = scratch("file");
    {
        std::ofstream f(dir / "p.cfg");
        f << rsoc::render_problem(rsoc::builtin_problem("heat1d").spec);
    }
    const auto r = cli("run --problem " + (dir / "p.cfg").string() + " --stage forward --stage backward --M 500", "file");
    CHECK(r.status == 0);
    const auto rendered = cli("render --builtin heat1d", "render");
    CHECK(rendered.status == 0);
    CHECK(rendered.out == slurp(dir / "p.cfg"));
}

TEST_CASE("convergence tables") {
    const fs::path out = scratch("conv");
    const auto r = cli("convergence --builtin heat1d --L 4 --param J --values 20,40,80 --out " + out.string(), "conv");
    REQUIRE(r.status == 0);
    std::ifstream in(out / "convergence_J.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "J,max_error");
    double prev = 1e300;
    int rows = 0;
    while (std::getline(in, line)) {
        const double err = std::stod(line.substr(line.find(',') + 1));
        CHECK(err <= prev);
        prev = err;
        ++rows;
    }
    CHECK(rows == 3);

    const auto single = cli("convergence --builtin example31 --param M --values 500", "single");
    REQUIRE(single.status == 0);
    CHECK(std::count(single.out.begin(), single.out.end(), '\n') == 2);
    CHECK(cli("convergence --builtin example31 --param Q --values 1,2", "badparam").status == 2);
    CHECK(cli("convergence --builtin example31 --param J --values 2.5", "badvalue").status == 2);
}

TEST_CASE("reruns are byte-identical across thread counts") {
    const std::string base = "run --builtin example31 --all --seed 7 --M 1500 --N 20 --J 60";
    const fs::path a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
    REQUIRE(cli(base + " --out " + a.string(), "det_a").status == 0);
    REQUIRE(cli(base + " --out " + b.string(), "det_b").status == 0);
    REQUIRE(cli(base + " --threads 4 --out " + c.string(), "det_c").status == 0);
    for (const auto& entry : fs::directory_iterator(a)) {
        const auto name = entry.path().filename();
        INFO(name.string());
        CHECK(slurp(a / name) == slurp(b / name));
        CHECK(slurp(a / name) == slurp(c / name));
    }
}

TEST_CASE("format selection and path dumps") {
    const fs::path out = scratch("fmt");
    REQUIRE(cli("run --builtin heat1d --stage forward --M 100 --format csv --dump-paths --out " + out.string(), "fmt")
                .status == 0);
    CHECK(fs::exists(out / "forward.csv"));
    CHECK_FALSE(fs::exists(out / "summary.json"));
    const auto batch = rsoc::read_path_batch((out / "paths.bin").string());
    CHECK(batch.paths == 100);
    rsoc::ExperimentConfig cfg;
    cfg.builtin = "heat1d";
    const auto p = rsoc::load_problem(cfg);
    const auto again = rsoc::simulate_forward(p.spec, rsoc::resolve_policy(cfg, p), p.t0, p.x0,
                                              rsoc::TimeGrid(p.t0, p.spec.horizon, 50), 100, 1);
    CHECK(batch.states == again.states);
}

TEST_CASE("oracle and probe subcommands") {
    const auto o = cli("oracle --t 0 --x 1", "oracle");
    REQUIRE(o.status == 0);
    const auto j = rsoc::Json::parse(o.out);
    CHECK(j["value"] == -2.0);
    CHECK(j["adjoint"]["q"] == 1.0);
    CHECK(cli("oracle --t 2 --x 1", "oracle_bad").status == 2);
    const auto p = cli("probe --builtin example31 --assumption H1 --samples 200", "probe");
    CHECK(p.status == 0);
    CHECK(rsoc::Json::parse(p.out)["pass"] == true);
}
