// Command-line front end: solve, verify, ode, study and report.

#include "qlm/harness.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace qlm;
using namespace qlm::harness;

struct Flags {
    std::string config;
    std::string output_root;
    std::optional<std::string> output;
    std::optional<std::uint64_t> seed;
    std::optional<int> levels;
};

void add_common(CLI::App* sub, Flags& f)
{
    sub->add_option("config", f.config, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--output-root", f.output_root, "root for relative output directories (default $QLM_OUTPUT_ROOT, then ./runs)");
    sub->add_option("--output", f.output, "output directory; mirrors the config key 'output'");
    sub->add_option("--seed", f.seed, "master seed; mirrors the config key 'seed'");
}

ExperimentConfig load(const Flags& f)
{
    ExperimentConfig cfg = load_experiment(f.config, Overrides{f.seed, f.output, f.levels});
    for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << '\n';
    return cfg;
}

void print_run(const RunResult& r)
{
    if (r.solve) {
        std::printf("solve: %s, residual %.3e, %d iterations\n", r.solve->converged ? "converged" : "NOT converged",
                    r.solve->final_residual_maxnorm, r.solve->iterations);
        if (!r.solve->converged) std::printf("  %s\n", r.solve->message.c_str());
    }
    for (const auto& [name, rep] : r.reports) {
        const std::string st = to_string(rep.status());
        std::printf("%-11s %-22s %-18s", st == "pass" ? "PASS" : st == "fail" ? "FAIL" : "DIAGNOSTIC", rep.tag.c_str(),
                    name.c_str());
        if (!rep.values.empty()) std::printf(" %s = %.6e", rep.values.front().first.c_str(), rep.values.front().second);
        std::printf("\n");
        for (const auto& n : rep.notes) std::printf("            note: %s\n", n.c_str());
    }
    std::printf("manifest: %s/manifest.json\n", r.directory.c_str());
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"qlm: quasilinear elliptic gradient-bound experiments"};
    app.require_subcommand(1);
    Flags f;
    auto* solve = app.add_subcommand("solve", "solve the configured problem and dump the solution");
    auto* verify = app.add_subcommand("verify", "solve if needed and run every declared check");
    auto* ode = app.add_subcommand("ode", "run the declared ODE checks");
    auto* study = app.add_subcommand("study", "dyadic convergence study");
    auto* rep = app.add_subcommand("report", "summarize a manifest");
    for (auto* s : {solve, verify, ode, study}) add_common(s, f);
    study->add_option("--levels", f.levels, "number of refinement levels (>= 3); mirrors study.levels");
    std::string manifest;
    rep->add_option("manifest", manifest, "manifest.json of a previous run")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        RunOptions opt;
        opt.output_root = f.output_root;
        if (rep->parsed()) {
            const ReportResult r = report(manifest);
            std::cout << r.summary;
            for (const auto& m : r.missing) std::cerr << "absent: " << m << '\n';
            return r.all_ok ? 0 : 1;
        }
        const ExperimentConfig cfg = load(f);
        if (study->parsed()) {
            const StudyTable t = convergence_study(cfg, cfg.study.levels, opt);
            std::printf("study %s on %s\n", t.quantity.c_str(), t.field.c_str());
            for (std::size_t i = 0; i < t.rows.size(); ++i)
                std::printf("  level %d  h %.6e  error %.6e  order %s\n", t.rows[i].level, t.rows[i].h, t.rows[i].error,
                            i == 0 || t.exact ? "-" : std::to_string(t.orders[i - 1]).c_str());
            if (t.exact) std::printf("exact at every level\n");
            else std::printf("least-squares slope %.4f\n", t.slope);
            return 0;
        }
        const Mode mode = solve->parsed() ? Mode::solve : ode->parsed() ? Mode::ode : Mode::verify;
        const RunResult r = run(cfg, mode, opt);
        print_run(r);
        return r.ok ? 0 : 1;
    }
    catch (const qlm::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
