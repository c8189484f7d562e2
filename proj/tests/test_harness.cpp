#include "qlm/harness.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

using namespace qlm;
using namespace qlm::harness;
namespace fs = std::filesystem;

namespace {

const std::string kConfigs = std::string(QLM_SOURCE_DIR) + "/configs/";

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / "qlm_test_harness" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

RunOptions into(const fs::path& root)
{
    RunOptions o;
    o.output_root = root.string();
    return o;
}

std::string error_of(const std::string& text)
{
    try {
        parse_experiment(text, "inline.cfg");
    }
    catch (const Error& e) {
        return e.what();
    }
    return {};
}

const char* kHarmonic = R"(
seed = 3
[grid]
kind = "flat-torus"
shape = [16, 16]
lengths = [1.0, 1.0]
[potential]
kind = "zero"
[solve]
pin = "mean"
[initial_guess]
kind = "random"
amplitude = 0.5
[checks]
run = ["gradient_bound", "zero_potential", "solver_hygiene"]
)";

} // namespace

TEST(ConfigFormat, TypedScalarsArraysAndSections)
{
    const auto doc = ConfigDocument::parse(R"(
top = 1.5          # trailing comment
[a.b]
flag = true
name = "x # not a comment"
xs = [1, 2.5,
      -3e-2]
names = ["p", "q"]
)");
    EXPECT_DOUBLE_EQ(doc.number("", "top"), 1.5);
    EXPECT_TRUE(doc.boolean("a.b", "flag", false));
    EXPECT_EQ(doc.string("a.b", "name"), "x # not a comment");
    EXPECT_EQ(doc.numbers("a.b", "xs"), (std::vector<double>{1, 2.5, -3e-2}));
    EXPECT_EQ(doc.strings("a.b", "names"), (std::vector<std::string>{"p", "q"}));
    EXPECT_EQ(doc.integer("a.b", "missing", 7), 7);
}

TEST(ConfigFormat, DuplicateKeyNamesLine)
{
    try {
        ConfigDocument::parse("[s]\nk = 1\nk = 2\n", "dup.cfg");
        FAIL();
    }
    catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("dup.cfg:3"), std::string::npos) << e.what();
    }
}

TEST(Experiment, MissingShapeIsNamed)
{
    const std::string msg = error_of("[grid]\nkind = \"flat-torus\"\n[potential]\nkind = \"zero\"\n");
    EXPECT_NE(msg.find("shape"), std::string::npos) << msg;
}

TEST(Experiment, UnknownKeyAndCheckAreErrors)
{
    std::string typo = kHarmonic;
    typo.insert(typo.find("pin ="), "newton_tole = 1\n");
    EXPECT_NE(error_of(typo).find("newton_tole"), std::string::npos);
    std::string bad = kHarmonic;
    bad.replace(bad.find("\"solver_hygiene\""), 16, "\"no_such_check\"");
    EXPECT_NE(error_of(bad).find("no_such_check"), std::string::npos);
    std::string pot = kHarmonic;
    pot.replace(pot.find("\"zero\""), 6, "\"quartic\"");
    EXPECT_NE(error_of(pot).find("quartic"), std::string::npos);
}

TEST(Experiment, FlagsMirrorConfigAndConfigWins)
{
    const auto a = parse_experiment(kHarmonic, "inline.cfg", Overrides{9, std::nullopt, std::nullopt});
    EXPECT_EQ(a.seed, 3u);
    ASSERT_EQ(a.warnings.size(), 1u);
    EXPECT_NE(a.warnings[0].find("seed"), std::string::npos);
    std::string no_seed = kHarmonic;
    no_seed.erase(no_seed.find("seed = 3"), 8);
    const auto b = parse_experiment(no_seed, "inline.cfg", Overrides{9, std::nullopt, std::nullopt});
    EXPECT_EQ(b.seed, 9u);
    EXPECT_TRUE(b.warnings.empty());
}

TEST(Experiment, BundledConfigsParse)
{
    int n = 0;
    for (const auto& e : fs::directory_iterator(kConfigs)) {
        if (e.path().extension() != ".cfg") continue;
        EXPECT_NO_THROW(load_experiment(e.path().string())) << e.path();
        ++n;
    }
    EXPECT_GE(n, 10);
}

TEST(Dump, CircleHasThreeColumns)
{
    const fs::path dir = scratch("dump_circle");
    const auto g = MetricGrid::build(GridSpec{MetricKind::flat_torus, {}, {8}, {2.0}});
    const auto u = ScalarField::sample(g, [](const Vec& x) { return std::sin(x(0)); });
    const auto P = ScalarField::sample(g, [](const Vec& x) { return -x(0); });
    write_field_dump((dir / "c.dat").string(), "solution", {{"u", &u}, {"P", &P}}, 5);
    const DumpData d = read_dump((dir / "c.dat").string());
    EXPECT_EQ(d.header.columns, (std::vector<std::string>{"s", "u", "P"}));
    EXPECT_EQ(d.header.seed, 5u);
    EXPECT_EQ(d.header.grid_hash, g->hash());
    for (std::size_t n = 0; n < g->size(); ++n) {
        EXPECT_EQ(d.column("s")[n], g->point(n)(0));
        EXPECT_EQ(d.column("u")[n], u[n]);
        EXPECT_EQ(d.column("P")[n], P[n]);
    }
}

TEST(Dump, TorusIsRowMajorWithShapeAndLengths)
{
    const fs::path dir = scratch("dump_torus");
    const auto g = MetricGrid::build(GridSpec{MetricKind::flat_torus, {}, {8, 8}, {1.0, 0.5}});
    const auto u = ScalarField::sample(g, [](const Vec& x) { return 10 * x(0) + x(1); });
    write_field_dump((dir / "t.dat").string(), "solution", {{"u", &u}}, 1);
    std::ifstream in(dir / "t.dat");
    std::string head;
    std::getline(in, head);
    EXPECT_NE(head.find("shape=8,8"), std::string::npos) << head;
    EXPECT_NE(head.find("lengths=1,0.5"), std::string::npos) << head;
    const DumpData d = read_dump((dir / "t.dat").string());
    EXPECT_EQ(d.header.columns, (std::vector<std::string>{"x", "y", "u"}));
    ASSERT_EQ(d.columns[0].size(), 64u);
    // Last axis fastest.
    EXPECT_EQ(d.column("x")[0], d.column("x")[7]);
    EXPECT_LT(d.column("y")[0], d.column("y")[1]);
    EXPECT_LT(d.column("x")[7], d.column("x")[8]);
    EXPECT_EQ(d.column("u")[9], u[9]);
}

TEST(Run, HarmonicManifestIsDeterministic)
{
    const fs::path root = scratch("determinism");
    const auto cfg = parse_experiment(kHarmonic, "harmonic_inline.cfg");
    const RunResult a = run(cfg, Mode::verify, into(root));
    const RunResult b = run(cfg, Mode::verify, into(root));
    EXPECT_TRUE(a.ok);
    EXPECT_EQ(a.manifest.reproducible(), b.manifest.reproducible());
    EXPECT_EQ(a.manifest.doc["seed"], 3);
}

TEST(Run, EveryToleranceIsRecorded)
{
    const fs::path root = scratch("tolerances");
    const RunResult r = run(parse_experiment(kHarmonic, "harmonic_inline.cfg"), Mode::verify, into(root));
    const Json& m = r.manifest.doc;
    for (const char* k : {"newton_tol", "linear_tol", "jacobian_ratio_band", "jacobian_seed"})
        EXPECT_TRUE(m["solve_config"].contains(k)) << k;
    for (const char* k : {"c_tol", "gradient_floor", "claim_floor", "potential_zero_tol"})
        EXPECT_TRUE(m["tolerances"].contains(k)) << k;
    // Per-check defaults show up in the check's params.
    EXPECT_TRUE(r.manifest.check("solver_hygiene")["params"].contains("tail_bound"));
}

TEST(Run, CheckErrorDoesNotAbortLaterChecks)
{
    const fs::path root = scratch("check_error");
    std::string text = kHarmonic;
    text.replace(text.find("\"gradient_bound\""), 16, "\"quasi1d_rows\", \"gradient_bound\"");
    const RunResult r = run(parse_experiment(text, "broken.cfg"), Mode::verify, into(root));
    EXPECT_FALSE(r.ok);
    EXPECT_EQ(r.report("quasi1d_rows").status(), CheckStatus::fail);
    EXPECT_EQ(r.report("gradient_bound").status(), CheckStatus::pass);
    EXPECT_EQ(r.report("solver_hygiene").status(), CheckStatus::pass);
}

TEST(Report, FailLineCarriesValueAndMissingFilesAreAbsent)
{
    const fs::path root = scratch("report");
    std::string text = kHarmonic;
    text += "[check.solver_hygiene]\ntail_bound = 1e-300\n";
    const RunResult r = run(parse_experiment(text, "report.cfg"), Mode::verify, into(root));
    ASSERT_EQ(r.report("solver_hygiene").status(), CheckStatus::fail);
    fs::remove(fs::path(r.directory) / "solution_P.dat");
    const ReportResult rep = report((fs::path(r.directory) / "manifest.json").string());
    EXPECT_FALSE(rep.all_ok);
    EXPECT_NE(rep.summary.find("(solver_hygiene): FAIL  jacobian_checks = "), std::string::npos) << rep.summary;
    ASSERT_EQ(rep.missing, std::vector<std::string>{"solution_P.dat"});
    EXPECT_NE(rep.summary.find("ABSENT"), std::string::npos);
    EXPECT_TRUE(fs::exists(fs::path(r.directory) / "summary.txt"));
    EXPECT_TRUE(fs::exists(fs::path(r.directory) / "slice_solution.dat"));
}

TEST(Study, ConstantFieldIsExact)
{
    auto cfg = parse_experiment(std::string(kHarmonic) + "[study]\nquantity = \"gradient\"\nfield = \"constant\"\n", "const.cfg");
    const StudyTable t = convergence_study(cfg, 3, into(scratch("study_const")));
    EXPECT_TRUE(t.exact);
    for (const auto& row : t.rows) EXPECT_EQ(row.error, 0.0);
    EXPECT_EQ(t.manifest.doc["table"]["slope"], "exact");
}

TEST(Study, GradientOrderNearTwo)
{
    auto cfg = parse_experiment(std::string(kHarmonic) + "[study]\nquantity = \"gradient\"\n", "grad.cfg");
    const StudyTable t = convergence_study(cfg, 3, into(scratch("study_grad")));
    EXPECT_GE(t.slope, 1.7);
    EXPECT_LE(t.slope, 2.3);
}

TEST(Study, GuardsRejectBeforeWork)
{
    auto cfg = parse_experiment(std::string(kHarmonic) + "[study]\nnode_cap = 1000\n", "cap.cfg");
    const fs::path root = scratch("study_cap");
    try {
        convergence_study(cfg, 3, into(root));
        FAIL();
    }
    catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("node_cap"), std::string::npos);
    }
    EXPECT_THROW(convergence_study(cfg, 2, into(root)), ConfigError);
    EXPECT_TRUE(fs::is_empty(root));
}

TEST(Bundled, CircleGradientBound)
{
    const RunResult r = run(load_experiment(kConfigs + "thm11_circle.cfg"), Mode::verify, into(scratch("bundled_circle")));
    ASSERT_TRUE(r.solve && r.solve->converged);
    EXPECT_EQ(r.report("gradient_bound").status(), CheckStatus::pass);
    EXPECT_LT(r.manifest.value("gradient_bound", "max_P"), 0.0);
    const DumpData d = read_dump(r.directory + "/solution.dat");
    EXPECT_EQ(d.header.columns, (std::vector<std::string>{"s", "u", "P"}));
}

TEST(Bundled, TorusLiouville)
{
    const RunResult r =
        run(load_experiment(kConfigs + "thm12_liouville_torus.cfg"), Mode::verify, into(scratch("bundled_liouville")));
    EXPECT_EQ(r.report("liouville").status(), CheckStatus::pass);
    const Json& vals = r.manifest.check("liouville")["values"];
    for (int i = 0; i < 5; ++i) EXPECT_LE(number_from_json(vals["oscillation_" + std::to_string(i)]), 1e-8);
}
