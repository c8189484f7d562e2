#pragma once

#include "qlm/grid.hpp"
#include "qlm/harness/config_format.hpp"
#include "qlm/nonlinearity.hpp"
#include "qlm/solver.hpp"
#include "qlm/verifier.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace qlm::harness {

/// Parameters of one declared check, taken from its [check.<name>] section.
/// Every value a check reads, including fallbacks, is recorded in `used` so the
/// manifest lists it.
struct CheckSpec {
    std::string name;
    std::map<std::string, ConfigValue> raw;
    mutable std::vector<std::pair<std::string, ConfigValue>> used;

    double number(const std::string& key, double fallback) const
    {
        double v = fallback;
        if (auto it = raw.find(key); it != raw.end()) v = expect<double>(key, it->second);
        record(key, ConfigValue{v, 0});
        return v;
    }
    int integer(const std::string& key, int fallback) const
    {
        const double d = number(key, fallback);
        QLM_THROW_IF(d != std::floor(d), ConfigError, "check." + name + "." + key + " must be an integer");
        return static_cast<int>(d);
    }
    bool boolean(const std::string& key, bool fallback) const
    {
        bool v = fallback;
        if (auto it = raw.find(key); it != raw.end()) v = expect<bool>(key, it->second);
        record(key, ConfigValue{v, 0});
        return v;
    }
    std::string string(const std::string& key, const std::string& fallback) const
    {
        std::string v = fallback;
        if (auto it = raw.find(key); it != raw.end()) v = expect<std::string>(key, it->second);
        record(key, ConfigValue{v, 0});
        return v;
    }
    std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) const
    {
        std::vector<double> v = fallback;
        if (auto it = raw.find(key); it != raw.end()) {
            if (const auto* d = std::get_if<double>(&it->second.v)) v = {*d};
            else v = expect<std::vector<double>>(key, it->second);
        }
        record(key, ConfigValue{v, 0});
        return v;
    }

private:
    template <class T>
    const T& expect(const std::string& key, const ConfigValue& cv) const
    {
        if (const T* p = std::get_if<T>(&cv.v)) return *p;
        throw ConfigError("check." + name + "." + key + " has the wrong type (" + cv.type_name() + ")");
    }
    void record(const std::string& key, ConfigValue v) const
    {
        for (auto& kv : used)
            if (kv.first == key) {
                kv.second = std::move(v);
                return;
            }
        used.emplace_back(key, std::move(v));
    }
};

struct FamilySpec {
    std::string kind = "linear";
    double p = 2;
    std::optional<double> epsilon;
    std::vector<double> table_t, table_phi;

    PhiFamily build() const
    {
        switch (parse_phi_kind(kind)) {
        case PhiKind::linear: return PhiFamily::linear();
        case PhiKind::p_laplacian: return PhiFamily::p_laplacian(p, epsilon);
        case PhiKind::mean_curvature: return PhiFamily::mean_curvature();
        case PhiKind::custom_table: return PhiFamily::custom_table(table_t, table_phi);
        }
        throw ConfigError("family: unknown kind");
    }
};

struct PotentialSpec {
    std::string kind = "zero";
    double scale = 1;
    double center = 0;
    std::vector<double> coeffs;
    bool nonneg = false, convex = false;

    Potential build() const
    {
        if (kind == "allen-cahn") return Potential::allen_cahn(scale);
        if (kind == "quadratic") return Potential::quadratic(center);
        if (kind == "cosh") return Potential::cosh_potential();
        if (kind == "zero") return Potential::zero();
        if (kind == "polynomial") return Potential::polynomial(coeffs, nonneg, convex);
        throw ConfigError("potential.kind: unknown potential catalog name '" + kind + "'");
    }
};

/// Source of a profile-extension initial guess: a sampled file, or the 1D
/// solution of another config solved on this grid's first axis.
struct ProfileSource {
    std::string config_path;
    std::string file_path;
};

struct StudySpec {
    std::string quantity = "gradient";  // gradient | laplacian | claim | manufactured
    std::string field = "sin-cos";
    int levels = 3;
    double node_cap = 4.0e6;
    double amplitude = 1.0;
    double offset = 2.0;
    double exact_tol = 1e-12;
};

struct ExperimentConfig {
    std::string path;
    std::string directory;
    std::uint64_t hash = 0;
    std::uint64_t seed = 1;
    bool seed_set = false;
    std::string output;
    bool output_set = false;
    std::string description;
    GridSpec grid;
    FamilySpec family;
    PotentialSpec potential;
    SolveConfig solve;
    ProfileSource profile;
    VerifyOptions verify;
    std::vector<CheckSpec> checks;
    StudySpec study;
    bool dump_residuals = false;
    std::vector<std::string> warnings;

    GridPtr build_grid() const
    {
        QLM_THROW_IF(grid.shape.empty(), ConfigError, path + ": missing required key 'shape' in [grid]");
        return MetricGrid::build(grid);
    }
};

namespace detail {

struct CheckInfo {
    const char* name;
    bool needs_solution;
    bool ode;
    std::vector<const char*> keys;
};

inline const std::vector<CheckInfo>& check_catalog()
{
    static const std::vector<CheckInfo> cat = {
        {"gradient_bound", true, false, {"c_tol"}},
        {"p_constancy", true, false, {"tol"}},
        {"period_crosscheck", true, false, {"tol", "step"}},
        {"lemma21_inequality", true, false, {"c_tol", "gradient_floor"}},
        {"lemma31", true, false, {"c_tol"}},
        {"zero_potential", false, false, {"potential_zero_tol"}},
        {"equality_locus", true, false, {"p_tol", "gradient_floor", "c_tol"}},
        {"harnack", true, false, {"center", "radius", "p"}},
        {"abp", true, false, {"axis", "center", "half_width", "radius", "theta", "boundary_tol"}},
        {"quasi1d_rows", true, false, {"tol"}},
        {"solver_hygiene", true, false, {"tail_bound"}},
        {"liouville", false, false, {"starts", "seed", "amplitude", "require_all"}},
        {"claim_identity", false, false, {"field", "levels", "claim_floor", "order_lo", "order_hi", "exact_tol", "linear_check", "offset"}},
        {"ricci", false, false, {"levels", "tol", "order_lo", "order_hi"}},
        {"ellipticity", false, false, {"assumption", "samples", "seed", "p", "a", "max_spread"}},
        {"ode_profile", false, true, {"phi0", "dphi0", "span", "step", "drift_tol", "reference", "reference_tol", "cap"}},
        {"ode_equality", false, true, {"phi0", "sign", "span", "step", "drift_tol", "unit_tol", "laplacian_tol", "ivp_tol"}},
        {"period_map", false, true, {"period", "center", "step", "tol"}},
    };
    return cat;
}

} // namespace detail

inline const detail::CheckInfo& check_info(const std::string& name)
{
    for (const auto& c : detail::check_catalog())
        if (name == c.name) return c;
    throw ConfigError("checks.run: unknown check '" + name + "'");
}

/// Command-line mirrors of top-level keys. The config wins; a differing flag
/// only produces a warning.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output;
    std::optional<int> levels;
};

/// Builds and validates an ExperimentConfig. Validation errors name the offending key.
inline ExperimentConfig make_experiment(const ConfigDocument& doc, const std::string& text, const Overrides& flags = {})
{
    namespace fs = std::filesystem;
    ExperimentConfig c;
    c.path = doc.origin();
    c.directory = fs::path(c.path).has_parent_path() ? fs::path(c.path).parent_path().string() : std::string(".");
    c.hash = fnv1a(text);
    c.seed_set = doc.has("", "seed");
    c.output_set = doc.has("", "output");
    c.seed = static_cast<std::uint64_t>(doc.integer("", "seed", 1));
    c.output = doc.string("", "output", fs::path(c.path).stem().string());
    if (flags.seed) {
        if (!c.seed_set) c.seed = *flags.seed;
        else if (*flags.seed != c.seed)
            c.warnings.push_back("--seed " + std::to_string(*flags.seed) + " ignored: config sets seed = " + std::to_string(c.seed));
    }
    if (flags.output) {
        if (!c.output_set) c.output = *flags.output;
        else if (*flags.output != c.output)
            c.warnings.push_back("--output " + *flags.output + " ignored: config sets output = " + c.output);
    }
    c.description = doc.string("", "description", "");

    // Grid. ODE-only configs may omit it; anything else needs a shape.
    if (doc.has_section("grid")) {
        c.grid.kind = parse_metric_kind(doc.string("grid", "kind", "flat-torus"));
        doc.require("grid", "shape");
        for (double s : doc.numbers("grid", "shape")) {
            if (s != std::floor(s) || s < 1) throw doc.error("grid", "shape", "entries must be positive integers");
            c.grid.shape.push_back(static_cast<int>(s));
        }
        if (c.grid.kind == MetricKind::sphere_latlong && !doc.has("grid", "lengths")) {
            c.grid.lengths = {std::numbers::pi, 2 * std::numbers::pi};
        }
        else {
            doc.require("grid", "lengths");
            c.grid.lengths = doc.numbers("grid", "lengths");
        }
        c.grid.params = doc.numbers("grid", "params", {});
        if (c.grid.shape.size() != c.grid.lengths.size())
            throw doc.error("grid", "lengths", "must have one entry per shape axis");
    }

    // Family and potential.
    c.family.kind = doc.string("family", "kind", "linear");
    c.family.p = doc.number("family", "p", 2.0);
    if (doc.has("family", "epsilon")) c.family.epsilon = doc.number("family", "epsilon");
    c.family.table_t = doc.numbers("family", "t", {});
    c.family.table_phi = doc.numbers("family", "phi", {});
    try {
        (void)c.family.build();
    }
    catch (const ConfigError& e) {
        throw ConfigError(c.path + ": family: " + e.what());
    }
    QLM_THROW_IF(!doc.has_section("potential"), ConfigError, c.path + ": missing section [potential]");
    doc.require("potential", "kind");
    c.potential.kind = doc.string("potential", "kind");
    c.potential.scale = doc.number("potential", "scale", 1.0);
    c.potential.center = doc.number("potential", "center", 0.0);
    c.potential.coeffs = doc.numbers("potential", "coeffs", {});
    c.potential.nonneg = doc.boolean("potential", "nonneg", false);
    c.potential.convex = doc.boolean("potential", "convex", false);
    try {
        (void)c.potential.build();
    }
    catch (const ConfigError& e) {
        throw ConfigError(c.path + ": " + e.what());
    }

    // Solve.
    SolveConfig& s = c.solve;
    s.newton_tol = doc.number("solve", "newton_tol", s.newton_tol);
    s.max_newton_iters = static_cast<int>(doc.integer("solve", "max_newton_iters", s.max_newton_iters));
    s.backtrack = doc.number("solve", "backtrack", s.backtrack);
    s.min_step = doc.number("solve", "min_step", s.min_step);
    s.linear_solver = parse_linear_solver(doc.string("solve", "linear_solver", to_string(s.linear_solver)));
    s.linear_tol = doc.number("solve", "linear_tol", s.linear_tol);
    s.pin = parse_pin(doc.string("solve", "pin", to_string(s.pin)));
    s.check_jacobian = doc.boolean("solve", "check_jacobian", s.check_jacobian);
    s.jacobian_seed = static_cast<std::uint64_t>(doc.integer("solve", "jacobian_seed", static_cast<long long>(c.seed)));
    s.jacobian_ratio_lo = doc.number("solve", "jacobian_ratio_lo", s.jacobian_ratio_lo);
    s.jacobian_ratio_hi = doc.number("solve", "jacobian_ratio_hi", s.jacobian_ratio_hi);

    InitialGuess& g = s.initial_guess;
    const std::string gk = doc.string("initial_guess", "kind", "zero");
    using K = InitialGuess::Kind;
    if (gk == "zero") g.kind = K::zero;
    else if (gk == "constant") g.kind = K::constant;
    else if (gk == "random") g.kind = K::random;
    else if (gk == "sin-mode") g.kind = K::sin_mode;
    else if (gk == "field-file") g.kind = K::field;
    else if (gk == "profile-extension") g.kind = K::profile;
    else throw doc.error("initial_guess", "kind", "unknown initial guess '" + gk + "'");
    g.amplitude = doc.number("initial_guess", "amplitude", g.amplitude);
    g.value = doc.number("initial_guess", "value", g.value);
    g.seed = static_cast<std::uint64_t>(doc.integer("initial_guess", "seed", static_cast<long long>(c.seed)));
    g.mode = static_cast<int>(doc.integer("initial_guess", "mode", g.mode));
    g.axis = static_cast<int>(doc.integer("initial_guess", "axis", g.axis));
    g.profile_periodic = doc.boolean("initial_guess", "periodic", g.profile_periodic);
    const auto resolve = [&](const std::string& p) {
        return fs::path(p).is_absolute() ? p : (fs::path(c.directory) / p).lexically_normal().string();
    };
    if (g.kind == K::field) {
        doc.require("initial_guess", "file");
        c.profile.file_path = resolve(doc.string("initial_guess", "file"));
    }
    if (g.kind == K::profile) {
        if (doc.has("initial_guess", "profile_config")) c.profile.config_path = resolve(doc.string("initial_guess", "profile_config"));
        else if (doc.has("initial_guess", "profile_file")) c.profile.file_path = resolve(doc.string("initial_guess", "profile_file"));
        else throw ConfigError(c.path + ": profile-extension needs 'profile_config' or 'profile_file' in [initial_guess]");
    }
    if (doc.has_section("continuation")) {
        Continuation ct;
        doc.require("continuation", "parameter");
        ct.parameter = doc.string("continuation", "parameter");
        doc.require("continuation", "start");
        ct.start = doc.number("continuation", "start");
        if (ct.parameter == "length0" && c.grid.lengths.empty()) doc.require("continuation", "end");
        ct.end = doc.number("continuation", "end", ct.parameter == "length0" ? c.grid.lengths[0] : c.potential.scale);
        ct.steps = static_cast<int>(doc.integer("continuation", "steps", ct.steps));
        ct.max_bisections = static_cast<int>(doc.integer("continuation", "max_bisections", ct.max_bisections));
        s.continuation = ct;
    }
    try {
        s.validate();
    }
    catch (const ConfigError& e) {
        throw ConfigError(c.path + ": " + e.what());
    }

    // Global verifier tolerances.
    VerifyOptions& v = c.verify;
    v.c_tol = doc.number("checks", "c_tol", v.c_tol);
    v.gradient_floor = doc.number("checks", "gradient_floor", v.gradient_floor);
    v.claim_floor = doc.number("checks", "claim_floor", v.claim_floor);
    v.exact_tol = doc.number("checks", "exact_tol", v.exact_tol);
    v.order_lo = doc.number("checks", "order_lo", v.order_lo);
    v.order_hi = doc.number("checks", "order_hi", v.order_hi);
    v.potential_zero_tol = doc.number("checks", "potential_zero_tol", v.potential_zero_tol);
    v.newton_tol = s.newton_tol;
    v.provenance = c.hash;

    std::set<std::string> seen;
    for (const auto& name : doc.strings("checks", "run", {})) {
        const auto& info = check_info(name);
        if (!seen.insert(name).second) throw doc.error("checks", "run", "lists '" + name + "' twice");
        CheckSpec cs;
        cs.name = name;
        const std::string sec = "check." + name;
        for (const char* key : info.keys) {
            if (!doc.has(sec, key)) continue;
            // Read through the typed accessor so the key counts as used; keep the raw value.
            const std::string k = key;
            ConfigValue cv;
            if (k == "field" || k == "reference" || k == "assumption") cv.v = doc.string(sec, k);
            else if (k == "require_all" || k == "linear_check") cv.v = doc.boolean(sec, k, false);
            else if (k == "center" || k == "span") {
                try {
                    cv.v = doc.numbers(sec, k);
                }
                catch (const ConfigError&) {
                    cv.v = doc.number(sec, k);
                }
            }
            else cv.v = doc.number(sec, k);
            cs.raw.emplace(k, cv);
        }
        c.checks.push_back(std::move(cs));
    }
    for (const auto& sec : doc.section_names()) {
        if (sec.rfind("check.", 0) == 0 && !seen.count(sec.substr(6)))
            c.warnings.push_back("section [" + sec + "] is not listed in checks.run and is ignored");
    }

    // Convergence study.
    StudySpec& st = c.study;
    st.quantity = doc.string("study", "quantity", st.quantity);
    st.field = doc.string("study", "field", st.field);
    st.levels = static_cast<int>(doc.integer("study", "levels", st.levels));
    if (flags.levels) {
        if (!doc.has("study", "levels")) st.levels = *flags.levels;
        else if (*flags.levels != st.levels)
            c.warnings.push_back("--levels " + std::to_string(*flags.levels) + " ignored: config sets study.levels = " +
                                 std::to_string(st.levels));
    }
    st.node_cap = doc.number("study", "node_cap", st.node_cap);
    st.amplitude = doc.number("study", "amplitude", st.amplitude);
    st.offset = doc.number("study", "offset", st.offset);
    st.exact_tol = doc.number("study", "exact_tol", v.exact_tol);

    c.dump_residuals = doc.boolean("output", "dump_residuals", false);

    const bool grid_free = std::all_of(c.checks.begin(), c.checks.end(), [](const CheckSpec& cs) { return check_info(cs.name).ode; });
    if (c.grid.shape.empty() && (!grid_free || c.checks.empty())) doc.require("grid", "shape");

    const auto unused = doc.unused_keys();
    if (!unused.empty()) throw ConfigError(c.path + ": unknown key '" + unused.front() + "'");
    return c;
}

inline ExperimentConfig load_experiment(const std::string& path, const Overrides& flags = {})
{
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string text = ss.str();
    return make_experiment(ConfigDocument::parse(text, path), text, flags);
}

inline ExperimentConfig parse_experiment(const std::string& text, const std::string& origin = "<string>",
                                         const Overrides& flags = {})
{
    return make_experiment(ConfigDocument::parse(text, origin), text, flags);
}

} // namespace qlm::harness
