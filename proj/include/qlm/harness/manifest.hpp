#pragma once

#include "qlm/harness/config_format.hpp"
#include "qlm/solver.hpp"
#include "qlm/verifier.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace qlm::harness {

using Json = nlohmann::ordered_json;

inline constexpr const char* kArtifactVersion = "0.1.0";

/// JSON has no inf/nan; those are written as strings.
inline Json json_number(double v)
{
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

inline double number_from_json(const Json& j)
{
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return HUGE_VAL;
        if (s == "-inf") return -HUGE_VAL;
        if (s == "nan") return std::nan("");
    }
    throw IoError("manifest: expected a number");
}

inline std::string hex64(std::uint64_t h)
{
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline Json to_json(const ConfigValue& cv)
{
    return std::visit(
        [](const auto& x) -> Json {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, double>) return json_number(x);
            else if constexpr (std::is_same_v<T, std::vector<double>>) {
                Json a = Json::array();
                for (double d : x) a.push_back(json_number(d));
                return a;
            }
            else return x;
        },
        cv.v);
}

inline Json to_json(const VerifyReport& r, const std::string& check_name)
{
    Json j;
    j["name"] = check_name;
    j["tag"] = r.tag;
    j["status"] = to_string(r.status());
    j["pass"] = r.pass;
    j["hypotheses_met"] = r.hypotheses_met;
    j["measurement"] = r.measurement;
    j["tolerance"] = json_number(r.tolerance);
    Json vals = Json::object();
    for (const auto& [k, v] : r.values) vals[k] = json_number(v);
    j["values"] = vals;
    Json ord = Json::array();
    for (double o : r.orders) ord.push_back(json_number(o));
    j["orders"] = ord;
    j["notes"] = r.notes;
    j["provenance"] = hex64(r.provenance);
    return j;
}

inline Json to_json(const SolveReport& s)
{
    Json j;
    j["converged"] = s.converged;
    j["message"] = s.message;
    j["final_residual_maxnorm"] = json_number(s.final_residual_maxnorm);
    j["iterations"] = s.iterations;
    j["continuation_steps"] = s.continuation_steps;
    j["pin"] = s.pin;
    j["jacobian_condition_estimate"] = json_number(s.jacobian_condition_estimate);
    j["compatibility_defect"] = json_number(s.compatibility_defect);
    j["solution_hash"] = hex64(s.solution_hash);
    Json hist = Json::array();
    for (double r : s.residual_history) hist.push_back(json_number(r));
    j["residual_history"] = hist;
    Json jc = Json::array();
    for (const auto& c : s.jacobian_checks)
        jc.push_back({{"iteration", c.iteration},
                      {"err_large", json_number(c.err_large)},
                      {"err_small", json_number(c.err_small)},
                      {"ratio", json_number(c.ratio)},
                      {"consistent", c.consistent}});
    j["jacobian_checks"] = jc;
    return j;
}

/// Written as manifest.json in the run directory. Everything except the
/// "timing" and "output_directory" entries is reproducible bit for bit.
struct RunManifest {
    Json doc;

    const Json& checks() const { return doc.at("checks"); }

    const Json& check(const std::string& name) const
    {
        for (const auto& c : doc.at("checks"))
            if (c.at("name") == name || c.at("tag") == name) return c;
        throw ConfigError("manifest has no check '" + name + "'");
    }

    double value(const std::string& check_name, const std::string& key) const
    {
        return number_from_json(check(check_name).at("values").at(key));
    }

    bool all_ok() const { return doc.value("all_ok", false); }

    /// Copy without the entries that legitimately change between runs.
    Json reproducible() const
    {
        Json j = doc;
        j.erase("timing");
        j.erase("output_directory");
        return j;
    }

    void save(const std::string& path) const
    {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write manifest '" + path + "'");
        out << doc.dump(2) << '\n';
    }

    static RunManifest load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open manifest '" + path + "'");
        RunManifest m;
        try {
            m.doc = Json::parse(in);
        }
        catch (const Json::parse_error& e) {
            throw IoError("manifest '" + path + "' is not valid JSON: " + e.what());
        }
        return m;
    }
};

/// Size and content hash of a produced file, for the inventory.
inline Json file_entry(const std::filesystem::path& dir, const std::string& name, const std::string& role)
{
    const auto p = dir / name;
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    return {{"name", name}, {"role", role}, {"bytes", bytes.size()}, {"fnv1a", hex64(fnv1a(bytes))}};
}

} // namespace qlm::harness
