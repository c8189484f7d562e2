#pragma once

#include "qlm/harness/dump.hpp"
#include "qlm/harness/manifest.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace qlm::harness {

struct ReportResult {
    std::string summary;
    std::vector<std::string> missing;  // inventory entries not found on disk
    std::vector<std::string> written;  // files produced by the report
    bool all_ok = false;
};

namespace detail {

inline std::string show(const Json& v)
{
    if (v.is_number_float()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6e", v.get<double>());
        return buf;
    }
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

inline std::string pad(std::string s, std::size_t w)
{
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
}

// Middle row of a 2D dump along the first axis: columns (x, value...).
inline std::string write_slice(const std::filesystem::path& dir, const std::string& name)
{
    const DumpData d = read_dump((dir / name).string());
    if (d.header.shape.size() != 2) return {};
    const int nx = d.header.shape[0], ny = d.header.shape[1];
    const int j = ny / 2;
    const std::string out_name = "slice_" + std::filesystem::path(name).stem().string() + ".dat";
    std::ofstream out(dir / out_name);
    out << "# qlm-slice of " << name << " at " << d.header.columns[1] << " index " << j << " columns="
        << d.header.columns[0];
    for (std::size_t c = 2; c < d.header.columns.size(); ++c) out << ',' << d.header.columns[c];
    out << '\n';
    for (int i = 0; i < nx; ++i) {
        const auto row = static_cast<std::size_t>(i) * static_cast<std::size_t>(ny) + static_cast<std::size_t>(j);
        out << fmt(d.columns[0][row]);
        for (std::size_t c = 2; c < d.columns.size(); ++c) out << ' ' << fmt(d.columns[c][row]);
        out << '\n';
    }
    return out_name;
}

} // namespace detail

/// Human-readable summary of a manifest: one table per check, the file
/// inventory with absent files flagged, and 1D slices of 2D dumps.
inline ReportResult report(const std::string& manifest_path, bool write_files = true)
{
    namespace fs = std::filesystem;
    const RunManifest m = RunManifest::load(manifest_path);
    const fs::path dir = fs::path(manifest_path).parent_path();
    const Json& d = m.doc;
    ReportResult out;
    out.all_ok = m.all_ok();
    std::ostringstream s;
    s << "qlm " << d.value("command", "?") << " report\n";
    s << "config   " << d["config"].value("path", "?") << "  hash " << d["config"].value("hash", "?") << '\n';
    s << "seed     " << detail::show(d.value("seed", Json())) << '\n';
    if (d.contains("grid"))
        s << "grid     " << d["grid"].value("kind", "?") << " shape " << d["grid"]["shape"].dump() << " lengths "
          << d["grid"]["lengths"].dump() << '\n';
    s << "family   " << d["family"].value("kind", "?") << ' ' << d["family"]["params"].dump() << '\n';
    s << "potential " << d["potential"].value("kind", "?") << ' ' << d["potential"]["params"].dump() << '\n';
    if (d.contains("solve") && !d["solve"].is_null()) {
        const Json& sv = d["solve"];
        s << "solve    " << (sv.value("converged", false) ? "converged" : "NOT converged") << ", residual "
          << detail::show(sv["final_residual_maxnorm"]) << ", " << sv.value("iterations", 0) << " Newton iterations, "
          << sv["jacobian_checks"].size() << " Jacobian checks\n";
    }
    if (d.contains("table")) {
        const Json& t = d["table"];
        s << "\nconvergence study (" << d["study"].value("quantity", "?") << ", field " << d["study"].value("field", "?")
          << "): " << t.value("status", "?") << '\n';
        s << "  level  h              error          order\n";
        for (std::size_t i = 0; i < t["rows"].size(); ++i) {
            const Json& r = t["rows"][i];
            s << "  " << detail::pad(std::to_string(r.value("level", 0)), 7) << detail::pad(detail::show(r["h"]), 15)
              << detail::pad(detail::show(r["error"]), 15)
              << (i == 0 || t["orders"].empty() ? std::string("-") : detail::show(t["orders"][i - 1])) << '\n';
        }
        s << "  least-squares slope: " << detail::show(t["slope"]) << '\n';
    }
    if (d.contains("checks")) {
        for (const Json& c : d["checks"]) {
            const std::string status = c.value("status", "?");
            std::string head = status == "pass" ? "PASS" : status == "fail" ? "FAIL" : "DIAGNOSTIC";
            const Json& vals = c["values"];
            if (status == "fail" && !vals.empty()) head += "  " + vals.begin().key() + " = " + detail::show(vals.begin().value());
            s << "\n== " << c.value("tag", "?") << " (" << c.value("name", "?") << "): " << head << '\n';
            s << "  " << detail::pad("tolerance", 34) << detail::show(c["tolerance"]) << '\n';
            for (const auto& [k, v] : vals.items()) s << "  " << detail::pad(k, 34) << detail::show(v) << '\n';
            if (!c["orders"].empty()) {
                s << "  " << detail::pad("observed orders", 34);
                for (const auto& o : c["orders"]) s << detail::show(o) << ' ';
                s << '\n';
            }
            for (const auto& n : c["notes"]) s << "  note: " << n.get<std::string>() << '\n';
        }
    }
    s << "\nfiles\n";
    for (const Json& f : d.value("files", Json::array())) {
        const std::string name = f.value("name", "?");
        const bool present = fs::exists(dir / name);
        if (!present) out.missing.push_back(name);
        s << "  " << detail::pad(name, 28) << (present ? "present  " : "ABSENT   ") << f.value("role", "") << '\n';
        if (present && write_files && name.size() > 4 && name.substr(name.size() - 4) == ".dat") {
            try {
                const std::string slice = detail::write_slice(dir, name);
                if (!slice.empty()) out.written.push_back(slice);
            }
            catch (const Error&) {
                // Not a grid dump; nothing to slice.
            }
        }
    }
    for (const auto& w : out.written) s << "  " << detail::pad(w, 28) << "written  1D slice\n";
    for (const auto& w : d.value("warnings", Json::array())) s << "warning: " << w.get<std::string>() << '\n';
    s << "\noverall: " << (out.all_ok ? "OK" : "FAILED") << '\n';
    out.summary = s.str();
    if (write_files) {
        std::ofstream f(dir / "summary.txt");
        f << out.summary;
        out.written.push_back("summary.txt");
    }
    return out;
}

} // namespace qlm::harness
