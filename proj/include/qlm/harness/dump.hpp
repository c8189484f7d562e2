#pragma once

#include "qlm/fields.hpp"
#include "qlm/grid.hpp"
#include "qlm/ode.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

namespace qlm::harness {

/// Header of a text dump: a single '#' line of key=value pairs.
struct DumpHeader {
    std::string field;
    std::string kind;
    std::vector<int> shape;
    std::vector<double> lengths;
    std::uint64_t grid_hash = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> columns;
};

struct DumpData {
    DumpHeader header;
    std::vector<std::vector<double>> columns;  // one vector per column

    const std::vector<double>& column(const std::string& name) const
    {
        for (std::size_t i = 0; i < header.columns.size(); ++i)
            if (header.columns[i] == name) return columns[i];
        throw IoError("dump has no column '" + name + "'");
    }
};

namespace detail {

inline std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class T>
std::string join(const std::vector<T>& v)
{
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        if constexpr (std::is_floating_point_v<T>) os << fmt(v[i]);
        else os << v[i];
    }
    return os.str();
}

inline std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(cur);
    return out;
}

inline std::string header_line(const DumpHeader& h)
{
    return "# qlm-dump field=" + h.field + " kind=" + h.kind + " shape=" + join(h.shape) + " lengths=" + join(h.lengths) +
           " grid_hash=" + std::to_string(h.grid_hash) + " seed=" + std::to_string(h.seed) + " columns=" + join(h.columns);
}

inline std::vector<std::string> axis_names(const MetricGrid& g)
{
    if (g.kind() == MetricKind::sphere_latlong) return {"theta", "phi"};
    if (g.dim() == 1) return {"s"};
    if (g.dim() == 2) return {"x", "y"};
    return {"x", "y", "z"};
}

} // namespace detail

/// Writes grid coordinates followed by one column per field, in node order
/// (row-major, last axis fastest). 2D and 3D dumps separate rows of the first
/// axis by a blank line so gnuplot's splot reads them as a grid.
inline void write_field_dump(const std::string& path, const std::string& field_name,
                             const std::vector<std::pair<std::string, const ScalarField*>>& fields, std::uint64_t seed)
{
    QLM_THROW_IF(fields.empty(), ConfigError, "dump: no fields");
    const MetricGrid& g = *fields.front().second->grid();
    DumpHeader h;
    h.field = field_name;
    h.kind = to_string(g.kind());
    h.shape = g.spec().shape;
    h.lengths = g.spec().lengths;
    h.grid_hash = g.hash();
    h.seed = seed;
    h.columns = detail::axis_names(g);
    for (const auto& f : fields) {
        QLM_THROW_IF(f.second->grid()->hash() != g.hash(), ConfigError, "dump: fields live on different grids");
        h.columns.push_back(f.first);
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << detail::header_line(h) << '\n';
    for (std::size_t n = 0; n < g.size(); ++n) {
        const auto c = g.coords(n);
        if (g.dim() > 1 && n > 0 && c[static_cast<std::size_t>(g.dim() - 1)] == 0) out << '\n';
        std::string line;
        for (int a = 0; a < g.dim(); ++a) {
            if (a) line += ' ';
            line += detail::fmt(g.coordinate(a, c[static_cast<std::size_t>(a)]));
        }
        for (const auto& f : fields) line += ' ' + detail::fmt((*f.second)[n]);
        out << line << '\n';
    }
}

/// Columns of a sampled ODE profile or transform with a header recording the span.
inline void write_columns(const std::string& path, const std::string& field_name, const std::vector<std::string>& names,
                          const std::vector<const std::vector<double>*>& cols, std::uint64_t seed)
{
    QLM_THROW_IF(cols.empty() || names.size() != cols.size(), ConfigError, "dump: column mismatch");
    const std::size_t n = cols.front()->size();
    for (const auto* c : cols) QLM_THROW_IF(c->size() != n, ConfigError, "dump: columns differ in length");
    DumpHeader h;
    h.field = field_name;
    h.kind = "profile";
    h.shape = {static_cast<int>(n)};
    h.lengths = {n ? cols.front()->back() - cols.front()->front() : 0.0};
    h.seed = seed;
    h.columns = names;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << detail::header_line(h) << '\n';
    for (std::size_t i = 0; i < n; ++i) {
        std::string line;
        for (std::size_t k = 0; k < cols.size(); ++k) {
            if (k) line += ' ';
            line += detail::fmt((*cols[k])[i]);
        }
        out << line << '\n';
    }
}

inline DumpData read_dump(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dump '" + path + "'");
    DumpData d;
    std::string line;
    if (!std::getline(in, line) || line.rfind("# qlm-dump", 0) != 0) throw IoError(path + ": missing dump header");
    std::istringstream hs(line.substr(10));
    std::string tok;
    while (hs >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw IoError(path + ": malformed header entry '" + tok + "'");
        const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "field") d.header.field = val;
        else if (key == "kind") d.header.kind = val;
        else if (key == "shape")
            for (const auto& s : detail::split(val, ',')) d.header.shape.push_back(std::stoi(s));
        else if (key == "lengths")
            for (const auto& s : detail::split(val, ',')) d.header.lengths.push_back(std::stod(s));
        else if (key == "grid_hash") d.header.grid_hash = std::stoull(val);
        else if (key == "seed") d.header.seed = std::stoull(val);
        else if (key == "columns") d.header.columns = detail::split(val, ',');
    }
    if (d.header.columns.empty()) throw IoError(path + ": header lists no columns");
    d.columns.resize(d.header.columns.size());
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        for (auto& col : d.columns) {
            double v;
            if (!(ls >> v)) throw IoError(path + ":" + std::to_string(lineno) + ": short row");
            col.push_back(v);
        }
    }
    return d;
}

} // namespace qlm::harness
