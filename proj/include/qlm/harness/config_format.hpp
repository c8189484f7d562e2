#pragma once

#include "qlm/error.hpp"

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace qlm::harness {

/// One typed value of the sectioned key-value format.
/// Scalars are bool, number or string; arrays hold numbers or strings.
struct ConfigValue {
    using Storage = std::variant<bool, double, std::string, std::vector<double>, std::vector<std::string>>;
    Storage v;
    int line = 0;

    const char* type_name() const
    {
        switch (v.index()) {
        case 0: return "bool";
        case 1: return "number";
        case 2: return "string";
        case 3: return "number array";
        default: return "string array";
        }
    }
};

/// Parsed document: section name -> key -> value. Keys before the first
/// section header live in section "". Reads are tracked so that unused keys
/// can be reported.
class ConfigDocument {
public:
    static ConfigDocument parse(std::string_view text, std::string origin = "<string>")
    {
        ConfigDocument doc;
        doc.origin_ = std::move(origin);
        std::string section;
        std::istringstream in{std::string(text)};
        std::string raw;
        int lineno = 0;
        while (std::getline(in, raw)) {
            ++lineno;
            const int first_line = lineno;
            std::string line = strip_comment(raw);
            // Arrays may continue over several lines until the bracket closes.
            while (bracket_depth(line) > 0) {
                std::string more;
                if (!std::getline(in, more)) doc.fail(first_line, "unterminated array");
                ++lineno;
                line += " " + strip_comment(more);
            }
            const std::string t = trim(line);
            if (t.empty()) continue;
            if (t.front() == '[') {
                if (t.back() != ']') doc.fail(first_line, "malformed section header");
                section = trim(t.substr(1, t.size() - 2));
                if (section.empty() || !valid_name(section, true)) doc.fail(first_line, "invalid section name '" + section + "'");
                if (doc.sections_.count(section)) doc.fail(first_line, "duplicate section [" + section + "]");
                doc.sections_[section];
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos) doc.fail(first_line, "expected 'key = value'");
            const std::string key = trim(t.substr(0, eq));
            if (!valid_name(key, false)) doc.fail(first_line, "invalid key '" + key + "'");
            auto& sec = doc.sections_[section];
            if (sec.count(key)) doc.fail(first_line, "duplicate key '" + qualified(section, key) + "'");
            ConfigValue val = doc.parse_value(trim(t.substr(eq + 1)), first_line);
            val.line = first_line;
            sec.emplace(key, std::move(val));
        }
        return doc;
    }

    static ConfigDocument load(const std::string& path)
    {
        std::ifstream f(path);
        if (!f) throw IoError("cannot open config '" + path + "'");
        std::stringstream ss;
        ss << f.rdbuf();
        return parse(ss.str(), path);
    }

    const std::string& origin() const { return origin_; }
    bool has_section(const std::string& s) const { return sections_.count(s) != 0; }
    bool has(const std::string& s, const std::string& k) const
    {
        const auto it = sections_.find(s);
        return it != sections_.end() && it->second.count(k) != 0;
    }

    std::vector<std::string> section_names() const
    {
        std::vector<std::string> out;
        for (const auto& kv : sections_) out.push_back(kv.first);
        return out;
    }

    double number(const std::string& s, const std::string& k) const { return get<double>(s, k); }
    double number(const std::string& s, const std::string& k, double fallback) const
    {
        return has(s, k) ? get<double>(s, k) : fallback;
    }
    long long integer(const std::string& s, const std::string& k) const
    {
        const double d = get<double>(s, k);
        if (d != std::floor(d) || std::abs(d) > 9.0e15) throw error(s, k, "must be an integer");
        return static_cast<long long>(d);
    }
    long long integer(const std::string& s, const std::string& k, long long fallback) const
    {
        return has(s, k) ? integer(s, k) : fallback;
    }
    bool boolean(const std::string& s, const std::string& k, bool fallback) const
    {
        return has(s, k) ? get<bool>(s, k) : fallback;
    }
    std::string string(const std::string& s, const std::string& k) const { return get<std::string>(s, k); }
    std::string string(const std::string& s, const std::string& k, const std::string& fallback) const
    {
        return has(s, k) ? get<std::string>(s, k) : fallback;
    }
    std::vector<double> numbers(const std::string& s, const std::string& k) const
    {
        // An empty array parses as a number array.
        if (has(s, k) && std::holds_alternative<std::vector<std::string>>(at(s, k).v) &&
            std::get<std::vector<std::string>>(at(s, k).v).empty())
            return {};
        return get<std::vector<double>>(s, k);
    }
    std::vector<double> numbers(const std::string& s, const std::string& k, std::vector<double> fallback) const
    {
        return has(s, k) ? numbers(s, k) : fallback;
    }
    std::vector<std::string> strings(const std::string& s, const std::string& k) const
    {
        if (has(s, k) && std::holds_alternative<std::vector<double>>(at(s, k).v) &&
            std::get<std::vector<double>>(at(s, k).v).empty()) {
            used_.insert(qualified(s, k));
            return {};
        }
        return get<std::vector<std::string>>(s, k);
    }
    std::vector<std::string> strings(const std::string& s, const std::string& k, std::vector<std::string> fallback) const
    {
        return has(s, k) ? strings(s, k) : fallback;
    }

    void require(const std::string& s, const std::string& k) const
    {
        if (!has(s, k)) throw ConfigError(origin_ + ": missing required key '" + k + "' in " + section_label(s));
    }

    /// Keys present in the document that no accessor has read.
    std::vector<std::string> unused_keys() const
    {
        std::vector<std::string> out;
        for (const auto& [s, keys] : sections_)
            for (const auto& kv : keys)
                if (!used_.count(qualified(s, kv.first))) out.push_back(qualified(s, kv.first));
        return out;
    }

    ConfigError error(const std::string& s, const std::string& k, const std::string& what) const
    {
        std::string where = origin_;
        if (has(s, k)) where += ":" + std::to_string(at(s, k).line);
        return ConfigError(where + ": " + qualified(s, k) + " " + what);
    }

    static std::string qualified(const std::string& s, const std::string& k) { return s.empty() ? k : s + "." + k; }

private:
    std::map<std::string, std::map<std::string, ConfigValue>> sections_;
    mutable std::set<std::string> used_;
    std::string origin_;

    [[noreturn]] void fail(int line, const std::string& what) const
    {
        throw ConfigError(origin_ + ":" + std::to_string(line) + ": " + what);
    }

    static std::string section_label(const std::string& s) { return s.empty() ? "the top level" : "[" + s + "]"; }

    const ConfigValue& at(const std::string& s, const std::string& k) const { return sections_.at(s).at(k); }

    template <class T>
    const T& get(const std::string& s, const std::string& k) const
    {
        require(s, k);
        const ConfigValue& cv = at(s, k);
        used_.insert(qualified(s, k));
        if (const T* p = std::get_if<T>(&cv.v)) return *p;
        ConfigValue probe{T{}, 0};
        throw error(s, k, std::string("must be a ") + probe.type_name() + ", got a " + cv.type_name());
    }

    static std::string trim(std::string_view s)
    {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return std::string(s.substr(a, b - a));
    }

    static std::string strip_comment(const std::string& line)
    {
        bool in_str = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            const char c = line[i];
            if (in_str && c == '\\') ++i;
            else if (c == '"') in_str = !in_str;
            else if (c == '#' && !in_str) return line.substr(0, i);
        }
        return line;
    }

    static int bracket_depth(const std::string& line)
    {
        // Only value arrays can span lines; a section header closes on its own line.
        const auto eq = line.find('=');
        if (eq == std::string::npos) return 0;
        int depth = 0;
        bool in_str = false;
        for (std::size_t i = eq; i < line.size(); ++i) {
            const char c = line[i];
            if (in_str && c == '\\') ++i;
            else if (c == '"') in_str = !in_str;
            else if (!in_str && c == '[') ++depth;
            else if (!in_str && c == ']') --depth;
        }
        return depth;
    }

    static bool valid_name(const std::string& s, bool allow_dot)
    {
        if (s.empty()) return false;
        for (char c : s)
            if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || (allow_dot && c == '.')))
                return false;
        return true;
    }

    std::string parse_string(std::string_view t, int line) const
    {
        if (t.size() < 2 || t.front() != '"' || t.back() != '"') fail(line, "malformed string " + std::string(t));
        std::string out;
        for (std::size_t i = 1; i + 1 < t.size(); ++i) {
            char c = t[i];
            if (c == '\\') {
                if (i + 2 >= t.size()) fail(line, "dangling escape in string");
                c = t[++i];
                if (c == 'n') c = '\n';
                else if (c == 't') c = '\t';
                else if (c != '\\' && c != '"') fail(line, std::string("unknown escape \\") + c);
            }
            else if (c == '"') fail(line, "unescaped quote inside string");
            out.push_back(c);
        }
        return out;
    }

    double parse_number(const std::string& t, int line) const
    {
        if (t == "inf" || t == "+inf") return HUGE_VAL;
        if (t == "-inf") return -HUGE_VAL;
        std::size_t used = 0;
        double d = 0;
        try {
            d = std::stod(t, &used);
        }
        catch (const std::exception&) {
            fail(line, "cannot parse value '" + t + "'");
        }
        if (used != t.size() || std::isnan(d)) fail(line, "cannot parse value '" + t + "'");
        return d;
    }

    std::vector<std::string> split_items(std::string_view body, int line) const
    {
        std::vector<std::string> items;
        std::string cur;
        bool in_str = false;
        for (std::size_t i = 0; i < body.size(); ++i) {
            const char c = body[i];
            if (in_str && c == '\\' && i + 1 < body.size()) {
                cur.push_back(c);
                cur.push_back(body[++i]);
                continue;
            }
            if (c == '"') in_str = !in_str;
            if (c == ',' && !in_str) {
                items.push_back(trim(cur));
                cur.clear();
            }
            else if (!in_str && (c == '[' || c == ']')) fail(line, "nested arrays are not supported");
            else cur.push_back(c);
        }
        const std::string last = trim(cur);
        if (!last.empty()) items.push_back(last);
        for (const auto& it : items)
            if (it.empty()) fail(line, "empty array element");
        return items;
    }

    ConfigValue parse_value(const std::string& t, int line) const
    {
        if (t.empty()) fail(line, "missing value");
        if (t == "true") return {true, line};
        if (t == "false") return {false, line};
        if (t.front() == '"') return {parse_string(t, line), line};
        if (t.front() == '[') {
            if (t.back() != ']') fail(line, "malformed array");
            const auto items = split_items(std::string_view(t).substr(1, t.size() - 2), line);
            if (items.empty()) return {std::vector<double>{}, line};
            if (items.front().front() == '"') {
                std::vector<std::string> out;
                for (const auto& it : items) {
                    if (it.front() != '"') fail(line, "mixed array element types");
                    out.push_back(parse_string(it, line));
                }
                return {out, line};
            }
            std::vector<double> out;
            for (const auto& it : items) {
                if (it.front() == '"') fail(line, "mixed array element types");
                out.push_back(parse_number(it, line));
            }
            return {out, line};
        }
        return {parse_number(t, line), line};
    }
};

} // namespace qlm::harness
