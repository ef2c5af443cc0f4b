#pragma once

// Problem config files.
//
//   # comment
//   [dims]
//   n = 1
//   d = 1
//   k = 1
//   [horizon]
//   T = 1
//   [control]
//   lo = [0]
//   hi = [1]
//   [coefficients]
//   b1 = "x1*u1"          # b1..bn
//   sigma1_1 = "x1"       # sigma<i>_<j>, i in 1..n, j in 1..d
//   f = "x1 - y"
//   phi = "x1"
//   [meta]                # optional
//   name = "example31"
//   lipschitz_hint = 2
//
// Values are integers, reals, quoted strings or bracketed number lists.
// Unknown sections or keys, duplicates and missing entries are errors.

#include "rsoc/error.hpp"
#include "rsoc/expression.hpp"
#include "rsoc/problem.hpp"

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace rsoc {

namespace config_detail {

struct Value {
    enum class Kind { number, string, list } kind = Kind::number;
    double number = 0.0;
    bool integral = false;
    std::string text;
    std::vector<double> list;
    std::size_t line = 0;
    std::size_t column = 0;          // of the key
    std::size_t value_column = 0;    // 0-based column of the value (string content for strings)
};

using Section = std::map<std::string, Value>;

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline std::optional<double> parse_number(std::string_view text, bool* integral = nullptr) {
    text = trim(text);
    if (text.empty()) {
        return std::nullopt;
    }
    const std::string owned(text);
    char* end = nullptr;
    const double v = std::strtod(owned.c_str(), &end);
    if (end != owned.c_str() + owned.size()) {
        return std::nullopt;
    }
    if (integral) {
        *integral = owned.find_first_of(".eE") == std::string::npos;
    }
    return v;
}

class Reader {
public:
    explicit Reader(std::string_view text) : text_(text) {}

    std::map<std::string, std::size_t> header_lines;

    std::map<std::string, Section> run() {
        std::map<std::string, Section> out;
        Section* current = nullptr;
        std::size_t line_no = 0;
        std::size_t start = 0;
        while (start <= text_.size()) {
            std::size_t end = text_.find('\n', start);
            if (end == std::string_view::npos) end = text_.size();
            std::string_view line = text_.substr(start, end - start);
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            handle_line(line, line_no, out, current);
            if (end == text_.size()) break;
            start = end + 1;
        }
        return out;
    }

private:
    static std::size_t strip_comment(std::string_view line) {
        bool in_string = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_string = !in_string;
            if (line[i] == '#' && !in_string) return i;
        }
        return line.size();
    }

    void handle_line(std::string_view raw, std::size_t line_no, std::map<std::string, Section>& out,
                     Section*& current) {
        const std::string_view line = raw.substr(0, strip_comment(raw));
        std::size_t first = 0;
        while (first < line.size() && std::isspace(static_cast<unsigned char>(line[first]))) ++first;
        if (first == line.size()) {
            return;
        }
        if (line[first] == '[') {
            const std::size_t close = line.find(']', first);
            if (close == std::string_view::npos) {
                throw ParseError("unterminated section header", line_no, first + 1);
            }
            if (!trim(line.substr(close + 1)).empty()) {
                throw ParseError("trailing characters after section header", line_no, close + 2);
            }
            const std::string name(trim(line.substr(first + 1, close - first - 1)));
            static const std::vector<std::string> known{"dims", "horizon", "control", "coefficients", "meta"};
            if (std::find(known.begin(), known.end(), name) == known.end()) {
                throw ParseError("unknown section [" + name + "]", line_no, first + 1);
            }
            if (out.count(name)) {
                throw ParseError("duplicate section [" + name + "]", line_no, first + 1);
            }
            current = &out[name];
            header_lines[name] = line_no;
            return;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError("expected 'key = value'", line_no, first + 1);
        }
        if (!current) {
            throw ParseError("key outside of any section", line_no, first + 1);
        }
        const std::string key(trim(line.substr(first, eq - first)));
        if (key.empty()) {
            throw ParseError("missing key", line_no, first + 1);
        }
        if (current->count(key)) {
            throw ParseError("duplicate key '" + key + "'", line_no, first + 1);
        }
        Value v;
        v.line = line_no;
        v.column = first + 1;
        std::size_t vpos = eq + 1;
        while (vpos < line.size() && std::isspace(static_cast<unsigned char>(line[vpos]))) ++vpos;
        if (vpos == line.size()) {
            throw ParseError("missing value for '" + key + "'", line_no, eq + 2);
        }
        const std::string_view rest = line.substr(vpos);
        if (rest.front() == '"') {
            const std::size_t close = rest.find('"', 1);
            if (close == std::string_view::npos) {
                throw ParseError("unterminated string", line_no, vpos + 1);
            }
            if (!trim(rest.substr(close + 1)).empty()) {
                throw ParseError("trailing characters after string", line_no, vpos + close + 2);
            }
            v.kind = Value::Kind::string;
            v.text = std::string(rest.substr(1, close - 1));
            v.value_column = vpos + 1;
        } else if (rest.front() == '[') {
            const std::size_t close = rest.find(']');
            if (close == std::string_view::npos) {
                throw ParseError("unterminated list", line_no, vpos + 1);
            }
            if (!trim(rest.substr(close + 1)).empty()) {
                throw ParseError("trailing characters after list", line_no, vpos + close + 2);
            }
            v.kind = Value::Kind::list;
            v.value_column = vpos;
            std::string_view body = rest.substr(1, close - 1);
            std::size_t offset = vpos + 1;
            if (!trim(body).empty()) {
                for (;;) {
                    const std::size_t comma = body.find(',');
                    const std::string_view item = body.substr(0, comma);
                    const auto num = parse_number(item);
                    if (!num) {
                        throw ParseError("expected a number in list", line_no, offset + 1);
                    }
                    v.list.push_back(*num);
                    if (comma == std::string_view::npos) break;
                    body.remove_prefix(comma + 1);
                    offset += comma + 1;
                }
            }
        } else {
            bool integral = false;
            const auto num = parse_number(rest, &integral);
            if (!num) {
                throw ParseError("expected a number, string or list", line_no, vpos + 1);
            }
            v.kind = Value::Kind::number;
            v.number = *num;
            v.integral = integral;
            v.value_column = vpos;
        }
        (*current)[key] = std::move(v);
    }

    std::string_view text_;
};

inline std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace config_detail

/// Parses problem config text into a validated ProblemSpec. Every error is
/// a ParseError carrying the offending line and column.
inline ProblemSpec parse_problem(std::string_view config_text) {
    using namespace config_detail;
    Reader reader(config_text);
    auto sections = reader.run();
    auto header_line = [&](const char* name) -> std::size_t {
        auto it = reader.header_lines.find(name);
        return it == reader.header_lines.end() ? 1 : it->second;
    };

    auto missing_section = [&](const char* name) -> Section& {
        auto it = sections.find(name);
        if (it == sections.end()) {
            throw ParseError(std::string("missing section [") + name + "]", 1, 1);
        }
        return it->second;
    };
    auto take = [&](Section& sec, const std::string& key, const char* section_name) -> Value {
        auto it = sec.find(key);
        if (it == sec.end()) {
            const bool entry = std::string_view(section_name) == "coefficients";
            throw ParseError((entry ? "dimension mismatch: missing coefficient entry '" : "missing key '") + key +
                                 "' in [" + section_name + "]",
                             header_line(section_name), 1);
        }
        Value v = std::move(it->second);
        sec.erase(it);
        return v;
    };
    auto reject_rest = [](const Section& sec, const char* section_name) {
        if (!sec.empty()) {
            const auto& [key, v] = *sec.begin();
            throw ParseError("unknown key '" + key + "' in [" + section_name + "]", v.line, v.column);
        }
    };
    auto positive_int = [](const Value& v, const char* what) {
        if (v.kind != Value::Kind::number || !v.integral || v.number < 1 || v.number > 1e6) {
            throw ParseError(std::string(what) + " must be a positive integer", v.line, v.value_column + 1);
        }
        return static_cast<std::size_t>(v.number);
    };

    Section& dims = missing_section("dims");
    const std::size_t n = positive_int(take(dims, "n", "dims"), "n");
    const std::size_t d = positive_int(take(dims, "d", "dims"), "d");
    const std::size_t k = positive_int(take(dims, "k", "dims"), "k");
    reject_rest(dims, "dims");

    Section& horizon = missing_section("horizon");
    const Value tv = take(horizon, "T", "horizon");
    if (tv.kind != Value::Kind::number || !(tv.number > 0.0)) {
        throw ParseError("T must be a positive number", tv.line, tv.value_column + 1);
    }
    reject_rest(horizon, "horizon");

    Section& control = missing_section("control");
    const Value lo = take(control, "lo", "control");
    const Value hi = take(control, "hi", "control");
    reject_rest(control, "control");
    for (const Value* v : {&lo, &hi}) {
        if (v->kind != Value::Kind::list || v->list.size() != k) {
            throw ParseError("control bounds must be lists of length k = " + std::to_string(k), v->line,
                             v->value_column + 1);
        }
    }
    for (std::size_t i = 0; i < k; ++i) {
        if (lo.list[i] > hi.list[i]) {
            throw ParseError("empty control box: lo > hi on axis " + std::to_string(i + 1), hi.line,
                             hi.value_column + 1);
        }
    }

    Section& coeffs = missing_section("coefficients");
    const auto sc = VariableSet::state_control(n, d, k);
    auto expr = [](const Value& v, const VariableSet& vars) {
        if (v.kind != Value::Kind::string) {
            throw ParseError("coefficient values must be quoted expressions", v.line, v.value_column + 1);
        }
        return CoefficientExpr::parse(v.text, vars, v.line, v.value_column);
    };
    ProblemSource src;
    std::vector<CoefficientExpr> b, sig;
    for (std::size_t i = 1; i <= n; ++i) {
        const Value v = take(coeffs, "b" + std::to_string(i), "coefficients");
        b.push_back(expr(v, sc));
        src.drift.push_back(v.text);
    }
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= d; ++j) {
            const std::string key = "sigma" + std::to_string(i) + "_" + std::to_string(j);
            const Value v = take(coeffs, key, "coefficients");
            sig.push_back(expr(v, sc));
            src.diffusion.push_back(v.text);
        }
    }
    const Value fv = take(coeffs, "f", "coefficients");
    auto f = expr(fv, VariableSet::driver(n, d, k));
    src.driver = fv.text;
    const Value pv = take(coeffs, "phi", "coefficients");
    auto phi = expr(pv, VariableSet::terminal(n, d, k));
    src.terminal = pv.text;
    if (!coeffs.empty()) {
        const auto& [key, v] = *coeffs.begin();
        const bool looks_like_entry = key.rfind("b", 0) == 0 || key.rfind("sigma", 0) == 0;
        throw ParseError((looks_like_entry ? "dimension mismatch: unexpected coefficient entry '"
                                           : "unknown key '") +
                             key + "'" + (looks_like_entry ? " for n = " + std::to_string(n) +
                                                                 ", d = " + std::to_string(d)
                                                           : std::string(" in [coefficients]")),
                         v.line, v.column);
    }

    std::string name = "custom";
    double hint = 1.0;
    if (auto it = sections.find("meta"); it != sections.end()) {
        Section& meta = it->second;
        if (auto nit = meta.find("name"); nit != meta.end()) {
            if (nit->second.kind != Value::Kind::string) {
                throw ParseError("name must be a string", nit->second.line, nit->second.value_column + 1);
            }
            name = nit->second.text;
            meta.erase(nit);
        }
        if (auto hit = meta.find("lipschitz_hint"); hit != meta.end()) {
            if (hit->second.kind != Value::Kind::number || hit->second.number < 0.0) {
                throw ParseError("lipschitz_hint must be a nonnegative number", hit->second.line,
                                 hit->second.value_column + 1);
            }
            hint = hit->second.number;
            meta.erase(hit);
        }
        reject_rest(meta, "meta");
    }

    return make_expression_problem(std::move(name), n, d, k, tv.number, ControlBox{lo.list, hi.list}, src,
                                   std::move(b), std::move(sig), std::move(f), std::move(phi), hint);
}

/// Canonical config text for a spec that carries expression sources.
inline std::string render_problem(const ProblemSpec& spec) {
    using config_detail::format_number;
    if (!spec.source) {
        throw PreconditionError("problem '" + spec.name + "' has no expression sources to render");
    }
    const ProblemSource& src = *spec.source;
    auto list = [](const Vec& v) {
        std::string out = "[";
        for (std::size_t i = 0; i < v.size(); ++i) {
            out += (i ? ", " : "") + format_number(v[i]);
        }
        return out + "]";
    };
    std::ostringstream out;
    out << "[meta]\nname = \"" << spec.name << "\"\nlipschitz_hint = " << format_number(spec.lipschitz_hint)
        << "\n\n[dims]\nn = " << spec.n << "\nd = " << spec.d << "\nk = " << spec.k
        << "\n\n[horizon]\nT = " << format_number(spec.horizon) << "\n\n[control]\nlo = " << list(spec.control.lo)
        << "\nhi = " << list(spec.control.hi) << "\n\n[coefficients]\n";
    for (std::size_t i = 0; i < spec.n; ++i) {
        out << "b" << i + 1 << " = \"" << src.drift[i] << "\"\n";
    }
    for (std::size_t i = 0; i < spec.n; ++i) {
        for (std::size_t j = 0; j < spec.d; ++j) {
            out << "sigma" << i + 1 << "_" << j + 1 << " = \"" << src.diffusion[i * spec.d + j] << "\"\n";
        }
    }
    out << "f = \"" << src.driver << "\"\nphi = \"" << src.terminal << "\"\n";
    return out.str();
}

}  // namespace rsoc
