#pragma once

// Scalar arithmetic expressions over the coefficient variables
// {s, x1..xn, y, z1..zd, u1..uk}. Parsing produces a compact postfix program
// that evaluates without allocation and is safe to share across threads.

#include "rsoc/error.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rsoc {

/// Which variable families an expression may reference, and their sizes.
/// The evaluation slot layout is [s, x1..xn, y, z1..zd, u1..uk]; families
/// that are not allowed still occupy their slots so every coefficient of a
/// problem shares one layout.
struct VariableSet {
    std::size_t n = 1;
    std::size_t d = 1;
    std::size_t k = 1;
    bool allow_s = true;
    bool allow_x = true;
    bool allow_y = false;
    bool allow_z = false;
    bool allow_u = true;

    [[nodiscard]] std::size_t slot_count() const noexcept { return 2 + n + d + k; }
    [[nodiscard]] std::size_t s_slot() const noexcept { return 0; }
    [[nodiscard]] std::size_t x_slot(std::size_t i) const noexcept { return 1 + i; }
    [[nodiscard]] std::size_t y_slot() const noexcept { return 1 + n; }
    [[nodiscard]] std::size_t z_slot(std::size_t j) const noexcept { return 2 + n + j; }
    [[nodiscard]] std::size_t u_slot(std::size_t l) const noexcept { return 2 + n + d + l; }

    static VariableSet state_control(std::size_t n, std::size_t d, std::size_t k) {
        return {n, d, k, true, true, false, false, true};
    }
    static VariableSet driver(std::size_t n, std::size_t d, std::size_t k) {
        return {n, d, k, true, true, true, true, true};
    }
    static VariableSet terminal(std::size_t n, std::size_t d, std::size_t k) {
        return {n, d, k, false, true, false, false, false};
    }
};

class CoefficientExpr {
public:
    enum class Op : unsigned char {
        constant, variable, add, sub, mul, div, neg, pow,
        exp, log, sin, cos, sqrt, abs, min, max
    };

    struct Instr {
        Op op;
        std::size_t slot = 0;
        double value = 0.0;
    };

    CoefficientExpr() = default;

    /// Parses `source`. Error columns are reported relative to the string
    /// start, shifted by `column_offset`, on line `line`.
    static CoefficientExpr parse(std::string_view source, const VariableSet& vars, std::size_t line = 1,
                                 std::size_t column_offset = 0);

    /// Evaluates with `slots` laid out as described by VariableSet.
    [[nodiscard]] double eval(std::span<const double> slots) const;

    [[nodiscard]] const std::string& source() const noexcept { return source_; }
    [[nodiscard]] const std::vector<Instr>& program() const noexcept { return program_; }
    [[nodiscard]] std::size_t slot_count() const noexcept { return slot_count_; }
    [[nodiscard]] bool empty() const noexcept { return program_.empty(); }

private:
    friend class ExpressionParser;

    std::string source_;
    std::vector<Instr> program_;
    std::size_t max_depth_ = 0;
    std::size_t slot_count_ = 0;
};

class ExpressionParser {
public:
    ExpressionParser(std::string_view src, const VariableSet& vars, std::size_t line, std::size_t column_offset)
        : src_(src), vars_(vars), line_(line), offset_(column_offset) {}

    CoefficientExpr run() {
        skip_space();
        if (pos_ >= src_.size()) {
            fail("empty expression");
        }
        parse_sum();
        skip_space();
        if (pos_ < src_.size()) {
            fail(std::string("unexpected character '") + src_[pos_] + "'");
        }
        CoefficientExpr out;
        out.source_ = std::string(src_);
        out.program_ = std::move(program_);
        out.max_depth_ = max_depth_;
        out.slot_count_ = vars_.slot_count();
        return out;
    }

private:
    using Op = CoefficientExpr::Op;

    [[noreturn]] void fail(const std::string& what) const { fail_at(what, pos_); }
    [[noreturn]] void fail_at(const std::string& what, std::size_t at) const {
        throw ParseError(what, line_, offset_ + at + 1);
    }

    void skip_space() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) {
            ++pos_;
        }
    }

    bool accept(char c) {
        skip_space();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void emit(Op op, std::size_t slot = 0, double value = 0.0) {
        program_.push_back({op, slot, value});
        switch (op) {
            case Op::constant:
            case Op::variable:
                ++depth_;
                break;
            case Op::neg:
            case Op::exp:
            case Op::log:
            case Op::sin:
            case Op::cos:
            case Op::sqrt:
            case Op::abs:
                break;
            default:
                --depth_;
                break;
        }
        max_depth_ = std::max(max_depth_, depth_);
    }

    void parse_sum() {
        parse_product();
        for (;;) {
            if (accept('+')) {
                require_operand();
                parse_product();
                emit(Op::add);
            } else if (accept('-')) {
                require_operand();
                parse_product();
                emit(Op::sub);
            } else {
                return;
            }
        }
    }

    void parse_product() {
        parse_unary();
        for (;;) {
            if (accept('*')) {
                require_operand();
                parse_unary();
                emit(Op::mul);
            } else if (accept('/')) {
                require_operand();
                parse_unary();
                emit(Op::div);
            } else {
                return;
            }
        }
    }

    // -a^b parses as -(a^b); exponentiation is right-associative.
    void parse_unary() {
        if (accept('-')) {
            require_operand();
            parse_unary();
            emit(Op::neg);
            return;
        }
        if (accept('+')) {
            require_operand();
            parse_unary();
            return;
        }
        parse_power();
    }

    void parse_power() {
        parse_primary();
        if (accept('^')) {
            require_operand();
            parse_unary();
            emit(Op::pow);
        }
    }

    // Reports a dangling binary operator at the operator itself.
    void require_operand() {
        const std::size_t op_pos = pos_ - 1;
        skip_space();
        if (pos_ >= src_.size()) {
            fail_at(std::string("missing operand after '") + src_[op_pos] + "'", op_pos);
        }
    }

    void parse_primary() {
        skip_space();
        if (pos_ >= src_.size()) {
            fail("unexpected end of expression");
        }
        const char c = src_[pos_];
        if (c == '(') {
            ++pos_;
            parse_sum();
            if (!accept(')')) {
                fail("expected ')'");
            }
            return;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            parse_number();
            return;
        }
        if (std::isalpha(static_cast<unsigned char>(c))) {
            parse_identifier();
            return;
        }
        fail(std::string("unexpected character '") + c + "'");
    }

    void parse_number() {
        const std::size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.')) {
            ++pos_;
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            std::size_t look = pos_ + 1;
            if (look < src_.size() && (src_[look] == '+' || src_[look] == '-')) {
                ++look;
            }
            if (look < src_.size() && std::isdigit(static_cast<unsigned char>(src_[look]))) {
                pos_ = look;
                while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                    ++pos_;
                }
            }
        }
        const std::string text(src_.substr(start, pos_ - start));
        char* end = nullptr;
        const double value = std::strtod(text.c_str(), &end);
        if (end != text.c_str() + text.size()) {
            fail_at("malformed number '" + text + "'", start);
        }
        emit(Op::constant, 0, value);
    }

    void parse_identifier() {
        const std::size_t start = pos_;
        while (pos_ < src_.size() && std::isalnum(static_cast<unsigned char>(src_[pos_]))) {
            ++pos_;
        }
        const std::string_view name = src_.substr(start, pos_ - start);
        skip_space();
        if (pos_ < src_.size() && src_[pos_] == '(') {
            parse_call(name, start);
            return;
        }
        emit(Op::variable, resolve_variable(name, start));
    }

    void parse_call(std::string_view name, std::size_t at) {
        static constexpr std::array<std::pair<std::string_view, Op>, 6> unary{{{"exp", Op::exp},
                                                                              {"log", Op::log},
                                                                              {"sin", Op::sin},
                                                                              {"cos", Op::cos},
                                                                              {"sqrt", Op::sqrt},
                                                                              {"abs", Op::abs}}};
        ++pos_;  // '('
        for (const auto& [fname, op] : unary) {
            if (name == fname) {
                parse_sum();
                if (!accept(')')) {
                    fail("expected ')' closing " + std::string(name));
                }
                emit(op);
                return;
            }
        }
        if (name == "min" || name == "max") {
            parse_sum();
            if (!accept(',')) {
                fail(std::string(name) + " takes two arguments");
            }
            parse_sum();
            if (!accept(')')) {
                fail("expected ')' closing " + std::string(name));
            }
            emit(name == "min" ? Op::min : Op::max);
            return;
        }
        fail_at("unknown function '" + std::string(name) + "'", at);
    }

    std::size_t resolve_variable(std::string_view name, std::size_t at) const {
        auto indexed = [&](char family, std::size_t count) -> std::size_t {
            if (name.size() < 2 || name[0] != family) {
                return 0;
            }
            std::size_t idx = 0;
            for (std::size_t i = 1; i < name.size(); ++i) {
                if (!std::isdigit(static_cast<unsigned char>(name[i]))) {
                    return 0;
                }
                idx = idx * 10 + static_cast<std::size_t>(name[i] - '0');
            }
            return (idx >= 1 && idx <= count) ? idx : 0;
        };
        auto undeclared = [&] { fail_at("undeclared variable '" + std::string(name) + "'", at); };

        if (name == "s") {
            if (!vars_.allow_s) undeclared();
            return vars_.s_slot();
        }
        if (name == "y") {
            if (!vars_.allow_y) undeclared();
            return vars_.y_slot();
        }
        if (const auto i = indexed('x', vars_.n); i != 0 && vars_.allow_x) {
            return vars_.x_slot(i - 1);
        }
        if (const auto j = indexed('z', vars_.d); j != 0 && vars_.allow_z) {
            return vars_.z_slot(j - 1);
        }
        if (const auto l = indexed('u', vars_.k); l != 0 && vars_.allow_u) {
            return vars_.u_slot(l - 1);
        }
        fail_at("undeclared variable '" + std::string(name) + "'", at);
    }

    std::string_view src_;
    const VariableSet& vars_;
    std::size_t line_;
    std::size_t offset_;
    std::size_t pos_ = 0;
    std::vector<CoefficientExpr::Instr> program_;
    std::size_t depth_ = 0;
    std::size_t max_depth_ = 0;
};

inline CoefficientExpr CoefficientExpr::parse(std::string_view source, const VariableSet& vars, std::size_t line,
                                              std::size_t column_offset) {
    return ExpressionParser(source, vars, line, column_offset).run();
}

namespace detail {

[[noreturn]] inline void domain_failure(const char* what, double arg) {
    std::ostringstream msg;
    msg.precision(17);
    msg << what << " (argument " << arg << ")";
    throw DomainError(msg.str());
}

}  // namespace detail

inline double CoefficientExpr::eval(std::span<const double> slots) const {
    constexpr std::size_t kInline = 32;
    std::array<double, kInline> small{};
    std::vector<double> large;
    double* stack = small.data();
    if (max_depth_ > kInline) {
        large.resize(max_depth_);
        stack = large.data();
    }
    std::size_t top = 0;
    for (const Instr& in : program_) {
        switch (in.op) {
            case Op::constant:
                stack[top++] = in.value;
                break;
            case Op::variable:
                stack[top++] = slots[in.slot];
                break;
            case Op::add:
                --top;
                stack[top - 1] += stack[top];
                break;
            case Op::sub:
                --top;
                stack[top - 1] -= stack[top];
                break;
            case Op::mul:
                --top;
                stack[top - 1] *= stack[top];
                break;
            case Op::div:
                --top;
                if (stack[top] == 0.0) {
                    detail::domain_failure("division by zero", stack[top - 1]);
                }
                stack[top - 1] /= stack[top];
                break;
            case Op::neg:
                stack[top - 1] = -stack[top - 1];
                break;
            case Op::pow: {
                --top;
                const double base = stack[top - 1];
                const double expo = stack[top];
                if (base < 0.0 && std::trunc(expo) != expo) {
                    detail::domain_failure("negative base raised to a non-integer power", base);
                }
                if (base == 0.0 && expo < 0.0) {
                    detail::domain_failure("zero raised to a negative power", expo);
                }
                stack[top - 1] = std::pow(base, expo);
                break;
            }
            case Op::exp:
                stack[top - 1] = std::exp(stack[top - 1]);
                break;
            case Op::log:
                if (stack[top - 1] <= 0.0) {
                    detail::domain_failure("log of a nonpositive value", stack[top - 1]);
                }
                stack[top - 1] = std::log(stack[top - 1]);
                break;
            case Op::sin:
                stack[top - 1] = std::sin(stack[top - 1]);
                break;
            case Op::cos:
                stack[top - 1] = std::cos(stack[top - 1]);
                break;
            case Op::sqrt:
                if (stack[top - 1] < 0.0) {
                    detail::domain_failure("sqrt of a negative value", stack[top - 1]);
                }
                stack[top - 1] = std::sqrt(stack[top - 1]);
                break;
            case Op::abs:
                stack[top - 1] = std::abs(stack[top - 1]);
                break;
            case Op::min:
                --top;
                stack[top - 1] = std::min(stack[top - 1], stack[top]);
                break;
            case Op::max:
                --top;
                stack[top - 1] = std::max(stack[top - 1], stack[top]);
                break;
        }
    }
    return stack[0];
}

}  // namespace rsoc
