#pragma once

// Expression DSL used by system-spec files: scalar expressions in the time
// variable (n or t), state variables x1..xd and named constants.
//
// Grammar:
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := '-' factor | power
//   power  := atom ('^' factor)?          // right-associative
//   atom   := number | name | name '(' expr ')' | '(' expr ')'
//
// Unary minus binds looser than '^', so -2^2 = -(2^2) = -4.
// Expressions compile to a small stack program; evaluation allocates nothing.

#include <cctype>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "errors.hpp"

namespace mudicho {

struct ParseError : ConfigError {
    std::size_t offset;
    ParseError(const std::string& msg, std::size_t off)
        : ConfigError(msg + " (at byte " + std::to_string(off) + ")"), offset(off) {}
};

namespace detail {

enum class Fn { Exp, Ln, Sin, Cos, Sqrt, Tanh, Abs };

inline const std::map<std::string, Fn>& function_table() {
    static const std::map<std::string, Fn> t = {
        {"exp", Fn::Exp}, {"ln", Fn::Ln},     {"sin", Fn::Sin}, {"cos", Fn::Cos},
        {"sqrt", Fn::Sqrt}, {"tanh", Fn::Tanh}, {"abs", Fn::Abs}};
    return t;
}

inline double apply(Fn f, double x) {
    switch (f) {
        case Fn::Exp: return std::exp(x);
        case Fn::Ln: return std::log(x);
        case Fn::Sin: return std::sin(x);
        case Fn::Cos: return std::cos(x);
        case Fn::Sqrt: return std::sqrt(x);
        case Fn::Tanh: return std::tanh(x);
        case Fn::Abs: return std::fabs(x);
    }
    return 0.0;
}

inline const char* name_of(Fn f) {
    switch (f) {
        case Fn::Exp: return "exp";
        case Fn::Ln: return "ln";
        case Fn::Sin: return "sin";
        case Fn::Cos: return "cos";
        case Fn::Sqrt: return "sqrt";
        case Fn::Tanh: return "tanh";
        case Fn::Abs: return "abs";
    }
    return "?";
}

struct Node {
    enum class Kind { Const, Var, Neg, Add, Sub, Mul, Div, Pow, Call } kind;
    double value = 0.0;     // Const
    std::size_t slot = 0;   // Var
    std::string var_name;   // Var (for printing)
    Fn fn = Fn::Exp;        // Call
    std::unique_ptr<Node> lhs, rhs;
};

using NodePtr = std::unique_ptr<Node>;

struct Op {
    enum class Code { PushConst, PushVar, Neg, Add, Sub, Mul, Div, Pow, Call } code;
    double value = 0.0;
    std::size_t slot = 0;
    Fn fn = Fn::Exp;
};

} // namespace detail

class Expr {
public:
    Expr() = default;

    // Variable names in declaration order define evaluation slots.
    static Expr parse(const std::string& source, const std::vector<std::string>& variables);

    double eval(const std::vector<double>& values) const {
        double stack[kMaxStack];
        std::size_t top = 0;
        for (const auto& op : program_) {
            using C = detail::Op::Code;
            switch (op.code) {
                case C::PushConst: stack[top++] = op.value; break;
                case C::PushVar: stack[top++] = values[op.slot]; break;
                case C::Neg: stack[top - 1] = -stack[top - 1]; break;
                case C::Add: stack[top - 2] += stack[top - 1]; --top; break;
                case C::Sub: stack[top - 2] -= stack[top - 1]; --top; break;
                case C::Mul: stack[top - 2] *= stack[top - 1]; --top; break;
                case C::Div: stack[top - 2] /= stack[top - 1]; --top; break;
                case C::Pow:
                    stack[top - 2] = std::pow(stack[top - 2], stack[top - 1]);
                    --top;
                    break;
                case C::Call: stack[top - 1] = detail::apply(op.fn, stack[top - 1]); break;
            }
        }
        return stack[0];
    }

    std::string print() const { return root_ ? print_node(*root_, 0) : "0"; }
    const std::vector<std::string>& variables() const { return variables_; }
    const std::string& source() const { return source_; }
    bool empty() const { return program_.empty(); }

private:
    static constexpr std::size_t kMaxStack = 64;

    static std::string print_node(const detail::Node& n, int parent_prec);
    std::size_t compile(const detail::Node& n); // returns stack depth needed

    std::shared_ptr<detail::Node> root_; // shared: Expr is copyable, tree immutable
    std::vector<detail::Op> program_;
    std::vector<std::string> variables_;
    std::string source_;
};

namespace detail {

class Parser {
public:
    Parser(const std::string& src, const std::vector<std::string>& vars)
        : src_(src), vars_(vars) {}

    NodePtr run() {
        NodePtr n = parse_expr();
        skip_ws();
        if (pos_ != src_.size()) fail("unexpected trailing input");
        return n;
    }

private:
    NodePtr parse_expr() {
        NodePtr lhs = parse_term();
        while (true) {
            skip_ws();
            if (peek() == '+' || peek() == '-') {
                const char op = get();
                NodePtr rhs = parse_term();
                lhs = binary(op == '+' ? Node::Kind::Add : Node::Kind::Sub, std::move(lhs),
                             std::move(rhs));
            } else {
                return lhs;
            }
        }
    }

    NodePtr parse_term() {
        NodePtr lhs = parse_factor();
        while (true) {
            skip_ws();
            if (peek() == '*' || peek() == '/') {
                const char op = get();
                NodePtr rhs = parse_factor();
                lhs = binary(op == '*' ? Node::Kind::Mul : Node::Kind::Div, std::move(lhs),
                             std::move(rhs));
            } else {
                return lhs;
            }
        }
    }

    NodePtr parse_factor() {
        skip_ws();
        if (peek() == '-') {
            get();
            NodePtr inner = parse_factor();
            auto n = std::make_unique<Node>();
            n->kind = Node::Kind::Neg;
            n->lhs = std::move(inner);
            return n;
        }
        return parse_power();
    }

    NodePtr parse_power() {
        NodePtr base = parse_atom();
        skip_ws();
        if (peek() == '^') {
            get();
            NodePtr exponent = parse_factor(); // right-assoc, may carry unary minus
            return binary(Node::Kind::Pow, std::move(base), std::move(exponent));
        }
        return base;
    }

    NodePtr parse_atom() {
        skip_ws();
        const char c = peek();
        if (c == '(') {
            get();
            NodePtr inner = parse_expr();
            expect(')');
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_name();
        fail(std::string("expected number, name or '(' but found ") +
             (c ? "'" + std::string(1, c) + "'" : "end of input"));
        return nullptr;
    }

    NodePtr parse_number() {
        const std::size_t start = pos_;
        std::size_t consumed = 0;
        double v = 0.0;
        try {
            v = std::stod(src_.substr(start), &consumed);
        } catch (const std::exception&) {
            fail("malformed number literal");
        }
        pos_ = start + consumed;
        auto n = std::make_unique<Node>();
        n->kind = Node::Kind::Const;
        n->value = v;
        return n;
    }

    NodePtr parse_name() {
        const std::size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
            ++pos_;
        const std::string name = src_.substr(start, pos_ - start);
        skip_ws();
        if (peek() == '(') {
            auto it = function_table().find(name);
            if (it == function_table().end())
                fail("unknown function '" + name + "'", start);
            get();
            NodePtr arg = parse_expr();
            expect(')');
            auto n = std::make_unique<Node>();
            n->kind = Node::Kind::Call;
            n->fn = it->second;
            n->lhs = std::move(arg);
            return n;
        }
        for (std::size_t i = 0; i < vars_.size(); ++i) {
            if (vars_[i] == name) {
                auto n = std::make_unique<Node>();
                n->kind = Node::Kind::Var;
                n->slot = i;
                n->var_name = name;
                return n;
            }
        }
        // math constants, available unless shadowed by a declared variable
        if (name == "e" || name == "pi") {
            auto n = std::make_unique<Node>();
            n->kind = Node::Kind::Const;
            n->value = (name == "e") ? std::exp(1.0) : 3.14159265358979323846;
            return n;
        }
        fail("unknown identifier '" + name + "'", start);
        return nullptr;
    }

    static NodePtr binary(Node::Kind k, NodePtr a, NodePtr b) {
        auto n = std::make_unique<Node>();
        n->kind = k;
        n->lhs = std::move(a);
        n->rhs = std::move(b);
        return n;
    }

    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }
    char peek() const { return pos_ < src_.size() ? src_[pos_] : '\0'; }
    char get() { return src_[pos_++]; }
    void expect(char c) {
        skip_ws();
        if (peek() != c) fail(std::string("expected '") + c + "'");
        get();
    }
    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_); }
    [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
        throw ParseError(msg, at);
    }

    const std::string& src_;
    const std::vector<std::string>& vars_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline Expr Expr::parse(const std::string& source, const std::vector<std::string>& variables) {
    detail::Parser p(source, variables);
    Expr e;
    e.root_ = std::shared_ptr<detail::Node>(p.run().release());
    e.variables_ = variables;
    e.source_ = source;
    if (e.compile(*e.root_) > kMaxStack)
        throw ConfigError("expression too deeply nested");
    return e;
}

inline std::size_t Expr::compile(const detail::Node& n) {
    using K = detail::Node::Kind;
    using C = detail::Op::Code;
    switch (n.kind) {
        case K::Const: program_.push_back({C::PushConst, n.value, 0, {}}); return 1;
        case K::Var: program_.push_back({C::PushVar, 0.0, n.slot, {}}); return 1;
        case K::Neg: {
            const std::size_t d = compile(*n.lhs);
            program_.push_back({C::Neg, 0.0, 0, {}});
            return d;
        }
        case K::Add:
        case K::Sub:
        case K::Mul:
        case K::Div:
        case K::Pow: {
            const std::size_t dl = compile(*n.lhs);
            const std::size_t dr = compile(*n.rhs);
            C c = C::Add;
            if (n.kind == K::Sub) c = C::Sub;
            if (n.kind == K::Mul) c = C::Mul;
            if (n.kind == K::Div) c = C::Div;
            if (n.kind == K::Pow) c = C::Pow;
            program_.push_back({c, 0.0, 0, {}});
            return std::max(dl, dr + 1);
        }
        case K::Call: {
            const std::size_t d = compile(*n.lhs);
            program_.push_back({C::Call, 0.0, 0, n.fn});
            return d;
        }
    }
    return 1;
}

inline std::string Expr::print_node(const detail::Node& n, int parent_prec) {
    using K = detail::Node::Kind;
    // precedence: add/sub 1, mul/div 2, unary minus 3, pow 4
    auto wrap = [&](int prec, const std::string& s) {
        return prec < parent_prec ? "(" + s + ")" : s;
    };
    switch (n.kind) {
        case K::Const: {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", n.value);
            std::string s(buf);
            return (n.value < 0) ? "(" + s + ")" : s;
        }
        case K::Var: return n.var_name;
        case K::Neg: return wrap(3, "-" + print_node(*n.lhs, 4));
        case K::Add: return wrap(1, print_node(*n.lhs, 1) + "+" + print_node(*n.rhs, 2));
        case K::Sub: return wrap(1, print_node(*n.lhs, 1) + "-" + print_node(*n.rhs, 2));
        case K::Mul: return wrap(2, print_node(*n.lhs, 2) + "*" + print_node(*n.rhs, 3));
        case K::Div: return wrap(2, print_node(*n.lhs, 2) + "/" + print_node(*n.rhs, 3));
        case K::Pow: return wrap(4, print_node(*n.lhs, 5) + "^" + print_node(*n.rhs, 4));
        case K::Call: return std::string(detail::name_of(n.fn)) + "(" + print_node(*n.lhs, 0) + ")";
    }
    return "0";
}

} // namespace mudicho
