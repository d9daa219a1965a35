#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "meta/rng.hpp"

namespace meta::dsl {

enum class NodeKind { Constant, Variable, Unary, Binary, Ternary };

enum class UnaryOp { Neg, Abs, Log, Exp, Tanh, Relu, Sin, Cos, Sgn, Square };
enum class BinaryOp { Add, Sub, Mul, Div, Min, Max, Pow };
enum class TernaryOp { Clip, Where };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
    NodeKind kind = NodeKind::Constant;
    double value = 0.0;           // Constant
    std::string name;             // Variable
    UnaryOp uop{};
    BinaryOp bop{};
    TernaryOp top{};
    ExprPtr a, b, c;              // children

    static ExprPtr constant(double v);
    static ExprPtr variable(std::string name);
    static ExprPtr unary(UnaryOp op, ExprPtr child);
    static ExprPtr binary(BinaryOp op, ExprPtr lhs, ExprPtr rhs);
    static ExprPtr ternary(TernaryOp op, ExprPtr a, ExprPtr b, ExprPtr c);
};

// Ordered variable names with human-readable descriptions (reused in prompts).
struct Signature {
    std::vector<std::pair<std::string, std::string>> vars; // name -> description

    bool has(const std::string& name) const;
    static Signature drift();      // r, A, eps
    static Signature optimizer();  // p, g, m_0_1..m_0_9999, l_p, b_p, t_p, dorm, rand, lr, iteration
};

struct ParseError : std::runtime_error {
    std::size_t position;
    ParseError(const std::string& what, std::size_t pos)
        : std::runtime_error(what), position(pos) {}
};

ExprPtr parse(const std::string& text, const Signature& sig, int max_size = 0);

using Bindings = std::map<std::string, double>;

// Total evaluation: protected log/div/pow, branch-by-sign where/clip, result
// clamped to [-1e12, 1e12] at every node.
double eval_expr(const ExprPtr& e, const Bindings& bindings);

std::string print_expr(const ExprPtr& e);

// Total node count.
int complexity(const ExprPtr& e);

ExprPtr mutate(const ExprPtr& e, const Signature& sig, RngStream& rng, int max_size);
ExprPtr crossover(const ExprPtr& a, const ExprPtr& b, RngStream& rng, int max_size);

// Random tree of depth <= depth over sig; used for population seeding and mutation.
ExprPtr random_tree(const Signature& sig, RngStream& rng, int depth);

// All constants in left-to-right order, and structural replacement of them.
std::vector<double> collect_constants(const ExprPtr& e);
ExprPtr replace_constants(const ExprPtr& e, const std::vector<double>& values);

} // namespace meta::dsl
