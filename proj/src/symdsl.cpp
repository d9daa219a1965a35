#include "meta/symdsl.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace meta::dsl {

namespace {
constexpr double kGuard = 1e-10;
constexpr double kClamp = 1e12;

double clampv(double x) {
    if (std::isnan(x)) return 0.0;
    if (x > kClamp) return kClamp;
    if (x < -kClamp) return -kClamp;
    return x;
}

// sgn with sgn(0) = 0, for the sgn operator.
double sgn0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
// sgn with sgn(0) = 1, used only inside division protection.
double sgn1(double x) { return x < 0.0 ? -1.0 : 1.0; }
} // namespace

ExprPtr Expr::constant(double v) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Constant;
    e->value = v;
    return e;
}

ExprPtr Expr::variable(std::string name) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Variable;
    e->name = std::move(name);
    return e;
}

ExprPtr Expr::unary(UnaryOp op, ExprPtr child) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Unary;
    e->uop = op;
    e->a = std::move(child);
    return e;
}

ExprPtr Expr::binary(BinaryOp op, ExprPtr lhs, ExprPtr rhs) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Binary;
    e->bop = op;
    e->a = std::move(lhs);
    e->b = std::move(rhs);
    return e;
}

ExprPtr Expr::ternary(TernaryOp op, ExprPtr a, ExprPtr b, ExprPtr c) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Ternary;
    e->top = op;
    e->a = std::move(a);
    e->b = std::move(b);
    e->c = std::move(c);
    return e;
}

bool Signature::has(const std::string& name) const {
    for (const auto& [n, d] : vars)
        if (n == name) return true;
    return false;
}

Signature Signature::drift() {
    Signature s;
    s.vars = {
        {"r", "the ratio of the new policy to the previous (reference) policy"},
        {"A", "the GAE advantage estimate of the policy"},
        {"eps", "the clip epsilon value used in PPO"},
    };
    return s;
}

Signature Signature::optimizer() {
    Signature s;
    s.vars = {
        {"p", "the current value of the parameter being optimised"},
        {"g", "the gradient of the loss function with respect to the parameter"},
        {"m_0_1", "historic momentum of the gradient, m_0_1 = 0.1 * g + 0.9 * m_0_1"},
        {"m_0_5", "historic momentum of the gradient, m_0_5 = 0.5 * g + 0.5 * m_0_5"},
        {"m_0_9", "historic momentum of the gradient, m_0_9 = 0.9 * g + 0.1 * m_0_9"},
        {"m_0_99", "historic momentum of the gradient, m_0_99 = 0.99 * g + 0.01 * m_0_99"},
        {"m_0_999", "historic momentum of the gradient, m_0_999 = 0.999 * g + 0.001 * m_0_999"},
        {"m_0_9999", "historic momentum of the gradient, m_0_9999 = 0.9999 * g + 0.0001 * m_0_9999"},
        {"l_p", "the layer proportion: how deep the parameter is in the network, 0. in the first layer up to 1. in the final layer"},
        {"b_p", "the batch proportion: how far through the total number of epochs with a fixed batch of data training is"},
        {"t_p", "the training proportion: how far training is through the full horizon"},
        {"dorm", "the dormancy of the neuron the parameter is going into, between 0. and the number of neurons in the layer"},
        {"rand", "a random, normally distributed value, which can be applied for stochasticity"},
        {"lr", "the learning rate, tuned per environment and annealed over the course of training"},
        {"iteration", "the total iteration count"},
    };
    return s;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

struct FnInfo {
    int arity;
    NodeKind kind;
    UnaryOp uop{};
    BinaryOp bop{};
    TernaryOp top{};
};

const std::map<std::string, FnInfo>& function_table() {
    static const std::map<std::string, FnInfo> table = {
        {"neg", {1, NodeKind::Unary, UnaryOp::Neg}},
        {"abs", {1, NodeKind::Unary, UnaryOp::Abs}},
        {"log", {1, NodeKind::Unary, UnaryOp::Log}},
        {"exp", {1, NodeKind::Unary, UnaryOp::Exp}},
        {"tanh", {1, NodeKind::Unary, UnaryOp::Tanh}},
        {"relu", {1, NodeKind::Unary, UnaryOp::Relu}},
        {"sin", {1, NodeKind::Unary, UnaryOp::Sin}},
        {"cos", {1, NodeKind::Unary, UnaryOp::Cos}},
        {"sgn", {1, NodeKind::Unary, UnaryOp::Sgn}},
        {"square", {1, NodeKind::Unary, UnaryOp::Square}},
        {"min", {2, NodeKind::Binary, {}, BinaryOp::Min}},
        {"max", {2, NodeKind::Binary, {}, BinaryOp::Max}},
        {"pow", {2, NodeKind::Binary, {}, BinaryOp::Pow}},
        {"clip", {3, NodeKind::Ternary, {}, {}, TernaryOp::Clip}},
        {"where", {3, NodeKind::Ternary, {}, {}, TernaryOp::Where}},
    };
    return table;
}

class Parser {
public:
    Parser(const std::string& text, const Signature& sig) : text_(text), sig_(sig) {}

    ExprPtr run() {
        ExprPtr e = parse_sum();
        skip_ws();
        if (pos_ != text_.size())
            throw ParseError("unexpected trailing input", pos_);
        return e;
    }

private:
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool peek(char c) {
        skip_ws();
        return pos_ < text_.size() && text_[pos_] == c;
    }

    bool accept(char c) {
        if (peek(c)) { ++pos_; return true; }
        return false;
    }

    void expect(char c) {
        if (!accept(c))
            throw ParseError(std::string("expected '") + c + "'", pos_);
    }

    // sum := product (('+'|'-') product)*
    ExprPtr parse_sum() {
        ExprPtr e = parse_product();
        while (true) {
            if (accept('+')) e = Expr::binary(BinaryOp::Add, e, parse_product());
            else if (accept('-')) e = Expr::binary(BinaryOp::Sub, e, parse_product());
            else return e;
        }
    }

    // product := power (('*'|'/') power)*
    ExprPtr parse_product() {
        ExprPtr e = parse_power();
        while (true) {
            if (accept('*')) e = Expr::binary(BinaryOp::Mul, e, parse_power());
            else if (accept('/')) e = Expr::binary(BinaryOp::Div, e, parse_power());
            else return e;
        }
    }

    // power := unary ('^' power)?   (right associative)
    ExprPtr parse_power() {
        ExprPtr e = parse_unary();
        if (accept('^')) return Expr::binary(BinaryOp::Pow, e, parse_power());
        return e;
    }

    // unary := '-' unary | atom
    ExprPtr parse_unary() {
        if (accept('-')) return Expr::unary(UnaryOp::Neg, parse_unary());
        return parse_atom();
    }

    ExprPtr parse_atom() {
        skip_ws();
        if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
        char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            ExprPtr e = parse_sum();
            expect(')');
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
        throw ParseError(std::string("unexpected character '") + c + "'", pos_);
    }

    ExprPtr parse_number() {
        std::size_t start = pos_;
        const char* begin = text_.c_str() + pos_;
        char* end = nullptr;
        double v = std::strtod(begin, &end);
        if (end == begin) throw ParseError("invalid number", start);
        pos_ += static_cast<std::size_t>(end - begin);
        return Expr::constant(v);
    }

    ExprPtr parse_identifier() {
        std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
            ++pos_;
        std::string name = text_.substr(start, pos_ - start);
        auto it = function_table().find(name);
        if (it != function_table().end() && peek('(')) {
            expect('(');
            std::vector<ExprPtr> args;
            args.push_back(parse_sum());
            while (accept(',')) args.push_back(parse_sum());
            expect(')');
            const FnInfo& fn = it->second;
            if (static_cast<int>(args.size()) != fn.arity)
                throw ParseError("function '" + name + "' expects " + std::to_string(fn.arity) +
                                     " arguments, got " + std::to_string(args.size()),
                                 start);
            switch (fn.kind) {
            case NodeKind::Unary: return Expr::unary(fn.uop, args[0]);
            case NodeKind::Binary: return Expr::binary(fn.bop, args[0], args[1]);
            default: return Expr::ternary(fn.top, args[0], args[1], args[2]);
            }
        }
        if (!sig_.has(name))
            throw ParseError("unknown identifier '" + name + "'", start);
        return Expr::variable(name);
    }

    const std::string& text_;
    const Signature& sig_;
    std::size_t pos_ = 0;
};

} // namespace

ExprPtr parse(const std::string& text, const Signature& sig, int max_size) {
    Parser p(text, sig);
    ExprPtr e = p.run();
    if (max_size > 0 && complexity(e) > max_size)
        throw ParseError("expression exceeds max size " + std::to_string(max_size), 0);
    return e;
}

// ---------------------------------------------------------------------------
// Evaluation

double eval_expr(const ExprPtr& e, const Bindings& bindings) {
    switch (e->kind) {
    case NodeKind::Constant:
        return clampv(e->value);
    case NodeKind::Variable: {
        auto it = bindings.find(e->name);
        if (it == bindings.end())
            throw std::invalid_argument("eval_expr: unbound variable '" + e->name + "'");
        return clampv(it->second);
    }
    case NodeKind::Unary: {
        double x = eval_expr(e->a, bindings);
        switch (e->uop) {
        case UnaryOp::Neg: return clampv(-x);
        case UnaryOp::Abs: return clampv(std::fabs(x));
        case UnaryOp::Log: return clampv(std::log(std::fabs(x) + kGuard));
        case UnaryOp::Exp: return clampv(std::exp(std::min(x, 700.0)));
        case UnaryOp::Tanh: return clampv(std::tanh(x));
        case UnaryOp::Relu: return x > 0.0 ? clampv(x) : 0.0;
        case UnaryOp::Sin: return clampv(std::sin(x));
        case UnaryOp::Cos: return clampv(std::cos(x));
        case UnaryOp::Sgn: return sgn0(x);
        case UnaryOp::Square: return clampv(x * x);
        }
        return 0.0;
    }
    case NodeKind::Binary: {
        double a = eval_expr(e->a, bindings);
        double b = eval_expr(e->b, bindings);
        switch (e->bop) {
        case BinaryOp::Add: return clampv(a + b);
        case BinaryOp::Sub: return clampv(a - b);
        case BinaryOp::Mul: return clampv(a * b);
        case BinaryOp::Div: return clampv(a / (b + sgn1(b) * kGuard));
        case BinaryOp::Min: return std::min(a, b);
        case BinaryOp::Max: return std::max(a, b);
        case BinaryOp::Pow: {
            double rounded = std::nearbyint(b);
            if (b == rounded && std::fabs(b) <= 4.0) {
                int n = static_cast<int>(rounded);
                double acc = 1.0;
                for (int i = 0; i < std::abs(n); ++i) acc = clampv(acc * a);
                if (n < 0) acc = clampv(acc == 0.0 ? 1.0 / kGuard : 1.0 / acc);
                return clampv(acc);
            }
            return clampv(std::exp(std::min(b * std::log(std::fabs(a) + kGuard), 700.0)));
        }
        }
        return 0.0;
    }
    case NodeKind::Ternary: {
        if (e->top == TernaryOp::Clip) {
            double x = eval_expr(e->a, bindings);
            double lo = eval_expr(e->b, bindings);
            double hi = eval_expr(e->c, bindings);
            if (lo > hi) std::swap(lo, hi);
            return clampv(std::min(std::max(x, lo), hi));
        }
        double cond = eval_expr(e->a, bindings);
        return cond > 0.0 ? eval_expr(e->b, bindings) : eval_expr(e->c, bindings);
    }
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Printing

namespace {

const char* unary_name(UnaryOp op) {
    switch (op) {
    case UnaryOp::Neg: return "neg";
    case UnaryOp::Abs: return "abs";
    case UnaryOp::Log: return "log";
    case UnaryOp::Exp: return "exp";
    case UnaryOp::Tanh: return "tanh";
    case UnaryOp::Relu: return "relu";
    case UnaryOp::Sin: return "sin";
    case UnaryOp::Cos: return "cos";
    case UnaryOp::Sgn: return "sgn";
    case UnaryOp::Square: return "square";
    }
    return "?";
}

std::string format_constant(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    std::string s(buf);
    if (v < 0.0) return "(" + s + ")"; // keeps reparse unambiguous inside infix context
    return s;
}

void print_rec(const ExprPtr& e, std::ostream& os) {
    switch (e->kind) {
    case NodeKind::Constant:
        os << format_constant(e->value);
        return;
    case NodeKind::Variable:
        os << e->name;
        return;
    case NodeKind::Unary:
        os << unary_name(e->uop) << "(";
        print_rec(e->a, os);
        os << ")";
        return;
    case NodeKind::Binary:
        switch (e->bop) {
        case BinaryOp::Add: case BinaryOp::Sub: case BinaryOp::Mul: case BinaryOp::Div: {
            const char* sym = e->bop == BinaryOp::Add ? " + "
                              : e->bop == BinaryOp::Sub ? " - "
                              : e->bop == BinaryOp::Mul ? " * " : " / ";
            os << "(";
            print_rec(e->a, os);
            os << sym;
            print_rec(e->b, os);
            os << ")";
            return;
        }
        case BinaryOp::Min: case BinaryOp::Max: case BinaryOp::Pow: {
            const char* name = e->bop == BinaryOp::Min ? "min"
                               : e->bop == BinaryOp::Max ? "max" : "pow";
            os << name << "(";
            print_rec(e->a, os);
            os << ", ";
            print_rec(e->b, os);
            os << ")";
            return;
        }
        }
        return;
    case NodeKind::Ternary:
        os << (e->top == TernaryOp::Clip ? "clip" : "where") << "(";
        print_rec(e->a, os);
        os << ", ";
        print_rec(e->b, os);
        os << ", ";
        print_rec(e->c, os);
        os << ")";
        return;
    }
}

} // namespace

std::string print_expr(const ExprPtr& e) {
    std::ostringstream os;
    print_rec(e, os);
    return os.str();
}

int complexity(const ExprPtr& e) {
    int n = 1;
    if (e->a) n += complexity(e->a);
    if (e->b) n += complexity(e->b);
    if (e->c) n += complexity(e->c);
    return n;
}

// ---------------------------------------------------------------------------
// Edit primitives

namespace {

int child_count(const ExprPtr& e) {
    return (e->a ? 1 : 0) + (e->b ? 1 : 0) + (e->c ? 1 : 0);
}

// Visit nodes in preorder; returns the node at `index` (0-based).
ExprPtr node_at(const ExprPtr& e, int index) {
    std::function<ExprPtr(const ExprPtr&, int&)> go = [&](const ExprPtr& n, int& i) -> ExprPtr {
        if (i == 0) return n;
        --i;
        for (const ExprPtr* child : {&n->a, &n->b, &n->c}) {
            if (*child) {
                ExprPtr r = go(*child, i);
                if (r) return r;
            }
        }
        return nullptr;
    };
    int i = index;
    return go(e, i);
}

// Replace the node at preorder `index` with `repl`, rebuilding the spine.
ExprPtr replace_at(const ExprPtr& e, int index, const ExprPtr& repl) {
    std::function<ExprPtr(const ExprPtr&, int&)> go = [&](const ExprPtr& n, int& i) -> ExprPtr {
        if (i == 0) { --i; return repl; }
        --i;
        ExprPtr kids[3] = {n->a, n->b, n->c};
        bool changed = false;
        for (auto& k : kids) {
            if (k && i >= 0) {
                ExprPtr r = go(k, i);
                if (r != k) { k = r; changed = true; }
            }
        }
        if (!changed) return n;
        auto copy = std::make_shared<Expr>(*n);
        copy->a = kids[0];
        copy->b = kids[1];
        copy->c = kids[2];
        return copy;
    };
    int i = index;
    return go(e, i);
}

UnaryOp random_unary(RngStream& rng) {
    static const UnaryOp ops[] = {UnaryOp::Neg, UnaryOp::Abs, UnaryOp::Log, UnaryOp::Exp,
                                  UnaryOp::Tanh, UnaryOp::Relu, UnaryOp::Sin, UnaryOp::Cos,
                                  UnaryOp::Sgn, UnaryOp::Square};
    return ops[rng.uniform_int(10)];
}

BinaryOp random_binary(RngStream& rng) {
    static const BinaryOp ops[] = {BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div,
                                   BinaryOp::Min, BinaryOp::Max, BinaryOp::Pow};
    return ops[rng.uniform_int(7)];
}

ExprPtr random_leaf(const Signature& sig, RngStream& rng) {
    if (rng.uniform() < 0.5)
        return Expr::constant(rng.normal(0.0, 1.0));
    return Expr::variable(sig.vars[rng.uniform_int(sig.vars.size())].first);
}

} // namespace

ExprPtr random_tree(const Signature& sig, RngStream& rng, int depth) {
    if (depth <= 0) return random_leaf(sig, rng);
    double u = rng.uniform();
    if (u < 0.3) return random_leaf(sig, rng);
    if (u < 0.55) return Expr::unary(random_unary(rng), random_tree(sig, rng, depth - 1));
    return Expr::binary(random_binary(rng), random_tree(sig, rng, depth - 1),
                        random_tree(sig, rng, depth - 1));
}

ExprPtr mutate(const ExprPtr& e, const Signature& sig, RngStream& rng, int max_size) {
    for (int attempt = 0; attempt < 20; ++attempt) {
        const int n = complexity(e);
        const int edit = static_cast<int>(rng.uniform_int(6));
        ExprPtr out;
        switch (edit) {
        case 0: { // point-change operator
            int idx = static_cast<int>(rng.uniform_int(n));
            ExprPtr node = node_at(e, idx);
            auto copy = std::make_shared<Expr>(*node);
            if (node->kind == NodeKind::Unary) copy->uop = random_unary(rng);
            else if (node->kind == NodeKind::Binary && child_count(node) == 2) copy->bop = random_binary(rng);
            else break; // not applicable, retry
            out = replace_at(e, idx, copy);
            break;
        }
        case 1: { // replace a leaf
            std::vector<int> leaves;
            for (int i = 0; i < n; ++i)
                if (child_count(node_at(e, i)) == 0) leaves.push_back(i);
            int idx = leaves[rng.uniform_int(leaves.size())];
            out = replace_at(e, idx, random_leaf(sig, rng));
            break;
        }
        case 2: { // insert a unary above a node
            int idx = static_cast<int>(rng.uniform_int(n));
            ExprPtr node = node_at(e, idx);
            out = replace_at(e, idx, Expr::unary(random_unary(rng), node));
            break;
        }
        case 3: { // delete a unary
            std::vector<int> unaries;
            for (int i = 0; i < n; ++i)
                if (node_at(e, i)->kind == NodeKind::Unary) unaries.push_back(i);
            if (unaries.empty()) break;
            int idx = unaries[rng.uniform_int(unaries.size())];
            out = replace_at(e, idx, node_at(e, idx)->a);
            break;
        }
        case 4: { // perturb a constant
            std::vector<int> consts;
            for (int i = 0; i < n; ++i)
                if (node_at(e, i)->kind == NodeKind::Constant) consts.push_back(i);
            if (consts.empty()) break;
            int idx = consts[rng.uniform_int(consts.size())];
            double c = node_at(e, idx)->value;
            out = replace_at(e, idx, Expr::constant(c + rng.normal(0.0, 0.1 * (1.0 + std::fabs(c)))));
            break;
        }
        case 5: { // replace a random subtree with a depth-<=2 random tree
            int idx = static_cast<int>(rng.uniform_int(n));
            out = replace_at(e, idx, random_tree(sig, rng, 2));
            break;
        }
        }
        if (out && complexity(out) <= max_size) return out;
    }
    return e;
}

ExprPtr crossover(const ExprPtr& a, const ExprPtr& b, RngStream& rng, int max_size) {
    for (int attempt = 0; attempt < 20; ++attempt) {
        int ia = static_cast<int>(rng.uniform_int(complexity(a)));
        int ib = static_cast<int>(rng.uniform_int(complexity(b)));
        ExprPtr out = replace_at(a, ia, node_at(b, ib));
        if (complexity(out) <= max_size) return out;
    }
    return a;
}

std::vector<double> collect_constants(const ExprPtr& e) {
    std::vector<double> out;
    std::function<void(const ExprPtr&)> go = [&](const ExprPtr& n) {
        if (n->kind == NodeKind::Constant) out.push_back(n->value);
        for (const ExprPtr* child : {&n->a, &n->b, &n->c})
            if (*child) go(*child);
    };
    go(e);
    return out;
}

ExprPtr replace_constants(const ExprPtr& e, const std::vector<double>& values) {
    std::size_t idx = 0;
    std::function<ExprPtr(const ExprPtr&)> go = [&](const ExprPtr& n) -> ExprPtr {
        if (n->kind == NodeKind::Constant) {
            if (idx >= values.size())
                throw std::invalid_argument("replace_constants: too few values");
            return Expr::constant(values[idx++]);
        }
        auto copy = std::make_shared<Expr>(*n);
        if (n->a) copy->a = go(n->a);
        if (n->b) copy->b = go(n->b);
        if (n->c) copy->c = go(n->c);
        return copy;
    };
    ExprPtr out = go(e);
    if (idx != values.size())
        throw std::invalid_argument("replace_constants: too many values");
    return out;
}

} // namespace meta::dsl
