#include "nlpinn/tape.hpp"

#include "nlpinn/error.hpp"

#include <cmath>
#include <string>

namespace nlpinn {

double softplus(double x) {
    // log(1 + e^x) without overflow
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
    if (y <= 0.0) throw InvalidArgument("softplus_inverse: argument must be positive");
    return y > 30.0 ? y + std::log1p(-std::exp(-y)) : std::log(std::expm1(y));
}

} // namespace nlpinn

namespace nlpinn::ad {

std::string_view to_string(NodeClass c) {
    switch (c) {
    case NodeClass::leaf: return "leaf";
    case NodeClass::constant: return "constant";
    case NodeClass::arithmetic: return "arithmetic";
    case NodeClass::elementary: return "elementary-function";
    case NodeClass::affine: return "affine";
    case NodeClass::activation: return "activation";
    case NodeClass::stencil: return "stencil";
    case NodeClass::reduction: return "reduction";
    }
    return "unknown";
}

void Tape::clear() {
    values_.clear();
    classes_.clear();
    edge_begin_.assign(1, 0);
    parents_.clear();
    partials_.clear();
}

Var Tape::push(double value, std::span<const Edge> edges, NodeClass cls) {
    Var v = begin_node(cls);
    for (const Edge& e : edges) {
        parents_.push_back(e.parent);
        partials_.push_back(e.partial);
    }
    finish_node(v, value);
    return v;
}

Var Tape::begin_node(NodeClass cls) {
    values_.push_back(0.0);
    classes_.push_back(cls);
    return Var{this, static_cast<std::uint32_t>(values_.size() - 1)};
}

void Tape::add_edge(Var, std::uint32_t parent, double partial) {
    parents_.push_back(parent);
    partials_.push_back(partial);
}

void Tape::finish_node(Var node, double value) {
    values_[node.id] = value;
    edge_begin_.push_back(static_cast<std::uint32_t>(parents_.size()));
}

long Tape::first_nonfinite() const {
    for (std::size_t i = 0; i < values_.size(); ++i)
        if (!std::isfinite(values_[i])) return static_cast<long>(i);
    return -1;
}

const std::vector<double>& Tape::backward(Var output) {
    for (std::uint32_t i = 0; i <= output.id; ++i)
        if (!std::isfinite(values_[i]))
            throw PoisonedGradient(std::string(to_string(classes_[i])), "value");

    adjoints_.assign(values_.size(), 0.0);
    adjoints_[output.id] = 1.0;
    for (std::int64_t i = output.id; i >= 0; --i) {
        const double a = adjoints_[i];
        if (a == 0.0) continue;
        if (!std::isfinite(a))
            throw PoisonedGradient(std::string(to_string(classes_[i])), "adjoint");
        const std::uint32_t end = edge_begin_[i + 1];
        for (std::uint32_t e = edge_begin_[i]; e < end; ++e)
            adjoints_[parents_[e]] += a * partials_[e];
    }
    return adjoints_;
}

namespace {

Var unary(Var a, double value, double partial, NodeClass cls) {
    const Edge e{a.id, partial};
    return a.tape->push(value, {&e, 1}, cls);
}

Var binary(Var a, Var b, double value, double pa, double pb) {
    const Edge e[2] = {{a.id, pa}, {b.id, pb}};
    return a.tape->push(value, e, NodeClass::arithmetic);
}

} // namespace

Var operator+(Var a, Var b) { return binary(a, b, a.value() + b.value(), 1.0, 1.0); }
Var operator-(Var a, Var b) { return binary(a, b, a.value() - b.value(), 1.0, -1.0); }
Var operator*(Var a, Var b) { return binary(a, b, a.value() * b.value(), b.value(), a.value()); }
Var operator/(Var a, Var b) {
    const double inv = 1.0 / b.value();
    const double q = a.value() * inv;
    return binary(a, b, q, inv, -q * inv);
}
Var operator-(Var a) { return unary(a, -a.value(), -1.0, NodeClass::arithmetic); }
Var operator+(Var a, double b) { return unary(a, a.value() + b, 1.0, NodeClass::arithmetic); }
Var operator+(double a, Var b) { return b + a; }
Var operator-(Var a, double b) { return unary(a, a.value() - b, 1.0, NodeClass::arithmetic); }
Var operator-(double a, Var b) { return unary(b, a - b.value(), -1.0, NodeClass::arithmetic); }
Var operator*(Var a, double b) { return unary(a, a.value() * b, b, NodeClass::arithmetic); }
Var operator*(double a, Var b) { return b * a; }
Var operator/(Var a, double b) { return unary(a, a.value() / b, 1.0 / b, NodeClass::arithmetic); }
Var operator/(double a, Var b) {
    const double q = a / b.value();
    return unary(b, q, -q / b.value(), NodeClass::arithmetic);
}

Var sqrt(Var a) {
    const double r = std::sqrt(a.value());
    return unary(a, r, r > 0.0 ? 0.5 / r : 0.0, NodeClass::elementary);
}

Var tanh(Var a) {
    const double t = std::tanh(a.value());
    return unary(a, t, 1.0 - t * t, NodeClass::elementary);
}

Var exp(Var a) {
    const double e = std::exp(a.value());
    return unary(a, e, e, NodeClass::elementary);
}

Var log(Var a) { return unary(a, std::log(a.value()), 1.0 / a.value(), NodeClass::elementary); }

Var relu(Var a) {
    const double x = a.value();
    return unary(a, x > 0.0 ? x : 0.0, x > 0.0 ? 1.0 : 0.0, NodeClass::elementary);
}

Var softplus(Var a) {
    const double x = a.value();
    const double sig = 1.0 / (1.0 + std::exp(-x));
    return unary(a, nlpinn::softplus(x), sig, NodeClass::elementary);
}

Var square(Var a) { return unary(a, a.value() * a.value(), 2.0 * a.value(), NodeClass::elementary); }

Var weighted_sum(std::span<const Var> xs, std::span<const double> coeffs, NodeClass cls) {
    if (xs.size() != coeffs.size())
        throw InvalidArgument("weighted_sum: operand and coefficient counts differ");
    if (xs.empty()) throw InvalidArgument("weighted_sum: empty operand list");
    Tape& t = *xs.front().tape;
    Var node = t.begin_node(cls);
    double acc = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        if (coeffs[k] == 0.0) continue;
        acc += coeffs[k] * xs[k].value();
        t.add_edge(node, xs[k].id, coeffs[k]);
    }
    t.finish_node(node, acc);
    return node;
}

Var sum(std::span<const Var> xs, NodeClass cls) {
    if (xs.empty()) throw InvalidArgument("sum: empty operand list");
    Tape& t = *xs.front().tape;
    Var node = t.begin_node(cls);
    double acc = 0.0;
    for (const Var& x : xs) {
        acc += x.value();
        t.add_edge(node, x.id, 1.0);
    }
    t.finish_node(node, acc);
    return node;
}

} // namespace nlpinn::ad
