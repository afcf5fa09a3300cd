#pragma once

//! \file tape.hpp
//! \brief Scalar reverse-mode computation graph.
//!
//! Every node stores its value and the list of (parent, local partial)
//! edges. Backward propagation is a single reverse sweep that scatters
//! adjoints along those edges. Nodes that themselves depend on partials
//! of other nodes (input-derivative chains) are ordinary nodes, so
//! reverse sweeps through them yield exact mixed second-order terms.

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace nlpinn::ad {

//! Node classes, reported when a non-finite value is found.
enum class NodeClass : std::uint8_t {
    leaf,
    constant,
    arithmetic,
    elementary,
    affine,       // network pre-activation / weighted sums
    activation,   // network nonlinearity and its tangent
    stencil,      // PDDO dot products
    reduction,    // loss reductions
};

std::string_view to_string(NodeClass c);

class Tape;

//! Handle to a tape node. Cheap to copy; valid while its tape lives.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;

    double value() const;
};

struct Edge {
    std::uint32_t parent;
    double partial;
};

class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    //! Drop all nodes but keep allocated capacity.
    void clear();

    std::size_t size() const { return values_.size(); }
    std::size_t edge_count() const { return parents_.size(); }

    Var leaf(double v) { return push(v, {}, NodeClass::leaf); }
    Var constant(double v) { return push(v, {}, NodeClass::constant); }

    //! Append a node with explicit edges.
    Var push(double value, std::span<const Edge> edges, NodeClass cls);

    //! Node construction without a temporary edge array.
    Var begin_node(NodeClass cls);
    void add_edge(Var node, std::uint32_t parent, double partial);
    void finish_node(Var node, double value);

    double value(Var v) const { return values_[v.id]; }
    double value(std::uint32_t id) const { return values_[id]; }

    //! Reverse sweep seeded with d(output)/d(output) = 1.
    //! Returns adjoints for every node id. Throws PoisonedGradient when a
    //! value on the path or an adjoint is non-finite.
    const std::vector<double>& backward(Var output);

    //! First node, in creation order, holding a non-finite value, or -1.
    long first_nonfinite() const;
    NodeClass node_class(std::uint32_t id) const { return classes_[id]; }

  private:
    std::vector<double> values_;
    std::vector<NodeClass> classes_;
    std::vector<std::uint32_t> edge_begin_{0};
    std::vector<std::uint32_t> parents_;
    std::vector<double> partials_;
    std::vector<double> adjoints_;
};

inline double Var::value() const { return tape->value(*this); }

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);

//! sqrt with subgradient 0 at exactly 0.
Var sqrt(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
//! max(a, 0); subgradient 0 at exactly 0.
Var relu(Var a);
Var softplus(Var a);
Var square(Var a);

//! sum_k coeffs[k] * xs[k]
Var weighted_sum(std::span<const Var> xs, std::span<const double> coeffs,
                 NodeClass cls = NodeClass::stencil);
Var sum(std::span<const Var> xs, NodeClass cls = NodeClass::reduction);

} // namespace nlpinn::ad

namespace nlpinn {

//! Scalar helpers shared by double and ad::Var code paths.
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double square(double x) { return x * x; }
double softplus(double x);
double softplus_inverse(double y);

} // namespace nlpinn
