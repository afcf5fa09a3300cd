#pragma once

//! \file pddo.hpp
//! \brief Peridynamic differential operator on point families.
//!
//! For each family the PD functions g^{p1p2} are built from the quadratic
//! basis {1, xi1, xi2, xi1^2, xi2^2, xi1*xi2} (this order is used for all
//! rows, columns and serialized tables) so that their weighted moments are
//! orthogonal to the second-order Taylor expansion. A field sampled at the
//! family members then yields its value and derivatives at the center via
//! dot products with G^{p1p2}_j = g^{p1p2}(xi_j) * A_j.
//!
//! Sign convention: xi_j = x_j - x_center, so the member sample f_j is
//! f(x + xi_j) and the discrete sums reproduce derivatives without a sign
//! flip.

#include "nlpinn/mesh.hpp"

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace nlpinn {

//! Derivative orders (p1 in x, p2 in y); the six legal values of a
//! second-order operator, in basis order.
enum class DerivativeTag : std::size_t { f00 = 0, d10 = 1, d01 = 2, d20 = 3, d02 = 4, d11 = 5 };

inline constexpr std::array<DerivativeTag, 6> all_tags{DerivativeTag::f00, DerivativeTag::d10,
                                                        DerivativeTag::d01, DerivativeTag::d20,
                                                        DerivativeTag::d02, DerivativeTag::d11};

constexpr std::size_t index_of(DerivativeTag t) { return static_cast<std::size_t>(t); }
std::array<int, 2> orders(DerivativeTag t);
DerivativeTag tag_from_orders(int p1, int p2);
std::string to_string(DerivativeTag t);

using Mat6 = std::array<std::array<double, 6>, 6>;

//! Basis values {1, xi1, xi2, xi1^2, xi2^2, xi1*xi2}.
std::array<double, 6> basis(const Point2& xi);

//! n1! * n2! for each basis entry: {1, 1, 1, 2, 2, 1}.
inline constexpr std::array<double, 6> basis_factorials{1.0, 1.0, 1.0, 2.0, 2.0, 1.0};

//! Moment system of one family.
//! `coefficients[q][p]` is a^{p}_{q}: column p holds the basis expansion of
//! g^{p}, so that A * coefficients = b.
struct MomentSystem {
    std::size_t point = 0;
    Mat6 A{};
    Mat6 b{};
    Mat6 coefficients{};
    bool solved = false;
    double condition_estimate = 0.0;
};

//! G^{p1p2} weights of one family, aligned with the family members.
struct PdOperatorEntry {
    std::array<std::vector<double>, 6> G;

    const std::vector<double>& operator[](DerivativeTag t) const { return G[index_of(t)]; }
};

//! The discrete operator for a whole cloud.
struct PdOperatorSet {
    std::vector<PointFamily> families;
    std::vector<PdOperatorEntry> entries;

    std::size_t size() const { return entries.size(); }
};

MomentSystem assemble_moment_matrix(const PointFamily& family);

//! LU with partial pivoting on the diagonally equilibrated system.
//! Throws SingularMomentMatrix when a pivot falls below 1e-12 of the
//! largest scaled entry.
MomentSystem solve_pd_coefficients(MomentSystem ms);

PdOperatorEntry evaluate_g_weights(const PointFamily& family, const MomentSystem& ms);

//! Assemble, solve and evaluate for every family, in point order.
//! Failures are collected and reported together in an OperatorSetError.
PdOperatorSet build_operator_set(const PointCloud& cloud, std::vector<PointFamily> families);

//! out(x) = sum_j f_j * G^{tag}_j over the family of x.
std::vector<double> apply_operator(const PdOperatorSet& ops, std::span<const double> field,
                                   DerivativeTag tag);

//! Max over all 36 (n, p) pairs of
//! |1/(n1! n2!) sum_j xi1^n1 xi2^n2 G^p_j - delta_np|.
double orthogonality_residual(const PointFamily& family, const PdOperatorEntry& entry);

//! max |A * coefficients - b|
double moment_residual(const MomentSystem& ms);

//! Text table of all weights; format in docs/formats.md.
void write_operator_table(const PdOperatorSet& ops, std::ostream& out);

} // namespace nlpinn
