#include "nlpinn/pddo.hpp"

#include "nlpinn/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

namespace nlpinn {

std::array<int, 2> orders(DerivativeTag t) {
    switch (t) {
    case DerivativeTag::f00: return {0, 0};
    case DerivativeTag::d10: return {1, 0};
    case DerivativeTag::d01: return {0, 1};
    case DerivativeTag::d20: return {2, 0};
    case DerivativeTag::d02: return {0, 2};
    case DerivativeTag::d11: return {1, 1};
    }
    return {0, 0};
}

DerivativeTag tag_from_orders(int p1, int p2) {
    for (DerivativeTag t : all_tags)
        if (orders(t) == std::array<int, 2>{p1, p2}) return t;
    throw InvalidArgument("no derivative tag (" + std::to_string(p1) + "," + std::to_string(p2) + ")");
}

std::string to_string(DerivativeTag t) {
    const auto o = orders(t);
    return std::to_string(o[0]) + std::to_string(o[1]);
}

std::array<double, 6> basis(const Point2& xi) {
    return {1.0, xi[0], xi[1], xi[0] * xi[0], xi[1] * xi[1], xi[0] * xi[1]};
}

MomentSystem assemble_moment_matrix(const PointFamily& family) {
    MomentSystem ms;
    ms.point = family.center;
    for (std::size_t j = 0; j < family.size(); ++j) {
        const auto m = basis(family.xi[j]);
        const double wa = family.weights[j] * family.areas[j];
        for (std::size_t r = 0; r < 6; ++r)
            for (std::size_t c = 0; c < 6; ++c) ms.A[r][c] += wa * m[r] * m[c];
    }
    for (std::size_t r = 0; r < 6; ++r) ms.b[r][r] = basis_factorials[r];
    return ms;
}

namespace {

// In-place LU with partial pivoting; returns false on a tiny pivot and
// leaves its magnitude in `bad_pivot`.
bool lu_factor(Mat6& a, std::array<std::size_t, 6>& perm, double tol, double& bad_pivot) {
    for (std::size_t i = 0; i < 6; ++i) perm[i] = i;
    for (std::size_t k = 0; k < 6; ++k) {
        std::size_t piv = k;
        for (std::size_t r = k + 1; r < 6; ++r)
            if (std::abs(a[r][k]) > std::abs(a[piv][k])) piv = r;
        if (std::abs(a[piv][k]) < tol) {
            bad_pivot = std::abs(a[piv][k]);
            return false;
        }
        std::swap(a[k], a[piv]);
        std::swap(perm[k], perm[piv]);
        for (std::size_t r = k + 1; r < 6; ++r) {
            a[r][k] /= a[k][k];
            for (std::size_t c = k + 1; c < 6; ++c) a[r][c] -= a[r][k] * a[k][c];
        }
    }
    return true;
}

std::array<double, 6> lu_solve(const Mat6& lu, const std::array<std::size_t, 6>& perm,
                               const std::array<double, 6>& rhs) {
    std::array<double, 6> y{};
    for (std::size_t i = 0; i < 6; ++i) {
        double s = rhs[perm[i]];
        for (std::size_t k = 0; k < i; ++k) s -= lu[i][k] * y[k];
        y[i] = s;
    }
    for (std::size_t i = 6; i-- > 0;) {
        double s = y[i];
        for (std::size_t k = i + 1; k < 6; ++k) s -= lu[i][k] * y[k];
        y[i] = s / lu[i][i];
    }
    return y;
}

double norm1(const Mat6& m) {
    double best = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < 6; ++r) s += std::abs(m[r][c]);
        best = std::max(best, s);
    }
    return best;
}

} // namespace

MomentSystem solve_pd_coefficients(MomentSystem ms) {
    // Symmetric diagonal scaling: the raw entries span xi^0 .. xi^4.
    std::array<double, 6> d{};
    for (std::size_t i = 0; i < 6; ++i) {
        if (!(ms.A[i][i] > 0.0)) throw SingularMomentMatrix(ms.point, INFINITY);
        d[i] = 1.0 / std::sqrt(ms.A[i][i]);
    }
    Mat6 scaled{};
    double amax = 0.0;
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 6; ++c) {
            scaled[r][c] = d[r] * ms.A[r][c] * d[c];
            amax = std::max(amax, std::abs(scaled[r][c]));
        }

    Mat6 lu = scaled;
    std::array<std::size_t, 6> perm{};
    double bad_pivot = 0.0;
    if (!lu_factor(lu, perm, 1e-12 * amax, bad_pivot))
        throw SingularMomentMatrix(ms.point, bad_pivot > 0.0 ? amax / bad_pivot : INFINITY);

    Mat6 inv{};
    for (std::size_t c = 0; c < 6; ++c) {
        std::array<double, 6> e{};
        e[c] = 1.0;
        const auto col = lu_solve(lu, perm, e);
        for (std::size_t r = 0; r < 6; ++r) inv[r][c] = col[r];
    }
    ms.condition_estimate = norm1(scaled) * norm1(inv);

    // A a = b  <=>  (D A D)(D^-1 a) = D b
    for (std::size_t p = 0; p < 6; ++p) {
        std::array<double, 6> rhs{};
        for (std::size_t r = 0; r < 6; ++r) rhs[r] = d[r] * ms.b[r][p];
        const auto y = lu_solve(lu, perm, rhs);
        for (std::size_t q = 0; q < 6; ++q) ms.coefficients[q][p] = d[q] * y[q];
    }
    ms.solved = true;
    return ms;
}

PdOperatorEntry evaluate_g_weights(const PointFamily& family, const MomentSystem& ms) {
    PdOperatorEntry entry;
    for (auto& g : entry.G) g.resize(family.size());
    for (std::size_t j = 0; j < family.size(); ++j) {
        const auto m = basis(family.xi[j]);
        const double wa = family.weights[j] * family.areas[j];
        for (std::size_t p = 0; p < 6; ++p) {
            double g = 0.0;
            for (std::size_t q = 0; q < 6; ++q) g += ms.coefficients[q][p] * m[q];
            entry.G[p][j] = wa * g;
        }
    }
    return entry;
}

PdOperatorSet build_operator_set(const PointCloud& cloud, std::vector<PointFamily> families) {
    if (families.size() != cloud.size())
        throw InvalidArgument("build_operator_set: one family per point required");
    PdOperatorSet ops;
    ops.entries.resize(families.size());
    std::vector<std::size_t> failed;
    std::string first;
    for (std::size_t p = 0; p < families.size(); ++p) {
        try {
            if (families[p].size() < 6) throw OperatorUnderdetermined(p, families[p].size());
            const MomentSystem ms = solve_pd_coefficients(assemble_moment_matrix(families[p]));
            ops.entries[p] = evaluate_g_weights(families[p], ms);
        } catch (const NumericalError& e) {
            if (failed.empty()) first = e.what();
            failed.push_back(p);
        }
    }
    if (!failed.empty()) throw OperatorSetError(std::move(failed), first);
    ops.families = std::move(families);
    return ops;
}

std::vector<double> apply_operator(const PdOperatorSet& ops, std::span<const double> field,
                                   DerivativeTag tag) {
    if (field.size() != ops.size())
        throw InvalidArgument("apply_operator: field has " + std::to_string(field.size()) +
                              " values, operator set has " + std::to_string(ops.size()) + " points");
    std::vector<double> out(ops.size(), 0.0);
    for (std::size_t p = 0; p < ops.size(); ++p) {
        const auto& fam = ops.families[p];
        const auto& G = ops.entries[p][tag];
        double s = 0.0;
        for (std::size_t j = 0; j < fam.size(); ++j) s += field[fam.members[j]] * G[j];
        out[p] = s;
    }
    return out;
}

double orthogonality_residual(const PointFamily& family, const PdOperatorEntry& entry) {
    double worst = 0.0;
    for (std::size_t p = 0; p < 6; ++p) {
        std::array<double, 6> moments{};
        for (std::size_t j = 0; j < family.size(); ++j) {
            const auto m = basis(family.xi[j]);
            for (std::size_t n = 0; n < 6; ++n) moments[n] += m[n] * entry.G[p][j];
        }
        for (std::size_t n = 0; n < 6; ++n) {
            const double expected = n == p ? 1.0 : 0.0;
            worst = std::max(worst, std::abs(moments[n] / basis_factorials[n] - expected));
        }
    }
    return worst;
}

double moment_residual(const MomentSystem& ms) {
    double worst = 0.0;
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t p = 0; p < 6; ++p) {
            double s = 0.0;
            for (std::size_t k = 0; k < 6; ++k) s += ms.A[r][k] * ms.coefficients[k][p];
            worst = std::max(worst, std::abs(s - ms.b[r][p]));
        }
    return worst;
}

void write_operator_table(const PdOperatorSet& ops, std::ostream& out) {
    out << "# nlpinn-pddo-operators v1\n";
    out << "# columns: point tag member_count (member G)...; basis order 00 10 01 20 02 11\n";
    char buf[64];
    for (std::size_t p = 0; p < ops.size(); ++p) {
        const auto& fam = ops.families[p];
        for (DerivativeTag t : all_tags) {
            out << p << ' ' << to_string(t) << ' ' << fam.size();
            const auto& G = ops.entries[p][t];
            for (std::size_t j = 0; j < fam.size(); ++j) {
                std::snprintf(buf, sizeof buf, " %zu %.17g", fam.members[j], G[j]);
                out << buf;
            }
            out << '\n';
        }
    }
}

} // namespace nlpinn
