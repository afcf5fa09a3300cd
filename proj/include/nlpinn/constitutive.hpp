#pragma once

//! \file constitutive.hpp
//! \brief Plane-strain elasticity and von Mises deformation plasticity with
//! linear isotropic hardening.
//!
//! All relations are explicit in total strain (no history variables). The
//! templates are instantiated with double and with ad::Var so that loss
//! assembly and data generation share the same formulas.
//!
//! Tensor2D stores a single off-diagonal slot; every double contraction
//! a:b therefore counts xy twice: xx*xx + yy*yy + zz*zz + 2*xy*xy.

#include "nlpinn/tape.hpp"

#include <cmath>
#include <utility>

namespace nlpinn {

template <typename T>
struct Tensor2D {
    T xx{}, yy{}, zz{}, xy{};
};

template <typename T>
T contract(const Tensor2D<T>& a, const Tensor2D<T>& b) {
    return a.xx * b.xx + a.yy * b.yy + a.zz * b.zz + 2.0 * (a.xy * b.xy);
}

template <typename T>
T trace(const Tensor2D<T>& a) {
    return a.xx + a.yy + a.zz;
}

//! Material constants in SI units.
template <typename T>
struct Moduli {
    T lambda{};
    T mu{};
    T sigma_y0{};
    T hp{};
};

struct TrainableFlags {
    bool lambda = false;
    bool mu = false;
    bool sigma_y0 = false;
    bool hp = false;

    bool any() const { return lambda || mu || sigma_y0 || hp; }
};

struct MaterialParams {
    double lambda = 0.0;    // Pa
    double mu = 0.0;        // Pa
    double sigma_y0 = 0.0;  // Pa
    double hp = 0.0;        // Pa
    TrainableFlags trainable;

    Moduli<double> moduli() const { return {lambda, mu, sigma_y0, hp}; }
    double poisson() const { return lambda / (2.0 * (lambda + mu)); }
};

//! Throws InvalidArgument unless mu > 0, lambda + 2mu/3 > 0, sigma_y0 > 0, hp >= 0.
void validate(const MaterialParams& m);

//! (lambda, mu) from Young's modulus and Poisson's ratio; -1 < nu < 0.5.
std::pair<double, double> lame_from_engineering(double E, double nu);

template <typename T>
struct DeviatoricSplit {
    Tensor2D<T> e;
    T trace;
};

template <typename T>
struct PlasticState {
    T ebar{};
    T ebar_p{};
    Tensor2D<T> ep{};
};

template <typename T>
struct StressState {
    Tensor2D<T> sigma;
    T p;
    Tensor2D<T> s;
    T sigma_e;
};

//! Small strain from displacement gradients; eps_zz = 0 (plane strain).
template <typename T>
Tensor2D<T> strain_from_gradients(const T& dux_dx, const T& dux_dy, const T& duy_dx, const T& duy_dy) {
    Tensor2D<T> eps;
    eps.xx = dux_dx;
    eps.yy = duy_dy;
    eps.zz = 0.0 * dux_dx;
    eps.xy = 0.5 * (dux_dy + duy_dx);
    return eps;
}

template <typename T>
DeviatoricSplit<T> split_deviatoric(const Tensor2D<T>& eps) {
    const T tr = trace(eps);
    const T third = tr / 3.0;
    return {{eps.xx - third, eps.yy - third, eps.zz - third, eps.xy}, tr};
}

//! sqrt(2/3 e:e)
template <typename T>
T effective_strain(const Tensor2D<T>& e) {
    using std::sqrt;
    return sqrt((2.0 / 3.0) * contract(e, e));
}

//! sqrt(3/2 s:s)
template <typename T>
T effective_stress(const Tensor2D<T>& s) {
    using std::sqrt;
    return sqrt(1.5 * contract(s, s));
}

//! ReLU((3 mu ebar - sigma_y0) / (3 mu + hp))
template <typename T, typename M>
T equivalent_plastic_strain(const T& ebar, const Moduli<M>& m) {
    return relu((3.0 * m.mu * ebar - m.sigma_y0) / (3.0 * m.mu + m.hp));
}

//! Stress from total strain and plastic strain:
//! p = -(lambda + 2mu/3) tr(eps), s = 2mu (e - ep), sigma = s - p I.
template <typename T, typename M>
StressState<T> stress_response(const Tensor2D<T>& strain, const PlasticState<T>& plastic,
                               const Moduli<M>& m) {
    const auto dev = split_deviatoric(strain);
    StressState<T> out;
    out.p = -(m.lambda + (2.0 / 3.0) * m.mu) * dev.trace;
    const T two_mu = 2.0 * m.mu;
    out.s.xx = two_mu * (dev.e.xx - plastic.ep.xx);
    out.s.yy = two_mu * (dev.e.yy - plastic.ep.yy);
    out.s.zz = two_mu * (dev.e.zz - plastic.ep.zz);
    out.s.xy = two_mu * (dev.e.xy - plastic.ep.xy);
    out.sigma = {out.s.xx - out.p, out.s.yy - out.p, out.s.zz - out.p, out.s.xy};
    out.sigma_e = effective_stress(out.s);
    return out;
}

//! Elastic plane-strain out-of-plane stress nu * (sigma_xx + sigma_yy).
template <typename T, typename M>
T elastic_sigma_zz(const T& sxx, const T& syy, const Moduli<M>& m) {
    const auto nu = m.lambda / (2.0 * (m.lambda + m.mu));
    return nu * (sxx + syy);
}

//! Flow rule ep = (3 s / (2 sigma_e)) ebar_p. Returns zero for ebar_p = 0;
//! throws DegenerateFlowDirection if ebar_p > 0 and sigma_e < 1e-6 sigma_y0.
Tensor2D<double> plastic_strain_tensor(const Tensor2D<double>& s, double sigma_e, double ebar_p,
                                       double sigma_y0);

//! F = sigma_e - (sigma_y0 + hp ebar_p)
template <typename T, typename M>
T yield_value(const T& sigma_e, const T& ebar_p, const Moduli<M>& m) {
    return sigma_e - (m.sigma_y0 + m.hp * ebar_p);
}

//! Full deformation-theory state for a total strain: ebar -> ebar_p -> ep
//! (coaxial with e) -> stresses.
struct MaterialPointState {
    Tensor2D<double> strain;
    PlasticState<double> plastic;
    StressState<double> stress;
};

MaterialPointState evaluate_material_point(const Tensor2D<double>& strain, const MaterialParams& m,
                                           bool plasticity = true);

} // namespace nlpinn
