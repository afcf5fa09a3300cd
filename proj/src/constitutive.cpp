#include "nlpinn/constitutive.hpp"

#include "nlpinn/error.hpp"

namespace nlpinn {

void validate(const MaterialParams& m) {
    if (!(m.mu > 0.0)) throw InvalidArgument("material: mu must be positive");
    if (!(m.lambda + 2.0 * m.mu / 3.0 > 0.0))
        throw InvalidArgument("material: bulk modulus lambda + 2mu/3 must be positive");
    if (!(m.sigma_y0 > 0.0)) throw InvalidArgument("material: sigma_y0 must be positive");
    if (!(m.hp >= 0.0)) throw InvalidArgument("material: hp must be non-negative");
}

std::pair<double, double> lame_from_engineering(double E, double nu) {
    if (!(E > 0.0)) throw InvalidArgument("lame_from_engineering: E must be positive");
    if (!(nu > -1.0 && nu < 0.5))
        throw InvalidArgument("lame_from_engineering: Poisson ratio must lie in (-1, 0.5)");
    const double lambda = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    const double mu = E / (2.0 * (1.0 + nu));
    return {lambda, mu};
}

Tensor2D<double> plastic_strain_tensor(const Tensor2D<double>& s, double sigma_e, double ebar_p,
                                       double sigma_y0) {
    if (ebar_p < 0.0) throw InvalidArgument("plastic_strain_tensor: ebar_p must be non-negative");
    if (ebar_p == 0.0) return {};
    if (sigma_e < 1e-6 * sigma_y0)
        throw DegenerateFlowDirection("plastic_strain_tensor: positive plastic strain with vanishing "
                                      "effective stress");
    const double k = 1.5 * ebar_p / sigma_e;
    return {k * s.xx, k * s.yy, k * s.zz, k * s.xy};
}

MaterialPointState evaluate_material_point(const Tensor2D<double>& strain, const MaterialParams& m,
                                           bool plasticity) {
    MaterialPointState st;
    st.strain = strain;
    const auto dev = split_deviatoric(strain);
    st.plastic.ebar = effective_strain(dev.e);
    const auto mod = m.moduli();
    st.plastic.ebar_p = plasticity ? equivalent_plastic_strain(st.plastic.ebar, mod) : 0.0;
    if (st.plastic.ebar_p > 0.0) {
        // ep is coaxial with e under deformation theory: ep = (ebar_p / ebar) e
        const double r = st.plastic.ebar_p / st.plastic.ebar;
        st.plastic.ep = {r * dev.e.xx, r * dev.e.yy, r * dev.e.zz, r * dev.e.xy};
    }
    st.stress = stress_response(strain, st.plastic, mod);
    return st;
}

} // namespace nlpinn
