#pragma once

// Reference implementations shared by the unit tests and the acceptance run.

#include <array>
#include <cmath>

namespace oracle {

// Incremental radial-return J2 plasticity with linear isotropic hardening,
// written against plain arrays (xx, yy, zz, xy) and independent of the
// library's deformation-theory path.
struct ReturnMapResult {
    double ebar_p = 0.0;
    std::array<double, 4> ep{};
};

inline ReturnMapResult return_map(const std::array<double, 4>& eps_final, double mu, double sy0, double hp,
                                  int steps) {
    ReturnMapResult st;
    for (int n = 1; n <= steps; ++n) {
        const double t = static_cast<double>(n) / steps;
        std::array<double, 4> eps{t * eps_final[0], t * eps_final[1], t * eps_final[2], t * eps_final[3]};
        const double m = (eps[0] + eps[1] + eps[2]) / 3.0;
        const std::array<double, 4> dev{eps[0] - m, eps[1] - m, eps[2] - m, eps[3]};
        std::array<double, 4> s{};
        for (int i = 0; i < 4; ++i) s[i] = 2.0 * mu * (dev[i] - st.ep[i]);
        const double seq = std::sqrt(1.5 * (s[0] * s[0] + s[1] * s[1] + s[2] * s[2] + 2.0 * s[3] * s[3]));
        const double f = seq - (sy0 + hp * st.ebar_p);
        if (f > 0.0) {
            const double dg = f / (3.0 * mu + hp);
            st.ebar_p += dg;
            for (int i = 0; i < 4; ++i) st.ep[i] += dg * 1.5 * s[i] / seq;
        }
    }
    return st;
}

} // namespace oracle
