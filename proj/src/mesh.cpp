#include "nlpinn/mesh.hpp"

#include "nlpinn/error.hpp"

#include <cmath>
#include <string>

namespace nlpinn {

PointCloud build_grid(std::size_t nx, std::size_t ny, double width, double height,
                      GridLayout layout) {
    if (nx < 2 || ny < 2) throw InvalidArgument("build_grid: nx and ny must be at least 2");
    if (!(width > 0.0) || !(height > 0.0))
        throw InvalidArgument("build_grid: width and height must be positive");

    PointCloud cloud;
    cloud.nx = nx;
    cloud.ny = ny;
    cloud.width = width;
    cloud.height = height;

    double dx, dy, x0, y0;
    if (layout == GridLayout::nodes) {
        dx = width / static_cast<double>(nx - 1);
        dy = height / static_cast<double>(ny - 1);
        x0 = y0 = 0.0;
    } else {
        dx = width / static_cast<double>(nx);
        dy = height / static_cast<double>(ny);
        x0 = 0.5 * dx;
        y0 = 0.5 * dy;
    }
    cloud.spacing = dx;
    cloud.points.reserve(nx * ny);
    cloud.areas.assign(nx * ny, dx * dy);
    for (std::size_t j = 0; j < ny; ++j)
        for (std::size_t i = 0; i < nx; ++i)
            cloud.points.push_back({x0 + dx * static_cast<double>(i), y0 + dy * static_cast<double>(j)});
    return cloud;
}

double weight_of(double xi_norm, double delta) {
    if (!(delta > 0.0)) throw InvalidArgument("weight_of: horizon must be positive");
    if (xi_norm < 0.0) throw InvalidArgument("weight_of: separation must be non-negative");
    return std::exp(-4.0 * xi_norm * xi_norm / (delta * delta));
}

std::size_t stencil_slot_count(std::size_t h) { return (2 * h + 1) * (2 * h + 1); }

std::array<int, 2> slot_offset(std::size_t slot, std::size_t h) {
    const int side = static_cast<int>(2 * h + 1);
    const int half = static_cast<int>(h);
    if (slot == 0) return {0, 0};
    // row-major position with the center removed
    std::size_t raw = slot - 1;
    const std::size_t center_raw = static_cast<std::size_t>(half * side + half);
    if (raw >= center_raw) ++raw;
    return {static_cast<int>(raw % side) - half, static_cast<int>(raw / side) - half};
}

PointFamily build_family(const PointCloud& cloud, std::size_t center, const FamilyOptions& opts) {
    if (opts.stencil_halfwidth < 1) throw InvalidArgument("build_families: stencil_halfwidth must be >= 1");
    if (!(opts.delta_factor > 0.0)) throw InvalidArgument("build_families: delta_factor must be positive");

    const std::size_t h = opts.stencil_halfwidth;
    const long ci = static_cast<long>(center % cloud.nx);
    const long cj = static_cast<long>(center / cloud.nx);
    const Point2 xc = cloud.points[center];

    PointFamily fam;
    fam.center = center;
    fam.horizon = opts.delta_factor * cloud.spacing;
    const std::size_t slots = stencil_slot_count(h);
    for (std::size_t s = 0; s < slots; ++s) {
        const auto [di, dj] = slot_offset(s, h);
        const long i = ci + di;
        const long j = cj + dj;
        if (i < 0 || j < 0 || i >= static_cast<long>(cloud.nx) || j >= static_cast<long>(cloud.ny))
            continue;
        const std::size_t m = cloud.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        const Point2 xi{cloud.points[m][0] - xc[0], cloud.points[m][1] - xc[1]};
        fam.members.push_back(m);
        fam.xi.push_back(xi);
        fam.weights.push_back(m == center ? 1.0 : weight_of(std::hypot(xi[0], xi[1]), fam.horizon));
        fam.areas.push_back(cloud.areas[m]);
        fam.slots.push_back(s);
    }
    return fam;
}

std::vector<PointFamily> build_families(const PointCloud& cloud, const FamilyOptions& opts) {
    std::vector<PointFamily> out;
    out.reserve(cloud.size());
    for (std::size_t p = 0; p < cloud.size(); ++p) {
        out.push_back(build_family(cloud, p, opts));
        if (out.back().size() < 6) throw OperatorUnderdetermined(p, out.back().size());
    }
    return out;
}

} // namespace nlpinn
