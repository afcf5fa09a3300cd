#pragma once

//! \file mesh.hpp
//! \brief Uniform 2-D point clouds and square-stencil interaction families.

#include <array>
#include <cstddef>
#include <vector>

namespace nlpinn {

using Point2 = std::array<double, 2>;

//! Points of a rectangular grid with their cell areas.
struct PointCloud {
    std::vector<Point2> points;
    std::vector<double> areas;   // m^2
    double spacing = 0.0;        // nominal grid spacing, m
    double width = 0.0;          // domain extent in x, m
    double height = 0.0;         // domain extent in y, m
    std::size_t nx = 0;
    std::size_t ny = 0;

    std::size_t size() const { return points.size(); }
    std::size_t index(std::size_t i, std::size_t j) const { return j * nx + i; }
};

enum class GridLayout { nodes, cell_centers };

//! \brief Build an nx-by-ny grid on [0,width]x[0,height].
//! Points are stored row by row (x fastest). Every point carries the full
//! cell area dx*dy so that uniform grids have identical areas everywhere.
PointCloud build_grid(std::size_t nx, std::size_t ny, double width, double height,
                      GridLayout layout = GridLayout::nodes);

//! Gaussian influence function exp(-4 |xi|^2 / delta^2).
double weight_of(double xi_norm, double delta);

//! The interaction record of one point.
//!
//! `xi[k]` is member position minus center position, so a field sample at
//! member k is f(x + xi[k]). `slots[k]` is the member's position in the
//! full (2h+1)^2 stencil: slot 0 is the center, the remaining slots follow
//! row-major order over offsets with the center skipped.
struct PointFamily {
    std::size_t center = 0;
    std::vector<std::size_t> members;
    std::vector<Point2> xi;
    std::vector<double> weights;
    std::vector<double> areas;
    std::vector<std::size_t> slots;
    double horizon = 0.0;

    std::size_t size() const { return members.size(); }
};

struct FamilyOptions {
    std::size_t stencil_halfwidth = 3;   // 3 gives the 7x7 stencil
    double delta_factor = 3.5;           // horizon = delta_factor * spacing
};

//! Number of stencil slots, (2h+1)^2.
std::size_t stencil_slot_count(std::size_t halfwidth);

//! Integer stencil offset (di, dj) of a slot.
std::array<int, 2> slot_offset(std::size_t slot, std::size_t halfwidth);

//! \brief Build the family of every point of a grid cloud.
//! Families are the square stencil intersected with the grid, so boundary
//! families are truncated. Throws OperatorUnderdetermined if any family
//! has fewer than six members.
std::vector<PointFamily> build_families(const PointCloud& cloud, const FamilyOptions& opts = {});

PointFamily build_family(const PointCloud& cloud, std::size_t center, const FamilyOptions& opts);

} // namespace nlpinn
