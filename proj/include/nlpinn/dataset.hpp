#pragma once

//! \file dataset.hpp
//! \brief Field datasets: manufactured-solution generators, the delimited
//! text field format, observation sampling and PGM heatmaps.

#include "nlpinn/constitutive.hpp"
#include "nlpinn/mesh.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nlpinn {

enum class Channel : std::size_t { ux, uy, exx, eyy, ezz, exy, sxx, syy, szz, sxy };
inline constexpr std::size_t channel_count = 10;
inline constexpr std::array<Channel, channel_count> all_channels{
    Channel::ux,  Channel::uy,  Channel::exx, Channel::eyy, Channel::ezz,
    Channel::exy, Channel::sxx, Channel::syy, Channel::szz, Channel::sxy};

constexpr std::size_t index_of(Channel c) { return static_cast<std::size_t>(c); }
std::string to_string(Channel c);
Channel channel_from_string(const std::string& s);

//! Sampled fields on a point set. Absent values are NaN. `observed[c]`
//! is the index set I_c of points whose channel-c value enters the data
//! misfit; it is always a subset of the points carrying a value.
struct FieldDataset {
    std::vector<Point2> points;
    std::array<std::vector<double>, channel_count> values;
    std::array<std::vector<std::size_t>, channel_count> observed;
    bool equilibrium_terms = true;
    bool plastic_mode = false;
    std::string provenance;
    //! fraction of points with positive equivalent plastic strain (generators only)
    double plastic_fraction = 0.0;
    //! non-fatal diagnostics from generation or loading
    std::vector<std::string> notices;

    std::size_t size() const { return points.size(); }
    const std::vector<double>& channel(Channel c) const { return values[index_of(c)]; }
    std::vector<double>& channel(Channel c) { return values[index_of(c)]; }
    bool has_value(Channel c, std::size_t p) const;
};

//! Set every I_c to the points carrying a channel-c value.
void observe_all(FieldDataset& ds);

enum class ElasticKind { constant_strain, harmonic_quadratic };

ElasticKind elastic_kind_from_string(const std::string& s);
std::string to_string(ElasticKind k);

struct ElasticProfile {
    ElasticKind kind = ElasticKind::harmonic_quadratic;
    //! harmonic_quadratic: u = k (x^2 - y^2, -2xy) with k = amplitude.
    //! constant_strain: u = amplitude * (g0 x + g1 y, g2 x + g3 y).
    double amplitude = 1e-3;
    std::array<double, 4> gradient{1.0, 0.0, 0.0, 0.0};
};

//! Localized shear front plus a uniform background strain:
//!   ux = A w tanh(s) + ex x,  uy = ey y,  s = (y - y0 - m (x - x0)) / w
struct PlasticProfile {
    double amplitude = 0.02;
    double width = 0.06;
    double y0 = 0.5;
    double x0 = 0.5;
    double slope = 0.3;
    double background_x = 4e-4;
    double background_y = -6e-4;
};

//! Analytic displacement, strain and stress on every point;
//! equilibrium_terms on, plastic_mode off.
FieldDataset generate_elastic_manufactured(const ElasticProfile& profile, const MaterialParams& m,
                                           const PointCloud& cloud);

//! All ten channels from the deformation-plasticity relations applied to
//! the prescribed displacement; equilibrium_terms off, plastic_mode on.
//! Adds a notice when no point exceeds the yield strain.
FieldDataset generate_plastic_manufactured(const PlasticProfile& profile, const MaterialParams& m,
                                           const PointCloud& cloud);

void save_fields(const FieldDataset& ds, std::ostream& out);
void save_fields(const FieldDataset& ds, const std::filesystem::path& path);
FieldDataset load_fields(std::istream& in, const std::string& name = "<stream>");
FieldDataset load_fields(const std::filesystem::path& path);

//! \brief Draw each channel's observation set uniformly without replacement.
//! `counts[c]` = nullopt leaves channel c untouched; 0 disables the channel.
//! The draw for channel c uses its own stream seeded from (seed, c).
void sample_index_sets(FieldDataset& ds, const std::array<std::optional<std::size_t>, channel_count>& counts,
                       std::uint64_t seed);

//! \brief Rebuild the grid that a dataset was sampled on and reorder the
//! dataset to the grid's row-major order. Throws InvalidArgument when the
//! points are not a complete tensor-product grid.
PointCloud align_to_grid(FieldDataset& ds);

struct PgmImage {
    std::size_t width = 0;
    std::size_t height = 0;
    int maxval = 0;
    std::vector<int> pixels;        // row-major, top row first
    std::vector<std::string> comments;
};

//! ASCII PGM (P2) of a grid field: top row = largest y, linear min-max
//! scaling to 0..255, min/max in a comment. A constant field is written
//! as all 128 with a flagging comment.
void write_heatmap(std::span<const double> values, std::size_t nx, std::size_t ny,
                   const std::filesystem::path& path);
PgmImage read_heatmap(const std::filesystem::path& path);

} // namespace nlpinn
