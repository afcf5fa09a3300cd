#pragma once

//! \file residuals.hpp
//! \brief Loss assembly for the local, AD-PDDO and PDDO network
//! architectures, in elastic and elastoplastic modes.
//!
//! Every residual is normalized by a characteristic magnitude (displacement,
//! strain, stress, length) and realized as a mean square over its index set.
//! Data terms run over the batch points in the channel's observation set,
//! physics terms over all batch points.

#include "nlpinn/constitutive.hpp"
#include "nlpinn/dataset.hpp"
#include "nlpinn/mesh.hpp"
#include "nlpinn/network.hpp"
#include "nlpinn/pddo.hpp"

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nlpinn {

enum class ArchitectureKind { local, ad_pddo, pddo };
std::string to_string(ArchitectureKind a);
ArchitectureKind architecture_from_string(const std::string& s);

//! How the AD-PDDO derivative combines input derivatives over the family.
//! per_slot: sum_j G00_j * F_j, where F_j is the derivative of slot j's
//! output when every family coordinate moves together.
//! center_only: F_center * sum_j G00_j.
enum class AdPddoMode { per_slot, center_only };
std::string to_string(AdPddoMode m);
AdPddoMode ad_pddo_mode_from_string(const std::string& s);

//! Predicted fields. Strains are derived from displacement derivatives.
enum class Field : std::size_t { ux, uy, sxx, syy, sxy, szz };
inline constexpr std::size_t field_count = 6;
std::string to_string(Field f);

struct Scales {
    double displacement = 1e-3;  // m
    double strain = 1e-3;
    double stress = 1e8;         // Pa
    double length = 1.0;         // m, multiplies stress gradients in equilibrium terms
};

//! Affine map of physical coordinates onto [-1, 1].
struct InputMap {
    double xmin = 0.0, ymin = 0.0, width = 1.0, height = 1.0;

    double sx(double x) const { return 2.0 * (x - xmin) / width - 1.0; }
    double sy(double y) const { return 2.0 * (y - ymin) / height - 1.0; }
    //! d(scaled)/d(physical)
    double dx() const { return 2.0 / width; }
    double dy() const { return 2.0 / height; }
};

InputMap input_map_for(const PointCloud& cloud);

//! Fixed-shape nonlocal record of one point: stencil slot coordinates
//! (slot 0 = center; absent slots zero) and slot-aligned G weights
//! (absent slots carry weight 0).
struct NonlocalContext {
    std::vector<double> inputs;          // 2 * slots, (sx, sy) per slot
    std::vector<std::uint8_t> present;   // per slot
    std::array<std::vector<double>, 6> G;

    std::size_t slots() const { return present.size(); }
};

std::vector<NonlocalContext> build_nonlocal_contexts(const PointCloud& cloud, const PdOperatorSet& ops,
                                                     std::size_t stencil_halfwidth, const InputMap& map);

//! Dot product of slot outputs with G00. Throws InvalidArgument on length mismatch.
double nonlocal_value(std::span<const double> outputs, std::span<const double> g00);

//! Dot product of slot outputs with G^{tag}.
double pddo_derivative(std::span<const double> outputs, const NonlocalContext& ctx, DerivativeTag tag);

//! First derivative of the nonlocal reconstruction of output block
//! [offset, offset + slots) of `net`, through exact input differentiation.
//! Throws UnsupportedOrder for tags other than d10 and d01.
double ad_pddo_derivative(const NetworkParams& net, std::size_t offset, const NonlocalContext& ctx,
                          const InputMap& map, DerivativeTag tag, AdPddoMode mode = AdPddoMode::per_slot);

struct ModelOptions {
    ArchitectureKind architecture = ArchitectureKind::local;
    AdPddoMode ad_mode = AdPddoMode::per_slot;
    std::vector<std::size_t> hidden{20, 20};
    Activation activation = Activation::tanh;
    std::uint64_t seed = 1;
    bool shared_trunk = false;
    std::size_t stencil_halfwidth = 3;
    Scales scales;
};

//! Which network output carries a field: output `offset` (local) or the
//! slot block starting at `offset` (nonlocal).
struct FieldBinding {
    std::size_t net = 0;
    std::size_t offset = 0;
};

//! Material slots exposed to the optimizer, each value = scale * softplus(theta).
enum class MaterialSlot : std::size_t { mu, kappa, sigma_y0, hp };
inline constexpr std::size_t material_slot_count = 4;

//! Networks, field bindings and material state: everything the optimizer moves.
struct Model {
    ArchitectureKind architecture = ArchitectureKind::local;
    AdPddoMode ad_mode = AdPddoMode::per_slot;
    bool plastic_mode = false;
    std::size_t slots = 1;
    Scales scales;
    std::vector<std::string> net_names;
    std::vector<NetworkParams> nets;
    std::array<std::optional<FieldBinding>, field_count> bindings;

    //! Values for the fixed parameters, and the starting guess for trainable ones.
    MaterialParams material;
    std::array<double, material_slot_count> theta{};
    std::array<double, material_slot_count> theta_scale{};

    std::size_t network_parameter_count() const;
    std::size_t parameter_count() const { return network_parameter_count() + material_slot_count; }
    //! First flat index of network k.
    std::size_t net_offset(std::size_t k) const;

    std::vector<double> flat() const;
    void set_flat(std::span<const double> values);

    //! Current material values; fixed parameters are returned bitwise unchanged.
    MaterialParams current_material() const;
};

//! Build networks for every field of the chosen mode and set up the
//! material reparameterization around `initial` (trainable flags included).
Model make_model(const ModelOptions& opts, const MaterialParams& initial, bool plastic_mode);

//! Rebuild a model around checkpointed networks.
Model model_from_checkpoint(const ModelOptions& opts, const Checkpoint& ck, bool plastic_mode);
Checkpoint to_checkpoint(const Model& model);

struct LossBreakdown {
    std::vector<std::string> names;
    std::vector<double> values;
    std::vector<double> weights;
    double total = 0.0;
    std::size_t skipped_flow = 0;
    bool equilibrium_terms = true;
    std::vector<std::string> notices;

    double value(const std::string& name) const;
    bool has(const std::string& name) const;
};

//! Term names of a mode, in reporting order.
std::vector<std::string> loss_term_names(bool plastic_mode, bool equilibrium_terms);

//! Exact field values at one point, used in place of network predictions.
struct PointFieldValues {
    std::array<double, 2> u{};
    std::array<std::array<double, 2>, 2> grad_u{};       // grad_u[i][a] = d u_i / d x_a
    std::array<double, 4> stress{};                      // sxx, syy, sxy, szz (szz used in plastic mode)
    std::array<std::array<double, 2>, 3> grad_stress{};  // gradients of sxx, syy, sxy
};

//! Everything fixed during training: data, geometry, nonlocal contexts, weights.
struct Problem {
    const FieldDataset* data = nullptr;
    InputMap map;
    std::vector<NonlocalContext> contexts;   // empty for the local architecture
    bool plastic_mode = false;
    bool equilibrium_terms = true;
    std::map<std::string, double> weights;   // missing names weigh 1
    //! observed_mask[c][p] != 0 when point p is in the observation set of channel c
    std::array<std::vector<std::uint8_t>, channel_count> observed_mask;
    //! when non-empty (one entry per point), replaces the network predictions
    std::vector<PointFieldValues> overrides;
};

//! Validates weights against the term names of the mode.
Problem make_problem(const FieldDataset& data, const PointCloud& cloud, const PdOperatorSet* ops,
                     const Model& model, bool equilibrium_terms, std::map<std::string, double> weights);

//! Loss over `batch` (point indices). When `gradient` is non-null it is
//! resized to model.parameter_count() and filled with d(total)/d(flat).
//! Points are processed in chunks on private tapes; the reduction runs in
//! chunk order, so results do not depend on `threads`.
LossBreakdown loss_and_gradient(const Model& model, const Problem& problem, std::span<const std::size_t> batch,
                                std::vector<double>* gradient = nullptr, std::size_t threads = 1);

LossBreakdown elastic_loss(const Model& model, const Problem& problem, std::span<const std::size_t> batch);
LossBreakdown plastic_loss(const Model& model, const Problem& problem, std::span<const std::size_t> batch);

//! Predicted fields at every point (same channel layout as FieldDataset;
//! strains from displacement derivatives, szz from the elastic relation in
//! elastic mode).
FieldDataset predict_fields(const Model& model, const Problem& problem);

} // namespace nlpinn
