#include "nlpinn/residuals.hpp"

#include "nlpinn/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace nlpinn {

using ad::Tape;
using ad::Var;

std::string to_string(ArchitectureKind a) {
    switch (a) {
    case ArchitectureKind::local: return "local";
    case ArchitectureKind::ad_pddo: return "ad_pddo";
    case ArchitectureKind::pddo: return "pddo";
    }
    return "?";
}

ArchitectureKind architecture_from_string(const std::string& s) {
    if (s == "local") return ArchitectureKind::local;
    if (s == "ad_pddo") return ArchitectureKind::ad_pddo;
    if (s == "pddo") return ArchitectureKind::pddo;
    throw InvalidArgument("unknown architecture '" + s + "' (expected local, ad_pddo or pddo)");
}

std::string to_string(AdPddoMode m) { return m == AdPddoMode::per_slot ? "per_slot" : "center_only"; }

AdPddoMode ad_pddo_mode_from_string(const std::string& s) {
    if (s == "per_slot") return AdPddoMode::per_slot;
    if (s == "center_only") return AdPddoMode::center_only;
    throw InvalidArgument("unknown AD-PDDO mode '" + s + "' (expected per_slot or center_only)");
}

std::string to_string(Field f) {
    static const char* names[] = {"ux", "uy", "sxx", "syy", "sxy", "szz"};
    return names[static_cast<std::size_t>(f)];
}

InputMap input_map_for(const PointCloud& cloud) {
    if (cloud.size() == 0) throw InvalidArgument("input_map_for: empty point cloud");
    InputMap m;
    double xmax = cloud.points[0][0], ymax = cloud.points[0][1];
    m.xmin = xmax;
    m.ymin = ymax;
    for (const auto& p : cloud.points) {
        m.xmin = std::min(m.xmin, p[0]);
        m.ymin = std::min(m.ymin, p[1]);
        xmax = std::max(xmax, p[0]);
        ymax = std::max(ymax, p[1]);
    }
    m.width = xmax > m.xmin ? xmax - m.xmin : 1.0;
    m.height = ymax > m.ymin ? ymax - m.ymin : 1.0;
    return m;
}

std::vector<NonlocalContext> build_nonlocal_contexts(const PointCloud& cloud, const PdOperatorSet& ops,
                                                     std::size_t stencil_halfwidth, const InputMap& map) {
    if (ops.size() != cloud.size())
        throw InvalidArgument("build_nonlocal_contexts: operator set does not match the point cloud");
    const std::size_t slots = stencil_slot_count(stencil_halfwidth);
    std::vector<NonlocalContext> out(cloud.size());
    for (std::size_t p = 0; p < cloud.size(); ++p) {
        const auto& fam = ops.families[p];
        auto& ctx = out[p];
        ctx.inputs.assign(2 * slots, 0.0);
        ctx.present.assign(slots, 0);
        for (auto& g : ctx.G) g.assign(slots, 0.0);
        for (std::size_t k = 0; k < fam.size(); ++k) {
            const std::size_t s = fam.slots[k];
            if (s >= slots) throw InvalidArgument("build_nonlocal_contexts: family exceeds the stencil");
            const auto& x = cloud.points[fam.members[k]];
            ctx.inputs[2 * s] = map.sx(x[0]);
            ctx.inputs[2 * s + 1] = map.sy(x[1]);
            ctx.present[s] = 1;
            for (std::size_t t = 0; t < 6; ++t) ctx.G[t][s] = ops.entries[p].G[t][k];
        }
    }
    return out;
}

double nonlocal_value(std::span<const double> outputs, std::span<const double> g00) {
    if (outputs.size() != g00.size())
        throw InvalidArgument("nonlocal_value: " + std::to_string(outputs.size()) + " outputs for " +
                              std::to_string(g00.size()) + " weights");
    double acc = 0.0;
    for (std::size_t j = 0; j < outputs.size(); ++j) acc += outputs[j] * g00[j];
    return acc;
}

double pddo_derivative(std::span<const double> outputs, const NonlocalContext& ctx, DerivativeTag tag) {
    return nonlocal_value(outputs, ctx.G[index_of(tag)]);
}

namespace {

//! Input-space direction of a rigid translation of the whole family along `axis`.
std::vector<double> translation(const NonlocalContext& ctx, const InputMap& map, int axis) {
    std::vector<double> d(ctx.inputs.size(), 0.0);
    const double step = axis == 0 ? map.dx() : map.dy();
    for (std::size_t s = 0; s < ctx.slots(); ++s)
        if (ctx.present[s]) d[2 * s + axis] = step;
    return d;
}

int axis_of(DerivativeTag tag) {
    if (tag == DerivativeTag::d10) return 0;
    if (tag == DerivativeTag::d01) return 1;
    throw UnsupportedOrder("ad_pddo_derivative supports first-order tags only, got " + to_string(tag));
}

} // namespace

double ad_pddo_derivative(const NetworkParams& net, std::size_t offset, const NonlocalContext& ctx,
                          const InputMap& map, DerivativeTag tag, AdPddoMode mode) {
    const int axis = axis_of(tag);
    const std::size_t slots = ctx.slots();
    if (offset + slots > net.spec.outputs())
        throw InvalidArgument("ad_pddo_derivative: output block exceeds the network outputs");
    const auto rec = forward(net, ctx.inputs);
    const auto dir = translation(ctx, map, axis);
    auto F = [&](std::size_t s) {
        double acc = 0.0;
        for (std::size_t i = 0; i < dir.size(); ++i)
            if (dir[i] != 0.0) acc += rec.derivative(offset + s, i) * dir[i];
        return acc;
    };
    const auto& g00 = ctx.G[index_of(DerivativeTag::f00)];
    if (mode == AdPddoMode::center_only) {
        double gsum = 0.0;
        for (double g : g00) gsum += g;
        return F(0) * gsum;
    }
    double acc = 0.0;
    for (std::size_t s = 0; s < slots; ++s)
        if (g00[s] != 0.0) acc += g00[s] * F(s);
    return acc;
}

// ---------------------------------------------------------------- model

std::size_t Model::network_parameter_count() const {
    std::size_t n = 0;
    for (const auto& net : nets) n += net.size();
    return n;
}

std::size_t Model::net_offset(std::size_t k) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < k; ++i) n += nets[i].size();
    return n;
}

std::vector<double> Model::flat() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& net : nets) out.insert(out.end(), net.values.begin(), net.values.end());
    out.insert(out.end(), theta.begin(), theta.end());
    return out;
}

void Model::set_flat(std::span<const double> values) {
    if (values.size() != parameter_count()) throw InvalidArgument("Model::set_flat: wrong parameter count");
    std::size_t k = 0;
    for (auto& net : nets)
        for (auto& v : net.values) v = values[k++];
    for (auto& t : theta) t = values[k++];
}

namespace {

std::size_t slot_index(MaterialSlot s) { return static_cast<std::size_t>(s); }

// Material values in either arithmetic; fixed values pass through untouched.
template <typename T, typename Leaf, typename Const>
Moduli<T> material_from_theta(const Model& m, Leaf&& leaf, Const&& cst) {
    const auto& tr = m.material.trainable;
    auto param = [&](MaterialSlot s) {
        return m.theta_scale[slot_index(s)] * softplus(leaf(slot_index(s)));
    };
    Moduli<T> out;
    out.mu = tr.mu ? param(MaterialSlot::mu) : cst(m.material.mu);
    if (tr.lambda)
        out.lambda = param(MaterialSlot::kappa) - (2.0 / 3.0) * out.mu;
    else
        out.lambda = cst(m.material.lambda);
    out.sigma_y0 = tr.sigma_y0 ? param(MaterialSlot::sigma_y0) : cst(m.material.sigma_y0);
    out.hp = tr.hp ? param(MaterialSlot::hp) : cst(m.material.hp);
    return out;
}

} // namespace

MaterialParams Model::current_material() const {
    auto mod = material_from_theta<double>(
        *this, [&](std::size_t i) { return theta[i]; }, [](double v) { return v; });
    MaterialParams out = material;
    out.lambda = mod.lambda;
    out.mu = mod.mu;
    out.sigma_y0 = mod.sigma_y0;
    out.hp = mod.hp;
    return out;
}

Model make_model(const ModelOptions& opts, const MaterialParams& initial, bool plastic_mode) {
    if (opts.hidden.empty()) throw InvalidArgument("model: at least one hidden layer is required");
    Model m;
    m.architecture = opts.architecture;
    m.ad_mode = opts.ad_mode;
    m.plastic_mode = plastic_mode;
    m.scales = opts.scales;
    m.slots = opts.architecture == ArchitectureKind::local ? 1 : stencil_slot_count(opts.stencil_halfwidth);
    const std::size_t inputs = opts.architecture == ArchitectureKind::local ? 2 : 2 * m.slots;

    std::vector<Field> fields{Field::ux, Field::uy, Field::sxx, Field::syy, Field::sxy};
    if (plastic_mode) fields.push_back(Field::szz);

    auto make_net = [&](const std::string& name, std::size_t outputs, std::uint64_t seed) {
        NetworkSpec spec;
        spec.widths.push_back(inputs);
        spec.widths.insert(spec.widths.end(), opts.hidden.begin(), opts.hidden.end());
        spec.widths.push_back(outputs);
        spec.activation = opts.activation;
        spec.seed = seed;
        m.net_names.push_back(name);
        m.nets.push_back(init_params(spec));
    };
    if (opts.shared_trunk) {
        make_net("trunk", fields.size() * m.slots, opts.seed);
        for (std::size_t k = 0; k < fields.size(); ++k)
            m.bindings[static_cast<std::size_t>(fields[k])] = FieldBinding{0, k * m.slots};
    } else {
        for (std::size_t k = 0; k < fields.size(); ++k) {
            make_net(to_string(fields[k]), m.slots, opts.seed + 1000003ULL * k);
            m.bindings[static_cast<std::size_t>(fields[k])] = FieldBinding{k, 0};
        }
    }

    m.material = initial;
    const double one = softplus_inverse(1.0);
    auto setup = [&](MaterialSlot s, double guess, bool trainable, bool allow_zero) {
        const std::size_t i = slot_index(s);
        if (guess > 0.0) {
            m.theta_scale[i] = guess;
            m.theta[i] = one;
        } else if (!trainable || allow_zero) {
            m.theta_scale[i] = opts.scales.stress;
            m.theta[i] = softplus_inverse(1e-6);
        } else {
            throw InvalidArgument("model: initial guess for a trainable positive parameter must be positive");
        }
    };
    setup(MaterialSlot::mu, initial.mu, initial.trainable.mu, false);
    setup(MaterialSlot::kappa, initial.lambda + 2.0 * initial.mu / 3.0, initial.trainable.lambda, false);
    setup(MaterialSlot::sigma_y0, initial.sigma_y0, initial.trainable.sigma_y0, false);
    setup(MaterialSlot::hp, initial.hp, initial.trainable.hp, true);
    return m;
}

Model model_from_checkpoint(const ModelOptions& opts, const Checkpoint& ck, bool plastic_mode) {
    Model m = make_model(opts, ck.material, plastic_mode);
    if (ck.names != m.net_names)
        throw InvalidArgument("checkpoint networks do not match the configured model layout");
    for (std::size_t k = 0; k < m.nets.size(); ++k) {
        if (ck.networks[k].spec.widths != m.nets[k].spec.widths ||
            ck.networks[k].spec.activation != m.nets[k].spec.activation)
            throw InvalidArgument("checkpoint network '" + ck.names[k] + "' has a different shape or activation");
        m.nets[k] = ck.networks[k];
    }
    return m;
}

Checkpoint to_checkpoint(const Model& model) {
    Checkpoint ck;
    ck.names = model.net_names;
    ck.networks = model.nets;
    ck.material = model.current_material();
    return ck;
}

// ---------------------------------------------------------------- terms

double LossBreakdown::value(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return values[i];
    throw InvalidArgument("loss breakdown has no term '" + name + "'");
}

bool LossBreakdown::has(const std::string& name) const {
    return std::find(names.begin(), names.end(), name) != names.end();
}

namespace {

struct TermLayout {
    std::array<int, channel_count> data{};
    int eq_x = -1, eq_y = -1, pressure = -1;
    std::array<int, 4> dev{-1, -1, -1, -1};    // xx, yy, zz, xy
    int ebar_p = -1;
    std::array<int, 4> flow{-1, -1, -1, -1};
    std::vector<std::string> names;
};

TermLayout make_layout(bool plastic, bool equilibrium) {
    TermLayout L;
    L.data.fill(-1);
    auto add = [&](const std::string& n) {
        L.names.push_back(n);
        return static_cast<int>(L.names.size() - 1);
    };
    for (Channel c : all_channels) {
        if (!plastic && (c == Channel::ezz || c == Channel::szz)) continue;
        L.data[index_of(c)] = add("data_" + to_string(c));
    }
    if (equilibrium) {
        L.eq_x = add("equilibrium_x");
        L.eq_y = add("equilibrium_y");
    }
    L.pressure = add("pressure");
    L.dev[0] = add("dev_xx");
    L.dev[1] = add("dev_yy");
    if (plastic) L.dev[2] = add("dev_zz");
    L.dev[3] = add("dev_xy");
    if (plastic) {
        L.ebar_p = add("ebar_p");
        L.flow[0] = add("flow_xx");
        L.flow[1] = add("flow_yy");
        L.flow[2] = add("flow_zz");
        L.flow[3] = add("flow_xy");
    }
    return L;
}

} // namespace

std::vector<std::string> loss_term_names(bool plastic_mode, bool equilibrium_terms) {
    return make_layout(plastic_mode, equilibrium_terms).names;
}

Problem make_problem(const FieldDataset& data, const PointCloud& cloud, const PdOperatorSet* ops,
                     const Model& model, bool equilibrium_terms, std::map<std::string, double> weights) {
    if (data.size() != cloud.size()) throw InvalidArgument("dataset and point cloud sizes differ");
    if (data.plastic_mode != model.plastic_mode)
        throw InvalidArgument("dataset plastic_mode does not match the model");
    Problem pb;
    pb.data = &data;
    pb.map = input_map_for(cloud);
    pb.plastic_mode = model.plastic_mode;
    pb.equilibrium_terms = equilibrium_terms;
    const auto names = loss_term_names(model.plastic_mode, equilibrium_terms);
    const auto all_names_plastic = loss_term_names(true, true);
    for (const auto& [k, w] : weights) {
        if (std::find(all_names_plastic.begin(), all_names_plastic.end(), k) == all_names_plastic.end())
            throw InvalidArgument("unknown loss term '" + k + "'");
        if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("loss weight '" + k + "' must be finite and >= 0");
    }
    pb.weights = std::move(weights);
    for (Channel c : all_channels) {
        auto& mask = pb.observed_mask[index_of(c)];
        mask.assign(data.size(), 0);
        for (std::size_t p : data.observed[index_of(c)]) {
            if (p >= data.size() || !data.has_value(c, p))
                throw InvalidArgument("observation set of " + to_string(c) + " refers to a point without a value");
            mask[p] = 1;
        }
    }
    if (model.architecture != ArchitectureKind::local) {
        if (!ops) throw InvalidArgument("nonlocal architectures need an operator set");
        std::size_t h = 0;
        while (stencil_slot_count(h) < model.slots) ++h;
        if (stencil_slot_count(h) != model.slots) throw InvalidArgument("model slot count is not a square stencil");
        pb.contexts = build_nonlocal_contexts(cloud, *ops, h, pb.map);
    }
    return pb;
}

namespace {

//! Tape values of the predicted fields at one point.
struct PointVars {
    std::array<Var, 2> u;
    std::array<std::array<Var, 2>, 2> gu;    // gu[i][a] = d u_i / d x_a
    std::array<Var, 4> s;                    // sxx, syy, sxy, szz
    std::array<std::array<Var, 2>, 3> gs;    // gradients of sxx, syy, sxy
    bool has_szz = false;
};

struct MaterialVars {
    Var lambda, mu, kappa, sigma_y0, hp;
};

MaterialVars material_on_tape(Tape& tape, const Model& m, std::uint32_t first_theta) {
    auto mod = material_from_theta<Var>(
        m, [&](std::size_t i) { return Var{&tape, first_theta + static_cast<std::uint32_t>(i)}; },
        [&](double v) { return tape.constant(v); });
    MaterialVars mv;
    mv.lambda = mod.lambda;
    mv.mu = mod.mu;
    mv.kappa = mod.lambda + (2.0 / 3.0) * mod.mu;
    mv.sigma_y0 = mod.sigma_y0;
    mv.hp = mod.hp;
    return mv;
}

double field_scale(const Model& m, Field f) {
    return (f == Field::ux || f == Field::uy) ? m.scales.displacement : m.scales.stress;
}

PointVars override_point(Tape& tape, const PointFieldValues& f, bool plastic) {
    PointVars pv;
    for (int i = 0; i < 2; ++i) {
        pv.u[i] = tape.constant(f.u[i]);
        for (int a = 0; a < 2; ++a) pv.gu[i][a] = tape.constant(f.grad_u[i][a]);
    }
    for (int i = 0; i < 4; ++i) pv.s[i] = tape.constant(f.stress[i]);
    for (int i = 0; i < 3; ++i)
        for (int a = 0; a < 2; ++a) pv.gs[i][a] = tape.constant(f.grad_stress[i][a]);
    pv.has_szz = plastic;
    return pv;
}

PointVars evaluate_point(Tape& tape, const Model& m, const Problem& pb, std::size_t p, bool stress_gradients) {
    if (!pb.overrides.empty()) return override_point(tape, pb.overrides[p], pb.plastic_mode);
    const bool local = m.architecture == ArchitectureKind::local;
    const auto& x = pb.data->points[p];
    const NonlocalContext* ctx = local ? nullptr : &pb.contexts[p];

    // which networks need input tangents
    std::vector<char> need(m.nets.size(), 0);
    auto needs_grad = [&](Field f) {
        return f == Field::ux || f == Field::uy ||
               (stress_gradients && (f == Field::sxx || f == Field::syy || f == Field::sxy));
    };
    if (m.architecture != ArchitectureKind::pddo)
        for (std::size_t f = 0; f < field_count; ++f)
            if (m.bindings[f] && needs_grad(static_cast<Field>(f))) need[m.bindings[f]->net] = 1;

    std::vector<double> local_inputs;
    std::vector<std::vector<double>> dirs;
    std::span<const double> inputs;
    if (local) {
        local_inputs = {pb.map.sx(x[0]), pb.map.sy(x[1])};
        inputs = local_inputs;
        dirs = {{pb.map.dx(), 0.0}, {0.0, pb.map.dy()}};
    } else {
        inputs = ctx->inputs;
        if (m.architecture == ArchitectureKind::ad_pddo)
            dirs = {translation(*ctx, pb.map, 0), translation(*ctx, pb.map, 1)};
    }

    std::vector<TapeEval> evals(m.nets.size());
    for (std::size_t k = 0; k < m.nets.size(); ++k) {
        const auto off = static_cast<std::uint32_t>(m.net_offset(k));
        std::span<const std::vector<double>> d;
        if (need[k]) d = dirs;
        evals[k] = forward_on_tape(tape, m.nets[k], off, inputs, d);
    }

    std::vector<double> coeff(m.slots);
    auto dot = [&](std::span<const Var> outs, const std::vector<double>& g, double scale) {
        for (std::size_t s = 0; s < m.slots; ++s) coeff[s] = g[s] * scale;
        return ad::weighted_sum(outs, coeff, ad::NodeClass::stencil);
    };

    auto value = [&](Field f) {
        const auto& b = *m.bindings[static_cast<std::size_t>(f)];
        const auto& ev = evals[b.net];
        const double sc = field_scale(m, f);
        if (local) return ev.outputs[b.offset] * sc;
        return dot(std::span<const Var>(ev.outputs).subspan(b.offset, m.slots), ctx->G[0], sc);
    };
    auto derivative = [&](Field f, int axis) {
        const auto& b = *m.bindings[static_cast<std::size_t>(f)];
        const auto& ev = evals[b.net];
        const double sc = field_scale(m, f);
        switch (m.architecture) {
        case ArchitectureKind::local: return ev.tangents[axis][b.offset] * sc;
        case ArchitectureKind::pddo:
            return dot(std::span<const Var>(ev.outputs).subspan(b.offset, m.slots),
                       ctx->G[index_of(axis == 0 ? DerivativeTag::d10 : DerivativeTag::d01)], sc);
        case ArchitectureKind::ad_pddo: break;
        }
        const auto& tan = ev.tangents[axis];
        if (m.ad_mode == AdPddoMode::center_only) {
            double gsum = 0.0;
            for (double g : ctx->G[0]) gsum += g;
            return tan[b.offset] * (gsum * sc);
        }
        return dot(std::span<const Var>(tan).subspan(b.offset, m.slots), ctx->G[0], sc);
    };

    PointVars pv;
    pv.u[0] = value(Field::ux);
    pv.u[1] = value(Field::uy);
    for (int i = 0; i < 2; ++i)
        for (int a = 0; a < 2; ++a) pv.gu[i][a] = derivative(i == 0 ? Field::ux : Field::uy, a);
    pv.s[0] = value(Field::sxx);
    pv.s[1] = value(Field::syy);
    pv.s[2] = value(Field::sxy);
    if (m.bindings[static_cast<std::size_t>(Field::szz)]) {
        pv.s[3] = value(Field::szz);
        pv.has_szz = true;
    }
    if (stress_gradients) {
        const Field sf[3] = {Field::sxx, Field::syy, Field::sxy};
        for (int i = 0; i < 3; ++i)
            for (int a = 0; a < 2; ++a) pv.gs[i][a] = derivative(sf[i], a);
    }
    return pv;
}

//! Accumulates weighted squared residuals of a chunk.
struct ChunkAccumulator {
    std::vector<double> sums;       // sum of r^2 per term
    std::vector<Var> squares;
    std::vector<double> coeffs;
    std::size_t skipped_flow = 0;
};

struct ChunkResult {
    std::vector<double> sums;
    std::vector<double> gradient;
    std::size_t skipped_flow = 0;
};

struct TermContext {
    const TermLayout* layout;
    std::vector<double> coeff;      // weight / count per term
};

void add_term(ChunkAccumulator& acc, const TermContext& tc, int term, Var r) {
    if (term < 0) return;
    const Var r2 = ad::square(r);
    acc.sums[term] += r2.value();
    if (tc.coeff[term] != 0.0) {
        acc.squares.push_back(r2);
        acc.coeffs.push_back(tc.coeff[term]);
    }
}

void add_constant_term(ChunkAccumulator& acc, int term, double r) {
    if (term >= 0) acc.sums[term] += r * r;
}

void point_terms(Tape& tape, const Model& m, const Problem& pb, const TermContext& tc, const MaterialVars& mat,
                 std::size_t p, ChunkAccumulator& acc) {
    const TermLayout& L = *tc.layout;
    const auto& sc = m.scales;
    const bool plastic = pb.plastic_mode;
    const PointVars v = evaluate_point(tape, m, pb, p, pb.equilibrium_terms);
    const auto& data = *pb.data;

    // kinematics
    Tensor2D<Var> eps = strain_from_gradients(v.gu[0][0], v.gu[0][1], v.gu[1][0], v.gu[1][1]);
    const Var tr = eps.xx + eps.yy;
    const Var third = tr / 3.0;
    Tensor2D<Var> e{eps.xx - third, eps.yy - third, -third, eps.xy};

    // stresses
    Var szz;
    if (plastic) {
        szz = v.s[3];
    } else {
        const Var nu = mat.lambda / (2.0 * (mat.lambda + mat.mu));
        szz = nu * (v.s[0] + v.s[1]);
    }
    const Var p_vol = -(v.s[0] + v.s[1] + szz) / 3.0;
    Tensor2D<Var> s{v.s[0] + p_vol, v.s[1] + p_vol, szz + p_vol, v.s[2]};

    // data misfits
    auto observed = [&](Channel c) { return pb.observed_mask[index_of(c)][p] != 0; };
    auto datum = [&](Channel c) { return data.channel(c)[p]; };
    struct DataTerm {
        Channel c;
        Var pred;
        double scale;
    };
    const DataTerm terms[] = {
        {Channel::ux, v.u[0], sc.displacement}, {Channel::uy, v.u[1], sc.displacement},
        {Channel::exx, eps.xx, sc.strain},      {Channel::eyy, eps.yy, sc.strain},
        {Channel::exy, eps.xy, sc.strain},      {Channel::sxx, v.s[0], sc.stress},
        {Channel::syy, v.s[1], sc.stress},      {Channel::sxy, v.s[2], sc.stress},
    };
    for (const auto& t : terms)
        if (observed(t.c)) add_term(acc, tc, L.data[index_of(t.c)], (t.pred - datum(t.c)) / t.scale);
    if (plastic) {
        if (observed(Channel::ezz)) add_constant_term(acc, L.data[index_of(Channel::ezz)], -datum(Channel::ezz) / sc.strain);
        if (observed(Channel::szz)) add_term(acc, tc, L.data[index_of(Channel::szz)], (szz - datum(Channel::szz)) / sc.stress);
    }

    if (pb.equilibrium_terms) {
        const double k = sc.length / sc.stress;
        add_term(acc, tc, L.eq_x, (v.gs[0][0] + v.gs[2][1]) * k);
        add_term(acc, tc, L.eq_y, (v.gs[2][0] + v.gs[1][1]) * k);
    }
    add_term(acc, tc, L.pressure, (-mat.kappa * tr - p_vol) / sc.stress);

    const Var two_mu = 2.0 * mat.mu;
    if (!plastic) {
        add_term(acc, tc, L.dev[0], (two_mu * e.xx - s.xx) / sc.stress);
        add_term(acc, tc, L.dev[1], (two_mu * e.yy - s.yy) / sc.stress);
        add_term(acc, tc, L.dev[3], (two_mu * e.xy - s.xy) / sc.stress);
        return;
    }

    // plastic strain implied by the predicted stress: ep = e - s / (2 mu)
    const Tensor2D<Var> ep{e.xx - s.xx / two_mu, e.yy - s.yy / two_mu, e.zz - s.zz / two_mu, e.xy - s.xy / two_mu};
    add_term(acc, tc, L.dev[0], (s.xx - two_mu * (e.xx - ep.xx)) / sc.stress);
    add_term(acc, tc, L.dev[1], (s.yy - two_mu * (e.yy - ep.yy)) / sc.stress);
    add_term(acc, tc, L.dev[2], (s.zz - two_mu * (e.zz - ep.zz)) / sc.stress);
    add_term(acc, tc, L.dev[3], (s.xy - two_mu * (e.xy - ep.xy)) / sc.stress);

    const Var ebar = effective_strain(e);
    const Var sigma_e = effective_stress(s);
    const Var three_mu = 3.0 * mat.mu;
    const Var ebar_p = ebar - sigma_e / three_mu;
    const Var target = ad::relu((three_mu * ebar - mat.sigma_y0) / (three_mu + mat.hp));
    add_term(acc, tc, L.ebar_p, (ebar_p - target) / sc.strain);

    const Var* comps[4] = {&ep.xx, &ep.yy, &ep.zz, &ep.xy};
    const Var* scomps[4] = {&s.xx, &s.yy, &s.zz, &s.xy};
    if (sigma_e.value() < 1e-6 * mat.sigma_y0.value()) {
        if (ebar_p.value() > 0.0) {
            ++acc.skipped_flow;
            return;
        }
        for (int i = 0; i < 4; ++i) add_term(acc, tc, L.flow[i], *comps[i] / sc.strain);
        return;
    }
    const Var k = (1.5 * ebar_p) / sigma_e;
    for (int i = 0; i < 4; ++i) add_term(acc, tc, L.flow[i], (*comps[i] - k * *scomps[i]) / sc.strain);
}

constexpr std::size_t kChunk = 8;

ChunkResult run_chunk(const Model& m, const Problem& pb, const TermContext& tc, std::span<const std::size_t> pts,
                      bool want_gradient) {
    thread_local Tape tape;
    tape.clear();
    const std::size_t P = m.parameter_count();
    for (const auto& net : m.nets)
        for (double w : net.values) tape.leaf(w);
    for (double t : m.theta) tape.leaf(t);
    const MaterialVars mat = material_on_tape(tape, m, static_cast<std::uint32_t>(m.network_parameter_count()));

    ChunkAccumulator acc;
    acc.sums.assign(tc.layout->names.size(), 0.0);
    for (std::size_t p : pts) point_terms(tape, m, pb, tc, mat, p, acc);

    ChunkResult r;
    r.sums = std::move(acc.sums);
    r.skipped_flow = acc.skipped_flow;
    if (want_gradient) {
        r.gradient.assign(P, 0.0);
        if (!acc.squares.empty()) {
            const Var total = ad::weighted_sum(acc.squares, acc.coeffs, ad::NodeClass::reduction);
            const auto& adj = tape.backward(total);
            std::copy(adj.begin(), adj.begin() + static_cast<std::ptrdiff_t>(P), r.gradient.begin());
        }
    }
    return r;
}

} // namespace

LossBreakdown loss_and_gradient(const Model& model, const Problem& pb, std::span<const std::size_t> batch,
                                std::vector<double>* gradient, std::size_t threads) {
    if (!pb.data) throw InvalidArgument("loss: problem has no dataset");
    if (model.plastic_mode != pb.plastic_mode) throw InvalidArgument("loss: model and problem modes differ");
    if (!pb.overrides.empty() && pb.overrides.size() != pb.data->size())
        throw InvalidArgument("loss: field overrides do not cover every point");
    if (pb.overrides.empty() && model.architecture != ArchitectureKind::local && pb.contexts.size() != pb.data->size())
        throw InvalidArgument("loss: nonlocal architecture without per-point contexts");
    for (std::size_t p : batch)
        if (p >= pb.data->size()) throw InvalidArgument("loss: batch index out of range");

    const TermLayout layout = make_layout(pb.plastic_mode, pb.equilibrium_terms);
    const std::size_t nt = layout.names.size();

    LossBreakdown out;
    out.names = layout.names;
    out.equilibrium_terms = pb.equilibrium_terms;
    out.weights.assign(nt, 1.0);
    for (std::size_t t = 0; t < nt; ++t) {
        auto it = pb.weights.find(layout.names[t]);
        if (it != pb.weights.end()) out.weights[t] = it->second;
    }

    // per-term point counts over this batch
    std::vector<std::size_t> counts(nt, batch.size());
    for (Channel c : all_channels) {
        const int t = layout.data[index_of(c)];
        if (t < 0) continue;
        std::size_t n = 0;
        for (std::size_t p : batch) n += pb.observed_mask[index_of(c)][p];
        counts[t] = n;
        if (pb.data->observed[index_of(c)].empty())
            out.notices.push_back("data term " + layout.names[t] + " has an empty index set and contributes 0");
    }
    TermContext tc{&layout, std::vector<double>(nt, 0.0)};
    for (std::size_t t = 0; t < nt; ++t)
        if (counts[t] > 0) tc.coeff[t] = out.weights[t] / static_cast<double>(counts[t]);

    const std::size_t nchunks = (batch.size() + kChunk - 1) / kChunk;
    std::vector<ChunkResult> results(nchunks);
    auto work = [&](std::size_t c) {
        const std::size_t b = c * kChunk, e = std::min(batch.size(), b + kChunk);
        results[c] = run_chunk(model, pb, tc, batch.subspan(b, e - b), gradient != nullptr);
    };
    const std::size_t nthreads = std::max<std::size_t>(1, std::min(threads, nchunks));
    if (nthreads <= 1) {
        for (std::size_t c = 0; c < nchunks; ++c) work(c);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nthreads; ++t)
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t c = next.fetch_add(1);
                    if (c >= nchunks) return;
                    try {
                        work(c);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                        return;
                    }
                }
            });
        for (auto& th : pool) th.join();
        if (failure) std::rethrow_exception(failure);
    }

    std::vector<double> sums(nt, 0.0);
    if (gradient) gradient->assign(model.parameter_count(), 0.0);
    for (const auto& r : results) {
        for (std::size_t t = 0; t < nt; ++t) sums[t] += r.sums[t];
        out.skipped_flow += r.skipped_flow;
        if (gradient)
            for (std::size_t i = 0; i < r.gradient.size(); ++i) (*gradient)[i] += r.gradient[i];
    }
    out.values.assign(nt, 0.0);
    out.total = 0.0;
    for (std::size_t t = 0; t < nt; ++t) {
        if (counts[t] > 0) out.values[t] = sums[t] / static_cast<double>(counts[t]);
        out.total += out.weights[t] * out.values[t];
    }
    if (out.skipped_flow > 0)
        out.notices.push_back(std::to_string(out.skipped_flow) +
                              " flow-rule evaluations skipped (positive plastic strain with vanishing effective stress)");
    return out;
}

LossBreakdown elastic_loss(const Model& model, const Problem& problem, std::span<const std::size_t> batch) {
    if (problem.plastic_mode) throw InvalidArgument("elastic_loss called on a plastic problem");
    return loss_and_gradient(model, problem, batch);
}

LossBreakdown plastic_loss(const Model& model, const Problem& problem, std::span<const std::size_t> batch) {
    if (!problem.plastic_mode) throw InvalidArgument("plastic_loss called on an elastic problem");
    return loss_and_gradient(model, problem, batch);
}

FieldDataset predict_fields(const Model& model, const Problem& pb) {
    const auto& data = *pb.data;
    FieldDataset out;
    out.points = data.points;
    out.equilibrium_terms = pb.equilibrium_terms;
    out.plastic_mode = pb.plastic_mode;
    out.provenance = "prediction " + to_string(model.architecture);
    for (auto& v : out.values) v.assign(data.size(), 0.0);
    Tape tape;
    const MaterialParams mat = model.current_material();
    const double nu = mat.poisson();
    for (std::size_t p = 0; p < data.size(); ++p) {
        tape.clear();
        for (const auto& net : model.nets)
            for (double w : net.values) tape.leaf(w);
        const PointVars v = evaluate_point(tape, model, pb, p, false);
        const double exx = v.gu[0][0].value(), eyy = v.gu[1][1].value();
        const double exy = 0.5 * (v.gu[0][1].value() + v.gu[1][0].value());
        const double sxx = v.s[0].value(), syy = v.s[1].value();
        out.channel(Channel::ux)[p] = v.u[0].value();
        out.channel(Channel::uy)[p] = v.u[1].value();
        out.channel(Channel::exx)[p] = exx;
        out.channel(Channel::eyy)[p] = eyy;
        out.channel(Channel::ezz)[p] = 0.0;
        out.channel(Channel::exy)[p] = exy;
        out.channel(Channel::sxx)[p] = sxx;
        out.channel(Channel::syy)[p] = syy;
        out.channel(Channel::szz)[p] = v.has_szz ? v.s[3].value() : nu * (sxx + syy);
        out.channel(Channel::sxy)[p] = v.s[2].value();
    }
    observe_all(out);
    return out;
}

} // namespace nlpinn
