#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nlpinn/dataset.hpp"
#include "nlpinn/error.hpp"
#include "nlpinn/residuals.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <random>

using namespace nlpinn;

namespace {

MaterialParams truth() {
    const auto [l, m] = lame_from_engineering(70e9, 0.3);
    return {l, m, 0.1e9, 0.5e9, {}};
}

struct Setup {
    PointCloud cloud;
    PdOperatorSet ops;
    FieldDataset data;
    Model model;
    Problem problem;
    std::vector<std::size_t> all;
};

// Cloud, operators and an empty model; the caller fills data then calls finish().
void init(Setup& s, std::size_t n) {
    s.cloud = build_grid(n, n, 1.0, 1.0);
    s.ops = build_operator_set(s.cloud, build_families(s.cloud));
    s.all.resize(s.cloud.size());
    std::iota(s.all.begin(), s.all.end(), std::size_t{0});
}

void finish(Setup& s, const ModelOptions& mo, const MaterialParams& mat, std::map<std::string, double> w = {}) {
    s.model = make_model(mo, mat, s.data.plastic_mode);
    s.problem = make_problem(s.data, s.cloud, &s.ops, s.model, s.data.equilibrium_terms, std::move(w));
}

ElasticProfile constant_strain() {
    ElasticProfile p;
    p.kind = ElasticKind::constant_strain;
    p.amplitude = 1e-3;
    p.gradient = {1.0, 0.4, -0.3, -0.6};
    return p;
}

// Make the network bound to `f` reproduce the physical field a0 + ax x + ay y
// exactly: identity hidden layer (linear activation) and an affine output.
void set_linear_field(Model& m, const InputMap& map, Field f, double a0, double ax, double ay) {
    const auto& b = *m.bindings[static_cast<std::size_t>(f)];
    auto& net = m.nets[b.net];
    REQUIRE(net.spec.activation == Activation::linear);
    REQUIRE(net.spec.widths.size() == 3);
    const std::size_t in = net.spec.inputs();
    REQUIRE(net.spec.widths[1] == in);
    const double scale = (f == Field::ux || f == Field::uy) ? m.scales.displacement : m.scales.stress;
    std::fill(net.values.begin(), net.values.end(), 0.0);
    for (std::size_t i = 0; i < in; ++i) net.values[net.weight_offset(0) + i * in + i] = 1.0;
    const double c0 = (a0 + ax * (0.5 * map.width + map.xmin) + ay * (0.5 * map.height + map.ymin)) / scale;
    const double cx = ax * 0.5 * map.width / scale, cy = ay * 0.5 * map.height / scale;
    for (std::size_t k = 0; k < m.slots; ++k) {
        const std::size_t row = b.offset + k;
        const std::size_t ix = m.slots == 1 ? 0 : 2 * k;
        net.values[net.weight_offset(1) + row * in + ix] = cx;
        net.values[net.weight_offset(1) + row * in + ix + 1] = cy;
        net.values[net.bias_offset(1) + row] = c0;
    }
}

ModelOptions linear_options(ArchitectureKind arch) {
    ModelOptions mo;
    mo.architecture = arch;
    mo.activation = Activation::linear;
    mo.hidden = {arch == ArchitectureKind::local ? std::size_t{2} : std::size_t{98}};
    return mo;
}

std::vector<PointFieldValues> overrides_from(const FieldDataset& ds,
                                             const std::function<std::array<std::array<double, 2>, 3>(double, double)>& gs = {}) {
    std::vector<PointFieldValues> out(ds.size());
    for (std::size_t p = 0; p < ds.size(); ++p) {
        auto& o = out[p];
        o.u = {ds.channel(Channel::ux)[p], ds.channel(Channel::uy)[p]};
        // symmetric gradient carrying the stored strain
        o.grad_u = {{{ds.channel(Channel::exx)[p], ds.channel(Channel::exy)[p]},
                     {ds.channel(Channel::exy)[p], ds.channel(Channel::eyy)[p]}}};
        o.stress = {ds.channel(Channel::sxx)[p], ds.channel(Channel::syy)[p], ds.channel(Channel::sxy)[p],
                    ds.channel(Channel::szz)[p]};
        if (gs) o.grad_stress = gs(ds.points[p][0], ds.points[p][1]);
    }
    return out;
}

double total_with(const Problem& pb, Model m, const std::vector<std::size_t>& batch) {
    return loss_and_gradient(m, pb, batch).total;
}

} // namespace

TEST_CASE("nonlocal_value and pddo_derivative on sampled fields") {
    Setup s;
    init(s, 21);
    const auto map = input_map_for(s.cloud);
    const auto ctx = build_nonlocal_contexts(s.cloud, s.ops, 3, map);
    REQUIRE(ctx.size() == 441);
    for (std::size_t p : {s.cloud.index(10, 10), s.cloud.index(0, 0), s.cloud.index(20, 7)}) {
        const auto& c = ctx[p];
        REQUIRE(c.slots() == 49);
        std::vector<double> cst(49, 2.5), x2(49, 0.0), xs(49, 0.0);
        const auto& fam = s.ops.families[p];
        for (std::size_t k = 0; k < fam.size(); ++k) {
            const double x = s.cloud.points[fam.members[k]][0];
            x2[fam.slots[k]] = x * x;
            xs[fam.slots[k]] = x;
        }
        const double xc = s.cloud.points[p][0];
        CHECK(nonlocal_value(cst, c.G[0]) == doctest::Approx(2.5).epsilon(1e-12));
        CHECK(std::abs(nonlocal_value(x2, c.G[0]) - xc * xc) <= 1e-8);
        CHECK(std::abs(pddo_derivative(xs, c, DerivativeTag::d10) - 1.0) <= 1e-8);
        CHECK(std::abs(pddo_derivative(x2, c, DerivativeTag::d20) - 2.0) <= 1e-8 * 2.0);
        CHECK(std::abs(pddo_derivative(xs, c, DerivativeTag::d01)) <= 1e-8);

        // padded slots carry zero weight: garbage there changes nothing
        auto garbage = x2;
        for (std::size_t sl = 0; sl < 49; ++sl)
            if (!c.present[sl]) {
                CHECK(c.G[0][sl] == 0.0);
                CHECK(c.inputs[2 * sl] == 0.0);
                garbage[sl] = 1e30;
            }
        CHECK(nonlocal_value(garbage, c.G[0]) == nonlocal_value(x2, c.G[0]));
    }
    CHECK_THROWS_AS(nonlocal_value(std::vector<double>(48, 0.0), ctx[0].G[0]), InvalidArgument);
}

TEST_CASE("architecture agreement: PDDO derivatives equal analytic (local) derivatives on quadratics") {
    Setup s;
    init(s, 21);
    const auto ctx = build_nonlocal_contexts(s.cloud, s.ops, 3, input_map_for(s.cloud));
    const double c[6] = {0.2, 1.1, -0.7, 0.45, -0.9, 1.3};
    for (std::size_t p = 0; p < s.cloud.size(); ++p) {
        std::vector<double> f(49, 0.0);
        const auto& fam = s.ops.families[p];
        for (std::size_t k = 0; k < fam.size(); ++k) {
            const auto& q = s.cloud.points[fam.members[k]];
            f[fam.slots[k]] = c[0] + c[1] * q[0] + c[2] * q[1] + c[3] * q[0] * q[0] + c[4] * q[1] * q[1] + c[5] * q[0] * q[1];
        }
        const double x = s.cloud.points[p][0], y = s.cloud.points[p][1];
        CHECK(std::abs(pddo_derivative(f, ctx[p], DerivativeTag::d10) - (c[1] + 2 * c[3] * x + c[5] * y)) <= 1e-8);
        CHECK(std::abs(pddo_derivative(f, ctx[p], DerivativeTag::d01) - (c[2] + 2 * c[4] * y + c[5] * x)) <= 1e-8);
    }
}

TEST_CASE("ad_pddo_derivative: hand-built linear ansatz, constants, finite differences") {
    Setup s;
    init(s, 11);
    const auto map = input_map_for(s.cloud);
    const auto ctx = build_nonlocal_contexts(s.cloud, s.ops, 3, map);

    // slot k output = 3 * x_k (physical)
    auto net = init_params({{98, 98, 49}, Activation::linear, 1});
    std::fill(net.values.begin(), net.values.end(), 0.0);
    for (std::size_t i = 0; i < 98; ++i) net.values[net.weight_offset(0) + i * 98 + i] = 1.0;
    for (std::size_t k = 0; k < 49; ++k) {
        net.values[net.weight_offset(1) + k * 98 + 2 * k] = 1.5 * map.width;
        net.values[net.bias_offset(1) + k] = 1.5 * map.width + 3.0 * map.xmin;
    }
    for (std::size_t p : {std::size_t{0}, s.cloud.index(5, 5), s.cloud.index(10, 3)}) {
        const double x = s.cloud.points[p][0];
        CHECK(std::abs(nonlocal_value(forward(net, ctx[p].inputs).outputs, ctx[p].G[0]) - 3.0 * x) <= 1e-10);
        CHECK(ad_pddo_derivative(net, 0, ctx[p], map, DerivativeTag::d10) == doctest::Approx(3.0).epsilon(1e-12));
        CHECK(ad_pddo_derivative(net, 0, ctx[p], map, DerivativeTag::d01) == doctest::Approx(0.0).scale(1e-12));
        CHECK(ad_pddo_derivative(net, 0, ctx[p], map, DerivativeTag::d10, AdPddoMode::center_only) ==
              doctest::Approx(3.0).epsilon(1e-12));
    }

    auto cnet = net;
    for (std::size_t k = 0; k < 49 * 98; ++k) cnet.values[cnet.weight_offset(1) + k] = 0.0;
    CHECK(ad_pddo_derivative(cnet, 0, ctx[12], map, DerivativeTag::d10) == 0.0);

    CHECK_THROWS_AS(ad_pddo_derivative(net, 0, ctx[12], map, DerivativeTag::d20), UnsupportedOrder);
    CHECK_THROWS_AS(ad_pddo_derivative(net, 0, ctx[12], map, DerivativeTag::d11), UnsupportedOrder);
    CHECK_THROWS_AS(ad_pddo_derivative(net, 0, ctx[12], map, DerivativeTag::f00), UnsupportedOrder);

    // random tanh net: derivative of the nonlocal value under a rigid move of the family
    const auto rnd = init_params({{98, 20, 20, 49}, Activation::tanh, 77});
    for (std::size_t p : {std::size_t{0}, s.cloud.index(5, 5), s.cloud.index(9, 2)}) {
        for (int axis = 0; axis < 2; ++axis) {
            const double h = 1e-6;
            auto shifted = [&](double d) {
                auto in = ctx[p].inputs;
                for (std::size_t sl = 0; sl < 49; ++sl)
                    if (ctx[p].present[sl]) in[2 * sl + axis] += d * (axis == 0 ? map.dx() : map.dy());
                return nonlocal_value(forward(rnd, in).outputs, ctx[p].G[0]);
            };
            const double fd = (shifted(h) - shifted(-h)) / (2 * h);
            const double ad = ad_pddo_derivative(rnd, 0, ctx[p], map, axis == 0 ? DerivativeTag::d10 : DerivativeTag::d01);
            CHECK(std::abs(ad - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("elastic loss: exact linear fields in every architecture give zero terms") {
    const auto mat = truth();
    for (auto arch : {ArchitectureKind::local, ArchitectureKind::ad_pddo, ArchitectureKind::pddo}) {
        CAPTURE(to_string(arch));
        Setup s;
        init(s, 9);
        const auto prof = constant_strain();
        s.data = generate_elastic_manufactured(prof, mat, s.cloud);
        finish(s, linear_options(arch), mat);
        const double a = prof.amplitude;
        const auto& g = prof.gradient;
        set_linear_field(s.model, s.problem.map, Field::ux, 0.0, a * g[0], a * g[1]);
        set_linear_field(s.model, s.problem.map, Field::uy, 0.0, a * g[2], a * g[3]);
        set_linear_field(s.model, s.problem.map, Field::sxx, s.data.channel(Channel::sxx)[0], 0.0, 0.0);
        set_linear_field(s.model, s.problem.map, Field::syy, s.data.channel(Channel::syy)[0], 0.0, 0.0);
        set_linear_field(s.model, s.problem.map, Field::sxy, s.data.channel(Channel::sxy)[0], 0.0, 0.0);
        const auto lb = elastic_loss(s.model, s.problem, s.all);
        REQUIRE(lb.has("equilibrium_x"));
        for (std::size_t t = 0; t < lb.names.size(); ++t) {
            CAPTURE(lb.names[t]);
            CHECK(lb.values[t] <= 1e-12);
        }
        CHECK(!lb.has("data_szz"));
        CHECK(!lb.has("ebar_p"));

        // the deviatoric terms grow when mu moves away from the generating value
        Model off = s.model;
        off.material.mu *= 1.1;
        const auto lb2 = elastic_loss(off, s.problem, s.all);
        for (const char* name : {"dev_xx", "dev_yy", "dev_xy"}) CHECK(lb2.value(name) > lb.value(name));
        CHECK(lb2.total > lb.total);
    }
}

TEST_CASE("elastic loss: harmonic dataset with exact overrides") {
    const auto mat = truth();
    Setup s;
    init(s, 11);
    ElasticProfile prof;
    prof.kind = ElasticKind::harmonic_quadratic;
    prof.amplitude = 2e-3;
    s.data = generate_elastic_manufactured(prof, mat, s.cloud);
    ModelOptions mo;
    finish(s, mo, mat);
    const double k4 = 4.0 * mat.mu * prof.amplitude;
    s.problem.overrides = overrides_from(s.data, [&](double, double) {
        return std::array<std::array<double, 2>, 3>{{{k4, 0.0}, {-k4, 0.0}, {0.0, -k4}}};
    });
    const auto lb = elastic_loss(s.model, s.problem, s.all);
    for (std::size_t t = 0; t < lb.names.size(); ++t) {
        CAPTURE(lb.names[t]);
        CHECK(lb.values[t] <= 1e-10);
    }
    // a wrong stress gradient shows up in the equilibrium terms only
    auto pb = s.problem;
    for (auto& o : pb.overrides) o.grad_stress[2][1] += 1e7;
    const auto bad = elastic_loss(s.model, pb, s.all);
    CHECK(bad.value("equilibrium_x") == doctest::Approx(0.01).epsilon(1e-9));
    CHECK(bad.value("equilibrium_y") <= 1e-10);
}

TEST_CASE("loss at the generating parameters is a local minimum in each material parameter") {
    const auto mat = truth();
    Setup s;
    init(s, 9);
    s.data = generate_elastic_manufactured(constant_strain(), mat, s.cloud);
    finish(s, ModelOptions{}, mat);
    s.problem.overrides = overrides_from(s.data);
    const double base = total_with(s.problem, s.model, s.all);
    CHECK(base <= 1e-20);
    for (double rel : {-1e-3, 1e-3}) {
        Model m = s.model;
        m.material.lambda *= 1.0 + rel;
        CHECK(total_with(s.problem, m, s.all) > base);
        m = s.model;
        m.material.mu *= 1.0 + rel;
        CHECK(total_with(s.problem, m, s.all) > base);
    }

    // plastic problem: all four parameters
    Setup q;
    init(q, 21);
    auto pm = mat;
    pm.hp = 5e9;
    q.data = generate_plastic_manufactured(PlasticProfile{}, pm, q.cloud);
    REQUIRE(q.data.plastic_fraction > 0.0);
    finish(q, ModelOptions{}, pm);
    q.problem.overrides = overrides_from(q.data);
    const double qbase = total_with(q.problem, q.model, q.all);
    CHECK(qbase <= 1e-18);
    for (double rel : {-1e-2, 1e-2}) {
        for (int k = 0; k < 4; ++k) {
            Model m = q.model;
            double* v[4] = {&m.material.lambda, &m.material.mu, &m.material.sigma_y0, &m.material.hp};
            *v[k] *= 1.0 + rel;
            CHECK(total_with(q.problem, m, q.all) >= qbase);
        }
    }
}

TEST_CASE("plastic loss: manufactured plastic dataset at the generating parameters") {
    auto mat = truth();
    mat.hp = 5e9;
    Setup s;
    init(s, 21);
    s.data = generate_plastic_manufactured(PlasticProfile{}, mat, s.cloud);
    CHECK(!s.data.equilibrium_terms);
    finish(s, ModelOptions{}, mat);
    s.problem.overrides = overrides_from(s.data);
    const auto lb = plastic_loss(s.model, s.problem, s.all);
    CHECK(!lb.has("equilibrium_x"));
    for (const char* name : {"pressure", "dev_xx", "dev_yy", "dev_zz", "dev_xy", "ebar_p", "flow_xx", "flow_yy",
                             "flow_zz", "flow_xy"}) {
        CAPTURE(name);
        CHECK(lb.value(name) <= 1e-10);
    }
    for (const auto& n : lb.names)
        if (n.rfind("data_", 0) == 0) CHECK(lb.value(n) <= 1e-20);
    CHECK(lb.skipped_flow == 0);

    // hardening modulus away from the truth moves the yield relation
    for (double f : {0.5, 2.0}) {
        Model m = s.model;
        m.material.hp = mat.hp * f;
        CHECK(plastic_loss(m, s.problem, s.all).value("ebar_p") > lb.value("ebar_p"));
    }
    CHECK_THROWS_AS(elastic_loss(s.model, s.problem, s.all), InvalidArgument);
}

TEST_CASE("plastic loss: below-yield state reduces to elastic closure") {
    const auto mat = truth();
    Setup s;
    init(s, 11);
    PlasticProfile prof;
    prof.amplitude = 1e-5;
    prof.background_x = 1e-5;
    prof.background_y = -1e-5;
    s.data = generate_plastic_manufactured(prof, mat, s.cloud);
    CHECK(s.data.plastic_fraction == 0.0);
    finish(s, ModelOptions{}, mat);
    s.problem.overrides = overrides_from(s.data);
    const auto lb = plastic_loss(s.model, s.problem, s.all);
    for (std::size_t t = 0; t < lb.names.size(); ++t) {
        CAPTURE(lb.names[t]);
        CHECK(lb.values[t] <= 1e-10);
    }
}

TEST_CASE("term accounting, empty index sets and thread independence") {
    const auto mat = truth();
    Setup s;
    init(s, 7);
    s.data = generate_elastic_manufactured(constant_strain(), mat, s.cloud);
    std::array<std::optional<std::size_t>, channel_count> counts{};
    counts[index_of(Channel::exx)] = 0;
    counts[index_of(Channel::sxx)] = 10;
    sample_index_sets(s.data, counts, 5);
    ModelOptions mo;
    mo.architecture = ArchitectureKind::ad_pddo;
    mo.hidden = {6};
    finish(s, mo, mat, {{"data_ux", 2.5}, {"pressure", 0.0}, {"dev_xy", 7.0}, {"equilibrium_y", 0.3}});
    const auto lb = elastic_loss(s.model, s.problem, s.all);
    double sum = 0.0;
    for (std::size_t t = 0; t < lb.names.size(); ++t) {
        CHECK(lb.values[t] >= 0.0);
        sum += lb.weights[t] * lb.values[t];
    }
    CHECK(lb.total == doctest::Approx(sum).epsilon(1e-12));
    CHECK(lb.value("data_exx") == 0.0);
    bool noticed = false;
    for (const auto& n : lb.notices) noticed = noticed || n.find("data_exx") != std::string::npos;
    CHECK(noticed);
    CHECK(lb.weights[0] == 2.5);

    std::vector<double> g1, g3;
    const auto a = loss_and_gradient(s.model, s.problem, s.all, &g1, 1);
    const auto b = loss_and_gradient(s.model, s.problem, s.all, &g3, 3);
    CHECK(a.total == b.total);
    CHECK(g1 == g3);

    // zero weights contribute nothing: all-zero weights give a zero gradient,
    // and a term's gradient adds linearly on top of the rest
    std::map<std::string, double> zero, only_dev, rest;
    for (const auto& n : lb.names) {
        zero[n] = 0.0;
        only_dev[n] = n == "dev_yy" ? 1.0 : 0.0;
        rest[n] = n == "dev_yy" ? 0.0 : 1.0;
    }
    auto grad_for = [&](const std::map<std::string, double>& w) {
        auto pb = s.problem;
        pb.weights = w;
        std::vector<double> g;
        loss_and_gradient(s.model, pb, s.all, &g);
        return g;
    };
    for (double v : grad_for(zero)) CHECK(v == 0.0);
    const auto gd = grad_for(only_dev), gr = grad_for(rest);
    std::map<std::string, double> ones;
    for (const auto& n : lb.names) ones[n] = 1.0;
    const auto go = grad_for(ones);
    double gmax = 0.0;
    for (double v : go) gmax = std::max(gmax, std::abs(v));
    for (std::size_t i = 0; i < go.size(); ++i) CHECK(std::abs(go[i] - gd[i] - gr[i]) <= 1e-12 * gmax);

    CHECK_THROWS_AS(make_problem(s.data, s.cloud, &s.ops, s.model, true, {{"no_such_term", 1.0}}), InvalidArgument);
    CHECK_THROWS_AS(make_problem(s.data, s.cloud, &s.ops, s.model, true, {{"pressure", -1.0}}), InvalidArgument);
    const std::vector<std::size_t> bad{1000};
    CHECK_THROWS_AS(loss_and_gradient(s.model, s.problem, bad), InvalidArgument);
}

TEST_CASE("loss gradients match central differences in all architectures") {
    auto mat = truth();
    for (bool plastic : {false, true}) {
        for (auto arch : {ArchitectureKind::local, ArchitectureKind::ad_pddo, ArchitectureKind::pddo}) {
            CAPTURE(to_string(arch));
            CAPTURE(plastic);
            Setup s;
            init(s, 5);
            if (plastic) {
                mat.hp = 5e9;
                s.data = generate_plastic_manufactured(PlasticProfile{}, mat, s.cloud);
            } else {
                ElasticProfile prof;
                s.data = generate_elastic_manufactured(prof, mat, s.cloud);
            }
            ModelOptions mo;
            mo.architecture = arch;
            mo.hidden = {20, 20};
            mo.seed = 3;
            MaterialParams guess = mat;
            guess.lambda *= 0.8;
            guess.mu *= 1.2;
            guess.sigma_y0 *= 0.7;
            guess.hp *= 1.5;
            guess.trainable = {true, true, true, true};
            finish(s, mo, guess);
            // nonzero biases
            std::mt19937_64 rng(9);
            std::uniform_real_distribution<double> u(-0.2, 0.2);
            for (auto& net : s.model.nets)
                for (std::size_t l = 0; l < net.spec.layers(); ++l)
                    for (std::size_t i = 0; i < net.biases(l).size(); ++i) net.values[net.bias_offset(l) + i] = u(rng);

            std::vector<double> grad;
            loss_and_gradient(s.model, s.problem, s.all, &grad);
            const auto flat = s.model.flat();
            const std::size_t P = flat.size();
            std::vector<std::size_t> idx;
            std::uniform_int_distribution<std::size_t> pick(0, s.model.network_parameter_count() - 1);
            for (int k = 0; k < 60; ++k) idx.push_back(pick(rng));
            for (std::size_t k = s.model.network_parameter_count(); k < P; ++k) idx.push_back(k);

            double gmax = 0.0;
            for (double g : grad) gmax = std::max(gmax, std::abs(g));
            double worst = 0.0;
            for (std::size_t i : idx) {
                // fourth-order central difference
                const double h = 1e-4 * std::max(1.0, std::abs(flat[i]));
                auto at = [&](double d) {
                    Model m = s.model;
                    auto f = flat;
                    f[i] = flat[i] + d;
                    m.set_flat(f);
                    return loss_and_gradient(m, s.problem, s.all).total;
                };
                const double fd = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
                worst = std::max(worst, std::abs(grad[i] - fd) / std::max(std::abs(fd), 1e-4 * gmax));
            }
            MESSAGE(to_string(arch) << (plastic ? " plastic" : " elastic") << ": worst relative FD error " << worst);
            CHECK(worst <= 1e-5);
        }
    }
}

TEST_CASE("predict_fields reproduces exact linear fields") {
    const auto mat = truth();
    Setup s;
    init(s, 9);
    const auto prof = constant_strain();
    s.data = generate_elastic_manufactured(prof, mat, s.cloud);
    finish(s, linear_options(ArchitectureKind::pddo), mat);
    const double a = prof.amplitude;
    const auto& g = prof.gradient;
    set_linear_field(s.model, s.problem.map, Field::ux, 0.0, a * g[0], a * g[1]);
    set_linear_field(s.model, s.problem.map, Field::uy, 0.0, a * g[2], a * g[3]);
    set_linear_field(s.model, s.problem.map, Field::sxx, s.data.channel(Channel::sxx)[0], 0.0, 0.0);
    set_linear_field(s.model, s.problem.map, Field::syy, s.data.channel(Channel::syy)[0], 0.0, 0.0);
    set_linear_field(s.model, s.problem.map, Field::sxy, s.data.channel(Channel::sxy)[0], 0.0, 0.0);
    const auto pred = predict_fields(s.model, s.problem);
    for (Channel c : all_channels)
        for (std::size_t p = 0; p < s.data.size(); ++p) {
            const double ref = s.data.channel(c)[p];
            CHECK(std::abs(pred.channel(c)[p] - ref) <= 1e-9 * std::max(std::abs(ref), c >= Channel::sxx ? 1e6 : 1e-6));
        }
}

TEST_CASE("model parameters: flat layout, fixed values and checkpoints") {
    auto mat = truth();
    mat.trainable.sigma_y0 = true;
    ModelOptions mo;
    mo.hidden = {4};
    auto m = make_model(mo, mat, true);
    CHECK(m.nets.size() == 6);
    CHECK(m.net_names == std::vector<std::string>{"ux", "uy", "sxx", "syy", "sxy", "szz"});
    CHECK(m.parameter_count() == m.network_parameter_count() + 4);
    const auto cm = m.current_material();
    CHECK(cm.lambda == mat.lambda);
    CHECK(cm.mu == mat.mu);
    CHECK(cm.hp == mat.hp);
    CHECK(cm.sigma_y0 == doctest::Approx(mat.sigma_y0).epsilon(1e-14));
    auto flat = m.flat();
    flat.back() += 3.0;       // hp slot: fixed, ignored
    flat[flat.size() - 2] = softplus_inverse(2.0);   // sigma_y0 slot
    m.set_flat(flat);
    CHECK(m.current_material().hp == mat.hp);
    CHECK(m.current_material().sigma_y0 == doctest::Approx(2.0 * mat.sigma_y0).epsilon(1e-14));

    ModelOptions shared = mo;
    shared.shared_trunk = true;
    const auto t = make_model(shared, mat, false);
    CHECK(t.nets.size() == 1);
    CHECK(t.nets[0].spec.outputs() == 5);

    const auto ck = to_checkpoint(m);
    const auto back = model_from_checkpoint(mo, ck, true);
    CHECK(back.flat().size() == m.flat().size());
    for (std::size_t k = 0; k < m.nets.size(); ++k) CHECK(back.nets[k].values == m.nets[k].values);
    CHECK_THROWS_AS(model_from_checkpoint(shared, ck, false), InvalidArgument);

    MaterialParams bad = mat;
    bad.trainable.mu = true;
    bad.mu = 0.0;
    CHECK_THROWS_AS(make_model(mo, bad, false), InvalidArgument);
}
