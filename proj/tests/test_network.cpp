#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nlpinn/error.hpp"
#include "nlpinn/network.hpp"
#include "nlpinn/tape.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace nlpinn;
using ad::Tape;
using ad::Var;

namespace {

NetworkParams random_net(std::vector<std::size_t> widths, Activation act, std::uint64_t seed) {
    NetworkParams p = init_params({std::move(widths), act, seed});
    std::mt19937_64 rng(seed + 99);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    // nonzero biases so that every code path is exercised
    for (std::size_t l = 0; l < p.spec.layers(); ++l)
        for (std::size_t i = 0; i < p.biases(l).size(); ++i) p.values[p.bias_offset(l) + i] = u(rng);
    return p;
}

// Loss built from outputs and input derivatives:
// sum_k (f_k - 0.3)^2 + (df_k/dx0)^2 + 0.5 * df_k/dx1 * f_k
double derivative_loss(const NetworkParams& p, const std::vector<double>& x, std::vector<double>* grad) {
    Tape tape;
    const auto first = static_cast<std::uint32_t>(tape.size());
    for (double w : p.values) tape.leaf(w);
    std::vector<std::vector<double>> dirs(2, std::vector<double>(x.size(), 0.0));
    dirs[0][0] = 1.0;
    dirs[1][1] = 1.0;
    const auto ev = forward_on_tape(tape, p, first, x, dirs);
    std::vector<Var> terms;
    for (std::size_t k = 0; k < ev.outputs.size(); ++k) {
        terms.push_back(square(ev.outputs[k] - 0.3));
        terms.push_back(square(ev.tangents[0][k]));
        terms.push_back(0.5 * (ev.tangents[1][k] * ev.outputs[k]));
    }
    const Var loss = ad::sum(terms);
    if (grad) {
        const auto& adj = tape.backward(loss);
        grad->assign(adj.begin() + first, adj.begin() + first + p.size());
    }
    return loss.value();
}

} // namespace

TEST_CASE("init_params: deterministic, zero biases, paper-sized network") {
    const NetworkSpec spec{{2, 100, 100, 100, 100, 1}, Activation::tanh, 42};
    const auto a = init_params(spec);
    const auto b = init_params(spec);
    CHECK(a.values == b.values);
    CHECK(spec.widths.size() == 6);
    CHECK(a.block_count() == 5);   // one (W, b) pair per affine map between the six widths
    CHECK(a.size() == parameter_count(spec));
    CHECK(parameter_count(spec) == 2 * 100 + 100 + 3 * (100 * 100 + 100) + 100 + 1);
    for (std::size_t l = 0; l < a.block_count(); ++l)
        for (double v : a.biases(l)) CHECK(v == 0.0);
    const auto c = init_params({spec.widths, spec.activation, 43});
    CHECK(c.values != a.values);
    // Glorot bound
    for (std::size_t l = 0; l < a.block_count(); ++l) {
        const double lim = std::sqrt(6.0 / static_cast<double>(spec.widths[l] + spec.widths[l + 1]));
        for (double w : a.weights(l)) CHECK(std::abs(w) <= lim);
    }
}

TEST_CASE("network spec validation") {
    CHECK_THROWS_AS(validate(NetworkSpec{{2, 1}, Activation::tanh, 0}), InvalidArgument);
    CHECK_THROWS_AS(validate(NetworkSpec{{2, 0, 1}, Activation::tanh, 0}), InvalidArgument);
    CHECK_NOTHROW(validate(NetworkSpec{{2, 3, 1}, Activation::relu, 0}));
    CHECK(activation_from_string("relu") == Activation::relu);
    CHECK_THROWS_AS(activation_from_string("sigmoid"), InvalidArgument);
}

TEST_CASE("forward: zero parameters, linear layers and odd activation") {
    auto p = init_params({{3, 5, 2}, Activation::tanh, 1});
    std::fill(p.values.begin(), p.values.end(), 0.0);
    const std::vector<double> x{0.4, -1.2, 3.0};
    for (double v : forward(p, x).outputs) CHECK(v == 0.0);

    // identity hidden layer with a linear activation: output = W x + b exactly
    auto lin = init_params({{3, 3, 2}, Activation::linear, 1});
    std::fill(lin.values.begin(), lin.values.end(), 0.0);
    for (std::size_t i = 0; i < 3; ++i) lin.values[lin.weight_offset(0) + i * 3 + i] = 1.0;
    const double W[2][3] = {{1.5, -2.0, 0.25}, {0.5, 4.0, -1.0}};
    const double b[2] = {0.125, -3.0};
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < 3; ++c) lin.values[lin.weight_offset(1) + r * 3 + c] = W[r][c];
        lin.values[lin.bias_offset(1) + r] = b[r];
    }
    const auto ev = forward(lin, x);
    for (std::size_t r = 0; r < 2; ++r) {
        const double expect = W[r][0] * x[0] + W[r][1] * x[1] + W[r][2] * x[2] + b[r];
        CHECK(ev.outputs[r] == doctest::Approx(expect).epsilon(1e-15));
        for (std::size_t c = 0; c < 3; ++c) CHECK(ev.derivative(r, c) == W[r][c]);
    }
    const auto jac = input_derivatives(lin, x);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 3; ++c) CHECK(jac[r * 3 + c] == W[r][c]);

    const auto t = init_params({{2, 8, 8, 3}, Activation::tanh, 5});
    for (double v : forward(t, std::vector<double>{0.0, 0.0}).outputs) CHECK(v == 0.0);
}

TEST_CASE("forward: input validation") {
    const auto p = init_params({{2, 4, 1}, Activation::tanh, 1});
    CHECK_THROWS_AS(forward(p, std::vector<double>{1.0}), InvalidArgument);
    CHECK_THROWS_AS(forward(p, std::vector<double>{1.0, NAN}), InvalidArgument);
    CHECK_THROWS_AS(forward(p, std::vector<double>{INFINITY, 0.0}), InvalidArgument);
}

TEST_CASE("input_derivatives: tanh(w x) at zero and relu subgradient") {
    auto p = init_params({{1, 1, 1}, Activation::tanh, 1});
    const double w = 1.75;
    p.values[p.weight_offset(0)] = w;
    p.values[p.bias_offset(0)] = 0.0;
    p.values[p.weight_offset(1)] = 1.0;
    p.values[p.bias_offset(1)] = 0.0;
    CHECK(input_derivatives(p, std::vector<double>{0.0})[0] == w);

    auto r = p;
    r.spec.activation = Activation::relu;
    CHECK(input_derivatives(r, std::vector<double>{0.0})[0] == 0.0);
    CHECK(input_derivatives(r, std::vector<double>{0.5})[0] == w);
    CHECK(input_derivatives(r, std::vector<double>{-0.5})[0] == 0.0);
}

TEST_CASE("input_derivatives match central differences") {
    for (auto act : {Activation::tanh, Activation::linear}) {
        const auto p = random_net({4, 10, 7, 3}, act, 17);
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<double> x(4);
            for (auto& v : x) v = u(rng);
            const auto jac = input_derivatives(p, x);
            const auto ev = forward(p, x);
            for (std::size_t i = 0; i < 4; ++i) {
                const double h = 1e-5;
                auto xp = x, xm = x;
                xp[i] += h;
                xm[i] -= h;
                const auto fp = forward(p, xp).outputs, fm = forward(p, xm).outputs;
                for (std::size_t k = 0; k < 3; ++k) {
                    const double fd = (fp[k] - fm[k]) / (2 * h);
                    CHECK(std::abs(jac[k * 4 + i] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
                    CHECK(ev.derivative(k, i) == jac[k * 4 + i]);
                }
            }
        }
    }
}

TEST_CASE("forward_on_tape agrees with forward") {
    const auto p = random_net({3, 6, 5, 2}, Activation::tanh, 8);
    const std::vector<double> x{0.2, -0.7, 0.9};
    Tape tape;
    for (double w : p.values) tape.leaf(w);
    std::vector<std::vector<double>> dirs{{1.0, 0.0, 0.0}, {0.3, -1.0, 2.0}};
    const auto ev = forward_on_tape(tape, p, 0, x, dirs);
    const auto ref = forward(p, x);
    for (std::size_t k = 0; k < 2; ++k) {
        CHECK(ev.outputs[k].value() == doctest::Approx(ref.outputs[k]).epsilon(1e-14));
        CHECK(ev.tangents[0][k].value() == doctest::Approx(ref.derivative(k, 0)).epsilon(1e-13));
        const double dd = 0.3 * ref.derivative(k, 0) - ref.derivative(k, 1) + 2.0 * ref.derivative(k, 2);
        CHECK(ev.tangents[1][k].value() == doctest::Approx(dd).epsilon(1e-13));
    }
}

TEST_CASE("backward: sum of squares") {
    Tape tape;
    const std::vector<double> p{0.5, -1.25, 3.0, 0.0};
    std::vector<Var> leaves, sq;
    for (double v : p) leaves.push_back(tape.leaf(v));
    for (Var v : leaves) sq.push_back(square(v));
    const Var loss = ad::sum(sq);
    const auto& adj = tape.backward(loss);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(adj[leaves[i].id] == 2.0 * p[i]);
}

TEST_CASE("backward: elementary operations against hand derivatives") {
    Tape tape;
    const Var a = tape.leaf(0.7), b = tape.leaf(-1.3);
    const Var f = a * b + a / b - exp(a) + log(a) * tanh(b) + softplus(b) + sqrt(a) - relu(b) + relu(a);
    const auto& g = tape.backward(f);
    const double av = 0.7, bv = -1.3;
    const double th = std::tanh(bv);
    const double da = bv + 1.0 / bv - std::exp(av) + th / av + 0.5 / std::sqrt(av) + 1.0;
    const double db = av - av / (bv * bv) + std::log(av) * (1.0 - th * th) + 1.0 / (1.0 + std::exp(-bv));
    CHECK(g[a.id] == doctest::Approx(da).epsilon(1e-14));
    CHECK(g[b.id] == doctest::Approx(db).epsilon(1e-14));

    Tape t2;
    const Var z = t2.leaf(0.0);
    const Var s = sqrt(z) + relu(z);
    CHECK(t2.backward(s)[z.id] == 0.0);
}

TEST_CASE("backward: gradients through input-derivative nodes match finite differences") {
    for (auto act : {Activation::tanh, Activation::linear}) {
        auto p = random_net({2, 6, 6, 3}, act, 21);
        const std::vector<double> x{0.35, -0.6};
        std::vector<double> grad;
        derivative_loss(p, x, &grad);
        double worst = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double h = 1e-6 * std::max(1.0, std::abs(p.values[i]));
            const double v = p.values[i];
            p.values[i] = v + h;
            const double lp = derivative_loss(p, x, nullptr);
            p.values[i] = v - h;
            const double lm = derivative_loss(p, x, nullptr);
            p.values[i] = v;
            const double fd = (lp - lm) / (2 * h);
            const double err = std::abs(grad[i] - fd) / std::max(std::abs(fd), 1e-3);
            worst = std::max(worst, err);
        }
        MESSAGE("worst relative FD error " << worst);
        CHECK(worst <= 1e-5);
    }
}

TEST_CASE("backward: a zero-weight term contributes nothing") {
    Tape tape;
    const Var a = tape.leaf(1.3), b = tape.leaf(-0.4);
    const Var with = 0.0 * square(a * b) + square(b);
    const auto g = tape.backward(with);
    CHECK(g[a.id] == 0.0);
    CHECK(g[b.id] == 2.0 * -0.4);
}

TEST_CASE("backward: non-finite values name the node class") {
    Tape tape;
    const Var a = tape.leaf(-1.0);
    const Var bad = log(a) + a;
    try {
        tape.backward(bad);
        FAIL("expected PoisonedGradient");
    } catch (const PoisonedGradient& e) {
        CHECK(e.node_class == "elementary-function");
    }
    Tape t2;
    const Var z = t2.leaf(0.0);
    const Var q = 1.0 / z;
    try {
        t2.backward(q);
        FAIL("expected PoisonedGradient");
    } catch (const PoisonedGradient& e) {
        CHECK(e.node_class == "arithmetic");
    }
    CHECK(t2.first_nonfinite() == static_cast<long>(q.id));
}

TEST_CASE("softplus helpers") {
    for (double y : {1e-6, 0.1, 1.0, 7.5, 40.0}) CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-12));
    CHECK(softplus(800.0) == 800.0);
    CHECK(softplus(-800.0) >= 0.0);
    CHECK_THROWS_AS(softplus_inverse(0.0), InvalidArgument);
}

TEST_CASE("checkpoint round trip is bitwise") {
    Checkpoint ck;
    ck.names = {"ux", "trunk"};
    ck.networks = {random_net({2, 5, 1}, Activation::tanh, 4), random_net({98, 7, 49}, Activation::relu, 5)};
    ck.material = {40.1e9, 27.2e9, 0.11e9, 0.45e9, {true, false, true, true}};
    const auto path = std::filesystem::temp_directory_path() / "nlpinn_test_ck.bin";
    write_checkpoint(ck, path);
    const auto back = read_checkpoint(path);
    CHECK(back.names == ck.names);
    REQUIRE(back.networks.size() == 2);
    for (std::size_t k = 0; k < 2; ++k) {
        CHECK(back.networks[k].values == ck.networks[k].values);
        CHECK(back.networks[k].spec.widths == ck.networks[k].spec.widths);
        CHECK(back.networks[k].spec.activation == ck.networks[k].spec.activation);
        CHECK(back.networks[k].spec.seed == ck.networks[k].spec.seed);
    }
    CHECK(back.material.lambda == ck.material.lambda);
    CHECK(back.material.hp == ck.material.hp);
    CHECK(back.material.trainable.lambda);
    CHECK(!back.material.trainable.mu);

    {
        std::ofstream out(path);
        out << "not a checkpoint\n";
    }
    CHECK_THROWS_AS(read_checkpoint(path), ParseError);
    std::filesystem::remove(path);
    CHECK_THROWS(read_checkpoint(path));
}
