#include "nlpinn/network.hpp"

#include "nlpinn/error.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace nlpinn {

std::string to_string(Activation a) {
    switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::linear: return "linear";
    }
    return "?";
}

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    if (s == "linear") return Activation::linear;
    throw InvalidArgument("unknown activation '" + s + "' (expected tanh, relu or linear)");
}

void validate(const NetworkSpec& spec) {
    if (spec.widths.size() < 3)
        throw InvalidArgument("network needs an input width, at least one hidden layer and an output width");
    for (std::size_t w : spec.widths)
        if (w < 1) throw InvalidArgument("network layer widths must be >= 1");
}

std::size_t parameter_count(const NetworkSpec& spec) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l)
        n += spec.widths[l] * spec.widths[l + 1] + spec.widths[l + 1];
    return n;
}

std::size_t NetworkParams::weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += spec.widths[l] * spec.widths[l + 1] + spec.widths[l + 1];
    return off;
}

std::size_t NetworkParams::bias_offset(std::size_t layer) const {
    return weight_offset(layer) + spec.widths[layer] * spec.widths[layer + 1];
}

std::span<const double> NetworkParams::weights(std::size_t layer) const {
    return {values.data() + weight_offset(layer), spec.widths[layer] * spec.widths[layer + 1]};
}

std::span<const double> NetworkParams::biases(std::size_t layer) const {
    return {values.data() + bias_offset(layer), spec.widths[layer + 1]};
}

NetworkParams init_params(const NetworkSpec& spec) {
    validate(spec);
    NetworkParams p;
    p.spec = spec;
    p.values.assign(parameter_count(spec), 0.0);
    std::mt19937_64 rng(spec.seed);
    for (std::size_t l = 0; l < spec.layers(); ++l) {
        const double fan_in = static_cast<double>(spec.widths[l]);
        const double fan_out = static_cast<double>(spec.widths[l + 1]);
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        const std::size_t off = p.weight_offset(l);
        for (std::size_t k = 0; k < spec.widths[l] * spec.widths[l + 1]; ++k) p.values[off + k] = dist(rng);
    }
    return p;
}

namespace {

void check_inputs(const NetworkParams& params, std::span<const double> inputs) {
    if (inputs.size() != params.spec.inputs())
        throw InvalidArgument("network expects " + std::to_string(params.spec.inputs()) + " inputs, got " +
                              std::to_string(inputs.size()));
    for (double v : inputs)
        if (!std::isfinite(v)) throw InvalidArgument("network input is not finite");
}

double activate(Activation a, double x) {
    switch (a) {
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::linear: return x;
    }
    return x;
}

double activate_prime(Activation a, double x, double y) {
    switch (a) {
    case Activation::tanh: return 1.0 - y * y;
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::linear: return 1.0;
    }
    return 1.0;
}

} // namespace

EvalRecord forward(const NetworkParams& params, std::span<const double> inputs) {
    check_inputs(params, inputs);
    const auto& w = params.spec.widths;
    const std::size_t n_in = w.front();

    std::vector<double> z(inputs.begin(), inputs.end());
    std::vector<double> jac(n_in * n_in, 0.0);
    for (std::size_t i = 0; i < n_in; ++i) jac[i * n_in + i] = 1.0;

    EvalRecord rec;
    rec.inputs = n_in;
    for (std::size_t l = 0; l < params.spec.layers(); ++l) {
        const auto W = params.weights(l);
        const auto b = params.biases(l);
        const std::size_t in = w[l], out = w[l + 1];
        std::vector<double> a(out);
        std::vector<double> ja(out * n_in, 0.0);
        for (std::size_t h = 0; h < out; ++h) {
            double s = b[h];
            for (std::size_t k = 0; k < in; ++k) s += W[h * in + k] * z[k];
            a[h] = s;
            for (std::size_t k = 0; k < in; ++k) {
                const double wk = W[h * in + k];
                if (wk == 0.0) continue;
                for (std::size_t i = 0; i < n_in; ++i) ja[h * n_in + i] += wk * jac[k * n_in + i];
            }
        }
        if (l + 1 == params.spec.layers()) {
            rec.outputs = std::move(a);
            rec.jacobian = std::move(ja);
            return rec;
        }
        z.resize(out);
        for (std::size_t h = 0; h < out; ++h) {
            z[h] = activate(params.spec.activation, a[h]);
            const double d = activate_prime(params.spec.activation, a[h], z[h]);
            for (std::size_t i = 0; i < n_in; ++i) ja[h * n_in + i] *= d;
        }
        jac = std::move(ja);
        rec.hidden.push_back(z);
    }
    return rec;
}

std::vector<double> input_derivatives(const NetworkParams& params, std::span<const double> inputs) {
    return forward(params, inputs).jacobian;
}

TapeEval forward_on_tape(ad::Tape& tape, const NetworkParams& params, std::uint32_t first_param,
                         std::span<const double> inputs, std::span<const std::vector<double>> directions) {
    using ad::NodeClass;
    using ad::Var;
    check_inputs(params, inputs);
    for (const auto& d : directions)
        if (d.size() != inputs.size()) throw InvalidArgument("tangent direction has wrong length");

    const auto& w = params.spec.widths;
    const std::size_t nd = directions.size();
    const Activation act = params.spec.activation;

    std::vector<Var> z, pre;
    std::vector<std::vector<Var>> dz(nd), dpre(nd);
    const Var zero = tape.constant(0.0);

    for (std::size_t l = 0; l < params.spec.layers(); ++l) {
        const std::size_t in = w[l], out = w[l + 1];
        const std::size_t woff = params.weight_offset(l);
        const std::size_t boff = params.bias_offset(l);
        const double* W = params.values.data() + woff;
        const std::uint32_t wid = first_param + static_cast<std::uint32_t>(woff);
        const std::uint32_t bid = first_param + static_cast<std::uint32_t>(boff);

        pre.assign(out, zero);
        for (auto& v : dpre) v.assign(out, zero);

        for (std::size_t h = 0; h < out; ++h) {
            const double* Wh = W + h * in;
            const std::uint32_t wh = wid + static_cast<std::uint32_t>(h * in);

            Var node = tape.begin_node(NodeClass::affine);
            double acc = params.values[boff + h];
            tape.add_edge(node, bid + static_cast<std::uint32_t>(h), 1.0);
            if (l == 0) {
                for (std::size_t k = 0; k < in; ++k) {
                    if (inputs[k] == 0.0) continue;
                    acc += Wh[k] * inputs[k];
                    tape.add_edge(node, wh + static_cast<std::uint32_t>(k), inputs[k]);
                }
            } else {
                for (std::size_t k = 0; k < in; ++k) {
                    const double zk = z[k].value();
                    acc += Wh[k] * zk;
                    tape.add_edge(node, wh + static_cast<std::uint32_t>(k), zk);
                    tape.add_edge(node, z[k].id, Wh[k]);
                }
            }
            tape.finish_node(node, acc);
            pre[h] = node;

            for (std::size_t d = 0; d < nd; ++d) {
                Var tn = tape.begin_node(NodeClass::affine);
                double tacc = 0.0;
                if (l == 0) {
                    const auto& t = directions[d];
                    for (std::size_t k = 0; k < in; ++k) {
                        if (t[k] == 0.0) continue;
                        tacc += Wh[k] * t[k];
                        tape.add_edge(tn, wh + static_cast<std::uint32_t>(k), t[k]);
                    }
                } else {
                    for (std::size_t k = 0; k < in; ++k) {
                        const double tk = dz[d][k].value();
                        tacc += Wh[k] * tk;
                        tape.add_edge(tn, wh + static_cast<std::uint32_t>(k), tk);
                        tape.add_edge(tn, dz[d][k].id, Wh[k]);
                    }
                }
                tape.finish_node(tn, tacc);
                dpre[d][h] = tn;
            }
        }

        if (l + 1 == params.spec.layers()) break;

        z.assign(out, zero);
        for (auto& v : dz) v.assign(out, zero);
        for (std::size_t h = 0; h < out; ++h) {
            const double a = pre[h].value();
            switch (act) {
            case Activation::linear:
                z[h] = pre[h];
                for (std::size_t d = 0; d < nd; ++d) dz[d][h] = dpre[d][h];
                break;
            case Activation::relu:
                // derivative 0 at exactly 0
                if (a > 0.0) {
                    z[h] = pre[h];
                    for (std::size_t d = 0; d < nd; ++d) dz[d][h] = dpre[d][h];
                }
                break;
            case Activation::tanh: {
                const double y = std::tanh(a);
                const double g = 1.0 - y * y;
                const ad::Edge e{pre[h].id, g};
                z[h] = tape.push(y, {&e, 1}, NodeClass::activation);
                for (std::size_t d = 0; d < nd; ++d) {
                    const double da = dpre[d][h].value();
                    const ad::Edge te[2] = {{dpre[d][h].id, g}, {pre[h].id, -2.0 * y * g * da}};
                    dz[d][h] = tape.push(g * da, te, NodeClass::activation);
                }
                break;
            }
            }
        }
    }

    TapeEval out;
    out.outputs = std::move(pre);
    out.tangents = std::move(dpre);
    return out;
}

namespace {

constexpr const char* kCheckpointMagic = "nlpinn-checkpoint v1";

std::string hexfloat(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

std::string join_widths(const std::vector<std::size_t>& w) {
    std::string s;
    for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
    return s;
}

void write_le(std::ostream& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

double read_le(std::istream& in) {
    std::uint64_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    return std::bit_cast<double>(bits);
}

std::string flags_string(const TrainableFlags& f) {
    std::string s;
    auto add = [&](bool on, const char* n) {
        if (on) s += (s.empty() ? "" : ",") + std::string(n);
    };
    add(f.lambda, "lambda");
    add(f.mu, "mu");
    add(f.sigma_y0, "sigma_y0");
    add(f.hp, "hp");
    return s.empty() ? "none" : s;
}

} // namespace

void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    if (ck.names.size() != ck.networks.size()) throw InvalidArgument("checkpoint: names/networks mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    out << kCheckpointMagic << '\n';
    const auto& m = ck.material;
    out << "material lambda=" << hexfloat(m.lambda) << " mu=" << hexfloat(m.mu)
        << " sigma_y0=" << hexfloat(m.sigma_y0) << " hp=" << hexfloat(m.hp)
        << " trainable=" << flags_string(m.trainable) << '\n';
    for (std::size_t i = 0; i < ck.networks.size(); ++i) {
        const auto& n = ck.networks[i];
        out << "network " << ck.names[i] << " widths=" << join_widths(n.spec.widths)
            << " activation=" << to_string(n.spec.activation) << " seed=" << n.spec.seed
            << " count=" << n.values.size() << '\n';
    }
    out << "end_header\n";
    for (const auto& n : ck.networks)
        for (double v : n.values) write_le(out, v);
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    const std::string file = path.string();
    std::string line;
    std::size_t lineno = 0;
    auto next = [&] {
        if (!std::getline(in, line)) throw ParseError(file, lineno + 1, "unexpected end of checkpoint header");
        ++lineno;
    };
    next();
    if (line != kCheckpointMagic) throw ParseError(file, lineno, "not a checkpoint (bad magic)");

    Checkpoint ck;
    auto field = [&](std::istringstream& ss, const std::string& key) {
        std::string tok;
        if (!(ss >> tok) || tok.rfind(key + "=", 0) != 0) throw ParseError(file, lineno, "expected " + key + "=");
        return tok.substr(key.size() + 1);
    };
    for (;;) {
        next();
        if (line == "end_header") break;
        std::istringstream ss(line);
        std::string kind;
        ss >> kind;
        if (kind == "material") {
            ck.material.lambda = std::strtod(field(ss, "lambda").c_str(), nullptr);
            ck.material.mu = std::strtod(field(ss, "mu").c_str(), nullptr);
            ck.material.sigma_y0 = std::strtod(field(ss, "sigma_y0").c_str(), nullptr);
            ck.material.hp = std::strtod(field(ss, "hp").c_str(), nullptr);
            const std::string t = field(ss, "trainable");
            ck.material.trainable.lambda = t.find("lambda") != std::string::npos;
            ck.material.trainable.mu = t.find("mu") != std::string::npos;
            ck.material.trainable.sigma_y0 = t.find("sigma_y0") != std::string::npos;
            ck.material.trainable.hp = t.find("hp") != std::string::npos;
        } else if (kind == "network") {
            std::string name;
            ss >> name;
            NetworkParams p;
            std::istringstream ws(field(ss, "widths"));
            std::string tok;
            while (std::getline(ws, tok, ',')) p.spec.widths.push_back(std::stoul(tok));
            p.spec.activation = activation_from_string(field(ss, "activation"));
            p.spec.seed = std::stoull(field(ss, "seed"));
            const std::size_t count = std::stoul(field(ss, "count"));
            if (count != parameter_count(p.spec)) throw ParseError(file, lineno, "parameter count does not match widths");
            p.values.resize(count);
            ck.names.push_back(name);
            ck.networks.push_back(std::move(p));
        } else {
            throw ParseError(file, lineno, "unknown header record '" + kind + "'");
        }
    }
    for (auto& n : ck.networks)
        for (double& v : n.values) v = read_le(in);
    if (!in) throw ParseError(file, lineno, "truncated parameter payload");
    return ck;
}

} // namespace nlpinn
