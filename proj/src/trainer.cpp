#include "nlpinn/trainer.hpp"

#include "nlpinn/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace nlpinn {

std::string to_string(RunMode m) { return m == RunMode::solve ? "solve" : "identify"; }

RunMode run_mode_from_string(const std::string& s) {
    if (s == "solve") return RunMode::solve;
    if (s == "identify") return RunMode::identify;
    throw InvalidArgument("unknown run mode '" + s + "' (expected solve or identify)");
}

void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw InvalidArgument("train.epochs must be at least 1");
    if (cfg.batch_size < 1) throw InvalidArgument("train.batch_size must be at least 1");
    if (!(cfg.lr_end > 0.0)) throw InvalidArgument("train.lr_end must be positive");
    if (!(cfg.lr_start >= cfg.lr_end)) throw InvalidArgument("train.lr_start must be >= train.lr_end");
    if (!(cfg.material_lr_scale >= 0.0)) throw InvalidArgument("train.material_lr_scale must be >= 0");
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
    if (cfg.epochs <= 1) return cfg.lr_start;
    if (epoch == 0) return cfg.lr_start;
    if (epoch >= cfg.epochs - 1) return cfg.lr_end;
    const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
    return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, t);
}

void adam_step(AdamState& st, std::span<double> params, std::span<const double> g, double lr,
               std::span<const double> lr_scale) {
    if (g.size() != params.size() || st.m.size() != params.size() ||
        (!lr_scale.empty() && lr_scale.size() != params.size()))
        throw InvalidArgument("adam_step: gradient, parameter and state sizes differ");
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!std::isfinite(g[i]))
            throw PoisonedGradient("gradient", "non-finite gradient at parameter " + std::to_string(i));
    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double scale = lr_scale.empty() ? 1.0 : lr_scale[i];
        if (scale == 0.0) continue;
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g[i] * g[i];
        const double mhat = st.m[i] / c1;
        const double vhat = st.v[i] / c2;
        params[i] -= lr * scale * mhat / (std::sqrt(vhat) + st.eps);
    }
}

TrainHistory train(Model& model, const Problem& problem, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    validate(cfg);
    if (!problem.data || problem.data->size() == 0) throw InvalidArgument("train: dataset is empty");
    bool any_data = false;
    for (const auto& obs : problem.data->observed) any_data = any_data || !obs.empty();
    if (!any_data) throw InvalidArgument("train: no data channel has a non-empty observation set");

    const std::size_t n = problem.data->size();
    const std::size_t P = model.parameter_count();
    const std::size_t net_count = model.network_parameter_count();

    // per-parameter learning-rate multipliers: fixed material slots never move
    std::vector<double> lr_scale(P, 1.0);
    const auto& tr = model.material.trainable;
    const bool slot_trainable[material_slot_count] = {tr.mu, tr.lambda, tr.sigma_y0, tr.hp};
    for (std::size_t s = 0; s < material_slot_count; ++s)
        lr_scale[net_count + s] =
            (cfg.mode == RunMode::identify && slot_trainable[s]) ? cfg.material_lr_scale : 0.0;

    TrainHistory h;
    h.term_names = loss_term_names(problem.plastic_mode, problem.equilibrium_terms);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed);
    AdamState adam(P);
    std::vector<double> params = model.flat();
    std::vector<double> last_good = params;
    std::vector<double> grad;
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.terms.assign(h.term_names.size(), 0.0);
        try {
            for (std::size_t b = 0; b < n; b += cfg.batch_size) {
                const std::size_t e = std::min(n, b + cfg.batch_size);
                const std::span<const std::size_t> batch(order.data() + b, e - b);
                const auto loss = loss_and_gradient(model, problem, batch, &grad, cfg.threads);
                if (!std::isfinite(loss.total))
                    throw PoisonedGradient("reduction", "non-finite loss in epoch " + std::to_string(epoch));
                const double frac = static_cast<double>(e - b) / static_cast<double>(n);
                for (std::size_t t = 0; t < rec.terms.size(); ++t) rec.terms[t] += frac * loss.values[t];
                rec.total += frac * loss.total;
                if (epoch == 0 && b == 0)
                    for (const auto& note : loss.notices) h.notices.push_back(note);
                adam_step(adam, params, grad, lr, lr_scale);
                model.set_flat(params);
            }
        } catch (const NumericalError& err) {
            model.set_flat(last_good);
            h.aborted = true;
            h.abort_reason = err.what();
            return h;
        }
        last_good = params;
        rec.material = model.current_material();
        h.epochs.push_back(rec);
        if (on_epoch) on_epoch(h.epochs.back());

        if (rec.total < best) {
            best = rec.total;
            stale = 0;
        } else if (++stale >= cfg.patience && cfg.patience > 0) {
            h.early_stopped = true;
            break;
        }
    }
    return h;
}

namespace {

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void write_history(const TrainHistory& h, std::ostream& out) {
    out << "# nlpinn-history v1\n";
    if (h.aborted) out << "# aborted: " << h.abort_reason << '\n';
    if (h.early_stopped) out << "# early stop after " << h.epochs.size() << " epochs\n";
    out << "epoch,lr";
    for (const auto& n : h.term_names) out << ',' << n;
    out << ",total,lambda,mu,sigma_y0,hp\n";
    for (const auto& r : h.epochs) {
        out << r.epoch << ',' << g17(r.lr);
        for (double v : r.terms) out << ',' << g17(v);
        out << ',' << g17(r.total) << ',' << g17(r.material.lambda) << ',' << g17(r.material.mu) << ','
            << g17(r.material.sigma_y0) << ',' << g17(r.material.hp) << '\n';
    }
}

void write_history(const TrainHistory& h, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    write_history(h, out);
}

void write_parameter_report(const MaterialParams& m, const std::optional<MaterialParams>& truth,
                            std::ostream& out) {
    out << "# nlpinn-parameters v1\n";
    out << "name,value,units,status,generating,relative_error\n";
    struct Row {
        const char* name;
        double value;
        bool trainable;
        double truth;
    };
    const Row rows[] = {
        {"lambda", m.lambda, m.trainable.lambda, truth ? truth->lambda : 0.0},
        {"mu", m.mu, m.trainable.mu, truth ? truth->mu : 0.0},
        {"sigma_y0", m.sigma_y0, m.trainable.sigma_y0, truth ? truth->sigma_y0 : 0.0},
        {"hp", m.hp, m.trainable.hp, truth ? truth->hp : 0.0},
    };
    for (const auto& r : rows) {
        out << r.name << ',' << g17(r.value) << ",Pa," << (r.trainable ? "identified" : "fixed") << ',';
        if (truth) {
            out << g17(r.truth) << ',';
            if (r.truth != 0.0)
                out << g17(std::abs(r.value - r.truth) / std::abs(r.truth));
            else
                out << (r.value == 0.0 ? "0" : "");
        } else {
            out << ',';
        }
        out << '\n';
    }
}

} // namespace nlpinn
