// nlpinn: command-line driver for data generation, operator checks,
// training, identification, evaluation and field export.
//
// Exit codes: 0 success, 1 validation error (bad config, bad input file,
// bad arguments), 2 numerical failure (singular operators, poisoned
// gradients, non-finite loss).

#include "nlpinn/config.hpp"
#include "nlpinn/dataset.hpp"
#include "nlpinn/error.hpp"
#include "nlpinn/mesh.hpp"
#include "nlpinn/network.hpp"
#include "nlpinn/pddo.hpp"
#include "nlpinn/residuals.hpp"
#include "nlpinn/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

namespace fs = std::filesystem;
using namespace nlpinn;

namespace {

struct CommonArgs {
    std::string config;
    std::vector<std::string> overrides;
};

int verbosity() {
    const char* v = std::getenv("NLPINN_VERBOSE");
    return v ? std::atoi(v) : 0;
}

struct LoadedData {
    PointCloud cloud;
    FieldDataset data;
};

LoadedData load_data(const RunConfig& cfg) {
    LoadedData ld;
    if (cfg.data.source == DataSource::file) {
        ld.data = load_fields(cfg.data.path);
        ld.cloud = align_to_grid(ld.data);
    } else {
        ld.cloud = build_grid(cfg.grid.nx, cfg.grid.ny, cfg.grid.width, cfg.grid.height, cfg.grid.layout);
        if (cfg.data.generator == GeneratorKind::elastic)
            ld.data = generate_elastic_manufactured(cfg.data.elastic, cfg.material, ld.cloud);
        else
            ld.data = generate_plastic_manufactured(cfg.data.plastic, cfg.material, ld.cloud);
    }
    if (std::any_of(cfg.data.samples.begin(), cfg.data.samples.end(), [](const auto& s) { return s.has_value(); }))
        sample_index_sets(ld.data, cfg.data.samples, cfg.data.sample_seed);
    return ld;
}

bool equilibrium_for(const RunConfig& cfg, const FieldDataset& ds) {
    switch (cfg.loss.equilibrium_terms) {
    case EquilibriumSetting::on: return true;
    case EquilibriumSetting::off: return false;
    case EquilibriumSetting::from_dataset: break;
    }
    return ds.equilibrium_terms;
}

std::optional<PdOperatorSet> operators_for(const RunConfig& cfg, const PointCloud& cloud) {
    if (cfg.model.architecture == ArchitectureKind::local) return std::nullopt;
    return build_operator_set(cloud, build_families(cloud, cfg.pddo));
}

void prepare_outputs(const RunConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    write_resolved_config(cfg, cfg.output_dir / "resolved_config.jsonc");
}

void print_breakdown(const LossBreakdown& lb) {
    std::printf("equilibrium_terms=%s\n", lb.equilibrium_terms ? "on" : "off");
    for (std::size_t i = 0; i < lb.names.size(); ++i)
        std::printf("  %-14s %.6e  (weight %g)\n", lb.names[i].c_str(), lb.values[i], lb.weights[i]);
    std::printf("  %-14s %.6e\n", "total", lb.total);
    if (lb.skipped_flow) std::printf("  skipped flow-rule points: %zu\n", lb.skipped_flow);
    for (const auto& n : lb.notices) std::fprintf(stderr, "notice: %s\n", n.c_str());
}

std::vector<std::size_t> all_points(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

// ------------------------------------------------------------ subcommands

int cmd_gen_data(const CommonArgs& a, const std::string& out_path) {
    const RunConfig cfg = resolve_config(a.config, a.overrides);
    prepare_outputs(cfg);
    const auto ld = load_data(cfg);
    const fs::path out = out_path.empty() ? cfg.output_dir / "fields.csv" : fs::path(out_path);
    save_fields(ld.data, out);
    std::printf("wrote %zu points to %s\n", ld.data.size(), out.string().c_str());
    if (ld.data.plastic_mode) std::printf("plastic fraction %.4f\n", ld.data.plastic_fraction);
    for (const auto& n : ld.data.notices) std::fprintf(stderr, "warning: %s\n", n.c_str());
    return 0;
}

int cmd_check_pddo(const CommonArgs& a, const std::string& table) {
    const RunConfig cfg = resolve_config(a.config, a.overrides);
    const auto cloud = build_grid(cfg.grid.nx, cfg.grid.ny, cfg.grid.width, cfg.grid.height, cfg.grid.layout);
    const auto ops = build_operator_set(cloud, build_families(cloud, cfg.pddo));

    double ortho = 0.0;
    for (std::size_t p = 0; p < ops.size(); ++p)
        ortho = std::max(ortho, orthogonality_residual(ops.families[p], ops.entries[p]));

    // exactness on f = 1 + 2x - 3y + 4x^2 - 5y^2 + 6xy
    std::vector<double> f(cloud.size());
    for (std::size_t p = 0; p < cloud.size(); ++p) {
        const double x = cloud.points[p][0], y = cloud.points[p][1];
        f[p] = 1 + 2 * x - 3 * y + 4 * x * x - 5 * y * y + 6 * x * y;
    }
    double exact_err = 0.0;
    for (DerivativeTag t : all_tags) {
        const auto out = apply_operator(ops, f, t);
        for (std::size_t p = 0; p < cloud.size(); ++p) {
            const double x = cloud.points[p][0], y = cloud.points[p][1];
            double ref = 0.0;
            switch (t) {
            case DerivativeTag::f00: ref = f[p]; break;
            case DerivativeTag::d10: ref = 2 + 8 * x + 6 * y; break;
            case DerivativeTag::d01: ref = -3 - 10 * y + 6 * x; break;
            case DerivativeTag::d20: ref = 8; break;
            case DerivativeTag::d02: ref = -10; break;
            case DerivativeTag::d11: ref = 6; break;
            }
            exact_err = std::max(exact_err, std::abs(out[p] - ref) / std::max(1.0, std::abs(ref)));
        }
    }
    std::printf("points %zu, stencil %zux%zu, delta %.6g dx\n", cloud.size(), 2 * cfg.pddo.stencil_halfwidth + 1,
                2 * cfg.pddo.stencil_halfwidth + 1, cfg.pddo.delta_factor);
    std::printf("max orthogonality residual %.3e\n", ortho);
    std::printf("max quadratic exactness error %.3e\n", exact_err);
    if (!table.empty()) {
        std::ofstream out(table);
        if (!out) throw std::runtime_error("cannot open for writing: " + table);
        write_operator_table(ops, out);
        std::printf("operator table written to %s\n", table.c_str());
    }
    if (ortho > 1e-9 || exact_err > 1e-8) {
        std::fprintf(stderr, "error: operator check failed tolerance\n");
        return 2;
    }
    return 0;
}

int cmd_train(const CommonArgs& a, RunMode mode) {
    std::vector<std::string> ov = a.overrides;
    ov.push_back(std::string("train.mode=") + (mode == RunMode::solve ? "solve" : "identify"));
    const RunConfig cfg = resolve_config(a.config, ov);
    if (mode == RunMode::identify && !cfg.material.trainable.any())
        throw ConfigError("identify needs at least one entry in material.trainable");
    prepare_outputs(cfg);
    const auto ld = load_data(cfg);
    for (const auto& n : ld.data.notices) std::fprintf(stderr, "warning: %s\n", n.c_str());
    const auto ops = operators_for(cfg, ld.cloud);
    Model model = make_model(cfg.model, cfg.initial_material(), ld.data.plastic_mode);
    const Problem pb = make_problem(ld.data, ld.cloud, ops ? &*ops : nullptr, model,
                                    equilibrium_for(cfg, ld.data), cfg.loss.weights);

    const int verbose = verbosity();
    const auto hist = train(model, pb, cfg.train, [&](const EpochRecord& r) {
        if (verbose > 0 && (r.epoch % 100 == 0 || r.epoch + 1 == cfg.train.epochs))
            std::fprintf(stderr, "epoch %zu lr %.3e loss %.6e\n", r.epoch, r.lr, r.total);
    });
    for (const auto& n : hist.notices) std::fprintf(stderr, "notice: %s\n", n.c_str());
    write_history(hist, cfg.output_dir / "history.csv");
    write_checkpoint(to_checkpoint(model), cfg.output_dir / "checkpoint.bin");
    {
        std::ofstream rep(cfg.output_dir / "parameters.csv");
        const std::optional<MaterialParams> truth =
            cfg.data.source == DataSource::generate ? std::optional<MaterialParams>(cfg.material) : std::nullopt;
        write_parameter_report(model.current_material(), truth, rep);
        write_parameter_report(model.current_material(), truth, std::cout);
    }
    if (!hist.epochs.empty())
        std::printf("epochs %zu, final loss %.6e, L/L0 %.6e%s\n", hist.epochs.size(), hist.epochs.back().total,
                    hist.epochs.back().total / hist.epochs.front().total, hist.early_stopped ? " (early stop)" : "");
    std::printf("outputs in %s\n", cfg.output_dir.string().c_str());
    if (hist.aborted) {
        std::fprintf(stderr, "error: training aborted: %s (last good parameters saved)\n", hist.abort_reason.c_str());
        return 2;
    }
    return 0;
}

struct Restored {
    RunConfig cfg;
    LoadedData ld;
    std::optional<PdOperatorSet> ops;
    Model model;
    Problem pb;
};

Restored restore(const CommonArgs& a, const std::string& checkpoint) {
    Restored r{resolve_config(a.config, a.overrides), {}, {}, {}, {}};
    r.ld = load_data(r.cfg);
    r.ops = operators_for(r.cfg, r.ld.cloud);
    const auto ck = read_checkpoint(checkpoint);
    r.model = model_from_checkpoint(r.cfg.model, ck, r.ld.data.plastic_mode);
    r.pb = make_problem(r.ld.data, r.ld.cloud, r.ops ? &*r.ops : nullptr, r.model, equilibrium_for(r.cfg, r.ld.data),
                        r.cfg.loss.weights);
    return r;
}

int cmd_evaluate(const CommonArgs& a, const std::string& checkpoint) {
    Restored r = restore(a, checkpoint);
    const auto pts = all_points(r.ld.data.size());
    print_breakdown(loss_and_gradient(r.model, r.pb, pts, nullptr, r.cfg.threads));
    const auto pred = predict_fields(r.model, r.pb);
    std::printf("field errors (points with reference values)\n");
    std::printf("  %-4s %14s %14s %14s\n", "ch", "rms_error", "max_abs_error", "relative_rms");
    for (Channel c : all_channels) {
        double se = 0.0, sr = 0.0, mx = 0.0;
        std::size_t n = 0;
        for (std::size_t p = 0; p < pred.size(); ++p) {
            if (!r.ld.data.has_value(c, p)) continue;
            const double ref = r.ld.data.channel(c)[p], d = pred.channel(c)[p] - ref;
            se += d * d;
            sr += ref * ref;
            mx = std::max(mx, std::abs(d));
            ++n;
        }
        if (n == 0) continue;
        const double rms = std::sqrt(se / n);
        const double rel = sr > 0.0 ? std::sqrt(se / sr) : 0.0;
        std::printf("  %-4s %14.6e %14.6e %14.6e\n", to_string(c).c_str(), rms, mx, rel);
    }
    write_parameter_report(r.model.current_material(), std::nullopt, std::cout);
    return 0;
}

int cmd_export_fields(const CommonArgs& a, const std::string& checkpoint) {
    Restored r = restore(a, checkpoint);
    prepare_outputs(r.cfg);
    const auto pred = predict_fields(r.model, r.pb);
    const fs::path dir = r.cfg.output_dir / "fields";
    fs::create_directories(dir);
    save_fields(pred, dir / "predicted.csv");
    for (Channel c : all_channels) {
        const std::string name = to_string(c);
        std::ofstream out(dir / (name + ".csv"));
        if (!out) throw std::runtime_error("cannot write " + (dir / (name + ".csv")).string());
        out << "# nlpinn-channel v1 channel=" << name << "\n";
        out << "x,y,predicted,reference,error\n";
        char buf[160];
        for (std::size_t p = 0; p < pred.size(); ++p) {
            const double v = pred.channel(c)[p];
            const bool has_ref = r.ld.data.has_value(c, p);
            const double ref = has_ref ? r.ld.data.channel(c)[p] : 0.0;
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,", pred.points[p][0], pred.points[p][1], v);
            out << buf;
            if (has_ref) {
                std::snprintf(buf, sizeof buf, "%.17g,%.17g", ref, v - ref);
                out << buf;
            } else {
                out << ',';
            }
            out << '\n';
        }
        write_heatmap(pred.channel(c), r.ld.cloud.nx, r.ld.cloud.ny, dir / (name + ".pgm"));
    }
    std::printf("wrote %zu channel tables and heatmaps to %s\n", channel_count, dir.string().c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"nlpinn: nonlocal physics-informed networks with the peridynamic differential operator"};
    app.require_subcommand(1);

    CommonArgs common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", common.config, "run configuration (JSON with comments)");
        sub->add_option("-s,--set", common.overrides, "override, e.g. train.batch_size=64 (repeatable)");
    };

    std::string out_path, table, checkpoint;
    auto* gen = app.add_subcommand("gen-data", "generate a manufactured field dataset");
    add_common(gen);
    gen->add_option("-o,--output", out_path, "output field file (default <outputs.directory>/fields.csv)");

    auto* chk = app.add_subcommand("check-pddo", "build operators and report orthogonality and exactness residuals");
    add_common(chk);
    chk->add_option("--table", table, "also write the operator table to this file");

    auto* trn = app.add_subcommand("train", "solve mode: material parameters held constant");
    add_common(trn);
    auto* idf = app.add_subcommand("identify", "identify mode: trainable material parameters updated");
    add_common(idf);

    auto* ev = app.add_subcommand("evaluate", "loss breakdown and field errors of a checkpoint");
    add_common(ev);
    ev->add_option("--checkpoint", checkpoint, "checkpoint written by train/identify")->required();

    auto* ex = app.add_subcommand("export-fields", "per-channel tables and PGM heatmaps of a checkpoint");
    add_common(ex);
    ex->add_option("--checkpoint", checkpoint, "checkpoint written by train/identify")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(common, out_path);
        if (chk->parsed()) return cmd_check_pddo(common, table);
        if (trn->parsed()) return cmd_train(common, RunMode::solve);
        if (idf->parsed()) return cmd_train(common, RunMode::identify);
        if (ev->parsed()) return cmd_evaluate(common, checkpoint);
        if (ex->parsed()) return cmd_export_fields(common, checkpoint);
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
