#pragma once

//! \file trainer.hpp
//! \brief Adam training loop with geometric learning-rate decay, batching,
//! early stopping, and the solve / identify run modes.

#include "nlpinn/residuals.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nlpinn {

enum class RunMode { solve, identify };
std::string to_string(RunMode m);
RunMode run_mode_from_string(const std::string& s);

struct TrainConfig {
    std::size_t epochs = 2000;
    std::size_t batch_size = 64;
    double lr_start = 5e-4;
    double lr_end = 1e-6;
    bool shuffle = true;
    std::uint64_t seed = 1;
    //! epochs without strict improvement of the total loss before stopping; 0 disables
    std::size_t patience = 0;
    RunMode mode = RunMode::solve;
    ArchitectureKind architecture = ArchitectureKind::local;
    //! learning-rate multiplier for the material parameters
    double material_lr_scale = 1.0;
    std::size_t threads = 1;
};

void validate(const TrainConfig& cfg);

//! lr_start * (lr_end / lr_start)^(epoch / (epochs - 1)); lr_start when epochs = 1.
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

//! One bias-corrected Adam update. `lr_scale`, when non-empty, multiplies
//! the learning rate per parameter (0 freezes a parameter without touching
//! its moments). Throws PoisonedGradient on a non-finite gradient, before
//! anything is modified.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> gradient, double lr,
               std::span<const double> lr_scale = {});

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double total = 0.0;
    std::vector<double> terms;
    MaterialParams material;
};

struct TrainHistory {
    std::vector<std::string> term_names;
    std::vector<EpochRecord> epochs;
    bool early_stopped = false;
    bool aborted = false;
    std::string abort_reason;
    std::vector<std::string> notices;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

//! Train `model` in place. On a non-finite loss or gradient the model is
//! restored to its state after the last completed epoch and the history is
//! returned with `aborted` set.
TrainHistory train(Model& model, const Problem& problem, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

//! Delimited history log: epoch, lr, every term, total, material values.
void write_history(const TrainHistory& h, std::ostream& out);
void write_history(const TrainHistory& h, const std::filesystem::path& path);

//! Structured parameter report: name, value, units, generating value and
//! relative error when known, and whether the value was identified.
void write_parameter_report(const MaterialParams& identified, const std::optional<MaterialParams>& generating,
                            std::ostream& out);

} // namespace nlpinn
