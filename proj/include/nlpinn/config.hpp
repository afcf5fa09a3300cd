#pragma once

//! \file config.hpp
//! \brief Run configuration: JSON with comments, defaults, validation and
//! `section.key=value` overrides.

#include "nlpinn/dataset.hpp"
#include "nlpinn/mesh.hpp"
#include "nlpinn/residuals.hpp"
#include "nlpinn/trainer.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nlpinn {

struct GridConfig {
    std::size_t nx = 21;
    std::size_t ny = 21;
    double width = 1.0;
    double height = 1.0;
    GridLayout layout = GridLayout::nodes;
};

enum class DataSource { generate, file };
enum class GeneratorKind { elastic, plastic };

struct DataConfig {
    DataSource source = DataSource::generate;
    GeneratorKind generator = GeneratorKind::elastic;
    ElasticProfile elastic;
    PlasticProfile plastic;
    std::filesystem::path path;
    //! per-channel observation counts; unset = every point with a value
    std::array<std::optional<std::size_t>, channel_count> samples;
    std::uint64_t sample_seed = 7;
};

enum class EquilibriumSetting { from_dataset, on, off };

struct LossConfig {
    std::map<std::string, double> weights;
    EquilibriumSetting equilibrium_terms = EquilibriumSetting::from_dataset;
};

struct RunConfig {
    GridConfig grid;
    FamilyOptions pddo;
    //! generating (or fixed) material values, SI units, with trainable flags
    MaterialParams material;
    //! starting values for trainable parameters, SI units
    MaterialParams guess;
    ModelOptions model;
    LossConfig loss;
    TrainConfig train;
    DataConfig data;
    std::filesystem::path output_dir = "out";
    //! fan-out cap; defaults to the machine's hardware concurrency
    std::size_t threads = 1;
    //! fully resolved document, written next to every run's outputs
    nlohmann::json resolved;

    //! Material the model starts from: fixed values plus guesses for the
    //! trainable ones in identify mode.
    MaterialParams initial_material() const;
};

//! The default document (every key with its default value).
nlohmann::json default_config_document();

//! Parse `text` (comments allowed), reject duplicate and unknown keys and
//! type mismatches, apply `key.path=value` overrides last. Throws ConfigError.
RunConfig resolve_config_text(const std::string& text, const std::vector<std::string>& overrides,
                              const std::string& source_name = "<config>");

//! As above; an empty path means defaults plus overrides.
RunConfig resolve_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& path);

} // namespace nlpinn
