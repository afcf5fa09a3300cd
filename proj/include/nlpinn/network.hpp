#pragma once

//! \file network.hpp
//! \brief Fully connected networks: plain evaluation with exact input
//! Jacobians, and evaluation on a Tape with forward-propagated input
//! tangents so that losses built from input derivatives can be
//! differentiated with respect to the parameters in one reverse sweep.

#include "nlpinn/constitutive.hpp"
#include "nlpinn/tape.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace nlpinn {

enum class Activation { tanh, relu, linear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

//! Layer widths (input, hidden..., output). Hidden layers apply the
//! activation; the output layer is affine.
struct NetworkSpec {
    std::vector<std::size_t> widths;
    Activation activation = Activation::tanh;
    std::uint64_t seed = 0;

    std::size_t inputs() const { return widths.front(); }
    std::size_t outputs() const { return widths.back(); }
    std::size_t layers() const { return widths.size() - 1; }
};

void validate(const NetworkSpec& spec);

//! Flat parameter storage: for each layer, W (out x in, row-major) then b.
struct NetworkParams {
    NetworkSpec spec;
    std::vector<double> values;

    std::size_t weight_offset(std::size_t layer) const;
    std::size_t bias_offset(std::size_t layer) const;
    std::size_t size() const { return values.size(); }
    std::size_t block_count() const { return spec.layers(); }

    std::span<const double> weights(std::size_t layer) const;
    std::span<const double> biases(std::size_t layer) const;
};

std::size_t parameter_count(const NetworkSpec& spec);

//! Glorot-uniform weights, zero biases, deterministic in spec.seed.
NetworkParams init_params(const NetworkSpec& spec);

struct EvalRecord {
    std::vector<double> outputs;
    //! d outputs[k] / d inputs[i], row-major outputs x inputs
    std::vector<double> jacobian;
    //! post-activation values of every hidden layer
    std::vector<std::vector<double>> hidden;

    double derivative(std::size_t output, std::size_t input) const {
        return jacobian[output * inputs + input];
    }
    std::size_t inputs = 0;
};

//! Throws InvalidArgument on wrong input length or non-finite inputs.
EvalRecord forward(const NetworkParams& params, std::span<const double> inputs);

//! Exact d(output)/d(input) (outputs x inputs, row-major). ReLU uses
//! derivative 0 at exactly 0.
std::vector<double> input_derivatives(const NetworkParams& params, std::span<const double> inputs);

//! Network outputs and directional input derivatives as tape nodes.
struct TapeEval {
    std::vector<ad::Var> outputs;
    //! tangents[d][k]: derivative of output k along input direction d
    std::vector<std::vector<ad::Var>> tangents;
};

//! Evaluate on `tape` whose leaves first_param .. first_param+size()-1 hold
//! the parameters (in flat order). `directions` are constant input-space
//! tangent vectors; their images are propagated exactly.
TapeEval forward_on_tape(ad::Tape& tape, const NetworkParams& params, std::uint32_t first_param,
                         std::span<const double> inputs,
                         std::span<const std::vector<double>> directions = {});

//! Named networks plus material state, written as a versioned binary.
struct Checkpoint {
    std::vector<std::string> names;
    std::vector<NetworkParams> networks;
    MaterialParams material;
};

void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

} // namespace nlpinn
