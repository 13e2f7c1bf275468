#pragma once

// Sectioned key-value run configuration:
//
//   # comment
//   [data]
//   n_samples = 4000
//   [model]
//   variant = full
//
// Every key has a default; unknown sections or keys are rejected.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mmfusion/error.hpp"
#include "mmfusion/feature_data.hpp"
#include "mmfusion/model.hpp"
#include "mmfusion/training.hpp"

namespace mmfusion {

/// Invalid configuration text or value; the message names the offending key.
class ConfigError : public InputError {
public:
    using InputError::InputError;
};

struct DataSection {
    std::string path;  ///< feature file; empty means generate from `synthetic`
    SyntheticSpec synthetic;
    SplitFractions split;
    std::uint64_t split_seed = 1;
};

struct ModelSection {
    std::uint32_t common_dim = 8;
    std::uint32_t gate_hidden = 16;
    std::uint32_t cls_hidden = 32;
    ModelVariant variant = ModelVariant::FullCadfm;
    double init_scale = 1.0;
    std::uint64_t init_seed = 1;
};

struct EvalSection {
    double threshold = 0.2;
    std::vector<double> sigmas = {0.5, 1.0};
    std::uint64_t noise_seed = 1;
    std::string out_dir = "out";
};

struct RunConfig {
    DataSection data;
    ModelSection model;
    TrainConfig train;
    EvalSection eval;

    /// Applies one `section.key = value` assignment.
    void set(std::string_view section, std::string_view key, std::string_view value);
    /// Applies `section.key=value`.
    void set_dotted(std::string_view assignment);
    /// Every seed in the run (data, split, init, train, noise) set to `seed`.
    void set_all_seeds(std::uint64_t seed);
    /// Learning rate, batch size and epoch count of the published protocol.
    void apply_paper_protocol();

    void validate() const;

    /// HyperConfig for a dataset with the given feature widths.
    [[nodiscard]] HyperConfig hyper_config(const FeatureDims& dims) const;
    [[nodiscard]] HyperConfig hyper_config(const FeatureDims& dims, ModelVariant variant) const;

    /// Canonical text with every key; parses back to an equal config.
    [[nodiscard]] std::string to_text() const;
};

RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);

}  // namespace mmfusion
