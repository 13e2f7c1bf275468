#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmfusion/matrix.hpp"

namespace mmfusion {

/// Which modality the generator put class signal into. Values are the on-disk codes.
enum class Provenance : std::uint8_t {
    Unknown = 0,
    TextInformative = 1,
    ImageInformative = 2,
    BothInformative = 3,
};

const char* to_string(Provenance p) noexcept;

struct FeatureRecord {
    std::string id;
    int label = 0;  ///< 0 = real, 1 = fake
    Matrix text_features;   ///< L_T x D_T
    Matrix image_features;  ///< L_I x D_I
    Provenance provenance = Provenance::Unknown;

    friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

struct FeatureDims {
    std::uint32_t text_dim = 16;
    std::uint32_t image_dim = 12;
    std::uint32_t text_len = 1;
    std::uint32_t image_len = 1;

    friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

struct Dataset {
    FeatureDims dims;
    std::vector<FeatureRecord> records;

    [[nodiscard]] std::size_t size() const noexcept { return records.size(); }
    [[nodiscard]] bool empty() const noexcept { return records.empty(); }
    [[nodiscard]] std::size_t count_label(int label) const noexcept;

    /// Throws InputError unless every record matches dims and has a valid label.
    void validate() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SyntheticSpec {
    std::size_t n_samples = 4000;
    FeatureDims dims{};
    double p_text_signal = 0.55;
    double p_image_signal = 0.45;
    double signal_strength = 1.0;
    double noise_std = 0.8;
    double conflict_rate = 0.1;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Number of leading feature dimensions that carry class signal: ceil(D/4).
std::size_t signal_dims(std::size_t feature_dim) noexcept;

/// Labeled synthetic dataset with controllable per-modality informativeness.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Writes the little-endian "MMFN" v1 feature file (temp file, then rename).
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);

/// Throws LoadError with a kind distinguishing each failure mode.
Dataset load_dataset(const std::filesystem::path& path);
Dataset decode_dataset(const std::vector<std::uint8_t>& bytes);

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct DatasetSplits {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Stratified seeded split: each label class is shuffled and cut by the
/// fractions, then each split is shuffled. A zero fraction yields an empty
/// split; a positive fraction that would round to an empty split is an error.
DatasetSplits split_dataset(const Dataset& dataset, const SplitFractions& fractions, std::uint64_t seed);

/// Seeded permutation of [0, n) chopped into batches; the final short batch is kept.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::uint64_t epoch_seed);

}  // namespace mmfusion
