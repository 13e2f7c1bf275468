#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "mmfusion/feature_data.hpp"
#include "mmfusion/metrics.hpp"
#include "mmfusion/model.hpp"

namespace mmfusion {

struct TrainConfig {
    double learning_rate = 1e-3;
    std::uint32_t batch_size = 32;
    std::uint32_t max_epochs = 10;
    std::uint32_t patience = 3;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 1;

    /// lr 1e-5, batch 32, 10 epochs; everything else at defaults.
    static TrainConfig paper_protocol();

    void validate() const;
    [[nodiscard]] KeyValues to_kv() const;
    static TrainConfig from_kv(const KeyValues& kv);

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct OptimizerState {
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    std::uint64_t step_count = 0;

    /// Zero moments shaped like params.
    explicit OptimizerState(const ModelParams& params);
};

/// One AdamW update: decoupled decay theta *= (1 - lr*wd), then the
/// bias-corrected Adam step theta -= lr * m_hat / (sqrt(v_hat) + eps).
void adamw_step(ModelParams& params, std::span<const Matrix> grads, OptimizerState& state, const TrainConfig& config);

/// Mean cross-entropy over the batch, built on tape. Throws InputError on an empty batch.
Var batch_loss(Tape& tape, const BoundParams& params, const HyperConfig& config,
               std::span<const FeatureRecord* const> batch);

/// Value-only convenience over a contiguous record list.
double batch_loss_value(const ModelParams& params, const HyperConfig& config, std::span<const FeatureRecord> batch);

struct Checkpoint {
    HyperConfig model;
    TrainConfig train;
    ModelParams params;
    double best_val_f1 = 0.0;
    std::uint32_t epoch = 0;  ///< 1-based epoch that produced params; 0 = untrained

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

struct EpochRecord {
    std::uint32_t epoch = 0;
    double train_loss = 0.0;  ///< mean batch loss over the epoch, weighted by batch size
    MetricsReport val;
    double best_val_f1 = 0.0;
    bool improved = false;
};

struct TrainResult {
    Checkpoint checkpoint;
    double initial_train_loss = 0.0;  ///< mean loss over the train split before the first step
    std::vector<EpochRecord> history;
};

/// Predictions (argmax) for every record of the dataset.
std::vector<int> predict_all(const ModelParams& params, const HyperConfig& config, const Dataset& data);
MetricsReport evaluate_dataset(const ModelParams& params, const HyperConfig& config, const Dataset& data);

/// Epoch loop with early stopping on validation F1 (fake class positive).
/// Stops once `patience` consecutive epochs fail to beat the best F1 by more
/// than 1e-6; returns the best-F1 parameters.
TrainResult train(const Dataset& train_split, const Dataset& val_split, const HyperConfig& model,
                  const TrainConfig& config);

inline constexpr double kImprovementThreshold = 1e-6;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Little-endian "MMCK" v1 file, written via temp file + rename.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// As load_checkpoint, and additionally rejects a checkpoint whose variant or
/// dims differ from `expected` (LoadError VariantMismatch / DimInconsistent).
Checkpoint load_checkpoint(const std::filesystem::path& path, const HyperConfig& expected);

}  // namespace mmfusion
