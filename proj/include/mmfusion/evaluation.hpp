#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmfusion/feature_data.hpp"
#include "mmfusion/metrics.hpp"
#include "mmfusion/model.hpp"
#include "mmfusion/training.hpp"

namespace mmfusion {

// ---------------------------------------------------------------------------
// Gating statistics

inline constexpr double kDefaultDominanceThreshold = 0.2;

struct GateStatsReport {
    double mean_alpha_text = 0.0;
    double mean_alpha_image = 0.0;
    double std_alpha_text = 0.0;   ///< population std
    double std_alpha_image = 0.0;  ///< population std
    double pct_text_dominant = 0.0;
    double pct_image_dominant = 0.0;
    double pct_balanced = 0.0;
    std::size_t n_text_dominant = 0;
    std::size_t n_image_dominant = 0;
    std::size_t n_balanced = 0;
    double threshold = kDefaultDominanceThreshold;
};

/// (alpha_T, alpha_I) per record, in record order. Throws UsageError for a non-gated variant.
std::vector<std::pair<double, double>> collect_gates(const ModelParams& params, const HyperConfig& config,
                                                     const Dataset& data);

/// Text-dominant when a_T - a_I > threshold, image-dominant when a_I - a_T > threshold,
/// balanced otherwise.
GateStatsReport gate_stats_from_pairs(std::span<const std::pair<double, double>> alphas, double threshold);

GateStatsReport gate_stats(const Checkpoint& checkpoint, const Dataset& data,
                           double threshold = kDefaultDominanceThreshold);

struct ProvenanceGateMeans {
    Provenance provenance = Provenance::Unknown;
    std::size_t count = 0;
    double mean_alpha_text = 0.0;
    double mean_alpha_image = 0.0;
};

/// Mean gate values grouped by provenance tag, in tag-code order; empty groups omitted.
std::vector<ProvenanceGateMeans> gate_means_by_provenance(const Checkpoint& checkpoint, const Dataset& data);

// ---------------------------------------------------------------------------
// Modality perturbation

struct PerturbationScenario {
    enum class Kind : std::uint8_t { TextMissing, ImageMissing, TextNoise, ImageNoise };

    Kind kind = Kind::TextMissing;
    double sigma = 0.0;  ///< noise kinds only; must be > 0
    std::uint64_t noise_seed = 0;

    static PerturbationScenario text_missing() { return {Kind::TextMissing, 0.0, 0}; }
    static PerturbationScenario image_missing() { return {Kind::ImageMissing, 0.0, 0}; }
    static PerturbationScenario text_noise(double sigma, std::uint64_t seed) { return {Kind::TextNoise, sigma, seed}; }
    static PerturbationScenario image_noise(double sigma, std::uint64_t seed) {
        return {Kind::ImageNoise, sigma, seed};
    }

    [[nodiscard]] bool is_noise() const noexcept { return kind == Kind::TextNoise || kind == Kind::ImageNoise; }
    void validate() const;
};

std::string_view scenario_name(PerturbationScenario::Kind kind) noexcept;

/// Returns a perturbed copy: zeroed features for *Missing, i.i.d. N(0, sigma^2)
/// added to every entry for *Noise, drawn from noise_seed.
FeatureRecord apply_perturbation(const FeatureRecord& record, const PerturbationScenario& scenario);

/// Applies the scenario to every record; record i draws its noise from a
/// stream derived from (noise_seed, i).
Dataset perturb_dataset(const Dataset& data, const PerturbationScenario& scenario);

/// Missing-modality scenarios followed by text and image noise at each sigma.
std::vector<PerturbationScenario> default_scenarios(std::span<const double> sigmas, std::uint64_t noise_seed);

struct PerturbationRow {
    ModelVariant variant = ModelVariant::FullCadfm;
    std::string scenario;  ///< "unperturbed" or a scenario name
    std::optional<double> sigma;
    MetricsReport metrics;
};

struct PerturbationInputs {
    const Checkpoint* full = nullptr;
    const Checkpoint* text_only = nullptr;   ///< optional reference baseline
    const Checkpoint* image_only = nullptr;  ///< optional reference baseline
};

/// Rows: unperturbed full model, one per scenario, then each supplied
/// single-modal baseline unperturbed. With no scenarios only the first row is
/// produced. Throws InputError when the full checkpoint is missing or a
/// checkpoint has the wrong variant.
std::vector<PerturbationRow> run_perturbation_suite(const PerturbationInputs& inputs, const Dataset& test,
                                                    std::span<const PerturbationScenario> scenarios);

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
    ModelVariant variant = ModelVariant::FullCadfm;
    MetricsReport test;
    TrainResult training;
};

/// Trains every variant independently on identical splits and seeds; rows in
/// ablation-table order (text, image, concat, fixed, full).
std::vector<AblationRow> run_ablation(const DatasetSplits& splits, const HyperConfig& model_template,
                                      const TrainConfig& config);

// ---------------------------------------------------------------------------
// Line-delimited report records

/// One flat JSON object; reals use 17 significant digits.
class ReportLine {
public:
    ReportLine& add(std::string_view key, std::string_view value);
    ReportLine& add(std::string_view key, const char* value) { return add(key, std::string_view(value)); }
    ReportLine& add(std::string_view key, double value);
    ReportLine& add(std::string_view key, std::uint64_t value);
    ReportLine& add(std::string_view key, std::uint32_t value) { return add(key, std::uint64_t{value}); }
    ReportLine& add(std::string_view key, bool value);
    ReportLine& add_metrics(const MetricsReport& m, std::string_view prefix = "");

    [[nodiscard]] std::string str() const { return "{" + body_ + "}"; }

private:
    void key(std::string_view k);
    std::string body_;
};

std::string metrics_line(std::string_view variant, const MetricsReport& m);
std::string perturbation_line(const PerturbationRow& row);
std::string gate_stats_line(std::string_view variant, const GateStatsReport& g);
std::string history_line(std::string_view variant, const EpochRecord& e);

}  // namespace mmfusion
