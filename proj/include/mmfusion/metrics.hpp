#pragma once

#include <cstddef>
#include <span>

namespace mmfusion {

/// Confusion counts with fake (label 1) as the positive class.
struct ConfusionCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;

    [[nodiscard]] std::size_t total() const noexcept { return tp + fp + tn + fn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Every ratio with a zero denominator is reported as 0.
struct MetricsReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    ConfusionCounts counts;

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

MetricsReport metrics_from_counts(const ConfusionCounts& counts) noexcept;

/// Throws InputError on a length mismatch or a value outside {0,1}.
MetricsReport compute_metrics(std::span<const int> labels, std::span<const int> predictions);

}  // namespace mmfusion
