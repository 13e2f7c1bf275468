#include "mmfusion/metrics.hpp"

#include <string>

#include "mmfusion/error.hpp"

namespace mmfusion {

namespace {

double ratio(std::size_t num, std::size_t den) noexcept {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport metrics_from_counts(const ConfusionCounts& c) noexcept {
    MetricsReport r;
    r.counts = c;
    r.accuracy = ratio(c.tp + c.tn, c.total());
    r.precision = ratio(c.tp, c.tp + c.fp);
    r.recall = ratio(c.tp, c.tp + c.fn);
    const double denom = r.precision + r.recall;
    r.f1 = denom > 0.0 ? 2.0 * r.precision * r.recall / denom : 0.0;
    return r;
}

MetricsReport compute_metrics(std::span<const int> labels, std::span<const int> predictions) {
    if (labels.size() != predictions.size()) {
        throw InputError("compute_metrics: " + std::to_string(labels.size()) + " labels vs " +
                         std::to_string(predictions.size()) + " predictions");
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        const int p = predictions[i];
        if ((y != 0 && y != 1) || (p != 0 && p != 1)) {
            throw InputError("compute_metrics: values must be 0 or 1");
        }
        if (p == 1) {
            (y == 1 ? c.tp : c.fp) += 1;
        } else {
            (y == 0 ? c.tn : c.fn) += 1;
        }
    }
    return metrics_from_counts(c);
}

}  // namespace mmfusion
