#include "mmfusion/evaluation.hpp"

#include <cmath>

#include "mmfusion/error.hpp"
#include "random.hpp"

namespace mmfusion {

std::vector<std::pair<double, double>> collect_gates(const ModelParams& params, const HyperConfig& config,
                                                     const Dataset& data) {
    if (!uses_gate(config.variant)) {
        throw UsageError("variant has no gate: " + std::string(variant_name(config.variant)));
    }
    std::vector<std::pair<double, double>> out;
    out.reserve(data.size());
    for (const auto& rec : data.records) {
        ForwardTrace t = forward(params, config, rec);
        out.emplace_back(*t.alpha_text, *t.alpha_image);
    }
    return out;
}

GateStatsReport gate_stats_from_pairs(std::span<const std::pair<double, double>> alphas, double threshold) {
    GateStatsReport r;
    r.threshold = threshold;
    if (alphas.empty()) {
        return r;
    }
    const double n = static_cast<double>(alphas.size());
    // Moments of the offsets from the first pair, so identical gates give an exact zero spread.
    const auto [t0, i0] = alphas.front();
    double shift_t = 0.0;
    double shift_i = 0.0;
    for (const auto& [t, i] : alphas) {
        shift_t += t - t0;
        shift_i += i - i0;
        if (t - i > threshold) {
            ++r.n_text_dominant;
        } else if (i - t > threshold) {
            ++r.n_image_dominant;
        } else {
            ++r.n_balanced;
        }
    }
    shift_t /= n;
    shift_i /= n;
    r.mean_alpha_text = t0 + shift_t;
    r.mean_alpha_image = i0 + shift_i;
    double var_t = 0.0;
    double var_i = 0.0;
    for (const auto& [t, i] : alphas) {
        var_t += (t - t0 - shift_t) * (t - t0 - shift_t);
        var_i += (i - i0 - shift_i) * (i - i0 - shift_i);
    }
    r.std_alpha_text = std::sqrt(var_t / n);
    r.std_alpha_image = std::sqrt(var_i / n);
    r.pct_text_dominant = 100.0 * static_cast<double>(r.n_text_dominant) / n;
    r.pct_image_dominant = 100.0 * static_cast<double>(r.n_image_dominant) / n;
    // Derived from the other two so the three always add to 100.
    r.pct_balanced = 100.0 - r.pct_text_dominant - r.pct_image_dominant;
    return r;
}

GateStatsReport gate_stats(const Checkpoint& checkpoint, const Dataset& data, double threshold) {
    const auto alphas = collect_gates(checkpoint.params, checkpoint.model, data);
    return gate_stats_from_pairs(alphas, threshold);
}

std::vector<ProvenanceGateMeans> gate_means_by_provenance(const Checkpoint& checkpoint, const Dataset& data) {
    const auto alphas = collect_gates(checkpoint.params, checkpoint.model, data);
    ProvenanceGateMeans groups[4];
    for (std::size_t i = 0; i < 4; ++i) groups[i].provenance = static_cast<Provenance>(i);
    for (std::size_t k = 0; k < alphas.size(); ++k) {
        auto& g = groups[static_cast<std::size_t>(data.records[k].provenance)];
        ++g.count;
        g.mean_alpha_text += alphas[k].first;
        g.mean_alpha_image += alphas[k].second;
    }
    std::vector<ProvenanceGateMeans> out;
    for (auto& g : groups) {
        if (g.count == 0) continue;
        g.mean_alpha_text /= static_cast<double>(g.count);
        g.mean_alpha_image /= static_cast<double>(g.count);
        out.push_back(g);
    }
    return out;
}

void PerturbationScenario::validate() const {
    if (is_noise() && !(sigma > 0.0)) {
        throw InputError("noise scenario needs sigma > 0");
    }
}

std::string_view scenario_name(PerturbationScenario::Kind kind) noexcept {
    switch (kind) {
        case PerturbationScenario::Kind::TextMissing: return "text_missing";
        case PerturbationScenario::Kind::ImageMissing: return "image_missing";
        case PerturbationScenario::Kind::TextNoise: return "text_noise";
        case PerturbationScenario::Kind::ImageNoise: return "image_noise";
    }
    return "unknown";
}

FeatureRecord apply_perturbation(const FeatureRecord& record, const PerturbationScenario& scenario) {
    scenario.validate();
    using Kind = PerturbationScenario::Kind;
    FeatureRecord out = record;
    switch (scenario.kind) {
        case Kind::TextMissing:
            for (double& v : out.text_features.values()) v = 0.0;
            break;
        case Kind::ImageMissing:
            for (double& v : out.image_features.values()) v = 0.0;
            break;
        case Kind::TextNoise:
        case Kind::ImageNoise: {
            detail::Rng rng(scenario.noise_seed);
            Matrix& target = scenario.kind == Kind::TextNoise ? out.text_features : out.image_features;
            for (double& v : target.values()) v += scenario.sigma * rng.normal();
            break;
        }
    }
    return out;
}

Dataset perturb_dataset(const Dataset& data, const PerturbationScenario& scenario) {
    Dataset out;
    out.dims = data.dims;
    out.records.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        PerturbationScenario s = scenario;
        s.noise_seed = detail::mix_seed(scenario.noise_seed, i);
        out.records.push_back(apply_perturbation(data.records[i], s));
    }
    return out;
}

std::vector<PerturbationScenario> default_scenarios(std::span<const double> sigmas, std::uint64_t noise_seed) {
    std::vector<PerturbationScenario> out = {PerturbationScenario::text_missing(),
                                             PerturbationScenario::image_missing()};
    for (double s : sigmas) out.push_back(PerturbationScenario::text_noise(s, noise_seed));
    for (double s : sigmas) out.push_back(PerturbationScenario::image_noise(s, noise_seed));
    return out;
}

std::vector<PerturbationRow> run_perturbation_suite(const PerturbationInputs& inputs, const Dataset& test,
                                                    std::span<const PerturbationScenario> scenarios) {
    if (inputs.full == nullptr) {
        throw InputError("perturbation suite: missing full-model checkpoint");
    }
    auto require_variant = [](const Checkpoint* ck, ModelVariant want, const char* role) {
        if (ck != nullptr && ck->model.variant != want) {
            throw InputError(std::string("perturbation suite: ") + role + " checkpoint has variant '" +
                             std::string(variant_name(ck->model.variant)) + "'");
        }
    };
    require_variant(inputs.full, ModelVariant::FullCadfm, "full");
    require_variant(inputs.text_only, ModelVariant::TextOnly, "text-only");
    require_variant(inputs.image_only, ModelVariant::ImageOnly, "image-only");

    const Checkpoint& full = *inputs.full;
    std::vector<PerturbationRow> rows;
    rows.push_back({ModelVariant::FullCadfm, "unperturbed", std::nullopt,
                    evaluate_dataset(full.params, full.model, test)});
    if (scenarios.empty()) {
        return rows;
    }
    for (const auto& s : scenarios) {
        const Dataset perturbed = perturb_dataset(test, s);
        rows.push_back({ModelVariant::FullCadfm, std::string(scenario_name(s.kind)),
                        s.is_noise() ? std::optional<double>(s.sigma) : std::nullopt,
                        evaluate_dataset(full.params, full.model, perturbed)});
    }
    for (const Checkpoint* ck : {inputs.text_only, inputs.image_only}) {
        if (ck == nullptr) continue;
        rows.push_back({ck->model.variant, "unperturbed", std::nullopt, evaluate_dataset(ck->params, ck->model, test)});
    }
    return rows;
}

std::vector<AblationRow> run_ablation(const DatasetSplits& splits, const HyperConfig& model_template,
                                      const TrainConfig& config) {
    std::vector<AblationRow> rows;
    for (ModelVariant v : kAllVariants) {
        HyperConfig model = model_template;
        model.variant = v;
        AblationRow row;
        row.variant = v;
        row.training = train(splits.train, splits.val, model, config);
        row.test = evaluate_dataset(row.training.checkpoint.params, model, splits.test);
        rows.push_back(std::move(row));
    }
    return rows;
}

void ReportLine::key(std::string_view k) {
    if (!body_.empty()) body_ += ',';
    body_ += '"';
    body_ += k;
    body_ += "\":";
}

ReportLine& ReportLine::add(std::string_view k, std::string_view value) {
    key(k);
    body_ += '"';
    for (char c : value) {
        if (c == '"' || c == '\\') body_ += '\\';
        body_ += c;
    }
    body_ += '"';
    return *this;
}

ReportLine& ReportLine::add(std::string_view k, double value) {
    key(k);
    body_ += std::isfinite(value) ? format_real(value) : std::string("null");
    return *this;
}

ReportLine& ReportLine::add(std::string_view k, std::uint64_t value) {
    key(k);
    body_ += std::to_string(value);
    return *this;
}

ReportLine& ReportLine::add(std::string_view k, bool value) {
    key(k);
    body_ += value ? "true" : "false";
    return *this;
}

ReportLine& ReportLine::add_metrics(const MetricsReport& m, std::string_view prefix) {
    const std::string p(prefix);
    add(p + "accuracy", m.accuracy);
    add(p + "precision", m.precision);
    add(p + "recall", m.recall);
    add(p + "f1", m.f1);
    add(p + "tp", std::uint64_t{m.counts.tp});
    add(p + "fp", std::uint64_t{m.counts.fp});
    add(p + "tn", std::uint64_t{m.counts.tn});
    add(p + "fn", std::uint64_t{m.counts.fn});
    return *this;
}

std::string metrics_line(std::string_view variant, const MetricsReport& m) {
    return ReportLine().add("variant", variant).add_metrics(m).str();
}

std::string perturbation_line(const PerturbationRow& row) {
    ReportLine line;
    line.add("variant", variant_name(row.variant)).add("scenario", row.scenario);
    if (row.sigma) line.add("sigma", *row.sigma);
    return line.add_metrics(row.metrics).str();
}

std::string gate_stats_line(std::string_view variant, const GateStatsReport& g) {
    return ReportLine()
        .add("variant", variant)
        .add("mean_alpha_t", g.mean_alpha_text)
        .add("mean_alpha_i", g.mean_alpha_image)
        .add("std_alpha_t", g.std_alpha_text)
        .add("std_alpha_i", g.std_alpha_image)
        .add("pct_text_dominant", g.pct_text_dominant)
        .add("pct_image_dominant", g.pct_image_dominant)
        .add("pct_balanced", g.pct_balanced)
        .add("threshold", g.threshold)
        .str();
}

std::string history_line(std::string_view variant, const EpochRecord& e) {
    return ReportLine()
        .add("variant", variant)
        .add("epoch", e.epoch)
        .add("train_loss", e.train_loss)
        .add_metrics(e.val, "val_")
        .add("best_val_f1", e.best_val_f1)
        .add("improved", e.improved)
        .str();
}

}  // namespace mmfusion
