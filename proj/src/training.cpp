#include "mmfusion/training.hpp"

#include <cmath>
#include <limits>

#include "binary_io.hpp"
#include "mmfusion/error.hpp"
#include "random.hpp"

namespace mmfusion {

TrainConfig TrainConfig::paper_protocol() {
    TrainConfig c;
    c.learning_rate = 1e-5;
    c.batch_size = 32;
    c.max_epochs = 10;
    return c;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InputError("learning_rate must be positive");
    if (batch_size == 0) throw InputError("batch_size must be at least 1");
    if (max_epochs == 0) throw InputError("max_epochs must be at least 1");
    if (!(weight_decay >= 0.0)) throw InputError("weight_decay must be non-negative");
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw InputError("beta1 must lie in (0,1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw InputError("beta2 must lie in (0,1)");
    if (!(epsilon > 0.0)) throw InputError("epsilon must be positive");
}

KeyValues TrainConfig::to_kv() const {
    return {
        {"learning_rate", format_real(learning_rate)},
        {"batch_size", std::to_string(batch_size)},
        {"max_epochs", std::to_string(max_epochs)},
        {"patience", std::to_string(patience)},
        {"weight_decay", format_real(weight_decay)},
        {"beta1", format_real(beta1)},
        {"beta2", format_real(beta2)},
        {"epsilon", format_real(epsilon)},
        {"seed", std::to_string(seed)},
    };
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
    auto real = [&](const char* key) { return parse_real(kv_get(kv, key), key); };
    auto u32 = [&](const char* key) { return static_cast<std::uint32_t>(parse_u64(kv_get(kv, key), key)); };
    TrainConfig c;
    c.learning_rate = real("learning_rate");
    c.batch_size = u32("batch_size");
    c.max_epochs = u32("max_epochs");
    c.patience = u32("patience");
    c.weight_decay = real("weight_decay");
    c.beta1 = real("beta1");
    c.beta2 = real("beta2");
    c.epsilon = real("epsilon");
    c.seed = parse_u64(kv_get(kv, "seed"), "seed");
    c.validate();
    return c;
}

OptimizerState::OptimizerState(const ModelParams& params) {
    for (const auto& e : params.entries()) {
        first_moment.emplace_back(e.value.rows(), e.value.cols());
        second_moment.emplace_back(e.value.rows(), e.value.cols());
    }
}

void adamw_step(ModelParams& params, std::span<const Matrix> grads, OptimizerState& state, const TrainConfig& config) {
    auto entries = params.entries();
    if (grads.size() != entries.size() || state.first_moment.size() != entries.size() ||
        state.second_moment.size() != entries.size()) {
        throw UsageError("adamw_step: gradient/state count does not match parameters");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const Matrix& p = entries[i].value;
        if (!grads[i].same_shape(p) || !state.first_moment[i].same_shape(p) ||
            !state.second_moment[i].same_shape(p)) {
            throw UsageError("adamw_step: shape mismatch for " + entries[i].name);
        }
    }

    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(config.beta1, t);
    const double correction2 = 1.0 - std::pow(config.beta2, t);
    const double decay = 1.0 - config.learning_rate * config.weight_decay;

    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto theta = entries[i].value.values();
        auto g = grads[i].values();
        auto m = state.first_moment[i].values();
        auto v = state.second_moment[i].values();
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
            const double m_hat = m[j] / correction1;
            const double v_hat = v[j] / correction2;
            theta[j] *= decay;
            theta[j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
        }
    }
}

Var batch_loss(Tape& tape, const BoundParams& params, const HyperConfig& config,
               std::span<const FeatureRecord* const> batch) {
    if (batch.empty()) {
        throw InputError("batch_loss: empty batch");
    }
    std::vector<Var> logits;
    std::vector<int> labels;
    logits.reserve(batch.size());
    labels.reserve(batch.size());
    for (const FeatureRecord* rec : batch) {
        logits.push_back(forward_graph(tape, params, config, *rec).logits);
        labels.push_back(rec->label);
    }
    return cross_entropy_logits(stack_rows(logits), labels);
}

double batch_loss_value(const ModelParams& params, const HyperConfig& config, std::span<const FeatureRecord> batch) {
    std::vector<const FeatureRecord*> ptrs;
    for (const auto& r : batch) ptrs.push_back(&r);
    Tape tape;
    auto bound = BoundParams::on_tape(tape, params, false);
    return batch_loss(tape, bound, config, ptrs).scalar();
}

std::vector<int> predict_all(const ModelParams& params, const HyperConfig& config, const Dataset& data) {
    std::vector<int> preds;
    preds.reserve(data.size());
    for (const auto& rec : data.records) preds.push_back(predict_label(forward(params, config, rec)));
    return preds;
}

MetricsReport evaluate_dataset(const ModelParams& params, const HyperConfig& config, const Dataset& data) {
    std::vector<int> labels;
    labels.reserve(data.size());
    for (const auto& rec : data.records) labels.push_back(rec.label);
    return compute_metrics(labels, predict_all(params, config, data));
}

TrainResult train(const Dataset& train_split, const Dataset& val_split, const HyperConfig& model,
                  const TrainConfig& config) {
    model.validate();
    config.validate();
    if (train_split.empty()) throw InputError("train: empty train split");
    if (val_split.empty()) throw InputError("train: empty validation split");

    ModelParams params = init_params(model);
    OptimizerState state(params);

    TrainResult result;
    result.checkpoint.model = model;
    result.checkpoint.train = config;
    result.checkpoint.params = params;

    {
        double total = 0.0;
        const std::size_t n = train_split.size();
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t len = std::min<std::size_t>(config.batch_size, n - start);
            total += batch_loss_value(params, model, std::span(train_split.records).subspan(start, len)) *
                     static_cast<double>(len);
        }
        result.initial_train_loss = total / static_cast<double>(n);
    }

    double best = -std::numeric_limits<double>::infinity();
    std::uint32_t stale = 0;
    std::vector<const FeatureRecord*> batch_records;
    for (std::uint32_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        double loss_sum = 0.0;
        for (const auto& batch : make_batches(train_split.size(), config.batch_size, detail::mix_seed(config.seed, epoch))) {
            batch_records.clear();
            for (std::size_t i : batch) batch_records.push_back(&train_split.records[i]);

            Tape tape;
            auto bound = BoundParams::on_tape(tape, params, true);
            Var loss = batch_loss(tape, bound, model, batch_records);
            tape.backward(loss);
            loss_sum += loss.scalar() * static_cast<double>(batch.size());

            std::vector<Matrix> grads;
            grads.reserve(bound.vars().size());
            for (Var v : bound.vars()) grads.push_back(v.grad());
            adamw_step(params, grads, state, config);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_split.size());
        rec.val = evaluate_dataset(params, model, val_split);
        rec.improved = rec.val.f1 > best + kImprovementThreshold;
        if (rec.improved) {
            best = rec.val.f1;
            result.checkpoint.params = params;
            result.checkpoint.best_val_f1 = best;
            result.checkpoint.epoch = epoch;
            stale = 0;
        } else {
            ++stale;
        }
        rec.best_val_f1 = best;
        result.history.push_back(rec);
        if (!rec.improved && stale >= std::max<std::uint32_t>(config.patience, 1)) {
            break;
        }
    }
    return result;
}

namespace {

constexpr char kMagic[] = "MMCK";
constexpr std::uint32_t kVersion = 1;

[[noreturn]] void invalid(const std::string& what) {
    throw LoadError(LoadError::Kind::InvalidRecord, "invalid checkpoint: " + what);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
    detail::ByteWriter w;
    w.bytes(std::string_view(kMagic, 4));
    w.u32(kVersion);
    w.string(to_kv_text(ck.model.to_kv()));
    w.string(to_kv_text(ck.train.to_kv()));
    w.u32(static_cast<std::uint32_t>(ck.params.size()));
    for (const auto& e : ck.params.entries()) {
        w.string(e.name);
        w.u32(static_cast<std::uint32_t>(e.value.rows()));
        w.u32(static_cast<std::uint32_t>(e.value.cols()));
        for (double v : e.value.values()) w.f64(v);
    }
    w.f64(ck.best_val_f1);
    w.u32(ck.epoch);
    return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    using Kind = LoadError::Kind;
    detail::ByteReader r(bytes);
    if (r.remaining() < 4) {
        throw LoadError(Kind::Truncated, "truncated payload: file shorter than magic");
    }
    if (r.bytes(4) != std::string_view(kMagic, 4)) {
        throw LoadError(Kind::BadMagic, "bad magic: not an MMCK checkpoint");
    }
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw LoadError(Kind::VersionMismatch, "version mismatch: checkpoint v" + std::to_string(version) +
                                                   ", reader supports v" + std::to_string(kVersion));
    }

    Checkpoint ck;
    const std::string model_text = r.string();
    const std::string train_text = r.string();
    try {
        ck.model = HyperConfig::from_kv(parse_kv_text(model_text));
        ck.train = TrainConfig::from_kv(parse_kv_text(train_text));
    } catch (const InputError& e) {
        invalid(e.what());
    }

    const auto layout = param_layout(ck.model);
    const std::uint32_t count = r.u32();
    if (count != layout.size()) {
        throw LoadError(Kind::DimInconsistent, "dim inconsistency: " + std::to_string(count) + " parameters for a " +
                                                   std::string(variant_name(ck.model.variant)) + " model expecting " +
                                                   std::to_string(layout.size()));
    }
    std::vector<NamedMatrix> entries;
    for (const auto& [name, shape] : layout) {
        std::string got = r.string();
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        if (got != name || rows != shape.first || cols != shape.second) {
            throw LoadError(Kind::DimInconsistent, "dim inconsistency: parameter " + got + " " + std::to_string(rows) +
                                                       "x" + std::to_string(cols) + " where " + name + " " +
                                                       std::to_string(shape.first) + "x" +
                                                       std::to_string(shape.second) + " was expected");
        }
        std::vector<double> values(std::size_t{rows} * cols);
        for (double& v : values) v = r.f64();
        entries.push_back({std::move(got), Matrix(rows, cols, std::move(values))});
    }
    ck.params = ModelParams(std::move(entries));
    ck.best_val_f1 = r.f64();
    ck.epoch = r.u32();
    if (r.remaining() != 0) {
        throw LoadError(Kind::DimInconsistent,
                        "dim inconsistency: " + std::to_string(r.remaining()) + " trailing bytes after checkpoint");
    }
    return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    detail::write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(detail::read_file(path)); }

Checkpoint load_checkpoint(const std::filesystem::path& path, const HyperConfig& expected) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.model.variant != expected.variant) {
        throw LoadError(LoadError::Kind::VariantMismatch,
                        "variant mismatch: checkpoint holds '" + std::string(variant_name(ck.model.variant)) +
                            "', config wants '" + std::string(variant_name(expected.variant)) + "'");
    }
    if (ck.model.text_dim != expected.text_dim || ck.model.image_dim != expected.image_dim ||
        ck.model.common_dim != expected.common_dim || ck.model.gate_hidden != expected.gate_hidden ||
        ck.model.cls_hidden != expected.cls_hidden) {
        throw LoadError(LoadError::Kind::DimInconsistent, "dim inconsistency: checkpoint dims differ from config");
    }
    return ck;
}

}  // namespace mmfusion
