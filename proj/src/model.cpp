#include "mmfusion/model.hpp"

#include <cmath>
#include <tuple>

#include "mmfusion/error.hpp"
#include "random.hpp"

namespace mmfusion {

std::string_view variant_name(ModelVariant v) noexcept {
    switch (v) {
        case ModelVariant::TextOnly: return "text";
        case ModelVariant::ImageOnly: return "image";
        case ModelVariant::ConcatFusion: return "concat";
        case ModelVariant::FixedAttention: return "fixed";
        case ModelVariant::FullCadfm: return "full";
    }
    return "unknown";
}

ModelVariant parse_variant(std::string_view name) {
    for (ModelVariant v : kAllVariants) {
        if (variant_name(v) == name) return v;
    }
    throw InputError("unknown variant '" + std::string(name) + "' (expected text, image, concat, fixed, full)");
}

bool uses_text(ModelVariant v) noexcept { return v != ModelVariant::ImageOnly; }
bool uses_image(ModelVariant v) noexcept { return v != ModelVariant::TextOnly; }
bool uses_attention(ModelVariant v) noexcept {
    return v == ModelVariant::FixedAttention || v == ModelVariant::FullCadfm;
}
bool uses_gate(ModelVariant v) noexcept { return v == ModelVariant::FullCadfm; }

void HyperConfig::validate() const {
    if (text_dim == 0 || image_dim == 0 || common_dim == 0 || key_dim == 0 || gate_hidden == 0 ||
        cls_hidden == 0) {
        throw InputError("model dims must all be positive");
    }
    if (key_dim != common_dim) {
        throw InputError("key dim d_k must equal the common dim D_C");
    }
    if (!(init_scale > 0.0)) {
        throw InputError("init_scale must be positive");
    }
}

KeyValues HyperConfig::to_kv() const {
    return {
        {"d_t", std::to_string(text_dim)},
        {"d_i", std::to_string(image_dim)},
        {"d_c", std::to_string(common_dim)},
        {"d_k", std::to_string(key_dim)},
        {"gate_hidden", std::to_string(gate_hidden)},
        {"cls_hidden", std::to_string(cls_hidden)},
        {"variant", std::string(variant_name(variant))},
        {"init_scale", format_real(init_scale)},
        {"init_seed", std::to_string(init_seed)},
    };
}

HyperConfig HyperConfig::from_kv(const KeyValues& kv) {
    auto u32 = [&](const char* key) { return static_cast<std::uint32_t>(parse_u64(kv_get(kv, key), key)); };
    HyperConfig c;
    c.text_dim = u32("d_t");
    c.image_dim = u32("d_i");
    c.common_dim = u32("d_c");
    c.key_dim = u32("d_k");
    c.gate_hidden = u32("gate_hidden");
    c.cls_hidden = u32("cls_hidden");
    c.variant = parse_variant(kv_get(kv, "variant"));
    c.init_scale = parse_real(kv_get(kv, "init_scale"), "init_scale");
    c.init_seed = parse_u64(kv_get(kv, "init_seed"), "init_seed");
    c.validate();
    return c;
}

bool ModelParams::contains(std::string_view name) const noexcept { return index_of(name).has_value(); }

std::optional<std::size_t> ModelParams::index_of(std::string_view name) const noexcept {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) return i;
    }
    return std::nullopt;
}

const Matrix& ModelParams::get(std::string_view name) const {
    if (auto i = index_of(name)) return entries_[*i].value;
    throw UsageError("no parameter named '" + std::string(name) + "'");
}

Matrix& ModelParams::get(std::string_view name) {
    if (auto i = index_of(name)) return entries_[*i].value;
    throw UsageError("no parameter named '" + std::string(name) + "'");
}

std::vector<Matrix> ModelParams::values() const {
    std::vector<Matrix> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.value);
    return out;
}

void ModelParams::assign(std::span<const Matrix> values) {
    if (values.size() != entries_.size()) {
        throw DimensionError("assign: expected " + std::to_string(entries_.size()) + " matrices, got " +
                             std::to_string(values.size()));
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!values[i].same_shape(entries_[i].value)) {
            throw DimensionError("assign: " + entries_[i].name + " is " + entries_[i].value.shape_string() +
                                 ", got " + values[i].shape_string());
        }
    }
    for (std::size_t i = 0; i < values.size(); ++i) entries_[i].value = values[i];
}

std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> param_layout(const HyperConfig& c) {
    const std::size_t dc = c.common_dim;
    const std::size_t hg = c.gate_hidden;
    const std::size_t hc = c.cls_hidden;
    const ModelVariant v = c.variant;
    std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> layout;
    if (uses_text(v)) layout.push_back({"P_T", {c.text_dim, dc}});
    if (uses_image(v)) layout.push_back({"P_I", {c.image_dim, dc}});
    if (uses_attention(v)) {
        for (const char* n : {"W_QT", "W_KI", "W_VI", "W_QI", "W_KT", "W_VT"}) layout.push_back({n, {dc, dc}});
    }
    if (uses_gate(v)) {
        layout.push_back({"gate_W1", {2 * dc, hg}});
        layout.push_back({"gate_b1", {1, hg}});
        layout.push_back({"w_T", {hg, 1}});
        layout.push_back({"b_T", {1, 1}});
        layout.push_back({"w_I", {hg, 1}});
        layout.push_back({"b_I", {1, 1}});
    }
    const std::size_t cls_in = (uses_text(v) && uses_image(v)) ? 2 * dc : dc;
    layout.push_back({"cls_W1", {cls_in, hc}});
    layout.push_back({"cls_b1", {1, hc}});
    layout.push_back({"cls_W2", {hc, 2}});
    layout.push_back({"cls_b2", {1, 2}});
    return layout;
}

namespace {

bool is_bias(std::string_view name) {
    return name == "gate_b1" || name == "b_T" || name == "b_I" || name == "cls_b1" || name == "cls_b2";
}

}  // namespace

ModelParams init_params(const HyperConfig& config) {
    config.validate();
    detail::Rng rng(config.init_seed);
    std::vector<NamedMatrix> entries;
    for (const auto& [name, shape] : param_layout(config)) {
        Matrix m(shape.first, shape.second);
        if (!is_bias(name)) {
            const double bound = config.init_scale / std::sqrt(static_cast<double>(shape.first));
            for (double& v : m.values()) v = rng.uniform(-bound, bound);
        }
        entries.push_back({name, std::move(m)});
    }
    return ModelParams(std::move(entries));
}

BoundParams::BoundParams(const ModelParams& params, std::span<const Var> vars)
    : params_(&params), vars_(vars.begin(), vars.end()) {
    if (vars_.size() != params.size()) {
        throw DimensionError("BoundParams: " + std::to_string(vars_.size()) + " vars for " +
                             std::to_string(params.size()) + " parameters");
    }
}

BoundParams BoundParams::on_tape(Tape& tape, const ModelParams& params, bool requires_grad) {
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& e : params.entries()) vars.push_back(tape.leaf(e.value, requires_grad));
    return BoundParams(params, vars);
}

Var BoundParams::get(std::string_view name) const {
    if (auto i = params_->index_of(name)) return vars_[*i];
    throw UsageError("no parameter named '" + std::string(name) + "' in this variant");
}

void check_record(const HyperConfig& config, const FeatureRecord& record) {
    if (record.text_features.empty() || record.image_features.empty()) {
        throw InputError("record " + record.id + ": empty feature sequence");
    }
    if (record.text_features.cols() != config.text_dim || record.image_features.cols() != config.image_dim) {
        throw InputError("record " + record.id + ": feature widths " + std::to_string(record.text_features.cols()) +
                         "/" + std::to_string(record.image_features.cols()) + " do not match model dims " +
                         std::to_string(config.text_dim) + "/" + std::to_string(config.image_dim));
    }
}

std::pair<Var, Var> project_graph(const BoundParams& p, Var text, Var image) {
    return {matmul(text, p.get("P_T")), matmul(image, p.get("P_I"))};
}

namespace {

Var attend(Var queries_from, Var keys_from, Var wq, Var wk, Var wv, double inv_sqrt_dk) {
    Var q = matmul(queries_from, wq);
    Var k = matmul(keys_from, wk);
    Var v = matmul(keys_from, wv);
    Var weights = softmax_rows(scale_by_constant(matmul(q, transpose(k)), inv_sqrt_dk));
    return add(matmul(weights, v), queries_from);
}

}  // namespace

std::pair<Var, Var> cross_attend_graph(const BoundParams& p, Var h_text, Var h_image, std::size_t key_dim) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(key_dim));
    Var text = attend(h_text, h_image, p.get("W_QT"), p.get("W_KI"), p.get("W_VI"), inv);
    Var image = attend(h_image, h_text, p.get("W_QI"), p.get("W_KT"), p.get("W_VT"), inv);
    return {text, image};
}

GateNodes gate_graph(const BoundParams& p, Var attended_text, Var attended_image) {
    GateNodes out;
    out.pooled_text = mean_rows(attended_text);
    out.pooled_image = mean_rows(attended_image);
    Var g = relu(add_row_bias(matmul(concat_cols(out.pooled_text, out.pooled_image), p.get("gate_W1")),
                              p.get("gate_b1")));
    out.alpha_text = sigmoid(add(matmul(g, p.get("w_T")), p.get("b_T")));
    out.alpha_image = sigmoid(add(matmul(g, p.get("w_I")), p.get("b_I")));
    return out;
}

Var classifier_graph(const BoundParams& p, Var features) {
    Var hidden = relu(add_row_bias(matmul(features, p.get("cls_W1")), p.get("cls_b1")));
    return add_row_bias(matmul(hidden, p.get("cls_W2")), p.get("cls_b2"));
}

Var fuse_classify_graph(const BoundParams& p, Var alpha_text, Var alpha_image, Var pooled_text, Var pooled_image) {
    Var fusion = concat_cols(scale_by_scalar(pooled_text, alpha_text), scale_by_scalar(pooled_image, alpha_image));
    return classifier_graph(p, fusion);
}

ForwardNodes forward_graph(Tape& tape, const BoundParams& p, const HyperConfig& config,
                           const FeatureRecord& record, const ForwardOptions& options) {
    check_record(config, record);
    const ModelVariant v = config.variant;
    if (options.pinned_gates && v != ModelVariant::FullCadfm) {
        throw UsageError("pinned gates need the full variant");
    }

    ForwardNodes n;
    if (v == ModelVariant::TextOnly) {
        n.h_text = matmul(tape.constant(record.text_features), p.get("P_T"));
        n.fusion = mean_rows(n.h_text);
        n.pooled_text = n.fusion;
        n.logits = classifier_graph(p, n.fusion);
        return n;
    }
    if (v == ModelVariant::ImageOnly) {
        n.h_image = matmul(tape.constant(record.image_features), p.get("P_I"));
        n.fusion = mean_rows(n.h_image);
        n.pooled_image = n.fusion;
        n.logits = classifier_graph(p, n.fusion);
        return n;
    }

    std::tie(n.h_text, n.h_image) =
        project_graph(p, tape.constant(record.text_features), tape.constant(record.image_features));
    if (v == ModelVariant::ConcatFusion) {
        n.pooled_text = mean_rows(n.h_text);
        n.pooled_image = mean_rows(n.h_image);
        n.fusion = concat_cols(n.pooled_text, n.pooled_image);
        n.logits = classifier_graph(p, n.fusion);
        return n;
    }

    std::tie(n.attended_text, n.attended_image) = cross_attend_graph(p, n.h_text, n.h_image, config.key_dim);
    if (v == ModelVariant::FixedAttention) {
        n.pooled_text = mean_rows(n.attended_text);
        n.pooled_image = mean_rows(n.attended_image);
        n.fusion = concat_cols(n.pooled_text, n.pooled_image);
        n.logits = classifier_graph(p, n.fusion);
        return n;
    }

    if (options.pinned_gates) {
        n.pooled_text = mean_rows(n.attended_text);
        n.pooled_image = mean_rows(n.attended_image);
        n.alpha_text = tape.constant(Matrix(1, 1, options.pinned_gates->first));
        n.alpha_image = tape.constant(Matrix(1, 1, options.pinned_gates->second));
    } else {
        GateNodes g = gate_graph(p, n.attended_text, n.attended_image);
        n.pooled_text = g.pooled_text;
        n.pooled_image = g.pooled_image;
        n.alpha_text = g.alpha_text;
        n.alpha_image = g.alpha_image;
    }
    n.fusion = concat_cols(scale_by_scalar(n.pooled_text, n.alpha_text),
                           scale_by_scalar(n.pooled_image, n.alpha_image));
    n.logits = classifier_graph(p, n.fusion);
    return n;
}

std::pair<Matrix, Matrix> project(const ModelParams& params, const HyperConfig& config, const FeatureRecord& record) {
    check_record(config, record);
    Tape tape;
    auto bound = BoundParams::on_tape(tape, params, false);
    auto [t, i] = project_graph(bound, tape.constant(record.text_features), tape.constant(record.image_features));
    return {t.value(), i.value()};
}

std::pair<Matrix, Matrix> cross_attend(const ModelParams& params, const Matrix& h_text, const Matrix& h_image,
                                       std::size_t key_dim) {
    Tape tape;
    auto bound = BoundParams::on_tape(tape, params, false);
    auto [t, i] = cross_attend_graph(bound, tape.constant(h_text), tape.constant(h_image), key_dim);
    return {t.value(), i.value()};
}

GateOutput gate(const ModelParams& params, const Matrix& attended_text, const Matrix& attended_image) {
    Tape tape;
    auto bound = BoundParams::on_tape(tape, params, false);
    GateNodes g = gate_graph(bound, tape.constant(attended_text), tape.constant(attended_image));
    return {g.alpha_text.scalar(), g.alpha_image.scalar(), g.pooled_text.value(), g.pooled_image.value()};
}

Matrix fuse_classify(const ModelParams& params, double alpha_text, double alpha_image, const Matrix& pooled_text,
                     const Matrix& pooled_image) {
    Tape tape;
    auto bound = BoundParams::on_tape(tape, params, false);
    return fuse_classify_graph(bound, tape.constant(Matrix(1, 1, alpha_text)), tape.constant(Matrix(1, 1, alpha_image)),
                               tape.constant(pooled_text), tape.constant(pooled_image))
        .value();
}

ForwardTrace forward(const ModelParams& params, const HyperConfig& config, const FeatureRecord& record,
                     const ForwardOptions& options) {
    Tape tape;
    auto bound = BoundParams::on_tape(tape, params, false);
    ForwardNodes n = forward_graph(tape, bound, config, record, options);
    ForwardTrace t;
    auto grab = [](Var v) { return v.valid() ? v.value() : Matrix{}; };
    t.h_text = grab(n.h_text);
    t.h_image = grab(n.h_image);
    t.attended_text = grab(n.attended_text);
    t.attended_image = grab(n.attended_image);
    if (n.alpha_text.valid()) t.alpha_text = n.alpha_text.scalar();
    if (n.alpha_image.valid()) t.alpha_image = n.alpha_image.scalar();
    t.fusion = n.fusion.value();
    t.logits = n.logits.value();
    return t;
}

std::pair<double, double> predict_proba(const ForwardTrace& trace) {
    const double a = trace.logits(0, 0);
    const double b = trace.logits(0, 1);
    const double mx = std::max(a, b);
    const double ea = std::exp(a - mx);
    const double eb = std::exp(b - mx);
    const double total = ea + eb;
    return {ea / total, eb / total};
}

int predict_label(const ForwardTrace& trace) { return trace.logits(0, 1) > trace.logits(0, 0) ? 1 : 0; }

}  // namespace mmfusion
