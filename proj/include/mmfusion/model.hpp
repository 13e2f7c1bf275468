#pragma once

// Context-aware dynamic fusion classifier and its restricted baseline variants.
//
// Full pipeline for one record (L_T x D_T text features F_T, L_I x D_I image
// features F_I):
//
//   h_T  = F_T P_T,  h_I = F_I P_I                                 (common space)
//   h'_T = softmax((h_T W_QT)(h_I W_KI)^T / sqrt(d_k)) (h_I W_VI) + h_T
//   h'_I = softmax((h_I W_QI)(h_T W_KT)^T / sqrt(d_k)) (h_T W_VT) + h_I
//   g    = relu([mean(h'_T); mean(h'_I)] W_g + b_g)
//   a_T  = sigmoid(g w_T + b_T),  a_I = sigmoid(g w_I + b_I)
//   logits = mlp_cls([a_T mean(h'_T); a_I mean(h'_I)])

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmfusion/autodiff.hpp"
#include "mmfusion/feature_data.hpp"
#include "mmfusion/text_format.hpp"

namespace mmfusion {

enum class ModelVariant : std::uint8_t {
    TextOnly,
    ImageOnly,
    ConcatFusion,
    FixedAttention,
    FullCadfm,
};

/// Ablation-table order.
inline constexpr ModelVariant kAllVariants[] = {
    ModelVariant::TextOnly,       ModelVariant::ImageOnly, ModelVariant::ConcatFusion,
    ModelVariant::FixedAttention, ModelVariant::FullCadfm,
};

/// Short CLI names: text, image, concat, fixed, full.
std::string_view variant_name(ModelVariant v) noexcept;
/// Throws InputError for an unknown name.
ModelVariant parse_variant(std::string_view name);

[[nodiscard]] bool uses_text(ModelVariant v) noexcept;
[[nodiscard]] bool uses_image(ModelVariant v) noexcept;
[[nodiscard]] bool uses_attention(ModelVariant v) noexcept;
[[nodiscard]] bool uses_gate(ModelVariant v) noexcept;

struct HyperConfig {
    std::uint32_t text_dim = 16;    ///< D_T
    std::uint32_t image_dim = 12;   ///< D_I
    std::uint32_t common_dim = 8;   ///< D_C
    std::uint32_t key_dim = 8;      ///< d_k, always equal to D_C
    std::uint32_t gate_hidden = 16;
    std::uint32_t cls_hidden = 32;
    ModelVariant variant = ModelVariant::FullCadfm;
    double init_scale = 1.0;
    std::uint64_t init_seed = 1;

    void validate() const;
    [[nodiscard]] KeyValues to_kv() const;
    static HyperConfig from_kv(const KeyValues& kv);

    friend bool operator==(const HyperConfig&, const HyperConfig&) = default;
};

struct NamedMatrix {
    std::string name;
    Matrix value;

    friend bool operator==(const NamedMatrix&, const NamedMatrix&) = default;
};

/// Learnable tensors of one model variant, in a fixed name order:
///   P_T P_I W_QT W_KI W_VI W_QI W_KT W_VT gate_W1 gate_b1 w_T b_T w_I b_I
///   cls_W1 cls_b1 cls_W2 cls_b2
/// with entries absent from the variant skipped.
class ModelParams {
public:
    ModelParams() = default;
    explicit ModelParams(std::vector<NamedMatrix> entries) : entries_(std::move(entries)) {}

    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] std::span<const NamedMatrix> entries() const noexcept { return entries_; }
    [[nodiscard]] std::span<NamedMatrix> entries() noexcept { return entries_; }

    [[nodiscard]] bool contains(std::string_view name) const noexcept;
    [[nodiscard]] const Matrix& get(std::string_view name) const;
    Matrix& get(std::string_view name);
    [[nodiscard]] std::optional<std::size_t> index_of(std::string_view name) const noexcept;

    [[nodiscard]] std::vector<Matrix> values() const;
    void assign(std::span<const Matrix> values);

    friend bool operator==(const ModelParams&, const ModelParams&) = default;

private:
    std::vector<NamedMatrix> entries_;
};

/// Parameter names and shapes a config expects, in canonical order.
std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> param_layout(const HyperConfig& config);

/// Weights ~ U(-s/sqrt(fan_in), s/sqrt(fan_in)) with s = init_scale; biases zero.
ModelParams init_params(const HyperConfig& config);

/// Parameters placed on a tape, looked up by name.
class BoundParams {
public:
    BoundParams(const ModelParams& params, std::span<const Var> vars);

    /// Binds every parameter as a leaf; requires_grad chooses training vs inference.
    static BoundParams on_tape(Tape& tape, const ModelParams& params, bool requires_grad);

    [[nodiscard]] Var get(std::string_view name) const;
    [[nodiscard]] std::span<const Var> vars() const noexcept { return vars_; }

private:
    const ModelParams* params_;
    std::vector<Var> vars_;
};

struct ForwardOptions {
    /// Replaces the gate outputs with fixed values (FullCadfm only).
    std::optional<std::pair<double, double>> pinned_gates;
};

/// Graph handles for one forward pass. Handles a variant does not compute stay invalid.
struct ForwardNodes {
    Var h_text, h_image;
    Var attended_text, attended_image;
    Var pooled_text, pooled_image;
    Var alpha_text, alpha_image;
    Var fusion;
    Var logits;
};

struct ForwardTrace {
    Matrix h_text, h_image;
    Matrix attended_text, attended_image;
    std::optional<double> alpha_text, alpha_image;
    Matrix fusion;
    Matrix logits;  ///< 1 x 2, column 0 real, column 1 fake
};

/// Throws InputError when the record does not match the configured dims.
void check_record(const HyperConfig& config, const FeatureRecord& record);

std::pair<Var, Var> project_graph(const BoundParams& p, Var text, Var image);
std::pair<Var, Var> cross_attend_graph(const BoundParams& p, Var h_text, Var h_image, std::size_t key_dim);

struct GateNodes {
    Var alpha_text, alpha_image, pooled_text, pooled_image;
};
GateNodes gate_graph(const BoundParams& p, Var attended_text, Var attended_image);
Var classifier_graph(const BoundParams& p, Var features);
Var fuse_classify_graph(const BoundParams& p, Var alpha_text, Var alpha_image, Var pooled_text, Var pooled_image);

ForwardNodes forward_graph(Tape& tape, const BoundParams& p, const HyperConfig& config,
                           const FeatureRecord& record, const ForwardOptions& options = {});

// Value-level wrappers; each builds its own inference tape.
std::pair<Matrix, Matrix> project(const ModelParams& params, const HyperConfig& config, const FeatureRecord& record);
std::pair<Matrix, Matrix> cross_attend(const ModelParams& params, const Matrix& h_text, const Matrix& h_image,
                                       std::size_t key_dim);

struct GateOutput {
    double alpha_text = 0.0;
    double alpha_image = 0.0;
    Matrix pooled_text, pooled_image;
};
GateOutput gate(const ModelParams& params, const Matrix& attended_text, const Matrix& attended_image);
Matrix fuse_classify(const ModelParams& params, double alpha_text, double alpha_image, const Matrix& pooled_text,
                     const Matrix& pooled_image);

ForwardTrace forward(const ModelParams& params, const HyperConfig& config, const FeatureRecord& record,
                     const ForwardOptions& options = {});

/// (p_real, p_fake) from the trace logits.
std::pair<double, double> predict_proba(const ForwardTrace& trace);
/// argmax of the logits; ties go to real.
int predict_label(const ForwardTrace& trace);

}  // namespace mmfusion
