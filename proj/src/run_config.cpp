#include "mmfusion/run_config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <type_traits>
#include <sstream>

#include "mmfusion/text_format.hpp"

namespace mmfusion {

namespace {

struct Field {
    const char* section;
    const char* key;
    std::function<void(RunConfig&, std::string_view value, const std::string& name)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field u_field(const char* section, const char* key, T RunConfig::*sub, auto member) {
    return Field{section, key,
                 [sub, member](RunConfig& c, std::string_view v, const std::string& name) {
                     using V = std::remove_reference_t<decltype((c.*sub).*member)>;
                     const std::uint64_t parsed = parse_u64(v, name);
                     if (parsed > std::numeric_limits<V>::max()) {
                         throw ConfigError("key '" + name + "': value out of range");
                     }
                     (c.*sub).*member = static_cast<V>(parsed);
                 },
                 [sub, member](const RunConfig& c) { return std::to_string((c.*sub).*member); }};
}

template <typename T>
Field r_field(const char* section, const char* key, T RunConfig::*sub, double T::*member) {
    return Field{section, key,
                 [sub, member](RunConfig& c, std::string_view v, const std::string& name) {
                     (c.*sub).*member = parse_real(v, name);
                 },
                 [sub, member](const RunConfig& c) { return format_real((c.*sub).*member); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"data", "path", [](RunConfig& c, std::string_view v, const std::string&) { c.data.path = v; },
                     [](const RunConfig& c) { return c.data.path; }});
        f.push_back({"data", "n_samples",
                     [](RunConfig& c, std::string_view v, const std::string& n) {
                         c.data.synthetic.n_samples = parse_u64(v, n);
                     },
                     [](const RunConfig& c) { return std::to_string(c.data.synthetic.n_samples); }});
        auto dim = [](const char* key, std::uint32_t FeatureDims::*m) {
            return Field{"data", key,
                         [m](RunConfig& c, std::string_view v, const std::string& n) {
                             const std::uint64_t x = parse_u64(v, n);
                             if (x > 0xffffffffULL) throw ConfigError("key '" + n + "': value out of range");
                             c.data.synthetic.dims.*m = static_cast<std::uint32_t>(x);
                         },
                         [m](const RunConfig& c) { return std::to_string(c.data.synthetic.dims.*m); }};
        };
        f.push_back(dim("d_t", &FeatureDims::text_dim));
        f.push_back(dim("d_i", &FeatureDims::image_dim));
        f.push_back(dim("l_t", &FeatureDims::text_len));
        f.push_back(dim("l_i", &FeatureDims::image_len));
        auto synth_real = [](const char* key, double SyntheticSpec::*m) {
            return Field{"data", key,
                         [m](RunConfig& c, std::string_view v, const std::string& n) {
                             c.data.synthetic.*m = parse_real(v, n);
                         },
                         [m](const RunConfig& c) { return format_real(c.data.synthetic.*m); }};
        };
        f.push_back(synth_real("p_text_signal", &SyntheticSpec::p_text_signal));
        f.push_back(synth_real("p_image_signal", &SyntheticSpec::p_image_signal));
        f.push_back(synth_real("signal_strength", &SyntheticSpec::signal_strength));
        f.push_back(synth_real("noise_std", &SyntheticSpec::noise_std));
        f.push_back(synth_real("conflict_rate", &SyntheticSpec::conflict_rate));
        f.push_back({"data", "seed",
                     [](RunConfig& c, std::string_view v, const std::string& n) {
                         c.data.synthetic.seed = parse_u64(v, n);
                     },
                     [](const RunConfig& c) { return std::to_string(c.data.synthetic.seed); }});
        auto split = [](const char* key, double SplitFractions::*m) {
            return Field{"data", key,
                         [m](RunConfig& c, std::string_view v, const std::string& n) { c.data.split.*m = parse_real(v, n); },
                         [m](const RunConfig& c) { return format_real(c.data.split.*m); }};
        };
        f.push_back(split("split_train", &SplitFractions::train));
        f.push_back(split("split_val", &SplitFractions::val));
        f.push_back(split("split_test", &SplitFractions::test));
        f.push_back(u_field("data", "split_seed", &RunConfig::data, &DataSection::split_seed));

        f.push_back(u_field("model", "d_c", &RunConfig::model, &ModelSection::common_dim));
        f.push_back(u_field("model", "gate_hidden", &RunConfig::model, &ModelSection::gate_hidden));
        f.push_back(u_field("model", "cls_hidden", &RunConfig::model, &ModelSection::cls_hidden));
        f.push_back({"model", "variant",
                     [](RunConfig& c, std::string_view v, const std::string& n) {
                         try {
                             c.model.variant = parse_variant(trim(v));
                         } catch (const InputError& e) {
                             throw ConfigError("key '" + n + "': " + e.what());
                         }
                     },
                     [](const RunConfig& c) { return std::string(variant_name(c.model.variant)); }});
        f.push_back(r_field("model", "init_scale", &RunConfig::model, &ModelSection::init_scale));
        f.push_back(u_field("model", "init_seed", &RunConfig::model, &ModelSection::init_seed));

        f.push_back(r_field("train", "learning_rate", &RunConfig::train, &TrainConfig::learning_rate));
        f.push_back(u_field("train", "batch_size", &RunConfig::train, &TrainConfig::batch_size));
        f.push_back(u_field("train", "max_epochs", &RunConfig::train, &TrainConfig::max_epochs));
        f.push_back(u_field("train", "patience", &RunConfig::train, &TrainConfig::patience));
        f.push_back(r_field("train", "weight_decay", &RunConfig::train, &TrainConfig::weight_decay));
        f.push_back(r_field("train", "beta1", &RunConfig::train, &TrainConfig::beta1));
        f.push_back(r_field("train", "beta2", &RunConfig::train, &TrainConfig::beta2));
        f.push_back(r_field("train", "epsilon", &RunConfig::train, &TrainConfig::epsilon));
        f.push_back(u_field("train", "seed", &RunConfig::train, &TrainConfig::seed));

        f.push_back(r_field("eval", "threshold", &RunConfig::eval, &EvalSection::threshold));
        f.push_back({"eval", "sigmas",
                     [](RunConfig& c, std::string_view v, const std::string& n) {
                         c.eval.sigmas.clear();
                         v = trim(v);
                         while (!v.empty()) {
                             const auto comma = v.find(',');
                             c.eval.sigmas.push_back(parse_real(v.substr(0, comma), n));
                             v = comma == std::string_view::npos ? std::string_view{} : v.substr(comma + 1);
                         }
                     },
                     [](const RunConfig& c) {
                         std::string out;
                         for (std::size_t i = 0; i < c.eval.sigmas.size(); ++i) {
                             if (i) out += ',';
                             out += format_real(c.eval.sigmas[i]);
                         }
                         return out;
                     }});
        f.push_back(u_field("eval", "noise_seed", &RunConfig::eval, &EvalSection::noise_seed));
        f.push_back({"eval", "out_dir", [](RunConfig& c, std::string_view v, const std::string&) { c.eval.out_dir = v; },
                     [](const RunConfig& c) { return c.eval.out_dir; }});
        return f;
    }();
    return table;
}

}  // namespace

void RunConfig::set(std::string_view section, std::string_view key, std::string_view value) {
    const std::string name = std::string(section) + "." + std::string(key);
    for (const Field& f : fields()) {
        if (section == f.section && key == f.key) {
            try {
                f.set(*this, trim(value), name);
            } catch (const ConfigError&) {
                throw;
            } catch (const InputError& e) {
                throw ConfigError(e.what());
            }
            return;
        }
    }
    throw ConfigError("unknown key '" + name + "'");
}

void RunConfig::set_dotted(std::string_view assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
        throw ConfigError("override '" + std::string(assignment) + "' is not section.key=value");
    }
    set(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)), assignment.substr(eq + 1));
}

void RunConfig::set_all_seeds(std::uint64_t seed) {
    data.synthetic.seed = seed;
    data.split_seed = seed;
    model.init_seed = seed;
    train.seed = seed;
    eval.noise_seed = seed;
}

void RunConfig::apply_paper_protocol() {
    const TrainConfig p = TrainConfig::paper_protocol();
    train.learning_rate = p.learning_rate;
    train.batch_size = p.batch_size;
    train.max_epochs = p.max_epochs;
}

void RunConfig::validate() const {
    const SyntheticSpec& s = data.synthetic;
    auto fail = [](const char* key, const char* why) { throw ConfigError(std::string("key '") + key + "': " + why); };
    if (data.path.empty()) {
        if (s.n_samples == 0) fail("data.n_samples", "must be positive");
        if (s.dims.text_dim == 0) fail("data.d_t", "must be positive");
        if (s.dims.image_dim == 0) fail("data.d_i", "must be positive");
        if (s.dims.text_len == 0) fail("data.l_t", "must be positive");
        if (s.dims.image_len == 0) fail("data.l_i", "must be positive");
        auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (!prob(s.p_text_signal)) fail("data.p_text_signal", "must lie in [0,1]");
        if (!prob(s.p_image_signal)) fail("data.p_image_signal", "must lie in [0,1]");
        if (!prob(s.conflict_rate)) fail("data.conflict_rate", "must lie in [0,1]");
        if (!(s.signal_strength > 0.0)) fail("data.signal_strength", "must be positive");
        if (!(s.noise_std >= 0.0)) fail("data.noise_std", "must be non-negative");
    }
    if (!(data.split.train >= 0.0)) fail("data.split_train", "must be non-negative");
    if (!(data.split.val >= 0.0)) fail("data.split_val", "must be non-negative");
    if (!(data.split.test >= 0.0)) fail("data.split_test", "must be non-negative");
    if (std::abs(data.split.train + data.split.val + data.split.test - 1.0) > 1e-9) {
        fail("data.split_train", "split fractions must sum to 1");
    }
    if (model.common_dim == 0) fail("model.d_c", "must be positive");
    if (model.gate_hidden == 0) fail("model.gate_hidden", "must be positive");
    if (model.cls_hidden == 0) fail("model.cls_hidden", "must be positive");
    if (!(model.init_scale > 0.0)) fail("model.init_scale", "must be positive");
    if (!(train.learning_rate > 0.0)) fail("train.learning_rate", "must be positive");
    if (train.batch_size == 0) fail("train.batch_size", "must be at least 1");
    if (train.max_epochs == 0) fail("train.max_epochs", "must be at least 1");
    if (!(train.weight_decay >= 0.0)) fail("train.weight_decay", "must be non-negative");
    if (!(train.beta1 > 0.0 && train.beta1 < 1.0)) fail("train.beta1", "must lie in (0,1)");
    if (!(train.beta2 > 0.0 && train.beta2 < 1.0)) fail("train.beta2", "must lie in (0,1)");
    if (!(train.epsilon > 0.0)) fail("train.epsilon", "must be positive");
    if (!(eval.threshold >= 0.0)) fail("eval.threshold", "must be non-negative");
    for (double sigma : eval.sigmas) {
        if (!(sigma > 0.0)) fail("eval.sigmas", "every sigma must be positive");
    }
    if (eval.out_dir.empty()) fail("eval.out_dir", "must not be empty");
}

HyperConfig RunConfig::hyper_config(const FeatureDims& dims) const { return hyper_config(dims, model.variant); }

HyperConfig RunConfig::hyper_config(const FeatureDims& dims, ModelVariant variant) const {
    HyperConfig h;
    h.text_dim = dims.text_dim;
    h.image_dim = dims.image_dim;
    h.common_dim = model.common_dim;
    h.key_dim = model.common_dim;
    h.gate_hidden = model.gate_hidden;
    h.cls_hidden = model.cls_hidden;
    h.variant = variant;
    h.init_scale = model.init_scale;
    h.init_seed = model.init_seed;
    return h;
}

std::string RunConfig::to_text() const {
    std::string out;
    const char* current = "";
    for (const Field& f : fields()) {
        if (std::string_view(current) != f.section) {
            if (*current != '\0') out += '\n';
            current = f.section;
            out += '[';
            out += current;
            out += "]\n";
        }
        out += f.key;
        out += " = ";
        out += f.get(*this);
        out += '\n';
    }
    return out;
}

RunConfig parse_run_config(std::string_view text) {
    RunConfig cfg;
    std::string section;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
            }
            section = std::string(trim(line.substr(1, line.size() - 2)));
            if (section != "data" && section != "model" && section != "train" && section != "eval") {
                throw ConfigError("unknown section '" + section + "'");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        }
        if (section.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": key outside any section");
        }
        cfg.set(section, trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

}  // namespace mmfusion
