// mmfusion: generate feature data, train fusion models and run the
// evaluation experiments from one reproducible configuration.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 checkpoint error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmfusion/evaluation.hpp"
#include "mmfusion/run_config.hpp"

namespace fs = std::filesystem;
using namespace mmfusion;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kCheckpoint = 3 };

struct CliFailure {
    int code;
    std::string message;
};

const char* code_name(int code) {
    switch (code) {
        case kUsage: return "usage";
        case kData: return "data";
        case kCheckpoint: return "checkpoint";
        default: return "internal";
    }
}

std::string one_line(std::string s) {
    for (char& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

struct GlobalOptions {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
};

RunConfig resolve_config(const GlobalOptions& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
    for (const auto& o : g.overrides) cfg.set_dotted(o);
    if (g.seed) cfg.set_all_seeds(*g.seed);
    if (!g.out_dir.empty()) cfg.eval.out_dir = g.out_dir;
    return cfg;
}

fs::path prepare_out_dir(const RunConfig& cfg) {
    fs::path out = cfg.eval.out_dir;
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw CliFailure{kData, "cannot create output directory " + out.string()};
    return out;
}

void write_text(const fs::path& path, const std::string& text, int code) {
    try {
        write_text_file(path, text);
    } catch (const Error& e) {
        throw CliFailure{code, e.what()};
    }
}

void echo_config(const RunConfig& cfg, const fs::path& out, const std::string& command) {
    write_text(out / (command + ".resolved.ini"), cfg.to_text(), kData);
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines, bool to_stdout) {
    std::string text;
    for (const auto& l : lines) {
        text += l;
        text += '\n';
        if (to_stdout) std::cout << l << '\n';
    }
    write_text(path, text, kData);
}

Dataset load_data(const std::string& path) {
    try {
        Dataset ds = load_dataset(path);
        if (ds.empty()) throw CliFailure{kData, "data file " + path + " holds no records"};
        return ds;
    } catch (const LoadError& e) {
        throw CliFailure{kData, path + ": " + e.what()};
    }
}

/// Feature file if one is named, otherwise the configured synthetic dataset.
Dataset obtain_data(RunConfig& cfg, const std::string& data_flag) {
    if (!data_flag.empty()) cfg.data.path = data_flag;
    if (!cfg.data.path.empty()) return load_data(cfg.data.path);
    return generate_synthetic(cfg.data.synthetic);
}

DatasetSplits make_splits(const RunConfig& cfg, const Dataset& ds) {
    try {
        return split_dataset(ds, cfg.data.split, cfg.data.split_seed);
    } catch (const InputError& e) {
        throw CliFailure{kData, e.what()};
    }
}

const Dataset& pick_split(const DatasetSplits& s, const Dataset& all, const std::string& name) {
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    if (name == "test") return s.test;
    if (name == "all") return all;
    throw CliFailure{kUsage, "unknown split '" + name + "' (expected train, val, test, all)"};
}

Checkpoint load_ckpt(const fs::path& path) {
    try {
        return load_checkpoint(path);
    } catch (const LoadError& e) {
        throw CliFailure{kCheckpoint, path.string() + ": " + e.what()};
    }
}

void save_ckpt(const Checkpoint& ck, const fs::path& path) {
    try {
        save_checkpoint(ck, path);
    } catch (const Error& e) {
        throw CliFailure{kCheckpoint, e.what()};
    }
}

void require_compatible(const Checkpoint& ck, const Dataset& ds) {
    if (ck.model.text_dim != ds.dims.text_dim || ck.model.image_dim != ds.dims.image_dim) {
        throw CliFailure{kCheckpoint, "checkpoint dims D_T=" + std::to_string(ck.model.text_dim) +
                                          " D_I=" + std::to_string(ck.model.image_dim) + " do not match data D_T=" +
                                          std::to_string(ds.dims.text_dim) + " D_I=" + std::to_string(ds.dims.image_dim)};
    }
}

fs::path checkpoint_path(const fs::path& dir, ModelVariant v) {
    return dir / ("checkpoint_" + std::string(variant_name(v)) + ".mmck");
}

std::vector<std::string> history_lines(ModelVariant v, const TrainResult& r) {
    std::vector<std::string> lines;
    for (const auto& e : r.history) lines.push_back(history_line(variant_name(v), e));
    lines.push_back(ReportLine()
                        .add("variant", variant_name(v))
                        .add("initial_train_loss", r.initial_train_loss)
                        .add("best_epoch", r.checkpoint.epoch)
                        .add("best_val_f1", r.checkpoint.best_val_f1)
                        .str());
    return lines;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(RunConfig cfg, const std::string& output) {
    cfg.data.path.clear();
    cfg.validate();
    const fs::path out = prepare_out_dir(cfg);
    const fs::path target = output.empty() ? out / "features.mmfn" : fs::path(output);
    const Dataset ds = generate_synthetic(cfg.data.synthetic);
    try {
        save_dataset(ds, target);
    } catch (const Error& e) {
        throw CliFailure{kData, e.what()};
    }
    echo_config(cfg, out, "gen-data");
    std::cout << "wrote " << ds.size() << " records (D_T=" << ds.dims.text_dim << ", D_I=" << ds.dims.image_dim
              << ", L_T=" << ds.dims.text_len << ", L_I=" << ds.dims.image_len << ") to " << target.string() << '\n';
    return kOk;
}

int cmd_train(RunConfig cfg, const std::string& data, const std::string& variant, const std::string& preset,
              const std::string& checkpoint_out) {
    if (!variant.empty()) cfg.set("model", "variant", variant);
    if (!preset.empty()) {
        if (preset != "paper-protocol") throw ConfigError("unknown preset '" + preset + "' (expected paper-protocol)");
        cfg.apply_paper_protocol();
    }
    cfg.validate();
    const Dataset ds = obtain_data(cfg, data);
    const fs::path out = prepare_out_dir(cfg);
    const DatasetSplits splits = make_splits(cfg, ds);
    const HyperConfig hyper = cfg.hyper_config(ds.dims);
    TrainResult result;
    try {
        result = train(splits.train, splits.val, hyper, cfg.train);
    } catch (const InputError& e) {
        throw CliFailure{kData, e.what()};
    }
    const fs::path ck_path = checkpoint_out.empty() ? checkpoint_path(out, hyper.variant) : fs::path(checkpoint_out);
    save_ckpt(result.checkpoint, ck_path);
    write_lines(out / ("history_" + std::string(variant_name(hyper.variant)) + ".jsonl"),
                history_lines(hyper.variant, result), true);
    echo_config(cfg, out, "train");
    return kOk;
}

int cmd_eval(RunConfig cfg, const std::string& checkpoint, const std::string& data, const std::string& split) {
    cfg.validate();
    const Checkpoint ck = load_ckpt(checkpoint);
    const Dataset ds = obtain_data(cfg, data);
    require_compatible(ck, ds);
    const fs::path out = prepare_out_dir(cfg);
    const DatasetSplits splits = make_splits(cfg, ds);
    const Dataset& target = pick_split(splits, ds, split);
    const MetricsReport m = evaluate_dataset(ck.params, ck.model, target);
    const std::string line = ReportLine()
                                 .add("variant", variant_name(ck.model.variant))
                                 .add("split", split)
                                 .add_metrics(m)
                                 .str();
    write_lines(out / ("eval_" + std::string(variant_name(ck.model.variant)) + "_" + split + ".jsonl"), {line}, true);
    echo_config(cfg, out, "eval");
    return kOk;
}

int cmd_gate_stats(RunConfig cfg, const std::string& checkpoint, const std::string& data,
                   std::optional<double> threshold, const std::string& split) {
    if (threshold) cfg.eval.threshold = *threshold;
    cfg.validate();
    const Checkpoint ck = load_ckpt(checkpoint);
    if (!uses_gate(ck.model.variant)) {
        throw CliFailure{kCheckpoint, "variant has no gate: checkpoint holds '" +
                                          std::string(variant_name(ck.model.variant)) + "'"};
    }
    const Dataset ds = obtain_data(cfg, data);
    require_compatible(ck, ds);
    const fs::path out = prepare_out_dir(cfg);
    const DatasetSplits splits = make_splits(cfg, ds);
    const GateStatsReport g = gate_stats(ck, pick_split(splits, ds, split), cfg.eval.threshold);
    write_lines(out / "gate_stats.jsonl", {gate_stats_line(variant_name(ck.model.variant), g)}, true);
    echo_config(cfg, out, "gate-stats");
    return kOk;
}

int cmd_ablate(RunConfig cfg, const std::string& data) {
    cfg.validate();
    const Dataset ds = obtain_data(cfg, data);
    const fs::path out = prepare_out_dir(cfg);
    const DatasetSplits splits = make_splits(cfg, ds);
    std::vector<AblationRow> rows;
    try {
        rows = run_ablation(splits, cfg.hyper_config(ds.dims), cfg.train);
    } catch (const InputError& e) {
        throw CliFailure{kData, e.what()};
    }
    std::vector<std::string> lines;
    for (const auto& row : rows) {
        lines.push_back(metrics_line(variant_name(row.variant), row.test));
        save_ckpt(row.training.checkpoint, checkpoint_path(out, row.variant));
        write_lines(out / ("history_" + std::string(variant_name(row.variant)) + ".jsonl"),
                    history_lines(row.variant, row.training), false);
    }
    write_lines(out / "ablation.jsonl", lines, true);
    echo_config(cfg, out, "ablate");
    return kOk;
}

int cmd_perturb(RunConfig cfg, const std::string& data, const std::string& checkpoint_dir) {
    cfg.validate();
    const fs::path out = prepare_out_dir(cfg);
    const fs::path dir = checkpoint_dir.empty() ? out : fs::path(checkpoint_dir);
    const fs::path full_path = checkpoint_path(dir, ModelVariant::FullCadfm);
    if (!fs::exists(full_path)) throw CliFailure{kCheckpoint, "missing checkpoint " + full_path.string()};
    const Checkpoint full = load_ckpt(full_path);
    std::optional<Checkpoint> text_only, image_only;
    if (fs::exists(checkpoint_path(dir, ModelVariant::TextOnly))) {
        text_only = load_ckpt(checkpoint_path(dir, ModelVariant::TextOnly));
    }
    if (fs::exists(checkpoint_path(dir, ModelVariant::ImageOnly))) {
        image_only = load_ckpt(checkpoint_path(dir, ModelVariant::ImageOnly));
    }

    const Dataset ds = obtain_data(cfg, data);
    require_compatible(full, ds);
    const DatasetSplits splits = make_splits(cfg, ds);
    const auto scenarios = default_scenarios(cfg.eval.sigmas, cfg.eval.noise_seed);
    PerturbationInputs inputs{&full, text_only ? &*text_only : nullptr, image_only ? &*image_only : nullptr};
    std::vector<PerturbationRow> rows;
    try {
        rows = run_perturbation_suite(inputs, splits.test, scenarios);
    } catch (const InputError& e) {
        throw CliFailure{kCheckpoint, e.what()};
    }
    std::vector<std::string> lines;
    for (const auto& r : rows) lines.push_back(perturbation_line(r));
    write_lines(out / "perturbation.jsonl", lines, true);
    echo_config(cfg, out, "perturb");
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-modal dynamic fusion: data generation, training and evaluation"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--config", g.config_path, "Run configuration file");
    app.add_option("--out", g.out_dir, "Output directory (overrides eval.out_dir)");
    app.add_option("--seed", g.seed, "Set every seed (data, split, init, train, noise)");
    app.add_option("--set", g.overrides, "Override one key: section.key=value")->take_all();

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic feature file");
    std::string gen_output;
    gen->add_option("--output", gen_output, "Feature file path (default <out>/features.mmfn)");

    auto* tr = app.add_subcommand("train", "Train one model variant");
    std::string tr_data, tr_variant, tr_preset, tr_ckpt;
    tr->add_option("--data", tr_data, "Feature file");
    tr->add_option("--variant", tr_variant, "text, image, concat, fixed or full");
    tr->add_option("--preset", tr_preset, "paper-protocol: lr 1e-5, batch 32, 10 epochs");
    tr->add_option("--checkpoint", tr_ckpt, "Checkpoint path (default <out>/checkpoint_<variant>.mmck)");

    auto* ev = app.add_subcommand("eval", "Metrics of a checkpoint on a data split");
    std::string ev_ckpt, ev_data, ev_split = "test";
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--data", ev_data, "Feature file");
    ev->add_option("--split", ev_split, "train, val, test or all");

    auto* gs = app.add_subcommand("gate-stats", "Gating-weight statistics of a full-model checkpoint");
    std::string gs_ckpt, gs_data, gs_split = "test";
    std::optional<double> gs_threshold;
    gs->add_option("--checkpoint", gs_ckpt, "Checkpoint file")->required();
    gs->add_option("--data", gs_data, "Feature file");
    gs->add_option("--threshold", gs_threshold, "Dominance threshold (default 0.2)");
    gs->add_option("--split", gs_split, "train, val, test or all");

    auto* ab = app.add_subcommand("ablate", "Train and test all five variants");
    std::string ab_data;
    ab->add_option("--data", ab_data, "Feature file");

    auto* pe = app.add_subcommand("perturb", "Full model under modality perturbations");
    std::string pe_data, pe_dir;
    pe->add_option("--data", pe_data, "Feature file");
    pe->add_option("--checkpoint-dir", pe_dir, "Directory holding checkpoint_<variant>.mmck (default <out>)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "mmfusion: error[usage]: " << one_line(e.what()) << '\n';
        return kUsage;
    }

    try {
        RunConfig cfg = resolve_config(g);
        if (*gen) return cmd_gen_data(cfg, gen_output);
        if (*tr) return cmd_train(cfg, tr_data, tr_variant, tr_preset, tr_ckpt);
        if (*ev) return cmd_eval(cfg, ev_ckpt, ev_data, ev_split);
        if (*gs) return cmd_gate_stats(cfg, gs_ckpt, gs_data, gs_threshold, gs_split);
        if (*ab) return cmd_ablate(cfg, ab_data);
        if (*pe) return cmd_perturb(cfg, pe_data, pe_dir);
    } catch (const CliFailure& f) {
        std::cerr << "mmfusion: error[" << code_name(f.code) << "]: " << one_line(f.message) << '\n';
        return f.code;
    } catch (const ConfigError& e) {
        std::cerr << "mmfusion: error[usage]: " << one_line(e.what()) << '\n';
        return kUsage;
    } catch (const LoadError& e) {
        std::cerr << "mmfusion: error[data]: " << one_line(e.what()) << '\n';
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "mmfusion: error[data]: " << one_line(e.what()) << '\n';
        return kData;
    }
    return kUsage;
}
