// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "mmfusion/evaluation.hpp"
#include "mmfusion/run_config.hpp"
#include "test_support.hpp"

using namespace mmfusion;
using testsupport::random_matrix;
using testsupport::random_record;
using testsupport::small_config;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Shared five-seed experiment on the default synthetic data.

struct SeedRun {
    std::map<ModelVariant, Checkpoint> checkpoints;
    std::map<ModelVariant, double> test_f1;
    DatasetSplits splits;
};

std::vector<SeedRun>& seed_runs(double* elapsed = nullptr) {
    static std::vector<SeedRun> runs;
    static double took = 0.0;
    if (runs.empty()) {
        const auto t0 = Clock::now();
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            RunConfig cfg;
            cfg.set_all_seeds(seed);
            SeedRun r;
            r.splits = split_dataset(generate_synthetic(cfg.data.synthetic), cfg.data.split, cfg.data.split_seed);
            for (const auto& row : run_ablation(r.splits, cfg.hyper_config(r.splits.train.dims), cfg.train)) {
                r.checkpoints[row.variant] = row.training.checkpoint;
                r.test_f1[row.variant] = row.test.f1;
            }
            runs.push_back(std::move(r));
        }
        took = seconds_since(t0);
    }
    if (elapsed != nullptr) *elapsed = took;
    return runs;
}

// ---------------------------------------------------------------------------

Verdict gradient_fidelity() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::size_t checks = 0;
    for (ModelVariant v : kAllVariants) {
        for (std::size_t len : {1u, 3u}) {
            for (std::uint64_t seed = 1; seed <= 10; ++seed) {
                std::mt19937_64 rng(seed * 1000 + len * 10 + static_cast<std::uint64_t>(v));
                const HyperConfig c = small_config(v, seed);
                std::vector<FeatureRecord> batch;
                for (int i = 0; i < 4; ++i) batch.push_back(random_record(c, len, len, i % 2, rng));
                const ModelParams p = init_params(c);
                ScalarGraph f = [&](Tape& t, std::span<const Var> vars) {
                    BoundParams bound(p, vars);
                    std::vector<const FeatureRecord*> ptrs;
                    for (const auto& r : batch) ptrs.push_back(&r);
                    return batch_loss(t, bound, c, ptrs);
                };
                worst = std::max(worst, finite_difference_check(f, p.values(), 1e-5));
                ++checks;
            }
        }
    }
    const double took = seconds_since(t0);
    return {worst <= 1e-4 && took < 30.0, std::to_string(checks) + " checks, max rel err " + fmt("%.3g", worst) +
                                              ", " + fmt("%.2f", took) + " s"};
}

Verdict equation_fidelity() {
    double closed = 0.0, rowsum = 0.0;
    bool bitwise = true;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 rng(seed);
        const HyperConfig full = small_config(ModelVariant::FullCadfm, seed);
        ModelParams p = init_params(full);
        for (auto& e : p.entries()) e.value = random_matrix(e.value.rows(), e.value.cols(), rng, -1.0, 1.0);

        const Matrix ht = random_matrix(1, 4, rng);
        const Matrix hi = random_matrix(1, 4, rng);
        const auto [at, ai] = cross_attend(p, ht, hi, 4);
        const Matrix vt = testsupport::naive_matmul(hi, p.get("W_VI"));
        const Matrix vi = testsupport::naive_matmul(ht, p.get("W_VT"));
        for (std::size_t j = 0; j < 4; ++j) {
            closed = std::max(closed, std::abs(at(0, j) - (vt(0, j) + ht(0, j))));
            closed = std::max(closed, std::abs(ai(0, j) - (vi(0, j) + hi(0, j))));
        }

        Tape tape;
        const Matrix s = softmax_rows(tape.constant(random_matrix(5, 7, rng, -50.0, 50.0))).value();
        for (std::size_t r = 0; r < 5; ++r) {
            double sum = 0.0;
            for (double v : s.row(r)) sum += v;
            rowsum = std::max(rowsum, std::abs(sum - 1.0));
        }

        HyperConfig fixed = full;
        fixed.variant = ModelVariant::FixedAttention;
        std::vector<NamedMatrix> shared;
        for (const auto& [name, shape] : param_layout(fixed)) shared.push_back({name, p.get(name)});
        const ModelParams q(shared);
        const FeatureRecord rec = random_record(full, 1 + seed % 3, 1 + seed % 2, 0, rng);
        bitwise = bitwise && forward(p, full, rec, ForwardOptions{std::pair{1.0, 1.0}}).logits ==
                                 forward(q, fixed, rec).logits;
    }
    return {closed <= 1e-12 && rowsum <= 1e-12 && bitwise,
            "closed-form err " + fmt("%.3g", closed) + ", softmax row-sum err " + fmt("%.3g", rowsum) +
                ", pinned gates bitwise " + (bitwise ? "yes" : "no")};
}

double mean_f1(ModelVariant v) {
    double s = 0.0;
    for (const auto& r : seed_runs()) s += r.test_f1.at(v);
    return s / static_cast<double>(seed_runs().size());
}

Verdict ablation_ordering() {
    double took = 0.0;
    seed_runs(&took);
    const double text = mean_f1(ModelVariant::TextOnly), image = mean_f1(ModelVariant::ImageOnly);
    const double concat = mean_f1(ModelVariant::ConcatFusion), fixed = mean_f1(ModelVariant::FixedAttention);
    const double full = mean_f1(ModelVariant::FullCadfm);
    const double single = std::max(text, image);
    const bool ok = full >= fixed - 0.01 && fixed >= concat - 0.01 && concat >= single - 0.01 &&
                    full >= single + 0.01 && took < 180.0;
    return {ok, "mean F1 text " + fmt("%.4f", text) + ", image " + fmt("%.4f", image) + ", concat " +
                    fmt("%.4f", concat) + ", fixed " + fmt("%.4f", fixed) + ", full " + fmt("%.4f", full) + ", " +
                    fmt("%.1f", took) + " s"};
}

Verdict gating_adaptivity() {
    double dt = 0.0, di = 0.0, worst_pct = 0.0;
    for (const auto& r : seed_runs()) {
        const Checkpoint& ck = r.checkpoints.at(ModelVariant::FullCadfm);
        std::map<Provenance, ProvenanceGateMeans> by;
        for (const auto& g : gate_means_by_provenance(ck, r.splits.test)) by[g.provenance] = g;
        const auto& t = by.at(Provenance::TextInformative);
        const auto& i = by.at(Provenance::ImageInformative);
        dt += t.mean_alpha_text - i.mean_alpha_text;
        di += i.mean_alpha_image - t.mean_alpha_image;
        const auto s = gate_stats(ck, r.splits.test);
        worst_pct = std::max(worst_pct, std::abs(s.pct_text_dominant + s.pct_image_dominant + s.pct_balanced - 100.0));
    }
    dt /= 5.0;
    di /= 5.0;
    return {dt >= 0.05 && di >= 0.05 && worst_pct <= 1e-9,
            "alpha_T(text-inf) - alpha_T(image-inf) " + fmt("%.4f", dt) + ", alpha_I(image-inf) - alpha_I(text-inf) " +
                fmt("%.4f", di) + " (need >= 0.05), pct sum err " + fmt("%.3g", worst_pct)};
}

Verdict robustness_ordering() {
    std::map<std::string, double> mean;
    double image_only = 0.0;
    RunConfig defaults;
    const auto scenarios = default_scenarios(defaults.eval.sigmas, defaults.eval.noise_seed);
    for (const auto& r : seed_runs()) {
        PerturbationInputs in{&r.checkpoints.at(ModelVariant::FullCadfm), &r.checkpoints.at(ModelVariant::TextOnly),
                              &r.checkpoints.at(ModelVariant::ImageOnly)};
        for (const auto& row : run_perturbation_suite(in, r.splits.test, scenarios)) {
            if (row.variant == ModelVariant::ImageOnly) {
                image_only += row.metrics.f1 / 5.0;
            } else if (row.variant == ModelVariant::FullCadfm) {
                const std::string key = row.scenario + (row.sigma ? fmt("@%g", *row.sigma) : "");
                mean[key] += row.metrics.f1 / 5.0;
            }
        }
    }
    const double clean = mean["unperturbed"], missing = mean["text_missing"];
    const bool text_mono = clean >= mean["text_noise@0.5"] && mean["text_noise@0.5"] >= mean["text_noise@1"];
    const bool image_mono = clean >= mean["image_noise@0.5"] && mean["image_noise@0.5"] >= mean["image_noise@1"];
    const bool ok = std::abs(missing - image_only) <= 0.08 && missing < clean && text_mono && image_mono;
    return {ok, "text_missing " + fmt("%.4f", missing) + " vs image-only " + fmt("%.4f", image_only) +
                    ", unperturbed " + fmt("%.4f", clean) + ", text noise " + fmt("%.4f", mean["text_noise@0.5"]) +
                    "/" + fmt("%.4f", mean["text_noise@1"]) + ", image noise " +
                    fmt("%.4f", mean["image_noise@0.5"]) + "/" + fmt("%.4f", mean["image_noise@1"])};
}

Verdict metric_correctness() {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> len(0, 12), mode(0, 3);
    std::bernoulli_distribution coin(0.5);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = len(rng), m = mode(rng);
        std::vector<int> y(n), p(n);
        for (int i = 0; i < n; ++i) {
            y[i] = m == 2 ? 0 : coin(rng);
            p[i] = m == 1 ? 0 : coin(rng);
        }
        std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
        for (int i = 0; i < n; ++i) {
            tp += y[i] == 1 && p[i] == 1;
            fp += y[i] == 0 && p[i] == 1;
            tn += y[i] == 0 && p[i] == 0;
            fn += y[i] == 1 && p[i] == 0;
        }
        const double acc = n ? static_cast<double>(tp + tn) / n : 0.0;
        const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double rec = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
        const auto got = compute_metrics(y, p);
        if (!(got.counts == ConfusionCounts{tp, fp, tn, fn}) || got.accuracy != acc || got.precision != prec ||
            got.recall != rec || got.f1 != f1) {
            ++mismatches;
        }
    }
    const auto w = compute_metrics(std::vector<int>{1, 1, 0, 0}, std::vector<int>{1, 0, 1, 0});
    const bool worked = w.accuracy == 0.5 && w.precision == 0.5 && w.recall == 0.5 && w.f1 == 0.5;
    return {mismatches == 0 && worked,
            std::to_string(mismatches) + " mismatches in 1000 cases, worked example " + (worked ? "ok" : "wrong")};
}

int run_cli(const fs::path& dir, const std::string& args) {
    const std::string cmd = "cd '" + dir.string() + "' && '" MMFUSION_CLI "' " + args + " >>log.txt 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// gen-data, ablation, perturbation and gate stats through the CLI; 0 on success.
int full_suite(const fs::path& dir) {
    for (const char* args : {"--out out gen-data", "--out out ablate --data out/features.mmfn",
                             "--out out perturb --data out/features.mmfn",
                             "--out out gate-stats --checkpoint out/checkpoint_full.mmck --data out/features.mmfn"}) {
        if (const int rc = run_cli(dir, args); rc != 0) return rc;
    }
    return 0;
}

Verdict determinism_and_persistence() {
    const auto a = testsupport::scratch_dir("acceptance_run_a");
    const auto b = testsupport::scratch_dir("acceptance_run_b");
    if (full_suite(a) != 0 || full_suite(b) != 0) return {false, "CLI suite failed"};
    std::size_t files = 0, differing = 0;
    for (const auto& e : fs::directory_iterator(a / "out")) {
        ++files;
        if (testsupport::slurp(e.path()) != testsupport::slurp(b / "out" / e.path().filename())) ++differing;
    }

    const Dataset ds = load_dataset(a / "out/features.mmfn");
    const auto dir = testsupport::scratch_dir("acceptance_persist");
    save_dataset(ds, dir / "copy.mmfn");
    const bool data_rt = load_dataset(dir / "copy.mmfn") == ds &&
                         testsupport::slurp(dir / "copy.mmfn") == testsupport::slurp(a / "out/features.mmfn");

    bool ck_rt = true, fwd = true;
    for (ModelVariant v : kAllVariants) {
        const fs::path path = a / "out" / ("checkpoint_" + std::string(variant_name(v)) + ".mmck");
        const Checkpoint ck = load_checkpoint(path);
        save_checkpoint(ck, dir / "copy.mmck");
        const Checkpoint back = load_checkpoint(dir / "copy.mmck");
        ck_rt = ck_rt && back == ck && testsupport::slurp(dir / "copy.mmck") == testsupport::slurp(path);
        for (std::size_t i = 0; i < 25; ++i) {
            fwd = fwd && forward(back.params, back.model, ds.records[i]).logits ==
                             forward(ck.params, ck.model, ds.records[i]).logits;
        }
    }
    return {differing == 0 && files > 0 && data_rt && ck_rt && fwd,
            std::to_string(files) + " output files, " + std::to_string(differing) + " differ on rerun; feature " +
                (data_rt ? "lossless" : "LOSSY") + ", checkpoint " + (ck_rt ? "lossless" : "LOSSY") +
                ", reloaded forward " + (fwd ? "bitwise equal" : "DIFFERS")};
}

Verdict adamw_correctness() {
    ModelParams p({{"theta", Matrix{{1.0}}}});
    OptimizerState s(p);
    TrainConfig c;
    c.learning_rate = 0.1;
    c.weight_decay = 0.0;
    adamw_step(p, std::vector<Matrix>{Matrix{{1.0}}}, s, c);
    const double theta = p.get("theta")(0, 0);
    const double hand = 1.0 - 0.1 * 1.0 / (std::sqrt(1.0) + 1e-8);
    const double err = std::abs(theta - hand);

    const HyperConfig model = small_config(ModelVariant::FullCadfm, 3);
    ModelParams q = init_params(model);
    const ModelParams before = q;
    OptimizerState sq(q);
    std::vector<Matrix> zeros;
    for (const auto& e : q.entries()) zeros.emplace_back(e.value.rows(), e.value.cols());
    adamw_step(q, zeros, sq, c);
    const bool identity = q == before;
    return {err <= 1e-12 && std::abs(theta - 0.9) <= 1e-7 && identity,
            "theta " + fmt("%.12f", theta) + ", recurrence err " + fmt("%.3g", err) + ", zero step identity " +
                (identity ? "yes" : "no")};
}

Verdict end_to_end_runtime() {
    const auto dir = testsupport::scratch_dir("acceptance_timed");
    const auto t0 = Clock::now();
    const int rc = full_suite(dir);
    const double took = seconds_since(t0);
    return {rc == 0 && took < 300.0, "exit " + std::to_string(rc) + ", " + fmt("%.2f", took) + " s"};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
        {"gradient fidelity", gradient_fidelity},
        {"equation fidelity", equation_fidelity},
        {"ablation ordering", ablation_ordering},
        {"gating adaptivity", gating_adaptivity},
        {"robustness ordering", robustness_ordering},
        {"metric correctness", metric_correctness},
        {"determinism and persistence", determinism_and_persistence},
        {"AdamW correctness", adamw_correctness},
        {"end-to-end runtime", end_to_end_runtime},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        failed += v.pass ? 0 : 1;
        std::printf("%s criterion %zu: %s (%s)\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                    v.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
