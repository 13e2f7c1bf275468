#include <cmath>
#include <random>

#include "doctest.h"
#include "mmfusion/error.hpp"
#include "mmfusion/evaluation.hpp"
#include "test_support.hpp"

using namespace mmfusion;
using testsupport::random_record;
using testsupport::small_config;

namespace {

struct BruteForce {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    double accuracy = 0, precision = 0, recall = 0, f1 = 0;
};

BruteForce brute_force(const std::vector<int>& y, const std::vector<int>& p) {
    BruteForce b;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] == 1 && p[i] == 1) ++b.tp;
        if (y[i] == 0 && p[i] == 1) ++b.fp;
        if (y[i] == 0 && p[i] == 0) ++b.tn;
        if (y[i] == 1 && p[i] == 0) ++b.fn;
    }
    const double n = static_cast<double>(y.size());
    if (!y.empty()) b.accuracy = static_cast<double>(b.tp + b.tn) / n;
    if (b.tp + b.fp > 0) b.precision = static_cast<double>(b.tp) / static_cast<double>(b.tp + b.fp);
    if (b.tp + b.fn > 0) b.recall = static_cast<double>(b.tp) / static_cast<double>(b.tp + b.fn);
    if (b.precision + b.recall > 0) b.f1 = 2 * b.precision * b.recall / (b.precision + b.recall);
    return b;
}

Dataset tiny_dataset(const HyperConfig& c, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Dataset ds;
    ds.dims = {c.text_dim, c.image_dim, 1, 1};
    for (std::size_t i = 0; i < n; ++i) {
        auto r = random_record(c, 1, 1, static_cast<int>(i % 2), rng);
        r.provenance = static_cast<Provenance>(1 + i % 3);
        ds.records.push_back(r);
    }
    return ds;
}

}  // namespace

TEST_CASE("metrics agree with a brute-force confusion oracle") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> len(0, 12);
    std::uniform_int_distribution<int> mode(0, 4);
    std::bernoulli_distribution coin(0.5);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = len(rng);
        const int m = mode(rng);  // 0: random, 1: no positive predictions, 2: no positive labels, 3: all wrong
        std::vector<int> y(n), p(n);
        for (int i = 0; i < n; ++i) {
            y[i] = m == 2 ? 0 : coin(rng);
            p[i] = m == 1 ? 0 : m == 3 ? 1 - y[i] : coin(rng);
        }
        const BruteForce want = brute_force(y, p);
        const MetricsReport got = compute_metrics(y, p);
        CHECK(got.counts == ConfusionCounts{want.tp, want.fp, want.tn, want.fn});
        CHECK(got.accuracy == want.accuracy);
        CHECK(got.precision == want.precision);
        CHECK(got.recall == want.recall);
        CHECK(got.f1 == want.f1);
        const double alt = want.tp == 0 ? 0.0 : 2.0 * want.tp / (2.0 * want.tp + want.fp + want.fn);
        CHECK(std::abs(got.f1 - alt) <= 1e-12);
    }
}

TEST_CASE("metric worked examples") {
    const MetricsReport half = compute_metrics(std::vector<int>{1, 1, 0, 0}, std::vector<int>{1, 0, 1, 0});
    CHECK(half.accuracy == 0.5);
    CHECK(half.precision == 0.5);
    CHECK(half.recall == 0.5);
    CHECK(half.f1 == 0.5);
    CHECK(half.counts == ConfusionCounts{1, 1, 1, 1});

    const std::vector<int> y = {1, 0, 1, 1, 0};
    const MetricsReport perfect = compute_metrics(y, y);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);
    CHECK(perfect.f1 == 1.0);

    const MetricsReport none = compute_metrics(y, std::vector<int>(5, 0));
    CHECK(none.precision == 0.0);
    CHECK(none.f1 == 0.0);

    CHECK_THROWS_AS(compute_metrics(y, std::vector<int>{1}), InputError);
    CHECK_THROWS_AS(compute_metrics(std::vector<int>{2}, std::vector<int>{1}), InputError);
}

TEST_CASE("gate statistics from alpha pairs") {
    const std::vector<std::pair<double, double>> same(7, {0.6, 0.55});
    const auto s = gate_stats_from_pairs(same, 0.2);
    CHECK(s.std_alpha_text == 0.0);
    CHECK(s.std_alpha_image == 0.0);
    CHECK(s.pct_balanced == 100.0);

    const std::vector<std::pair<double, double>> split = {{0.9, 0.1}, {0.1, 0.9}};
    const auto d = gate_stats_from_pairs(split, 0.2);
    CHECK(d.pct_text_dominant == 50.0);
    CHECK(d.pct_image_dominant == 50.0);
    CHECK(d.pct_balanced == 0.0);
    CHECK(d.mean_alpha_text == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(d.mean_alpha_image == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(d.std_alpha_text == doctest::Approx(0.4).epsilon(1e-12));

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::pair<double, double>> many(333);
    for (auto& a : many) a = {u(rng), u(rng)};
    const auto m = gate_stats_from_pairs(many, 0.2);
    CHECK(m.n_text_dominant + m.n_image_dominant + m.n_balanced == 333);
    CHECK(std::abs(m.pct_text_dominant + m.pct_image_dominant + m.pct_balanced - 100.0) <= 1e-9);
}

TEST_CASE("gate statistics of a checkpoint") {
    const HyperConfig full = small_config(ModelVariant::FullCadfm, 2);
    const Checkpoint ck{full, TrainConfig{}, init_params(full), 0.0, 0};
    const Dataset ds = tiny_dataset(full, 30, 3);
    const auto g = gate_stats(ck, ds, 0.2);
    CHECK(g.n_text_dominant + g.n_image_dominant + g.n_balanced == 30);
    const auto groups = gate_means_by_provenance(ck, ds);
    REQUIRE(groups.size() == 3);
    CHECK(groups[0].provenance == Provenance::TextInformative);
    CHECK(groups[0].count == 10);

    const HyperConfig concat = small_config(ModelVariant::ConcatFusion, 2);
    const Checkpoint cc{concat, TrainConfig{}, init_params(concat), 0.0, 0};
    CHECK_THROWS_WITH_AS(gate_stats(cc, ds), doctest::Contains("variant has no gate"), UsageError);
}

TEST_CASE("perturbations") {
    std::mt19937_64 rng(4);
    const HyperConfig c = small_config(ModelVariant::FullCadfm, 1);
    const FeatureRecord r = random_record(c, 2, 3, 1, rng);
    const FeatureRecord copy = r;

    const auto tm = apply_perturbation(r, PerturbationScenario::text_missing());
    CHECK(r == copy);
    for (double v : tm.text_features.values()) CHECK(v == 0.0);
    CHECK(tm.image_features == r.image_features);

    const auto im = PerturbationScenario::image_missing();
    const auto tmi = PerturbationScenario::text_missing();
    CHECK(apply_perturbation(apply_perturbation(r, tmi), im) == apply_perturbation(apply_perturbation(r, im), tmi));

    const auto tiny = apply_perturbation(r, PerturbationScenario::text_noise(1e-12, 5));
    CHECK(max_abs_diff(tiny.text_features, r.text_features) < 1e-10);
    CHECK(tiny.image_features == r.image_features);

    CHECK_THROWS_AS(apply_perturbation(r, PerturbationScenario::image_noise(0.0, 1)), InputError);
    CHECK(apply_perturbation(r, PerturbationScenario::image_noise(0.5, 9)) ==
          apply_perturbation(r, PerturbationScenario::image_noise(0.5, 9)));
}

TEST_CASE("added noise has the requested moments") {
    FeatureRecord r;
    r.text_features = Matrix(100, 100, 2.0);
    r.image_features = Matrix(1, 1);
    const auto n = apply_perturbation(r, PerturbationScenario::text_noise(1.0, 11));
    double mean = 0.0, sq = 0.0;
    for (double v : n.text_features.values()) mean += v - 2.0;
    mean /= 10000.0;
    for (double v : n.text_features.values()) sq += (v - 2.0 - mean) * (v - 2.0 - mean);
    CHECK(std::abs(mean) <= 0.05);
    CHECK(std::abs(std::sqrt(sq / 10000.0) - 1.0) <= 0.05);
}

TEST_CASE("scenario list order") {
    const std::vector<double> sigmas = {0.5, 1.0};
    const auto s = default_scenarios(sigmas, 3);
    REQUIRE(s.size() == 6);
    CHECK(scenario_name(s[0].kind) == "text_missing");
    CHECK(scenario_name(s[1].kind) == "image_missing");
    CHECK(scenario_name(s[2].kind) == "text_noise");
    CHECK(s[3].sigma == 1.0);
    CHECK(scenario_name(s[5].kind) == "image_noise");
}

TEST_CASE("perturbation suite structure") {
    const HyperConfig full = small_config(ModelVariant::FullCadfm, 2);
    const HyperConfig text = small_config(ModelVariant::TextOnly, 2);
    const Checkpoint f{full, TrainConfig{}, init_params(full), 0.0, 0};
    const Checkpoint t{text, TrainConfig{}, init_params(text), 0.0, 0};
    const Dataset ds = tiny_dataset(full, 12, 5);

    const auto base = run_perturbation_suite({&f, &t, nullptr}, ds, {});
    REQUIRE(base.size() == 1);
    CHECK(base[0].scenario == "unperturbed");

    const std::vector<double> sigmas = {0.5};
    const auto scen = default_scenarios(sigmas, 1);
    const auto rows = run_perturbation_suite({&f, &t, nullptr}, ds, scen);
    REQUIRE(rows.size() == 1 + scen.size() + 1);
    CHECK(rows[1].scenario == "text_missing");
    CHECK(rows[3].sigma == 0.5);
    CHECK(rows.back().variant == ModelVariant::TextOnly);
    CHECK(rows.back().metrics == evaluate_dataset(t.params, t.model, ds));
    CHECK(run_perturbation_suite({&f, &t, nullptr}, ds, scen)[4].metrics == rows[4].metrics);

    CHECK_THROWS_AS(run_perturbation_suite({nullptr, nullptr, nullptr}, ds, scen), InputError);
    CHECK_THROWS_AS(run_perturbation_suite({&t, nullptr, nullptr}, ds, scen), InputError);
    CHECK_THROWS_AS(run_perturbation_suite({&f, &f, nullptr}, ds, scen), InputError);
}

TEST_CASE("report lines") {
    MetricsReport m = compute_metrics(std::vector<int>{1, 0}, std::vector<int>{1, 1});
    CHECK(metrics_line("full", m) ==
          "{\"variant\":\"full\",\"accuracy\":0.5,\"precision\":0.5,\"recall\":1,\"f1\":0.66666666666666663,"
          "\"tp\":1,\"fp\":1,\"tn\":0,\"fn\":0}");
    PerturbationRow row{ModelVariant::FullCadfm, "text_noise", 0.5, m};
    CHECK(perturbation_line(row).find("\"scenario\":\"text_noise\",\"sigma\":0.5,") != std::string::npos);
    GateStatsReport g;
    CHECK(gate_stats_line("full", g).find("\"threshold\":0.20000000000000001}") != std::string::npos);
}

TEST_CASE("ablation rows come in table order") {
    SyntheticSpec spec;
    spec.n_samples = 200;
    spec.dims = {8, 6, 1, 1};
    const auto splits = split_dataset(generate_synthetic(spec), SplitFractions{}, 1);
    HyperConfig model = small_config(ModelVariant::FullCadfm, 1);
    TrainConfig c;
    c.max_epochs = 2;
    const auto rows = run_ablation(splits, model, c);
    REQUIRE(rows.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(rows[i].variant == kAllVariants[i]);
    const auto again = run_ablation(splits, model, c);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(again[i].test == rows[i].test);
        CHECK(again[i].training.checkpoint == rows[i].training.checkpoint);
    }
}
