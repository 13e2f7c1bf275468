#include "doctest.h"
#include "mmfusion/run_config.hpp"

using namespace mmfusion;

TEST_CASE("defaults and canonical text round-trip") {
    const RunConfig d;
    CHECK(d.data.synthetic.n_samples == 4000);
    CHECK(d.eval.threshold == 0.2);
    CHECK(d.eval.sigmas == std::vector<double>{0.5, 1.0});
    CHECK(d.train.learning_rate == 1e-3);
    CHECK_NOTHROW(d.validate());
    CHECK(parse_run_config(d.to_text()).to_text() == d.to_text());

    RunConfig c;
    c.set_dotted("model.variant=concat");
    c.set_dotted("eval.sigmas=0.25, 2");
    c.set("train", "learning_rate", "3e-4");
    c.set_dotted("data.path=features.mmfn");
    const RunConfig back = parse_run_config(c.to_text());
    CHECK(back.model.variant == ModelVariant::ConcatFusion);
    CHECK(back.eval.sigmas == std::vector<double>{0.25, 2.0});
    CHECK(back.train.learning_rate == 3e-4);
    CHECK(back.data.path == "features.mmfn");
    CHECK(back.to_text() == c.to_text());
}

TEST_CASE("parsing sections, comments and overrides") {
    const RunConfig c = parse_run_config(
        "# experiment\n"
        "[data]\n"
        "n_samples = 100   \n"
        "\n"
        "[train]\n"
        "max_epochs=4\n");
    CHECK(c.data.synthetic.n_samples == 100);
    CHECK(c.train.max_epochs == 4);
    CHECK(c.train.batch_size == 32);
}

TEST_CASE("unknown or malformed entries are rejected") {
    CHECK_THROWS_AS(parse_run_config("[data]\ncolour = red\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[plots]\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("n_samples = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[data]\nn_samples\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[data]\nn_samples = many\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[model]\nvariant = late\n"), ConfigError);
    RunConfig c;
    CHECK_THROWS_AS(c.set_dotted("train.learning_rate"), ConfigError);
}

TEST_CASE("validation names the offending key") {
    RunConfig c;
    c.set_dotted("data.n_samples=0");
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("data.n_samples"), ConfigError);
    RunConfig s;
    s.set_dotted("data.split_val=0.5");
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("seed and preset helpers") {
    RunConfig c;
    c.set_all_seeds(42);
    CHECK(c.data.synthetic.seed == 42);
    CHECK(c.data.split_seed == 42);
    CHECK(c.model.init_seed == 42);
    CHECK(c.train.seed == 42);
    CHECK(c.eval.noise_seed == 42);
    c.apply_paper_protocol();
    CHECK(c.train.learning_rate == 1e-5);
    CHECK(c.train.batch_size == 32);
    CHECK(c.train.max_epochs == 10);

    const HyperConfig h = c.hyper_config(FeatureDims{5, 7, 1, 1});
    CHECK(h.text_dim == 5);
    CHECK(h.image_dim == 7);
    CHECK(h.key_dim == h.common_dim);
    CHECK(h.init_seed == 42);
}
