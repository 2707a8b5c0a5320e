#include "support.hpp"

#include "proton/config.hpp"
#include "proton/text.hpp"

#include <doctest.h>

using namespace proton;

TEST_SUITE("config") {

TEST_CASE("paper preset mirrors the training table") {
    const RunConfig c = RunConfig::for_preset(Preset::paper);
    CHECK(c.train.episodes_per_epoch == 200);
    CHECK(c.train.epochs == 1000);
    CHECK(c.train.lr == 0.001);
    CHECK(c.train.lambda == 0.4);
    CHECK(c.seed == 42);
    CHECK(c.train.episode.graphs_per_class == 4);
    CHECK(c.train.episode.images_per_graph == 5);
    CHECK(c.eval.episodes == 100);
    CHECK(c.model.encoder.norm_mean[0] == 0.485);
    CHECK(c.model.encoder.norm_mean[2] == 0.406);
}

TEST_CASE("config text round-trips through entries") {
    RunConfig c = RunConfig::for_preset(Preset::tiny);
    c.set("train.lambda", "0.25");
    c.set("model.layer_dims", "64,48,16");
    c.set("data.synthetic", "12x9");
    const RunConfig back = load_run_config(c.to_text());
    CHECK(back.entries() == c.entries());
    CHECK(back.preset == Preset::tiny);
    CHECK(back.model.pgnn.layer_dims == std::vector<Index>{64, 48, 16});
}

TEST_CASE("random overrides survive a text round trip") {
    Rng rng(31);
    std::uniform_int_distribution<int> small(1, 9);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        RunConfig c = RunConfig::for_preset(t % 2 ? Preset::tiny : Preset::paper);
        c.set("episode.ways", std::to_string(small(rng) + 1));
        c.set("episode.graphs_per_class", std::to_string(small(rng)));
        c.set("train.lambda", format_double(unit(rng)));
        c.set("train.lr", format_double(unit(rng) * 1e-2));
        c.set("model.align_strength", format_double(unit(rng)));
        c.set("eval.backfill_noise", format_double(unit(rng) / 7.0));
        c.set("run.seed", std::to_string(rng() % 100000));
        const RunConfig back = load_run_config(c.to_text());
        CHECK(back.entries() == c.entries());
        CHECK(back.train.lambda == c.train.lambda);
        CHECK(back.train.lr == c.train.lr);
    }
}

TEST_CASE("unknown and repeated keys are rejected") {
    CHECK_THROWS_WITH_AS(load_run_config("[train]\nlearning_rate = 0.1\n"), doctest::Contains("train.learning_rate"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(load_run_config("[nope]\nways = 3\n"), doctest::Contains("nope.ways"), ConfigError);
    CHECK_THROWS_WITH_AS(load_run_config("[train]\nlambda = 0.1\nlambda = 0.2\n"), doctest::Contains("twice"),
                         ConfigError);
    CHECK_THROWS_AS(load_run_config("ways = 3\n"), ConfigError);
    CHECK_THROWS_AS(load_run_config("[train\nways = 3\n"), ConfigError);
    CHECK_THROWS_AS(load_run_config("[train]\nways\n"), ConfigError);
}

TEST_CASE("comments and blank lines are ignored") {
    const RunConfig c = load_run_config("# top\n\n[run]\npreset = tiny  # inline\n[train]\n  lambda=0.5\n");
    CHECK(c.preset == Preset::tiny);
    CHECK(c.train.lambda == 0.5);
}

TEST_CASE("every field is validated before any compute") {
    auto finalized = [](const std::string& key, const std::string& value) {
        RunConfig c = RunConfig::for_preset(Preset::tiny);
        c.set("data.synthetic", "10x10");
        c.set(key, value);
        c.finalize();
    };
    CHECK_NOTHROW(finalized("train.lambda", "1"));
    CHECK_THROWS_AS(finalized("train.lambda", "1.5"), ConfigError);
    CHECK_THROWS_AS(finalized("train.lambda", "-0.1"), ConfigError);
    CHECK_THROWS_AS(finalized("episode.ways", "1"), ConfigError);
    CHECK_THROWS_AS(finalized("train.epochs", "0"), ConfigError);
    CHECK_THROWS_AS(finalized("train.lr", "abc"), ConfigError);
    CHECK_THROWS_AS(finalized("model.layer_dims", "32,32"), ConfigError);
    CHECK_THROWS_AS(finalized("eval.split", "everything"), ConfigError);
    CHECK_THROWS_AS(finalized("data.path", "x.csv"), ConfigError);
    CHECK_THROWS_AS(finalized("run.seed", "-3"), ConfigError);

    RunConfig none = RunConfig::for_preset(Preset::tiny);
    CHECK_THROWS_WITH_AS(none.finalize(), doctest::Contains("no dataset"), ConfigError);
}

TEST_CASE("preset in the text must agree with the override") {
    CHECK(load_run_config("[run]\npreset = tiny\n", "tiny").preset == Preset::tiny);
    CHECK(load_run_config("[run]\npreset = tiny\n", "paper").preset == Preset::paper);
    CHECK_THROWS_AS(load_run_config("", "huge"), ConfigError);
}

TEST_CASE("synthetic shape parsing") {
    CHECK(parse_synthetic_shape("10x20") == std::pair<Index, Index>{10, 20});
    CHECK_THROWS_AS(parse_synthetic_shape("10"), ConfigError);
    CHECK_THROWS_AS(parse_synthetic_shape("0x5"), ConfigError);
    CHECK_THROWS_AS(parse_synthetic_shape("ax5"), ConfigError);
}

TEST_CASE("ablation variants change only their module") {
    const RunConfig base = RunConfig::for_preset(Preset::tiny);
    RunConfig single = base;
    apply_variant(single, Variant::single_impression);
    CHECK(single.train.episode.graphs_per_class == 1);
    CHECK(single.train.episode.images_per_graph == 1);
    CHECK_FALSE(single.model.pgnn.message_passing);

    RunConfig pooled = base;
    apply_variant(pooled, Variant::no_prototype_node);
    CHECK(pooled.model.pgnn.no_prototype_node);
    CHECK(pooled.train.episode.graphs_per_class == base.train.episode.graphs_per_class);

    RunConfig isolated = base;
    apply_variant(isolated, Variant::no_cross_graph);
    CHECK(isolated.model.pgnn.no_cross_graph_alignment);

    RunConfig aligned = base;
    apply_variant(aligned, Variant::query_alignment);
    CHECK(aligned.model.pgnn.query_alignment_enabled);

    for (Variant v : {Variant::single_impression, Variant::no_cross_graph, Variant::query_alignment,
                      Variant::no_prototype_node}) {
        CHECK(parse_variant(to_string(v)) == v);
    }
    CHECK_THROWS_AS(parse_variant("no_encoder"), ConfigError);
}

}  // TEST_SUITE
