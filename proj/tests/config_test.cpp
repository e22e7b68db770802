#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "anncache/config.hpp"
#include "anncache/errors.hpp"
#include "anncache/rollout.hpp"

using anncache::ConfigMap;
using anncache::ConfigView;
using anncache::RolloutConfig;

namespace {

ConfigMap parse(const std::string& text) {
    std::istringstream in(text);
    return anncache::parse_config_text(in);
}

}  // namespace

TEST_CASE("key=value lines parse with comments and whitespace") {
    auto map = parse(
        "# a comment\n"
        "\n"
        "  frames = 12  \n"
        "name=drift run\n"
        "expr=a=b\n"
        "crlf=ok\r\n");
    CHECK(map.size() == 4);
    CHECK(map.at("frames") == "12");
    CHECK(map.at("name") == "drift run");
    CHECK(map.at("expr") == "a=b");  // split at the first '='
    CHECK(map.at("crlf") == "ok");
}

TEST_CASE("malformed config lines are rejected") {
    CHECK_THROWS_AS(parse("frames\n"), anncache::ConfigError);
    CHECK_THROWS_AS(parse("=12\n"), anncache::ConfigError);
    CHECK_THROWS_AS(parse("a=1\na=2\n"), anncache::ConfigError);
}

TEST_CASE("config files load or fail loudly") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "anncache_config_test.cfg";
    {
        std::ofstream out(path);
        out << "frames=3\nseed=9\n";
    }
    auto map = anncache::load_config_file(path.string());
    CHECK(map.at("frames") == "3");
    CHECK(map.at("seed") == "9");
    fs::remove(path);
    CHECK_THROWS_AS(anncache::load_config_file((fs::temp_directory_path() / "nope.cfg").string()),
                    anncache::IoError);
}

TEST_CASE("overrides replace and extend") {
    auto map = parse("frames=3\n");
    anncache::apply_override(map, "frames=9");
    anncache::apply_override(map, "seed=1");
    CHECK(map.at("frames") == "9");
    CHECK(map.at("seed") == "1");
    CHECK_THROWS_AS(anncache::apply_override(map, "garbage"), anncache::ConfigError);
}

TEST_CASE("typed reads parse or fall back") {
    auto map = parse("count=7\nratio=0.25\nname=x\nneg=-3\nfrac=1.5e-2\nbadint=12x\n");
    ConfigView v(map);
    CHECK(v.get_u64("count", 0) == 7);
    CHECK(v.get_u64("missing", 5) == 5);
    CHECK(v.get_f64("ratio", 0.0) == 0.25);
    CHECK(v.get_f64("frac", 0.0) == 0.015);
    CHECK(v.get_f64("missing2", 2.5) == 2.5);
    CHECK(v.get_str("name", "y") == "x");
    CHECK(v.get_str("missing3", "y") == "y");
    CHECK(v.has("count"));
    CHECK(!v.has("missing"));
    CHECK_THROWS_AS(v.get_u64("neg", 0), anncache::ConfigError);
    CHECK_THROWS_AS(v.get_u64("badint", 0), anncache::ConfigError);
    CHECK_THROWS_AS(v.get_f64("name", 0.0), anncache::ConfigError);
}

TEST_CASE("consumption tracking flags unread keys") {
    auto map = parse("frames=3\nstray=1\n");
    ConfigView v(map);
    v.get_u64("frames", 0);
    CHECK_THROWS_WITH_AS(v.require_all_consumed(),
                         "config: unrecognized key 'stray'", anncache::ConfigError);
    v.get_u64("stray", 0);
    CHECK_NOTHROW(v.require_all_consumed());
}

TEST_CASE("rollout config round-trips through a map") {
    SUBCASE("defaults survive an empty map") {
        auto c = RolloutConfig::from_map({});
        CHECK(c.frames == 200);
        CHECK(c.tokens_per_frame == 48);
        CHECK(c.merge_tol == 0.9);
        CHECK(c.backend == anncache::AnnBackend::Quant);
        CHECK(c.bits == 8);
        CHECK(c.representative == anncache::RepresentativePolicy::Last);
        CHECK(c.methods.size() == 5);
        CHECK(c.method_enabled("tempcache"));
    }
    SUBCASE("every field is reachable by key") {
        auto c = RolloutConfig::from_map(parse(
            "frames=10\ntokens_per_frame=8\nd=16\nd_v=12\ntracks=4\n"
            "track_drift=0.05\nbirth_rate=0.5\nprompt_len=6\n"
            "relevant_prompt_per_frame=2\nseed=7\nmerge_tol=0.8\nbackend=lsh\n"
            "bits=4\ndense_warmup_steps=3\nqueries_per_frame=5\nquery_noise=0.2\n"
            "query_gain=12\nvalue_walk=0.1\ntrack_cos_floor=0.9\nsteps_per_frame=2\n"
            "target_density=0.4\ntables=6\nbits_per_table=9\nmin_keep=2\n"
            "representative=medoid\nmethods=tempcache,annsa\n"));
        CHECK(c.frames == 10);
        CHECK(c.d_v == 12);
        CHECK(c.backend == anncache::AnnBackend::Lsh);
        CHECK(c.bits == 4);
        CHECK(c.representative == anncache::RepresentativePolicy::Medoid);
        CHECK(c.ann_params().tables == 6);
        CHECK(c.ann_params().bits_per_table == 9);
        CHECK(c.ann_params().quant_bits == 4);
        CHECK(c.ann_params().seed == 7);
        // dense is the measurement oracle and joins implicitly, in front
        REQUIRE(c.methods.size() == 3);
        CHECK(c.methods[0] == "dense");
        CHECK(c.methods[1] == "tempcache");
        CHECK(c.methods[2] == "annsa");
    }
    SUBCASE("unknown keys and bad values are named") {
        CHECK_THROWS_AS(RolloutConfig::from_map(parse("typo_key=3\n")), anncache::ConfigError);
        CHECK_THROWS_AS(RolloutConfig::from_map(parse("backend=faiss\n")), anncache::ConfigError);
        CHECK_THROWS_AS(RolloutConfig::from_map(parse("methods=dense,magic\n")),
                        anncache::ConfigError);
        CHECK_THROWS_AS(RolloutConfig::from_map(parse("representative=median\n")),
                        anncache::ConfigError);
        CHECK_THROWS_AS(RolloutConfig::from_map(parse("frames=0\n")), anncache::ConfigError);
        CHECK_THROWS_AS(RolloutConfig::from_map(parse("merge_tol=1.2\n")),
                        anncache::ConfigError);
        CHECK_THROWS_AS(RolloutConfig::from_map(parse("bits=5\n")), anncache::ConfigError);
        CHECK_THROWS_AS(RolloutConfig::from_map(parse("bits_per_table=31\n")),
                        anncache::ConfigError);
        CHECK_THROWS_AS(RolloutConfig::from_map(parse("target_density=0\n")),
                        anncache::ConfigError);
        CHECK_THROWS_AS(RolloutConfig::from_map(parse("tracks=100\n")),
                        anncache::ConfigError);  // exceeds tokens_per_frame
        CHECK_THROWS_AS(RolloutConfig::from_map(parse("track_cos_floor=1\n")),
                        anncache::ConfigError);
    }
    SUBCASE("orthogonal filler needs spare dimensions") {
        // tracks == d leaves no room for prompt filler orthogonal to every base
        auto map = parse("tokens_per_frame=16\ntracks=16\nd=16\nprompt_len=8\n");
        CHECK_THROWS_AS(RolloutConfig::from_map(map), anncache::ConfigError);
        anncache::apply_override(map, "prompt_len=0");
        anncache::apply_override(map, "relevant_prompt_per_frame=0");
        CHECK_NOTHROW(RolloutConfig::from_map(map));
    }
}
