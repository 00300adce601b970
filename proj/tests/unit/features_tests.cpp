#include <atomic>

#include "doctest.h"
#include "star/common.hpp"
#include "star/features.hpp"
#include "test_util.hpp"

using namespace star;
using namespace star::features;

TEST_CASE("feature store loads sectioned files and infers dimension") {
    const auto path = test::write_file("features_sectioned.json", R"({
        "models": {"m1": [3, 4], "m2": [1, 0]},
        "benchmarks": {"b1": [0, 2]}
    })");
    const FeatureStore store = FeatureStore::load(path);
    CHECK(store.dim() == 2);

    const FeatureLookup m1 = store.model("m1");
    CHECK(m1.found);
    CHECK_FALSE(m1.degenerate);
    CHECK(m1.values[0] == doctest::Approx(0.6));
    CHECK(m1.values[1] == doctest::Approx(0.8));
    CHECK(store.benchmark("b1").values[1] == doctest::Approx(1.0));
}

TEST_CASE("feature store loads flat files for both lookups") {
    const auto path = test::write_file("features_flat.json", R"({"e1": [1, 1], "e2": [2, 0]})");
    const FeatureStore store = FeatureStore::load(path);
    CHECK(store.dim() == 2);
    CHECK(store.model("e1").found);
    CHECK(store.benchmark("e2").found);
}

TEST_CASE("feature store rejects dimension mismatches by id") {
    const auto path = test::write_file("features_baddim.json", R"({"a": [1, 2, 3, 4], "b": [1, 2]})");
    CHECK_THROWS_WITH_AS(FeatureStore::load(path), doctest::Contains("'b'"), ParseError);
}

TEST_CASE("missing and zero vectors come back degenerate") {
    const auto path = test::write_file("features_zero.json", R"({
        "models": {"zero": [0, 0, 0], "ok": [2, 0, 0]}
    })");
    const FeatureStore store = FeatureStore::load(path);

    const FeatureLookup missing = store.model("ghost");
    CHECK_FALSE(missing.found);
    CHECK(missing.degenerate);
    CHECK(missing.values.size() == 3);
    CHECK(missing.values.norm() == 0.0);

    const FeatureLookup zero = store.model("zero");
    CHECK(zero.found);
    CHECK(zero.degenerate);
    CHECK(zero.values.norm() == 0.0);
}

TEST_CASE("lookups are normalized to unit or zero norm") {
    std::map<std::string, Eigen::VectorXd> feats;
    feats["a"] = Eigen::Vector3d(10, -3, 0.5);
    feats["b"] = Eigen::Vector3d(0, 0, 0);
    const FeatureStore store(3, feats, feats);
    CHECK(store.model("a").values.norm() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(store.model("b").values.norm() == 0.0);
    // pure: repeated reads agree
    CHECK(store.model("a").values == store.model("a").values);
}

TEST_CASE("feature matrices align with id order and report missing ids") {
    std::map<std::string, Eigen::VectorXd> feats;
    feats["m1"] = Eigen::Vector2d(1, 0);
    const FeatureStore store(2, feats, {});
    std::vector<std::string> missing;
    const Eigen::MatrixXd g = store.model_matrix({"m0", "m1"}, &missing);
    CHECK(g.rows() == 2);
    CHECK(g.cols() == 2);
    CHECK(g.row(0).norm() == 0.0);
    CHECK(g.row(1).norm() == doctest::Approx(1.0));
    CHECK(missing == std::vector<std::string>{"m0"});
}

TEST_CASE("feature store save/load round-trips") {
    std::map<std::string, Eigen::VectorXd> models, benchmarks;
    models["m1"] = Eigen::Vector2d(3, 4);
    benchmarks["b1"] = Eigen::Vector2d(-1, 2);
    const FeatureStore store(2, models, benchmarks);
    const auto path = test::write_file("features_roundtrip.json", "");
    store.save(path);
    const FeatureStore loaded = FeatureStore::load(path);
    CHECK(loaded.dim() == 2);
    CHECK(loaded.model("m1").values == store.model("m1").values);
    CHECK(loaded.benchmark("b1").values == store.benchmark("b1").values);
}

namespace {

class FakeTransport : public EncoderTransport {
public:
    explicit FakeTransport(std::string reply) : reply_(std::move(reply)) {}
    std::string post_json(const std::string& body) override {
        ++calls;
        last_body = body;
        return reply_;
    }
    int calls = 0;
    std::string last_body;

private:
    std::string reply_;
};

}  // namespace

TEST_CASE("encoder client encodes, caches, and validates dimensions") {
    EncoderConfig config;
    config.endpoint = "fake://unused";

    SUBCASE("empty input never touches the service") {
        auto transport = std::make_unique<FakeTransport>("{}");
        FakeTransport* raw = transport.get();
        EncoderClient client(config, std::move(transport));
        CHECK(client.encode({}).empty());
        CHECK(raw->calls == 0);
    }

    SUBCASE("one vector per text, cache hit on repeat") {
        auto transport =
            std::make_unique<FakeTransport>(R"({"vectors": [[1, 0], [0, 1]]})");
        FakeTransport* raw = transport.get();
        EncoderClient client(config, std::move(transport));
        const auto first = client.encode({"alpha", "beta"});
        REQUIRE(first.size() == 2);
        CHECK(first[0][0] == 1.0);
        CHECK(raw->calls == 1);

        const auto again = client.encode({"alpha", "beta", "alpha"});
        CHECK(again.size() == 3);
        CHECK(raw->calls == 1);  // all cached
        CHECK(again[2] == first[0]);
    }

    SUBCASE("wrong vector count is rejected") {
        EncoderClient client(config, std::make_unique<FakeTransport>(R"({"vectors": [[1, 0]]})"));
        CHECK_THROWS_AS(client.encode({"a", "b"}), ParseError);
    }

    SUBCASE("dimension drift across batches is rejected") {
        auto t1 = std::make_unique<FakeTransport>(R"({"vectors": [[1, 0, 0]]})");
        EncoderClient client(config, std::move(t1));
        CHECK(client.encode({"a"}).at(0).size() == 3);
        // same client, new reply with different dimension
        // (FakeTransport replies are fixed, so build a second client sharing the cache path)
        const auto cache = (test::tmp_dir() / "enc_cache.json").string();
        EncoderConfig cached_config = config;
        cached_config.cache_path = cache;
        EncoderClient writer(cached_config, std::make_unique<FakeTransport>(
                                                R"({"vectors": [[1, 0, 0]]})"));
        CHECK(writer.encode({"a"}).size() == 1);
        EncoderClient reader(cached_config, std::make_unique<FakeTransport>(
                                                R"({"vectors": [[1, 0]]})"));
        CHECK_THROWS_AS(reader.encode({"a", "fresh"}), ParseError);
    }

    SUBCASE("unconfigured endpoint fails only on a cache miss") {
        EncoderConfig blank;
        EncoderClient client(blank, nullptr);
        CHECK_THROWS_AS(client.encode({"text"}), ConfigError);
    }
}

TEST_CASE("encoder cache persists across clients") {
    const auto cache = (test::tmp_dir() / "enc_persist.json").string();
    std::remove(cache.c_str());
    EncoderConfig config;
    config.endpoint = "fake://unused";
    config.cache_path = cache;

    {
        EncoderClient client(config,
                             std::make_unique<FakeTransport>(R"({"vectors": [[5, 12]]})"));
        CHECK(client.encode({"hello"}).at(0)[1] == 12.0);
    }
    {
        auto transport = std::make_unique<FakeTransport>("never used");
        FakeTransport* raw = transport.get();
        EncoderClient client(config, std::move(transport));
        const auto out = client.encode({"hello"});
        CHECK(out.at(0)[0] == 5.0);
        CHECK(raw->calls == 0);
    }
}
