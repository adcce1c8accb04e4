#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "cmla/data.hpp"
#include "cmla/error.hpp"
#include "oracles.hpp"

using namespace cmla;

TEST_CASE("generated sizes follow the config") {
    SynthConfig cfg;
    cfg.num_identities = 3;
    cfg.per_id_visible = 2;
    cfg.per_id_infrared = 2;
    const auto [v, r] = generate_dataset(cfg);
    CHECK(v.size() == 6);
    CHECK(r.size() == 6);
    CHECK(v.dim() == cfg.dim);
    CHECK(r.dim() == cfg.dim);
    CHECK(v.modality == Modality::visible);
    CHECK(r.modality == Modality::infrared);
    CHECK(*v.gt_ids == std::vector<std::size_t>{0, 0, 1, 1, 2, 2});

    cfg.per_id_infrared = 5;
    CHECK(generate_dataset(cfg).second.size() == 15);
}

TEST_CASE("no noise and no gap makes modalities identical per identity") {
    SynthConfig cfg;
    cfg.num_identities = 5;
    cfg.per_id_visible = 3;
    cfg.per_id_infrared = 2;
    cfg.noise_sigma = 0.0;
    cfg.gap_strength = 0.0;
    const auto [v, r] = generate_dataset(cfg);
    for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t j = 0; j < r.size(); ++j)
            if ((*v.gt_ids)[i] == (*r.gt_ids)[j])
                CHECK(std::equal(v.features.row(i).begin(), v.features.row(i).end(), r.features.row(j).begin()));
}

TEST_CASE("generation is deterministic in the seed") {
    SynthConfig cfg;
    cfg.seed = 99;
    const auto a = generate_dataset(cfg);
    const auto b = generate_dataset(cfg);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    cfg.seed = 100;
    CHECK_FALSE(generate_dataset(cfg).first == a.first);
}

TEST_CASE("modality gap is a rotation that vanishes at zero strength") {
    for (double strength : {0.25, 1.0, 3.0}) {
        const ModalityGap gap = make_modality_gap(8, strength, 5);
        // R^T R = I and det R = +1 (continuous from the identity).
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t j = 0; j < 8; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < 8; ++k) s += gap.rotation(k, i) * gap.rotation(k, j);
                CHECK(s == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12).scale(1.0));
            }
    }
    const ModalityGap none = make_modality_gap(4, 0.0, 5);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(none.offset[i] == 0.0);
        for (std::size_t j = 0; j < 4; ++j) CHECK(none.rotation(i, j) == (i == j ? 1.0 : 0.0));
    }
    // The offset grows with the strength.
    const ModalityGap small = make_modality_gap(8, 0.5, 5), large = make_modality_gap(8, 2.0, 5);
    double ns = 0.0, nl = 0.0;
    for (std::size_t i = 0; i < 8; ++i) ns += small.offset[i] * small.offset[i], nl += large.offset[i] * large.offset[i];
    CHECK(nl > ns);
}

TEST_CASE("invalid synthetic configs are rejected") {
    SynthConfig cfg;
    cfg.num_identities = 1;
    CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
    cfg = {};
    cfg.dim = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.per_id_visible = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.noise_sigma = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.gap_strength = NAN;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("k-means separates distant blobs") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 1.0);
    Matrix x(40, 3);
    std::vector<std::size_t> truth(40);
    for (std::size_t i = 0; i < 40; ++i) {
        truth[i] = i % 2;
        for (std::size_t j = 0; j < 3; ++j) x(i, j) = noise(rng) + (truth[i] ? 100.0 : 0.0);
    }
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const PseudoLabeling pl = cluster_init(x, 2, seed, 100);
        CHECK(oracle::adjusted_rand_index(pl.hard(), truth) == doctest::Approx(1.0));
    }
}

TEST_CASE("k equal to N gives singletons") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x(7, 2);
    for (double& v : x.values()) v = normal(rng);
    const PseudoLabeling pl = cluster_init(x, 7, 1, 10);
    CHECK(pl.num_clusters() == 7);
    auto h = pl.hard();
    std::sort(h.begin(), h.end());
    for (std::size_t i = 0; i < 7; ++i) CHECK(h[i] == i);
}

TEST_CASE("1-D k-means matches the exhaustive best split") {
    const std::vector<double> pts{0.0, 0.1, 0.2, 5.0, 5.1, 5.2};
    Matrix x(6, 1);
    for (std::size_t i = 0; i < 6; ++i) x(i, 0) = pts[i];
    const auto [lo, hi] = oracle::best_two_means(pts);
    CHECK(lo == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(hi == doctest::Approx(5.1).epsilon(1e-9));
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const KMeansResult km = kmeans(x, 2, seed, 50);
        std::vector<double> c{km.centroids(0, 0), km.centroids(1, 0)};
        std::sort(c.begin(), c.end());
        CHECK(std::abs(c[0] - lo) <= 1e-9);
        CHECK(std::abs(c[1] - hi) <= 1e-9);
    }
}

TEST_CASE("k-means properties on random data") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> dk(1, 12);
    for (int inst = 0; inst < 25; ++inst) {
        Matrix x(60, 4);
        for (double& v : x.values()) v = normal(rng);
        // Duplicate rows make empty clusters possible.
        for (std::size_t i = 30; i < 60; ++i) std::copy_n(x.row(i % 5).begin(), 4, x.row(i).begin());
        const std::size_t k = dk(rng);
        const KMeansResult km = kmeans(x, k, inst, 100);
        for (std::size_t t = 1; t < km.objective_trace.size(); ++t)
            CHECK(km.objective_trace[t] <= km.objective_trace[t - 1] * (1.0 + 1e-12));
        const std::size_t kk = km.centroids.rows();
        CHECK(kk <= k);
        std::vector<std::size_t> count(kk, 0);
        for (auto a : km.assignment) {
            REQUIRE(a < kk);
            ++count[a];
        }
        for (auto c : count) CHECK(c > 0);

        const PseudoLabeling pl = cluster_init(x, k, inst, 100);
        for (std::size_t i = 0; i < pl.size(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < pl.num_clusters(); ++j) {
                CHECK((pl.labels(i, j) == 0.0 || pl.labels(i, j) == 1.0));
                s += pl.labels(i, j);
            }
            CHECK(s == 1.0);
        }
        CHECK(kmeans(x, k, inst, 100).assignment == km.assignment);
    }
}

TEST_CASE("k-means argument checks") {
    Matrix x(3, 2, 1.0);
    CHECK_THROWS_AS(kmeans(x, 4, 0, 10), ArgumentError);
    CHECK_THROWS_AS(kmeans(x, 0, 0, 10), ArgumentError);
    x(1, 1) = NAN;
    CHECK_THROWS_AS(kmeans(x, 2, 0, 10), DataError);
}

TEST_CASE("dataset files round-trip exactly") {
    SynthConfig cfg;
    cfg.num_identities = 4;
    cfg.per_id_visible = 3;
    const auto [v, r] = generate_dataset(cfg);
    for (const ModalityDataset* ds : {&v, &r}) {
        std::stringstream ss;
        write_dataset(*ds, ss);
        CHECK(read_dataset(ss) == *ds);
    }
    ModalityDataset no_gt{Matrix{{1e-300, -0.1}, {1.0 / 3.0, 12345.678901234567}}, Modality::infrared, std::nullopt};
    std::stringstream ss;
    write_dataset(no_gt, ss);
    CHECK(ss.str().rfind("2 2 infrared 0\n", 0) == 0);
    CHECK(read_dataset(ss) == no_gt);
}

TEST_CASE("malformed dataset files name the line") {
    auto line_of = [](const std::string& text) -> std::size_t {
        std::istringstream is(text);
        try {
            read_dataset(is);
        } catch (const ParseError& e) {
            return e.line();
        }
        return 0;
    };
    CHECK(line_of("2 2 visible 0\n1 2\n3 4\n5 6\n") == 4);
    CHECK(line_of("2 2 visible 0\n1 2\n") == 3);
    CHECK(line_of("2 2 visible 0\n1 2 3\n4 5\n") == 2);
    CHECK(line_of("2 2 thermal 0\n1 2\n3 4\n") == 1);
    CHECK(line_of("2 x visible 0\n") == 1);

    std::istringstream bad("1 3 visible 0\n1.0 abc 2.0\n");
    try {
        read_dataset(bad);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
        CHECK(std::string(e.what()).find("token 2") != std::string::npos);
        CHECK(std::string(e.what()).find("abc") != std::string::npos);
    }
}

TEST_CASE("dataset validation") {
    ModalityDataset ds{Matrix{{1.0, 2.0}}, Modality::visible, std::vector<std::size_t>{0, 1}};
    CHECK_THROWS_AS(ds.validate(), DataError);
    ds.gt_ids = std::vector<std::size_t>{0};
    CHECK_NOTHROW(ds.validate());
    ds.features(0, 1) = INFINITY;
    CHECK_THROWS_AS(ds.validate(), DataError);
    CHECK(parse_modality("infrared") == Modality::infrared);
    CHECK_THROWS_AS(parse_modality("rgb"), ArgumentError);
}
