#include <catch2/catch_amalgamated.hpp>

#include "oodmap/dataset.hpp"
#include "oodmap/synth.hpp"
#include "oracle.hpp"

#include <filesystem>

namespace fs = std::filesystem;
using namespace oodmap;

namespace {

LabelMapping fixture_mapping() {
    // Cityscapes-flavoured target table with "wall" declared ambiguous.
    nlohmann::json j = {
        {"targets", {{"road", 0}, {"person", 11}, {"car", 13}, {"wall", 3}}},
        {"ambiguous", {"wall", "path"}},
        {"sources", {{"person", 1}, {"wall", 2}, {"vase", 3}, {"path", 4}, {"car", 5}}},
    };
    return LabelMapping::from_json(j);
}

} // namespace

TEST_CASE("label remapping follows the three-way rule") {
    auto m = fixture_mapping();
    LabelMap src(1, 4);
    src.labels = {1 /*person*/, 2 /*wall*/, 3 /*vase*/, 4 /*path*/};
    auto out = remap_labels(src, m);
    CHECK(out.labels[0] == 11);        // shared name, not ambiguous -> target id
    CHECK(out.labels[1] == kIgnoreId); // ambiguous wins over the shared name
    CHECK(out.labels[2] == kOodId);    // unmatched name -> OOD
    CHECK(out.labels[3] == kIgnoreId);

    SECTION("unknown source ids are collected into the error") {
        LabelMap bad(1, 2);
        bad.labels = {9, 77};
        try {
            remap_labels(bad, m);
            FAIL("expected ContractError");
        } catch (const ContractError& e) {
            const std::string what = e.what();
            CHECK(what.find("9") != std::string::npos);
            CHECK(what.find("77") != std::string::npos);
        }
    }
    SECTION("idempotent on already-remapped maps") {
        nlohmann::json j = {
            {"targets", {{"road", 0}, {"person", 11}, {"car", 13}, {"wall", 3}}},
            {"ambiguous", nlohmann::json::array()},
            {"sources", {{"road", 0}, {"person", 11}, {"car", 13}}},
        };
        // extend the identity source table with the reserved ids
        j["sources"]["__ood"] = kOodId;
        j["sources"]["__ignore"] = kIgnoreId;
        auto ident = LabelMapping::from_json(j);
        LabelMap once(1, 3);
        once.labels = {11, kOodId, 13};
        auto twice = remap_labels(once, ident);
        CHECK(twice.labels[0] == 11);
        CHECK(twice.labels[2] == 13);
    }
}

TEST_CASE("size filter keeps strictly more than 640*640 pixels") {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> dims = {
        {640, 640}, {641, 640}, {1024, 2048}, {100, 100}};
    auto kept = size_filter(dims);
    CHECK(kept == std::vector<std::size_t>{1, 2});
}

TEST_CASE("dataset split") {
    SECTION("floor rule on small sets") {
        auto s = split_dataset(4, 0.25, 7);
        CHECK(s.tune.size() == 1);
        CHECK(s.eval.size() == 3);
        auto one = split_dataset(1, 0.25, 7);
        CHECK(one.tune.empty());
        CHECK(one.eval.size() == 1);
    }
    SECTION("deterministic, disjoint, exhaustive") {
        auto a = split_dataset(100, 0.25, 42);
        auto b = split_dataset(100, 0.25, 42);
        CHECK(a.tune == b.tune);
        CHECK(a.eval == b.eval);
        std::vector<bool> seen(100, false);
        for (auto i : a.tune) seen[i] = true;
        for (auto i : a.eval) {
            CHECK_FALSE(seen[i]);
            seen[i] = true;
        }
        CHECK(std::count(seen.begin(), seen.end(), true) == 100);
        auto c = split_dataset(100, 0.25, 43);
        CHECK(a.tune != c.tune);  // different seed shuffles differently
    }
}

TEST_CASE("mix ratio counts non-ignore pixels by kind") {
    auto dir = fs::temp_directory_path() / "oodmap_mix_test";
    fs::create_directories(dir);
    MixManifest manifest;
    for (int i = 0; i < 3; ++i) {
        LabelMap id_map(2, 2, 0);
        save_tensor(id_map.to_tensor(), dir / ("id_" + std::to_string(i) + ".tnsr"));
        manifest.entries.push_back({"", "id_" + std::to_string(i) + ".tnsr", "", "", "ID"});
    }
    LabelMap ood_map(2, 2, kOodId);
    save_tensor(ood_map.to_tensor(), dir / "ood.tnsr");
    manifest.entries.push_back({"", "ood.tnsr", "", "", "OOD-real"});

    auto r = mix_ratio(manifest, dir);
    CHECK(r.id_pixels == 12);
    CHECK(r.ood_pixels == 4);
    CHECK(r.ratio == Catch::Approx(3.0));

    SECTION("ignore-only manifests have no ratio") {
        MixManifest empty;
        LabelMap ig(2, 2, kIgnoreId);
        save_tensor(ig.to_tensor(), dir / "ig.tnsr");
        empty.entries.push_back({"", "ig.tnsr", "", "", "ID"});
        CHECK_THROWS_AS(mix_ratio(empty, dir), UndefinedMetricError);
    }
}

TEST_CASE("manifest json round-trip") {
    MixManifest m;
    m.entries.push_back({"s.tnsr", "l.tnsr", "", "", "ID"});
    m.entries.push_back({"", "l2.tnsr", "lg.tnsr", "f.tnsr", "OOD-synthetic"});
    m.tune_fraction = 0.25;
    m.seed = 99;
    auto j = m.to_json();
    auto back = MixManifest::from_json(j);
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[0].scores == "s.tnsr");
    CHECK(back.entries[1].features == "f.tnsr");
    CHECK(back.seed == 99);

    nlohmann::json bad = j;
    bad["split"]["eval"] = 0.5;  // 0.25 + 0.5 != 1
    CHECK_THROWS_AS(MixManifest::from_json(bad), ContractError);
}

TEST_CASE("gaussian noise generator") {
    SECTION("deterministic for a fixed seed") {
        auto a = gen_gaussian_noise(16, 16, 3, 11);
        auto b = gen_gaussian_noise(16, 16, 3, 11);
        CHECK(a.image == b.image);
        auto c = gen_gaussian_noise(16, 16, 3, 12);
        CHECK_FALSE(c.image == a.image);
    }
    SECTION("labels are entirely OOD") {
        auto a = gen_gaussian_noise(4, 5, 1, 3);
        for (auto l : a.labels.labels) CHECK(l == kOodId);
    }
    SECTION("values live in [0,1] and average near 0.5") {
        auto a = gen_gaussian_noise(128, 128, 3, 2026);
        double sum = 0.0;
        for (float v : a.image.f32()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
            sum += v;
        }
        CHECK(sum / double(a.image.numel()) == Catch::Approx(0.5).margin(0.02));
    }
}

TEST_CASE("perlin noise generator") {
    SECTION("deterministic for a fixed seed and cell size") {
        auto a = gen_perlin_noise(32, 32, 8, 2, 5);
        auto b = gen_perlin_noise(32, 32, 8, 2, 5);
        CHECK(a.image == b.image);
    }
    SECTION("values in [0,1], labels all OOD") {
        auto a = gen_perlin_noise(64, 48, 6, 1, 9);
        for (float v : a.image.f32()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        for (auto l : a.labels.labels) CHECK(l == kOodId);
    }
    SECTION("smoother than gaussian noise at the same size") {
        const std::uint32_t h = 128, w = 128;
        auto perlin = gen_perlin_noise(h, w, 16, 1, 31);
        auto gauss = gen_gaussian_noise(h, w, 1, 31);
        auto mean_adjacent_diff = [&](const Tensor& t) {
            auto v = t.f32();
            double total = 0.0;
            std::size_t n = 0;
            for (std::uint32_t y = 0; y < h; ++y)
                for (std::uint32_t x = 0; x + 1 < w; ++x, ++n)
                    total += std::abs(double(v[y * w + x + 1]) - double(v[y * w + x]));
            return total / double(n);
        };
        CHECK(mean_adjacent_diff(perlin.image) < mean_adjacent_diff(gauss.image));
    }
    SECTION("cell below 2 is rejected") {
        CHECK_THROWS_AS(gen_perlin_noise(8, 8, 1, 1, 0), ContractError);
    }
}

TEST_CASE("per-class average score table") {
    SECTION("single constant image") {
        std::vector<ScoreMap> scores = {ScoreMap(2, 2, 0.3f)};
        std::vector<LabelMap> truth = {LabelMap(2, 2, 5)};
        auto table = per_class_average(scores, truth, 10);
        REQUIRE(table.size() == 1);
        CHECK(table.at(5) == Catch::Approx(0.3).margin(1e-7));
    }
    SECTION("two classes with hand means, absent classes omitted") {
        ScoreMap s(1, 3);
        s.scores = {0.2f, 0.4f, 0.6f};
        LabelMap t(1, 3);
        t.labels = {0, 0, 1};
        auto table = per_class_average(std::vector{s}, std::vector{t}, 4);
        REQUIRE(table.size() == 2);
        CHECK(table.at(0) == Catch::Approx(0.3).margin(1e-7));
        CHECK(table.at(1) == Catch::Approx(0.6).margin(1e-7));
        CHECK(table.count(2) == 0);
        CHECK(table.count(3) == 0);
    }
    SECTION("ood pixels are reported, ignore pixels are not") {
        ScoreMap s(1, 3);
        s.scores = {0.9f, 0.1f, 0.5f};
        LabelMap t(1, 3);
        t.labels = {kOodId, kIgnoreId, 0};
        auto table = per_class_average(std::vector{s}, std::vector{t}, 2);
        REQUIRE(table.size() == 2);
        CHECK(table.at(kOodId) == Catch::Approx(0.9).margin(1e-7));
        CHECK(table.count(kIgnoreId) == 0);
    }
}

TEST_CASE("odin temperature tuning") {
    SECTION("the searched grid is exactly the ten canonical temperatures") {
        const std::array<double, 10> want = {1, 2, 5, 10, 20, 50, 100, 200, 500, 1000};
        CHECK(kOdinTemperatureGrid == want);
    }
    SECTION("rank-preserving tune sets tie-break to temperature 1") {
        // two-class logits: temperature never reorders 1 - max softmax
        Rng rng(4);
        LogitMap logits(8, 8, 2);
        LabelMap truth(8, 8);
        for (std::size_t i = 0; i < logits.pixels(); ++i) {
            const bool ood = i % 3 == 0;
            truth.labels[i] = ood ? kOodId : 0;
            logits.pixel(i)[0] = static_cast<float>(rng.normal() + (ood ? 0.0 : 2.0));
            logits.pixel(i)[1] = 0.0f;
        }
        auto tuned = tune_odin(std::vector{logits}, std::vector{truth});
        for (double a : tuned.auroc_by_temperature)
            CHECK(a == Catch::Approx(tuned.auroc_by_temperature[0]).margin(1e-9));
        CHECK(tuned.best_temperature == 1.0);
    }
    SECTION("constructed tune set peaks at temperature 10") {
        // Four logit families over five classes. Tied-logit blocks cross
        // rankings as the temperature flattens them at different rates, which
        // puts the AUROC maximum at a moderate temperature.
        Rng rng(2026);
        std::vector<LogitMap> logits;
        std::vector<LabelMap> truth;
        const std::size_t per_family = 500;
        auto family = [&](std::uint32_t block, double lo, double hi, bool ood) {
            LogitMap l(1, static_cast<std::uint32_t>(per_family), 5);
            LabelMap t(1, static_cast<std::uint32_t>(per_family), ood ? kOodId : 0);
            for (std::size_t i = 0; i < per_family; ++i) {
                const double g = lo + (hi - lo) * rng.uniform();
                for (std::uint32_t k = 0; k < block; ++k)
                    l.pixel(i)[k] = static_cast<float>(g);
            }
            logits.push_back(std::move(l));
            truth.push_back(std::move(t));
        };
        family(3, 4.5, 5.5, false);
        family(2, 5.0, 6.5, false);
        family(4, 9.0, 16.0, true);
        family(1, 3.8, 4.4, true);

        auto tuned = tune_odin(logits, truth);
        CHECK(tuned.best_temperature == 10.0);

        // exhaustive verification against an independent rank-based sweep
        std::array<double, 10> oracle_auroc{};
        std::size_t best_idx = 0;
        for (std::size_t t = 0; t < kOdinTemperatureGrid.size(); ++t) {
            std::vector<float> all_scores;
            std::vector<int> all_labels;
            for (std::size_t j = 0; j < logits.size(); ++j) {
                auto s = score_odin(logits[j], kOdinTemperatureGrid[t]);
                for (std::size_t i = 0; i < s.size(); ++i) {
                    all_scores.push_back(s.scores[i]);
                    all_labels.push_back(truth[j].labels[i] == kOodId ? 1 : 0);
                }
            }
            oracle_auroc[t] = oracle::auroc_rank(all_scores, all_labels);
            if (oracle_auroc[t] > oracle_auroc[best_idx]) best_idx = t;
        }
        CHECK(kOdinTemperatureGrid[best_idx] == 10.0);
    }
    SECTION("single-kind tune sets are rejected") {
        LogitMap logits(2, 2, 3);
        LabelMap truth(2, 2, 0);  // ID only
        CHECK_THROWS_AS(tune_odin(std::vector{logits}, std::vector{truth}), ContractError);
    }
}

TEST_CASE("synthetic model sample") {
    SynthConfig cfg;
    cfg.height = 32;
    cfg.width = 32;
    cfg.classes = 4;
    cfg.feature_depth = 3;
    cfg.delta = 2.0;
    cfg.seed = 14;
    auto a = synthesize(cfg);
    auto b = synthesize(cfg);
    CHECK(a.logits.logits == b.logits.logits);
    CHECK(a.truth.labels == b.truth.labels);
    CHECK(a.features.values == b.features.values);

    std::size_t ood = 0;
    for (auto l : a.truth.labels)
        if (l == kOodId) ++ood;
    CHECK(ood == a.truth.size() / 4);  // bottom-right quadrant
}
