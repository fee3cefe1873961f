#include <catch2/catch_amalgamated.hpp>

#include "oodmap/mahalanobis.hpp"

#include <filesystem>
#include <random>

namespace fs = std::filesystem;
using namespace oodmap;

namespace {

FeatureMap feature_1x1(std::vector<float> values) {
    FeatureMap f(1, 1, static_cast<std::uint32_t>(values.size()));
    std::copy(values.begin(), values.end(), f.values.begin());
    return f;
}

ClassStats hand_stats_d1(std::vector<float> means, std::vector<double> variances) {
    ClassStats s;
    s.classes = static_cast<std::uint32_t>(means.size());
    s.height = s.width = 1;
    s.depth = 1;
    s.mu = means;
    s.sigma = variances;
    s.sigma_inv.resize(variances.size());
    for (std::size_t i = 0; i < variances.size(); ++i) s.sigma_inv[i] = 1.0 / variances[i];
    s.counts.assign(means.size(), 1);
    s.norm_mu = 0.0;
    s.norm_s = 1.0;
    return s;
}

} // namespace

TEST_CASE("fit on the one-location D=1 textbook set") {
    // two training images, one class, one location, features 1 and 3
    std::vector<FeatureMap> feats = {feature_1x1({1.0f}), feature_1x1({3.0f})};
    std::vector<LabelMap> labels = {LabelMap(1, 1, 0), LabelMap(1, 1, 0)};
    auto stats = fit(feats, labels, 1);
    CHECK(stats.mu[0] == Catch::Approx(2.0));
    // population variance of {1,3} is 1; the ridge adds 1e-6 of the trace scale
    CHECK(stats.sigma[0] == Catch::Approx(1.0 + 1e-6).margin(1e-12));
    CHECK(stats.counts[0] == 2);

    auto at_mean = min_distance(feature_1x1({2.0f}), stats);
    CHECK(at_mean.values[0] == Catch::Approx(0.0).margin(1e-9));
    auto two_away = min_distance(feature_1x1({4.0f}), stats);
    CHECK(two_away.values[0] == Catch::Approx(2.0).margin(1e-3));
}

TEST_CASE("identical training features degenerate to the ridge") {
    std::vector<FeatureMap> feats = {feature_1x1({5.0f}), feature_1x1({5.0f})};
    std::vector<LabelMap> labels = {LabelMap(1, 1, 0), LabelMap(1, 1, 0)};
    auto stats = fit(feats, labels, 1);
    CHECK(stats.sigma[0] == Catch::Approx(1e-6));
    CHECK(min_distance(feature_1x1({5.0f}), stats).values[0] == 0.0f);
}

TEST_CASE("per-location means with a shared global covariance") {
    // one class, two locations; location means differ, deviations pool
    FeatureMap f1(1, 2, 1), f2(1, 2, 1);
    f1.values = {1.0f, 10.0f};
    f2.values = {3.0f, 14.0f};
    std::vector<FeatureMap> feats = {f1, f2};
    std::vector<LabelMap> labels = {LabelMap(1, 2, 0), LabelMap(1, 2, 0)};
    auto stats = fit(feats, labels, 1);
    CHECK(stats.mu[0] == Catch::Approx(2.0));
    CHECK(stats.mu[1] == Catch::Approx(12.0));
    // deviations are {-1, +1} at location 0 and {-2, +2} at location 1,
    // so the pooled population covariance is (1+1+4+4)/4 = 2.5
    CHECK(stats.sigma[0] == Catch::Approx(2.5).epsilon(1e-5));

    FeatureMap probe(1, 2, 1);
    probe.values = {4.0f, 12.0f};
    auto dist = min_distance(probe, stats);
    CHECK(dist.values[0] == Catch::Approx(2.0 / std::sqrt(2.5)).epsilon(1e-4));
    CHECK(dist.values[1] == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("distance hand cases on hand-built statistics") {
    SECTION("z-score in one dimension") {
        auto stats = hand_stats_d1({0.0f}, {1.0});
        CHECK(min_distance(feature_1x1({2.0f}), stats).values[0] == Catch::Approx(2.0));
    }
    SECTION("minimum over two classes") {
        auto stats = hand_stats_d1({0.0f, 4.0f}, {1.0, 1.0});
        CHECK(min_distance(feature_1x1({1.0f}), stats).values[0] == Catch::Approx(1.0));
        CHECK(min_distance(feature_1x1({3.0f}), stats).values[0] == Catch::Approx(1.0));
    }
    SECTION("shape mismatch rejected") {
        auto stats = hand_stats_d1({0.0f}, {1.0});
        CHECK_THROWS_AS(min_distance(FeatureMap(2, 2, 1), stats), ContractError);
    }
}

TEST_CASE("empty classes are dropped from the minimum and reported") {
    std::vector<FeatureMap> feats = {feature_1x1({1.0f}), feature_1x1({3.0f})};
    std::vector<LabelMap> labels = {LabelMap(1, 1, 0), LabelMap(1, 1, 0)};
    auto stats = fit(feats, labels, 3);
    CHECK(stats.dropped_classes() == std::vector<std::uint32_t>{1, 2});
    // distances come out finite because the fitted class carries the minimum
    CHECK(std::isfinite(min_distance(feature_1x1({100.0f}), stats).values[0]));
}

TEST_CASE("distance is invariant under invertible affine feature maps") {
    const std::uint32_t d = 3, h = 2, w = 2;
    std::mt19937_64 rng(808);
    std::normal_distribution<double> gauss(0.0, 1.0);

    auto make_set = [&](auto transform) {
        std::vector<FeatureMap> feats;
        std::vector<LabelMap> labels;
        std::mt19937_64 data_rng(117);
        std::normal_distribution<double> noise(0.0, 1.0);
        for (int img = 0; img < 6; ++img) {
            FeatureMap f(h, w, d);
            LabelMap l(h, w);
            for (std::size_t i = 0; i < f.locations(); ++i) {
                const auto cls = static_cast<std::uint16_t>(data_rng() % 2);
                l.labels[i] = cls;
                std::array<double, 3> raw;
                for (std::uint32_t a = 0; a < d; ++a)
                    raw[a] = noise(data_rng) + (cls == 0 ? 0.0 : 2.5);
                auto mapped = transform(raw);
                for (std::uint32_t a = 0; a < d; ++a) f.at(i)[a] = static_cast<float>(mapped[a]);
            }
            feats.push_back(std::move(f));
            labels.push_back(std::move(l));
        }
        return std::pair(feats, labels);
    };

    // a random well-conditioned matrix: diagonally dominant perturbation
    std::array<std::array<double, 3>, 3> A{};
    for (auto& row : A)
        for (auto& v : row) v = 0.3 * gauss(rng);
    for (std::size_t i = 0; i < 3; ++i) A[i][i] += 2.0;
    const std::array<double, 3> b = {gauss(rng), gauss(rng), gauss(rng)};
    auto affine = [&](const std::array<double, 3>& x) {
        std::array<double, 3> y{};
        for (std::size_t i = 0; i < 3; ++i) {
            y[i] = b[i];
            for (std::size_t j = 0; j < 3; ++j) y[i] += A[i][j] * x[j];
        }
        return y;
    };
    auto identity = [](const std::array<double, 3>& x) { return x; };

    auto [feats, labels] = make_set(identity);
    auto [tfeats, tlabels] = make_set(affine);
    auto stats = fit(feats, labels, 2);
    auto tstats = fit(tfeats, tlabels, 2);
    for (int img = 0; img < 6; ++img) {
        auto da = min_distance(feats[std::size_t(img)], stats);
        auto db = min_distance(tfeats[std::size_t(img)], tstats);
        for (std::size_t i = 0; i < da.values.size(); ++i)
            CHECK(da.values[i] == Catch::Approx(db.values[i]).margin(1e-4));
    }
}

TEST_CASE("consistent class-id permutation permutes stats and keeps distances") {
    const std::uint32_t h = 2, w = 3, d = 2;
    std::mt19937_64 rng(909);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<FeatureMap> feats;
    std::vector<LabelMap> labels, swapped;
    for (int img = 0; img < 4; ++img) {
        FeatureMap f(h, w, d);
        LabelMap l(h, w), ls(h, w);
        for (std::size_t i = 0; i < f.locations(); ++i) {
            const auto cls = static_cast<std::uint16_t>(rng() % 2);
            l.labels[i] = cls;
            ls.labels[i] = static_cast<std::uint16_t>(1 - cls);
            for (std::uint32_t a = 0; a < d; ++a)
                f.at(i)[a] = static_cast<float>(noise(rng) + 3.0 * cls);
        }
        feats.push_back(std::move(f));
        labels.push_back(std::move(l));
        swapped.push_back(std::move(ls));
    }
    auto stats = fit(feats, labels, 2);
    auto stats_swapped = fit(feats, swapped, 2);
    CHECK(stats.counts[0] == stats_swapped.counts[1]);
    CHECK(stats.counts[1] == stats_swapped.counts[0]);
    for (std::size_t i = 0; i < stats.locations() * d; ++i) {
        CHECK(stats.mu[i] == stats_swapped.mu[stats.locations() * d + i]);
        CHECK(stats.mu[stats.locations() * d + i] == stats_swapped.mu[i]);
    }
    for (const auto& f : feats) {
        auto da = min_distance(f, stats);
        auto db = min_distance(f, stats_swapped);
        for (std::size_t i = 0; i < da.values.size(); ++i)
            CHECK(da.values[i] == Catch::Approx(db.values[i]).margin(1e-12));
    }
}

TEST_CASE("score applies the normalized sigmoid and resizes") {
    auto stats = hand_stats_d1({0.0f}, {1.0});
    stats.norm_mu = 2.0;
    stats.norm_s = 0.5;

    SECTION("distance equal to the normalization mean gives 0.5") {
        auto s = score(feature_1x1({2.0f}), stats, 1, 1);
        CHECK(s.scores[0] == Catch::Approx(0.5).margin(1e-7));
    }
    SECTION("one standard deviation above gives sigmoid(1)") {
        auto s = score(feature_1x1({2.5f}), stats, 1, 1);
        CHECK(s.scores[0] == Catch::Approx(1.0 / (1.0 + std::exp(-1.0))).margin(1e-6));
    }
    SECTION("score increases strictly with raw distance") {
        double prev = -1.0;
        for (float f : {0.0f, 0.5f, 1.5f, 2.5f, 4.0f}) {
            auto s = score(feature_1x1({f}), stats, 1, 1);
            CHECK(double(s.scores[0]) > prev);
            prev = double(s.scores[0]);
        }
    }
    SECTION("constant distance field stays constant at any output size") {
        FeatureMap f(2, 2, 1);
        for (auto& v : f.values) v = 3.0f;
        auto s = score(f, stats, 5, 7);
        for (float v : s.scores) CHECK(v == Catch::Approx(double(s.scores[0])));
    }
}

TEST_CASE("statistics persist and reload bit-faithfully enough to score") {
    const std::uint32_t h = 2, w = 2, d = 3;
    std::mt19937_64 rng(5150);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<FeatureMap> feats;
    std::vector<LabelMap> labels;
    for (int img = 0; img < 5; ++img) {
        FeatureMap f(h, w, d);
        LabelMap l(h, w);
        for (std::size_t i = 0; i < f.locations(); ++i) {
            const auto cls = static_cast<std::uint16_t>(rng() % 2);
            l.labels[i] = cls;
            for (std::uint32_t a = 0; a < d; ++a)
                f.at(i)[a] = static_cast<float>(noise(rng) + 2.0 * cls);
        }
        feats.push_back(std::move(f));
        labels.push_back(std::move(l));
    }
    auto stats = fit(feats, labels, 2);
    auto dir = fs::temp_directory_path() / "oodmap_stats_test";
    fs::remove_all(dir);
    save_stats(stats, dir);
    auto reloaded = load_stats(dir);
    CHECK(reloaded.counts == stats.counts);
    CHECK(reloaded.norm_mu == Catch::Approx(stats.norm_mu));

    auto a = score(feats[0], stats, 4, 4);
    auto b = score(feats[0], reloaded, 4, 4);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a.scores[i] == Catch::Approx(b.scores[i]).margin(1e-5));

    SECTION("tampered covariance fails the positive-definite check") {
        auto sigma = load_tensor(dir / "sigma.tnsr");
        sigma.f32()[0] = -5.0f;
        save_tensor(sigma, dir / "sigma.tnsr");
        CHECK_THROWS_AS(load_stats(dir), ContractError);
    }
}

TEST_CASE("fit input validation") {
    std::vector<FeatureMap> feats = {FeatureMap(2, 2, 1), FeatureMap(2, 3, 1)};
    std::vector<LabelMap> labels = {LabelMap(2, 2, 0), LabelMap(2, 3, 0)};
    CHECK_THROWS_AS(fit(feats, labels, 1), ContractError);

    std::vector<FeatureMap> f2 = {FeatureMap(2, 2, 1)};
    std::vector<LabelMap> l2 = {LabelMap(2, 2, 7)};  // id outside class count
    CHECK_THROWS_AS(fit(f2, l2, 2), ContractError);

    std::vector<LabelMap> l3 = {LabelMap(2, 2, kIgnoreId)};
    CHECK_THROWS_AS(fit(f2, l3, 2), ContractError);  // nothing to fit
}
