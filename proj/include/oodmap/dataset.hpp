#pragma once

#include "oodmap/scoring.hpp"
#include "oodmap/sweep.hpp"
#include "oodmap/tensor.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace oodmap {

// Self-contained RNG (splitmix64) so generated datasets are bit-reproducible
// across standard libraries and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::uint64_t bounded(std::uint64_t n) {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    /// Standard normal via Box-Muller; draws are consumed in pairs.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Source-to-target class-name mapping. Names in the ambiguous set map to
/// kIgnoreId even when a same-named target exists; unmatched names map to
/// kOodId.
struct LabelMapping {
    std::map<std::string, std::uint16_t> targets;
    std::set<std::string> ambiguous;
    std::map<std::string, std::uint16_t> sources;

    static LabelMapping from_json(const nlohmann::json& j) {
        LabelMapping m;
        for (auto& [name, id] : j.at("targets").items())
            m.targets[name] = id.get<std::uint16_t>();
        for (auto& name : j.at("ambiguous")) m.ambiguous.insert(name.get<std::string>());
        for (auto& [name, id] : j.at("sources").items())
            m.sources[name] = id.get<std::uint16_t>();
        return m;
    }

    static LabelMapping load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open mapping file: " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ContractError("malformed mapping file: " + std::string(e.what()));
        }
        return from_json(j);
    }
};

inline LabelMap remap_labels(const LabelMap& src, const LabelMapping& m) {
    // dense source-id -> mapped-id table
    std::vector<std::int32_t> table(65536, -1);
    for (const auto& [name, id] : m.sources) {
        if (m.ambiguous.count(name)) {
            table[id] = kIgnoreId;
        } else if (auto it = m.targets.find(name); it != m.targets.end()) {
            table[id] = it->second;
        } else {
            table[id] = kOodId;
        }
    }
    LabelMap out(src.height, src.width);
    std::set<std::uint16_t> unknown;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const std::int32_t mapped = table[src.labels[i]];
        if (mapped < 0) {
            unknown.insert(src.labels[i]);
            continue;
        }
        out.labels[i] = static_cast<std::uint16_t>(mapped);
    }
    if (!unknown.empty()) {
        std::string ids;
        for (auto id : unknown) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
        throw ContractError("source ids not present in the mapping: " + ids);
    }
    return out;
}

/// Keeps indices of images strictly larger than 640*640 pixels.
inline std::vector<std::size_t> size_filter(
    std::span<const std::pair<std::uint32_t, std::uint32_t>> dims) {
    constexpr std::uint64_t kMinPixels = 640ULL * 640ULL;
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < dims.size(); ++i)
        if (std::uint64_t(dims[i].first) * dims[i].second > kMinPixels) kept.push_back(i);
    return kept;
}

struct DatasetSplit {
    std::vector<std::size_t> tune;
    std::vector<std::size_t> eval;
};

/// Seeded shuffle, then the first floor(tune_fraction * n) items become the
/// tune split and the rest the eval split.
inline DatasetSplit split_dataset(std::size_t n, double tune_fraction, std::uint64_t seed) {
    if (n == 0) throw ContractError("cannot split an empty dataset");
    if (!(tune_fraction >= 0.0 && tune_fraction <= 1.0))
        throw ContractError("tune fraction outside [0,1]");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i-- > 1;)
        std::swap(order[i], order[rng.bounded(i + 1)]);
    const auto cut = static_cast<std::size_t>(std::floor(tune_fraction * double(n)));
    DatasetSplit out;
    out.tune.assign(order.begin(), order.begin() + std::ptrdiff_t(cut));
    out.eval.assign(order.begin() + std::ptrdiff_t(cut), order.end());
    return out;
}

/// One evaluation item: tensor file paths plus a provenance tag.
struct MixEntry {
    std::string scores;    // f32 [H,W]
    std::string labels;    // u16 [H,W]
    std::string logits;    // f32 [H,W,K], for scoring/tuning manifests
    std::string features;  // f32 [H,W,D], for Mahalanobis manifests
    std::string tag;       // ID | OOD-real | OOD-synthetic
};

struct MixManifest {
    std::vector<MixEntry> entries;
    double tune_fraction = 0.25;
    std::uint64_t seed = 0;

    static MixManifest from_json(const nlohmann::json& j) {
        MixManifest m;
        for (const auto& e : j.at("entries")) {
            MixEntry entry;
            entry.scores = e.value("scores", "");
            entry.labels = e.value("labels", "");
            entry.logits = e.value("logits", "");
            entry.features = e.value("features", "");
            entry.tag = e.value("tag", "");
            m.entries.push_back(std::move(entry));
        }
        if (j.contains("split")) {
            const auto& s = j.at("split");
            m.tune_fraction = s.value("tune", 0.25);
            const double eval_fraction = s.value("eval", 1.0 - m.tune_fraction);
            if (std::abs(m.tune_fraction + eval_fraction - 1.0) > 1e-9)
                throw ContractError("split fractions do not sum to 1");
        }
        m.seed = j.value("seed", std::uint64_t(0));
        return m;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["entries"] = nlohmann::json::array();
        for (const auto& e : entries) {
            nlohmann::json je;
            if (!e.scores.empty()) je["scores"] = e.scores;
            if (!e.labels.empty()) je["labels"] = e.labels;
            if (!e.logits.empty()) je["logits"] = e.logits;
            if (!e.features.empty()) je["features"] = e.features;
            if (!e.tag.empty()) je["tag"] = e.tag;
            j["entries"].push_back(je);
        }
        j["split"] = {{"tune", tune_fraction}, {"eval", 1.0 - tune_fraction}};
        j["seed"] = seed;
        return j;
    }

    static MixManifest load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open manifest: " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ContractError("malformed manifest: " + std::string(e.what()));
        }
        return from_json(j);
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot write manifest: " + path.string());
        out << to_json().dump(2) << '\n';
    }
};

struct MixRatio {
    std::uint64_t id_pixels = 0;
    std::uint64_t ood_pixels = 0;
    double ratio = 0.0;
};

/// Counts non-ignore pixels by truth kind across a manifest's label maps.
inline MixRatio mix_ratio(const MixManifest& manifest, const std::filesystem::path& base = {}) {
    MixRatio r;
    for (const auto& e : manifest.entries) {
        if (e.labels.empty()) throw ContractError("manifest entry is missing a labels path");
        const auto labels = LabelMap::from_tensor(load_tensor(base / e.labels));
        for (std::uint16_t l : labels.labels) {
            if (l == kIgnoreId) continue;
            if (l == kOodId) ++r.ood_pixels;
            else ++r.id_pixels;
        }
    }
    if (r.ood_pixels == 0)
        throw UndefinedMetricError("mix ratio undefined: no OOD pixels in the manifest");
    r.ratio = double(r.id_pixels) / double(r.ood_pixels);
    return r;
}

struct NoiseImage {
    Tensor image;    // f32 [H,W,channels] in [0,1]
    LabelMap labels; // entirely kOodId
};

/// I.i.d. standard normal pixels, clipped to +-3 sigma and mapped to [0,1].
inline NoiseImage gen_gaussian_noise(std::uint32_t h, std::uint32_t w, std::uint32_t channels,
                                     std::uint64_t seed) {
    if (h == 0 || w == 0 || channels == 0) throw ContractError("noise dimensions must be positive");
    NoiseImage out{Tensor::f32({h, w, channels}), LabelMap(h, w, kOodId)};
    Rng rng(seed);
    for (auto& v : out.image.f32()) {
        const double z = std::clamp(rng.normal(), -3.0, 3.0);
        v = static_cast<float>((z + 3.0) / 6.0);
    }
    return out;
}

namespace detail {

struct PerlinTable {
    std::array<std::uint8_t, 512> perm;

    explicit PerlinTable(Rng& rng) {
        std::array<std::uint8_t, 256> base;
        for (std::size_t i = 0; i < 256; ++i) base[i] = static_cast<std::uint8_t>(i);
        for (std::size_t i = 256; i-- > 1;)
            std::swap(base[i], base[rng.bounded(i + 1)]);
        for (std::size_t i = 0; i < 512; ++i) perm[i] = base[i & 255];
    }

    // unit gradient for a lattice corner
    void gradient(std::int64_t ix, std::int64_t iy, double& gx, double& gy) const {
        const std::uint8_t hash = perm[(perm[ix & 255] + (iy & 255)) & 255];
        const double angle = double(hash) * (2.0 * std::numbers::pi / 256.0);
        gx = std::cos(angle);
        gy = std::sin(angle);
    }
};

inline double quintic_fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

inline double perlin_at(const PerlinTable& table, double x, double y) {
    const auto x0 = static_cast<std::int64_t>(std::floor(x));
    const auto y0 = static_cast<std::int64_t>(std::floor(y));
    const double fx = x - double(x0);
    const double fy = y - double(y0);
    double corner = 0.0, gx = 0.0, gy = 0.0;
    auto dot = [&](std::int64_t cx, std::int64_t cy, double dx, double dy) {
        table.gradient(cx, cy, gx, gy);
        return gx * dx + gy * dy;
    };
    const double d00 = dot(x0, y0, fx, fy);
    const double d10 = dot(x0 + 1, y0, fx - 1.0, fy);
    const double d01 = dot(x0, y0 + 1, fx, fy - 1.0);
    const double d11 = dot(x0 + 1, y0 + 1, fx - 1.0, fy - 1.0);
    const double u = quintic_fade(fx);
    const double v = quintic_fade(fy);
    corner = (1.0 - v) * ((1.0 - u) * d00 + u * d10) + v * ((1.0 - u) * d01 + u * d11);
    return corner;
}

} // namespace detail

/// Classic single-octave gradient noise: a seeded 256-entry permutation table
/// per channel, unit gradients on a lattice spaced `cell` pixels apart, quintic
/// fade, bilinear gradient blend. The raw value is bounded by sqrt(2)/2, so the
/// affine map to [0,1] never clips.
inline NoiseImage gen_perlin_noise(std::uint32_t h, std::uint32_t w, std::uint32_t cell,
                                   std::uint32_t channels, std::uint64_t seed) {
    if (h == 0 || w == 0 || channels == 0) throw ContractError("noise dimensions must be positive");
    if (cell < 2) throw ContractError("perlin cell size must be at least 2 pixels");
    NoiseImage out{Tensor::f32({h, w, channels}), LabelMap(h, w, kOodId)};
    Rng rng(seed);
    auto img = out.image.f32();
    const double half_amp = std::numbers::sqrt2 / 2.0;
    for (std::uint32_t c = 0; c < channels; ++c) {
        detail::PerlinTable table(rng);
        for (std::uint32_t y = 0; y < h; ++y) {
            for (std::uint32_t x = 0; x < w; ++x) {
                const double v = detail::perlin_at(table, double(x) / cell, double(y) / cell);
                const double mapped = 0.5 + v / (2.0 * half_amp);
                img[(std::size_t(y) * w + x) * channels + c] =
                    static_cast<float>(std::clamp(mapped, 0.0, 1.0));
            }
        }
    }
    return out;
}

/// Mean over all pixels of each class (real classes and kOodId) across a
/// paired score/truth sequence. Classes with no pixels are omitted.
inline std::map<std::uint16_t, double> per_class_average(std::span<const ScoreMap> scores,
                                                         std::span<const LabelMap> truth,
                                                         std::uint32_t classes) {
    if (scores.size() != truth.size()) throw ContractError("score/truth list length mismatch");
    std::map<std::uint16_t, double> sum;
    std::map<std::uint16_t, std::uint64_t> count;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (scores[j].height != truth[j].height || scores[j].width != truth[j].width)
            throw ContractError("score/truth shape mismatch");
        for (std::size_t i = 0; i < scores[j].size(); ++i) {
            const std::uint16_t l = truth[j].labels[i];
            if (l == kIgnoreId) continue;
            if (l != kOodId && l >= classes)
                throw ContractError("label id " + std::to_string(l) +
                                    " outside the declared class count");
            sum[l] += double(scores[j].scores[i]);
            ++count[l];
        }
    }
    std::map<std::uint16_t, double> out;
    for (auto& [label, total] : sum) out[label] = total / double(count[label]);
    return out;
}

inline constexpr std::array<double, 10> kOdinTemperatureGrid = {1,  2,   5,   10,  20,
                                                                50, 100, 200, 500, 1000};

struct OdinTuning {
    double best_temperature = 1.0;
    std::array<double, kOdinTemperatureGrid.size()> auroc_by_temperature{};
};

/// Evaluates every grid temperature over the tune set and returns the AUROC
/// maximizer (smallest temperature on ties).
inline OdinTuning tune_odin(std::span<const LogitMap> logits, std::span<const LabelMap> truth) {
    if (logits.empty()) throw ContractError("tune set is empty");
    if (logits.size() != truth.size()) throw ContractError("logit/truth list length mismatch");
    OdinTuning out;
    double best = -1.0;
    for (std::size_t t = 0; t < kOdinTemperatureGrid.size(); ++t) {
        ThresholdSweep sweep;
        for (std::size_t j = 0; j < logits.size(); ++j)
            accumulate(sweep, score_odin(logits[j], kOdinTemperatureGrid[t]), truth[j]);
        if (sweep.positives() == 0 || sweep.negatives() == 0)
            throw ContractError("tune set needs both ID and OOD pixels");
        out.auroc_by_temperature[t] = auroc(sweep);
        if (out.auroc_by_temperature[t] > best) {
            best = out.auroc_by_temperature[t];
            out.best_temperature = kOdinTemperatureGrid[t];
        }
    }
    return out;
}

} // namespace oodmap
