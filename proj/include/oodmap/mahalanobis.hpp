#pragma once

#include "oodmap/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace oodmap {

/// Penultimate-layer activations: D values per spatial location.
struct FeatureMap {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t depth = 0;
    std::vector<float> values;  // [H,W,D] row-major

    FeatureMap() = default;
    FeatureMap(std::uint32_t h, std::uint32_t w, std::uint32_t d)
        : height(h), width(w), depth(d), values(std::size_t(h) * w * d, 0.0f) {}

    std::size_t locations() const { return std::size_t(height) * width; }
    std::span<const float> at(std::size_t i) const { return {values.data() + i * depth, depth}; }
    std::span<float> at(std::size_t i) { return {values.data() + i * depth, depth}; }

    static FeatureMap from_tensor(const Tensor& t) {
        if (t.rank() != 3 || t.dtype() != Dtype::F32)
            throw ContractError("feature tensor must be f32 of shape [H,W,D]");
        FeatureMap m(static_cast<std::uint32_t>(t.shape()[0]),
                     static_cast<std::uint32_t>(t.shape()[1]),
                     static_cast<std::uint32_t>(t.shape()[2]));
        auto src = t.f32();
        std::copy(src.begin(), src.end(), m.values.begin());
        return m;
    }
};

/// Raw minimum Mahalanobis distances per spatial location (not yet a score).
struct DistanceMap {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<float> values;
};

namespace linalg {

// Cholesky factorization of a symmetric positive-definite matrix, row-major.
// Returns false when a pivot is not positive.
inline bool cholesky(std::vector<double>& a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) sum -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (sum <= 0.0) return false;
                a[i * n + i] = std::sqrt(sum);
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
    }
    // zero the strict upper triangle so the factor is clean
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = 0.0;
    return true;
}

// Inverse from the Cholesky factor L (lower triangular): solves L L^T X = I.
inline std::vector<double> spd_inverse(const std::vector<double>& chol, std::size_t n) {
    std::vector<double> inv(n * n, 0.0);
    std::vector<double> col(n);
    for (std::size_t c = 0; c < n; ++c) {
        // forward solve L y = e_c
        for (std::size_t i = 0; i < n; ++i) {
            double sum = (i == c) ? 1.0 : 0.0;
            for (std::size_t k = 0; k < i; ++k) sum -= chol[i * n + k] * col[k];
            col[i] = sum / chol[i * n + i];
        }
        // back solve L^T x = y
        for (std::size_t i = n; i-- > 0;) {
            double sum = col[i];
            for (std::size_t k = i + 1; k < n; ++k) sum -= chol[k * n + i] * col[k];
            col[i] = sum / chol[i * n + i];
        }
        for (std::size_t i = 0; i < n; ++i) inv[i * n + c] = col[i];
    }
    return inv;
}

} // namespace linalg

/// Fitted Mahalanobis statistics: per-location class means, one global
/// covariance (and inverse) per class, and the distance-normalization scalars.
struct ClassStats {
    std::uint32_t classes = 0;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t depth = 0;
    std::vector<float> mu;          // [C,H,W,D]
    std::vector<double> sigma;      // [C,D,D], after regularization
    std::vector<double> sigma_inv;  // [C,D,D]
    std::vector<std::uint64_t> counts;  // pixels per class over the training set
    double norm_mu = 0.0;
    double norm_s = 1.0;
    double ridge = 1e-6;

    std::size_t locations() const { return std::size_t(height) * width; }

    std::span<const float> mean_at(std::uint32_t c, std::size_t i) const {
        return {mu.data() + (std::size_t(c) * locations() + i) * depth, depth};
    }
    std::span<const double> inv_of(std::uint32_t c) const {
        return {sigma_inv.data() + std::size_t(c) * depth * depth, std::size_t(depth) * depth};
    }

    std::vector<std::uint32_t> dropped_classes() const {
        std::vector<std::uint32_t> out;
        for (std::uint32_t c = 0; c < classes; ++c)
            if (counts[c] == 0) out.push_back(c);
        return out;
    }
};

namespace detail {

inline double mahalanobis_sq(std::span<const float> f, std::span<const float> mean,
                             std::span<const double> inv, std::uint32_t d,
                             std::vector<double>& diff) {
    for (std::uint32_t a = 0; a < d; ++a) diff[a] = double(f[a]) - double(mean[a]);
    double q = 0.0;
    for (std::uint32_t a = 0; a < d; ++a) {
        double row = 0.0;
        for (std::uint32_t b = 0; b < d; ++b) row += inv[std::size_t(a) * d + b] * diff[b];
        q += diff[a] * row;
    }
    return q;
}

} // namespace detail

/// Minimum over fitted classes of the per-location Mahalanobis distance.
inline DistanceMap min_distance(const FeatureMap& f, const ClassStats& stats) {
    if (f.height != stats.height || f.width != stats.width || f.depth != stats.depth)
        throw ContractError("feature map does not match fitted statistics");
    DistanceMap out{f.height, f.width, std::vector<float>(f.locations())};
    std::vector<double> diff(f.depth);
    for (std::size_t i = 0; i < f.locations(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::uint32_t c = 0; c < stats.classes; ++c) {
            if (stats.counts[c] == 0) continue;  // class absent from training
            const double q = detail::mahalanobis_sq(f.at(i), stats.mean_at(c, i),
                                                    stats.inv_of(c), f.depth, diff);
            best = std::min(best, q);
        }
        if (!std::isfinite(best))
            throw ContractError("no fitted class to score against");
        out.values[i] = static_cast<float>(std::sqrt(std::max(0.0, best)));
    }
    return out;
}

/// Fits per-location class means and global class covariances over a training
/// set. Labels are nearest-neighbour resized to the feature resolution;
/// kIgnoreId and kOodId pixels are excluded. Covariances get a relative ridge
/// before inversion. The normalization scalars are the mean / standard
/// deviation of the minimum distance over every location of the training set.
inline ClassStats fit(std::span<const FeatureMap> features, std::span<const LabelMap> labels,
                      std::uint32_t classes, double ridge = 1e-6) {
    if (features.empty()) throw ContractError("no feature maps to fit");
    if (features.size() != labels.size())
        throw ContractError("feature/label list length mismatch");
    if (classes == 0) throw ContractError("class count must be positive");

    ClassStats stats;
    stats.classes = classes;
    stats.height = features[0].height;
    stats.width = features[0].width;
    stats.depth = features[0].depth;
    stats.ridge = ridge;
    const std::size_t locs = stats.locations();
    const std::uint32_t d = stats.depth;

    std::vector<LabelMap> resized;
    resized.reserve(labels.size());
    for (std::size_t j = 0; j < features.size(); ++j) {
        if (features[j].height != stats.height || features[j].width != stats.width ||
            features[j].depth != d)
            throw ContractError("feature maps differ in shape");
        resized.push_back(resize_nearest(labels[j], stats.height, stats.width));
        for (std::uint16_t l : resized.back().labels)
            if (l != kIgnoreId && l != kOodId && l >= classes)
                throw ContractError("label id " + std::to_string(l) +
                                    " outside the declared class count");
    }

    // pass 1: per-location per-class feature sums -> means
    std::vector<double> mean_sum(std::size_t(classes) * locs * d, 0.0);
    std::vector<std::uint64_t> loc_count(std::size_t(classes) * locs, 0);
    stats.counts.assign(classes, 0);
    for (std::size_t j = 0; j < features.size(); ++j) {
        const auto& fm = features[j];
        const auto& lm = resized[j];
        for (std::size_t i = 0; i < locs; ++i) {
            const std::uint16_t c = lm.labels[i];
            if (c == kIgnoreId || c == kOodId) continue;
            ++stats.counts[c];
            ++loc_count[std::size_t(c) * locs + i];
            auto fv = fm.at(i);
            double* acc = mean_sum.data() + (std::size_t(c) * locs + i) * d;
            for (std::uint32_t a = 0; a < d; ++a) acc[a] += double(fv[a]);
        }
    }
    stats.mu.assign(std::size_t(classes) * locs * d, 0.0f);
    for (std::size_t ci = 0; ci < std::size_t(classes) * locs; ++ci) {
        if (loc_count[ci] == 0) continue;  // no evidence at this location; mean stays zero
        const double inv_n = 1.0 / double(loc_count[ci]);
        for (std::uint32_t a = 0; a < d; ++a)
            stats.mu[ci * d + a] = static_cast<float>(mean_sum[ci * d + a] * inv_n);
    }

    // pass 2: global per-class covariance of deviations from the location mean
    std::vector<double> cov(std::size_t(classes) * d * d, 0.0);
    std::vector<double> diff(d);
    for (std::size_t j = 0; j < features.size(); ++j) {
        const auto& fm = features[j];
        const auto& lm = resized[j];
        for (std::size_t i = 0; i < locs; ++i) {
            const std::uint16_t c = lm.labels[i];
            if (c == kIgnoreId || c == kOodId) continue;
            auto fv = fm.at(i);
            auto mv = stats.mean_at(c, i);
            for (std::uint32_t a = 0; a < d; ++a) diff[a] = double(fv[a]) - double(mv[a]);
            double* acc = cov.data() + std::size_t(c) * d * d;
            for (std::uint32_t a = 0; a < d; ++a)
                for (std::uint32_t b = 0; b <= a; ++b) acc[std::size_t(a) * d + b] += diff[a] * diff[b];
        }
    }
    stats.sigma.assign(std::size_t(classes) * d * d, 0.0);
    stats.sigma_inv.assign(std::size_t(classes) * d * d, 0.0);
    for (std::uint32_t c = 0; c < classes; ++c) {
        if (stats.counts[c] == 0) continue;
        double* s = stats.sigma.data() + std::size_t(c) * d * d;
        const double* acc = cov.data() + std::size_t(c) * d * d;
        const double inv_n = 1.0 / double(stats.counts[c]);
        for (std::uint32_t a = 0; a < d; ++a)
            for (std::uint32_t b = 0; b <= a; ++b) {
                const double v = acc[std::size_t(a) * d + b] * inv_n;
                s[std::size_t(a) * d + b] = v;
                s[std::size_t(b) * d + a] = v;
            }
        double trace = 0.0;
        for (std::uint32_t a = 0; a < d; ++a) trace += s[std::size_t(a) * d + a];
        // relative ridge; unit scale when the class is perfectly degenerate
        const double scale = trace > 0.0 ? trace / double(d) : 1.0;
        for (std::uint32_t a = 0; a < d; ++a) s[std::size_t(a) * d + a] += ridge * scale;

        std::vector<double> chol(s, s + std::size_t(d) * d);
        if (!linalg::cholesky(chol, d))
            throw ContractError("covariance of class " + std::to_string(c) +
                                " is singular after regularization");
        auto inv = linalg::spd_inverse(chol, d);
        std::copy(inv.begin(), inv.end(), stats.sigma_inv.begin() + std::size_t(c) * d * d);
    }
    if (stats.dropped_classes().size() == classes)
        throw ContractError("every class is empty; nothing to fit");

    // second pass over the training set for the distance normalization
    double sum = 0.0, sumsq = 0.0;
    std::uint64_t n = 0;
    for (const auto& fm : features) {
        auto dist = min_distance(fm, stats);
        for (float v : dist.values) {
            sum += v;
            sumsq += double(v) * double(v);
            ++n;
        }
    }
    stats.norm_mu = sum / double(n);
    const double var = std::max(0.0, sumsq / double(n) - stats.norm_mu * stats.norm_mu);
    stats.norm_s = std::max(std::sqrt(var), 1e-12);
    return stats;
}

/// Sigmoid of the normalized minimum distance, bilinearly resized to the
/// requested output size.
inline ScoreMap score(const FeatureMap& f, const ClassStats& stats, std::uint32_t out_h,
                      std::uint32_t out_w) {
    if (stats.norm_s <= 0.0) throw ContractError("statistics are not fitted");
    auto dist = min_distance(f, stats);
    ScoreMap raw(dist.height, dist.width);
    for (std::size_t i = 0; i < dist.values.size(); ++i) {
        const double z = (double(dist.values[i]) - stats.norm_mu) / stats.norm_s;
        raw.scores[i] = static_cast<float>(1.0 / (1.0 + std::exp(-z)));
    }
    return resize_bilinear(raw, out_h, out_w);
}

// On-disk layout: <dir>/stats.json + <dir>/mu.tnsr [C,H,W,D] + <dir>/sigma.tnsr [C,D,D].
inline void save_stats(const ClassStats& stats, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["classes"] = stats.classes;
    j["height"] = stats.height;
    j["width"] = stats.width;
    j["depth"] = stats.depth;
    j["counts"] = stats.counts;
    j["norm_mu"] = stats.norm_mu;
    j["norm_s"] = stats.norm_s;
    j["lambda_reg"] = stats.ridge;
    {
        std::ofstream out(dir / "stats.json", std::ios::trunc);
        if (!out) throw IoError("cannot write " + (dir / "stats.json").string());
        out << j.dump(2) << '\n';
    }
    Tensor mu = Tensor::f32({stats.classes, stats.height, stats.width, stats.depth});
    std::copy(stats.mu.begin(), stats.mu.end(), mu.f32().begin());
    save_tensor(mu, dir / "mu.tnsr");
    Tensor sigma = Tensor::f32({stats.classes, stats.depth, stats.depth});
    for (std::size_t i = 0; i < stats.sigma.size(); ++i)
        sigma.f32()[i] = static_cast<float>(stats.sigma[i]);
    save_tensor(sigma, dir / "sigma.tnsr");
}

/// Reloads persisted statistics; inverses are recomputed and verified against
/// the stored covariances (max |Sigma Sigma^-1 - I| <= 1e-4).
inline ClassStats load_stats(const std::filesystem::path& dir) {
    std::ifstream in(dir / "stats.json");
    if (!in) throw IoError("cannot open " + (dir / "stats.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ContractError("malformed stats manifest: " + std::string(e.what()));
    }
    ClassStats stats;
    stats.classes = j.at("classes").get<std::uint32_t>();
    stats.height = j.at("height").get<std::uint32_t>();
    stats.width = j.at("width").get<std::uint32_t>();
    stats.depth = j.at("depth").get<std::uint32_t>();
    stats.counts = j.at("counts").get<std::vector<std::uint64_t>>();
    stats.norm_mu = j.at("norm_mu").get<double>();
    stats.norm_s = j.at("norm_s").get<double>();
    stats.ridge = j.at("lambda_reg").get<double>();
    if (stats.counts.size() != stats.classes)
        throw ContractError("stats manifest count list does not match class count");

    Tensor mu = load_tensor(dir / "mu.tnsr");
    const std::vector<std::uint64_t> mu_shape = {stats.classes, stats.height, stats.width,
                                                 stats.depth};
    if (mu.shape() != mu_shape) throw ContractError("mu tensor shape mismatch");
    stats.mu.assign(mu.f32().begin(), mu.f32().end());

    Tensor sigma = load_tensor(dir / "sigma.tnsr");
    const std::vector<std::uint64_t> sig_shape = {stats.classes, stats.depth, stats.depth};
    if (sigma.shape() != sig_shape) throw ContractError("sigma tensor shape mismatch");
    stats.sigma.assign(sigma.f32().begin(), sigma.f32().end());

    const std::uint32_t d = stats.depth;
    stats.sigma_inv.assign(stats.sigma.size(), 0.0);
    for (std::uint32_t c = 0; c < stats.classes; ++c) {
        if (stats.counts[c] == 0) continue;
        const double* s = stats.sigma.data() + std::size_t(c) * d * d;
        std::vector<double> chol(s, s + std::size_t(d) * d);
        if (!linalg::cholesky(chol, d))
            throw ContractError("stored covariance of class " + std::to_string(c) +
                                " is not positive definite");
        auto inv = linalg::spd_inverse(chol, d);
        double worst = 0.0;
        for (std::uint32_t a = 0; a < d; ++a)
            for (std::uint32_t b = 0; b < d; ++b) {
                double prod = 0.0;
                for (std::uint32_t k = 0; k < d; ++k)
                    prod += s[std::size_t(a) * d + k] * inv[std::size_t(k) * d + b];
                worst = std::max(worst, std::abs(prod - (a == b ? 1.0 : 0.0)));
            }
        if (worst > 1e-4)
            throw ContractError("covariance inverse check failed for class " +
                                std::to_string(c));
        std::copy(inv.begin(), inv.end(), stats.sigma_inv.begin() + std::size_t(c) * d * d);
    }
    return stats;
}

} // namespace oodmap
