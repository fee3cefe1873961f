#pragma once

#include "oodmap/tensor.hpp"

#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace oodmap {

/// Unnormalized per-pixel class outputs of a segmentation network.
struct LogitMap {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t classes = 0;
    std::vector<float> logits;  // [H,W,K] row-major

    LogitMap() = default;
    LogitMap(std::uint32_t h, std::uint32_t w, std::uint32_t k)
        : height(h), width(w), classes(k),
          logits(std::size_t(h) * w * k, 0.0f) {
        if (k < 2) throw ContractError("logit map needs at least 2 classes");
    }

    std::span<float> pixel(std::size_t i) { return {logits.data() + i * classes, classes}; }
    std::span<const float> pixel(std::size_t i) const { return {logits.data() + i * classes, classes}; }
    std::size_t pixels() const { return std::size_t(height) * width; }

    static LogitMap from_tensor(const Tensor& t) {
        if (t.rank() != 3 || t.dtype() != Dtype::F32)
            throw ContractError("logit tensor must be f32 of shape [H,W,K]");
        if (t.shape()[2] < 2) throw ContractError("logit map needs at least 2 classes");
        LogitMap m(static_cast<std::uint32_t>(t.shape()[0]),
                   static_cast<std::uint32_t>(t.shape()[1]),
                   static_cast<std::uint32_t>(t.shape()[2]));
        auto src = t.f32();
        std::copy(src.begin(), src.end(), m.logits.begin());
        return m;
    }
};

/// T stochastic forward passes over the same image (dropout active at test time).
struct PredictionStack {
    std::uint32_t runs = 0;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t classes = 0;
    std::vector<float> logits;  // [T,H,W,K] row-major

    std::size_t pixels() const { return std::size_t(height) * width; }
    std::span<const float> pixel(std::uint32_t run, std::size_t i) const {
        return {logits.data() + (std::size_t(run) * pixels() + i) * classes, classes};
    }

    static PredictionStack from_tensor(const Tensor& t) {
        if (t.rank() != 4 || t.dtype() != Dtype::F32)
            throw ContractError("prediction stack tensor must be f32 of shape [T,H,W,K]");
        PredictionStack s;
        s.runs = static_cast<std::uint32_t>(t.shape()[0]);
        s.height = static_cast<std::uint32_t>(t.shape()[1]);
        s.width = static_cast<std::uint32_t>(t.shape()[2]);
        s.classes = static_cast<std::uint32_t>(t.shape()[3]);
        if (s.classes < 2) throw ContractError("prediction stack needs at least 2 classes");
        auto src = t.f32();
        s.logits.assign(src.begin(), src.end());
        return s;
    }

    static PredictionStack from_maps(const std::vector<LogitMap>& maps) {
        if (maps.empty()) throw ContractError("prediction stack is empty");
        PredictionStack s;
        s.runs = static_cast<std::uint32_t>(maps.size());
        s.height = maps[0].height;
        s.width = maps[0].width;
        s.classes = maps[0].classes;
        s.logits.reserve(std::size_t(s.runs) * s.pixels() * s.classes);
        for (const auto& m : maps) {
            if (m.height != s.height || m.width != s.width || m.classes != s.classes)
                throw ContractError("prediction stack members differ in shape");
            s.logits.insert(s.logits.end(), m.logits.begin(), m.logits.end());
        }
        return s;
    }
};

/// Output of a trained confidence branch, one value in [0,1] per pixel.
struct ConfidenceMap {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<float> values;

    ConfidenceMap() = default;
    ConfidenceMap(std::uint32_t h, std::uint32_t w, float fill = 1.0f)
        : height(h), width(w), values(std::size_t(h) * w, fill) {}

    static ConfidenceMap from_tensor(const Tensor& t) {
        if (t.rank() != 2 || t.dtype() != Dtype::F32)
            throw ContractError("confidence tensor must be f32 of shape [H,W]");
        ConfidenceMap m(static_cast<std::uint32_t>(t.shape()[0]),
                        static_cast<std::uint32_t>(t.shape()[1]));
        auto src = t.f32();
        std::copy(src.begin(), src.end(), m.values.begin());
        for (float v : m.values)
            if (!(v >= 0.0f && v <= 1.0f))
                throw ContractError("confidence value outside [0,1]");
        return m;
    }
};

/// Numerically stable softmax; invariant to shifting all inputs by a constant.
inline void softmax(std::span<const float> logits, std::span<double> out) {
    double m = -std::numeric_limits<double>::infinity();
    for (float v : logits) m = std::max(m, double(v));
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        out[j] = std::exp(double(logits[j]) - m);
        sum += out[j];
    }
    for (auto& v : out.first(logits.size())) v /= sum;
}

inline std::vector<double> softmax(std::span<const float> logits) {
    std::vector<double> p(logits.size());
    softmax(logits, p);
    return p;
}

namespace detail {

inline float clamp_unit(double v) {
    return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

// max softmax probability without materializing the full distribution
inline double max_softmax_prob(std::span<const float> logits, double inv_temp) {
    double m = -std::numeric_limits<double>::infinity();
    for (float v : logits) m = std::max(m, double(v) * inv_temp);
    double sum = 0.0;
    for (float v : logits) sum += std::exp(double(v) * inv_temp - m);
    return 1.0 / sum;  // exp(m - m) / sum
}

} // namespace detail

/// 1 - max softmax probability per pixel. Range [0, 1-1/K].
inline ScoreMap score_max_softmax(const LogitMap& l) {
    ScoreMap out(l.height, l.width);
    for (std::size_t i = 0; i < l.pixels(); ++i)
        out.scores[i] = detail::clamp_unit(1.0 - detail::max_softmax_prob(l.pixel(i), 1.0));
    return out;
}

/// Temperature-scaled variant of max softmax: 1 - max softmax(logits / T).
inline ScoreMap score_odin(const LogitMap& l, double temperature) {
    if (!(temperature > 0.0)) throw ContractError("ODIN temperature must be positive");
    const double inv = 1.0 / temperature;
    ScoreMap out(l.height, l.width);
    for (std::size_t i = 0; i < l.pixels(); ++i)
        out.scores[i] = detail::clamp_unit(1.0 - detail::max_softmax_prob(l.pixel(i), inv));
    return out;
}

namespace detail {

// Shannon entropy of a distribution, with 0*log 0 = 0.
inline double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

} // namespace detail

/// Entropy of the softmax distribution, normalized by its maximum ln K.
inline ScoreMap score_entropy(const LogitMap& l) {
    ScoreMap out(l.height, l.width);
    const double norm = std::log(double(l.classes));
    std::vector<double> p(l.classes);
    for (std::size_t i = 0; i < l.pixels(); ++i) {
        softmax(l.pixel(i), p);
        out.scores[i] = detail::clamp_unit(detail::entropy(p) / norm);
    }
    return out;
}

/// Sum over classes of the population variance of the T softmax probabilities,
/// normalized by the largest possible sum K/4.
inline ScoreMap score_varsum(const PredictionStack& s) {
    if (s.runs < 2) throw ContractError("variance methods need at least 2 runs");
    ScoreMap out(s.height, s.width);
    const double norm = double(s.classes) / 4.0;
    std::vector<double> p(s.classes);
    std::vector<double> sum(s.classes), sumsq(s.classes);
    for (std::size_t i = 0; i < s.pixels(); ++i) {
        std::fill(sum.begin(), sum.end(), 0.0);
        std::fill(sumsq.begin(), sumsq.end(), 0.0);
        for (std::uint32_t t = 0; t < s.runs; ++t) {
            softmax(s.pixel(t, i), p);
            for (std::uint32_t k = 0; k < s.classes; ++k) {
                sum[k] += p[k];
                sumsq[k] += p[k] * p[k];
            }
        }
        double total = 0.0;
        for (std::uint32_t k = 0; k < s.classes; ++k) {
            const double mean = sum[k] / s.runs;
            total += std::max(0.0, sumsq[k] / s.runs - mean * mean);
        }
        out.scores[i] = detail::clamp_unit(total / norm);
    }
    return out;
}

/// Entropy of the mean prediction minus the mean entropy of the individual
/// predictions, normalized by ln K. Nonnegative up to rounding (Jensen).
inline ScoreMap score_mutual_information(const PredictionStack& s) {
    if (s.runs < 2) throw ContractError("mutual information needs at least 2 runs");
    ScoreMap out(s.height, s.width);
    const double norm = std::log(double(s.classes));
    std::vector<double> p(s.classes), mean(s.classes);
    for (std::size_t i = 0; i < s.pixels(); ++i) {
        std::fill(mean.begin(), mean.end(), 0.0);
        double mean_entropy = 0.0;
        for (std::uint32_t t = 0; t < s.runs; ++t) {
            softmax(s.pixel(t, i), p);
            mean_entropy += detail::entropy(p);
            for (std::uint32_t k = 0; k < s.classes; ++k) mean[k] += p[k];
        }
        for (auto& v : mean) v /= s.runs;
        mean_entropy /= s.runs;
        const double mi = detail::entropy(mean) - mean_entropy;
        out.scores[i] = detail::clamp_unit(std::clamp(mi, 0.0, norm) / norm);
    }
    return out;
}

/// Raw (unnormalized, unclamped) mutual information per pixel; test hook for
/// the Jensen lower bound.
inline std::vector<double> raw_mutual_information(const PredictionStack& s) {
    if (s.runs < 2) throw ContractError("mutual information needs at least 2 runs");
    std::vector<double> out(s.pixels());
    std::vector<double> p(s.classes), mean(s.classes);
    for (std::size_t i = 0; i < s.pixels(); ++i) {
        std::fill(mean.begin(), mean.end(), 0.0);
        double mean_entropy = 0.0;
        for (std::uint32_t t = 0; t < s.runs; ++t) {
            softmax(s.pixel(t, i), p);
            mean_entropy += detail::entropy(p);
            for (std::uint32_t k = 0; k < s.classes; ++k) mean[k] += p[k];
        }
        for (auto& v : mean) v /= s.runs;
        out[i] = detail::entropy(mean) - mean_entropy / s.runs;
    }
    return out;
}

/// Orientation flip of the confidence branch output: score = 1 - c.
inline ScoreMap score_confidence(const ConfidenceMap& c) {
    ScoreMap out(c.height, c.width);
    for (std::size_t i = 0; i < c.values.size(); ++i)
        out.scores[i] = detail::clamp_unit(1.0 - double(c.values[i]));
    return out;
}

struct ConfidenceLoss {
    double task = 0.0;         // negative log likelihood of the hinted prediction
    double regularizer = 0.0;  // -log(c), pushes confidence toward 1
    double total = 0.0;        // task + lambda * regularizer
};

/// Loss arithmetic of the confidence branch for a single pixel. The Bernoulli
/// draw b gates the hint: b=0 disables it (c' = 1).
inline ConfidenceLoss confidence_losses(std::span<const float> p, std::span<const float> y,
                                        double c, bool b, double lambda = 0.5) {
    if (p.size() != y.size()) throw ContractError("prediction/target size mismatch");
    double psum = 0.0;
    for (float v : p) {
        if (v < 0.0f) throw ContractError("prediction has a negative probability");
        psum += v;
    }
    if (std::abs(psum - 1.0) > 1e-6) throw ContractError("prediction does not sum to 1");
    std::size_t hot = p.size();
    for (std::size_t j = 0; j < y.size(); ++j) {
        if (y[j] == 1.0f) {
            if (hot != p.size()) throw ContractError("target is not one-hot");
            hot = j;
        } else if (y[j] != 0.0f) {
            throw ContractError("target is not one-hot");
        }
    }
    if (hot == p.size()) throw ContractError("target is not one-hot");
    if (!(c >= 0.0 && c <= 1.0)) throw ContractError("confidence outside [0,1]");
    if (c == 0.0) throw ContractError("confidence of 0 makes the regularizer infinite");

    const double c_prime = b ? c : 1.0;
    const double p_hinted = c_prime * double(p[hot]) + (1.0 - c_prime);
    if (p_hinted <= 0.0) throw ContractError("hinted probability of the true class is 0");
    ConfidenceLoss out;
    out.task = -std::log(p_hinted);
    out.regularizer = -std::log(c);
    out.total = out.task + lambda * out.regularizer;
    return out;
}

/// Per-pixel class decision. Ties resolve to the smallest index.
inline LabelMap argmax_labels(const LogitMap& l) {
    LabelMap out(l.height, l.width);
    for (std::size_t i = 0; i < l.pixels(); ++i) {
        auto px = l.pixel(i);
        out.labels[i] = static_cast<std::uint16_t>(
            std::max_element(px.begin(), px.end()) - px.begin());
    }
    return out;
}

/// Replaces scores near predicted-class boundaries with the minimum score in
/// the Chebyshev radius-neighborhood. A pixel is near a boundary when a pixel
/// of another predicted class lies within the radius. Never raises a score.
inline ScoreMap boundary_suppress(const ScoreMap& scores, const LabelMap& pred, int radius) {
    if (scores.height != pred.height || scores.width != pred.width)
        throw ContractError("score/prediction shape mismatch");
    if (radius < 0) throw ContractError("radius must be nonnegative");
    if (radius == 0) return scores;
    ScoreMap out = scores;
    const auto h = static_cast<std::int64_t>(scores.height);
    const auto w = static_cast<std::int64_t>(scores.width);
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const std::uint16_t own = pred.at(std::uint32_t(y), std::uint32_t(x));
            bool near_boundary = false;
            float neigh_min = std::numeric_limits<float>::infinity();
            for (std::int64_t dy = -radius; dy <= radius; ++dy) {
                const std::int64_t ny = y + dy;
                if (ny < 0 || ny >= h) continue;
                for (std::int64_t dx = -radius; dx <= radius; ++dx) {
                    const std::int64_t nx = x + dx;
                    if (nx < 0 || nx >= w) continue;
                    if (pred.at(std::uint32_t(ny), std::uint32_t(nx)) != own) near_boundary = true;
                    neigh_min = std::min(neigh_min, scores.at(std::uint32_t(ny), std::uint32_t(nx)));
                }
            }
            if (near_boundary) out.at(std::uint32_t(y), std::uint32_t(x)) = neigh_min;
        }
    }
    return out;
}

enum class Method {
    MaxSoftmax,
    Odin,
    Entropy,
    VarSum,
    MutualInformation,
    Confidence,
    Mahalanobis,
};

inline std::optional<Method> method_from_string(const std::string& s) {
    if (s == "max_softmax") return Method::MaxSoftmax;
    if (s == "odin") return Method::Odin;
    if (s == "entropy") return Method::Entropy;
    if (s == "varsum") return Method::VarSum;
    if (s == "mutual_information") return Method::MutualInformation;
    if (s == "confidence") return Method::Confidence;
    if (s == "mahalanobis") return Method::Mahalanobis;
    return std::nullopt;
}

inline const char* method_name(Method m) {
    switch (m) {
    case Method::MaxSoftmax: return "max_softmax";
    case Method::Odin: return "odin";
    case Method::Entropy: return "entropy";
    case Method::VarSum: return "varsum";
    case Method::MutualInformation: return "mutual_information";
    case Method::Confidence: return "confidence";
    case Method::Mahalanobis: return "mahalanobis";
    }
    return "?";
}

} // namespace oodmap
