#pragma once

#include "oodmap/tensor.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace oodmap {

/// A metric whose preconditions (positives/negatives present) are not met.
class UndefinedMetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kThresholdCount = 400;

/// Threshold k of the fixed grid: k/399, inclusive of 0 and 1.
inline double threshold_value(std::size_t k) {
    return double(k) / double(kThresholdCount - 1);
}

/// Confusion counts for every grid threshold, with "predicted OOD" meaning
/// score >= threshold and "truth OOD" meaning label == kOodId. Pixels labelled
/// kIgnoreId contribute nothing. Accumulation is additive across images and
/// sweeps merge by elementwise sum, so sharded evaluation equals monolithic.
struct ThresholdSweep {
    std::array<std::uint64_t, kThresholdCount> tp{}, fp{}, tn{}, fn{};

    std::uint64_t positives() const { return tp[0] + fn[0]; }
    std::uint64_t negatives() const { return fp[0] + tn[0]; }
    std::uint64_t total() const { return positives() + negatives(); }

    bool operator==(const ThresholdSweep& o) const {
        return tp == o.tp && fp == o.fp && tn == o.tn && fn == o.fn;
    }
};

namespace detail {

// Largest k with threshold_value(k) <= s. Always defined since t_0 = 0 <= s.
inline std::size_t last_predicted_threshold(double s) {
    auto k = static_cast<std::int64_t>(s * double(kThresholdCount - 1));
    k = std::clamp<std::int64_t>(k, 0, kThresholdCount - 1);
    while (k + 1 < std::int64_t(kThresholdCount) && s >= threshold_value(std::size_t(k + 1))) ++k;
    while (k > 0 && s < threshold_value(std::size_t(k))) --k;
    return std::size_t(k);
}

} // namespace detail

inline void accumulate(ThresholdSweep& sweep, const ScoreMap& scores, const LabelMap& truth) {
    if (scores.height != truth.height || scores.width != truth.width)
        throw ContractError("score/truth shape mismatch");
    std::array<std::uint64_t, kThresholdCount> pos_hist{}, neg_hist{};
    std::uint64_t pos_total = 0, neg_total = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const std::uint16_t label = truth.labels[i];
        if (label == kIgnoreId) continue;
        const std::size_t k = detail::last_predicted_threshold(double(scores.scores[i]));
        if (label == kOodId) {
            ++pos_hist[k];
            ++pos_total;
        } else {
            ++neg_hist[k];
            ++neg_total;
        }
    }
    std::uint64_t pos_suffix = 0, neg_suffix = 0;
    for (std::size_t k = kThresholdCount; k-- > 0;) {
        pos_suffix += pos_hist[k];
        neg_suffix += neg_hist[k];
        sweep.tp[k] += pos_suffix;
        sweep.fn[k] += pos_total - pos_suffix;
        sweep.fp[k] += neg_suffix;
        sweep.tn[k] += neg_total - neg_suffix;
    }
}

inline ThresholdSweep merge(const ThresholdSweep& a, const ThresholdSweep& b) {
    ThresholdSweep out = a;
    for (std::size_t k = 0; k < kThresholdCount; ++k) {
        out.tp[k] += b.tp[k];
        out.fp[k] += b.fp[k];
        out.tn[k] += b.tn[k];
        out.fn[k] += b.fn[k];
    }
    return out;
}

/// Trapezoidal area under TPR-vs-FPR across the grid, with the (0,0) and (1,1)
/// endpoints appended.
inline double auroc(const ThresholdSweep& s) {
    const auto P = s.positives();
    const auto N = s.negatives();
    if (P == 0) throw UndefinedMetricError("AUROC undefined: no positive pixels");
    if (N == 0) throw UndefinedMetricError("AUROC undefined: no negative pixels");
    double area = 0.0;
    double prev_fpr = 0.0, prev_tpr = 0.0;
    for (std::size_t k = kThresholdCount; k-- > 0;) {  // threshold descending
        const double fpr = double(s.fp[k]) / double(N);
        const double tpr = double(s.tp[k]) / double(P);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    area += (1.0 - prev_fpr) * (1.0 + prev_tpr) / 2.0;
    return area;
}

/// Area under precision-vs-recall, integrated as a threshold-descending step
/// sum (each recall increment weighted by the precision reached there).
/// Precision is 1 when nothing is predicted positive.
inline double auprc(const ThresholdSweep& s) {
    const auto P = s.positives();
    if (P == 0) throw UndefinedMetricError("AUPRC undefined: no positive pixels");
    double area = 0.0;
    double prev_recall = 0.0;
    for (std::size_t k = kThresholdCount; k-- > 0;) {
        const double recall = double(s.tp[k]) / double(P);
        const double precision =
            (s.tp[k] + s.fp[k]) == 0 ? 1.0 : double(s.tp[k]) / double(s.tp[k] + s.fp[k]);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

struct FprAtTpr {
    double value = 1.0;
    bool saturated = false;  // set when no grid point reaches the target TPR
};

/// FPR at the highest threshold whose TPR reaches the target (default 95%).
inline FprAtTpr fpr_at_tpr(const ThresholdSweep& s, double target = 0.95) {
    const auto P = s.positives();
    const auto N = s.negatives();
    if (P == 0) throw UndefinedMetricError("FPRatTPR undefined: no positive pixels");
    if (N == 0) throw UndefinedMetricError("FPRatTPR undefined: no negative pixels");
    for (std::size_t k = kThresholdCount; k-- > 0;) {
        const double tpr = double(s.tp[k]) / double(P);
        if (tpr >= target) return {double(s.fp[k]) / double(N), false};
    }
    return {1.0, true};
}

struct MaxIou {
    double value = 0.0;
    double threshold = 0.0;  // smallest grid threshold attaining the maximum
};

inline MaxIou max_iou(const ThresholdSweep& s) {
    if (s.positives() == 0) throw UndefinedMetricError("MaxIoU undefined: no positive pixels");
    MaxIou best;
    best.value = -1.0;
    for (std::size_t k = 0; k < kThresholdCount; ++k) {
        const double denom = double(s.tp[k] + s.fp[k] + s.fn[k]);
        const double iou = double(s.tp[k]) / denom;
        if (iou > best.value) {
            best.value = iou;
            best.threshold = threshold_value(k);
        }
    }
    return best;
}

/// Smallest grid threshold maximizing the Youden index TPR - FPR.
inline double youden_threshold(const ThresholdSweep& s) {
    const auto P = s.positives();
    const auto N = s.negatives();
    if (P == 0 || N == 0)
        throw UndefinedMetricError("Youden threshold undefined: one-class sweep");
    double best = -2.0;
    double best_threshold = 0.0;
    for (std::size_t k = 0; k < kThresholdCount; ++k) {
        const double j = double(s.tp[k]) / double(P) - double(s.fp[k]) / double(N);
        if (j > best) {
            best = j;
            best_threshold = threshold_value(k);
        }
    }
    return best_threshold;
}

/// Absolute difference between the Youden- and MaxIoU-selected thresholds.
inline double threshold_gap(const ThresholdSweep& s) {
    return std::abs(youden_threshold(s) - max_iou(s).threshold);
}

struct RocPoint {
    double fpr = 0.0, tpr = 0.0;
};
struct PrPoint {
    double recall = 0.0, precision = 1.0;
};

struct MetricsReport {
    std::optional<double> auroc, auprc, fpr_at_tpr, max_iou;
    std::optional<double> max_iou_threshold, youden_threshold, threshold_gap;
    std::uint64_t positives = 0, negatives = 0;
    std::vector<RocPoint> roc;  // threshold descending
    std::vector<PrPoint> pr;
    std::vector<std::string> warnings;
};

/// Extracts all metrics, downgrading undefined ones to nulls plus a warning.
inline MetricsReport compute_report(const ThresholdSweep& s) {
    MetricsReport r;
    r.positives = s.positives();
    r.negatives = s.negatives();
    auto attempt = [&](auto fn, std::optional<double>& slot) {
        try {
            slot = fn();
        } catch (const UndefinedMetricError& e) {
            r.warnings.emplace_back(e.what());
        }
    };
    attempt([&] { return auroc(s); }, r.auroc);
    attempt([&] { return auprc(s); }, r.auprc);
    attempt([&] {
        auto f = fpr_at_tpr(s);
        if (f.saturated) r.warnings.emplace_back("target TPR not reached; FPRatTPR forced to 1");
        return f.value;
    }, r.fpr_at_tpr);
    attempt([&] { return max_iou(s).value; }, r.max_iou);
    attempt([&] { return max_iou(s).threshold; }, r.max_iou_threshold);
    attempt([&] { return youden_threshold(s); }, r.youden_threshold);
    if (r.max_iou_threshold && r.youden_threshold)
        r.threshold_gap = std::abs(*r.youden_threshold - *r.max_iou_threshold);
    if (r.positives + r.negatives > 0) {
        const double P = double(r.positives), N = double(r.negatives);
        for (std::size_t k = kThresholdCount; k-- > 0;) {
            RocPoint rp;
            rp.fpr = N > 0 ? double(s.fp[k]) / N : std::numeric_limits<double>::quiet_NaN();
            rp.tpr = P > 0 ? double(s.tp[k]) / P : std::numeric_limits<double>::quiet_NaN();
            r.roc.push_back(rp);
            PrPoint pp;
            pp.recall = P > 0 ? double(s.tp[k]) / P : std::numeric_limits<double>::quiet_NaN();
            pp.precision =
                (s.tp[k] + s.fp[k]) == 0 ? 1.0 : double(s.tp[k]) / double(s.tp[k] + s.fp[k]);
            r.pr.push_back(pp);
        }
    } else {
        r.warnings.emplace_back("sweep is empty (all pixels ignored?)");
    }
    return r;
}

/// 400-row table for plotting: threshold, raw counts, and derived rates.
inline void write_sweep_csv(const ThresholdSweep& s, std::ostream& out) {
    const double P = double(s.positives());
    const double N = double(s.negatives());
    out << "threshold,tp,fp,tn,fn,tpr,fpr,precision,iou\n";
    out << std::setprecision(10);
    for (std::size_t k = 0; k < kThresholdCount; ++k) {
        const double tpr = P > 0 ? double(s.tp[k]) / P : std::nan("");
        const double fpr = N > 0 ? double(s.fp[k]) / N : std::nan("");
        const double prec =
            (s.tp[k] + s.fp[k]) == 0 ? 1.0 : double(s.tp[k]) / double(s.tp[k] + s.fp[k]);
        const double denom = double(s.tp[k] + s.fp[k] + s.fn[k]);
        const double iou = denom > 0 ? double(s.tp[k]) / denom : std::nan("");
        out << threshold_value(k) << ',' << s.tp[k] << ',' << s.fp[k] << ',' << s.tn[k] << ','
            << s.fn[k] << ',' << tpr << ',' << fpr << ',' << prec << ',' << iou << '\n';
    }
}

/// Mean over classes present in the truth of per-class TP/(TP+FP+FN).
/// Pixels whose truth is kIgnoreId are excluded entirely.
inline double miou(const LabelMap& pred, const LabelMap& truth, std::uint32_t classes) {
    if (pred.height != truth.height || pred.width != truth.width)
        throw ContractError("prediction/truth shape mismatch");
    std::vector<std::uint64_t> tp(classes, 0), fp(classes, 0), fn(classes, 0), present(classes, 0);
    std::uint64_t counted = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const std::uint16_t t = truth.labels[i];
        if (t == kIgnoreId) continue;
        ++counted;
        const std::uint16_t p = pred.labels[i];
        if (t < classes) {
            ++present[t];
            if (p == t) ++tp[t];
            else ++fn[t];
        }
        if (p < classes && p != t) ++fp[p];
    }
    if (counted == 0) throw UndefinedMetricError("mIoU undefined: no non-ignore pixels");
    double sum = 0.0;
    std::uint32_t n = 0;
    for (std::uint32_t c = 0; c < classes; ++c) {
        if (present[c] == 0) continue;
        const double denom = double(tp[c] + fp[c] + fn[c]);
        sum += double(tp[c]) / denom;
        ++n;
    }
    if (n == 0) throw UndefinedMetricError("mIoU undefined: no class pixels in truth");
    return sum / double(n);
}

} // namespace oodmap
