// Test-only reference implementations. Deliberately brute-force and written
// against the math, not against the library code paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace oracle {

// softmax in extended precision
inline std::vector<long double> softmax_ld(std::span<const float> logits) {
    long double m = logits[0];
    for (float v : logits) m = std::max<long double>(m, v);
    std::vector<long double> p(logits.size());
    long double sum = 0.0L;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        p[j] = std::exp(static_cast<long double>(logits[j]) - m);
        sum += p[j];
    }
    for (auto& v : p) v /= sum;
    return p;
}

// Mann-Whitney rank statistic; ties count one half.
inline double auroc_rank(std::span<const float> scores, std::span<const int> labels) {
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < scores.size(); ++i)
        (labels[i] ? pos : neg).push_back(scores[i]);
    double wins = 0.0;
    for (double p : pos)
        for (double n : neg) {
            if (p > n) wins += 1.0;
            else if (p == n) wins += 0.5;
        }
    return wins / (double(pos.size()) * double(neg.size()));
}

// Average precision over every distinct score cut point.
inline double auprc_cutpoints(std::span<const float> scores, std::span<const int> labels) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::size_t positives = 0;
    for (int l : labels) positives += std::size_t(l);
    double ap = 0.0, prev_recall = 0.0;
    std::size_t tp = 0, seen = 0, i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        for (std::size_t k = i; k < j; ++k) tp += std::size_t(labels[idx[k]]);
        seen = j;
        const double recall = double(tp) / double(positives);
        const double precision = double(tp) / double(seen);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

// Maximum of TP/(TP+FP+FN) over every distinct score cut point.
inline double max_iou_cutpoints(std::span<const float> scores, std::span<const int> labels) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::size_t positives = 0;
    for (int l : labels) positives += std::size_t(l);
    double best = 0.0;
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        for (std::size_t k = i; k < j; ++k) {
            if (labels[idx[k]]) ++tp;
            else ++fp;
        }
        best = std::max(best, double(tp) / double(positives + fp));
        i = j;
    }
    return best;
}

// Direct per-threshold confusion recount with the score >= threshold predicate.
struct Confusion {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Confusion count_at(double threshold, std::span<const float> scores,
                          std::span<const int> labels) {
    Confusion c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = double(scores[i]) >= threshold;
        if (labels[i]) (predicted ? c.tp : c.fn) += 1;
        else (predicted ? c.fp : c.tn) += 1;
    }
    return c;
}

// Two-pass population variance.
inline double population_variance(std::span<const double> xs) {
    double mean = 0.0;
    for (double v : xs) mean += v;
    mean /= double(xs.size());
    double acc = 0.0;
    for (double v : xs) acc += (v - mean) * (v - mean);
    return acc / double(xs.size());
}

} // namespace oracle
