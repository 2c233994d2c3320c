// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "msas/common.hpp"
#include "msas/corpus.hpp"

namespace msas {

/// Quadratic weighted kappa between two integer rating vectors on the scale
/// [s_min, s_max].
///
/// kappa = 1 - (sum_ij w_ij O_ij) / (sum_ij w_ij E_ij) with
/// w_ij = (i-j)^2 / (R-1)^2, O the observed count matrix and E the outer
/// product of the marginals scaled to N. The (R-1)^2 factor cancels in the
/// ratio, so both sums are accumulated as 64-bit integers and the result is
/// exact up to one double division. A zero denominator (both raters constant
/// and equal) is defined as perfect agreement.
inline double qwk(const std::vector<int>& a, const std::vector<int>& b, int s_min, int s_max) {
    if (a.size() != b.size()) throw ShapeError("qwk: length mismatch");
    if (a.empty()) throw ShapeError("qwk: empty ratings");
    if (s_min >= s_max) throw ValueError("qwk: need s_min < s_max");
    const int r = s_max - s_min + 1;
    std::vector<std::int64_t> ha(static_cast<std::size_t>(r), 0), hb(static_cast<std::size_t>(r), 0);
    std::int64_t observed = 0;  // sum (a_i - b_i)^2
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] < s_min || a[i] > s_max || b[i] < s_min || b[i] > s_max)
            throw ValueError("qwk: rating outside [s_min, s_max]");
        const std::int64_t d = a[i] - b[i];
        observed += d * d;
        ++ha[static_cast<std::size_t>(a[i] - s_min)];
        ++hb[static_cast<std::size_t>(b[i] - s_min)];
    }
    std::int64_t expected = 0;  // sum (i-j)^2 ha_i hb_j
    for (int i = 0; i < r; ++i) {
        if (ha[static_cast<std::size_t>(i)] == 0) continue;
        for (int j = 0; j < r; ++j) {
            const std::int64_t d = i - j;
            expected += d * d * ha[static_cast<std::size_t>(i)] * hb[static_cast<std::size_t>(j)];
        }
    }
    if (expected == 0) return 1.0;
    const double num = static_cast<double>(observed) * static_cast<double>(a.size());
    return 1.0 - num / static_cast<double>(expected);
}

inline double rmse(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("rmse: length mismatch");
    if (a.empty()) throw ShapeError("rmse: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(a.size()));
}

struct PromptMetrics {
    bool has_qwk = false;
    double qwk = 0.0;
    double rmse = 0.0;
};

/// Score normalized predictions against raw labels: clip to [0,1],
/// denormalize, round on discrete prompts, then QWK (discrete) and RMSE.
/// RMSE is computed on the unrounded denormalized predictions.
inline PromptMetrics evaluate_prompt(const std::vector<double>& preds_norm,
                                     const std::vector<double>& labels_raw,
                                     const PromptSpec& spec) {
    if (preds_norm.size() != labels_raw.size()) throw ShapeError("evaluate_prompt: length mismatch");
    if (preds_norm.empty()) throw ShapeError("evaluate_prompt: empty input");
    spec.validate();
    PromptMetrics m;
    std::vector<double> denorm(preds_norm.size());
    for (std::size_t i = 0; i < preds_norm.size(); ++i)
        denorm[i] = denormalize_score(preds_norm[i], spec, RoundMode::None);
    m.rmse = rmse(denorm, labels_raw);
    if (spec.discrete) {
        std::vector<int> pi(preds_norm.size()), li(preds_norm.size());
        for (std::size_t i = 0; i < preds_norm.size(); ++i) {
            pi[i] = static_cast<int>(denormalize_score(preds_norm[i], spec, RoundMode::Nearest));
            li[i] = static_cast<int>(std::llround(labels_raw[i]));
        }
        m.qwk = qwk(pi, li, static_cast<int>(std::llround(spec.score_min)),
                    static_cast<int>(std::llround(spec.score_max)));
        m.has_qwk = true;
    }
    return m;
}

}  // namespace msas
