// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "msas/common.hpp"
#include "msas/tensor.hpp"

namespace msas {

/// Weights of the combined objective plus the ranking margin and the
/// consistency coefficient. The combined loss is
/// alpha * MSE + beta * MR + gamma * SIM.
struct LossWeights {
    double alpha = 1.0;
    double beta = 0.0;
    double gamma = 0.0;
    double mr_margin = 0.0;
    double rdrop_coeff = 0.0;

    void validate() const {
        if (alpha < 0 || beta < 0 || gamma < 0 || rdrop_coeff < 0)
            throw ValueError("loss weights must be non-negative");
        if (alpha == 0 && beta == 0 && gamma == 0)
            throw ValueError("at least one of alpha/beta/gamma must be positive");
    }
};

// Reference implementations in double precision. These are the canonical
// definitions; the tensor ops below must agree with them and are checked
// against their finite differences.
namespace losses {

inline double mse(const std::vector<double>& y, const std::vector<double>& y_hat) {
    if (y.size() != y_hat.size()) throw ShapeError("mse: length mismatch");
    if (y.empty()) throw ShapeError("mse: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y[i] - y_hat[i];
        acc += d * d;
    }
    return acc / static_cast<double>(y.size());
}

/// 1 - cos(y, y_hat). A zero-norm vector carries no direction: the loss is
/// defined as 1 with zero gradient and reported through `degenerate`.
inline double sim(const std::vector<double>& y, const std::vector<double>& y_hat,
                  bool* degenerate = nullptr) {
    if (y.size() != y_hat.size()) throw ShapeError("sim: length mismatch");
    if (y.size() < 2) throw ShapeError("sim: need at least 2 samples");
    double dot = 0.0, ny = 0.0, nh = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        dot += y[i] * y_hat[i];
        ny += y[i] * y[i];
        nh += y_hat[i] * y_hat[i];
    }
    if (degenerate) *degenerate = false;
    if (ny == 0.0 || nh == 0.0) {
        if (degenerate) *degenerate = true;
        return 1.0;
    }
    return 1.0 - dot / (std::sqrt(ny) * std::sqrt(nh));
}

inline int mr_direction(double label_i, double label_j, double y_i, double y_j) {
    if (label_i > label_j) return 1;
    if (label_i < label_j) return -1;
    // tie: penalize any separation, -sgn(y_i - y_j), sgn(0) = 0
    if (y_i > y_j) return -1;
    if (y_i < y_j) return 1;
    return 0;
}

/// Margin ranking over all unordered pairs i < j:
/// mean of max(0, -r_ij (y_i - y_j) + margin).
inline double mr(const std::vector<double>& y, const std::vector<double>& y_hat, double margin) {
    if (y.size() != y_hat.size()) throw ShapeError("mr: length mismatch");
    const std::size_t n = y.size();
    if (n < 2) throw ShapeError("mr: need at least 2 samples");
    double acc = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const int r = mr_direction(y_hat[i], y_hat[j], y[i], y[j]);
            const double term = -static_cast<double>(r) * (y[i] - y[j]) + margin;
            if (term > 0.0) acc += term;
            ++pairs;
        }
    }
    return acc / static_cast<double>(pairs);
}

/// alpha*MSE + beta*MR + gamma*SIM. Batches of one sample fall back to the
/// pointwise term only (pair and cosine losses need >= 2 samples).
inline double combined(const std::vector<double>& y, const std::vector<double>& y_hat,
                       const LossWeights& w) {
    w.validate();
    double total = w.alpha * mse(y, y_hat);
    if (y.size() >= 2) {
        if (w.beta > 0) total += w.beta * mr(y, y_hat, w.mr_margin);
        if (w.gamma > 0) total += w.gamma * sim(y, y_hat);
    }
    return total;
}

/// Mean squared disagreement between two forward passes.
inline double rdrop_consistency(const std::vector<double>& y1, const std::vector<double>& y2) {
    if (y1.size() != y2.size()) throw ShapeError("rdrop_consistency: length mismatch");
    if (y1.empty()) throw ShapeError("rdrop_consistency: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < y1.size(); ++i) {
        const double d = y1[i] - y2[i];
        acc += d * d;
    }
    return acc / static_cast<double>(y1.size());
}

}  // namespace losses

// ---------------------------------------------------------------------------
// Differentiable versions over prediction tensors. Labels are constants.
// ---------------------------------------------------------------------------

inline Tensor mse_op(Tape* tape, const Tensor& y, const std::vector<float>& labels) {
    if (y.ndim() != 1 || static_cast<std::size_t>(y.dim(0)) != labels.size())
        throw ShapeError("mse_op: length mismatch");
    const int n = y.dim(0);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = static_cast<double>(y(i)) - labels[static_cast<std::size_t>(i)];
        acc += d * d;
    }
    Tensor out = Tensor::scalar(static_cast<float>(acc / n));
    if (detail::recording(tape, y)) {
        out.set_requires_grad(true);
        tape->record(out, [y, labels, out, n]() mutable {
            if (!out.has_grad() || !y.requires_grad()) return;
            const float g = out.grad()[0];
            auto& gy = y.grad();
            for (int i = 0; i < n; ++i)
                gy[i] += g * 2.0f * (y(i) - labels[static_cast<std::size_t>(i)]) / n;
        });
    }
    return out;
}

inline Tensor sim_op(Tape* tape, const Tensor& y, const std::vector<float>& labels,
                     bool* degenerate = nullptr) {
    if (y.ndim() != 1 || static_cast<std::size_t>(y.dim(0)) != labels.size())
        throw ShapeError("sim_op: length mismatch");
    const int n = y.dim(0);
    if (n < 2) throw ShapeError("sim_op: need at least 2 samples");
    double dotv = 0.0, ny = 0.0, nh = 0.0;
    for (int i = 0; i < n; ++i) {
        dotv += static_cast<double>(y(i)) * labels[static_cast<std::size_t>(i)];
        ny += static_cast<double>(y(i)) * y(i);
        nh += static_cast<double>(labels[static_cast<std::size_t>(i)]) *
              labels[static_cast<std::size_t>(i)];
    }
    if (degenerate) *degenerate = (ny == 0.0 || nh == 0.0);
    if (ny == 0.0 || nh == 0.0) return Tensor::scalar(1.0f);  // no direction, no gradient
    const double p = std::sqrt(ny), q = std::sqrt(nh);
    const double cosv = dotv / (p * q);
    Tensor out = Tensor::scalar(static_cast<float>(1.0 - cosv));
    if (detail::recording(tape, y)) {
        out.set_requires_grad(true);
        tape->record(out, [y, labels, out, n, p, q, cosv]() mutable {
            if (!out.has_grad() || !y.requires_grad()) return;
            const double g = out.grad()[0];
            auto& gy = y.grad();
            for (int i = 0; i < n; ++i) {
                const double dcos = labels[static_cast<std::size_t>(i)] / (p * q) -
                                    cosv * static_cast<double>(y(i)) / (p * p);
                gy[i] += static_cast<float>(-g * dcos);
            }
        });
    }
    return out;
}

inline Tensor mr_op(Tape* tape, const Tensor& y, const std::vector<float>& labels, float margin) {
    if (y.ndim() != 1 || static_cast<std::size_t>(y.dim(0)) != labels.size())
        throw ShapeError("mr_op: length mismatch");
    const int n = y.dim(0);
    if (n < 2) throw ShapeError("mr_op: need at least 2 samples");
    const std::int64_t pairs = static_cast<std::int64_t>(n) * (n - 1) / 2;
    // active pairs and their direction, fixed at forward time (subgradient
    // for the tie case)
    auto active = std::make_shared<std::vector<std::pair<int, int>>>();
    auto dirs = std::make_shared<std::vector<int>>();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const int r = losses::mr_direction(labels[static_cast<std::size_t>(i)],
                                               labels[static_cast<std::size_t>(j)], y(i), y(j));
            const double term = -static_cast<double>(r) * (static_cast<double>(y(i)) - y(j)) + margin;
            if (term > 0.0) {
                acc += term;
                active->push_back({i, j});
                dirs->push_back(r);
            }
        }
    }
    Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(pairs)));
    if (detail::recording(tape, y)) {
        out.set_requires_grad(true);
        tape->record(out, [y, out, active, dirs, pairs]() mutable {
            if (!out.has_grad() || !y.requires_grad()) return;
            const float g = out.grad()[0] / static_cast<float>(pairs);
            auto& gy = y.grad();
            for (std::size_t p = 0; p < active->size(); ++p) {
                const auto [i, j] = (*active)[p];
                const float r = static_cast<float>((*dirs)[p]);
                gy[i] += -g * r;
                gy[j] += g * r;
            }
        });
    }
    return out;
}

/// alpha*MSE + beta*MR + gamma*SIM on a prediction tensor.
inline Tensor combined_op(Tape* tape, const Tensor& y, const std::vector<float>& labels,
                          const LossWeights& w) {
    w.validate();
    Tensor total = scale(tape, mse_op(tape, y, labels), static_cast<float>(w.alpha));
    if (y.dim(0) >= 2) {
        if (w.beta > 0)
            total = add(tape, total,
                        scale(tape, mr_op(tape, y, labels, static_cast<float>(w.mr_margin)),
                              static_cast<float>(w.beta)));
        if (w.gamma > 0)
            total = add(tape, total, scale(tape, sim_op(tape, y, labels),
                                           static_cast<float>(w.gamma)));
    }
    return total;
}

inline Tensor rdrop_op(Tape* tape, const Tensor& y1, const Tensor& y2) {
    if (y1.ndim() != 1 || y2.ndim() != 1 || y1.dim(0) != y2.dim(0))
        throw ShapeError("rdrop_op: length mismatch");
    const int n = y1.dim(0);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = static_cast<double>(y1(i)) - y2(i);
        acc += d * d;
    }
    Tensor out = Tensor::scalar(static_cast<float>(acc / n));
    if (detail::recording(tape, y1, y2)) {
        out.set_requires_grad(true);
        tape->record(out, [y1, y2, out, n]() mutable {
            if (!out.has_grad()) return;
            const float g = out.grad()[0];
            for (int i = 0; i < n; ++i) {
                const float d = 2.0f * (y1(i) - y2(i)) / n;
                if (y1.requires_grad()) y1.grad()[i] += g * d;
                if (y2.requires_grad()) y2.grad()[i] += -g * d;
            }
        });
    }
    return out;
}

}  // namespace msas
