// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "msas/common.hpp"
#include "msas/rng.hpp"

namespace msas {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

/// Dense row-major float32 tensor with an optional gradient buffer.
///
/// Tensor is a cheap shared handle: copies alias the same storage, which is
/// what lets tape closures keep operands alive. Gradients are allocated
/// lazily on first access and always match the data length.
class Tensor {
    struct Impl {
        Shape shape;
        std::vector<float> data;
        bool requires_grad = false;
        std::vector<float> grad;  // empty until touched
    };

 public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return build(std::move(shape), 0.0f, requires_grad);
    }
    static Tensor full(Shape shape, float value, bool requires_grad = false) {
        return build(std::move(shape), value, requires_grad);
    }
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw ShapeError("tensor: data length does not match shape");
        for (int d : shape)
            if (d <= 0) throw ShapeError("tensor: non-positive dimension");
        Tensor t;
        t.p_ = std::make_shared<Impl>();
        t.p_->shape = std::move(shape);
        t.p_->data = std::move(data);
        t.p_->requires_grad = requires_grad;
        return t;
    }
    static Tensor scalar(float value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(p_); }
    const Shape& shape() const { return p_->shape; }
    int ndim() const { return static_cast<int>(p_->shape.size()); }
    int dim(int i) const { return p_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(p_->data.size()); }

    float* data() { return p_->data.data(); }
    const float* data() const { return p_->data.data(); }
    std::vector<float>& vec() { return p_->data; }
    const std::vector<float>& vec() const { return p_->data; }

    float& operator()(int i) { return p_->data[static_cast<std::size_t>(i)]; }
    float operator()(int i) const { return p_->data[static_cast<std::size_t>(i)]; }
    float& operator()(int r, int c) {
        return p_->data[static_cast<std::size_t>(r) * dim(1) + c];
    }
    float operator()(int r, int c) const {
        return p_->data[static_cast<std::size_t>(r) * dim(1) + c];
    }

    /// Scalar read; requires a single-element tensor.
    float value() const {
        if (size() != 1) throw ShapeError("value(): tensor is not scalar");
        return p_->data[0];
    }

    bool requires_grad() const { return p_->requires_grad; }
    void set_requires_grad(bool rg) { p_->requires_grad = rg; }

    bool has_grad() const { return !p_->grad.empty(); }

    /// Gradient buffer, allocated as zeros on first access. Tensor is a
    /// shared handle, so the buffer is mutable through const handles (the
    /// tape's backward closures rely on this).
    std::vector<float>& grad() const {
        if (p_->grad.empty()) p_->grad.assign(p_->data.size(), 0.0f);
        return p_->grad;
    }

    void zero_grad() const {
        if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), 0.0f);
    }

    /// Identity of the underlying storage (for parameter registries).
    const void* id() const { return p_.get(); }

    Tensor clone() const {
        Tensor t = from_data(p_->shape, p_->data, p_->requires_grad);
        return t;
    }

 private:
    static Tensor build(Shape shape, float value, bool requires_grad) {
        std::int64_t n = shape_numel(shape);
        for (int d : shape)
            if (d <= 0) throw ShapeError("tensor: non-positive dimension");
        Tensor t;
        t.p_ = std::make_shared<Impl>();
        t.p_->shape = std::move(shape);
        t.p_->data.assign(static_cast<std::size_t>(n), value);
        t.p_->requires_grad = requires_grad;
        return t;
    }

    std::shared_ptr<Impl> p_;
};

/// Recorded reverse-mode program. Nodes are appended in execution order, so
/// every node's inputs precede it; backward replays the closures in reverse.
///
/// Contract: backward() does not reset leaf gradients. Running it twice over
/// the same tape accumulates leaf grads additively (intermediate grads are
/// re-derived on every pass).
class Tape {
 public:
    void record(const Tensor& out, std::function<void()> fn) {
        nodes_.push_back({out, std::move(fn)});
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    /// Seed d(loss)/d(loss) = 1 and propagate to every recorded input.
    void backward(const Tensor& loss) {
        if (loss.size() != 1) throw ShapeError("backward: loss must be scalar");
        for (auto& n : nodes_) n.out.zero_grad();
        loss.grad()[0] += 1.0f;
        replay();
    }

    /// Propagate whatever gradients are already seeded on outputs.
    void replay() {
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
    }

 private:
    struct Node {
        Tensor out;
        std::function<void()> fn;
    };
    std::vector<Node> nodes_;
};

inline void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

namespace detail {

inline bool recording(const Tape* tape, const Tensor& a) {
    return tape != nullptr && a.requires_grad();
}
inline bool recording(const Tape* tape, const Tensor& a, const Tensor& b) {
    return tape != nullptr && (a.requires_grad() || b.requires_grad());
}

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul family
// ---------------------------------------------------------------------------

/// C[m×n] = A[m×k] · B[k×n]
inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw ShapeError("matmul: operands must be 2-D");
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) throw ShapeError("matmul: inner dimensions disagree");
    Tensor out = Tensor::zeros({m, n});
    {
        detail::MapC A(a.data(), m, k), B(b.data(), k, n);
        detail::MapM C(out.data(), m, n);
        C.noalias() = A * B;
    }
    if (detail::recording(tape, a, b)) {
        out.set_requires_grad(true);
        tape->record(out, [a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            detail::MapC dC(out.grad().data(), m, n);
            if (a.requires_grad()) {
                detail::MapC B(b.data(), k, n);
                detail::MapM dA(a.grad().data(), m, k);
                dA.noalias() += dC * B.transpose();
            }
            if (b.requires_grad()) {
                detail::MapC A(a.data(), m, k);
                detail::MapM dB(b.grad().data(), k, n);
                dB.noalias() += A.transpose() * dC;
            }
        });
    }
    return out;
}

/// C[m×n] = A[m×k] · B[n×k]ᵀ  (attention scores)
inline Tensor matmul_nt(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw ShapeError("matmul_nt: operands must be 2-D");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) throw ShapeError("matmul_nt: inner dimensions disagree");
    Tensor out = Tensor::zeros({m, n});
    {
        detail::MapC A(a.data(), m, k), B(b.data(), n, k);
        detail::MapM C(out.data(), m, n);
        C.noalias() = A * B.transpose();
    }
    if (detail::recording(tape, a, b)) {
        out.set_requires_grad(true);
        tape->record(out, [a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            detail::MapC dC(out.grad().data(), m, n);
            if (a.requires_grad()) {
                detail::MapC B(b.data(), n, k);
                detail::MapM dA(a.grad().data(), m, k);
                dA.noalias() += dC * B;
            }
            if (b.requires_grad()) {
                detail::MapC A(a.data(), m, k);
                detail::MapM dB(b.grad().data(), n, k);
                dB.noalias() += dC.transpose() * A;
            }
        });
    }
    return out;
}

/// y[m] = A[m×n] · x[n]
inline Tensor matvec(Tape* tape, const Tensor& a, const Tensor& x) {
    if (a.ndim() != 2 || x.ndim() != 1) throw ShapeError("matvec: want matrix and vector");
    const int m = a.dim(0), n = a.dim(1);
    if (x.dim(0) != n) throw ShapeError("matvec: width mismatch");
    Tensor out = Tensor::zeros({m});
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        const float* row = a.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) acc += static_cast<double>(row[j]) * x(j);
        out(i) = static_cast<float>(acc);
    }
    if (detail::recording(tape, a, x)) {
        out.set_requires_grad(true);
        tape->record(out, [a, x, out, m, n]() mutable {
            if (!out.has_grad()) return;
            const auto& dy = out.grad();
            if (a.requires_grad()) {
                auto& dA = a.grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        dA[static_cast<std::size_t>(i) * n + j] += dy[i] * x(j);
            }
            if (x.requires_grad()) {
                auto& dx = x.grad();
                for (int i = 0; i < m; ++i) {
                    const float* row = a.data() + static_cast<std::size_t>(i) * n;
                    for (int j = 0; j < n; ++j) dx[j] += dy[i] * row[j];
                }
            }
        });
    }
    return out;
}

/// y[d] = H[m×d]ᵀ · w[m]   (weighted sum of rows)
inline Tensor matvec_tn(Tape* tape, const Tensor& h, const Tensor& w) {
    if (h.ndim() != 2 || w.ndim() != 1) throw ShapeError("matvec_tn: want matrix and vector");
    const int m = h.dim(0), d = h.dim(1);
    if (w.dim(0) != m) throw ShapeError("matvec_tn: length mismatch");
    Tensor out = Tensor::zeros({d});
    for (int j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += static_cast<double>(h(i, j)) * w(i);
        out(j) = static_cast<float>(acc);
    }
    if (detail::recording(tape, h, w)) {
        out.set_requires_grad(true);
        tape->record(out, [h, w, out, m, d]() mutable {
            if (!out.has_grad()) return;
            const auto& dy = out.grad();
            if (h.requires_grad()) {
                auto& dH = h.grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < d; ++j)
                        dH[static_cast<std::size_t>(i) * d + j] += w(i) * dy[j];
            }
            if (w.requires_grad()) {
                auto& dw = w.grad();
                for (int i = 0; i < m; ++i) {
                    double acc = 0.0;
                    for (int j = 0; j < d; ++j)
                        acc += static_cast<double>(h(i, j)) * dy[j];
                    dw[i] += static_cast<float>(acc);
                }
            }
        });
    }
    return out;
}

/// Scalar dot product of two equal-length vectors.
inline Tensor dot(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 1 || b.ndim() != 1 || a.dim(0) != b.dim(0))
        throw ShapeError("dot: want equal-length vectors");
    double acc = 0.0;
    for (int i = 0; i < a.dim(0); ++i) acc += static_cast<double>(a(i)) * b(i);
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (detail::recording(tape, a, b)) {
        out.set_requires_grad(true);
        tape->record(out, [a, b, out]() mutable {
            if (!out.has_grad()) return;
            const float g = out.grad()[0];
            if (a.requires_grad()) {
                auto& da = a.grad();
                for (int i = 0; i < a.dim(0); ++i) da[i] += g * b(i);
            }
            if (b.requires_grad()) {
                auto& db = b.grad();
                for (int i = 0; i < b.dim(0); ++i) db[i] += g * a(i);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise ops (shapes must agree, or one operand is scalar)
// ---------------------------------------------------------------------------

namespace detail {

enum class Binary { Add, Sub, Mul, Div };

inline Tensor binary_op(Tape* tape, const Tensor& a, const Tensor& b, Binary op) {
    const bool a_scalar = a.size() == 1, b_scalar = b.size() == 1;
    if (!a_scalar && !b_scalar && a.shape() != b.shape())
        throw ShapeError("elementwise: shape mismatch");
    const Tensor& big = b_scalar ? a : b;
    Tensor out = Tensor::zeros(big.shape());
    const std::int64_t n = out.size();
    for (std::int64_t i = 0; i < n; ++i) {
        const float x = a_scalar ? a.data()[0] : a.data()[i];
        const float y = b_scalar ? b.data()[0] : b.data()[i];
        float r = 0.0f;
        switch (op) {
            case Binary::Add: r = x + y; break;
            case Binary::Sub: r = x - y; break;
            case Binary::Mul: r = x * y; break;
            case Binary::Div: r = x / y; break;
        }
        out.data()[i] = r;
    }
    if (recording(tape, a, b)) {
        out.set_requires_grad(true);
        tape->record(out, [a, b, out, op, a_scalar, b_scalar, n]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    const float y = b_scalar ? b.data()[0] : b.data()[i];
                    float d = 0.0f;
                    switch (op) {
                        case Binary::Add: d = go[i]; break;
                        case Binary::Sub: d = go[i]; break;
                        case Binary::Mul: d = go[i] * y; break;
                        case Binary::Div: d = go[i] / y; break;
                    }
                    ga[a_scalar ? 0 : static_cast<std::size_t>(i)] += d;
                }
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    const float x = a_scalar ? a.data()[0] : a.data()[i];
                    const float y = b_scalar ? b.data()[0] : b.data()[i];
                    float d = 0.0f;
                    switch (op) {
                        case Binary::Add: d = go[i]; break;
                        case Binary::Sub: d = -go[i]; break;
                        case Binary::Mul: d = go[i] * x; break;
                        case Binary::Div: d = -go[i] * x / (y * y); break;
                    }
                    gb[b_scalar ? 0 : static_cast<std::size_t>(i)] += d;
                }
            }
        });
    }
    return out;
}

enum class Unary { Tanh, Sigmoid, Relu, Sqrt };

inline Tensor unary_op(Tape* tape, const Tensor& a, Unary op) {
    Tensor out = Tensor::zeros(a.shape());
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) {
        const float x = a.data()[i];
        float r = 0.0f;
        switch (op) {
            case Unary::Tanh: r = std::tanh(x); break;
            case Unary::Sigmoid: r = 1.0f / (1.0f + std::exp(-x)); break;
            case Unary::Relu: r = x > 0.0f ? x : 0.0f; break;
            case Unary::Sqrt: r = std::sqrt(x); break;
        }
        out.data()[i] = r;
    }
    if (recording(tape, a)) {
        out.set_requires_grad(true);
        tape->record(out, [a, out, op, n]() mutable {
            if (!out.has_grad() || !a.requires_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad();
            for (std::int64_t i = 0; i < n; ++i) {
                const float y = out.data()[i];
                float d = 0.0f;
                switch (op) {
                    case Unary::Tanh: d = 1.0f - y * y; break;
                    case Unary::Sigmoid: d = y * (1.0f - y); break;
                    case Unary::Relu: d = a.data()[i] > 0.0f ? 1.0f : 0.0f; break;
                    case Unary::Sqrt: d = y > 0.0f ? 0.5f / y : 0.0f; break;
                }
                ga[static_cast<std::size_t>(i)] += go[i] * d;
            }
        });
    }
    return out;
}

}  // namespace detail

inline Tensor add(Tape* t, const Tensor& a, const Tensor& b) {
    return detail::binary_op(t, a, b, detail::Binary::Add);
}
inline Tensor sub(Tape* t, const Tensor& a, const Tensor& b) {
    return detail::binary_op(t, a, b, detail::Binary::Sub);
}
inline Tensor mul(Tape* t, const Tensor& a, const Tensor& b) {
    return detail::binary_op(t, a, b, detail::Binary::Mul);
}
inline Tensor divide(Tape* t, const Tensor& a, const Tensor& b) {
    return detail::binary_op(t, a, b, detail::Binary::Div);
}
inline Tensor tanh(Tape* t, const Tensor& a) { return detail::unary_op(t, a, detail::Unary::Tanh); }
inline Tensor sigmoid(Tape* t, const Tensor& a) {
    return detail::unary_op(t, a, detail::Unary::Sigmoid);
}
inline Tensor relu(Tape* t, const Tensor& a) { return detail::unary_op(t, a, detail::Unary::Relu); }
inline Tensor sqrt(Tape* t, const Tensor& a) { return detail::unary_op(t, a, detail::Unary::Sqrt); }

/// Multiply by a plain constant (no gradient to the constant).
inline Tensor scale(Tape* tape, const Tensor& a, float c) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
    if (detail::recording(tape, a)) {
        out.set_requires_grad(true);
        tape->record(out, [a, out, c]() mutable {
            if (!out.has_grad() || !a.requires_grad()) return;
            auto& ga = a.grad();
            const auto& go = out.grad();
            for (std::int64_t i = 0; i < a.size(); ++i) ga[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)] * c;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum(Tape* tape, const Tensor& a) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) acc += a.data()[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (detail::recording(tape, a)) {
        out.set_requires_grad(true);
        tape->record(out, [a, out]() mutable {
            if (!out.has_grad() || !a.requires_grad()) return;
            const float g = out.grad()[0];
            auto& ga = a.grad();
            for (auto& v : ga) v += g;
        });
    }
    return out;
}

inline Tensor mean(Tape* tape, const Tensor& a) {
    return scale(tape, sum(tape, a), 1.0f / static_cast<float>(a.size()));
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Numerically stable softmax over a vector (max-subtraction).
inline Tensor softmax(Tape* tape, const Tensor& v) {
    if (v.ndim() != 1 || v.dim(0) < 1) throw ShapeError("softmax: want non-empty vector");
    const int n = v.dim(0);
    float mx = v(0);
    for (int i = 0; i < n; ++i) {
        if (!std::isfinite(v(i))) throw NumericError("softmax: non-finite input");
        mx = std::max(mx, v(i));
    }
    Tensor out = Tensor::zeros({n});
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
        const float e = std::exp(v(i) - mx);
        out(i) = e;
        z += e;
    }
    const float inv = static_cast<float>(1.0 / z);
    for (int i = 0; i < n; ++i) out(i) *= inv;
    if (detail::recording(tape, v)) {
        out.set_requires_grad(true);
        tape->record(out, [v, out, n]() mutable {
            if (!out.has_grad() || !v.requires_grad()) return;
            const auto& go = out.grad();
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += static_cast<double>(go[i]) * out(i);
            auto& gv = v.grad();
            for (int i = 0; i < n; ++i)
                gv[i] += out(i) * (go[i] - static_cast<float>(s));
        });
    }
    return out;
}

/// Row-wise softmax over a matrix with optional key mask; masked columns get
/// probability exactly 0. Every row must keep at least one unmasked key.
inline Tensor softmax_rows_masked(Tape* tape, const Tensor& s,
                                  const std::vector<std::uint8_t>* key_mask = nullptr) {
    if (s.ndim() != 2) throw ShapeError("softmax_rows_masked: want matrix");
    const int m = s.dim(0), n = s.dim(1);
    if (key_mask && static_cast<int>(key_mask->size()) != n)
        throw ShapeError("softmax_rows_masked: mask length mismatch");
    if (key_mask) {
        bool any = false;
        for (auto b : *key_mask) any = any || (b != 0);
        if (!any) throw ShapeError("softmax_rows_masked: all keys masked");
    }
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        float mx = -std::numeric_limits<float>::infinity();
        for (int j = 0; j < n; ++j)
            if (!key_mask || (*key_mask)[j]) mx = std::max(mx, s(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            if (!key_mask || (*key_mask)[j]) {
                const float e = std::exp(s(i, j) - mx);
                out(i, j) = e;
                z += e;
            }
        }
        const float inv = static_cast<float>(1.0 / z);
        for (int j = 0; j < n; ++j) out(i, j) *= inv;
    }
    if (detail::recording(tape, s)) {
        out.set_requires_grad(true);
        tape->record(out, [s, out, m, n]() mutable {
            if (!out.has_grad() || !s.requires_grad()) return;
            const auto& go = out.grad();
            auto& gs = s.grad();
            for (int i = 0; i < m; ++i) {
                double dotv = 0.0;
                const std::size_t base = static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j)
                    dotv += static_cast<double>(go[base + j]) * out(i, j);
                for (int j = 0; j < n; ++j)
                    gs[base + j] += out(i, j) * (go[base + j] - static_cast<float>(dotv));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

/// Column-wise max over rows (optionally restricted to unmasked rows).
/// Gradient routes to the lowest argmax row per column.
inline Tensor max_over_rows(Tape* tape, const Tensor& h,
                            const std::vector<std::uint8_t>* row_mask = nullptr) {
    if (h.ndim() != 2 || h.dim(0) < 1) throw ShapeError("max_over_rows: want non-empty matrix");
    const int n = h.dim(0), d = h.dim(1);
    if (row_mask && static_cast<int>(row_mask->size()) != n)
        throw ShapeError("max_over_rows: mask length mismatch");
    int first = -1;
    for (int i = 0; i < n; ++i)
        if (!row_mask || (*row_mask)[i]) { first = i; break; }
    if (first < 0) throw ShapeError("max_over_rows: all rows masked");
    Tensor out = Tensor::zeros({d});
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(d), first);
    for (int j = 0; j < d; ++j) out(j) = h(first, j);
    for (int i = first + 1; i < n; ++i) {
        if (row_mask && !(*row_mask)[i]) continue;
        for (int j = 0; j < d; ++j) {
            if (h(i, j) > out(j)) {
                out(j) = h(i, j);
                (*argmax)[static_cast<std::size_t>(j)] = i;
            }
        }
    }
    if (detail::recording(tape, h)) {
        out.set_requires_grad(true);
        tape->record(out, [h, out, argmax, d]() mutable {
            if (!out.has_grad() || !h.requires_grad()) return;
            const auto& go = out.grad();
            auto& gh = h.grad();
            const int w = h.dim(1);
            for (int j = 0; j < d; ++j)
                gh[static_cast<std::size_t>((*argmax)[static_cast<std::size_t>(j)]) * w + j] += go[j];
        });
    }
    return out;
}

/// Row i of a matrix as a vector.
inline Tensor row(Tape* tape, const Tensor& h, int i) {
    if (h.ndim() != 2) throw ShapeError("row: want matrix");
    const int n = h.dim(0), d = h.dim(1);
    if (i < 0 || i >= n) throw ShapeError("row: index out of range");
    Tensor out = Tensor::zeros({d});
    for (int j = 0; j < d; ++j) out(j) = h(i, j);
    if (detail::recording(tape, h)) {
        out.set_requires_grad(true);
        tape->record(out, [h, out, i, d]() mutable {
            if (!out.has_grad() || !h.requires_grad()) return;
            const auto& go = out.grad();
            auto& gh = h.grad();
            for (int j = 0; j < d; ++j) gh[static_cast<std::size_t>(i) * d + j] += go[j];
        });
    }
    return out;
}

/// Column block [c0, c0+w) of a matrix.
inline Tensor slice_cols(Tape* tape, const Tensor& x, int c0, int w) {
    if (x.ndim() != 2) throw ShapeError("slice_cols: want matrix");
    const int n = x.dim(0), d = x.dim(1);
    if (c0 < 0 || w <= 0 || c0 + w > d) throw ShapeError("slice_cols: range out of bounds");
    Tensor out = Tensor::zeros({n, w});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j) out(i, j) = x(i, c0 + j);
    if (detail::recording(tape, x)) {
        out.set_requires_grad(true);
        tape->record(out, [x, out, c0, w, n, d]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& go = out.grad();
            auto& gx = x.grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < w; ++j)
                    gx[static_cast<std::size_t>(i) * d + c0 + j] +=
                        go[static_cast<std::size_t>(i) * w + j];
        });
    }
    return out;
}

/// Horizontal concatenation of equal-height matrices.
inline Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int n = parts[0].dim(0);
    int total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != n) throw ShapeError("concat_cols: height mismatch");
        total += p.dim(1);
        rg = rg || p.requires_grad();
    }
    Tensor out = Tensor::zeros({n, total});
    int off = 0;
    for (const auto& p : parts) {
        const int w = p.dim(1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j) out(i, off + j) = p(i, j);
        off += w;
    }
    if (tape && rg) {
        out.set_requires_grad(true);
        tape->record(out, [parts, out, n, total]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            int off = 0;
            for (auto& p : parts) {
                const int w = p.dim(1);
                if (p.requires_grad()) {
                    auto& gp = p.grad();
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < w; ++j)
                            gp[static_cast<std::size_t>(i) * w + j] +=
                                go[static_cast<std::size_t>(i) * total + off + j];
                }
                off += w;
            }
        });
    }
    return out;
}

/// Concatenation of vectors into one vector.
inline Tensor concat(Tape* tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    int total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.ndim() != 1) throw ShapeError("concat: want vectors");
        total += p.dim(0);
        rg = rg || p.requires_grad();
    }
    Tensor out = Tensor::zeros({total});
    int off = 0;
    for (const auto& p : parts) {
        for (int j = 0; j < p.dim(0); ++j) out(off + j) = p(j);
        off += p.dim(0);
    }
    if (tape && rg) {
        out.set_requires_grad(true);
        tape->record(out, [parts, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            int off = 0;
            for (auto& p : parts) {
                if (p.requires_grad()) {
                    auto& gp = p.grad();
                    for (int j = 0; j < p.dim(0); ++j) gp[j] += go[off + j];
                }
                off += p.dim(0);
            }
        });
    }
    return out;
}

/// Stack vectors of equal width into a matrix, one per row.
inline Tensor stack_rows(Tape* tape, const std::vector<Tensor>& rows_in) {
    if (rows_in.empty()) throw ShapeError("stack_rows: no inputs");
    const int d = rows_in[0].dim(0);
    bool rg = false;
    for (const auto& r : rows_in) {
        if (r.ndim() != 1 || r.dim(0) != d) throw ShapeError("stack_rows: width mismatch");
        rg = rg || r.requires_grad();
    }
    const int m = static_cast<int>(rows_in.size());
    Tensor out = Tensor::zeros({m, d});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) out(i, j) = rows_in[static_cast<std::size_t>(i)](j);
    if (tape && rg) {
        out.set_requires_grad(true);
        tape->record(out, [rows_in, out, m, d]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            for (int i = 0; i < m; ++i) {
                const auto& r = rows_in[static_cast<std::size_t>(i)];
                if (!r.requires_grad()) continue;
                auto& gr = r.grad();
                for (int j = 0; j < d; ++j) gr[j] += go[static_cast<std::size_t>(i) * d + j];
            }
        });
    }
    return out;
}

/// Stack scalar tensors into a vector.
inline Tensor stack_scalars(Tape* tape, const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("stack_scalars: no inputs");
    bool rg = false;
    Tensor out = Tensor::zeros({static_cast<int>(xs.size())});
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out(static_cast<int>(i)) = xs[i].value();
        rg = rg || xs[i].requires_grad();
    }
    if (tape && rg) {
        out.set_requires_grad(true);
        tape->record(out, [xs, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            for (std::size_t i = 0; i < xs.size(); ++i)
                if (xs[i].requires_grad()) xs[i].grad()[0] += go[i];
        });
    }
    return out;
}

/// Add a row vector to every row of a matrix (bias broadcast).
inline Tensor add_rowvec(Tape* tape, const Tensor& x, const Tensor& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || b.dim(0) != x.dim(1))
        throw ShapeError("add_rowvec: width mismatch");
    const int n = x.dim(0), d = x.dim(1);
    Tensor out = Tensor::zeros({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out(i, j) = x(i, j) + b(j);
    if (detail::recording(tape, x, b)) {
        out.set_requires_grad(true);
        tape->record(out, [x, b, out, n, d]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            if (x.requires_grad()) {
                auto& gx = x.grad();
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (int j = 0; j < d; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i) acc += go[static_cast<std::size_t>(i) * d + j];
                    gb[j] += static_cast<float>(acc);
                }
            }
        });
    }
    return out;
}

/// Rows of an embedding table gathered by token id.
inline Tensor embedding_lookup(Tape* tape, const Tensor& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw ShapeError("embedding_lookup: want 2-D table");
    const int v = table.dim(0), d = table.dim(1);
    const int t = static_cast<int>(ids.size());
    if (t == 0) throw ShapeError("embedding_lookup: empty id list");
    for (int id : ids)
        if (id < 0 || id >= v) throw ShapeError("embedding_lookup: id out of range");
    Tensor out = Tensor::zeros({t, d});
    for (int i = 0; i < t; ++i) {
        const float* src = table.data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d;
        float* dst = out.data() + static_cast<std::size_t>(i) * d;
        std::copy(src, src + d, dst);
    }
    if (detail::recording(tape, table)) {
        out.set_requires_grad(true);
        tape->record(out, [table, out, ids, t, d]() mutable {
            if (!out.has_grad() || !table.requires_grad()) return;
            const auto& go = out.grad();
            auto& gt = table.grad();
            for (int i = 0; i < t; ++i) {
                const std::size_t dst = static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d;
                const std::size_t src = static_cast<std::size_t>(i) * d;
                for (int j = 0; j < d; ++j) gt[dst + j] += go[src + j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer norm
// ---------------------------------------------------------------------------

/// Per-row layer normalization with learned gain/bias.
inline Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         float eps = 1e-5f) {
    if (x.ndim() != 2) throw ShapeError("layer_norm: want matrix");
    const int n = x.dim(0), d = x.dim(1);
    if (gamma.ndim() != 1 || gamma.dim(0) != d || beta.ndim() != 1 || beta.dim(0) != d)
        throw ShapeError("layer_norm: gain/bias width mismatch");
    Tensor out = Tensor::zeros({n, d});
    auto xhat = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n) * d);
    auto rstd = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double m = 0.0;
        for (int j = 0; j < d; ++j) m += x(i, j);
        m /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = x(i, j) - m;
            var += c * c;
        }
        var /= d;
        const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*rstd)[static_cast<std::size_t>(i)] = rs;
        for (int j = 0; j < d; ++j) {
            const float xh = (x(i, j) - static_cast<float>(m)) * rs;
            (*xhat)[static_cast<std::size_t>(i) * d + j] = xh;
            out(i, j) = xh * gamma(j) + beta(j);
        }
    }
    const bool rec = tape && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    if (rec) {
        out.set_requires_grad(true);
        tape->record(out, [x, gamma, beta, out, xhat, rstd, n, d]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            if (gamma.requires_grad()) {
                auto& gg = gamma.grad();
                for (int j = 0; j < d; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i)
                        acc += static_cast<double>(go[static_cast<std::size_t>(i) * d + j]) *
                               (*xhat)[static_cast<std::size_t>(i) * d + j];
                    gg[j] += static_cast<float>(acc);
                }
            }
            if (beta.requires_grad()) {
                auto& gb = beta.grad();
                for (int j = 0; j < d; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i) acc += go[static_cast<std::size_t>(i) * d + j];
                    gb[j] += static_cast<float>(acc);
                }
            }
            if (x.requires_grad()) {
                auto& gx = x.grad();
                for (int i = 0; i < n; ++i) {
                    const std::size_t base = static_cast<std::size_t>(i) * d;
                    double s1 = 0.0, s2 = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double gy = static_cast<double>(go[base + j]) * gamma(j);
                        s1 += gy;
                        s2 += gy * (*xhat)[base + j];
                    }
                    const float rs = (*rstd)[static_cast<std::size_t>(i)];
                    for (int j = 0; j < d; ++j) {
                        const double gy = static_cast<double>(go[base + j]) * gamma(j);
                        gx[base + j] += static_cast<float>(
                            rs * (gy - s1 / d - (*xhat)[base + j] * s2 / d));
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: in training mode zeros each element with probability
/// `rate` and scales survivors by 1/(1-rate); identity in eval mode.
inline Tensor dropout(Tape* tape, const Tensor& x, float rate, bool training, CounterRng& rng) {
    if (!(rate >= 0.0f && rate < 1.0f)) throw ValueError("dropout: rate must be in [0,1)");
    if (!training || rate == 0.0f) {
        // identity pass-through; keep the graph edge so gradients flow
        Tensor out = Tensor::from_data(x.shape(), x.vec());
        if (detail::recording(tape, x)) {
            out.set_requires_grad(true);
            tape->record(out, [x, out]() mutable {
                if (!out.has_grad() || !x.requires_grad()) return;
                auto& gx = x.grad();
                const auto& go = out.grad();
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
            });
        }
        return out;
    }
    const float keep = 1.0f - rate;
    const float inv = 1.0f / keep;
    Tensor out = Tensor::zeros(x.shape());
    auto mask = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(x.size()));
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const bool live = rng.next_uniform() >= rate;
        (*mask)[static_cast<std::size_t>(i)] = live ? 1 : 0;
        out.data()[i] = live ? x.data()[i] * inv : 0.0f;
    }
    if (detail::recording(tape, x)) {
        out.set_requires_grad(true);
        tape->record(out, [x, out, mask, inv]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto& gx = x.grad();
            const auto& go = out.grad();
            for (std::size_t i = 0; i < gx.size(); ++i)
                if ((*mask)[i]) gx[i] += go[i] * inv;
        });
    }
    return out;
}

}  // namespace msas
