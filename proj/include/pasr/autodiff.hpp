#pragma once

// Minimal dense reverse-mode automatic differentiation over row-major 2-D
// float64 matrices. Every op checks its output for NaN/Inf.
//
// A Tensor is a cheap handle to a graph node. Ops record their inputs and a
// backward closure only when some input requires a gradient and grad mode is
// enabled (see NoGradGuard).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace pasr::ad {

class NonFiniteError : public std::domain_error {
   public:
    using std::domain_error::domain_error;
};

struct Node {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    const char* op = "leaf";

    std::vector<double>& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph recording for its lifetime (evaluation, finite differences).
class NoGradGuard {
   public:
    NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(size_t rows, size_t cols, bool requires_grad = false) {
        return from_values(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
    }

    static Tensor from_values(size_t rows, size_t cols, std::vector<double> values, bool requires_grad = false) {
        if (values.size() != rows * cols) throw std::domain_error("tensor value count does not match shape");
        auto n = std::make_shared<Node>();
        n->rows = rows;
        n->cols = cols;
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v, bool requires_grad = false) { return from_values(1, 1, {v}, requires_grad); }

    bool defined() const { return node_ != nullptr; }
    size_t rows() const { return node_->rows; }
    size_t cols() const { return node_->cols; }
    size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const double> values() const { return node_->value; }
    std::span<double> mutable_values() { return node_->value; }
    double at(size_t r, size_t c) const { return node_->value[r * node_->cols + c]; }
    double item() const {
        if (size() != 1) throw std::domain_error("item() on non-scalar tensor");
        return node_->value[0];
    }

    /// Empty until backward() reaches this tensor.
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }

    /// Same values, no history.
    Tensor detach() const { return from_values(rows(), cols(), node_->value, false); }

   private:
    std::shared_ptr<Node> node_;
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NonFiniteError(std::string("non-finite value produced by ") + op);
    }
}

}  // namespace detail

/// Building block for fused ops. `backward` receives the output node, whose
/// grad is populated, and must accumulate into the parents' grads.
inline Tensor make_op(const char* op, size_t rows, size_t cols, std::vector<double> value,
                      std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
    detail::check_finite(value, op);
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(value);
    n->op = op;
    bool needs = false;
    if (detail::grad_enabled) {
        for (const auto& t : inputs) needs = needs || t.requires_grad();
    }
    if (needs) {
        n->requires_grad = true;
        for (auto& t : inputs) n->parents.push_back(t.shared());
        n->backward_fn = std::move(backward);
    }
    return Tensor(std::move(n));
}

/// Runs reverse accumulation from a scalar loss. Gradients add into existing
/// leaf grads; call zero_grad on parameters between steps.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::domain_error("backward() requires a scalar loss");
    if (!loss.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{loss.node(), 0}};
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::domain_error(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
    }
}

// C[n x m] += A[n x k] * B[k x m]
inline void gemm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c, size_t n, size_t k, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        double* ci = c + i * m;
        const double* ai = a + i * k;
        for (size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * m;
            for (size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[n x k] += A[n x m] * B[k x m]^T
inline void gemm_nt(const double* a, const double* b, double* c, size_t n, size_t m, size_t k) {
    std::vector<double> bt(m * k);
    for (size_t p = 0; p < k; ++p)
        for (size_t j = 0; j < m; ++j) bt[j * k + p] = b[p * m + j];
    gemm_nn(a, bt.data(), c, n, m, k);
}

// C[k x m] += A[n x k]^T * B[n x m]
inline void gemm_tn(const double* __restrict a, const double* __restrict b, double* __restrict c, size_t n, size_t k, size_t m) {
    for (size_t i = 0; i < n; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * m;
        for (size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c + p * m;
            for (size_t j = 0; j < m; ++j) cp[j] += av * bi[j];
        }
    }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw std::domain_error("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + ")");
    }
    const size_t n = a.rows(), k = a.cols(), m = b.cols();
    std::vector<double> out(n * m, 0.0);
    detail::gemm_nn(a.values().data(), b.values().data(), out.data(), n, k, m);
    return make_op("matmul", n, m, std::move(out), {a, b}, [a, b, n, k, m](Node& self) {
        if (a.requires_grad()) {
            detail::gemm_nt(self.grad.data(), b.values().data(), a.node()->ensure_grad().data(), n, m, k);
        }
        if (b.requires_grad()) {
            detail::gemm_tn(a.values().data(), self.grad.data(), b.node()->ensure_grad().data(), n, k, m);
        }
    });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return make_op("add", a.rows(), a.cols(), std::move(out), {a, b}, [a, b](Node& self) {
        for (const auto& t : {a, b}) {
            if (!t.requires_grad()) continue;
            auto& g = t.node()->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

/// x[r, :] + bias[0, :] for every row r.
inline Tensor add_row(const Tensor& x, const Tensor& bias) {
    if (bias.rows() != 1 || bias.cols() != x.cols()) throw std::domain_error("add_row: bias must be 1 x cols");
    const size_t rows = x.rows(), cols = x.cols();
    std::vector<double> out(x.values().begin(), x.values().end());
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) out[r * cols + c] += bias.values()[c];
    return make_op("add_row", rows, cols, std::move(out), {x, bias}, [x, bias, rows, cols](Node& self) {
        if (x.requires_grad()) {
            auto& g = x.node()->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (bias.requires_grad()) {
            auto& g = bias.node()->ensure_grad();
            for (size_t r = 0; r < rows; ++r)
                for (size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
        }
    });
}

/// Same values viewed with a different row/column split.
inline Tensor reshape(const Tensor& x, size_t rows, size_t cols) {
    if (rows * cols != x.size()) throw std::domain_error("reshape: element count mismatch");
    std::vector<double> out(x.values().begin(), x.values().end());
    return make_op("reshape", rows, cols, std::move(out), {x}, [x](Node& self) {
        auto& g = x.node()->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

inline Tensor scale(const Tensor& x, double s) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (auto& v : out) v *= s;
    return make_op("scale", x.rows(), x.cols(), std::move(out), {x}, [x, s](Node& self) {
        auto& g = x.node()->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    return make_op("relu", x.rows(), x.cols(), std::move(out), {x}, [x](Node& self) {
        auto& g = x.node()->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i)
            if (x.values()[i] > 0.0) g[i] += self.grad[i];
    });
}

inline Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) {
        const double v = x.values()[i];
        out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    auto saved = out;
    return make_op("sigmoid", x.rows(), x.cols(), std::move(out), {x}, [x, saved](Node& self) {
        auto& g = x.node()->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * saved[i] * (1.0 - saved[i]);
    });
}

/// log(sigmoid(x)) = -softplus(-x), evaluated without overflow.
inline double log_sigmoid_value(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

inline Tensor log_sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = log_sigmoid_value(x.values()[i]);
    return make_op("log_sigmoid", x.rows(), x.cols(), std::move(out), {x}, [x](Node& self) {
        auto& g = x.node()->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
            const double v = x.values()[i];
            const double sig_neg = v >= 0 ? std::exp(-v) / (1.0 + std::exp(-v)) : 1.0 / (1.0 + std::exp(v));
            g[i] += self.grad[i] * sig_neg;
        }
    });
}

inline Tensor log(const Tensor& x) {
    std::vector<double> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.values()[i]);
    return make_op("log", x.rows(), x.cols(), std::move(out), {x}, [x](Node& self) {
        auto& g = x.node()->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / x.values()[i];
    });
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    return make_op("sum", 1, 1, {s}, {x}, [x](Node& self) {
        auto& g = x.node()->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

inline Tensor mean(const Tensor& x) {
    if (x.size() == 0) throw std::domain_error("mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

inline Tensor softmax_rows(const Tensor& x) {
    const size_t rows = x.rows(), cols = x.cols();
    std::vector<double> out(x.size());
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = x.values().data() + r * cols;
        double* o = out.data() + r * cols;
        const double mx = *std::max_element(xr, xr + cols);
        double z = 0.0;
        for (size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(xr[c] - mx));
        for (size_t c = 0; c < cols; ++c) o[c] /= z;
    }
    auto saved = out;
    return make_op("softmax_rows", rows, cols, std::move(out), {x}, [x, saved, rows, cols](Node& self) {
        auto& g = x.node()->ensure_grad();
        for (size_t r = 0; r < rows; ++r) {
            const double* p = saved.data() + r * cols;
            const double* dy = self.grad.data() + r * cols;
            double dot = 0.0;
            for (size_t c = 0; c < cols; ++c) dot += p[c] * dy[c];
            for (size_t c = 0; c < cols; ++c) g[r * cols + c] += p[c] * (dy[c] - dot);
        }
    });
}

/// Horizontal concatenation of equal-height tensors.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::domain_error("concat_cols: no inputs");
    const size_t rows = parts[0].rows();
    size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw std::domain_error("concat_cols: row count mismatch");
        cols += p.cols();
    }
    std::vector<double> out(rows * cols);
    size_t offset = 0;
    for (const auto& p : parts) {
        for (size_t r = 0; r < rows; ++r)
            std::copy_n(p.values().data() + r * p.cols(), p.cols(), out.data() + r * cols + offset);
        offset += p.cols();
    }
    return make_op("concat_cols", rows, cols, std::move(out), parts, [parts, rows, cols](Node& self) {
        size_t off = 0;
        for (const auto& p : parts) {
            if (p.requires_grad()) {
                auto& g = p.node()->ensure_grad();
                for (size_t r = 0; r < rows; ++r)
                    for (size_t c = 0; c < p.cols(); ++c) g[r * p.cols() + c] += self.grad[r * cols + off + c];
            }
            off += p.cols();
        }
    });
}

inline constexpr long kZeroRow = -1;

/// out[i, :] = table[indices[i], :], or zeros where indices[i] == kZeroRow.
inline Tensor gather_rows(const Tensor& table, std::vector<long> indices) {
    const size_t cols = table.cols();
    std::vector<double> out(indices.size() * cols, 0.0);
    for (size_t i = 0; i < indices.size(); ++i) {
        const long idx = indices[i];
        if (idx == kZeroRow) continue;
        if (idx < 0 || static_cast<size_t>(idx) >= table.rows()) {
            throw std::domain_error("gather_rows: index " + std::to_string(idx) + " out of range");
        }
        std::copy_n(table.values().data() + static_cast<size_t>(idx) * cols, cols, out.data() + i * cols);
    }
    const size_t n = indices.size();
    return make_op("gather_rows", n, cols, std::move(out), {table},
                   [table, idx = std::move(indices), cols](Node& self) {
                       auto& g = table.node()->ensure_grad();
                       for (size_t i = 0; i < idx.size(); ++i) {
                           if (idx[i] == kZeroRow) continue;
                           double* gr = g.data() + static_cast<size_t>(idx[i]) * cols;
                           const double* sg = self.grad.data() + i * cols;
                           for (size_t c = 0; c < cols; ++c) gr[c] += sg[c];
                       }
                   });
}

/// Mean over consecutive blocks of `group` rows: (n*group x c) -> (n x c).
inline Tensor segment_mean(const Tensor& x, size_t group) {
    if (group == 0 || x.rows() % group != 0) throw std::domain_error("segment_mean: rows not divisible by group");
    const size_t n = x.rows() / group, cols = x.cols();
    const double inv = 1.0 / static_cast<double>(group);
    std::vector<double> out(n * cols, 0.0);
    for (size_t r = 0; r < x.rows(); ++r)
        for (size_t c = 0; c < cols; ++c) out[(r / group) * cols + c] += x.values()[r * cols + c] * inv;
    return make_op("segment_mean", n, cols, std::move(out), {x}, [x, group, cols, inv](Node& self) {
        auto& g = x.node()->ensure_grad();
        for (size_t r = 0; r < x.rows(); ++r)
            for (size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[(r / group) * cols + c] * inv;
    });
}

/// out[i] = <a[i, :], b[i, :]>, as an n x 1 column.
inline Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "rowwise_dot");
    const size_t rows = a.rows(), cols = a.cols();
    std::vector<double> out(rows, 0.0);
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) out[r] += a.values()[r * cols + c] * b.values()[r * cols + c];
    return make_op("rowwise_dot", rows, 1, std::move(out), {a, b}, [a, b, rows, cols](Node& self) {
        if (a.requires_grad()) {
            auto& g = a.node()->ensure_grad();
            for (size_t r = 0; r < rows; ++r)
                for (size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[r] * b.values()[r * cols + c];
        }
        if (b.requires_grad()) {
            auto& g = b.node()->ensure_grad();
            for (size_t r = 0; r < rows; ++r)
                for (size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[r] * a.values()[r * cols + c];
        }
    });
}

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Per-row normalization to zero mean and unit (population) variance,
/// followed by the affine map gamma * xhat + beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEpsilon) {
    const size_t rows = x.rows(), cols = x.cols();
    if (cols < 2) throw std::domain_error("layer_norm: row width must be >= 2");
    if (gamma.rows() != 1 || gamma.cols() != cols || beta.rows() != 1 || beta.cols() != cols) {
        throw std::domain_error("layer_norm: gamma/beta must be 1 x cols");
    }
    std::vector<double> xhat(x.size()), inv_std(rows), out(x.size());
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = x.values().data() + r * cols;
        double mu = 0.0;
        for (size_t c = 0; c < cols; ++c) mu += xr[c];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= static_cast<double>(cols);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (size_t c = 0; c < cols; ++c) {
            xhat[r * cols + c] = (xr[c] - mu) * inv_std[r];
            out[r * cols + c] = gamma.values()[c] * xhat[r * cols + c] + beta.values()[c];
        }
    }
    return make_op("layer_norm", rows, cols, std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, cols](Node& self) {
                       const double* dy = self.grad.data();
                       if (gamma.requires_grad() || beta.requires_grad()) {
                           auto& gg = gamma.node()->ensure_grad();
                           auto& gb = beta.node()->ensure_grad();
                           for (size_t r = 0; r < rows; ++r)
                               for (size_t c = 0; c < cols; ++c) {
                                   gg[c] += dy[r * cols + c] * xhat[r * cols + c];
                                   gb[c] += dy[r * cols + c];
                               }
                       }
                       if (!x.requires_grad()) return;
                       auto& gx = x.node()->ensure_grad();
                       const double n = static_cast<double>(cols);
                       for (size_t r = 0; r < rows; ++r) {
                           double mean_d = 0.0, mean_dx = 0.0;
                           for (size_t c = 0; c < cols; ++c) {
                               const double d = dy[r * cols + c] * gamma.values()[c];
                               mean_d += d;
                               mean_dx += d * xhat[r * cols + c];
                           }
                           mean_d /= n;
                           mean_dx /= n;
                           for (size_t c = 0; c < cols; ++c) {
                               const double d = dy[r * cols + c] * gamma.values()[c];
                               gx[r * cols + c] += inv_std[r] * (d - mean_d - xhat[r * cols + c] * mean_dx);
                           }
                       }
                   });
}

/// Half-open range of key rows a query row may attend to.
struct KeySpan {
    size_t begin = 0;
    size_t end = 0;

    bool operator==(const KeySpan&) const = default;
};

/// Attention mask stored as one contiguous key span per query row. This is
/// the additive 0 / -inf mask restricted to masks whose zero entries are
/// contiguous in each row, which covers causal, full and block-diagonal
/// (batched) attention without materializing the dense matrix.
class AttentionMask {
   public:
    AttentionMask() = default;
    explicit AttentionMask(std::vector<KeySpan> spans) : spans_(std::move(spans)) {
        for (const auto& s : spans_)
            if (s.begin >= s.end) throw std::domain_error("attention mask: every query needs at least one key");
    }

    static AttentionMask full(size_t queries, size_t keys) {
        return AttentionMask(std::vector<KeySpan>(queries, KeySpan{0, keys}));
    }

    /// Square mask with -inf strictly above the diagonal.
    static AttentionMask causal(size_t m) { return block_diagonal(1, m, true); }

    /// `groups` independent sequences of `length` rows stacked vertically.
    static AttentionMask block_diagonal(size_t groups, size_t length, bool causal) {
        std::vector<KeySpan> spans;
        spans.reserve(groups * length);
        for (size_t g = 0; g < groups; ++g)
            for (size_t i = 0; i < length; ++i)
                spans.push_back({g * length, causal ? g * length + i + 1 : (g + 1) * length});
        return AttentionMask(std::move(spans));
    }

    /// Accepts a dense additive mask of 0 / -inf entries.
    static AttentionMask from_additive(size_t rows, size_t cols, std::span<const double> mask) {
        if (mask.size() != rows * cols) throw std::domain_error("additive mask size mismatch");
        std::vector<KeySpan> spans;
        for (size_t r = 0; r < rows; ++r) {
            size_t b = cols, e = 0;
            for (size_t c = 0; c < cols; ++c) {
                const double v = mask[r * cols + c];
                if (v == 0.0) {
                    b = std::min(b, c);
                    e = c + 1;
                } else if (!(std::isinf(v) && v < 0)) {
                    throw std::domain_error("additive mask entries must be 0 or -inf");
                }
            }
            for (size_t c = b; c < e; ++c)
                if (mask[r * cols + c] != 0.0) throw std::domain_error("additive mask row is not contiguous");
            spans.push_back({b, e});
        }
        return AttentionMask(std::move(spans));
    }

    std::vector<double> to_additive(size_t keys) const {
        std::vector<double> m(spans_.size() * keys, -std::numeric_limits<double>::infinity());
        for (size_t r = 0; r < spans_.size(); ++r)
            for (size_t c = spans_[r].begin; c < spans_[r].end; ++c) m[r * keys + c] = 0.0;
        return m;
    }

    const std::vector<KeySpan>& spans() const { return spans_; }
    size_t queries() const { return spans_.size(); }

   private:
    std::vector<KeySpan> spans_;
};

/// softmax(Q K^T / sqrt(d) + mask) V with d = Q.cols(). Without a mask every
/// query attends to every key.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const std::optional<AttentionMask>& mask = std::nullopt) {
    if (q.cols() != k.cols()) throw std::domain_error("attention: query/key widths differ");
    if (k.rows() != v.rows()) throw std::domain_error("attention: key/value counts differ");
    const AttentionMask m = mask ? *mask : AttentionMask::full(q.rows(), k.rows());
    if (m.queries() != q.rows()) throw std::domain_error("attention: mask rows do not match queries");
    for (const auto& s : m.spans())
        if (s.end > k.rows()) throw std::domain_error("attention: mask span exceeds key count");

    const size_t nq = q.rows(), dk = q.cols(), dv = v.cols();
    const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
    const auto& spans = m.spans();
    std::vector<size_t> offsets(nq + 1, 0);
    for (size_t r = 0; r < nq; ++r) offsets[r + 1] = offsets[r] + (spans[r].end - spans[r].begin);
    std::vector<double> probs(offsets[nq]);
    std::vector<double> out(nq * dv, 0.0);
    const double* qv = q.values().data();
    const double* kv = k.values().data();
    const double* vv = v.values().data();
    for (size_t r = 0; r < nq; ++r) {
        double* p = probs.data() + offsets[r];
        const auto [b, e] = spans[r];
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t j = b; j < e; ++j) {
            double s = 0.0;
            for (size_t c = 0; c < dk; ++c) s += qv[r * dk + c] * kv[j * dk + c];
            p[j - b] = s * sc;
            mx = std::max(mx, p[j - b]);
        }
        double z = 0.0;
        for (size_t j = b; j < e; ++j) z += (p[j - b] = std::exp(p[j - b] - mx));
        double* o = out.data() + r * dv;
        for (size_t j = b; j < e; ++j) {
            p[j - b] /= z;
            const double w = p[j - b];
            for (size_t c = 0; c < dv; ++c) o[c] += w * vv[j * dv + c];
        }
    }
    return make_op("attention", nq, dv, std::move(out), {q, k, v},
                   [q, k, v, spans, offsets = std::move(offsets), probs = std::move(probs), nq, dk, dv,
                    sc](Node& self) {
                       const double* dy = self.grad.data();
                       double* gq = q.requires_grad() ? q.node()->ensure_grad().data() : nullptr;
                       double* gk = k.requires_grad() ? k.node()->ensure_grad().data() : nullptr;
                       double* gv = v.requires_grad() ? v.node()->ensure_grad().data() : nullptr;
                       const double* qv = q.values().data();
                       const double* kv = k.values().data();
                       const double* vv = v.values().data();
                       std::vector<double> dlogit;
                       for (size_t r = 0; r < nq; ++r) {
                           const auto [b, e] = spans[r];
                           const double* p = probs.data() + offsets[r];
                           const double* dyr = dy + r * dv;
                           dlogit.assign(e - b, 0.0);
                           double dot = 0.0;
                           for (size_t j = b; j < e; ++j) {
                               double dp = 0.0;
                               for (size_t c = 0; c < dv; ++c) dp += dyr[c] * vv[j * dv + c];
                               dlogit[j - b] = dp;
                               dot += p[j - b] * dp;
                               if (gv) {
                                   for (size_t c = 0; c < dv; ++c) gv[j * dv + c] += p[j - b] * dyr[c];
                               }
                           }
                           for (size_t j = b; j < e; ++j) {
                               const double dl = p[j - b] * (dlogit[j - b] - dot) * sc;
                               if (dl == 0.0) continue;
                               if (gq) {
                                   for (size_t c = 0; c < dk; ++c) gq[r * dk + c] += dl * kv[j * dk + c];
                               }
                               if (gk) {
                                   for (size_t c = 0; c < dk; ++c) gk[j * dk + c] += dl * qv[r * dk + c];
                               }
                           }
                       }
                   });
}

/// max(0, x W1 + b1) W2 + b2
inline Tensor ffn(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2) {
    if (x.cols() != w1.rows()) throw std::domain_error("ffn: input width does not match W1 rows");
    if (w1.cols() != w2.rows()) throw std::domain_error("ffn: hidden width does not match W2 rows");
    return add_row(matmul(relu(add_row(matmul(x, w1), b1)), w2), b2);
}

/// Named trainable tensors, in insertion order.
class ParamSet {
   public:
    Tensor& add(const std::string& name, Tensor t) {
        if (index_of(name)) throw std::domain_error("duplicate parameter name: " + name);
        if (!t.requires_grad()) throw std::domain_error("parameter must require grad: " + name);
        entries_.emplace_back(name, std::move(t));
        return entries_.back().second;
    }

    const Tensor& get(const std::string& name) const {
        auto i = index_of(name);
        if (!i) throw std::out_of_range("no parameter named " + name);
        return entries_[*i].second;
    }
    bool contains(const std::string& name) const { return index_of(name).has_value(); }

    void zero_grad() {
        for (auto& [_, t] : entries_) t.zero_grad();
    }

    size_t scalar_count() const {
        size_t n = 0;
        for (const auto& [_, t] : entries_) n += t.size();
        return n;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    size_t size() const { return entries_.size(); }

   private:
    std::optional<size_t> index_of(const std::string& name) const {
        for (size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].first == name) return i;
        return std::nullopt;
    }

    std::vector<std::pair<std::string, Tensor>> entries_;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;  // L2, added to the gradient
};

class Adam {
   public:
    explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

    void step(ParamSet& params) {
        if (m_.empty()) {
            for (const auto& [_, t] : params) {
                m_.emplace_back(t.size(), 0.0);
                v_.emplace_back(t.size(), 0.0);
            }
        }
        if (m_.size() != params.size()) throw std::logic_error("Adam: parameter set changed between steps");
        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        size_t i = 0;
        for (auto& [_, t] : params) {
            auto values = t.mutable_values();
            auto grad = t.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < values.size(); ++j) {
                const double g = (grad.empty() ? 0.0 : grad[j]) + opts_.weight_decay * values[j];
                m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g;
                v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g * g;
                values[j] -= opts_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opts_.eps);
            }
            ++i;
        }
    }

    long steps() const { return t_; }

   private:
    AdamOptions opts_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

}  // namespace pasr::ad
