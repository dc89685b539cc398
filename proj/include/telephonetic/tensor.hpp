#pragma once

// Minimal dense-tensor kernel with tape-based reverse-mode differentiation.
// 64-bit floats throughout; single-threaded per tape; no broadcasting.
// Operations are recorded in execution order, so the tape is topologically
// sorted by construction and backward() is one reverse sweep.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "telephonetic/error.hpp"
#include "telephonetic/rng.hpp"

namespace telephonetic {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until backward touches this tensor

    std::size_t size() const { return data.size(); }
    bool has_grad() const { return !grad.empty(); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }
    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    static std::size_t shape_product(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) {
            if (d == 0) throw shape_error("tensor dimensions must be positive");
            n *= d;
        }
        return n;
    }

    static TensorPtr zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        auto t = std::make_shared<Tensor>();
        std::size_t n = shape_product(shape);
        t->shape = std::move(shape);
        t->data.assign(n, 0.0);
        t->requires_grad = requires_grad;
        return t;
    }

    static TensorPtr from(std::vector<std::size_t> shape, std::vector<double> data,
                          bool requires_grad = false) {
        if (shape_product(shape) != data.size())
            throw shape_error("tensor data length " + std::to_string(data.size()) +
                              " does not match shape product");
        auto t = std::make_shared<Tensor>();
        t->shape = std::move(shape);
        t->data = std::move(data);
        t->requires_grad = requires_grad;
        return t;
    }

    static TensorPtr scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    static TensorPtr uniform(std::vector<std::size_t> shape, Rng& rng, double lo, double hi,
                             bool requires_grad = false) {
        auto t = zeros(std::move(shape), requires_grad);
        for (double& v : t->data) v = rng.uniform(lo, hi);
        return t;
    }

    TensorPtr clone_detached() const {
        auto t = std::make_shared<Tensor>();
        t->shape = shape;
        t->data = data;
        t->requires_grad = requires_grad;
        return t;
    }
};

inline double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_; }
    std::size_t op_count() const { return ops_.size(); }

    // y = a + b, same shape.
    TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
        require_same_shape("add", a, b);
        auto out = output_like(a, a->requires_grad || b->requires_grad);
        for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + b->data[i];
        if (track(out)) {
            push("add", [a, b, out] {
                if (!out->has_grad()) return;
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i];
                }
            });
        }
        return out;
    }

    // y = a - b, same shape.
    TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
        require_same_shape("sub", a, b);
        auto out = output_like(a, a->requires_grad || b->requires_grad);
        for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] - b->data[i];
        if (track(out)) {
            push("sub", [a, b, out] {
                if (!out->has_grad()) return;
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] -= out->grad[i];
                }
            });
        }
        return out;
    }

    // y = a ⊙ b, same shape.
    TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
        require_same_shape("mul", a, b);
        auto out = output_like(a, a->requires_grad || b->requires_grad);
        for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * b->data[i];
        if (track(out)) {
            push("mul", [a, b, out] {
                if (!out->has_grad()) return;
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * b->data[i];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i] * a->data[i];
                }
            });
        }
        return out;
    }

    // y = scale * a + shift, elementwise.
    TensorPtr affine(const TensorPtr& a, double scale, double shift) {
        auto out = output_like(a, a->requires_grad);
        for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = scale * a->data[i] + shift;
        if (track(out)) {
            push("affine", [a, out, scale] {
                if (!out->has_grad() || !a->requires_grad) return;
                a->ensure_grad();
                for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += scale * out->grad[i];
            });
        }
        return out;
    }

    // [m×k]·[k×n] -> [m×n], or [m×k]·[k] -> [m].
    TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
        if (a->rank() != 2 || (b->rank() != 2 && b->rank() != 1))
            throw shape_error("matmul shape mismatch: " + a->shape_str() + " x " + b->shape_str());
        std::size_t m = a->shape[0], k = a->shape[1];
        if (b->shape[0] != k)
            throw shape_error("matmul shape mismatch: " + a->shape_str() + " x " + b->shape_str());

        bool vec = b->rank() == 1;
        std::size_t n = vec ? 1 : b->shape[1];
        auto out = Tensor::zeros(vec ? std::vector<std::size_t>{m} : std::vector<std::size_t>{m, n},
                                 a->requires_grad || b->requires_grad);
        // i-k-j order keeps the inner loop contiguous in both b and out.
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = a->data.data() + i * k;
            double* orow = out->data.data() + i * n;
            for (std::size_t kk = 0; kk < k; ++kk) {
                double av = arow[kk];
                if (av == 0.0) continue;
                const double* brow = b->data.data() + kk * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
        if (track(out)) {
            push("matmul", [a, b, out, m, k, n] {
                if (!out->has_grad()) return;
                if (a->requires_grad) {
                    a->ensure_grad();
                    // dA = G · Bᵀ
                    for (std::size_t i = 0; i < m; ++i) {
                        const double* grow = out->grad.data() + i * n;
                        double* darow = a->grad.data() + i * k;
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            const double* brow = b->data.data() + kk * n;
                            double acc = 0.0;
                            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            darow[kk] += acc;
                        }
                    }
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    // dB = Aᵀ · G
                    for (std::size_t i = 0; i < m; ++i) {
                        const double* arow = a->data.data() + i * k;
                        const double* grow = out->grad.data() + i * n;
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            double av = arow[kk];
                            if (av == 0.0) continue;
                            double* dbrow = b->grad.data() + kk * n;
                            for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                        }
                    }
                }
            });
        }
        return out;
    }

    TensorPtr sigmoid(const TensorPtr& a) {
        auto out = output_like(a, a->requires_grad);
        for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = sigmoid_scalar(a->data[i]);
        if (track(out)) {
            push("sigmoid", [a, out] {
                if (!out->has_grad() || !a->requires_grad) return;
                a->ensure_grad();
                for (std::size_t i = 0; i < a->size(); ++i) {
                    double s = out->data[i];
                    a->grad[i] += out->grad[i] * s * (1.0 - s);
                }
            });
        }
        return out;
    }

    TensorPtr tanh(const TensorPtr& a) {
        auto out = output_like(a, a->requires_grad);
        for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = std::tanh(a->data[i]);
        if (track(out)) {
            push("tanh", [a, out] {
                if (!out->has_grad() || !a->requires_grad) return;
                a->ensure_grad();
                for (std::size_t i = 0; i < a->size(); ++i) {
                    double y = out->data[i];
                    a->grad[i] += out->grad[i] * (1.0 - y * y);
                }
            });
        }
        return out;
    }

    TensorPtr relu(const TensorPtr& a) {
        auto out = output_like(a, a->requires_grad);
        for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
        if (track(out)) {
            push("relu", [a, out] {
                if (!out->has_grad() || !a->requires_grad) return;
                a->ensure_grad();
                for (std::size_t i = 0; i < a->size(); ++i)
                    if (a->data[i] > 0.0) a->grad[i] += out->grad[i];
            });
        }
        return out;
    }

    // Concatenation of 1-D tensors.
    TensorPtr concat(const std::vector<TensorPtr>& parts) {
        if (parts.empty()) throw contract_error("concat: no inputs");
        std::size_t total = 0;
        bool rg = false;
        for (const auto& p : parts) {
            if (p->rank() != 1) throw shape_error("concat expects 1-D tensors, got " + p->shape_str());
            total += p->size();
            rg = rg || p->requires_grad;
        }
        auto out = Tensor::zeros({total}, rg);
        std::size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p->data.begin(), p->data.end(), out->data.begin() + static_cast<std::ptrdiff_t>(off));
            off += p->size();
        }
        if (track(out)) {
            push("concat", [parts, out] {
                if (!out->has_grad()) return;
                std::size_t off = 0;
                for (const auto& p : parts) {
                    if (p->requires_grad) {
                        p->ensure_grad();
                        for (std::size_t i = 0; i < p->size(); ++i) p->grad[i] += out->grad[off + i];
                    }
                    off += p->size();
                }
            });
        }
        return out;
    }

    // Contiguous 1-D slice [start, start+len).
    TensorPtr slice(const TensorPtr& a, std::size_t start, std::size_t len) {
        if (a->rank() != 1) throw shape_error("slice expects a 1-D tensor, got " + a->shape_str());
        if (start + len > a->size())
            throw shape_error("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                              ") out of range for " + a->shape_str());
        auto out = Tensor::zeros({len}, a->requires_grad);
        std::copy(a->data.begin() + static_cast<std::ptrdiff_t>(start),
                  a->data.begin() + static_cast<std::ptrdiff_t>(start + len), out->data.begin());
        if (track(out)) {
            push("slice", [a, out, start, len] {
                if (!out->has_grad() || !a->requires_grad) return;
                a->ensure_grad();
                for (std::size_t i = 0; i < len; ++i) a->grad[start + i] += out->grad[i];
            });
        }
        return out;
    }

    // Scalar sum of all entries.
    TensorPtr sum(const TensorPtr& a) {
        double acc = 0.0;
        for (double v : a->data) acc += v;
        auto out = Tensor::scalar(acc, a->requires_grad);
        if (track(out)) {
            push("sum", [a, out] {
                if (!out->has_grad() || !a->requires_grad) return;
                a->ensure_grad();
                double g = out->grad[0];
                for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += g;
            });
        }
        return out;
    }

    // Row gather: table [V×d], ids of length L -> [L×d]. Repeated ids
    // accumulate into the same table rows on the way back.
    TensorPtr embed_rows(const TensorPtr& table, const std::vector<int>& ids) {
        if (table->rank() != 2) throw shape_error("embed_rows expects a 2-D table, got " + table->shape_str());
        std::size_t v = table->shape[0], d = table->shape[1];
        for (int id : ids)
            if (id < 0 || static_cast<std::size_t>(id) >= v)
                throw contract_error("embed_rows: id " + std::to_string(id) + " out of range [0, " +
                                     std::to_string(v) + ")");
        auto out = Tensor::zeros({ids.size(), d}, table->requires_grad);
        for (std::size_t r = 0; r < ids.size(); ++r)
            std::copy_n(table->data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[r]) * d),
                        d, out->data.begin() + static_cast<std::ptrdiff_t>(r * d));
        if (track(out)) {
            push("embed_rows", [table, out, ids, d] {
                if (!out->has_grad() || !table->requires_grad) return;
                table->ensure_grad();
                for (std::size_t r = 0; r < ids.size(); ++r) {
                    double* trow = table->grad.data() + static_cast<std::size_t>(ids[r]) * d;
                    const double* grow = out->grad.data() + r * d;
                    for (std::size_t c = 0; c < d; ++c) trow[c] += grow[c];
                }
            });
        }
        return out;
    }

    // chars [L×d] convolved with filter [w×d×f]; max over the L−w+1 positions
    // per filter -> [f]. Linear: bias and nonlinearity are applied by callers
    // (max commutes with any monotone pointwise map, so pooling first is
    // equivalent). Gradient routes through the first-maximum position.
    TensorPtr conv1d_maxpool(const TensorPtr& chars, const TensorPtr& filter) {
        if (chars->rank() != 2) throw shape_error("conv1d_maxpool input must be 2-D, got " + chars->shape_str());
        if (filter->rank() != 3) throw shape_error("conv1d_maxpool filter must be 3-D, got " + filter->shape_str());
        std::size_t len = chars->shape[0], d = chars->shape[1];
        std::size_t w = filter->shape[0], fd = filter->shape[1], f = filter->shape[2];
        if (fd != d)
            throw shape_error("conv1d_maxpool channel mismatch: input " + chars->shape_str() +
                              " vs filter " + filter->shape_str());
        if (w > len)
            throw config_error("conv1d_maxpool: filter width " + std::to_string(w) +
                               " exceeds padded word length " + std::to_string(len));

        std::size_t n_pos = len - w + 1;
        auto out = Tensor::zeros({f}, chars->requires_grad || filter->requires_grad);
        std::vector<std::size_t> argmax(f, 0);
        std::vector<double> best(f, -std::numeric_limits<double>::infinity());
        std::vector<double> s(f);
        for (std::size_t p = 0; p < n_pos; ++p) {
            std::fill(s.begin(), s.end(), 0.0);
            for (std::size_t t = 0; t < w; ++t) {
                const double* crow = chars->data.data() + (p + t) * d;
                for (std::size_t c = 0; c < d; ++c) {
                    double x = crow[c];
                    if (x == 0.0) continue;
                    const double* frow = filter->data.data() + (t * d + c) * f;
                    for (std::size_t j = 0; j < f; ++j) s[j] += x * frow[j];
                }
            }
            for (std::size_t j = 0; j < f; ++j) {
                if (s[j] > best[j]) {
                    best[j] = s[j];
                    argmax[j] = p;
                }
            }
        }
        out->data = best;
        if (track(out)) {
            push("conv1d_maxpool", [chars, filter, out, argmax, w, d, f] {
                if (!out->has_grad()) return;
                if (chars->requires_grad) chars->ensure_grad();
                if (filter->requires_grad) filter->ensure_grad();
                for (std::size_t j = 0; j < f; ++j) {
                    double g = out->grad[j];
                    if (g == 0.0) continue;
                    std::size_t p = argmax[j];
                    for (std::size_t t = 0; t < w; ++t) {
                        const double* crow = chars->data.data() + (p + t) * d;
                        const double* frow = filter->data.data() + t * d * f;
                        for (std::size_t c = 0; c < d; ++c) {
                            if (chars->requires_grad) chars->grad[(p + t) * d + c] += frow[c * f + j] * g;
                            if (filter->requires_grad) filter->grad[(t * d + c) * f + j] += crow[c] * g;
                        }
                    }
                }
            });
        }
        return out;
    }

    // Scalar −log softmax(logits)[target], computed with max-subtraction.
    TensorPtr nll_from_logits(const TensorPtr& logits, std::size_t target) {
        if (logits->rank() != 1) throw shape_error("nll_from_logits expects 1-D logits, got " + logits->shape_str());
        if (target >= logits->size())
            throw contract_error("nll_from_logits: target " + std::to_string(target) + " out of range");
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : logits->data) mx = std::max(mx, v);
        double acc = 0.0;
        for (double v : logits->data) acc += std::exp(v - mx);
        double lse = mx + std::log(acc);
        auto out = Tensor::scalar(lse - logits->data[target], logits->requires_grad);
        if (track(out)) {
            push("nll_from_logits", [logits, out, target, lse] {
                if (!out->has_grad() || !logits->requires_grad) return;
                logits->ensure_grad();
                double g = out->grad[0];
                for (std::size_t i = 0; i < logits->size(); ++i) {
                    double p = std::exp(logits->data[i] - lse);
                    logits->grad[i] += g * (p - (i == target ? 1.0 : 0.0));
                }
            });
        }
        return out;
    }

    // Reverse sweep from a scalar loss. Gradients accumulate additively across
    // fan-out; tensors already holding gradients keep accumulating.
    void backward(const TensorPtr& loss) {
        if (!record_) throw contract_error("backward called on a non-recording tape");
        if (loss->size() != 1)
            throw contract_error("backward: loss must be scalar, got shape " + loss->shape_str());
        loss->ensure_grad();
        loss->grad[0] = 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
    }

private:
    struct Op {
        const char* name;
        std::function<void()> backward;
    };

    static void require_same_shape(const char* op, const TensorPtr& a, const TensorPtr& b) {
        if (a->shape != b->shape)
            throw shape_error(std::string(op) + " shape mismatch: " + a->shape_str() + " vs " +
                              b->shape_str());
    }

    static TensorPtr output_like(const TensorPtr& a, bool requires_grad) {
        auto out = Tensor::zeros(a->shape, requires_grad);
        return out;
    }

    bool track(const TensorPtr& out) const { return record_ && out->requires_grad; }

    void push(const char* name, std::function<void()> fn) { ops_.push_back({name, std::move(fn)}); }

    std::vector<Op> ops_;
    bool record_;
};

// One step of a standard LSTM cell. Gate block order inside W, U, b is
// (input, forget, cell candidate, output), each of height H.
struct LstmCell {
    TensorPtr W;  // [4H × d_in]
    TensorPtr U;  // [4H × H]
    TensorPtr b;  // [4H]
};

inline std::pair<TensorPtr, TensorPtr> lstm_step(Tape& tape, const TensorPtr& x, const TensorPtr& h,
                                                 const TensorPtr& c, const LstmCell& cell) {
    if (cell.W->rank() != 2 || cell.W->shape[0] % 4 != 0)
        throw shape_error("lstm_step: W must be [4H x d_in], got " + cell.W->shape_str());
    std::size_t hidden = cell.W->shape[0] / 4;
    if (cell.U->rank() != 2 || cell.U->shape[0] != 4 * hidden || cell.U->shape[1] != hidden)
        throw shape_error("lstm_step: U must be [4H x H], got " + cell.U->shape_str());
    if (cell.b->size() != 4 * hidden) throw shape_error("lstm_step: b must be [4H], got " + cell.b->shape_str());
    if (h->size() != hidden || c->size() != hidden)
        throw shape_error("lstm_step: state size mismatch with " + cell.W->shape_str());

    auto z = tape.add(tape.add(tape.matmul(cell.W, x), tape.matmul(cell.U, h)), cell.b);
    auto i = tape.sigmoid(tape.slice(z, 0, hidden));
    auto f = tape.sigmoid(tape.slice(z, hidden, hidden));
    auto g = tape.tanh(tape.slice(z, 2 * hidden, hidden));
    auto o = tape.sigmoid(tape.slice(z, 3 * hidden, hidden));
    auto c_next = tape.add(tape.mul(f, c), tape.mul(i, g));
    auto h_next = tape.mul(o, tape.tanh(c_next));
    return {h_next, c_next};
}

// Gated residual transform y = t ⊙ relu(Wx + b) + (1 − t) ⊙ x with
// t = sigmoid(Wt·x + bt).
struct HighwayLayer {
    TensorPtr W;   // [d × d]
    TensorPtr b;   // [d]
    TensorPtr Wt;  // [d × d]
    TensorPtr bt;  // [d]
};

inline TensorPtr highway(Tape& tape, const TensorPtr& x, const HighwayLayer& layer) {
    auto t = tape.sigmoid(tape.add(tape.matmul(layer.Wt, x), layer.bt));
    auto g = tape.relu(tape.add(tape.matmul(layer.W, x), layer.b));
    auto carry = tape.affine(t, -1.0, 1.0);
    return tape.add(tape.mul(t, g), tape.mul(carry, x));
}

}  // namespace telephonetic
