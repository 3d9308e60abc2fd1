#pragma once

// Minimal dense tensors with tape-based reverse-mode differentiation.
//
// A Tape records every operation applied to its variables in execution
// order. Parameters are bound by reference with Tape::param(), so after
// Tape::backward() their gradients are written straight into the owning
// Tensor. Everything is 64-bit and row-major; the only broadcast is bias-add.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace contrec::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

class Tensor {
public:
    Tensor() : shape_{}, data_(1, 0.0) {}

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != numel(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + to_string(shape_));
        }
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    static Tensor vector(std::initializer_list<double> values) {
        return Tensor({values.size()}, std::vector<double>(values));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* raw() { return data_.data(); }
    const double* raw() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double item() const {
        if (data_.size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape_));
        return data_[0];
    }

    bool requires_grad() const { return requires_grad_; }
    Tensor& set_requires_grad(bool flag) {
        requires_grad_ = flag;
        return *this;
    }

    bool has_grad() const { return grad_.has_value(); }
    const std::vector<double>& grad() const {
        if (!grad_) throw ContractError("tensor has no gradient");
        return *grad_;
    }
    void set_grad(std::vector<double> g) {
        if (g.size() != data_.size()) throw DimensionError("gradient length mismatch");
        grad_ = std::move(g);
    }
    void clear_grad() { grad_.reset(); }

    Tensor reshaped(Shape shape) const {
        Tensor out(std::move(shape), data_);
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
    bool requires_grad_ = false;
    std::optional<std::vector<double>> grad_;
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;
};

class Tape {
public:
    using BackwardRule = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    // Binds an external tensor; its gradient is written back by backward()
    // when requires_grad() is set. The tensor must outlive the tape.
    Var param(Tensor& t) {
        Node n;
        n.external = &t;
        n.writable = &t;
        n.needs_grad = t.requires_grad();
        n.leaf = true;
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    // Binds a frozen tensor without copying it.
    Var frozen(const Tensor& t) {
        Node n;
        n.external = &t;
        n.leaf = true;
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    Var constant(Tensor t) {
        Node n;
        n.value = std::move(t);
        n.leaf = true;
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    Var variable(Tensor t) {
        Node n;
        n.value = std::move(t);
        n.leaf = true;
        n.needs_grad = true;
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    // Records an operation. The backward rule is dropped when no input
    // needs a gradient.
    Var record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardRule rule) {
        for (std::size_t i = 0; i < value.size(); ++i) {
            if (!std::isfinite(value[i])) {
                throw NumericError(std::string(op) + ": non-finite output at index " + std::to_string(i));
            }
        }
        Node n;
        n.op = op;
        n.value = std::move(value);
        for (auto in : inputs) {
            if (in >= nodes_.size()) throw ContractError(std::string(op) + ": input recorded after op");
            n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
        }
        n.inputs = std::move(inputs);
        if (n.needs_grad) n.rule = std::move(rule);
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    const Tensor& value(std::size_t id) const {
        const Node& n = nodes_.at(id);
        return n.external ? *n.external : n.value;
    }
    const Tensor& value(Var v) const { return value(v.id); }

    bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
    std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
    std::size_t input(std::size_t id, std::size_t k) const { return nodes_.at(id).inputs.at(k); }
    std::size_t size() const { return nodes_.size(); }

    // Upstream gradient of a node during backward (sized like its value).
    const std::vector<double>& upstream(std::size_t id) const { return nodes_.at(id).grad; }

    // Accumulation buffer for an input; allocated on first touch.
    std::vector<double>& accum(std::size_t id) {
        Node& n = nodes_.at(id);
        if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
        return n.grad;
    }

    // Gradient of the last backward() with respect to any recorded variable.
    Tensor grad(Var v) const {
        const Node& n = nodes_.at(v.id);
        const Tensor& val = value(v.id);
        if (n.grad.empty()) return Tensor(val.shape(), 0.0);
        return Tensor(val.shape(), n.grad);
    }

    void backward(Var loss) {
        if (loss.tape != this) throw ContractError("backward: loss belongs to another tape");
        if (value(loss).size() != 1) {
            throw ContractError("backward: loss must be scalar, got shape " + to_string(value(loss).shape()));
        }
        if (loss.id + 1 != nodes_.size()) throw ContractError("backward: loss is not the tape's final output");
        for (auto& n : nodes_) n.grad.clear();
        accum(loss.id)[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.empty()) continue;
            if (n.rule) n.rule(*this, i);
        }
        for (auto& n : nodes_) {
            if (n.writable && n.needs_grad) {
                n.writable->set_grad(n.grad.empty() ? std::vector<double>(n.writable->size(), 0.0) : n.grad);
            }
        }
    }

private:
    struct Node {
        const char* op = "leaf";
        Tensor value;
        const Tensor* external = nullptr;
        Tensor* writable = nullptr;
        std::vector<std::size_t> inputs;
        BackwardRule rule;
        std::vector<double> grad;
        bool needs_grad = false;
        bool leaf = false;
    };
    std::vector<Node> nodes_;
};

namespace detail {

inline void same_tape(Var a, Var b, const char* op) {
    if (a.tape != b.tape) throw ContractError(std::string(op) + ": operands on different tapes");
}

inline void require_finite(const Tensor& t, const char* op) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t[i])) {
            throw NumericError(std::string(op) + ": non-finite input at index " + std::to_string(i));
        }
    }
}

// Unary op whose local derivative is a function of (input, output).
template <class Fwd, class Deriv>
Var unary(Var x, const char* op, Fwd fwd, Deriv deriv) {
    Tape& tape = *x.tape;
    const Tensor& in = tape.value(x);
    require_finite(in, op);
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    return tape.record(op, std::move(out), {x.id}, [deriv](Tape& t, std::size_t self) {
        const std::size_t src = t.input(self, 0);
        if (!t.needs_grad(src)) return;
        const auto& g = t.upstream(self);
        const Tensor& in = t.value(src);
        const Tensor& out = t.value(self);
        auto& acc = t.accum(src);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * deriv(in[i], out[i]);
    });
}

}  // namespace detail

inline Var relu(Var x) {
    return detail::unary(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid_value(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

inline Var sigmoid(Var x) {
    return detail::unary(x, "sigmoid", sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(Var x) {
    return detail::unary(
        x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(Var x) {
    const Tensor& in = x.tape->value(x);
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (!(in[i] > 0.0)) {
            throw DomainError("log: non-positive input " + std::to_string(in[i]) + " at index " + std::to_string(i));
        }
    }
    return detail::unary(
        x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var neg(Var x) {
    return detail::unary(
        x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

inline Var scale(Var x, double c) {
    return detail::unary(
        x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var x, double c) {
    return detail::unary(
        x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var square(Var x) {
    return detail::unary(
        x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// Gradient is zero where the clamp is active.
inline Var clamp(Var x, double lo, double hi) {
    return detail::unary(
        x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

namespace detail {

template <class Fwd, class DA, class DB>
Var binary(Var a, Var b, const char* op, Fwd fwd, DA da, DB db) {
    same_tape(a, b, op);
    Tape& tape = *a.tape;
    const Tensor& x = tape.value(a);
    const Tensor& y = tape.value(b);
    if (x.shape() != y.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(x.shape()) + " vs " +
                             to_string(y.shape()));
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i], y[i]);
    return tape.record(op, std::move(out), {a.id, b.id}, [da, db](Tape& t, std::size_t self) {
        const std::size_t ia = t.input(self, 0);
        const std::size_t ib = t.input(self, 1);
        const auto& g = t.upstream(self);
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(ib);
        if (t.needs_grad(ia)) {
            auto& acc = t.accum(ia);
            for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * da(x[i], y[i]);
        }
        if (t.needs_grad(ib)) {
            auto& acc = t.accum(ib);
            for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * db(x[i], y[i]);
        }
    });
}

}  // namespace detail

inline Var add(Var a, Var b) {
    return detail::binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
    return detail::binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
    return detail::binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

inline Var reshape(Var x, Shape shape) {
    Tape& tape = *x.tape;
    const Tensor& in = tape.value(x);
    if (numel(shape) != in.size()) {
        throw DimensionError("reshape: cannot view " + to_string(in.shape()) + " as " + to_string(shape));
    }
    return tape.record("reshape", in.reshaped(std::move(shape)), {x.id}, [](Tape& t, std::size_t self) {
        const std::size_t src = t.input(self, 0);
        if (!t.needs_grad(src)) return;
        const auto& g = t.upstream(self);
        auto& acc = t.accum(src);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    });
}

inline Var sum(Var x) {
    Tape& tape = *x.tape;
    const Tensor& in = tape.value(x);
    double s = 0.0;
    for (double v : in.data()) s += v;
    return tape.record("sum", Tensor::scalar(s), {x.id}, [](Tape& t, std::size_t self) {
        const std::size_t src = t.input(self, 0);
        if (!t.needs_grad(src)) return;
        const double g = t.upstream(self)[0];
        auto& acc = t.accum(src);
        for (auto& a : acc) a += g;
    });
}

inline Var mean(Var x) {
    const std::size_t n = x.tape->value(x).size();
    return scale(sum(x), 1.0 / static_cast<double>(n));
}

// Row mean of an M x N matrix, giving 1 x N.
inline Var mean_rows(Var x) {
    Tape& tape = *x.tape;
    const Tensor& in = tape.value(x);
    if (in.rank() != 2 || in.dim(0) == 0) throw DimensionError("mean_rows: expected non-empty matrix, got " + to_string(in.shape()));
    const std::size_t m = in.dim(0), n = in.dim(1);
    Tensor out({1, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += in[i * n + j];
    for (std::size_t j = 0; j < n; ++j) out[j] /= static_cast<double>(m);
    return tape.record("mean_rows", std::move(out), {x.id}, [m, n](Tape& t, std::size_t self) {
        const std::size_t src = t.input(self, 0);
        if (!t.needs_grad(src)) return;
        const auto& g = t.upstream(self);
        auto& acc = t.accum(src);
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) acc[i * n + j] += g[j] * inv;
    });
}

namespace detail {

// out[M x N] += a[M x K] * b[K x N]; accumulation order over k is fixed so
// every output row is independent of M.
inline void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* o = out + i * n;
        const double* ar = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ar[p];
            const double* br = b + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
        }
    }
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
    detail::same_tape(a, b, "matmul");
    Tape& tape = *a.tape;
    const Tensor& x = tape.value(a);
    const Tensor& y = tape.value(b);
    if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + to_string(x.shape()) + " and " + to_string(y.shape()));
    }
    const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
    Tensor out({m, n});
    detail::gemm_nn(x.raw(), y.raw(), out.raw(), m, k, n);
    return tape.record("matmul", std::move(out), {a.id, b.id}, [m, k, n](Tape& t, std::size_t self) {
        const std::size_t ia = t.input(self, 0);
        const std::size_t ib = t.input(self, 1);
        const auto& g = t.upstream(self);
        const double* x = t.value(ia).raw();
        const double* y = t.value(ib).raw();
        if (t.needs_grad(ia)) {
            // dA = G * B^T
            auto& acc = t.accum(ia);
            for (std::size_t i = 0; i < m; ++i) {
                const double* gr = g.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double* br = y + p * n;
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += gr[j] * br[j];
                    acc[i * k + p] += s;
                }
            }
        }
        if (t.needs_grad(ib)) {
            // dB = A^T * G
            auto& acc = t.accum(ib);
            for (std::size_t i = 0; i < m; ++i) {
                const double* ar = x + i * k;
                const double* gr = g.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = ar[p];
                    double* o = acc.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) o[j] += av * gr[j];
                }
            }
        }
    });
}

// Bias-add, the one broadcast: M x N plus N (or 1 x N) per row, or
// F x H x W plus F per channel.
inline Var add_bias(Var x, Var bias) {
    detail::same_tape(x, bias, "add_bias");
    Tape& tape = *x.tape;
    const Tensor& in = tape.value(x);
    const Tensor& b = tape.value(bias);
    std::size_t groups = 0, width = 0;
    bool per_row = false;
    if (in.rank() == 2 && b.size() == in.dim(1) && (b.rank() == 1 || (b.rank() == 2 && b.dim(0) == 1))) {
        groups = in.dim(0);
        width = in.dim(1);
        per_row = true;
    } else if (in.rank() == 3 && b.rank() == 1 && b.dim(0) == in.dim(0)) {
        groups = in.dim(0);
        width = in.dim(1) * in.dim(2);
    } else {
        throw DimensionError("add_bias: cannot broadcast " + to_string(b.shape()) + " onto " + to_string(in.shape()));
    }
    Tensor out(in.shape());
    for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t j = 0; j < width; ++j) {
            const std::size_t idx = g * width + j;
            out[idx] = in[idx] + (per_row ? b[j] : b[g]);
        }
    return tape.record("add_bias", std::move(out), {x.id, bias.id}, [groups, width, per_row](Tape& t, std::size_t self) {
        const std::size_t ix = t.input(self, 0);
        const std::size_t ib = t.input(self, 1);
        const auto& g = t.upstream(self);
        if (t.needs_grad(ix)) {
            auto& acc = t.accum(ix);
            for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        }
        if (t.needs_grad(ib)) {
            auto& acc = t.accum(ib);
            for (std::size_t r = 0; r < groups; ++r)
                for (std::size_t j = 0; j < width; ++j) acc[per_row ? j : r] += g[r * width + j];
        }
    });
}

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// x: C x H x W, w: F x C x k x k. Zero padding.
inline Var conv2d(Var x, Var w, std::size_t stride, std::size_t pad) {
    detail::same_tape(x, w, "conv2d");
    Tape& tape = *x.tape;
    const Tensor& in = tape.value(x);
    const Tensor& ker = tape.value(w);
    if (in.rank() != 3 || ker.rank() != 4 || ker.dim(1) != in.dim(0) || ker.dim(2) != ker.dim(3)) {
        throw DimensionError("conv2d: incompatible input " + to_string(in.shape()) + " and kernel " +
                             to_string(ker.shape()));
    }
    if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
    const std::size_t c = in.dim(0), h = in.dim(1), wd = in.dim(2);
    const std::size_t f = ker.dim(0), k = ker.dim(2);
    if (k > h + 2 * pad || k > wd + 2 * pad) {
        throw DimensionError("conv2d: kernel " + to_string(ker.shape()) + " larger than padded input " +
                             to_string(in.shape()) + " with pad " + std::to_string(pad));
    }
    const std::size_t oh = conv_out_dim(h, k, stride, pad), ow = conv_out_dim(wd, k, stride, pad);
    Tensor out({f, oh, ow});
    const long lpad = static_cast<long>(pad);
    for (std::size_t fo = 0; fo < f; ++fo)
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const double wv = ker[((fo * c + ci) * k + ky) * k + kx];
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const long iy = static_cast<long>(oy * stride + ky) - lpad;
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const long ix = static_cast<long>(ox * stride + kx) - lpad;
                            if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                            out[(fo * oh + oy) * ow + ox] += wv * in[(ci * h + iy) * wd + ix];
                        }
                    }
                }
    return tape.record("conv2d", std::move(out), {x.id, w.id},
                       [c, h, wd, f, k, oh, ow, stride, lpad](Tape& t, std::size_t self) {
                           const std::size_t ix_id = t.input(self, 0);
                           const std::size_t iw_id = t.input(self, 1);
                           const auto& g = t.upstream(self);
                           const Tensor& in = t.value(ix_id);
                           const Tensor& ker = t.value(iw_id);
                           const bool gx = t.needs_grad(ix_id), gw = t.needs_grad(iw_id);
                           std::vector<double>* dx = gx ? &t.accum(ix_id) : nullptr;
                           std::vector<double>* dw = gw ? &t.accum(iw_id) : nullptr;
                           for (std::size_t fo = 0; fo < f; ++fo)
                               for (std::size_t ci = 0; ci < c; ++ci)
                                   for (std::size_t ky = 0; ky < k; ++ky)
                                       for (std::size_t kx = 0; kx < k; ++kx) {
                                           const std::size_t widx = ((fo * c + ci) * k + ky) * k + kx;
                                           const double wv = ker[widx];
                                           double wacc = 0.0;
                                           for (std::size_t oy = 0; oy < oh; ++oy) {
                                               const long iy = static_cast<long>(oy * stride + ky) - lpad;
                                               if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                               for (std::size_t ox = 0; ox < ow; ++ox) {
                                                   const long ix = static_cast<long>(ox * stride + kx) - lpad;
                                                   if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                                                   const double gv = g[(fo * oh + oy) * ow + ox];
                                                   const std::size_t iidx = (ci * h + iy) * wd + ix;
                                                   if (dx) (*dx)[iidx] += gv * wv;
                                                   wacc += gv * in[iidx];
                                               }
                                           }
                                           if (dw) (*dw)[widx] += wacc;
                                       }
                       });
}

// Softmax over all entries, with max subtraction.
inline std::vector<double> softmax_values(std::span<const double> v) {
    std::vector<double> out(v.size());
    if (v.empty()) return out;
    const double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        z += out[i];
    }
    for (auto& o : out) o /= z;
    return out;
}

inline Var softmax(Var x) {
    Tape& tape = *x.tape;
    const Tensor& in = tape.value(x);
    detail::require_finite(in, "softmax");
    Tensor out(in.shape(), softmax_values(in.data()));
    return tape.record("softmax", std::move(out), {x.id}, [](Tape& t, std::size_t self) {
        const std::size_t src = t.input(self, 0);
        if (!t.needs_grad(src)) return;
        const auto& g = t.upstream(self);
        const Tensor& y = t.value(self);
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
        auto& acc = t.accum(src);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += y[i] * (g[i] - dot);
    });
}

struct GradCheckReport {
    std::vector<double> max_rel_error;  // one per parameter tensor
    double worst = 0.0;
    bool passed = false;
};

struct GradCheckOptions {
    double tolerance = 1e-4;
    double step = 1e-4;
    // Denominator floor of the relative error, so gradients that are zero
    // on both routes compare as exact.
    double floor = 1e-6;
    // 0 checks every coordinate; otherwise an evenly strided subset.
    std::size_t max_entries_per_param = 0;
};

using Objective = std::function<Var(Tape&, std::span<const Var>)>;

// Compares the tape gradient of a scalar objective against central
// differences, coordinate by coordinate.
inline GradCheckReport grad_check(const Objective& net, std::vector<Tensor>& params, const GradCheckOptions& opt = {}) {
    auto evaluate = [&](bool with_grad) {
        Tape tape;
        std::vector<Var> vars;
        vars.reserve(params.size());
        for (auto& p : params) {
            p.set_requires_grad(with_grad);
            vars.push_back(tape.param(p));
        }
        Var loss = net(tape, vars);
        const double v = tape.value(loss).item();
        if (with_grad) tape.backward(loss);
        return v;
    };
    evaluate(true);
    std::vector<std::vector<double>> analytic;
    for (auto& p : params) analytic.push_back(p.grad());

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        const std::size_t n = p.size();
        std::size_t stride = 1;
        if (opt.max_entries_per_param && n > opt.max_entries_per_param) stride = n / opt.max_entries_per_param;
        double worst = 0.0;
        for (std::size_t i = 0; i < n; i += stride) {
            const double orig = p[i];
            p[i] = orig + opt.step;
            const double up = evaluate(false);
            p[i] = orig - opt.step;
            const double down = evaluate(false);
            p[i] = orig;
            const double numeric = (up - down) / (2.0 * opt.step);
            const double a = analytic[pi][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
        report.max_rel_error.push_back(worst);
        report.worst = std::max(report.worst, worst);
    }
    for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi].set_grad(analytic[pi]);
    report.passed = report.worst <= opt.tolerance;
    return report;
}

}  // namespace contrec::ad
