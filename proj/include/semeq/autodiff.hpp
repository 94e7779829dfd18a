#pragma once

#include "semeq/rng.hpp"
#include "semeq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

// Reverse-mode tape. Ops are free functions that take an optional Tape*;
// with a tape and at least one traced input they record a backward closure,
// otherwise they are plain value functions. A tape belongs to one training
// session and one thread.

namespace semeq {

template <typename S>
class Tape {
public:
    using BackFn = std::function<void(Tape&, const Tensor<S>&)>;

    // Registers a leaf (typically a parameter) so gradients accumulate for it.
    int watch(Tensor<S>& t) {
        if (t.node >= 0) return t.node;
        t.node = new_node(t.shape);
        return t.node;
    }

    int record(const Shape& out_shape, std::vector<int> inputs, BackFn back, const char* op) {
        const int id = new_node(out_shape);
        records_.push_back(Record{op, std::move(inputs), std::move(back), id});
        return id;
    }

    // Populates gradient buffers for every node reachable from `loss`.
    // Unreached nodes keep zero gradients.
    void backward(const Tensor<S>& loss) {
        if (loss.node < 0) throw std::invalid_argument("backward: loss is not on the tape");
        if (shape_count(shapes_[static_cast<std::size_t>(loss.node)]) != 1)
            throw std::invalid_argument("backward: loss must be scalar");
        for (auto& g : grads_) g.clear();
        ensure_grad(loss.node)[0] = S(1);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            const auto& g = grads_[static_cast<std::size_t>(it->out)];
            if (g.empty()) continue;  // nothing flowed into this op's output
            Tensor<S> upstream;
            upstream.shape = shapes_[static_cast<std::size_t>(it->out)];
            upstream.data = g;
            it->back(*this, upstream);
        }
    }

    // Adds `g` (flat, `n` values) into the gradient buffer of `node`.
    void accumulate(int node, const S* g, std::int64_t n) {
        if (node < 0) return;
        auto& buf = ensure_grad(node);
        if (static_cast<std::int64_t>(buf.size()) != n)
            throw std::invalid_argument("accumulate: gradient size mismatch");
        for (std::int64_t i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] += g[i];
    }

    void accumulate(int node, const std::vector<S>& g) {
        accumulate(node, g.data(), static_cast<std::int64_t>(g.size()));
    }

    // Gradient of a watched or recorded tensor; zeros if nothing reached it.
    Tensor<S> grad(const Tensor<S>& t) const {
        if (t.node < 0) throw std::invalid_argument("grad: tensor is not on the tape");
        Tensor<S> out;
        out.shape = shapes_[static_cast<std::size_t>(t.node)];
        const auto& buf = grads_[static_cast<std::size_t>(t.node)];
        if (buf.empty())
            out.data.assign(static_cast<std::size_t>(shape_count(out.shape)), S(0));
        else
            out.data = buf;
        return out;
    }

    std::size_t num_records() const { return records_.size(); }
    std::size_t num_nodes() const { return shapes_.size(); }

    void reset() {
        shapes_.clear();
        grads_.clear();
        records_.clear();
    }

private:
    struct Record {
        const char* op;
        std::vector<int> inputs;
        BackFn back;
        int out;
    };

    int new_node(const Shape& sh) {
        shapes_.push_back(sh);
        grads_.emplace_back();
        return static_cast<int>(shapes_.size()) - 1;
    }

    std::vector<S>& ensure_grad(int node) {
        auto& buf = grads_[static_cast<std::size_t>(node)];
        if (buf.empty())
            buf.assign(static_cast<std::size_t>(
                           shape_count(shapes_[static_cast<std::size_t>(node)])),
                       S(0));
        return buf;
    }

    std::vector<Shape> shapes_;
    std::vector<std::vector<S>> grads_;
    std::vector<Record> records_;
};

namespace detail {

template <typename S>
bool traced(Tape<S>* tape, std::initializer_list<const Tensor<S>*> inputs) {
    if (!tape) return false;
    for (const auto* t : inputs)
        if (t->node >= 0) return true;
    return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
    if (!a.same_shape(b))
        throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    Tensor<S> out(a.shape);
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    check_finite(out, "add");
    if (detail::traced(tape, {&a, &b})) {
        const int an = a.node, bn = b.node;
        out.node = tape->record(out.shape, {an, bn},
                                [an, bn](Tape<S>& t, const Tensor<S>& g) {
                                    t.accumulate(an, g.data);
                                    t.accumulate(bn, g.data);
                                },
                                "add");
    }
    return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
    if (!a.same_shape(b))
        throw std::invalid_argument("sub: shape mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    Tensor<S> out(a.shape);
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    check_finite(out, "sub");
    if (detail::traced(tape, {&a, &b})) {
        const int an = a.node, bn = b.node;
        out.node = tape->record(out.shape, {an, bn},
                                [an, bn](Tape<S>& t, const Tensor<S>& g) {
                                    t.accumulate(an, g.data);
                                    std::vector<S> neg(g.data.size());
                                    for (std::size_t i = 0; i < neg.size(); ++i)
                                        neg[i] = -g.data[i];
                                    t.accumulate(bn, neg);
                                },
                                "sub");
    }
    return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
    if (!a.same_shape(b))
        throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    Tensor<S> out(a.shape);
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    check_finite(out, "mul");
    if (detail::traced(tape, {&a, &b})) {
        const int an = a.node, bn = b.node;
        std::vector<S> av = a.data, bv = b.data;
        out.node = tape->record(out.shape, {an, bn},
                                [an, bn, av, bv](Tape<S>& t, const Tensor<S>& g) {
                                    std::vector<S> da(g.data.size()), db(g.data.size());
                                    for (std::size_t i = 0; i < g.data.size(); ++i) {
                                        da[i] = g.data[i] * bv[i];
                                        db[i] = g.data[i] * av[i];
                                    }
                                    t.accumulate(an, da);
                                    t.accumulate(bn, db);
                                },
                                "mul");
    }
    return out;
}

template <typename S>
Tensor<S> scalar_mul(const Tensor<S>& x, double c, Tape<S>* tape = nullptr) {
    Tensor<S> out(x.shape);
    for (std::int64_t i = 0; i < x.size(); ++i) out[i] = static_cast<S>(x[i] * c);
    check_finite(out, "scalar_mul");
    if (detail::traced(tape, {&x})) {
        const int xn = x.node;
        out.node = tape->record(out.shape, {xn},
                                [xn, c](Tape<S>& t, const Tensor<S>& g) {
                                    std::vector<S> dx(g.data.size());
                                    for (std::size_t i = 0; i < dx.size(); ++i)
                                        dx[i] = static_cast<S>(g.data[i] * c);
                                    t.accumulate(xn, dx);
                                },
                                "scalar_mul");
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul: operands must be rank 2");
    if (a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: inner extents disagree " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<S> out({m, n});
    mat_view(out.data.data(), m, n).noalias() =
        mat_view(a.data.data(), m, k) * mat_view(b.data.data(), k, n);
    check_finite(out, "matmul");
    if (detail::traced(tape, {&a, &b})) {
        const int an = a.node, bn = b.node;
        std::vector<S> av = a.data, bv = b.data;
        out.node = tape->record(
            out.shape, {an, bn},
            [an, bn, av, bv, m, k, n](Tape<S>& t, const Tensor<S>& g) {
                if (an >= 0) {
                    std::vector<S> da(static_cast<std::size_t>(m) * k);
                    mat_view(da.data(), m, k).noalias() =
                        mat_view(g.data.data(), m, n) * mat_view(bv.data(), k, n).transpose();
                    t.accumulate(an, da);
                }
                if (bn >= 0) {
                    std::vector<S> db(static_cast<std::size_t>(k) * n);
                    mat_view(db.data(), k, n).noalias() =
                        mat_view(av.data(), m, k).transpose() * mat_view(g.data.data(), m, n);
                    t.accumulate(bn, db);
                }
            },
            "matmul");
    }
    return out;
}

template <typename S>
Tensor<S> transpose2d(const Tensor<S>& x, Tape<S>* tape = nullptr) {
    if (x.rank() != 2) throw std::invalid_argument("transpose2d: operand must be rank 2");
    const int r = x.dim(0), c = x.dim(1);
    Tensor<S> out({c, r});
    mat_view(out.data.data(), c, r).noalias() = mat_view(x.data.data(), r, c).transpose();
    if (detail::traced(tape, {&x})) {
        const int xn = x.node;
        out.node = tape->record(out.shape, {xn},
                                [xn, r, c](Tape<S>& t, const Tensor<S>& g) {
                                    std::vector<S> dx(static_cast<std::size_t>(r) * c);
                                    mat_view(dx.data(), r, c).noalias() =
                                        mat_view(g.data.data(), c, r).transpose();
                                    t.accumulate(xn, dx);
                                },
                                "transpose2d");
    }
    return out;
}

// x: [R x C], v: [C]. Broadcast down the rows.
template <typename S>
Tensor<S> rowwise_add(const Tensor<S>& x, const Tensor<S>& v, Tape<S>* tape = nullptr) {
    if (x.rank() != 2 || v.rank() != 1 || v.dim(0) != x.dim(1))
        throw std::invalid_argument("rowwise_add: want [RxC] and [C], got " +
                                    shape_str(x.shape) + " and " + shape_str(v.shape));
    const int r = x.dim(0), c = x.dim(1);
    Tensor<S> out(x.shape);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at2(i, j) = x.at2(i, j) + v[j];
    check_finite(out, "rowwise_add");
    if (detail::traced(tape, {&x, &v})) {
        const int xn = x.node, vn = v.node;
        out.node = tape->record(out.shape, {xn, vn},
                                [xn, vn, r, c](Tape<S>& t, const Tensor<S>& g) {
                                    t.accumulate(xn, g.data);
                                    if (vn >= 0) {
                                        std::vector<S> dv(static_cast<std::size_t>(c), S(0));
                                        for (int i = 0; i < r; ++i)
                                            for (int j = 0; j < c; ++j)
                                                dv[static_cast<std::size_t>(j)] += g.at2(i, j);
                                        t.accumulate(vn, dv);
                                    }
                                },
                                "rowwise_add");
    }
    return out;
}

template <typename S>
Tensor<S> rowwise_mul(const Tensor<S>& x, const Tensor<S>& v, Tape<S>* tape = nullptr) {
    if (x.rank() != 2 || v.rank() != 1 || v.dim(0) != x.dim(1))
        throw std::invalid_argument("rowwise_mul: want [RxC] and [C], got " +
                                    shape_str(x.shape) + " and " + shape_str(v.shape));
    const int r = x.dim(0), c = x.dim(1);
    Tensor<S> out(x.shape);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at2(i, j) = x.at2(i, j) * v[j];
    check_finite(out, "rowwise_mul");
    if (detail::traced(tape, {&x, &v})) {
        const int xn = x.node, vn = v.node;
        std::vector<S> xv = x.data, vv = v.data;
        out.node = tape->record(
            out.shape, {xn, vn},
            [xn, vn, xv, vv, r, c](Tape<S>& t, const Tensor<S>& g) {
                if (xn >= 0) {
                    std::vector<S> dx(g.data.size());
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j)
                            dx[static_cast<std::size_t>(i) * c + j] =
                                g.at2(i, j) * vv[static_cast<std::size_t>(j)];
                    t.accumulate(xn, dx);
                }
                if (vn >= 0) {
                    std::vector<S> dv(static_cast<std::size_t>(c), S(0));
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j)
                            dv[static_cast<std::size_t>(j)] +=
                                g.at2(i, j) * xv[static_cast<std::size_t>(i) * c + j];
                    t.accumulate(vn, dv);
                }
            },
            "rowwise_mul");
    }
    return out;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape, Tape<S>* tape = nullptr) {
    Tensor<S>::validate_shape(new_shape);
    if (shape_count(new_shape) != x.size())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(x.shape) +
                                    " -> " + shape_str(new_shape));
    Tensor<S> out;
    out.shape = std::move(new_shape);
    out.data = x.data;
    if (detail::traced(tape, {&x})) {
        const int xn = x.node;
        out.node = tape->record(out.shape, {xn},
                                [xn](Tape<S>& t, const Tensor<S>& g) { t.accumulate(xn, g.data); },
                                "reshape");
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations

template <typename S>
Tensor<S> tanh_act(const Tensor<S>& x, Tape<S>* tape = nullptr) {
    Tensor<S> out(x.shape);
    for (std::int64_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
    check_finite(out, "tanh");
    if (detail::traced(tape, {&x})) {
        const int xn = x.node;
        std::vector<S> y = out.data;
        out.node = tape->record(out.shape, {xn},
                                [xn, y](Tape<S>& t, const Tensor<S>& g) {
                                    std::vector<S> dx(g.data.size());
                                    for (std::size_t i = 0; i < dx.size(); ++i)
                                        dx[i] = g.data[i] * (S(1) - y[i] * y[i]);
                                    t.accumulate(xn, dx);
                                },
                                "tanh");
    }
    return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x, Tape<S>* tape = nullptr) {
    Tensor<S> out(x.shape);
    for (std::int64_t i = 0; i < x.size(); ++i)
        out[i] = S(1) / (S(1) + std::exp(-x[i]));
    check_finite(out, "sigmoid");
    if (detail::traced(tape, {&x})) {
        const int xn = x.node;
        std::vector<S> y = out.data;
        out.node = tape->record(out.shape, {xn},
                                [xn, y](Tape<S>& t, const Tensor<S>& g) {
                                    std::vector<S> dx(g.data.size());
                                    for (std::size_t i = 0; i < dx.size(); ++i)
                                        dx[i] = g.data[i] * y[i] * (S(1) - y[i]);
                                    t.accumulate(xn, dx);
                                },
                                "sigmoid");
    }
    return out;
}

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& x, double alpha, Tape<S>* tape = nullptr) {
    Tensor<S> out(x.shape);
    const S a = static_cast<S>(alpha);
    for (std::int64_t i = 0; i < x.size(); ++i) out[i] = x[i] > S(0) ? x[i] : a * x[i];
    check_finite(out, "leaky_relu");
    if (detail::traced(tape, {&x})) {
        const int xn = x.node;
        std::vector<S> xv = x.data;
        out.node = tape->record(out.shape, {xn},
                                [xn, xv, a](Tape<S>& t, const Tensor<S>& g) {
                                    std::vector<S> dx(g.data.size());
                                    for (std::size_t i = 0; i < dx.size(); ++i)
                                        dx[i] = g.data[i] * (xv[i] > S(0) ? S(1) : a);
                                    t.accumulate(xn, dx);
                                },
                                "leaky_relu");
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalizations (along one axis)

namespace detail {

template <typename S>
void axis_extents(const Tensor<S>& x, int axis, std::int64_t& outer, std::int64_t& len,
                  std::int64_t& inner) {
    if (axis < 0) axis += x.rank();
    if (axis < 0 || axis >= x.rank())
        throw std::invalid_argument("normalize: axis out of range for " + shape_str(x.shape));
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    len = x.dim(axis);
    for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
}

}  // namespace detail

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis, Tape<S>* tape = nullptr) {
    std::int64_t outer, len, inner;
    detail::axis_extents(x, axis, outer, len, inner);
    Tensor<S> out(x.shape);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * len * inner + in;
            S mx = x[base];
            for (std::int64_t l = 1; l < len; ++l) mx = std::max(mx, x[base + l * inner]);
            S sum = S(0);
            for (std::int64_t l = 0; l < len; ++l) {
                const S e = std::exp(x[base + l * inner] - mx);
                out[base + l * inner] = e;
                sum += e;
            }
            for (std::int64_t l = 0; l < len; ++l) out[base + l * inner] /= sum;
        }
    check_finite(out, "softmax");
    if (detail::traced(tape, {&x})) {
        const int xn = x.node;
        std::vector<S> y = out.data;
        out.node = tape->record(
            out.shape, {xn},
            [xn, y, outer, len, inner](Tape<S>& t, const Tensor<S>& g) {
                std::vector<S> dx(g.data.size());
                for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t in = 0; in < inner; ++in) {
                        const std::int64_t base = o * len * inner + in;
                        S dot = S(0);
                        for (std::int64_t l = 0; l < len; ++l) {
                            const std::size_t i = static_cast<std::size_t>(base + l * inner);
                            dot += g.data[i] * y[i];
                        }
                        for (std::int64_t l = 0; l < len; ++l) {
                            const std::size_t i = static_cast<std::size_t>(base + l * inner);
                            dx[i] = y[i] * (g.data[i] - dot);
                        }
                    }
                t.accumulate(xn, dx);
            },
            "softmax");
    }
    return out;
}

// y = (x - mean) / sqrt(var + eps), statistics along `axis` (population var).
template <typename S>
Tensor<S> layernorm(const Tensor<S>& x, int axis, double eps, Tape<S>* tape = nullptr) {
    std::int64_t outer, len, inner;
    detail::axis_extents(x, axis, outer, len, inner);
    Tensor<S> out(x.shape);
    std::vector<S> inv_std(static_cast<std::size_t>(outer * inner));
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * len * inner + in;
            S mean = S(0);
            for (std::int64_t l = 0; l < len; ++l) mean += x[base + l * inner];
            mean /= static_cast<S>(len);
            S var = S(0);
            for (std::int64_t l = 0; l < len; ++l) {
                const S d = x[base + l * inner] - mean;
                var += d * d;
            }
            var /= static_cast<S>(len);
            const S is = S(1) / std::sqrt(var + static_cast<S>(eps));
            inv_std[static_cast<std::size_t>(o * inner + in)] = is;
            for (std::int64_t l = 0; l < len; ++l)
                out[base + l * inner] = (x[base + l * inner] - mean) * is;
        }
    check_finite(out, "layernorm");
    if (detail::traced(tape, {&x})) {
        const int xn = x.node;
        std::vector<S> xhat = out.data;
        out.node = tape->record(
            out.shape, {xn},
            [xn, xhat, inv_std, outer, len, inner](Tape<S>& t, const Tensor<S>& g) {
                std::vector<S> dx(g.data.size());
                for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t in = 0; in < inner; ++in) {
                        const std::int64_t base = o * len * inner + in;
                        const S is = inv_std[static_cast<std::size_t>(o * inner + in)];
                        S mg = S(0), mgx = S(0);
                        for (std::int64_t l = 0; l < len; ++l) {
                            const std::size_t i = static_cast<std::size_t>(base + l * inner);
                            mg += g.data[i];
                            mgx += g.data[i] * xhat[i];
                        }
                        mg /= static_cast<S>(len);
                        mgx /= static_cast<S>(len);
                        for (std::int64_t l = 0; l < len; ++l) {
                            const std::size_t i = static_cast<std::size_t>(base + l * inner);
                            dx[i] = is * (g.data[i] - mg - xhat[i] * mgx);
                        }
                    }
                t.accumulate(xn, dx);
            },
            "layernorm");
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution (im2col + GEMM, per batch item)

namespace detail {

// cols: [cin*kh*kw x oh*ow], one batch item.
template <typename S>
void im2col(const S* x, int cin, int h, int w, int kh, int kw, int stride, int pad, int oh,
            int ow, S* cols) {
    for (int ci = 0; ci < cin; ++ci)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                S* row = cols + (static_cast<std::size_t>(ci) * kh * kw + ky * kw + kx) *
                                    static_cast<std::size_t>(oh) * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        row[static_cast<std::size_t>(oy) * ow + ox] =
                            (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                ? x[(static_cast<std::size_t>(ci) * h + iy) * w + ix]
                                : S(0);
                    }
                }
            }
}

template <typename S>
void col2im_add(const S* cols, int cin, int h, int w, int kh, int kw, int stride, int pad,
                int oh, int ow, S* x) {
    for (int ci = 0; ci < cin; ++ci)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const S* row = cols + (static_cast<std::size_t>(ci) * kh * kw + ky * kw + kx) *
                                          static_cast<std::size_t>(oh) * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        x[(static_cast<std::size_t>(ci) * h + iy) * w + ix] +=
                            row[static_cast<std::size_t>(oy) * ow + ox];
                    }
                }
            }
}

}  // namespace detail

// x: [b x cin x h x w], k: [cout x cin x kh x kw], bias: [cout] or nullptr.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& k, const Tensor<S>* bias, int stride,
                 int pad, Tape<S>* tape = nullptr) {
    if (x.rank() != 4 || k.rank() != 4)
        throw std::invalid_argument("conv2d: want x[b,cin,h,w] and k[cout,cin,kh,kw]");
    if (x.dim(1) != k.dim(1))
        throw std::invalid_argument("conv2d: input channels disagree " + shape_str(x.shape) +
                                    " vs " + shape_str(k.shape));
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
    const int b = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    if (kh > h + 2 * pad || kw > w + 2 * pad)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    if (bias && (bias->rank() != 1 || bias->dim(0) != cout))
        throw std::invalid_argument("conv2d: bias must be [cout]");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    const std::int64_t krows = static_cast<std::int64_t>(cin) * kh * kw;
    const std::int64_t opix = static_cast<std::int64_t>(oh) * ow;

    Tensor<S> out({b, cout, oh, ow});
    std::vector<S> cols(static_cast<std::size_t>(krows * opix));
    for (int bi = 0; bi < b; ++bi) {
        detail::im2col(x.data.data() + static_cast<std::size_t>(bi) * cin * h * w, cin, h, w, kh,
                       kw, stride, pad, oh, ow, cols.data());
        auto out_b = mat_view(out.data.data() + static_cast<std::size_t>(bi) * cout * opix, cout,
                              opix);
        out_b.noalias() = mat_view(k.data.data(), cout, krows) * mat_view(cols.data(), krows, opix);
        if (bias)
            for (int co = 0; co < cout; ++co)
                out_b.row(co).array() += bias->data[static_cast<std::size_t>(co)];
    }
    check_finite(out, "conv2d");

    const Tensor<S> dummy;
    if (detail::traced(tape, {&x, &k, bias ? bias : &dummy})) {
        const int xn = x.node, kn = k.node, bn = bias ? bias->node : -1;
        std::vector<S> xv = x.data, kv = k.data;
        out.node = tape->record(
            out.shape, {xn, kn, bn},
            [=](Tape<S>& t, const Tensor<S>& g) {
                std::vector<S> cols2(static_cast<std::size_t>(krows * opix));
                std::vector<S> dk, dx, db;
                if (kn >= 0) dk.assign(kv.size(), S(0));
                if (xn >= 0) dx.assign(xv.size(), S(0));
                if (bn >= 0) db.assign(static_cast<std::size_t>(cout), S(0));
                std::vector<S> dcols;
                if (xn >= 0) dcols.resize(static_cast<std::size_t>(krows * opix));
                for (int bi = 0; bi < b; ++bi) {
                    auto g_b = mat_view(g.data.data() + static_cast<std::size_t>(bi) * cout * opix,
                                        cout, opix);
                    if (kn >= 0 || xn >= 0)
                        detail::im2col(xv.data() + static_cast<std::size_t>(bi) * cin * h * w, cin,
                                       h, w, kh, kw, stride, pad, oh, ow, cols2.data());
                    if (kn >= 0)
                        mat_view(dk.data(), cout, krows).noalias() +=
                            g_b * mat_view(cols2.data(), krows, opix).transpose();
                    if (xn >= 0) {
                        mat_view(dcols.data(), krows, opix).noalias() =
                            mat_view(kv.data(), cout, krows).transpose() * g_b;
                        detail::col2im_add(dcols.data(), cin, h, w, kh, kw, stride, pad, oh, ow,
                                           dx.data() + static_cast<std::size_t>(bi) * cin * h * w);
                    }
                    if (bn >= 0)
                        for (int co = 0; co < cout; ++co) {
                            // Sequential accumulation: a vectorized reduction here
                            // changes summation order with buffer alignment, making
                            // gradients differ between otherwise identical runs.
                            S acc{};
                            for (int px = 0; px < opix; ++px) acc += g_b(co, px);
                            db[static_cast<std::size_t>(co)] += acc;
                        }
                }
                if (kn >= 0) t.accumulate(kn, dk);
                if (xn >= 0) t.accumulate(xn, dx);
                if (bn >= 0) t.accumulate(bn, db);
            },
            "conv2d");
    }
    return out;
}

// Nearest-neighbor x2 upsampling of [b x c x h x w].
template <typename S>
Tensor<S> upsample_nearest2(const Tensor<S>& x, Tape<S>* tape = nullptr) {
    if (x.rank() != 4) throw std::invalid_argument("upsample_nearest2: want [b,c,h,w]");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<S> out({b, c, 2 * h, 2 * w});
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int xw = 0; xw < w; ++xw) {
                    const S v = x.at4(bi, ci, y, xw);
                    out.at4(bi, ci, 2 * y, 2 * xw) = v;
                    out.at4(bi, ci, 2 * y, 2 * xw + 1) = v;
                    out.at4(bi, ci, 2 * y + 1, 2 * xw) = v;
                    out.at4(bi, ci, 2 * y + 1, 2 * xw + 1) = v;
                }
    if (detail::traced(tape, {&x})) {
        const int xn = x.node;
        out.node = tape->record(out.shape, {xn},
                                [xn, b, c, h, w](Tape<S>& t, const Tensor<S>& g) {
                                    std::vector<S> dx(static_cast<std::size_t>(b) * c * h * w);
                                    for (int bi = 0; bi < b; ++bi)
                                        for (int ci = 0; ci < c; ++ci)
                                            for (int y = 0; y < h; ++y)
                                                for (int xw = 0; xw < w; ++xw)
                                                    dx[((static_cast<std::size_t>(bi) * c + ci) *
                                                            h +
                                                        y) *
                                                           w +
                                                       xw] = g.at4(bi, ci, 2 * y, 2 * xw) +
                                                             g.at4(bi, ci, 2 * y, 2 * xw + 1) +
                                                             g.at4(bi, ci, 2 * y + 1, 2 * xw) +
                                                             g.at4(bi, ci, 2 * y + 1, 2 * xw + 1);
                                    t.accumulate(xn, dx);
                                },
                                "upsample_nearest2");
    }
    return out;
}

// ---------------------------------------------------------------------------
// patch <-> token reshuffles (single image)

// x: [1 x c x H x W] -> [n x c*p*p], patches row-major, channel-major inside.
template <typename S>
Tensor<S> patchify(const Tensor<S>& x, int p, Tape<S>* tape = nullptr) {
    if (x.rank() != 4 || x.dim(0) != 1) throw std::invalid_argument("patchify: want [1,c,H,W]");
    const int c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (p < 1 || h % p != 0 || w % p != 0)
        throw std::invalid_argument("patchify: patch size must divide both extents");
    const int py = h / p, px = w / p, n = py * px, d = c * p * p;
    Tensor<S> out({n, d});
    for (int t0 = 0; t0 < n; ++t0) {
        const int by = (t0 / px) * p, bx = (t0 % px) * p;
        for (int ci = 0; ci < c; ++ci)
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    out.at2(t0, (ci * p + dy) * p + dx) = x.at4(0, ci, by + dy, bx + dx);
    }
    if (detail::traced(tape, {&x})) {
        const int xn = x.node;
        out.node = tape->record(out.shape, {xn},
                                [xn, c, h, w, p, px, n](Tape<S>& t, const Tensor<S>& g) {
                                    std::vector<S> dx(static_cast<std::size_t>(c) * h * w);
                                    for (int t0 = 0; t0 < n; ++t0) {
                                        const int by = (t0 / px) * p, bx = (t0 % px) * p;
                                        for (int ci = 0; ci < c; ++ci)
                                            for (int dy = 0; dy < p; ++dy)
                                                for (int dxx = 0; dxx < p; ++dxx)
                                                    dx[(static_cast<std::size_t>(ci) * h + by +
                                                        dy) *
                                                           w +
                                                       bx + dxx] =
                                                        g.at2(t0, (ci * p + dy) * p + dxx);
                                    }
                                    t.accumulate(xn, dx);
                                },
                                "patchify");
    }
    return out;
}

// Inverse of patchify: [n x c*p*p] -> [1 x c x H x W].
template <typename S>
Tensor<S> unpatchify(const Tensor<S>& tks, int c, int h, int w, int p, Tape<S>* tape = nullptr) {
    if (tks.rank() != 2) throw std::invalid_argument("unpatchify: want [n, c*p*p]");
    const int py = h / p, px = w / p, n = py * px, d = c * p * p;
    if (p < 1 || h % p != 0 || w % p != 0 || tks.dim(0) != n || tks.dim(1) != d)
        throw std::invalid_argument("unpatchify: geometry mismatch for " + shape_str(tks.shape));
    Tensor<S> out({1, c, h, w});
    for (int t0 = 0; t0 < n; ++t0) {
        const int by = (t0 / px) * p, bx = (t0 % px) * p;
        for (int ci = 0; ci < c; ++ci)
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    out.at4(0, ci, by + dy, bx + dx) = tks.at2(t0, (ci * p + dy) * p + dx);
    }
    if (detail::traced(tape, {&tks})) {
        const int tn = tks.node;
        out.node = tape->record(out.shape, {tn},
                                [tn, c, h, w, p, px, n, d](Tape<S>& t, const Tensor<S>& g) {
                                    std::vector<S> dt(static_cast<std::size_t>(n) * d);
                                    for (int t0 = 0; t0 < n; ++t0) {
                                        const int by = (t0 / px) * p, bx = (t0 % px) * p;
                                        for (int ci = 0; ci < c; ++ci)
                                            for (int dy = 0; dy < p; ++dy)
                                                for (int dxx = 0; dxx < p; ++dxx)
                                                    dt[static_cast<std::size_t>(t0) * d +
                                                       (ci * p + dy) * p + dxx] =
                                                        g.at4(0, ci, by + dy, bx + dxx);
                                    }
                                    t.accumulate(tn, dt);
                                },
                                "unpatchify");
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions and losses

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x, Tape<S>* tape = nullptr) {
    Tensor<S> out({1});
    S s = S(0);
    for (std::int64_t i = 0; i < x.size(); ++i) s += x[i];
    out[0] = s;
    check_finite(out, "sum_all");
    if (detail::traced(tape, {&x})) {
        const int xn = x.node;
        const std::int64_t n = x.size();
        out.node = tape->record(out.shape, {xn},
                                [xn, n](Tape<S>& t, const Tensor<S>& g) {
                                    std::vector<S> dx(static_cast<std::size_t>(n), g.data[0]);
                                    t.accumulate(xn, dx);
                                },
                                "sum_all");
    }
    return out;
}

template <typename S>
Tensor<S> mse_loss(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
    if (!a.same_shape(b))
        throw std::invalid_argument("mse_loss: shape mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    const std::int64_t n = a.size();
    Tensor<S> out({1});
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    out[0] = static_cast<S>(acc / static_cast<double>(n));
    check_finite(out, "mse_loss");
    if (detail::traced(tape, {&a, &b})) {
        const int an = a.node, bn = b.node;
        std::vector<S> av = a.data, bv = b.data;
        out.node = tape->record(out.shape, {an, bn},
                                [an, bn, av, bv, n](Tape<S>& t, const Tensor<S>& g) {
                                    const S scale = g.data[0] * S(2) / static_cast<S>(n);
                                    std::vector<S> d(static_cast<std::size_t>(n));
                                    for (std::int64_t i = 0; i < n; ++i)
                                        d[static_cast<std::size_t>(i)] =
                                            scale * (av[static_cast<std::size_t>(i)] -
                                                     bv[static_cast<std::size_t>(i)]);
                                    t.accumulate(an, d);
                                    if (bn >= 0) {
                                        for (auto& v : d) v = -v;
                                        t.accumulate(bn, d);
                                    }
                                },
                                "mse_loss");
    }
    return out;
}

// ---------------------------------------------------------------------------
// domain-specific ops

// Weight-normalized scaled projection, applied independently at each spatial
// location with an augmented input [f;1]:
//   out[i] = gamma[i] * (W_i / ||W_i||_2) . [f;1]
// w: [c x (c_pre+1)], gamma: [c], f: [b x c_pre x h x w] -> [b x c x h x w].
template <typename S>
Tensor<S> scaled_projection(const Tensor<S>& w, const Tensor<S>& gamma, const Tensor<S>& f,
                            Tape<S>* tape = nullptr) {
    if (w.rank() != 2 || gamma.rank() != 1 || f.rank() != 4)
        throw std::invalid_argument("scaled_projection: want w[c,cpre+1], gamma[c], f[b,cpre,h,w]");
    const int c = w.dim(0), aug = w.dim(1);
    const int b = f.dim(0), cpre = f.dim(1), h = f.dim(2), wd = f.dim(3);
    if (aug != cpre + 1)
        throw std::invalid_argument("scaled_projection: w columns must equal f channels + 1");
    if (gamma.dim(0) != c)
        throw std::invalid_argument("scaled_projection: gamma length must equal w rows");

    // unit rows of the augmented weight matrix
    std::vector<S> norms(static_cast<std::size_t>(c));
    std::vector<S> unit(w.data.size());
    for (int i = 0; i < c; ++i) {
        double n2 = 0.0;
        for (int j = 0; j < aug; ++j) {
            const double v = w.at2(i, j);
            n2 += v * v;
        }
        const double nrm = std::sqrt(n2);
        if (nrm == 0.0)
            throw std::invalid_argument("scaled_projection: zero-norm weight row " +
                                        std::to_string(i));
        norms[static_cast<std::size_t>(i)] = static_cast<S>(nrm);
        for (int j = 0; j < aug; ++j)
            unit[static_cast<std::size_t>(i) * aug + j] = static_cast<S>(w.at2(i, j) / nrm);
    }

    const std::int64_t loc = static_cast<std::int64_t>(h) * wd;
    Tensor<S> out({b, c, h, wd});
    // out[b,i,l] = gamma[i] * (sum_j unit[i,j] * f[b,j,l] + unit[i,cpre])
    for (int bi = 0; bi < b; ++bi) {
        auto fmat = mat_view(f.data.data() + static_cast<std::size_t>(bi) * cpre * loc, cpre, loc);
        auto omat = mat_view(out.data.data() + static_cast<std::size_t>(bi) * c * loc, c, loc);
        omat.noalias() =
            Eigen::Map<const RowMat<S>, 0, Eigen::OuterStride<>>(unit.data(), c, cpre,
                                                                 Eigen::OuterStride<>(aug)) *
            fmat;
        for (int i = 0; i < c; ++i) {
            const S gi = gamma[static_cast<std::int64_t>(i)];
            const S bias = unit[static_cast<std::size_t>(i) * aug + cpre];
            omat.row(i) = (omat.row(i).array() + bias) * gi;
        }
    }
    check_finite(out, "scaled_projection");

    if (detail::traced(tape, {&w, &gamma, &f})) {
        const int wn = w.node, gn = gamma.node, fn = f.node;
        std::vector<S> wv = w.data, gv = gamma.data, fv = f.data;
        out.node = tape->record(
            out.shape, {wn, gn, fn},
            [=](Tape<S>& t, const Tensor<S>& g) {
                // a[i,l] = unit_i . [f_l;1]
                std::vector<S> dw, dgamma, df;
                if (wn >= 0) dw.assign(wv.size(), S(0));
                if (gn >= 0) dgamma.assign(static_cast<std::size_t>(c), S(0));
                if (fn >= 0) df.assign(fv.size(), S(0));
                std::vector<S> a(static_cast<std::size_t>(loc));
                for (int bi = 0; bi < b; ++bi) {
                    const S* fb = fv.data() + static_cast<std::size_t>(bi) * cpre * loc;
                    const S* gb = g.data.data() + static_cast<std::size_t>(bi) * c * loc;
                    for (int i = 0; i < c; ++i) {
                        const S* ui = unit.data() + static_cast<std::size_t>(i) * aug;
                        const S gi = gv[static_cast<std::size_t>(i)];
                        const S* gri = gb + static_cast<std::size_t>(i) * loc;
                        for (std::int64_t l = 0; l < loc; ++l) {
                            S s = ui[cpre];
                            for (int j = 0; j < cpre; ++j)
                                s += ui[j] * fb[static_cast<std::size_t>(j) * loc + l];
                            a[static_cast<std::size_t>(l)] = s;
                        }
                        if (gn >= 0) {
                            S acc = S(0);
                            for (std::int64_t l = 0; l < loc; ++l)
                                acc += gri[l] * a[static_cast<std::size_t>(l)];
                            dgamma[static_cast<std::size_t>(i)] += acc;
                        }
                        if (fn >= 0) {
                            S* dfb = df.data() + static_cast<std::size_t>(bi) * cpre * loc;
                            for (int j = 0; j < cpre; ++j) {
                                const S coef = gi * ui[j];
                                S* drow = dfb + static_cast<std::size_t>(j) * loc;
                                for (std::int64_t l = 0; l < loc; ++l) drow[l] += coef * gri[l];
                            }
                        }
                        if (wn >= 0) {
                            // dW_i = (gamma_i / n_i) * sum_l g[i,l] * ([f_l;1] - a_l * u_i)
                            const S inv_n = gi / norms[static_cast<std::size_t>(i)];
                            S* dwi = dw.data() + static_cast<std::size_t>(i) * aug;
                            S sum_g = S(0), sum_ga = S(0);
                            for (std::int64_t l = 0; l < loc; ++l) {
                                sum_g += gri[l];
                                sum_ga += gri[l] * a[static_cast<std::size_t>(l)];
                            }
                            for (int j = 0; j < cpre; ++j) {
                                S acc = S(0);
                                const S* frow = fb + static_cast<std::size_t>(j) * loc;
                                for (std::int64_t l = 0; l < loc; ++l) acc += gri[l] * frow[l];
                                dwi[j] += inv_n * (acc - sum_ga * ui[j]);
                            }
                            dwi[cpre] += inv_n * (sum_g - sum_ga * ui[cpre]);
                        }
                    }
                }
                if (wn >= 0) t.accumulate(wn, dw);
                if (gn >= 0) t.accumulate(gn, dgamma);
                if (fn >= 0) t.accumulate(fn, df);
            },
            "scaled_projection");
    }
    return out;
}

// Per-location channel mixing with a fixed (non-learnable) matrix:
// out[b,i,:,:] = sum_j m[i,j] * x[b,j,:,:]. No gradient flows to m.
template <typename S>
Tensor<S> channel_mix(const Tensor<S>& x, const Tensor<S>& m, Tape<S>* tape = nullptr) {
    if (x.rank() != 4 || m.rank() != 2 || m.dim(0) != m.dim(1))
        throw std::invalid_argument("channel_mix: want x[b,c,h,w] and square m[c,c]");
    if (m.dim(0) != x.dim(1))
        throw std::invalid_argument("channel_mix: mixing size " + shape_str(m.shape) +
                                    " does not match channels of " + shape_str(x.shape));
    if (m.node >= 0)
        throw std::invalid_argument("channel_mix: mixing matrix must not be a traced tensor");
    const int b = x.dim(0), c = x.dim(1);
    const std::int64_t loc = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    Tensor<S> out(x.shape);
    for (int bi = 0; bi < b; ++bi)
        mat_view(out.data.data() + static_cast<std::size_t>(bi) * c * loc, c, loc).noalias() =
            mat_view(m.data.data(), c, c) *
            mat_view(x.data.data() + static_cast<std::size_t>(bi) * c * loc, c, loc);
    check_finite(out, "channel_mix");
    if (detail::traced(tape, {&x})) {
        const int xn = x.node;
        std::vector<S> mv = m.data;
        out.node = tape->record(out.shape, {xn},
                                [xn, mv, b, c, loc](Tape<S>& t, const Tensor<S>& g) {
                                    std::vector<S> dx(g.data.size());
                                    for (int bi = 0; bi < b; ++bi)
                                        mat_view(dx.data() + static_cast<std::size_t>(bi) * c * loc,
                                                 c, loc)
                                            .noalias() =
                                            mat_view(mv.data(), c, c).transpose() *
                                            mat_view(g.data.data() +
                                                         static_cast<std::size_t>(bi) * c * loc,
                                                     c, loc);
                                    t.accumulate(xn, dx);
                                },
                                "channel_mix");
    }
    return out;
}

// Training-mode quantization surrogate: adds U(-0.5, 0.5)/scale noise.
// The noise is a constant w.r.t. the input, so the gradient is the identity.
template <typename S>
Tensor<S> quantize_train_noise(const Tensor<S>& x, double scale, Rng& rng,
                               Tape<S>* tape = nullptr) {
    if (scale <= 0.0) throw std::invalid_argument("quantize_train_noise: scale must be positive");
    Tensor<S> out(x.shape);
    for (std::int64_t i = 0; i < x.size(); ++i)
        out[i] = x[i] + static_cast<S>((rng.unit() - 0.5) / scale);
    check_finite(out, "quantize_train_noise");
    if (detail::traced(tape, {&x})) {
        const int xn = x.node;
        out.node = tape->record(out.shape, {xn},
                                [xn](Tape<S>& t, const Tensor<S>& g) { t.accumulate(xn, g.data); },
                                "quantize_train_noise");
    }
    return out;
}

// ---------------------------------------------------------------------------
// gradient checking (use S = double)

// Compares tape gradients of a scalar-valued function against central finite
// differences. `f` must be a pure function of the tensors in `inputs` (it is
// re-evaluated many times). Returns the max relative error, with the
// difference measured against max(|analytic|, |numeric|, 1). When
// `per_tensor_samples` > 0, only that many evenly spaced elements of each
// input are probed (for compositions too large to probe exhaustively).
template <typename S>
double grad_check(const std::function<Tensor<S>(Tape<S>*)>& f, std::vector<Tensor<S>*> inputs,
                  double h = 1e-4, std::int64_t per_tensor_samples = -1) {
    Tape<S> tape;
    for (auto* t : inputs) tape.watch(*t);
    Tensor<S> loss = f(&tape);
    if (loss.size() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
    tape.backward(loss);
    std::vector<Tensor<S>> analytic;
    analytic.reserve(inputs.size());
    for (auto* t : inputs) analytic.push_back(tape.grad(*t));
    for (auto* t : inputs) t->node = -1;

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
        Tensor<S>& t = *inputs[pi];
        const std::int64_t n = t.size();
        const std::int64_t step =
            per_tensor_samples > 0 && per_tensor_samples < n
                ? (n + per_tensor_samples - 1) / per_tensor_samples
                : 1;
        for (std::int64_t i = 0; i < n; i += step) {
            const S saved = t[i];
            t[i] = saved + static_cast<S>(h);
            const double fp = static_cast<double>(f(nullptr)[0]);
            t[i] = saved - static_cast<S>(h);
            const double fm = static_cast<double>(f(nullptr)[0]);
            t[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = static_cast<double>(analytic[pi][i]);
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace semeq
