#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "simpc/error.hpp"
#include "simpc/geometry.hpp"

namespace simpc::ad {

// ---------------------------------------------------------------------------
// Dense row-major tensor of 64-bit reals, up to 3 dimensions.
// ---------------------------------------------------------------------------
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
        v.assign(count(shape), fill);
    }
    Tensor(std::vector<int> s, std::vector<double> values) : shape(std::move(s)), v(std::move(values)) {
        if (v.size() != count(shape)) throw ParamError("tensor: values do not match shape");
    }

    static size_t count(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw ParamError("tensor: non-positive dimension");
            n *= static_cast<size_t>(d);
        }
        return n;
    }
    static Tensor scalar(double x) { return Tensor({1}, {x}); }
    static Tensor from_points(const std::vector<Vec3>& pts) {
        Tensor t({static_cast<int>(pts.size()), 3});
        for (size_t i = 0; i < pts.size(); ++i)
            for (int a = 0; a < 3; ++a) t.v[i * 3 + a] = pts[i][a];
        return t;
    }
    std::vector<Vec3> to_points() const {
        if (ndim() != 2 || shape[1] != 3) throw ParamError("tensor: not an N x 3 tensor");
        std::vector<Vec3> pts(shape[0]);
        for (int i = 0; i < shape[0]; ++i) pts[i] = {v[i * 3], v[i * 3 + 1], v[i * 3 + 2]};
        return pts;
    }

    int ndim() const { return static_cast<int>(shape.size()); }
    size_t numel() const { return v.size(); }
    int last() const { return shape.back(); }
    // all leading dimensions collapsed; ops that are row-wise use this view
    size_t rows() const { return numel() / static_cast<size_t>(last()); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline void check_finite(const Tensor& t, const char* op) {
    for (double x : t.v)
        if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by op '") + op + "'");
}

// --------------------------- dense kernels ---------------------------------
// Loop nests are arranged so the innermost index has unit stride and every
// output element accumulates in a fixed sequential order.
namespace kern {

// out[r][o] += sum_i x[r][i] * w[i][o]
inline void matmul_acc(double* out, const double* x, const double* w, size_t R, size_t I, size_t O) {
    for (size_t r = 0; r < R; ++r) {
        const double* xr = x + r * I;
        double* or_ = out + r * O;
        for (size_t i = 0; i < I; ++i) {
            const double a = xr[i];
            const double* wi = w + i * O;
            for (size_t o = 0; o < O; ++o) or_[o] += a * wi[o];
        }
    }
}

// dW[i][o] += sum_r x[r][i] * g[r][o]
inline void outer_acc(double* dw, const double* x, const double* g, size_t R, size_t I, size_t O) {
    for (size_t r = 0; r < R; ++r) {
        const double* xr = x + r * I;
        const double* gr = g + r * O;
        for (size_t i = 0; i < I; ++i) {
            const double a = xr[i];
            double* dwi = dw + i * O;
            for (size_t o = 0; o < O; ++o) dwi[o] += a * gr[o];
        }
    }
}

// dX[r][i] += sum_o g[r][o] * w[i][o], using a transposed copy of w
inline void matmul_wt_acc(double* dx, const double* g, const double* w, size_t R, size_t I, size_t O) {
    std::vector<double> wt(I * O);
    for (size_t i = 0; i < I; ++i)
        for (size_t o = 0; o < O; ++o) wt[o * I + i] = w[i * O + o];
    for (size_t r = 0; r < R; ++r) {
        const double* gr = g + r * O;
        double* dxr = dx + r * I;
        for (size_t o = 0; o < O; ++o) {
            const double a = gr[o];
            const double* wo = wt.data() + o * I;
            for (size_t i = 0; i < I; ++i) dxr[i] += a * wo[i];
        }
    }
}

} // namespace kern

// ---------------------------------------------------------------------------
// Reverse-mode tape. Forward is eager: each op computes its value when built
// and stores a closure that scatters the output gradient into its parents.
// Nodes are appended in topological order; backward is one reverse sweep.
// ---------------------------------------------------------------------------
class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& val() const;
};

class Tape {
public:
    struct Node {
        Tensor val;
        std::vector<double> grad;  // empty until touched by backward
        bool requires_grad = false;
        std::function<void(Tape&, int)> back;  // (tape, own id)
    };

    Var leaf(Tensor t, bool requires_grad = true) {
        Node nd;
        nd.val = std::move(t);
        nd.requires_grad = requires_grad;
        nodes.push_back(std::move(nd));
        return {this, static_cast<int>(nodes.size()) - 1};
    }
    Var constant(Tensor t) { return leaf(std::move(t), false); }

    Var push(Tensor val, const char* op, std::initializer_list<Var> parents,
             std::function<void(Tape&, int)> back) {
        check_finite(val, op);
        Node nd;
        nd.val = std::move(val);
        for (const Var& p : parents) {
            if (p.tape != this) throw ParamError(std::string(op) + ": input from a different tape");
            if (nodes[p.id].requires_grad) nd.requires_grad = true;
        }
        if (nd.requires_grad) nd.back = std::move(back);
        nodes.push_back(std::move(nd));
        return {this, static_cast<int>(nodes.size()) - 1};
    }

    const Tensor& val(int id) const { return nodes[id].val; }

    // materializes a zero gradient buffer on first touch
    std::vector<double>& grad(int id) {
        Node& nd = nodes[id];
        if (nd.grad.empty()) nd.grad.assign(nd.val.numel(), 0.0);
        return nd.grad;
    }
    bool has_grad(int id) const { return !nodes[id].grad.empty(); }

    void backward(const Var& loss) {
        if (loss.tape != this) throw ParamError("backward: loss lives on a different tape");
        if (backward_done_) throw StateError("backward: tape already swept; rebuild the forward pass first");
        if (nodes[loss.id].val.numel() != 1) throw ParamError("backward: loss is not scalar");
        if (!std::isfinite(nodes[loss.id].val.v[0])) throw NumericError("backward: loss is not finite");
        backward_done_ = true;
        grad(loss.id)[0] = 1.0;
        for (int i = loss.id; i >= 0; --i) {
            Node& nd = nodes[i];
            if (!nd.requires_grad || nd.grad.empty() || !nd.back) continue;
            nd.back(*this, i);
        }
    }

    bool backward_done() const { return backward_done_; }
    size_t size() const { return nodes.size(); }

    std::vector<Node> nodes;

private:
    bool backward_done_ = false;
};

inline const Tensor& Var::val() const { return tape->val(id); }

// ------------------------------- ops ---------------------------------------

// row-wise x*W + b; x may carry extra leading dims, flattened into rows
inline Var affine(Var x, Var w, Var b) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    const Tensor& bv = b.val();
    if (wv.ndim() != 2 || bv.ndim() != 1) throw ParamError("affine: W must be 2-d and b 1-d");
    const int in = wv.shape[0], out = wv.shape[1];
    if (xv.last() != in || bv.shape[0] != out) throw ParamError("affine: shape mismatch");
    const size_t rows = xv.rows();

    std::vector<int> oshape = xv.shape;
    oshape.back() = out;
    Tensor res(oshape);
    for (size_t r = 0; r < rows; ++r)
        std::copy(bv.v.begin(), bv.v.end(), res.v.begin() + r * out);
    kern::matmul_acc(res.v.data(), xv.v.data(), wv.v.data(), rows, in, out);

    return x.tape->push(std::move(res), "affine", {x, w, b}, [x, w, b, rows, in, out](Tape& t, int self) {
        const std::vector<double>& g = t.nodes[self].grad;
        if (t.nodes[x.id].requires_grad)
            kern::matmul_wt_acc(t.grad(x.id).data(), g.data(), t.val(w.id).v.data(), rows, in, out);
        if (t.nodes[w.id].requires_grad)
            kern::outer_acc(t.grad(w.id).data(), t.val(x.id).v.data(), g.data(), rows, in, out);
        if (t.nodes[b.id].requires_grad) {
            double* db = t.grad(b.id).data();
            for (size_t r = 0; r < rows; ++r)
                for (int o = 0; o < out; ++o) db[o] += g[r * out + o];
        }
    });
}

inline Var relu(Var x) {
    Tensor res = x.val();
    for (double& a : res.v) a = a > 0.0 ? a : 0.0;
    return x.tape->push(std::move(res), "relu", {x}, [x](Tape& t, int self) {
        const auto& g = t.nodes[self].grad;
        const auto& xv = t.val(x.id).v;
        auto& dx = t.grad(x.id);
        for (size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) dx[i] += g[i];
    });
}

inline Var tanh_op(Var x) {
    Tensor res = x.val();
    for (double& a : res.v) a = std::tanh(a);
    return x.tape->push(std::move(res), "tanh", {x}, [x](Tape& t, int self) {
        const auto& g = t.nodes[self].grad;
        const auto& yv = t.nodes[self].val.v;
        auto& dx = t.grad(x.id);
        for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (1.0 - yv[i] * yv[i]);
    });
}

inline Var pointwise(Var x, const std::string& kind) {
    if (kind == "relu") return relu(x);
    if (kind == "tanh") return tanh_op(x);
    throw ParamError("pointwise: unknown kind '" + kind + "'");
}

inline Var scale(Var x, double c) {
    Tensor res = x.val();
    for (double& a : res.v) a *= c;
    return x.tape->push(std::move(res), "scale", {x}, [x, c](Tape& t, int self) {
        const auto& g = t.nodes[self].grad;
        auto& dx = t.grad(x.id);
        for (size_t i = 0; i < g.size(); ++i) dx[i] += c * g[i];
    });
}

namespace detail {
inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) throw ParamError(std::string(op) + ": shape mismatch");
}
} // namespace detail

inline Var add(Var x, Var y) {
    detail::require_same_shape(x.val(), y.val(), "add");
    Tensor res = x.val();
    const auto& yv = y.val().v;
    for (size_t i = 0; i < res.v.size(); ++i) res.v[i] += yv[i];
    return x.tape->push(std::move(res), "add", {x, y}, [x, y](Tape& t, int self) {
        const auto& g = t.nodes[self].grad;
        if (t.nodes[x.id].requires_grad) {
            auto& dx = t.grad(x.id);
            for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        }
        if (t.nodes[y.id].requires_grad) {
            auto& dy = t.grad(y.id);
            for (size_t i = 0; i < g.size(); ++i) dy[i] += g[i];
        }
    });
}

inline Var sub(Var x, Var y) {
    detail::require_same_shape(x.val(), y.val(), "sub");
    Tensor res = x.val();
    const auto& yv = y.val().v;
    for (size_t i = 0; i < res.v.size(); ++i) res.v[i] -= yv[i];
    return x.tape->push(std::move(res), "sub", {x, y}, [x, y](Tape& t, int self) {
        const auto& g = t.nodes[self].grad;
        if (t.nodes[x.id].requires_grad) {
            auto& dx = t.grad(x.id);
            for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        }
        if (t.nodes[y.id].requires_grad) {
            auto& dy = t.grad(y.id);
            for (size_t i = 0; i < g.size(); ++i) dy[i] -= g[i];
        }
    });
}

// x + c*y
inline Var add_scaled(Var x, Var y, double c) {
    detail::require_same_shape(x.val(), y.val(), "add_scaled");
    Tensor res = x.val();
    const auto& yv = y.val().v;
    for (size_t i = 0; i < res.v.size(); ++i) res.v[i] += c * yv[i];
    return x.tape->push(std::move(res), "add_scaled", {x, y}, [x, y, c](Tape& t, int self) {
        const auto& g = t.nodes[self].grad;
        if (t.nodes[x.id].requires_grad) {
            auto& dx = t.grad(x.id);
            for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        }
        if (t.nodes[y.id].requires_grad) {
            auto& dy = t.grad(y.id);
            for (size_t i = 0; i < g.size(); ++i) dy[i] += c * g[i];
        }
    });
}

// 2*xhat - x: the reflection of x through xhat. For the w2 = 2*w1 mirror this
// form keeps the midpoint identity (x + out)/2 == xhat within 1 ulp.
inline Var reflect(Var xhat, Var x) {
    detail::require_same_shape(xhat.val(), x.val(), "reflect");
    Tensor res = xhat.val();
    const auto& xv = x.val().v;
    for (size_t i = 0; i < res.v.size(); ++i) res.v[i] = 2.0 * res.v[i] - xv[i];
    return xhat.tape->push(std::move(res), "reflect", {xhat, x}, [xhat, x](Tape& t, int self) {
        const auto& g = t.nodes[self].grad;
        if (t.nodes[xhat.id].requires_grad) {
            auto& da = t.grad(xhat.id);
            for (size_t i = 0; i < g.size(); ++i) da[i] += 2.0 * g[i];
        }
        if (t.nodes[x.id].requires_grad) {
            auto& dx = t.grad(x.id);
            for (size_t i = 0; i < g.size(); ++i) dx[i] -= g[i];
        }
    });
}

inline Var mul(Var x, Var y) {
    detail::require_same_shape(x.val(), y.val(), "mul");
    Tensor res = x.val();
    const auto& yv = y.val().v;
    for (size_t i = 0; i < res.v.size(); ++i) res.v[i] *= yv[i];
    return x.tape->push(std::move(res), "mul", {x, y}, [x, y](Tape& t, int self) {
        const auto& g = t.nodes[self].grad;
        const auto& xv = t.val(x.id).v;
        const auto& yv2 = t.val(y.id).v;
        if (t.nodes[x.id].requires_grad) {
            auto& dx = t.grad(x.id);
            for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * yv2[i];
        }
        if (t.nodes[y.id].requires_grad) {
            auto& dy = t.grad(y.id);
            for (size_t i = 0; i < g.size(); ++i) dy[i] += g[i] * xv[i];
        }
    });
}

// out[i][j] = x[idx[i][j]]; the index table carries no gradient
inline Var gather_rows(Var x, const NeighborIndex& idx) {
    const Tensor& xv = x.val();
    if (xv.ndim() != 2) throw ParamError("gather_rows: input must be 2-d");
    const int n = xv.shape[0], c = xv.shape[1];
    for (int32_t i : idx.idx)
        if (i < 0 || i >= n) throw ParamError("gather_rows: index out of range");
    Tensor res({static_cast<int>(idx.n), static_cast<int>(idx.k), c});
    for (size_t i = 0; i < idx.n; ++i)
        for (size_t j = 0; j < idx.k; ++j) {
            const double* src = xv.v.data() + static_cast<size_t>(idx.at(i, j)) * c;
            std::copy(src, src + c, res.v.data() + (i * idx.k + j) * c);
        }
    return x.tape->push(std::move(res), "gather_rows", {x}, [x, idx, c](Tape& t, int self) {
        const auto& g = t.nodes[self].grad;
        auto& dx = t.grad(x.id);
        for (size_t i = 0; i < idx.n; ++i)
            for (size_t j = 0; j < idx.k; ++j) {
                double* dst = dx.data() + static_cast<size_t>(idx.at(i, j)) * c;
                const double* src = g.data() + (i * idx.k + j) * c;
                for (int a = 0; a < c; ++a) dst[a] += src[a];
            }
    });
}

// out[i][j] = x[i] for j in [0, k): the broadcast partner of gather_rows
inline Var expand_neighbors(Var x, int k) {
    const Tensor& xv = x.val();
    if (xv.ndim() != 2 || k <= 0) throw ParamError("expand_neighbors: bad arguments");
    const int n = xv.shape[0], c = xv.shape[1];
    Tensor res({n, k, c});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            std::copy(xv.v.begin() + i * c, xv.v.begin() + (i + 1) * c,
                      res.v.begin() + (static_cast<size_t>(i) * k + j) * c);
    return x.tape->push(std::move(res), "expand_neighbors", {x}, [x, n, k, c](Tape& t, int self) {
        const auto& g = t.nodes[self].grad;
        auto& dx = t.grad(x.id);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j) {
                const double* src = g.data() + (static_cast<size_t>(i) * k + j) * c;
                double* dst = dx.data() + static_cast<size_t>(i) * c;
                for (int a = 0; a < c; ++a) dst[a] += src[a];
            }
    });
}

inline Var concat_last(const std::vector<Var>& xs) {
    if (xs.empty()) throw ParamError("concat_last: no inputs");
    const Tensor& first = xs[0].val();
    std::vector<int> lead(first.shape.begin(), first.shape.end() - 1);
    int total = 0;
    for (const Var& x : xs) {
        const Tensor& tv = x.val();
        std::vector<int> l(tv.shape.begin(), tv.shape.end() - 1);
        if (l != lead) throw ParamError("concat_last: leading dimensions disagree");
        total += tv.last();
    }
    std::vector<int> oshape = lead;
    oshape.push_back(total);
    Tensor res(oshape);
    const size_t rows = res.rows();
    size_t off = 0;
    for (const Var& x : xs) {
        const Tensor& tv = x.val();
        const int c = tv.last();
        for (size_t r = 0; r < rows; ++r)
            std::copy(tv.v.begin() + r * c, tv.v.begin() + (r + 1) * c,
                      res.v.begin() + r * total + off);
        off += c;
    }
    std::vector<Var> parents = xs;
    Tape* tape = xs[0].tape;
    Tensor moved = std::move(res);
    // push() takes an initializer_list; build the node manually for variadic parents
    check_finite(moved, "concat_last");
    Tape::Node nd;
    nd.val = std::move(moved);
    for (const Var& p : parents) {
        if (p.tape != tape) throw ParamError("concat_last: input from a different tape");
        if (tape->nodes[p.id].requires_grad) nd.requires_grad = true;
    }
    if (nd.requires_grad)
        nd.back = [parents, rows, total](Tape& t, int self) {
            const auto& g = t.nodes[self].grad;
            size_t off2 = 0;
            for (const Var& p : parents) {
                const int c = t.val(p.id).last();
                if (t.nodes[p.id].requires_grad) {
                    auto& dp = t.grad(p.id);
                    for (size_t r = 0; r < rows; ++r) {
                        const double* src = g.data() + r * total + off2;
                        double* dst = dp.data() + r * c;
                        for (int a = 0; a < c; ++a) dst[a] += src[a];
                    }
                }
                off2 += c;
            }
        };
    tape->nodes.push_back(std::move(nd));
    return {tape, static_cast<int>(tape->size()) - 1};
}

// data-preserving shape change
inline Var reshape(Var x, std::vector<int> new_shape) {
    if (Tensor::count(new_shape) != x.val().numel()) throw ParamError("reshape: element count mismatch");
    Tensor res(std::move(new_shape), x.val().v);
    return x.tape->push(std::move(res), "reshape", {x}, [x](Tape& t, int self) {
        const auto& g = t.nodes[self].grad;
        auto& dx = t.grad(x.id);
        for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
}

// softmax along the middle (neighbor) axis of an N x k x C tensor, with
// max-subtraction; every (i, c) column sums to one
inline Var softmax_neighbors(Var x) {
    const Tensor& xv = x.val();
    if (xv.ndim() != 3) throw ParamError("softmax_neighbors: input must be N x k x C");
    const int n = xv.shape[0], k = xv.shape[1], c = xv.shape[2];
    Tensor res = xv;
    for (int i = 0; i < n; ++i) {
        double* blk = res.v.data() + static_cast<size_t>(i) * k * c;
        for (int a = 0; a < c; ++a) {
            double mx = blk[a];
            for (int j = 1; j < k; ++j) mx = std::max(mx, blk[j * c + a]);
            double sum = 0.0;
            for (int j = 0; j < k; ++j) {
                double e = std::exp(blk[j * c + a] - mx);
                blk[j * c + a] = e;
                sum += e;
            }
            double inv = 1.0 / sum;
            for (int j = 0; j < k; ++j) blk[j * c + a] *= inv;
        }
    }
    return x.tape->push(std::move(res), "softmax_neighbors", {x}, [x, n, k, c](Tape& t, int self) {
        const auto& g = t.nodes[self].grad;
        const auto& yv = t.nodes[self].val.v;
        auto& dx = t.grad(x.id);
        for (int i = 0; i < n; ++i) {
            const size_t base = static_cast<size_t>(i) * k * c;
            for (int a = 0; a < c; ++a) {
                double dotga = 0.0;
                for (int j = 0; j < k; ++j) dotga += g[base + j * c + a] * yv[base + j * c + a];
                for (int j = 0; j < k; ++j)
                    dx[base + j * c + a] += yv[base + j * c + a] * (g[base + j * c + a] - dotga);
            }
        }
    });
}

enum class Reduce { sum, mean };

// reduce one axis of a tensor with ndim <= 3
inline Var reduce(Var x, Reduce kind, int axis) {
    const Tensor& xv = x.val();
    if (axis < 0 || axis >= xv.ndim()) throw ParamError("reduce: axis out of range");
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= xv.shape[i];
    for (int i = axis + 1; i < xv.ndim(); ++i) inner *= xv.shape[i];
    const size_t mid = xv.shape[axis];
    std::vector<int> oshape;
    for (int i = 0; i < xv.ndim(); ++i)
        if (i != axis) oshape.push_back(xv.shape[i]);
    if (oshape.empty()) oshape.push_back(1);

    const double w = kind == Reduce::mean ? 1.0 / static_cast<double>(mid) : 1.0;
    Tensor res(oshape);
    for (size_t o = 0; o < outer; ++o)
        for (size_t m = 0; m < mid; ++m) {
            const double* src = xv.v.data() + (o * mid + m) * inner;
            double* dst = res.v.data() + o * inner;
            for (size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    if (kind == Reduce::mean)
        for (double& a : res.v) a *= w;

    return x.tape->push(std::move(res), "reduce", {x}, [x, outer, mid, inner, w](Tape& t, int self) {
        const auto& g = t.nodes[self].grad;
        auto& dx = t.grad(x.id);
        for (size_t o = 0; o < outer; ++o)
            for (size_t m = 0; m < mid; ++m) {
                double* dst = dx.data() + (o * mid + m) * inner;
                const double* src = g.data() + o * inner;
                for (size_t i = 0; i < inner; ++i) dst[i] += w * src[i];
            }
    });
}

// scalar sum or mean of all elements
inline Var reduce_all(Var x, Reduce kind) {
    const Tensor& xv = x.val();
    double s = 0.0;
    for (double a : xv.v) s += a;
    const double w = kind == Reduce::mean ? 1.0 / static_cast<double>(xv.numel()) : 1.0;
    return x.tape->push(Tensor::scalar(s * w), "reduce_all", {x}, [x, w](Tape& t, int self) {
        const double g = t.nodes[self].grad[0] * w;
        auto& dx = t.grad(x.id);
        for (double& a : dx) a += g;
    });
}

// mean over all elements of (a-b)^2
inline Var mse(Var a, Var b) {
    detail::require_same_shape(a.val(), b.val(), "mse");
    const auto& av = a.val().v;
    const auto& bv = b.val().v;
    double s = 0.0;
    for (size_t i = 0; i < av.size(); ++i) {
        double d = av[i] - bv[i];
        s += d * d;
    }
    const double inv = 1.0 / static_cast<double>(av.size());
    return a.tape->push(Tensor::scalar(s * inv), "mse", {a, b}, [a, b, inv](Tape& t, int self) {
        const double g = t.nodes[self].grad[0];
        const auto& av2 = t.val(a.id).v;
        const auto& bv2 = t.val(b.id).v;
        if (t.nodes[a.id].requires_grad) {
            auto& da = t.grad(a.id);
            for (size_t i = 0; i < av2.size(); ++i) da[i] += g * 2.0 * inv * (av2[i] - bv2[i]);
        }
        if (t.nodes[b.id].requires_grad) {
            auto& db = t.grad(b.id);
            for (size_t i = 0; i < av2.size(); ++i) db[i] -= g * 2.0 * inv * (av2[i] - bv2[i]);
        }
    });
}

// sum over all elements of x^2
inline Var sum_squares(Var x) {
    const auto& xv = x.val().v;
    double s = 0.0;
    for (double a : xv) s += a * a;
    return x.tape->push(Tensor::scalar(s), "sum_squares", {x}, [x](Tape& t, int self) {
        const double g = t.nodes[self].grad[0];
        const auto& xv2 = t.val(x.id).v;
        auto& dx = t.grad(x.id);
        for (size_t i = 0; i < xv2.size(); ++i) dx[i] += g * 2.0 * xv2[i];
    });
}

// ------------------------------- Adam --------------------------------------

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::vector<std::vector<double>> m, v;

    void init(const std::vector<Tensor*>& params) {
        m.clear();
        v.clear();
        for (const Tensor* p : params) {
            m.emplace_back(p->numel(), 0.0);
            v.emplace_back(p->numel(), 0.0);
        }
        step = 0;
    }
};

inline void adam_step(const std::vector<Tensor*>& params,
                      const std::vector<std::vector<double>>& grads, AdamState& st) {
    if (st.m.size() != params.size()) throw ParamError("adam_step: state not initialized for these params");
    if (grads.size() != params.size()) throw ParamError("adam_step: gradient list size mismatch");
    for (const auto& g : grads)
        for (double v : g)
            if (!std::isfinite(v)) throw NumericError("adam_step: non-finite gradient");
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& w = *params[p];
        const std::vector<double>& g = grads[p];
        if (g.size() != w.numel()) throw ParamError("adam_step: gradient shape mismatch");
        std::vector<double>& m = st.m[p];
        std::vector<double>& v = st.v[p];
        for (size_t i = 0; i < g.size(); ++i) {
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
            if (!std::isfinite(v[i])) throw NumericError("adam_step: second moment overflow");
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w.v[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
        check_finite(w, "adam_step");
    }
}

// --------------------------- gradient checking -----------------------------

struct DiffFunction {
    std::function<double(const std::vector<double>&)> value;
    std::function<std::vector<double>(const std::vector<double>&)> gradient;
};

// central differences against the reported gradient; returns the max over
// coordinates of |g_ad - g_fd| / max(1, |g_fd|)
inline double grad_check(const DiffFunction& fn, const std::vector<double>& point, double step = 1e-5) {
    std::vector<double> g_ad = fn.gradient(point);
    if (g_ad.size() != point.size()) throw ParamError("grad_check: gradient size mismatch");
    double worst = 0.0;
    std::vector<double> p = point;
    for (size_t i = 0; i < point.size(); ++i) {
        p[i] = point[i] + step;
        double fp = fn.value(p);
        p[i] = point[i] - step;
        double fm = fn.value(p);
        p[i] = point[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("grad_check: non-finite function value at perturbed point");
        double g_fd = (fp - fm) / (2.0 * step);
        double err = std::fabs(g_ad[i] - g_fd) / std::max(1.0, std::fabs(g_fd));
        worst = std::max(worst, err);
    }
    return worst;
}

} // namespace simpc::ad
