#pragma once

#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "davel/kernels.hpp"
#include "davel/tensor.hpp"

namespace davel::num {

template <typename T>
struct Val {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Append-only tape of primitive evaluations with reverse-mode gradients.
// Node creation order is a topological order, so backward is a single
// reverse sweep. Leaves may carry an external gradient sink (a parameter
// accumulator); repeated backward calls keep accumulating into it.
template <typename T>
class Tape {
  public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool grad_live = false;
        bool needs_grad = false;
        Tensor<T>* sink = nullptr;
        std::function<void(Tape&, int)> backward;
    };

    Val<T> leaf(const Tensor<T>& v, Tensor<T>* grad_sink) {
        Node n;
        n.value = v;
        n.sink = grad_sink;
        n.needs_grad = grad_sink != nullptr;
        nodes_.push_back(std::move(n));
        return {static_cast<int>(nodes_.size()) - 1};
    }

    Val<T> constant(Tensor<T> v) {
        Node n;
        n.value = std::move(v);
        nodes_.push_back(std::move(n));
        return {static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor<T>& value(Val<T> v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    const Tensor<T>& grad_of(int id) const { return nodes_[static_cast<size_t>(id)].grad; }

    // Branch tracking folds every piecewise-linear decision (ReLU signs,
    // min/max picks in custom ops) into one signature. Two evaluations of the
    // same graph land on the same smooth piece iff the signatures match; the
    // gradient checker uses this to detect kink crossings exactly.
    void enable_branch_tracking() { track_branches_ = true; }
    bool branch_tracking() const { return track_branches_; }
    uint64_t branch_signature() const { return branch_sig_; }
    void note_branch(uint64_t bits) {
        branch_sig_ ^= bits + 0x9E3779B97F4A7C15ULL + (branch_sig_ << 6) + (branch_sig_ >> 2);
    }

    // Gradient buffer of a node, or nullptr when nothing upstream needs it.
    Tensor<T>* grad_target(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad) return nullptr;
        if (!n.grad_live) {
            n.grad = Tensor<T>(n.value.shape);
            n.grad_live = true;
        }
        return &n.grad;
    }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // ---- generic hook for externally defined differentiable ops ----
    Val<T> custom(std::vector<Val<T>> inputs, Tensor<T> value,
                  std::function<void(Tape&, int)> backward_fn) {
        Node n;
        n.value = std::move(value);
        for (Val<T> in : inputs) n.needs_grad = n.needs_grad || needs(in);
        if (n.needs_grad) n.backward = std::move(backward_fn);
        nodes_.push_back(std::move(n));
        return {static_cast<int>(nodes_.size()) - 1};
    }

    // ---- elementwise ----
    Val<T> add(Val<T> a, Val<T> b) {
        const Tensor<T>&av = value(a), &bv = value(b);
        if (!av.same_shape(bv))
            throw ShapeError("add: shapes " + av.shape_string() + " vs " + bv.shape_string());
        Tensor<T> out = av;
        for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i];
        return make(std::move(out), {a, b}, [a, b](Tape& t, int self) {
            const Tensor<T>& g = t.grad_of(self);
            if (Tensor<T>* ga = t.grad_target(a.id)) add_into(*ga, g);
            if (Tensor<T>* gb = t.grad_target(b.id)) add_into(*gb, g);
        });
    }

    Val<T> sub(Val<T> a, Val<T> b) {
        const Tensor<T>&av = value(a), &bv = value(b);
        if (!av.same_shape(bv))
            throw ShapeError("sub: shapes " + av.shape_string() + " vs " + bv.shape_string());
        Tensor<T> out = av;
        for (int64_t i = 0; i < out.numel(); ++i) out.data[i] -= bv.data[i];
        return make(std::move(out), {a, b}, [a, b](Tape& t, int self) {
            const Tensor<T>& g = t.grad_of(self);
            if (Tensor<T>* ga = t.grad_target(a.id)) add_into(*ga, g);
            if (Tensor<T>* gb = t.grad_target(b.id))
                for (int64_t i = 0; i < g.numel(); ++i) gb->data[i] -= g.data[i];
        });
    }

    Val<T> mul(Val<T> a, Val<T> b) {
        const Tensor<T>&av = value(a), &bv = value(b);
        if (!av.same_shape(bv))
            throw ShapeError("mul: shapes " + av.shape_string() + " vs " + bv.shape_string());
        Tensor<T> out = av;
        for (int64_t i = 0; i < out.numel(); ++i) out.data[i] *= bv.data[i];
        return make(std::move(out), {a, b}, [a, b](Tape& t, int self) {
            const Tensor<T>& g = t.grad_of(self);
            const Tensor<T>&av2 = t.value(a), &bv2 = t.value(b);
            if (Tensor<T>* ga = t.grad_target(a.id))
                for (int64_t i = 0; i < g.numel(); ++i) ga->data[i] += g.data[i] * bv2.data[i];
            if (Tensor<T>* gb = t.grad_target(b.id))
                for (int64_t i = 0; i < g.numel(); ++i) gb->data[i] += g.data[i] * av2.data[i];
        });
    }

    Val<T> scale(Val<T> a, T c) {
        Tensor<T> out = value(a);
        for (T& v : out.data) v *= c;
        return make(std::move(out), {a}, [a, c](Tape& t, int self) {
            const Tensor<T>& g = t.grad_of(self);
            if (Tensor<T>* ga = t.grad_target(a.id))
                for (int64_t i = 0; i < g.numel(); ++i) ga->data[i] += c * g.data[i];
        });
    }

    // Broadcast a length-D vector over the trailing dimension.
    Val<T> add_bias(Val<T> x, Val<T> b) {
        const Tensor<T>&xv = value(x), &bv = value(b);
        const int64_t cols = xv.cols();
        if (bv.numel() != cols)
            throw ShapeError("add_bias: bias " + bv.shape_string() + " vs trailing dim " +
                             std::to_string(cols));
        Tensor<T> out = xv;
        const int64_t rows = xv.rows();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c) out.data[r * cols + c] += bv.data[c];
        return make(std::move(out), {x, b}, [x, b, rows, cols](Tape& t, int self) {
            const Tensor<T>& g = t.grad_of(self);
            if (Tensor<T>* gx = t.grad_target(x.id)) add_into(*gx, g);
            if (Tensor<T>* gb = t.grad_target(b.id)) {
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c) gb->data[c] += g.data[r * cols + c];
            }
        });
    }

    // ---- linear algebra ----
    Val<T> matmul(Val<T> a, Val<T> b) {
        Tensor<T> out = detail::matmul(value(a), value(b));
        return make(std::move(out), {a, b}, [a, b](Tape& t, int self) {
            const Tensor<T>& g = t.grad_of(self);
            if (Tensor<T>* ga = t.grad_target(a.id)) detail::matmul_nt_acc(g, t.value(b), *ga);
            if (Tensor<T>* gb = t.grad_target(b.id)) detail::matmul_tn_acc(t.value(a), g, *gb);
        });
    }

    // ---- activations / normalization ----
    Val<T> relu(Val<T> x) {
        if (track_branches_) {
            uint64_t h = 1469598103934665603ULL;
            for (T v : value(x).data) h = (h * 1099511628211ULL) ^ static_cast<uint64_t>(v > T(0));
            note_branch(h);
        }
        Tensor<T> out = detail::relu(value(x));
        return make(std::move(out), {x}, [x](Tape& t, int self) {
            const Tensor<T>& g = t.grad_of(self);
            const Tensor<T>& xv = t.value(x);
            if (Tensor<T>* gx = t.grad_target(x.id))
                for (int64_t i = 0; i < g.numel(); ++i)
                    if (xv.data[i] > T(0)) gx->data[i] += g.data[i];
        });
    }

    Val<T> sigmoid(Val<T> x) {
        Tensor<T> out = detail::sigmoid(value(x));
        return make(std::move(out), {x}, [x](Tape& t, int self) {
            const Tensor<T>& g = t.grad_of(self);
            const Tensor<T>& y = t.nodes_[static_cast<size_t>(self)].value;
            if (Tensor<T>* gx = t.grad_target(x.id))
                for (int64_t i = 0; i < g.numel(); ++i)
                    gx->data[i] += g.data[i] * y.data[i] * (T(1) - y.data[i]);
        });
    }

    Val<T> softmax(Val<T> x) {
        Tensor<T> out = detail::softmax(value(x));
        return make(std::move(out), {x}, [x](Tape& t, int self) {
            const Tensor<T>& g = t.grad_of(self);
            const Tensor<T>& y = t.nodes_[static_cast<size_t>(self)].value;
            Tensor<T>* gx = t.grad_target(x.id);
            if (!gx) return;
            const int64_t rows = y.rows(), cols = y.cols();
            for (int64_t r = 0; r < rows; ++r) {
                const T* yr = y.ptr() + r * cols;
                const T* gr = g.ptr() + r * cols;
                T dot = 0;
                for (int64_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
                T* gxr = gx->ptr() + r * cols;
                for (int64_t c = 0; c < cols; ++c) gxr[c] += yr[c] * (gr[c] - dot);
            }
        });
    }

    Val<T> layernorm(Val<T> x, Val<T> gamma, Val<T> beta, T eps = T(1e-5)) {
        Tensor<T> out = detail::layernorm(value(x), value(gamma), value(beta), eps);
        return make(std::move(out), {x, gamma, beta}, [x, gamma, beta, eps](Tape& t, int self) {
            const Tensor<T>& g = t.grad_of(self);
            // Recompute x-hat; values are cheap relative to storing per node.
            Tensor<T> xhat;
            std::vector<T> inv_std;
            detail::layernorm(t.value(x), t.value(gamma), t.value(beta), eps, &xhat, &inv_std);
            const int64_t rows = xhat.rows(), cols = xhat.cols();
            const Tensor<T>& gm = t.value(gamma);
            Tensor<T>* gx = t.grad_target(x.id);
            Tensor<T>* gg = t.grad_target(gamma.id);
            Tensor<T>* gb = t.grad_target(beta.id);
            for (int64_t r = 0; r < rows; ++r) {
                const T* gr = g.ptr() + r * cols;
                const T* xh = xhat.ptr() + r * cols;
                if (gg)
                    for (int64_t c = 0; c < cols; ++c) gg->data[c] += gr[c] * xh[c];
                if (gb)
                    for (int64_t c = 0; c < cols; ++c) gb->data[c] += gr[c];
                if (gx) {
                    T mean_dy = 0, mean_dyxh = 0;
                    for (int64_t c = 0; c < cols; ++c) {
                        const T dy = gr[c] * gm.data[c];
                        mean_dy += dy;
                        mean_dyxh += dy * xh[c];
                    }
                    mean_dy /= static_cast<T>(cols);
                    mean_dyxh /= static_cast<T>(cols);
                    T* gxr = gx->ptr() + r * cols;
                    const T inv = inv_std[static_cast<size_t>(r)];
                    for (int64_t c = 0; c < cols; ++c) {
                        const T dy = gr[c] * gm.data[c];
                        gxr[c] += inv * (dy - mean_dy - xh[c] * mean_dyxh);
                    }
                }
            }
        });
    }

    // ---- convolutions ----
    Val<T> conv1d(Val<T> x, Val<T> w, Val<T> b, int stride) {
        static const Tensor<T> kNoBias;
        Tensor<T> out = detail::conv1d(value(x), value(w), b.valid() ? value(b) : kNoBias, stride);
        return make(std::move(out), b.valid() ? std::vector<Val<T>>{x, w, b} : std::vector<Val<T>>{x, w},
                    [x, w, b, stride](Tape& t, int self) {
                        const Tensor<T>& g = t.grad_of(self);
                        const Tensor<T>& xv = t.value(x);
                        const Tensor<T>& wv = t.value(w);
                        const int64_t t_out = g.dim(0), cout = g.dim(1);
                        const int64_t t_in = xv.dim(0), cin = xv.dim(1), k = wv.dim(2);
                        const int pad = static_cast<int>((k - 1) / 2);
                        Tensor<T>* gx = t.grad_target(x.id);
                        Tensor<T>* gw = t.grad_target(w.id);
                        Tensor<T>* gb = b.valid() ? t.grad_target(b.id) : nullptr;
                        if (gb) {
                            for (int64_t i = 0; i < t_out; ++i) {
                                const T* grow = g.ptr() + i * cout;
                                for (int64_t o = 0; o < cout; ++o) gb->data[o] += grow[o];
                            }
                        }
                        if (stride == 1) {
                            for (int64_t kk = 0; kk < k; ++kk) {
                                const int64_t shift = kk - pad;
                                const int64_t i0 = std::max<int64_t>(0, -shift);
                                const int64_t i1 = std::min(t_out, t_in - shift);
                                if (i1 <= i0) continue;
                                if (gx) {
                                    const std::vector<T> tap_t = detail::conv_tap(wv, kk, true);
                                    detail::gemm_acc(g.ptr() + i0 * cout, i1 - i0, cout,
                                                     tap_t.data(), cin,
                                                     gx->ptr() + (i0 + shift) * cin);
                                }
                                if (gw) {
                                    std::vector<T> acc(static_cast<size_t>(cin * cout), T(0));
                                    detail::gemm_tn_acc(xv.ptr() + (i0 + shift) * cin, i1 - i0, cin,
                                                        g.ptr() + i0 * cout, cout, acc.data());
                                    for (int64_t o = 0; o < cout; ++o)
                                        for (int64_t c = 0; c < cin; ++c)
                                            gw->ptr()[(o * cin + c) * k + kk] +=
                                                acc[static_cast<size_t>(c * cout + o)];
                                }
                            }
                            return;
                        }
                        for (int64_t i = 0; i < t_out; ++i) {
                            const T* grow = g.ptr() + i * cout;
                            for (int64_t kk = 0; kk < k; ++kk) {
                                const int64_t j = i * stride + kk - pad;
                                if (j < 0 || j >= t_in) continue;
                                const T* xrow = xv.ptr() + j * cin;
                                for (int64_t o = 0; o < cout; ++o) {
                                    const T go = grow[o];
                                    if (go == T(0)) continue;
                                    if (gx) {
                                        T* gxr = gx->ptr() + j * cin;
                                        const T* wrow = wv.ptr() + (o * cin) * k + kk;
                                        for (int64_t c = 0; c < cin; ++c) gxr[c] += go * wrow[c * k];
                                    }
                                    if (gw) {
                                        T* gwr = gw->ptr() + (o * cin) * k + kk;
                                        for (int64_t c = 0; c < cin; ++c) gwr[c * k] += go * xrow[c];
                                    }
                                }
                            }
                        }
                    });
    }

    Val<T> dwconv1d(Val<T> x, Val<T> w, Val<T> b, int stride) {
        static const Tensor<T> kNoBias;
        Tensor<T> out = detail::dwconv1d(value(x), value(w), b.valid() ? value(b) : kNoBias, stride);
        return make(std::move(out), b.valid() ? std::vector<Val<T>>{x, w, b} : std::vector<Val<T>>{x, w},
                    [x, w, b, stride](Tape& t, int self) {
                        const Tensor<T>& g = t.grad_of(self);
                        const Tensor<T>& xv = t.value(x);
                        const Tensor<T>& wv = t.value(w);
                        const int64_t t_out = g.dim(0), ch = g.dim(1);
                        const int64_t t_in = xv.dim(0), k = wv.dim(1);
                        const int pad = static_cast<int>((k - 1) / 2);
                        Tensor<T>* gx = t.grad_target(x.id);
                        Tensor<T>* gw = t.grad_target(w.id);
                        Tensor<T>* gb = b.valid() ? t.grad_target(b.id) : nullptr;
                        for (int64_t i = 0; i < t_out; ++i) {
                            const T* grow = g.ptr() + i * ch;
                            if (gb)
                                for (int64_t c = 0; c < ch; ++c) gb->data[c] += grow[c];
                            for (int64_t kk = 0; kk < k; ++kk) {
                                const int64_t j = i * stride + kk - pad;
                                if (j < 0 || j >= t_in) continue;
                                for (int64_t c = 0; c < ch; ++c) {
                                    if (gx) gx->ptr()[j * ch + c] += grow[c] * wv.ptr()[c * k + kk];
                                    if (gw) gw->ptr()[c * k + kk] += grow[c] * xv.ptr()[j * ch + c];
                                }
                            }
                        }
                    });
    }

    // ---- attention ----
    // q [B,Tq,D], k/v [B,Tk,D]; key_mask (empty or length Tk) marks valid keys.
    // Additive -1e9 on masked keys before softmax; a row with zero valid keys
    // yields an exactly zero output row.
    Val<T> attention(Val<T> q, Val<T> k, Val<T> v, Mask key_mask, int heads) {
        const Tensor<T>&qv = value(q), &kv = value(k), &vv = value(v);
        if (qv.rank() != 3 || kv.rank() != 3 || vv.rank() != 3)
            throw ShapeError("attention: expected 3-D [B,T,D] inputs, got " + qv.shape_string() + ", " +
                             kv.shape_string() + ", " + vv.shape_string());
        const int64_t B = qv.dim(0), tq = qv.dim(1), d = qv.dim(2);
        const int64_t tk = kv.dim(1);
        if (kv.dim(0) != B || vv.dim(0) != B || vv.dim(1) != tk || kv.dim(2) != d || vv.dim(2) != d)
            throw ShapeError("attention: incompatible shapes " + qv.shape_string() + ", " +
                             kv.shape_string() + ", " + vv.shape_string());
        if (d % heads != 0)
            throw ShapeError("attention: dim " + std::to_string(d) + " not divisible by heads " +
                             std::to_string(heads));
        if (!key_mask.empty() && static_cast<int64_t>(key_mask.size()) != tk)
            throw ShapeError("attention: key mask length " + std::to_string(key_mask.size()) +
                             " vs Tk " + std::to_string(tk));
        Tensor<T> out({B, tq, d});
        attn_forward(qv, kv, vv, key_mask, heads, out);
        return make(std::move(out), {q, k, v},
                    [q, k, v, key_mask, heads, B, tq, tk, d](Tape& t, int self) {
                        attn_backward(t, self, q, k, v, key_mask, heads, B, tq, tk, d);
                    });
    }

    // ---- data movement ----
    Val<T> concat_cols(Val<T> a, Val<T> b) {
        const Tensor<T>&av = value(a), &bv = value(b);
        detail::require_2d(av, "concat");
        detail::require_2d(bv, "concat");
        if (av.dim(0) != bv.dim(0))
            throw ShapeError("concat: row counts " + av.shape_string() + " vs " + bv.shape_string());
        const int64_t rows = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
        Tensor<T> out({rows, ca + cb});
        for (int64_t r = 0; r < rows; ++r) {
            std::copy(av.ptr() + r * ca, av.ptr() + (r + 1) * ca, out.ptr() + r * (ca + cb));
            std::copy(bv.ptr() + r * cb, bv.ptr() + (r + 1) * cb, out.ptr() + r * (ca + cb) + ca);
        }
        return make(std::move(out), {a, b}, [a, b, rows, ca, cb](Tape& t, int self) {
            const Tensor<T>& g = t.grad_of(self);
            if (Tensor<T>* ga = t.grad_target(a.id))
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < ca; ++c) ga->data[r * ca + c] += g.data[r * (ca + cb) + c];
            if (Tensor<T>* gb = t.grad_target(b.id))
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cb; ++c)
                        gb->data[r * cb + c] += g.data[r * (ca + cb) + ca + c];
        });
    }

    Val<T> reshape(Val<T> x, std::vector<int64_t> shape) {
        const Tensor<T>& xv = value(x);
        if (shape_numel(shape) != xv.numel())
            throw ShapeError("reshape: " + xv.shape_string() + " to " + shape_str(shape) +
                             " changes element count");
        Tensor<T> out(std::move(shape), xv.data);
        return make(std::move(out), {x}, [x](Tape& t, int self) {
            const Tensor<T>& g = t.grad_of(self);
            if (Tensor<T>* gx = t.grad_target(x.id))
                for (int64_t i = 0; i < g.numel(); ++i) gx->data[i] += g.data[i];
        });
    }

    Val<T> transpose(Val<T> x) {
        Tensor<T> out = detail::transpose2d(value(x));
        return make(std::move(out), {x}, [x](Tape& t, int self) {
            Tensor<T> gt = detail::transpose2d(t.grad_of(self));
            if (Tensor<T>* gx = t.grad_target(x.id)) add_into(*gx, gt);
        });
    }

    Val<T> swap01(Val<T> x) {
        Tensor<T> out = detail::swap01(value(x));
        return make(std::move(out), {x}, [x](Tape& t, int self) {
            Tensor<T> gt = detail::swap01(t.grad_of(self));
            if (Tensor<T>* gx = t.grad_target(x.id)) add_into(*gx, gt);
        });
    }

    // Zero all rows (leading-axis slabs) whose mask entry is 0.
    Val<T> mask_rows(Val<T> x, Mask mask) {
        const Tensor<T>& xv = value(x);
        if (xv.rank() < 1 || static_cast<int64_t>(mask.size()) != xv.dim(0))
            throw ShapeError("mask_rows: mask length " + std::to_string(mask.size()) + " vs " +
                             xv.shape_string());
        const int64_t slab = xv.dim(0) == 0 ? 0 : xv.numel() / xv.dim(0);
        Tensor<T> out = xv;
        for (int64_t r = 0; r < xv.dim(0); ++r)
            if (!mask[static_cast<size_t>(r)])
                std::fill(out.ptr() + r * slab, out.ptr() + (r + 1) * slab, T(0));
        return make(std::move(out), {x}, [x, mask, slab](Tape& t, int self) {
            const Tensor<T>& g = t.grad_of(self);
            Tensor<T>* gx = t.grad_target(x.id);
            if (!gx) return;
            for (int64_t r = 0; r < g.dim(0); ++r) {
                if (!mask[static_cast<size_t>(r)]) continue;
                for (int64_t i = r * slab; i < (r + 1) * slab; ++i) gx->data[i] += g.data[i];
            }
        });
    }

    // Mean over valid rows of a 2-D tensor -> [D]. All-masked input gives zeros.
    Val<T> masked_mean(Val<T> x, Mask mask) {
        const Tensor<T>& xv = value(x);
        detail::require_2d(xv, "masked_mean");
        if (static_cast<int64_t>(mask.size()) != xv.dim(0))
            throw ShapeError("masked_mean: mask length " + std::to_string(mask.size()) + " vs " +
                             xv.shape_string());
        const int64_t rows = xv.dim(0), cols = xv.dim(1);
        const int nvalid = mask_valid_count(mask);
        Tensor<T> out({cols});
        if (nvalid > 0) {
            for (int64_t r = 0; r < rows; ++r) {
                if (!mask[static_cast<size_t>(r)]) continue;
                for (int64_t c = 0; c < cols; ++c) out.data[c] += xv.data[r * cols + c];
            }
            for (int64_t c = 0; c < cols; ++c) out.data[c] /= static_cast<T>(nvalid);
        }
        return make(std::move(out), {x}, [x, mask, rows, cols, nvalid](Tape& t, int self) {
            if (nvalid == 0) return;
            const Tensor<T>& g = t.grad_of(self);
            Tensor<T>* gx = t.grad_target(x.id);
            if (!gx) return;
            const T inv = T(1) / static_cast<T>(nvalid);
            for (int64_t r = 0; r < rows; ++r) {
                if (!mask[static_cast<size_t>(r)]) continue;
                for (int64_t c = 0; c < cols; ++c) gx->data[r * cols + c] += g.data[c] * inv;
            }
        });
    }

    Val<T> sum(Val<T> x) {
        const Tensor<T>& xv = value(x);
        // compensated summation: the scalar reductions set the rounding
        // floor of every finite-difference comparison
        T s = 0, comp = 0;
        for (T v : xv.data) {
            const T y = v - comp;
            const T t = s + y;
            comp = (t - s) - y;
            s = t;
        }
        Tensor<T> out({1});
        out.data[0] = s;
        return make(std::move(out), {x}, [x](Tape& t, int self) {
            const T g = t.grad_of(self).data[0];
            if (Tensor<T>* gx = t.grad_target(x.id))
                for (T& v : gx->data) v += g;
        });
    }

    // ---- reverse sweep ----
    // Node gradients are rebuilt per call; only leaf sinks accumulate across
    // calls.
    void backward(Val<T> out) {
        Node& o = nodes_[static_cast<size_t>(out.id)];
        if (o.value.numel() != 1)
            throw ContractError("backward: output must be scalar, got " + o.value.shape_string());
        if (!o.needs_grad) return;
        for (Node& n : nodes_) {
            if (n.grad_live) {
                n.grad_live = false;
                n.grad = Tensor<T>();
            }
        }
        grad_target(out.id)->data[0] = T(1);
        for (int id = out.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.grad_live) continue;
            if (n.backward) n.backward(*this, id);
            if (n.sink) add_into(*n.sink, n.grad);
        }
    }

  private:
    bool needs(Val<T> v) const { return nodes_[static_cast<size_t>(v.id)].needs_grad; }

    Val<T> make(Tensor<T> value, std::vector<Val<T>> inputs, std::function<void(Tape&, int)> bw) {
        Node n;
        n.value = std::move(value);
        for (Val<T> in : inputs) n.needs_grad = n.needs_grad || needs(in);
        if (n.needs_grad) n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return {static_cast<int>(nodes_.size()) - 1};
    }

    static void add_into(Tensor<T>& dst, const Tensor<T>& src) {
        if (!dst.same_shape(src))
            throw ShapeError("gradient accumulation: " + dst.shape_string() + " vs " +
                             src.shape_string());
        for (int64_t i = 0; i < dst.numel(); ++i) dst.data[i] += src.data[i];
    }

    // Scores for one (batch, head): A = softmax(scale*Q K^T + mask bias).
    static void attn_scores(const T* qp, const T* kp, const Mask& key_mask, int64_t tq, int64_t tk,
                            int64_t d, int64_t dh, int64_t off, std::vector<T>& a) {
        const T sc = T(1) / std::sqrt(static_cast<T>(dh));
        bool any_valid = key_mask.empty();
        for (uint8_t m : key_mask) any_valid = any_valid || (m != 0);
        for (int64_t i = 0; i < tq; ++i) {
            T* arow = a.data() + i * tk;
            if (!any_valid) {
                std::fill(arow, arow + tk, T(0));
                continue;
            }
            T mx = -std::numeric_limits<T>::infinity();
            for (int64_t j = 0; j < tk; ++j) {
                T s = 0;
                const T* qr = qp + i * d + off;
                const T* kr = kp + j * d + off;
                for (int64_t c = 0; c < dh; ++c) s += qr[c] * kr[c];
                s *= sc;
                if (!key_mask.empty() && !key_mask[static_cast<size_t>(j)]) s += T(-1e9);
                arow[j] = s;
                mx = std::max(mx, s);
            }
            T sum = 0;
            for (int64_t j = 0; j < tk; ++j) {
                arow[j] = std::exp(arow[j] - mx);
                sum += arow[j];
            }
            for (int64_t j = 0; j < tk; ++j) arow[j] /= sum;
        }
    }

    static void attn_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                             const Mask& key_mask, int heads, Tensor<T>& out) {
        const int64_t B = q.dim(0), tq = q.dim(1), d = q.dim(2), tk = k.dim(1);
        const int64_t dh = d / heads;
        std::vector<T> a(static_cast<size_t>(tq * tk));
        for (int64_t b = 0; b < B; ++b) {
            const T* qp = q.ptr() + b * tq * d;
            const T* kp = k.ptr() + b * tk * d;
            const T* vp = v.ptr() + b * tk * d;
            T* op = out.ptr() + b * tq * d;
            for (int h = 0; h < heads; ++h) {
                const int64_t off = h * dh;
                attn_scores(qp, kp, key_mask, tq, tk, d, dh, off, a);
                for (int64_t i = 0; i < tq; ++i) {
                    const T* arow = a.data() + i * tk;
                    T* orow = op + i * d + off;
                    for (int64_t j = 0; j < tk; ++j) {
                        const T w = arow[j];
                        if (w == T(0)) continue;
                        const T* vr = vp + j * d + off;
                        for (int64_t c = 0; c < dh; ++c) orow[c] += w * vr[c];
                    }
                }
            }
        }
    }

    static void attn_backward(Tape& t, int self, Val<T> q, Val<T> k, Val<T> v, const Mask& key_mask,
                              int heads, int64_t B, int64_t tq, int64_t tk, int64_t d) {
        const Tensor<T>& g = t.grad_of(self);
        const Tensor<T>& qv = t.value(q);
        const Tensor<T>& kv = t.value(k);
        const Tensor<T>& vv = t.value(v);
        Tensor<T>* gq = t.grad_target(q.id);
        Tensor<T>* gk = t.grad_target(k.id);
        Tensor<T>* gv = t.grad_target(v.id);
        if (!gq && !gk && !gv) return;
        const int64_t dh = d / heads;
        const T sc = T(1) / std::sqrt(static_cast<T>(dh));
        std::vector<T> a(static_cast<size_t>(tq * tk));
        std::vector<T> ds(static_cast<size_t>(tq * tk));
        for (int64_t b = 0; b < B; ++b) {
            const T* qp = qv.ptr() + b * tq * d;
            const T* kp = kv.ptr() + b * tk * d;
            const T* vp = vv.ptr() + b * tk * d;
            const T* gp = g.ptr() + b * tq * d;
            for (int h = 0; h < heads; ++h) {
                const int64_t off = h * dh;
                attn_scores(qp, kp, key_mask, tq, tk, d, dh, off, a);
                for (int64_t i = 0; i < tq; ++i) {
                    const T* arow = a.data() + i * tk;
                    const T* grow = gp + i * d + off;
                    T* dsrow = ds.data() + i * tk;
                    T dot = 0;
                    for (int64_t j = 0; j < tk; ++j) {
                        T da = 0;
                        const T* vr = vp + j * d + off;
                        for (int64_t c = 0; c < dh; ++c) da += grow[c] * vr[c];
                        dsrow[j] = da;
                        dot += da * arow[j];
                    }
                    for (int64_t j = 0; j < tk; ++j) dsrow[j] = arow[j] * (dsrow[j] - dot);
                }
                if (gv) {
                    T* gvp = gv->ptr() + b * tk * d;
                    for (int64_t i = 0; i < tq; ++i) {
                        const T* arow = a.data() + i * tk;
                        const T* grow = gp + i * d + off;
                        for (int64_t j = 0; j < tk; ++j) {
                            const T w = arow[j];
                            if (w == T(0)) continue;
                            T* gvr = gvp + j * d + off;
                            for (int64_t c = 0; c < dh; ++c) gvr[c] += w * grow[c];
                        }
                    }
                }
                if (gq) {
                    T* gqp = gq->ptr() + b * tq * d;
                    for (int64_t i = 0; i < tq; ++i) {
                        const T* dsrow = ds.data() + i * tk;
                        T* gqr = gqp + i * d + off;
                        for (int64_t j = 0; j < tk; ++j) {
                            const T w = dsrow[j] * sc;
                            if (w == T(0)) continue;
                            const T* kr = kp + j * d + off;
                            for (int64_t c = 0; c < dh; ++c) gqr[c] += w * kr[c];
                        }
                    }
                }
                if (gk) {
                    T* gkp = gk->ptr() + b * tk * d;
                    for (int64_t i = 0; i < tq; ++i) {
                        const T* dsrow = ds.data() + i * tk;
                        const T* qr = qp + i * d + off;
                        for (int64_t j = 0; j < tk; ++j) {
                            const T w = dsrow[j] * sc;
                            if (w == T(0)) continue;
                            T* gkr = gkp + j * d + off;
                            for (int64_t c = 0; c < dh; ++c) gkr[c] += w * qr[c];
                        }
                    }
                }
            }
        }
    }

    std::vector<Node> nodes_;
    bool track_branches_ = false;
    uint64_t branch_sig_ = 0;
};

}  // namespace davel::num
