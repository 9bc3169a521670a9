#pragma once

#include <algorithm>
#include <cmath>

#include "davel/tensor.hpp"

// Forward kernels shared by the tape ops and the validated primitive surface.
// Backward logic lives with the tape; these are pure functions.

namespace davel::num::detail {

template <typename T>
void require_2d(const Tensor<T>& x, const char* op) {
    if (x.rank() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + x.shape_string());
}

// out[m,n] = a[m,k] * b[k,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner dims disagree, " + a.shape_string() + " x " + b.shape_string());
    Tensor<T> out({m, n});
    const T* ap = a.ptr();
    const T* bp = b.ptr();
    T* op = out.ptr();
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = ap + i * k;
        T* orow = op + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            const T* brow = bp + kk * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

// out[m,n] += a[m,k] * b[n,k]^T  (b transposed)
template <typename T>
void matmul_nt_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    const T* ap = a.ptr();
    const T* bp = b.ptr();
    T* op = out.ptr();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            const T* arow = ap + i * k;
            const T* brow = bp + j * k;
            T acc = 0;
            for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            op[i * n + j] += acc;
        }
    }
}

// out[k,n] += a[m,k]^T * b[m,n]  (a transposed)
template <typename T>
void matmul_tn_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const T* ap = a.ptr();
    const T* bp = b.ptr();
    T* op = out.ptr();
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = ap + i * k;
        const T* brow = bp + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            T* orow = op + kk * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out = x;
    for (T& v : out.data) v = v > T(0) ? v : T(0);
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out = x;
    for (T& v : out.data) {
        if (v >= T(0)) {
            v = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            v = e / (T(1) + e);
        }
    }
    return out;
}

// Softmax over the trailing dimension, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    Tensor<T> out = x;
    const int64_t rows = x.rows(), cols = x.cols();
    if (cols == 0) throw ShapeError("softmax: empty trailing dimension");
    for (int64_t r = 0; r < rows; ++r) {
        T* row = out.ptr() + r * cols;
        T mx = row[0];
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        T sum = 0;
        for (int64_t c = 0; c < cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        for (int64_t c = 0; c < cols; ++c) row[c] /= sum;
    }
    return out;
}

// Layer normalization over the trailing dimension (population variance).
// Writes normalized x-hat into `xhat` when non-null (backward reuses it).
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                    Tensor<T>* xhat = nullptr, std::vector<T>* inv_std = nullptr) {
    const int64_t rows = x.rows(), cols = x.cols();
    if (gamma.numel() != cols || beta.numel() != cols)
        throw ShapeError("layernorm: scale/shift " + gamma.shape_string() + "/" + beta.shape_string() +
                         " do not match trailing dim " + std::to_string(cols));
    Tensor<T> out = x;
    if (xhat) *xhat = Tensor<T>(x.shape);
    if (inv_std) inv_std->assign(static_cast<size_t>(rows), T(0));
    for (int64_t r = 0; r < rows; ++r) {
        T* row = out.ptr() + r * cols;
        T mean = 0;
        for (int64_t c = 0; c < cols; ++c) mean += row[c];
        mean /= static_cast<T>(cols);
        T var = 0;
        for (int64_t c = 0; c < cols; ++c) {
            const T d = row[c] - mean;
            var += d * d;
        }
        var /= static_cast<T>(cols);
        const T inv = T(1) / std::sqrt(var + eps);
        if (inv_std) (*inv_std)[static_cast<size_t>(r)] = inv;
        for (int64_t c = 0; c < cols; ++c) {
            const T xh = (row[c] - mean) * inv;
            if (xhat) xhat->ptr()[r * cols + c] = xh;
            row[c] = xh * gamma.data[static_cast<size_t>(c)] + beta.data[static_cast<size_t>(c)];
        }
    }
    return out;
}

inline int64_t conv_out_len(int64_t t, int kernel, int stride) {
    const int pad = (kernel - 1) / 2;
    return (t + 2 * pad - kernel) / stride + 1;
}

// out[m,n] += a[m,k] * b[k,n] over raw pointers
template <typename T>
void gemm_acc(const T* a, int64_t m, int64_t k, const T* b, int64_t n, T* out) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* orow = out + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            const T* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// out[k,n] += a[m,k]^T * b[m,n] over raw pointers
template <typename T>
void gemm_tn_acc(const T* a, int64_t m, int64_t k, const T* b, int64_t n, T* out) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            T* orow = out + kk * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// tap kk of w [Cout, Cin, K] densified as [Cin, Cout] (or transposed)
template <typename T>
std::vector<T> conv_tap(const Tensor<T>& w, int64_t kk, bool transpose = false) {
    const int64_t cout = w.dim(0), cin = w.dim(1), k = w.dim(2);
    std::vector<T> tap(static_cast<size_t>(cin * cout));
    for (int64_t o = 0; o < cout; ++o)
        for (int64_t c = 0; c < cin; ++c) {
            const T v = w.ptr()[(o * cin + c) * k + kk];
            if (transpose) {
                tap[static_cast<size_t>(o * cin + c)] = v;
            } else {
                tap[static_cast<size_t>(c * cout + o)] = v;
            }
        }
    return tap;
}

// x [T, Cin], w [Cout, Cin, K], b [Cout] (may be empty). K odd, zero padding (K-1)/2.
// Stride 1 runs as K shifted matmul accumulations.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride) {
    require_2d(x, "conv1d");
    if (w.rank() != 3) throw ShapeError("conv1d: weight must be [Cout, Cin, K], got " + w.shape_string());
    const int64_t t_in = x.dim(0), cin = x.dim(1);
    const int64_t cout = w.dim(0), wcin = w.dim(1), k = w.dim(2);
    if (k % 2 == 0) throw ShapeError("conv1d: kernel must be odd, got " + std::to_string(k));
    if (wcin != cin)
        throw ShapeError("conv1d: input channels " + std::to_string(cin) + " vs weight " + w.shape_string());
    if (b.numel() != 0 && b.numel() != cout)
        throw ShapeError("conv1d: bias " + b.shape_string() + " vs Cout " + std::to_string(cout));
    const int pad = static_cast<int>((k - 1) / 2);
    const int64_t t_out = conv_out_len(t_in, static_cast<int>(k), stride);
    Tensor<T> out({t_out, cout});
    if (b.numel()) {
        for (int64_t i = 0; i < t_out; ++i)
            std::copy(b.data.begin(), b.data.end(), out.ptr() + i * cout);
    }
    if (stride == 1) {
        for (int64_t kk = 0; kk < k; ++kk) {
            const int64_t shift = kk - pad;
            const int64_t i0 = std::max<int64_t>(0, -shift);
            const int64_t i1 = std::min(t_out, t_in - shift);
            if (i1 <= i0) continue;
            const std::vector<T> tap = conv_tap(w, kk);
            gemm_acc(x.ptr() + (i0 + shift) * cin, i1 - i0, cin, tap.data(), cout,
                     out.ptr() + i0 * cout);
        }
        return out;
    }
    for (int64_t i = 0; i < t_out; ++i) {
        T* orow = out.ptr() + i * cout;
        for (int64_t kk = 0; kk < k; ++kk) {
            const int64_t j = i * stride + kk - pad;
            if (j < 0 || j >= t_in) continue;
            const T* xrow = x.ptr() + j * cin;
            for (int64_t o = 0; o < cout; ++o) {
                const T* wrow = w.ptr() + (o * cin + 0) * k + kk;
                T acc = 0;
                for (int64_t c = 0; c < cin; ++c) acc += xrow[c] * wrow[c * k];
                orow[o] += acc;
            }
        }
    }
    return out;
}

// Depth-wise: x [T, C], w [C, K], b [C] (may be empty).
template <typename T>
Tensor<T> dwconv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride) {
    require_2d(x, "dwconv1d");
    require_2d(w, "dwconv1d");
    const int64_t t_in = x.dim(0), ch = x.dim(1);
    const int64_t wc = w.dim(0), k = w.dim(1);
    if (k % 2 == 0) throw ShapeError("dwconv1d: kernel must be odd, got " + std::to_string(k));
    if (wc != ch)
        throw ShapeError("dwconv1d: channels " + std::to_string(ch) + " vs weight " + w.shape_string());
    if (b.numel() != 0 && b.numel() != ch)
        throw ShapeError("dwconv1d: bias " + b.shape_string() + " vs channels " + std::to_string(ch));
    const int pad = static_cast<int>((k - 1) / 2);
    const int64_t t_out = conv_out_len(t_in, static_cast<int>(k), stride);
    Tensor<T> out({t_out, ch});
    for (int64_t i = 0; i < t_out; ++i) {
        T* orow = out.ptr() + i * ch;
        if (b.numel()) {
            for (int64_t c = 0; c < ch; ++c) orow[c] = b.data[static_cast<size_t>(c)];
        }
        for (int64_t kk = 0; kk < k; ++kk) {
            const int64_t j = i * stride + kk - pad;
            if (j < 0 || j >= t_in) continue;
            const T* xrow = x.ptr() + j * ch;
            for (int64_t c = 0; c < ch; ++c) orow[c] += xrow[c] * w.ptr()[c * k + kk];
        }
    }
    return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
    require_2d(x, "transpose");
    const int64_t r = x.dim(0), c = x.dim(1);
    Tensor<T> out({c, r});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.ptr()[j * r + i] = x.ptr()[i * c + j];
    return out;
}

// Swap the first two axes of a 3-D tensor.
template <typename T>
Tensor<T> swap01(const Tensor<T>& x) {
    if (x.rank() != 3) throw ShapeError("swap01: expected 3-D tensor, got " + x.shape_string());
    const int64_t a = x.dim(0), b = x.dim(1), h = x.dim(2);
    Tensor<T> out({b, a, h});
    for (int64_t i = 0; i < a; ++i)
        for (int64_t j = 0; j < b; ++j) {
            const T* src = x.ptr() + (i * b + j) * h;
            T* dst = out.ptr() + (j * a + i) * h;
            std::copy(src, src + h, dst);
        }
    return out;
}

}  // namespace davel::num::detail
