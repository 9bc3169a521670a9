#pragma once

#include <string>
#include <vector>

#include "davel/tape.hpp"
#include "davel/tensor.hpp"

namespace davel::num {

// The validated, non-differentiating primitive surface. The tape exposes the
// same operations with gradients; this entry point adds the input checks
// (finiteness, 0/1 masks) that the hot path skips.
enum class Primitive {
    kMatmul,
    kAttention,
    kSoftmax,
    kLayerNorm,
    kConv1d,
    kDepthwiseConv1d,
    kRelu,
    kSigmoid,
    kAdd,
    kMul,
    kConcat,
    kReshape,
    kTranspose,
    kMaskedMean,
};

struct PrimitiveAttrs {
    int heads = 1;
    int stride = 1;
    double eps = 1e-5;
    std::vector<int64_t> shape;  // reshape target
};

inline const char* primitive_name(Primitive p) {
    switch (p) {
        case Primitive::kMatmul: return "matmul";
        case Primitive::kAttention: return "attention";
        case Primitive::kSoftmax: return "softmax";
        case Primitive::kLayerNorm: return "layernorm";
        case Primitive::kConv1d: return "conv1d";
        case Primitive::kDepthwiseConv1d: return "dwconv1d";
        case Primitive::kRelu: return "relu";
        case Primitive::kSigmoid: return "sigmoid";
        case Primitive::kAdd: return "add";
        case Primitive::kMul: return "mul";
        case Primitive::kConcat: return "concat";
        case Primitive::kReshape: return "reshape";
        case Primitive::kTranspose: return "transpose";
        case Primitive::kMaskedMean: return "masked_mean";
    }
    return "?";
}

namespace detail {

template <typename T>
Mask to_mask(const Tensor<T>& t, const char* op) {
    Mask m(static_cast<size_t>(t.numel()));
    for (int64_t i = 0; i < t.numel(); ++i) {
        const T v = t.data[static_cast<size_t>(i)];
        if (v != T(0) && v != T(1))
            throw NumericError(std::string(op) + ": mask entries must be 0 or 1");
        m[static_cast<size_t>(i)] = v != T(0);
    }
    return m;
}

}  // namespace detail

template <typename T>
Tensor<T> eval_primitive(Primitive op, const std::vector<Tensor<T>>& inputs,
                         const PrimitiveAttrs& attrs = {}) {
    const char* name = primitive_name(op);
    auto need = [&](size_t lo, size_t hi) {
        if (inputs.size() < lo || inputs.size() > hi)
            throw ShapeError(std::string(name) + ": wrong input count " + std::to_string(inputs.size()));
    };
    for (const Tensor<T>& in : inputs)
        if (!in.all_finite()) throw NumericError(std::string(name) + ": non-finite input");

    Tape<T> tape;
    auto c = [&](size_t i) { return tape.constant(inputs[i]); };
    Val<T> out;
    switch (op) {
        case Primitive::kMatmul:
            need(2, 2);
            out = tape.matmul(c(0), c(1));
            break;
        case Primitive::kAttention: {
            need(3, 4);
            Mask m;
            if (inputs.size() == 4) m = detail::to_mask(inputs[3], name);
            out = tape.attention(c(0), c(1), c(2), std::move(m), attrs.heads);
            break;
        }
        case Primitive::kSoftmax:
            need(1, 1);
            out = tape.softmax(c(0));
            break;
        case Primitive::kLayerNorm:
            need(3, 3);
            out = tape.layernorm(c(0), c(1), c(2), static_cast<T>(attrs.eps));
            break;
        case Primitive::kConv1d:
            need(2, 3);
            out = tape.conv1d(c(0), c(1), inputs.size() == 3 ? c(2) : Val<T>{}, attrs.stride);
            break;
        case Primitive::kDepthwiseConv1d:
            need(2, 3);
            out = tape.dwconv1d(c(0), c(1), inputs.size() == 3 ? c(2) : Val<T>{}, attrs.stride);
            break;
        case Primitive::kRelu:
            need(1, 1);
            out = tape.relu(c(0));
            break;
        case Primitive::kSigmoid:
            need(1, 1);
            out = tape.sigmoid(c(0));
            break;
        case Primitive::kAdd:
            need(2, 2);
            out = tape.add(c(0), c(1));
            break;
        case Primitive::kMul:
            need(2, 2);
            out = tape.mul(c(0), c(1));
            break;
        case Primitive::kConcat:
            need(2, 2);
            out = tape.concat_cols(c(0), c(1));
            break;
        case Primitive::kReshape:
            need(1, 1);
            out = tape.reshape(c(0), attrs.shape);
            break;
        case Primitive::kTranspose:
            need(1, 1);
            out = tape.transpose(c(0));
            break;
        case Primitive::kMaskedMean:
            need(2, 2);
            out = tape.masked_mean(c(0), detail::to_mask(inputs[1], name));
            break;
    }
    Tensor<T> result = tape.value(out);
    if (!result.all_finite()) throw NumericError(std::string(name) + ": non-finite output");
    return result;
}

}  // namespace davel::num
