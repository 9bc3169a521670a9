#pragma once

#include <string>
#include <vector>

#include "davel/features.hpp"
#include "davel/model_config.hpp"
#include "davel/param_store.hpp"
#include "davel/tape.hpp"

namespace davel::model {

using num::BoundParams;
using num::Mask;
using num::ParamStore;
using num::Tape;
using num::Tensor;
using num::Val;

// Per-level tape handles straight out of the heads.
template <typename T>
struct ForwardResult {
    std::vector<Val<T>> probs;  // [T_l, C], sigmoid outputs
    std::vector<Val<T>> dist;   // [2, Creg, T_l], ReLU outputs in level-step units
    std::vector<LevelMeta> levels;
};

// Detached copy for decoding.
struct RawPredictions {
    std::vector<Tensor<float>> probs;
    std::vector<Tensor<float>> dist;
    std::vector<LevelMeta> levels;
};

namespace detail {

template <typename T>
Tensor<T> positional_encoding(int t, int d) {
    Tensor<T> pe({t, d});
    for (int i = 0; i < t; ++i) {
        for (int j = 0; j < d; j += 2) {
            const double angle = i / std::pow(10000.0, static_cast<double>(j) / d);
            pe.at2(i, j) = static_cast<T>(std::sin(angle));
            if (j + 1 < d) pe.at2(i, j + 1) = static_cast<T>(std::cos(angle));
        }
    }
    return pe;
}

inline Mask downsample_mask(const Mask& m, int valid, int stride, int* out_valid) {
    if (stride == 1) {
        *out_valid = valid;
        return m;
    }
    const int64_t out_len = num::detail::conv_out_len(static_cast<int64_t>(m.size()), 3, stride);
    Mask out(static_cast<size_t>(out_len), 0);
    int v = 0;
    for (int64_t i = 0; i < out_len; ++i) {
        if (i * stride < valid) {
            out[static_cast<size_t>(i)] = 1;
            ++v;
        }
    }
    *out_valid = v;
    return out;
}

// x [T, Din] -> attention projection -> [T, D] through a 2-D matmul.
template <typename T>
Val<T> linear(Tape<T>& tape, Val<T> x, Val<T> w, Val<T> b) {
    return tape.add_bias(tape.matmul(x, w), b);
}

// Pre-norm multi-head self/cross attention followed by a pre-norm FFN,
// residuals around both. Queries come from q_in, keys/values from kv_in;
// the residual stream is kv_in. Works on [B, N, H] via 2-D projections.
// Self-attention (q_in == kv_in) normalizes once; cross-attention carries a
// separate norm for the key/value stream.
template <typename T>
Val<T> attn_ffn_block(BoundParams<T>& bp, const std::string& prefix, Val<T> q_in, Val<T> kv_in,
                      const Mask& key_mask, int heads) {
    Tape<T>& tape = bp.tape();
    const auto& shape = tape.value(kv_in).shape;
    const int64_t b = shape.size() == 3 ? shape[0] : 1;
    const int64_t nq = tape.value(q_in).shape.end()[-2];
    const int64_t nk = shape.end()[-2];
    const int64_t h = shape.back();
    const bool self_attn = q_in.id == kv_in.id;

    auto project = [&](Val<T> in, int64_t n, const char* w, const char* bias) {
        Val<T> flat = tape.reshape(in, {b * n, h});
        Val<T> out = linear(tape, flat, bp(prefix + w), bp(prefix + bias));
        return tape.reshape(out, {b, n, h});
    };

    Val<T> qn = tape.layernorm(q_in, bp(prefix + ".ln1.g"), bp(prefix + ".ln1.b"));
    Val<T> kn = self_attn ? qn
                          : tape.layernorm(kv_in, bp(prefix + ".ln_kv.g"), bp(prefix + ".ln_kv.b"));
    Val<T> att = tape.attention(project(qn, nq, ".attn.wq", ".attn.bq"),
                                project(kn, nk, ".attn.wk", ".attn.bk"),
                                project(kn, nk, ".attn.wv", ".attn.bv"), key_mask, heads);
    att = tape.reshape(linear(tape, tape.reshape(att, {b * nq, h}), bp(prefix + ".attn.wo"),
                              bp(prefix + ".attn.bo")),
                       {b, nq, h});
    Val<T> res = tape.add(kv_in, att);

    Val<T> fn = tape.layernorm(res, bp(prefix + ".ln2.g"), bp(prefix + ".ln2.b"));
    Val<T> f = tape.reshape(fn, {b * nq, h});
    f = linear(tape, f, bp(prefix + ".ffn.w1"), bp(prefix + ".ffn.b1"));
    f = tape.relu(f);
    f = linear(tape, f, bp(prefix + ".ffn.w2"), bp(prefix + ".ffn.b2"));
    return tape.add(res, tape.reshape(f, {b, nq, h}));
}

// Same block on 2-D sequences [N, H] with row masking kept tight.
template <typename T>
Val<T> seq_attn_ffn_block(BoundParams<T>& bp, const std::string& prefix, Val<T> q_in, Val<T> kv_in,
                          const Mask& mask, int heads) {
    Tape<T>& tape = bp.tape();
    const int64_t n = tape.value(kv_in).dim(0);
    const int64_t h = tape.value(kv_in).dim(1);
    const bool self_attn = q_in.id == kv_in.id;
    Val<T> kv3 = tape.reshape(tape.mask_rows(kv_in, mask), {1, n, h});
    Val<T> q3 = self_attn ? kv3 : tape.reshape(tape.mask_rows(q_in, mask), {1, n, h});
    Val<T> out = attn_ffn_block(bp, prefix, q3, kv3, mask, heads);
    return tape.mask_rows(tape.reshape(out, {n, h}), mask);
}

}  // namespace detail

// ---- parameter construction ----

template <typename T>
void init_params(const ModelConfig& cfg, ParamStore<T>& store, SeededRng& rng) {
    cfg.validate();
    if (cfg.classes < 1) throw ConfigError("classes must be >= 1 (set it from the taxonomy)");
    const int d = cfg.embed_dim;
    const int w = 2 * d;  // fused width
    const int hdim = cfg.dependency_dim;
    const int group = cfg.hidden_classes * hdim;
    const int ffn = cfg.ffn_ratio;

    auto weight = [&](const std::string& name, std::vector<int64_t> shape) {
        num::init_trunc_normal(store.create(name, std::move(shape)).value, rng);
    };
    // temporal convs use fan-in scaling so unit-scale features stay unit-scale
    auto conv_weight = [&](const std::string& name, std::vector<int64_t> shape, int64_t fan_in) {
        const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
        num::init_trunc_normal(store.create(name, std::move(shape)).value, rng, sigma);
    };
    auto bias = [&](const std::string& name, int64_t n) { store.create(name, {n}); };
    auto norm = [&](const std::string& name, int64_t n) {
        num::init_ones(store.create(name + ".g", {n}).value);
        store.create(name + ".b", {n});
    };
    auto attn_ffn = [&](const std::string& p, int width, bool cross) {
        norm(p + ".ln1", width);
        if (cross) norm(p + ".ln_kv", width);
        for (const char* nm : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"})
            weight(p + nm, {width, width});
        for (const char* nm : {".attn.bq", ".attn.bk", ".attn.bv", ".attn.bo"}) bias(p + nm, width);
        norm(p + ".ln2", width);
        weight(p + ".ffn.w1", {width, static_cast<int64_t>(width) * ffn});
        bias(p + ".ffn.b1", static_cast<int64_t>(width) * ffn);
        weight(p + ".ffn.w2", {static_cast<int64_t>(width) * ffn, width});
        bias(p + ".ffn.b2", width);
    };

    for (const std::string m : {"audio", "visual"}) {
        const int din = m == "audio" ? cfg.audio_dim : cfg.visual_dim;
        conv_weight("proj." + m + ".conv1.w", {d, din, 3}, 3 * din);
        bias("proj." + m + ".conv1.b", d);
        conv_weight("proj." + m + ".conv2.w", {d, d, 3}, 3 * d);
        bias("proj." + m + ".conv2.b", d);
        for (int k = 0; k < cfg.unimodal_blocks; ++k)
            attn_ffn("uni." + m + ".b" + std::to_string(k), d, false);
    }

    for (int l = 1; l <= cfg.pyramid_levels; ++l) {
        const std::string p = "pyramid.b" + std::to_string(l);
        for (const char* s : {".ds_va", ".ds_av"}) {
            conv_weight(p + s + ".w", {d, 3}, 3);
            norm(p + s + "_ln", d);
        }
        attn_ffn(p + ".mca_va", d, true);
        attn_ffn(p + ".mca_av", d, true);
    }

    if (cfg.use_dependency) {
        weight("dep.in.w", {w, group});
        bias("dep.in.b", group);
        if (cfg.dep_simultaneous) attn_ffn("dep.sim", hdim, false);
        if (cfg.dep_consecutive) attn_ffn("dep.con", hdim, false);
        weight("dep.out.w", {group, w});
        bias("dep.out.b", w);
    }

    // classification head; final bias set to a low-probability prior so the
    // sigmoid starts near 0.01
    conv_weight("head.cls.conv1.w", {w, w, 3}, 3 * w);
    bias("head.cls.conv1.b", w);
    norm("head.cls.ln1", w);
    conv_weight("head.cls.conv2.w", {w, w, 3}, 3 * w);
    bias("head.cls.conv2.b", w);
    norm("head.cls.ln2", w);
    weight("head.cls.conv3.w", {cfg.classes, w, 3});
    auto& cls_b = store.create("head.cls.conv3.b", {cfg.classes});
    std::fill(cls_b.value.data.begin(), cls_b.value.data.end(),
              static_cast<T>(-std::log((1.0 - 0.01) / 0.01)));

    const int creg = cfg.regression_channels();
    conv_weight("head.reg.conv1.w", {w, w, 3}, 3 * w);
    bias("head.reg.conv1.b", w);
    conv_weight("head.reg.conv2.w", {w, w, 3}, 3 * w);
    bias("head.reg.conv2.b", w);
    weight("head.reg.conv3.w", {2 * creg, w, 3});
    auto& reg_b = store.create("head.reg.conv3.b", {2 * creg});
    std::fill(reg_b.value.data.begin(), reg_b.value.data.end(), T(1));
}

// ---- forward pieces ----

// Two conv+ReLU layers into the shared embedding space; padded rows zero.
template <typename T>
Val<T> project_inputs(BoundParams<T>& bp, const std::string& modality, Val<T> x, const Mask& mask) {
    Tape<T>& tape = bp.tape();
    const std::string p = "proj." + modality;
    Val<T> h = tape.mask_rows(x, mask);
    h = tape.relu(tape.conv1d(h, bp(p + ".conv1.w"), bp(p + ".conv1.b"), 1));
    h = tape.mask_rows(h, mask);
    h = tape.relu(tape.conv1d(h, bp(p + ".conv2.w"), bp(p + ".conv2.b"), 1));
    return tape.mask_rows(h, mask);
}

// Positional embedding plus the uni-modal self-attention stack.
template <typename T>
Val<T> encode_unimodal(BoundParams<T>& bp, const ModelConfig& cfg, const std::string& modality,
                       Val<T> h, const Mask& mask) {
    Tape<T>& tape = bp.tape();
    if (cfg.use_positional) {
        const auto& shape = tape.value(h).shape;
        h = tape.add(h, tape.constant(detail::positional_encoding<T>(static_cast<int>(shape[0]),
                                                                     static_cast<int>(shape[1]))));
        h = tape.mask_rows(h, mask);
    }
    for (int k = 0; k < cfg.unimodal_blocks; ++k) {
        const std::string p = "uni." + modality + ".b" + std::to_string(k);
        h = detail::seq_attn_ffn_block(bp, p, h, h, mask, cfg.heads);
    }
    return h;
}

template <typename T>
struct PyramidLevel {
    Val<T> fused;  // [T_l, 2D]
    Val<T> va;     // [T_l, D]
    Val<T> av;     // [T_l, D]
    Mask mask;
    LevelMeta meta;
};

// Depth-wise downsampling plus symmetric cross-attention per level; fused
// output is Concat(F_Va, F_Av).
template <typename T>
std::vector<PyramidLevel<T>> cross_modal_pyramid(BoundParams<T>& bp, const ModelConfig& cfg,
                                                 Val<T> va, Val<T> av, const Mask& mask, int valid) {
    Tape<T>& tape = bp.tape();
    std::vector<PyramidLevel<T>> levels;
    Mask cur_mask = mask;
    int cur_valid = valid;
    int stride_total = 1;
    for (int l = 1; l <= cfg.pyramid_levels; ++l) {
        const std::string p = "pyramid.b" + std::to_string(l);
        const int stride = l == 1 || !cfg.use_downsampling ? 1 : 2;
        stride_total *= stride;
        int next_valid = 0;
        Mask next_mask = detail::downsample_mask(cur_mask, cur_valid, stride, &next_valid);

        auto down = [&](Val<T> in, const char* name) {
            Val<T> out = tape.dwconv1d(in, bp(p + name + ".w"), Val<T>{}, stride);
            out = tape.layernorm(out, bp(p + std::string(name) + "_ln.g"),
                                 bp(p + std::string(name) + "_ln.b"));
            return tape.mask_rows(out, next_mask);
        };
        Val<T> va_hat = down(va, ".ds_va");
        Val<T> av_hat = down(av, ".ds_av");

        va = detail::seq_attn_ffn_block(bp, p + ".mca_va", av_hat, va_hat, next_mask, cfg.heads);
        av = detail::seq_attn_ffn_block(bp, p + ".mca_av", va_hat, av_hat, next_mask, cfg.heads);

        PyramidLevel<T> level;
        level.fused = tape.concat_cols(va, av);
        level.va = va;
        level.av = av;
        level.mask = next_mask;
        level.meta.length = static_cast<int>(tape.value(level.fused).dim(0));
        level.meta.valid = next_valid;
        level.meta.stride = stride_total;
        levels.push_back(level);
        cur_mask = std::move(next_mask);
        cur_valid = next_valid;
    }
    return levels;
}

// Simultaneous attention over hidden classes and consecutive attention over
// time, summed, inside an in/out linear pair. One parameter set for all
// levels; output shape equals input shape.
template <typename T>
Val<T> model_dependencies(BoundParams<T>& bp, const ModelConfig& cfg, Val<T> z, const Mask& mask) {
    Tape<T>& tape = bp.tape();
    const int64_t t = tape.value(z).dim(0);
    const int64_t cp = cfg.hidden_classes;
    const int64_t h = cfg.dependency_dim;

    Val<T> x = detail::linear(tape, z, bp("dep.in.w"), bp("dep.in.b"));
    Val<T> x3 = tape.reshape(x, {t, cp, h});

    Val<T> merged{};
    if (cfg.dep_simultaneous) {
        merged = detail::attn_ffn_block(bp, "dep.sim", x3, x3, Mask{}, cfg.heads);
    }
    if (cfg.dep_consecutive) {
        Val<T> xt = tape.swap01(x3);  // [C', T, H]
        Val<T> con = detail::attn_ffn_block(bp, "dep.con", xt, xt, mask, cfg.heads);
        con = tape.swap01(con);
        merged = merged.valid() ? tape.add(merged, con) : con;
    }
    if (!merged.valid()) merged = x3;

    Val<T> out = detail::linear(tape, tape.reshape(merged, {t, cp * h}), bp("dep.out.w"),
                                bp("dep.out.b"));
    return tape.mask_rows(out, mask);
}

// Shared classification/regression heads; dist is [2, Creg, T_l].
template <typename T>
void heads_forward(BoundParams<T>& bp, const ModelConfig& cfg, Val<T> z, const Mask& mask,
                   Val<T>* probs, Val<T>* dist) {
    Tape<T>& tape = bp.tape();
    const int64_t t = tape.value(z).dim(0);
    const int creg = cfg.regression_channels();

    Val<T> c = tape.conv1d(z, bp("head.cls.conv1.w"), bp("head.cls.conv1.b"), 1);
    c = tape.relu(tape.layernorm(c, bp("head.cls.ln1.g"), bp("head.cls.ln1.b")));
    c = tape.mask_rows(c, mask);
    c = tape.conv1d(c, bp("head.cls.conv2.w"), bp("head.cls.conv2.b"), 1);
    c = tape.relu(tape.layernorm(c, bp("head.cls.ln2.g"), bp("head.cls.ln2.b")));
    c = tape.mask_rows(c, mask);
    c = tape.conv1d(c, bp("head.cls.conv3.w"), bp("head.cls.conv3.b"), 1);
    *probs = tape.sigmoid(c);

    Val<T> r = tape.relu(tape.conv1d(z, bp("head.reg.conv1.w"), bp("head.reg.conv1.b"), 1));
    r = tape.mask_rows(r, mask);
    r = tape.relu(tape.conv1d(r, bp("head.reg.conv2.w"), bp("head.reg.conv2.b"), 1));
    r = tape.mask_rows(r, mask);
    r = tape.relu(tape.conv1d(r, bp("head.reg.conv3.w"), bp("head.reg.conv3.b"), 1));
    *dist = tape.reshape(tape.transpose(r), {2, creg, t});
}

// Full pass: projection, uni-modal encoding, pyramid, dependencies, heads.
template <typename T>
ForwardResult<T> forward(BoundParams<T>& bp, const ModelConfig& cfg, const Tensor<T>& audio,
                         const Tensor<T>& visual, const Mask& mask, int valid) {
    Tape<T>& tape = bp.tape();
    Val<T> a_in = tape.constant(audio);
    Val<T> v_in = tape.constant(visual);
    if (cfg.modality == "audio") v_in = tape.scale(v_in, T(0));
    if (cfg.modality == "visual") a_in = tape.scale(a_in, T(0));

    Val<T> fa = project_inputs(bp, "audio", a_in, mask);
    Val<T> fv = project_inputs(bp, "visual", v_in, mask);
    fa = encode_unimodal(bp, cfg, "audio", fa, mask);
    fv = encode_unimodal(bp, cfg, "visual", fv, mask);

    auto levels = cross_modal_pyramid(bp, cfg, fv, fa, mask, valid);

    ForwardResult<T> out;
    for (auto& level : levels) {
        Val<T> z = level.fused;
        if (cfg.use_dependency) z = model_dependencies(bp, cfg, z, level.mask);
        Val<T> probs{}, dist{};
        heads_forward(bp, cfg, z, level.mask, &probs, &dist);
        out.probs.push_back(probs);
        out.dist.push_back(dist);
        out.levels.push_back(level.meta);
    }
    return out;
}

template <typename T>
RawPredictions detach(const Tape<T>& tape, const ForwardResult<T>& fwd) {
    RawPredictions raw;
    raw.levels = fwd.levels;
    for (size_t l = 0; l < fwd.probs.size(); ++l) {
        raw.probs.push_back(tape.value(fwd.probs[l]).template cast<float>());
        raw.dist.push_back(tape.value(fwd.dist[l]).template cast<float>());
    }
    return raw;
}

}  // namespace davel::model
