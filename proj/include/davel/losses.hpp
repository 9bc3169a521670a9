#pragma once

#include <algorithm>
#include <cmath>

#include "davel/assign.hpp"
#include "davel/model.hpp"
#include "davel/tape.hpp"

namespace davel::train {

constexpr double kProbClamp = 1e-6;

// Binary focal term for one probability. alpha weights the positive class;
// probabilities are clamped to [1e-6, 1-1e-6].
inline double focal_loss(double p, int y, double alpha, double gamma) {
    p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    if (y) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
    return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

// 1-D generalized IoU of distance pairs anchored at a common origin. The
// intervals [-d_s, d_e] always share the anchor, so the hull equals the
// union and the loss stays in [0, 1].
inline double giou_loss_1d(double ds, double de, double ds_t, double de_t) {
    if (ds < 0 || de < 0 || ds_t < 0 || de_t < 0)
        throw AssignmentError("giou_loss_1d: distances must be non-negative");
    if (ds_t + de_t <= 0) throw AssignmentError("giou_loss_1d: degenerate regression target");
    const double inter = std::min(ds, ds_t) + std::min(de, de_t);
    const double uni = std::max(ds, ds_t) + std::max(de, de_t);
    return 1.0 - inter / uni;
}

struct LossBreakdown {
    double total = 0;
    double cls = 0;       // raw focal sum over valid steps and classes
    double reg = 0;       // raw giou sum over positives
    int total_steps = 0;  // T: valid steps over all levels
    int positives = 0;    // N: positive (level, step, class) triples
};

// Differentiable focal sum over one level: probs [T_l, C], target grid 0/1
// of the same shape, padded steps excluded.
template <typename T>
num::Val<T> focal_sum(num::Tape<T>& tape, num::Val<T> probs, const num::Tensor<T>& targets,
                      const num::Mask& valid, double alpha, double gamma) {
    const num::Tensor<T>& pv = tape.value(probs);
    if (!pv.same_shape(targets))
        throw ShapeError("focal_sum: probs " + pv.shape_string() + " vs targets " +
                         targets.shape_string());
    const int64_t rows = pv.dim(0), cols = pv.dim(1);
    double total = 0, comp = 0;
    uint64_t clamp_sig = 1469598103934665603ULL;
    for (int64_t r = 0; r < rows; ++r) {
        if (!valid[static_cast<size_t>(r)]) continue;
        for (int64_t c = 0; c < cols; ++c) {
            const double p = static_cast<double>(pv.at2(r, c));
            clamp_sig = (clamp_sig * 1099511628211ULL) ^
                        static_cast<uint64_t>(p < kProbClamp || p > 1.0 - kProbClamp);
            const double y = focal_loss(p, targets.at2(r, c) != T(0), alpha, gamma) - comp;
            const double t = total + y;
            comp = (t - total) - y;
            total = t;
        }
    }
    if (tape.branch_tracking()) tape.note_branch(clamp_sig);
    num::Tensor<T> out({1});
    out.data[0] = static_cast<T>(total);
    return tape.custom(
        {probs}, std::move(out),
        [probs, targets, valid, alpha, gamma, rows, cols](num::Tape<T>& t, int self) {
            const T g = t.grad_of(self).data[0];
            num::Tensor<T>* gp = t.grad_target(probs.id);
            if (!gp) return;
            const num::Tensor<T>& pv2 = t.value(probs);
            for (int64_t r = 0; r < rows; ++r) {
                if (!valid[static_cast<size_t>(r)]) continue;
                for (int64_t c = 0; c < cols; ++c) {
                    const double p_raw = static_cast<double>(pv2.at2(r, c));
                    if (p_raw < kProbClamp || p_raw > 1.0 - kProbClamp) continue;  // clamped flat
                    const double p = p_raw;
                    double d;
                    if (targets.at2(r, c) != T(0)) {
                        d = -alpha * (std::pow(1.0 - p, gamma) / p -
                                      gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p));
                    } else {
                        d = -(1.0 - alpha) * (gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p) -
                                              std::pow(p, gamma) / (1.0 - p));
                    }
                    gp->at2(r, c) += g * static_cast<T>(d);
                }
            }
        });
}

// Differentiable giou sum over this level's positives: dist [2, Creg, T_l].
template <typename T>
num::Val<T> giou_sum(num::Tape<T>& tape, num::Val<T> dist,
                     const std::vector<PositiveSample>& positives, int level, int creg) {
    const num::Tensor<T>& dv = tape.value(dist);
    const int64_t tl = dv.dim(2);
    double total = 0;
    uint64_t branch_sig = 1469598103934665603ULL;
    for (const PositiveSample& p : positives) {
        if (p.level != level) continue;
        const int c = creg == 1 ? 0 : p.label;
        const double ds = static_cast<double>(dv.data[static_cast<size_t>((0 * dv.dim(1) + c) * tl + p.step)]);
        const double de = static_cast<double>(dv.data[static_cast<size_t>((1 * dv.dim(1) + c) * tl + p.step)]);
        total += giou_loss_1d(ds, de, p.d_start, p.d_end);
        branch_sig = (branch_sig * 1099511628211ULL) ^ static_cast<uint64_t>(ds < p.d_start) ^
                     (static_cast<uint64_t>(de < p.d_end) << 1);
    }
    if (tape.branch_tracking()) tape.note_branch(branch_sig);
    num::Tensor<T> out({1});
    out.data[0] = static_cast<T>(total);
    return tape.custom({dist}, std::move(out), [dist, positives, level, creg](num::Tape<T>& t,
                                                                              int self) {
        const T g = t.grad_of(self).data[0];
        num::Tensor<T>* gd = t.grad_target(dist.id);
        if (!gd) return;
        const num::Tensor<T>& dv2 = t.value(dist);
        const int64_t tl2 = dv2.dim(2);
        const int64_t cr = dv2.dim(1);
        for (const PositiveSample& p : positives) {
            if (p.level != level) continue;
            const int c = creg == 1 ? 0 : p.label;
            const size_t i_ds = static_cast<size_t>((0 * cr + c) * tl2 + p.step);
            const size_t i_de = static_cast<size_t>((1 * cr + c) * tl2 + p.step);
            const double ds = static_cast<double>(dv2.data[i_ds]);
            const double de = static_cast<double>(dv2.data[i_de]);
            const double inter = std::min(ds, p.d_start) + std::min(de, p.d_end);
            const double uni = std::max(ds, p.d_start) + std::max(de, p.d_end);
            // d(1 - I/U)/dx = -(dI*U - I*dU)/U^2
            const double di_ds = ds < p.d_start ? 1.0 : 0.0;
            const double du_ds = ds >= p.d_start ? 1.0 : 0.0;
            const double di_de = de < p.d_end ? 1.0 : 0.0;
            const double du_de = de >= p.d_end ? 1.0 : 0.0;
            gd->data[i_ds] += g * static_cast<T>(-(di_ds * uni - inter * du_ds) / (uni * uni));
            gd->data[i_de] += g * static_cast<T>(-(di_de * uni - inter * du_de) / (uni * uni));
        }
    });
}

struct LossParams {
    double lambda_reg = 1.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    bool cls_norm_by_positives = false;  // alternative normalization, off by default
};

template <typename T>
struct LossNodes {
    num::Val<T> total;
    LossBreakdown values;
};

// total = cls_sum / T + lambda * reg_sum / N; the regression term vanishes
// (value and gradient) when there are no positives.
template <typename T>
LossNodes<T> total_loss(num::Tape<T>& tape, const model::ForwardResult<T>& fwd,
                        const TargetAssignment& targets, const model::ModelConfig& cfg,
                        const LossParams& lp) {
    LossNodes<T> out;
    out.values.total_steps = targets.total_steps;
    out.values.positives = static_cast<int>(targets.positives.size());

    num::Val<T> cls_sum{};
    num::Val<T> reg_sum{};
    for (size_t l = 0; l < fwd.probs.size(); ++l) {
        const model::LevelMeta& meta = fwd.levels[l];
        num::Tensor<T> grid({meta.length, cfg.classes});
        for (const PositiveSample& p : targets.positives)
            if (p.level == static_cast<int>(l)) grid.at2(p.step, p.label) = T(1);
        num::Mask valid(static_cast<size_t>(meta.length), 0);
        std::fill(valid.begin(), valid.begin() + meta.valid, 1);

        num::Val<T> fl = focal_sum(tape, fwd.probs[l], grid, valid, lp.focal_alpha, lp.focal_gamma);
        cls_sum = cls_sum.valid() ? tape.add(cls_sum, fl) : fl;

        num::Val<T> gl = giou_sum(tape, fwd.dist[l], targets.positives, static_cast<int>(l),
                                  cfg.regression_channels());
        reg_sum = reg_sum.valid() ? tape.add(reg_sum, gl) : gl;
    }

    out.values.cls = static_cast<double>(tape.value(cls_sum).data[0]);
    out.values.reg = static_cast<double>(tape.value(reg_sum).data[0]);

    const double cls_norm = lp.cls_norm_by_positives
                                ? std::max(out.values.positives, 1)
                                : std::max(out.values.total_steps, 1);
    num::Val<T> total = tape.scale(cls_sum, static_cast<T>(1.0 / cls_norm));
    if (out.values.positives > 0 && lp.lambda_reg != 0.0) {
        total = tape.add(
            total, tape.scale(reg_sum, static_cast<T>(lp.lambda_reg / out.values.positives)));
    }
    out.total = total;
    out.values.total = static_cast<double>(tape.value(total).data[0]);
    return out;
}

}  // namespace davel::train
