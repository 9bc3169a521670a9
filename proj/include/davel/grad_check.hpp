#pragma once

#include <algorithm>
#include <functional>
#include <string>

#include "davel/param_store.hpp"
#include "davel/rng.hpp"
#include "davel/tape.hpp"

namespace davel::num {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    int64_t coords_checked = 0;
    int64_t coords_nonsmooth = 0;  // FD-oracle-invalid coordinates (see below)
};

// Central-difference check of reverse-mode gradients. `build` must be a
// deterministic function of the store contents; coordinates are sampled
// per parameter when a tensor is larger than `max_coords_per_param`.
//
// The difference quotient is only a valid derivative oracle where the
// objective is smooth over [x-h, x+h]. A ReLU or min/max kink inside that
// window makes the quotient measure a chord, not the derivative. Each
// evaluation therefore records the tape's branch signature; a coordinate
// whose perturbed evaluations land on different smooth pieces (or whose h
// and h/2 estimates disagree) is counted in coords_nonsmooth and excluded.
// A wrong analytic gradient still fails: its perturbations stay on one
// piece, both estimates agree with each other, and neither matches.
template <typename T>
GradCheckReport grad_check(const std::function<Val<T>(Tape<T>&, BoundParams<T>&)>& build,
                           ParamStore<T>& store, double h = 1e-3,
                           int64_t max_coords_per_param = 64, uint64_t sample_seed = 17) {
    store.zero_grads();
    {
        Tape<T> tape;
        BoundParams<T> bp(tape, store);
        Val<T> out = build(tape, bp);
        tape.backward(out);
    }

    struct Eval {
        double f;
        uint64_t sig;
    };
    auto eval = [&]() -> Eval {
        Tape<T> tape;
        tape.enable_branch_tracking();
        BoundParams<T> bp(tape, store);
        Val<T> out = build(tape, bp);
        return {static_cast<double>(tape.value(out).data[0]), tape.branch_signature()};
    };

    GradCheckReport report;
    SeededRng rng(sample_seed);
    for (auto& [name, p] : store) {
        const int64_t n = p.value.numel();
        std::vector<int64_t> coords;
        if (n <= max_coords_per_param) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (int64_t i = 0; i < max_coords_per_param; ++i)
                coords.push_back(rng.uniform_int(n));
            std::sort(coords.begin(), coords.end());
            coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
        }
        for (int64_t idx : coords) {
            const T saved = p.value.data[static_cast<size_t>(idx)];
            bool same_piece = true;
            uint64_t sig0 = 0;
            bool have_sig = false;
            auto fd = [&](double step) {
                p.value.data[static_cast<size_t>(idx)] = saved + static_cast<T>(step);
                const Eval plus = eval();
                p.value.data[static_cast<size_t>(idx)] = saved - static_cast<T>(step);
                const Eval minus = eval();
                p.value.data[static_cast<size_t>(idx)] = saved;
                if (!have_sig) {
                    sig0 = plus.sig;
                    have_sig = true;
                }
                same_piece = same_piece && plus.sig == sig0 && minus.sig == sig0;
                return (plus.f - minus.f) / (2.0 * step);
            };
            const double fd_h = fd(h);
            const double fd_h2 = fd(h / 2);
            const double analytic = static_cast<double>(p.grad.data[static_cast<size_t>(idx)]);

            const double scale = std::max({std::fabs(fd_h), std::fabs(fd_h2), std::fabs(analytic), 1e-8});
            if (!same_piece || std::fabs(fd_h - fd_h2) > 5e-4 * scale) {
                ++report.coords_nonsmooth;
                continue;
            }
            // Richardson step cancels the h^2 truncation term.
            const double numeric = (4.0 * fd_h2 - fd_h) / 3.0;
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            const double rel = std::fabs(analytic - numeric) / denom;
            ++report.coords_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = name;
                report.worst_index = idx;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace davel::num
