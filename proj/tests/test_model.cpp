#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "davel/grad_check.hpp"
#include "davel/model.hpp"

using namespace davel;
using namespace davel::model;
using davel::num::Mask;
using davel::num::ParamStore;
using davel::num::Tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.embed_dim = 8;
    cfg.unimodal_blocks = 1;
    cfg.pyramid_levels = 2;
    cfg.heads = 2;
    cfg.classes = 3;
    cfg.hidden_classes = 2;
    cfg.dependency_dim = 4;
    cfg.ffn_ratio = 2;
    cfg.t_max = 8;
    cfg.audio_dim = 5;
    cfg.visual_dim = 6;
    return cfg;
}

template <typename T>
Tensor<T> random_stream(int t, int d, SeededRng& rng) {
    Tensor<T> x({t, d});
    for (T& v : x.data) v = static_cast<T>(rng.normal());
    return x;
}

Mask prefix_mask(int t, int valid) {
    Mask m(static_cast<size_t>(t), 0);
    std::fill(m.begin(), m.begin() + valid, 1);
    return m;
}

}  // namespace

TEST_CASE("pyramid level lengths follow ceil halving") {
    SUBCASE("T=224, 6 levels") {
        ModelConfig cfg = tiny_config();
        cfg.pyramid_levels = 6;
        cfg.t_max = 224;
        ParamStore<float> store;
        SeededRng rng(1);
        init_params(cfg, store, rng);
        Tape<float> tape;
        BoundParams<float> bp(tape, store);
        SeededRng data_rng(2);
        auto fwd = forward(bp, cfg, random_stream<float>(224, cfg.audio_dim, data_rng),
                           random_stream<float>(224, cfg.visual_dim, data_rng),
                           prefix_mask(224, 224), 224);
        std::vector<int> lens, strides;
        for (const auto& m : fwd.levels) {
            lens.push_back(m.length);
            strides.push_back(m.stride);
        }
        CHECK(lens == std::vector<int>{224, 112, 56, 28, 14, 7});
        CHECK(strides == std::vector<int>{1, 2, 4, 8, 16, 32});
    }
    SUBCASE("T=64, 4 levels") {
        ModelConfig cfg = tiny_config();
        cfg.pyramid_levels = 4;
        cfg.t_max = 64;
        ParamStore<float> store;
        SeededRng rng(1);
        init_params(cfg, store, rng);
        Tape<float> tape;
        BoundParams<float> bp(tape, store);
        SeededRng data_rng(2);
        auto fwd = forward(bp, cfg, random_stream<float>(64, cfg.audio_dim, data_rng),
                           random_stream<float>(64, cfg.visual_dim, data_rng), prefix_mask(64, 64),
                           64);
        std::vector<int> lens;
        for (const auto& m : fwd.levels) lens.push_back(m.length);
        CHECK(lens == std::vector<int>{64, 32, 16, 8});
    }
}

TEST_CASE("tiny config output shapes and ranges") {
    ModelConfig cfg = tiny_config();
    ParamStore<float> store;
    SeededRng rng(3);
    init_params(cfg, store, rng);
    Tape<float> tape;
    BoundParams<float> bp(tape, store);
    SeededRng data_rng(4);
    auto fwd = forward(bp, cfg, random_stream<float>(8, 5, data_rng),
                       random_stream<float>(8, 6, data_rng), prefix_mask(8, 8), 8);
    REQUIRE(fwd.probs.size() == 2);
    CHECK(tape.value(fwd.probs[0]).shape == std::vector<int64_t>{8, 3});
    CHECK(tape.value(fwd.probs[1]).shape == std::vector<int64_t>{4, 3});
    CHECK(tape.value(fwd.dist[0]).shape == std::vector<int64_t>{2, 3, 8});
    CHECK(tape.value(fwd.dist[1]).shape == std::vector<int64_t>{2, 3, 4});
    for (size_t l = 0; l < 2; ++l) {
        for (float p : tape.value(fwd.probs[l]).data) {
            CHECK(p >= 0.0f);
            CHECK(p <= 1.0f);
        }
        for (float d : tape.value(fwd.dist[l]).data) CHECK(d >= 0.0f);
    }
}

TEST_CASE("fused pyramid channels are 2D wide and dependency preserves shape") {
    ModelConfig cfg = tiny_config();
    ParamStore<float> store;
    SeededRng rng(5);
    init_params(cfg, store, rng);
    Tape<float> tape;
    BoundParams<float> bp(tape, store);
    SeededRng data_rng(6);
    Mask mask = prefix_mask(8, 6);
    auto fa = project_inputs(bp, "audio", tape.constant(random_stream<float>(8, 5, data_rng)), mask);
    auto fv = project_inputs(bp, "visual", tape.constant(random_stream<float>(8, 6, data_rng)), mask);
    auto levels = cross_modal_pyramid(bp, cfg, fv, fa, mask, 6);
    for (const auto& level : levels) {
        CHECK(tape.value(level.fused).dim(1) == 2 * cfg.embed_dim);
        auto dep = model_dependencies(bp, cfg, level.fused, level.mask);
        CHECK(tape.value(dep).shape == tape.value(level.fused).shape);
    }
    // ceil halving of the valid prefix
    CHECK(levels[0].meta.valid == 6);
    CHECK(levels[1].meta.valid == 3);
}

TEST_CASE("dependency with both branches disabled is the in/out linear pair") {
    ModelConfig cfg = tiny_config();
    cfg.dep_simultaneous = false;
    cfg.dep_consecutive = false;
    ParamStore<double> store;
    SeededRng rng(7);
    init_params(cfg, store, rng);
    Tape<double> tape;
    BoundParams<double> bp(tape, store);
    SeededRng data_rng(8);
    Tensor<double> z = random_stream<double>(5, 2 * cfg.embed_dim, data_rng);
    Mask mask = prefix_mask(5, 5);
    auto out = model_dependencies(bp, cfg, tape.constant(z), mask);

    // manual in/out linear composition
    const auto& win = store.at("dep.in.w").value;
    const auto& bin = store.at("dep.in.b").value;
    const auto& wout = store.at("dep.out.w").value;
    const auto& bout = store.at("dep.out.b").value;
    Tensor<double> mid = num::detail::matmul(z, win);
    for (int64_t r = 0; r < mid.rows(); ++r)
        for (int64_t c = 0; c < mid.cols(); ++c) mid.at2(r, c) += bin.data[static_cast<size_t>(c)];
    Tensor<double> expect = num::detail::matmul(mid, wout);
    for (int64_t r = 0; r < expect.rows(); ++r)
        for (int64_t c = 0; c < expect.cols(); ++c)
            expect.at2(r, c) += bout.data[static_cast<size_t>(c)];
    const auto& got = tape.value(out);
    for (int64_t i = 0; i < got.numel(); ++i)
        CHECK(got.data[static_cast<size_t>(i)] ==
              doctest::Approx(expect.data[static_cast<size_t>(i)]).epsilon(1e-9));
}

TEST_CASE("encode_unimodal with zero blocks is identity plus positional embedding") {
    ModelConfig cfg = tiny_config();
    cfg.unimodal_blocks = 0;
    ParamStore<double> store;
    SeededRng rng(9);
    init_params(cfg, store, rng);
    Tape<double> tape;
    BoundParams<double> bp(tape, store);
    SeededRng data_rng(10);
    Tensor<double> x = random_stream<double>(8, cfg.embed_dim, data_rng);
    Mask mask = prefix_mask(8, 8);

    auto with_pe = encode_unimodal(bp, cfg, "audio", tape.constant(x), mask);
    auto pe = detail::positional_encoding<double>(8, cfg.embed_dim);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(tape.value(with_pe).data[static_cast<size_t>(i)] ==
              doctest::Approx(x.data[static_cast<size_t>(i)] + pe.data[static_cast<size_t>(i)]));

    cfg.use_positional = false;
    auto ident = encode_unimodal(bp, cfg, "audio", tape.constant(x), mask);
    CHECK(tape.value(ident).data == x.data);
}

TEST_CASE("outputs at valid steps ignore padded-region values") {
    ModelConfig cfg = tiny_config();
    ParamStore<float> store;
    SeededRng rng(11);
    init_params(cfg, store, rng);
    SeededRng data_rng(12);
    Tensor<float> audio = random_stream<float>(8, 5, data_rng);
    Tensor<float> visual = random_stream<float>(8, 6, data_rng);
    Mask mask = prefix_mask(8, 5);

    auto run = [&](const Tensor<float>& a, const Tensor<float>& v) {
        Tape<float> tape;
        BoundParams<float> bp(tape, store);
        auto fwd = forward(bp, cfg, a, v, mask, 5);
        return detach(tape, fwd);
    };
    RawPredictions base = run(audio, visual);

    Tensor<float> audio2 = audio;
    Tensor<float> visual2 = visual;
    for (int64_t t = 5; t < 8; ++t) {
        for (int64_t c = 0; c < 5; ++c) audio2.at2(t, c) = 999.0f + static_cast<float>(t + c);
        for (int64_t c = 0; c < 6; ++c) visual2.at2(t, c) = -555.0f * static_cast<float>(c + 1);
    }
    RawPredictions poked = run(audio2, visual2);

    for (size_t l = 0; l < base.probs.size(); ++l) {
        const int valid = base.levels[l].valid;
        const auto& p0 = base.probs[l];
        const auto& p1 = poked.probs[l];
        for (int t = 0; t < valid; ++t)
            for (int64_t c = 0; c < p0.cols(); ++c) CHECK(p0.at2(t, c) == p1.at2(t, c));
        const auto& d0 = base.dist[l];
        const auto& d1 = poked.dist[l];
        const int64_t tl = d0.dim(2);
        for (int64_t j = 0; j < 2; ++j)
            for (int64_t c = 0; c < d0.dim(1); ++c)
                for (int t = 0; t < valid; ++t)
                    CHECK(d0.data[static_cast<size_t>((j * d0.dim(1) + c) * tl + t)] ==
                          d1.data[static_cast<size_t>((j * d0.dim(1) + c) * tl + t)]);
    }
}

TEST_CASE("head and dependency parameters are shared across levels") {
    ModelConfig a = tiny_config();
    ModelConfig b = tiny_config();
    b.pyramid_levels = 4;
    ParamStore<float> sa, sb;
    SeededRng r1(13), r2(13);
    init_params(a, sa, r1);
    init_params(b, sb, r2);
    std::set<std::string> heads_a, heads_b;
    for (const auto& [name, p] : sa)
        if (name.rfind("head.", 0) == 0 || name.rfind("dep.", 0) == 0) heads_a.insert(name);
    for (const auto& [name, p] : sb)
        if (name.rfind("head.", 0) == 0 || name.rfind("dep.", 0) == 0) heads_b.insert(name);
    CHECK(heads_a == heads_b);
    // no per-level copies hiding under the shared prefixes
    for (const auto& name : heads_a) {
        CHECK(name.find(".b1.") == std::string::npos);
        CHECK(name.find(".b2.") == std::string::npos);
    }
}

TEST_CASE("forward is deterministic") {
    ModelConfig cfg = tiny_config();
    ParamStore<float> store;
    SeededRng rng(15);
    init_params(cfg, store, rng);
    SeededRng data_rng(16);
    Tensor<float> audio = random_stream<float>(8, 5, data_rng);
    Tensor<float> visual = random_stream<float>(8, 6, data_rng);
    Mask mask = prefix_mask(8, 8);
    auto run = [&] {
        Tape<float> tape;
        BoundParams<float> bp(tape, store);
        auto fwd = forward(bp, cfg, audio, visual, mask, 8);
        return detach(tape, fwd);
    };
    RawPredictions x = run(), y = run();
    for (size_t l = 0; l < x.probs.size(); ++l) {
        CHECK(x.probs[l].data == y.probs[l].data);
        CHECK(x.dist[l].data == y.dist[l].data);
    }
}

TEST_CASE("modality switches zero out the other stream") {
    ModelConfig cfg = tiny_config();
    cfg.modality = "audio";
    ParamStore<float> store;
    SeededRng rng(17);
    init_params(cfg, store, rng);
    SeededRng data_rng(18);
    Tensor<float> audio = random_stream<float>(8, 5, data_rng);
    Tensor<float> visual = random_stream<float>(8, 6, data_rng);
    Mask mask = prefix_mask(8, 8);
    auto run = [&](const Tensor<float>& v) {
        Tape<float> tape;
        BoundParams<float> bp(tape, store);
        auto fwd = forward(bp, cfg, audio, v, mask, 8);
        return detach(tape, fwd);
    };
    // with modality=audio the visual stream contents must not matter
    RawPredictions x = run(visual);
    RawPredictions y = run(random_stream<float>(8, 6, data_rng));
    for (size_t l = 0; l < x.probs.size(); ++l) CHECK(x.probs[l].data == y.probs[l].data);
}

TEST_CASE("end-to-end gradients match finite differences on the tiny model") {
    ModelConfig cfg = tiny_config();
    ParamStore<double> store;
    SeededRng rng(19);
    init_params(cfg, store, rng);
    SeededRng data_rng(20);
    Tensor<double> audio = random_stream<double>(8, 5, data_rng);
    Tensor<double> visual = random_stream<double>(8, 6, data_rng);
    Mask mask = prefix_mask(8, 6);

    auto build = [&](Tape<double>& tape, BoundParams<double>& bp) {
        auto fwd = forward(bp, cfg, audio, visual, mask, 6);
        // O(1)-scale reduction over every head output
        Val<double> total{};
        int64_t n = 0;
        for (size_t l = 0; l < fwd.probs.size(); ++l) {
            Val<double> s = tape.add(tape.sum(fwd.probs[l]), tape.sum(fwd.dist[l]));
            n += tape.value(fwd.probs[l]).numel() + tape.value(fwd.dist[l]).numel();
            total = total.valid() ? tape.add(total, s) : s;
        }
        return tape.scale(total, 1.0 / static_cast<double>(n));
    };
    auto report = num::grad_check<double>(build, store, 1e-3, 6, 23);
    CAPTURE(report.worst_param);
    CAPTURE(report.analytic);
    CAPTURE(report.numeric);
    CHECK(report.max_rel_err < 1e-4);
}
