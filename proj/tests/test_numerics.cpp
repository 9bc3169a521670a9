#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "davel/checkpoint.hpp"
#include "davel/grad_check.hpp"
#include "davel/param_store.hpp"
#include "davel/primitives.hpp"
#include "davel/rng.hpp"
#include "davel/tape.hpp"

using namespace davel;
using namespace davel::num;

namespace {

Tensor<double> random_tensor(std::vector<int64_t> shape, SeededRng& rng, double lo = -1.0,
                             double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Scalar objective: sum(out * R) with a fixed random weighting R, so output
// gradients are non-uniform.
template <typename BuildOp>
double checked_max_err(const std::vector<std::pair<std::string, std::vector<int64_t>>>& params,
                       BuildOp&& op, uint64_t seed = 5, double lo = -1.0, double hi = 1.0) {
    SeededRng rng(seed);
    ParamStore<double> store;
    for (const auto& [name, shape] : params) {
        auto& p = store.create(name, shape);
        p.value = random_tensor(shape, rng, lo, hi);
    }
    Tensor<double> weight;
    std::function<Val<double>(Tape<double>&, BoundParams<double>&)> build =
        [&](Tape<double>& tape, BoundParams<double>& bp) -> Val<double> {
        Val<double> out = op(tape, bp);
        if (weight.numel() == 0) {
            SeededRng wr(seed + 1000);
            weight = random_tensor(tape.value(out).shape, wr);
        }
        return tape.sum(tape.mul(out, tape.constant(weight)));
    };
    return grad_check<double>(build, store, 1e-4, 256).max_rel_err;
}

}  // namespace

TEST_CASE("seeded rng is reproducible and fork is independent") {
    SeededRng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    SeededRng c(42);
    c.next_u64();
    SeededRng f1 = c.fork(3);
    SeededRng f2 = SeededRng(42).fork(3);
    CHECK(f1.next_u64() == f2.next_u64());
    SeededRng d(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = d.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const int64_t k = d.uniform_int(10);
        CHECK(k >= 0);
        CHECK(k < 10);
    }
}

TEST_CASE("matmul identity") {
    Tensor<float> a({2, 2}, {1, 2, 3, 4});
    Tensor<float> eye({2, 2}, {1, 0, 0, 1});
    Tensor<float> out = eval_primitive(Primitive::kMatmul, std::vector<Tensor<float>>{a, eye});
    CHECK(out.data == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("softmax of a constant row is uniform and rows sum to 1") {
    Tensor<double> x({1, 3}, {0, 0, 0});
    Tensor<double> out = eval_primitive(Primitive::kSoftmax, std::vector<Tensor<double>>{x});
    for (double v : out.data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    SeededRng rng(3);
    Tensor<double> y = random_tensor({5, 7}, rng, -3.0, 3.0);
    Tensor<double> s = eval_primitive(Primitive::kSoftmax, std::vector<Tensor<double>>{y});
    for (int64_t r = 0; r < 5; ++r) {
        double sum = 0;
        for (int64_t c = 0; c < 7; ++c) sum += s.at2(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("layernorm normalizes to zero mean, unit variance pre-affine") {
    SeededRng rng(11);
    Tensor<double> x = random_tensor({4, 16}, rng, -2.0, 5.0);
    Tensor<double> gamma = Tensor<double>::full({16}, 1.0);
    Tensor<double> beta({16});
    Tensor<double> out =
        eval_primitive(Primitive::kLayerNorm, std::vector<Tensor<double>>{x, gamma, beta});
    for (int64_t r = 0; r < 4; ++r) {
        double mean = 0, var = 0;
        for (int64_t c = 0; c < 16; ++c) mean += out.at2(r, c);
        mean /= 16;
        for (int64_t c = 0; c < 16; ++c) var += (out.at2(r, c) - mean) * (out.at2(r, c) - mean);
        var /= 16;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("primitive error reporting") {
    Tensor<float> a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<float> b({2, 2}, {1, 0, 0, 1});
    CHECK_THROWS_AS(eval_primitive(Primitive::kMatmul, std::vector<Tensor<float>>{a, b}), ShapeError);
    try {
        eval_primitive(Primitive::kMatmul, std::vector<Tensor<float>>{a, b});
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2, 3]") != std::string::npos);
    }

    Tensor<float> bad({2}, {1, std::numeric_limits<float>::quiet_NaN()});
    CHECK_THROWS_AS(eval_primitive(Primitive::kRelu, std::vector<Tensor<float>>{bad}), NumericError);

    Tensor<float> x({2, 2}, {1, 2, 3, 4});
    Tensor<float> halfmask({2}, {0.5f, 1.0f});
    CHECK_THROWS_AS(eval_primitive(Primitive::kMaskedMean, std::vector<Tensor<float>>{x, halfmask}),
                    NumericError);
}

TEST_CASE("backward of sum gives all-ones gradient") {
    ParamStore<double> store;
    auto& w = store.create("w", {2, 2});
    w.value.data = {1, 2, 3, 4};
    Tape<double> tape;
    BoundParams<double> bp(tape, store);
    tape.backward(tape.sum(bp("w")));
    CHECK(w.grad.data == std::vector<double>{1, 1, 1, 1});
}

TEST_CASE("backward of sum of squares gives 2x") {
    ParamStore<double> store;
    auto& w = store.create("w", {2, 2});
    w.value.data = {1, 2, 3, 4};
    Tape<double> tape;
    BoundParams<double> bp(tape, store);
    Val<double> v = bp("w");
    tape.backward(tape.sum(tape.mul(v, v)));
    CHECK(w.grad.data == std::vector<double>{2, 4, 6, 8});
}

TEST_CASE("repeated backward accumulates into the sink") {
    ParamStore<double> store;
    auto& w = store.create("w", {3});
    w.value.data = {1, 1, 1};
    Tape<double> tape;
    BoundParams<double> bp(tape, store);
    Val<double> out = tape.sum(bp("w"));
    tape.backward(out);
    tape.backward(out);
    CHECK(w.grad.data[0] == doctest::Approx(2.0));
}

TEST_CASE("backward requires a scalar output") {
    ParamStore<double> store;
    store.create("w", {2, 2});
    Tape<double> tape;
    BoundParams<double> bp(tape, store);
    Val<double> v = bp("w");
    CHECK_THROWS_AS(tape.backward(v), ContractError);
}

TEST_CASE("grad_check is near-exact for a quadratic form") {
    const double err = checked_max_err({{"w", {4, 4}}}, [](Tape<double>& t, BoundParams<double>& bp) {
        Val<double> w = bp("w");
        return t.mul(w, w);
    });
    CHECK(err < 1e-8);
}

TEST_CASE("gradients: elementwise ops") {
    CHECK(checked_max_err({{"a", {3, 4}}, {"b", {3, 4}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              return t.add(bp("a"), bp("b"));
          }) < 1e-6);
    CHECK(checked_max_err({{"a", {3, 4}}, {"b", {3, 4}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              return t.sub(bp("a"), bp("b"));
          }) < 1e-6);
    CHECK(checked_max_err({{"a", {3, 4}}, {"b", {3, 4}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              return t.mul(bp("a"), bp("b"));
          }) < 1e-6);
    CHECK(checked_max_err({{"a", {3, 4}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              return t.scale(bp("a"), 2.5);
          }) < 1e-6);
    CHECK(checked_max_err({{"x", {3, 4}}, {"b", {4}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              return t.add_bias(bp("x"), bp("b"));
          }) < 1e-6);
}

TEST_CASE("gradients: matmul") {
    CHECK(checked_max_err({{"a", {3, 5}}, {"b", {5, 2}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              return t.matmul(bp("a"), bp("b"));
          }) < 1e-6);
}

TEST_CASE("gradients: activations and normalization") {
    // relu checked away from the kink at 0
    CHECK(checked_max_err(
              {{"x", {3, 4}}},
              [](Tape<double>& t, BoundParams<double>& bp) { return t.relu(bp("x")); }, 5, 0.5,
              1.5) < 1e-6);
    CHECK(checked_max_err(
              {{"x", {3, 4}}},
              [](Tape<double>& t, BoundParams<double>& bp) { return t.relu(bp("x")); }, 6, -1.5,
              -0.5) < 1e-6);
    CHECK(checked_max_err({{"x", {3, 4}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              return t.sigmoid(bp("x"));
          }) < 1e-6);
    CHECK(checked_max_err({{"x", {4, 6}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              return t.softmax(bp("x"));
          }) < 1e-6);
    CHECK(checked_max_err({{"x", {4, 6}}, {"g", {6}}, {"b", {6}}},
                          [](Tape<double>& t, BoundParams<double>& bp) {
                              return t.layernorm(bp("x"), bp("g"), bp("b"));
                          }) < 1e-5);
}

TEST_CASE("gradients: convolutions") {
    for (int stride : {1, 2}) {
        CHECK(checked_max_err({{"x", {7, 3}}, {"w", {4, 3, 3}}, {"b", {4}}},
                              [stride](Tape<double>& t, BoundParams<double>& bp) {
                                  return t.conv1d(bp("x"), bp("w"), bp("b"), stride);
                              }) < 1e-6);
        CHECK(checked_max_err({{"x", {7, 3}}, {"w", {4, 3, 3}}},
                              [stride](Tape<double>& t, BoundParams<double>& bp) {
                                  return t.conv1d(bp("x"), bp("w"), Val<double>{}, stride);
                              }) < 1e-6);
        CHECK(checked_max_err({{"x", {8, 5}}, {"w", {5, 3}}},
                              [stride](Tape<double>& t, BoundParams<double>& bp) {
                                  return t.dwconv1d(bp("x"), bp("w"), Val<double>{}, stride);
                              }) < 1e-6);
    }
}

TEST_CASE("gradients: attention with and without key mask") {
    CHECK(checked_max_err({{"q", {2, 4, 6}}, {"k", {2, 5, 6}}, {"v", {2, 5, 6}}},
                          [](Tape<double>& t, BoundParams<double>& bp) {
                              return t.attention(bp("q"), bp("k"), bp("v"), {}, 2);
                          }) < 1e-5);
    CHECK(checked_max_err({{"q", {1, 4, 6}}, {"k", {1, 5, 6}}, {"v", {1, 5, 6}}},
                          [](Tape<double>& t, BoundParams<double>& bp) {
                              return t.attention(bp("q"), bp("k"), bp("v"), Mask{1, 1, 1, 0, 0}, 3);
                          }) < 1e-5);
}

TEST_CASE("attention over fully-masked keys yields zero rows") {
    SeededRng rng(9);
    Tape<float> tape;
    auto q = tape.constant(random_tensor({1, 3, 4}, rng).cast<float>());
    auto k = tape.constant(random_tensor({1, 3, 4}, rng).cast<float>());
    auto v = tape.constant(random_tensor({1, 3, 4}, rng).cast<float>());
    auto out = tape.attention(q, k, v, Mask{0, 0, 0}, 2);
    for (float x : tape.value(out).data) CHECK(x == 0.0f);
}

TEST_CASE("masked keys receive exactly zero attention weight") {
    // With key 2 masked out, moving v[2] must not change the output.
    SeededRng rng(13);
    Tensor<double> q = random_tensor({1, 2, 4}, rng);
    Tensor<double> k = random_tensor({1, 3, 4}, rng);
    Tensor<double> v = random_tensor({1, 3, 4}, rng);
    Tape<double> t1;
    auto o1 = t1.attention(t1.constant(q), t1.constant(k), t1.constant(v), Mask{1, 1, 0}, 2);
    for (int64_t c = 0; c < 4; ++c) v.data[static_cast<size_t>(2 * 4 + c)] += 100.0;
    Tape<double> t2;
    auto o2 = t2.attention(t2.constant(q), t2.constant(k), t2.constant(v), Mask{1, 1, 0}, 2);
    CHECK(t1.value(o1).data == t2.value(o2).data);
}

TEST_CASE("gradients: data movement and reductions") {
    CHECK(checked_max_err({{"a", {3, 4}}, {"b", {3, 2}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              return t.concat_cols(bp("a"), bp("b"));
          }) < 1e-6);
    CHECK(checked_max_err({{"x", {3, 4}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              return t.reshape(bp("x"), {2, 6});
          }) < 1e-6);
    CHECK(checked_max_err({{"x", {3, 4}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              return t.transpose(bp("x"));
          }) < 1e-6);
    CHECK(checked_max_err({{"x", {2, 3, 4}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              return t.swap01(bp("x"));
          }) < 1e-6);
    CHECK(checked_max_err({{"x", {4, 3}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              return t.mask_rows(bp("x"), Mask{1, 1, 0, 1});
          }) < 1e-6);
    CHECK(checked_max_err({{"x", {4, 3}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              return t.masked_mean(bp("x"), Mask{1, 0, 1, 1});
          }) < 1e-6);
    CHECK(checked_max_err({{"x", {4, 3}}}, [](Tape<double>& t, BoundParams<double>& bp) {
              Val<double> s = t.sum(bp("x"));
              return t.mul(s, s);
          }) < 1e-8);
}

TEST_CASE("masked_mean matches a manual average over valid rows") {
    Tensor<float> x({3, 2}, {1, 2, 10, 20, 3, 4});
    Tensor<float> m({3}, {1, 0, 1});
    Tensor<float> out = eval_primitive(Primitive::kMaskedMean, std::vector<Tensor<float>>{x, m});
    CHECK(out.data[0] == doctest::Approx(2.0f));
    CHECK(out.data[1] == doctest::Approx(3.0f));
}

TEST_CASE("checkpoint container round trip") {
    ParamStore<float> store;
    SeededRng rng(21);
    auto& a = store.create("alpha.w", {3, 4});
    auto& b = store.create("beta.bias", {5});
    for (float& v : a.value.data) v = static_cast<float>(rng.normal());
    for (float& v : b.value.data) v = static_cast<float>(rng.normal());

    const std::string path = (std::filesystem::temp_directory_path() / "davel_ckpt_test.davt").string();
    save_checkpoint(path, store);
    ParamStore<float> loaded = load_checkpoint(path);
    CHECK(loaded.size() == 2);
    CHECK(loaded.at("alpha.w").value.shape == std::vector<int64_t>{3, 4});
    CHECK(loaded.at("alpha.w").value.data == a.value.data);
    CHECK(loaded.at("beta.bias").value.data == b.value.data);

    auto entries = checkpoint_entries(path);
    CHECK(entries.size() == 2);
    CHECK(entries[0].first == "alpha.w");

    // corrupt header
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE";
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("tape evaluation is deterministic") {
    auto run = [] {
        SeededRng rng(77);
        Tape<float> tape;
        auto x = tape.constant(random_tensor({6, 8}, rng).cast<float>());
        auto w = tape.constant(random_tensor({8, 8}, rng).cast<float>());
        auto h = tape.relu(tape.matmul(x, w));
        auto s = tape.softmax(h);
        return tape.value(tape.sum(s)).data[0];
    };
    CHECK(run() == run());
}
