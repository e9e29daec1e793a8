#include <cmath>

#include "checks.hpp"
#include "doctest.h"
#include "fragmix/memory.hpp"
#include "fragmix/mixer.hpp"
#include "fragmix/tmm.hpp"

using namespace fragmix;
using namespace fragmix::mixer;
using fragmix::testing::max_abs_diff;
using fragmix::testing::random_normal;
using fragmix::testing::random_tensor;

namespace {

// Attention assembled from primitive ops; the tape differentiates it.
Tensor composed_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    return ops::matmul(ops::softmax_lastdim(ops::scale(ops::matmul(q, ops::transpose(k)), scale)), v);
}

struct Grads {
    std::vector<double> q, k, v;
};

Grads grads_of(const std::function<Tensor(const Tensor&, const Tensor&, const Tensor&)>& f, Tensor q, Tensor k,
               Tensor v, const Tensor& probe) {
    q = q.detach();
    k = k.detach();
    v = v.detach();
    q.set_requires_grad(true);
    k.set_requires_grad(true);
    v.set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(ops::sum(ops::mul(f(q, k, v), probe)));
    }
    return {{q.grad().begin(), q.grad().end()}, {k.grad().begin(), k.grad().end()},
            {v.grad().begin(), v.grad().end()}};
}

double rel(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0, r = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += (a[i] - b[i]) * (a[i] - b[i]);
        r += b[i] * b[i];
    }
    return std::sqrt(d) / std::max(std::sqrt(r), 1e-300);
}

}  // namespace

TEST_CASE("single token attention returns V") {
    Rng rng(1);
    const Tensor q = random_tensor({1, 4}, rng), k = random_tensor({1, 4}, rng), v = random_tensor({1, 4}, rng);
    CHECK(max_abs_diff(attention_naive(q, k, v).data(), v.data()) < 1e-15);
    CHECK(max_abs_diff(attention_blockwise(q, k, v, 8).data(), v.data()) < 1e-15);
}

TEST_CASE("zero queries give column means of V") {
    Rng rng(2);
    const Tensor q = Tensor::zeros({5, 3}), k = random_tensor({5, 3}, rng), v = random_tensor({5, 3}, rng);
    const Tensor out = attention_naive(q, k, v);
    const Tensor mean = ops::mean_rows(v);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t c = 0; c < 3; ++c) CHECK(out.at(i, c) == doctest::Approx(mean[c]).epsilon(1e-14));
}

TEST_CASE("d = 1 hand softmax") {
    const Tensor x({2, 1}, {1.0, 2.0});
    const Tensor out = attention_naive(x, x, x);
    // Row i weights are softmax([i*1, i*2]) for query value i.
    for (int i = 0; i < 2; ++i) {
        const double qv = i + 1.0;
        const double e1 = std::exp(qv * 1.0), e2 = std::exp(qv * 2.0);
        CHECK(out.at(i, 0) == doctest::Approx((e1 * 1.0 + e2 * 2.0) / (e1 + e2)).epsilon(1e-15));
    }
}

TEST_CASE("one block equals naive to 1e-12") {
    Rng rng(3);
    const Tensor q = random_normal({40, 8}, rng), k = random_normal({40, 8}, rng), v = random_normal({40, 8}, rng);
    CHECK(max_abs_diff(attention_blockwise(q, k, v, 64).data(), attention_naive(q, k, v).data()) < 1e-12);
}

TEST_CASE("blockwise matches naive on ragged blocks") {
    Rng rng(4);
    const Tensor q = random_normal({257, 16}, rng), k = random_normal({257, 16}, rng), v = random_normal({257, 16}, rng);
    CHECK(max_abs_diff(attention_blockwise(q, k, v, 32).data(), attention_naive(q, k, v).data()) < 1e-10);
}

TEST_CASE("blockwise and naive backward match composed autodiff") {
    Rng rng(5);
    const std::size_t m = 64, d = 8;
    const Tensor q = random_normal({m, d}, rng), k = random_normal({m, d}, rng), v = random_normal({m, d}, rng);
    const Tensor probe = random_tensor({m, d}, rng);
    const Grads ref = grads_of(composed_attention, q, k, v, probe);
    const Grads blk = grads_of([](auto& a, auto& b, auto& c) { return attention_blockwise(a, b, c, 10); }, q, k, v, probe);
    const Grads nav = grads_of([](auto& a, auto& b, auto& c) { return attention_naive(a, b, c); }, q, k, v, probe);
    CHECK(rel(blk.q, ref.q) < 1e-8);
    CHECK(rel(blk.k, ref.k) < 1e-8);
    CHECK(rel(blk.v, ref.v) < 1e-8);
    CHECK(rel(nav.q, ref.q) < 1e-8);
    CHECK(rel(nav.k, ref.k) < 1e-8);
    CHECK(rel(nav.v, ref.v) < 1e-8);
}

TEST_CASE("multi-head batched blockwise equals naive, including dropout masks") {
    Rng rng(6);
    const std::size_t batch = 3, m = 37, h = 12;
    const Tensor q = random_normal({batch * m, h}, rng), k = random_normal({batch * m, h}, rng),
                 v = random_normal({batch * m, h}, rng);
    const Tensor probe = random_tensor({batch * m, h}, rng);
    for (bool training : {false, true}) {
        CAPTURE(training);
        AttentionOptions naive, block;
        naive.path = AttentionPath::naive;
        naive.heads = block.heads = 3;
        block.block = 8;
        naive.dropout = block.dropout = ops::DropoutSpec{0.2, training, CounterKey{9, 1, 4}};
        CHECK(max_abs_diff(attention(q, k, v, batch, naive).data(), attention(q, k, v, batch, block).data()) < 1e-10);
        const Grads gn = grads_of([&](auto& a, auto& b, auto& c) { return attention(a, b, c, batch, naive); }, q, k,
                                  v, probe);
        const Grads gb = grads_of([&](auto& a, auto& b, auto& c) { return attention(a, b, c, batch, block); }, q, k,
                                  v, probe);
        CHECK(rel(gb.q, gn.q) < 1e-8);
        CHECK(rel(gb.k, gn.k) < 1e-8);
        CHECK(rel(gb.v, gn.v) < 1e-8);
    }
}

TEST_CASE("blockwise equals naive across sizes including M = 1000") {
    Rng rng(7);
    const std::size_t ms[] = {3, 64, 257, 1000};
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = ms[trial % 4];
        const std::size_t d = 4 + 4 * static_cast<std::size_t>(trial % 3);
        const std::size_t block = 1 + rng.below(96);
        const Tensor q = random_normal({m, d}, rng), k = random_normal({m, d}, rng), v = random_normal({m, d}, rng);
        CAPTURE(m);
        CAPTURE(block);
        CHECK(max_abs_diff(attention_blockwise(q, k, v, block).data(), attention_naive(q, k, v).data()) < 1e-10);
    }
}

TEST_CASE("blockwise scratch grows linearly, naive quadratically") {
    Rng rng(8);
    auto peak = [&](std::size_t m, AttentionPath path) {
        Tensor q = random_normal({m, 8}, rng), k = random_normal({m, 8}, rng), v = random_normal({m, 8}, rng);
        q.set_requires_grad(true);
        memory::PeakScope scope;
        Tape tape;
        {
            TapeScope ts(tape);
            AttentionOptions o;
            o.path = path;
            o.block = 32;
            tape.backward(ops::sum(attention(q, k, v, 1, o)));
        }
        return static_cast<double>(scope.peak_above_baseline());
    };
    const double b1 = peak(256, AttentionPath::blockwise), b2 = peak(1024, AttentionPath::blockwise);
    const double n1 = peak(256, AttentionPath::naive), n2 = peak(1024, AttentionPath::naive);
    CHECK(std::log(b2 / b1) / std::log(4.0) < 1.3);
    CHECK(std::log(n2 / n1) / std::log(4.0) > 1.8);
}

TEST_CASE("pair counter counts M^2 per head and sample") {
    Rng rng(9);
    const Tensor x = random_normal({2 * 10, 4}, rng);
    AttentionOptions o;
    o.heads = 2;
    o.block = 3;
    reset_pair_evaluations();
    attention(x, x, x, 2, o);
    CHECK(pair_evaluations() == 2u * 2u * 100u);
}

TEST_CASE("capture restrictions") {
    Rng rng(10);
    const Tensor x = random_normal({4, 4}, rng);
    std::vector<double> maps;
    AttentionOptions o;
    o.capture = &maps;
    CHECK_THROWS_AS(attention(x, x, x, 1, o), UnsupportedCombination);
    o.path = AttentionPath::naive;
    o.dropout.training = true;
    CHECK_THROWS_AS(attention(x, x, x, 1, o), UnsupportedCombination);
    o.dropout.training = false;
    attention(x, x, x, 1, o);
    REQUIRE(maps.size() == 16);
    for (int r = 0; r < 4; ++r) {
        double s = 0.0;
        for (int c = 0; c < 4; ++c) s += maps[r * 4 + c];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("zero output projections reduce the mixer to mean pooling") {
    Rng rng(11);
    MixerConfig cfg;
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.zero_init_outputs = true;
    ParameterStore store;
    const TransformerMixer mixer = TransformerMixer::create(store, "mix", cfg, rng);
    const Tensor x = random_normal({2 * 5, 8}, rng);
    const Tensor y = mixer.forward(store, x, 2, ForwardContext{});
    CHECK(max_abs_diff(y.data(), ops::segment_mean(x, 5).data()) < 1e-14);
}

TEST_CASE("pooled output is invariant to fragment order") {
    Rng rng(12);
    MixerConfig cfg;
    cfg.hidden = 8;
    cfg.heads = 2;
    ParameterStore store;
    const TransformerMixer mixer = TransformerMixer::create(store, "mix", cfg, rng);
    const Tensor x = random_normal({6, 8}, rng);
    const std::int64_t perm[] = {3, 0, 5, 1, 4, 2};
    const Tensor y1 = mixer.forward(store, x, 1, ForwardContext{});
    const Tensor y2 = mixer.forward(store, ops::gather_rows(x, perm), 1, ForwardContext{});
    CHECK(max_abs_diff(y1.data(), y2.data()) < 1e-12);
}

TEST_CASE("captured attention maps are row-stochastic with finite mean logs") {
    Rng rng(13);
    MixerConfig cfg;
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.path = AttentionPath::naive;
    ParameterStore store;
    const TransformerMixer mixer = TransformerMixer::create(store, "mix", cfg, rng);
    const Tensor x = random_normal({3 * 7, 8}, rng);
    AttentionMap map;
    mixer.forward(store, x, 3, ForwardContext{}, &map);
    CHECK(map.weights.size() == 3u * 3u * 2u * 49u);
    for (std::size_t l = 0; l < 3; ++l)
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t h = 0; h < 2; ++h)
                for (std::size_t i = 0; i < 7; ++i) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < 7; ++j) s += map.at(l, b, h, i, j);
                    CHECK(std::abs(s - 1.0) < 1e-8);
                }
    for (double v : map.mean_log_weights()) CHECK(std::isfinite(v));
    MixerConfig blockwise = cfg;
    blockwise.path = AttentionPath::blockwise;
    ParameterStore s2;
    const TransformerMixer m2 = TransformerMixer::create(s2, "mix", blockwise, rng);
    CHECK_THROWS_AS(m2.forward(s2, x, 3, ForwardContext{}, &map), UnsupportedCombination);
}

TEST_CASE("three-layer mixer gradient at M = 36, H = 64") {
    Rng rng(14);
    MixerConfig cfg;
    cfg.hidden = 64;
    cfg.heads = 4;
    cfg.dropout = 0.0;
    ParameterStore store;
    const TransformerMixer mixer = TransformerMixer::create(store, "mix", cfg, rng);
    const Tensor x = random_normal({36, 64}, rng);
    const Tensor probe = random_tensor({1, 64}, rng);
    // Finite differences over the input tokens plus one full weight matrix.
    std::vector<Tensor> inputs{x, store.get("mix.layer1.q.weight")};
    const double err = fragmix::testing::gradient_error(
        [&](const std::vector<Tensor>& in) {
            store.replace("mix.layer1.q.weight", in[1]);
            return ops::sum(ops::mul(mixer.forward(store, in[0], 1, ForwardContext{}), probe));
        },
        inputs);
    CHECK(err < 1e-4);
}
