#include <cmath>

#include "checks.hpp"
#include "doctest.h"
#include "fragmix/linalg.hpp"
#include "fragmix/nn.hpp"
#include "fragmix/ops.hpp"

using namespace fragmix;
using fragmix::testing::gradient_error;
using fragmix::testing::probe;
using fragmix::testing::random_tensor;

TEST_CASE("matmul hand examples") {
    const Tensor a({2, 2}, {1, 2, 3, 4});
    const Tensor y = ops::matmul(Tensor::eye(2), a);
    CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{1, 2, 3, 4});
    CHECK(ops::matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4})).item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    try {
        ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient of sum(a b) matches finite differences") {
    Rng rng(1);
    const double err = gradient_error([](const std::vector<Tensor>& x) { return ops::sum(ops::matmul(x[0], x[1])); },
                                      {random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)});
    CHECK(err < 1e-6);
}

TEST_CASE("elementwise trivial values") {
    const Tensor s = ops::softmax_lastdim(Tensor({2}, {0.0, 0.0}));
    CHECK(s[0] == doctest::Approx(0.5));
    CHECK(s[1] == doctest::Approx(0.5));
    CHECK(ops::silu(Tensor::scalar(0.0)).item() == 0.0);
    CHECK(ops::sigmoid(Tensor::scalar(0.0)).item() == 0.5);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(2);
    const Tensor s = ops::softmax_lastdim(random_tensor({5, 7}, rng, -30, 30));
    for (std::size_t r = 0; r < 5; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 7; ++c) total += s.at(r, c);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("dropout is identity in evaluation and rejects bad rates") {
    Rng rng(3);
    const Tensor x = random_tensor({2, 4}, rng);
    const Tensor y = ops::dropout(x, ops::DropoutSpec{0.5, false, {}});
    CHECK(fragmix::testing::max_abs_diff(x.data(), y.data()) == 0.0);
    CHECK_THROWS_AS(ops::dropout(x, ops::DropoutSpec{1.0, true, {}}), ConfigError);
    CHECK_THROWS_AS(ops::dropout(x, ops::DropoutSpec{-0.1, true, {}}), ConfigError);
}

TEST_CASE("dropout masks are reproducible from the counter key") {
    Rng rng(4);
    const Tensor x = random_tensor({8, 8}, rng);
    const ops::DropoutSpec spec{0.3, true, CounterKey{11, 2, 5}};
    const Tensor a = ops::dropout(x, spec);
    const Tensor b = ops::dropout(x, spec);
    CHECK(fragmix::testing::max_abs_diff(a.data(), b.data()) == 0.0);
    std::size_t zeros = 0;
    for (double v : a.data()) zeros += v == 0.0;
    CHECK(zeros > 5);
    CHECK(zeros < 40);
}

TEST_CASE("invalid axis and shape errors") {
    const Tensor a = Tensor::zeros({2, 3});
    const Tensor parts[] = {a, Tensor::zeros({3, 3})};
    CHECK_THROWS_AS(ops::concat(parts, 1), DimensionError);
    CHECK_THROWS_AS(ops::concat(parts, 5), DimensionError);
    CHECK_THROWS_AS(ops::reshape(a, {4, 2}), DimensionError);
    CHECK_THROWS_AS(ops::add(a, Tensor::zeros({2})), DimensionError);
}

// Each op wrapped as a tensor-valued function of random inputs.
struct OpCase {
    const char* name;
    std::function<Tensor(const std::vector<Tensor>&)> fn;
    std::vector<Shape> shapes;
    double lo = -1.0;
    double hi = 1.0;
};

std::vector<OpCase> op_cases() {
    return {
        {"add", [](auto& x) { return ops::add(x[0], x[1]); }, {{2, 4}, {2, 4}}},
        {"add_row_broadcast", [](auto& x) { return ops::add(x[0], x[1]); }, {{2, 4}, {4}}},
        {"sub", [](auto& x) { return ops::sub(x[0], x[1]); }, {{2, 4}, {2, 4}}},
        {"mul", [](auto& x) { return ops::mul(x[0], x[1]); }, {{2, 4}, {2, 4}}},
        {"mul_scalar_broadcast", [](auto& x) { return ops::mul(x[0], x[1]); }, {{2, 4}, {1}}},
        {"scale", [](auto& x) { return ops::scale(x[0], -1.7); }, {{2, 4}}},
        {"square", [](auto& x) { return ops::square(x[0]); }, {{2, 4}}},
        {"exp", [](auto& x) { return ops::exp(x[0]); }, {{2, 4}}},
        {"log", [](auto& x) { return ops::log(x[0]); }, {{2, 4}}, 0.5, 2.0},
        {"sigmoid", [](auto& x) { return ops::sigmoid(x[0]); }, {{2, 4}}, -3, 3},
        {"silu", [](auto& x) { return ops::silu(x[0]); }, {{2, 4}}, -3, 3},
        {"softmax", [](auto& x) { return ops::softmax_lastdim(x[0]); }, {{2, 4}}, -2, 2},
        {"log_softmax", [](auto& x) { return ops::log_softmax_lastdim(x[0]); }, {{2, 4}}, -2, 2},
        {"logsumexp", [](auto& x) { return ops::logsumexp_lastdim(x[0]); }, {{2, 4}}, -2, 2},
        {"layernorm", [](auto& x) { return ops::layernorm(x[0], x[1], x[2]); }, {{2, 4}, {4}, {4}}},
        {"dropout_train",
         [](auto& x) { return ops::dropout(x[0], ops::DropoutSpec{0.25, true, CounterKey{1, 2, 3}}); },
         {{2, 4}}},
        {"concat",
         [](auto& x) {
             const Tensor p[] = {x[0], x[1]};
             return ops::concat(p, 1);
         },
         {{2, 4}, {2, 3}}},
        {"reshape", [](auto& x) { return ops::reshape(x[0], {4, 2}); }, {{2, 4}}},
        {"transpose", [](auto& x) { return ops::transpose(x[0]); }, {{2, 4}}},
        {"slice_last", [](auto& x) { return ops::slice_last(x[0], 1, 3); }, {{2, 4}}},
        {"mean_rows", [](auto& x) { return ops::mean_rows(x[0]); }, {{2, 4}}},
        {"segment_mean", [](auto& x) { return ops::segment_mean(x[0], 2); }, {{4, 4}}},
        {"gather_rows",
         [](auto& x) {
             const std::int64_t idx[] = {1, -1, 0, 1};
             return ops::gather_rows(x[0], idx);
         },
         {{2, 4}}},
        {"scatter_add_rows",
         [](auto& x) {
             const std::int64_t idx[] = {2, 0};
             return ops::scatter_add_rows(x[0], idx, 3);
         },
         {{2, 4}}},
        {"scale_rows",
         [](auto& x) {
             const double w[] = {0.5, -2.0};
             return ops::scale_rows(x[0], w);
         },
         {{2, 4}}},
        {"pick",
         [](auto& x) {
             const std::int64_t lab[] = {3, 0};
             return ops::pick(x[0], lab);
         },
         {{2, 4}}},
        {"linear", [](auto& x) { return ops::linear(x[0], x[1], x[2]); }, {{2, 4}, {4, 3}, {3}}},
        {"diag_gaussian", [](auto& x) { return ops::diag_gaussian_log_density(x[0], x[1], x[2]); },
         {{2, 4}, {2, 4}, {2, 4}}},
        {"mixture_gaussian", [](auto& x) { return ops::mixture_gaussian_log_density(x[0], x[1], x[2]); },
         {{2, 4}, {3, 4}, {3, 4}}},
        {"sym_matrix_power",
         [](auto& x) {
             const Tensor s = ops::add(ops::matmul(ops::transpose(x[0]), x[0]), Tensor::eye(4));
             return linalg::sym_matrix_power(s, -0.5, 1e-6);
         },
         {{4, 4}}},
    };
}

TEST_CASE("every differentiable op matches central differences on random inputs") {
    for (const OpCase& c : op_cases()) {
        CAPTURE(c.name);
        for (std::uint64_t trial = 0; trial < 10; ++trial) {
            Rng rng(1000 + trial);
            std::vector<Tensor> inputs;
            for (const Shape& s : c.shapes) inputs.push_back(random_tensor(s, rng, c.lo, c.hi));
            const double err = gradient_error(probe(c.fn, trial), inputs);
            CHECK(err < 1e-6);
        }
    }
}

TEST_CASE("three-layer MLP loss gradient matches finite differences") {
    Rng rng(5);
    ParameterStore store;
    const Linear l1 = Linear::create(store, "l1", 4, 6, rng);
    const Linear l2 = Linear::create(store, "l2", 6, 5, rng);
    const Linear l3 = Linear::create(store, "l3", 5, 1, rng);
    const Tensor x = random_tensor({7, 4}, rng);
    std::vector<Tensor> params;
    for (auto& [name, t] : store.entries()) params.push_back(t);
    const double err = gradient_error(
        [&](const std::vector<Tensor>& p) {
            const Tensor h1 = ops::silu(ops::linear(x, p[0], p[1]));
            const Tensor h2 = ops::silu(ops::linear(h1, p[2], p[3]));
            return ops::mean(ops::square(ops::linear(h2, p[4], p[5])));
        },
        params);
    CHECK(err < 1e-4);
}

TEST_CASE("evaluation forward passes are bit-identical") {
    Rng rng(6);
    ParameterStore store;
    const Mlp2 mlp = Mlp2::create(store, "m", 8, 16, 3, rng);
    const Tensor x = random_tensor({10, 8}, rng);
    const ops::DropoutSpec eval{0.1, false, {}};
    const Tensor a = mlp(store, x, eval);
    const Tensor b = mlp(store, x, eval);
    CHECK(fragmix::testing::max_abs_diff(a.data(), b.data()) == 0.0);
}

TEST_CASE("backward visits tape entries in strict reverse order and populates leaves") {
    Rng rng(7);
    Tensor a = random_tensor({3, 3}, rng);
    a.set_requires_grad(true);
    Tensor b = random_tensor({3, 3}, rng);
    b.set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        const Tensor loss = ops::sum(ops::silu(ops::matmul(ops::add(a, b), b)));
        tape.backward(loss);
    }
    const auto& order = tape.last_visit_order();
    REQUIRE(order.size() == tape.size());
    for (std::size_t i = 0; i < order.size(); ++i) CHECK(order[i] == tape.size() - 1 - i);
    CHECK(a.has_grad());
    CHECK(b.has_grad());
    CHECK(a.grad().size() == a.numel());
}

TEST_CASE("ops without an active tape record nothing") {
    Tensor a = Tensor::eye(2);
    a.set_requires_grad(true);
    const Tensor y = ops::exp(a);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("sym_eig known cases") {
    const auto d = linalg::sym_eig(Tensor({2, 2}, {2, 0, 0, 5}));
    CHECK(d.values[0] == doctest::Approx(2.0));
    CHECK(d.values[1] == doctest::Approx(5.0));
    CHECK(std::abs(d.vectors.at(0, 0)) == doctest::Approx(1.0));
    CHECK(std::abs(d.vectors.at(1, 1)) == doctest::Approx(1.0));
    const auto s = linalg::sym_eig(Tensor({2, 2}, {0, 1, 1, 0}));
    CHECK(s.values[0] == doctest::Approx(-1.0));
    CHECK(s.values[1] == doctest::Approx(1.0));
}

TEST_CASE("sym_eig reconstructs random symmetric matrices with orthonormal vectors") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const Tensor r = random_tensor({8, 8}, rng);
        const Tensor a = ops::scale(ops::add(r, ops::transpose(r)), 0.5);
        const auto e = linalg::sym_eig(a);
        double recon = 0.0, ortho = 0.0;
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t j = 0; j < 8; ++j) {
                double s = 0.0, g = 0.0;
                for (std::size_t k = 0; k < 8; ++k) {
                    s += e.vectors.at(i, k) * e.values[k] * e.vectors.at(j, k);
                    g += e.vectors.at(k, i) * e.vectors.at(k, j);
                }
                recon += (s - a.at(i, j)) * (s - a.at(i, j));
                ortho += (g - (i == j ? 1.0 : 0.0)) * (g - (i == j ? 1.0 : 0.0));
            }
        CHECK(std::sqrt(recon) < 1e-8);
        CHECK(std::sqrt(ortho) < 1e-10);
        for (std::size_t k = 1; k < 8; ++k) CHECK(e.values[k - 1] <= e.values[k]);
    }
}

TEST_CASE("sym_eig rejects asymmetric input") {
    CHECK_THROWS_AS(linalg::sym_eig(Tensor({2, 2}, {1, 2, 0, 1})), linalg::SymmetryError);
}

TEST_CASE("sym_matrix_power truncates small eigenvalues and reports degeneracy") {
    const Tensor p = linalg::sym_matrix_power(Tensor({2, 2}, {4, 0, 0, 1e-9}), -0.5, 1e-6);
    CHECK(p.at(0, 0) == doctest::Approx(0.5));
    CHECK(p.at(1, 1) == 0.0);
    CHECK_THROWS_AS(linalg::sym_matrix_power(Tensor::zeros({2, 2}), -0.5, 1e-6), linalg::DegenerateError);
}
