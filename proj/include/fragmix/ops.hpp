#pragma once

// Differentiable primitives. Broadcasting is limited to a second operand whose
// shape equals the first operand's shape without its leading axis (a bias row
// for a batch of rows), or a single-element second operand. Anything else needs
// an explicit reshape.

#include <cstdint>
#include <span>
#include <vector>

#include "fragmix/random.hpp"
#include "fragmix/tensor.hpp"

namespace fragmix::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor square(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);

Tensor softmax_lastdim(const Tensor& a);
Tensor log_softmax_lastdim(const Tensor& a);
// Drops the last axis.
Tensor logsumexp_lastdim(const Tensor& a);

// Normalizes over the last axis, then applies per-feature gain and shift.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-5);

struct DropoutSpec {
    double rate = 0.0;
    bool training = false;
    CounterKey key{};
};
// Inverted dropout; returns x itself when not training or rate == 0.
Tensor dropout(const Tensor& x, const DropoutSpec& spec);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor reshape(const Tensor& a, Shape shape);
// Columns [begin, end) of the last axis.
Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [m x n] -> [n]
Tensor mean_rows(const Tensor& a);
// [(B*group) x n] -> [B x n], averaging consecutive groups of rows.
Tensor segment_mean(const Tensor& a, std::size_t group);

// Row gather; index -1 yields a zero row.
Tensor gather_rows(const Tensor& a, std::span<const std::int64_t> index);
// out[index[e]] += a[e]; out has n_out rows.
Tensor scatter_add_rows(const Tensor& a, std::span<const std::int64_t> index, std::size_t n_out);
// Multiplies row r by the constant weights[r].
Tensor scale_rows(const Tensor& a, std::span<const double> weights);
// [B x C] -> [B], element (b, labels[b]).
Tensor pick(const Tensor& a, std::span<const std::int64_t> labels);

// y = x W + b, with W [in x out] and b [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ln N(z; mu, diag(exp(logvar))) per row: [B x d] x3 -> [B].
Tensor diag_gaussian_log_density(const Tensor& z, const Tensor& mu, const Tensor& logvar);
// ln (1/P) sum_p N(z_b; mu_p, diag(exp(logvar_p))): z [B x d], mu/logvar [P x d] -> [B].
Tensor mixture_gaussian_log_density(const Tensor& z, const Tensor& mu, const Tensor& logvar);

}  // namespace fragmix::ops
