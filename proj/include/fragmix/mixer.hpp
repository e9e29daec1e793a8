#pragma once

// Transformer token mixer over fragment tokens.
//
// Attention is one differentiable op with two exact paths. The naive path
// materializes every M x M weight matrix and keeps it for the backward pass.
// The blockwise path streams key blocks through a running row max and
// normalizer, saves only the per-row log-sum-exp, and recomputes block weights
// during backward, so its scratch space is linear in M at fixed block size.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fragmix/nn.hpp"
#include "fragmix/ops.hpp"
#include "fragmix/tensor.hpp"

namespace fragmix::mixer {

class UnsupportedCombination : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class AttentionPath { naive, blockwise };

AttentionPath parse_path(const std::string& name);
const char* path_name(AttentionPath path) noexcept;

struct AttentionOptions {
    AttentionPath path = AttentionPath::blockwise;
    std::size_t block = 64;
    std::size_t heads = 1;
    ops::DropoutSpec dropout{};
    // Receives B x heads x M x M softmax weights. Naive path, evaluation only.
    std::vector<double>* capture = nullptr;
};

// q, k, v: [(B*M) x H] with rows grouped by sample and H = heads * d.
// Returns softmax(q k^T / sqrt(d)) v per sample and head, same layout.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                 const AttentionOptions& options);

// Single-sample, single-head conveniences over [M x d] inputs.
Tensor attention_naive(const Tensor& q, const Tensor& k, const Tensor& v);
Tensor attention_blockwise(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t block);

// Query-key scores evaluated by forward attention passes since the last reset.
std::uint64_t pair_evaluations() noexcept;
void reset_pair_evaluations() noexcept;

struct MixerConfig {
    std::size_t hidden = 16;
    std::size_t layers = 3;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 2;
    double dropout = 0.1;
    AttentionPath path = AttentionPath::blockwise;
    std::size_t block = 64;
    // Zeroes every residual-branch output projection (testing aid).
    bool zero_init_outputs = false;

    std::size_t head_dim() const noexcept { return heads == 0 ? 0 : hidden / heads; }
    void validate() const;
};

// Attention weights captured during an evaluation pass.
struct AttentionMap {
    std::size_t layers = 0;
    std::size_t batch = 0;
    std::size_t heads = 0;
    std::size_t fragments = 0;
    std::vector<double> weights;  // layer, sample, head, query, key

    double at(std::size_t layer, std::size_t sample, std::size_t head, std::size_t query, std::size_t key) const;
    // Log weights averaged over samples: layer, head, query, key.
    std::vector<double> mean_log_weights() const;
};

// Columns: layer, head, query_fragment, key_fragment, mean_log_weight.
void write_attention_csv(const std::filesystem::path& path, const AttentionMap& map);

class TransformerMixer {
public:
    static TransformerMixer create(ParameterStore& store, const std::string& name, const MixerConfig& config,
                                   Rng& rng);

    const MixerConfig& config() const noexcept { return config_; }

    // Pre-LN blocks, x + Attn(LN(x)) then x + MLP(LN(x)), mean-pooled over
    // fragments. x: [(B*M) x H] -> [B x H].
    Tensor forward(const ParameterStore& store, const Tensor& x, std::size_t batch, const ForwardContext& ctx,
                   AttentionMap* capture = nullptr) const;

    // Same blocks without the final pooling: [(B*M) x H].
    Tensor forward_tokens(const ParameterStore& store, const Tensor& x, std::size_t batch,
                          const ForwardContext& ctx, AttentionMap* capture = nullptr) const;

private:
    struct Layer {
        std::string ln1_gain, ln1_shift, ln2_gain, ln2_shift;
        Linear q, k, v, o;
        Mlp2 mlp;
    };
    MixerConfig config_;
    std::vector<Layer> layers_;
};

}  // namespace fragmix::mixer
