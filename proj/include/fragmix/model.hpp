#pragma once

// Residue tokens -> token merging -> positional encoding -> transformer mixer
// -> pooled frame embedding.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fragmix/dataset.hpp"
#include "fragmix/mixer.hpp"
#include "fragmix/nn.hpp"
#include "fragmix/tmm.hpp"

namespace fragmix::pipeline {

struct ModelConfig {
    tmm::TmmConfig tmm;
    mixer::MixerConfig mixer;
    bool positional_encoding = true;

    std::size_t hidden() const noexcept { return tmm.hidden; }
    // Propagates a shared width to both stages.
    void set_hidden(std::size_t h) noexcept {
        tmm.hidden = h;
        mixer.hidden = h;
    }
    void validate() const;
};

class FragmentMixerModel {
public:
    static FragmentMixerModel create(ParameterStore& store, const ModelConfig& config, std::size_t residues,
                                     std::span<const std::uint8_t> ligand, Rng& rng);

    const ModelConfig& config() const noexcept { return config_; }
    const tmm::MergePlan& plan() const noexcept { return plan_; }
    std::size_t fragments() const noexcept { return plan_.fragments; }

    // Pooled embeddings [B x H] for the referenced frames.
    Tensor embed(const ParameterStore& store, const TrajectoryDataset& data, std::span<const FrameRef> frames,
                 const ForwardContext& ctx, mixer::AttentionMap* capture = nullptr) const;

    // Same from raw tokens [(B*N) x H] over a batched graph.
    Tensor embed_tokens(const ParameterStore& store, const Tensor& tokens, const tmm::RadiusGraph& graph,
                        std::size_t batch, const ForwardContext& ctx, mixer::AttentionMap* capture = nullptr) const;

private:
    ModelConfig config_;
    std::size_t residues_ = 0;
    tmm::MergePlan plan_;
    tmm::TokenMergingModule tmm_;
    mixer::TransformerMixer mixer_;
};

// Leaf tensor [(B*N) x H] and the batched graph for the referenced frames.
struct FrameBatch {
    Tensor tokens;
    tmm::RadiusGraph graph;
};
FrameBatch gather_frames(const TrajectoryDataset& data, std::span<const FrameRef> frames);

}  // namespace fragmix::pipeline
