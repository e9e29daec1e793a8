#include "fragmix/model.hpp"

#include <algorithm>

namespace fragmix::pipeline {

void ModelConfig::validate() const {
    tmm.validate();
    mixer.validate();
    if (tmm.hidden != mixer.hidden) throw ConfigError("token merging and mixer widths differ");
    if (positional_encoding && tmm.hidden % 2 != 0) {
        throw ConfigError("positional encoding needs an even hidden width, got " + std::to_string(tmm.hidden));
    }
}

FragmentMixerModel FragmentMixerModel::create(ParameterStore& store, const ModelConfig& config, std::size_t residues,
                                              std::span<const std::uint8_t> ligand, Rng& rng) {
    config.validate();
    FragmentMixerModel m;
    m.config_ = config;
    m.residues_ = residues;
    m.plan_ = tmm::merge_plan(residues, config.tmm.window, ligand);
    m.tmm_ = tmm::TokenMergingModule::create(store, "tmm", config.tmm, rng);
    m.mixer_ = mixer::TransformerMixer::create(store, "mixer", config.mixer, rng);
    return m;
}

Tensor FragmentMixerModel::embed_tokens(const ParameterStore& store, const Tensor& tokens,
                                        const tmm::RadiusGraph& graph, std::size_t batch, const ForwardContext& ctx,
                                        mixer::AttentionMap* capture) const {
    Tensor x = tmm_.forward(store, tokens, graph, plan_, batch);
    if (config_.positional_encoding) x = tmm::add_positional_encoding(x, plan_.fragments);
    return mixer_.forward(store, x, batch, ctx, capture);
}

Tensor FragmentMixerModel::embed(const ParameterStore& store, const TrajectoryDataset& data,
                                 std::span<const FrameRef> frames, const ForwardContext& ctx,
                                 mixer::AttentionMap* capture) const {
    if (data.residues() != residues_) {
        throw DimensionError("model built for " + std::to_string(residues_) + " residues, data has " +
                             std::to_string(data.residues()));
    }
    if (data.hidden() != config_.hidden()) {
        throw DimensionError("token width " + std::to_string(data.hidden()) + " does not match model width " +
                             std::to_string(config_.hidden()));
    }
    const FrameBatch b = gather_frames(data, frames);
    return embed_tokens(store, b.tokens, b.graph, frames.size(), ctx, capture);
}

FrameBatch gather_frames(const TrajectoryDataset& data, std::span<const FrameRef> frames) {
    const std::size_t n = data.residues(), h = data.hidden();
    Buffer values(frames.size() * n * h);
    FrameBatch out;
    out.graph.node_count = frames.size() * n;
    for (std::size_t b = 0; b < frames.size(); ++b) {
        const Trajectory& t = data.trajectories.at(frames[b].trajectory);
        const auto src = t.tokens.frame(frames[b].frame);
        std::copy(src.begin(), src.end(), values.begin() + static_cast<std::ptrdiff_t>(b * n * h));
        if (!t.graphs.empty()) {
            const auto& g = t.graphs[frames[b].frame];
            out.graph.cutoff = g.cutoff;
            const auto shift = static_cast<std::uint32_t>(b * n);
            for (auto [i, j] : g.edges) out.graph.edges.emplace_back(i + shift, j + shift);
        }
    }
    out.tokens = Tensor({frames.size() * n, h}, std::move(values));
    return out;
}

}  // namespace fragmix::pipeline
