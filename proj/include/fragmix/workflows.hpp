#pragma once

// End-to-end training recipes: VAMP-2 embeddings and SPIB state discovery
// with iterative label refinement.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fragmix/dataset.hpp"
#include "fragmix/model.hpp"
#include "fragmix/objectives.hpp"
#include "fragmix/training.hpp"

namespace fragmix::pipeline {

struct ExperimentConfig {
    ModelConfig model;
    TrainConfig vamp_train;
    TrainConfig spib_train;
    SplitSpec split;
    std::size_t lag_frames = 1;
    std::size_t vamp_outputs = 2;
    objectives::SpibConfig spib;
    std::size_t spib_initial_states = 100;
    std::size_t refine_every = 5;        // epochs between label refinements
    std::size_t max_refinements = 5;
    double refine_tolerance = 0.01;      // converged when fewer labels change
    std::size_t eval_chunk = 1000;        // frames per evaluation forward pass
    std::uint64_t seed = 0;
};

// Evaluation-mode rows of fn(frames) for every frame in [begin, end) of one
// trajectory, computed in chunks. fn returns [B x k].
using FrameFn = std::function<Tensor(std::span<const FrameRef>)>;
std::vector<double> evaluate_frames(const FrameFn& fn, std::size_t trajectory, std::size_t begin, std::size_t end,
                                    std::size_t chunk, std::size_t& width);

class VampModel {
public:
    static VampModel create(const ExperimentConfig& config, const TrajectoryDataset& data);

    ParameterStore store;
    FragmentMixerModel embedder;
    objectives::VampHead head;

    // [B x k]
    Tensor features(const TrajectoryDataset& data, std::span<const FrameRef> frames, const ForwardContext& ctx) const;
    // Evaluation-mode features of every frame of every trajectory.
    std::vector<std::vector<double>> all_features(const TrajectoryDataset& data, std::size_t chunk) const;
    // VAMP-2 over all lagged pairs inside the segments, evaluation mode.
    double score(const TrajectoryDataset& data, std::span<const Segment> segments, std::size_t lag,
                 std::size_t chunk) const;
};

struct VampRun {
    TrainResult train;
    Split split;
    std::vector<std::string> warnings;
};

VampRun train_vamp(VampModel& model, const TrajectoryDataset& data, const ExperimentConfig& config);

// k-means over per-frame feature rows of every trajectory, labels split back
// per trajectory.
struct InitialLabels {
    std::vector<std::vector<std::int64_t>> labels;
    std::size_t states = 0;
    std::string warning;
};
InitialLabels kmeans_labels(std::span<const std::vector<double>> features, std::size_t dim, std::size_t k,
                            std::uint64_t seed);

class SpibModel {
public:
    static SpibModel create(const ExperimentConfig& config, const TrajectoryDataset& data, std::size_t states);

    ParameterStore store;
    FragmentMixerModel embedder;
    objectives::SpibHead head;

    Tensor embed(const TrajectoryDataset& data, std::span<const FrameRef> frames, const ForwardContext& ctx) const;
    // argmax labels of every frame, per trajectory.
    std::vector<std::vector<std::int64_t>> predict(const TrajectoryDataset& data, std::size_t chunk) const;
};

struct SpibRun {
    TrainResult train;
    Split split;
    std::vector<std::vector<std::int64_t>> labels;
    std::size_t states = 0;
    std::size_t refinements = 0;
    std::vector<double> changed_fraction;  // per refinement
    bool converged = false;
};

SpibRun train_spib(SpibModel& model, const TrajectoryDataset& data, const ExperimentConfig& config,
                   std::vector<std::vector<std::int64_t>> initial_labels);

}  // namespace fragmix::pipeline
