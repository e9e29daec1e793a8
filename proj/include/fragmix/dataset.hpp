#pragma once

// Trajectory storage formats, in-memory datasets, splits and lagged pairs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fragmix/geometry.hpp"

namespace fragmix::pipeline {

using geometry::Vec3;

class SplitError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct PositionTrajectory {
    geometry::Topology topology;
    std::size_t frames = 0;
    std::vector<Vec3> positions;  // frames x atoms

    std::span<const Vec3> frame(std::size_t t) const {
        return {positions.data() + t * topology.atom_count(), topology.atom_count()};
    }
};

// "G2VPOS1\0", u32 atoms, u32 frames, u32 residue id per atom, u32 anchor atom
// per residue, u8 ligand flag per residue, then frames x atoms x 3 f64.
void write_position_file(const std::filesystem::path& path, const PositionTrajectory& traj);
PositionTrajectory read_position_file(const std::filesystem::path& path);

// Header "frame,atom,x,y,z,residue,is_anchor,is_ligand"; one row per atom and
// frame. Meant for tiny hand-made systems.
PositionTrajectory import_positions_csv(const std::filesystem::path& path);

struct ManifestEntry {
    std::string file;
    std::size_t frames = 0;
    std::string positions;  // token manifests: the position file tokens came from
};

// Text file of key=value lines plus one "traj <file> <frames> [positions]"
// line per trajectory; paths are relative to the manifest.
struct Manifest {
    std::string kind = "positions";  // or "tokens"
    std::string system;
    double frame_interval_ns = 1.0;
    std::vector<ManifestEntry> trajectories;
};

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

struct Trajectory {
    std::string name;
    geometry::TokenSeries tokens;
    std::vector<geometry::RadiusGraph> graphs;  // per frame; empty means no edges
    std::vector<std::uint8_t> ligand;           // per residue

    std::size_t frames() const noexcept { return tokens.frames; }
};

struct TrajectoryDataset {
    std::vector<Trajectory> trajectories;
    double frame_interval_ns = 1.0;
    std::size_t stride = 1;

    std::size_t residues() const;
    std::size_t hidden() const;
    std::size_t total_frames() const noexcept;
    // round(lag_ns / (interval * stride)), at least 1.
    std::size_t lag_frames(double lag_ns) const;
};

struct DatasetOptions {
    geometry::FeaturizerConfig featurizer;
    double cutoff = 10.0;
    std::size_t stride = 1;
    // Shift and scale each token channel to zero mean, unit variance over all
    // frames and residues after loading. Constant channels are only shifted.
    bool standardize = true;
};

// Per-channel affine map applied by standardize_tokens.
struct ChannelScaling {
    std::vector<double> mean;
    std::vector<double> scale;  // multiplies (x - mean)
};
ChannelScaling standardize_tokens(TrajectoryDataset& dataset);

// Featurizes each trajectory (through the cache when given) and builds the
// per-frame anchor radius graphs.
Trajectory make_trajectory(const std::string& name, const PositionTrajectory& positions,
                           const DatasetOptions& options, geometry::TokenCache* cache = nullptr);
// Loads every trajectory of a manifest of either kind.
TrajectoryDataset load_dataset(const std::filesystem::path& manifest, const DatasetOptions& options,
                               geometry::TokenCache* cache = nullptr);

enum class SplitMode { by_trajectory, by_temporal_fragment };

SplitMode parse_split_mode(const std::string& name);

struct SplitSpec {
    double validation_fraction = 0.2;
    SplitMode mode = SplitMode::by_trajectory;
    std::size_t fragments = 2;
    std::uint64_t seed = 0;
};

// Contiguous frame range [begin, end) of one trajectory.
struct Segment {
    std::size_t trajectory = 0;
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t length() const noexcept { return end - begin; }
    bool operator==(const Segment&) const = default;
};

struct Split {
    std::vector<Segment> train;
    std::vector<Segment> validation;
};

Split split(std::span<const std::size_t> frame_counts, const SplitSpec& spec);
std::vector<std::size_t> frame_counts(const TrajectoryDataset& dataset);
std::vector<Segment> whole_trajectories(std::span<const std::size_t> frame_counts);

struct FrameRef {
    std::uint32_t trajectory = 0;
    std::uint32_t frame = 0;
};

struct LaggedPair {
    std::uint32_t trajectory = 0;
    std::uint32_t t = 0;  // paired with t + lag
};

std::size_t lagged_pair_count(std::size_t frames, std::size_t lag) noexcept;

// Every (t, t + lag) inside each segment. Segments too short for one pair
// are skipped and reported in `warnings` when provided.
std::vector<LaggedPair> lagged_pairs(std::span<const Segment> segments, std::size_t lag,
                                     std::vector<std::string>* warnings = nullptr);

}  // namespace fragmix::pipeline
