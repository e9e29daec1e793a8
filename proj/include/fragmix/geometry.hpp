#pragma once

// Residue graphs and rigid-motion-invariant residue tokens.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fragmix/tensor.hpp"

namespace fragmix::geometry {

using Vec3 = std::array<double, 3>;

class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Per-system atom-to-residue layout shared by every frame of a trajectory.
struct Topology {
    std::vector<std::uint32_t> residue_of_atom;  // residue ids contiguous from 0
    std::vector<std::uint32_t> anchor_atom;      // one anchor atom per residue
    std::vector<std::uint8_t> ligand;            // per residue

    std::size_t atom_count() const noexcept { return residue_of_atom.size(); }
    std::size_t residue_count() const noexcept { return anchor_atom.size(); }
    std::size_t ligand_count() const noexcept;

    // Throws InputError naming the first violated invariant.
    void validate() const;

    // Every atom its own residue and anchor, no ligands.
    static Topology beads(std::size_t n);
};

struct FrameView {
    std::span<const Vec3> positions;
    const Topology* topology = nullptr;
};

std::vector<Vec3> anchor_positions(const FrameView& frame);

struct RadiusGraph {
    std::size_t node_count = 0;
    double cutoff = 0.0;
    // Directed (i, j) pairs, sorted; j is a neighbor of i.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
};

// All ordered pairs i != j with |r_i - r_j| <= cutoff.
RadiusGraph radius_graph(std::span<const Vec3> points, double cutoff);

constexpr std::size_t kNeighborSlots = 8;
constexpr std::size_t kDensityRadii = 3;
constexpr std::size_t kDescriptorCount = kNeighborSlots + kDensityRadii + 2;

struct FeaturizerConfig {
    std::size_t hidden = 16;
    std::uint64_t seed = 7;
    std::array<double, kDensityRadii> density_radii{6.0, 8.0, 10.0};
    // Distances and radii of gyration are divided by this length.
    double length_scale = 10.0;
};

// Descriptor layout per residue: kNeighborSlots sorted anchor distances
// (zero-padded), neighbor counts inside each density radius, atom count,
// radius of gyration. Projected to `hidden` dims by a seeded matrix with
// orthonormal columns.
class ResidueFeaturizer {
public:
    explicit ResidueFeaturizer(FeaturizerConfig config);

    const FeaturizerConfig& config() const noexcept { return config_; }

    // [N x kDescriptorCount], row-major.
    std::vector<double> descriptors(const FrameView& frame) const;
    // [N x hidden]
    Tensor tokens(const FrameView& frame) const;
    void tokens_into(const FrameView& frame, std::span<double> out) const;

    const std::vector<double>& projection() const noexcept { return projection_; }  // [D x hidden]

private:
    FeaturizerConfig config_;
    std::vector<double> projection_;
};

// Token tensors for every frame of a trajectory.
struct TokenSeries {
    std::size_t residues = 0;
    std::size_t hidden = 0;
    std::size_t frames = 0;
    std::vector<double> values;  // frames x residues x hidden

    std::span<const double> frame(std::size_t t) const {
        return {values.data() + t * residues * hidden, residues * hidden};
    }
};

// Token file: "G2VTOK1\0", u32 residues, u32 hidden, u32 frames, then
// frames x residues x hidden little-endian f64.
void write_token_file(const std::filesystem::path& path, const TokenSeries& series);
TokenSeries read_token_file(const std::filesystem::path& path);

TokenSeries featurize_series(const ResidueFeaturizer& featurizer, const Topology& topology,
                             std::span<const Vec3> positions, std::size_t frames);

// Process-wide memo of computed token series, optionally backed by token files
// in a directory. Lookups take a shared lock; first computation of a key holds
// the exclusive lock.
class TokenCache {
public:
    explicit TokenCache(std::filesystem::path directory = {});

    std::shared_ptr<const TokenSeries> get_or_compute(const std::string& key,
                                                     const std::function<TokenSeries()>& compute);
    std::size_t hits() const noexcept { return hits_; }
    std::size_t misses() const noexcept { return misses_; }
    std::filesystem::path file_for(const std::string& key) const;

private:
    std::filesystem::path directory_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, std::shared_ptr<const TokenSeries>> entries_;
    std::size_t hits_ = 0;
    std::size_t misses_ = 0;
};

}  // namespace fragmix::geometry
