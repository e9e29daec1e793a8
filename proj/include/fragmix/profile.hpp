#pragma once

// Cost of one training step versus system size, window and graph operator.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fragmix/mixer.hpp"
#include "fragmix/tmm.hpp"

namespace fragmix::pipeline {

struct ProfileOptions {
    std::vector<std::size_t> sizes{128, 214, 592};
    std::vector<std::size_t> windows{1, 2, 4, 6};
    std::vector<tmm::GraphOperator> operators{tmm::GraphOperator::gcn};
    std::size_t batch = 4;  // lagged pairs per step, so 2 * batch samples
    std::size_t hidden = 16;
    mixer::MixerConfig mixer;
    std::size_t outputs = 2;
    std::size_t warmup = 2;
    std::size_t repeats = 5;
    double cutoff = 10.0;
    std::uint64_t seed = 0;
    // Skip the timed steps and report only counts (ms_per_step = 0).
    bool counts_only = false;
};

struct ProfileRow {
    std::size_t residues = 0;
    std::size_t window = 0;
    tmm::GraphOperator op = tmm::GraphOperator::gcn;
    std::size_t fragments = 0;
    double ms_per_step = 0.0;        // median over the timed steps
    std::size_t peak_bytes = 0;       // tracked allocations above the pre-step level
    std::uint64_t pair_count = 0;     // M^2 per sample and head
    std::uint64_t pair_evaluations = 0;  // query-key scores in one step's forward pass
};

ProfileRow profile_one(std::size_t residues, std::size_t window, tmm::GraphOperator op, const ProfileOptions& options);
std::vector<ProfileRow> profile(const ProfileOptions& options);

// Columns N, w, operator, ms_per_step, peak_bytes, pair_count.
void write_profile_csv(const std::filesystem::path& path, std::span<const ProfileRow> rows);

}  // namespace fragmix::pipeline
