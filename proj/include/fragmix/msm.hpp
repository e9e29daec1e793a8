#pragma once

// Markov state models from discrete state trajectories.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fragmix::msm {

using Labels = std::vector<std::int64_t>;

struct CountMatrix {
    std::size_t states = 0;
    std::vector<std::uint64_t> counts;  // row-major states x states

    std::uint64_t at(std::size_t a, std::size_t b) const { return counts.at(a * states + b); }
    std::uint64_t total() const noexcept;
};

// Sliding-window counts of (s_t, s_t+lag) within each trajectory.
// Labels must lie in [0, states).
CountMatrix count_transitions(std::span<const Labels> trajectories, std::size_t states, std::size_t lag);

struct TransitionMatrix {
    std::size_t states = 0;
    std::vector<double> p;           // row-major, rows sum to 1
    std::vector<std::uint8_t> zero_row;  // 1 where a row had no counts and was set to identity

    double at(std::size_t a, std::size_t b) const { return p.at(a * states + b); }
};

TransitionMatrix transition_matrix(const CountMatrix& counts);

// Eigenvalue moduli, descending.
std::vector<double> eigenvalue_moduli(const TransitionMatrix& t);

// -lag / ln|lambda| for every eigenvalue with modulus below 1 (within 1e-12),
// largest timescale first.
std::vector<double> implied_timescales(const TransitionMatrix& t, double lag);

struct MarkovStateModel {
    std::size_t states = 0;
    std::size_t lag = 0;
    CountMatrix counts;
    TransitionMatrix transition;
    std::vector<double> populations;  // empirical state frequencies over all frames
};

MarkovStateModel build_msm(std::span<const Labels> trajectories, std::size_t states, std::size_t lag);

// Number of states implied by the labels: max label + 1.
std::size_t state_count(std::span<const Labels> trajectories);

// One trajectory per line, labels separated by spaces or commas; '#' comments.
std::vector<Labels> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, std::span<const Labels> trajectories);

struct Descriptors {
    std::vector<std::string> names;
    std::vector<double> means;  // states x names.size()
};

// Edges with count >= min_count: from_state, to_state, count, rate_per_ns,
// where the rate is the count per ns of observed pair time. Nodes: state,
// population, then one mean_<name> column per descriptor.
void write_msm_csv(const std::filesystem::path& edges, const std::filesystem::path& nodes,
                   const MarkovStateModel& model, double frame_interval_ns, std::uint64_t min_count,
                   const Descriptors& descriptors = {});

}  // namespace fragmix::msm
