#pragma once

// Synthetic overdamped Langevin systems and discrete chains with exact or
// brute-force reference spectra.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fragmix/dataset.hpp"
#include "fragmix/geometry.hpp"

namespace fragmix::synth {

class IntegrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class SystemKind { ou, double_well, toy_polymer, chain2 };

SystemKind parse_system(const std::string& name);
const char* system_name(SystemKind kind) noexcept;

// dx = -theta x dt + sigma dW
struct OuParams {
    double theta = 1.0;
    double sigma = 1.0;
};

// V(x) = barrier (x^2 - 1)^2, dx = -V'(x)/friction dt + sqrt(2 kT / friction) dW
struct DoubleWellParams {
    double barrier = 3.0;
    double kT = 1.0;
    double friction = 1.0;
};

// Bead chain with harmonic bonds, cosine-harmonic angles, trans-biased
// dihedrals, soft excluded volume, and a two-well hinge dihedral.
struct PolymerParams {
    std::size_t beads = 12;
    double bond = 3.8;
    double k_bond = 2.0;
    double angle_deg = 120.0;
    double k_angle = 8.0;
    double k_dihedral = 0.6;
    std::size_t hinge = 4;              // hinge dihedral over beads hinge..hinge+3
    double hinge_depth = 6.0;           // height of each cosine well
    double hinge_open_deg = 180.0;
    double hinge_closed_deg = 60.0;
    double hinge_closed_offset = 0.4;   // closed well sits this much higher
    double hinge_softness = 0.5;
    double repulsion_radius = 4.0;
    double k_repulsion = 2.0;
    double kT = 1.0;
    double friction = 1.0;
};

struct Chain2Params {
    double stay = 0.9;
};

struct SystemSpec {
    SystemKind kind = SystemKind::double_well;
    OuParams ou;
    DoubleWellParams double_well;
    PolymerParams polymer;
    Chain2Params chain;
    double dt = 1e-3;
    std::size_t steps_per_frame = 10;
    std::uint64_t seed = 0;

    double frame_time() const noexcept { return dt * static_cast<double>(steps_per_frame); }
    // Largest dt for which the integrator is considered stable.
    double stability_bound() const;
    void validate() const;
};

// Per-trajectory derived seed.
std::uint64_t trajectory_seed(std::uint64_t seed, std::size_t trajectory) noexcept;

// OU or double well coordinate per frame, starting from x0.
std::vector<double> simulate_1d(const SystemSpec& spec, std::size_t frames, std::size_t trajectory, double x0);
// Starting point drawn from the trajectory seed: 0 for OU, +-1 for the double well.
std::vector<double> simulate_1d(const SystemSpec& spec, std::size_t frames, std::size_t trajectory);

// Four one-atom residues: a fixed triangle and a probe whose height above it
// is 5 + 2x, then a random rigid motion per frame.
pipeline::PositionTrajectory embed_1d(std::span<const double> x, std::uint64_t seed);

double polymer_energy(const PolymerParams& p, std::span<const geometry::Vec3> r);
// Forces -dV/dr, same layout as r.
void polymer_forces(const PolymerParams& p, std::span<const geometry::Vec3> r, std::span<geometry::Vec3> f);
// Dihedral angle in (-pi, pi] of four points.
double dihedral(const geometry::Vec3& a, const geometry::Vec3& b, const geometry::Vec3& c, const geometry::Vec3& d);
// Extended starting chain with the hinge in its open well.
std::vector<geometry::Vec3> polymer_initial(const PolymerParams& p);

struct PolymerTrajectory {
    pipeline::PositionTrajectory positions;
    std::vector<double> hinge;  // hinge dihedral per frame
};
PolymerTrajectory simulate_polymer(const SystemSpec& spec, std::size_t frames, std::size_t trajectory);

// States 0/1 of the symmetric two-state chain, stationary start.
std::vector<std::int64_t> simulate_chain2(const SystemSpec& spec, std::size_t frames, std::size_t trajectory);
// One residue, two one-hot token dims.
geometry::TokenSeries chain2_tokens(std::span<const std::int64_t> states);

// Leading spectrum, largest eigenvalue modulus first.
struct OracleSpectrum {
    double lag = 0.0;                  // time units
    std::vector<double> eigenvalues;   // moduli at this lag, including the stationary 1
    std::vector<double> timescales;    // -lag / ln|lambda| for each eigenvalue below 1
};

// OU / double well: dense one-step Euler-Maruyama kernel on `bins` equal
// bins over [lo, hi], raised to the lag. Chain2: exact matrix power.
// Polymer: hinge dihedral binned into `bins` sectors, counted over a long run.
OracleSpectrum oracle_timescales(const SystemSpec& spec, double lag, std::size_t bins = 400,
                                 std::size_t leading = 5);
// Row-stochastic, reversible one-step grid kernel for the 1D systems, with
// its domain. `stationary` receives the bin weights it is reversible for.
std::vector<double> grid_kernel(const SystemSpec& spec, std::size_t bins, double& lo, double& hi,
                                std::vector<double>* stationary = nullptr);

// Columns rank, eigenvalue, timescale (rank 1 is the stationary mode with an
// infinite timescale, written as inf).
void write_oracle_csv(const std::filesystem::path& path, const OracleSpectrum& spectrum);

// Writes trajectory files plus manifest.txt into `directory`; returns the
// manifest path. Chain2 writes token files, the rest position files.
std::filesystem::path generate(const SystemSpec& spec, std::size_t frames, std::size_t trajectories,
                               const std::filesystem::path& directory, double frame_interval_ns);

}  // namespace fragmix::synth
