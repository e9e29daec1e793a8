#include "fragmix/synth.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>

#include "fragmix/binary_io.hpp"
#include "fragmix/msm.hpp"
#include "fragmix/random.hpp"

namespace fragmix::synth {

using geometry::Vec3;

namespace {

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
void axpy(double s, const Vec3& x, Vec3& y) {
    for (int k = 0; k < 3; ++k) y[k] += s * x[k];
}

double deg(double d) { return d * std::numbers::pi / 180.0; }

double phi_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double drift_1d(const SystemSpec& s, double x) {
    if (s.kind == SystemKind::ou) return -s.ou.theta * x;
    const auto& p = s.double_well;
    return -4.0 * p.barrier * x * (x * x - 1.0) / p.friction;
}

double noise_1d(const SystemSpec& s) {
    if (s.kind == SystemKind::ou) return s.ou.sigma * std::sqrt(s.dt);
    const auto& p = s.double_well;
    return std::sqrt(2.0 * p.kT * s.dt / p.friction);
}

// Accumulates -dE/dphi * dphi/dr onto the four forces.
void add_dihedral_force(const std::array<Vec3, 4>& r, double dedphi, std::array<Vec3*, 4> f) {
    const Vec3 F = sub(r[0], r[1]), G = sub(r[1], r[2]), H = sub(r[3], r[2]);
    const Vec3 A = cross(F, G), B = cross(H, G);
    const double a2 = dot(A, A), b2 = dot(B, B), g = norm(G);
    if (a2 < 1e-12 || b2 < 1e-12 || g < 1e-12) return;
    const double fg = dot(F, G), hg = dot(H, G);
    for (int k = 0; k < 3; ++k) {
        const double d0 = -g / a2 * A[k];
        const double d3 = g / b2 * B[k];
        const double d1 = g / a2 * A[k] + fg / (a2 * g) * A[k] - hg / (b2 * g) * B[k];
        const double d2 = -g / b2 * B[k] - fg / (a2 * g) * A[k] + hg / (b2 * g) * B[k];
        (*f[0])[k] -= dedphi * d0;
        (*f[1])[k] -= dedphi * d1;
        (*f[2])[k] -= dedphi * d2;
        (*f[3])[k] -= dedphi * d3;
    }
}

struct HingeTerms {
    double energy;
    double derivative;
};

HingeTerms hinge_terms(const PolymerParams& p, double phi) {
    const double u1 = p.hinge_depth * (1.0 - std::cos(phi - deg(p.hinge_open_deg)));
    const double u2 = p.hinge_depth * (1.0 - std::cos(phi - deg(p.hinge_closed_deg))) + p.hinge_closed_offset;
    const double s = p.hinge_softness;
    const double m = std::min(u1, u2);
    const double e1 = std::exp(-(u1 - m) / s), e2 = std::exp(-(u2 - m) / s);
    const double energy = m - s * std::log(e1 + e2);
    const double w1 = e1 / (e1 + e2), w2 = e2 / (e1 + e2);
    const double derivative = w1 * p.hinge_depth * std::sin(phi - deg(p.hinge_open_deg)) +
                              w2 * p.hinge_depth * std::sin(phi - deg(p.hinge_closed_deg));
    return {energy, derivative};
}

void check_finite(double v, std::size_t step) {
    if (!std::isfinite(v) || std::abs(v) > 1e6) {
        throw IntegrationError("integration diverged at step " + std::to_string(step));
    }
}

std::vector<Vec3> rotate_quaternion(const std::vector<Vec3>& pts, Rng& rng) {
    double q[4] = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    for (double& v : q) v /= n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    const double R[3][3] = {{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
                            {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
                            {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
    const Vec3 t{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)};
    std::vector<Vec3> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (int a = 0; a < 3; ++a) out[i][a] = R[a][0] * pts[i][0] + R[a][1] * pts[i][1] + R[a][2] * pts[i][2] + t[a];
    return out;
}

OracleSpectrum finish_spectrum(std::vector<double> moduli, double lag, std::size_t leading) {
    OracleSpectrum s;
    s.lag = lag;
    moduli.resize(std::min(moduli.size(), leading));
    for (double m : moduli) {
        s.eigenvalues.push_back(m);
        if (m < 1.0 - 1e-12) s.timescales.push_back(m > 0 ? -lag / std::log(m) : 0.0);
    }
    return s;
}

}  // namespace

SystemKind parse_system(const std::string& name) {
    if (name == "ou") return SystemKind::ou;
    if (name == "doublewell" || name == "double_well") return SystemKind::double_well;
    if (name == "polymer" || name == "toy_polymer") return SystemKind::toy_polymer;
    if (name == "chain2") return SystemKind::chain2;
    throw ConfigError("unknown system '" + name + "' (expected ou, doublewell, polymer, chain2)");
}

const char* system_name(SystemKind kind) noexcept {
    switch (kind) {
        case SystemKind::ou: return "ou";
        case SystemKind::double_well: return "doublewell";
        case SystemKind::toy_polymer: return "polymer";
        case SystemKind::chain2: return "chain2";
    }
    return "?";
}

double SystemSpec::stability_bound() const {
    switch (kind) {
        case SystemKind::ou: return 1.0 / ou.theta;
        case SystemKind::double_well:
            // Curvature of V at |x| = 1.5, well past where trajectories go.
            return double_well.friction / (double_well.barrier * (12.0 * 2.25 - 4.0));
        case SystemKind::toy_polymer: {
            const auto& p = polymer;
            const double stiff = 4.0 * p.k_bond + 8.0 * p.k_angle / (p.bond * p.bond) + 4.0 * p.k_repulsion +
                                 2.0 * (p.k_dihedral + p.hinge_depth) / (p.bond * p.bond);
            return 0.5 * p.friction / stiff;
        }
        case SystemKind::chain2: return std::numeric_limits<double>::infinity();
    }
    return 0.0;
}

void SystemSpec::validate() const {
    if (kind == SystemKind::chain2) {
        if (!(chain.stay >= 0.0 && chain.stay <= 1.0)) throw ConfigError("chain2 stay probability outside [0, 1]");
        return;
    }
    if (steps_per_frame < 1) throw ConfigError("steps_per_frame must be positive");
    if (kind == SystemKind::ou && !(ou.theta > 0.0 && ou.sigma >= 0.0)) throw ConfigError("OU needs theta > 0, sigma >= 0");
    if (kind == SystemKind::double_well &&
        !(double_well.barrier > 0 && double_well.kT > 0 && double_well.friction > 0)) {
        throw ConfigError("double well needs positive barrier, kT, friction");
    }
    if (kind == SystemKind::toy_polymer && (polymer.beads < polymer.hinge + 4 || polymer.beads < 4)) {
        throw ConfigError("polymer too short for its hinge");
    }
    if (!(dt > 0.0) || dt >= stability_bound()) {
        throw IntegrationError("timestep " + std::to_string(dt) + " is not below the stability bound " +
                               std::to_string(stability_bound()));
    }
}

std::uint64_t trajectory_seed(std::uint64_t seed, std::size_t trajectory) noexcept {
    return derive_seed(seed, 0x7A0000ull + trajectory);
}

std::vector<double> simulate_1d(const SystemSpec& spec, std::size_t frames, std::size_t trajectory, double x0) {
    if (spec.kind != SystemKind::ou && spec.kind != SystemKind::double_well) {
        throw ConfigError("simulate_1d needs an OU or double well system");
    }
    spec.validate();
    Rng rng(derive_seed(trajectory_seed(spec.seed, trajectory), 1));
    const double s = noise_1d(spec);
    std::vector<double> x(frames);
    double v = x0;
    std::size_t step = 0;
    for (std::size_t t = 0; t < frames; ++t) {
        x[t] = v;
        for (std::size_t k = 0; k < spec.steps_per_frame; ++k, ++step) {
            v += drift_1d(spec, v) * spec.dt + (s > 0.0 ? s * rng.normal() : 0.0);
        }
        check_finite(v, step);
    }
    return x;
}

std::vector<double> simulate_1d(const SystemSpec& spec, std::size_t frames, std::size_t trajectory) {
    Rng rng(derive_seed(trajectory_seed(spec.seed, trajectory), 2));
    const double x0 = spec.kind == SystemKind::double_well ? (rng.uniform() < 0.5 ? -1.0 : 1.0) : 0.0;
    return simulate_1d(spec, frames, trajectory, x0);
}

pipeline::PositionTrajectory embed_1d(std::span<const double> x, std::uint64_t seed) {
    pipeline::PositionTrajectory out;
    out.topology = geometry::Topology::beads(4);
    out.frames = x.size();
    out.positions.reserve(4 * x.size());
    Rng rng(derive_seed(seed, 0xE3BD));
    const double h = 4.0 * std::sqrt(3.0) / 2.0;
    for (double v : x) {
        const std::vector<Vec3> body{{0, 0, 0}, {4, 0, 0}, {2, h, 0}, {2, h / 3.0, 5.0 + 2.0 * v}};
        const auto moved = rotate_quaternion(body, rng);
        out.positions.insert(out.positions.end(), moved.begin(), moved.end());
    }
    return out;
}

double dihedral(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    const Vec3 F = sub(a, b), G = sub(b, c), H = sub(d, c);
    const Vec3 A = cross(F, G), B = cross(H, G);
    const double g = norm(G);
    return std::atan2(dot(cross(B, A), G) / g, dot(A, B));
}

double polymer_energy(const PolymerParams& p, std::span<const Vec3> r) {
    const std::size_t n = r.size();
    double e = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double d = norm(sub(r[i + 1], r[i])) - p.bond;
        e += p.k_bond * d * d;
    }
    const double c0 = std::cos(deg(p.angle_deg));
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const Vec3 a = sub(r[i - 1], r[i]), b = sub(r[i + 1], r[i]);
        const double c = dot(a, b) / (norm(a) * norm(b)) - c0;
        e += p.k_angle * c * c;
    }
    for (std::size_t i = 0; i + 3 < n; ++i) {
        const double phi = dihedral(r[i], r[i + 1], r[i + 2], r[i + 3]);
        e += i == p.hinge ? hinge_terms(p, phi).energy : p.k_dihedral * (1.0 + std::cos(phi));
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 3; j < n; ++j) {
            const double d = norm(sub(r[j], r[i]));
            if (d < p.repulsion_radius) e += p.k_repulsion * (p.repulsion_radius - d) * (p.repulsion_radius - d);
        }
    return e;
}

void polymer_forces(const PolymerParams& p, std::span<const Vec3> r, std::span<Vec3> f) {
    const std::size_t n = r.size();
    std::fill(f.begin(), f.end(), Vec3{0, 0, 0});
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const Vec3 b = sub(r[i + 1], r[i]);
        const double len = norm(b);
        const double g = 2.0 * p.k_bond * (len - p.bond) / len;  // dE/db / |b| along b
        axpy(g, b, f[i]);
        axpy(-g, b, f[i + 1]);
    }
    const double c0 = std::cos(deg(p.angle_deg));
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const Vec3 a = sub(r[i - 1], r[i]), b = sub(r[i + 1], r[i]);
        const double la = norm(a), lb = norm(b);
        const double c = dot(a, b) / (la * lb);
        const double dedc = 2.0 * p.k_angle * (c - c0);
        Vec3 da, db;
        for (int k = 0; k < 3; ++k) {
            da[k] = (b[k] / lb - c * a[k] / la) / la;
            db[k] = (a[k] / la - c * b[k] / lb) / lb;
        }
        axpy(-dedc, da, f[i - 1]);
        axpy(-dedc, db, f[i + 1]);
        axpy(dedc, da, f[i]);
        axpy(dedc, db, f[i]);
    }
    for (std::size_t i = 0; i + 3 < n; ++i) {
        const double phi = dihedral(r[i], r[i + 1], r[i + 2], r[i + 3]);
        const double dedphi = i == p.hinge ? hinge_terms(p, phi).derivative : -p.k_dihedral * std::sin(phi);
        add_dihedral_force({r[i], r[i + 1], r[i + 2], r[i + 3]}, dedphi, {&f[i], &f[i + 1], &f[i + 2], &f[i + 3]});
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 3; j < n; ++j) {
            const Vec3 d = sub(r[j], r[i]);
            const double len = norm(d);
            if (len >= p.repulsion_radius || len < 1e-12) continue;
            const double g = -2.0 * p.k_repulsion * (p.repulsion_radius - len) / len;  // dE/dlen / len
            axpy(g, d, f[i]);
            axpy(-g, d, f[j]);
        }
}

std::vector<Vec3> polymer_initial(const PolymerParams& p) {
    // Planar zigzag: every angle at its rest value, every dihedral trans.
    const double half = deg(p.angle_deg) / 2.0;
    std::vector<Vec3> r(p.beads);
    for (std::size_t i = 0; i < p.beads; ++i) {
        r[i] = {static_cast<double>(i) * p.bond * std::sin(half), (i % 2) * p.bond * std::cos(half), 0.0};
    }
    return r;
}

PolymerTrajectory simulate_polymer(const SystemSpec& spec, std::size_t frames, std::size_t trajectory) {
    if (spec.kind != SystemKind::toy_polymer) throw ConfigError("simulate_polymer needs a polymer system");
    spec.validate();
    const PolymerParams& p = spec.polymer;
    Rng rng(derive_seed(trajectory_seed(spec.seed, trajectory), 3));
    std::vector<Vec3> r = polymer_initial(p), f(p.beads);
    const double s = std::sqrt(2.0 * p.kT * spec.dt / p.friction);
    std::size_t step = 0;
    auto advance = [&] {
        polymer_forces(p, r, f);
        for (std::size_t i = 0; i < p.beads; ++i)
            for (int k = 0; k < 3; ++k) {
                r[i][k] += f[i][k] / p.friction * spec.dt + s * rng.normal();
                check_finite(r[i][k], step);
            }
        ++step;
    };
    for (std::size_t k = 0; k < 2000; ++k) advance();  // relax away from the planar start

    PolymerTrajectory out;
    out.positions.topology = geometry::Topology::beads(p.beads);
    out.positions.frames = frames;
    out.positions.positions.reserve(frames * p.beads);
    out.hinge.reserve(frames);
    for (std::size_t t = 0; t < frames; ++t) {
        out.positions.positions.insert(out.positions.positions.end(), r.begin(), r.end());
        out.hinge.push_back(dihedral(r[p.hinge], r[p.hinge + 1], r[p.hinge + 2], r[p.hinge + 3]));
        for (std::size_t k = 0; k < spec.steps_per_frame; ++k) advance();
    }
    return out;
}

std::vector<std::int64_t> simulate_chain2(const SystemSpec& spec, std::size_t frames, std::size_t trajectory) {
    spec.validate();
    Rng rng(derive_seed(trajectory_seed(spec.seed, trajectory), 4));
    std::vector<std::int64_t> s(frames);
    std::int64_t state = rng.uniform() < 0.5 ? 0 : 1;
    for (std::size_t t = 0; t < frames; ++t) {
        s[t] = state;
        if (rng.uniform() >= spec.chain.stay) state = 1 - state;
    }
    return s;
}

geometry::TokenSeries chain2_tokens(std::span<const std::int64_t> states) {
    geometry::TokenSeries out{1, 2, states.size(), std::vector<double>(2 * states.size(), 0.0)};
    for (std::size_t t = 0; t < states.size(); ++t) out.values[2 * t + static_cast<std::size_t>(states[t] != 0)] = 1.0;
    return out;
}

std::vector<double> grid_kernel(const SystemSpec& spec, std::size_t bins, double& lo, double& hi,
                                std::vector<double>* stationary) {
    if (spec.kind == SystemKind::ou) {
        if (!(spec.ou.sigma > 0)) throw ConfigError("grid oracle needs sigma > 0");
        const double sd = spec.ou.sigma / std::sqrt(2.0 * spec.ou.theta);
        lo = -7.0 * sd;
        hi = 7.0 * sd;
    } else if (spec.kind == SystemKind::double_well) {
        const double reach = 1.0 + std::max(1.5, 3.0 / std::sqrt(spec.double_well.barrier / spec.double_well.kT));
        lo = -reach;
        hi = reach;
    } else {
        throw ConfigError("grid oracle supports the 1D systems only");
    }
    spec.validate();
    if (bins < 2) throw ConfigError("grid needs at least 2 bins");
    const double width = (hi - lo) / static_cast<double>(bins);
    const double s = noise_1d(spec);
    // Start points inside each bin by 8-point Gauss-Legendre, weighted by the
    // stationary density so a bin stands for its equilibrium population.
    static constexpr double gx[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                     -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                     0.7966664774136267,  0.9602898564975363};
    static constexpr double gw[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                     0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                     0.2223810344533745, 0.1012285362903763};
    auto log_density = [&](double x) {
        if (spec.kind == SystemKind::ou) return -spec.ou.theta * x * x / (spec.ou.sigma * spec.ou.sigma);
        const double u = x * x - 1.0;
        return -spec.double_well.barrier * u * u / spec.double_well.kT;
    };
    double peak = -INFINITY;
    for (std::size_t i = 0; i < bins; ++i) peak = std::max(peak, log_density(lo + (static_cast<double>(i) + 0.5) * width));
    std::vector<double> p(bins * bins, 0.0), cdf(bins + 1), mass(bins, 0.0);
    for (std::size_t i = 0; i < bins; ++i) {
        const double c = lo + (static_cast<double>(i) + 0.5) * width;
        double row = 0.0, wsum = 0.0;
        for (int q = 0; q < 8; ++q) {
            const double x = c + 0.5 * width * gx[q];
            const double w = gw[q] * std::exp(log_density(x) - log_density(c));
            wsum += w;
            const double mu = x + drift_1d(spec, x) * spec.dt;
            for (std::size_t j = 0; j <= bins; ++j) cdf[j] = phi_cdf((lo + static_cast<double>(j) * width - mu) / s);
            for (std::size_t j = 0; j < bins; ++j) p[i * bins + j] += w * (cdf[j + 1] - cdf[j]);
        }
        mass[i] = wsum * std::exp(log_density(c) - peak);
        for (std::size_t j = 0; j < bins; ++j) row += p[i * bins + j];
        // Mass leaving the domain is folded back in proportionally.
        for (std::size_t j = 0; j < bins; ++j) p[i * bins + j] /= row;
    }
    // Symmetrized equilibrium flux: the discretized chain is reversible with
    // real spectrum, as the continuous dynamics are.
    std::vector<double> flux(bins * bins);
    for (std::size_t i = 0; i < bins; ++i)
        for (std::size_t j = 0; j < bins; ++j)
            flux[i * bins + j] = 0.5 * (mass[i] * p[i * bins + j] + mass[j] * p[j * bins + i]);
    double total = 0.0;
    for (std::size_t i = 0; i < bins; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < bins; ++j) row += flux[i * bins + j];
        for (std::size_t j = 0; j < bins; ++j) p[i * bins + j] = flux[i * bins + j] / row;
        mass[i] = row;
        total += row;
    }
    if (stationary) {
        for (double& m : mass) m /= total;
        *stationary = std::move(mass);
    }
    return p;
}

OracleSpectrum oracle_timescales(const SystemSpec& spec, double lag, std::size_t bins, std::size_t leading) {
    if (!(lag > 0)) throw ConfigError("oracle lag must be positive");
    if (spec.kind == SystemKind::chain2) {
        spec.validate();
        const double l2 = std::abs(2.0 * spec.chain.stay - 1.0);
        return finish_spectrum({1.0, std::pow(l2, lag)}, lag, leading);
    }
    if (spec.kind == SystemKind::toy_polymer) {
        // Hinge dihedral counted over a 10^6-step run.
        const std::size_t lag_frames = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(lag / spec.frame_time())));
        const std::size_t frames = std::max<std::size_t>(1000000 / spec.steps_per_frame, lag_frames + 1);
        const auto run = simulate_polymer(spec, frames, 0x0AC1E);
        msm::Labels labels(run.hinge.size());
        for (std::size_t t = 0; t < run.hinge.size(); ++t) {
            const double u = (run.hinge[t] + std::numbers::pi) / (2.0 * std::numbers::pi);
            labels[t] = std::min<std::int64_t>(static_cast<std::int64_t>(u * static_cast<double>(bins)),
                                               static_cast<std::int64_t>(bins) - 1);
        }
        // Drop never-visited sectors so they do not appear as spurious unit eigenvalues.
        std::vector<std::int64_t> remap(bins, -1);
        std::int64_t used = 0;
        for (auto& l : labels) {
            if (remap[static_cast<std::size_t>(l)] < 0) remap[static_cast<std::size_t>(l)] = used++;
            l = remap[static_cast<std::size_t>(l)];
        }
        const std::vector<msm::Labels> trajs{labels};
        const auto t = msm::transition_matrix(msm::count_transitions(trajs, static_cast<std::size_t>(used), lag_frames));
        auto moduli = msm::eigenvalue_moduli(t);
        return finish_spectrum(std::move(moduli), static_cast<double>(lag_frames) * spec.frame_time(), leading);
    }
    double lo = 0, hi = 0;
    std::vector<double> pi;
    const auto p = grid_kernel(spec, bins, lo, hi, &pi);
    // D^1/2 P D^-1/2 is symmetric for a reversible P and shares its spectrum.
    Eigen::MatrixXd m(bins, bins);
    for (std::size_t i = 0; i < bins; ++i)
        for (std::size_t j = 0; j < bins; ++j) {
            const double v = p[i * bins + j] * std::sqrt(pi[i] / pi[j]);
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        }
    m = 0.5 * (m + m.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw std::runtime_error("oracle eigen solver failed");
    std::vector<double> moduli(bins);
    for (std::size_t i = 0; i < bins; ++i) moduli[i] = std::abs(solver.eigenvalues()[static_cast<Eigen::Index>(i)]);
    std::sort(moduli.begin(), moduli.end(), std::greater<>());
    const double steps = lag / spec.dt;
    for (double& v : moduli) v = std::pow(v, steps);
    return finish_spectrum(std::move(moduli), lag, leading);
}

void write_oracle_csv(const std::filesystem::path& path, const OracleSpectrum& spectrum) {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw io::IoError("cannot write " + path.string());
    std::fprintf(f, "rank,eigenvalue,timescale\n");
    std::size_t ts = 0;
    for (std::size_t i = 0; i < spectrum.eigenvalues.size(); ++i) {
        const double lambda = spectrum.eigenvalues[i];
        if (lambda >= 1.0 - 1e-12) {
            std::fprintf(f, "%zu,%.17g,inf\n", i + 1, lambda);
        } else {
            std::fprintf(f, "%zu,%.17g,%.17g\n", i + 1, lambda, spectrum.timescales.at(ts++));
        }
    }
    if (std::fclose(f) != 0) throw io::IoError("failed writing " + path.string());
}

std::filesystem::path generate(const SystemSpec& spec, std::size_t frames, std::size_t trajectories,
                               const std::filesystem::path& directory, double frame_interval_ns) {
    if (frames == 0) throw ConfigError("frames must be positive");
    if (trajectories == 0) throw ConfigError("trajectories must be positive");
    spec.validate();
    std::filesystem::create_directories(directory);
    pipeline::Manifest manifest;
    manifest.system = system_name(spec.kind);
    manifest.frame_interval_ns = frame_interval_ns;
    manifest.kind = spec.kind == SystemKind::chain2 ? "tokens" : "positions";
    for (std::size_t i = 0; i < trajectories; ++i) {
        char name[64];
        if (spec.kind == SystemKind::chain2) {
            std::snprintf(name, sizeof name, "traj_%03zu.g2vtok", i);
            geometry::write_token_file(directory / name, chain2_tokens(simulate_chain2(spec, frames, i)));
        } else {
            std::snprintf(name, sizeof name, "traj_%03zu.g2vpos", i);
            if (spec.kind == SystemKind::toy_polymer) {
                pipeline::write_position_file(directory / name, simulate_polymer(spec, frames, i).positions);
            } else {
                const auto x = simulate_1d(spec, frames, i);
                pipeline::write_position_file(directory / name, embed_1d(x, trajectory_seed(spec.seed, i)));
            }
        }
        manifest.trajectories.push_back({name, frames, {}});
    }
    const auto path = directory / "manifest.txt";
    pipeline::write_manifest(path, manifest);
    return path;
}

}  // namespace fragmix::synth
