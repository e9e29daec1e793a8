#include "fragmix/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fragmix/binary_io.hpp"
#include "fragmix/random.hpp"

namespace fragmix::geometry {

namespace {

constexpr char kTokenMagic[8] = {'G', '2', 'V', 'T', 'O', 'K', '1', '\0'};

double distance(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

bool finite(const Vec3& p) { return std::isfinite(p[0]) && std::isfinite(p[1]) && std::isfinite(p[2]); }

}  // namespace

std::size_t Topology::ligand_count() const noexcept {
    return static_cast<std::size_t>(std::count_if(ligand.begin(), ligand.end(), [](std::uint8_t v) { return v != 0; }));
}

void Topology::validate() const {
    const std::size_t n_res = residue_count();
    if (n_res == 0) throw InputError("topology has no residues");
    if (ligand.size() != n_res) {
        throw InputError("ligand mask has " + std::to_string(ligand.size()) + " entries for " + std::to_string(n_res) +
                         " residues");
    }
    std::vector<std::size_t> atoms_per_residue(n_res, 0);
    for (std::size_t a = 0; a < residue_of_atom.size(); ++a) {
        if (residue_of_atom[a] >= n_res) {
            throw InputError("atom " + std::to_string(a) + " references residue " + std::to_string(residue_of_atom[a]) +
                             " beyond " + std::to_string(n_res) + " residues");
        }
        ++atoms_per_residue[residue_of_atom[a]];
    }
    for (std::size_t r = 0; r < n_res; ++r) {
        if (atoms_per_residue[r] == 0) throw InputError("residue " + std::to_string(r) + " has no atoms");
        const std::uint32_t anchor = anchor_atom[r];
        if (anchor >= residue_of_atom.size() || residue_of_atom[anchor] != r) {
            throw InputError("anchor of residue " + std::to_string(r) + " is not one of its atoms");
        }
    }
    // Ligands sit in one contiguous block at the tail of the sequence.
    bool seen_ligand = false;
    for (std::size_t r = 0; r < n_res; ++r) {
        if (ligand[r]) seen_ligand = true;
        else if (seen_ligand) throw InputError("ligand residues must be contiguous at the end of the sequence");
    }
}

Topology Topology::beads(std::size_t n) {
    Topology t;
    t.residue_of_atom.resize(n);
    t.anchor_atom.resize(n);
    t.ligand.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        t.residue_of_atom[i] = static_cast<std::uint32_t>(i);
        t.anchor_atom[i] = static_cast<std::uint32_t>(i);
    }
    return t;
}

std::vector<Vec3> anchor_positions(const FrameView& frame) {
    std::vector<Vec3> out;
    out.reserve(frame.topology->residue_count());
    for (std::uint32_t a : frame.topology->anchor_atom) out.push_back(frame.positions[a]);
    return out;
}

RadiusGraph radius_graph(std::span<const Vec3> points, double cutoff) {
    if (points.empty()) throw InputError("radius_graph needs at least one point");
    if (!(cutoff > 0.0)) throw InputError("radius_graph cutoff must be positive");
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!finite(points[i])) throw InputError("non-finite coordinate at point " + std::to_string(i));
    }
    RadiusGraph g;
    g.node_count = points.size();
    g.cutoff = cutoff;
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = 0; j < points.size(); ++j) {
            if (i != j && distance(points[i], points[j]) <= cutoff) {
                g.edges.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
            }
        }
    }
    return g;
}

ResidueFeaturizer::ResidueFeaturizer(FeaturizerConfig config) : config_(config) {
    const std::size_t h = config_.hidden;
    if (h < kDescriptorCount) {
        throw ConfigError("featurizer hidden width " + std::to_string(h) + " is below the descriptor count " +
                          std::to_string(kDescriptorCount));
    }
    // Gaussian columns, orthonormalized by modified Gram-Schmidt.
    Rng rng(derive_seed(config_.seed, 0xFEA7));
    std::vector<std::vector<double>> cols(kDescriptorCount, std::vector<double>(h));
    for (auto& c : cols)
        for (double& v : c) v = rng.normal();
    for (std::size_t d = 0; d < kDescriptorCount; ++d) {
        for (std::size_t p = 0; p < d; ++p) {
            double dot = 0.0;
            for (std::size_t i = 0; i < h; ++i) dot += cols[d][i] * cols[p][i];
            for (std::size_t i = 0; i < h; ++i) cols[d][i] -= dot * cols[p][i];
        }
        double norm = 0.0;
        for (double v : cols[d]) norm += v * v;
        norm = std::sqrt(norm);
        for (double& v : cols[d]) v /= norm;
    }
    projection_.resize(kDescriptorCount * h);
    for (std::size_t d = 0; d < kDescriptorCount; ++d)
        for (std::size_t i = 0; i < h; ++i) projection_[d * h + i] = cols[d][i];
}

std::vector<double> ResidueFeaturizer::descriptors(const FrameView& frame) const {
    const Topology& top = *frame.topology;
    const std::size_t n = top.residue_count();
    if (frame.positions.size() != top.atom_count()) {
        throw InputError("frame has " + std::to_string(frame.positions.size()) + " positions for " +
                         std::to_string(top.atom_count()) + " atoms");
    }
    for (std::size_t a = 0; a < frame.positions.size(); ++a) {
        if (!finite(frame.positions[a])) throw InputError("non-finite coordinate at atom " + std::to_string(a));
    }
    const std::vector<Vec3> anchors = anchor_positions(frame);

    std::vector<std::vector<Vec3>> members(n);
    for (std::size_t a = 0; a < top.atom_count(); ++a) members[top.residue_of_atom[a]].push_back(frame.positions[a]);

    const double inv_len = 1.0 / config_.length_scale;
    std::vector<double> out(n * kDescriptorCount, 0.0);
    std::vector<double> dist;
    for (std::size_t i = 0; i < n; ++i) {
        double* row = out.data() + i * kDescriptorCount;
        dist.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) dist.push_back(distance(anchors[i], anchors[j]));
        std::sort(dist.begin(), dist.end());
        for (std::size_t s = 0; s < kNeighborSlots && s < dist.size(); ++s) row[s] = dist[s] * inv_len;
        for (std::size_t r = 0; r < kDensityRadii; ++r) {
            const double radius = config_.density_radii[r];
            const auto count = std::upper_bound(dist.begin(), dist.end(), radius) - dist.begin();
            row[kNeighborSlots + r] = 0.1 * static_cast<double>(count);
        }
        // Canonical atom order makes the sums independent of storage order.
        std::vector<Vec3>& atoms = members[i];
        std::sort(atoms.begin(), atoms.end());
        Vec3 centroid{0.0, 0.0, 0.0};
        for (const Vec3& p : atoms)
            for (int c = 0; c < 3; ++c) centroid[c] += p[c];
        for (int c = 0; c < 3; ++c) centroid[c] /= static_cast<double>(atoms.size());
        double rg2 = 0.0;
        for (const Vec3& p : atoms) {
            const double d = distance(p, centroid);
            rg2 += d * d;
        }
        rg2 /= static_cast<double>(atoms.size());
        row[kNeighborSlots + kDensityRadii] = 0.1 * static_cast<double>(atoms.size());
        row[kNeighborSlots + kDensityRadii + 1] = std::sqrt(rg2) * inv_len;
    }
    return out;
}

void ResidueFeaturizer::tokens_into(const FrameView& frame, std::span<double> out) const {
    const std::size_t h = config_.hidden;
    const std::vector<double> desc = descriptors(frame);
    const std::size_t n = desc.size() / kDescriptorCount;
    if (out.size() != n * h) throw DimensionError("token buffer has the wrong size");
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < kDescriptorCount; ++d) {
            const double v = desc[i * kDescriptorCount + d];
            for (std::size_t c = 0; c < h; ++c) out[i * h + c] += v * projection_[d * h + c];
        }
}

Tensor ResidueFeaturizer::tokens(const FrameView& frame) const {
    const std::size_t n = frame.topology->residue_count();
    Tensor t = Tensor::zeros({n, config_.hidden});
    tokens_into(frame, t.mutable_data());
    return t;
}

TokenSeries featurize_series(const ResidueFeaturizer& featurizer, const Topology& topology,
                             std::span<const Vec3> positions, std::size_t frames) {
    topology.validate();
    const std::size_t atoms = topology.atom_count();
    if (positions.size() != atoms * frames) throw InputError("position array does not match frame count");
    TokenSeries s;
    s.residues = topology.residue_count();
    s.hidden = featurizer.config().hidden;
    s.frames = frames;
    s.values.resize(frames * s.residues * s.hidden);
    for (std::size_t t = 0; t < frames; ++t) {
        FrameView view{positions.subspan(t * atoms, atoms), &topology};
        featurizer.tokens_into(view, std::span<double>(s.values).subspan(t * s.residues * s.hidden, s.residues * s.hidden));
    }
    return s;
}

void write_token_file(const std::filesystem::path& path, const TokenSeries& series) {
    io::ByteWriter w;
    w.bytes(std::string_view(kTokenMagic, sizeof kTokenMagic));
    w.u32(static_cast<std::uint32_t>(series.residues));
    w.u32(static_cast<std::uint32_t>(series.hidden));
    w.u32(static_cast<std::uint32_t>(series.frames));
    w.f64s(series.values);
    w.write_file(path);
}

TokenSeries read_token_file(const std::filesystem::path& path) {
    io::ByteReader r = io::ByteReader::from_file(path);
    r.expect_magic(std::string_view(kTokenMagic, sizeof kTokenMagic), "token file");
    TokenSeries s;
    s.residues = r.u32("residue count");
    s.hidden = r.u32("hidden width");
    s.frames = r.u32("frame count");
    const std::size_t n = s.residues * s.hidden * s.frames;
    if (r.remaining() != n * sizeof(double)) {
        throw io::FormatError("token payload holds " + std::to_string(r.remaining()) + " bytes, header implies " +
                                  std::to_string(n * sizeof(double)),
                              r.offset());
    }
    s.values.resize(n);
    r.f64s(s.values, "token values");
    return s;
}

TokenCache::TokenCache(std::filesystem::path directory) : directory_(std::move(directory)) {}

std::filesystem::path TokenCache::file_for(const std::string& key) const {
    std::string safe;
    for (char c : key) safe.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_');
    return directory_ / (safe + ".tok");
}

std::shared_ptr<const TokenSeries> TokenCache::get_or_compute(const std::string& key,
                                                             const std::function<TokenSeries()>& compute) {
    {
        std::shared_lock lock(mutex_);
        if (auto it = entries_.find(key); it != entries_.end()) {
            ++hits_;
            return it->second;
        }
    }
    std::unique_lock lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) {
        ++hits_;
        return it->second;
    }
    ++misses_;
    std::shared_ptr<const TokenSeries> series;
    const bool persistent = !directory_.empty();
    if (persistent && std::filesystem::exists(file_for(key))) {
        series = std::make_shared<const TokenSeries>(read_token_file(file_for(key)));
    } else {
        series = std::make_shared<const TokenSeries>(compute());
        if (persistent) {
            std::filesystem::create_directories(directory_);
            write_token_file(file_for(key), *series);
        }
    }
    entries_.emplace(key, series);
    return series;
}

}  // namespace fragmix::geometry
