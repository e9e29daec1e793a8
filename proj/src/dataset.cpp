#include "fragmix/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "fragmix/binary_io.hpp"
#include "fragmix/random.hpp"

namespace fragmix::pipeline {

namespace {

constexpr std::string_view kPositionMagic{"G2VPOS1\0", 8};

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    return out;
}

template <class T>
T parse_number(const std::string& text, const std::string& what) {
    T value{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) throw io::FormatError("bad " + what + " '" + text + "'", 0);
    return value;
}

}  // namespace

void write_position_file(const std::filesystem::path& path, const PositionTrajectory& traj) {
    traj.topology.validate();
    const std::size_t atoms = traj.topology.atom_count();
    if (traj.positions.size() != atoms * traj.frames) {
        throw geometry::InputError("position count does not match atoms x frames");
    }
    io::ByteWriter w;
    w.bytes(kPositionMagic);
    w.u32(static_cast<std::uint32_t>(atoms));
    w.u32(static_cast<std::uint32_t>(traj.frames));
    for (std::uint32_t r : traj.topology.residue_of_atom) w.u32(r);
    for (std::uint32_t a : traj.topology.anchor_atom) w.u32(a);
    for (std::uint8_t l : traj.topology.ligand) w.u8(l);
    for (const Vec3& p : traj.positions) {
        w.f64(p[0]);
        w.f64(p[1]);
        w.f64(p[2]);
    }
    w.write_file(path);
}

PositionTrajectory read_position_file(const std::filesystem::path& path) {
    auto r = io::ByteReader::from_file(path);
    r.expect_magic(kPositionMagic, "position file");
    PositionTrajectory traj;
    const std::uint32_t atoms = r.u32("atom count");
    traj.frames = r.u32("frame count");
    if (atoms == 0) throw io::FormatError("position file has no atoms", r.offset() - 8);
    traj.topology.residue_of_atom.resize(atoms);
    std::uint32_t residues = 0;
    for (auto& v : traj.topology.residue_of_atom) {
        const std::size_t at = r.offset();
        v = r.u32("residue id");
        if (v >= atoms) throw io::FormatError("residue id out of range", at);
        residues = std::max(residues, v + 1);
    }
    traj.topology.anchor_atom.resize(residues);
    for (auto& v : traj.topology.anchor_atom) {
        const std::size_t at = r.offset();
        v = r.u32("anchor atom");
        if (v >= atoms) throw io::FormatError("anchor atom out of range", at);
    }
    traj.topology.ligand.resize(residues);
    for (auto& v : traj.topology.ligand) v = r.u8("ligand flag");
    const std::size_t expected = std::size_t{atoms} * traj.frames * 3 * sizeof(double);
    if (r.remaining() != expected) {
        throw io::FormatError("position payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                                  std::to_string(expected),
                              r.offset());
    }
    traj.positions.resize(std::size_t{atoms} * traj.frames);
    for (Vec3& p : traj.positions) {
        p[0] = r.f64("x");
        p[1] = r.f64("y");
        p[2] = r.f64("z");
    }
    r.expect_end("position file");
    try {
        traj.topology.validate();
    } catch (const geometry::InputError& e) {
        throw io::FormatError(std::string("invalid topology: ") + e.what(), 16);
    }
    return traj;
}

PositionTrajectory import_positions_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io::IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw io::FormatError("empty CSV " + path.string(), 0);
    const std::vector<std::string> want{"frame", "atom", "x", "y", "z", "residue", "is_anchor", "is_ligand"};
    if (split_csv(line) != want) throw io::FormatError("unexpected CSV header '" + trim(line) + "'", 0);

    struct Row {
        std::size_t frame, atom;
        Vec3 p;
        std::uint32_t residue;
        bool anchor, ligand;
    };
    std::vector<Row> rows;
    std::size_t offset = line.size() + 1;
    while (std::getline(in, line)) {
        const std::size_t line_offset = offset;
        offset += line.size() + 1;
        if (trim(line).empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != want.size()) throw io::FormatError("expected 8 CSV fields", line_offset);
        try {
            rows.push_back(Row{parse_number<std::size_t>(cells[0], "frame"), parse_number<std::size_t>(cells[1], "atom"),
                               Vec3{parse_number<double>(cells[2], "x"), parse_number<double>(cells[3], "y"),
                                    parse_number<double>(cells[4], "z")},
                               parse_number<std::uint32_t>(cells[5], "residue"),
                               parse_number<int>(cells[6], "is_anchor") != 0,
                               parse_number<int>(cells[7], "is_ligand") != 0});
        } catch (const io::FormatError& e) {
            throw io::FormatError(e.what(), line_offset);
        }
    }
    if (rows.empty()) throw io::FormatError("CSV has no rows", offset);
    std::size_t frames = 0, atoms = 0;
    for (const Row& r : rows) {
        frames = std::max(frames, r.frame + 1);
        atoms = std::max(atoms, r.atom + 1);
    }
    if (rows.size() != frames * atoms) throw io::FormatError("CSV does not cover every (frame, atom) once", 0);

    PositionTrajectory traj;
    traj.frames = frames;
    traj.positions.assign(frames * atoms, Vec3{0, 0, 0});
    std::vector<std::uint8_t> seen(frames * atoms, 0);
    traj.topology.residue_of_atom.assign(atoms, 0);
    std::map<std::uint32_t, std::uint32_t> anchors;
    std::map<std::uint32_t, std::uint8_t> ligand;
    for (const Row& r : rows) {
        const std::size_t idx = r.frame * atoms + r.atom;
        if (seen[idx]) throw io::FormatError("duplicate row for frame " + std::to_string(r.frame), 0);
        seen[idx] = 1;
        traj.positions[idx] = r.p;
        if (r.frame != 0) continue;
        traj.topology.residue_of_atom[r.atom] = r.residue;
        if (r.anchor) anchors[r.residue] = static_cast<std::uint32_t>(r.atom);
        ligand[r.residue] = static_cast<std::uint8_t>(ligand[r.residue] | (r.ligand ? 1 : 0));
    }
    const std::size_t residues = ligand.empty() ? 0 : ligand.rbegin()->first + 1;
    traj.topology.anchor_atom.assign(residues, 0);
    traj.topology.ligand.assign(residues, 0);
    for (std::size_t res = 0; res < residues; ++res) {
        const auto a = anchors.find(static_cast<std::uint32_t>(res));
        if (a == anchors.end()) throw io::FormatError("residue " + std::to_string(res) + " has no anchor", 0);
        traj.topology.anchor_atom[res] = a->second;
        traj.topology.ligand[res] = ligand[static_cast<std::uint32_t>(res)];
    }
    traj.topology.validate();
    return traj;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io::IoError("cannot write " + path.string());
    char interval[64];
    std::snprintf(interval, sizeof interval, "%.17g", manifest.frame_interval_ns);
    out << "kind=" << manifest.kind << "\n";
    out << "system=" << manifest.system << "\n";
    out << "frame_interval_ns=" << interval << "\n";
    for (const ManifestEntry& e : manifest.trajectories) {
        out << "traj " << e.file << " " << e.frames;
        if (!e.positions.empty()) out << " " << e.positions;
        out << "\n";
    }
    if (!out) throw io::IoError("failed writing " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io::IoError("cannot open " + path.string());
    Manifest m;
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        const std::size_t at = offset;
        offset += line.size() + 1;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.rfind("traj ", 0) == 0) {
            std::istringstream ss(t.substr(5));
            ManifestEntry e;
            std::string frames;
            if (!(ss >> e.file >> frames)) throw io::FormatError("malformed traj line", at);
            e.frames = parse_number<std::size_t>(frames, "frame count");
            ss >> e.positions;
            m.trajectories.push_back(e);
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw io::FormatError("expected key=value", at);
        const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
        if (key == "kind") {
            if (value != "positions" && value != "tokens") throw io::FormatError("unknown manifest kind " + value, at);
            m.kind = value;
        } else if (key == "system") {
            m.system = value;
        } else if (key == "frame_interval_ns") {
            try {
                m.frame_interval_ns = parse_number<double>(value, "frame interval");
            } catch (const io::FormatError& e) {
                throw io::FormatError(e.what(), at);
            }
            if (!(m.frame_interval_ns > 0)) throw io::FormatError("frame interval must be positive", at);
        } else {
            throw io::FormatError("unknown manifest key " + key, at);
        }
    }
    return m;
}

std::size_t TrajectoryDataset::residues() const {
    if (trajectories.empty()) throw ConfigError("empty dataset");
    return trajectories.front().tokens.residues;
}

std::size_t TrajectoryDataset::hidden() const {
    if (trajectories.empty()) throw ConfigError("empty dataset");
    return trajectories.front().tokens.hidden;
}

std::size_t TrajectoryDataset::total_frames() const noexcept {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.frames();
    return n;
}

std::size_t TrajectoryDataset::lag_frames(double lag_ns) const {
    const double frames = std::round(lag_ns / (frame_interval_ns * static_cast<double>(stride)));
    if (!(frames >= 1.0)) {
        throw ConfigError("lag of " + std::to_string(lag_ns) + " ns is below one frame");
    }
    return static_cast<std::size_t>(frames);
}

namespace {

PositionTrajectory strided(const PositionTrajectory& in, std::size_t stride) {
    if (stride <= 1) return in;
    PositionTrajectory out;
    out.topology = in.topology;
    for (std::size_t t = 0; t < in.frames; t += stride) {
        const auto f = in.frame(t);
        out.positions.insert(out.positions.end(), f.begin(), f.end());
        ++out.frames;
    }
    return out;
}

std::vector<geometry::RadiusGraph> frame_graphs(const PositionTrajectory& traj, double cutoff) {
    std::vector<geometry::RadiusGraph> graphs;
    graphs.reserve(traj.frames);
    for (std::size_t t = 0; t < traj.frames; ++t) {
        graphs.push_back(geometry::radius_graph(geometry::anchor_positions({traj.frame(t), &traj.topology}), cutoff));
    }
    return graphs;
}

}  // namespace

Trajectory make_trajectory(const std::string& name, const PositionTrajectory& positions,
                           const DatasetOptions& options, geometry::TokenCache* cache) {
    const PositionTrajectory traj = strided(positions, options.stride);
    const geometry::ResidueFeaturizer featurizer(options.featurizer);
    auto compute = [&] { return geometry::featurize_series(featurizer, traj.topology, traj.positions, traj.frames); };
    Trajectory out;
    out.name = name;
    if (cache) {
        const std::string key = name + ".h" + std::to_string(options.featurizer.hidden) + ".s" +
                                std::to_string(options.featurizer.seed) + ".x" + std::to_string(options.stride);
        out.tokens = *cache->get_or_compute(key, compute);
    } else {
        out.tokens = compute();
    }
    out.graphs = frame_graphs(traj, options.cutoff);
    out.ligand = traj.topology.ligand;
    return out;
}

TrajectoryDataset load_dataset(const std::filesystem::path& manifest_path, const DatasetOptions& options,
                               geometry::TokenCache* cache) {
    const Manifest m = read_manifest(manifest_path);
    if (m.trajectories.empty()) throw ConfigError("manifest lists no trajectories: " + manifest_path.string());
    const auto base = manifest_path.parent_path();
    TrajectoryDataset ds;
    ds.frame_interval_ns = m.frame_interval_ns;
    ds.stride = std::max<std::size_t>(options.stride, 1);
    for (const ManifestEntry& e : m.trajectories) {
        if (m.kind == "positions") {
            const PositionTrajectory pos = read_position_file(base / e.file);
            if (pos.frames != e.frames) throw ConfigError("frame count mismatch for " + e.file);
            ds.trajectories.push_back(make_trajectory((base / e.file).string(), pos, options, cache));
            continue;
        }
        Trajectory t;
        t.name = (base / e.file).string();
        geometry::TokenSeries full = geometry::read_token_file(base / e.file);
        if (full.frames != e.frames) throw ConfigError("frame count mismatch for " + e.file);
        if (ds.stride > 1) {
            geometry::TokenSeries s{full.residues, full.hidden, 0, {}};
            for (std::size_t f = 0; f < full.frames; f += ds.stride) {
                const auto v = full.frame(f);
                s.values.insert(s.values.end(), v.begin(), v.end());
                ++s.frames;
            }
            full = std::move(s);
        }
        t.tokens = std::move(full);
        t.ligand.assign(t.tokens.residues, 0);
        if (!e.positions.empty()) {
            const PositionTrajectory pos = strided(read_position_file(base / e.positions), ds.stride);
            if (pos.frames != t.tokens.frames || pos.topology.residue_count() != t.tokens.residues) {
                throw ConfigError("token file " + e.file + " does not match positions " + e.positions);
            }
            t.graphs = frame_graphs(pos, options.cutoff);
            t.ligand = pos.topology.ligand;
        }
        ds.trajectories.push_back(std::move(t));
    }
    for (const Trajectory& t : ds.trajectories) {
        if (t.tokens.residues != ds.residues() || t.tokens.hidden != ds.hidden()) {
            throw ConfigError("trajectories disagree on residue count or token width");
        }
    }
    if (options.standardize) standardize_tokens(ds);
    return ds;
}

ChannelScaling standardize_tokens(TrajectoryDataset& dataset) {
    const std::size_t h = dataset.hidden();
    ChannelScaling c{std::vector<double>(h, 0.0), std::vector<double>(h, 1.0)};
    std::vector<double> m2(h, 0.0);
    std::size_t n = 0;
    // Welford per channel.
    for (const Trajectory& t : dataset.trajectories) {
        for (std::size_t i = 0; i < t.tokens.values.size(); i += h) {
            ++n;
            for (std::size_t j = 0; j < h; ++j) {
                const double d = t.tokens.values[i + j] - c.mean[j];
                c.mean[j] += d / static_cast<double>(n);
                m2[j] += d * (t.tokens.values[i + j] - c.mean[j]);
            }
        }
    }
    if (n == 0) return c;
    for (std::size_t j = 0; j < h; ++j) {
        const double sd = std::sqrt(m2[j] / static_cast<double>(n));
        c.scale[j] = sd > 1e-12 * (1.0 + std::abs(c.mean[j])) ? 1.0 / sd : 1.0;
    }
    for (Trajectory& t : dataset.trajectories) {
        for (std::size_t i = 0; i < t.tokens.values.size(); i += h)
            for (std::size_t j = 0; j < h; ++j) t.tokens.values[i + j] = (t.tokens.values[i + j] - c.mean[j]) * c.scale[j];
    }
    return c;
}

SplitMode parse_split_mode(const std::string& name) {
    if (name == "trajectory" || name == "by_trajectory") return SplitMode::by_trajectory;
    if (name == "temporal" || name == "by_temporal_fragment") return SplitMode::by_temporal_fragment;
    throw ConfigError("unknown split mode '" + name + "' (expected trajectory or temporal)");
}

std::vector<std::size_t> frame_counts(const TrajectoryDataset& dataset) {
    std::vector<std::size_t> out;
    for (const auto& t : dataset.trajectories) out.push_back(t.frames());
    return out;
}

std::vector<Segment> whole_trajectories(std::span<const std::size_t> counts) {
    std::vector<Segment> out;
    for (std::size_t i = 0; i < counts.size(); ++i) out.push_back({i, 0, counts[i]});
    return out;
}

Split split(std::span<const std::size_t> counts, const SplitSpec& spec) {
    if (!(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0)) {
        throw SplitError("validation fraction must lie in (0, 1)");
    }
    std::vector<Segment> units;
    if (spec.mode == SplitMode::by_trajectory) {
        units = whole_trajectories(counts);
    } else {
        if (spec.fragments < 1) throw SplitError("temporal split needs at least one fragment per trajectory");
        for (std::size_t i = 0; i < counts.size(); ++i) {
            for (std::size_t f = 0; f < spec.fragments; ++f) {
                units.push_back({i, counts[i] * f / spec.fragments, counts[i] * (f + 1) / spec.fragments});
            }
        }
    }
    if (units.size() < 2) throw SplitError("split needs at least 2 units, got " + std::to_string(units.size()));
    const auto n_val = static_cast<std::size_t>(std::llround(spec.validation_fraction * static_cast<double>(units.size())));
    if (n_val == 0) throw SplitError("validation fraction selects 0 of " + std::to_string(units.size()) + " units");
    if (n_val >= units.size()) throw SplitError("validation fraction leaves no training units");

    std::vector<std::size_t> order(units.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(spec.seed, 0x5B17));
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::uint8_t> is_val(units.size(), 0);
    for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = 1;
    Split out;
    for (std::size_t u = 0; u < units.size(); ++u) (is_val[u] ? out.validation : out.train).push_back(units[u]);
    return out;
}

std::size_t lagged_pair_count(std::size_t frames, std::size_t lag) noexcept {
    return frames > lag ? frames - lag : 0;
}

std::vector<LaggedPair> lagged_pairs(std::span<const Segment> segments, std::size_t lag,
                                     std::vector<std::string>* warnings) {
    if (lag < 1) throw ConfigError("lag must be at least one frame");
    std::vector<LaggedPair> out;
    for (const Segment& s : segments) {
        const std::size_t n = lagged_pair_count(s.length(), lag);
        if (n == 0) {
            if (warnings) {
                warnings->push_back("trajectory " + std::to_string(s.trajectory) + " frames [" +
                                    std::to_string(s.begin) + ", " + std::to_string(s.end) +
                                    ") shorter than lag " + std::to_string(lag) + "; skipped");
            }
            continue;
        }
        for (std::size_t t = s.begin; t < s.begin + n; ++t) {
            out.push_back({static_cast<std::uint32_t>(s.trajectory), static_cast<std::uint32_t>(t)});
        }
    }
    return out;
}

}  // namespace fragmix::pipeline
