#include "fragmix/msm.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fragmix/binary_io.hpp"

namespace fragmix::msm {

std::uint64_t CountMatrix::total() const noexcept {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

CountMatrix count_transitions(std::span<const Labels> trajectories, std::size_t states, std::size_t lag) {
    if (lag < 1) throw std::invalid_argument("lag must be at least 1");
    CountMatrix c{states, std::vector<std::uint64_t>(states * states, 0)};
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const Labels& s = trajectories[i];
        for (std::int64_t v : s) {
            if (v < 0 || static_cast<std::size_t>(v) >= states) {
                throw std::invalid_argument("label " + std::to_string(v) + " in trajectory " + std::to_string(i) +
                                            " outside [0, " + std::to_string(states) + ")");
            }
        }
        for (std::size_t t = 0; t + lag < s.size(); ++t) {
            ++c.counts[static_cast<std::size_t>(s[t]) * states + static_cast<std::size_t>(s[t + lag])];
        }
    }
    return c;
}

TransitionMatrix transition_matrix(const CountMatrix& c) {
    const std::size_t n = c.states;
    TransitionMatrix t{n, std::vector<double>(n * n, 0.0), std::vector<std::uint8_t>(n, 0)};
    for (std::size_t a = 0; a < n; ++a) {
        std::uint64_t row = 0;
        for (std::size_t b = 0; b < n; ++b) row += c.counts[a * n + b];
        if (row == 0) {
            t.p[a * n + a] = 1.0;
            t.zero_row[a] = 1;
            continue;
        }
        for (std::size_t b = 0; b < n; ++b) {
            t.p[a * n + b] = static_cast<double>(c.counts[a * n + b]) / static_cast<double>(row);
        }
    }
    return t;
}

std::vector<double> eigenvalue_moduli(const TransitionMatrix& t) {
    const std::size_t n = t.states;
    if (n == 0) return {};
    // Canonical state order: diagonal entry, then sorted row and column
    // entries. Relabeled inputs reach the solver as the same matrix, so the
    // spectrum is bit-identical under permutation.
    std::vector<std::vector<double>> key(n);
    for (std::size_t a = 0; a < n; ++a) {
        std::vector<double> row(n), col(n);
        for (std::size_t b = 0; b < n; ++b) {
            row[b] = t.p[a * n + b];
            col[b] = t.p[b * n + a];
        }
        std::sort(row.begin(), row.end());
        std::sort(col.begin(), col.end());
        key[a].push_back(t.p[a * n + a]);
        key[a].insert(key[a].end(), row.begin(), row.end());
        key[a].insert(key[a].end(), col.begin(), col.end());
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
    Eigen::MatrixXd m(n, n);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            m(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = t.p[order[a] * n + order[b]];
    Eigen::EigenSolver<Eigen::MatrixXd> solver(m, false);
    if (solver.info() != Eigen::Success) throw std::runtime_error("eigenvalue solver failed");
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::abs(solver.eigenvalues()[static_cast<Eigen::Index>(i)]);
    std::sort(out.begin(), out.end(), std::greater<>());
    return out;
}

std::vector<double> implied_timescales(const TransitionMatrix& t, double lag) {
    std::vector<double> out;
    for (double m : eigenvalue_moduli(t)) {
        if (m >= 1.0 - 1e-12) continue;
        out.push_back(m > 0.0 ? -lag / std::log(m) : 0.0);
    }
    return out;
}

std::size_t state_count(std::span<const Labels> trajectories) {
    std::int64_t mx = -1;
    for (const auto& s : trajectories)
        for (std::int64_t v : s) mx = std::max(mx, v);
    return static_cast<std::size_t>(mx + 1);
}

MarkovStateModel build_msm(std::span<const Labels> trajectories, std::size_t states, std::size_t lag) {
    MarkovStateModel m;
    m.states = states;
    m.lag = lag;
    m.counts = count_transitions(trajectories, states, lag);
    m.transition = transition_matrix(m.counts);
    m.populations.assign(states, 0.0);
    std::size_t frames = 0;
    for (const auto& s : trajectories) {
        for (std::int64_t v : s) m.populations[static_cast<std::size_t>(v)] += 1.0;
        frames += s.size();
    }
    if (frames > 0)
        for (double& p : m.populations) p /= static_cast<double>(frames);
    return m;
}

std::vector<Labels> read_labels(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io::IoError("cannot open " + path.string());
    std::vector<Labels> out;
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        const std::size_t line_start = offset;
        offset += line.size() + 1;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        Labels labels;
        std::size_t i = 0;
        while (i < line.size()) {
            if (line[i] == ' ' || line[i] == ',' || line[i] == '\t' || line[i] == '\r') {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < line.size() && line[j] != ' ' && line[j] != ',' && line[j] != '\t' && line[j] != '\r') ++j;
            const std::string tok = line.substr(i, j - i);
            char* end = nullptr;
            const long long v = std::strtoll(tok.c_str(), &end, 10);
            if (end != tok.c_str() + tok.size() || v < 0) {
                throw io::FormatError("bad label '" + tok + "'", line_start + i);
            }
            labels.push_back(v);
            i = j;
        }
        if (!labels.empty()) out.push_back(std::move(labels));
    }
    return out;
}

void write_labels(const std::filesystem::path& path, std::span<const Labels> trajectories) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io::IoError("cannot write " + path.string());
    for (const auto& s : trajectories) {
        for (std::size_t t = 0; t < s.size(); ++t) out << (t ? " " : "") << s[t];
        out << "\n";
    }
    if (!out) throw io::IoError("failed writing " + path.string());
}

void write_msm_csv(const std::filesystem::path& edges, const std::filesystem::path& nodes,
                   const MarkovStateModel& model, double frame_interval_ns, std::uint64_t min_count,
                   const Descriptors& descriptors) {
    const std::size_t n = model.states;
    if (!descriptors.names.empty() && descriptors.means.size() != n * descriptors.names.size()) {
        throw std::invalid_argument("descriptor means do not cover every state");
    }
    const double observed_ns = static_cast<double>(model.counts.total()) * frame_interval_ns;
    std::FILE* e = std::fopen(edges.string().c_str(), "wb");
    if (!e) throw io::IoError("cannot write " + edges.string());
    std::fprintf(e, "from_state,to_state,count,rate_per_ns\n");
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
            const std::uint64_t c = model.counts.at(a, b);
            if (c == 0 || c < min_count) continue;
            std::fprintf(e, "%zu,%zu,%llu,%.17g\n", a, b, static_cast<unsigned long long>(c),
                         static_cast<double>(c) / observed_ns);
        }
    if (std::fclose(e) != 0) throw io::IoError("failed writing " + edges.string());

    std::FILE* f = std::fopen(nodes.string().c_str(), "wb");
    if (!f) throw io::IoError("cannot write " + nodes.string());
    std::fprintf(f, "state,population");
    for (const auto& name : descriptors.names) std::fprintf(f, ",mean_%s", name.c_str());
    std::fprintf(f, "\n");
    for (std::size_t a = 0; a < n; ++a) {
        std::fprintf(f, "%zu,%.17g", a, model.populations[a]);
        for (std::size_t d = 0; d < descriptors.names.size(); ++d) {
            std::fprintf(f, ",%.17g", descriptors.means[a * descriptors.names.size() + d]);
        }
        std::fprintf(f, "\n");
    }
    if (std::fclose(f) != 0) throw io::IoError("failed writing " + nodes.string());
}

}  // namespace fragmix::msm
