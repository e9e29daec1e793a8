#include "fragmix/tmm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "fragmix/ops.hpp"

namespace fragmix::tmm {

GraphOperator parse_operator(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "gcn") return GraphOperator::gcn;
    if (lower == "gc") return GraphOperator::gc;
    if (lower == "rggc") return GraphOperator::rggc;
    if (lower == "tag") return GraphOperator::tag;
    throw ConfigError("unknown graph operator '" + std::string(name) + "' (expected gcn, gc, rggc or tag)");
}

std::string_view operator_name(GraphOperator op) noexcept {
    switch (op) {
        case GraphOperator::gcn: return "gcn";
        case GraphOperator::gc: return "gc";
        case GraphOperator::rggc: return "rggc";
        case GraphOperator::tag: return "tag";
    }
    return "?";
}

std::size_t weight_count(GraphOperator op, std::size_t tag_hops) {
    switch (op) {
        case GraphOperator::gcn:
        case GraphOperator::gc: return 2;
        case GraphOperator::rggc: return 4;
        case GraphOperator::tag:
            if (tag_hops < 1) throw ConfigError("tag operator needs at least one hop");
            return tag_hops + 1;
    }
    return 0;
}

namespace {

struct EdgeIndex {
    std::vector<std::int64_t> dst;  // aggregating node i
    std::vector<std::int64_t> src;  // neighbor j
    std::vector<double> degree;
};

EdgeIndex index_edges(const RadiusGraph& g, std::size_t n) {
    if (g.node_count != n) {
        throw GraphError("graph has " + std::to_string(g.node_count) + " nodes but features have " +
                         std::to_string(n) + " rows");
    }
    EdgeIndex e;
    e.dst.reserve(g.edges.size());
    e.src.reserve(g.edges.size());
    e.degree.assign(n, 0.0);
    for (const auto& [i, j] : g.edges) {
        if (i >= n || j >= n) {
            throw GraphError("edge (" + std::to_string(i) + ", " + std::to_string(j) + ") out of range for " +
                             std::to_string(n) + " nodes");
        }
        e.dst.push_back(i);
        e.src.push_back(j);
        e.degree[i] += 1.0;
    }
    return e;
}

// sum_j c_ij x_j for constant edge coefficients.
Tensor propagate(const Tensor& x, const EdgeIndex& e, std::span<const double> coeff, std::size_t n) {
    Tensor msg = ops::gather_rows(x, e.src);
    if (!coeff.empty()) msg = ops::scale_rows(msg, coeff);
    return ops::scatter_add_rows(msg, e.dst, n);
}

}  // namespace

Tensor graph_conv(const Tensor& x, const RadiusGraph& graph, GraphOperator op, std::span<const Tensor> weights) {
    if (x.rank() != 2) throw DimensionError("graph_conv expects [N x H] features, got " + shape_str(x.shape()));
    const std::size_t n = x.rows();
    const bool bad_count = op == GraphOperator::tag ? weights.size() < 2 : weights.size() != weight_count(op, 1);
    if (bad_count) {
        throw DimensionError("graph operator " + std::string(operator_name(op)) + " got " +
                             std::to_string(weights.size()) + " weight matrices");
    }
    const EdgeIndex e = index_edges(graph, n);

    switch (op) {
        case GraphOperator::gcn: {
            std::vector<double> self(n), cross(e.dst.size());
            for (std::size_t i = 0; i < n; ++i) self[i] = 1.0 / (e.degree[i] + 1.0);
            for (std::size_t k = 0; k < e.dst.size(); ++k) {
                cross[k] = 1.0 / std::sqrt((e.degree[e.dst[k]] + 1.0) * (e.degree[e.src[k]] + 1.0));
            }
            const Tensor own = ops::matmul(ops::scale_rows(x, self), weights[0]);
            if (e.dst.empty()) return own;
            return ops::add(own, ops::matmul(propagate(x, e, cross, n), weights[1]));
        }
        case GraphOperator::gc: {
            const Tensor own = ops::matmul(x, weights[0]);
            if (e.dst.empty()) return own;
            return ops::add(own, ops::matmul(propagate(x, e, {}, n), weights[1]));
        }
        case GraphOperator::rggc: {
            const Tensor own = ops::matmul(x, weights[0]);
            if (e.dst.empty()) return own;
            const Tensor values = ops::gather_rows(ops::matmul(x, weights[1]), e.src);
            const Tensor gate = ops::sigmoid(ops::add(ops::gather_rows(ops::matmul(x, weights[2]), e.dst),
                                                      ops::gather_rows(ops::matmul(x, weights[3]), e.src)));
            return ops::add(own, ops::scatter_add_rows(ops::mul(gate, values), e.dst, n));
        }
        case GraphOperator::tag: {
            std::vector<double> coeff(e.dst.size());
            for (std::size_t k = 0; k < e.dst.size(); ++k) {
                coeff[k] = 1.0 / std::sqrt(e.degree[e.dst[k]] * e.degree[e.src[k]]);
            }
            Tensor out = ops::matmul(x, weights[0]);
            if (e.dst.empty()) return out;
            Tensor hop = x;
            for (std::size_t k = 1; k < weights.size(); ++k) {
                hop = propagate(hop, e, coeff, n);
                out = ops::add(out, ops::matmul(hop, weights[k]));
            }
            return out;
        }
    }
    throw GraphError("unhandled graph operator");
}

RadiusGraph batch_graphs(std::span<const RadiusGraph> graphs) {
    RadiusGraph out;
    std::size_t offset = 0;
    for (const RadiusGraph& g : graphs) {
        out.cutoff = g.cutoff;
        for (const auto& [i, j] : g.edges) {
            out.edges.emplace_back(static_cast<std::uint32_t>(i + offset), static_cast<std::uint32_t>(j + offset));
        }
        offset += g.node_count;
    }
    out.node_count = offset;
    return out;
}

RadiusGraph repeat_graph(const RadiusGraph& graph, std::size_t copies) {
    std::vector<RadiusGraph> parts(copies, graph);
    return batch_graphs(parts);
}

std::size_t fragment_count(std::size_t residues, std::size_t window, std::size_t ligands) {
    if (window < 1) throw ConfigError("window size must be at least 1");
    if (ligands > residues) throw ConfigError("more ligands than residues");
    const std::size_t poly = residues - ligands;
    return (poly + window - 1) / window + ligands;
}

MergePlan merge_plan(std::size_t residues, std::size_t window, std::span<const std::uint8_t> ligand_mask) {
    if (window < 1) throw ConfigError("window size must be at least 1");
    if (!ligand_mask.empty() && ligand_mask.size() != residues) {
        throw DimensionError("ligand mask has " + std::to_string(ligand_mask.size()) + " entries for " +
                             std::to_string(residues) + " residues");
    }
    std::size_t ligands = 0;
    bool seen = false;
    for (std::uint8_t flag : ligand_mask) {
        if (flag) {
            ++ligands;
            seen = true;
        } else if (seen) {
            throw ConfigError("ligand residues must be contiguous at the end of the sequence");
        }
    }
    MergePlan plan;
    plan.residues = residues;
    plan.window = window;
    plan.fragments = fragment_count(residues, window, ligands);
    plan.slots.assign(plan.fragments * window, -1);
    const std::size_t poly = residues - ligands;
    for (std::size_t r = 0; r < poly; ++r) plan.slots[r] = static_cast<std::int64_t>(r);
    const std::size_t poly_windows = (poly + window - 1) / window;
    for (std::size_t l = 0; l < ligands; ++l) {
        plan.slots[(poly_windows + l) * window] = static_cast<std::int64_t>(poly + l);
    }
    return plan;
}

Tensor window_inputs(const Tensor& x, const MergePlan& plan, std::size_t batch) {
    if (x.rank() != 2 || x.rows() != batch * plan.residues) {
        throw DimensionError("window_inputs expects [" + std::to_string(batch * plan.residues) + " x H], got " +
                             shape_str(x.shape()));
    }
    const std::size_t h = x.cols();
    std::vector<std::int64_t> index;
    index.reserve(batch * plan.slots.size());
    for (std::size_t b = 0; b < batch; ++b) {
        const auto base = static_cast<std::int64_t>(b * plan.residues);
        for (std::int64_t s : plan.slots) index.push_back(s < 0 ? -1 : s + base);
    }
    return ops::reshape(ops::gather_rows(x, index), {batch * plan.fragments, plan.window * h});
}

Tensor positional_encoding(std::size_t positions, std::size_t hidden) {
    if (hidden % 2 != 0) throw ConfigError("positional encoding needs an even width, got " + std::to_string(hidden));
    Tensor pe = Tensor::zeros({positions, hidden});
    auto d = pe.mutable_data();
    for (std::size_t p = 0; p < positions; ++p) {
        for (std::size_t i = 0; i < hidden / 2; ++i) {
            const double angle =
                static_cast<double>(p) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(hidden));
            d[p * hidden + 2 * i] = std::sin(angle);
            d[p * hidden + 2 * i + 1] = std::cos(angle);
        }
    }
    return pe;
}

Tensor add_positional_encoding(const Tensor& x, std::size_t positions) {
    const std::size_t h = x.cols();
    if (x.rows() % positions != 0) throw DimensionError("rows are not a multiple of the fragment count");
    const std::size_t batch = x.rows() / positions;
    const Tensor pe = positional_encoding(positions, h).reshaped({positions * h});
    return ops::reshape(ops::add(ops::reshape(x, {batch, positions * h}), pe), {batch * positions, h});
}

void TmmConfig::validate() const {
    if (window < 1) throw ConfigError("window size must be at least 1");
    if (hidden < 1) throw ConfigError("hidden width must be positive");
    if (op == GraphOperator::tag && tag_hops < 1) throw ConfigError("tag operator needs at least one hop");
    if (!(cutoff > 0.0)) throw ConfigError("graph cutoff must be positive");
}

TokenMergingModule TokenMergingModule::create(ParameterStore& store, const std::string& name,
                                              const TmmConfig& config, Rng& rng) {
    config.validate();
    TokenMergingModule m;
    m.config_ = config;
    const std::size_t h = config.hidden;
    for (std::size_t k = 0; k < weight_count(config.op, config.tag_hops); ++k) {
        m.weight_names_.push_back(name + ".graph.W" + std::to_string(k));
        store.add(m.weight_names_.back(), uniform_init({h, h}, h, rng));
    }
    m.merge_ = Mlp2::create(store, name + ".merge", config.window * h, h, h, rng);
    return m;
}

std::vector<Tensor> TokenMergingModule::graph_weights(const ParameterStore& store) const {
    std::vector<Tensor> w;
    for (const std::string& n : weight_names_) w.push_back(store.get(n));
    return w;
}

Tensor TokenMergingModule::forward(const ParameterStore& store, const Tensor& x, const RadiusGraph& graph,
                                   const MergePlan& plan, std::size_t batch) const {
    const std::vector<Tensor> w = graph_weights(store);
    const Tensor mixed = graph_conv(x, graph, config_.op, w);
    return merge_(store, window_inputs(mixed, plan, batch));
}

}  // namespace fragmix::tmm
