#pragma once

// Token-merging module: one message-passing layer over the residue graph,
// then a shared MLP mapping each window of w residue tokens to one fragment
// token.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fragmix/geometry.hpp"
#include "fragmix/nn.hpp"
#include "fragmix/tensor.hpp"

namespace fragmix::tmm {

using geometry::RadiusGraph;

enum class GraphOperator { gcn, gc, rggc, tag };

// Accepts gcn, gc, rggc, tag (case-insensitive).
GraphOperator parse_operator(std::string_view name);
std::string_view operator_name(GraphOperator op) noexcept;

class GraphError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Number of H x H weight matrices: W0, W1 (+ W2, W3 for rggc, W0..WK for tag).
std::size_t weight_count(GraphOperator op, std::size_t tag_hops);

// Rows of x are node features; weights act on the right (x W).
//   gcn:  x_i W0 / d_i + sum_j x_j W1 / sqrt(d_i d_j),  d = degree + 1
//   gc:   x_i W0 + sum_j x_j W1
//   rggc: x_i W0 + sum_j sigmoid(x_i W2 + x_j W3) * (x_j W1)
//   tag:  sum_k (T^k x)_i Wk,  T = D^-1/2 A D^-1/2
Tensor graph_conv(const Tensor& x, const RadiusGraph& graph, GraphOperator op, std::span<const Tensor> weights);

// Disjoint union; node ids of graph g are shifted by the nodes before it.
RadiusGraph batch_graphs(std::span<const RadiusGraph> graphs);
// The same graph repeated `copies` times.
RadiusGraph repeat_graph(const RadiusGraph& graph, std::size_t copies);

std::size_t fragment_count(std::size_t residues, std::size_t window, std::size_t ligands);

// Residue index feeding each window slot (-1 for zero padding).
struct MergePlan {
    std::size_t residues = 0;
    std::size_t window = 0;
    std::size_t fragments = 0;
    std::vector<std::int64_t> slots;  // fragments x window
};

MergePlan merge_plan(std::size_t residues, std::size_t window, std::span<const std::uint8_t> ligand_mask);

// [(B*N) x H] -> [(B*M) x (w*H)], concatenating each window's tokens.
Tensor window_inputs(const Tensor& x, const MergePlan& plan, std::size_t batch);

// PE[p, 2i] = sin(p / 10000^(2i/H)), PE[p, 2i+1] = cos(same).
Tensor positional_encoding(std::size_t positions, std::size_t hidden);
// x is [(B*M) x H], rows grouped by sample.
Tensor add_positional_encoding(const Tensor& x, std::size_t positions);

struct TmmConfig {
    GraphOperator op = GraphOperator::gcn;
    std::size_t window = 1;
    std::size_t hidden = 16;
    std::size_t tag_hops = 2;
    double cutoff = 10.0;

    void validate() const;
};

class TokenMergingModule {
public:
    static TokenMergingModule create(ParameterStore& store, const std::string& name, const TmmConfig& config,
                                     Rng& rng);

    const TmmConfig& config() const noexcept { return config_; }
    std::vector<Tensor> graph_weights(const ParameterStore& store) const;

    // x: [(B*N) x H] over a graph batched to B*N nodes -> [(B*M) x H].
    Tensor forward(const ParameterStore& store, const Tensor& x, const RadiusGraph& graph, const MergePlan& plan,
                   std::size_t batch) const;

private:
    TmmConfig config_;
    std::vector<std::string> weight_names_;
    Mlp2 merge_;
};

}  // namespace fragmix::tmm
