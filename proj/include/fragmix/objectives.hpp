#pragma once

// Training objectives: the VAMP-2 score over lagged feature pairs and the SPIB
// loss with a VampPrior, plus k-means label initialization.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fragmix/nn.hpp"
#include "fragmix/tensor.hpp"

namespace fragmix::objectives {

constexpr double kWhiteningEps = 1e-6;

struct Covariances {
    Tensor c00;
    Tensor c0t;
    Tensor ctt;
};

// Mean-centered, batch-averaged (divided by B) instantaneous and lagged
// covariances of f0, ft: [B x k] each.
Covariances lagged_covariances(const Tensor& f0, const Tensor& ft);

// ||C00^-1/2 C0t Ctt^-1/2||_F^2 + 1, eigenvalues <= eps discarded in both
// inverse square roots. Scalar tensor, differentiable.
Tensor vamp2_from_covariances(const Covariances& c, double eps = kWhiteningEps);
Tensor vamp2_score(const Tensor& f0, const Tensor& ft, double eps = kWhiteningEps);

// Leading singular functions of the whitened Koopman matrix, estimated once
// from a (large) set of lagged pairs and applied to new features.
struct VampModes {
    std::size_t input_dim = 0;
    std::vector<double> mean;             // [k]
    std::vector<double> projection;       // [k x r], right-multiplies centered features
    std::vector<double> singular_values;  // [r], descending
};

VampModes vamp_modes(const Tensor& f0, const Tensor& ft, double eps = kWhiteningEps);
// [B x k] -> [B x r]
std::vector<double> project_modes(const VampModes& modes, std::span<const double> features, std::size_t rows);

// Chi network shared between the instantaneous and lagged inputs.
struct VampHead {
    Mlp2 net;
    std::size_t outputs = 0;

    static VampHead create(ParameterStore& store, const std::string& name, std::size_t hidden, std::size_t outputs,
                           Rng& rng);
    Tensor operator()(const ParameterStore& store, const Tensor& h) const { return net(store, h); }
};

struct KMeansResult {
    std::size_t k = 0;
    std::size_t dim = 0;
    std::vector<double> centroids;        // [k x dim]
    std::vector<std::uint32_t> labels;    // per point
    double inertia = 0.0;
    std::size_t iterations = 0;
    std::string warning;                  // set when k was reduced
};

// Lloyd iterations after k-means++ seeding; stops after max_iter or when no
// centroid moves more than tol. Ties go to the lower centroid index.
KMeansResult kmeans(std::span<const double> points, std::size_t dim, std::size_t k, std::uint64_t seed,
                    std::size_t max_iter = 300, double tol = 1e-6);

struct SpibConfig {
    std::size_t hidden = 16;
    std::size_t latent = 2;
    std::size_t states = 2;
    std::size_t pseudo_inputs = 10;
    double beta = 0.01;

    void validate() const;
};

// Gaussian encoder (mean and log-variance heads), label decoder, and the
// pseudo-inputs of the VampPrior, which live in the pooled-embedding space.
class SpibHead {
public:
    static SpibHead create(ParameterStore& store, const std::string& name, const SpibConfig& config, Rng& rng);

    const SpibConfig& config() const noexcept { return config_; }
    std::size_t states() const noexcept { return config_.states; }

    struct Encoded {
        Tensor mean;    // [B x dz]
        Tensor logvar;  // [B x dz]
    };
    Encoded encode(const ParameterStore& store, const Tensor& h) const;
    // Log state probabilities: [B x dz] -> [B x states].
    Tensor decode(const ParameterStore& store, const Tensor& z) const;
    const Tensor& pseudo_inputs(const ParameterStore& store) const;

    // Keeps decoder outputs for the listed states, in order.
    void keep_states(ParameterStore& store, std::span<const std::int64_t> kept);

private:
    SpibConfig config_;
    Linear mean_, logvar_;
    Mlp2 decoder_;
    std::string pseudo_name_;
};

struct SpibTerms {
    Tensor loss;                   // negated objective, scalar
    double log_likelihood = 0.0;   // batch mean of ln q(s_t+tau | z)
    double kl = 0.0;               // batch mean of ln p(z|x) - ln r(z)
};

// Reparameterized single-sample estimate; noise drawn from `noise`.
SpibTerms spib_loss(const SpibHead& head, const ParameterStore& store, const Tensor& h0,
                    std::span<const std::int64_t> future_labels, const CounterKey& noise);

// argmax_s q(s | mean(h)), ties toward the lower index.
std::vector<std::int64_t> predict_labels(const SpibHead& head, const ParameterStore& store, const Tensor& h);

struct Compaction {
    std::vector<std::int64_t> labels;  // relabeled 0..states-1
    std::vector<std::int64_t> kept;    // old index of each surviving state
    std::size_t states = 0;
};

// Removes unused states and renumbers the rest in increasing old-index order.
Compaction compact_labels(std::span<const std::int64_t> labels, std::size_t states);

}  // namespace fragmix::objectives
