#include "fragmix/objectives.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "fragmix/linalg.hpp"
#include "fragmix/ops.hpp"

namespace fragmix::objectives {

namespace {

Tensor centered(const Tensor& f) { return ops::sub(f, ops::mean_rows(f)); }

void require_pairs(const Tensor& f0, const Tensor& ft) {
    if (f0.rank() != 2 || f0.shape() != ft.shape()) {
        throw DimensionError("lagged features must share a [B x k] shape, got " + shape_str(f0.shape()) + " and " +
                             shape_str(ft.shape()));
    }
    if (f0.rows() < 2) throw DimensionError("lagged covariances need at least two pairs");
}

}  // namespace

Covariances lagged_covariances(const Tensor& f0, const Tensor& ft) {
    require_pairs(f0, ft);
    const double inv_b = 1.0 / static_cast<double>(f0.rows());
    const Tensor a = centered(f0);
    const Tensor b = centered(ft);
    const Tensor at = ops::transpose(a);
    return Covariances{ops::scale(ops::matmul(at, a), inv_b), ops::scale(ops::matmul(at, b), inv_b),
                       ops::scale(ops::matmul(ops::transpose(b), b), inv_b)};
}

Tensor vamp2_from_covariances(const Covariances& c, double eps) {
    if (!(eps > 0.0)) throw ConfigError("whitening eps must be positive");
    const Tensor w0 = linalg::sym_matrix_power(c.c00, -0.5, eps);
    const Tensor wt = linalg::sym_matrix_power(c.ctt, -0.5, eps);
    const Tensor koopman = ops::matmul(ops::matmul(w0, c.c0t), wt);
    return ops::add_scalar(ops::sum(ops::square(koopman)), 1.0);
}

Tensor vamp2_score(const Tensor& f0, const Tensor& ft, double eps) {
    return vamp2_from_covariances(lagged_covariances(f0, ft), eps);
}

VampModes vamp_modes(const Tensor& f0, const Tensor& ft, double eps) {
    NoGradScope no_grad;
    const Covariances c = lagged_covariances(f0, ft);
    const std::size_t k = f0.cols();
    const Tensor w0 = linalg::sym_matrix_power(c.c00, -0.5, eps);
    const Tensor wt = linalg::sym_matrix_power(c.ctt, -0.5, eps);
    const Tensor koopman = ops::matmul(ops::matmul(w0, c.c0t), wt);

    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Mat kmat = Eigen::Map<const Mat>(koopman.data().data(), static_cast<Eigen::Index>(k),
                                           static_cast<Eigen::Index>(k));
    const Mat w0m = Eigen::Map<const Mat>(w0.data().data(), static_cast<Eigen::Index>(k),
                                          static_cast<Eigen::Index>(k));
    Eigen::JacobiSVD<Mat> svd(kmat, Eigen::ComputeFullU);
    const std::size_t rank = linalg::sym_rank(c.c00, eps);

    VampModes modes;
    modes.input_dim = k;
    const Tensor mu = ops::mean_rows(f0);
    modes.mean.assign(mu.data().begin(), mu.data().end());
    const Mat proj = w0m * svd.matrixU().leftCols(static_cast<Eigen::Index>(rank));
    modes.projection.resize(k * rank);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < rank; ++j)
            modes.projection[i * rank + j] = proj(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    for (std::size_t j = 0; j < rank; ++j) modes.singular_values.push_back(svd.singularValues()(static_cast<Eigen::Index>(j)));
    return modes;
}

std::vector<double> project_modes(const VampModes& modes, std::span<const double> features, std::size_t rows) {
    const std::size_t k = modes.input_dim;
    const std::size_t r = modes.singular_values.size();
    if (features.size() != rows * k) throw DimensionError("feature block does not match the mode input width");
    std::vector<double> out(rows * r, 0.0);
    for (std::size_t b = 0; b < rows; ++b)
        for (std::size_t i = 0; i < k; ++i) {
            const double x = features[b * k + i] - modes.mean[i];
            for (std::size_t j = 0; j < r; ++j) out[b * r + j] += x * modes.projection[i * r + j];
        }
    return out;
}

VampHead VampHead::create(ParameterStore& store, const std::string& name, std::size_t hidden, std::size_t outputs,
                          Rng& rng) {
    if (outputs == 0) throw ConfigError("VAMP head needs at least one output");
    return VampHead{Mlp2::create(store, name, hidden, hidden, outputs, rng), outputs};
}

KMeansResult kmeans(std::span<const double> points, std::size_t dim, std::size_t k, std::uint64_t seed,
                    std::size_t max_iter, double tol) {
    if (dim == 0 || points.size() % dim != 0) throw DimensionError("point array is not a multiple of the dimension");
    const std::size_t n = points.size() / dim;
    if (k == 0) throw ConfigError("k-means needs k >= 1");
    if (n < k) {
        throw ConfigError("k-means needs at least k points (" + std::to_string(n) + " < " + std::to_string(k) + ")");
    }
    auto point = [&](std::size_t i) { return points.data() + i * dim; };
    auto dist2 = [dim](const double* a, const double* b) {
        double s = 0.0;
        for (std::size_t j = 0; j < dim; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
        return s;
    };

    KMeansResult res;
    res.dim = dim;
    {
        std::vector<std::vector<double>> rows;
        rows.reserve(n);
        for (std::size_t i = 0; i < n; ++i) rows.emplace_back(point(i), point(i) + dim);
        std::sort(rows.begin(), rows.end());
        const auto distinct = static_cast<std::size_t>(std::unique(rows.begin(), rows.end()) - rows.begin());
        if (distinct < k) {
            res.warning = "only " + std::to_string(distinct) + " distinct points; reducing k from " +
                          std::to_string(k) + " to " + std::to_string(distinct);
            k = distinct;
        }
    }
    res.k = k;

    // k-means++ seeding.
    Rng rng(derive_seed(seed, 0x6B6D));
    std::vector<double>& c = res.centroids;
    c.reserve(k * dim);
    const std::size_t first = rng.below(n);
    c.insert(c.end(), point(first), point(first) + dim);
    std::vector<double> nearest(n);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = dist2(point(i), c.data());
    while (c.size() < k * dim) {
        double total = 0.0;
        for (double v : nearest) total += v;
        const double target = rng.uniform() * total;
        std::size_t pick = n;
        double cum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (nearest[i] <= 0.0) continue;
            cum += nearest[i];
            pick = i;
            if (cum > target) break;
        }
        c.insert(c.end(), point(pick), point(pick) + dim);
        const double* added = c.data() + c.size() - dim;
        for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], dist2(point(i), added));
    }

    res.labels.assign(n, 0);
    std::vector<double> sums(k * dim);
    std::vector<std::size_t> counts(k);
    auto assign = [&]() {
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::uint32_t arg = 0;
            for (std::size_t j = 0; j < k; ++j) {
                const double d2 = dist2(point(i), c.data() + j * dim);
                if (d2 < best) {
                    best = d2;
                    arg = static_cast<std::uint32_t>(j);
                }
            }
            res.labels[i] = arg;
            inertia += best;
        }
        return inertia;
    };
    res.inertia = assign();
    for (res.iterations = 0; res.iterations < max_iter;) {
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[res.labels[i]];
            for (std::size_t j = 0; j < dim; ++j) sums[res.labels[i] * dim + j] += point(i)[j];
        }
        double shift = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] == 0) continue;  // empty cluster keeps its centroid
            double d2 = 0.0;
            for (std::size_t a = 0; a < dim; ++a) {
                const double updated = sums[j * dim + a] / static_cast<double>(counts[j]);
                d2 += (updated - c[j * dim + a]) * (updated - c[j * dim + a]);
                c[j * dim + a] = updated;
            }
            shift = std::max(shift, std::sqrt(d2));
        }
        ++res.iterations;
        res.inertia = assign();
        if (shift < tol) break;
    }
    return res;
}

void SpibConfig::validate() const {
    if (hidden == 0 || latent == 0) throw ConfigError("SPIB widths must be positive");
    if (states < 1) throw ConfigError("SPIB needs at least one state");
    if (pseudo_inputs < 1) throw ConfigError("SPIB needs at least one pseudo-input");
    if (!(beta >= 0.0)) throw ConfigError("SPIB beta must be non-negative");
}

SpibHead SpibHead::create(ParameterStore& store, const std::string& name, const SpibConfig& config, Rng& rng) {
    config.validate();
    SpibHead s;
    s.config_ = config;
    s.mean_ = Linear::create(store, name + ".enc_mean", config.hidden, config.latent, rng);
    s.logvar_ = Linear::create(store, name + ".enc_logvar", config.hidden, config.latent, rng);
    s.decoder_ = Mlp2::create(store, name + ".dec", config.latent, config.hidden, config.states, rng);
    s.pseudo_name_ = name + ".pseudo_inputs";
    Tensor u = Tensor::zeros({config.pseudo_inputs, config.hidden});
    for (double& v : u.mutable_data()) v = rng.normal();
    store.add(s.pseudo_name_, u);
    return s;
}

SpibHead::Encoded SpibHead::encode(const ParameterStore& store, const Tensor& h) const {
    return Encoded{mean_(store, h), logvar_(store, h)};
}

Tensor SpibHead::decode(const ParameterStore& store, const Tensor& z) const {
    return ops::log_softmax_lastdim(decoder_(store, z));
}

const Tensor& SpibHead::pseudo_inputs(const ParameterStore& store) const { return store.get(pseudo_name_); }

void SpibHead::keep_states(ParameterStore& store, std::span<const std::int64_t> kept) {
    const Tensor& w = store.get(decoder_.second.weight_name);
    const Tensor& b = store.get(decoder_.second.bias_name);
    const std::size_t rows = w.rows(), cols = w.cols();
    Tensor nw = Tensor::zeros({rows, kept.size()});
    Tensor nb = Tensor::zeros({kept.size()});
    auto wd = nw.mutable_data();
    auto bd = nb.mutable_data();
    for (std::size_t s = 0; s < kept.size(); ++s) {
        const auto old = static_cast<std::size_t>(kept[s]);
        if (old >= cols) throw DimensionError("kept state index out of range");
        for (std::size_t r = 0; r < rows; ++r) wd[r * kept.size() + s] = w.at(r, old);
        bd[s] = b[old];
    }
    store.replace(decoder_.second.weight_name, nw);
    store.replace(decoder_.second.bias_name, nb);
    config_.states = kept.size();
}

SpibTerms spib_loss(const SpibHead& head, const ParameterStore& store, const Tensor& h0,
                    std::span<const std::int64_t> future_labels, const CounterKey& noise) {
    if (h0.rank() != 2 || h0.rows() != future_labels.size()) {
        throw DimensionError("SPIB batch has " + std::to_string(h0.rows()) + " rows for " +
                             std::to_string(future_labels.size()) + " labels");
    }
    for (std::int64_t s : future_labels) {
        if (s < 0 || static_cast<std::size_t>(s) >= head.states()) {
            throw ConfigError("label " + std::to_string(s) + " outside [0, " + std::to_string(head.states()) + ")");
        }
    }
    const SpibHead::Encoded post = head.encode(store, h0);
    Tensor eps = Tensor::zeros(post.mean.shape());
    {
        auto e = eps.mutable_data();
        for (std::size_t i = 0; i < e.size(); ++i) e[i] = noise.normal(i);
    }
    const Tensor z = ops::add(post.mean, ops::mul(ops::exp(ops::scale(post.logvar, 0.5)), eps));
    const Tensor log_q = ops::mean(ops::pick(head.decode(store, z), future_labels));

    const SpibHead::Encoded prior = head.encode(store, head.pseudo_inputs(store));
    const Tensor log_p = ops::diag_gaussian_log_density(z, post.mean, post.logvar);
    const Tensor log_r = ops::mixture_gaussian_log_density(z, prior.mean, prior.logvar);
    const Tensor kl = ops::mean(ops::sub(log_p, log_r));

    SpibTerms terms;
    terms.log_likelihood = log_q.item();
    terms.kl = kl.item();
    if (!std::isfinite(terms.log_likelihood)) {
        throw NumericalError("SPIB loss: prediction log-likelihood term is not finite");
    }
    if (!std::isfinite(terms.kl)) throw NumericalError("SPIB loss: prior divergence term is not finite");
    terms.loss = ops::sub(ops::scale(kl, head.config().beta), log_q);
    return terms;
}

std::vector<std::int64_t> predict_labels(const SpibHead& head, const ParameterStore& store, const Tensor& h) {
    NoGradScope no_grad;
    const Tensor logp = head.decode(store, head.encode(store, h).mean);
    const std::size_t b = logp.rows(), s = logp.cols();
    std::vector<std::int64_t> out(b);
    for (std::size_t r = 0; r < b; ++r) {
        std::size_t arg = 0;
        for (std::size_t c = 1; c < s; ++c)
            if (logp.at(r, c) > logp.at(r, arg)) arg = c;
        out[r] = static_cast<std::int64_t>(arg);
    }
    return out;
}

Compaction compact_labels(std::span<const std::int64_t> labels, std::size_t states) {
    std::vector<std::size_t> used(states, 0);
    for (std::int64_t s : labels) {
        if (s < 0 || static_cast<std::size_t>(s) >= states) throw ConfigError("label outside the state range");
        ++used[static_cast<std::size_t>(s)];
    }
    Compaction c;
    std::vector<std::int64_t> remap(states, -1);
    for (std::size_t s = 0; s < states; ++s) {
        if (used[s] == 0) continue;
        remap[s] = static_cast<std::int64_t>(c.kept.size());
        c.kept.push_back(static_cast<std::int64_t>(s));
    }
    c.states = c.kept.size();
    c.labels.reserve(labels.size());
    for (std::int64_t s : labels) c.labels.push_back(remap[static_cast<std::size_t>(s)]);
    return c;
}

}  // namespace fragmix::objectives
