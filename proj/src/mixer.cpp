#include "fragmix/mixer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>

#include "fragmix/kernels.hpp"

namespace fragmix::mixer {

namespace {

std::atomic<std::uint64_t> g_pairs{0};

struct Layout {
    std::size_t batch = 0;
    std::size_t m = 0;  // tokens per sample
    std::size_t heads = 0;
    std::size_t d = 0;  // head width
    std::size_t h = 0;  // row stride
    double scale = 0.0;

    std::size_t base(std::size_t b, std::size_t head) const noexcept { return b * m * h + head * d; }
    std::uint64_t mask_index(std::size_t b, std::size_t head, std::size_t i, std::size_t j) const noexcept {
        return ((static_cast<std::uint64_t>(b) * heads + head) * m + i) * m + j;
    }
};

bool dropout_on(const ops::DropoutSpec& s) noexcept { return s.training && s.rate > 0.0; }

// Inverted-dropout multiplier for one attention weight.
double keep(const ops::DropoutSpec& s, std::uint64_t index) noexcept {
    if (!dropout_on(s)) return 1.0;
    return s.key.uniform(index) < s.rate ? 0.0 : 1.0 / (1.0 - s.rate);
}

void softmax_rows(double* s, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = s + r * cols;
        const double mx = *std::max_element(row, row + cols);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            total += row[c];
        }
        for (std::size_t c = 0; c < cols; ++c) row[c] /= total;
    }
}

// probs receives the pre-dropout weights of this head (m x m).
void naive_forward_head(const Layout& g, std::size_t b, std::size_t head, const double* q, const double* k,
                        const double* v, double* out, double* probs, Buffer& dropped,
                        const ops::DropoutSpec& dropout) {
    const auto& kt = kernels::active();
    const std::size_t m = g.m, d = g.d, ld = g.h, off = g.base(b, head);
    std::fill(probs, probs + m * m, 0.0);
    kt.gemm_nt(m, m, d, q + off, ld, k + off, ld, probs, m);
    for (std::size_t i = 0; i < m * m; ++i) probs[i] *= g.scale;
    softmax_rows(probs, m, m);
    g_pairs.fetch_add(m * m, std::memory_order_relaxed);

    const double* weights = probs;
    if (dropout_on(dropout)) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                dropped[i * m + j] = probs[i * m + j] * keep(dropout, g.mask_index(b, head, i, j));
        weights = dropped.data();
    }
    kt.gemm_nn(m, d, m, weights, m, v + off, ld, out + off, ld);
}

void naive_backward_head(const Layout& g, std::size_t b, std::size_t head, const double* q, const double* k,
                         const double* v, const double* probs, const double* dout, double* dq, double* dk,
                         double* dv, Buffer& dropped, Buffer& dp, const ops::DropoutSpec& dropout) {
    const auto& kt = kernels::active();
    const std::size_t m = g.m, d = g.d, ld = g.h, off = g.base(b, head);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            dropped[i * m + j] = probs[i * m + j] * keep(dropout, g.mask_index(b, head, i, j));
    kt.gemm_tn(m, d, m, dropped.data(), m, dout + off, ld, dv + off, ld);

    std::fill(dp.begin(), dp.begin() + static_cast<std::ptrdiff_t>(m * m), 0.0);
    kt.gemm_nt(m, m, d, dout + off, ld, v + off, ld, dp.data(), m);
    for (std::size_t i = 0; i < m; ++i) {
        double inner = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            dp[i * m + j] *= keep(dropout, g.mask_index(b, head, i, j));
            inner += probs[i * m + j] * dp[i * m + j];
        }
        for (std::size_t j = 0; j < m; ++j) dp[i * m + j] = probs[i * m + j] * (dp[i * m + j] - inner) * g.scale;
    }
    kt.gemm_nn(m, d, m, dp.data(), m, k + off, ld, dq + off, ld);
    kt.gemm_tn(m, d, m, dp.data(), m, q + off, ld, dk + off, ld);
}

struct BlockScratch {
    explicit BlockScratch(std::size_t block)
        : s(block * block), p(block * block), dp(block * block), row_max(block), row_sum(block) {}
    Buffer s, p, dp, row_max, row_sum;
};

void blockwise_forward_head(const Layout& g, std::size_t b, std::size_t head, std::size_t block, const double* q,
                            const double* k, const double* v, double* out, double* lse, BlockScratch& w,
                            const ops::DropoutSpec& dropout) {
    const auto& kt = kernels::active();
    const std::size_t m = g.m, d = g.d, ld = g.h, off = g.base(b, head);
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    for (std::size_t i0 = 0; i0 < m; i0 += block) {
        const std::size_t bi = std::min(block, m - i0);
        double* acc = out + off + i0 * ld;
        std::fill(w.row_max.begin(), w.row_max.begin() + static_cast<std::ptrdiff_t>(bi), kNegInf);
        std::fill(w.row_sum.begin(), w.row_sum.begin() + static_cast<std::ptrdiff_t>(bi), 0.0);
        for (std::size_t j0 = 0; j0 < m; j0 += block) {
            const std::size_t bj = std::min(block, m - j0);
            double* s = w.s.data();
            std::fill(s, s + bi * bj, 0.0);
            kt.gemm_nt(bi, bj, d, q + off + i0 * ld, ld, k + off + j0 * ld, ld, s, bj);
            g_pairs.fetch_add(bi * bj, std::memory_order_relaxed);
            for (std::size_t r = 0; r < bi; ++r) {
                double* row = s + r * bj;
                double mx = w.row_max[r];
                for (std::size_t c = 0; c < bj; ++c) {
                    row[c] *= g.scale;
                    mx = std::max(mx, row[c]);
                }
                const double correction = std::exp(w.row_max[r] - mx);
                if (correction != 1.0) {
                    w.row_sum[r] *= correction;
                    for (std::size_t c = 0; c < d; ++c) acc[r * ld + c] *= correction;
                }
                double total = 0.0;
                for (std::size_t c = 0; c < bj; ++c) {
                    const double e = std::exp(row[c] - mx);
                    total += e;
                    row[c] = e * keep(dropout, g.mask_index(b, head, i0 + r, j0 + c));
                }
                w.row_sum[r] += total;
                w.row_max[r] = mx;
            }
            kt.gemm_nn(bi, d, bj, s, bj, v + off + j0 * ld, ld, acc, ld);
        }
        for (std::size_t r = 0; r < bi; ++r) {
            const double inv = 1.0 / w.row_sum[r];
            for (std::size_t c = 0; c < d; ++c) acc[r * ld + c] *= inv;
            lse[i0 + r] = w.row_max[r] + std::log(w.row_sum[r]);
        }
    }
}

void blockwise_backward_head(const Layout& g, std::size_t b, std::size_t head, std::size_t block, const double* q,
                             const double* k, const double* v, const double* out, const double* lse,
                             const double* dout, double* dq, double* dk, double* dv, Buffer& row_dot,
                             BlockScratch& w, const ops::DropoutSpec& dropout) {
    const auto& kt = kernels::active();
    const std::size_t m = g.m, d = g.d, ld = g.h, off = g.base(b, head);
    for (std::size_t i = 0; i < m; ++i) row_dot[i] = kt.dot(dout + off + i * ld, out + off + i * ld, d);

    for (std::size_t i0 = 0; i0 < m; i0 += block) {
        const std::size_t bi = std::min(block, m - i0);
        for (std::size_t j0 = 0; j0 < m; j0 += block) {
            const std::size_t bj = std::min(block, m - j0);
            double* s = w.s.data();
            double* p = w.p.data();
            double* dp = w.dp.data();
            std::fill(s, s + bi * bj, 0.0);
            kt.gemm_nt(bi, bj, d, q + off + i0 * ld, ld, k + off + j0 * ld, ld, s, bj);
            for (std::size_t r = 0; r < bi; ++r)
                for (std::size_t c = 0; c < bj; ++c) {
                    const double weight = std::exp(s[r * bj + c] * g.scale - lse[i0 + r]);
                    s[r * bj + c] = weight;
                    p[r * bj + c] = weight * keep(dropout, g.mask_index(b, head, i0 + r, j0 + c));
                }
            kt.gemm_tn(bj, d, bi, p, bj, dout + off + i0 * ld, ld, dv + off + j0 * ld, ld);

            std::fill(dp, dp + bi * bj, 0.0);
            kt.gemm_nt(bi, bj, d, dout + off + i0 * ld, ld, v + off + j0 * ld, ld, dp, bj);
            for (std::size_t r = 0; r < bi; ++r)
                for (std::size_t c = 0; c < bj; ++c) {
                    const double z = keep(dropout, g.mask_index(b, head, i0 + r, j0 + c));
                    dp[r * bj + c] = s[r * bj + c] * (dp[r * bj + c] * z - row_dot[i0 + r]) * g.scale;
                }
            kt.gemm_nn(bi, d, bj, dp, bj, k + off + j0 * ld, ld, dq + off + i0 * ld, ld);
            kt.gemm_tn(bj, d, bi, dp, bj, q + off + i0 * ld, ld, dk + off + j0 * ld, ld);
        }
    }
}

}  // namespace

AttentionPath parse_path(const std::string& name) {
    if (name == "naive") return AttentionPath::naive;
    if (name == "blockwise") return AttentionPath::blockwise;
    throw ConfigError("unknown attention path '" + name + "' (expected naive or blockwise)");
}

const char* path_name(AttentionPath path) noexcept { return path == AttentionPath::naive ? "naive" : "blockwise"; }

std::uint64_t pair_evaluations() noexcept { return g_pairs.load(std::memory_order_relaxed); }
void reset_pair_evaluations() noexcept { g_pairs.store(0, std::memory_order_relaxed); }

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                 const AttentionOptions& options) {
    if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
        throw DimensionError("attention needs equal [rows x H] q, k, v; got " + shape_str(q.shape()) + ", " +
                             shape_str(k.shape()) + ", " + shape_str(v.shape()));
    }
    if (batch == 0 || q.rows() % batch != 0) {
        throw DimensionError("attention rows " + std::to_string(q.rows()) + " do not split into " +
                             std::to_string(batch) + " samples");
    }
    if (options.heads == 0 || q.cols() % options.heads != 0) {
        throw DimensionError("width " + std::to_string(q.cols()) + " is not divisible by " +
                             std::to_string(options.heads) + " heads");
    }
    if (options.block == 0) throw ConfigError("attention block size must be at least 1");
    const double rate = options.dropout.rate;
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
    if (options.capture != nullptr) {
        if (options.path == AttentionPath::blockwise) {
            throw UnsupportedCombination("attention maps can only be captured on the naive path");
        }
        if (options.dropout.training) {
            throw UnsupportedCombination("attention maps can only be captured in evaluation mode");
        }
    }

    Layout g;
    g.batch = batch;
    g.m = q.rows() / batch;
    g.heads = options.heads;
    g.h = q.cols();
    g.d = g.h / g.heads;
    g.scale = 1.0 / std::sqrt(static_cast<double>(g.d));

    const bool record = autograd::needs_record({&q, &k, &v});
    const std::size_t heads_total = batch * g.heads;
    const std::size_t mm = g.m * g.m;
    const ops::DropoutSpec dropout = options.dropout;

    Buffer out(q.numel(), 0.0);
    std::shared_ptr<Buffer> saved;  // naive: weights; blockwise: log-sum-exp
    if (options.path == AttentionPath::naive) {
        saved = std::make_shared<Buffer>(record ? heads_total * mm : mm);
        Buffer dropped(dropout_on(dropout) ? mm : 0);
        if (options.capture != nullptr) options.capture->assign(heads_total * mm, 0.0);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t hd = 0; hd < g.heads; ++hd) {
                const std::size_t slot = record ? (b * g.heads + hd) * mm : 0;
                double* probs = saved->data() + slot;
                naive_forward_head(g, b, hd, q.data().data(), k.data().data(), v.data().data(), out.data(), probs,
                                   dropped, dropout);
                if (options.capture != nullptr) {
                    std::copy(probs, probs + mm, options.capture->begin() + static_cast<std::ptrdiff_t>((b * g.heads + hd) * mm));
                }
            }
        if (!record) saved.reset();
    } else {
        saved = std::make_shared<Buffer>(heads_total * g.m);
        BlockScratch scratch(std::min(options.block, g.m));
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t hd = 0; hd < g.heads; ++hd) {
                blockwise_forward_head(g, b, hd, std::min(options.block, g.m), q.data().data(), k.data().data(),
                                       v.data().data(), out.data(), saved->data() + (b * g.heads + hd) * g.m,
                                       scratch, dropout);
            }
        if (!record) saved.reset();
    }

    Tensor result(q.shape(), std::move(out), record);
    if (!record) return result;

    const AttentionPath path = options.path;
    const std::size_t block = std::min(options.block, g.m);
    std::weak_ptr<TensorNode> result_node = result.node();
    active_tape()->record(
        "attention", {q, k, v}, result,
        [q, k, v, g, path, block, dropout, saved, result_node](std::span<const double> dout) {
            const auto out_node = result_node.lock();
            double* dq = autograd::grad_of(q).data();
            double* dk = autograd::grad_of(k).data();
            double* dv = autograd::grad_of(v).data();
            const std::size_t mm = g.m * g.m;
            if (path == AttentionPath::naive) {
                Buffer dropped(mm), dp(mm);
                for (std::size_t b = 0; b < g.batch; ++b)
                    for (std::size_t hd = 0; hd < g.heads; ++hd) {
                        naive_backward_head(g, b, hd, q.data().data(), k.data().data(), v.data().data(),
                                            saved->data() + (b * g.heads + hd) * mm, dout.data(), dq, dk, dv,
                                            dropped, dp, dropout);
                    }
            } else {
                Buffer row_dot(g.m);
                BlockScratch scratch(block);
                for (std::size_t b = 0; b < g.batch; ++b)
                    for (std::size_t hd = 0; hd < g.heads; ++hd) {
                        blockwise_backward_head(g, b, hd, block, q.data().data(), k.data().data(), v.data().data(),
                                                out_node->data.data(), saved->data() + (b * g.heads + hd) * g.m,
                                                dout.data(), dq, dk, dv, row_dot, scratch, dropout);
                    }
            }
        });
    return result;
}

Tensor attention_naive(const Tensor& q, const Tensor& k, const Tensor& v) {
    AttentionOptions o;
    o.path = AttentionPath::naive;
    return attention(q, k, v, 1, o);
}

Tensor attention_blockwise(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t block) {
    AttentionOptions o;
    o.path = AttentionPath::blockwise;
    o.block = block;
    return attention(q, k, v, 1, o);
}

void MixerConfig::validate() const {
    if (hidden == 0) throw ConfigError("mixer hidden width must be positive");
    if (heads == 0 || hidden % heads != 0) {
        throw ConfigError("hidden width " + std::to_string(hidden) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (mlp_ratio == 0) throw ConfigError("mlp ratio must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
    if (block == 0) throw ConfigError("attention block size must be at least 1");
}

double AttentionMap::at(std::size_t layer, std::size_t sample, std::size_t head, std::size_t query,
                        std::size_t key) const {
    const std::size_t m = fragments;
    return weights.at((((layer * batch + sample) * heads + head) * m + query) * m + key);
}

std::vector<double> AttentionMap::mean_log_weights() const {
    const std::size_t m = fragments;
    std::vector<double> out(layers * heads * m * m, 0.0);
    for (std::size_t l = 0; l < layers; ++l)
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < m; ++j) {
                        // Floor keeps underflowed weights finite in log space.
                        const double w = std::max(at(l, b, h, i, j), std::numeric_limits<double>::min());
                        out[((l * heads + h) * m + i) * m + j] += std::log(w) / static_cast<double>(batch);
                    }
    return out;
}

void write_attention_csv(const std::filesystem::path& path, const AttentionMap& map) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    f << "layer,head,query_fragment,key_fragment,mean_log_weight\n";
    const std::vector<double> mean = map.mean_log_weights();
    const std::size_t m = map.fragments;
    char buf[64];
    for (std::size_t l = 0; l < map.layers; ++l)
        for (std::size_t h = 0; h < map.heads; ++h)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    std::snprintf(buf, sizeof buf, "%.17g", mean[((l * map.heads + h) * m + i) * m + j]);
                    f << l << ',' << h << ',' << i << ',' << j << ',' << buf << '\n';
                }
}

TransformerMixer TransformerMixer::create(ParameterStore& store, const std::string& name, const MixerConfig& config,
                                          Rng& rng) {
    config.validate();
    TransformerMixer t;
    t.config_ = config;
    const std::size_t h = config.hidden;
    for (std::size_t l = 0; l < config.layers; ++l) {
        const std::string p = name + ".layer" + std::to_string(l);
        Layer layer;
        layer.ln1_gain = p + ".ln1.gain";
        layer.ln1_shift = p + ".ln1.shift";
        layer.ln2_gain = p + ".ln2.gain";
        layer.ln2_shift = p + ".ln2.shift";
        store.add(layer.ln1_gain, Tensor::full({h}, 1.0));
        store.add(layer.ln1_shift, Tensor::zeros({h}));
        layer.q = Linear::create(store, p + ".q", h, h, rng);
        layer.k = Linear::create(store, p + ".k", h, h, rng);
        layer.v = Linear::create(store, p + ".v", h, h, rng);
        layer.o = Linear::create(store, p + ".o", h, h, rng, config.zero_init_outputs);
        store.add(layer.ln2_gain, Tensor::full({h}, 1.0));
        store.add(layer.ln2_shift, Tensor::zeros({h}));
        layer.mlp.first = Linear::create(store, p + ".mlp.0", h, h * config.mlp_ratio, rng);
        layer.mlp.second = Linear::create(store, p + ".mlp.1", h * config.mlp_ratio, h, rng, config.zero_init_outputs);
        t.layers_.push_back(std::move(layer));
    }
    return t;
}

Tensor TransformerMixer::forward_tokens(const ParameterStore& store, const Tensor& x, std::size_t batch,
                                        const ForwardContext& ctx, AttentionMap* capture) const {
    if (capture != nullptr) {
        if (ctx.training) throw UnsupportedCombination("attention maps can only be captured in evaluation mode");
        if (config_.path == AttentionPath::blockwise) {
            throw UnsupportedCombination("attention maps can only be captured on the naive path");
        }
    }
    if (x.rank() != 2 || x.cols() != config_.hidden || batch == 0 || x.rows() % batch != 0) {
        throw DimensionError("mixer expects [(B*M) x " + std::to_string(config_.hidden) + "], got " +
                             shape_str(x.shape()));
    }
    const std::size_t m = x.rows() / batch;
    if (capture != nullptr) {
        capture->layers = layers_.size();
        capture->batch = batch;
        capture->heads = config_.heads;
        capture->fragments = m;
        capture->weights.clear();
    }

    Tensor h = x;
    std::vector<double> maps;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& layer = layers_[l];
        const Tensor a = ops::layernorm(h, store.get(layer.ln1_gain), store.get(layer.ln1_shift));
        AttentionOptions opt;
        opt.path = config_.path;
        opt.block = config_.block;
        opt.heads = config_.heads;
        opt.dropout = ctx.dropout(config_.dropout, 16 * l + 1);
        opt.capture = capture != nullptr ? &maps : nullptr;
        const Tensor att = attention(layer.q(store, a), layer.k(store, a), layer.v(store, a), batch, opt);
        h = ops::add(h, layer.o(store, att));
        const Tensor b = ops::layernorm(h, store.get(layer.ln2_gain), store.get(layer.ln2_shift));
        h = ops::add(h, layer.mlp(store, b, ctx.dropout(config_.dropout, 16 * l + 2)));
        if (capture != nullptr) capture->weights.insert(capture->weights.end(), maps.begin(), maps.end());
    }
    return h;
}

Tensor TransformerMixer::forward(const ParameterStore& store, const Tensor& x, std::size_t batch,
                                 const ForwardContext& ctx, AttentionMap* capture) const {
    const Tensor tokens = forward_tokens(store, x, batch, ctx, capture);
    return ops::segment_mean(tokens, tokens.rows() / batch);
}

}  // namespace fragmix::mixer
