// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance            all criteria
//   acceptance 3 5        only the listed ones

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "checks.hpp"
#include "cli.hpp"
#include "fragmix/config.hpp"
#include "fragmix/geometry.hpp"
#include "fragmix/memory.hpp"
#include "fragmix/mixer.hpp"
#include "fragmix/msm.hpp"
#include "fragmix/objectives.hpp"
#include "fragmix/profile.hpp"
#include "fragmix/synth.hpp"
#include "fragmix/tmm.hpp"
#include "fragmix/workflows.hpp"

namespace fs = std::filesystem;
using namespace fragmix;
using namespace fragmix::pipeline;
using fragmix::testing::max_abs_diff;
using fragmix::testing::random_normal;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string format(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

const fs::path fixtures = FRAGMIX_FIXTURES;

// ---- 1: attention exactness ----

// softmax(q k^T / sqrt(d)) v from composed ops, differentiated by the tape.
Tensor composed_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    const double s = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));
    return ops::matmul(ops::softmax_lastdim(ops::scale(ops::matmul(q, ops::transpose(k)), s)), v);
}

std::vector<std::vector<double>> grads(const std::function<Tensor(const Tensor&, const Tensor&, const Tensor&)>& f,
                                       Tensor q, Tensor k, Tensor v, const Tensor& probe) {
    for (Tensor* t : {&q, &k, &v}) t->set_requires_grad(true).zero_grad();
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(ops::sum(ops::mul(f(q, k, v), probe)));
    }
    std::vector<std::vector<double>> out;
    for (Tensor* t : {&q, &k, &v}) out.emplace_back(t->grad().begin(), t->grad().end());
    return out;
}

double relative(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    double d = 0, r = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) {
            d += (a[i][j] - b[i][j]) * (a[i][j] - b[i][j]);
            r += b[i][j] * b[i][j];
        }
    return std::sqrt(d) / std::max(std::sqrt(r), 1e-300);
}

Outcome ac1() {
    Rng rng(101);
    std::vector<std::array<std::size_t, 3>> configs;
    configs.push_back({1000, 16, 64});
    configs.push_back({1000, 8, 37});
    configs.push_back({1, 4, 1});
    configs.push_back({64, 8, 64});
    while (configs.size() < 20) configs.push_back({1 + rng.below(400), 1 + rng.below(32), 1 + rng.below(128)});
    double worst_f = 0, worst_g = 0;
    for (const auto& [m, d, block] : configs) {
        const Tensor q = random_normal({m, d}, rng), k = random_normal({m, d}, rng), v = random_normal({m, d}, rng);
        const Tensor probe = random_normal({m, d}, rng);
        worst_f = std::max(worst_f, max_abs_diff(mixer::attention_blockwise(q, k, v, block).data(),
                                                 mixer::attention_naive(q, k, v).data()));
        const auto gb = grads([b = block](const Tensor& a, const Tensor& c, const Tensor& e) {
            return mixer::attention_blockwise(a, c, e, b);
        }, q, k, v, probe);
        const auto gn = grads(composed_attention, q, k, v, probe);
        worst_g = std::max(worst_g, relative(gb, gn));
    }
    return {worst_f <= 1e-10 && worst_g <= 1e-8,
            format("20 configs incl. M=1000: max |blockwise-naive| = %.2e (<= 1e-10), max grad rel err = %.2e (<= 1e-8)",
                   worst_f, worst_g)};
}

// ---- 2: attention memory ----

double slope(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]) / static_cast<double>(x.size());
        my += std::log(y[i]) / static_cast<double>(x.size());
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
        sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    }
    return sxy / sxx;
}

Outcome ac2() {
    Rng rng(202);
    const std::size_t d = 16;
    auto peak = [&](std::size_t m, mixer::AttentionPath path) {
        Tensor q = random_normal({m, d}, rng), k = random_normal({m, d}, rng), v = random_normal({m, d}, rng);
        for (Tensor* t : {&q, &k, &v}) t->set_requires_grad(true);
        memory::PeakScope scope;
        Tape tape;
        {
            TapeScope ts(tape);
            mixer::AttentionOptions o;
            o.path = path;
            o.block = 64;
            tape.backward(ops::sum(mixer::attention(q, k, v, 1, o)));
        }
        return static_cast<double>(scope.peak_above_baseline());
    };
    std::vector<double> ms, blockwise, naive;
    for (std::size_t m = 64; m <= 1024; m *= 2) {
        ms.push_back(static_cast<double>(m));
        blockwise.push_back(peak(m, mixer::AttentionPath::blockwise));
        naive.push_back(peak(m, mixer::AttentionPath::naive));
    }
    const double sb = slope(ms, blockwise), sn = slope(ms, naive);
    return {sb < 1.3 && sn > 1.8,
            format("peak bytes vs M in 64..1024: blockwise exponent %.3f (< 1.3), naive exponent %.3f (> 1.8); "
                   "at M=1024 %.0f vs %.0f bytes",
                   sb, sn, blockwise.back(), naive.back())};
}

// ---- 3: pair counts and step time ----

Outcome ac3() {
    ProfileOptions counts;
    counts.counts_only = true;
    bool exact = true;
    std::size_t checked = 0;
    for (std::size_t n : {128u, 214u, 592u, 2645u})
        for (std::size_t w : {1u, 2u, 4u, 6u}) {
            const ProfileRow r = profile_one(n, w, tmm::GraphOperator::gcn, counts);
            const std::uint64_t m = (n + w - 1) / w;
            exact = exact && r.fragments == m && r.pair_count == m * m;
            ++checked;
        }
    ProfileOptions timed;
    std::string times;
    bool monotone = true;
    for (auto op : {tmm::GraphOperator::gc, tmm::GraphOperator::rggc}) {
        double last = INFINITY;
        times += std::string(tmm::operator_name(op)) + " ms:";
        for (std::size_t w : {1u, 2u, 4u, 6u}) {
            const double t = profile_one(592, w, op, timed).ms_per_step;
            monotone = monotone && t < last;
            last = t;
            times += format(" %.1f", t);
        }
        times += "; ";
    }
    return {exact && monotone, format("M^2 == ceil(N/w)^2 on %zu of %zu (N,w) pairs: %s; N=592 step time w=1,2,4,6 %s%s",
                                      exact ? checked : std::size_t{0}, checked, exact ? "exact" : "MISMATCH",
                                      times.c_str(), monotone ? "strictly decreasing" : "NOT decreasing")};
}

// ---- 4: VAMP-2 on the two-state chain ----

Outcome ac4() {
    // Exact expectations of one-hot features under the stationary chain.
    const double stay = 0.9;
    const double pi = 0.5;
    const Tensor c00({2, 2}, {pi * (1 - pi), -pi * pi, -pi * pi, pi * (1 - pi)});
    const Tensor c0t({2, 2}, {pi * stay - pi * pi, pi * (1 - stay) - pi * pi, pi * (1 - stay) - pi * pi,
                              pi * stay - pi * pi});
    const double exact = objectives::vamp2_from_covariances({c00, c0t, c00}).item();

    const auto cfg = config::RunConfig::load(fixtures / "chain2.cfg");
    ExperimentConfig e = cfg.experiment();
    const auto data = load_dataset(fixtures / "chain2" / "manifest.txt", cfg.dataset_options());
    e.lag_frames = data.lag_frames(cfg.lag_ns());
    VampModel model = VampModel::create(e, data);
    const VampRun run = train_vamp(model, data, e);
    const std::size_t pairs = lagged_pairs(run.split.train, e.lag_frames).size();
    const bool ok = std::abs(exact - 1.64) <= 1e-12 && run.train.best_val >= 1.55 && run.train.epochs <= 5;
    return {ok, format("exact score %.15f (1.64), trained best_val %.6f (>= 1.55) on %zu pairs in %zu epochs (<= 5)",
                       exact, run.train.best_val, pairs, run.train.epochs)};
}

// ---- 5 and 7: double well ----

struct DoubleWell {
    synth::SystemSpec spec;
    TrajectoryDataset data;
    std::vector<std::vector<double>> x;
};

DoubleWell double_well(std::size_t trajectories, std::size_t frames, std::uint64_t seed) {
    DoubleWell w;
    w.spec.kind = synth::SystemKind::double_well;
    w.spec.double_well.barrier = 3.0;
    w.spec.dt = 1e-3;
    w.spec.steps_per_frame = 20;
    w.spec.seed = seed;
    DatasetOptions o;
    o.featurizer.hidden = 16;
    w.data.frame_interval_ns = w.spec.frame_time();
    for (std::size_t t = 0; t < trajectories; ++t) {
        w.x.push_back(synth::simulate_1d(w.spec, frames, t));
        w.data.trajectories.push_back(
            make_trajectory("dw" + std::to_string(t), synth::embed_1d(w.x.back(), derive_seed(seed, 500 + t)), o));
    }
    standardize_tokens(w.data);
    return w;
}

// Two states from k-means on the leading VAMP singular function.
std::vector<msm::Labels> two_state_labels(const VampModel& model, const TrajectoryDataset& data, std::size_t lag,
                                          std::size_t k, std::uint64_t seed) {
    const auto f = model.all_features(data, 1000);
    std::vector<double> a, b;
    for (const auto& ft : f) {
        const std::size_t n = ft.size() / k;
        a.insert(a.end(), ft.begin(), ft.begin() + static_cast<std::ptrdiff_t>((n - lag) * k));
        b.insert(b.end(), ft.begin() + static_cast<std::ptrdiff_t>(lag * k), ft.end());
    }
    const auto modes = objectives::vamp_modes(Tensor({a.size() / k, k}, std::span<const double>(a)),
                                              Tensor({b.size() / k, k}, std::span<const double>(b)));
    std::vector<std::vector<double>> lead;
    for (const auto& ft : f) {
        const std::size_t n = ft.size() / k;
        const auto p = objectives::project_modes(modes, ft, n);
        const std::size_t r = p.size() / n;
        std::vector<double> one(n);
        for (std::size_t i = 0; i < n; ++i) one[i] = p[i * r];
        lead.push_back(std::move(one));
    }
    return kmeans_labels(lead, 1, 2, seed).labels;
}

Outcome ac5() {
    const DoubleWell w = double_well(10, 10000, 1);
    const double lag_time = 1.0;
    const std::size_t lag = w.data.lag_frames(lag_time);
    const auto oracle = synth::oracle_timescales(w.spec, lag_time, 800);
    const double want = oracle.timescales.at(0);
    bool ok = true;
    std::string detail = format("oracle t2 = %.4f at lag %.2f;", want, lag_time);
    for (std::size_t window : {1u, 2u}) {
        const auto cfg = config::RunConfig::parse("hidden=16\nlayers=2\nheads=2\nmax_epochs=5\nwindow=" +
                                                  std::to_string(window) + "\n");
        ExperimentConfig e = cfg.experiment();
        e.lag_frames = lag;
        VampModel model = VampModel::create(e, w.data);
        const VampRun run = train_vamp(model, w.data, e);
        const auto labels = two_state_labels(model, w.data, lag, e.vamp_outputs, 5);
        const auto m = msm::build_msm(labels, 2, lag);
        const auto ts = msm::implied_timescales(m.transition, static_cast<double>(lag) * w.spec.frame_time());
        const double got = ts.empty() ? 0.0 : ts[0];
        const double err = std::abs(got - want) / want;
        ok = ok && err <= 0.15;
        detail += format(" w=%zu: best_val %.4f, MSM t2 = %.4f (%.1f%% off, <= 15%%);", window, run.train.best_val, got,
                         100 * err);
    }
    return {ok, detail};
}

// ---- 6: token merging on the polymer ----

Outcome ac6() {
    synth::SystemSpec s;
    s.kind = synth::SystemKind::toy_polymer;
    s.dt = 1e-2;
    s.steps_per_frame = 20;
    s.seed = 4;
    DatasetOptions o;
    o.featurizer.hidden = 16;
    o.cutoff = 9.0;
    TrajectoryDataset data;
    data.frame_interval_ns = s.frame_time();
    for (std::size_t t = 0; t < 5; ++t)
        data.trajectories.push_back(
            make_trajectory("poly" + std::to_string(t), synth::simulate_polymer(s, 4000, t).positions, o));
    standardize_tokens(data);
    std::map<std::size_t, double> mean;
    std::string detail;
    for (std::size_t window : {1u, 2u, 4u}) {
        detail += format("w=%zu:", window);
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const auto cfg = config::RunConfig::parse("hidden=16\nlayers=2\nheads=2\nmax_epochs=10\ncutoff=9\nwindow=" +
                                                      std::to_string(window) + "\nseed=" + std::to_string(seed) + "\n");
            ExperimentConfig e = cfg.experiment();
            e.lag_frames = 10;
            VampModel model = VampModel::create(e, data);
            const double best = train_vamp(model, data, e).train.best_val;
            mean[window] += best / 3.0;
            detail += format(" %.4f", best);
        }
        detail += format(" (mean %.4f); ", mean[window]);
    }
    const bool ok = mean[2] >= 0.95 * mean[1] && mean[4] >= 0.95 * mean[1];
    return {ok, detail + format("w=2 / w=1 = %.4f, w=4 / w=1 = %.4f (>= 0.95)", mean[2] / mean[1], mean[4] / mean[1])};
}

Outcome ac7() {
    const DoubleWell w = double_well(10, 5000, 2);
    const auto cfg = config::RunConfig::parse("hidden=16\nlayers=2\nheads=2\nmax_epochs=3\nspib_max_epochs=30\n");
    ExperimentConfig e = cfg.experiment();
    e.lag_frames = w.data.lag_frames(1.0);
    VampModel vamp = VampModel::create(e, w.data);
    train_vamp(vamp, w.data, e);
    const auto init = kmeans_labels(vamp.all_features(w.data, 1000), e.vamp_outputs, 100, derive_seed(e.seed, 0x6B));
    SpibModel spib = SpibModel::create(e, w.data, init.states);
    const SpibRun run = train_spib(spib, w.data, e, init.labels);

    // Each state maps to the well most of its frames sit in.
    std::map<std::int64_t, std::array<std::size_t, 2>> tally;
    std::size_t frames = 0;
    for (std::size_t t = 0; t < w.x.size(); ++t)
        for (std::size_t i = 0; i < w.x[t].size(); ++i) {
            ++tally[run.labels[t][i]][w.x[t][i] > 0.0];
            ++frames;
        }
    std::size_t agree = 0;
    std::array<bool, 2> wells{false, false};
    for (const auto& [state, c] : tally) {
        agree += std::max(c[0], c[1]);
        wells[c[1] > c[0]] = true;
    }
    const double agreement = static_cast<double>(agree) / static_cast<double>(frames);

    const auto again = spib.predict(w.data, e.eval_chunk);
    std::size_t changed = 0;
    for (std::size_t t = 0; t < again.size(); ++t)
        for (std::size_t i = 0; i < again[t].size(); ++i) changed += again[t][i] != run.labels[t][i];

    const bool ok = init.states == 100 && run.refinements <= 5 && run.converged && wells[0] && wells[1] &&
                    agreement >= 0.95 && changed == 0;
    return {ok, format("k-means %zu states -> %zu SPIB states after %zu refinements (converged %d); well agreement "
                       "%.4f (>= 0.95); labels changed by one more refinement: %zu",
                       init.states, run.states, run.refinements, run.converged ? 1 : 0, agreement, changed)};
}

// ---- 8: graph operators ----

tmm::RadiusGraph undirected(std::size_t n, std::initializer_list<std::pair<std::uint32_t, std::uint32_t>> pairs) {
    tmm::RadiusGraph g;
    g.node_count = n;
    for (auto [i, j] : pairs) {
        g.edges.emplace_back(i, j);
        g.edges.emplace_back(j, i);
    }
    std::sort(g.edges.begin(), g.edges.end());
    return g;
}

tmm::RadiusGraph random_graph(std::size_t n, double p, Rng& rng) {
    tmm::RadiusGraph g;
    g.node_count = n;
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t j = i + 1; j < n; ++j)
            if (rng.uniform() < p) {
                g.edges.emplace_back(i, j);
                g.edges.emplace_back(j, i);
            }
    std::sort(g.edges.begin(), g.edges.end());
    return g;
}

using Dense = std::vector<std::vector<double>>;

Dense dense(const Tensor& t) {
    Dense d(t.shape()[0], std::vector<double>(t.shape()[1]));
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = 0; j < d[i].size(); ++j) d[i][j] = t.at(i, j);
    return d;
}

Dense mm(const Dense& a, const Dense& b) {
    Dense c(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t l = 0; l < b.size(); ++l)
            for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][l] * b[l][j];
    return c;
}

// Dense-matrix evaluation of each operator.
Dense oracle(const Tensor& xt, const tmm::RadiusGraph& g, tmm::GraphOperator op, const std::vector<Tensor>& wt) {
    const std::size_t n = g.node_count;
    const Dense x = dense(xt);
    std::vector<Dense> w;
    for (const Tensor& t : wt) w.push_back(dense(t));
    Dense a(n, std::vector<double>(n, 0.0));
    for (auto [i, j] : g.edges) a[i][j] = 1.0;
    std::vector<double> deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) deg[i] = std::accumulate(a[i].begin(), a[i].end(), 0.0);
    const std::size_t h = w[0][0].size();
    Dense y(n, std::vector<double>(h, 0.0));
    auto add = [&](const Dense& m) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < h; ++c) y[i][c] += m[i][c];
    };
    switch (op) {
        case tmm::GraphOperator::gcn: {
            Dense s(n, std::vector<double>(n, 0.0));
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    s[i][j] = (i == j ? 1.0 / (deg[i] + 1) : 0.0) + a[i][j] / std::sqrt((deg[i] + 1) * (deg[j] + 1));
            Dense self(n, std::vector<double>(n, 0.0)), nb = s;
            for (std::size_t i = 0; i < n; ++i) {
                self[i][i] = s[i][i];
                nb[i][i] = 0.0;
            }
            add(mm(mm(self, x), w[0]));
            add(mm(mm(nb, x), w[1]));
            break;
        }
        case tmm::GraphOperator::gc:
            add(mm(x, w[0]));
            add(mm(mm(a, x), w[1]));
            break;
        case tmm::GraphOperator::rggc: {
            add(mm(x, w[0]));
            const Dense x2 = mm(x, w[2]), x3 = mm(x, w[3]), x1 = mm(x, w[1]);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    if (a[i][j] != 0.0)
                        for (std::size_t c = 0; c < h; ++c)
                            y[i][c] += x1[j][c] / (1.0 + std::exp(-(x2[i][c] + x3[j][c])));
            break;
        }
        case tmm::GraphOperator::tag: {
            Dense t(n, std::vector<double>(n, 0.0)), tk(n, std::vector<double>(n, 0.0));
            for (std::size_t i = 0; i < n; ++i) {
                tk[i][i] = 1.0;
                for (std::size_t j = 0; j < n; ++j)
                    if (a[i][j] != 0.0) t[i][j] = 1.0 / std::sqrt(deg[i] * deg[j]);
            }
            for (const Dense& wk : w) {
                add(mm(mm(tk, x), wk));
                tk = mm(tk, t);
            }
            break;
        }
    }
    return y;
}

double diff(const Tensor& y, const Dense& want) {
    double m = 0.0;
    for (std::size_t i = 0; i < want.size(); ++i)
        for (std::size_t c = 0; c < want[i].size(); ++c) m = std::max(m, std::abs(y.at(i, c) - want[i][c]));
    return m;
}

Outcome ac8() {
    double worst = 0.0;
    const std::vector<Tensor> one(4, Tensor({1, 1}, {1.0}));
    // Hand examples.
    worst = std::max(worst, max_abs_diff(tmm::graph_conv(Tensor({3, 1}, {1, 2, 3}), undirected(3, {{0, 1}, {1, 2}}),
                                                         tmm::GraphOperator::gc, {one.data(), 2})
                                             .data(),
                                         std::vector<double>{3, 6, 5}));
    worst = std::max(worst, max_abs_diff(tmm::graph_conv(Tensor({2, 1}, {2, 4}), undirected(2, {{0, 1}}),
                                                         tmm::GraphOperator::gcn, {one.data(), 2})
                                             .data(),
                                         std::vector<double>{3, 3}));
    const std::vector<Tensor> gate{one[0], one[1], Tensor({1, 1}, {0.0}), Tensor({1, 1}, {0.0})};
    worst = std::max(worst, std::abs(tmm::graph_conv(Tensor({3, 1}, {0, 2, 4}), undirected(3, {{0, 1}, {0, 2}}),
                                                     tmm::GraphOperator::rggc, gate)[0] -
                                     3.0));
    // Dense oracles on random graphs.
    Rng rng(808);
    std::size_t cases = 0;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 2 + rng.below(12), h = 1 + rng.below(5);
        const auto g = random_graph(n, 0.2 + 0.6 * rng.uniform(), rng);
        const Tensor x = random_normal({n, h}, rng);
        for (auto op : {tmm::GraphOperator::gcn, tmm::GraphOperator::gc, tmm::GraphOperator::rggc,
                        tmm::GraphOperator::tag}) {
            const std::size_t count = op == tmm::GraphOperator::tag ? 2 + static_cast<std::size_t>(trial % 3)
                                                                     : tmm::weight_count(op, 1);
            std::vector<Tensor> w;
            for (std::size_t k = 0; k < count; ++k) w.push_back(random_normal({h, h}, rng));
            worst = std::max(worst, diff(tmm::graph_conv(x, g, op, w), oracle(x, g, op, w)));
            ++cases;
        }
    }
    // Empty graphs keep only the W0 term.
    double empty = 0.0;
    {
        const Tensor x = random_normal({5, 3}, rng);
        tmm::RadiusGraph g;
        g.node_count = 5;
        std::vector<Tensor> w;
        for (int k = 0; k < 4; ++k) w.push_back(random_normal({3, 3}, rng));
        const Tensor self = ops::matmul(x, w[0]);
        empty = std::max(empty, max_abs_diff(tmm::graph_conv(x, g, tmm::GraphOperator::gcn, {w.data(), 2}).data(),
                                             self.data()));
        empty = std::max(empty, max_abs_diff(tmm::graph_conv(x, g, tmm::GraphOperator::gc, {w.data(), 2}).data(),
                                             self.data()));
        empty = std::max(empty, max_abs_diff(tmm::graph_conv(x, g, tmm::GraphOperator::rggc, w).data(), self.data()));
        empty = std::max(empty, max_abs_diff(tmm::graph_conv(x, g, tmm::GraphOperator::tag, {w.data(), 3}).data(),
                                             self.data()));
    }
    return {worst <= 1e-12 && empty <= 1e-12,
            format("3 hand examples + %zu dense-oracle cases: max err %.2e (<= 1e-12); empty-graph reduction err %.2e",
                   cases, worst, empty)};
}

// ---- 9: invariances ----

std::array<geometry::Vec3, 3> random_rotation(Rng& rng) {
    std::array<geometry::Vec3, 3> q{};
    for (auto& c : q) c = {rng.normal(), rng.normal(), rng.normal()};
    auto dot = [](const geometry::Vec3& a, const geometry::Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; };
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            const double d = dot(q[i], q[j]);
            for (int a = 0; a < 3; ++a) q[i][a] -= d * q[j][a];
        }
        const double n = std::sqrt(dot(q[i], q[i]));
        for (int a = 0; a < 3; ++a) q[i][a] /= n;
    }
    q[2] = {q[0][1] * q[1][2] - q[0][2] * q[1][1], q[0][2] * q[1][0] - q[0][0] * q[1][2],
            q[0][0] * q[1][1] - q[0][1] * q[1][0]};
    return q;
}

Outcome ac9() {
    Rng rng(909);
    // Featurizer under rigid motions of polymer conformations.
    synth::SystemSpec s;
    s.kind = synth::SystemKind::toy_polymer;
    s.dt = 1e-2;
    s.steps_per_frame = 20;
    const auto poly = synth::simulate_polymer(s, 20, 0).positions;
    const geometry::ResidueFeaturizer f(geometry::FeaturizerConfig{16});
    double feat = 0.0;
    for (std::size_t t = 0; t < poly.frames; ++t) {
        const auto frame = poly.frame(t);
        const Tensor base = f.tokens({frame, &poly.topology});
        const auto r = random_rotation(rng);
        const geometry::Vec3 shift{50 * rng.normal(), 50 * rng.normal(), 50 * rng.normal()};
        std::vector<geometry::Vec3> moved(frame.size());
        for (std::size_t i = 0; i < frame.size(); ++i)
            for (int a = 0; a < 3; ++a)
                moved[i][a] = r[a][0] * frame[i][0] + r[a][1] * frame[i][1] + r[a][2] * frame[i][2] + shift[a];
        feat = std::max(feat, max_abs_diff(base.data(), f.tokens({moved, &poly.topology}).data()));
    }

    // VAMP-2 under invertible affine feature maps.
    double vamp = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t b = 2000, k = 2 + static_cast<std::size_t>(trial % 3);
        Tensor f0 = Tensor::zeros({b, k}), ft = Tensor::zeros({b, k});
        {
            auto a0 = f0.mutable_data(), at = ft.mutable_data();
            for (std::size_t i = 0; i < b * k; ++i) {
                a0[i] = rng.normal();
                at[i] = 0.7 * a0[i] + 0.5 * rng.normal();
            }
        }
        Tensor a = Tensor::eye(k);
        {
            auto m = a.mutable_data();
            for (double& v : m) v += 0.5 * rng.normal();
        }
        Tensor shift = random_normal({k}, rng);
        const double base = objectives::vamp2_score(f0, ft).item();
        const double mapped = objectives::vamp2_score(ops::add(ops::matmul(f0, a), shift),
                                                      ops::add(ops::matmul(ft, a), shift))
                                  .item();
        vamp = std::max(vamp, std::abs(base - mapped));
    }

    // MSM under state relabeling.
    bool exact = true;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t states = 2 + rng.below(6);
        std::vector<msm::Labels> labels(3);
        for (auto& l : labels) {
            std::size_t cur = rng.below(states);
            for (int i = 0; i < 500; ++i) {
                l.push_back(static_cast<std::int64_t>(cur));
                if (rng.uniform() < 0.3) cur = rng.below(states);
            }
        }
        std::vector<std::int64_t> perm(states);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(std::span<std::int64_t>(perm));
        auto relabeled = labels;
        for (auto& l : relabeled)
            for (auto& v : l) v = perm[static_cast<std::size_t>(v)];
        const auto a = msm::build_msm(labels, states, 2), b = msm::build_msm(relabeled, states, 2);
        for (std::size_t i = 0; i < states; ++i)
            for (std::size_t j = 0; j < states; ++j) {
                const auto pi = static_cast<std::size_t>(perm[i]), pj = static_cast<std::size_t>(perm[j]);
                exact = exact && a.counts.at(i, j) == b.counts.at(pi, pj) &&
                        a.transition.at(i, j) == b.transition.at(pi, pj);
            }
        exact = exact && msm::eigenvalue_moduli(a.transition) == msm::eigenvalue_moduli(b.transition) &&
                msm::implied_timescales(a.transition, 1.0) == msm::implied_timescales(b.transition, 1.0);
    }
    return {feat <= 1e-9 && vamp <= 1e-8 && exact,
            format("featurizer rigid-motion err %.2e (<= 1e-9); VAMP-2 affine-map err %.2e (<= 1e-8); MSM relabeling "
                   "spectrum %s",
                   feat, vamp, exact ? "bit-identical" : "DIFFERS")};
}

// ---- 10: CLI determinism ----

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
    return out;
}

// Drops column `col` of a CSV.
std::string drop_column(const std::string& csv, std::size_t col) {
    std::istringstream in(csv);
    std::string line, out;
    while (std::getline(in, line)) {
        std::istringstream cells(line);
        std::string cell;
        std::size_t i = 0;
        std::string kept;
        while (std::getline(cells, cell, ',')) {
            if (i++ != col) kept += cell + ",";
        }
        out += kept + "\n";
    }
    return out;
}

Outcome ac10() {
    const fs::path root = fs::temp_directory_path() / "fragmix_acceptance_cli";
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string r = root.string();
    {
        std::ofstream f(root / "run.cfg");
        f << "layers=1\nheads=2\nbatch_size=200\nmax_epochs=2\nspib_max_epochs=4\nspib_refine_every=2\n"
             "spib_initial_states=8\nvalidation_interval=5\nlag_ns=0.2\n";
    }
    {
        std::ofstream f(root / "labels.txt");
        f << "0 0 1 1 0\n1 2 2 1 0 0\n";
    }
    // Each step writes under `work`; later steps read what earlier ones left in `inputs`.
    struct Step {
        std::string name;
        std::vector<std::string> args;
        std::string output;
    };
    const std::vector<Step> steps{
        {"gen", {"gen", "--system", "doublewell", "--frames", "600", "--trajs", "5", "--out", r + "/work/pos"},
         "work/pos"},
        {"gen polymer", {"gen", "--system", "polymer", "--frames", "30", "--trajs", "2", "--out", r + "/work/poly",
                         "--oracle-lag", "2", "--oracle-bins", "12"}, "work/poly"},
        {"featurize", {"featurize", "--in", r + "/inputs/pos/manifest.txt", "--out", r + "/work/tok"}, "work/tok"},
        {"train vamp", {"train", "--objective", "vamp", "--config", r + "/run.cfg", "--data",
                        r + "/inputs/tok/manifest.txt", "--out", r + "/work/vamp"}, "work/vamp"},
        {"train spib", {"train", "--objective", "spib", "--config", r + "/run.cfg", "--data",
                        r + "/inputs/pos/manifest.txt", "--out", r + "/work/spib"}, "work/spib"},
        {"profile", {"profile", "--sizes", "64,96", "--windows", "1,3", "--ops", "gcn,rggc", "--hidden", "8",
                     "--layers", "1", "--heads", "2", "--counts-only", "--out", r + "/work/profile.csv"},
         "work/profile.csv"},
        {"profile timed", {"profile", "--sizes", "48", "--windows", "1,2", "--hidden", "8", "--layers", "1",
                           "--heads", "2", "--out", r + "/work/timed.csv"}, "work/timed.csv"},
        {"msm", {"msm", "--labels", r + "/labels.txt", "--lag", "1", "--frame-interval-ns", "0.5", "--out",
                 r + "/work/msm"}, "work"},
        {"attn", {"attn", "--checkpoint", r + "/inputs/vamp/checkpoint.fmx", "--data", r + "/inputs/tok/manifest.txt",
                  "--out", r + "/work/attn.csv", "--frames", "6"}, "work/attn.csv"},
    };
    std::size_t identical = 0;
    std::string failed;
    for (const Step& s : steps) {
        std::string outs[2];
        std::map<std::string, std::string> files[2];
        int codes[2];
        for (int rep = 0; rep < 2; ++rep) {
            fs::remove_all(root / "work");
            fs::create_directories(root / "work");
            std::ostringstream out, err;
            codes[rep] = cli::run(s.args, out, err);
            outs[rep] = out.str() + "\n--\n" + err.str();
            const fs::path p = root / s.output;
            if (fs::is_directory(p)) {
                files[rep] = tree(p);
            } else {
                files[rep][p.filename().string()] = slurp(p);
            }
        }
        if (s.name == "profile timed")
            for (auto& f : files)
                for (auto& [name, text] : f) text = drop_column(text, 3);
        const bool same = codes[0] == 0 && codes[1] == 0 && outs[0] == outs[1] && files[0] == files[1];
        if (same) {
            ++identical;
        } else {
            failed += " " + s.name;
        }
        // Keep this step's outputs as inputs for the next steps.
        const fs::path src = root / s.output;
        if (fs::is_directory(src) && s.output != "work") {
            const fs::path dst = root / "inputs" / src.filename();
            fs::remove_all(dst);
            fs::create_directories(dst.parent_path());
            fs::copy(src, dst, fs::copy_options::recursive);
        }
    }
    fs::remove_all(root);
    return {identical == steps.size(),
            format("%zu of %zu commands byte-identical on rerun (timed profile compared without ms_per_step)%s%s",
                   identical, steps.size(), failed.empty() ? "" : "; differing:", failed.c_str())};
}

struct Criterion {
    int id;
    const char* name;
    double limit_s;  // 0: no runtime bound
    Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "attention exactness", 30, ac1},       {2, "attention memory scaling", 120, ac2},
        {3, "pair count and step time", 300, ac3}, {4, "VAMP-2 two-state oracle", 60, ac4},
        {5, "double-well timescale", 600, ac5},    {6, "token merging on polymer", 1200, ac6},
        {7, "SPIB double-well states", 600, ac7},  {8, "graph operators", 0, ac8},
        {9, "invariance suite", 0, ac9},           {10, "CLI determinism", 0, ac10},
    };
    std::vector<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
    int failures = 0;
    for (const Criterion& c : all) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = c.limit_s == 0 || secs < c.limit_s;
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::string limit = c.limit_s > 0 ? format(" < %.0f s", c.limit_s) : std::string();
        std::printf("AC%-2d %s  %s: %s [%.1f s%s]\n", c.id, pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs,
                    limit.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
