#include "fragmix/workflows.hpp"

#include <algorithm>
#include <numeric>

#include "fragmix/ops.hpp"

namespace fragmix::pipeline {

namespace {

constexpr std::uint64_t kSpibNoiseOp = 0x5B1B;

std::vector<std::int64_t> iota_index(std::size_t begin, std::size_t end) {
    std::vector<std::int64_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), static_cast<std::int64_t>(begin));
    return idx;
}

// Frames t of each pair, followed by frames t + lag.
std::vector<FrameRef> pair_frames(std::span<const LaggedPair> pairs, std::size_t lag) {
    std::vector<FrameRef> frames(2 * pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        frames[i] = {pairs[i].trajectory, pairs[i].t};
        frames[pairs.size() + i] = {pairs[i].trajectory, static_cast<std::uint32_t>(pairs[i].t + lag)};
    }
    return frames;
}

std::vector<FrameRef> frame_range(std::size_t trajectory, std::size_t begin, std::size_t end) {
    std::vector<FrameRef> frames;
    for (std::size_t t = begin; t < end; ++t) {
        frames.push_back({static_cast<std::uint32_t>(trajectory), static_cast<std::uint32_t>(t)});
    }
    return frames;
}

ModelConfig resolved_model(const ExperimentConfig& config, const TrajectoryDataset& data) {
    ModelConfig m = config.model;
    if (m.hidden() != data.hidden()) {
        throw ConfigError("model hidden width " + std::to_string(m.hidden()) + " differs from token width " +
                          std::to_string(data.hidden()));
    }
    return m;
}

}  // namespace

std::vector<double> evaluate_frames(const FrameFn& fn, std::size_t trajectory, std::size_t begin, std::size_t end,
                                    std::size_t chunk, std::size_t& width) {
    NoGradScope no_grad;
    std::vector<double> out;
    width = 0;
    for (std::size_t s = begin; s < end; s += chunk) {
        const auto frames = frame_range(trajectory, s, std::min(end, s + chunk));
        const Tensor f = fn(frames);
        width = f.cols();
        out.insert(out.end(), f.data().begin(), f.data().end());
    }
    return out;
}

VampModel VampModel::create(const ExperimentConfig& config, const TrajectoryDataset& data) {
    VampModel m;
    Rng rng(derive_seed(config.seed, 0x11A1));
    m.embedder = FragmentMixerModel::create(m.store, resolved_model(config, data), data.residues(),
                                            data.trajectories.front().ligand, rng);
    m.head = objectives::VampHead::create(m.store, "vamp", config.model.hidden(), config.vamp_outputs, rng);
    return m;
}

Tensor VampModel::features(const TrajectoryDataset& data, std::span<const FrameRef> frames,
                           const ForwardContext& ctx) const {
    return head(store, embedder.embed(store, data, frames, ctx));
}

std::vector<std::vector<double>> VampModel::all_features(const TrajectoryDataset& data, std::size_t chunk) const {
    std::vector<std::vector<double>> out;
    const FrameFn fn = [&](std::span<const FrameRef> f) { return features(data, f, ForwardContext{}); };
    for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
        std::size_t width = 0;
        out.push_back(evaluate_frames(fn, i, 0, data.trajectories[i].frames(), chunk, width));
    }
    return out;
}

double VampModel::score(const TrajectoryDataset& data, std::span<const Segment> segments, std::size_t lag,
                        std::size_t chunk) const {
    const FrameFn fn = [&](std::span<const FrameRef> f) { return features(data, f, ForwardContext{}); };
    std::vector<double> f0, ft;
    std::size_t k = 0;
    for (const Segment& s : segments) {
        if (s.length() <= lag) continue;
        const auto f = evaluate_frames(fn, s.trajectory, s.begin, s.end, chunk, k);
        const std::size_t n = s.length() - lag;
        f0.insert(f0.end(), f.begin(), f.begin() + static_cast<std::ptrdiff_t>(n * k));
        ft.insert(ft.end(), f.begin() + static_cast<std::ptrdiff_t>(lag * k), f.end());
    }
    if (f0.empty()) throw ConfigError("no lagged pairs in validation segments");
    NoGradScope no_grad;
    const std::size_t rows = f0.size() / k;
    return objectives::vamp2_score(Tensor({rows, k}, std::span<const double>(f0)),
                                   Tensor({rows, k}, std::span<const double>(ft)))
        .item();
}

VampRun train_vamp(VampModel& model, const TrajectoryDataset& data, const ExperimentConfig& config) {
    VampRun run;
    run.split = split(frame_counts(data), config.split);
    const std::vector<LaggedPair> pairs = lagged_pairs(run.split.train, config.lag_frames, &run.warnings);
    const std::size_t lag = config.lag_frames;
    Trainer trainer(model.store, config.vamp_train);
    const Trainer::StepFn step = [&](std::span<const LaggedPair> batch, const ForwardContext& ctx, double& score) {
        const auto frames = pair_frames(batch, lag);
        const Tensor f = model.features(data, frames, ctx);
        const Tensor f0 = ops::gather_rows(f, iota_index(0, batch.size()));
        const Tensor ft = ops::gather_rows(f, iota_index(batch.size(), 2 * batch.size()));
        const Tensor vamp = objectives::vamp2_score(f0, ft);
        score = vamp.item();
        return ops::neg(vamp);
    };
    const Trainer::ValidateFn validate = [&] {
        return model.score(data, run.split.validation, lag, config.eval_chunk);
    };
    run.train = trainer.run(pairs, step, validate);
    return run;
}

InitialLabels kmeans_labels(std::span<const std::vector<double>> features, std::size_t dim, std::size_t k,
                            std::uint64_t seed) {
    std::vector<double> points;
    for (const auto& f : features) points.insert(points.end(), f.begin(), f.end());
    const auto km = objectives::kmeans(points, dim, k, seed);
    InitialLabels out;
    out.states = km.k;
    out.warning = km.warning;
    std::size_t at = 0;
    for (const auto& f : features) {
        const std::size_t n = f.size() / dim;
        out.labels.emplace_back(km.labels.begin() + static_cast<std::ptrdiff_t>(at),
                                km.labels.begin() + static_cast<std::ptrdiff_t>(at + n));
        at += n;
    }
    return out;
}

SpibModel SpibModel::create(const ExperimentConfig& config, const TrajectoryDataset& data, std::size_t states) {
    SpibModel m;
    Rng rng(derive_seed(config.seed, 0x5B1A));
    m.embedder = FragmentMixerModel::create(m.store, resolved_model(config, data), data.residues(),
                                            data.trajectories.front().ligand, rng);
    objectives::SpibConfig sc = config.spib;
    sc.hidden = config.model.hidden();
    sc.states = states;
    m.head = objectives::SpibHead::create(m.store, "spib", sc, rng);
    return m;
}

Tensor SpibModel::embed(const TrajectoryDataset& data, std::span<const FrameRef> frames,
                        const ForwardContext& ctx) const {
    return embedder.embed(store, data, frames, ctx);
}

std::vector<std::vector<std::int64_t>> SpibModel::predict(const TrajectoryDataset& data, std::size_t chunk) const {
    NoGradScope no_grad;
    std::vector<std::vector<std::int64_t>> out;
    for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
        std::vector<std::int64_t> labels;
        const std::size_t n = data.trajectories[i].frames();
        for (std::size_t s = 0; s < n; s += chunk) {
            const auto frames = frame_range(i, s, std::min(n, s + chunk));
            const auto l = objectives::predict_labels(head, store, embed(data, frames, ForwardContext{}));
            labels.insert(labels.end(), l.begin(), l.end());
        }
        out.push_back(std::move(labels));
    }
    return out;
}

SpibRun train_spib(SpibModel& model, const TrajectoryDataset& data, const ExperimentConfig& config,
                   std::vector<std::vector<std::int64_t>> initial_labels) {
    if (initial_labels.size() != data.trajectories.size()) throw ConfigError("need initial labels per trajectory");
    for (std::size_t i = 0; i < initial_labels.size(); ++i) {
        if (initial_labels[i].size() != data.trajectories[i].frames()) {
            throw ConfigError("initial labels of trajectory " + std::to_string(i) + " do not cover every frame");
        }
    }
    SpibRun run;
    run.labels = std::move(initial_labels);
    run.states = model.head.states();
    run.split = split(frame_counts(data), config.split);
    const std::size_t lag = config.lag_frames;
    const std::vector<LaggedPair> pairs = lagged_pairs(run.split.train, lag);
    const std::vector<LaggedPair> val_pairs = lagged_pairs(run.split.validation, lag);
    if (val_pairs.empty()) throw ConfigError("no lagged pairs in validation segments");

    auto future_labels = [&](std::span<const LaggedPair> batch) {
        std::vector<std::int64_t> out(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) out[i] = run.labels[batch[i].trajectory][batch[i].t + lag];
        return out;
    };
    auto present = [](std::span<const LaggedPair> batch) {
        std::vector<FrameRef> f(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) f[i] = {batch[i].trajectory, batch[i].t};
        return f;
    };

    Trainer trainer(model.store, config.spib_train);
    const Trainer::StepFn step = [&](std::span<const LaggedPair> batch, const ForwardContext& ctx, double& score) {
        const Tensor h = model.embed(data, present(batch), ctx);
        const auto terms = objectives::spib_loss(model.head, model.store, h, future_labels(batch),
                                                 CounterKey{config.seed, ctx.step, kSpibNoiseOp});
        score = -terms.loss.item();
        return terms.loss;
    };
    // Fixed noise stream so validation scores are comparable across steps.
    const Trainer::ValidateFn validate = [&] {
        NoGradScope no_grad;
        double total = 0.0;
        for (std::size_t s = 0; s < val_pairs.size(); s += config.eval_chunk) {
            const std::span<const LaggedPair> batch(val_pairs.data() + s,
                                                    std::min(config.eval_chunk, val_pairs.size() - s));
            const Tensor h = model.embed(data, present(batch), ForwardContext{});
            const auto terms = objectives::spib_loss(model.head, model.store, h, future_labels(batch),
                                                     CounterKey{config.seed, s, kSpibNoiseOp + 1});
            total -= terms.loss.item() * static_cast<double>(batch.size());
        }
        return total / static_cast<double>(val_pairs.size());
    };
    const Trainer::EpochHook hook = [&](std::size_t epoch) {
        if ((epoch + 1) % config.refine_every != 0) return true;
        const auto predicted = model.predict(data, config.eval_chunk);
        std::size_t changed = 0, total = 0;
        std::vector<std::int64_t> flat;
        for (std::size_t i = 0; i < predicted.size(); ++i) {
            for (std::size_t t = 0; t < predicted[i].size(); ++t) changed += predicted[i][t] != run.labels[i][t];
            total += predicted[i].size();
            flat.insert(flat.end(), predicted[i].begin(), predicted[i].end());
        }
        const auto compact = objectives::compact_labels(flat, run.states);
        model.head.keep_states(model.store, compact.kept);
        std::size_t at = 0;
        for (auto& l : run.labels) {
            std::copy_n(compact.labels.begin() + static_cast<std::ptrdiff_t>(at), l.size(), l.begin());
            at += l.size();
        }
        run.states = compact.states;
        ++run.refinements;
        const double fraction = static_cast<double>(changed) / static_cast<double>(total);
        run.changed_fraction.push_back(fraction);
        trainer.reset_best();
        run.converged = fraction < config.refine_tolerance;
        return !run.converged && run.refinements < config.max_refinements;
    };
    run.train = trainer.run(pairs, step, validate, hook);
    return run;
}

}  // namespace fragmix::pipeline
