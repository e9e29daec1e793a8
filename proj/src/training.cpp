#include "fragmix/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "fragmix/binary_io.hpp"

namespace fragmix::pipeline {

double Adam::step(ParameterStore& store) {
    double sq = 0.0;
    for (const auto& [name, p] : store.entries()) {
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    for (auto& [name, p] : store.entries()) {
        if (!p.has_grad()) continue;
        Moments& s = state_[name];
        if (s.m.size() != p.numel()) s = Moments{std::vector<double>(p.numel()), std::vector<double>(p.numel()), 0};
        ++s.t;
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(s.t));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(s.t));
        const auto g = p.grad();
        auto w = p.mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * g[i];
            s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mhat = s.m[i] / c1, vhat = s.v[i] / c2;
            w[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
    return norm;
}

std::uint64_t Adam::steps_taken(const std::string& name) const {
    const auto it = state_.find(name);
    return it == state_.end() ? 0 : it->second.t;
}

void TrainConfig::validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
    if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
    if (validation_interval < 1) throw ConfigError("validation_interval must be positive");
    if (validation_patience < 1) throw ConfigError("validation_patience must be positive");
    if (training_patience < 1) throw ConfigError("training_patience must be positive");
}

void write_score_csv(const std::filesystem::path& path, std::span<const ScorePoint> curve) {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw io::IoError("cannot write " + path.string());
    std::fprintf(f, "step,train_score,val_score\n");
    for (const ScorePoint& p : curve) std::fprintf(f, "%zu,%.17g,%.17g\n", p.step, p.train_score, p.val_score);
    if (std::fclose(f) != 0) throw io::IoError("failed writing " + path.string());
}

Trainer::Trainer(ParameterStore& store, TrainConfig config)
    : store_(store), config_(config), adam_(AdamConfig{config.learning_rate}) {
    config_.validate();
}

void Trainer::reset_best() noexcept {
    best_val_ = -std::numeric_limits<double>::infinity();
    best_step_ = 0;
    bad_evals_ = 0;
    best_params_.clear();
}

TrainResult Trainer::run(std::span<const LaggedPair> pairs, const StepFn& step_fn, const ValidateFn& validate,
                         const EpochHook& hook) {
    if (pairs.size() < 2) throw ConfigError("training needs at least 2 lagged pairs, got " + std::to_string(pairs.size()));
    reset_best();
    TrainResult result;
    const std::size_t batch = std::min(config_.batch_size, pairs.size());
    const std::size_t batches = std::max<std::size_t>(pairs.size() / batch, 1);

    std::vector<std::size_t> order(pairs.size());
    std::vector<LaggedPair> minibatch;
    double best_train = -std::numeric_limits<double>::infinity();
    std::size_t since_train_best = 0;
    double train_accum = 0.0;
    std::size_t train_count = 0;
    double last_norm = 0.0;
    std::size_t step = 0;
    bool stop = false;

    auto evaluate = [&] {
        const double val = validate();
        result.curve.push_back({step, train_count ? train_accum / static_cast<double>(train_count) : 0.0, val});
        train_accum = 0.0;
        train_count = 0;
        if (val > best_val_ || best_params_.empty()) {
            best_val_ = val;
            best_step_ = step;
            best_params_ = store_.snapshot();
            bad_evals_ = 0;
        } else if (++bad_evals_ >= config_.validation_patience) {
            result.stop_reason = "validation patience";
            stop = true;
        }
    };

    for (std::size_t epoch = 0; epoch < config_.max_epochs && !stop; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(config_.seed, 0xE90C0000ull + epoch));
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t b = 0; b < batches && !stop; ++b) {
            minibatch.clear();
            for (std::size_t i = b * batch; i < (b + 1) * batch; ++i) minibatch.push_back(pairs[order[i]]);
            ++step;
            const ForwardContext ctx{true, config_.seed, step};
            Tape tape;
            double score = 0.0;
            Tensor loss;
            {
                TapeScope scope(tape);
                loss = step_fn(minibatch, ctx, score);
            }
            if (!std::isfinite(loss.item())) {
                char msg[200];
                std::snprintf(msg, sizeof msg, "non-finite loss at step %zu (lr=%g, last grad-norm=%g)", step,
                              config_.learning_rate, last_norm);
                throw NumericalError(msg);
            }
            store_.zero_grad();
            tape.backward(loss);
            last_norm = adam_.step(store_);
            if (!std::isfinite(last_norm)) {
                char msg[200];
                std::snprintf(msg, sizeof msg, "non-finite gradient at step %zu (lr=%g, grad-norm=%g)", step,
                              config_.learning_rate, last_norm);
                throw NumericalError(msg);
            }
            store_.zero_grad();
            train_accum += score;
            ++train_count;
            if (score > best_train) {
                best_train = score;
                since_train_best = 0;
            } else if (++since_train_best >= config_.training_patience) {
                result.stop_reason = "training patience";
                stop = true;
            }
            if (step % config_.validation_interval == 0) evaluate();
        }
        result.epochs = epoch + 1;
        if (!stop && hook && !hook(epoch)) {
            result.stop_reason = "epoch hook";
            stop = true;
        }
    }
    if (result.stop_reason.empty()) result.stop_reason = "max epochs";
    if (best_params_.empty() || train_count > 0) evaluate();
    store_.restore(best_params_);
    result.best_val = best_val_;
    result.best_step = best_step_;
    result.steps = step;
    return result;
}

namespace {
constexpr std::string_view kCheckpointMagic{"FMX1", 4};
}

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text, const ParameterStore& store) {
    io::ByteWriter w;
    w.bytes(kCheckpointMagic);
    w.string32(config_text);
    w.u32(static_cast<std::uint32_t>(store.size()));
    for (const auto& [name, t] : store.entries()) {
        w.string32(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) w.u64(d);
        w.f64s(t.data());
    }
    w.write_file(path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    auto r = io::ByteReader::from_file(path);
    r.expect_magic(kCheckpointMagic, "checkpoint");
    Checkpoint c;
    c.config_text = r.string32("config text");
    const std::uint32_t count = r.u32("parameter count");
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.string32("parameter name");
        const std::size_t rank_at = r.offset();
        const std::uint32_t rank = r.u32("rank");
        if (rank == 0 || rank > 8) throw io::FormatError("implausible rank " + std::to_string(rank), rank_at);
        Shape shape(rank);
        std::size_t numel = 1;
        for (auto& d : shape) {
            const std::size_t at = r.offset();
            d = r.u64("dimension");
            if (d == 0 || d > (std::size_t{1} << 32)) throw io::FormatError("implausible dimension", at);
            numel *= d;
        }
        if (numel * sizeof(double) > r.remaining()) {
            throw io::FormatError("parameter '" + name + "' truncated", r.offset());
        }
        Buffer values(numel);
        r.f64s(std::span<double>(values.data(), values.size()), "parameter values");
        c.parameters.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    r.expect_end("checkpoint");
    return c;
}

void load_parameters(const Checkpoint& checkpoint, ParameterStore& store) {
    for (const auto& [name, t] : checkpoint.parameters) {
        if (!store.contains(name)) throw ConfigError("checkpoint parameter '" + name + "' not in model");
        Tensor& dst = store.get(name);
        if (dst.shape() == t.shape()) {
            std::copy(t.data().begin(), t.data().end(), dst.mutable_data().begin());
        } else {
            store.replace(name, t.detach());
        }
    }
    if (checkpoint.parameters.size() != store.size()) {
        throw ConfigError("checkpoint has " + std::to_string(checkpoint.parameters.size()) + " parameters, model has " +
                          std::to_string(store.size()));
    }
}

}  // namespace fragmix::pipeline
