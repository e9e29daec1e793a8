#pragma once

// Optimizer, minibatch training loop with early stopping, and checkpoints.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fragmix/dataset.hpp"
#include "fragmix/nn.hpp"

namespace fragmix::pipeline {

struct AdamConfig {
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    // Applies one update from the gradients currently stored on the parameters.
    // Returns the global gradient norm.
    double step(ParameterStore& store);
    // Drops moment estimates for one parameter (e.g. after it was resized).
    void reset(const std::string& name) { state_.erase(name); }
    void reset_all() { state_.clear(); }
    std::uint64_t steps_taken(const std::string& name) const;
    const AdamConfig& config() const noexcept { return config_; }

private:
    struct Moments {
        std::vector<double> m, v;
        std::uint64_t t = 0;
    };
    AdamConfig config_;
    std::map<std::string, Moments> state_;
};

struct TrainConfig {
    std::size_t batch_size = 1000;
    double learning_rate = 5e-4;
    std::size_t max_epochs = 100;
    std::size_t validation_interval = 50;   // steps between validation evaluations
    std::size_t validation_patience = 10;   // evaluations without improvement
    std::size_t training_patience = 1000;   // steps without a new best training score
    std::uint64_t seed = 0;

    void validate() const;
};

struct ScorePoint {
    std::size_t step = 0;
    double train_score = 0.0;  // mean over the steps since the previous point
    double val_score = 0.0;
};

struct TrainResult {
    std::vector<ScorePoint> curve;
    double best_val = -std::numeric_limits<double>::infinity();
    std::size_t best_step = 0;
    std::size_t steps = 0;
    std::size_t epochs = 0;
    std::string stop_reason;
};

void write_score_csv(const std::filesystem::path& path, std::span<const ScorePoint> curve);

class Trainer {
public:
    // Loss to minimize for one minibatch; `score` receives the matching
    // higher-is-better training score.
    using StepFn = std::function<Tensor(std::span<const LaggedPair> batch, const ForwardContext& ctx, double& score)>;
    // Higher-is-better validation score, evaluated without a tape.
    using ValidateFn = std::function<double()>;
    // Called after each finished epoch; may modify parameters (the optimizer
    // state of replaced tensors is reset by the caller via optimizer()).
    using EpochHook = std::function<bool(std::size_t epoch)>;

    Trainer(ParameterStore& store, TrainConfig config);

    Adam& optimizer() noexcept { return adam_; }
    // Forgets the best-so-far validation score and snapshot; used when the
    // objective itself changes mid-run (SPIB label refinement).
    void reset_best() noexcept;

    // Runs until max epochs, a patience limit, or the hook returns false.
    // Leaves the best-validation parameters in the store.
    TrainResult run(std::span<const LaggedPair> pairs, const StepFn& step, const ValidateFn& validate,
                    const EpochHook& hook = {});

private:
    ParameterStore& store_;
    TrainConfig config_;
    Adam adam_;
    double best_val_ = -std::numeric_limits<double>::infinity();
    std::size_t best_step_ = 0;
    std::size_t bad_evals_ = 0;
    std::vector<std::vector<double>> best_params_;
};

// "FMX1", u32-length config text, u32 parameter count, then per parameter:
// u32-length name, u32 rank, u64 dims, little-endian f64 values.
struct Checkpoint {
    std::string config_text;
    std::vector<std::pair<std::string, Tensor>> parameters;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text, const ParameterStore& store);
Checkpoint read_checkpoint(const std::filesystem::path& path);
// Copies checkpoint values into same-named parameters, resizing when a
// tensor's shape changed (SPIB decoder pruning). Unknown names are an error.
void load_parameters(const Checkpoint& checkpoint, ParameterStore& store);

}  // namespace fragmix::pipeline
