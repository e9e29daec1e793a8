#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fragmix/ops.hpp"
#include "fragmix/random.hpp"
#include "fragmix/tensor.hpp"

namespace fragmix {

// Named, ordered trainable leaves. Names are unique; order is insertion order
// and is what the checkpoint format and the optimizer iterate over.
class ParameterStore {
public:
    Tensor& add(const std::string& name, Tensor init);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const noexcept;
    // Replaces the tensor behind an existing name (e.g. after resizing a layer).
    void replace(const std::string& name, Tensor value);

    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t scalar_count() const noexcept;
    const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() noexcept { return entries_; }

    void zero_grad() noexcept;

    std::vector<std::vector<double>> snapshot() const;
    void restore(const std::vector<std::vector<double>>& values);

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::size_t index_of(const std::string& name) const;
};

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng);

struct Linear {
    std::string weight_name;
    std::string bias_name;

    static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                         bool zero = false);
    Tensor operator()(const ParameterStore& store, const Tensor& x) const;
};

// Linear -> SiLU -> (dropout) -> Linear
struct Mlp2 {
    Linear first;
    Linear second;

    static Mlp2 create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                       std::size_t out, Rng& rng);
    Tensor operator()(const ParameterStore& store, const Tensor& x, const ops::DropoutSpec& dropout = {}) const;
};

// Evaluation flags threaded through a forward pass.
struct ForwardContext {
    bool training = false;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;

    ops::DropoutSpec dropout(double rate, std::uint64_t op) const {
        return ops::DropoutSpec{rate, training, CounterKey{seed, step, op}};
    }
};

}  // namespace fragmix
