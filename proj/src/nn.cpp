#include "fragmix/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace fragmix {

std::size_t ParameterStore::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].first == name) return i;
    throw std::out_of_range("unknown parameter '" + name + "'");
}

Tensor& ParameterStore::add(const std::string& name, Tensor init) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    init.set_requires_grad(true);
    entries_.emplace_back(name, std::move(init));
    return entries_.back().second;
}

Tensor& ParameterStore::get(const std::string& name) { return entries_[index_of(name)].second; }
const Tensor& ParameterStore::get(const std::string& name) const { return entries_[index_of(name)].second; }

bool ParameterStore::contains(const std::string& name) const noexcept {
    for (const auto& [n, t] : entries_)
        if (n == name) return true;
    return false;
}

void ParameterStore::replace(const std::string& name, Tensor value) {
    value.set_requires_grad(true);
    entries_[index_of(name)].second = std::move(value);
}

std::size_t ParameterStore::scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
}

void ParameterStore::zero_grad() noexcept {
    for (auto& [name, t] : entries_) t.zero_grad();
}

std::vector<std::vector<double>> ParameterStore::snapshot() const {
    std::vector<std::vector<double>> out;
    out.reserve(entries_.size());
    for (const auto& [name, t] : entries_) out.emplace_back(t.data().begin(), t.data().end());
    return out;
}

void ParameterStore::restore(const std::vector<std::vector<double>>& values) {
    if (values.size() != entries_.size()) throw std::invalid_argument("snapshot does not match parameter count");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto dst = entries_[i].second.mutable_data();
        if (values[i].size() != dst.size()) {
            throw std::invalid_argument("snapshot size mismatch for '" + entries_[i].first + "'");
        }
        std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
}

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
    return t;
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                      bool zero) {
    Linear l{name + ".weight", name + ".bias"};
    if (zero) {
        store.add(l.weight_name, Tensor::zeros({in, out}));
        store.add(l.bias_name, Tensor::zeros({out}));
    } else {
        store.add(l.weight_name, uniform_init({in, out}, in, rng));
        store.add(l.bias_name, uniform_init({out}, in, rng));
    }
    return l;
}

Tensor Linear::operator()(const ParameterStore& store, const Tensor& x) const {
    return ops::linear(x, store.get(weight_name), store.get(bias_name));
}

Mlp2 Mlp2::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                  std::size_t out, Rng& rng) {
    Mlp2 m;
    m.first = Linear::create(store, name + ".0", in, hidden, rng);
    m.second = Linear::create(store, name + ".1", hidden, out, rng);
    return m;
}

Tensor Mlp2::operator()(const ParameterStore& store, const Tensor& x, const ops::DropoutSpec& dropout) const {
    return second(store, ops::dropout(ops::silu(first(store, x)), dropout));
}

}  // namespace fragmix
