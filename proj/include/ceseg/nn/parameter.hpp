#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace ceseg::nn {

/// A named array owned by a layer. Learnable parameters carry a gradient;
/// buffers (batch-norm running statistics) do not and are skipped by the
/// optimizer and by parameter counts.
template <typename T>
struct Parameter {
    std::string name;
    std::vector<std::size_t> dims;
    std::vector<T> value;
    std::vector<T> grad;
    bool learnable = true;

    Parameter() = default;
    Parameter(std::string n, std::vector<std::size_t> d, bool is_learnable = true, T fill = T(0))
        : name(std::move(n)), dims(std::move(d)), learnable(is_learnable) {
        const std::size_t count =
            std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
        value.assign(count, fill);
        if (learnable) grad.assign(count, T(0));
    }

    std::size_t size() const noexcept { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

/// Visitor over the parameters of a module; `prefix` is prepended to names.
template <typename T>
using ParamVisitor = std::function<void(Parameter<T>&)>;

template <typename T>
void fill_normal(std::vector<T>& v, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& x : v) x = static_cast<T>(dist(rng));
}

}  // namespace ceseg::nn
