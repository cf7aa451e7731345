// SPDX-License-Identifier: Apache-2.0
// Shared test helpers: random tensors and a central finite-difference oracle
// that only ever evaluates the forward function it is handed.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "rlarff/ndmath.hpp"

namespace rlarff::testing {

inline nd::Tensor random_tensor(nd::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    nd::Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

/// Central differences of a scalar function of several tensors.
inline std::vector<nd::Tensor> numeric_gradients(const std::function<double(const std::vector<nd::Tensor>&)>& f,
                                                 std::vector<nd::Tensor> inputs, double step = 1e-5) {
    std::vector<nd::Tensor> out;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        nd::Tensor g(inputs[k].shape());
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double orig = inputs[k][i];
            inputs[k][i] = orig + step;
            const double up = f(inputs);
            inputs[k][i] = orig - step;
            const double down = f(inputs);
            inputs[k][i] = orig;
            g[i] = (up - down) / (2.0 * step);
        }
        out.push_back(std::move(g));
    }
    return out;
}

/// max |a-b| / max|b|, with a tiny floor on the denominator.
inline double relative_error(const nd::Tensor& a, const nd::Tensor& b) {
    double diff = 0.0, scale = 1e-8;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max(scale, std::abs(b[i]));
    }
    return diff / scale;
}

inline double max_abs_diff(const nd::Tensor& a, const nd::Tensor& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

}  // namespace rlarff::testing
