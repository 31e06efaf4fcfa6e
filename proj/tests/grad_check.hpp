#pragma once

#include "osrl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace osrl::testing {

// Largest relative error between analytic and central-difference gradients.
// Entries where both are below `floor` in magnitude are compared absolutely.
inline double max_relative_error(const nn::ParamRefs& params, const nn::ConstParamRefs& analytic,
                                 const std::function<double()>& loss, double h = 1e-5, double floor = 1e-7)
{
    const auto numeric = nn::numeric_gradient(params, loss, h);
    double worst = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
        for (std::size_t k = 0; k < numeric[i].size(); ++k) {
            const double a = analytic[i][k];
            const double n = numeric[i][k];
            const double denom = std::max({std::abs(a), std::abs(n), floor});
            worst = std::max(worst, std::abs(a - n) / denom);
        }
    }
    return worst;
}

inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-7)
{
    double worst = 0.0;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
        const double denom = std::max({std::abs(analytic[k]), std::abs(numeric[k]), floor});
        worst = std::max(worst, std::abs(analytic[k] - numeric[k]) / denom);
    }
    return worst;
}

inline nn::Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0)
{
    nn::Matrix m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = scale * rng.normal();
    return m;
}

// Zero biases put ReLU units exactly on their kink when a whole row dies, so
// gradient checks start from random biases.
inline void randomize_biases(nn::Mlp& net, Rng& rng, double scale = 0.1)
{
    for (auto& layer : net.layers()) {
        for (Eigen::Index k = 0; k < layer.bias.size(); ++k) layer.bias(k) = scale * rng.normal();
    }
}

}  // namespace osrl::testing
