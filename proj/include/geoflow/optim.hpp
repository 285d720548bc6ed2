#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "geoflow/tensor.hpp"

namespace geoflow::tc {

struct AdamConfig {
    double learning_rate = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam moments keyed by parameter name.
template <typename T>
struct OptimizerState {
    AdamConfig config;
    std::int64_t step = 0;
    std::map<std::string, Tensor<T>> first_moment;
    std::map<std::string, Tensor<T>> second_moment;
};

// One bias-corrected Adam update. Gradients are read, never cleared.
// Throws UsageError when a parameter has no gradient.
template <typename T>
void optimizer_step(ParameterSet<T>& params, OptimizerState<T>& state);

// Rescales all gradients in place so their joint L2 norm is at most
// `max_norm`. Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm);

}  // namespace geoflow::tc
