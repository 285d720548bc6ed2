#include "geoflow/optim.hpp"

#include <cmath>

namespace geoflow::tc {

template <typename T>
void optimizer_step(ParameterSet<T>& params, OptimizerState<T>& state) {
    for (auto& [name, p] : params)
        if (!p.has_grad()) throw UsageError("optimizer_step: parameter '" + name + "' has no gradient");

    ++state.step;
    const auto& c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (auto& [name, p] : params) {
        auto& m = state.first_moment[name];
        auto& v = state.second_moment[name];
        if (m.shape() != p.shape()) m = Tensor<T>(p.shape());
        if (v.shape() != p.shape()) v = Tensor<T>(p.shape());
        auto w = p.mutable_value().data();
        const auto g = p.grad().data();
        auto md = m.data();
        auto vd = v.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            const double mi = c.beta1 * md[i] + (1.0 - c.beta1) * gi;
            const double vi = c.beta2 * vd[i] + (1.0 - c.beta2) * gi * gi;
            md[i] = static_cast<T>(mi);
            vd[i] = static_cast<T>(vi);
            const double update = c.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + c.epsilon);
            w[i] = static_cast<T>(w[i] - update);
        }
    }
}

template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm) {
    double sq = 0.0;
    for (auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        for (T g : p.grad().data()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const T k = static_cast<T>(max_norm / norm);
        for (auto& [name, p] : params) {
            if (!p.has_grad()) continue;
            for (T& g : p.mutable_grad().data()) g *= k;
        }
    }
    return norm;
}

template void optimizer_step<float>(ParameterSet<float>&, OptimizerState<float>&);
template void optimizer_step<double>(ParameterSet<double>&, OptimizerState<double>&);
template double clip_grad_norm<float>(ParameterSet<float>&, double);
template double clip_grad_norm<double>(ParameterSet<double>&, double);

}  // namespace geoflow::tc
