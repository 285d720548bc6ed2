#pragma once

// Central finite-difference oracle for the autodiff engine. Independent of
// the backward closures: it only calls the forward function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "geoflow/ops.hpp"
#include "geoflow/rng.hpp"

namespace geoflow::testing {

template <typename T>
tc::Tensor<T> random_tensor(const tc::Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    tc::Tensor<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// Reduces any tensor to a scalar with fixed random weights so that every
// output element contributes a distinct gradient.
template <typename T>
tc::Var<T> probe(const tc::Var<T>& y, std::uint64_t seed = 99) {
    Rng rng(seed);
    return tc::sum(tc::hadamard(y, tc::constant(random_tensor<T>(y.shape(), rng))));
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

// |g_a - g_fd| / max(1, |g_a|, |g_fd|), maximised over the checked entries.
// `fraction` < 1 checks a deterministic random subset of each input.
template <typename T>
GradCheckResult gradcheck(const std::function<tc::Var<T>(const std::vector<tc::Var<T>>&)>& f,
                          std::vector<tc::Var<T>> inputs, double h = 1e-4, double fraction = 1.0,
                          std::uint64_t subset_seed = 7) {
    for (auto& in : inputs) in.zero_grad();
    tc::backward(f(inputs));
    std::vector<tc::Tensor<T>> analytic;
    for (auto& in : inputs)
        analytic.push_back(in.has_grad() ? in.grad() : tc::Tensor<T>(in.shape()));

    GradCheckResult res;
    Rng pick(subset_seed);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!inputs[k].requires_grad()) continue;
        auto& value = inputs[k].mutable_value();
        for (std::int64_t i = 0; i < value.numel(); ++i) {
            if (fraction < 1.0 && pick.uniform() >= fraction) continue;
            const T orig = value[i];
            double fp, fm;
            {
                tc::NoGradGuard ng;
                value[i] = static_cast<T>(orig + h);
                fp = static_cast<double>(f(inputs).item());
                value[i] = static_cast<T>(orig - h);
                fm = static_cast<double>(f(inputs).item());
                value[i] = orig;
            }
            // Use the perturbation actually representable in T.
            const double step = (static_cast<double>(static_cast<T>(orig + h)) -
                                 static_cast<double>(static_cast<T>(orig - h)));
            const double fd = (fp - fm) / step;
            const double ga = analytic[k][i];
            const double denom = std::max({1.0, std::abs(ga), std::abs(fd)});
            res.max_rel_error = std::max(res.max_rel_error, std::abs(ga - fd) / denom);
            ++res.checked;
        }
    }
    return res;
}

// Checks the single-precision backward pass of a model against a
// double-precision central difference of the same function. `f32` and `f64`
// evaluate the loss with the parameters in `pf` and `pd`; `pd` is overwritten
// with the values of `pf` so both evaluate the same point.
inline GradCheckResult mixed_precision_gradcheck(tc::ParameterSet<float>& pf, tc::ParameterSet<double>& pd,
                                                 const std::function<tc::Var<float>()>& f32,
                                                 const std::function<tc::Var<double>()>& f64, double h = 1e-6,
                                                 double fraction = 1.0, std::uint64_t subset_seed = 7) {
    auto fit = pf.begin();
    for (auto dit = pd.begin(); dit != pd.end(); ++dit, ++fit) dit->second.mutable_value() = fit->second.value().cast<double>();
    pf.zero_grad();
    tc::backward(f32());
    GradCheckResult res;
    Rng pick(subset_seed);
    fit = pf.begin();
    for (auto dit = pd.begin(); dit != pd.end(); ++dit, ++fit) {
        auto& value = dit->second.mutable_value();
        const auto& ga_all = fit->second.grad();
        for (std::int64_t i = 0; i < value.numel(); ++i) {
            if (fraction < 1.0 && pick.uniform() >= fraction) continue;
            const double orig = value[i];
            double fp, fm;
            {
                tc::NoGradGuard ng;
                value[i] = orig + h;
                fp = f64().item();
                value[i] = orig - h;
                fm = f64().item();
                value[i] = orig;
            }
            const double fd = (fp - fm) / (2 * h);
            const double ga = ga_all.empty() ? 0.0 : static_cast<double>(ga_all[i]);
            const double denom = std::max({1.0, std::abs(ga), std::abs(fd)});
            res.max_rel_error = std::max(res.max_rel_error, std::abs(ga - fd) / denom);
            ++res.checked;
        }
    }
    return res;
}

}  // namespace geoflow::testing
