#include "geoflow/genflow.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace geoflow {

using tc::Shape;
using tc::Tensor;
using tc::Var;

NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("diffusion steps must be >= 1");
    if (!(beta_start > 0) || !(beta_end < 1) || (steps > 1 && !(beta_start < beta_end)))
        throw ConfigError("need 0 < beta_start < beta_end < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.beta.assign(static_cast<std::size_t>(steps + 1), 0.0);
    s.alpha.assign(static_cast<std::size_t>(steps + 1), 1.0);
    s.alpha_bar.assign(static_cast<std::size_t>(steps + 1), 1.0);
    for (int t = 1; t <= steps; ++t) {
        const double b = steps == 1 ? beta_end : beta_start + (beta_end - beta_start) * (t - 1) / (steps - 1);
        s.beta[static_cast<std::size_t>(t)] = b;
        s.alpha[static_cast<std::size_t>(t)] = 1.0 - b;
        s.alpha_bar[static_cast<std::size_t>(t)] = s.alpha_bar[static_cast<std::size_t>(t - 1)] * (1.0 - b);
    }
    return s;
}

NoiseSchedule scaled_linear_schedule(int steps) {
    if (steps <= 20) throw ConfigError("scaled schedule needs more than 20 steps");
    const double f = 1000.0 / steps;
    return linear_schedule(steps, 1e-4 * f, 0.02 * f);
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items) {
    if (items.empty()) throw UsageError("cannot stack zero tensors");
    Shape shape = items.front().shape();
    tc::AlignedVector<T> data;
    data.reserve(static_cast<std::size_t>(items.front().numel()) * items.size());
    for (const auto& it : items) {
        if (it.shape() != shape) throw ShapeError("stack: mismatched shapes " + tc::shape_str(it.shape()));
        data.insert(data.end(), it.storage().begin(), it.storage().end());
    }
    shape.insert(shape.begin(), static_cast<std::int64_t>(items.size()));
    return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> normal_tensor(const Shape& shape, Rng& rng) {
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(rng.normal());
    return t;
}

namespace {

template <typename T>
std::int64_t sample_size(const Tensor<T>& x, std::size_t batch) {
    if (x.rank() < 2 || static_cast<std::size_t>(x.dim(0)) != batch)
        throw ShapeError("expected a batch of " + std::to_string(batch) + ", got " + tc::shape_str(x.shape()));
    return x.numel() / x.dim(0);
}

template <typename T>
void check_finite(const Tensor<T>& x, const std::string& what) {
    for (auto v : x.data())
        if (!std::isfinite(static_cast<double>(v))) throw NumericalError(what + " became non-finite");
}

template <typename T>
double finish_step(FieldModel<T>& model, Var<T> loss, TrainState<T>& state, const TrainConfig& cfg) {
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value))
        throw NumericalError("non-finite training loss at step " + std::to_string(state.step) + " (loss " +
                             std::to_string(value) + ")");
    auto* params = model.parameters();
    if (!params) throw UsageError("model has no trainable parameters");
    params->zero_grad();
    tc::backward(loss);
    if (cfg.clip_norm > 0) {
        const double norm = tc::clip_grad_norm(*params, cfg.clip_norm);
        if (!std::isfinite(norm))
            throw NumericalError("non-finite gradient norm at step " + std::to_string(state.step));
    }
    state.optimizer.config.learning_rate = cfg.learning_rate;
    tc::optimizer_step(*params, state.optimizer);
    ++state.step;
    state.loss_history.push_back(value);
    return value;
}

template <typename T>
Tensor<T> batched(const Tensor<T>& x) {
    Shape s = x.shape();
    if (s.size() == 4) s.insert(s.begin(), 1);
    return x.reshaped(s);
}

}  // namespace

template <typename T>
FlowPathSample<T> flow_path(const Tensor<T>& x0, const Tensor<T>& x1, const std::vector<double>& t) {
    if (x0.shape() != x1.shape()) throw ShapeError("flow_path: x0 and x1 shapes differ");
    const std::int64_t n = sample_size(x0, t.size());
    FlowPathSample<T> p{t, x0, x1, Tensor<T>(x0.shape()), Tensor<T>(x0.shape())};
    for (std::size_t b = 0; b < t.size(); ++b) {
        const T tb = static_cast<T>(t[b]), sb = static_cast<T>(1.0 - t[b]);
        for (std::int64_t i = static_cast<std::int64_t>(b) * n; i < static_cast<std::int64_t>(b + 1) * n; ++i) {
            p.xt[i] = sb * x0[i] + tb * x1[i];
            p.velocity[i] = x1[i] - x0[i];
        }
    }
    return p;
}

template <typename T>
Tensor<T> diffuse(const Tensor<T>& x0, const Tensor<T>& eps, const std::vector<double>& alpha_bar) {
    if (x0.shape() != eps.shape()) throw ShapeError("diffuse: x0 and noise shapes differ");
    const std::int64_t n = sample_size(x0, alpha_bar.size());
    Tensor<T> out(x0.shape());
    for (std::size_t b = 0; b < alpha_bar.size(); ++b) {
        const T a = static_cast<T>(std::sqrt(alpha_bar[b])), s = static_cast<T>(std::sqrt(1.0 - alpha_bar[b]));
        for (std::int64_t i = static_cast<std::int64_t>(b) * n; i < static_cast<std::int64_t>(b + 1) * n; ++i)
            out[i] = a * x0[i] + s * eps[i];
    }
    return out;
}

template <typename T>
Var<T> fm_loss(FieldModel<T>& model, const FlowPathSample<T>& path, const Tensor<T>& cond) {
    auto v = model.forward(tc::constant(path.xt), path.t, tc::constant(cond));
    return tc::mse_loss(v, tc::constant(path.velocity));
}

template <typename T>
Var<T> ddpm_loss(FieldModel<T>& model, const Tensor<T>& x0, const Tensor<T>& eps, const std::vector<int>& steps,
                 const NoiseSchedule& schedule, const Tensor<T>& cond) {
    std::vector<double> abar, tin;
    for (int t : steps) {
        if (t < 1 || t > schedule.steps) throw UsageError("diffusion step out of range");
        abar.push_back(schedule.alpha_bar[static_cast<std::size_t>(t)]);
        tin.push_back(static_cast<double>(t) / schedule.steps);
    }
    auto xt = diffuse(x0, eps, abar);
    auto pred = model.forward(tc::constant(xt), tin, tc::constant(cond));
    return tc::mse_loss(pred, tc::constant(eps));
}

template <typename T>
double fm_training_step(FieldModel<T>& model, const Tensor<T>& x1, const Tensor<T>& cond, TrainState<T>& state,
                        const TrainConfig& cfg) {
    const auto b = static_cast<std::size_t>(x1.dim(0));
    std::vector<double> t(b);
    for (auto& v : t) v = state.rng.uniform();
    auto x0 = normal_tensor<T>(x1.shape(), state.rng);
    return finish_step(model, fm_loss(model, flow_path(x0, x1, t), cond), state, cfg);
}

template <typename T>
double ddpm_training_step(FieldModel<T>& model, const Tensor<T>& x0, const Tensor<T>& cond,
                          const NoiseSchedule& schedule, TrainState<T>& state, const TrainConfig& cfg) {
    const auto b = static_cast<std::size_t>(x0.dim(0));
    std::vector<int> steps(b);
    for (auto& s : steps) s = 1 + static_cast<int>(state.rng.below(static_cast<std::uint64_t>(schedule.steps)));
    auto eps = normal_tensor<T>(x0.shape(), state.rng);
    return finish_step(model, ddpm_loss(model, x0, eps, steps, schedule, cond), state, cfg);
}

template <typename T>
void project_conditioned(Tensor<T>& x, const ConditionVolume& cond, const Tensor<T>& frozen, double data_coef,
                         double noise_coef) {
    const std::int64_t n = cond.dims().voxels();
    if (x.numel() != kNumCategories * n || frozen.numel() != x.numel())
        throw ShapeError("projection: state " + tc::shape_str(x.shape()) + " does not match the condition grid");
    const T dc = static_cast<T>(data_coef), nc = static_cast<T>(noise_coef);
    for (std::int64_t i = 0; i < n; ++i) {
        const int l = cond.labels[i];
        if (l == kUnsampled) continue;
        for (int k = 0; k < kNumCategories; ++k) {
            const std::int64_t j = k * n + i;
            const T e = (k + 1 == l) ? T(1) : T(-1);
            x[j] = dc * e + nc * frozen[j];
        }
    }
}

template <typename T>
void hard_condition_project(Tensor<T>& x, double t, const ConditionVolume& cond, const Tensor<T>& frozen,
                            Objective mode, const NoiseSchedule* schedule) {
    if (mode == Objective::FlowMatching) {
        project_conditioned(x, cond, frozen, t, 1.0 - t);
        return;
    }
    if (!schedule) throw UsageError("diffusion projection needs a schedule");
    const auto step = static_cast<int>(t);
    if (step < 0 || step > schedule->steps) throw UsageError("diffusion step out of range");
    const double ab = schedule->alpha_bar[static_cast<std::size_t>(step)];
    project_conditioned(x, cond, frozen, std::sqrt(ab), std::sqrt(1.0 - ab));
}

template <typename T>
SampleResult sample_ode(FieldModel<T>& model, const ConditionVolume& cond, int steps, std::uint64_t seed) {
    if (steps < 1) throw UsageError("sampler needs at least one step");
    tc::NoGradGuard ng;
    const Dims& d = cond.dims();
    Rng rng(seed);
    auto x = normal_tensor<T>({1, kNumCategories, d.x, d.y, d.z}, rng);
    const Tensor<T> frozen = x;
    const auto c = tc::constant(batched(condition_channels(cond).template cast<T>()));
    const double dt = 1.0 / steps;
    for (int i = 0; i < steps; ++i) {
        const double t = i * dt;
        auto v = model.forward(tc::constant(x), {t}, c).value();
        if (v.shape() != x.shape()) throw ShapeError("model output " + tc::shape_str(v.shape()) + " vs state");
        const T h = static_cast<T>(dt);
        for (std::int64_t j = 0; j < x.numel(); ++j) x[j] += h * v[j];
        hard_condition_project(x, (i + 1) == steps ? 1.0 : (i + 1) * dt, cond, frozen, Objective::FlowMatching);
        check_finite(x, "flow sampler state");
    }
    auto state = x.reshaped({kNumCategories, d.x, d.y, d.z});
    return {decode(state), state.template cast<double>()};
}

template <typename T>
SampleResult sample_ancestral(FieldModel<T>& model, const ConditionVolume& cond, const NoiseSchedule& schedule,
                              std::uint64_t seed) {
    tc::NoGradGuard ng;
    const Dims& d = cond.dims();
    Rng rng(seed);
    auto x = normal_tensor<T>({1, kNumCategories, d.x, d.y, d.z}, rng);
    const Tensor<T> frozen = x;
    hard_condition_project(x, schedule.steps, cond, frozen, Objective::Diffusion, &schedule);
    const auto c = tc::constant(batched(condition_channels(cond).template cast<T>()));
    for (int t = schedule.steps; t >= 1; --t) {
        const auto ts = static_cast<std::size_t>(t);
        const double beta = schedule.beta[ts], alpha = schedule.alpha[ts], ab = schedule.alpha_bar[ts];
        auto eps = model.forward(tc::constant(x), {static_cast<double>(t) / schedule.steps}, c).value();
        if (eps.shape() != x.shape()) throw ShapeError("model output " + tc::shape_str(eps.shape()) + " vs state");
        const double k = beta / std::sqrt(1.0 - ab), inv = 1.0 / std::sqrt(alpha);
        const double var = t > 1 ? beta * (1.0 - schedule.alpha_bar[ts - 1]) / (1.0 - ab) : 0.0;
        const double sd = std::sqrt(var);
        for (std::int64_t j = 0; j < x.numel(); ++j) {
            const double mean = inv * (static_cast<double>(x[j]) - k * static_cast<double>(eps[j]));
            x[j] = static_cast<T>(t > 1 ? mean + sd * rng.normal() : mean);
        }
        hard_condition_project(x, t - 1, cond, frozen, Objective::Diffusion, &schedule);
        check_finite(x, "diffusion sampler state");
    }
    auto state = x.reshaped({kNumCategories, d.x, d.y, d.z});
    return {decode(state), state.template cast<double>()};
}

template <typename T>
double fm_validation_loss(FieldModel<T>& model, const std::vector<Tensor<T>>& x1, const std::vector<Tensor<T>>& cond,
                          std::uint64_t seed, int batch_size) {
    if (x1.size() != cond.size() || x1.empty()) throw UsageError("validation needs matching, non-empty case lists");
    tc::NoGradGuard ng;
    Rng rng(seed);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < x1.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(x1.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<Tensor<T>> xb(x1.begin() + static_cast<std::ptrdiff_t>(start),
                                  x1.begin() + static_cast<std::ptrdiff_t>(end));
        std::vector<Tensor<T>> cb(cond.begin() + static_cast<std::ptrdiff_t>(start),
                                  cond.begin() + static_cast<std::ptrdiff_t>(end));
        auto xs = stack(xb);
        std::vector<double> t(end - start);
        for (auto& v : t) v = rng.uniform();
        auto x0 = normal_tensor<T>(xs.shape(), rng);
        const double l = static_cast<double>(fm_loss(model, flow_path(x0, xs, t), stack(cb)).item());
        total += l * static_cast<double>(end - start);
        count += end - start;
    }
    return total / static_cast<double>(count);
}

template <typename T>
double ddpm_validation_loss(FieldModel<T>& model, const std::vector<Tensor<T>>& x0, const std::vector<Tensor<T>>& cond,
                            const NoiseSchedule& schedule, std::uint64_t seed, int batch_size) {
    if (x0.size() != cond.size() || x0.empty()) throw UsageError("validation needs matching, non-empty case lists");
    tc::NoGradGuard ng;
    Rng rng(seed);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < x0.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(x0.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<Tensor<T>> xb(x0.begin() + static_cast<std::ptrdiff_t>(start),
                                  x0.begin() + static_cast<std::ptrdiff_t>(end));
        std::vector<Tensor<T>> cb(cond.begin() + static_cast<std::ptrdiff_t>(start),
                                  cond.begin() + static_cast<std::ptrdiff_t>(end));
        auto xs = stack(xb);
        std::vector<int> steps(end - start);
        for (auto& v : steps) v = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps)));
        auto eps = normal_tensor<T>(xs.shape(), rng);
        const double l = static_cast<double>(ddpm_loss(model, xs, eps, steps, schedule, stack(cb)).item());
        total += l * static_cast<double>(end - start);
        count += end - start;
    }
    return total / static_cast<double>(count);
}

template <typename T>
double train_epoch(FieldModel<T>& model, Objective objective, const std::vector<Tensor<T>>& x1,
                   const std::vector<Tensor<T>>& cond, TrainState<T>& state, const TrainConfig& cfg,
                   const NoiseSchedule* schedule) {
    if (x1.size() != cond.size() || x1.empty()) throw UsageError("training needs matching, non-empty case lists");
    if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (objective == Objective::Diffusion && !schedule) throw UsageError("diffusion training needs a schedule");
    std::vector<std::size_t> order(x1.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[state.rng.below(i)]);
    double total = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        std::vector<Tensor<T>> xb, cb;
        for (std::size_t i = start; i < end; ++i) {
            xb.push_back(x1[order[i]]);
            cb.push_back(cond[order[i]]);
        }
        const auto xs = stack(xb), cs = stack(cb);
        total += objective == Objective::FlowMatching ? fm_training_step(model, xs, cs, state, cfg)
                                                      : ddpm_training_step(model, xs, cs, *schedule, state, cfg);
        ++steps;
    }
    return total / steps;
}

#define GEOFLOW_INSTANTIATE_GENFLOW(T)                                                                               \
    template Tensor<T> stack<T>(const std::vector<Tensor<T>>&);                                                     \
    template Tensor<T> normal_tensor<T>(const Shape&, Rng&);                                                        \
    template FlowPathSample<T> flow_path<T>(const Tensor<T>&, const Tensor<T>&, const std::vector<double>&);        \
    template Tensor<T> diffuse<T>(const Tensor<T>&, const Tensor<T>&, const std::vector<double>&);                  \
    template Var<T> fm_loss<T>(FieldModel<T>&, const FlowPathSample<T>&, const Tensor<T>&);                         \
    template Var<T> ddpm_loss<T>(FieldModel<T>&, const Tensor<T>&, const Tensor<T>&, const std::vector<int>&,       \
                                 const NoiseSchedule&, const Tensor<T>&);                                           \
    template double fm_training_step<T>(FieldModel<T>&, const Tensor<T>&, const Tensor<T>&, TrainState<T>&,         \
                                        const TrainConfig&);                                                        \
    template double ddpm_training_step<T>(FieldModel<T>&, const Tensor<T>&, const Tensor<T>&, const NoiseSchedule&, \
                                          TrainState<T>&, const TrainConfig&);                                      \
    template void project_conditioned<T>(Tensor<T>&, const ConditionVolume&, const Tensor<T>&, double, double);    \
    template void hard_condition_project<T>(Tensor<T>&, double, const ConditionVolume&, const Tensor<T>&,           \
                                            Objective, const NoiseSchedule*);                                       \
    template SampleResult sample_ode<T>(FieldModel<T>&, const ConditionVolume&, int, std::uint64_t);                \
    template SampleResult sample_ancestral<T>(FieldModel<T>&, const ConditionVolume&, const NoiseSchedule&,         \
                                              std::uint64_t);                                                       \
    template double fm_validation_loss<T>(FieldModel<T>&, const std::vector<Tensor<T>>&,                            \
                                          const std::vector<Tensor<T>>&, std::uint64_t, int);                       \
    template double ddpm_validation_loss<T>(FieldModel<T>&, const std::vector<Tensor<T>>&,                          \
                                            const std::vector<Tensor<T>>&, const NoiseSchedule&, std::uint64_t, int); \
    template double train_epoch<T>(FieldModel<T>&, Objective, const std::vector<Tensor<T>>&,                        \
                                   const std::vector<Tensor<T>>&, TrainState<T>&, const TrainConfig&,               \
                                   const NoiseSchedule*);

GEOFLOW_INSTANTIATE_GENFLOW(float)
GEOFLOW_INSTANTIATE_GENFLOW(double)

}  // namespace geoflow
