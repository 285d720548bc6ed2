#pragma once

// Training objectives and samplers: conditional flow matching with a linear
// path, DDPM noise prediction, and hard conditioning projection.

#include <cstdint>
#include <string>
#include <vector>

#include "geoflow/netmodel.hpp"
#include "geoflow/optim.hpp"
#include "geoflow/rng.hpp"
#include "geoflow/sparsity.hpp"

namespace geoflow {

enum class Objective { FlowMatching, Diffusion };

// Linear beta ramp. Index 0 holds alpha_bar = 1; steps are 1..T.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> beta, alpha, alpha_bar;
};

NoiseSchedule linear_schedule(int steps, double beta_start = 1e-4, double beta_end = 0.02);

// The 1000-step ramp 1e-4..0.02 with both ends multiplied by 1000/steps, so
// shortened schedules still reach alpha_bar_T close to zero. Needs steps > 20.
NoiseSchedule scaled_linear_schedule(int steps);

struct TrainConfig {
    int batch_size = 4;
    double learning_rate = 2e-4;
    double clip_norm = 1.0;  // <= 0 disables clipping
};

template <typename T>
struct TrainState {
    tc::OptimizerState<T> optimizer;
    std::int64_t step = 0;
    Rng rng{0};
    std::vector<double> loss_history;
};

// Adds a leading batch axis to equally shaped tensors.
template <typename T>
tc::Tensor<T> stack(const std::vector<tc::Tensor<T>>& items);

// Tensor of i.i.d. standard normal draws.
template <typename T>
tc::Tensor<T> normal_tensor(const tc::Shape& shape, Rng& rng);

// x_t = (1 - t) x0 + t x1 per batch entry; target velocity x1 - x0.
template <typename T>
struct FlowPathSample {
    std::vector<double> t;
    tc::Tensor<T> x0, x1, xt, velocity;
};

template <typename T>
FlowPathSample<T> flow_path(const tc::Tensor<T>& x0, const tc::Tensor<T>& x1, const std::vector<double>& t);

// x_t = sqrt(abar) x0 + sqrt(1 - abar) eps per batch entry.
template <typename T>
tc::Tensor<T> diffuse(const tc::Tensor<T>& x0, const tc::Tensor<T>& eps, const std::vector<double>& alpha_bar);

// Per-element mean squared error between the model output and the target.
template <typename T>
tc::Var<T> fm_loss(FieldModel<T>& model, const FlowPathSample<T>& path, const tc::Tensor<T>& cond);

template <typename T>
tc::Var<T> ddpm_loss(FieldModel<T>& model, const tc::Tensor<T>& x0, const tc::Tensor<T>& eps,
                     const std::vector<int>& steps, const NoiseSchedule& schedule, const tc::Tensor<T>& cond);

// One optimisation step. Draws t and noise from state.rng, backpropagates,
// clips, applies Adam and appends the loss. Throws NumericalError on a
// non-finite loss.
template <typename T>
double fm_training_step(FieldModel<T>& model, const tc::Tensor<T>& x1, const tc::Tensor<T>& cond,
                        TrainState<T>& state, const TrainConfig& cfg);

template <typename T>
double ddpm_training_step(FieldModel<T>& model, const tc::Tensor<T>& x0, const tc::Tensor<T>& cond,
                          const NoiseSchedule& schedule, TrainState<T>& state, const TrainConfig& cfg);

// Overwrites every labelled voxel of x ([9, ...] or [1, 9, ...]) with
// data_coef * embed(label) + noise_coef * frozen.
template <typename T>
void project_conditioned(tc::Tensor<T>& x, const ConditionVolume& cond, const tc::Tensor<T>& frozen, double data_coef,
                         double noise_coef);

// Flow matching: on-path value at time t in [0, 1]. Diffusion: `t` is the
// integer step, using alpha_bar[t] of `schedule`.
template <typename T>
void hard_condition_project(tc::Tensor<T>& x, double t, const ConditionVolume& cond, const tc::Tensor<T>& frozen,
                            Objective mode, const NoiseSchedule* schedule = nullptr);

struct SampleResult {
    CategoricalVolume volume;
    tc::Tensor<double> state;  // final continuous state [9, X, Y, Z]
};

// Euler integration from N(0, I) at t = 0 to t = 1 with projection after
// every step, then argmax decoding.
template <typename T>
SampleResult sample_ode(FieldModel<T>& model, const ConditionVolume& cond, int steps, std::uint64_t seed);

// DDPM ancestral recursion from x_T to x_0 with projection after every step.
template <typename T>
SampleResult sample_ancestral(FieldModel<T>& model, const ConditionVolume& cond, const NoiseSchedule& schedule,
                              std::uint64_t seed);

// Mean flow-matching loss over cases with noise and times drawn from `seed`;
// no parameter update. Cases are processed in chunks of `batch_size`.
template <typename T>
double fm_validation_loss(FieldModel<T>& model, const std::vector<tc::Tensor<T>>& x1,
                          const std::vector<tc::Tensor<T>>& cond, std::uint64_t seed, int batch_size = 4);

// Mean DDPM noise-prediction loss with steps and noise drawn from `seed`.
template <typename T>
double ddpm_validation_loss(FieldModel<T>& model, const std::vector<tc::Tensor<T>>& x0,
                            const std::vector<tc::Tensor<T>>& cond, const NoiseSchedule& schedule, std::uint64_t seed,
                            int batch_size = 4);

// One pass over the cases in an order shuffled by state.rng. Returns the mean
// step loss.
template <typename T>
double train_epoch(FieldModel<T>& model, Objective objective, const std::vector<tc::Tensor<T>>& x1,
                   const std::vector<tc::Tensor<T>>& cond, TrainState<T>& state, const TrainConfig& cfg,
                   const NoiseSchedule* schedule = nullptr);

}  // namespace geoflow
