#pragma once

// Attention-gated 3D U-Net used as the learned vector field (flow matching)
// or noise predictor (DDPM).

#include <cstdint>
#include <string>
#include <vector>

#include "geoflow/ops.hpp"

namespace geoflow {

struct UNetConfig {
    int levels = 3;
    int base_channels = 16;
    int channel_multiplier = 2;
    int gn_groups = 8;
    int gate_channels = 0;  // 0: half the skip width, at least 4
    int in_channels = 19;   // state (9) + condition (9 one-hot + mask)
    int out_channels = 9;
    int time_embed_dim = 32;
    int time_hidden = 64;
    bool attention = true;  // false: identity skips (plain flow-matching backbone)

    friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

// Throws ConfigError on non-positive sizes or an odd time embedding width.
void validate_config(const UNetConfig& cfg);

// Throws ConfigError unless every spatial extent is divisible by 2^(levels-1).
void check_spatial_extent(const UNetConfig& cfg, const tc::Shape& input_shape);

int channels_at(const UNetConfig& cfg, int level);
int gate_channels_for(const UNetConfig& cfg, int skip_channels);

// Sinusoidal features [B, dim] of per-sample times with a geometric
// frequency ladder from 1 to 1000.
template <typename T>
tc::Tensor<T> time_features(const std::vector<double>& t, int dim);

template <typename T>
struct AttentionGateParams {
    tc::Var<T> wx, bx, wg, bg, wpsi, bpsi;
    tc::Var<T> gx_gamma, gx_beta, gg_gamma, gg_beta, gpsi_gamma, gpsi_beta;
    int groups = 1;  // for the F_int-channel normalisations
};

template <typename T>
struct GateResult {
    tc::Var<T> gated;  // x_l scaled by alpha
    tc::Var<T> alpha;  // [B, 1, D, H, W]
};

// alpha = sigmoid(GN(Wpsi * relu(GN(Wx * x_l) + GN(Wg * g)))), gated = x_l * alpha.
// x_l and g must share spatial extent. Throws ShapeError otherwise.
template <typename T>
GateResult<T> attention_gate(const tc::Var<T>& x_l, const tc::Var<T>& g, const AttentionGateParams<T>& p);

// Registers gate parameters under `prefix` with random 1x1x1 projections.
template <typename T>
AttentionGateParams<T> make_gate(tc::ParameterSet<T>& params, const std::string& prefix, int skip_channels,
                                 int gating_channels, int inter_channels, int gn_groups, std::uint64_t seed);

// Interface shared by the network and analytic test stubs.
// x: [B, 9, X, Y, Z], t: one value per sample, cond: [B, 10, X, Y, Z].
template <typename T>
class FieldModel {
public:
    virtual ~FieldModel() = default;
    virtual tc::Var<T> forward(const tc::Var<T>& x, const std::vector<double>& t, const tc::Var<T>& cond) = 0;
    virtual tc::ParameterSet<T>* parameters() { return nullptr; }
};

template <typename T>
class UNet3D final : public FieldModel<T> {
public:
    UNet3D(UNetConfig cfg, std::uint64_t seed);

    tc::Var<T> forward(const tc::Var<T>& x, const std::vector<double>& t, const tc::Var<T>& cond) override;
    tc::ParameterSet<T>* parameters() override { return &params_; }
    const tc::ParameterSet<T>& parameter_set() const { return params_; }

    const UNetConfig& config() const { return cfg_; }
    // Attention maps of the last forward pass, finest level first.
    const std::vector<tc::Tensor<T>>& last_alphas() const { return last_alphas_; }

private:
    struct Block {
        tc::Var<T> w1, b1, g1, be1, wt, bt, w2, b2, g2, be2;
        int groups = 1;
    };
    Block make_block(const std::string& name, int in, int out, std::uint64_t seed);
    tc::Var<T> run_block(const Block& b, const tc::Var<T>& x, const tc::Var<T>& time_hidden);

    UNetConfig cfg_;
    tc::ParameterSet<T> params_;
    tc::Var<T> time_w, time_b;
    std::vector<Block> enc_;                 // levels-1 encoder blocks
    std::vector<tc::Var<T>> down_w_, down_b_;
    Block bottleneck_;
    std::vector<AttentionGateParams<T>> gates_;  // indexed by level
    std::vector<Block> dec_;                     // indexed by level
    tc::Var<T> out_w_, out_b_;
    std::vector<tc::Tensor<T>> last_alphas_;
};

}  // namespace geoflow
