#include "geoflow/netmodel.hpp"

#include <cmath>

#include "geoflow/rng.hpp"

namespace geoflow {

using tc::Shape;
using tc::Tensor;
using tc::Var;

void validate_config(const UNetConfig& c) {
    if (c.levels < 1) throw ConfigError("levels must be >= 1");
    if (c.base_channels < 1 || c.channel_multiplier < 1) throw ConfigError("channel widths must be positive");
    if (c.gn_groups < 1) throw ConfigError("gn_groups must be >= 1");
    if (c.gate_channels < 0) throw ConfigError("gate_channels must be >= 0");
    if (c.in_channels < 1 || c.out_channels < 1) throw ConfigError("channel counts must be positive");
    if (c.time_embed_dim < 2 || c.time_embed_dim % 2) throw ConfigError("time_embed_dim must be even and >= 2");
    if (c.time_hidden < 1) throw ConfigError("time_hidden must be positive");
    for (int l = 0; l < c.levels; ++l) {
        const int ch = channels_at(c, l);
        if (ch % tc::effective_groups(ch, c.gn_groups))
            throw ConfigError("level " + std::to_string(l) + " width " + std::to_string(ch) +
                              " is not divisible by the group count");
    }
}

void check_spatial_extent(const UNetConfig& cfg, const Shape& s) {
    if (s.size() != 5) throw ShapeError("network input must be [B, C, X, Y, Z], got " + tc::shape_str(s));
    const std::int64_t f = std::int64_t{1} << (cfg.levels - 1);
    for (std::size_t i = 2; i < 5; ++i)
        if (s[i] % f != 0 || s[i] < f)
            throw ConfigError("spatial extent " + tc::shape_str(s) + " not divisible by " + std::to_string(f));
}

int channels_at(const UNetConfig& cfg, int level) {
    int c = cfg.base_channels;
    for (int i = 0; i < level; ++i) c *= cfg.channel_multiplier;
    return c;
}

int gate_channels_for(const UNetConfig& cfg, int skip_channels) {
    if (cfg.gate_channels > 0) return cfg.gate_channels;
    return std::max(4, skip_channels / 2);
}

template <typename T>
Tensor<T> time_features(const std::vector<double>& t, int dim) {
    const int half = dim / 2;
    Tensor<T> out({static_cast<std::int64_t>(t.size()), dim});
    for (std::size_t b = 0; b < t.size(); ++b) {
        if (!std::isfinite(t[b])) throw NumericalError("non-finite time value");
        for (int i = 0; i < half; ++i) {
            const double freq = half > 1 ? std::pow(1000.0, static_cast<double>(i) / (half - 1)) : 1.0;
            out[static_cast<std::int64_t>(b) * dim + i] = static_cast<T>(std::sin(t[b] * freq));
            out[static_cast<std::int64_t>(b) * dim + half + i] = static_cast<T>(std::cos(t[b] * freq));
        }
    }
    return out;
}

namespace {

template <typename T>
Tensor<T> uniform_init(const Shape& shape, double bound, Rng& rng) {
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

// He-uniform for ReLU networks.
double conv_bound(int in, int k) { return std::sqrt(6.0 / (static_cast<double>(in) * k * k * k)); }

template <typename T>
Var<T>& conv_weight(tc::ParameterSet<T>& p, const std::string& name, int out, int in, int k, Rng& rng) {
    return p.add(name, uniform_init<T>({out, in, k, k, k}, conv_bound(in, k), rng));
}

template <typename T>
Var<T>& zeros(tc::ParameterSet<T>& p, const std::string& name, std::int64_t n) {
    return p.add(name, Tensor<T>({n}, T(0)));
}

template <typename T>
Var<T>& ones(tc::ParameterSet<T>& p, const std::string& name, std::int64_t n) {
    return p.add(name, Tensor<T>({n}, T(1)));
}

}  // namespace

template <typename T>
GateResult<T> attention_gate(const Var<T>& x_l, const Var<T>& g, const AttentionGateParams<T>& p) {
    const auto& sx = x_l.shape();
    const auto& sg = g.shape();
    if (sx.size() != 5 || sg.size() != 5 || sx[0] != sg[0] || sx[2] != sg[2] || sx[3] != sg[3] || sx[4] != sg[4])
        throw ShapeError("attention_gate: skip " + tc::shape_str(sx) + " and gate " + tc::shape_str(sg) +
                         " differ in batch or spatial extent");
    auto qx = tc::group_norm(tc::conv3d(x_l, p.wx, p.bx, 1, 0), p.groups, p.gx_gamma, p.gx_beta);
    auto qg = tc::group_norm(tc::conv3d(g, p.wg, p.bg, 1, 0), p.groups, p.gg_gamma, p.gg_beta);
    auto q = tc::relu(tc::add(qx, qg));
    auto alpha = tc::sigmoid(tc::group_norm(tc::conv3d(q, p.wpsi, p.bpsi, 1, 0), 1, p.gpsi_gamma, p.gpsi_beta));
    return {tc::hadamard(x_l, alpha), alpha};
}

template <typename T>
AttentionGateParams<T> make_gate(tc::ParameterSet<T>& params, const std::string& prefix, int skip_channels,
                                 int gating_channels, int inter_channels, int gn_groups, std::uint64_t seed) {
    if (inter_channels < 1) throw ConfigError("gate intermediate width must be >= 1");
    Rng rng(seed);
    AttentionGateParams<T> p;
    p.groups = tc::effective_groups(inter_channels, gn_groups);
    if (inter_channels % p.groups) throw ConfigError("gate width not divisible by the group count");
    p.wx = conv_weight(params, prefix + ".wx", inter_channels, skip_channels, 1, rng);
    p.bx = zeros(params, prefix + ".bx", inter_channels);
    p.wg = conv_weight(params, prefix + ".wg", inter_channels, gating_channels, 1, rng);
    p.bg = zeros(params, prefix + ".bg", inter_channels);
    p.wpsi = conv_weight(params, prefix + ".wpsi", 1, inter_channels, 1, rng);
    p.bpsi = zeros(params, prefix + ".bpsi", 1);
    p.gx_gamma = ones(params, prefix + ".gn_x.gamma", inter_channels);
    p.gx_beta = zeros(params, prefix + ".gn_x.beta", inter_channels);
    p.gg_gamma = ones(params, prefix + ".gn_g.gamma", inter_channels);
    p.gg_beta = zeros(params, prefix + ".gn_g.beta", inter_channels);
    p.gpsi_gamma = ones(params, prefix + ".gn_psi.gamma", 1);
    p.gpsi_beta = zeros(params, prefix + ".gn_psi.beta", 1);
    return p;
}

template <typename T>
UNet3D<T>::UNet3D(UNetConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    validate_config(cfg_);
    const int L = cfg_.levels;
    Rng rng(Rng::mix(seed, 0));
    time_w = params_.add("time.w", uniform_init<T>({cfg_.time_hidden, cfg_.time_embed_dim},
                                                   1.0 / std::sqrt(static_cast<double>(cfg_.time_embed_dim)), rng));
    time_b = zeros(params_, "time.b", cfg_.time_hidden);

    int in = cfg_.in_channels;
    for (int l = 0; l + 1 < L; ++l) {
        const int c = channels_at(cfg_, l);
        enc_.push_back(make_block("enc" + std::to_string(l), in, c, Rng::mix(seed, 10 + l)));
        Rng r(Rng::mix(seed, 100 + l));
        down_w_.push_back(conv_weight(params_, "down" + std::to_string(l) + ".w", c, c, 3, r));
        down_b_.push_back(zeros(params_, "down" + std::to_string(l) + ".b", c));
        in = c;
    }
    bottleneck_ = make_block("mid", in, channels_at(cfg_, L - 1), Rng::mix(seed, 200));

    gates_.resize(static_cast<std::size_t>(std::max(L - 1, 0)));
    dec_.resize(static_cast<std::size_t>(std::max(L - 1, 0)));
    for (int l = L - 2; l >= 0; --l) {
        const int skip = channels_at(cfg_, l), coarse = channels_at(cfg_, l + 1);
        if (cfg_.attention)
            gates_[static_cast<std::size_t>(l)] =
                make_gate(params_, "gate" + std::to_string(l), skip, coarse, gate_channels_for(cfg_, skip),
                          cfg_.gn_groups, Rng::mix(seed, 300 + l));
        dec_[static_cast<std::size_t>(l)] =
            make_block("dec" + std::to_string(l), coarse + skip, skip, Rng::mix(seed, 400 + l));
    }
    Rng r(Rng::mix(seed, 500));
    out_w_ = conv_weight(params_, "out.w", cfg_.out_channels, channels_at(cfg_, 0), 1, r);
    out_b_ = zeros(params_, "out.b", cfg_.out_channels);
}

template <typename T>
typename UNet3D<T>::Block UNet3D<T>::make_block(const std::string& name, int in, int out, std::uint64_t seed) {
    Rng rng(seed);
    Block b;
    b.groups = tc::effective_groups(out, cfg_.gn_groups);
    b.w1 = conv_weight(params_, name + ".conv1.w", out, in, 3, rng);
    b.b1 = zeros(params_, name + ".conv1.b", out);
    b.g1 = ones(params_, name + ".gn1.gamma", out);
    b.be1 = zeros(params_, name + ".gn1.beta", out);
    b.wt = params_.add(name + ".time.w",
                       uniform_init<T>({out, cfg_.time_hidden}, 1.0 / std::sqrt(static_cast<double>(cfg_.time_hidden)),
                                       rng));
    b.bt = zeros(params_, name + ".time.b", out);
    b.w2 = conv_weight(params_, name + ".conv2.w", out, out, 3, rng);
    b.b2 = zeros(params_, name + ".conv2.b", out);
    b.g2 = ones(params_, name + ".gn2.gamma", out);
    b.be2 = zeros(params_, name + ".gn2.beta", out);
    return b;
}

template <typename T>
Var<T> UNet3D<T>::run_block(const Block& b, const Var<T>& x, const Var<T>& th) {
    auto h = tc::group_norm(tc::conv3d(x, b.w1, b.b1, 1, 1), b.groups, b.g1, b.be1);
    h = tc::relu(tc::add_channel_bias(h, tc::linear(th, b.wt, b.bt)));
    h = tc::group_norm(tc::conv3d(h, b.w2, b.b2, 1, 1), b.groups, b.g2, b.be2);
    return tc::relu(h);
}

template <typename T>
Var<T> UNet3D<T>::forward(const Var<T>& x, const std::vector<double>& t, const Var<T>& cond) {
    auto in = tc::concat_channels(x, cond);
    check_spatial_extent(cfg_, in.shape());
    if (in.shape()[1] != cfg_.in_channels)
        throw ShapeError("network expects " + std::to_string(cfg_.in_channels) + " input channels, got " +
                         std::to_string(in.shape()[1]));
    if (static_cast<std::int64_t>(t.size()) != in.shape()[0])
        throw ShapeError("need one time value per batch entry");

    auto th = tc::relu(tc::linear(tc::constant(time_features<T>(t, cfg_.time_embed_dim)), time_w, time_b));
    const int L = cfg_.levels;
    std::vector<Var<T>> skips;
    Var<T> h = in;
    for (int l = 0; l + 1 < L; ++l) {
        h = run_block(enc_[static_cast<std::size_t>(l)], h, th);
        skips.push_back(h);
        h = tc::downsample_stride2(h, down_w_[static_cast<std::size_t>(l)], down_b_[static_cast<std::size_t>(l)]);
    }
    h = run_block(bottleneck_, h, th);

    last_alphas_.assign(skips.size(), Tensor<T>());
    for (int l = L - 2; l >= 0; --l) {
        auto up = tc::upsample_nearest2(h);
        Var<T> skip = skips[static_cast<std::size_t>(l)];
        if (cfg_.attention) {
            auto gr = attention_gate(skip, up, gates_[static_cast<std::size_t>(l)]);
            last_alphas_[static_cast<std::size_t>(l)] = gr.alpha.value();
            skip = gr.gated;
        }
        h = run_block(dec_[static_cast<std::size_t>(l)], tc::concat_channels(up, skip), th);
    }
    return tc::conv3d(h, out_w_, out_b_, 1, 0);
}

#define GEOFLOW_INSTANTIATE_NET(T)                                                                          \
    template Tensor<T> time_features<T>(const std::vector<double>&, int);                                  \
    template GateResult<T> attention_gate<T>(const Var<T>&, const Var<T>&, const AttentionGateParams<T>&); \
    template AttentionGateParams<T> make_gate<T>(tc::ParameterSet<T>&, const std::string&, int, int, int, int, \
                                                 std::uint64_t);                                           \
    template class UNet3D<T>;

GEOFLOW_INSTANTIATE_NET(float)
GEOFLOW_INSTANTIATE_NET(double)

}  // namespace geoflow
