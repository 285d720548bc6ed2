#include "geoflow/ops.hpp"

#include <Eigen/Core>
#include <cmath>

namespace geoflow::tc {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_rank(const Shape& s, std::size_t r, const char* op) {
    if (s.size() != r)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(s));
}

template <typename T>
Tensor<T>& grad_of(const std::shared_ptr<Node<T>>& n) {
    return n->ensure_grad();
}

// Spatial extent of a [B, C, ...] tensor.
std::int64_t spatial_size(const Shape& s) {
    std::int64_t n = 1;
    for (std::size_t i = 2; i < s.size(); ++i) n *= s[i];
    return n;
}

struct ConvGeom {
    std::int64_t cin, d, h, w;
    std::int64_t k, stride, pad;
    std::int64_t od, oh, ow;
    std::int64_t rows() const { return cin * k * k * k; }
    std::int64_t cols() const { return od * oh * ow; }
    bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
    const std::int64_t P = g.cols();
    for (std::int64_t c = 0; c < g.cin; ++c) {
        const T* xc = x + c * g.d * g.h * g.w;
        for (std::int64_t kd = 0; kd < g.k; ++kd)
            for (std::int64_t kh = 0; kh < g.k; ++kh)
                for (std::int64_t kw = 0; kw < g.k; ++kw) {
                    T* row = cols + (((c * g.k + kd) * g.k + kh) * g.k + kw) * P;
                    for (std::int64_t od = 0; od < g.od; ++od) {
                        const std::int64_t id = od * g.stride + kd - g.pad;
                        T* rd = row + od * g.oh * g.ow;
                        if (id < 0 || id >= g.d) {
                            std::fill(rd, rd + g.oh * g.ow, T(0));
                            continue;
                        }
                        for (std::int64_t oh = 0; oh < g.oh; ++oh) {
                            const std::int64_t ih = oh * g.stride + kh - g.pad;
                            T* rh = rd + oh * g.ow;
                            if (ih < 0 || ih >= g.h) {
                                std::fill(rh, rh + g.ow, T(0));
                                continue;
                            }
                            const T* xr = xc + (id * g.h + ih) * g.w;
                            for (std::int64_t ow = 0; ow < g.ow; ++ow) {
                                const std::int64_t iw = ow * g.stride + kw - g.pad;
                                rh[ow] = (iw >= 0 && iw < g.w) ? xr[iw] : T(0);
                            }
                        }
                    }
                }
    }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* dx) {
    const std::int64_t P = g.cols();
    for (std::int64_t c = 0; c < g.cin; ++c) {
        T* xc = dx + c * g.d * g.h * g.w;
        for (std::int64_t kd = 0; kd < g.k; ++kd)
            for (std::int64_t kh = 0; kh < g.k; ++kh)
                for (std::int64_t kw = 0; kw < g.k; ++kw) {
                    const T* row = cols + (((c * g.k + kd) * g.k + kh) * g.k + kw) * P;
                    for (std::int64_t od = 0; od < g.od; ++od) {
                        const std::int64_t id = od * g.stride + kd - g.pad;
                        if (id < 0 || id >= g.d) continue;
                        for (std::int64_t oh = 0; oh < g.oh; ++oh) {
                            const std::int64_t ih = oh * g.stride + kh - g.pad;
                            if (ih < 0 || ih >= g.h) continue;
                            const T* rr = row + (od * g.oh + oh) * g.ow;
                            T* xr = xc + (id * g.h + ih) * g.w;
                            for (std::int64_t ow = 0; ow < g.ow; ++ow) {
                                const std::int64_t iw = ow * g.stride + kw - g.pad;
                                if (iw >= 0 && iw < g.w) xr[iw] += rr[ow];
                            }
                        }
                    }
                }
    }
}

}  // namespace

int effective_groups(int channels, int requested) {
    if (requested < 1) throw ConfigError("group count must be >= 1");
    return std::min(channels, requested);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> out(a.shape());
    const auto av = a.value().data();
    const auto bv = b.value().data();
    auto ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    return make_result<T>(std::move(out), {a, b}, [pa = a.node(), pb = b.node()](Node<T>& self) {
        for (auto* p : {pa.get(), pb.get()}) {
            if (!p->requires_grad) continue;
            auto g = p->ensure_grad().data();
            const auto s = self.grad.data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += s[i];
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    Tensor<T> out(a.shape());
    const auto av = a.value().data();
    const auto bv = b.value().data();
    auto ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    return make_result<T>(std::move(out), {a, b}, [pa = a.node(), pb = b.node()](Node<T>& self) {
        const auto s = self.grad.data();
        if (pa->requires_grad) {
            auto g = pa->ensure_grad().data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += s[i];
        }
        if (pb->requires_grad) {
            auto g = pb->ensure_grad().data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= s[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
    Tensor<T> out(a.shape());
    const auto av = a.value().data();
    auto ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * factor;
    return make_result<T>(std::move(out), {a}, [pa = a.node(), factor](Node<T>& self) {
        auto g = pa->ensure_grad().data();
        const auto s = self.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s[i] * factor;
    });
}

template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    bool broadcast = false;
    if (sa != sb) {
        Shape expect = sa;
        if (expect.size() >= 2) expect[1] = 1;
        if (sa.size() < 2 || sb != expect)
            throw ShapeError("hadamard: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
        broadcast = true;
    }
    const std::int64_t B = broadcast ? sa[0] : 1;
    const std::int64_t C = broadcast ? sa[1] : 1;
    const std::int64_t S = broadcast ? spatial_size(sa) : a.numel();

    Tensor<T> out(sa);
    const T* av = a.value().data().data();
    const T* bv = b.value().data().data();
    T* ov = out.data().data();
    for (std::int64_t n = 0; n < B; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
            const std::int64_t oa = (n * C + c) * S;
            const std::int64_t ob = broadcast ? n * S : 0;
            for (std::int64_t s = 0; s < S; ++s) ov[oa + s] = av[oa + s] * bv[ob + s];
        }

    return make_result<T>(std::move(out), {a, b},
                          [pa = a.node(), pb = b.node(), B, C, S, broadcast](Node<T>& self) {
                              const T* g = self.grad.data().data();
                              const T* av = pa->value.data().data();
                              const T* bv = pb->value.data().data();
                              T* ga = pa->requires_grad ? pa->ensure_grad().data().data() : nullptr;
                              T* gb = pb->requires_grad ? pb->ensure_grad().data().data() : nullptr;
                              for (std::int64_t n = 0; n < B; ++n)
                                  for (std::int64_t c = 0; c < C; ++c) {
                                      const std::int64_t oa = (n * C + c) * S;
                                      const std::int64_t ob = broadcast ? n * S : 0;
                                      for (std::int64_t s = 0; s < S; ++s) {
                                          if (ga) ga[oa + s] += g[oa + s] * bv[ob + s];
                                          if (gb) gb[ob + s] += g[oa + s] * av[oa + s];
                                      }
                                  }
                          });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out(x.shape());
    const auto xv = x.value().data();
    auto ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
    return make_result<T>(std::move(out), {x}, [px = x.node()](Node<T>& self) {
        auto g = px->ensure_grad().data();
        const auto s = self.grad.data();
        const auto xv = px->value.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > T(0)) g[i] += s[i];
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> out(x.shape());
    const auto xv = x.value().data();
    auto ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = T(1) / (T(1) + std::exp(-xv[i]));
    return make_result<T>(std::move(out), {x}, [px = x.node()](Node<T>& self) {
        auto g = px->ensure_grad().data();
        const auto s = self.grad.data();
        const auto y = self.value.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s[i] * y[i] * (T(1) - y[i]);
    });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sa.size() != sb.size() || sa[0] != sb[0] ||
        !std::equal(sa.begin() + 2, sa.end(), sb.begin() + 2))
        throw ShapeError("concat_channels: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
    const std::int64_t B = sa[0], Ca = sa[1], Cb = sb[1], S = spatial_size(sa);
    Shape so = sa;
    so[1] = Ca + Cb;
    Tensor<T> out(so);
    const T* av = a.value().data().data();
    const T* bv = b.value().data().data();
    T* ov = out.data().data();
    for (std::int64_t n = 0; n < B; ++n) {
        std::copy(av + n * Ca * S, av + (n + 1) * Ca * S, ov + n * (Ca + Cb) * S);
        std::copy(bv + n * Cb * S, bv + (n + 1) * Cb * S, ov + (n * (Ca + Cb) + Ca) * S);
    }
    return make_result<T>(std::move(out), {a, b}, [pa = a.node(), pb = b.node(), B, Ca, Cb, S](Node<T>& self) {
        const T* g = self.grad.data().data();
        for (std::int64_t n = 0; n < B; ++n) {
            if (pa->requires_grad) {
                T* ga = pa->ensure_grad().data().data() + n * Ca * S;
                const T* src = g + n * (Ca + Cb) * S;
                for (std::int64_t i = 0; i < Ca * S; ++i) ga[i] += src[i];
            }
            if (pb->requires_grad) {
                T* gb = pb->ensure_grad().data().data() + n * Cb * S;
                const T* src = g + (n * (Ca + Cb) + Ca) * S;
                for (std::int64_t i = 0; i < Cb * S; ++i) gb[i] += src[i];
            }
        }
    });
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
    const Shape& s = x.shape();
    require_rank(s, 5, "upsample_nearest2");
    const std::int64_t BC = s[0] * s[1], D = s[2], H = s[3], W = s[4];
    Tensor<T> out(Shape{s[0], s[1], 2 * D, 2 * H, 2 * W});
    const T* xv = x.value().data().data();
    T* ov = out.data().data();
    for (std::int64_t c = 0; c < BC; ++c)
        for (std::int64_t d = 0; d < 2 * D; ++d)
            for (std::int64_t h = 0; h < 2 * H; ++h) {
                const T* src = xv + ((c * D + d / 2) * H + h / 2) * W;
                T* dst = ov + ((c * 2 * D + d) * 2 * H + h) * 2 * W;
                for (std::int64_t w = 0; w < 2 * W; ++w) dst[w] = src[w / 2];
            }
    return make_result<T>(std::move(out), {x}, [px = x.node(), BC, D, H, W](Node<T>& self) {
        T* gx = px->ensure_grad().data().data();
        const T* g = self.grad.data().data();
        for (std::int64_t c = 0; c < BC; ++c)
            for (std::int64_t d = 0; d < 2 * D; ++d)
                for (std::int64_t h = 0; h < 2 * H; ++h) {
                    T* dst = gx + ((c * D + d / 2) * H + h / 2) * W;
                    const T* src = g + ((c * 2 * D + d) * 2 * H + h) * 2 * W;
                    for (std::int64_t w = 0; w < 2 * W; ++w) dst[w / 2] += src[w];
                }
    });
}

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int padding) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    require_rank(xs, 5, "conv3d input");
    require_rank(ws, 5, "conv3d weight");
    if (ws[2] != ws[3] || ws[2] != ws[4]) throw ShapeError("conv3d: kernel must be cubic, got " + shape_str(ws));
    if (ws[2] % 2 == 0) throw ShapeError("conv3d: kernel extent must be odd");
    if (stride < 1 || padding < 0) throw ShapeError("conv3d: stride must be >= 1 and padding >= 0");
    if (xs[1] != ws[1])
        throw ShapeError("conv3d: input has " + std::to_string(xs[1]) + " channels, weight expects " +
                         std::to_string(ws[1]));
    if (bias.shape() != Shape{ws[0]}) throw ShapeError("conv3d: bias shape " + shape_str(bias.shape()));

    ConvGeom g{xs[1], xs[2], xs[3], xs[4], ws[2], stride, padding, 0, 0, 0};
    auto out_extent = [&](std::int64_t n) {
        const std::int64_t span = n + 2 * padding - g.k;
        if (span < 0) throw ShapeError("conv3d: kernel larger than padded input");
        return span / stride + 1;
    };
    g.od = out_extent(g.d);
    g.oh = out_extent(g.h);
    g.ow = out_extent(g.w);

    const std::int64_t B = xs[0], Cout = ws[0], K = g.rows(), P = g.cols();
    const std::int64_t in_stride = g.cin * g.d * g.h * g.w;
    Tensor<T> out(Shape{B, Cout, g.od, g.oh, g.ow});
    CMapMat<T> W(weight.value().data().data(), Cout, K);
    const T* bv = bias.value().data().data();
    AlignedVector<T> cols(g.pointwise() ? 0 : static_cast<std::size_t>(K * P));
    for (std::int64_t n = 0; n < B; ++n) {
        const T* xn = x.value().data().data() + n * in_stride;
        const T* colp = xn;
        if (!g.pointwise()) {
            im2col(xn, g, cols.data());
            colp = cols.data();
        }
        MapMat<T> O(out.data().data() + n * Cout * P, Cout, P);
        O.noalias() = W * CMapMat<T>(colp, K, P);
        for (std::int64_t c = 0; c < Cout; ++c) O.row(c).array() += bv[c];
    }

    return make_result<T>(
        std::move(out), {x, weight, bias},
        [px = x.node(), pw = weight.node(), pb = bias.node(), g, B, Cout, K, P, in_stride](Node<T>& self) {
            CMapMat<T> W(pw->value.data().data(), Cout, K);
            AlignedVector<T> cols(g.pointwise() ? 0 : static_cast<std::size_t>(K * P));
            AlignedVector<T> dcols(static_cast<std::size_t>(K * P));
            for (std::int64_t n = 0; n < B; ++n) {
                CMapMat<T> G(self.grad.data().data() + n * Cout * P, Cout, P);
                if (pb->requires_grad) {
                    T* gb = pb->ensure_grad().data().data();
                    for (std::int64_t c = 0; c < Cout; ++c) gb[c] += G.row(c).sum();
                }
                if (pw->requires_grad) {
                    const T* xn = px->value.data().data() + n * in_stride;
                    const T* colp = xn;
                    if (!g.pointwise()) {
                        im2col(xn, g, cols.data());
                        colp = cols.data();
                    }
                    MapMat<T> GW(pw->ensure_grad().data().data(), Cout, K);
                    GW.noalias() += G * CMapMat<T>(colp, K, P).transpose();
                }
                if (px->requires_grad) {
                    T* gx = px->ensure_grad().data().data() + n * in_stride;
                    if (g.pointwise()) {
                        MapMat<T> GX(gx, K, P);
                        GX.noalias() += W.transpose() * G;
                    } else {
                        MapMat<T> DC(dcols.data(), K, P);
                        DC.noalias() = W.transpose() * G;
                        col2im_add(dcols.data(), g, gx);
                    }
                }
            }
        });
}

template <typename T>
Var<T> downsample_stride2(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    if (weight.shape().size() != 5 || weight.shape()[2] != 3)
        throw ShapeError("downsample_stride2 expects a 3x3x3 kernel");
    return conv3d(x, weight, bias, 2, 1);
}

template <typename T>
Var<T> group_norm(const Var<T>& x, int groups, const Var<T>& gamma, const Var<T>& beta, T eps) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("group_norm: expected [B, C, ...], got " + shape_str(s));
    const std::int64_t B = s[0], C = s[1], S = spatial_size(s);
    if (groups < 1 || C % groups != 0)
        throw ConfigError("group_norm: " + std::to_string(C) + " channels not divisible into " +
                          std::to_string(groups) + " groups");
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
        throw ShapeError("group_norm: affine parameters must have shape [" + std::to_string(C) + "]");
    const std::int64_t cpg = C / groups;
    const std::int64_t gsize = cpg * S;

    Tensor<T> out(s);
    auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B * groups));
    const T* xv = x.value().data().data();
    const T* gv = gamma.value().data().data();
    const T* bv = beta.value().data().data();
    T* ov = out.data().data();
    for (std::int64_t n = 0; n < B; ++n)
        for (std::int64_t grp = 0; grp < groups; ++grp) {
            const std::int64_t off = (n * C + grp * cpg) * S;
            double mean = 0.0;
            for (std::int64_t i = 0; i < gsize; ++i) mean += xv[off + i];
            mean /= static_cast<double>(gsize);
            double var = 0.0;
            for (std::int64_t i = 0; i < gsize; ++i) {
                const double d = xv[off + i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(gsize);
            const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
            (*inv_std)[static_cast<std::size_t>(n * groups + grp)] = static_cast<T>(is);
            for (std::int64_t c = 0; c < cpg; ++c) {
                const std::int64_t ch = grp * cpg + c;
                for (std::int64_t i = 0; i < S; ++i) {
                    const std::int64_t idx = off + c * S + i;
                    const T xh = static_cast<T>((xv[idx] - mean) * is);
                    (*xhat)[static_cast<std::size_t>(idx)] = xh;
                    ov[idx] = gv[ch] * xh + bv[ch];
                }
            }
        }

    return make_result<T>(
        std::move(out), {x, gamma, beta},
        [px = x.node(), pg = gamma.node(), pbeta = beta.node(), xhat, inv_std, B, C, S, groups, cpg,
         gsize](Node<T>& self) {
            const T* g = self.grad.data().data();
            const T* gv = pg->value.data().data();
            const T* xh = xhat->data();
            if (pg->requires_grad || pbeta->requires_grad) {
                T* gg = pg->requires_grad ? pg->ensure_grad().data().data() : nullptr;
                T* gb = pbeta->requires_grad ? pbeta->ensure_grad().data().data() : nullptr;
                for (std::int64_t n = 0; n < B; ++n)
                    for (std::int64_t c = 0; c < C; ++c) {
                        double sg = 0.0, sb = 0.0;
                        const std::int64_t off = (n * C + c) * S;
                        for (std::int64_t i = 0; i < S; ++i) {
                            sg += static_cast<double>(g[off + i]) * xh[off + i];
                            sb += g[off + i];
                        }
                        if (gg) gg[c] += static_cast<T>(sg);
                        if (gb) gb[c] += static_cast<T>(sb);
                    }
            }
            if (!px->requires_grad) return;
            T* gx = px->ensure_grad().data().data();
            for (std::int64_t n = 0; n < B; ++n)
                for (std::int64_t grp = 0; grp < groups; ++grp) {
                    const std::int64_t off = (n * C + grp * cpg) * S;
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::int64_t c = 0; c < cpg; ++c) {
                        const T gam = gv[grp * cpg + c];
                        for (std::int64_t i = 0; i < S; ++i) {
                            const std::int64_t idx = off + c * S + i;
                            const double d = static_cast<double>(g[idx]) * gam;
                            mean_d += d;
                            mean_dx += d * xh[idx];
                        }
                    }
                    mean_d /= static_cast<double>(gsize);
                    mean_dx /= static_cast<double>(gsize);
                    const double is = (*inv_std)[static_cast<std::size_t>(n * groups + grp)];
                    for (std::int64_t c = 0; c < cpg; ++c) {
                        const T gam = gv[grp * cpg + c];
                        for (std::int64_t i = 0; i < S; ++i) {
                            const std::int64_t idx = off + c * S + i;
                            const double d = static_cast<double>(g[idx]) * gam;
                            gx[idx] += static_cast<T>(is * (d - mean_d - xh[idx] * mean_dx));
                        }
                    }
                }
        });
}

template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias) {
    const Shape& s = x.shape();
    if (s.size() < 2 || bias.shape() != Shape{s[0], s[1]})
        throw ShapeError("add_channel_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(s));
    const std::int64_t BC = s[0] * s[1], S = spatial_size(s);
    Tensor<T> out(s);
    const T* xv = x.value().data().data();
    const T* bv = bias.value().data().data();
    T* ov = out.data().data();
    for (std::int64_t c = 0; c < BC; ++c)
        for (std::int64_t i = 0; i < S; ++i) ov[c * S + i] = xv[c * S + i] + bv[c];
    return make_result<T>(std::move(out), {x, bias}, [px = x.node(), pb = bias.node(), BC, S](Node<T>& self) {
        const T* g = self.grad.data().data();
        if (px->requires_grad) {
            T* gx = px->ensure_grad().data().data();
            for (std::int64_t i = 0; i < BC * S; ++i) gx[i] += g[i];
        }
        if (pb->requires_grad) {
            T* gb = pb->ensure_grad().data().data();
            for (std::int64_t c = 0; c < BC; ++c) {
                double acc = 0.0;
                for (std::int64_t i = 0; i < S; ++i) acc += g[c * S + i];
                gb[c] += static_cast<T>(acc);
            }
        }
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    require_rank(x.shape(), 2, "linear input");
    require_rank(weight.shape(), 2, "linear weight");
    const std::int64_t B = x.shape()[0], In = x.shape()[1], Out = weight.shape()[0];
    if (weight.shape()[1] != In) throw ShapeError("linear: weight " + shape_str(weight.shape()) + " vs input " +
                                                  shape_str(x.shape()));
    if (bias.shape() != Shape{Out}) throw ShapeError("linear: bias shape " + shape_str(bias.shape()));
    Tensor<T> out(Shape{B, Out});
    CMapMat<T> X(x.value().data().data(), B, In);
    CMapMat<T> W(weight.value().data().data(), Out, In);
    MapMat<T> O(out.data().data(), B, Out);
    O.noalias() = X * W.transpose();
    const T* bv = bias.value().data().data();
    for (std::int64_t n = 0; n < B; ++n)
        for (std::int64_t o = 0; o < Out; ++o) O(n, o) += bv[o];
    return make_result<T>(std::move(out), {x, weight, bias},
                          [px = x.node(), pw = weight.node(), pb = bias.node(), B, In, Out](Node<T>& self) {
                              CMapMat<T> G(self.grad.data().data(), B, Out);
                              if (px->requires_grad) {
                                  MapMat<T> GX(px->ensure_grad().data().data(), B, In);
                                  GX.noalias() += G * CMapMat<T>(pw->value.data().data(), Out, In);
                              }
                              if (pw->requires_grad) {
                                  MapMat<T> GW(pw->ensure_grad().data().data(), Out, In);
                                  GW.noalias() += G.transpose() * CMapMat<T>(px->value.data().data(), B, In);
                              }
                              if (pb->requires_grad) {
                                  T* gb = pb->ensure_grad().data().data();
                                  for (std::int64_t o = 0; o < Out; ++o) gb[o] += G.col(o).sum();
                              }
                          });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    double acc = 0.0;
    for (T v : x.value().data()) acc += v;
    Tensor<T> out(Shape{}, std::vector<T>{static_cast<T>(acc)});
    return make_result<T>(std::move(out), {x}, [px = x.node()](Node<T>& self) {
        const T s = self.grad[0];
        for (T& g : px->ensure_grad().data()) g += s;
    });
}

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target) {
    require_same_shape(pred.shape(), target.shape(), "mse_loss");
    const auto p = pred.value().data();
    const auto t = target.value().data();
    const double n = static_cast<double>(p.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
        acc += d * d;
    }
    Tensor<T> out(Shape{}, std::vector<T>{static_cast<T>(n > 0 ? acc / n : 0.0)});
    return make_result<T>(std::move(out), {pred, target}, [pp = pred.node(), pt = target.node(), n](Node<T>& self) {
        const T s = self.grad[0];
        const auto p = pp->value.data();
        const auto t = pt->value.data();
        const T k = static_cast<T>(2.0 / n) * s;
        if (pp->requires_grad) {
            auto g = pp->ensure_grad().data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (p[i] - t[i]);
        }
        if (pt->requires_grad) {
            auto g = pt->ensure_grad().data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= k * (p[i] - t[i]);
        }
    });
}

#define GEOFLOW_INSTANTIATE_OPS(T)                                                      \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                               \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                               \
    template Var<T> scale<T>(const Var<T>&, T);                                         \
    template Var<T> hadamard<T>(const Var<T>&, const Var<T>&);                          \
    template Var<T> relu<T>(const Var<T>&);                                             \
    template Var<T> sigmoid<T>(const Var<T>&);                                          \
    template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                   \
    template Var<T> upsample_nearest2<T>(const Var<T>&);                                \
    template Var<T> conv3d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);   \
    template Var<T> downsample_stride2<T>(const Var<T>&, const Var<T>&, const Var<T>&); \
    template Var<T> group_norm<T>(const Var<T>&, int, const Var<T>&, const Var<T>&, T); \
    template Var<T> add_channel_bias<T>(const Var<T>&, const Var<T>&);                  \
    template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);             \
    template Var<T> sum<T>(const Var<T>&);                                              \
    template Var<T> mse_loss<T>(const Var<T>&, const Var<T>&);

GEOFLOW_INSTANTIATE_OPS(float)
GEOFLOW_INSTANTIATE_OPS(double)

}  // namespace geoflow::tc
