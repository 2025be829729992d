#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "priormoe/ops.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace priormoe::ad {

namespace {

struct ConvGeom {
    int64_t batch, cin, cout, H, W, kh, kw, oh, ow;
    int64_t stride, dilation, groups, ph, pw;
    int64_t cin_g, cout_g;
    bool batched;
};

ConvGeom resolve_conv(const Var& x, const Var& w, const Var* bias, const Conv2dOpts& o) {
    if (o.stride <= 0 || o.dilation <= 0) {
        throw std::invalid_argument("conv2d: stride and dilation must be positive (got stride=" +
                                    std::to_string(o.stride) + ", dilation=" + std::to_string(o.dilation) + ")");
    }
    if (o.groups <= 0) throw std::invalid_argument("conv2d: groups must be positive");
    const auto& sx = x.value().shape();
    const auto& sw = w.value().shape();
    if (sw.size() != 4) {
        throw std::invalid_argument("conv2d: kernel must be [Cout,Cin/groups,kh,kw], got " +
                                    w.value().shape_str());
    }
    ConvGeom g{};
    if (sx.size() == 3) {
        g.batched = false;
        g.batch = 1;
        g.cin = sx[0];
        g.H = sx[1];
        g.W = sx[2];
    } else if (sx.size() == 4) {
        g.batched = true;
        g.batch = sx[0];
        g.cin = sx[1];
        g.H = sx[2];
        g.W = sx[3];
    } else {
        throw std::invalid_argument("conv2d: input must be [Cin,H,W] or [N,Cin,H,W], got " +
                                    x.value().shape_str());
    }
    g.cout = sw[0];
    g.kh = sw[2];
    g.kw = sw[3];
    g.stride = o.stride;
    g.dilation = o.dilation;
    g.groups = o.groups;
    if (g.cin % g.groups != 0 || g.cout % g.groups != 0) {
        throw std::invalid_argument("conv2d: channels not divisible by groups (Cin=" +
                                    std::to_string(g.cin) + ", Cout=" + std::to_string(g.cout) +
                                    ", groups=" + std::to_string(g.groups) + ")");
    }
    g.cin_g = g.cin / g.groups;
    g.cout_g = g.cout / g.groups;
    if (sw[1] != g.cin_g) {
        throw std::invalid_argument("conv2d: kernel " + w.value().shape_str() + " expects " +
                                    std::to_string(sw[1] * g.groups) + " input channels with groups=" +
                                    std::to_string(g.groups) + ", input has " + std::to_string(g.cin));
    }
    if (bias && (bias->value().ndim() != 1 || bias->value().dim(0) != g.cout)) {
        throw std::invalid_argument("conv2d: bias shape " + bias->value().shape_str() +
                                    " does not match Cout=" + std::to_string(g.cout));
    }
    const int64_t keff_h = g.dilation * (g.kh - 1) + 1;
    const int64_t keff_w = g.dilation * (g.kw - 1) + 1;
    if (o.padding >= 0) {
        g.ph = o.padding;
        g.pw = o.padding;
    } else {
        g.ph = (keff_h - 1) / 2;
        g.pw = (keff_w - 1) / 2;
    }
    g.oh = (g.H + 2 * g.ph - keff_h) / g.stride + 1;
    g.ow = (g.W + 2 * g.pw - keff_w) / g.stride + 1;
    if (g.oh < 1 || g.ow < 1) {
        throw std::invalid_argument("conv2d: output would be empty for input " + x.value().shape_str() +
                                    " kernel " + w.value().shape_str());
    }
    return g;
}

void conv_forward(const ConvGeom& g, const double* px, const double* pw, const double* pb, double* po) {
    const int64_t in_im = g.cin * g.H * g.W;
    const int64_t out_im = g.cout * g.oh * g.ow;
    for (int64_t n = 0; n < g.batch; ++n) {
        const double* x = px + n * in_im;
        double* y = po + n * out_im;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (out_im * g.cin_g * g.kh * g.kw > 8192)
#endif
        for (int64_t co = 0; co < g.cout; ++co) {
            const int64_t grp = co / g.cout_g;
            const int64_t ci0 = grp * g.cin_g;
            const double* wk = pw + co * g.cin_g * g.kh * g.kw;
            const double b = pb ? pb[co] : 0.0;
            for (int64_t oy = 0; oy < g.oh; ++oy) {
                const int64_t iy0 = oy * g.stride - g.ph;
                for (int64_t ox = 0; ox < g.ow; ++ox) {
                    const int64_t ix0 = ox * g.stride - g.pw;
                    double acc = b;
                    for (int64_t cg = 0; cg < g.cin_g; ++cg) {
                        const double* xc = x + (ci0 + cg) * g.H * g.W;
                        const double* wc = wk + cg * g.kh * g.kw;
                        for (int64_t ky = 0; ky < g.kh; ++ky) {
                            const int64_t iy = iy0 + ky * g.dilation;
                            if (iy < 0 || iy >= g.H) continue;
                            for (int64_t kx = 0; kx < g.kw; ++kx) {
                                const int64_t ix = ix0 + kx * g.dilation;
                                if (ix < 0 || ix >= g.W) continue;
                                acc += xc[iy * g.W + ix] * wc[ky * g.kw + kx];
                            }
                        }
                    }
                    y[co * g.oh * g.ow + oy * g.ow + ox] = acc;
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var* bias, const Conv2dOpts& opts) {
    ConvGeom g = resolve_conv(x, w, bias, opts);
    std::vector<int64_t> out_shape =
        g.batched ? std::vector<int64_t>{g.batch, g.cout, g.oh, g.ow}
                  : std::vector<int64_t>{g.cout, g.oh, g.ow};
    Tensor out(out_shape);
    conv_forward(g, x.value().data(), w.value().data(), bias ? bias->value().data() : nullptr, out.data());
    bool rg = x.requires_grad() || w.requires_grad() || (bias && bias->requires_grad());
    Var y(std::move(out), rg);
    if (rg && Tape::active()) {
        auto xn = x.node();
        auto wn = w.node();
        std::shared_ptr<Node> bn = bias ? bias->node() : nullptr;
        Tape::active()->record([xn, wn, bn, yn = y.node(), g]() {
            if (!yn->grad_alloc) return;
            const double* gy = yn->grad.data();
            const int64_t in_im = g.cin * g.H * g.W;
            const int64_t out_im = g.cout * g.oh * g.ow;
            if (bn && bn->requires_grad) {
                double* gb = bn->ensure_grad().data();
                for (int64_t n = 0; n < g.batch; ++n) {
                    for (int64_t co = 0; co < g.cout; ++co) {
                        const double* row = gy + n * out_im + co * g.oh * g.ow;
                        double acc = 0.0;
                        for (int64_t p = 0; p < g.oh * g.ow; ++p) acc += row[p];
                        gb[co] += acc;
                    }
                }
            }
            if (wn->requires_grad) {
                double* gw = wn->ensure_grad().data();
                const double* px = xn->value.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (out_im * g.cin_g * g.kh * g.kw > 8192)
#endif
                for (int64_t co = 0; co < g.cout; ++co) {
                    const int64_t grp = co / g.cout_g;
                    const int64_t ci0 = grp * g.cin_g;
                    double* gwk = gw + co * g.cin_g * g.kh * g.kw;
                    for (int64_t n = 0; n < g.batch; ++n) {
                        const double* x2 = px + n * in_im;
                        const double* gyc = gy + n * out_im + co * g.oh * g.ow;
                        for (int64_t cg = 0; cg < g.cin_g; ++cg) {
                            const double* xc = x2 + (ci0 + cg) * g.H * g.W;
                            double* gwc = gwk + cg * g.kh * g.kw;
                            for (int64_t ky = 0; ky < g.kh; ++ky) {
                                for (int64_t kx = 0; kx < g.kw; ++kx) {
                                    double acc = 0.0;
                                    for (int64_t oy = 0; oy < g.oh; ++oy) {
                                        const int64_t iy = oy * g.stride - g.ph + ky * g.dilation;
                                        if (iy < 0 || iy >= g.H) continue;
                                        for (int64_t ox = 0; ox < g.ow; ++ox) {
                                            const int64_t ix = ox * g.stride - g.pw + kx * g.dilation;
                                            if (ix < 0 || ix >= g.W) continue;
                                            acc += gyc[oy * g.ow + ox] * xc[iy * g.W + ix];
                                        }
                                    }
                                    gwc[ky * g.kw + kx] += acc;
                                }
                            }
                        }
                    }
                }
            }
            if (xn->requires_grad) {
                double* gx = xn->ensure_grad().data();
                const double* pw = wn->value.data();
                for (int64_t n = 0; n < g.batch; ++n) {
                    double* gx2 = gx + n * in_im;
                    const double* gy2 = gy + n * out_im;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (in_im * g.cout_g * g.kh * g.kw > 8192)
#endif
                    for (int64_t ci = 0; ci < g.cin; ++ci) {
                        const int64_t grp = ci / g.cin_g;
                        const int64_t cg = ci % g.cin_g;
                        const int64_t co0 = grp * g.cout_g;
                        double* gxc = gx2 + ci * g.H * g.W;
                        for (int64_t iy = 0; iy < g.H; ++iy) {
                            for (int64_t ix = 0; ix < g.W; ++ix) {
                                double acc = 0.0;
                                for (int64_t ky = 0; ky < g.kh; ++ky) {
                                    const int64_t oy_num = iy + g.ph - ky * g.dilation;
                                    if (oy_num < 0 || oy_num % g.stride != 0) continue;
                                    const int64_t oy = oy_num / g.stride;
                                    if (oy >= g.oh) continue;
                                    for (int64_t kx = 0; kx < g.kw; ++kx) {
                                        const int64_t ox_num = ix + g.pw - kx * g.dilation;
                                        if (ox_num < 0 || ox_num % g.stride != 0) continue;
                                        const int64_t ox = ox_num / g.stride;
                                        if (ox >= g.ow) continue;
                                        for (int64_t cog = 0; cog < g.cout_g; ++cog) {
                                            const int64_t co = co0 + cog;
                                            acc += gy2[co * g.oh * g.ow + oy * g.ow + ox] *
                                                   pw[(co * g.cin_g + cg) * g.kh * g.kw + ky * g.kw + kx];
                                        }
                                    }
                                }
                                gxc[iy * g.W + ix] += acc;
                            }
                        }
                    }
                }
            }
        });
    }
    return y;
}

Var conv2d(const Var& x, const Var& w, const Var& bias, const Conv2dOpts& opts) {
    return conv2d(x, w, &bias, opts);
}

Var asymmetric_conv(const Var& x, const Var& col_k, const Var& row_k, const Var* bias) {
    const auto& sx = x.value().shape();
    if (sx.size() != 3) {
        throw std::invalid_argument("asymmetric_conv: expected [C,H,W], got " + x.value().shape_str());
    }
    const int64_t C = sx[0];
    const auto& su = col_k.value().shape();
    const auto& sv = row_k.value().shape();
    if (su.size() != 2 || sv.size() != 2 || su[0] != C || sv[0] != C || su[1] != sv[1]) {
        throw std::invalid_argument("asymmetric_conv: 1-d kernels must both be [C,k]");
    }
    const int64_t k = su[1];
    if (k % 2 == 0) {
        throw std::invalid_argument("asymmetric_conv: kernel length must be odd, got " + std::to_string(k));
    }
    Var u4 = reshape(col_k, {C, 1, k, 1});
    Var v4 = reshape(row_k, {C, 1, 1, k});
    Conv2dOpts dw;
    dw.groups = static_cast<int>(C);
    Var mid = conv2d(x, u4, nullptr, dw);
    return conv2d(mid, v4, bias, dw);
}

// --------------------------------------------------------------------------
// Haar analysis / synthesis. Both are orthonormal, so each op's backward is
// the other op's forward kernel applied to the gradient.

namespace {

void haar_analysis(const double* x, double* y, int64_t C, int64_t H, int64_t W) {
    const int64_t h = H / 2, w = W / 2, plane = h * w;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (C * plane > 4096)
#endif
    for (int64_t c = 0; c < C; ++c) {
        const double* xc = x + c * H * W;
        for (int64_t i = 0; i < h; ++i) {
            for (int64_t j = 0; j < w; ++j) {
                const double a = xc[(2 * i) * W + 2 * j];
                const double b = xc[(2 * i) * W + 2 * j + 1];
                const double cc = xc[(2 * i + 1) * W + 2 * j];
                const double d = xc[(2 * i + 1) * W + 2 * j + 1];
                y[(0 * C + c) * plane + i * w + j] = (a + b + cc + d) * 0.5;
                y[(1 * C + c) * plane + i * w + j] = (a - b + cc - d) * 0.5;
                y[(2 * C + c) * plane + i * w + j] = (a + b - cc - d) * 0.5;
                y[(3 * C + c) * plane + i * w + j] = (a - b - cc + d) * 0.5;
            }
        }
    }
}

void haar_synthesis(const double* y, double* x, int64_t C, int64_t h, int64_t w) {
    const int64_t H = 2 * h, W = 2 * w, plane = h * w;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (C * plane > 4096)
#endif
    for (int64_t c = 0; c < C; ++c) {
        double* xc = x + c * H * W;
        for (int64_t i = 0; i < h; ++i) {
            for (int64_t j = 0; j < w; ++j) {
                const double ll = y[(0 * C + c) * plane + i * w + j];
                const double lh = y[(1 * C + c) * plane + i * w + j];
                const double hl = y[(2 * C + c) * plane + i * w + j];
                const double hh = y[(3 * C + c) * plane + i * w + j];
                xc[(2 * i) * W + 2 * j] = (ll + lh + hl + hh) * 0.5;
                xc[(2 * i) * W + 2 * j + 1] = (ll - lh + hl - hh) * 0.5;
                xc[(2 * i + 1) * W + 2 * j] = (ll + lh - hl - hh) * 0.5;
                xc[(2 * i + 1) * W + 2 * j + 1] = (ll - lh - hl + hh) * 0.5;
            }
        }
    }
}

}  // namespace

Var dwt_haar(const Var& x) {
    const auto& s = x.value().shape();
    if (s.size() != 3) throw std::invalid_argument("dwt_haar: expected [C,H,W], got " + x.value().shape_str());
    const int64_t C = s[0], H = s[1], W = s[2];
    if (H % 2 != 0 || W % 2 != 0) {
        throw std::invalid_argument("dwt_haar: spatial extents must be even, got " + x.value().shape_str());
    }
    Tensor out({4 * C, H / 2, W / 2});
    haar_analysis(x.value().data(), out.data(), C, H, W);
    bool rg = x.requires_grad();
    Var y(std::move(out), rg);
    if (rg && Tape::active()) {
        Tape::active()->record([xn = x.node(), yn = y.node(), C, H, W]() {
            if (!yn->grad_alloc) return;
            Tensor gtmp({C, H, W});
            haar_synthesis(yn->grad.data(), gtmp.data(), C, H / 2, W / 2);
            double* gx = xn->ensure_grad().data();
            const double* gt = gtmp.data();
            const int64_t n = gtmp.numel();
            for (int64_t i = 0; i < n; ++i) gx[i] += gt[i];
        });
    }
    return y;
}

Var idwt_haar(const Var& x) {
    const auto& s = x.value().shape();
    if (s.size() != 3 || s[0] % 4 != 0) {
        throw std::invalid_argument("idwt_haar: expected [4C,h,w], got " + x.value().shape_str());
    }
    const int64_t C = s[0] / 4, h = s[1], w = s[2];
    Tensor out({C, 2 * h, 2 * w});
    haar_synthesis(x.value().data(), out.data(), C, h, w);
    bool rg = x.requires_grad();
    Var y(std::move(out), rg);
    if (rg && Tape::active()) {
        Tape::active()->record([xn = x.node(), yn = y.node(), C, h, w]() {
            if (!yn->grad_alloc) return;
            Tensor gtmp({4 * C, h, w});
            haar_analysis(yn->grad.data(), gtmp.data(), C, 2 * h, 2 * w);
            double* gx = xn->ensure_grad().data();
            const double* gt = gtmp.data();
            const int64_t n = gtmp.numel();
            for (int64_t i = 0; i < n; ++i) gx[i] += gt[i];
        });
    }
    return y;
}

Var wavelet_conv(const Var& x, int level, const std::vector<Var>& kernels) {
    const auto& s = x.value().shape();
    if (s.size() != 3) {
        throw std::invalid_argument("wavelet_conv: expected [C,H,W], got " + x.value().shape_str());
    }
    if (level < 1) throw std::invalid_argument("wavelet_conv: level must be >= 1");
    const int64_t C = s[0], H = s[1], W = s[2];
    const int64_t div = int64_t{1} << level;
    if (H % div != 0 || W % div != 0) {
        throw std::invalid_argument("wavelet_conv: extents " + x.value().shape_str() +
                                    " not divisible by 2^" + std::to_string(level));
    }
    if (static_cast<int>(kernels.size()) != level) {
        throw std::invalid_argument("wavelet_conv: need one kernel bank per level");
    }
    for (int d = 0; d < level; ++d) {
        const int64_t want = (d == level - 1) ? 4 * C : 3 * C;
        const auto& sk = kernels[static_cast<size_t>(d)].value().shape();
        if (sk.size() != 4 || sk[0] != want || sk[1] != 1 || sk[2] != 3 || sk[3] != 3) {
            throw std::invalid_argument("wavelet_conv: kernel bank " + std::to_string(d) + " must be [" +
                                        std::to_string(want) + ",1,3,3]");
        }
    }

    // Recursive helper over levels; depthwise conv each produced subband.
    std::function<Var(const Var&, int)> run = [&](const Var& in, int depth) -> Var {
        Var bands = dwt_haar(in);
        const int64_t bc = in.value().dim(0);
        Conv2dOpts dw;
        if (depth == level - 1) {
            dw.groups = static_cast<int>(4 * bc);
            Var conv_all = conv2d(bands, kernels[static_cast<size_t>(depth)], nullptr, dw);
            return idwt_haar(conv_all);
        }
        Var ll = slice(bands, 0, 0, bc);
        Var detail = slice(bands, 0, bc, 3 * bc);
        dw.groups = static_cast<int>(3 * bc);
        Var detail_c = conv2d(detail, kernels[static_cast<size_t>(depth)], nullptr, dw);
        Var ll_c = run(ll, depth + 1);
        return idwt_haar(concat({ll_c, detail_c}, 0));
    };
    return run(x, 0);
}

}  // namespace priormoe::ad
