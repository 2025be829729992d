#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "priormoe/ops.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace priormoe::ad {

namespace {

struct SamplePoint {
    int64_t x0, x1, y0, y1;
    double tx, ty;
    double dfx, dfy;  // d(pixel coord)/d(normalized coord); 0 when clamped
};

// Normalized [0,1] -> pixel-center coordinates with border clamping. The
// gradient with respect to the point dies once the raw coordinate leaves the
// valid range, which keeps drifting offsets from collecting gradient noise.
SamplePoint locate(double nx, double ny, int64_t W, int64_t H) {
    SamplePoint p{};
    double fx = nx * static_cast<double>(W) - 0.5;
    double fy = ny * static_cast<double>(H) - 0.5;
    p.dfx = (fx > 0.0 && fx < static_cast<double>(W - 1)) ? static_cast<double>(W) : 0.0;
    p.dfy = (fy > 0.0 && fy < static_cast<double>(H - 1)) ? static_cast<double>(H) : 0.0;
    fx = std::min(std::max(fx, 0.0), static_cast<double>(W - 1));
    fy = std::min(std::max(fy, 0.0), static_cast<double>(H - 1));
    p.x0 = static_cast<int64_t>(std::floor(fx));
    p.y0 = static_cast<int64_t>(std::floor(fy));
    if (p.x0 > W - 1) p.x0 = W - 1;
    if (p.y0 > H - 1) p.y0 = H - 1;
    p.x1 = std::min(p.x0 + 1, W - 1);
    p.y1 = std::min(p.y0 + 1, H - 1);
    p.tx = fx - static_cast<double>(p.x0);
    p.ty = fy - static_cast<double>(p.y0);
    return p;
}

}  // namespace

Var bilinear_sample(const Var& grid, const Var& points) {
    const auto& sg = grid.value().shape();
    const auto& sp = points.value().shape();
    if (sg.size() != 3) {
        throw std::invalid_argument("bilinear_sample: grid must be [C,H,W], got " + grid.value().shape_str());
    }
    if (sp.size() != 2 || sp[1] != 2) {
        throw std::invalid_argument("bilinear_sample: points must be [N,2], got " + points.value().shape_str());
    }
    if (!points.value().all_finite()) {
        throw std::invalid_argument("bilinear_sample: points must be finite");
    }
    const int64_t C = sg[0], H = sg[1], W = sg[2], N = sp[0];
    Tensor out({N, C});
    const double* pg = grid.value().data();
    const double* pp = points.value().data();
    double* po = out.data();
    for (int64_t n = 0; n < N; ++n) {
        SamplePoint p = locate(pp[n * 2 + 0], pp[n * 2 + 1], W, H);
        const double w00 = (1.0 - p.tx) * (1.0 - p.ty);
        const double w01 = p.tx * (1.0 - p.ty);
        const double w10 = (1.0 - p.tx) * p.ty;
        const double w11 = p.tx * p.ty;
        for (int64_t c = 0; c < C; ++c) {
            const double* gc = pg + c * H * W;
            po[n * C + c] = w00 * gc[p.y0 * W + p.x0] + w01 * gc[p.y0 * W + p.x1] +
                            w10 * gc[p.y1 * W + p.x0] + w11 * gc[p.y1 * W + p.x1];
        }
    }
    bool rg = grid.requires_grad() || points.requires_grad();
    Var y(std::move(out), rg);
    if (rg && Tape::active()) {
        Tape::active()->record([gn = grid.node(), pn = points.node(), yn = y.node(), C, H, W, N]() {
            if (!yn->grad_alloc) return;
            const double* gy = yn->grad.data();
            const double* pg2 = gn->value.data();
            const double* pp2 = pn->value.data();
            double* gg = gn->requires_grad ? gn->ensure_grad().data() : nullptr;
            double* gp = pn->requires_grad ? pn->ensure_grad().data() : nullptr;
            for (int64_t n = 0; n < N; ++n) {
                SamplePoint p = locate(pp2[n * 2 + 0], pp2[n * 2 + 1], W, H);
                const double w00 = (1.0 - p.tx) * (1.0 - p.ty);
                const double w01 = p.tx * (1.0 - p.ty);
                const double w10 = (1.0 - p.tx) * p.ty;
                const double w11 = p.tx * p.ty;
                double dtx = 0.0, dty = 0.0;
                for (int64_t c = 0; c < C; ++c) {
                    const double g = gy[n * C + c];
                    const double* gc = pg2 + c * H * W;
                    const double v00 = gc[p.y0 * W + p.x0];
                    const double v01 = gc[p.y0 * W + p.x1];
                    const double v10 = gc[p.y1 * W + p.x0];
                    const double v11 = gc[p.y1 * W + p.x1];
                    if (gg) {
                        double* gcg = gg + c * H * W;
                        gcg[p.y0 * W + p.x0] += g * w00;
                        gcg[p.y0 * W + p.x1] += g * w01;
                        gcg[p.y1 * W + p.x0] += g * w10;
                        gcg[p.y1 * W + p.x1] += g * w11;
                    }
                    if (gp) {
                        dtx += g * ((1.0 - p.ty) * (v01 - v00) + p.ty * (v11 - v10));
                        dty += g * ((1.0 - p.tx) * (v10 - v00) + p.tx * (v11 - v01));
                    }
                }
                if (gp) {
                    gp[n * 2 + 0] += dtx * p.dfx;
                    gp[n * 2 + 1] += dty * p.dfy;
                }
            }
        });
    }
    return y;
}

Var upsample_bilinear(const Var& x, int64_t H, int64_t W) {
    const auto& s = x.value().shape();
    if (s.size() != 3) {
        throw std::invalid_argument("upsample_bilinear: expected [C,h,w], got " + x.value().shape_str());
    }
    if (H < 1 || W < 1) throw std::invalid_argument("upsample_bilinear: target extents must be positive");
    const int64_t C = s[0], h = s[1], w = s[2];
    Tensor out({C, H, W});
    const double* px = x.value().data();
    double* po = out.data();
    const double sy = static_cast<double>(h) / static_cast<double>(H);
    const double sx = static_cast<double>(w) / static_cast<double>(W);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (C * H * W > 8192)
#endif
    for (int64_t c = 0; c < C; ++c) {
        const double* xc = px + c * h * w;
        double* yc = po + c * H * W;
        for (int64_t oy = 0; oy < H; ++oy) {
            double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
            fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
            const int64_t y0 = static_cast<int64_t>(std::floor(fy));
            const int64_t y1 = std::min(y0 + 1, h - 1);
            const double ty = fy - static_cast<double>(y0);
            for (int64_t ox = 0; ox < W; ++ox) {
                double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
                fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
                const int64_t x0 = static_cast<int64_t>(std::floor(fx));
                const int64_t x1 = std::min(x0 + 1, w - 1);
                const double tx = fx - static_cast<double>(x0);
                yc[oy * W + ox] = (1.0 - tx) * (1.0 - ty) * xc[y0 * w + x0] +
                                  tx * (1.0 - ty) * xc[y0 * w + x1] +
                                  (1.0 - tx) * ty * xc[y1 * w + x0] + tx * ty * xc[y1 * w + x1];
            }
        }
    }
    bool rg = x.requires_grad();
    Var y(std::move(out), rg);
    if (rg && Tape::active()) {
        Tape::active()->record([xn = x.node(), yn = y.node(), C, h, w, H, W, sy, sx]() {
            if (!yn->grad_alloc) return;
            const double* gy = yn->grad.data();
            double* gx = xn->ensure_grad().data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (C * H * W > 8192)
#endif
            for (int64_t c = 0; c < C; ++c) {
                const double* gyc = gy + c * H * W;
                double* gxc = gx + c * h * w;
                for (int64_t oy = 0; oy < H; ++oy) {
                    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
                    fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
                    const int64_t y0 = static_cast<int64_t>(std::floor(fy));
                    const int64_t y1 = std::min(y0 + 1, h - 1);
                    const double ty = fy - static_cast<double>(y0);
                    for (int64_t ox = 0; ox < W; ++ox) {
                        double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
                        fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
                        const int64_t x0 = static_cast<int64_t>(std::floor(fx));
                        const int64_t x1 = std::min(x0 + 1, w - 1);
                        const double tx = fx - static_cast<double>(x0);
                        const double g = gyc[oy * W + ox];
                        gxc[y0 * w + x0] += g * (1.0 - tx) * (1.0 - ty);
                        gxc[y0 * w + x1] += g * tx * (1.0 - ty);
                        gxc[y1 * w + x0] += g * (1.0 - tx) * ty;
                        gxc[y1 * w + x1] += g * tx * ty;
                    }
                }
            }
        });
    }
    return y;
}

Var cosine_rows(const Var& q, const Var& v, double eps) {
    const auto& sq = q.value().shape();
    const auto& sv = v.value().shape();
    if (sq.size() != 2 || sv.size() != 3 || sv[0] != sq[0] || sv[2] != sq[1]) {
        throw std::invalid_argument("cosine_rows: want q[N,D], v[N,P,D]; got q" + q.value().shape_str() +
                                    " v" + v.value().shape_str());
    }
    const int64_t N = sq[0], D = sq[1], P = sv[1];
    Tensor out({N, P});
    const double* pq = q.value().data();
    const double* pv = v.value().data();
    double* po = out.data();
    for (int64_t n = 0; n < N; ++n) {
        const double* qr = pq + n * D;
        double nq = 0.0;
        for (int64_t d = 0; d < D; ++d) nq += qr[d] * qr[d];
        nq = std::sqrt(nq);
        for (int64_t p = 0; p < P; ++p) {
            const double* vr = pv + (n * P + p) * D;
            double dot = 0.0, nv = 0.0;
            for (int64_t d = 0; d < D; ++d) {
                dot += qr[d] * vr[d];
                nv += vr[d] * vr[d];
            }
            nv = std::sqrt(nv);
            po[n * P + p] = dot / std::max(nq * nv, eps);
        }
    }
    bool rg = q.requires_grad() || v.requires_grad();
    Var y(std::move(out), rg);
    if (rg && Tape::active()) {
        Tape::active()->record([qn = q.node(), vn = v.node(), yn = y.node(), N, D, P, eps]() {
            if (!yn->grad_alloc) return;
            const double* gy = yn->grad.data();
            const double* pq2 = qn->value.data();
            const double* pv2 = vn->value.data();
            double* gq = qn->requires_grad ? qn->ensure_grad().data() : nullptr;
            double* gv = vn->requires_grad ? vn->ensure_grad().data() : nullptr;
            for (int64_t n = 0; n < N; ++n) {
                const double* qr = pq2 + n * D;
                double nq2 = 0.0;
                for (int64_t d = 0; d < D; ++d) nq2 += qr[d] * qr[d];
                const double nq = std::sqrt(nq2);
                for (int64_t p = 0; p < P; ++p) {
                    const double g = gy[n * P + p];
                    if (g == 0.0) continue;
                    const double* vr = pv2 + (n * P + p) * D;
                    double dot = 0.0, nv2 = 0.0;
                    for (int64_t d = 0; d < D; ++d) {
                        dot += qr[d] * vr[d];
                        nv2 += vr[d] * vr[d];
                    }
                    const double nv = std::sqrt(nv2);
                    const double m = nq * nv;
                    if (m > eps) {
                        const double inv = 1.0 / m;
                        const double c = dot * inv;
                        if (gq) {
                            const double a = g * inv, b = g * c / nq2;
                            for (int64_t d = 0; d < D; ++d) gq[n * D + d] += a * vr[d] - b * qr[d];
                        }
                        if (gv) {
                            const double a = g * inv, b = g * c / nv2;
                            double* gvr = gv + (n * P + p) * D;
                            for (int64_t d = 0; d < D; ++d) gvr[d] += a * qr[d] - b * vr[d];
                        }
                    } else {
                        // Inside the guard the denominator is the constant eps.
                        const double a = g / eps;
                        if (gq) {
                            for (int64_t d = 0; d < D; ++d) gq[n * D + d] += a * vr[d];
                        }
                        if (gv) {
                            double* gvr = gv + (n * P + p) * D;
                            for (int64_t d = 0; d < D; ++d) gvr[d] += a * qr[d];
                        }
                    }
                }
            }
        });
    }
    return y;
}

Var weighted_sample_sum(const Var& a, const Var& s) {
    const auto& sa = a.value().shape();
    const auto& ss = s.value().shape();
    if (sa.size() != 3 || ss.size() != 4 || ss[0] != sa[0] || ss[1] != sa[1] || ss[2] != sa[2]) {
        throw std::invalid_argument("weighted_sample_sum: want a[N,H,T], s[N,H,T,dh]; got a" +
                                    a.value().shape_str() + " s" + s.value().shape_str());
    }
    const int64_t N = sa[0], H = sa[1], T = sa[2], dh = ss[3];
    Tensor out({N, H * dh});
    const double* pa = a.value().data();
    const double* ps = s.value().data();
    double* po = out.data();
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t h = 0; h < H; ++h) {
            double* orow = po + n * H * dh + h * dh;
            for (int64_t t = 0; t < T; ++t) {
                const double av = pa[(n * H + h) * T + t];
                const double* srow = ps + ((n * H + h) * T + t) * dh;
                for (int64_t c = 0; c < dh; ++c) orow[c] += av * srow[c];
            }
        }
    }
    bool rg = a.requires_grad() || s.requires_grad();
    Var y(std::move(out), rg);
    if (rg && Tape::active()) {
        Tape::active()->record([an = a.node(), sn = s.node(), yn = y.node(), N, H, T, dh]() {
            if (!yn->grad_alloc) return;
            const double* gy = yn->grad.data();
            const double* pa2 = an->value.data();
            const double* ps2 = sn->value.data();
            double* ga = an->requires_grad ? an->ensure_grad().data() : nullptr;
            double* gs = sn->requires_grad ? sn->ensure_grad().data() : nullptr;
            for (int64_t n = 0; n < N; ++n) {
                for (int64_t h = 0; h < H; ++h) {
                    const double* gyrow = gy + n * H * dh + h * dh;
                    for (int64_t t = 0; t < T; ++t) {
                        const int64_t at = (n * H + h) * T + t;
                        const double* srow = ps2 + at * dh;
                        if (ga) {
                            double acc = 0.0;
                            for (int64_t c = 0; c < dh; ++c) acc += gyrow[c] * srow[c];
                            ga[at] += acc;
                        }
                        if (gs) {
                            const double av = pa2[at];
                            double* gsrow = gs + at * dh;
                            for (int64_t c = 0; c < dh; ++c) gsrow[c] += av * gyrow[c];
                        }
                    }
                }
            }
        });
    }
    return y;
}

// --------------------------------------------------------------------------
// losses

Var bce_with_logits(const Var& logits, const Tensor& target) {
    if (!logits.value().same_shape(target)) {
        throw std::invalid_argument("bce_with_logits: shape mismatch " + logits.value().shape_str() +
                                    " vs " + target.shape_str());
    }
    const int64_t n = logits.value().numel();
    if (n == 0) throw std::invalid_argument("bce_with_logits: empty input");
    const double* pz = logits.value().data();
    const double* pt = target.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double z = pz[i];
        acc += std::max(z, 0.0) - z * pt[i] + std::log1p(std::exp(-std::fabs(z)));
    }
    const double invn = 1.0 / static_cast<double>(n);
    bool rg = logits.requires_grad();
    Var y(Tensor::scalar(acc * invn), rg);
    if (rg && Tape::active()) {
        Tape::active()->record([zn = logits.node(), yn = y.node(), target, n, invn]() {
            if (!yn->grad_alloc) return;
            const double g = yn->grad[0] * invn;
            const double* pz2 = zn->value.data();
            const double* pt2 = target.data();
            double* gz = zn->ensure_grad().data();
            for (int64_t i = 0; i < n; ++i) {
                const double z = pz2[i];
                const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                gz[i] += g * (sig - pt2[i]);
            }
        });
    }
    return y;
}

Var dice_loss(const Var& logits, const Tensor& target, double eps) {
    if (!logits.value().same_shape(target)) {
        throw std::invalid_argument("dice_loss: shape mismatch " + logits.value().shape_str() + " vs " +
                                    target.shape_str());
    }
    const int64_t n = logits.value().numel();
    if (n == 0) throw std::invalid_argument("dice_loss: empty input");
    const double* pz = logits.value().data();
    const double* pt = target.data();
    Tensor probs({n});
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double z = pz[i];
        const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        probs[i] = p;
        inter += p * pt[i];
        psum += p;
        tsum += pt[i];
    }
    const double denom = psum + tsum + eps;
    const double loss = 1.0 - (2.0 * inter + eps) / denom;
    bool rg = logits.requires_grad();
    Var y(Tensor::scalar(loss), rg);
    if (rg && Tape::active()) {
        const double numer = 2.0 * inter + eps;
        Tape::active()->record(
            [zn = logits.node(), yn = y.node(), target, probs = std::move(probs), n, numer, denom]() {
                if (!yn->grad_alloc) return;
                const double g = yn->grad[0];
                const double* pt2 = target.data();
                const double* pp = probs.data();
                double* gz = zn->ensure_grad().data();
                for (int64_t i = 0; i < n; ++i) {
                    const double p = pp[i];
                    // d loss / d p_i = numer/denom^2 - 2 t_i/denom
                    const double dldp = numer / (denom * denom) - 2.0 * pt2[i] / denom;
                    gz[i] += g * dldp * p * (1.0 - p);
                }
            });
    }
    return y;
}

}  // namespace priormoe::ad
