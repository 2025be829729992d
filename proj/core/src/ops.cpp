#include "priormoe/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace priormoe::ad {

namespace {

constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

[[noreturn]] void fail(const std::string& op, const std::string& msg) {
    throw std::invalid_argument(op + ": " + msg);
}

void check_same_shape(const std::string& op, const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) {
        fail(op, "shape mismatch " + a.value().shape_str() + " vs " + b.value().shape_str());
    }
}

bool want_grad(const Var& a) { return a.requires_grad(); }

Var make_output(Tensor value, bool requires_grad) { return Var(std::move(value), requires_grad); }

// Records `step` if a tape is active and the output participates in autodiff.
template <typename F>
void maybe_record(bool requires_grad, F&& step) {
    if (requires_grad) {
        if (Tape* t = Tape::active()) t->record(std::forward<F>(step));
    }
}

int64_t prod(const std::vector<int64_t>& v, size_t lo, size_t hi) {
    int64_t p = 1;
    for (size_t i = lo; i < hi; ++i) p *= v[i];
    return p;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

// --------------------------------------------------------------------------
// elementwise & reductions

Var add(const Var& a, const Var& b) {
    check_same_shape("add", a, b);
    const int64_t n = a.value().numel();
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    bool rg = want_grad(a) || want_grad(b);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [an = a.node(), bn = b.node(), yn = y.node(), n]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        if (an->requires_grad) {
            double* ga = an->ensure_grad().data();
            for (int64_t i = 0; i < n; ++i) ga[i] += gy[i];
        }
        if (bn->requires_grad) {
            double* gb = bn->ensure_grad().data();
            for (int64_t i = 0; i < n; ++i) gb[i] += gy[i];
        }
    });
    return y;
}

Var sub(const Var& a, const Var& b) {
    check_same_shape("sub", a, b);
    const int64_t n = a.value().numel();
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    bool rg = want_grad(a) || want_grad(b);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [an = a.node(), bn = b.node(), yn = y.node(), n]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        if (an->requires_grad) {
            double* ga = an->ensure_grad().data();
            for (int64_t i = 0; i < n; ++i) ga[i] += gy[i];
        }
        if (bn->requires_grad) {
            double* gb = bn->ensure_grad().data();
            for (int64_t i = 0; i < n; ++i) gb[i] -= gy[i];
        }
    });
    return y;
}

Var mul(const Var& a, const Var& b) {
    check_same_shape("mul", a, b);
    const int64_t n = a.value().numel();
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    bool rg = want_grad(a) || want_grad(b);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [an = a.node(), bn = b.node(), yn = y.node(), n]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        if (an->requires_grad) {
            double* ga = an->ensure_grad().data();
            const double* pb2 = bn->value.data();
            for (int64_t i = 0; i < n; ++i) ga[i] += gy[i] * pb2[i];
        }
        if (bn->requires_grad) {
            double* gb = bn->ensure_grad().data();
            const double* pa2 = an->value.data();
            for (int64_t i = 0; i < n; ++i) gb[i] += gy[i] * pa2[i];
        }
    });
    return y;
}

Var scale(const Var& a, double s) {
    const int64_t n = a.value().numel();
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
    bool rg = want_grad(a);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [an = a.node(), yn = y.node(), n, s]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        double* ga = an->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) ga[i] += gy[i] * s;
    });
    return y;
}

Var add_scalar(const Var& a, double s) {
    const int64_t n = a.value().numel();
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + s;
    bool rg = want_grad(a);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [an = a.node(), yn = y.node(), n]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        double* ga = an->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) ga[i] += gy[i];
    });
    return y;
}

Var sum(const Var& a) {
    const int64_t n = a.value().numel();
    const double* pa = a.value().data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += pa[i];
    bool rg = want_grad(a);
    Var y = make_output(Tensor::scalar(acc), rg);
    maybe_record(rg, [an = a.node(), yn = y.node(), n]() {
        if (!yn->grad_alloc) return;
        const double g = yn->grad[0];
        double* ga = an->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
    return y;
}

Var mean(const Var& a) {
    const int64_t n = a.value().numel();
    if (n == 0) fail("mean", "empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var gelu(const Var& a) {
    const int64_t n = a.value().numel();
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) {
        po[i] = 0.5 * pa[i] * (1.0 + std::erf(pa[i] / kSqrt2));
    }
    bool rg = want_grad(a);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [an = a.node(), yn = y.node(), n]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        const double* pa2 = an->value.data();
        double* ga = an->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) {
            double x = pa2[i];
            double cdf = 0.5 * (1.0 + std::erf(x / kSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            ga[i] += gy[i] * (cdf + x * pdf);
        }
    });
    return y;
}

Var sigmoid(const Var& a) {
    const int64_t n = a.value().numel();
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = stable_sigmoid(pa[i]);
    bool rg = want_grad(a);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [an = a.node(), yn = y.node(), n]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        const double* py = yn->value.data();
        double* ga = an->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) ga[i] += gy[i] * py[i] * (1.0 - py[i]);
    });
    return y;
}

// --------------------------------------------------------------------------
// shape / layout

Var reshape(const Var& a, std::vector<int64_t> shape) {
    if (Tensor::numel_of(shape) != a.value().numel()) {
        fail("reshape", "numel mismatch " + a.value().shape_str() + " -> " + Tensor::shape_str_of(shape));
    }
    Tensor out(std::move(shape), a.value().vec());
    bool rg = want_grad(a);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [an = a.node(), yn = y.node()]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        double* ga = an->ensure_grad().data();
        const int64_t n = yn->grad.numel();
        for (int64_t i = 0; i < n; ++i) ga[i] += gy[i];
    });
    return y;
}

Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) fail("concat", "no inputs");
    const auto& s0 = xs[0].value().shape();
    if (axis < 0 || axis >= static_cast<int>(s0.size())) fail("concat", "axis out of range");
    std::vector<int64_t> out_shape = s0;
    int64_t axis_total = 0;
    for (const auto& x : xs) {
        const auto& s = x.value().shape();
        if (s.size() != s0.size()) fail("concat", "rank mismatch");
        for (size_t i = 0; i < s.size(); ++i) {
            if (static_cast<int>(i) != axis && s[i] != s0[i]) {
                fail("concat", "extent mismatch on non-concat axis");
            }
        }
        axis_total += s[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = axis_total;

    const int64_t outer = prod(s0, 0, static_cast<size_t>(axis));
    const int64_t inner = prod(s0, static_cast<size_t>(axis) + 1, s0.size());
    Tensor out(out_shape);
    double* po = out.data();
    int64_t offset = 0;
    std::vector<int64_t> lens;
    bool rg = false;
    for (const auto& x : xs) {
        const int64_t len = x.value().dim(axis);
        lens.push_back(len);
        const double* px = x.value().data();
        for (int64_t o = 0; o < outer; ++o) {
            std::memcpy(po + (o * axis_total + offset) * inner, px + o * len * inner,
                        static_cast<size_t>(len * inner) * sizeof(double));
        }
        offset += len;
        rg = rg || want_grad(x);
    }
    Var y = make_output(std::move(out), rg);
    if (rg && Tape::active()) {
        std::vector<std::shared_ptr<Node>> nodes;
        nodes.reserve(xs.size());
        for (const auto& x : xs) nodes.push_back(x.node());
        Tape::active()->record([nodes, lens, outer, inner, axis_total, yn = y.node()]() {
            if (!yn->grad_alloc) return;
            const double* gy = yn->grad.data();
            int64_t off = 0;
            for (size_t k = 0; k < nodes.size(); ++k) {
                const int64_t len = lens[k];
                if (nodes[k]->requires_grad) {
                    double* gx = nodes[k]->ensure_grad().data();
                    for (int64_t o = 0; o < outer; ++o) {
                        const double* src = gy + (o * axis_total + off) * inner;
                        double* dst = gx + o * len * inner;
                        for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                    }
                }
                off += len;
            }
        });
    }
    return y;
}

Var slice(const Var& a, int axis, int64_t start, int64_t len) {
    const auto& s = a.value().shape();
    if (axis < 0 || axis >= static_cast<int>(s.size())) fail("slice", "axis out of range");
    const int64_t extent = s[static_cast<size_t>(axis)];
    if (start < 0 || len < 0 || start + len > extent) {
        fail("slice", "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                          ") outside extent " + std::to_string(extent));
    }
    std::vector<int64_t> out_shape = s;
    out_shape[static_cast<size_t>(axis)] = len;
    const int64_t outer = prod(s, 0, static_cast<size_t>(axis));
    const int64_t inner = prod(s, static_cast<size_t>(axis) + 1, s.size());
    Tensor out(out_shape);
    double* po = out.data();
    const double* pa = a.value().data();
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(po + o * len * inner, pa + (o * extent + start) * inner,
                    static_cast<size_t>(len * inner) * sizeof(double));
    }
    bool rg = want_grad(a);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [an = a.node(), yn = y.node(), outer, inner, extent, start, len]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        double* ga = an->ensure_grad().data();
        for (int64_t o = 0; o < outer; ++o) {
            const double* src = gy + o * len * inner;
            double* dst = ga + (o * extent + start) * inner;
            for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
    return y;
}

Var grid_to_tokens(const Var& grid) {
    const auto& s = grid.value().shape();
    if (s.size() != 3) fail("grid_to_tokens", "expected [C,h,w], got " + grid.value().shape_str());
    const int64_t C = s[0], hw = s[1] * s[2];
    Tensor out({hw, C});
    const double* pg = grid.value().data();
    double* po = out.data();
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t p = 0; p < hw; ++p) po[p * C + c] = pg[c * hw + p];
    }
    bool rg = want_grad(grid);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [gn = grid.node(), yn = y.node(), C, hw]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        double* gg = gn->ensure_grad().data();
        for (int64_t c = 0; c < C; ++c) {
            for (int64_t p = 0; p < hw; ++p) gg[c * hw + p] += gy[p * C + c];
        }
    });
    return y;
}

Var tokens_to_grid(const Var& tokens, int64_t h, int64_t w) {
    const auto& s = tokens.value().shape();
    if (s.size() != 2) fail("tokens_to_grid", "expected [N,C], got " + tokens.value().shape_str());
    if (s[0] != h * w) {
        fail("tokens_to_grid", "token count " + std::to_string(s[0]) + " does not match grid " +
                                   std::to_string(h) + "x" + std::to_string(w));
    }
    const int64_t C = s[1], hw = h * w;
    Tensor out({C, h, w});
    const double* pt = tokens.value().data();
    double* po = out.data();
    for (int64_t p = 0; p < hw; ++p) {
        for (int64_t c = 0; c < C; ++c) po[c * hw + p] = pt[p * C + c];
    }
    bool rg = want_grad(tokens);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [tn = tokens.node(), yn = y.node(), C, hw]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        double* gt = tn->ensure_grad().data();
        for (int64_t p = 0; p < hw; ++p) {
            for (int64_t c = 0; c < C; ++c) gt[p * C + c] += gy[c * hw + p];
        }
    });
    return y;
}

Var extract_patches(const Var& image, int patch) {
    const auto& s = image.value().shape();
    if (s.size() != 3) fail("extract_patches", "expected [C,H,W], got " + image.value().shape_str());
    const int64_t C = s[0], H = s[1], W = s[2], P = patch;
    if (P <= 0 || H % P != 0 || W % P != 0) {
        fail("extract_patches", "spatial extents " + image.value().shape_str() +
                                    " not divisible by patch " + std::to_string(patch));
    }
    const int64_t gh = H / P, gw = W / P, N = gh * gw, D = C * P * P;
    Tensor out({N, D});
    const double* pi = image.value().data();
    double* po = out.data();
    for (int64_t r = 0; r < gh; ++r) {
        for (int64_t c = 0; c < gw; ++c) {
            double* dst = po + (r * gw + c) * D;
            int64_t k = 0;
            for (int64_t ch = 0; ch < C; ++ch) {
                for (int64_t py = 0; py < P; ++py) {
                    const double* src = pi + ch * H * W + (r * P + py) * W + c * P;
                    for (int64_t px = 0; px < P; ++px) dst[k++] = src[px];
                }
            }
        }
    }
    bool rg = want_grad(image);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [in = image.node(), yn = y.node(), C, H, W, P, gh, gw, D]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        double* gi = in->ensure_grad().data();
        for (int64_t r = 0; r < gh; ++r) {
            for (int64_t c = 0; c < gw; ++c) {
                const double* src = gy + (r * gw + c) * D;
                int64_t k = 0;
                for (int64_t ch = 0; ch < C; ++ch) {
                    for (int64_t py = 0; py < P; ++py) {
                        double* dst = gi + ch * H * W + (r * P + py) * W + c * P;
                        for (int64_t px = 0; px < P; ++px) dst[px] += src[k++];
                    }
                }
            }
        }
    });
    return y;
}

// --------------------------------------------------------------------------
// linear algebra

Var matmul(const Var& a, const Var& b) {
    const auto& sa = a.value().shape();
    const auto& sb = b.value().shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
        fail("matmul", "incompatible shapes " + a.value().shape_str() + " x " + b.value().shape_str());
    }
    const int64_t M = sa[0], K = sa[1], N = sb[1];
    Tensor out({M, N});
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double* po = out.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (M * N * K > 16384)
#endif
    for (int64_t i = 0; i < M; ++i) {
        double* crow = po + i * N;
        for (int64_t k = 0; k < K; ++k) {
            const double av = pa[i * K + k];
            const double* brow = pb + k * N;
            for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
    bool rg = want_grad(a) || want_grad(b);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [an = a.node(), bn = b.node(), yn = y.node(), M, K, N]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        if (an->requires_grad) {
            double* ga = an->ensure_grad().data();
            const double* pb2 = bn->value.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (M * N * K > 16384)
#endif
            for (int64_t i = 0; i < M; ++i) {
                for (int64_t k = 0; k < K; ++k) {
                    const double* gyrow = gy + i * N;
                    const double* brow = pb2 + k * N;
                    double acc = 0.0;
                    for (int64_t j = 0; j < N; ++j) acc += gyrow[j] * brow[j];
                    ga[i * K + k] += acc;
                }
            }
        }
        if (bn->requires_grad) {
            double* gb = bn->ensure_grad().data();
            const double* pa2 = an->value.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (M * N * K > 16384)
#endif
            for (int64_t k = 0; k < K; ++k) {
                double* gbrow = gb + k * N;
                for (int64_t i = 0; i < M; ++i) {
                    const double av = pa2[i * K + k];
                    const double* gyrow = gy + i * N;
                    for (int64_t j = 0; j < N; ++j) gbrow[j] += av * gyrow[j];
                }
            }
        }
    });
    return y;
}

namespace {

Var linear_impl(const Var& x, const Var& w, const Var* b) {
    const auto& sx = x.value().shape();
    const auto& sw = w.value().shape();
    if (sx.size() != 2 || sw.size() != 2 || sx[1] != sw[1]) {
        fail("linear", "incompatible shapes x" + x.value().shape_str() + " w" + w.value().shape_str());
    }
    if (b && (b->value().ndim() != 1 || b->value().dim(0) != sw[0])) {
        fail("linear", "bias shape " + b->value().shape_str() + " does not match out dim " +
                           std::to_string(sw[0]));
    }
    const int64_t N = sx[0], Din = sx[1], Dout = sw[0];
    Tensor out({N, Dout});
    const double* px = x.value().data();
    const double* pw = w.value().data();
    const double* pbias = b ? b->value().data() : nullptr;
    double* po = out.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (N * Din * Dout > 16384)
#endif
    for (int64_t n = 0; n < N; ++n) {
        const double* xrow = px + n * Din;
        double* yrow = po + n * Dout;
        for (int64_t o = 0; o < Dout; ++o) {
            const double* wrow = pw + o * Din;
            double acc = pbias ? pbias[o] : 0.0;
            for (int64_t d = 0; d < Din; ++d) acc += xrow[d] * wrow[d];
            yrow[o] = acc;
        }
    }
    bool rg = want_grad(x) || want_grad(w) || (b && want_grad(*b));
    Var y = make_output(std::move(out), rg);
    if (rg && Tape::active()) {
        auto xn = x.node();
        auto wn = w.node();
        std::shared_ptr<Node> bn = b ? b->node() : nullptr;
        Tape::active()->record([xn, wn, bn, yn = y.node(), N, Din, Dout]() {
            if (!yn->grad_alloc) return;
            const double* gy = yn->grad.data();
            if (xn->requires_grad) {
                double* gx = xn->ensure_grad().data();
                const double* pw2 = wn->value.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (N * Din * Dout > 16384)
#endif
                for (int64_t n = 0; n < N; ++n) {
                    const double* gyrow = gy + n * Dout;
                    double* gxrow = gx + n * Din;
                    for (int64_t o = 0; o < Dout; ++o) {
                        const double g = gyrow[o];
                        const double* wrow = pw2 + o * Din;
                        for (int64_t d = 0; d < Din; ++d) gxrow[d] += g * wrow[d];
                    }
                }
            }
            if (wn->requires_grad) {
                double* gw = wn->ensure_grad().data();
                const double* px2 = xn->value.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (N * Din * Dout > 16384)
#endif
                for (int64_t o = 0; o < Dout; ++o) {
                    double* gwrow = gw + o * Din;
                    for (int64_t n = 0; n < N; ++n) {
                        const double g = gy[n * Dout + o];
                        const double* xrow = px2 + n * Din;
                        for (int64_t d = 0; d < Din; ++d) gwrow[d] += g * xrow[d];
                    }
                }
            }
            if (bn && bn->requires_grad) {
                double* gb = bn->ensure_grad().data();
                for (int64_t n = 0; n < N; ++n) {
                    const double* gyrow = gy + n * Dout;
                    for (int64_t o = 0; o < Dout; ++o) gb[o] += gyrow[o];
                }
            }
        });
    }
    return y;
}

}  // namespace

Var linear(const Var& x, const Var& w, const Var& b) { return linear_impl(x, w, &b); }
Var linear_nobias(const Var& x, const Var& w) { return linear_impl(x, w, nullptr); }

// --------------------------------------------------------------------------
// normalization

Var softmax(const Var& x, int axis) {
    const auto& s = x.value().shape();
    if (axis < 0 || axis >= static_cast<int>(s.size())) fail("softmax", "axis out of range");
    const int64_t outer = prod(s, 0, static_cast<size_t>(axis));
    const int64_t len = s[static_cast<size_t>(axis)];
    const int64_t inner = prod(s, static_cast<size_t>(axis) + 1, s.size());
    Tensor out(s);
    const double* px = x.value().data();
    double* po = out.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const double* row = px + o * len * inner + in;
            double* orow = po + o * len * inner + in;
            double mx = row[0];
            for (int64_t i = 1; i < len; ++i) mx = std::max(mx, row[i * inner]);
            double denom = 0.0;
            for (int64_t i = 0; i < len; ++i) {
                double e = std::exp(row[i * inner] - mx);
                orow[i * inner] = e;
                denom += e;
            }
            for (int64_t i = 0; i < len; ++i) orow[i * inner] /= denom;
        }
    }
    bool rg = want_grad(x);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [xn = x.node(), yn = y.node(), outer, len, inner]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        const double* py = yn->value.data();
        double* gx = xn->ensure_grad().data();
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                const int64_t base = o * len * inner + in;
                double dot = 0.0;
                for (int64_t i = 0; i < len; ++i) dot += gy[base + i * inner] * py[base + i * inner];
                for (int64_t i = 0; i < len; ++i) {
                    gx[base + i * inner] += py[base + i * inner] * (gy[base + i * inner] - dot);
                }
            }
        }
    });
    return y;
}

Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const auto& s = x.value().shape();
    if (s.empty()) fail("layernorm", "rank-0 input");
    const int64_t D = s.back();
    if (D < 1) fail("layernorm", "token dim must be >= 1");
    if (gamma.value().numel() != D || beta.value().numel() != D) {
        fail("layernorm", "gamma/beta length must equal last axis " + std::to_string(D));
    }
    const int64_t rows = x.value().numel() / D;
    const double eps_var = eps * eps;
    Tensor out(s);
    Tensor xhat_store({rows, D});
    Tensor rstd_store({rows});
    const double* px = x.value().data();
    const double* pg = gamma.value().data();
    const double* pb = beta.value().data();
    double* po = out.data();
    double* pxh = xhat_store.data();
    double* prs = rstd_store.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = px + r * D;
        double mu = 0.0;
        for (int64_t d = 0; d < D; ++d) mu += row[d];
        mu /= static_cast<double>(D);
        double var = 0.0;
        for (int64_t d = 0; d < D; ++d) {
            double c = row[d] - mu;
            var += c * c;
        }
        var /= static_cast<double>(D);
        const double rstd = 1.0 / std::sqrt(var + eps_var);
        prs[r] = rstd;
        for (int64_t d = 0; d < D; ++d) {
            double xh = (row[d] - mu) * rstd;
            pxh[r * D + d] = xh;
            po[r * D + d] = xh * pg[d] + pb[d];
        }
    }
    bool rg = want_grad(x) || want_grad(gamma) || want_grad(beta);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [xn = x.node(), gn = gamma.node(), bn = beta.node(), yn = y.node(),
                      xhat = std::move(xhat_store), rstds = std::move(rstd_store), rows, D]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        const double* pxh = xhat.data();
        const double* prs = rstds.data();
        const double* pg = gn->value.data();
        if (gn->requires_grad || bn->requires_grad) {
            double* gg = gn->requires_grad ? gn->ensure_grad().data() : nullptr;
            double* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t d = 0; d < D; ++d) {
                    if (gg) gg[d] += gy[r * D + d] * pxh[r * D + d];
                    if (gb) gb[d] += gy[r * D + d];
                }
            }
        }
        if (xn->requires_grad) {
            double* gx = xn->ensure_grad().data();
            for (int64_t r = 0; r < rows; ++r) {
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                for (int64_t d = 0; d < D; ++d) {
                    const double dxh = gy[r * D + d] * pg[d];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * pxh[r * D + d];
                }
                mean_dxh /= static_cast<double>(D);
                mean_dxh_xh /= static_cast<double>(D);
                for (int64_t d = 0; d < D; ++d) {
                    const double dxh = gy[r * D + d] * pg[d];
                    gx[r * D + d] += prs[r] * (dxh - mean_dxh - pxh[r * D + d] * mean_dxh_xh);
                }
            }
        }
    });
    return y;
}

// --------------------------------------------------------------------------
// broadcast helpers

Var mean_tokens(const Var& x) {
    const auto& s = x.value().shape();
    if (s.size() != 2) fail("mean_tokens", "expected [N,D], got " + x.value().shape_str());
    const int64_t N = s[0], D = s[1];
    if (N == 0) fail("mean_tokens", "empty token sequence");
    Tensor out({D});
    const double* px = x.value().data();
    double* po = out.data();
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t d = 0; d < D; ++d) po[d] += px[n * D + d];
    }
    const double inv = 1.0 / static_cast<double>(N);
    for (int64_t d = 0; d < D; ++d) po[d] *= inv;
    bool rg = want_grad(x);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [xn = x.node(), yn = y.node(), N, D, inv]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        double* gx = xn->ensure_grad().data();
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t d = 0; d < D; ++d) gx[n * D + d] += gy[d] * inv;
        }
    });
    return y;
}

Var mean_spatial(const Var& x) {
    const auto& s = x.value().shape();
    if (s.size() != 3) fail("mean_spatial", "expected [C,h,w], got " + x.value().shape_str());
    const int64_t C = s[0], hw = s[1] * s[2];
    if (hw == 0) fail("mean_spatial", "empty spatial extent");
    Tensor out({C});
    const double* px = x.value().data();
    double* po = out.data();
    const double inv = 1.0 / static_cast<double>(hw);
    for (int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int64_t p = 0; p < hw; ++p) acc += px[c * hw + p];
        po[c] = acc * inv;
    }
    bool rg = want_grad(x);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [xn = x.node(), yn = y.node(), C, hw, inv]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        double* gx = xn->ensure_grad().data();
        for (int64_t c = 0; c < C; ++c) {
            const double g = gy[c] * inv;
            for (int64_t p = 0; p < hw; ++p) gx[c * hw + p] += g;
        }
    });
    return y;
}

Var mul_rowvec(const Var& x, const Var& v) {
    const auto& s = x.value().shape();
    if (s.size() != 2 || v.value().ndim() != 1 || v.value().dim(0) != s[1]) {
        fail("mul_rowvec", "x" + x.value().shape_str() + " v" + v.value().shape_str());
    }
    const int64_t N = s[0], D = s[1];
    Tensor out(s);
    const double* px = x.value().data();
    const double* pv = v.value().data();
    double* po = out.data();
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t d = 0; d < D; ++d) po[n * D + d] = px[n * D + d] * pv[d];
    }
    bool rg = want_grad(x) || want_grad(v);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [xn = x.node(), vn = v.node(), yn = y.node(), N, D]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        if (xn->requires_grad) {
            double* gx = xn->ensure_grad().data();
            const double* pv2 = vn->value.data();
            for (int64_t n = 0; n < N; ++n) {
                for (int64_t d = 0; d < D; ++d) gx[n * D + d] += gy[n * D + d] * pv2[d];
            }
        }
        if (vn->requires_grad) {
            double* gv = vn->ensure_grad().data();
            const double* px2 = xn->value.data();
            for (int64_t n = 0; n < N; ++n) {
                for (int64_t d = 0; d < D; ++d) gv[d] += gy[n * D + d] * px2[n * D + d];
            }
        }
    });
    return y;
}

Var mul_chanvec(const Var& x, const Var& v) {
    const auto& s = x.value().shape();
    if (s.size() != 3 || v.value().ndim() != 1 || v.value().dim(0) != s[0]) {
        fail("mul_chanvec", "x" + x.value().shape_str() + " v" + v.value().shape_str());
    }
    const int64_t C = s[0], hw = s[1] * s[2];
    Tensor out(s);
    const double* px = x.value().data();
    const double* pv = v.value().data();
    double* po = out.data();
    for (int64_t c = 0; c < C; ++c) {
        const double g = pv[c];
        for (int64_t p = 0; p < hw; ++p) po[c * hw + p] = px[c * hw + p] * g;
    }
    bool rg = want_grad(x) || want_grad(v);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [xn = x.node(), vn = v.node(), yn = y.node(), C, hw]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        if (xn->requires_grad) {
            double* gx = xn->ensure_grad().data();
            const double* pv2 = vn->value.data();
            for (int64_t c = 0; c < C; ++c) {
                for (int64_t p = 0; p < hw; ++p) gx[c * hw + p] += gy[c * hw + p] * pv2[c];
            }
        }
        if (vn->requires_grad) {
            double* gv = vn->ensure_grad().data();
            const double* px2 = xn->value.data();
            for (int64_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int64_t p = 0; p < hw; ++p) acc += gy[c * hw + p] * px2[c * hw + p];
                gv[c] += acc;
            }
        }
    });
    return y;
}

Var mul_scalarvar(const Var& x, const Var& s) {
    if (s.value().numel() != 1) fail("mul_scalarvar", "scale must be scalar");
    const int64_t n = x.value().numel();
    const double sv = s.value()[0];
    Tensor out(x.value().shape());
    const double* px = x.value().data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] * sv;
    bool rg = want_grad(x) || want_grad(s);
    Var y = make_output(std::move(out), rg);
    maybe_record(rg, [xn = x.node(), sn = s.node(), yn = y.node(), n]() {
        if (!yn->grad_alloc) return;
        const double* gy = yn->grad.data();
        if (xn->requires_grad) {
            double* gx = xn->ensure_grad().data();
            const double sv2 = sn->value[0];
            for (int64_t i = 0; i < n; ++i) gx[i] += gy[i] * sv2;
        }
        if (sn->requires_grad) {
            const double* px2 = xn->value.data();
            double acc = 0.0;
            for (int64_t i = 0; i < n; ++i) acc += gy[i] * px2[i];
            sn->ensure_grad()[0] += acc;
        }
    });
    return y;
}

}  // namespace priormoe::ad
