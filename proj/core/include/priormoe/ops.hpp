#pragma once

#include <vector>

#include "priormoe/tape.hpp"
#include "priormoe/tensor.hpp"

namespace priormoe::ad {

// ---- elementwise & reductions ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sum(const Var& a);   // -> scalar {1}
Var mean(const Var& a);  // -> scalar {1}
Var gelu(const Var& a);
Var sigmoid(const Var& a);

// ---- shape / layout ----
Var reshape(const Var& a, std::vector<int64_t> shape);
Var concat(const std::vector<Var>& xs, int axis);
Var slice(const Var& a, int axis, int64_t start, int64_t len);
Var grid_to_tokens(const Var& grid);                          // [C,h,w] -> [h*w,C]
Var tokens_to_grid(const Var& tokens, int64_t h, int64_t w);  // [N,C] -> [C,h,w]
Var extract_patches(const Var& image, int patch);             // [C,H,W] -> [(H/p)*(W/p), C*p*p]

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);                      // [m,k]x[k,n] -> [m,n]
Var linear(const Var& x, const Var& w, const Var& b);        // [n,din], w:[dout,din], b:[dout]
Var linear_nobias(const Var& x, const Var& w);

// ---- normalization ----
Var softmax(const Var& x, int axis);
// Per-token zero-mean/unit-variance over the last axis. epsilon enters the
// variance in quadrature (sigma^2 + eps^2) so unit-variance tokens normalize
// exactly while the zero-variance path stays guarded.
Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);

// ---- broadcast helpers ----
Var mean_tokens(const Var& x);                 // [N,D] -> [D]
Var mean_spatial(const Var& x);                // [C,h,w] -> [C]
Var mul_rowvec(const Var& x, const Var& v);    // [N,D] * v[D]
Var mul_chanvec(const Var& x, const Var& v);   // [C,h,w] * v[C]
Var mul_scalarvar(const Var& x, const Var& s); // x * s, s shape {1}

// ---- convolution family ----
struct Conv2dOpts {
    int stride = 1;
    int dilation = 1;
    int groups = 1;
    int padding = -1;  // -1: "same" mode, floor(((k-1)*dilation)/2) per axis
};
// x: [Cin,H,W] or [N,Cin,H,W]; w: [Cout,Cin/groups,kh,kw]; bias: [Cout] or null.
Var conv2d(const Var& x, const Var& w, const Var* bias, const Conv2dOpts& opts);
Var conv2d(const Var& x, const Var& w, const Var& bias, const Conv2dOpts& opts);

// Depthwise (k x 1) then (1 x k) pair; equals a depthwise k x k convolution
// with the per-channel rank-1 kernel u_c v_c^T. col_k/row_k: [C,k], odd k.
Var asymmetric_conv(const Var& x, const Var& col_k, const Var& row_k, const Var* bias);

// One orthonormal Haar analysis step: [C,H,W] -> [4C,H/2,W/2], subband order
// LL,LH,HL,HH along channels. H and W must be even.
Var dwt_haar(const Var& x);
Var idwt_haar(const Var& x);  // [4C,h,w] -> [C,2h,2w]

// Haar decomposition to `level`, per-subband 3x3 depthwise convolution,
// inverse reconstruction. kernels[0..level-2]: [3C,1,3,3] detail kernels per
// depth, kernels[level-1]: [4C,1,3,3] for the deepest decomposition.
Var wavelet_conv(const Var& x, int level, const std::vector<Var>& kernels);

// ---- sampling ----
// points: [N,2], columns (x,y) normalized to [0,1]; values outside clamp to
// the border with zero point-gradient there.
Var bilinear_sample(const Var& grid, const Var& points);      // -> [N,C]
Var upsample_bilinear(const Var& x, int64_t H, int64_t W);    // [C,h,w] -> [C,H,W]

// ---- attention pieces ----
// cos[n,p] = <q_n, v_np> / max(|q_n||v_np|, eps)
Var cosine_rows(const Var& q, const Var& v, double eps = 1e-8);  // [N,D],[N,P,D] -> [N,P]
// y[n, h*dh+c] = sum_t a[n,h,t] * s[n,h,t,c]
Var weighted_sample_sum(const Var& a, const Var& s);  // [N,H,T],[N,H,T,dh] -> [N,H*dh]

// ---- losses ----
Var bce_with_logits(const Var& logits, const Tensor& target);           // mean, stable form
Var dice_loss(const Var& logits, const Tensor& target, double eps = 1.0);

}  // namespace priormoe::ad
