#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "priormoe/dmlp.hpp"
#include "priormoe/ops.hpp"
#include "priormoe/params.hpp"

namespace priormoe {

// Value-stream geometry for one CDA direction: token offsets/lengths plus the
// grid each level reshapes to.
struct ValueLevels {
    std::vector<std::pair<int64_t, int64_t>> grids;  // (h,w) per level
    std::vector<int64_t> offsets;                    // start token per level

    static ValueLevels from_flattened(const FlattenedSpecific& f);
    static ValueLevels single(int64_t h, int64_t w);
    int64_t total_tokens() const;
};

// Pixel-center reference points of a grid, normalized to [0,1]^2, (x,y).
Tensor grid_reference_points(int64_t h, int64_t w);
Tensor multiscale_reference_points(const ValueLevels& levels);

// One direction of cosine-aligned deformable attention. The residual update
// is scaled by a zero-initialized vector gate, so a freshly constructed block
// is exactly the identity on its query stream.
class CdaBlock {
public:
    CdaBlock(const std::string& prefix, int dim, int heads, int points, int levels,
             uint64_t seed, ParamStore& store);

    // query: [N_q,D]; refs: [N_q,2]; value: [N_v,D] laid out per `levels`.
    ad::Var forward(const ad::Var& query, const Tensor& refs, const ad::Var& value,
                    const ValueLevels& levels) const;

    int sample_count() const { return heads_ * levels_ * points_; }

private:
    int dim_, heads_, points_, levels_;
    ad::Var ln_q_g_, ln_q_b_, ln_v_g_, ln_v_b_;
    ad::Var wv_w_, wv_b_;
    ad::Var off_w_, off_b_;
    ad::Var attn_w_, attn_b_;
    ad::Var cos_w_, cos_b_;
    ad::Var out_w_, out_b_;
    ad::Var psi_;
};

// Squeeze-excitation style channel gate and its reverse (complement) variant.
ad::Var channel_attention(const ad::Var& x, const ad::Var& w1, const ad::Var& b1,
                          const ad::Var& w2, const ad::Var& b2);
ad::Var reverse_attention(const ad::Var& x, const ad::Var& w1, const ad::Var& b1,
                          const ad::Var& w2, const ad::Var& b2);

// Channel-oriented adaptive scale enhancement: per-scale depthwise-separable
// smoothing, CA/RA experts fused by a softmax gate, residual on the tokens.
class CaseBlock {
public:
    CaseBlock(const std::string& prefix, int dim, uint64_t seed, ParamStore& store);

    FlattenedSpecific forward(const FlattenedSpecific& f) const;
    ad::Var gate(const ad::Var& tokens) const;  // [1,2] softmax weights

private:
    int dim_;
    ad::Var ln_g_, ln_b_;
    ad::Var dc_dw_, dc_pw_, dc_b_;
    ad::Var ca_w1_, ca_b1_, ca_w2_, ca_b2_;
    ad::Var ra_w1_, ra_b1_, ra_w2_, ra_b2_;
    ad::Var gate_w_, gate_b_;
};

}  // namespace priormoe
