#pragma once

#include <cstdint>

#include "priormoe/dmlp.hpp"
#include "priormoe/ops.hpp"
#include "priormoe/params.hpp"

namespace priormoe {

struct DecoderConfig {
    int embed_dim = 128;   // token dim of the adapter streams
    int spec_width = 32;   // channel count of f_s^1
    int width = 64;        // internal pyramid width
    bool has_specific = true;  // false: universal-stream-only baseline
    uint64_t seed = 0;
};

// Top-down convolutional pyramid over the 1/32, 1/16, 1/8 token scales plus
// the 1/4 specific map, 1x1 head, bilinear upsample to the image resolution.
class MaskDecoder {
public:
    MaskDecoder(const DecoderConfig& cfg, ParamStore& store);

    // Full path. ts supplies the 1/8, 1/16, 1/32 grids; f_s1 the 1/4 map;
    // f_u5 tokens fold into the 1/16 level. Output: [1,H,W] logits.
    ad::Var forward(const FlattenedSpecific& ts, const ad::Var& f_s1, const ad::Var& f_u5,
                    int64_t grid_h, int64_t grid_w, int64_t out_h, int64_t out_w) const;

    // Baseline path (has_specific = false): decode from f_u5 only.
    ad::Var forward_universal(const ad::Var& f_u5, int64_t grid_h, int64_t grid_w, int64_t out_h,
                              int64_t out_w) const;

    const DecoderConfig& config() const { return cfg_; }

private:
    ad::Var smooth(const ad::Var& x, const ad::Var& dwk, const ad::Var& pwk, const ad::Var& b) const;

    DecoderConfig cfg_;
    ad::Var lat8_w_, lat8_b_, lat16_w_, lat16_b_, lat32_w_, lat32_b_;
    ad::Var latu_w_, latu_b_, lat4_w_, lat4_b_;
    ad::Var sm16_dw_, sm16_pw_, sm16_b_;
    ad::Var sm8_dw_, sm8_pw_, sm8_b_;
    ad::Var sm4_dw_, sm4_pw_, sm4_b_;
    ad::Var head_w_, head_b_;
};

}  // namespace priormoe
