#pragma once

#include <cstdint>
#include <vector>

#include "priormoe/ops.hpp"
#include "priormoe/params.hpp"

namespace priormoe {

struct BackboneConfig {
    int dim = 128;
    int layers = 24;  // divisible by 4 (and by the adapter stage count in use)
    int heads = 4;
    int patch = 16;
    uint64_t seed = 0;
};

// Task-universal branch: patch embedding plus a pre-norm transformer encoder,
// all parameters frozen at construction. Tokens stay at 1/16 resolution; taps
// are the patch embedding output and each block's output.
class FrozenBackbone {
public:
    // Parameters register under "backbone." and are frozen before return.
    FrozenBackbone(const BackboneConfig& cfg, ParamStore& store);

    // [3,H,W] -> [HW/patch^2, D] tokens with fixed sinusoidal positions.
    ad::Var patch_embed(const ad::Var& image) const;

    // Applies layers [begin, end). Token count must match the input geometry.
    ad::Var run_layers(ad::Var tokens, int begin, int end) const;

    // Block i (1-based) out of `num_blocks` equal-depth blocks.
    ad::Var run_block(int block, ad::Var tokens, int num_blocks) const;

    void freeze_all(ParamStore& store) const { store.set_trainable_prefix("backbone.", false); }

    const BackboneConfig& config() const { return cfg_; }

    // Attention-row inspection hook: when set, every attention softmax of
    // subsequent run_layers calls appends its row matrix [N,N].
    struct AttnProbe {
        std::vector<Tensor> rows;
    };
    void set_probe(AttnProbe* probe) { probe_ = probe; }

    static Tensor sinusoidal_positions(int64_t grid_h, int64_t grid_w, int dim);

private:
    struct Layer {
        ad::Var ln1_g, ln1_b;
        ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
        ad::Var ln2_g, ln2_b;
        ad::Var fc1_w, fc1_b, fc2_w, fc2_b;
    };

    ad::Var attention(const Layer& l, const ad::Var& x) const;

    BackboneConfig cfg_;
    ad::Var patch_w_, patch_b_;
    std::vector<Layer> layers_;
    mutable AttnProbe* probe_ = nullptr;
};

}  // namespace priormoe
