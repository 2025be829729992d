#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "priormoe/ops.hpp"
#include "priormoe/params.hpp"

namespace priormoe {

// Expert family indices for the heterogeneous-convolution ladder.
enum ExpertType {
    kExpertDepthwiseSeparable = 1,
    kExpertAtrous = 2,
    kExpertAsymmetric = 3,
    kExpertWavelet = 4,
};

struct DmlpConfig {
    int width = 32;      // per-stage channel count (constant across stages)
    int embed_dim = 128; // token dim the top three scales project to
    uint64_t seed = 0;
};

// Multi-resolution task-specific features at 1/4 .. 1/32 plus the projected
// token-dim copies of the top three scales.
struct SpecificPyramid {
    std::array<ad::Var, 4> f_s;        // [C,H/4,..] .. [C,H/32,..]
    std::array<ad::Var, 3> projected;  // [D,H/8,..] .. [D,H/32,..]
};

// Token sequence over the 1/8, 1/16, 1/32 scales with recorded boundaries.
struct FlattenedSpecific {
    ad::Var tokens;  // [N_ts, D]
    std::array<std::pair<int64_t, int64_t>, 3> grids;  // (h,w) per scale
    std::array<int64_t, 3> boundaries;                 // cumulative token offsets

    int64_t tokens_at(int level) const { return grids[static_cast<size_t>(level)].first *
                                                grids[static_cast<size_t>(level)].second; }
    int64_t level_offset(int level) const {
        return level == 0 ? 0 : boundaries[static_cast<size_t>(level - 1)];
    }
    void validate() const;
};

// Four stages of local-prior extraction with softmax-gated expert fusion.
class DmlpExtractor {
public:
    DmlpExtractor(const DmlpConfig& cfg, ParamStore& store);

    // image: [3,H,W], H and W divisible by 32.
    SpecificPyramid extract_pyramid(const ad::Var& image) const;
    FlattenedSpecific flatten_pyramid(const SpecificPyramid& p) const;
    // Inverse of the flatten step: the three projected scale grids.
    static std::array<ad::Var, 3> unflatten(const FlattenedSpecific& f);

    // Pieces, also used directly by tests.
    ad::Var stem(const ad::Var& image) const;
    ad::Var downsample(const ad::Var& x, int stage) const;  // stage 1..3 -> input of stage+1
    // Ladder for one expert family; returns {l1,l3,l5,l7}.
    std::vector<ad::Var> local_prior_ladder(const ad::Var& x, int stage, int type) const;
    ad::Var expert_prior(const ad::Var& x, int stage, int type) const;  // E_p^type
    ad::Var gate_weights(const ad::Var& stage_input, int stage) const;  // [1,4] softmax
    ad::Var fuse_priors(const ad::Var& stage_input, const std::vector<ad::Var>& experts,
                        const ad::Var& gate, int stage) const;
    ad::Var run_stage(const ad::Var& stage_input, int stage) const;

    const DmlpConfig& config() const { return cfg_; }

private:
    struct ExpertParams {
        ad::Var l1_w, l1_b;
        // per ladder step k=1..3, contents depend on the family
        std::array<std::vector<ad::Var>, 3> ladder;
        ad::Var fuse_w, fuse_b;
    };
    struct StageParams {
        std::array<ExpertParams, 4> experts;
        ad::Var gate_w, gate_b;
        ad::Var out_w, out_b;
        ad::Var down_dw, down_pw, down_b;  // absent for stage 1
    };

    ad::Var apply_ladder_step(const ad::Var& x, int stage, int type, int k) const;

    DmlpConfig cfg_;
    ad::Var stem1_w, stem1_b, stem2_dw, stem2_pw, stem2_b;
    std::array<StageParams, 4> stages_;
    std::array<ad::Var, 3> proj_w_, proj_b_;
};

}  // namespace priormoe
