#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "priormoe/adapter.hpp"
#include "priormoe/backbone.hpp"
#include "priormoe/decoder.hpp"
#include "priormoe/dmlp.hpp"
#include "priormoe/ops.hpp"
#include "priormoe/params.hpp"

namespace priormoe {

struct ModelConfig {
    int image_size = 64;      // divisible by 32
    int backbone_dim = 128;
    int backbone_layers = 24;
    int backbone_heads = 4;
    int extractor_width = 32;
    int decoder_width = 64;
    int adapter_heads = 4;
    int adapter_points = 4;
    int stages = 4;           // 0, 2, 4 or 6 interaction stages
    bool use_dmlp = true;
    bool use_cda = true;
    bool use_case = true;
    uint64_t seed = 7;

    void validate() const;
};

// Inference-time structural skips; parameters stay in place so checkpoints
// trained with the full structure still load.
struct RuntimeAblation {
    bool skip_cda = false;
    bool skip_case = false;
};

struct ForwardOutputs {
    ad::Var logits;                       // [1,H,W]
    ad::Var universal_final;              // f_u after the last block
    std::optional<FlattenedSpecific> ts;  // final specific stream (when present)
};

struct LossBreakdown {
    double bce = 0.0;
    double dice = 0.0;
    double total = 0.0;
    double alpha = 5.0;
    double beta = 2.0;
};

// Two-branch segmentation model: frozen transformer backbone, trainable
// prior extractor, interaction adapters per block, convolutional decoder.
class SegmentationModel {
public:
    SegmentationModel(const ModelConfig& cfg, ParamStore& store);

    ForwardOutputs forward(const ad::Var& image, const RuntimeAblation* ablate = nullptr) const;
    ad::Var forward_logits(const Tensor& image, const RuntimeAblation* ablate = nullptr) const;

    // Plain frozen path (no adapter interaction), final block output tokens.
    ad::Var universal_only(const Tensor& image) const;

    // Prediction map in [0,1], quantized through the 8-bit export so in-memory
    // evaluation matches file-based evaluation exactly.
    Tensor predict_mask(const Tensor& image, const RuntimeAblation* ablate = nullptr) const;

    const ModelConfig& config() const { return cfg_; }
    FrozenBackbone& backbone() { return *backbone_; }
    const FrozenBackbone& backbone() const { return *backbone_; }
    DmlpExtractor* dmlp() { return dmlp_.get(); }
    MaskDecoder& decoder() { return *decoder_; }

private:
    ModelConfig cfg_;
    std::unique_ptr<FrozenBackbone> backbone_;
    std::unique_ptr<DmlpExtractor> dmlp_;
    std::unique_ptr<MaskDecoder> decoder_;
    struct Stage {
        std::unique_ptr<CdaBlock> cda_in;   // query: universal, value: specific
        std::unique_ptr<CdaBlock> cda_out;  // query: specific, value: universal
        std::unique_ptr<CaseBlock> case_enh;
    };
    std::vector<Stage> stages_;
};

// total = alpha * bce + beta * dice over the logit map.
ad::Var total_loss(const ad::Var& bce, const ad::Var& dice, double alpha, double beta);
LossBreakdown loss_breakdown(const ad::Var& bce, const ad::Var& dice, double alpha, double beta);

}  // namespace priormoe
