#include "priormoe/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace priormoe {

using ad::Var;

void ModelConfig::validate() const {
    if (image_size <= 0 || image_size % 32 != 0) {
        throw std::invalid_argument("model: image_size must be a positive multiple of 32, got " +
                                    std::to_string(image_size));
    }
    if (backbone_layers % 4 != 0 || backbone_layers <= 0) {
        throw std::invalid_argument("model: backbone_layers must be a positive multiple of 4");
    }
    if (stages != 0 && stages != 2 && stages != 4 && stages != 6) {
        throw std::invalid_argument("model: stages must be one of 0,2,4,6, got " + std::to_string(stages));
    }
    if (stages > 0 && backbone_layers % stages != 0) {
        throw std::invalid_argument("model: backbone_layers must be divisible by the stage count");
    }
    if (backbone_dim % backbone_heads != 0 || backbone_dim % 4 != 0) {
        throw std::invalid_argument("model: backbone_dim must be divisible by heads and by 4");
    }
    if (backbone_dim % adapter_heads != 0) {
        throw std::invalid_argument("model: backbone_dim must be divisible by adapter_heads");
    }
    if (adapter_points <= 0) throw std::invalid_argument("model: adapter_points must be positive");
    if (extractor_width < 4 || decoder_width < 4) {
        throw std::invalid_argument("model: extractor/decoder widths must be >= 4");
    }
}

SegmentationModel::SegmentationModel(const ModelConfig& cfg, ParamStore& store) : cfg_(cfg) {
    cfg_.validate();
    BackboneConfig bc;
    bc.dim = cfg.backbone_dim;
    bc.layers = cfg.backbone_layers;
    bc.heads = cfg.backbone_heads;
    bc.seed = cfg.seed;
    backbone_ = std::make_unique<FrozenBackbone>(bc, store);

    if (cfg.use_dmlp) {
        DmlpConfig dc;
        dc.width = cfg.extractor_width;
        dc.embed_dim = cfg.backbone_dim;
        dc.seed = cfg.seed;
        dmlp_ = std::make_unique<DmlpExtractor>(dc, store);

        const bool adapters = cfg.stages > 0 && (cfg.use_cda || cfg.use_case);
        if (adapters) {
            stages_.resize(static_cast<size_t>(cfg.stages));
            for (int i = 0; i < cfg.stages; ++i) {
                const std::string prefix = "adapter." + std::to_string(i + 1) + ".";
                auto& st = stages_[static_cast<size_t>(i)];
                if (cfg.use_cda) {
                    st.cda_in = std::make_unique<CdaBlock>(prefix + "cda_in.", cfg.backbone_dim,
                                                           cfg.adapter_heads, cfg.adapter_points, 3,
                                                           cfg.seed, store);
                    st.cda_out = std::make_unique<CdaBlock>(prefix + "cda_out.", cfg.backbone_dim,
                                                            cfg.adapter_heads, cfg.adapter_points, 1,
                                                            cfg.seed, store);
                }
                if (cfg.use_case) {
                    st.case_enh = std::make_unique<CaseBlock>(prefix + "case.", cfg.backbone_dim,
                                                              cfg.seed, store);
                }
            }
        }
    }

    DecoderConfig dec;
    dec.embed_dim = cfg.backbone_dim;
    dec.spec_width = cfg.extractor_width;
    dec.width = cfg.decoder_width;
    dec.has_specific = cfg.use_dmlp;
    dec.seed = cfg.seed;
    decoder_ = std::make_unique<MaskDecoder>(dec, store);
}

ForwardOutputs SegmentationModel::forward(const Var& image, const RuntimeAblation* ablate) const {
    const auto& s = image.value().shape();
    if (s.size() != 3 || s[0] != 3 || s[1] % 32 != 0 || s[2] % 32 != 0 || s[1] == 0 || s[2] == 0) {
        throw std::invalid_argument("model: image must be [3,H,W] with H,W positive multiples of 32, got " +
                                    image.value().shape_str());
    }
    const int64_t grid_h = s[1] / 16, grid_w = s[2] / 16;
    const bool skip_cda = ablate && ablate->skip_cda;
    const bool skip_case = ablate && ablate->skip_case;

    ForwardOutputs out;
    Var fu = backbone_->patch_embed(image);

    if (!cfg_.use_dmlp) {
        fu = backbone_->run_layers(fu, 0, cfg_.backbone_layers);
        out.universal_final = fu;
        out.logits = decoder_->forward_universal(fu, grid_h, grid_w, s[1], s[2]);
        return out;
    }

    SpecificPyramid pyramid = dmlp_->extract_pyramid(image);
    FlattenedSpecific ts = dmlp_->flatten_pyramid(pyramid);
    ValueLevels ts_levels = ValueLevels::from_flattened(ts);
    ValueLevels fu_levels = ValueLevels::single(grid_h, grid_w);
    Tensor fu_refs = grid_reference_points(grid_h, grid_w);
    Tensor ts_refs = multiscale_reference_points(ts_levels);

    if (stages_.empty()) {
        fu = backbone_->run_layers(fu, 0, cfg_.backbone_layers);
    } else {
        const int n_stages = static_cast<int>(stages_.size());
        for (int i = 0; i < n_stages; ++i) {
            const auto& st = stages_[static_cast<size_t>(i)];
            if (st.cda_in && !skip_cda) {
                fu = st.cda_in->forward(fu, fu_refs, ts.tokens, ts_levels);
            }
            fu = backbone_->run_block(i + 1, fu, n_stages);
            if (st.cda_out && !skip_cda) {
                ts.tokens = st.cda_out->forward(ts.tokens, ts_refs, fu, fu_levels);
            }
            if (st.case_enh && !skip_case) {
                ts = st.case_enh->forward(ts);
            }
        }
    }
    out.universal_final = fu;
    out.ts = ts;
    out.logits = decoder_->forward(ts, pyramid.f_s[0], fu, grid_h, grid_w, s[1], s[2]);
    return out;
}

Var SegmentationModel::forward_logits(const Tensor& image, const RuntimeAblation* ablate) const {
    return forward(Var(image, false), ablate).logits;
}

Var SegmentationModel::universal_only(const Tensor& image) const {
    Var fu = backbone_->patch_embed(Var(image, false));
    return backbone_->run_layers(fu, 0, cfg_.backbone_layers);
}

Tensor SegmentationModel::predict_mask(const Tensor& image, const RuntimeAblation* ablate) const {
    Var logits = forward_logits(image, ablate);
    const Tensor& z = logits.value();
    const int64_t H = z.dim(1), W = z.dim(2);
    Tensor pred({H, W});
    for (int64_t i = 0; i < H * W; ++i) {
        const double zi = z[i];
        const double p = zi >= 0.0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
        // Quantize through the 8-bit file encoding so eval-from-files agrees.
        pred[i] = static_cast<double>(std::lround(p * 255.0)) / 255.0;
    }
    return pred;
}

Var total_loss(const Var& bce, const Var& dice, double alpha, double beta) {
    return ad::add(ad::scale(bce, alpha), ad::scale(dice, beta));
}

LossBreakdown loss_breakdown(const Var& bce, const Var& dice, double alpha, double beta) {
    LossBreakdown lb;
    lb.bce = bce.value()[0];
    lb.dice = dice.value()[0];
    lb.alpha = alpha;
    lb.beta = beta;
    lb.total = alpha * lb.bce + beta * lb.dice;
    return lb;
}

}  // namespace priormoe
