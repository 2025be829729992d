#include "priormoe/decoder.hpp"

#include <cmath>
#include <stdexcept>

namespace priormoe {

using ad::Conv2dOpts;
using ad::Var;

MaskDecoder::MaskDecoder(const DecoderConfig& cfg, ParamStore& store) : cfg_(cfg) {
    const int64_t D = cfg.embed_dim, Cd = cfg.width, Cs = cfg.spec_width;
    auto normal = [&](const std::string& name, std::vector<int64_t> shape, int64_t fan_in) {
        return store.add("decoder." + name,
                         init::normal(cfg.seed, "decoder." + name, std::move(shape),
                                      1.0 / std::sqrt(static_cast<double>(fan_in))));
    };
    auto zeros = [&](const std::string& name, std::vector<int64_t> shape) {
        return store.add("decoder." + name, init::zeros(std::move(shape)));
    };
    if (cfg.has_specific) {
        lat8_w_ = normal("lat8.weight", {Cd, D, 1, 1}, D);
        lat8_b_ = zeros("lat8.bias", {Cd});
        lat16_w_ = normal("lat16.weight", {Cd, D, 1, 1}, D);
        lat16_b_ = zeros("lat16.bias", {Cd});
        lat32_w_ = normal("lat32.weight", {Cd, D, 1, 1}, D);
        lat32_b_ = zeros("lat32.bias", {Cd});
        lat4_w_ = normal("lat4.weight", {Cd, Cs, 1, 1}, Cs);
        lat4_b_ = zeros("lat4.bias", {Cd});
    }
    latu_w_ = normal("latu.weight", {Cd, D, 1, 1}, D);
    latu_b_ = zeros("latu.bias", {Cd});
    sm16_dw_ = normal("smooth16.dw", {Cd, 1, 3, 3}, 9);
    sm16_pw_ = normal("smooth16.pw", {Cd, Cd, 1, 1}, Cd);
    sm16_b_ = zeros("smooth16.bias", {Cd});
    sm8_dw_ = normal("smooth8.dw", {Cd, 1, 3, 3}, 9);
    sm8_pw_ = normal("smooth8.pw", {Cd, Cd, 1, 1}, Cd);
    sm8_b_ = zeros("smooth8.bias", {Cd});
    sm4_dw_ = normal("smooth4.dw", {Cd, 1, 3, 3}, 9);
    sm4_pw_ = normal("smooth4.pw", {Cd, Cd, 1, 1}, Cd);
    sm4_b_ = zeros("smooth4.bias", {Cd});
    head_w_ = normal("head.weight", {1, Cd, 1, 1}, Cd);
    head_b_ = zeros("head.bias", {1});
}

Var MaskDecoder::smooth(const Var& x, const Var& dwk, const Var& pwk, const Var& b) const {
    Conv2dOpts dw;
    dw.groups = cfg_.width;
    return ad::gelu(ad::conv2d(ad::conv2d(x, dwk, nullptr, dw), pwk, b, Conv2dOpts{}));
}

Var MaskDecoder::forward(const FlattenedSpecific& ts, const Var& f_s1, const Var& f_u5,
                         int64_t grid_h, int64_t grid_w, int64_t out_h, int64_t out_w) const {
    if (!cfg_.has_specific) {
        throw std::invalid_argument("decoder: constructed without specific-stream laterals");
    }
    ts.validate();
    auto grids = DmlpExtractor::unflatten(ts);
    Var fu_grid = ad::tokens_to_grid(f_u5, grid_h, grid_w);

    Var p32 = ad::conv2d(grids[2], lat32_w_, lat32_b_, Conv2dOpts{});
    Var p16 = ad::add(ad::conv2d(grids[1], lat16_w_, lat16_b_, Conv2dOpts{}),
                      ad::conv2d(fu_grid, latu_w_, latu_b_, Conv2dOpts{}));
    p16 = ad::add(p16, ad::upsample_bilinear(p32, grids[1].value().dim(1), grids[1].value().dim(2)));
    p16 = smooth(p16, sm16_dw_, sm16_pw_, sm16_b_);

    Var p8 = ad::conv2d(grids[0], lat8_w_, lat8_b_, Conv2dOpts{});
    p8 = ad::add(p8, ad::upsample_bilinear(p16, grids[0].value().dim(1), grids[0].value().dim(2)));
    p8 = smooth(p8, sm8_dw_, sm8_pw_, sm8_b_);

    Var p4 = ad::conv2d(f_s1, lat4_w_, lat4_b_, Conv2dOpts{});
    p4 = ad::add(p4, ad::upsample_bilinear(p8, f_s1.value().dim(1), f_s1.value().dim(2)));
    p4 = smooth(p4, sm4_dw_, sm4_pw_, sm4_b_);

    Var logits = ad::conv2d(p4, head_w_, head_b_, Conv2dOpts{});
    return ad::upsample_bilinear(logits, out_h, out_w);
}

Var MaskDecoder::forward_universal(const Var& f_u5, int64_t grid_h, int64_t grid_w, int64_t out_h,
                                   int64_t out_w) const {
    Var fu_grid = ad::tokens_to_grid(f_u5, grid_h, grid_w);
    Var p16 = smooth(ad::conv2d(fu_grid, latu_w_, latu_b_, Conv2dOpts{}), sm16_dw_, sm16_pw_, sm16_b_);
    Var p8 = smooth(ad::upsample_bilinear(p16, grid_h * 2, grid_w * 2), sm8_dw_, sm8_pw_, sm8_b_);
    Var p4 = smooth(ad::upsample_bilinear(p8, grid_h * 4, grid_w * 4), sm4_dw_, sm4_pw_, sm4_b_);
    Var logits = ad::conv2d(p4, head_w_, head_b_, Conv2dOpts{});
    return ad::upsample_bilinear(logits, out_h, out_w);
}

}  // namespace priormoe
