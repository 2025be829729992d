#include "priormoe/dmlp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace priormoe {

using ad::Conv2dOpts;
using ad::Var;

namespace {

double conv_std(int64_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

std::string stage_name(int s, const std::string& leaf) {
    return "dmlp.stage" + std::to_string(s + 1) + "." + leaf;
}

std::string expert_name(int s, int n, const std::string& leaf) {
    return stage_name(s, "expert" + std::to_string(n) + "." + leaf);
}

}  // namespace

void FlattenedSpecific::validate() const {
    int64_t expect = 0;
    for (int l = 0; l < 3; ++l) {
        expect += grids[static_cast<size_t>(l)].first * grids[static_cast<size_t>(l)].second;
        if (boundaries[static_cast<size_t>(l)] != expect) {
            throw std::invalid_argument("FlattenedSpecific: boundary " + std::to_string(l) +
                                        " inconsistent with scale grids");
        }
    }
    if (!tokens.defined() || tokens.value().ndim() != 2 || tokens.value().dim(0) != expect) {
        throw std::invalid_argument("FlattenedSpecific: token count does not match scale boundaries");
    }
}

DmlpExtractor::DmlpExtractor(const DmlpConfig& cfg, ParamStore& store) : cfg_(cfg) {
    if (cfg.width < 4) throw std::invalid_argument("dmlp: width must be >= 4");
    const int64_t C = cfg.width;
    const int64_t D = cfg.embed_dim;
    auto normal = [&](const std::string& name, std::vector<int64_t> shape, double stddev) {
        return store.add(name, init::normal(cfg.seed, name, std::move(shape), stddev));
    };

    stem1_w = normal("dmlp.stem.conv1.weight", {C, 3, 3, 3}, conv_std(27));
    stem1_b = store.add("dmlp.stem.conv1.bias", init::zeros({C}));
    stem2_dw = normal("dmlp.stem.conv2.dw", {C, 1, 3, 3}, conv_std(9));
    stem2_pw = normal("dmlp.stem.conv2.pw", {C, C, 1, 1}, conv_std(C));
    stem2_b = store.add("dmlp.stem.conv2.bias", init::zeros({C}));

    for (int s = 0; s < 4; ++s) {
        StageParams& sp = stages_[static_cast<size_t>(s)];
        for (int n = 1; n <= 4; ++n) {
            ExpertParams& ep = sp.experts[static_cast<size_t>(n - 1)];
            ep.l1_w = normal(expert_name(s, n, "l1.weight"), {C, C, 1, 1}, conv_std(C));
            ep.l1_b = store.add(expert_name(s, n, "l1.bias"), init::zeros({C}));
            for (int k = 1; k <= 3; ++k) {
                auto& bank = ep.ladder[static_cast<size_t>(k - 1)];
                const std::string base = "k" + std::to_string(2 * k + 1) + ".";
                switch (n) {
                    case kExpertDepthwiseSeparable: {
                        const int64_t kk = 2 * k + 1;
                        bank.push_back(normal(expert_name(s, n, base + "dw"), {C, 1, kk, kk},
                                              conv_std(kk * kk)));
                        bank.push_back(normal(expert_name(s, n, base + "pw"), {C, C, 1, 1}, conv_std(C)));
                        bank.push_back(store.add(expert_name(s, n, base + "bias"), init::zeros({C})));
                        break;
                    }
                    case kExpertAtrous: {
                        bank.push_back(normal(expert_name(s, n, base + "dw"), {C, 1, 3, 3}, conv_std(9)));
                        bank.push_back(normal(expert_name(s, n, base + "pw"), {C, C, 1, 1}, conv_std(C)));
                        bank.push_back(store.add(expert_name(s, n, base + "bias"), init::zeros({C})));
                        break;
                    }
                    case kExpertAsymmetric: {
                        const int64_t kk = 2 * k + 1;
                        bank.push_back(normal(expert_name(s, n, base + "col"), {C, kk}, conv_std(kk)));
                        bank.push_back(normal(expert_name(s, n, base + "row"), {C, kk}, conv_std(kk)));
                        bank.push_back(store.add(expert_name(s, n, base + "bias"), init::zeros({C})));
                        break;
                    }
                    case kExpertWavelet: {
                        if (k < 3) {
                            bank.push_back(normal(expert_name(s, n, base + "band0"), {4 * C, 1, 3, 3},
                                                  conv_std(9)));
                        } else {
                            bank.push_back(normal(expert_name(s, n, base + "band0"), {3 * C, 1, 3, 3},
                                                  conv_std(9)));
                            bank.push_back(normal(expert_name(s, n, base + "band1"), {4 * C, 1, 3, 3},
                                                  conv_std(9)));
                        }
                        break;
                    }
                    default: break;
                }
            }
            ep.fuse_w = normal(expert_name(s, n, "fuse.weight"), {C, 4 * C, 1, 1}, conv_std(4 * C));
            ep.fuse_b = store.add(expert_name(s, n, "fuse.bias"), init::zeros({C}));
        }
        sp.gate_w = normal(stage_name(s, "gate.weight"), {4, C}, conv_std(C));
        sp.gate_b = store.add(stage_name(s, "gate.bias"), init::zeros({4}));
        sp.out_w = normal(stage_name(s, "out.weight"), {C, C, 1, 1}, conv_std(C));
        sp.out_b = store.add(stage_name(s, "out.bias"), init::zeros({C}));
        if (s >= 1) {
            sp.down_dw = normal(stage_name(s, "down.dw"), {C, 1, 3, 3}, conv_std(9));
            sp.down_pw = normal(stage_name(s, "down.pw"), {C, C, 1, 1}, conv_std(C));
            sp.down_b = store.add(stage_name(s, "down.bias"), init::zeros({C}));
        }
    }
    for (int l = 0; l < 3; ++l) {
        const std::string name = "dmlp.proj" + std::to_string(l + 2);
        proj_w_[static_cast<size_t>(l)] = normal(name + ".weight", {D, C, 1, 1}, conv_std(C));
        proj_b_[static_cast<size_t>(l)] = store.add(name + ".bias", init::zeros({D}));
    }
}

Var DmlpExtractor::stem(const Var& image) const {
    const auto& s = image.value().shape();
    if (s.size() != 3 || s[0] != 3 || s[1] % 4 != 0 || s[2] % 4 != 0) {
        throw std::invalid_argument("dmlp stem: image must be [3,H,W] with H,W divisible by 4, got " +
                                    image.value().shape_str());
    }
    Conv2dOpts s2;
    s2.stride = 2;
    Var h = ad::gelu(ad::conv2d(image, stem1_w, stem1_b, s2));
    Conv2dOpts dw2;
    dw2.stride = 2;
    dw2.groups = cfg_.width;
    Var d = ad::conv2d(h, stem2_dw, nullptr, dw2);
    return ad::gelu(ad::conv2d(d, stem2_pw, stem2_b, Conv2dOpts{}));
}

Var DmlpExtractor::downsample(const Var& x, int stage) const {
    if (stage < 1 || stage > 3) throw std::invalid_argument("dmlp: downsample stage must be 1..3");
    const StageParams& sp = stages_[static_cast<size_t>(stage)];
    Conv2dOpts dw2;
    dw2.stride = 2;
    dw2.groups = cfg_.width;
    Var d = ad::conv2d(x, sp.down_dw, nullptr, dw2);
    return ad::gelu(ad::conv2d(d, sp.down_pw, sp.down_b, Conv2dOpts{}));
}

Var DmlpExtractor::apply_ladder_step(const Var& x, int stage, int type, int k) const {
    const auto& bank =
        stages_[static_cast<size_t>(stage)].experts[static_cast<size_t>(type - 1)].ladder[static_cast<size_t>(k - 1)];
    Conv2dOpts dw;
    dw.groups = cfg_.width;
    switch (type) {
        case kExpertDepthwiseSeparable: {
            Var h = ad::conv2d(x, bank[0], nullptr, dw);
            return ad::conv2d(h, bank[1], bank[2], Conv2dOpts{});
        }
        case kExpertAtrous: {
            Conv2dOpts dil = dw;
            dil.dilation = k;  // receptive fields 3/5/7 from a 3x3 kernel
            Var h = ad::conv2d(x, bank[0], nullptr, dil);
            return ad::conv2d(h, bank[1], bank[2], Conv2dOpts{});
        }
        case kExpertAsymmetric:
            return ad::asymmetric_conv(x, bank[0], bank[1], &bank[2]);
        case kExpertWavelet: {
            const int level = k < 3 ? 1 : 2;
            std::vector<Var> kernels(bank.begin(), bank.end());
            return ad::wavelet_conv(x, level, kernels);
        }
        default:
            throw std::invalid_argument("dmlp: unknown expert type " + std::to_string(type));
    }
}

std::vector<Var> DmlpExtractor::local_prior_ladder(const Var& x, int stage, int type) const {
    if (type < 1 || type > 4) throw std::invalid_argument("dmlp: unknown expert type " + std::to_string(type));
    if (stage < 0 || stage > 3) throw std::invalid_argument("dmlp: stage out of range");
    const ExpertParams& ep = stages_[static_cast<size_t>(stage)].experts[static_cast<size_t>(type - 1)];
    std::vector<Var> out;
    Var l1 = ad::conv2d(x, ep.l1_w, ep.l1_b, Conv2dOpts{});
    out.push_back(l1);
    Var prev = l1;
    for (int k = 1; k <= 3; ++k) {
        Var next = apply_ladder_step(ad::add(l1, prev), stage, type, k);
        out.push_back(next);
        prev = next;
    }
    return out;
}

Var DmlpExtractor::expert_prior(const Var& x, int stage, int type) const {
    std::vector<Var> ladder = local_prior_ladder(x, stage, type);
    const ExpertParams& ep = stages_[static_cast<size_t>(stage)].experts[static_cast<size_t>(type - 1)];
    Var stacked = ad::concat(ladder, 0);
    return ad::conv2d(stacked, ep.fuse_w, ep.fuse_b, Conv2dOpts{});
}

Var DmlpExtractor::gate_weights(const Var& stage_input, int stage) const {
    const StageParams& sp = stages_[static_cast<size_t>(stage)];
    Var pooled = ad::reshape(ad::mean_spatial(stage_input), {1, cfg_.width});
    return ad::softmax(ad::linear(pooled, sp.gate_w, sp.gate_b), 1);
}

Var DmlpExtractor::fuse_priors(const Var& stage_input, const std::vector<Var>& experts,
                               const Var& gate, int stage) const {
    if (gate.value().numel() != static_cast<int64_t>(experts.size())) {
        throw std::invalid_argument("dmlp fuse: gate has " + std::to_string(gate.value().numel()) +
                                    " weights for " + std::to_string(experts.size()) + " experts");
    }
    const StageParams& sp = stages_[static_cast<size_t>(stage)];
    Var acc = stage_input;
    for (size_t n = 0; n < experts.size(); ++n) {
        Var wn = ad::reshape(ad::slice(gate, 1, static_cast<int64_t>(n), 1), {1});
        acc = ad::add(acc, ad::mul_scalarvar(experts[n], wn));
    }
    return ad::conv2d(acc, sp.out_w, sp.out_b, Conv2dOpts{});
}

Var DmlpExtractor::run_stage(const Var& stage_input, int stage) const {
    std::vector<Var> experts;
    experts.reserve(4);
    for (int n = 1; n <= 4; ++n) experts.push_back(expert_prior(stage_input, stage, n));
    Var gate = gate_weights(stage_input, stage);
    return fuse_priors(stage_input, experts, gate, stage);
}

SpecificPyramid DmlpExtractor::extract_pyramid(const Var& image) const {
    const auto& s = image.value().shape();
    if (s.size() != 3 || s[1] % 32 != 0 || s[2] % 32 != 0) {
        throw std::invalid_argument("dmlp: image extents must be divisible by 32, got " +
                                    image.value().shape_str());
    }
    SpecificPyramid p;
    Var x = stem(image);
    p.f_s[0] = run_stage(x, 0);
    for (int stage = 1; stage < 4; ++stage) {
        Var in = downsample(p.f_s[static_cast<size_t>(stage - 1)], stage);
        p.f_s[static_cast<size_t>(stage)] = run_stage(in, stage);
    }
    for (int l = 0; l < 3; ++l) {
        p.projected[static_cast<size_t>(l)] =
            ad::conv2d(p.f_s[static_cast<size_t>(l + 1)], proj_w_[static_cast<size_t>(l)],
                       proj_b_[static_cast<size_t>(l)], Conv2dOpts{});
    }
    return p;
}

FlattenedSpecific DmlpExtractor::flatten_pyramid(const SpecificPyramid& p) const {
    FlattenedSpecific f;
    std::vector<Var> tokens;
    int64_t cum = 0;
    for (int l = 0; l < 3; ++l) {
        const Var& g = p.projected[static_cast<size_t>(l)];
        const auto& gs = g.value().shape();
        f.grids[static_cast<size_t>(l)] = {gs[1], gs[2]};
        cum += gs[1] * gs[2];
        f.boundaries[static_cast<size_t>(l)] = cum;
        tokens.push_back(ad::grid_to_tokens(g));
    }
    f.tokens = ad::concat(tokens, 0);
    return f;
}

std::array<Var, 3> DmlpExtractor::unflatten(const FlattenedSpecific& f) {
    f.validate();
    std::array<Var, 3> out;
    for (int l = 0; l < 3; ++l) {
        const auto [h, w] = f.grids[static_cast<size_t>(l)];
        out[static_cast<size_t>(l)] =
            ad::tokens_to_grid(ad::slice(f.tokens, 0, f.level_offset(l), h * w), h, w);
    }
    return out;
}

}  // namespace priormoe
