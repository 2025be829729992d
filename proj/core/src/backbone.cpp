#include "priormoe/backbone.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace priormoe {

using ad::Var;

namespace {
std::string layer_name(int i, const char* leaf) {
    return "backbone.layers." + std::to_string(i) + "." + leaf;
}
}  // namespace

FrozenBackbone::FrozenBackbone(const BackboneConfig& cfg, ParamStore& store) : cfg_(cfg) {
    if (cfg.layers < 4 || cfg.layers % 4 != 0) {
        throw std::invalid_argument("backbone: layer count must be a positive multiple of 4, got " +
                                    std::to_string(cfg.layers));
    }
    if (cfg.dim % cfg.heads != 0 || cfg.dim % 4 != 0) {
        throw std::invalid_argument("backbone: dim must be divisible by heads and by 4");
    }
    const int64_t D = cfg.dim;
    const int64_t patch_in = 3LL * cfg.patch * cfg.patch;
    const double std0 = 0.02;
    // GPT-style residual scaling keeps deep random stacks well conditioned.
    const double std_res = std0 / std::sqrt(2.0 * static_cast<double>(cfg.layers));

    patch_w_ = store.add("backbone.patch_embed.weight",
                         init::normal(cfg.seed, "backbone.patch_embed.weight", {D, patch_in}, std0));
    patch_b_ = store.add("backbone.patch_embed.bias", init::zeros({D}));

    layers_.resize(static_cast<size_t>(cfg.layers));
    for (int i = 0; i < cfg.layers; ++i) {
        Layer& l = layers_[static_cast<size_t>(i)];
        l.ln1_g = store.add(layer_name(i, "ln1.gamma"), init::ones({D}));
        l.ln1_b = store.add(layer_name(i, "ln1.beta"), init::zeros({D}));
        l.wq = store.add(layer_name(i, "attn.q.weight"),
                         init::normal(cfg.seed, layer_name(i, "attn.q.weight"), {D, D}, std0));
        l.bq = store.add(layer_name(i, "attn.q.bias"), init::zeros({D}));
        l.wk = store.add(layer_name(i, "attn.k.weight"),
                         init::normal(cfg.seed, layer_name(i, "attn.k.weight"), {D, D}, std0));
        l.bk = store.add(layer_name(i, "attn.k.bias"), init::zeros({D}));
        l.wv = store.add(layer_name(i, "attn.v.weight"),
                         init::normal(cfg.seed, layer_name(i, "attn.v.weight"), {D, D}, std0));
        l.bv = store.add(layer_name(i, "attn.v.bias"), init::zeros({D}));
        l.wo = store.add(layer_name(i, "attn.out.weight"),
                         init::normal(cfg.seed, layer_name(i, "attn.out.weight"), {D, D}, std_res));
        l.bo = store.add(layer_name(i, "attn.out.bias"), init::zeros({D}));
        l.ln2_g = store.add(layer_name(i, "ln2.gamma"), init::ones({D}));
        l.ln2_b = store.add(layer_name(i, "ln2.beta"), init::zeros({D}));
        l.fc1_w = store.add(layer_name(i, "mlp.fc1.weight"),
                            init::normal(cfg.seed, layer_name(i, "mlp.fc1.weight"), {4 * D, D}, std0));
        l.fc1_b = store.add(layer_name(i, "mlp.fc1.bias"), init::zeros({4 * D}));
        l.fc2_w = store.add(layer_name(i, "mlp.fc2.weight"),
                            init::normal(cfg.seed, layer_name(i, "mlp.fc2.weight"), {D, 4 * D}, std_res));
        l.fc2_b = store.add(layer_name(i, "mlp.fc2.bias"), init::zeros({D}));
    }
    freeze_all(store);
}

Tensor FrozenBackbone::sinusoidal_positions(int64_t grid_h, int64_t grid_w, int dim) {
    Tensor pe({grid_h * grid_w, dim});
    const int quarter = dim / 4;
    for (int64_t r = 0; r < grid_h; ++r) {
        for (int64_t c = 0; c < grid_w; ++c) {
            double* row = pe.data() + (r * grid_w + c) * dim;
            for (int i = 0; i < quarter; ++i) {
                const double freq = std::pow(10000.0, -4.0 * static_cast<double>(i) /
                                                          static_cast<double>(dim));
                row[4 * i + 0] = std::sin(static_cast<double>(r) * freq);
                row[4 * i + 1] = std::cos(static_cast<double>(r) * freq);
                row[4 * i + 2] = std::sin(static_cast<double>(c) * freq);
                row[4 * i + 3] = std::cos(static_cast<double>(c) * freq);
            }
        }
    }
    return pe;
}

Var FrozenBackbone::patch_embed(const Var& image) const {
    const auto& s = image.value().shape();
    if (s.size() != 3 || s[0] != 3 || s[1] % cfg_.patch != 0 || s[2] % cfg_.patch != 0) {
        throw std::invalid_argument("patch_embed: image must be [3,H,W] with extents divisible by " +
                                    std::to_string(cfg_.patch) + ", got " + image.value().shape_str());
    }
    Var patches = ad::extract_patches(image, cfg_.patch);
    Var tokens = ad::linear(patches, patch_w_, patch_b_);
    Var pe(sinusoidal_positions(s[1] / cfg_.patch, s[2] / cfg_.patch, cfg_.dim), false);
    return ad::add(tokens, pe);
}

Var FrozenBackbone::attention(const Layer& l, const Var& x) const {
    const int64_t N = x.value().dim(0);
    const int64_t D = cfg_.dim;
    const int64_t heads = cfg_.heads;
    const int64_t dh = D / heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
    Var q = ad::linear(x, l.wq, l.bq);
    Var k = ad::linear(x, l.wk, l.bk);
    Var v = ad::linear(x, l.wv, l.bv);
    std::vector<Var> ctx;
    ctx.reserve(static_cast<size_t>(heads));
    for (int64_t h = 0; h < heads; ++h) {
        Var qh = ad::slice(q, 1, h * dh, dh);
        Var kh = ad::slice(k, 1, h * dh, dh);
        Var vh = ad::slice(v, 1, h * dh, dh);
        // q_h k_h^T via the linear kernel (weight = k_h).
        Var scores = ad::scale(ad::linear_nobias(qh, kh), scl);
        Var attn = ad::softmax(scores, 1);
        if (probe_) probe_->rows.push_back(attn.value());
        ctx.push_back(ad::matmul(attn, vh));
        (void)N;
    }
    Var merged = ad::concat(ctx, 1);
    return ad::linear(merged, l.wo, l.bo);
}

Var FrozenBackbone::run_layers(Var tokens, int begin, int end) const {
    if (begin < 0 || end > cfg_.layers || begin > end) {
        throw std::invalid_argument("backbone: bad layer range");
    }
    if (tokens.value().ndim() != 2 || tokens.value().dim(1) != cfg_.dim) {
        throw std::invalid_argument("backbone: tokens must be [N," + std::to_string(cfg_.dim) +
                                    "], got " + tokens.value().shape_str());
    }
    for (int i = begin; i < end; ++i) {
        const Layer& l = layers_[static_cast<size_t>(i)];
        Var h = ad::add(tokens, attention(l, ad::layernorm(tokens, l.ln1_g, l.ln1_b)));
        Var mlp_in = ad::layernorm(h, l.ln2_g, l.ln2_b);
        Var mlp = ad::linear(ad::gelu(ad::linear(mlp_in, l.fc1_w, l.fc1_b)), l.fc2_w, l.fc2_b);
        tokens = ad::add(h, mlp);
    }
    return tokens;
}

Var FrozenBackbone::run_block(int block, Var tokens, int num_blocks) const {
    if (num_blocks <= 0 || cfg_.layers % num_blocks != 0) {
        throw std::invalid_argument("backbone: layer count not divisible by block count");
    }
    if (block < 1 || block > num_blocks) {
        throw std::invalid_argument("backbone: block index out of range");
    }
    const int per = cfg_.layers / num_blocks;
    return run_layers(std::move(tokens), (block - 1) * per, block * per);
}

}  // namespace priormoe
