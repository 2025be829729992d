#include "priormoe/adapter.hpp"

#include <cmath>
#include <stdexcept>

namespace priormoe {

using ad::Conv2dOpts;
using ad::Var;

ValueLevels ValueLevels::from_flattened(const FlattenedSpecific& f) {
    f.validate();
    ValueLevels v;
    for (int l = 0; l < 3; ++l) {
        v.grids.push_back(f.grids[static_cast<size_t>(l)]);
        v.offsets.push_back(f.level_offset(l));
    }
    return v;
}

ValueLevels ValueLevels::single(int64_t h, int64_t w) {
    ValueLevels v;
    v.grids.push_back({h, w});
    v.offsets.push_back(0);
    return v;
}

int64_t ValueLevels::total_tokens() const {
    int64_t n = 0;
    for (const auto& [h, w] : grids) n += h * w;
    return n;
}

Tensor grid_reference_points(int64_t h, int64_t w) {
    Tensor refs({h * w, 2});
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            refs[(r * w + c) * 2 + 0] = (static_cast<double>(c) + 0.5) / static_cast<double>(w);
            refs[(r * w + c) * 2 + 1] = (static_cast<double>(r) + 0.5) / static_cast<double>(h);
        }
    }
    return refs;
}

Tensor multiscale_reference_points(const ValueLevels& levels) {
    int64_t total = levels.total_tokens();
    Tensor refs({total, 2});
    int64_t at = 0;
    for (const auto& [h, w] : levels.grids) {
        Tensor g = grid_reference_points(h, w);
        for (int64_t i = 0; i < g.numel(); ++i) refs[at * 2 + i] = g[i];
        at += h * w;
    }
    return refs;
}

CdaBlock::CdaBlock(const std::string& prefix, int dim, int heads, int points, int levels,
                   uint64_t seed, ParamStore& store)
    : dim_(dim), heads_(heads), points_(points), levels_(levels) {
    if (dim % heads != 0) throw std::invalid_argument("cda: dim must be divisible by heads");
    const int64_t D = dim;
    const int64_t P = static_cast<int64_t>(sample_count());
    auto normal = [&](const std::string& leaf, std::vector<int64_t> shape, double stddev) {
        return store.add(prefix + leaf, init::normal(seed, prefix + leaf, std::move(shape), stddev));
    };
    const double lstd = 1.0 / std::sqrt(static_cast<double>(D));
    ln_q_g_ = store.add(prefix + "ln_q.gamma", init::ones({D}));
    ln_q_b_ = store.add(prefix + "ln_q.beta", init::zeros({D}));
    ln_v_g_ = store.add(prefix + "ln_v.gamma", init::ones({D}));
    ln_v_b_ = store.add(prefix + "ln_v.beta", init::zeros({D}));
    wv_w_ = normal("value.weight", {D, D}, lstd);
    wv_b_ = store.add(prefix + "value.bias", init::zeros({D}));
    // Offsets start at zero so sampling begins on the reference grid.
    off_w_ = store.add(prefix + "offset.weight", init::zeros({P * 2, D}));
    off_b_ = store.add(prefix + "offset.bias", init::zeros({P * 2}));
    // Zero logits give uniform deformable weights at initialization.
    attn_w_ = store.add(prefix + "attn.weight", init::zeros({P, D}));
    attn_b_ = store.add(prefix + "attn.bias", init::zeros({P}));
    cos_w_ = store.add(prefix + "cos.weight", init::identity2d(P));
    cos_b_ = store.add(prefix + "cos.bias", init::zeros({P}));
    out_w_ = normal("out.weight", {D, D}, lstd);
    out_b_ = store.add(prefix + "out.bias", init::zeros({D}));
    psi_ = store.add(prefix + "psi", init::zeros({D}));
}

Var CdaBlock::forward(const Var& query, const Tensor& refs, const Var& value,
                      const ValueLevels& levels) const {
    if (static_cast<int>(levels.grids.size()) != levels_) {
        throw std::invalid_argument("cda: expected " + std::to_string(levels_) + " value levels, got " +
                                    std::to_string(levels.grids.size()));
    }
    if (value.value().ndim() != 2 || value.value().dim(0) != levels.total_tokens() ||
        value.value().dim(1) != dim_) {
        throw std::invalid_argument("cda: value tokens " + value.value().shape_str() +
                                    " do not match level boundaries");
    }
    const int64_t Nq = query.value().dim(0);
    if (query.value().ndim() != 2 || query.value().dim(1) != dim_ ||
        refs.ndim() != 2 || refs.dim(0) != Nq || refs.dim(1) != 2) {
        throw std::invalid_argument("cda: query/reference mismatch");
    }
    const int64_t H = heads_, P = points_, L = levels_;
    const int64_t dh = dim_ / H;
    const int64_t samples = H * L * P;

    Var qn = ad::layernorm(query, ln_q_g_, ln_q_b_);
    Var vn = ad::layernorm(value, ln_v_g_, ln_v_b_);
    Var wv = ad::linear(vn, wv_w_, wv_b_);

    // [Nq, H, L, P, 2] offsets in units of target-level cells.
    Var offsets = ad::reshape(ad::linear(qn, off_w_, off_b_), {Nq, H, L, P, 2});
    Var attn_logits = ad::reshape(ad::linear(qn, attn_w_, attn_b_), {Nq, H, L * P});
    Var a_pred = ad::softmax(attn_logits, 2);

    std::vector<Var> head_samples;   // per level: [Nq,H,P,dh]
    std::vector<Var> cosine_samples; // per level: [Nq,H,P,D]
    for (int64_t l = 0; l < L; ++l) {
        const auto [gh, gw] = levels.grids[static_cast<size_t>(l)];
        const int64_t off = levels.offsets[static_cast<size_t>(l)];
        Var v_tok = ad::slice(wv, 0, off, gh * gw);
        Var v_grid = ad::tokens_to_grid(v_tok, gh, gw);
        Var c_tok = ad::slice(vn, 0, off, gh * gw);
        Var c_grid = ad::tokens_to_grid(c_tok, gh, gw);

        // Sampling locations: refs tiled per (head, point) plus scaled offsets.
        Var off_l = ad::reshape(ad::slice(offsets, 2, l, 1), {Nq * H * P, 2});
        Tensor cell_scale({2});
        cell_scale[0] = 1.0 / static_cast<double>(gw);
        cell_scale[1] = 1.0 / static_cast<double>(gh);
        Tensor refs_tiled({Nq * H * P, 2});
        for (int64_t n = 0; n < Nq; ++n) {
            for (int64_t t = 0; t < H * P; ++t) {
                refs_tiled[(n * H * P + t) * 2 + 0] = refs[n * 2 + 0];
                refs_tiled[(n * H * P + t) * 2 + 1] = refs[n * 2 + 1];
            }
        }
        Var locs = ad::add(ad::mul_rowvec(off_l, Var(cell_scale, false)), Var(refs_tiled, false));

        Var cos_flat = ad::bilinear_sample(c_grid, locs);                   // [Nq*H*P, D]
        cosine_samples.push_back(ad::reshape(cos_flat, {Nq, H, P, static_cast<int64_t>(dim_)}));

        std::vector<Var> per_head;
        per_head.reserve(static_cast<size_t>(H));
        for (int64_t h = 0; h < H; ++h) {
            Var grid_h = ad::slice(v_grid, 0, h * dh, dh);
            Var locs_h = ad::slice(ad::reshape(locs, {Nq, H, P, 2}), 1, h, 1);
            Var s_h = ad::bilinear_sample(grid_h, ad::reshape(locs_h, {Nq * P, 2}));
            per_head.push_back(ad::reshape(s_h, {Nq, 1, P, dh}));
        }
        head_samples.push_back(ad::concat(per_head, 1));
    }

    // Assemble [Nq,H,L*P,*] with (level, point) minor order matching a_pred.
    Var s_all = head_samples.size() == 1 ? head_samples[0] : ad::concat(head_samples, 2);
    Var c_all = cosine_samples.size() == 1 ? cosine_samples[0] : ad::concat(cosine_samples, 2);

    Var cos = ad::cosine_rows(qn, ad::reshape(c_all, {Nq, samples, static_cast<int64_t>(dim_)}));
    Var cos_mod = ad::softmax(ad::linear(cos, cos_w_, cos_b_), 1);
    Var a_comb = ad::mul(ad::reshape(a_pred, {Nq, samples}), cos_mod);

    Var pooled = ad::weighted_sample_sum(ad::reshape(a_comb, {Nq, H, L * P}), s_all);
    Var update = ad::mul_rowvec(ad::linear(pooled, out_w_, out_b_), psi_);
    return ad::add(query, update);
}

Var channel_attention(const Var& x, const Var& w1, const Var& b1, const Var& w2, const Var& b2) {
    const int64_t C = x.value().dim(0);
    Var pooled = ad::reshape(ad::mean_spatial(x), {1, C});
    Var gate = ad::sigmoid(ad::linear(ad::gelu(ad::linear(pooled, w1, b1)), w2, b2));
    return ad::mul_chanvec(x, ad::reshape(gate, {C}));
}

Var reverse_attention(const Var& x, const Var& w1, const Var& b1, const Var& w2, const Var& b2) {
    const int64_t C = x.value().dim(0);
    Var pooled = ad::reshape(ad::mean_spatial(x), {1, C});
    Var gate = ad::sigmoid(ad::linear(ad::gelu(ad::linear(pooled, w1, b1)), w2, b2));
    Var complement = ad::add_scalar(ad::scale(ad::reshape(gate, {C}), -1.0), 1.0);
    return ad::mul_chanvec(x, complement);
}

CaseBlock::CaseBlock(const std::string& prefix, int dim, uint64_t seed, ParamStore& store)
    : dim_(dim) {
    const int64_t D = dim;
    const int64_t R = std::max<int64_t>(D / 4, 1);
    auto normal = [&](const std::string& leaf, std::vector<int64_t> shape, double stddev) {
        return store.add(prefix + leaf, init::normal(seed, prefix + leaf, std::move(shape), stddev));
    };
    ln_g_ = store.add(prefix + "ln.gamma", init::ones({D}));
    ln_b_ = store.add(prefix + "ln.beta", init::zeros({D}));
    dc_dw_ = normal("dc.dw", {D, 1, 3, 3}, 1.0 / 3.0);
    dc_pw_ = normal("dc.pw", {D, D, 1, 1}, 1.0 / std::sqrt(static_cast<double>(D)));
    dc_b_ = store.add(prefix + "dc.bias", init::zeros({D}));
    ca_w1_ = normal("ca.fc1.weight", {R, D}, 1.0 / std::sqrt(static_cast<double>(D)));
    ca_b1_ = store.add(prefix + "ca.fc1.bias", init::zeros({R}));
    ca_w2_ = normal("ca.fc2.weight", {D, R}, 1.0 / std::sqrt(static_cast<double>(R)));
    ca_b2_ = store.add(prefix + "ca.fc2.bias", init::zeros({D}));
    ra_w1_ = normal("ra.fc1.weight", {R, D}, 1.0 / std::sqrt(static_cast<double>(D)));
    ra_b1_ = store.add(prefix + "ra.fc1.bias", init::zeros({R}));
    ra_w2_ = normal("ra.fc2.weight", {D, R}, 1.0 / std::sqrt(static_cast<double>(R)));
    ra_b2_ = store.add(prefix + "ra.fc2.bias", init::zeros({D}));
    gate_w_ = normal("gate.weight", {2, D}, 1.0 / std::sqrt(static_cast<double>(D)));
    gate_b_ = store.add(prefix + "gate.bias", init::zeros({2}));
}

Var CaseBlock::gate(const Var& tokens) const {
    Var pooled = ad::reshape(ad::mean_tokens(tokens), {1, static_cast<int64_t>(dim_)});
    return ad::softmax(ad::linear(pooled, gate_w_, gate_b_), 1);
}

FlattenedSpecific CaseBlock::forward(const FlattenedSpecific& f) const {
    f.validate();
    Var xn = ad::layernorm(f.tokens, ln_g_, ln_b_);
    Var w = gate(f.tokens);
    Var w_ca = ad::reshape(ad::slice(w, 1, 0, 1), {1});
    Var w_ra = ad::reshape(ad::slice(w, 1, 1, 1), {1});

    Conv2dOpts dw;
    dw.groups = dim_;
    std::vector<Var> out_tokens;
    for (int l = 0; l < 3; ++l) {
        const auto [h, wid] = f.grids[static_cast<size_t>(l)];
        Var grid = ad::tokens_to_grid(ad::slice(xn, 0, f.level_offset(l), h * wid), h, wid);
        Var d = ad::conv2d(ad::conv2d(grid, dc_dw_, nullptr, dw), dc_pw_, dc_b_, Conv2dOpts{});
        Var ca = channel_attention(d, ca_w1_, ca_b1_, ca_w2_, ca_b2_);
        Var ra = reverse_attention(d, ra_w1_, ra_b1_, ra_w2_, ra_b2_);
        Var fused = ad::add(ad::mul_scalarvar(ca, w_ca), ad::mul_scalarvar(ra, w_ra));
        out_tokens.push_back(ad::grid_to_tokens(fused));
    }
    FlattenedSpecific out = f;
    out.tokens = ad::add(f.tokens, ad::concat(out_tokens, 0));
    return out;
}

}  // namespace priormoe
