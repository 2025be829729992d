#include "priormoe/gradient_suite.hpp"

#include <algorithm>
#include <cmath>

#include "priormoe/gradcheck.hpp"
#include "priormoe/rng.hpp"

namespace priormoe {

using ad::Conv2dOpts;
using ad::Var;

namespace {

Tensor randn(Rng& rng, std::vector<int64_t> shape, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

ModelConfig tiny_model_config(uint64_t seed) {
    ModelConfig mc;
    mc.image_size = 32;
    mc.backbone_dim = 16;
    mc.backbone_layers = 4;
    mc.backbone_heads = 2;
    mc.extractor_width = 8;
    mc.decoder_width = 16;
    mc.adapter_heads = 2;
    mc.adapter_points = 2;
    mc.stages = 4;
    mc.seed = seed;
    return mc;
}

}  // namespace

double model_grad_check(SegmentationModel& model, ParamStore& store, const Tensor& image,
                        double h, int coords_per_param, uint64_t seed) {
    auto objective = [&]() {
        return ad::sum(model.forward(Var(image, false)).logits).value()[0];
    };

    // Analytic gradients for every trainable parameter in one backward pass.
    store.zero_grads();
    std::vector<Tensor> analytic;
    std::vector<Parameter*> tracked;
    {
        ad::Tape tape;
        ad::TapeScope scope(tape);
        Var loss = ad::sum(model.forward(Var(image, false)).logits);
        tape.backward(loss);
        for (auto& p : store.all()) {
            if (!p->trainable) continue;
            tracked.push_back(p.get());
            analytic.push_back(p->var.has_grad() ? p->var.grad() : Tensor::zeros(p->value().shape()));
        }
    }
    store.zero_grads();

    Rng rng(seed ^ 0xabcdef1234567ull);
    double max_rel = 0.0;
    for (size_t pi = 0; pi < tracked.size(); ++pi) {
        Tensor& w = tracked[pi]->value();
        const int64_t n = w.numel();
        const int64_t take = std::min<int64_t>(n, coords_per_param);
        for (int64_t k = 0; k < take; ++k) {
            const int64_t c = take == n ? k : rng.uniform_int(n);
            const double orig = w[c];
            w[c] = orig + h;
            const double fp = objective();
            w[c] = orig - h;
            const double fm = objective();
            w[c] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi][c];
            max_rel = std::max(max_rel, std::fabs(a - numeric) /
                                            std::max({1.0, std::fabs(a), std::fabs(numeric)}));
        }
    }
    return max_rel;
}

std::vector<GradSuiteRow> run_gradient_suite(uint64_t seed) {
    std::vector<GradSuiteRow> rows;
    Rng rng(seed);
    auto row = [&rows](const std::string& name, double err) {
        GradSuiteRow r;
        r.name = name;
        r.max_rel_err = err;
        r.pass = err < r.tolerance;
        rows.push_back(r);
    };

    {
        Tensor x = randn(rng, {1, 2, 5, 5});
        Tensor k = randn(rng, {4, 2, 3, 3}, 0.5);
        Tensor b = randn(rng, {4}, 0.2);
        row("conv2d 3x3 same", ad::grad_check([](const std::vector<Var>& v) {
                Var y = ad::conv2d(v[0], v[1], &v[2], Conv2dOpts{});
                return ad::sum(ad::mul(y, y));
            }, {x, k, b}));
    }
    {
        Tensor x = randn(rng, {4, 6, 6});
        Tensor k = randn(rng, {6, 2, 3, 3}, 0.5);
        row("conv2d stride2 dilated grouped", ad::grad_check([](const std::vector<Var>& v) {
                Conv2dOpts o;
                o.stride = 2;
                o.dilation = 2;
                o.groups = 2;
                Var y = ad::conv2d(v[0], v[1], nullptr, o);
                return ad::sum(ad::mul(y, y));
            }, {x, k}));
    }
    {
        Tensor x = randn(rng, {3, 6, 6});
        Tensor u = randn(rng, {3, 5}, 0.5);
        Tensor v = randn(rng, {3, 5}, 0.5);
        Tensor b = randn(rng, {3}, 0.2);
        row("asymmetric_conv k5", ad::grad_check([](const std::vector<Var>& w) {
                Var y = ad::asymmetric_conv(w[0], w[1], w[2], &w[3]);
                return ad::sum(ad::mul(y, y));
            }, {x, u, v, b}));
    }
    {
        Tensor x = randn(rng, {2, 8, 8});
        Tensor k0 = randn(rng, {6, 1, 3, 3}, 0.4);
        Tensor k1 = randn(rng, {8, 1, 3, 3}, 0.4);
        row("wavelet_conv level2", ad::grad_check([](const std::vector<Var>& v) {
                Var y = ad::wavelet_conv(v[0], 2, {v[1], v[2]});
                return ad::sum(ad::mul(y, y));
            }, {x, k0, k1}));
    }
    {
        Tensor g = randn(rng, {3, 8, 8});
        Tensor p = randn(rng, {7, 2});
        for (int64_t i = 0; i < p.numel(); ++i) p[i] = 0.1 + 0.8 * std::fabs(std::fmod(p[i], 1.0));
        row("bilinear_sample", ad::grad_check([](const std::vector<Var>& v) {
                Var y = ad::bilinear_sample(v[0], v[1]);
                return ad::sum(ad::mul(y, y));
            }, {g, p}));
    }
    {
        Tensor x = randn(rng, {4, 7}, 2.0);
        row("softmax", ad::grad_check([](const std::vector<Var>& v) {
                return ad::sum(ad::mul(ad::softmax(v[0], 1), v[0]));
            }, {x}));
    }
    {
        Tensor x = randn(rng, {5, 9});
        Tensor g = randn(rng, {9}, 0.3);
        Tensor b = randn(rng, {9}, 0.3);
        row("layernorm", ad::grad_check([](const std::vector<Var>& v) {
                Var y = ad::layernorm(v[0], v[1], v[2]);
                return ad::sum(ad::mul(y, y));
            }, {x, g, b}));
    }
    {
        Tensor x = randn(rng, {6, 5});
        row("gelu+sigmoid", ad::grad_check([](const std::vector<Var>& v) {
                return ad::sum(ad::mul(ad::gelu(v[0]), ad::sigmoid(v[0])));
            }, {x}));
    }
    {
        Tensor x = randn(rng, {4, 6});
        Tensor w = randn(rng, {5, 6}, 0.5);
        Tensor b = randn(rng, {5}, 0.2);
        row("linear+matmul", ad::grad_check([](const std::vector<Var>& v) {
                Var y = ad::linear(v[0], v[1], v[2]);
                return ad::sum(ad::mul(ad::matmul(y, v[1]), v[0]));
            }, {x, w, b}));
    }
    {
        Tensor q = randn(rng, {5, 8});
        Tensor v = randn(rng, {5, 6, 8});
        row("cosine_rows", ad::grad_check([](const std::vector<Var>& w) {
                Var c = ad::cosine_rows(w[0], w[1]);
                return ad::sum(ad::mul(c, c));
            }, {q, v}));
    }
    {
        Tensor a = randn(rng, {3, 2, 4});
        Tensor s = randn(rng, {3, 2, 4, 5});
        row("weighted_sample_sum", ad::grad_check([](const std::vector<Var>& v) {
                Var y = ad::weighted_sample_sum(v[0], v[1]);
                return ad::sum(ad::mul(y, y));
            }, {a, s}));
    }
    {
        Tensor x = randn(rng, {2, 6, 6});
        row("upsample_bilinear", ad::grad_check([](const std::vector<Var>& v) {
                Var y = ad::upsample_bilinear(v[0], 11, 9);
                return ad::sum(ad::mul(y, y));
            }, {x}));
    }
    {
        Tensor z = randn(rng, {1, 5, 5});
        Tensor gt({1, 5, 5});
        for (int64_t i = 0; i < gt.numel(); ++i) gt[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        row("bce+dice losses", ad::grad_check([&gt](const std::vector<Var>& v) {
                return ad::add(ad::scale(ad::bce_with_logits(v[0], gt), 5.0),
                               ad::scale(ad::dice_loss(v[0], gt), 2.0));
            }, {z}));
    }

    // Composed paths on 32x32 inputs, sampled parameter coordinates.
    {
        ModelConfig mc = tiny_model_config(seed);
        ParamStore store;
        SegmentationModel model(mc, store);
        Rng irng(seed ^ 0x1111);
        Tensor image = randn(irng, {3, 32, 32}, 0.5);
        for (int64_t i = 0; i < image.numel(); ++i) image[i] = 0.5 + 0.25 * std::tanh(image[i]);
        row("full model / trainable params", model_grad_check(model, store, image, 1e-5, 2, seed));

        // Gradient flow into the image across the frozen stack.
        row("full model / input image", ad::grad_check([&](const std::vector<Var>& v) {
                return ad::sum(model.forward(v[0]).logits);
            }, {image}, 1e-5, 6, seed ^ 0x22));
    }
    {
        // Extractor alone: scalar sum of the flattened tokens.
        DmlpConfig dc;
        dc.width = 8;
        dc.embed_dim = 16;
        dc.seed = seed ^ 0x33;
        ParamStore store;
        DmlpExtractor dmlp(dc, store);
        Rng irng(seed ^ 0x44);
        Tensor image = randn(irng, {3, 32, 32}, 0.5);
        row("dmlp extractor / input", ad::grad_check([&](const std::vector<Var>& v) {
                return ad::sum(dmlp.flatten_pyramid(dmlp.extract_pyramid(v[0])).tokens);
            }, {image}, 1e-5, 6, seed ^ 0x55));
    }
    return rows;
}

}  // namespace priormoe
