#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "priormoe/checkpoint.hpp"
#include "priormoe/config.hpp"
#include "priormoe/dataset.hpp"
#include "priormoe/gradient_suite.hpp"
#include "priormoe/metrics.hpp"
#include "priormoe/trainer.hpp"

using namespace priormoe;

namespace {

struct CommonOpts {
    std::string config_path;
    int64_t seed = -1;
    int stages = -1;
    std::vector<std::string> ablate;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "config file (flat key=value)");
    cmd->add_option("--seed", o.seed, "override the config seed");
    cmd->add_option("--stages", o.stages, "override the interaction stage count {0,2,4,6}");
    cmd->add_option("--ablate", o.ablate, "disable components: no-dmlp, no-cda, no-case")
        ->delimiter(',');
}

TrainConfig resolve_config(const CommonOpts& o) {
    TrainConfig cfg = o.config_path.empty() ? TrainConfig{} : parse_config(o.config_path);
    if (o.seed >= 0) cfg.seed = static_cast<uint64_t>(o.seed);
    if (o.stages >= 0) cfg.stages = o.stages;
    for (const auto& a : o.ablate) {
        if (a == "no-dmlp") cfg.ablate_dmlp = true;
        else if (a == "no-cda") cfg.ablate_cda = true;
        else if (a == "no-case") cfg.ablate_case = true;
        else throw CLI::ValidationError("--ablate", "unknown ablation '" + a + "'");
    }
    cfg.validate();
    return cfg;
}

RuntimeAblation runtime_ablation(const CommonOpts& o) {
    RuntimeAblation ab;
    for (const auto& a : o.ablate) {
        if (a == "no-cda") ab.skip_cda = true;
        else if (a == "no-case") ab.skip_case = true;
        else throw CLI::ValidationError("--ablate", "'" + a + "' is not an inference-time ablation");
    }
    return ab;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic local-prior fine-tuning of a frozen transformer for binary segmentation"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic camouflage dataset");
    std::string gen_out;
    DatasetSpec spec;
    std::string gen_shapes = "mix";
    int64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--count", spec.count, "number of image/mask pairs")->required();
    gen->add_option("--size", spec.image_size, "square image size (default 64)");
    gen->add_option("--texture-seed", gen_seed, "texture/shape stream seed");
    gen->add_option("--shapes", gen_shapes, "ellipse | polygon | mix");
    gen->add_option("--camouflage", spec.camouflage, "strength in [0,1]; 0 = identical textures");
    gen->add_flag("--png", spec.png, "write PNG instead of PPM/PGM");

    // train
    auto* train = app.add_subcommand("train", "train on a generated dataset");
    CommonOpts train_common;
    std::string train_data, train_out, train_resume;
    add_common(train, train_common);
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "run directory for logs/checkpoints")->required();
    train->add_option("--resume", train_resume, "checkpoint to resume from");

    // eval
    auto* eval = app.add_subcommand("eval", "run inference over a dataset and report metrics");
    CommonOpts eval_common;
    std::string eval_ckpt, eval_data, eval_out;
    bool allow_missing = false;
    add_common(eval, eval_common);
    eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--out", eval_out, "output directory (predictions + reports)")->required();
    eval->add_flag("--allow-missing", allow_missing, "skip unmatched stems instead of failing");

    // infer
    auto* infer = app.add_subcommand("infer", "single-image confidence map");
    std::string infer_ckpt, infer_img, infer_out;
    infer->add_option("--checkpoint", infer_ckpt, "trained checkpoint")->required();
    infer->add_option("--image", infer_img, "input image (.ppm/.png)")->required();
    infer->add_option("--out", infer_out, "output confidence map (.pgm/.png)")->required();

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference verification of all operations");
    int64_t gc_seed = 17;
    gc->add_option("--seed", gc_seed, "suite seed");

    // params
    auto* params = app.add_subcommand("params", "parameter accounting for a configuration");
    CommonOpts params_common;
    bool params_json = false;
    add_common(params, params_common);
    params->add_flag("--json", params_json, "machine-readable output");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            spec.texture_seed = static_cast<uint64_t>(gen_seed);
            spec.shapes = shape_family_from_string(gen_shapes);
            if (spec.camouflage < 0.0 || spec.camouflage > 1.0) {
                throw std::invalid_argument("gen-data: camouflage strength must lie in [0,1]");
            }
            DatasetManifest m = gen_synthetic_dataset(spec, gen_out);
            std::printf("wrote %zu pairs to %s\n", m.samples.size(), gen_out.c_str());
            return 0;
        }
        if (train->parsed()) {
            TrainConfig cfg = resolve_config(train_common);
            TrainResult r = train_run(cfg, train_data, train_out, &std::cout, train_resume);
            std::printf("backbone hash before/after: %016llx / %016llx\n",
                        static_cast<unsigned long long>(r.backbone_hash_before),
                        static_cast<unsigned long long>(r.backbone_hash_after));
            if (r.final_train_iou >= 0.0) std::printf("final train iou: %.6f\n", r.final_train_iou);
            std::printf("checkpoint: %s\n", r.final_checkpoint.c_str());
            return 0;
        }
        if (eval->parsed()) {
            RuntimeAblation ab = runtime_ablation(eval_common);
            EvalRunResult r = evaluate_run(eval_ckpt, eval_data, eval_out, ab, allow_missing);
            std::fputs(r.report.to_text().c_str(), stdout);
            return 0;
        }
        if (infer->parsed()) {
            InferResult r = infer_image(infer_ckpt, infer_img, infer_out);
            if (r.padded) {
                std::printf("padded %lldx%lld -> %lldx%lld (reflect)\n",
                            static_cast<long long>(r.in_w), static_cast<long long>(r.in_h),
                            static_cast<long long>(r.out_w), static_cast<long long>(r.out_h));
            }
            std::printf("wrote %s\n", infer_out.c_str());
            return 0;
        }
        if (gc->parsed()) {
            auto rows = run_gradient_suite(static_cast<uint64_t>(gc_seed));
            bool all_pass = true;
            for (const auto& r : rows) {
                std::printf("%-36s %.3e %s\n", r.name.c_str(), r.max_rel_err,
                            r.pass ? "ok" : "FAIL");
                all_pass = all_pass && r.pass;
            }
            std::printf("gradcheck: %s\n", all_pass ? "all ok" : "FAILURES");
            return all_pass ? 0 : 1;
        }
        if (params->parsed()) {
            TrainConfig cfg = resolve_config(params_common);
            ParamStore store;
            SegmentationModel model(cfg.model_config(), store);
            ParamReport rep = count_params(store);
            std::fputs(params_json ? (rep.to_json() + "\n").c_str() : rep.to_text().c_str(), stdout);
            std::printf("backbone hash: %016llx\n",
                        static_cast<unsigned long long>(store.hash_prefix("backbone.")));
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
