#include "priormoe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "priormoe/checkpoint.hpp"
#include "priormoe/image_io.hpp"

namespace fs = std::filesystem;

namespace priormoe {

namespace {

std::string loss_line(int iter, double bce, double dice, double total) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "iter %d bce %.17g dice %.17g total %.17g", iter, bce, dice, total);
    return buf;
}

double train_set_iou(const SegmentationModel& model, const std::vector<LoadedSample>& samples) {
    double acc = 0.0;
    for (const auto& s : samples) {
        acc += iou(model.predict_mask(s.image), s.mask);
    }
    return samples.empty() ? 0.0 : acc / static_cast<double>(samples.size());
}

std::string ckpt_name(const std::string& out_dir, int iter) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_%06d.bin", iter);
    return out_dir + "/" + buf;
}

}  // namespace

TrainResult train_run(const TrainConfig& cfg, const std::string& data_dir,
                      const std::string& out_dir, std::ostream* progress,
                      const std::string& resume_path) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw std::runtime_error("train: cannot create " + out_dir);

    std::vector<LoadedSample> samples = load_dataset(data_dir);
    if (samples.empty()) throw std::runtime_error("train: dataset " + data_dir + " is empty");
    for (const auto& s : samples) {
        if (s.image.dim(1) != cfg.image_size || s.image.dim(2) != cfg.image_size) {
            throw std::runtime_error("train: sample '" + s.stem + "' has size " + s.image.shape_str() +
                                     ", config expects " + std::to_string(cfg.image_size));
        }
    }

    ParamStore store;
    SegmentationModel model(cfg.model_config(), store);
    AdamWConfig ac;
    ac.lr = cfg.lr;
    ac.beta1 = cfg.adam_beta1;
    ac.beta2 = cfg.adam_beta2;
    ac.eps = cfg.adam_eps;
    ac.weight_decay = cfg.weight_decay;
    AdamW optim(ac);

    Rng rng(cfg.seed ^ 0x7261696e5f726e67ull);
    int start_iter = 0;
    if (!resume_path.empty()) {
        CheckpointMeta meta = load_checkpoint(resume_path, store, &optim);
        rng.set_state(meta.rng_state);
        start_iter = static_cast<int>(meta.iteration);
        if (start_iter > cfg.iterations) {
            throw std::runtime_error("train: checkpoint is already past the configured iterations");
        }
    }

    TrainResult result;
    result.backbone_hash_before = store.hash_prefix("backbone.");

    auto save = [&](int iter, const std::string& path) {
        CheckpointMeta meta;
        meta.iteration = static_cast<uint64_t>(iter);
        meta.optimizer_step = optim.step_count();
        meta.rng_state = rng.state();
        meta.config_text = cfg.serialize();
        save_checkpoint(path, store, &optim, meta, cfg.checkpoint_fp32);
    };

    const int n = static_cast<int>(samples.size());
    for (int iter = start_iter + 1; iter <= cfg.iterations; ++iter) {
        ad::Tape tape;
        ad::TapeScope scope(tape);
        std::vector<ad::Var> totals;
        double bce_sum = 0.0, dice_sum = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& s = samples[static_cast<size_t>(rng.uniform_int(n))];
            ad::Var logits = model.forward(ad::Var(s.image, false)).logits;
            Tensor target({1, s.mask.dim(0), s.mask.dim(1)}, s.mask.vec());
            ad::Var bce = ad::bce_with_logits(logits, target);
            ad::Var dice = ad::dice_loss(logits, target);
            bce_sum += bce.value()[0];
            dice_sum += dice.value()[0];
            totals.push_back(total_loss(bce, dice, cfg.alpha, cfg.beta));
        }
        ad::Var batch_loss = totals[0];
        for (size_t i = 1; i < totals.size(); ++i) batch_loss = ad::add(batch_loss, totals[i]);
        batch_loss = ad::scale(batch_loss, 1.0 / static_cast<double>(cfg.batch_size));

        const double total_v = batch_loss.value()[0];
        if (!std::isfinite(total_v)) {
            throw std::runtime_error("train: non-finite loss at iteration " + std::to_string(iter));
        }
        tape.backward(batch_loss);
        optim.step(store);
        store.zero_grads();

        result.loss_lines.push_back(loss_line(iter, bce_sum / cfg.batch_size,
                                              dice_sum / cfg.batch_size, total_v));
        if (progress && (iter % 50 == 0 || iter == cfg.iterations)) {
            (*progress) << result.loss_lines.back() << "\n";
            progress->flush();
        }
        if (iter % cfg.checkpoint_interval == 0 && iter != cfg.iterations) {
            save(iter, ckpt_name(out_dir, iter));
        }
    }

    result.backbone_hash_after = store.hash_prefix("backbone.");
    result.final_checkpoint = out_dir + "/final.bin";
    save(cfg.iterations, result.final_checkpoint);

    std::ofstream log(out_dir + "/loss_log.txt");
    for (const auto& line : result.loss_lines) log << line << "\n";
    if (cfg.iterations > 0) {
        result.final_train_iou = train_set_iou(model, samples);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "final_train_iou %.17g", result.final_train_iou);
        log << buf << "\n";
        if (progress) (*progress) << buf << "\n";
    }
    return result;
}

EvalRunResult evaluate_run(const std::string& checkpoint_path, const std::string& data_dir,
                           const std::string& out_dir, const RuntimeAblation& ablate,
                           bool allow_missing, std::ostream* progress) {
    TrainConfig cfg = parse_config_text(peek_checkpoint_config(checkpoint_path));
    ParamStore store;
    SegmentationModel model(cfg.model_config(), store);
    load_checkpoint(checkpoint_path, store, nullptr);

    std::vector<LoadedSample> samples = load_dataset(data_dir);
    if (samples.empty()) throw std::runtime_error("eval: dataset " + data_dir + " is empty");

    const std::string pred_dir = out_dir + "/preds";
    std::error_code ec;
    fs::create_directories(pred_dir, ec);
    if (!fs::is_directory(pred_dir)) throw std::runtime_error("eval: cannot create " + pred_dir);
    for (const auto& s : samples) {
        Tensor pred = model.predict_mask(s.image, &ablate);
        write_image(pred_dir + "/" + s.stem + ".pgm", tensor_to_gray(pred));
        if (progress) {
            (*progress) << "eval " << s.stem << "\n";
            progress->flush();
        }
    }

    EvalRunResult res;
    res.report = evaluate_dataset(pred_dir, data_dir, allow_missing, &res.per_image);
    std::ofstream txt(out_dir + "/report.txt");
    txt << res.report.to_text();
    std::ofstream js(out_dir + "/report.json");
    js << res.report.to_json() << "\n";
    return res;
}

InferResult infer_image(const std::string& checkpoint_path, const std::string& image_path,
                        const std::string& out_path) {
    TrainConfig cfg = parse_config_text(peek_checkpoint_config(checkpoint_path));
    ParamStore store;
    SegmentationModel model(cfg.model_config(), store);
    load_checkpoint(checkpoint_path, store, nullptr);

    Tensor img = image_to_tensor(read_image(image_path));
    InferResult r;
    r.in_h = img.dim(1);
    r.in_w = img.dim(2);
    r.out_h = (r.in_h + 31) / 32 * 32;
    r.out_w = (r.in_w + 31) / 32 * 32;
    r.padded = r.out_h != r.in_h || r.out_w != r.in_w;
    Tensor padded = img;
    if (r.padded) {
        padded = Tensor({3, r.out_h, r.out_w});
        for (int64_t c = 0; c < 3; ++c) {
            for (int64_t y = 0; y < r.out_h; ++y) {
                // reflect across the last valid row/col
                int64_t sy = y < r.in_h ? y : 2 * r.in_h - 2 - y;
                sy = std::clamp<int64_t>(sy, 0, r.in_h - 1);
                for (int64_t x = 0; x < r.out_w; ++x) {
                    int64_t sx = x < r.in_w ? x : 2 * r.in_w - 2 - x;
                    sx = std::clamp<int64_t>(sx, 0, r.in_w - 1);
                    padded[c * r.out_h * r.out_w + y * r.out_w + x] =
                        img[c * r.in_h * r.in_w + sy * r.in_w + sx];
                }
            }
        }
    }
    Tensor pred = model.predict_mask(padded);
    ImageU8 out = tensor_to_gray(pred);
    if (r.padded) {
        out.comment = "padded from " + std::to_string(r.in_w) + "x" + std::to_string(r.in_h) +
                      " to " + std::to_string(r.out_w) + "x" + std::to_string(r.out_h) + " (reflect)";
    }
    write_image(out_path, out);
    return r;
}

}  // namespace priormoe
