#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "priormoe/config.hpp"
#include "priormoe/dataset.hpp"
#include "priormoe/metrics.hpp"
#include "priormoe/model.hpp"

namespace priormoe {

struct TrainResult {
    std::vector<std::string> loss_lines;  // "iter N bce X dice Y total Z", %.17g fields
    double final_train_iou = -1.0;        // in-memory eval over the training set
    std::string final_checkpoint;
    uint64_t backbone_hash_before = 0;
    uint64_t backbone_hash_after = 0;
};

// Full training run: load dataset, build model, iterate batches, checkpoint
// every checkpoint_interval iterations and at the end. A non-empty
// resume_path restores parameters, optimizer moments, RNG state and the
// iteration counter, and the run continues to cfg.iterations.
TrainResult train_run(const TrainConfig& cfg, const std::string& data_dir,
                      const std::string& out_dir, std::ostream* progress = nullptr,
                      const std::string& resume_path = "");

struct EvalRunResult {
    MetricReport report;
    std::vector<PerImageMetrics> per_image;
};

// Rebuilds the model from the checkpoint's embedded config, writes prediction
// maps to out_dir/preds and reports metrics against the dataset masks.
EvalRunResult evaluate_run(const std::string& checkpoint_path, const std::string& data_dir,
                           const std::string& out_dir, const RuntimeAblation& ablate,
                           bool allow_missing = false, std::ostream* progress = nullptr);

struct InferResult {
    int64_t in_h = 0, in_w = 0;
    int64_t out_h = 0, out_w = 0;  // padded dims when padding was applied
    bool padded = false;
};

// Single-image inference; reflection-pads inputs whose extents are not
// divisible by 32 and records the padding in the output file comment.
InferResult infer_image(const std::string& checkpoint_path, const std::string& image_path,
                        const std::string& out_path);

}  // namespace priormoe
