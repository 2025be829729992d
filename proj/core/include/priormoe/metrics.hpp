#pragma once

#include <string>
#include <vector>

#include "priormoe/tensor.hpp"

namespace priormoe {

// pred: continuous map in [0,1]; gt: binary map {0,1}; both [H,W].
double iou(const Tensor& pred, const Tensor& gt, double threshold = 0.5);
double dice_coeff(const Tensor& pred, const Tensor& gt, double threshold = 0.5);
double mae(const Tensor& pred, const Tensor& gt);

// Weighted F-measure with a 7x7 Gaussian (sigma 5) dependency kernel,
// exponential distance weighting and beta^2 = 1. Background errors borrow the
// error of the nearest foreground pixel (ties: smallest row-major index).
// Empty ground truth returns 0 and sets *empty_gt when provided.
double weighted_fmeasure(const Tensor& pred, const Tensor& gt, bool* empty_gt = nullptr);

struct MetricReport {
    double iou = 0.0;
    double dice = 0.0;
    double f_w = 0.0;
    double mae = 0.0;
    int n_images = 0;
    std::vector<std::string> empty_gt_stems;  // flagged images (wFm forced to 0)

    std::string to_text() const;
    std::string to_json() const;
};

struct PerImageMetrics {
    std::string stem;
    double iou = 0.0, dice = 0.0, f_w = 0.0, mae = 0.0;
    bool empty_gt = false;
};

// Matching stems pred_dir/<stem>.(pgm|png) vs gt_dir/msk_<stem>.* or
// <stem>.*; deterministic lexicographic order. Unmatched stems throw unless
// allow_missing, in which case they are skipped and reported.
MetricReport evaluate_dataset(const std::string& pred_dir, const std::string& gt_dir,
                              bool allow_missing = false,
                              std::vector<PerImageMetrics>* per_image = nullptr,
                              std::vector<std::string>* unmatched = nullptr);

MetricReport aggregate(const std::vector<PerImageMetrics>& rows);

}  // namespace priormoe
