#pragma once

#include <string>
#include <vector>

#include "priormoe/model.hpp"

namespace priormoe {

struct GradSuiteRow {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 1e-4;
    bool pass = false;
};

// Finite-difference sweep over every differentiable operation plus composed
// model paths on 32x32 inputs (64-bit, h = 1e-5). Parameters of model-level
// rows are checked on sampled coordinates.
std::vector<GradSuiteRow> run_gradient_suite(uint64_t seed = 17);

// Reverse-mode vs central differences for all trainable parameters of a
// model, `coords_per_param` sampled coordinates each; scalar objective is the
// sum of the output logits. Returns the max relative error.
double model_grad_check(SegmentationModel& model, ParamStore& store, const Tensor& image,
                        double h = 1e-5, int coords_per_param = 2, uint64_t seed = 0);

}  // namespace priormoe
