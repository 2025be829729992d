#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "priormoe/params.hpp"
#include "priormoe/tensor.hpp"

namespace priormoe {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam. Moment state is kept per parameter name so it
// serializes into checkpoints; frozen parameters are never touched and carry
// no state.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    // Applies one update to every trainable parameter. A trainable parameter
    // without a populated gradient is an error naming the parameter.
    void step(ParamStore& store);

    int64_t step_count() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }

    struct Slot {
        Tensor m;
        Tensor v;
    };
    std::map<std::string, Slot>& state() { return state_; }
    const std::map<std::string, Slot>& state() const { return state_; }
    void set_step_count(int64_t t) { t_ = t; }

private:
    AdamWConfig cfg_;
    std::map<std::string, Slot> state_;
    int64_t t_ = 0;
};

}  // namespace priormoe
