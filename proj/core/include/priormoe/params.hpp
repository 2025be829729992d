#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "priormoe/rng.hpp"
#include "priormoe/tape.hpp"
#include "priormoe/tensor.hpp"

namespace priormoe {

// A named weight. `trainable = false` means the optimizer must leave the
// value byte-identical; gradients still flow *through* ops that consume it.
struct Parameter {
    std::string name;
    ad::Var var;
    bool trainable = true;

    const Tensor& value() const { return var.value(); }
    Tensor& value() { return var.value(); }
};

// Registry of all parameters of a model, keyed by unique dotted-path names.
class ParamStore {
public:
    ad::Var add(const std::string& name, Tensor init, bool trainable = true);

    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;
    std::vector<std::shared_ptr<Parameter>>& all() { return ordered_; }
    const std::vector<std::shared_ptr<Parameter>>& all() const { return ordered_; }

    void set_trainable_prefix(const std::string& prefix, bool trainable);
    void zero_grads();

    int64_t count(bool trainable) const;
    uint64_t hash_prefix(const std::string& prefix) const;

private:
    std::vector<std::shared_ptr<Parameter>> ordered_;
    std::map<std::string, size_t> by_name_;
};

// Per-prefix parameter accounting (prefix = first dotted segment).
struct ParamReport {
    struct Row {
        std::string prefix;
        int64_t trainable = 0;
        int64_t frozen = 0;
    };
    std::vector<Row> rows;
    int64_t trainable_total = 0;
    int64_t frozen_total = 0;

    int64_t total() const { return trainable_total + frozen_total; }
    double trainable_ratio() const;
    std::string to_text() const;
    std::string to_json() const;
};

ParamReport count_params(const ParamStore& store);

// Initialization helpers; each parameter draws from its own name-derived
// stream so ablated siblings never shift another module's weights.
namespace init {
Tensor normal(uint64_t seed, const std::string& name, std::vector<int64_t> shape, double stddev);
Tensor zeros(std::vector<int64_t> shape);
Tensor ones(std::vector<int64_t> shape);
Tensor identity2d(int64_t n);
}  // namespace init

}  // namespace priormoe
