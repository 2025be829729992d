#include "priormoe/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace priormoe {

void AdamW::step(ParamStore& store) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& p : store.all()) {
        if (!p->trainable) continue;
        if (!p->var.has_grad()) {
            throw std::runtime_error("AdamW::step: trainable parameter '" + p->name +
                                     "' has no gradient");
        }
        auto it = state_.find(p->name);
        if (it == state_.end()) {
            it = state_.emplace(p->name, Slot{Tensor::zeros(p->value().shape()),
                                              Tensor::zeros(p->value().shape())}).first;
        }
        Tensor& m = it->second.m;
        Tensor& v = it->second.v;
        Tensor& w = p->value();
        const Tensor& g = p->var.grad();
        const int64_t n = w.numel();
        for (int64_t i = 0; i < n; ++i) {
            w[i] -= cfg_.lr * cfg_.weight_decay * w[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace priormoe
