#include "priormoe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "priormoe/rng.hpp"

namespace priormoe::ad {

namespace {

double eval_scalar(const std::function<Var(const std::vector<Var>&)>& closure,
                   const std::vector<Tensor>& inputs) {
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.emplace_back(t, false);
    Var out = closure(vars);
    if (!out.defined() || out.value().numel() != 1) {
        throw std::invalid_argument("grad_check: closure must return a scalar");
    }
    return out.value()[0];
}

}  // namespace

double grad_check(const std::function<Var(const std::vector<Var>&)>& closure,
                  const std::vector<Tensor>& inputs, double h, int64_t max_coords_per_input,
                  uint64_t seed) {
    // Analytic pass.
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.emplace_back(t, true);
    std::vector<Tensor> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        Var out = closure(vars);
        if (!out.defined() || out.value().numel() != 1) {
            throw std::invalid_argument("grad_check: closure must return a scalar");
        }
        tape.backward(out);
        for (const auto& v : vars) {
            analytic.push_back(v.has_grad() ? v.grad() : Tensor::zeros(v.value().shape()));
        }
    }

    // Central differences on a (possibly sampled) coordinate set.
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    double max_rel = 0.0;
    std::vector<Tensor> work = inputs;
    for (size_t i = 0; i < work.size(); ++i) {
        const int64_t n = work[i].numel();
        std::vector<int64_t> coords;
        if (max_coords_per_input <= 0 || n <= max_coords_per_input) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t c = 0; c < n; ++c) coords[static_cast<size_t>(c)] = c;
        } else {
            for (int64_t k = 0; k < max_coords_per_input; ++k) coords.push_back(rng.uniform_int(n));
            std::sort(coords.begin(), coords.end());
            coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
        }
        for (int64_t c : coords) {
            const double orig = work[i][c];
            work[i][c] = orig + h;
            const double fp = eval_scalar(closure, work);
            work[i][c] = orig - h;
            const double fm = eval_scalar(closure, work);
            work[i][c] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i][c];
            const double rel = std::fabs(a - numeric) /
                               std::max({1.0, std::fabs(a), std::fabs(numeric)});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace priormoe::ad
