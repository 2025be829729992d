#include "priormoe/params.hpp"

#include <sstream>
#include <stdexcept>

namespace priormoe {

ad::Var ParamStore::add(const std::string& name, Tensor initv, bool trainable) {
    if (by_name_.count(name)) {
        throw std::invalid_argument("ParamStore: duplicate parameter name '" + name + "'");
    }
    auto p = std::make_shared<Parameter>();
    p->name = name;
    p->trainable = trainable;
    p->var = ad::Var(std::move(initv), trainable);
    by_name_[name] = ordered_.size();
    ordered_.push_back(std::move(p));
    return ordered_.back()->var;
}

Parameter* ParamStore::find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : ordered_[it->second].get();
}

const Parameter* ParamStore::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : ordered_[it->second].get();
}

void ParamStore::set_trainable_prefix(const std::string& prefix, bool trainable) {
    for (auto& p : ordered_) {
        if (p->name.rfind(prefix, 0) == 0) {
            p->trainable = trainable;
            p->var.node()->requires_grad = trainable;
        }
    }
}

void ParamStore::zero_grads() {
    for (auto& p : ordered_) p->var.node()->drop_grad();
}

int64_t ParamStore::count(bool trainable) const {
    int64_t n = 0;
    for (const auto& p : ordered_) {
        if (p->trainable == trainable) n += p->value().numel();
    }
    return n;
}

uint64_t ParamStore::hash_prefix(const std::string& prefix) const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& p : ordered_) {
        if (p->name.rfind(prefix, 0) == 0) {
            h = hash_bytes(p->name.data(), p->name.size(), h);
            h = hash_tensor(p->value(), h);
        }
    }
    return h;
}

double ParamReport::trainable_ratio() const {
    const int64_t t = total();
    return t == 0 ? 0.0 : static_cast<double>(trainable_total) / static_cast<double>(t);
}

std::string ParamReport::to_text() const {
    std::ostringstream os;
    os << "prefix            trainable        frozen\n";
    for (const auto& r : rows) {
        os << r.prefix;
        for (size_t i = r.prefix.size(); i < 16; ++i) os << ' ';
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%11lld   %11lld\n", static_cast<long long>(r.trainable),
                      static_cast<long long>(r.frozen));
        os << buf;
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "total           %11lld   %11lld\n",
                  static_cast<long long>(trainable_total), static_cast<long long>(frozen_total));
    os << buf;
    std::snprintf(buf, sizeof(buf), "trainable ratio %.6f\n", trainable_ratio());
    os << buf;
    return os.str();
}

std::string ParamReport::to_json() const {
    std::ostringstream os;
    os << "{\"prefixes\":{";
    for (size_t i = 0; i < rows.size(); ++i) {
        if (i) os << ",";
        os << "\"" << rows[i].prefix << "\":{\"trainable\":" << rows[i].trainable
           << ",\"frozen\":" << rows[i].frozen << "}";
    }
    os << "},\"trainable\":" << trainable_total << ",\"frozen\":" << frozen_total
       << ",\"ratio\":" << trainable_ratio() << "}";
    return os.str();
}

ParamReport count_params(const ParamStore& store) {
    ParamReport rep;
    std::map<std::string, size_t> idx;
    for (const auto& p : store.all()) {
        const auto dot = p->name.find('.');
        std::string prefix = dot == std::string::npos ? p->name : p->name.substr(0, dot + 1);
        auto it = idx.find(prefix);
        if (it == idx.end()) {
            it = idx.emplace(prefix, rep.rows.size()).first;
            rep.rows.push_back({prefix, 0, 0});
        }
        auto& row = rep.rows[it->second];
        if (p->trainable) {
            row.trainable += p->value().numel();
            rep.trainable_total += p->value().numel();
        } else {
            row.frozen += p->value().numel();
            rep.frozen_total += p->value().numel();
        }
    }
    return rep;
}

namespace init {

Tensor normal(uint64_t seed, const std::string& name, std::vector<int64_t> shape, double stddev) {
    Rng rng = Rng::derive(seed, name);
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

Tensor zeros(std::vector<int64_t> shape) { return Tensor::zeros(std::move(shape)); }

Tensor ones(std::vector<int64_t> shape) { return Tensor::full(std::move(shape), 1.0); }

Tensor identity2d(int64_t n) {
    Tensor t({n, n});
    for (int64_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
    return t;
}

}  // namespace init

}  // namespace priormoe
