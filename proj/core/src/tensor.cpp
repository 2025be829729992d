#include "priormoe/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace priormoe {

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel_of(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel_of(shape_) != static_cast<int64_t>(data_.size())) {
        throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str_of(shape_));
    }
}

Tensor Tensor::zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

int64_t Tensor::numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e < 0) throw std::invalid_argument("Tensor: negative extent in shape " + shape_str_of(shape));
        n *= e;
    }
    return n;
}

int64_t Tensor::flat_index(std::initializer_list<int64_t> idx) const {
    if (static_cast<int>(idx.size()) != ndim()) {
        throw std::invalid_argument("Tensor::at: rank mismatch");
    }
    int64_t flat = 0;
    int axis = 0;
    for (int64_t i : idx) {
        flat = flat * shape_[static_cast<size_t>(axis)] + i;
        ++axis;
    }
    return flat;
}

double& Tensor::at(std::initializer_list<int64_t> idx) { return data_[static_cast<size_t>(flat_index(idx))]; }
double Tensor::at(std::initializer_list<int64_t> idx) const { return data_[static_cast<size_t>(flat_index(idx))]; }

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::abs_max() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

std::string Tensor::shape_str() const { return shape_str_of(shape_); }

std::string Tensor::shape_str_of(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

uint64_t hash_bytes(const void* data, size_t n, uint64_t seed) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t hash_tensor(const Tensor& t, uint64_t seed) {
    return hash_bytes(t.data(), sizeof(double) * static_cast<size_t>(t.numel()), seed);
}

}  // namespace priormoe
