#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace priormoe {

// Dense row-major tensor of doubles. Shapes are lists of extents; a scalar is
// shape {1}. All arithmetic in the library runs in 64-bit; 32-bit exists only
// as a checkpoint storage encoding.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double value);
    static Tensor scalar(double value);

    const std::vector<int64_t>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int axis) const { return shape_[static_cast<size_t>(axis)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Multi-index access, test/debug convenience (slow path).
    double& at(std::initializer_list<int64_t> idx);
    double at(std::initializer_list<int64_t> idx) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    double abs_max() const;

    void fill(double value);
    std::string shape_str() const;

    static int64_t numel_of(const std::vector<int64_t>& shape);
    static std::string shape_str_of(const std::vector<int64_t>& shape);

private:
    int64_t flat_index(std::initializer_list<int64_t> idx) const;

    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

// Byte-exact FNV-1a hash over the tensor payload, used for freeze audits.
uint64_t hash_bytes(const void* data, size_t n, uint64_t seed = 1469598103934665603ull);
uint64_t hash_tensor(const Tensor& t, uint64_t seed = 1469598103934665603ull);

}  // namespace priormoe
