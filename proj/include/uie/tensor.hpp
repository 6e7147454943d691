#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace uie {

// Dense row-major tensor of doubles. Rank is dynamic; images and feature
// maps use (B, C, H, W), per-channel vectors use (B, C) or (C).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<long> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

    Tensor(std::vector<long> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::size_t>(checked_numel(shape_)) != data_.size())
            throw std::invalid_argument("tensor: data size does not match shape");
    }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }
    static Tensor full_like(const Tensor& t, double v) { return Tensor(t.shape_, std::vector<double>(t.size(), v)); }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<long>& shape() const { return shape_; }
    long dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // NCHW accessors.
    double& at(long b, long c, long h, long w) {
        return data_[((static_cast<std::size_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at(long b, long c, long h, long w) const {
        return data_[((static_cast<std::size_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double& at(long i, long j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    double at(long i, long j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape_.size(); ++i)
            s += std::to_string(shape_[i]) + (i + 1 < shape_.size() ? "," : "");
        return s + ")";
    }

private:
    static long checked_numel(const std::vector<long>& shape) {
        long n = 1;
        for (long d : shape) {
            if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
            n *= d;
        }
        return shape.empty() ? 0 : n;
    }

    std::vector<long> shape_;
    std::vector<double> data_;
};

inline void require_shape_match(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

} // namespace uie
