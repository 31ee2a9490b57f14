#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace deepsense {

/// Dense row-major tensor of doubles. Scalars use shape {1}.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor full(std::vector<int64_t> shape, double v);
    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor ones(std::vector<int64_t> shape) { return full(std::move(shape), 1.0); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int axis) const { return shape_[static_cast<size_t>(axis)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }
    bool is_scalar() const { return data_.size() == 1; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(std::initializer_list<int64_t> idx) { return data_[static_cast<size_t>(offset(idx))]; }
    double at(std::initializer_list<int64_t> idx) const { return data_[static_cast<size_t>(offset(idx))]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;

    /// Shape rendered as "[a, b, c]" for error messages.
    std::string shape_str() const;
    static std::string shape_str(const std::vector<int64_t>& shape);

private:
    int64_t offset(std::initializer_list<int64_t> idx) const;

    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int64_t>& shape);

}  // namespace deepsense
