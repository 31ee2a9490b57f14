#include "deepsense/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace deepsense {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape entries must be positive, got " + Tensor::shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
        throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str());
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

int64_t Tensor::offset(std::initializer_list<int64_t> idx) const {
    int64_t off = 0;
    size_t i = 0;
    for (int64_t k : idx) {
        off = off * shape_[i] + k;
        ++i;
    }
    return off;
}

std::string Tensor::shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::string Tensor::shape_str() const { return shape_str(shape_); }

}  // namespace deepsense
