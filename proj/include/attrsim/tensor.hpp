#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace attrsim {

// Thrown by the engine and the modules built on it. Messages name the
// offending node/op/field so failures are actionable.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Dense row-major tensor of 64-bit floats. Rank is arbitrary; all compute
// ops view the data as a 2-D matrix of rows() x cols() where cols() is the
// last dimension and rows() collapses the leading ones.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

    static Tensor scalar(double v) {
        Tensor t({1, 1});
        t.data_[0] = v;
        return t;
    }

    static Tensor from(std::vector<int> shape, std::vector<double> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        if (checked_size(t.shape_) != static_cast<int64_t>(data.size()))
            throw Error("Tensor::from: shape/data size mismatch");
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }

    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    int cols() const { return shape_.empty() ? 0 : shape_.back(); }
    int rows() const {
        if (shape_.empty()) return 0;
        int64_t r = 1;
        for (size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
        return static_cast<int>(r);
    }

    double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols() + c]; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    double sum() const {
        double s = 0.0;
        for (double v : data_) s += v;
        return s;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    static int64_t checked_size(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw Error("Tensor: nonpositive dimension");
            n *= d;
        }
        return shape.empty() ? 0 : n;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

inline bool approx_equal(const Tensor& a, const Tensor& b, double tol) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.size(); ++i)
        if (std::fabs(a[i] - b[i]) > tol) return false;
    return true;
}

}  // namespace attrsim
