#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "gradsam/errors.hpp"

namespace gradsam {

// Dense row-major tensor. Rank is dynamic but everything in this project is
// a matrix, a vector, or a 1x1 scalar.
template <typename T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<size_t> shape)
        : shape_(std::move(shape)), data_(count_of(shape_), T(0)) {}

    Tensor(std::vector<size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (count_of(shape_) != data_.size())
            throw DimensionError("Tensor: data length does not match shape");
    }

    static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<size_t> shape, T fill) {
        Tensor t(std::move(shape));
        for (T& v : t.data_) v = fill;
        return t;
    }

    static Tensor scalar(T v) { return Tensor({1, 1}, {v}); }

    // Row-major matrix literal, mostly for tests.
    static Tensor matrix(size_t rows, size_t cols, std::initializer_list<T> values) {
        return Tensor({rows, cols}, std::vector<T>(values));
    }

    const std::vector<size_t>& shape() const { return shape_; }
    size_t ndim() const { return shape_.size(); }
    size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    size_t cols() const { return shape_.size() < 2 ? (shape_.empty() ? 0 : 1) : shape_[1]; }

    bool is_matrix() const { return shape_.size() == 2; }
    bool is_scalar() const { return numel() == 1; }

    T& operator()(size_t i) { return data_[i]; }
    const T& operator()(size_t i) const { return data_[i]; }
    T& operator()(size_t i, size_t j) { return data_[i * cols() + j]; }
    const T& operator()(size_t i, size_t j) const { return data_[i * cols() + j]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void fill(T v) {
        for (T& x : data_) x = v;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
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
    static size_t count_of(const std::vector<size_t>& shape) {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    std::vector<size_t> shape_;
    std::vector<T> data_;
};

}  // namespace gradsam
