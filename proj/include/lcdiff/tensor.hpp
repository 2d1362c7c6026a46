#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcdiff {

// Dense row-major tensor. Image maps use {H, W, C}; conv weights {Kh, Kw, Cin, Cout};
// attention matrices {rows, cols}; scalars {1}.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, T fill = T{}) : shape_(std::move(shape)) {
        for (int d : shape_) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension " + std::to_string(d));
        }
        data_.assign(count(shape_), fill);
    }

    static Tensor from(std::vector<int> shape, std::vector<T> data) {
        Tensor t;
        if (count(shape) != data.size())
            throw std::invalid_argument("Tensor::from: shape/data size mismatch");
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(int i, int j) {
        assert(ndim() == 2);
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }
    const T& at(int i, int j) const { return const_cast<Tensor*>(this)->at(i, j); }

    T& at(int i, int j, int k) {
        assert(ndim() == 3);
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    const T& at(int i, int j, int k) const { return const_cast<Tensor*>(this)->at(i, j, k); }

    T& at(int a, int b, int c, int d) {
        assert(ndim() == 4);
        return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    const T& at(int a, int b, int c, int d) const { return const_cast<Tensor*>(this)->at(a, b, c, d); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(T v) { data_.assign(data_.size(), v); }

    Tensor& operator+=(const Tensor& o) {
        assert(same_shape(o));
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Tensor& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        std::vector<U> d(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<U>(data_[i]);
        return Tensor<U>::from(shape_, std::move(d));
    }

private:
    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return shape.empty() ? 0 : n;
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(static_cast<double>(t[i]))) return false;
    return true;
}

template <typename T>
std::string shape_str(const Tensor<T>& t) {
    std::string s = "{";
    for (int i = 0; i < t.ndim(); ++i) s += (i ? "," : "") + std::to_string(t.dim(i));
    return s + "}";
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    assert(a.same_shape(b));
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace lcdiff
