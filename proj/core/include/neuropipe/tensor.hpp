#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "neuropipe/errors.hpp"

namespace neuropipe {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "," : "") << shape[i];
    }
    out << "]";
    return out.str();
}

// Row-major strides: the last axis is contiguous (channels-last layout).
inline Shape row_major_strides(const Shape& shape) {
    Shape strides(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    return strides;
}

// Dense row-major tensor. float for parameters and activations, double for
// the gradient-checking mode.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape)
        : shape_(std::move(shape)), data_(static_cast<size_t>(numel(shape_)), T(0)) {
        for (int64_t d : shape_) {
            require(d >= 1, ErrorCode::InvalidArgument,
                    "tensor dims must be >= 1, got " + shape_str(shape_));
        }
    }

    TensorT(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        require(static_cast<int64_t>(data_.size()) == numel(shape_), ErrorCode::ShapeMismatch,
                "data length does not match shape " + shape_str(shape_));
    }

    static TensorT full(Shape shape, T value) {
        TensorT t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    int64_t dim(int axis) const { return shape_[static_cast<size_t>(axis)]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    int64_t offset(std::span<const int64_t> index) const {
        int64_t off = 0;
        int64_t stride = 1;
        for (int axis = rank() - 1; axis >= 0; --axis) {
            off += index[static_cast<size_t>(axis)] * stride;
            stride *= shape_[static_cast<size_t>(axis)];
        }
        return off;
    }

    T& at(std::span<const int64_t> index) { return data_[static_cast<size_t>(offset(index))]; }
    const T& at(std::span<const int64_t> index) const {
        return data_[static_cast<size_t>(offset(index))];
    }

    TensorT reshaped(Shape new_shape) const {
        require(numel(new_shape) == size(), ErrorCode::ShapeMismatch,
                "reshape " + shape_str(shape_) + " -> " + shape_str(new_shape));
        return TensorT(std::move(new_shape), data_);
    }

    template <typename U>
    TensorT<U> cast() const {
        std::vector<U> out(data_.size());
        for (size_t i = 0; i < data_.size(); ++i) {
            out[i] = static_cast<U>(data_[i]);
        }
        return TensorT<U>(shape_, std::move(out));
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// Iterates all index tuples of a shape in row-major order.
class IndexIter {
public:
    explicit IndexIter(const Shape& shape)
        : shape_(shape), index_(shape.size(), 0), done_(numel(shape) == 0) {}

    bool done() const { return done_; }
    std::span<const int64_t> index() const { return index_; }

    void next() {
        for (int axis = static_cast<int>(shape_.size()) - 1; axis >= 0; --axis) {
            if (++index_[static_cast<size_t>(axis)] < shape_[static_cast<size_t>(axis)]) {
                return;
            }
            index_[static_cast<size_t>(axis)] = 0;
        }
        done_ = true;
    }

private:
    Shape shape_;
    Shape index_;
    bool done_;
};

}  // namespace neuropipe
