#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hfcr {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// 64-byte aligned buffers: Eigen picks its scalar/packet split from the data
// alignment, so equal inputs must sit at equal alignment to round identically.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

// Dense row-major n-d array. Rank 0 is a scalar holding one element.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() : data_(1, T{0}) {}

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
        check_extents();
        data_.assign(numel(shape_), fill);
    }

    Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        check_extents();
        if (numel(shape_) != data_.size()) {
            throw ShapeError("tensor shape " + hfcr::to_string(shape_) + " needs " +
                             std::to_string(numel(shape_)) + " elements, got " +
                             std::to_string(data_.size()));
        }
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= shape_.size()) {
            throw ShapeError("axis " + std::to_string(axis) + " out of range for " + hfcr::to_string(shape_));
        }
        return shape_[axis];
    }
    std::size_t size() const { return data_.size(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T> to_vector() const { return {data_.begin(), data_.end()}; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    T item() const {
        if (data_.size() != 1) {
            throw ShapeError("item() on non-scalar tensor " + hfcr::to_string(shape_));
        }
        return data_[0];
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    Tensor reshaped(Shape shape) const {
        if (numel(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + hfcr::to_string(shape_) + " to " + hfcr::to_string(shape));
        }
        Tensor out;
        out.shape_ = std::move(shape);
        out.data_ = data_;
        return out;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Tensor& other) const = default;

private:
    void check_extents() const {
        for (auto e : shape_) {
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + hfcr::to_string(shape_));
        }
    }

    Shape shape_;
    std::vector<T, AlignedAllocator<T>> data_;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    T m{0};
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace hfcr
