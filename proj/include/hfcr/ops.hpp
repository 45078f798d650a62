#pragma once

// Differentiable operation inventory. Every op records a node on the operand
// graph with its forward value and local backward rule. Shapes never broadcast
// except in add_rowvec; any other mismatch throws ShapeError naming both shapes.

#include "hfcr/autograd.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace hfcr {

enum class Mode { train, eval };

template <typename T>
struct BatchNormState {
    BatchNormState() = default;
    explicit BatchNormState(std::size_t channels)
        : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}

    Tensor<T> running_mean;
    Tensor<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);
};

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> transpose(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T> Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);
/// Rows [begin, end) along axis 0; rank is preserved.
template <typename T> Var<T> slice(const Var<T>& a, std::size_t begin, std::size_t end);

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
/// Adds a length-C vector to every row of an R×C matrix.
template <typename T> Var<T> add_rowvec(const Var<T>& m, const Var<T>& v);

template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> softmax_lastdim(const Var<T>& a);

template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> sum_squares(const Var<T>& a);

/// Mean negative log-softmax of the true class over the rows of an M×N logit matrix.
template <typename T> Var<T> cross_entropy(const Var<T>& logits, std::span<const std::size_t> labels);

/// Stride-1 convolution with zero "same" padding. x: B×C×H×W, w: O×C×k×k with odd k.
template <typename T> Var<T> conv2d_same(const Var<T>& x, const Var<T>& w);
/// 2×2 max pooling, stride 2, floor on odd extents.
template <typename T> Var<T> maxpool2x2(const Var<T>& x);
/// Per-channel batch normalization over (B, H, W). Train mode normalizes with
/// batch statistics and updates the running estimates in `state`.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state, Mode mode);

/// Plain (graph-free) softmax over a vector, with max-subtraction.
template <typename T> std::vector<T> softmax_values(std::span<const T> x);

}  // namespace hfcr
