#pragma once

#include "hfcr/ops.hpp"

namespace hfcr {

/// Per-image feature map of shape d×h×w, with r = h·w.
/// The channel view reads it as d vectors of length r, the spatial view as r vectors of length d.
template <typename T>
struct FeatureMap {
    Var<T> values;
    std::size_t d = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    std::size_t r() const { return h * w; }

    Var<T> channel_view() const { return reshape(values, Shape{d, r()}); }
    Var<T> spatial_view() const { return transpose(channel_view()); }

    static FeatureMap from_channel_view(const Var<T>& view, std::size_t d, std::size_t h, std::size_t w) {
        if (view.shape() != Shape{d, h * w}) {
            throw ShapeError("channel view " + to_string(view.shape()) + " does not match " +
                             to_string(Shape{d, h, w}));
        }
        return FeatureMap{reshape(view, Shape{d, h, w}), d, h, w};
    }

    static FeatureMap from_spatial_view(const Var<T>& view, std::size_t d, std::size_t h, std::size_t w) {
        if (view.shape() != Shape{h * w, d}) {
            throw ShapeError("spatial view " + to_string(view.shape()) + " does not match " +
                             to_string(Shape{d, h, w}));
        }
        return from_channel_view(transpose(view), d, h, w);
    }
};

}  // namespace hfcr
