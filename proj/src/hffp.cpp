#include "hfcr/hffp.hpp"

#include <cmath>
#include <random>

namespace hfcr {

std::string to_string(Arrangement a) {
    switch (a) {
        case Arrangement::parallel: return "parallel";
        case Arrangement::cfo_then_sfo: return "cfo_then_sfo";
        case Arrangement::sfo_then_cfo: return "sfo_then_cfo";
    }
    return "parallel";
}

Arrangement parse_arrangement(const std::string& s) {
    if (s == "parallel") return Arrangement::parallel;
    if (s == "cfo_then_sfo" || s == "cfo->sfo") return Arrangement::cfo_then_sfo;
    if (s == "sfo_then_cfo" || s == "sfo->cfo") return Arrangement::sfo_then_cfo;
    throw std::invalid_argument("unknown arrangement '" + s + "' (expected parallel, cfo_then_sfo or sfo_then_cfo)");
}

template <typename T>
Tensor<T> sinusoidal_position_encoding(std::size_t d, std::size_t h, std::size_t w) {
    const std::size_t r = h * w;
    Tensor<T> pe(Shape{d, r});
    for (std::size_t c = 0; c < d; ++c) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(c / 2) / static_cast<double>(d));
        for (std::size_t p = 0; p < r; ++p) {
            const double angle = static_cast<double>(p) * freq;
            pe[c * r + p] = static_cast<T>(c % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return pe;
}

template <typename T>
Var<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, T factor) {
    return matmul(softmax_lastdim(scale(matmul(q, transpose(k)), factor)), v);
}

namespace {

template <typename T>
Tensor<T> random_projection(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(n)));
    Tensor<T> t(Shape{n, n});
    for (auto& v : t.data()) v = static_cast<T>(normal(rng));
    return t;
}

template <typename T>
void check_params(const FeatureMap<T>& f, const HffpParams<T>& p, const char* op) {
    if (f.d != p.d || f.h != p.h || f.w != p.w) {
        throw ShapeError(std::string(op) + ": feature map " + to_string(Shape{f.d, f.h, f.w}) +
                         " does not match projections built for " + to_string(Shape{p.d, p.h, p.w}));
    }
}

template <typename T>
Var<T> encoded_channel_view(const FeatureMap<T>& f, const HffpParams<T>& p, bool position_encoding) {
    Var<T> view = f.channel_view();
    if (!position_encoding) return view;
    return add(view, view.graph().constant(p.pos_enc));
}

}  // namespace

template <typename T>
HffpParams<T>::HffpParams(std::size_t d_, std::size_t h_, std::size_t w_, std::uint64_t seed)
    : d(d_), h(h_), w(w_), r(h_ * w_) {
    if (d == 0 || r == 0) throw ShapeError("HffpParams: d, h, w must be positive");
    std::mt19937_64 rng(seed);
    wc_q = Parameter<T>("hffp.wc_q", random_projection<T>(r, rng));
    wc_k = Parameter<T>("hffp.wc_k", random_projection<T>(r, rng));
    wc_v = Parameter<T>("hffp.wc_v", random_projection<T>(r, rng));
    ws_q = Parameter<T>("hffp.ws_q", random_projection<T>(d, rng));
    ws_k = Parameter<T>("hffp.ws_k", random_projection<T>(d, rng));
    ws_v = Parameter<T>("hffp.ws_v", random_projection<T>(d, rng));
    pos_enc = sinusoidal_position_encoding<T>(d, h, w);
}

template <typename T>
std::vector<Parameter<T>*> HffpParams<T>::channel_parameters() {
    return {&wc_q, &wc_k, &wc_v};
}

template <typename T>
std::vector<Parameter<T>*> HffpParams<T>::spatial_parameters() {
    return {&ws_q, &ws_k, &ws_v};
}

template <typename T>
Var<T> cfo(const FeatureMap<T>& f, HffpParams<T>& p, bool position_encoding) {
    check_params(f, p, "cfo");
    Graph<T>& g = f.values.graph();
    Var<T> x = encoded_channel_view(f, p, position_encoding);
    return scaled_dot_attention(matmul(x, g.parameter(p.wc_q)), matmul(x, g.parameter(p.wc_k)),
                                matmul(x, g.parameter(p.wc_v)), T{1} / std::sqrt(static_cast<T>(p.r)));
}

template <typename T>
Var<T> sfo(const FeatureMap<T>& f, HffpParams<T>& p, bool position_encoding) {
    check_params(f, p, "sfo");
    Graph<T>& g = f.values.graph();
    Var<T> x = transpose(encoded_channel_view(f, p, position_encoding));
    return scaled_dot_attention(matmul(x, g.parameter(p.ws_q)), matmul(x, g.parameter(p.ws_k)),
                                matmul(x, g.parameter(p.ws_v)), T{1} / std::sqrt(static_cast<T>(p.d)));
}

template <typename T>
FeatureMap<T> fuse(const Var<T>& f_c, const Var<T>& f_s, std::size_t d, std::size_t h, std::size_t w) {
    if (f_c.shape() != Shape{d, h * w} || f_s.shape() != Shape{h * w, d}) {
        throw ShapeError("fuse: expected " + to_string(Shape{d, h * w}) + " and " + to_string(Shape{h * w, d}) +
                         ", got " + to_string(f_c.shape()) + " and " + to_string(f_s.shape()));
    }
    return FeatureMap<T>{add(reshape(f_c, Shape{d, h, w}), reshape(transpose(f_s), Shape{d, h, w})), d, h, w};
}

template <typename T>
FeatureMap<T> apply_hffp(const FeatureMap<T>& f, HffpParams<T>& p, const HffpOptions& opts) {
    const bool cpe = opts.cfo_position_encoding, spe = opts.sfo_position_encoding;
    if (!opts.channel_on && !opts.spatial_on) throw std::invalid_argument("HFFP needs the channel or spatial branch");
    if (!opts.spatial_on) return FeatureMap<T>::from_channel_view(cfo(f, p, cpe), f.d, f.h, f.w);
    if (!opts.channel_on) return FeatureMap<T>::from_spatial_view(sfo(f, p, spe), f.d, f.h, f.w);
    switch (opts.arrangement) {
        case Arrangement::parallel: return fuse(cfo(f, p, cpe), sfo(f, p, spe), f.d, f.h, f.w);
        case Arrangement::cfo_then_sfo: {
            auto mid = FeatureMap<T>::from_channel_view(cfo(f, p, cpe), f.d, f.h, f.w);
            return FeatureMap<T>::from_spatial_view(sfo(mid, p, spe), f.d, f.h, f.w);
        }
        case Arrangement::sfo_then_cfo: {
            auto mid = FeatureMap<T>::from_spatial_view(sfo(f, p, spe), f.d, f.h, f.w);
            return FeatureMap<T>::from_channel_view(cfo(mid, p, cpe), f.d, f.h, f.w);
        }
    }
    throw std::invalid_argument("unknown arrangement");
}

#define HFCR_INSTANTIATE_HFFP(T)                                                                       \
    template Tensor<T> sinusoidal_position_encoding<T>(std::size_t, std::size_t, std::size_t);        \
    template Var<T> scaled_dot_attention(const Var<T>&, const Var<T>&, const Var<T>&, T);              \
    template struct HffpParams<T>;                                                                     \
    template Var<T> cfo(const FeatureMap<T>&, HffpParams<T>&, bool);                                   \
    template Var<T> sfo(const FeatureMap<T>&, HffpParams<T>&, bool);                                   \
    template FeatureMap<T> fuse(const Var<T>&, const Var<T>&, std::size_t, std::size_t, std::size_t); \
    template FeatureMap<T> apply_hffp(const FeatureMap<T>&, HffpParams<T>&, const HffpOptions&);

HFCR_INSTANTIATE_HFFP(float)
HFCR_INSTANTIATE_HFFP(double)

}  // namespace hfcr
