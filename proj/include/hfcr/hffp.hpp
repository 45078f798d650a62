#pragma once

#include "hfcr/feature_map.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hfcr {

enum class Arrangement { parallel, cfo_then_sfo, sfo_then_cfo };

std::string to_string(Arrangement a);
Arrangement parse_arrangement(const std::string& s);

struct HffpOptions {
    Arrangement arrangement = Arrangement::parallel;
    bool channel_on = true;
    bool spatial_on = true;
    bool cfo_position_encoding = true;
    bool sfo_position_encoding = true;
};

/// Sine/cosine table over flattened positions p = 0..r-1, laid out d×r so it
/// adds onto the channel view. Channel c uses frequency 10000^(-2⌊c/2⌋/d);
/// even channels take the sine, odd channels the cosine.
template <typename T>
Tensor<T> sinusoidal_position_encoding(std::size_t d, std::size_t h, std::size_t w);

/// softmax(q·kᵀ·scale)·v with the softmax along each query row.
template <typename T>
Var<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, T scale);

template <typename T>
struct HffpParams {
    HffpParams(std::size_t d, std::size_t h, std::size_t w, std::uint64_t seed);
    HffpParams(const HffpParams&) = delete;
    HffpParams& operator=(const HffpParams&) = delete;

    std::size_t d, h, w, r;
    // Channel projections act on the r axis, spatial projections on the d axis.
    Parameter<T> wc_q, wc_k, wc_v;
    Parameter<T> ws_q, ws_k, ws_v;
    Tensor<T> pos_enc;

    std::vector<Parameter<T>*> channel_parameters();
    std::vector<Parameter<T>*> spatial_parameters();
};

/// Channel feature optimization: d×d channel-affinity attention, output d×r.
template <typename T>
Var<T> cfo(const FeatureMap<T>& f, HffpParams<T>& p, bool position_encoding = true);

/// Spatial feature optimization: r×r position-affinity attention, output r×d.
template <typename T>
Var<T> sfo(const FeatureMap<T>& f, HffpParams<T>& p, bool position_encoding = true);

/// Hybrid representation: reshape(f_c) + reshape(f_sᵀ).
template <typename T>
FeatureMap<T> fuse(const Var<T>& f_c, const Var<T>& f_s, std::size_t d, std::size_t h, std::size_t w);

template <typename T>
FeatureMap<T> apply_hffp(const FeatureMap<T>& f, HffpParams<T>& p, const HffpOptions& opts);

}  // namespace hfcr
