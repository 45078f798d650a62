#pragma once

#include "hfcr/feature_map.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace hfcr {

struct HfrpOptions {
    bool channel_on = true;
    bool spatial_on = true;
    bool position_encoding = false;
};

/// Reconstruction projections. One set of tensors projects both support and
/// query features.
template <typename T>
struct HfrpParams {
    HfrpParams(std::size_t d, std::size_t h, std::size_t w, std::uint64_t seed);
    HfrpParams(const HfrpParams&) = delete;
    HfrpParams& operator=(const HfrpParams&) = delete;

    std::size_t d, h, w, r;
    Parameter<T> ac_q, ac_k, ac_v;  // r×r
    Parameter<T> as_q, as_k, as_v;  // d×d
    Tensor<T> pos_enc;              // d×r, used only when HfrpOptions::position_encoding

    std::vector<Parameter<T>*> channel_parameters();
    std::vector<Parameter<T>*> spatial_parameters();
};

/// Channel-view query reconstructed from each support shot, averaged over shots. Output d×r.
template <typename T>
Var<T> cfr_query(const Var<T>& query, std::span<const Var<T>> shots, HfrpParams<T>& p);

/// Each shot reconstructed from the query, concatenated along r. Output d×(K·r).
template <typename T>
Var<T> cfr_support(std::span<const Var<T>> shots, const Var<T>& query, HfrpParams<T>& p);

/// Spatial-view query (r×d) reconstructed by attending over the stacked support (K·r×d).
template <typename T>
Var<T> sfr_query(const Var<T>& query, const Var<T>& support_stack, HfrpParams<T>& p);

/// Stacked support (K·r×d) reconstructed from the spatial-view query (r×d).
template <typename T>
Var<T> sfr_support(const Var<T>& support_stack, const Var<T>& query, HfrpParams<T>& p);

template <typename T>
Var<T> residual_connect(const Var<T>& recon, const Var<T>& original);

/// Residual-connected reconstructions for one (query, class) pair together with
/// the value-projected targets they are scored against. Branches switched off
/// are left empty.
template <typename T>
struct ReconBundle {
    std::size_t query = 0;
    std::size_t cls = 0;
    std::optional<Var<T>> q_hat_c;     // d×r
    std::optional<Var<T>> q_hat_s;     // r×d
    std::optional<Var<T>> s_hat_c;     // d×K·r
    std::optional<Var<T>> s_hat_s;     // K·r×d
    std::optional<Var<T>> q_target_c;  // Q_i·A_c_V
    std::optional<Var<T>> q_target_s;  // Q_i·A_s_V (spatial view)
    std::optional<Var<T>> s_target_c;  // [S_n,k·A_c_V]_k
    std::optional<Var<T>> s_target_s;  // S_n stack·A_s_V
};

/// Feature maps of one episode. Support is class-major: index n·K + k.
template <typename T>
struct EpisodeFeatures {
    std::size_t way = 0;
    std::size_t shot = 0;
    std::vector<FeatureMap<T>> support;
    std::vector<FeatureMap<T>> query;
};

/// Bundles for every (query i, class n), ordered i·N + n.
template <typename T>
std::vector<ReconBundle<T>> reconstruct_all(const EpisodeFeatures<T>& features, const HfrpOptions& opts,
                                            HfrpParams<T>& p);

}  // namespace hfcr
