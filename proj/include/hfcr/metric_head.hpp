#pragma once

#include "hfcr/hfrp.hpp"

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace hfcr {

struct HeadOptions {
    /// Project λ onto [0, ∞) after every optimizer step.
    bool clamp_lambda = false;
    /// Divide each reconstruction error by its element count.
    bool normalize_distance = false;
};

/// λ₁..λ₄ (initialized to 0.5) and the temperature, stored as log τ.
template <typename T>
struct HeadParams {
    HeadParams();
    HeadParams(const HeadParams&) = delete;
    HeadParams& operator=(const HeadParams&) = delete;

    std::array<Parameter<T>, 4> lambda;
    Parameter<T> log_tau;

    T tau() const { return std::exp(log_tau.value.item()); }
    void clamp_lambdas();
};

/// Index of each reconstruction error inside the four-slot distance array.
enum DistanceSlot : std::size_t { query_channel = 0, query_spatial = 1, support_channel = 2, support_spatial = 3 };

template <typename T>
struct ClassScores {
    std::vector<std::vector<T>> distances;      // [query][class]
    std::vector<std::vector<T>> probabilities;  // [query][class]
    std::vector<std::size_t> predicted;
};

/// Squared Euclidean distance ‖recon − target‖².
template <typename T>
Var<T> recon_error(const Var<T>& recon, const Var<T>& target, bool normalize = false);

/// τ·Σ λ_j d_j over the present slots. Absent slots contribute nothing.
template <typename T>
Var<T> total_distance(const std::array<std::optional<Var<T>>, 4>& d, HeadParams<T>& hp);

/// The four reconstruction errors of one bundle, ordered by DistanceSlot.
template <typename T>
std::array<std::optional<Var<T>>, 4> bundle_errors(const ReconBundle<T>& b, bool normalize = false);

/// p_n = exp(−d_n) / Σ_m exp(−d_m).
template <typename T>
std::vector<T> class_probabilities(std::span<const T> distances);

/// Row-wise class probabilities for an M×N distance matrix.
template <typename T>
Var<T> class_probabilities(const Var<T>& distances);

/// −(1/M) Σ_i log p_i(label_i).
template <typename T>
T episode_loss(std::span<const std::vector<T>> probs, std::span<const std::size_t> labels);

/// Same loss as a graph node, computed from an M×N distance matrix.
template <typename T>
Var<T> episode_loss(const Var<T>& distances, std::span<const std::size_t> labels);

/// Nearest-prototype scoring on raw features. support is class-major (n·K + k);
/// every tensor is flattened before use.
template <typename T>
ClassScores<T> protonet_score(std::span<const Tensor<T>> support, std::size_t way, std::size_t shot,
                              std::span<const Tensor<T>> queries);

/// Graph form of the prototype distances: M×N squared distances.
template <typename T>
Var<T> protonet_distances(const EpisodeFeatures<T>& features);

/// Assembles M·N scalar nodes (query-major) into an M×N matrix.
template <typename T>
Var<T> stack_distances(std::span<const Var<T>> scalars, std::size_t queries, std::size_t way);

/// Converts a distance matrix into probabilities and argmax predictions.
template <typename T>
ClassScores<T> scores_from_distances(const Tensor<T>& distances);

}  // namespace hfcr
