#pragma once

#include "hfcr/encoder.hpp"
#include "hfcr/hffp.hpp"
#include "hfcr/hfrp.hpp"
#include "hfcr/metric_head.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace hfcr {

struct ModelConfig {
    EncoderConfig encoder;
    bool hffp = true;
    bool hfrp = true;
    bool channel = true;
    bool spatial = true;
    Arrangement arrangement = Arrangement::parallel;
    bool sfo_position_encoding = true;
    bool hfrp_position_encoding = false;
    HeadOptions head;
    std::uint64_t seed = 1;

    /// Throws std::invalid_argument on an unusable toggle combination.
    void validate() const;
    /// "protonet", "hffp-only", "hfrp-only" or "full".
    std::string mode() const;

    HffpOptions hffp_options() const;
    HfrpOptions hfrp_options() const;
};

/// All trainable state plus the forward pass from episode images to the M×N
/// matrix of class distances d_(n,i).
template <typename T>
class HfcrModel {
public:
    explicit HfcrModel(const ModelConfig& cfg);
    HfcrModel(const HfcrModel&) = delete;
    HfcrModel& operator=(const HfcrModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    Conv4Encoder<T>& encoder() { return encoder_; }
    HffpParams<T>& hffp() { return hffp_; }
    HfrpParams<T>& hfrp() { return hfrp_; }
    HeadParams<T>& head() { return head_; }

    /// images: N·K support images (class-major) followed by the queries.
    Var<T> episode_distances(Graph<T>& g, const Tensor<T>& images, std::size_t way, std::size_t shot, Mode mode);

    /// Distances from already-encoded feature maps.
    Var<T> distances_from_features(const EpisodeFeatures<T>& raw);

    /// Eval-mode scoring without gradient tracking.
    ClassScores<T> predict(const Tensor<T>& images, std::size_t way, std::size_t shot);

    /// Parameters the active configuration actually uses.
    std::vector<Parameter<T>*> trainable();

    /// Every persisted tensor (parameters and batch-norm running statistics) by name.
    std::vector<std::pair<std::string, Tensor<T>*>> state();

    /// Applies post-update projections (λ clamping when enabled).
    void after_step();

private:
    ModelConfig cfg_;
    Conv4Encoder<T> encoder_;
    HffpParams<T> hffp_;
    HfrpParams<T> hfrp_;
    HeadParams<T> head_;
};

extern template class HfcrModel<float>;
extern template class HfcrModel<double>;

}  // namespace hfcr
