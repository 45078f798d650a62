#pragma once

#include "hfcr/feature_map.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace hfcr {

enum class Backbone { conv4, resnet12 };

std::string to_string(Backbone b);
Backbone parse_backbone(const std::string& s);

struct EncoderConfig {
    Backbone backbone = Backbone::conv4;
    std::size_t blocks = 4;
    std::size_t channels = 64;
    std::size_t input_side = 84;
    std::size_t input_channels = 3;

    /// Spatial side after `blocks` floor-halvings.
    std::size_t output_side() const;
    void validate() const;
};

/// Stack of conv(3×3, same) → batch-norm → relu → max-pool(2×2) blocks.
template <typename T>
class Conv4Encoder {
public:
    Conv4Encoder(const EncoderConfig& cfg, std::uint64_t seed);
    Conv4Encoder(const Conv4Encoder&) = delete;
    Conv4Encoder& operator=(const Conv4Encoder&) = delete;

    const EncoderConfig& config() const { return cfg_; }

    /// images: B×C_in×s×s → B×C×s'×s'.
    Var<T> forward(Graph<T>& g, const Var<T>& images, Mode mode);

    /// Runs the backbone on a batch and splits the result into B feature maps.
    std::vector<FeatureMap<T>> conv4_forward(Graph<T>& g, const Tensor<T>& images, Mode mode);

    std::vector<Parameter<T>*> parameters();
    std::vector<std::pair<std::string, Tensor<T>*>> buffers();

private:
    EncoderConfig cfg_;
    std::vector<Parameter<T>> kernels_;
    std::vector<Parameter<T>> gammas_;
    std::vector<Parameter<T>> betas_;
    std::vector<BatchNormState<T>> bn_;
};

/// Splits a B×d×h×w batch into B feature maps.
template <typename T>
std::vector<FeatureMap<T>> split_batch(const Var<T>& batch);

extern template class Conv4Encoder<float>;
extern template class Conv4Encoder<double>;

}  // namespace hfcr
