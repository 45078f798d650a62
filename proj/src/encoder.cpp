#include "hfcr/encoder.hpp"

#include <cmath>
#include <random>

namespace hfcr {

std::string to_string(Backbone b) {
    return b == Backbone::conv4 ? "conv4" : "resnet12";
}

Backbone parse_backbone(const std::string& s) {
    if (s == "conv4") return Backbone::conv4;
    if (s == "resnet12") return Backbone::resnet12;
    throw std::invalid_argument("unknown backbone '" + s + "' (expected conv4 or resnet12)");
}

std::size_t EncoderConfig::output_side() const {
    std::size_t side = input_side;
    for (std::size_t i = 0; i < blocks; ++i) side /= 2;
    return side;
}

void EncoderConfig::validate() const {
    if (backbone == Backbone::resnet12) throw std::invalid_argument("backbone resnet12: not implemented");
    if (blocks == 0 || channels == 0 || input_channels == 0) {
        throw std::invalid_argument("encoder blocks, channels and input channels must be positive");
    }
    if (output_side() == 0) {
        throw std::invalid_argument("input side " + std::to_string(input_side) + " is too small for " +
                                    std::to_string(blocks) + " halvings");
    }
}

template <typename T>
Conv4Encoder<T>::Conv4Encoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    std::size_t in = cfg_.input_channels;
    kernels_.reserve(cfg_.blocks);
    gammas_.reserve(cfg_.blocks);
    betas_.reserve(cfg_.blocks);
    for (std::size_t b = 0; b < cfg_.blocks; ++b) {
        const std::string prefix = "encoder.block" + std::to_string(b);
        // Kaiming fan-in scaling.
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in * 9)));
        Tensor<T> k(Shape{cfg_.channels, in, 3, 3});
        for (auto& v : k.data()) v = static_cast<T>(normal(rng));
        kernels_.emplace_back(prefix + ".conv", std::move(k));
        gammas_.emplace_back(prefix + ".bn.gamma", Tensor<T>(Shape{cfg_.channels}, T{1}));
        betas_.emplace_back(prefix + ".bn.beta", Tensor<T>(Shape{cfg_.channels}, T{0}));
        bn_.emplace_back(cfg_.channels);
        in = cfg_.channels;
    }
}

template <typename T>
Var<T> Conv4Encoder<T>::forward(Graph<T>& g, const Var<T>& images, Mode mode) {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != cfg_.input_channels || s[2] != cfg_.input_side || s[3] != cfg_.input_side) {
        throw ShapeError("encoder expects B×" + std::to_string(cfg_.input_channels) + "×" +
                         std::to_string(cfg_.input_side) + "×" + std::to_string(cfg_.input_side) + " images, got " +
                         to_string(s));
    }
    if (!images.value().all_finite()) throw NumericError("encoder: non-finite pixel values");
    Var<T> x = images;
    for (std::size_t b = 0; b < cfg_.blocks; ++b) {
        x = conv2d_same(x, g.parameter(kernels_[b]));
        x = batch_norm(x, g.parameter(gammas_[b]), g.parameter(betas_[b]), bn_[b], mode);
        x = relu(x);
        x = maxpool2x2(x);
    }
    return x;
}

template <typename T>
std::vector<FeatureMap<T>> split_batch(const Var<T>& batch) {
    const Shape& s = batch.shape();
    if (s.size() != 4) throw ShapeError("split_batch: expected B×d×h×w, got " + to_string(s));
    std::vector<FeatureMap<T>> maps;
    maps.reserve(s[0]);
    for (std::size_t i = 0; i < s[0]; ++i) {
        maps.push_back(FeatureMap<T>{reshape(slice(batch, i, i + 1), Shape{s[1], s[2], s[3]}), s[1], s[2], s[3]});
    }
    return maps;
}

template <typename T>
std::vector<FeatureMap<T>> Conv4Encoder<T>::conv4_forward(Graph<T>& g, const Tensor<T>& images, Mode mode) {
    return split_batch(forward(g, g.constant(images), mode));
}

template <typename T>
std::vector<Parameter<T>*> Conv4Encoder<T>::parameters() {
    std::vector<Parameter<T>*> out;
    for (std::size_t b = 0; b < cfg_.blocks; ++b) {
        out.push_back(&kernels_[b]);
        out.push_back(&gammas_[b]);
        out.push_back(&betas_[b]);
    }
    return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Conv4Encoder<T>::buffers() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (std::size_t b = 0; b < cfg_.blocks; ++b) {
        const std::string prefix = "encoder.block" + std::to_string(b) + ".bn.";
        out.emplace_back(prefix + "running_mean", &bn_[b].running_mean);
        out.emplace_back(prefix + "running_var", &bn_[b].running_var);
    }
    return out;
}

template class Conv4Encoder<float>;
template class Conv4Encoder<double>;
template std::vector<FeatureMap<float>> split_batch(const Var<float>&);
template std::vector<FeatureMap<double>> split_batch(const Var<double>&);

}  // namespace hfcr
