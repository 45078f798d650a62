#include "hfcr/pipeline_check.hpp"

#include "hfcr/model.hpp"

#include <random>

namespace hfcr {

GradCheckResult pipeline_gradcheck(std::uint64_t seed, double eps) {
    ModelConfig cfg;
    cfg.encoder.blocks = 2;
    cfg.encoder.channels = 4;
    cfg.encoder.input_side = 8;
    cfg.seed = seed;
    HfcrModel<double> model(cfg);

    // Nudge λ and τ off their symmetric initial values so every head gradient is distinct.
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& l : model.head().lambda) l.value[0] = 0.3 + 0.4 * unit(rng);
    model.head().log_tau.value[0] = 0.2 * unit(rng) - 0.1;

    const std::size_t way = 2, shot = 2, queries = 1;
    Tensor<double> images(Shape{way * shot + way * queries, 3, 8, 8});
    for (auto& v : images.data()) v = unit(rng);
    const std::vector<std::size_t> labels = {0, 1};

    const LossBuilder loss = [&](Graph<double>& g) {
        return episode_loss(model.episode_distances(g, images, way, shot, Mode::train), labels);
    };
    return grad_check(loss, model.trainable(), eps);
}

}  // namespace hfcr
