#include "hfcr/model.hpp"

namespace hfcr {

void ModelConfig::validate() const {
    encoder.validate();
    if ((hffp || hfrp) && !channel && !spatial) {
        throw std::invalid_argument("--channel off and --spatial off cannot both be set while HFFP or HFRP is on");
    }
}

std::string ModelConfig::mode() const {
    if (!hffp && !hfrp) return "protonet";
    if (!hffp) return "hfrp-only";
    if (!hfrp) return "hffp-only";
    return "full";
}

HffpOptions ModelConfig::hffp_options() const {
    HffpOptions o;
    o.arrangement = arrangement;
    o.channel_on = channel;
    o.spatial_on = spatial;
    o.sfo_position_encoding = sfo_position_encoding;
    return o;
}

HfrpOptions ModelConfig::hfrp_options() const {
    return HfrpOptions{channel, spatial, hfrp_position_encoding};
}

namespace {

const ModelConfig& validated(const ModelConfig& cfg) {
    cfg.validate();
    return cfg;
}

}  // namespace

template <typename T>
HfcrModel<T>::HfcrModel(const ModelConfig& cfg)
    : cfg_(validated(cfg)),
      encoder_(cfg.encoder, cfg.seed),
      hffp_(cfg.encoder.channels, cfg.encoder.output_side(), cfg.encoder.output_side(), cfg.seed + 1),
      hfrp_(cfg.encoder.channels, cfg.encoder.output_side(), cfg.encoder.output_side(), cfg.seed + 2) {}

template <typename T>
Var<T> HfcrModel<T>::episode_distances(Graph<T>& g, const Tensor<T>& images, std::size_t way, std::size_t shot,
                                       Mode mode) {
    if (way == 0 || shot == 0 || images.rank() != 4 || images.dim(0) <= way * shot) {
        throw std::invalid_argument("episode_distances: batch must hold N·K support images followed by queries");
    }
    auto maps = encoder_.conv4_forward(g, images, mode);
    EpisodeFeatures<T> f;
    f.way = way;
    f.shot = shot;
    f.support.assign(maps.begin(), maps.begin() + static_cast<std::ptrdiff_t>(way * shot));
    f.query.assign(maps.begin() + static_cast<std::ptrdiff_t>(way * shot), maps.end());
    return distances_from_features(f);
}

template <typename T>
Var<T> HfcrModel<T>::distances_from_features(const EpisodeFeatures<T>& raw) {
    EpisodeFeatures<T> f = raw;
    if (cfg_.hffp) {
        const HffpOptions opts = cfg_.hffp_options();
        for (auto& m : f.support) m = apply_hffp(m, hffp_, opts);
        for (auto& m : f.query) m = apply_hffp(m, hffp_, opts);
    }
    if (!cfg_.hfrp) return protonet_distances(f);

    auto bundles = reconstruct_all(f, cfg_.hfrp_options(), hfrp_);
    std::vector<Var<T>> d;
    d.reserve(bundles.size());
    for (const auto& b : bundles) d.push_back(total_distance(bundle_errors(b, cfg_.head.normalize_distance), head_));
    return stack_distances<T>(d, f.query.size(), f.way);
}

template <typename T>
ClassScores<T> HfcrModel<T>::predict(const Tensor<T>& images, std::size_t way, std::size_t shot) {
    Graph<T> g(false);
    return scores_from_distances(episode_distances(g, images, way, shot, Mode::eval).value());
}

template <typename T>
std::vector<Parameter<T>*> HfcrModel<T>::trainable() {
    std::vector<Parameter<T>*> out = encoder_.parameters();
    auto append = [&out](std::vector<Parameter<T>*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
    if (cfg_.hffp) {
        if (cfg_.channel) append(hffp_.channel_parameters());
        if (cfg_.spatial) append(hffp_.spatial_parameters());
    }
    if (cfg_.hfrp) {
        if (cfg_.channel) {
            append(hfrp_.channel_parameters());
            append({&head_.lambda[query_channel], &head_.lambda[support_channel]});
        }
        if (cfg_.spatial) {
            append(hfrp_.spatial_parameters());
            append({&head_.lambda[query_spatial], &head_.lambda[support_spatial]});
        }
        out.push_back(&head_.log_tau);
    }
    return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> HfcrModel<T>::state() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    std::vector<Parameter<T>*> all = encoder_.parameters();
    for (auto* p : hffp_.channel_parameters()) all.push_back(p);
    for (auto* p : hffp_.spatial_parameters()) all.push_back(p);
    for (auto* p : hfrp_.channel_parameters()) all.push_back(p);
    for (auto* p : hfrp_.spatial_parameters()) all.push_back(p);
    for (auto& l : head_.lambda) all.push_back(&l);
    all.push_back(&head_.log_tau);
    for (auto* p : all) out.emplace_back(p->name, &p->value);
    for (auto& b : encoder_.buffers()) out.push_back(b);
    return out;
}

template <typename T>
void HfcrModel<T>::after_step() {
    if (cfg_.head.clamp_lambda) head_.clamp_lambdas();
}

template class HfcrModel<float>;
template class HfcrModel<double>;

}  // namespace hfcr
