#include "hfcr/metric_head.hpp"

#include <cmath>

namespace hfcr {

template <typename T>
HeadParams<T>::HeadParams() {
    for (std::size_t j = 0; j < 4; ++j) {
        lambda[j] = Parameter<T>("head.lambda" + std::to_string(j + 1), Tensor<T>::scalar(T(0.5)));
    }
    log_tau = Parameter<T>("head.log_tau", Tensor<T>::scalar(T{0}));
}

template <typename T>
void HeadParams<T>::clamp_lambdas() {
    for (auto& l : lambda) l.value[0] = std::max(l.value[0], T{0});
}

template <typename T>
Var<T> recon_error(const Var<T>& recon, const Var<T>& target, bool normalize) {
    if (recon.shape() != target.shape()) {
        throw ShapeError("recon_error: " + to_string(recon.shape()) + " vs " + to_string(target.shape()));
    }
    Var<T> e = sum_squares(sub(recon, target));
    if (normalize) e = scale(e, T{1} / static_cast<T>(recon.value().size()));
    return e;
}

template <typename T>
Var<T> total_distance(const std::array<std::optional<Var<T>>, 4>& d, HeadParams<T>& hp) {
    std::optional<Var<T>> sum;
    for (std::size_t j = 0; j < 4; ++j) {
        if (!d[j]) continue;
        if (d[j]->value().size() != 1) throw ShapeError("total_distance: distances must be scalars");
        if (d[j]->value()[0] < T{0}) throw std::invalid_argument("total_distance: negative reconstruction error");
        Graph<T>& g = d[j]->graph();
        Var<T> term = mul(reshape(g.parameter(hp.lambda[j]), Shape{}), reshape(*d[j], Shape{}));
        sum = sum ? add(*sum, term) : term;
    }
    if (!sum) throw std::invalid_argument("total_distance: no reconstruction error present");
    Graph<T>& g = sum->graph();
    return mul(exp(g.parameter(hp.log_tau)), *sum);
}

template <typename T>
std::array<std::optional<Var<T>>, 4> bundle_errors(const ReconBundle<T>& b, bool normalize) {
    std::array<std::optional<Var<T>>, 4> d;
    if (b.q_hat_c) d[query_channel] = recon_error(*b.q_hat_c, *b.q_target_c, normalize);
    if (b.q_hat_s) d[query_spatial] = recon_error(*b.q_hat_s, *b.q_target_s, normalize);
    if (b.s_hat_c) d[support_channel] = recon_error(*b.s_hat_c, *b.s_target_c, normalize);
    if (b.s_hat_s) d[support_spatial] = recon_error(*b.s_hat_s, *b.s_target_s, normalize);
    return d;
}

template <typename T>
std::vector<T> class_probabilities(std::span<const T> distances) {
    if (distances.size() < 2) throw std::invalid_argument("class_probabilities: need at least two classes");
    std::vector<T> logits(distances.size());
    for (std::size_t n = 0; n < distances.size(); ++n) {
        if (!std::isfinite(distances[n])) throw NumericError("class_probabilities: non-finite distance");
        logits[n] = -distances[n];
    }
    return softmax_values<T>(logits);
}

template <typename T>
Var<T> class_probabilities(const Var<T>& distances) {
    if (!distances.value().all_finite()) throw NumericError("class_probabilities: non-finite distance");
    return softmax_lastdim(scale(distances, T{-1}));
}

template <typename T>
T episode_loss(std::span<const std::vector<T>> probs, std::span<const std::size_t> labels) {
    if (probs.size() != labels.size() || probs.empty()) {
        throw std::invalid_argument("episode_loss: need one label per probability vector");
    }
    T total{0};
    for (std::size_t i = 0; i < probs.size(); ++i) {
        T s{0};
        for (T p : probs[i]) s += p;
        if (std::abs(s - T{1}) > T(1e-6)) throw std::invalid_argument("episode_loss: probabilities do not sum to 1");
        if (labels[i] >= probs[i].size()) throw std::invalid_argument("episode_loss: label out of range");
        const T p = probs[i][labels[i]];
        if (!(p > T{0})) throw NumericError("episode_loss: true-class probability is not positive");
        total -= std::log(p);
    }
    return total / static_cast<T>(probs.size());
}

template <typename T>
Var<T> episode_loss(const Var<T>& distances, std::span<const std::size_t> labels) {
    if (!distances.value().all_finite()) throw NumericError("episode_loss: non-finite distance");
    return cross_entropy(scale(distances, T{-1}), labels);
}

template <typename T>
ClassScores<T> scores_from_distances(const Tensor<T>& distances) {
    if (distances.rank() != 2) throw ShapeError("scores_from_distances: expected M×N, got " + to_string(distances.shape()));
    const std::size_t m = distances.dim(0), n = distances.dim(1);
    ClassScores<T> s;
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<T> row(distances.data().begin() + i * n, distances.data().begin() + (i + 1) * n);
        auto probs = class_probabilities<T>(row);
        std::size_t best = 0;
        for (std::size_t j = 1; j < n; ++j)
            if (probs[j] > probs[best]) best = j;
        s.distances.push_back(std::move(row));
        s.probabilities.push_back(std::move(probs));
        s.predicted.push_back(best);
    }
    return s;
}

template <typename T>
ClassScores<T> protonet_score(std::span<const Tensor<T>> support, std::size_t way, std::size_t shot,
                              std::span<const Tensor<T>> queries) {
    if (shot == 0) throw std::invalid_argument("protonet_score: K must be positive");
    if (support.size() != way * shot) throw std::invalid_argument("protonet_score: support size is not N·K");
    const std::size_t len = support[0].size();
    std::vector<std::vector<T>> protos(way, std::vector<T>(len));
    const T inv_k = T{1} / static_cast<T>(shot);
    for (std::size_t n = 0; n < way; ++n) {
        auto& p = protos[n];
        const auto& first = support[n * shot];
        std::copy(first.data().begin(), first.data().end(), p.begin());
        for (std::size_t k = 1; k < shot; ++k) {
            const auto& s = support[n * shot + k];
            if (s.size() != len) throw ShapeError("protonet_score: support features differ in size");
            for (std::size_t j = 0; j < len; ++j) p[j] = p[j] + s[j];
        }
        for (std::size_t j = 0; j < len; ++j) p[j] = p[j] * inv_k;
    }
    Tensor<T> dist(Shape{queries.size(), way});
    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (queries[i].size() != len) throw ShapeError("protonet_score: query feature size differs from support");
        for (std::size_t n = 0; n < way; ++n) {
            T acc{0};
            for (std::size_t j = 0; j < len; ++j) {
                const T diff = queries[i][j] - protos[n][j];
                acc += diff * diff;
            }
            dist[i * way + n] = acc;
        }
    }
    return scores_from_distances(dist);
}

template <typename T>
Var<T> stack_distances(std::span<const Var<T>> scalars, std::size_t queries, std::size_t way) {
    if (scalars.size() != queries * way) throw ShapeError("stack_distances: expected M·N scalars");
    std::vector<Var<T>> flat;
    flat.reserve(scalars.size());
    for (const auto& s : scalars) flat.push_back(reshape(s, Shape{1}));
    return reshape(concat<T>(flat, 0), Shape{queries, way});
}

template <typename T>
Var<T> protonet_distances(const EpisodeFeatures<T>& f) {
    if (f.shot == 0) throw std::invalid_argument("protonet: K must be positive");
    if (f.support.size() != f.way * f.shot) throw std::invalid_argument("protonet: support size is not N·K");
    std::vector<Var<T>> protos;
    for (std::size_t n = 0; n < f.way; ++n) {
        Var<T> acc = f.support[n * f.shot].values;
        for (std::size_t k = 1; k < f.shot; ++k) acc = add(acc, f.support[n * f.shot + k].values);
        protos.push_back(scale(acc, T{1} / static_cast<T>(f.shot)));
    }
    std::vector<Var<T>> d;
    for (const auto& q : f.query)
        for (const auto& p : protos) d.push_back(sum_squares(sub(q.values, p)));
    return stack_distances<T>(d, f.query.size(), f.way);
}

#define HFCR_INSTANTIATE_HEAD(T)                                                                           \
    template struct HeadParams<T>;                                                                         \
    template Var<T> recon_error(const Var<T>&, const Var<T>&, bool);                                       \
    template Var<T> total_distance(const std::array<std::optional<Var<T>>, 4>&, HeadParams<T>&);           \
    template std::array<std::optional<Var<T>>, 4> bundle_errors(const ReconBundle<T>&, bool);              \
    template std::vector<T> class_probabilities(std::span<const T>);                                       \
    template Var<T> class_probabilities(const Var<T>&);                                                    \
    template T episode_loss(std::span<const std::vector<T>>, std::span<const std::size_t>);                \
    template Var<T> episode_loss(const Var<T>&, std::span<const std::size_t>);                             \
    template ClassScores<T> scores_from_distances(const Tensor<T>&);                                       \
    template ClassScores<T> protonet_score(std::span<const Tensor<T>>, std::size_t, std::size_t,           \
                                           std::span<const Tensor<T>>);                                    \
    template Var<T> stack_distances(std::span<const Var<T>>, std::size_t, std::size_t);                    \
    template Var<T> protonet_distances(const EpisodeFeatures<T>&);

HFCR_INSTANTIATE_HEAD(float)
HFCR_INSTANTIATE_HEAD(double)

}  // namespace hfcr
