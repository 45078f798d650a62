#include "hfcr/trainer.hpp"

#include <json.hpp>
#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace hfcr {

void TrainConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("train config: ") + what);
    };
    need(lr0 >= 0 && std::isfinite(lr0), "lr0 must be a non-negative number");
    need(momentum >= 0 && momentum < 1, "momentum must lie in [0, 1)");
    need(weight_decay >= 0, "weight_decay must be non-negative");
    need(lr_decay_factor > 0, "lr_decay_factor must be positive");
    need(train_way >= 2 && eval_way >= 2, "way must be at least 2");
    need(train_shot > 0 && eval_shot > 0, "shot must be positive");
    need(train_queries > 0 && eval_queries > 0, "queries must be positive");
    need(episodes_per_epoch > 0, "episodes_per_epoch must be positive");
    need(clip_grad_norm >= 0 && std::isfinite(clip_grad_norm), "clip_grad_norm must be a non-negative number");
    need(validate_every > 0, "validate_every must be positive");
    need(val_episodes > 0, "val_episodes must be positive");
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
    if (cfg.lr_decay_period == 0) return cfg.lr0;
    return cfg.lr0 / std::pow(cfg.lr_decay_factor, static_cast<double>(epoch / cfg.lr_decay_period));
}

template <typename T>
double clip_gradients(std::span<Parameter<T>* const> params, double max_norm) {
    double sq = 0;
    for (const auto* p : params)
        for (T g : p->grad.data()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const T factor = static_cast<T>(max_norm / norm);
        for (auto* p : params)
            for (T& g : p->grad.data()) g *= factor;
    }
    return norm;
}

template double clip_gradients<float>(std::span<Parameter<float>* const>, double);
template double clip_gradients<double>(std::span<Parameter<double>* const>, double);

template <typename T>
void sgd_nesterov_step(std::span<Parameter<T>* const> params, SgdState<T>& state, double lr, double momentum,
                       double weight_decay) {
    for (const Parameter<T>* p : params) {
        if (!p->grad_ready) throw GraphError("missing gradient for trainable parameter " + p->name);
    }
    const T mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), step = static_cast<T>(lr);
    for (Parameter<T>* p : params) {
        auto [it, fresh] = state.velocity.try_emplace(p, p->value.shape());
        Tensor<T>& v = it->second;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const T g = p->grad[i] + wd * p->value[i];
            v[i] = mu * v[i] + g;
            p->value[i] -= step * (g + mu * v[i]);
        }
    }
}

template void sgd_nesterov_step<float>(std::span<Parameter<float>* const>, SgdState<float>&, double, double, double);
template void sgd_nesterov_step<double>(std::span<Parameter<double>* const>, SgdState<double>&, double, double, double);

std::string EvalReport::formatted() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f±%.2f", mean, ci95);
    return buf;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["mean"] = mean;
    j["ci95"] = ci95;
    j["episodes"] = episodes;
    char hex[16];
    std::snprintf(hex, sizeof hex, "%08x", digest);
    j["digest"] = hex;
    j["formatted"] = formatted();
    return j.dump(2) + "\n";
}

EvalReport make_report(std::vector<double> accuracies) {
    if (accuracies.empty()) throw std::invalid_argument("evaluation report needs at least one episode");
    EvalReport r;
    r.episodes = accuracies.size();
    const double n = static_cast<double>(r.episodes);
    double s = 0;
    for (double a : accuracies) s += a;
    r.mean = s / n;
    double ss = 0;
    for (double a : accuracies) ss += (a - r.mean) * (a - r.mean);
    r.ci95 = 1.96 * std::sqrt(ss / n) / std::sqrt(n);
    uLong crc = crc32(0L, Z_NULL, 0);
    for (double a : accuracies) {
        unsigned char bytes[8];
        std::uint64_t bits;
        std::memcpy(&bits, &a, 8);
        for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
        crc = crc32(crc, bytes, 8);
    }
    r.digest = static_cast<std::uint32_t>(crc);
    r.accuracies = std::move(accuracies);
    return r;
}

std::string log_csv(std::span<const LogRow> rows) {
    std::string out = "epoch,episode,loss,lr\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g\n", r.epoch, r.episode, r.loss, r.lr);
        out += buf;
    }
    return out;
}

namespace {

template <typename T>
std::vector<Tensor<T>> snapshot(HfcrModel<T>& model) {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : model.state()) out.push_back(*t);
    return out;
}

template <typename T>
void restore_snapshot(HfcrModel<T>& model, const std::vector<Tensor<T>>& saved) {
    auto st = model.state();
    for (std::size_t i = 0; i < st.size(); ++i) *st[i].second = saved[i];
}

}  // namespace

template <typename T>
EvalReport evaluate(HfcrModel<T>& model, const Dataset& data, std::span<const std::size_t> classes, std::size_t way,
                    std::size_t shot, std::size_t queries, std::size_t episodes, std::uint64_t seed) {
    if (episodes == 0) throw std::invalid_argument("evaluate: episodes must be positive");
    if (classes.size() < way) {
        throw std::invalid_argument("evaluate: " + std::to_string(way) + "-way episodes need " + std::to_string(way) +
                                    " classes, only " + std::to_string(classes.size()) + " available");
    }
    std::vector<double> acc;
    acc.reserve(episodes);
    for (std::size_t e = 0; e < episodes; ++e) {
        const Episode ep = sample_episode(data, classes, way, shot, queries, derive_seed(seed, e));
        const auto scores = model.predict(episode_batch<T>(data, ep), way, shot);
        std::size_t hit = 0;
        for (std::size_t i = 0; i < ep.query_labels.size(); ++i) hit += scores.predicted[i] == ep.query_labels[i];
        acc.push_back(100.0 * static_cast<double>(hit) / static_cast<double>(ep.query_labels.size()));
    }
    return make_report(std::move(acc));
}

template <typename T>
TrainResult train(HfcrModel<T>& model, const Dataset& data, const DatasetSplit& split, const TrainConfig& cfg,
                  const std::function<void(const LogRow&)>& on_step) {
    cfg.validate();
    split.validate(data.num_classes());
    if (split.base.size() < cfg.train_way) throw std::invalid_argument("train: fewer base classes than train way");
    if (split.val.size() < cfg.eval_way) throw std::invalid_argument("train: fewer validation classes than eval way");

    TrainResult result;
    if (cfg.epochs == 0) return result;

    const auto params = model.trainable();
    SgdState<T> sgd;
    std::vector<Tensor<T>> best = snapshot(model);
    const std::uint64_t val_seed = derive_seed(cfg.seed, 0x7a11d);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        for (std::size_t e = 0; e < cfg.episodes_per_epoch; ++e) {
            const std::uint64_t ep_seed = derive_seed(cfg.seed, epoch, e);
            const Episode ep = sample_episode(data, split.base, cfg.train_way, cfg.train_shot, cfg.train_queries, ep_seed);
            const Tensor<T> batch = episode_batch<T>(data, ep, &cfg.augmentation, derive_seed(ep_seed, 1));
            for (auto* p : params) p->zero_grad();
            const std::string where = "epoch " + std::to_string(epoch) + ", episode " + std::to_string(e) +
                                      " (episode seed " + std::to_string(ep_seed) + ")";
            Graph<T> g;
            Var<T> loss;
            try {
                const Var<T> d = model.episode_distances(g, batch, cfg.train_way, cfg.train_shot, Mode::train);
                loss = episode_loss(d, ep.query_labels);
            } catch (const DivergenceError&) {
                throw;
            } catch (const NumericError& err) {
                throw DivergenceError(std::string(err.what()) + " at " + where, ep_seed);
            }
            const double lv = static_cast<double>(loss.value().item());
            if (!std::isfinite(lv)) throw DivergenceError("non-finite loss at " + where, ep_seed);
            g.backward(loss);
            if (cfg.clip_grad_norm > 0) clip_gradients<T>(params, cfg.clip_grad_norm);
            sgd_nesterov_step<T>(params, sgd, lr, cfg.momentum, cfg.weight_decay);
            model.after_step();
            const LogRow row{epoch, e, lv, lr};
            result.log.push_back(row);
            if (on_step) on_step(row);
        }
        const std::size_t done = epoch + 1;
        if (done % cfg.validate_every == 0 || done == cfg.epochs) {
            const double acc = evaluate(model, data, split.val, cfg.eval_way, cfg.eval_shot, cfg.eval_queries,
                                        cfg.val_episodes, val_seed)
                                   .mean;
            result.validations.emplace_back(done, acc);
            if (acc > result.best_val_accuracy) {
                result.best_val_accuracy = acc;
                result.best_epoch = done;
                best = snapshot(model);
            }
        }
    }
    restore_snapshot(model, best);
    return result;
}

template EvalReport evaluate<float>(HfcrModel<float>&, const Dataset&, std::span<const std::size_t>, std::size_t,
                                    std::size_t, std::size_t, std::size_t, std::uint64_t);
template EvalReport evaluate<double>(HfcrModel<double>&, const Dataset&, std::span<const std::size_t>, std::size_t,
                                     std::size_t, std::size_t, std::size_t, std::uint64_t);
template TrainResult train<float>(HfcrModel<float>&, const Dataset&, const DatasetSplit&, const TrainConfig&,
                                  const std::function<void(const LogRow&)>&);
template TrainResult train<double>(HfcrModel<double>&, const Dataset&, const DatasetSplit&, const TrainConfig&,
                                   const std::function<void(const LogRow&)>&);

}  // namespace hfcr
