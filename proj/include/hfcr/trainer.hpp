#pragma once

#include "hfcr/data.hpp"
#include "hfcr/model.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hfcr {

/// Thrown when an episode produces a non-finite loss.
class DivergenceError : public NumericError {
public:
    DivergenceError(const std::string& what, std::uint64_t episode_seed)
        : NumericError(what), episode_seed_(episode_seed) {}
    std::uint64_t episode_seed() const { return episode_seed_; }

private:
    std::uint64_t episode_seed_;
};

struct TrainConfig {
    double lr0 = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t epochs = 100;
    double lr_decay_factor = 10.0;
    /// 0 disables decay.
    std::size_t lr_decay_period = 34;
    std::size_t train_way = 5, train_shot = 1, train_queries = 15;
    std::size_t eval_way = 5, eval_shot = 1, eval_queries = 16;
    std::size_t episodes_per_epoch = 50;
    /// Rescales the joint gradient to this L2 norm when it is larger; 0 disables.
    double clip_grad_norm = 0;
    std::size_t validate_every = 20;
    std::size_t val_episodes = 100;
    AugmentOptions augmentation;
    std::uint64_t seed = 1;

    void validate() const;
};

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

/// Scales every gradient by max_norm / ‖g‖ when the joint L2 norm ‖g‖ exceeds max_norm.
/// Returns the norm before scaling.
template <typename T>
double clip_gradients(std::span<Parameter<T>* const> params, double max_norm);

template <typename T>
struct SgdState {
    std::unordered_map<const Parameter<T>*, Tensor<T>> velocity;
};

/// v ← μv + (g + wd·θ);  θ ← θ − lr·(g + wd·θ + μv).
/// Throws GraphError if a parameter has not received a gradient since its last zero_grad().
template <typename T>
void sgd_nesterov_step(std::span<Parameter<T>* const> params, SgdState<T>& state, double lr, double momentum,
                       double weight_decay);

struct EvalReport {
    double mean = 0;  // percent
    double ci95 = 0;  // half-width, percent
    std::size_t episodes = 0;
    /// crc32 of the per-episode accuracies (little-endian doubles).
    std::uint32_t digest = 0;
    std::vector<double> accuracies;

    /// "mean±ci" with two decimals.
    std::string formatted() const;
    std::string to_json() const;
    bool operator==(const EvalReport&) const = default;
};

/// Population standard deviation; a single episode gives ci95 = 0.
EvalReport make_report(std::vector<double> accuracies);

struct LogRow {
    std::size_t epoch = 0, episode = 0;
    double loss = 0, lr = 0;
};

struct TrainResult {
    std::vector<LogRow> log;
    /// (epoch, validation accuracy) for every validation pass.
    std::vector<std::pair<std::size_t, double>> validations;
    double best_val_accuracy = -1;
    /// Epoch count at which the restored state was taken; 0 means the initialization.
    std::size_t best_epoch = 0;
};

std::string log_csv(std::span<const LogRow> rows);

/// Episodic training on split.base with validation-based selection on split.val.
/// The best validated state is restored into `model` before returning.
template <typename T>
TrainResult train(HfcrModel<T>& model, const Dataset& data, const DatasetSplit& split, const TrainConfig& cfg,
                  const std::function<void(const LogRow&)>& on_step = {});

/// Mean accuracy over `episodes` episodes drawn from `classes`; episode e uses derive_seed(seed, e).
template <typename T>
EvalReport evaluate(HfcrModel<T>& model, const Dataset& data, std::span<const std::size_t> classes, std::size_t way,
                    std::size_t shot, std::size_t queries, std::size_t episodes, std::uint64_t seed);

}  // namespace hfcr
