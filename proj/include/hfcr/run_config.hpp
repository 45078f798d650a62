#pragma once

#include "hfcr/data.hpp"
#include "hfcr/kv.hpp"
#include "hfcr/model.hpp"
#include "hfcr/trainer.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace hfcr {

struct EvalSettings {
    std::size_t way = 5, shot = 1, queries = 16, episodes = 1000;
    std::uint64_t seed = 2024;
};

struct DataSettings {
    /// "synthetic" or "folder".
    std::string source = "synthetic";
    std::filesystem::path root;
    /// Side images from a folder are resized to.
    std::size_t side = 84;
    /// Class counts for folder datasets; synthetic data uses the spec's split.
    std::size_t base_classes = 0, val_classes = 0, novel_classes = 0;
    /// Optional serialized synthetic spec; overrides the synthetic.* keys when set.
    std::filesystem::path synthetic_spec;
    SyntheticSpec synthetic = SyntheticSpec::make_default();
};

/// Every knob of a run. Serialized as flat `section.key = value` lines; the
/// snapshot written next to a checkpoint rebuilds the same run.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    EvalSettings eval;
    DataSettings data;
    std::filesystem::path output_dir = "runs/default";

    /// Sets one key. Throws ConfigError for unknown keys or malformed values.
    void set(const std::string& key, const std::string& value);
    void apply(const std::map<std::string, std::string>& kv);

    std::string serialize() const;
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);

    /// Throws ConfigError naming the offending keys/flags.
    void validate() const;

    /// Model config with the encoder input side taken from the dataset.
    ModelConfig model_config() const;
};

struct LoadedData {
    Dataset dataset;
    DatasetSplit split;
};

LoadedData load_data(const DataSettings& settings);

/// Prefixes relative paths with $HFCR_OUTPUT_ROOT when that variable is set.
std::filesystem::path resolve_output(const std::filesystem::path& dir);

}  // namespace hfcr
