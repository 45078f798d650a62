#pragma once

#include "hfcr/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hfcr {

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// Labeled images, each 3×side×side with values in [0, 1].
struct Dataset {
    std::size_t side = 0;
    std::vector<std::string> class_names;
    std::vector<Tensor<float>> images;
    std::vector<std::size_t> labels;

    std::size_t num_classes() const { return class_names.size(); }
    std::size_t size() const { return images.size(); }
    /// Image indices grouped by class label.
    std::vector<std::vector<std::size_t>> items_by_class() const;
};

/// Class-disjoint base / validation / novel partition.
struct DatasetSplit {
    std::vector<std::size_t> base;
    std::vector<std::size_t> val;
    std::vector<std::size_t> novel;

    void validate(std::size_t num_classes) const;
};

/// Consecutive class ranges: [0, n_base), [n_base, n_base + n_val), then novel.
DatasetSplit split_classes(std::size_t num_classes, std::size_t n_base, std::size_t n_val, std::size_t n_novel);

/// One N-way K-shot task. Indices refer to Dataset::images; labels are episode-local 0..N-1.
/// Support is class-major (n·K + k), queries likewise (n·U + u).
struct Episode {
    std::size_t way = 0, shot = 0, queries = 0;
    std::vector<std::size_t> classes;
    std::vector<std::size_t> support, support_labels;
    std::vector<std::size_t> query, query_labels;
};

Episode sample_episode(const Dataset& data, std::span<const std::size_t> classes, std::size_t way, std::size_t shot,
                       std::size_t queries, std::uint64_t seed);

struct AugmentOptions {
    bool enabled = true;
    double crop_scale_min = 0.7;
    double crop_scale_max = 1.0;
    double flip_probability = 0.5;
    double brightness = 0.2;
    double saturation = 0.2;
};

/// Random resized crop, horizontal flip, brightness/saturation jitter; output clamped to [0, 1].
Tensor<float> augment(const Tensor<float>& image, std::mt19937_64& rng, const AugmentOptions& opts = {});
Tensor<float> horizontal_flip(const Tensor<float>& image);

/// Stacks the episode's support then query images into a B×3×s×s batch.
/// When `augmentation` is given each image is augmented with a stream derived from `seed`.
template <typename T>
Tensor<T> episode_batch(const Dataset& data, const Episode& ep, const AugmentOptions* augmentation = nullptr,
                        std::uint64_t seed = 0);

struct SyntheticSpec {
    std::size_t num_classes = 40;
    std::size_t coarse_groups = 4;
    std::size_t image_side = 32;
    std::size_t images_per_class = 30;
    double noise_std = 0.05;
    std::uint64_t seed = 7;
    std::size_t base_classes = 24;
    std::size_t val_classes = 8;
    std::size_t novel_classes = 8;
    /// Per class: blob colour (channel cue) and blob centre as fractions of the side (spatial cue).
    std::vector<std::array<float, 3>> palette;
    std::vector<std::array<float, 2>> offset;

    /// Default spec with palettes/offsets assigned from `seed`.
    static SyntheticSpec make_default(std::size_t num_classes = 40, std::uint64_t seed = 7);

    DatasetSplit split() const;
    /// Flat `key = value` text, one entry per line.
    std::string serialize() const;
    static SyntheticSpec parse(const std::string& text);
    void validate() const;
};

/// Renders every image as group pattern + class blob + Gaussian pixel noise.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// root/<class_name>/<image_file>, classes sorted by directory name.
Dataset load_image_folder(const std::filesystem::path& root, std::size_t side = 84);

}  // namespace hfcr
