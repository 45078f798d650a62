#include "hfcr/data.hpp"

#include "hfcr/kv.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

namespace hfcr {

std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(mix_seed(base) ^ a) ^ b);
}

std::vector<std::vector<std::size_t>> Dataset::items_by_class() const {
    std::vector<std::vector<std::size_t>> out(num_classes());
    for (std::size_t i = 0; i < labels.size(); ++i) out.at(labels[i]).push_back(i);
    return out;
}

void DatasetSplit::validate(std::size_t num_classes) const {
    std::set<std::size_t> seen;
    for (const auto* part : {&base, &val, &novel})
        for (auto c : *part) {
            if (c >= num_classes) throw std::invalid_argument("split references class " + std::to_string(c) + " out of range");
            if (!seen.insert(c).second) {
                throw std::invalid_argument("split is not class-disjoint: class " + std::to_string(c) + " repeats");
            }
        }
}

DatasetSplit split_classes(std::size_t num_classes, std::size_t n_base, std::size_t n_val, std::size_t n_novel) {
    if (n_base + n_val + n_novel > num_classes) {
        throw std::invalid_argument("split needs " + std::to_string(n_base + n_val + n_novel) + " classes, dataset has " +
                                    std::to_string(num_classes));
    }
    DatasetSplit s;
    std::size_t c = 0;
    for (std::size_t i = 0; i < n_base; ++i) s.base.push_back(c++);
    for (std::size_t i = 0; i < n_val; ++i) s.val.push_back(c++);
    for (std::size_t i = 0; i < n_novel; ++i) s.novel.push_back(c++);
    return s;
}

Episode sample_episode(const Dataset& data, std::span<const std::size_t> classes, std::size_t way, std::size_t shot,
                       std::size_t queries, std::uint64_t seed) {
    if (way == 0 || shot == 0 || queries == 0) throw std::invalid_argument("episode way, shot and queries must be positive");
    if (classes.size() < way) {
        throw std::invalid_argument("episode needs " + std::to_string(way) + " classes, partition has " +
                                    std::to_string(classes.size()));
    }
    const auto by_class = data.items_by_class();
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> pool(classes.begin(), classes.end());
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(way);

    Episode ep;
    ep.way = way;
    ep.shot = shot;
    ep.queries = queries;
    ep.classes = pool;
    for (std::size_t n = 0; n < way; ++n) {
        std::vector<std::size_t> items = by_class.at(pool[n]);
        if (items.size() < shot + queries) {
            throw std::invalid_argument("class " + data.class_names.at(pool[n]) + " has " + std::to_string(items.size()) +
                                        " images, episode needs " + std::to_string(shot + queries));
        }
        std::shuffle(items.begin(), items.end(), rng);
        for (std::size_t k = 0; k < shot; ++k) {
            ep.support.push_back(items[k]);
            ep.support_labels.push_back(n);
        }
        for (std::size_t u = 0; u < queries; ++u) {
            ep.query.push_back(items[shot + u]);
            ep.query_labels.push_back(n);
        }
    }
    return ep;
}

Tensor<float> horizontal_flip(const Tensor<float>& image) {
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor<float> out(image.shape());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = image[(ch * h + y) * w + (w - 1 - x)];
    return out;
}

Tensor<float> augment(const Tensor<float>& image, std::mt19937_64& rng, const AugmentOptions& opts) {
    if (!opts.enabled) return image;
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("augment expects 3×h×w, got " + to_string(image.shape()));
    const std::size_t h = image.dim(1), w = image.dim(2);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Random resized crop, square, bilinear resample back to h×w.
    const double area = opts.crop_scale_min + (opts.crop_scale_max - opts.crop_scale_min) * unit(rng);
    const double frac = std::sqrt(area);
    const double ch = std::max(1.0, frac * static_cast<double>(h));
    const double cw = std::max(1.0, frac * static_cast<double>(w));
    const double y0 = unit(rng) * (static_cast<double>(h) - ch);
    const double x0 = unit(rng) * (static_cast<double>(w) - cw);
    Tensor<float> out(image.shape());
    for (std::size_t y = 0; y < h; ++y) {
        const double sy = std::clamp(y0 + (static_cast<double>(y) + 0.5) * ch / static_cast<double>(h) - 0.5, 0.0,
                                     static_cast<double>(h - 1));
        const auto iy = static_cast<std::size_t>(sy);
        const std::size_t iy1 = std::min(iy + 1, h - 1);
        const double fy = sy - static_cast<double>(iy);
        for (std::size_t x = 0; x < w; ++x) {
            const double sx = std::clamp(x0 + (static_cast<double>(x) + 0.5) * cw / static_cast<double>(w) - 0.5, 0.0,
                                         static_cast<double>(w - 1));
            const auto ix = static_cast<std::size_t>(sx);
            const std::size_t ix1 = std::min(ix + 1, w - 1);
            const double fx = sx - static_cast<double>(ix);
            for (std::size_t c = 0; c < 3; ++c) {
                const float* p = image.data().data() + c * h * w;
                const double top = p[iy * w + ix] * (1 - fx) + p[iy * w + ix1] * fx;
                const double bot = p[iy1 * w + ix] * (1 - fx) + p[iy1 * w + ix1] * fx;
                out[(c * h + y) * w + x] = static_cast<float>(top * (1 - fy) + bot * fy);
            }
        }
    }

    if (unit(rng) < opts.flip_probability) out = horizontal_flip(out);

    const double bright = 1.0 + opts.brightness * (2.0 * unit(rng) - 1.0);
    const double sat = 1.0 + opts.saturation * (2.0 * unit(rng) - 1.0);
    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < plane; ++i) {
        double r = out[i] * bright, g = out[plane + i] * bright, b = out[2 * plane + i] * bright;
        const double gray = 0.299 * r + 0.587 * g + 0.114 * b;
        r = gray + sat * (r - gray);
        g = gray + sat * (g - gray);
        b = gray + sat * (b - gray);
        out[i] = static_cast<float>(std::clamp(r, 0.0, 1.0));
        out[plane + i] = static_cast<float>(std::clamp(g, 0.0, 1.0));
        out[2 * plane + i] = static_cast<float>(std::clamp(b, 0.0, 1.0));
    }
    return out;
}

template <typename T>
Tensor<T> episode_batch(const Dataset& data, const Episode& ep, const AugmentOptions* augmentation, std::uint64_t seed) {
    const std::size_t s = data.side;
    const std::size_t per = 3 * s * s;
    std::vector<std::size_t> order = ep.support;
    order.insert(order.end(), ep.query.begin(), ep.query.end());
    Tensor<T> batch(Shape{order.size(), 3, s, s});
    for (std::size_t b = 0; b < order.size(); ++b) {
        const Tensor<float>* src = &data.images.at(order[b]);
        Tensor<float> aug;
        if (augmentation && augmentation->enabled) {
            std::mt19937_64 rng(derive_seed(seed, b));
            aug = augment(*src, rng, *augmentation);
            src = &aug;
        }
        if (src->size() != per) throw ShapeError("episode_batch: image size does not match dataset side");
        std::copy(src->data().begin(), src->data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>(b * per));
    }
    return batch;
}

template Tensor<float> episode_batch<float>(const Dataset&, const Episode&, const AugmentOptions*, std::uint64_t);
template Tensor<double> episode_batch<double>(const Dataset&, const Episode&, const AugmentOptions*, std::uint64_t);

namespace {

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
    }
    const double m = v - c;
    return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

template <std::size_t N>
std::string join(const std::array<float, N>& a) {
    std::ostringstream os;
    os << std::setprecision(9);
    for (std::size_t i = 0; i < N; ++i) os << (i ? "," : "") << a[i];
    return os.str();
}

template <std::size_t N>
std::array<float, N> split_floats(const std::string& key, const std::string& v) {
    std::array<float, N> out{};
    std::istringstream in(v);
    std::string item;
    std::size_t i = 0;
    while (std::getline(in, item, ',')) {
        if (i >= N) throw ConfigError(key + ": too many components");
        out[i++] = static_cast<float>(parse_double(key, trim(item)));
    }
    if (i != N) throw ConfigError(key + ": expected " + std::to_string(N) + " components");
    return out;
}

}  // namespace

SyntheticSpec SyntheticSpec::make_default(std::size_t num_classes, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.num_classes = num_classes;
    spec.seed = seed;
    const std::size_t offsets = 4;
    const std::size_t hues = (num_classes + offsets - 1) / offsets;
    // Blob centres vary vertically only, so horizontal flips keep the spatial cue.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t p = 0; p < hues; ++p)
        for (std::size_t o = 0; o < offsets; ++o) pairs.emplace_back(p, o);
    std::mt19937_64 rng(derive_seed(seed, 0x5eed));
    std::shuffle(pairs.begin(), pairs.end(), rng);
    for (std::size_t c = 0; c < num_classes; ++c) {
        const auto [p, o] = pairs[c];
        spec.palette.push_back(hsv_to_rgb(static_cast<double>(p) / static_cast<double>(hues), 0.75, 0.9));
        spec.offset.push_back({0.5f, 0.2f + 0.2f * static_cast<float>(o)});
    }
    if (num_classes != 40) {
        spec.base_classes = num_classes * 3 / 5;
        spec.val_classes = num_classes / 5;
        spec.novel_classes = num_classes - spec.base_classes - spec.val_classes;
    }
    return spec;
}

DatasetSplit SyntheticSpec::split() const {
    return split_classes(num_classes, base_classes, val_classes, novel_classes);
}

void SyntheticSpec::validate() const {
    if (num_classes == 0 || coarse_groups == 0 || image_side == 0 || images_per_class == 0) {
        throw std::invalid_argument("synthetic spec: counts and image side must be positive");
    }
    if (noise_std < 0) throw std::invalid_argument("synthetic spec: noise_std must be non-negative");
    if (palette.size() != num_classes || offset.size() != num_classes) {
        throw std::invalid_argument("synthetic spec: need one palette and one offset per class");
    }
    if (base_classes + val_classes + novel_classes > num_classes) {
        throw std::invalid_argument("synthetic spec: split larger than the class count");
    }
    for (std::size_t a = 0; a < num_classes; ++a)
        for (std::size_t b = a + 1; b < num_classes; ++b) {
            if (palette[a] == palette[b] && offset[a] == offset[b]) {
                throw std::invalid_argument("synthetic spec: palette/offset collision between classes " +
                                            std::to_string(a) + " and " + std::to_string(b));
            }
        }
}

std::string SyntheticSpec::serialize() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "synthetic.num_classes = " << num_classes << '\n'
       << "synthetic.coarse_groups = " << coarse_groups << '\n'
       << "synthetic.image_side = " << image_side << '\n'
       << "synthetic.images_per_class = " << images_per_class << '\n'
       << "synthetic.noise_std = " << noise_std << '\n'
       << "synthetic.seed = " << seed << '\n'
       << "synthetic.base_classes = " << base_classes << '\n'
       << "synthetic.val_classes = " << val_classes << '\n'
       << "synthetic.novel_classes = " << novel_classes << '\n';
    for (std::size_t c = 0; c < palette.size(); ++c) {
        os << "synthetic.class." << c << ".palette = " << join(palette[c]) << '\n';
        os << "synthetic.class." << c << ".offset = " << join(offset[c]) << '\n';
    }
    return os.str();
}

SyntheticSpec SyntheticSpec::parse(const std::string& text) {
    const auto kv = parse_key_values(text);
    auto get = [&](const std::string& k) -> const std::string& {
        auto it = kv.find("synthetic." + k);
        if (it == kv.end()) throw ConfigError("synthetic spec: missing key synthetic." + k);
        return it->second;
    };
    SyntheticSpec s;
    s.num_classes = static_cast<std::size_t>(parse_int("num_classes", get("num_classes")));
    s.coarse_groups = static_cast<std::size_t>(parse_int("coarse_groups", get("coarse_groups")));
    s.image_side = static_cast<std::size_t>(parse_int("image_side", get("image_side")));
    s.images_per_class = static_cast<std::size_t>(parse_int("images_per_class", get("images_per_class")));
    s.noise_std = parse_double("noise_std", get("noise_std"));
    s.seed = static_cast<std::uint64_t>(std::stoull(get("seed")));
    s.base_classes = static_cast<std::size_t>(parse_int("base_classes", get("base_classes")));
    s.val_classes = static_cast<std::size_t>(parse_int("val_classes", get("val_classes")));
    s.novel_classes = static_cast<std::size_t>(parse_int("novel_classes", get("novel_classes")));
    for (std::size_t c = 0; c < s.num_classes; ++c) {
        const std::string p = "class." + std::to_string(c) + ".palette";
        const std::string o = "class." + std::to_string(c) + ".offset";
        s.palette.push_back(split_floats<3>(p, get(p)));
        s.offset.push_back(split_floats<2>(o, get(o)));
    }
    s.validate();
    return s;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t s = spec.image_side;
    const double side = static_cast<double>(s);
    const double sigma = side / 8.0;
    Dataset data;
    data.side = s;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        data.class_names.push_back("class" + std::to_string(c));
        // Class template: group stripe pattern with the class blob blended in.
        const std::size_t group = c % spec.coarse_groups;
        const double theta = std::numbers::pi * static_cast<double>(group) / static_cast<double>(spec.coarse_groups);
        const double cx = spec.offset[c][0] * side, cy = spec.offset[c][1] * side;
        Tensor<float> base(Shape{3, s, s});
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
                const double u = static_cast<double>(x) * std::cos(theta) + static_cast<double>(y) * std::sin(theta);
                const double stripe = 0.4 + 0.15 * std::sin(2.0 * std::numbers::pi * 2.0 * u / side);
                const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
                const double alpha = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    base[(ch * s + y) * s + x] = static_cast<float>((1 - alpha) * stripe + alpha * spec.palette[c][ch]);
                }
            }
        for (std::size_t i = 0; i < spec.images_per_class; ++i) {
            Tensor<float> img = base;
            if (spec.noise_std > 0) {
                std::mt19937_64 rng(derive_seed(spec.seed, c, i));
                std::normal_distribution<double> noise(0.0, spec.noise_std);
                for (auto& v : img.data()) v = static_cast<float>(static_cast<double>(v) + noise(rng));
            }
            for (auto& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
            data.images.push_back(std::move(img));
            data.labels.push_back(c);
        }
    }
    return data;
}

Dataset load_image_folder(const std::filesystem::path& root, std::size_t side) {
    namespace fs = std::filesystem;
    if (side == 0) throw std::invalid_argument("image side must be positive");
    if (!fs::is_directory(root)) throw std::invalid_argument("image folder not found: " + root.string());
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw std::invalid_argument("no class directories under " + root.string());

    Dataset data;
    data.side = side;
    for (const auto& dir : class_dirs) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw std::invalid_argument("empty class directory: " + dir.string());
        const std::size_t label = data.class_names.size();
        data.class_names.push_back(dir.filename().string());
        for (const auto& f : files) {
            cv::Mat bgr = cv::imread(f.string(), cv::IMREAD_COLOR);
            if (bgr.empty()) throw std::runtime_error("cannot decode image: " + f.string());
            cv::Mat rgb, resized;
            cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
            cv::resize(rgb, resized, cv::Size(static_cast<int>(side), static_cast<int>(side)), 0, 0, cv::INTER_AREA);
            Tensor<float> img(Shape{3, side, side});
            for (std::size_t y = 0; y < side; ++y) {
                const auto* row = resized.ptr<cv::Vec3b>(static_cast<int>(y));
                for (std::size_t x = 0; x < side; ++x)
                    for (std::size_t c = 0; c < 3; ++c) img[(c * side + y) * side + x] = row[x][static_cast<int>(c)] / 255.0f;
            }
            data.images.push_back(std::move(img));
            data.labels.push_back(label);
        }
    }
    return data;
}

}  // namespace hfcr
