#include "hfcr/data.hpp"
#include "hfcr/kv.hpp"
#include "hfcr/metric_head.hpp"

#include <doctest.h>
#include <opencv2/imgcodecs.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

using namespace hfcr;
namespace fs = std::filesystem;

namespace {

Dataset small_synthetic(double noise = 0.05) {
    SyntheticSpec s = SyntheticSpec::make_default(12, 3);
    s.images_per_class = 20;
    s.image_side = 16;
    s.noise_std = noise;
    return generate_synthetic(s);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("hfcr_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("episode layout") {
    const Dataset d = small_synthetic();
    std::vector<std::size_t> classes(d.num_classes());
    std::iota(classes.begin(), classes.end(), 0);
    const Episode ep = sample_episode(d, classes, 5, 1, 15, 42);
    CHECK(ep.support.size() == 5);
    CHECK(ep.query.size() == 75);
    CHECK(ep.classes.size() == 5);
    for (std::size_t i = 0; i < ep.query.size(); ++i) {
        CHECK(ep.query_labels[i] == i / 15);
        CHECK(d.labels[ep.query[i]] == ep.classes[ep.query_labels[i]]);
    }
    for (std::size_t i = 0; i < ep.support.size(); ++i) CHECK(d.labels[ep.support[i]] == ep.classes[i]);

    const Episode again = sample_episode(d, classes, 5, 1, 15, 42);
    CHECK(again.support == ep.support);
    CHECK(again.query == ep.query);
    CHECK(sample_episode(d, classes, 5, 1, 15, 43).query != ep.query);

    CHECK_THROWS_AS(sample_episode(d, classes, 13, 1, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(sample_episode(d, classes, 5, 10, 11, 1), std::invalid_argument);
    CHECK_THROWS_AS(sample_episode(d, classes, 5, 0, 1, 1), std::invalid_argument);
}

TEST_CASE("support and query never overlap") {
    const Dataset d = small_synthetic();
    const auto split = split_classes(12, 6, 3, 3);
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const Episode ep = sample_episode(d, split.base, 5, 2, 3, s);
        std::set<std::size_t> sup(ep.support.begin(), ep.support.end());
        REQUIRE(sup.size() == ep.support.size());
        for (auto q : ep.query) REQUIRE(sup.count(q) == 0);
        std::set<std::size_t> qs(ep.query.begin(), ep.query.end());
        REQUIRE(qs.size() == ep.query.size());
        for (auto c : ep.classes) REQUIRE(std::find(split.base.begin(), split.base.end(), c) != split.base.end());
    }
}

TEST_CASE("sampling covers every eligible class") {
    const Dataset d = small_synthetic();
    const auto split = split_classes(12, 6, 3, 3);
    std::map<std::size_t, std::size_t> hits;
    for (std::uint64_t s = 0; s < 10000; ++s)
        for (auto c : sample_episode(d, split.novel, 2, 1, 1, s).classes) ++hits[c];
    CHECK(hits.size() == 3);
    for (auto c : split.novel) CHECK(hits[c] > 5000);
}

TEST_CASE("class splits") {
    const auto s = split_classes(10, 5, 2, 3);
    CHECK(s.base == std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK(s.novel == std::vector<std::size_t>{7, 8, 9});
    CHECK_NOTHROW(s.validate(10));
    CHECK_THROWS_AS(s.validate(9), std::invalid_argument);
    CHECK_THROWS_AS(split_classes(10, 5, 5, 1), std::invalid_argument);
    DatasetSplit overlap{{0, 1}, {1}, {2}};
    CHECK_THROWS_WITH_AS(overlap.validate(3), doctest::Contains("disjoint"), std::invalid_argument);
}

TEST_CASE("synthetic images") {
    const Dataset clean = small_synthetic(0.0);
    const auto by = clean.items_by_class();
    for (const auto& items : by)
        for (auto i : items) CHECK(clean.images[i] == clean.images[items[0]]);

    SyntheticSpec loud = SyntheticSpec::make_default(6, 1);
    loud.noise_std = 0.8;
    loud.images_per_class = 3;
    const Dataset noisy = generate_synthetic(loud);
    for (const auto& img : noisy.images) {
        CHECK(img.shape() == Shape{3, 32, 32});
        for (float v : img.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
    }
    CHECK(generate_synthetic(loud).images == noisy.images);
    CHECK(noisy.images[0] != noisy.images[1]);

    const SyntheticSpec def;
    CHECK(def.num_classes == 40);
    CHECK(def.noise_std == 0.05);
    const Dataset full = generate_synthetic(SyntheticSpec::make_default());
    CHECK(full.num_classes() == 40);
    CHECK(full.size() == 40 * 30);
    CHECK_NOTHROW(SyntheticSpec::make_default().split().validate(40));
}

TEST_CASE("palette-only differences keep the pattern and move the channel statistics") {
    SyntheticSpec s = SyntheticSpec::make_default(2, 1);
    s.coarse_groups = 1;
    s.noise_std = 0;
    s.images_per_class = 1;
    s.base_classes = 2;
    s.val_classes = s.novel_classes = 0;
    s.offset[1] = s.offset[0];
    s.palette[0] = {0.9f, 0.1f, 0.1f};
    s.palette[1] = {0.1f, 0.1f, 0.9f};
    const Dataset d = generate_synthetic(s);
    const auto &a = d.images[0], &b = d.images[1];
    const std::size_t n = 32, plane = n * n;
    // Differences are confined to the blob, so they peak at the shared centre.
    const auto cx = static_cast<std::size_t>(s.offset[0][0] * n), cy = static_cast<std::size_t>(s.offset[0][1] * n);
    double peak = 0, far = 0;
    std::size_t py = 0, px = 0;
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const double diff = std::abs(a[y * n + x] - b[y * n + x]);
            if (diff > peak) peak = diff, py = y, px = x;
            const double dist2 = std::pow(double(x) - double(cx), 2) + std::pow(double(y) - double(cy), 2);
            if (dist2 > std::pow(n / 2.0, 2)) far = std::max(far, diff);
        }
    CHECK(std::abs(double(px) - double(cx)) <= 1);
    CHECK(std::abs(double(py) - double(cy)) <= 1);
    CHECK(far < 1e-3);
    // Green channel: same stripes, same blob weight, same palette green, so identical.
    for (std::size_t i = 0; i < plane; ++i) CHECK(a[plane + i] == b[plane + i]);
    double ra = 0, rb = 0;
    for (std::size_t i = 0; i < plane; ++i) ra += a[i], rb += b[i];
    CHECK(ra > rb + 1.0);

    SyntheticSpec clash = s;
    clash.palette[1] = clash.palette[0];
    CHECK_THROWS_WITH_AS(generate_synthetic(clash), doctest::Contains("collision"), std::invalid_argument);
}

TEST_CASE("synthetic spec round trip") {
    const SyntheticSpec s = SyntheticSpec::make_default(16, 9);
    const SyntheticSpec back = SyntheticSpec::parse(s.serialize());
    CHECK(back.serialize() == s.serialize());
    CHECK(back.palette == s.palette);
    CHECK(back.offset == s.offset);
    CHECK_THROWS_AS(SyntheticSpec::parse("synthetic.num_classes = 2\n"), ConfigError);
}

TEST_CASE("raw-pixel prototypes beat chance on the default data") {
    const SyntheticSpec spec = SyntheticSpec::make_default();
    const Dataset d = generate_synthetic(spec);
    const DatasetSplit split = spec.split();
    double correct = 0, total = 0;
    for (std::uint64_t e = 0; e < 200; ++e) {
        const Episode ep = sample_episode(d, split.novel, 5, 1, 15, e);
        std::vector<Tensor<float>> sup, qry;
        for (auto i : ep.support) sup.push_back(d.images[i]);
        for (auto i : ep.query) qry.push_back(d.images[i]);
        const auto s = protonet_score<float>(sup, 5, 1, qry);
        for (std::size_t i = 0; i < qry.size(); ++i) correct += s.predicted[i] == ep.query_labels[i];
        total += static_cast<double>(qry.size());
    }
    CHECK(correct / total > 0.5);
}

TEST_CASE("augmentation") {
    const Dataset d = small_synthetic();
    const Tensor<float>& img = d.images[3];
    std::mt19937_64 rng(1);
    AugmentOptions off;
    off.enabled = false;
    CHECK(augment(img, rng, off) == img);

    for (int i = 0; i < 20; ++i) {
        const auto out = augment(img, rng);
        CHECK(out.shape() == img.shape());
        for (float v : out.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
    }
    CHECK(horizontal_flip(horizontal_flip(img)) == img);
    CHECK(horizontal_flip(img) != img);

    AugmentOptions flip_only;
    flip_only.crop_scale_min = flip_only.crop_scale_max = 1.0;
    flip_only.flip_probability = 1.0;
    flip_only.brightness = flip_only.saturation = 0.0;
    const auto once = augment(img, rng, flip_only);
    CHECK(max_abs_diff(once, horizontal_flip(img)) < 1e-6f);
    CHECK(max_abs_diff(augment(once, rng, flip_only), img) < 1e-6f);

    std::mt19937_64 a(9), b(9);
    CHECK(augment(img, a) == augment(img, b));
    CHECK_THROWS_AS(augment(Tensor<float>(Shape{1, 4, 4}), rng), ShapeError);
}

TEST_CASE("episode batches") {
    const Dataset d = small_synthetic();
    std::vector<std::size_t> classes{0, 1, 2, 3};
    const Episode ep = sample_episode(d, classes, 3, 2, 2, 5);
    const auto batch = episode_batch<float>(d, ep);
    CHECK(batch.shape() == Shape{12, 3, 16, 16});
    const std::size_t per = 3 * 16 * 16;
    CHECK(std::equal(d.images[ep.support[1]].data().begin(), d.images[ep.support[1]].data().end(), batch.data().begin() + per));
    CHECK(std::equal(d.images[ep.query[0]].data().begin(), d.images[ep.query[0]].data().end(), batch.data().begin() + 6 * per));
    AugmentOptions aug;
    CHECK(episode_batch<float>(d, ep, &aug, 3) == episode_batch<float>(d, ep, &aug, 3));
    CHECK(episode_batch<float>(d, ep, &aug, 3) != batch);
    CHECK(episode_batch<double>(d, ep).shape() == batch.shape());
}

TEST_CASE("image folders") {
    TempDir tmp("folder");
    const char* names[] = {"zebra", "apple", "mango"};
    for (int c = 0; c < 3; ++c) {
        fs::create_directories(tmp.path / names[c]);
        for (int i = 0; i < 4; ++i) {
            cv::Mat m(40 + 7 * i, 60 + 3 * c, CV_8UC3, cv::Scalar(10 * c, 50, 200 - 10 * i));
            cv::imwrite((tmp.path / names[c] / ("img" + std::to_string(i) + ".png")).string(), m);
        }
    }
    const Dataset d = load_image_folder(tmp.path);
    CHECK(d.size() == 12);
    CHECK(d.num_classes() == 3);
    CHECK(d.class_names == std::vector<std::string>{"apple", "mango", "zebra"});
    for (const auto& img : d.images) {
        CHECK(img.shape() == Shape{3, 84, 84});
        for (float v : img.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
    }
    // BGR (10c, 50, 200-10i) on disk; RGB in memory. "apple" was written as class 1.
    CHECK(d.images[0][0] == doctest::Approx(200.0f / 255.0f));
    CHECK(d.images[0][2 * 84 * 84] == doctest::Approx(10.0f / 255.0f));
    CHECK(load_image_folder(tmp.path, 32).images[5].shape() == Shape{3, 32, 32});

    CHECK_THROWS_AS(load_image_folder(tmp.path / "missing"), std::invalid_argument);
    fs::create_directories(tmp.path / "empty");
    CHECK_THROWS_AS(load_image_folder(tmp.path), std::invalid_argument);
    fs::remove(tmp.path / "empty");
    std::ofstream(tmp.path / "apple" / "broken.png") << "not an image";
    CHECK_THROWS_AS(load_image_folder(tmp.path), std::runtime_error);
}

TEST_CASE("derived seeds are stable and distinct") {
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
    CHECK(derive_seed(1, 2) != derive_seed(2, 2));
}
