// Acceptance gate: one PASS/FAIL line per criterion. `--only N` runs a single one.

#include "hfcr/checkpoint.hpp"
#include "hfcr/cli.hpp"
#include "hfcr/pipeline_check.hpp"
#include "hfcr/plot.hpp"
#include "hfcr/trainer.hpp"
#include "grid.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

using namespace hfcr;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(std::vector<std::string> args, std::string* out = nullptr) {
    std::ostringstream o, e;
    const int code = run_cli(args, o, e);
    if (out) *out = o.str();
    if (code != exit_ok) std::fprintf(stderr, "%s", e.str().c_str());
    return code;
}

// Scratch space for the CLI-driven criteria; kept after the run for inspection.
fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "hfcr_acceptance" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    setenv("HFCR_OUTPUT_ROOT", p.c_str(), 1);
    return p;
}

Verdict ac1() {
    Conv4Encoder<float> enc(EncoderConfig{}, 1);
    std::mt19937_64 rng(5);
    const auto images = oracle::random_tensor<float>(Shape{1, 3, 84, 84}, rng, 0.0, 1.0);
    const auto t0 = Clock::now();
    Graph<float> g(false);
    const auto maps = enc.conv4_forward(g, images, Mode::eval);
    const double secs = seconds_since(t0);
    const Shape got = maps.at(0).values.shape();
    const bool ok = maps.size() == 1 && got == Shape{64, 5, 5} && maps[0].d == 64 && maps[0].r() == 25 && secs < 1.0;
    return {ok, "3x84x84 -> " + to_string(got) + fmt(" in %.3f s (limit 1 s)", secs)};
}

Verdict ac2() {
    const auto t0 = Clock::now();
    const GradCheckResult r = pipeline_gradcheck(2, 1e-4);
    const double secs = seconds_since(t0);
    std::map<std::string, double> seen(r.per_parameter.begin(), r.per_parameter.end());
    bool head = true;
    for (const char* n : {"head.lambda1", "head.lambda2", "head.lambda3", "head.lambda4", "head.log_tau"})
        head = head && seen.count(n);
    const bool ok = r.max_rel_error < 1e-4 && head && secs < 120.0;
    return {ok, fmt("max rel error %.3e (limit 1e-4) over %zu elements of %zu parameters, worst %s[%zu], %.1f s",
                    r.max_rel_error, r.checked, r.per_parameter.size(), r.worst_parameter.c_str(), r.worst_index, secs)};
}

Verdict ac3() {
    const auto t0 = Clock::now();
    const char* names[] = {"cfo", "sfo", "cfr_query", "cfr_support", "sfr_query", "sfr_support"};
    double worst[6] = {};
    std::size_t cases = 0;
    for (std::size_t d = 1; d <= 4; ++d)
        for (std::size_t r = 1; r <= 6; ++r)
            for (std::uint64_t seed = 1; seed <= 5; ++seed) {
                const auto h = grid::hffp_errors(d, r, seed);
                for (int i = 0; i < 2; ++i) worst[i] = std::max(worst[i], h[i]);
                for (std::size_t k = 1; k <= 3; ++k) {
                    const auto e = grid::hfrp_errors(d, r, k, seed);
                    for (int i = 0; i < 4; ++i) worst[2 + i] = std::max(worst[2 + i], e[i]);
                    ++cases;
                }
            }
    const double secs = seconds_since(t0);
    bool ok = secs < 60.0;
    std::string detail;
    for (int i = 0; i < 6; ++i) {
        ok = ok && worst[i] < 1e-5;
        detail += fmt("%s %.1e, ", names[i], worst[i]);
    }
    return {ok, detail + fmt("%zu grid points, %.1f s", cases, secs)};
}

// Four reconstruction errors per (query, class), read from an untrained full model.
template <typename T>
std::vector<std::array<T, 4>> four_distances(HfcrModel<T>& model, const EpisodeFeatures<T>& raw) {
    EpisodeFeatures<T> f = raw;
    const HffpOptions opts = model.config().hffp_options();
    for (auto& m : f.support) m = apply_hffp(m, model.hffp(), opts);
    for (auto& m : f.query) m = apply_hffp(m, model.hffp(), opts);
    std::vector<std::array<T, 4>> out;
    for (const auto& b : reconstruct_all(f, model.config().hfrp_options(), model.hfrp())) {
        const auto e = bundle_errors(b, model.config().head.normalize_distance);
        std::array<T, 4> row{};
        for (std::size_t j = 0; j < 4; ++j) row[j] = e[j].value().value().item();
        out.push_back(row);
    }
    return out;
}

Verdict ac4() {
    const auto t0 = Clock::now();
    const SyntheticSpec spec = SyntheticSpec::make_default();
    const Dataset data = generate_synthetic(spec);
    const DatasetSplit split = spec.split();
    ModelConfig cfg;
    cfg.encoder.input_side = data.side;
    HfcrModel<float> model(cfg);
    HfcrModel<double> model64(cfg);
    const std::size_t way = 5, shot = 3;

    double shot_dev = 0, shot_rel32 = 0, attn_dev = 0;
    std::size_t prob_mismatch = 0, argmax_flips = 0, softmax_nodes = 0, episodes = 0;
    for (std::uint64_t s = 0; s < 4; ++s, ++episodes) {
        const Episode ep = sample_episode(data, split.novel, way, shot, 3, derive_seed(99, s));
        const Tensor<float> batch = episode_batch<float>(data, ep);
        auto encode = [&](Graph<float>& g) {
            const auto maps = model.encoder().conv4_forward(g, batch, Mode::eval);
            const auto mid = maps.begin() + static_cast<std::ptrdiff_t>(way * shot);
            return EpisodeFeatures<float>{way, shot, {maps.begin(), mid}, {mid, maps.end()}};
        };
        Graph<float> g(false);
        const EpisodeFeatures<float> f = encode(g);

        // (a) permute the shots inside every class. Raw distances reach ~1e4, where one
        // float32 ulp is ~1e-3, so the absolute bound is checked in double precision and
        // the float32 deviation is reported relative to the distance.
        auto shot_check = [&]<typename T>(HfcrModel<T>& net, bool relative) {
            const Tensor<T> b = episode_batch<T>(data, ep);
            Graph<T> h(false);
            const auto maps = net.encoder().conv4_forward(h, b, Mode::eval);
            const auto mid = maps.begin() + static_cast<std::ptrdiff_t>(way * shot);
            const EpisodeFeatures<T> base_f{way, shot, {maps.begin(), mid}, {mid, maps.end()}};
            const auto base = four_distances(net, base_f);
            double dev = 0;
            for (const auto& order : std::vector<std::array<std::size_t, 3>>{{2, 1, 0}, {1, 2, 0}, {0, 2, 1}}) {
                EpisodeFeatures<T> p = base_f;
                for (std::size_t n = 0; n < way; ++n)
                    for (std::size_t k = 0; k < shot; ++k) p.support[n * shot + k] = base_f.support[n * shot + order[k]];
                const auto got = four_distances(net, p);
                for (std::size_t i = 0; i < got.size(); ++i)
                    for (std::size_t j = 0; j < 4; ++j) {
                        const double diff = std::abs(static_cast<double>(got[i][j]) - static_cast<double>(base[i][j]));
                        dev = std::max(dev, relative ? diff / std::abs(static_cast<double>(base[i][j])) : diff);
                    }
            }
            return dev;
        };
        shot_dev = std::max(shot_dev, shot_check(model64, false));
        shot_rel32 = std::max(shot_rel32, shot_check(model, true));

        // (b) permute the classes; probabilities must follow the same index permutation.
        const auto probs = scores_from_distances(model.distances_from_features(f).value());
        for (const auto& pi : std::vector<std::array<std::size_t, 5>>{{4, 3, 2, 1, 0}, {1, 2, 3, 4, 0}, {2, 0, 4, 1, 3}}) {
            EpisodeFeatures<float> p = f;
            for (std::size_t n = 0; n < way; ++n)
                for (std::size_t k = 0; k < shot; ++k) p.support[n * shot + k] = f.support[pi[n] * shot + k];
            const auto got = scores_from_distances(model.distances_from_features(p).value());
            for (std::size_t i = 0; i < got.probabilities.size(); ++i)
                for (std::size_t n = 0; n < way; ++n)
                    prob_mismatch += got.probabilities[i][n] != probs.probabilities[i][pi[n]];
        }

        // (c) τ and global λ scaling keep every argmax.
        const float log_tau0 = model.head().log_tau.value.item();
        for (double tau : {0.1, 1.0, 10.0})
            for (double lam : {1.0, 0.5, 2.0}) {
                model.head().log_tau.value[0] = static_cast<float>(std::log(tau));
                for (auto& l : model.head().lambda) l.value[0] *= static_cast<float>(lam);
                // A graph captures parameter values on first use, so each setting gets its own.
                Graph<float> h(false);
                const auto got = scores_from_distances(model.distances_from_features(encode(h)).value());
                for (std::size_t i = 0; i < got.predicted.size(); ++i) argmax_flips += got.predicted[i] != probs.predicted[i];
                for (auto& l : model.head().lambda) l.value[0] /= static_cast<float>(lam);
            }
        model.head().log_tau.value[0] = log_tau0;

        // (d) every softmax node of a training-mode graph, attention and class probabilities alike.
        Graph<float> tg;
        const Var<float> dist = model.episode_distances(tg, batch, way, shot, Mode::train);
        const Var<float> loss = episode_loss(dist, ep.query_labels);
        tg.backward(loss);
        for (std::size_t id = 0; id < tg.size(); ++id) {
            if (tg.op_name(id) != "softmax") continue;
            ++softmax_nodes;
            const Tensor<float>& v = tg.value(id);
            const std::size_t n = v.shape().back();
            for (std::size_t row = 0; row < v.size() / n; ++row) {
                double sum = 0;
                for (std::size_t j = 0; j < n; ++j) sum += v[row * n + j];
                attn_dev = std::max(attn_dev, std::abs(sum - 1.0));
            }
        }
    }
    const double secs = seconds_since(t0);
    const bool ok = shot_dev < 1e-6 && prob_mismatch == 0 && argmax_flips == 0 && attn_dev <= 1e-6 && softmax_nodes > 0 &&
                    secs < 60.0;
    return {ok, fmt("(a) shot-permutation max dev %.2e in float64 (limit 1e-6), float32 relative %.2e; (b) %zu probability mismatches; "
                    "(c) %zu argmax flips; (d) max |row sum - 1| %.2e over %zu softmax nodes; %zu episodes, %.1f s",
                    shot_dev, shot_rel32, prob_mismatch, argmax_flips, attn_dev, softmax_nodes, episodes, secs)};
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
    return out;
}

Verdict ac5() {
    const fs::path root = scratch("ac5");
    // Default hyperparameters plus gradient-norm clipping. Without clipping a single
    // exploding episode drives log τ so low that every logit is zero, and the run
    // never leaves that plateau.
    const std::vector<std::string> common{"--data", "synthetic", "--way", "5", "--shot", "1", "--seed", "1",
                                          "--set", "train.clip_grad_norm=5", "--set", "train.validate_every=1",
                                          "--set", "train.val_episodes=50"};
    auto with = [&](std::vector<std::string> head) {
        head.insert(head.end(), common.begin(), common.end());
        return head;
    };
    const auto t0 = Clock::now();
    if (cli(with({"train", "--epochs", "8", "--episodes-per-epoch", "50", "--output", "full"})) != exit_ok)
        return {false, "training run failed"};
    const double train_secs = seconds_since(t0);
    if (cli({"eval", "--checkpoint", (root / "full" / "checkpoint.ckpt").string(), "--episodes", "1000"}) != exit_ok)
        return {false, "evaluation failed"};
    const auto report = nlohmann::json::parse(slurp(root / "full" / "eval_report.json"));
    const double full = report["mean"].get<double>();
    const std::string full_fmt = report["formatted"].get<std::string>();
    const std::size_t full_eps = report["episodes"].get<std::size_t>();

    const auto t1 = Clock::now();
    if (cli(with({"ablate", "--axis", "all", "--epochs", "4", "--episodes-per-epoch", "50", "--eval-episodes", "200",
                  "--output", "ablation"})) != exit_ok)
        return {false, "ablation runner failed"};
    const double ablate_secs = seconds_since(t1);
    std::istringstream csv(slurp(root / "ablation" / "ablation.csv"));
    std::string line;
    std::getline(csv, line);
    bool ablation_ok = line == ablation_csv_header;
    double worst = 100;
    std::string rows;
    std::map<std::string, int> axes;
    while (std::getline(csv, line)) {
        const auto c = split_csv(line);
        if (c.size() != 7) return {false, "malformed ablation row: " + line};
        ++axes[c[0]];
        worst = std::min(worst, std::stod(c[3]));
        rows += " " + c[1] + " " + c[6] + ";";
    }
    ablation_ok = ablation_ok && axes["components"] == 3 && axes["features"] == 3 && axes["arrangement"] == 3 && worst > 60.0;
    const bool ok = full >= 90.0 && full_eps == 1000 && train_secs < 1800.0 && ablation_ok;
    return {ok, fmt("full %s over %zu novel episodes (need >= 90), trained in %.0f s; ablation worst %.2f (need > 60) "
                    "in %.0f s:",
                    full_fmt.c_str(), full_eps, train_secs, worst, ablate_secs) +
                    rows};
}

Verdict ac6() {
    const SyntheticSpec spec = SyntheticSpec::make_default();
    const Dataset data = generate_synthetic(spec);
    const DatasetSplit split = spec.split();
    ModelConfig cfg;
    cfg.encoder.input_side = data.side;
    cfg.hffp = cfg.hfrp = false;
    HfcrModel<float> model(cfg);
    std::size_t compared = 0, differing = 0;
    for (std::size_t shot : {1, 5})
        for (std::uint64_t s = 0; s < 20; ++s) {
            const Episode ep = sample_episode(data, split.novel, 5, shot, 6, derive_seed(7, s, shot));
            const Tensor<float> batch = episode_batch<float>(data, ep);
            const ClassScores<float> got = model.predict(batch, 5, shot);
            Graph<float> g(false);
            const auto maps = model.encoder().conv4_forward(g, batch, Mode::eval);
            std::vector<Tensor<float>> sup, qry;
            for (std::size_t i = 0; i < maps.size(); ++i) (i < 5 * shot ? sup : qry).push_back(maps[i].values.value());
            const ClassScores<float> want = protonet_score<float>(sup, 5, shot, qry);
            for (std::size_t i = 0; i < qry.size(); ++i) {
                compared += 5;
                differing += std::memcmp(got.probabilities[i].data(), want.probabilities[i].data(), 5 * sizeof(float)) != 0;
            }
        }
    return {differing == 0 && compared > 0,
            fmt("%zu probability rows differ bitwise out of %zu values checked (1-shot and 5-shot)", differing, compared)};
}

Verdict ac7() {
    SyntheticSpec spec = SyntheticSpec::make_default(16);
    spec.images_per_class = 12;
    spec.base_classes = 6, spec.val_classes = 5, spec.novel_classes = 5;
    const Dataset data = generate_synthetic(spec);
    const DatasetSplit split = spec.split();
    ModelConfig mc;
    mc.encoder.input_side = data.side;
    mc.encoder.channels = 16;
    mc.head.normalize_distance = true;
    TrainConfig tc;
    tc.epochs = 2;
    tc.episodes_per_epoch = 4;
    tc.train_queries = 4;
    tc.eval_queries = 5;
    tc.clip_grad_norm = 5;
    tc.validate_every = 1;
    tc.val_episodes = 4;

    HfcrModel<float> a(mc), b(mc);
    const TrainResult ra = train(a, data, split, tc);
    const TrainResult rb = train(b, data, split, tc);
    const bool logs_equal = log_csv(ra.log) == log_csv(rb.log) && ra.log.size() == 8;

    const EvalReport before = evaluate(a, data, split.novel, 5, 1, 5, 30, 11);
    const fs::path dir = scratch("ac7");
    save_checkpoint(dir / "model.ckpt", capture(a));
    ModelConfig other = mc;
    other.seed = 1234;
    HfcrModel<float> c(other);
    restore(c, load_checkpoint(dir / "model.ckpt"));
    const EvalReport after = evaluate(c, data, split.novel, 5, 1, 5, 30, 11);
    const bool report_equal = before == after;

    std::string bytes = slurp(dir / "model.ckpt");
    bytes[bytes.size() / 2 + bytes.size() / 4] ^= 0x04;
    std::ofstream(dir / "corrupt.ckpt", std::ios::binary) << bytes;
    std::string rejection = "accepted";
    try {
        load_checkpoint(dir / "corrupt.ckpt");
    } catch (const CheckpointError& e) {
        rejection = e.what();
    }
    const bool rejected = rejection.find("checksum") != std::string::npos;
    return {logs_equal && report_equal && rejected,
            fmt("loss logs %s (%zu rows); reloaded report %s (%s vs %s); corrupted checkpoint: %s",
                logs_equal ? "identical" : "DIFFER", ra.log.size(), report_equal ? "identical" : "DIFFERS",
                before.formatted().c_str(), after.formatted().c_str(), rejection.c_str())};
}

Verdict ac8() {
    // {55, 65, 75}: mean 65, population std sqrt(200/3),
    // ci95 = 1.96 * sqrt(200/3) / sqrt(3) = 1.96 * sqrt(200) / 3 = 9.239528607504221.
    const EvalReport r = make_report({55.0, 65.0, 75.0});
    const double want = 9.239528607504221;
    const EvalReport one = make_report({40.0});
    const bool ok = std::abs(r.ci95 - want) < 1e-12 && r.mean == 65.0 && r.formatted() == "65.00±9.24" &&
                    one.formatted() == "40.00±0.00";
    return {ok, fmt("ci95 %.15f vs hand-computed %.15f; formatted '%s', single episode '%s'", r.ci95, want,
                    r.formatted().c_str(), one.formatted().c_str())};
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else {
            std::fprintf(stderr, "usage: %s [--only N]\n", argv[0]);
            return 2;
        }
    }
    const std::vector<std::function<Verdict()>> checks{ac1, ac2, ac3, ac4, ac5, ac6, ac7, ac8};
    if (only < 0 || only > static_cast<int>(checks.size())) {
        std::fprintf(stderr, "--only expects 1..%zu\n", checks.size());
        return 2;
    }
    int failed = 0;
    for (std::size_t i = 0; i < checks.size(); ++i) {
        if (only && static_cast<int>(i + 1) != only) continue;
        Verdict v;
        try {
            v = checks[i]();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        std::printf("AC%zu %s %s\n", i + 1, v.pass ? "PASS" : "FAIL", v.detail.c_str());
        std::fflush(stdout);
        failed += !v.pass;
    }
    return failed ? 1 : 0;
}
