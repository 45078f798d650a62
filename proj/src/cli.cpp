#include "hfcr/cli.hpp"

#include "hfcr/checkpoint.hpp"
#include "hfcr/pipeline_check.hpp"
#include "hfcr/plot.hpp"
#include "hfcr/run_config.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

namespace hfcr {

namespace {

namespace fs = std::filesystem;

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

/// Flags shared by train and ablate. Each maps onto one or more config keys and
/// is applied after the config file, so flags win.
struct RunFlags {
    std::string config_file;
    std::vector<std::string> sets;
    std::string output, data, hffp, hfrp, channel, spatial, arrangement, backbone, normalize, clamp;
    std::optional<std::size_t> way, shot, queries, epochs, episodes_per_epoch, channels, eval_episodes;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;

    void attach(CLI::App& app) {
        app.add_option("--config", config_file, "flat 'section.key = value' config file")->check(CLI::ExistingFile);
        app.add_option("--set", sets, "override one config key, KEY=VALUE (repeatable)");
        app.add_option("--output", output, "output directory (relative paths honour HFCR_OUTPUT_ROOT)");
        app.add_option("--data", data, "'synthetic' or an image-folder root");
        app.add_option("--way", way, "episode way for training and evaluation");
        app.add_option("--shot", shot, "episode shot for training and evaluation");
        app.add_option("--queries", queries, "training queries per class");
        app.add_option("--epochs", epochs, "training epochs");
        app.add_option("--episodes-per-epoch", episodes_per_epoch, "training episodes per epoch");
        app.add_option("--eval-episodes", eval_episodes, "evaluation episodes");
        app.add_option("--seed", seed, "seed for model initialization and episode sampling");
        app.add_option("--lr", lr, "initial learning rate");
        app.add_option("--channels", channels, "encoder width");
        app.add_option("--hffp", hffp, "on|off");
        app.add_option("--hfrp", hfrp, "on|off");
        app.add_option("--channel", channel, "on|off: channel branches (CFO, CFR)");
        app.add_option("--spatial", spatial, "on|off: spatial branches (SFO, SFR)");
        app.add_option("--arrangement", arrangement, "parallel | cfo->sfo | sfo->cfo");
        app.add_option("--backbone", backbone, "conv4 | resnet12");
        app.add_option("--normalize-distance", normalize, "on|off: divide reconstruction errors by element count");
        app.add_option("--clamp-lambda", clamp, "on|off: keep the four weights non-negative");
    }

    RunConfig resolve() const {
        RunConfig c = config_file.empty() ? RunConfig{} : RunConfig::load(config_file);
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
            c.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
        }
        if (!output.empty()) c.set("output.dir", output);
        if (!data.empty()) {
            if (data == "synthetic") {
                c.set("data.source", "synthetic");
            } else {
                c.set("data.source", "folder");
                c.set("data.root", data);
            }
        }
        auto n = [](std::size_t v) { return std::to_string(v); };
        if (way) c.set("train.way", n(*way)), c.set("eval.way", n(*way));
        if (shot) c.set("train.shot", n(*shot)), c.set("eval.shot", n(*shot));
        if (queries) c.set("train.queries", n(*queries));
        if (epochs) c.set("train.epochs", n(*epochs));
        if (episodes_per_epoch) c.set("train.episodes_per_epoch", n(*episodes_per_epoch));
        if (eval_episodes) c.set("eval.episodes", n(*eval_episodes));
        if (channels) c.set("model.channels", n(*channels));
        if (seed) c.set("model.seed", std::to_string(*seed)), c.set("train.seed", std::to_string(*seed));
        if (lr) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", *lr);
            c.set("train.lr0", buf);
        }
        const std::pair<const std::string*, const char*> toggles[] = {
            {&hffp, "model.hffp"},           {&hfrp, "model.hfrp"},         {&channel, "model.channel"},
            {&spatial, "model.spatial"},     {&arrangement, "model.arrangement"}, {&backbone, "model.backbone"},
            {&normalize, "model.normalize_distance"}, {&clamp, "model.clamp_lambda"}};
        for (const auto& [value, key] : toggles)
            if (!value->empty()) c.set(key, *value);
        c.validate();
        return c;
    }
};

struct TrainedRun {
    EvalReport report;
    TrainResult result;
};

TrainedRun train_and_evaluate(const RunConfig& cfg, const LoadedData& data, HfcrModel<float>& model,
                              const std::function<void(const LogRow&)>& on_step) {
    TrainedRun run;
    run.result = train(model, data.dataset, data.split, cfg.train, on_step);
    run.report = evaluate(model, data.dataset, data.split.novel, cfg.eval.way, cfg.eval.shot, cfg.eval.queries,
                          cfg.eval.episodes, cfg.eval.seed);
    return run;
}

Checkpoint checkpoint_with_config(HfcrModel<float>& model, const RunConfig& cfg, const TrainResult& r) {
    Checkpoint ck = capture(model);
    for (const auto& [k, v] : parse_key_values(cfg.serialize())) ck.meta.emplace_back("config." + k, v);
    ck.meta.emplace_back("best_epoch", std::to_string(r.best_epoch));
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", r.best_val_accuracy);
    ck.meta.emplace_back("best_val_accuracy", buf);
    return ck;
}

int cmd_train(const RunFlags& flags, std::ostream& out) {
    const RunConfig cfg = flags.resolve();
    const fs::path dir = resolve_output(cfg.output_dir);
    const LoadedData data = load_data(cfg.data);
    fs::create_directories(dir);
    write_file(dir / "config.txt", cfg.serialize());

    HfcrModel<float> model(cfg.model_config());
    const auto t0 = std::chrono::steady_clock::now();
    double epoch_loss = 0;
    TrainResult result = train(model, data.dataset, data.split, cfg.train, [&](const LogRow& row) {
        epoch_loss += row.loss;
        if (row.episode + 1 == cfg.train.episodes_per_epoch) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            char buf[160];
            std::snprintf(buf, sizeof buf, "epoch %zu/%zu  mean loss %.4f  lr %.3g  %.0fs\n", row.epoch + 1,
                          cfg.train.epochs, epoch_loss / static_cast<double>(cfg.train.episodes_per_epoch), row.lr, secs);
            out << buf << std::flush;
            epoch_loss = 0;
        }
    });
    write_file(dir / "train_log.csv", log_csv(result.log));
    std::string val = "epoch,accuracy\n";
    for (const auto& [e, a] : result.validations) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%zu,%.6f\n", e, a);
        val += buf;
    }
    write_file(dir / "validation.csv", val);
    save_checkpoint(dir / "checkpoint.ckpt", checkpoint_with_config(model, cfg, result));

    std::string notes = "mode " + cfg.model.mode() + "\n";
    notes += "train episodes " + std::to_string(cfg.train.train_way) + "-way " + std::to_string(cfg.train.train_shot) +
             "-shot; desk scale keeps training at the evaluation way instead of a 20-way regimen\n";
    notes += "best epoch " + std::to_string(result.best_epoch) + "\n";
    write_file(dir / "run.log", notes);
    out << "checkpoint " << (dir / "checkpoint.ckpt").string() << " (best epoch " << result.best_epoch << ")\n";
    return exit_ok;
}

struct EvalFlags {
    std::string checkpoint, output, data;
    std::vector<std::string> sets;
    std::optional<std::size_t> episodes, way, shot, queries;
    std::optional<std::uint64_t> seed;
};

int cmd_eval(const EvalFlags& f, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(f.checkpoint);
    std::string snapshot;
    for (const auto& [k, v] : ck.meta)
        if (k.rfind("config.", 0) == 0) snapshot += k.substr(7) + " = " + v + "\n";
    if (snapshot.empty()) throw CheckpointError("checkpoint carries no run config");
    RunConfig cfg = RunConfig::parse(snapshot);
    for (const auto& kv : f.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
        cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (f.episodes) cfg.set("eval.episodes", std::to_string(*f.episodes));
    if (f.way) cfg.set("eval.way", std::to_string(*f.way));
    if (f.shot) cfg.set("eval.shot", std::to_string(*f.shot));
    if (f.queries) cfg.set("eval.queries", std::to_string(*f.queries));
    if (f.seed) cfg.set("eval.seed", std::to_string(*f.seed));
    if (!f.data.empty()) {
        if (f.data == "synthetic") {
            cfg.set("data.source", "synthetic");
        } else {
            cfg.set("data.source", "folder");
            cfg.set("data.root", f.data);
        }
    }
    cfg.validate();

    const LoadedData data = load_data(cfg.data);
    HfcrModel<float> model(cfg.model_config());
    restore(model, ck);
    const EvalReport report = evaluate(model, data.dataset, data.split.novel, cfg.eval.way, cfg.eval.shot,
                                       cfg.eval.queries, cfg.eval.episodes, cfg.eval.seed);
    const fs::path dir = f.output.empty() ? fs::path(f.checkpoint).parent_path() : resolve_output(f.output);
    if (!dir.empty()) fs::create_directories(dir);
    write_file(dir / "eval_report.json", report.to_json());
    out << report.formatted() << "\n";
    return exit_ok;
}

struct Variant {
    std::string axis, name;
    std::vector<std::pair<std::string, std::string>> keys;
};

std::vector<Variant> axis_variants(const std::string& axis) {
    std::vector<Variant> v;
    if (axis == "components" || axis == "all") {
        v.push_back({"components", "protonet", {{"model.hffp", "off"}, {"model.hfrp", "off"}}});
        v.push_back({"components", "hfrp-only", {{"model.hffp", "off"}, {"model.hfrp", "on"}}});
        v.push_back({"components", "full", {{"model.hffp", "on"}, {"model.hfrp", "on"}}});
    }
    if (axis == "features" || axis == "all") {
        v.push_back({"features", "spatial-only", {{"model.channel", "off"}, {"model.spatial", "on"}}});
        v.push_back({"features", "channel-only", {{"model.channel", "on"}, {"model.spatial", "off"}}});
        v.push_back({"features", "hybrid", {{"model.channel", "on"}, {"model.spatial", "on"}}});
    }
    if (axis == "arrangement" || axis == "all") {
        v.push_back({"arrangement", "cfo→sfo", {{"model.arrangement", "cfo->sfo"}}});
        v.push_back({"arrangement", "sfo→cfo", {{"model.arrangement", "sfo->cfo"}}});
        v.push_back({"arrangement", "parallel", {{"model.arrangement", "parallel"}}});
    }
    if (v.empty()) throw ConfigError("--axis must be components, features, arrangement or all, got '" + axis + "'");
    return v;
}

int cmd_ablate(const RunFlags& flags, const std::string& axis, std::size_t parallel, std::ostream& out) {
    const RunConfig base = flags.resolve();
    if (base.train.epochs == 0) throw ConfigError("ablation budget too small: train.epochs = 0 completes no variant");
    if (parallel == 0) throw ConfigError("--parallel must be at least 1");
    const auto variants = axis_variants(axis);

    // Variants that resolve to the same configuration are trained once.
    std::vector<RunConfig> configs;
    std::vector<std::size_t> job_of;
    std::map<std::string, std::size_t> seen;
    for (const auto& v : variants) {
        RunConfig c = base;
        for (const auto& [k, val] : v.keys) c.set(k, val);
        c.validate();
        const std::string key = c.serialize();
        auto [it, fresh] = seen.try_emplace(key, configs.size());
        if (fresh) configs.push_back(c);
        job_of.push_back(it->second);
    }

    const LoadedData data = load_data(base.data);
    std::vector<EvalReport> reports(configs.size());
    std::vector<std::exception_ptr> errors(configs.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&] {
        for (std::size_t j; (j = next++) < configs.size();) {
            try {
                HfcrModel<float> model(configs[j].model_config());
                reports[j] = train_and_evaluate(configs[j], data, model, {}).report;
                std::lock_guard lock(log_mutex);
                out << "variant " << configs[j].model.mode() << " / " << to_string(configs[j].model.arrangement)
                    << " channel=" << (configs[j].model.channel ? "on" : "off")
                    << " spatial=" << (configs[j].model.spatial ? "on" : "off") << ": " << reports[j].formatted() << "\n"
                    << std::flush;
            } catch (...) {
                errors[j] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < std::min(parallel, configs.size()); ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::string csv = std::string(ablation_csv_header) + "\n";
    std::vector<std::vector<std::string>> table{{"axis", "variant", "mode", "accuracy", "episodes"}};
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const EvalReport& r = reports[job_of[i]];
        const std::string mode = configs[job_of[i]].model.mode();
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%s,%s,%.6f,%.6f,%zu,%s\n", variants[i].axis.c_str(), variants[i].name.c_str(),
                      mode.c_str(), r.mean, r.ci95, r.episodes, r.formatted().c_str());
        csv += buf;
        table.push_back({variants[i].axis, variants[i].name, mode, r.formatted(), std::to_string(r.episodes)});
    }
    const fs::path dir = resolve_output(base.output_dir);
    fs::create_directories(dir);
    write_file(dir / "ablation.csv", csv);
    const std::string text = aligned_table(table);
    write_file(dir / "ablation.txt", text);
    out << text;
    return exit_ok;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& output, std::ostream& out) {
    std::vector<fs::path> paths(inputs.begin(), inputs.end());
    const auto outputs = plot_files(paths, output.empty() ? fs::path(".") : resolve_output(output));
    for (const auto& o : outputs) out << o.image.string() << "\n" << o.table.string() << "\n";
    return exit_ok;
}

int cmd_gradcheck(std::uint64_t seed, double eps, std::ostream& out) {
    const GradCheckResult r = pipeline_gradcheck(seed, eps);
    char buf[160];
    for (const auto& [name, e] : r.per_parameter) {
        std::snprintf(buf, sizeof buf, "%-28s %.3e\n", name.c_str(), e);
        out << buf;
    }
    const bool ok = r.max_rel_error < 1e-4;
    std::snprintf(buf, sizeof buf, "max relative error %.3e at %s[%zu] over %zu entries: %s\n", r.max_rel_error,
                  r.worst_parameter.c_str(), r.worst_index, r.checked, ok ? "PASS" : "FAIL");
    out << buf;
    return ok ? exit_ok : exit_runtime;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"few-shot image classification with channel and spatial feature reconstruction", "hfcr"};
    app.require_subcommand(1);

    RunFlags train_flags;
    auto* train_cmd = app.add_subcommand("train", "episodic training; writes checkpoint, config snapshot and log");
    train_flags.attach(*train_cmd);

    EvalFlags eval_flags;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on novel classes");
    eval_cmd->add_option("--checkpoint", eval_flags.checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--episodes", eval_flags.episodes, "evaluation episodes");
    eval_cmd->add_option("--way", eval_flags.way, "episode way");
    eval_cmd->add_option("--shot", eval_flags.shot, "episode shot");
    eval_cmd->add_option("--queries", eval_flags.queries, "queries per class");
    eval_cmd->add_option("--seed", eval_flags.seed, "episode seed");
    eval_cmd->add_option("--data", eval_flags.data, "'synthetic' or an image-folder root");
    eval_cmd->add_option("--set", eval_flags.sets, "override one config key, KEY=VALUE");
    eval_cmd->add_option("--output", eval_flags.output, "directory for eval_report.json (default: checkpoint's)");

    RunFlags ablate_flags;
    std::string axis = "all";
    std::size_t parallel = 1;
    auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate each variant along an ablation axis");
    ablate_flags.attach(*ablate_cmd);
    ablate_cmd->add_option("--axis", axis, "components | features | arrangement | all");
    ablate_cmd->add_option("--parallel", parallel, "variants trained concurrently");

    std::vector<std::string> plot_inputs;
    std::string plot_output;
    auto* plot_cmd = app.add_subcommand("plot", "render training logs and ablation reports as PNG plus text tables");
    plot_cmd->add_option("inputs", plot_inputs, "train_log.csv or ablation.csv files")->required();
    plot_cmd->add_option("--output", plot_output, "output directory");

    std::uint64_t gc_seed = 2;
    double gc_eps = 1e-4;
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check through the full pipeline (double precision)");
    gc_cmd->add_option("--seed", gc_seed, "initialization and input seed");
    gc_cmd->add_option("--eps", gc_eps, "central-difference step");

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? exit_ok : exit_config;
    }

    try {
        if (*train_cmd) return cmd_train(train_flags, out);
        if (*eval_cmd) return cmd_eval(eval_flags, out);
        if (*ablate_cmd) return cmd_ablate(ablate_flags, axis, parallel, out);
        if (*plot_cmd) return cmd_plot(plot_inputs, plot_output, out);
        if (*gc_cmd) return cmd_gradcheck(gc_seed, gc_eps, out);
    } catch (const CheckpointError& e) {
        err << "error: " << e.what() << "\n";
        return exit_runtime;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return exit_config;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_runtime;
    }
    return exit_config;
}

}  // namespace hfcr
