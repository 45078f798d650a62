#include "hfcr/run_config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace hfcr {

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string onoff(bool b) { return b ? "on" : "off"; }

std::size_t to_size(const std::string& key, const std::string& v) {
    const long long n = parse_int(key, v);
    if (n < 0) throw ConfigError(key + ": must be non-negative, got " + v);
    return static_cast<std::size_t>(n);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const auto out = std::stoull(v, &used);
        if (used != v.size() || v.empty() || v[0] == '-') throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    }
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
#define HFCR_SIZE(key, field) t[key] = [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_size(k, v); }
#define HFCR_REAL(key, field) t[key] = [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_double(k, v); }
#define HFCR_BOOL(key, field) t[key] = [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); }
#define HFCR_SEED(key, field) t[key] = [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_u64(k, v); }
        t["model.backbone"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            try {
                c.model.encoder.backbone = parse_backbone(v);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(k + ": " + e.what());
            }
        };
        HFCR_SIZE("model.blocks", model.encoder.blocks);
        HFCR_SIZE("model.channels", model.encoder.channels);
        HFCR_BOOL("model.hffp", model.hffp);
        HFCR_BOOL("model.hfrp", model.hfrp);
        HFCR_BOOL("model.channel", model.channel);
        HFCR_BOOL("model.spatial", model.spatial);
        t["model.arrangement"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            try {
                c.model.arrangement = parse_arrangement(v);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(k + ": " + e.what());
            }
        };
        HFCR_BOOL("model.sfo_position_encoding", model.sfo_position_encoding);
        HFCR_BOOL("model.hfrp_position_encoding", model.hfrp_position_encoding);
        HFCR_BOOL("model.clamp_lambda", model.head.clamp_lambda);
        HFCR_BOOL("model.normalize_distance", model.head.normalize_distance);
        HFCR_SEED("model.seed", model.seed);
        // Derived from the toggles; accepted so snapshots parse back, checked in parse().
        t["model.mode"] = [](RunConfig&, const std::string&, const std::string&) {};

        HFCR_REAL("train.lr0", train.lr0);
        HFCR_REAL("train.momentum", train.momentum);
        HFCR_REAL("train.weight_decay", train.weight_decay);
        HFCR_SIZE("train.epochs", train.epochs);
        HFCR_REAL("train.lr_decay_factor", train.lr_decay_factor);
        HFCR_SIZE("train.lr_decay_period", train.lr_decay_period);
        HFCR_SIZE("train.way", train.train_way);
        HFCR_SIZE("train.shot", train.train_shot);
        HFCR_SIZE("train.queries", train.train_queries);
        HFCR_SIZE("train.episodes_per_epoch", train.episodes_per_epoch);
        HFCR_REAL("train.clip_grad_norm", train.clip_grad_norm);
        HFCR_SIZE("train.validate_every", train.validate_every);
        HFCR_SIZE("train.val_episodes", train.val_episodes);
        HFCR_BOOL("train.augment", train.augmentation.enabled);
        HFCR_REAL("train.crop_scale_min", train.augmentation.crop_scale_min);
        HFCR_REAL("train.crop_scale_max", train.augmentation.crop_scale_max);
        HFCR_REAL("train.flip_probability", train.augmentation.flip_probability);
        HFCR_REAL("train.brightness", train.augmentation.brightness);
        HFCR_REAL("train.saturation", train.augmentation.saturation);
        HFCR_SEED("train.seed", train.seed);

        // Validation during training uses the evaluation episode shape.
        t["eval.way"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.way = c.train.eval_way = to_size(k, v); };
        t["eval.shot"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.shot = c.train.eval_shot = to_size(k, v); };
        t["eval.queries"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.eval.queries = c.train.eval_queries = to_size(k, v);
        };
        HFCR_SIZE("eval.episodes", eval.episodes);
        HFCR_SEED("eval.seed", eval.seed);

        t["data.source"] = [](RunConfig& c, const std::string&, const std::string& v) { c.data.source = v; };
        t["data.root"] = [](RunConfig& c, const std::string&, const std::string& v) { c.data.root = v; };
        HFCR_SIZE("data.side", data.side);
        HFCR_SIZE("data.base_classes", data.base_classes);
        HFCR_SIZE("data.val_classes", data.val_classes);
        HFCR_SIZE("data.novel_classes", data.novel_classes);
        t["data.synthetic_spec"] = [](RunConfig& c, const std::string&, const std::string& v) { c.data.synthetic_spec = v; };
        HFCR_SIZE("data.synthetic.num_classes", data.synthetic.num_classes);
        HFCR_SIZE("data.synthetic.coarse_groups", data.synthetic.coarse_groups);
        HFCR_SIZE("data.synthetic.image_side", data.synthetic.image_side);
        HFCR_SIZE("data.synthetic.images_per_class", data.synthetic.images_per_class);
        HFCR_REAL("data.synthetic.noise_std", data.synthetic.noise_std);
        HFCR_SEED("data.synthetic.seed", data.synthetic.seed);
        HFCR_SIZE("data.synthetic.base_classes", data.synthetic.base_classes);
        HFCR_SIZE("data.synthetic.val_classes", data.synthetic.val_classes);
        HFCR_SIZE("data.synthetic.novel_classes", data.synthetic.novel_classes);

        t["output.dir"] = [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; };
#undef HFCR_SIZE
#undef HFCR_REAL
#undef HFCR_BOOL
#undef HFCR_SEED
        return t;
    }();
    return table;
}

SyntheticSpec resolved_synthetic(const DataSettings& d) {
    if (!d.synthetic_spec.empty()) {
        std::ifstream in(d.synthetic_spec);
        if (!in) throw ConfigError("data.synthetic_spec: cannot read " + d.synthetic_spec.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        try {
            return SyntheticSpec::parse(ss.str());
        } catch (const ConfigError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("data.synthetic_spec: ") + e.what());
        }
    }
    SyntheticSpec s = SyntheticSpec::make_default(d.synthetic.num_classes, d.synthetic.seed);
    s.coarse_groups = d.synthetic.coarse_groups;
    s.image_side = d.synthetic.image_side;
    s.images_per_class = d.synthetic.images_per_class;
    s.noise_std = d.synthetic.noise_std;
    s.base_classes = d.synthetic.base_classes;
    s.val_classes = d.synthetic.val_classes;
    s.novel_classes = d.synthetic.novel_classes;
    return s;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto& t = setters();
    const auto it = t.find(key);
    if (it == t.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(*this, key, value);
}

void RunConfig::apply(const std::map<std::string, std::string>& kv) {
    for (const auto& [k, v] : kv) set(k, v);
}

std::string RunConfig::serialize() const {
    std::ostringstream os;
    auto line = [&](const std::string& k, const std::string& v) { os << k << " = " << v << '\n'; };
    const auto& m = model;
    line("model.mode", m.mode());
    line("model.backbone", to_string(m.encoder.backbone));
    line("model.blocks", std::to_string(m.encoder.blocks));
    line("model.channels", std::to_string(m.encoder.channels));
    line("model.hffp", onoff(m.hffp));
    line("model.hfrp", onoff(m.hfrp));
    line("model.channel", onoff(m.channel));
    line("model.spatial", onoff(m.spatial));
    line("model.arrangement", to_string(m.arrangement));
    line("model.sfo_position_encoding", onoff(m.sfo_position_encoding));
    line("model.hfrp_position_encoding", onoff(m.hfrp_position_encoding));
    line("model.clamp_lambda", onoff(m.head.clamp_lambda));
    line("model.normalize_distance", onoff(m.head.normalize_distance));
    line("model.seed", std::to_string(m.seed));
    const auto& t = train;
    line("train.lr0", num(t.lr0));
    line("train.momentum", num(t.momentum));
    line("train.weight_decay", num(t.weight_decay));
    line("train.epochs", std::to_string(t.epochs));
    line("train.lr_decay_factor", num(t.lr_decay_factor));
    line("train.lr_decay_period", std::to_string(t.lr_decay_period));
    line("train.way", std::to_string(t.train_way));
    line("train.shot", std::to_string(t.train_shot));
    line("train.queries", std::to_string(t.train_queries));
    line("train.episodes_per_epoch", std::to_string(t.episodes_per_epoch));
    line("train.clip_grad_norm", num(t.clip_grad_norm));
    line("train.validate_every", std::to_string(t.validate_every));
    line("train.val_episodes", std::to_string(t.val_episodes));
    line("train.augment", onoff(t.augmentation.enabled));
    line("train.crop_scale_min", num(t.augmentation.crop_scale_min));
    line("train.crop_scale_max", num(t.augmentation.crop_scale_max));
    line("train.flip_probability", num(t.augmentation.flip_probability));
    line("train.brightness", num(t.augmentation.brightness));
    line("train.saturation", num(t.augmentation.saturation));
    line("train.seed", std::to_string(t.seed));
    line("eval.way", std::to_string(eval.way));
    line("eval.shot", std::to_string(eval.shot));
    line("eval.queries", std::to_string(eval.queries));
    line("eval.episodes", std::to_string(eval.episodes));
    line("eval.seed", std::to_string(eval.seed));
    line("data.source", data.source);
    if (!data.root.empty()) line("data.root", data.root.string());
    line("data.side", std::to_string(data.side));
    line("data.base_classes", std::to_string(data.base_classes));
    line("data.val_classes", std::to_string(data.val_classes));
    line("data.novel_classes", std::to_string(data.novel_classes));
    if (!data.synthetic_spec.empty()) line("data.synthetic_spec", data.synthetic_spec.string());
    const auto& s = data.synthetic;
    line("data.synthetic.num_classes", std::to_string(s.num_classes));
    line("data.synthetic.coarse_groups", std::to_string(s.coarse_groups));
    line("data.synthetic.image_side", std::to_string(s.image_side));
    line("data.synthetic.images_per_class", std::to_string(s.images_per_class));
    line("data.synthetic.noise_std", num(s.noise_std));
    line("data.synthetic.seed", std::to_string(s.seed));
    line("data.synthetic.base_classes", std::to_string(s.base_classes));
    line("data.synthetic.val_classes", std::to_string(s.val_classes));
    line("data.synthetic.novel_classes", std::to_string(s.novel_classes));
    line("output.dir", output_dir.string());
    return os.str();
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig c;
    const auto kv = parse_key_values(text);
    c.apply(kv);
    if (auto it = kv.find("model.mode"); it != kv.end() && it->second != c.model.mode()) {
        throw ConfigError("model.mode = " + it->second + " contradicts the toggles, which give " + c.model.mode());
    }
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void RunConfig::validate() const {
    if (!model.channel && !model.spatial && (model.hfrp || model.hffp)) {
        throw ConfigError("--channel off and --spatial off cannot be combined while " +
                          std::string(model.hfrp ? "HFRP" : "HFFP") +
                          " is on (model.channel, model.spatial); disable --hffp and --hfrp for the ProtoNet fallback");
    }
    try {
        model.encoder.validate();
        model_config().validate();
        train.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (eval.way < 2) throw ConfigError("eval.way must be at least 2");
    if (eval.shot == 0 || eval.queries == 0) throw ConfigError("eval.shot and eval.queries must be positive");
    if (eval.episodes == 0) throw ConfigError("eval.episodes must be positive");
    if (data.source == "folder") {
        if (data.root.empty()) throw ConfigError("data.source = folder needs data.root");
        if (data.side == 0) throw ConfigError("data.side must be positive");
    } else if (data.source != "synthetic") {
        throw ConfigError("data.source must be 'synthetic' or 'folder', got '" + data.source + "'");
    }
    if (output_dir.empty()) throw ConfigError("output.dir must not be empty");
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m = model;
    m.encoder.input_side = data.source == "folder" ? data.side : resolved_synthetic(data).image_side;
    return m;
}

LoadedData load_data(const DataSettings& settings) {
    LoadedData out;
    if (settings.source == "folder") {
        out.dataset = load_image_folder(settings.root, settings.side);
        const std::size_t n = out.dataset.num_classes();
        std::size_t nb = settings.base_classes, nv = settings.val_classes, nn = settings.novel_classes;
        if (nb + nv + nn == 0) {
            nb = n * 3 / 5;
            nv = n / 5;
            nn = n - nb - nv;
        }
        out.split = split_classes(n, nb, nv, nn);
    } else {
        const SyntheticSpec spec = resolved_synthetic(settings);
        out.dataset = generate_synthetic(spec);
        out.split = spec.split();
    }
    return out;
}

std::filesystem::path resolve_output(const std::filesystem::path& dir) {
    if (dir.is_absolute()) return dir;
    if (const char* root = std::getenv("HFCR_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / dir;
    return dir;
}

}  // namespace hfcr
