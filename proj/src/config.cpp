#include "cmla/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <sstream>
#include <tuple>

#include "cmla/error.hpp"
#include "cmla/format.hpp"

namespace cmla {
namespace {

std::string shortest(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Field {
    std::string_view key;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
    throw ConfigError("config key '" + std::string(key) + "': '" + std::string(value) + "' is not " +
                      std::string(want));
}

// Each accessor maps a config to the member it names.
template <class Access>
Field size_field(std::string_view key, Access at) {
    return {key,
            [=](RunConfig& c, std::string_view v) {
                if (!parse_size(v, at(c))) bad_value(key, v, "a non-negative integer");
            },
            [=](const RunConfig& c) { return std::to_string(at(const_cast<RunConfig&>(c))); }};
}

template <class Access>
Field real_field(std::string_view key, Access at) {
    return {key,
            [=](RunConfig& c, std::string_view v) {
                if (!parse_double(v, at(c)) || std::isnan(at(c))) bad_value(key, v, "a number");
            },
            [=](const RunConfig& c) { return shortest(at(const_cast<RunConfig&>(c))); }};
}

template <class Access>
Field path_field(std::string_view key, Access at) {
    return {key, [=](RunConfig& c, std::string_view v) { at(c) = std::string(v); },
            [=](const RunConfig& c) { return at(const_cast<RunConfig&>(c)).string(); }};
}

#define CMLA_AT(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {"seed",
         [](RunConfig& c, std::string_view v) {
             std::uint64_t s = 0;
             const auto r = std::from_chars(v.data(), v.data() + v.size(), s);
             if (r.ec != std::errc{} || r.ptr != v.data() + v.size())
                 bad_value("seed", v, "an unsigned 64-bit integer");
             c.set_seed(s);
         },
         [](const RunConfig& c) { return std::to_string(c.seed()); }},
        // synthetic data
        size_field("num_identities", CMLA_AT(synth.num_identities)),
        size_field("dim", CMLA_AT(synth.dim)),
        size_field("per_id_visible", CMLA_AT(synth.per_id_visible)),
        size_field("per_id_infrared", CMLA_AT(synth.per_id_infrared)),
        real_field("noise_sigma", CMLA_AT(synth.noise_sigma)),
        real_field("gap_strength", CMLA_AT(synth.gap_strength)),
        // pseudo labels and model
        size_field("clusters_visible", CMLA_AT(clusters_visible)),
        size_field("clusters_infrared", CMLA_AT(clusters_infrared)),
        size_field("kmeans_max_iter", CMLA_AT(kmeans_max_iter)),
        size_field("hidden_dim", CMLA_AT(hidden_dim)),
        size_field("embed_dim", CMLA_AT(embed_dim)),
        // schedule
        size_field("epochs_stage1", CMLA_AT(train.epochs_stage1)),
        size_field("epochs_stage2", CMLA_AT(train.epochs_stage2)),
        size_field("ids_per_batch", CMLA_AT(train.ids_per_batch)),
        size_field("instances_per_id", CMLA_AT(train.instances_per_id)),
        size_field("steps_per_epoch", CMLA_AT(train.steps_per_epoch)),
        real_field("lr_stage1", CMLA_AT(train.sgd.lr_stage1)),
        real_field("lr_stage2", CMLA_AT(train.sgd.lr_stage2)),
        real_field("momentum", CMLA_AT(train.sgd.momentum)),
        size_field("warmup_epochs", CMLA_AT(train.sgd.warmup_epochs)),
        // label association
        real_field("ot_lambda", CMLA_AT(train.transport.lambda)),
        real_field("ot_tol", CMLA_AT(train.transport.tol)),
        size_field("ot_max_iter", CMLA_AT(train.transport.max_iter)),
        size_field("nclr_k", CMLA_AT(train.nclr.k)),
        real_field("tau", CMLA_AT(train.nclr.tau)),
        real_field("gamma", CMLA_AT(train.nclr.gamma)),
        real_field("alpha", CMLA_AT(train.weights.alpha_cncr)),
        real_field("triplet_margin", CMLA_AT(train.weights.triplet_margin)),
        // paths
        path_field("data_dir", CMLA_AT(data_dir)),
        path_field("checkpoint", CMLA_AT(checkpoint)),
        path_field("out_dir", CMLA_AT(out_dir)),
    };
    return table;
}

#undef CMLA_AT

}  // namespace

RunConfig::RunConfig() {
    synth.num_identities = 20;
    synth.dim = 16;
    synth.per_id_visible = 40;
    synth.per_id_infrared = 40;
    synth.noise_sigma = 0.3;
    synth.gap_strength = 1.0;
    set_seed(0);
}

void RunConfig::set_seed(std::uint64_t s) {
    train.seed = s;
    train.sgd.seed = s;
    synth.seed = s;
}

std::size_t RunConfig::effective_clusters(Modality m) const noexcept {
    const std::size_t k = m == Modality::visible ? clusters_visible : clusters_infrared;
    return k == 0 ? synth.num_identities : k;
}

ModelShape RunConfig::model_shape(std::size_t classes_visible, std::size_t classes_infrared) const {
    return ModelShape{synth.dim, hidden_dim, embed_dim, classes_visible, classes_infrared};
}

void RunConfig::validate() const {
    synth.validate();
    train.validate();
    if (hidden_dim == 0) throw ConfigError("hidden_dim must be positive");
    if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
    if (kmeans_max_iter == 0) throw ConfigError("kmeans_max_iter must be positive");
    if (effective_clusters(Modality::visible) < 2 || effective_clusters(Modality::infrared) < 2)
        throw ConfigError("cluster counts must be at least 2");
}

std::vector<std::string_view> preset_names() { return {"paper", "desk"}; }

void apply_preset(RunConfig& cfg, std::string_view name) {
    RunConfig fresh;
    if (name == "paper") {
        // defaults already are the paper values
    } else if (name == "desk") {
        fresh.train.epochs_stage1 = 10;
        fresh.train.epochs_stage2 = 10;
    } else {
        throw ConfigError("unknown preset '" + std::string(name) + "' (expected paper or desk)");
    }
    fresh.preset = std::string(name);
    fresh.set_seed(cfg.seed());
    fresh.data_dir = cfg.data_dir;
    fresh.checkpoint = cfg.checkpoint;
    fresh.out_dir = cfg.out_dir;
    cfg = fresh;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
    if (key == "preset") {
        apply_preset(cfg, value);
        return;
    }
    for (const Field& f : fields())
        if (f.key == key) {
            f.set(cfg, value);
            return;
        }
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void read_config(RunConfig& cfg, std::istream& is, std::string_view preset_override) {
    std::string line;
    std::size_t line_no = 0;
    std::optional<std::string> preset;
    std::vector<std::tuple<std::size_t, std::string, std::string>> entries;
    while (std::getline(is, line)) {
        ++line_no;
        std::string_view text(line);
        if (const auto hash = text.find('#'); hash != std::string_view::npos) text = text.substr(0, hash);
        text = trim(text);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string_view::npos) throw ParseError(line_no, "expected 'key = value'");
        const std::string key(trim(text.substr(0, eq)));
        const std::string value(trim(text.substr(eq + 1)));
        if (key.empty()) throw ParseError(line_no, "missing key");
        if (value.empty()) throw ParseError(line_no, "missing value for '" + key + "'");
        if (key == "preset")
            preset = value;
        else
            entries.emplace_back(line_no, key, value);
    }
    try {
        if (!preset_override.empty())
            apply_preset(cfg, preset_override);
        else if (preset)
            apply_preset(cfg, *preset);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    for (const auto& [no, key, value] : entries) {
        try {
            set_config_value(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ParseError(no, e.what());
        }
    }
}

void load_config(RunConfig& cfg, const std::filesystem::path& path, std::string_view preset_override) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
        read_config(cfg, in, preset_override);
    } catch (const ParseError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string format_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "preset = " << cfg.preset << '\n';
    for (const Field& f : fields()) {
        const std::string v = f.get(cfg);
        if (v.empty()) continue;  // unset paths
        os << f.key << " = " << v << '\n';
    }
    return os.str();
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << format_config(cfg);
    if (!out) throw ConfigError("write failed: " + path.string());
}

}  // namespace cmla
