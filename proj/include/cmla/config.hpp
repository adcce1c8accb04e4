#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "cmla/data.hpp"
#include "cmla/model.hpp"
#include "cmla/trainer.hpp"

namespace cmla {

/// Every tunable of a run. Defaults are the paper preset; `desk` shortens
/// the schedule.
struct RunConfig {
    std::string preset = "paper";

    SynthConfig synth;
    std::size_t clusters_visible = 0;   // 0: num_identities
    std::size_t clusters_infrared = 0;  // 0: num_identities
    std::size_t kmeans_max_iter = 100;
    std::size_t hidden_dim = 16;
    std::size_t embed_dim = 16;
    TrainConfig train;

    std::filesystem::path data_dir;    // dataset files for train / evaluate
    std::filesystem::path checkpoint;  // model for evaluate
    std::filesystem::path out_dir;

    RunConfig();

    /// Master seed; fans out to data, clustering, init and sampling.
    std::uint64_t seed() const noexcept { return train.seed; }
    void set_seed(std::uint64_t seed);

    std::size_t effective_clusters(Modality m) const noexcept;
    ModelShape model_shape(std::size_t classes_visible, std::size_t classes_infrared) const;

    void validate() const;
};

/// Names accepted after `preset =` and `--preset`.
std::vector<std::string_view> preset_names();
/// Resets every tunable to the named preset. Paths are kept.
void apply_preset(RunConfig& cfg, std::string_view name);

/// Sets one key from its textual value. Unknown keys and bad values throw
/// ConfigError naming the key.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

/// Parses `key = value` lines with `#` comments on top of `cfg`. A `preset`
/// line resets the tunables before the remaining keys apply, wherever it
/// appears; a non-empty `preset_override` takes its place. Errors carry the
/// line number.
void read_config(RunConfig& cfg, std::istream& is, std::string_view preset_override = {});
void load_config(RunConfig& cfg, const std::filesystem::path& path, std::string_view preset_override = {});

/// All keys in a stable order, values exact enough to reload bit for bit.
std::string format_config(const RunConfig& cfg);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace cmla
