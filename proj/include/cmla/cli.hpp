#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "cmla/config.hpp"

namespace cmla::cli {

/// Flags shared by the subcommands; unset ones fall back to the config.
struct Options {
    std::optional<std::filesystem::path> config;
    std::optional<std::string> preset;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    std::optional<std::filesystem::path> data;
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::string> direction;  // v2r, r2v; both when unset
    bool stage1_only = false;
    std::optional<std::size_t> sabotage_grad;  // selftest debug hook
};

/// Preset, then config file keys, then flags.
RunConfig resolve_config(const Options& opt);

// Each command returns the process exit status and reports errors on `err`.
int cmd_generate(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_train(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_evaluate(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_report(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_selftest(const Options& opt, std::ostream& out, std::ostream& err);

}  // namespace cmla::cli
