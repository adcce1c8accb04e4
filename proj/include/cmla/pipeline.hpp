#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cmla/config.hpp"
#include "cmla/data.hpp"
#include "cmla/model.hpp"
#include "cmla/trainer.hpp"

namespace cmla {

struct Datasets {
    ModalityDataset visible;
    ModalityDataset infrared;
};

inline constexpr std::string_view kVisibleFile = "visible.txt";
inline constexpr std::string_view kInfraredFile = "infrared.txt";
inline constexpr std::string_view kEffectiveConfigFile = "config.effective";

Datasets generate_datasets(const RunConfig& cfg);
void save_datasets(const Datasets& data, const std::filesystem::path& dir);
/// Throws DataError naming the path when a file is missing or malformed.
Datasets load_datasets(const std::filesystem::path& dir);

struct InitialLabels {
    PseudoLabeling visible;
    PseudoLabeling infrared;
};

/// Per-modality k-means, seeded from the run seed.
InitialLabels initial_labels(const RunConfig& cfg, const Datasets& data);

struct TrainRun {
    InitialLabels labels;
    ModelParams stage1_model;
    std::vector<double> stage1_loss;
    ModelParams final_model;
    std::vector<EpochState> states;  // one per stage-2 epoch
};

/// cluster_init, stage 1, then stage 2 unless `stage1_only`.
TrainRun run_training(const RunConfig& cfg, const Datasets& data, bool stage1_only = false);

/// Stage 2 from a given stage-1 model, for ablations sharing one stage 1.
Stage2Result run_stage2(const RunConfig& cfg, const Datasets& data, const InitialLabels& labels,
                        const ModelParams& stage1_model);

/// Epoch log; `stamp` becomes the single `#` header line.
std::string epoch_log_csv(const TrainRun& run, std::string_view stamp);
std::string histogram_csv(const Histogram& h);
/// epoch,modality,mean_score,clean_fraction
std::string score_summary_csv(const TrainRun& run);

/// Checkpoints, logs and histograms of a run under `dir`.
void write_training_outputs(const TrainRun& run, const std::filesystem::path& dir, std::string_view stamp);

/// Merges a training directory's histogram files into histograms.csv and
/// writes summary.json. Returns the summary text.
std::string write_run_report(const std::filesystem::path& dir);

void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace cmla
