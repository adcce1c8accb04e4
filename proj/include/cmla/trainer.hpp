#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cmla/data.hpp"
#include "cmla/losses.hpp"
#include "cmla/model.hpp"
#include "cmla/neighbor.hpp"
#include "cmla/transport.hpp"

namespace cmla {

struct TrainConfig {
    std::size_t epochs_stage1 = 40;
    std::size_t epochs_stage2 = 20;
    std::size_t ids_per_batch = 8;      // P
    std::size_t instances_per_id = 4;   // K, per modality
    std::size_t steps_per_epoch = 0;    // 0: ceil(max(N_v, N_r) / (P K))
    TransportConfig transport;
    NclrConfig nclr;
    LossWeights weights;
    SgdConfig sgd;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Row indices of one PK batch, per modality.
struct PkBatch {
    std::vector<std::size_t> visible;
    std::vector<std::size_t> infrared;
};

/// Draws P cluster ids and K rows per id and modality, with replacement for
/// ids holding fewer than K rows. With `paired`, both label vectors live in
/// one label space and the ids are drawn from those present in both;
/// otherwise each modality draws its own P ids. Deterministic in
/// (seed, epoch, step, stream).
PkBatch pk_sample(std::span<const std::size_t> visible_labels, std::span<const std::size_t> infrared_labels,
                  bool paired, std::size_t P, std::size_t K, std::uint64_t seed, std::size_t epoch, std::size_t step,
                  std::uint64_t stream = 0);

// -- per-batch loss compositions ---------------------------------------------

/// Stage-1 batch: visible rows first, then infrared rows.
struct Stage1Batch {
    Matrix inputs;
    std::size_t num_visible = 0;
    std::vector<std::size_t> visible_labels;
    std::vector<std::size_t> infrared_labels;
};

struct Stage1Terms {
    ReidLoss visible;
    ReidLoss infrared;
    double total = 0.0;
};

Stage1Terms stage1_terms(const ForwardCache& fwd, const Stage1Batch& batch, const TrainConfig& cfg);
LossClosure stage1_closure(const Stage1Batch& batch, const TrainConfig& cfg);

/// Rows of one branch inside a stacked stage-2 batch: own-modality rows with
/// their pseudo labels and counterpart rows with their (refined) assigned
/// label distributions.
struct BranchRows {
    std::size_t own_begin = 0;
    std::vector<std::size_t> own_labels;
    std::size_t cross_begin = 0;
    Matrix cross_targets;

    std::size_t own_count() const noexcept { return own_labels.size(); }
    std::size_t cross_count() const noexcept { return cross_targets.rows(); }
};

struct Stage2Batch {
    Matrix inputs;
    BranchRows visible_branch;   // own = visible rows, cross = infrared rows, head phi_v
    BranchRows infrared_branch;  // own = infrared rows, cross = visible rows, head phi_r
};

struct Stage2Terms {
    CollaborativeLoss cv;
    CollaborativeLoss cr;
    CncrLoss rv;
    CncrLoss rr;
    double cncr() const noexcept { return rv.value + rr.value; }
    double total = 0.0;
};

/// In-batch cross-modality neighbors: for every own row, the k nearest
/// counterpart rows by embedding distance (k capped at the counterpart count).
std::vector<std::vector<std::size_t>> in_batch_neighbors(const Matrix& embeddings, std::size_t own_begin,
                                                         std::size_t own_count, std::size_t cross_begin,
                                                         std::size_t cross_count, std::size_t k);

Stage2Terms stage2_terms(const ForwardCache& fwd, const Stage2Batch& batch, const TrainConfig& cfg);
/// Closure over the full stage-2 objective. When `record` is set, the term
/// breakdown of the last evaluation is stored there.
LossClosure stage2_closure(const Stage2Batch& batch, const TrainConfig& cfg, Stage2Terms* record = nullptr);

// -- epochs -------------------------------------------------------------------

struct EpochLosses {
    double total = 0.0;
    double cv = 0.0;
    double cr = 0.0;
    double r = 0.0;
};

/// Label state computed at the start of a stage-2 epoch.
struct EpochState {
    std::size_t epoch = 0;
    std::vector<std::size_t> assigned_infrared;  // hard, visible label space
    std::vector<std::size_t> assigned_visible;   // hard, infrared label space
    Matrix refined_infrared;                     // N_r x C_v
    Matrix refined_visible;                      // N_v x C_r
    CleanNoisyPartition partition_infrared;
    CleanNoisyPartition partition_visible;
    Histogram histogram_infrared;
    Histogram histogram_visible;
    std::size_t empty_clean_neighbors = 0;
    std::optional<double> assign_accuracy;  // needs ground truth
    EpochLosses losses;                     // filled once the epoch has trained

    double mean_score() const;  // over both modalities
};

/// DOTLA + NCLR on the full datasets under the current model.
EpochState epoch_refresh(const ModelParams& model, const ModalityDataset& visible, const ModalityDataset& infrared,
                         const PseudoLabeling& labeling_v, const PseudoLabeling& labeling_r, const TrainConfig& cfg);

/// Fraction of samples whose assigned cluster's majority ground-truth id
/// (over the counterpart modality's members) equals their own id.
std::optional<double> assignment_accuracy(std::span<const std::size_t> assigned,
                                          const std::optional<std::vector<std::size_t>>& own_gt,
                                          std::span<const std::size_t> counterpart_clusters,
                                          const std::optional<std::vector<std::size_t>>& counterpart_gt,
                                          std::size_t num_clusters);

struct Stage1Result {
    ModelParams model;
    std::vector<double> epoch_loss;  // mean stage-1 loss per epoch
};

Stage1Result train_stage1(ModelParams model, const ModalityDataset& visible, const ModalityDataset& infrared,
                          const PseudoLabeling& labeling_v, const PseudoLabeling& labeling_r, const TrainConfig& cfg);

struct Stage2Result {
    ModelParams model;
    std::vector<EpochState> states;
};

Stage2Result train_stage2(ModelParams model, const ModalityDataset& visible, const ModalityDataset& infrared,
                          const PseudoLabeling& labeling_v, const PseudoLabeling& labeling_r, const TrainConfig& cfg);

/// Learning rate for stage-1 epoch `epoch` (0-based): linear warm-up.
double stage1_lr(const SgdConfig& sgd, std::size_t epoch);

}  // namespace cmla
