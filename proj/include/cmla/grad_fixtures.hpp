#pragma once

#include <cstdint>
#include <memory>
#include <string_view>
#include <vector>

#include "cmla/model.hpp"
#include "cmla/trainer.hpp"

namespace cmla {

/// Loss compositions the trainer differentiates through the model.
enum class Composition {
    reid_visible,             // triplet + CE, visible rows, head_v
    reid_infrared,            // triplet + CE, infrared rows, head_r
    collab_visible_hard,      // visible branch, one-hot assigned targets
    collab_infrared_hard,     // infrared branch, one-hot assigned targets
    collab_visible_refined,   // visible branch, refined soft targets
    collab_infrared_refined,  // infrared branch, refined soft targets
    neighbor_consistency,     // in-batch cross-modal KL, both branches
    stage1_total,
    stage2_total,
};

std::vector<Composition> all_compositions();
std::string_view composition_name(Composition c);

/// A random model, batch and closure. The closure refers into `batch` and
/// `config`, which the instance owns.
struct GradInstance {
    ModelParams params;
    Matrix inputs;
    LossClosure loss;
    std::shared_ptr<const Stage1Batch> stage1;
    std::shared_ptr<const Stage2Batch> stage2;
    std::shared_ptr<const TrainConfig> config;
};

/// Deterministic in (c, seed). Instances whose batch-hard triplet choices or
/// in-batch neighbor sets sit within `clearance` of a tie or hinge kink are
/// redrawn, so central differences never straddle a switch.
GradInstance make_grad_instance(Composition c, std::uint64_t seed, double clearance = 1e-3);

}  // namespace cmla
