#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cmla/matrix.hpp"

namespace cmla {

/// A loss value and its gradient with respect to the one input it
/// differentiates: logits for the classification terms, embeddings for the
/// triplet term.
struct LossValue {
    double value = 0.0;
    Matrix grad;
};

struct LossWeights {
    double alpha_cncr = 0.3;
    double triplet_margin = 0.3;

    void validate() const;
};

/// -(1/B) sum_b sum_c t_bc log p_bc. Gradient is w.r.t. the logits behind
/// `probs` (which must be their softmax). B = 0 gives a zero loss.
LossValue cross_entropy_soft(const Matrix& probs, const Matrix& targets);

/// Batch-hard triplet loss over Euclidean distances. Anchors lacking a
/// positive or a negative are left out of the mean. Gradient w.r.t.
/// embeddings; ties in the hardest positive/negative go to the lowest index.
LossValue triplet_batch_hard(const Matrix& embeddings, std::span<const std::size_t> labels, double margin);

struct ReidLoss {
    LossValue triplet;  // grad w.r.t. embeddings
    LossValue ce;       // grad w.r.t. logits
    double value() const noexcept { return triplet.value + ce.value; }
};

/// Triplet plus cross entropy on one-hot targets for one modality.
ReidLoss reid_loss(const Matrix& embeddings, const Matrix& probs, std::span<const std::size_t> hard_labels,
                   double margin);

enum class Branch { visible, infrared };

struct CollaborativeLoss {
    Branch branch = Branch::visible;
    LossValue cross;  // CE of counterpart samples under this branch's head
    ReidLoss own;
    double value() const noexcept { return cross.value + own.value(); }
};

/// Counterpart-modality samples scored by this branch's head against their
/// (possibly refined) assigned labels, plus the branch's own reid loss.
CollaborativeLoss collaborative_loss(Branch branch, const Matrix& cross_probs, const Matrix& cross_targets,
                                     ReidLoss own_reid);

struct CncrLoss {
    double value = 0.0;
    Matrix grad_own;          // w.r.t. logits behind own_probs
    Matrix grad_counterpart;  // w.r.t. logits behind counterpart_probs
    std::size_t skipped = 0;  // samples with no neighbors
};

/// (1/B') sum_i KL(p_i || mean_{j in N_i} q_j) over the B' samples with at
/// least one neighbor, with the same smoothing as the inconsistency score.
/// `neighbors[i]` indexes rows of `counterpart_probs`. Gradients flow into
/// both sides of the KL.
CncrLoss cncr_loss(const Matrix& own_probs, const Matrix& counterpart_probs,
                   const std::vector<std::vector<std::size_t>>& neighbors);

/// Value of KL(smooth(p) || smooth(m)) and its gradients w.r.t. the raw p, m.
struct KlGradient {
    double value = 0.0;
    std::vector<double> d_p;
    std::vector<double> d_m;
};
KlGradient smoothed_kl_with_grad(std::span<const double> p, std::span<const double> m);

/// Maps a gradient w.r.t. softmax probabilities onto the logits.
void softmax_backward(std::span<const double> probs, std::span<const double> d_probs, std::span<double> d_logits);

double total_loss_stage1(const ReidLoss& visible, const ReidLoss& infrared) noexcept;
/// L_cv + L_cr + alpha * L_r.
double total_loss_stage2(const CollaborativeLoss& cv, const CollaborativeLoss& cr, double l_r,
                         const LossWeights& weights) noexcept;

}  // namespace cmla
