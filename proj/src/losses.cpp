#include "cmla/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cmla/error.hpp"
#include "cmla/neighbor.hpp"
#include "cmla/simd.hpp"
#include "cmla/transport.hpp"

namespace cmla {

void LossWeights::validate() const {
    if (!(alpha_cncr >= 0.0)) throw ConfigError("alpha must be >= 0");
    if (!(triplet_margin >= 0.0)) throw ConfigError("triplet_margin must be >= 0");
}

LossValue cross_entropy_soft(const Matrix& probs, const Matrix& targets) {
    if (probs.rows() != targets.rows() || probs.cols() != targets.cols())
        throw ArgumentError("cross_entropy_soft: shape mismatch");
    LossValue out{0.0, Matrix(probs.rows(), probs.cols())};
    const std::size_t b = probs.rows();
    if (b == 0) return out;
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
        double mass = 0.0;
        for (std::size_t c = 0; c < probs.cols(); ++c) {
            const double t = targets(i, c);
            if (t != 0.0) out.value -= t * std::log(std::max(probs(i, c), kPredictionFloor));
            mass += t;
        }
        for (std::size_t c = 0; c < probs.cols(); ++c)
            out.grad(i, c) = (mass * probs(i, c) - targets(i, c)) * inv_b;
    }
    out.value *= inv_b;
    return out;
}

LossValue triplet_batch_hard(const Matrix& embeddings, std::span<const std::size_t> labels, double margin) {
    const std::size_t b = embeddings.rows();
    if (b < 2) throw ArgumentError("triplet_batch_hard: need at least 2 embeddings");
    if (labels.size() != b) throw ArgumentError("triplet_batch_hard: label count mismatch");

    Matrix dist(b, b);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = i + 1; j < b; ++j)
            dist(i, j) = dist(j, i) = std::sqrt(simd::squared_distance(embeddings.row(i), embeddings.row(j)));

    struct Active {
        std::size_t anchor, pos, neg;
    };
    std::vector<Active> active;
    std::size_t valid = 0;
    double total = 0.0;
    for (std::size_t a = 0; a < b; ++a) {
        std::size_t pos = b, neg = b;
        for (std::size_t j = 0; j < b; ++j) {
            if (j == a) continue;
            if (labels[j] == labels[a]) {
                if (pos == b || dist(a, j) > dist(a, pos)) pos = j;
            } else if (neg == b || dist(a, j) < dist(a, neg)) {
                neg = j;
            }
        }
        if (pos == b || neg == b) continue;
        ++valid;
        const double arg = dist(a, pos) - dist(a, neg) + margin;
        if (arg > 0.0) {
            total += arg;
            active.push_back({a, pos, neg});
        }
    }

    LossValue out{0.0, Matrix(b, embeddings.cols())};
    if (valid == 0) return out;
    const double inv = 1.0 / static_cast<double>(valid);
    out.value = total * inv;

    std::vector<double> diff(embeddings.cols());
    auto push = [&](std::size_t a, std::size_t other, double sign) {
        const double d = dist(a, other);
        if (d == 0.0) return;  // subgradient 0 at coincident points
        const auto ea = embeddings.row(a);
        const auto eo = embeddings.row(other);
        for (std::size_t c = 0; c < diff.size(); ++c) diff[c] = (ea[c] - eo[c]) / d;
        simd::axpy(sign * inv, diff, out.grad.row(a));
        simd::axpy(-sign * inv, diff, out.grad.row(other));
    };
    for (const auto& t : active) {
        push(t.anchor, t.pos, 1.0);
        push(t.anchor, t.neg, -1.0);
    }
    return out;
}

ReidLoss reid_loss(const Matrix& embeddings, const Matrix& probs, std::span<const std::size_t> hard_labels,
                   double margin) {
    if (probs.rows() != embeddings.rows()) throw ArgumentError("reid_loss: row count mismatch");
    for (auto l : hard_labels)
        if (l >= probs.cols()) throw ArgumentError("reid_loss: label outside the head's classes");
    return {triplet_batch_hard(embeddings, hard_labels, margin), cross_entropy_soft(probs, one_hot(hard_labels, probs.cols()))};
}

CollaborativeLoss collaborative_loss(Branch branch, const Matrix& cross_probs, const Matrix& cross_targets,
                                     ReidLoss own_reid) {
    return {branch, cross_entropy_soft(cross_probs, cross_targets), std::move(own_reid)};
}

void softmax_backward(std::span<const double> probs, std::span<const double> d_probs, std::span<double> d_logits) {
    double inner = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) inner += probs[c] * d_probs[c];
    for (std::size_t c = 0; c < probs.size(); ++c) d_logits[c] = probs[c] * (d_probs[c] - inner);
}

namespace {

// Backprop through x -> max(x, floor) / sum(max(x, floor)).
void smoothing_backward(std::span<const double> raw, std::span<const double> smoothed,
                        std::span<const double> d_smoothed, std::span<double> d_raw) {
    double floored_sum = 0.0;
    double inner = 0.0;
    for (std::size_t c = 0; c < raw.size(); ++c) {
        floored_sum += std::max(raw[c], kKlFloor);
        inner += smoothed[c] * d_smoothed[c];
    }
    for (std::size_t c = 0; c < raw.size(); ++c)
        d_raw[c] = raw[c] > kKlFloor ? (d_smoothed[c] - inner) / floored_sum : 0.0;
}

}  // namespace

KlGradient smoothed_kl_with_grad(std::span<const double> p, std::span<const double> m) {
    const std::size_t c = p.size();
    const auto ps = smooth_distribution(p);
    const auto ms = smooth_distribution(m);
    KlGradient out{0.0, std::vector<double>(c), std::vector<double>(c)};
    std::vector<double> dps(c), dms(c);
    for (std::size_t i = 0; i < c; ++i) {
        const double ratio = std::log(ps[i] / ms[i]);
        out.value += ps[i] * ratio;
        dps[i] = ratio + 1.0;
        dms[i] = -ps[i] / ms[i];
    }
    smoothing_backward(p, ps, dps, out.d_p);
    smoothing_backward(m, ms, dms, out.d_m);
    return out;
}

CncrLoss cncr_loss(const Matrix& own_probs, const Matrix& counterpart_probs,
                   const std::vector<std::vector<std::size_t>>& neighbors) {
    if (neighbors.size() != own_probs.rows()) throw ArgumentError("cncr_loss: neighbor list count mismatch");
    if (own_probs.cols() != counterpart_probs.cols()) throw ArgumentError("cncr_loss: class count mismatch");
    const std::size_t c = own_probs.cols();
    CncrLoss out{0.0, Matrix(own_probs.rows(), c), Matrix(counterpart_probs.rows(), c), 0};

    std::size_t used = 0;
    for (const auto& nb : neighbors) used += nb.empty() ? 0 : 1;
    out.skipped = own_probs.rows() - used;
    if (used == 0) return out;
    const double inv = 1.0 / static_cast<double>(used);

    std::vector<double> mean(c), d_logits(c);
    for (std::size_t i = 0; i < own_probs.rows(); ++i) {
        const auto& nb = neighbors[i];
        if (nb.empty()) continue;
        std::fill(mean.begin(), mean.end(), 0.0);
        for (std::size_t j : nb) {
            if (j >= counterpart_probs.rows()) throw ArgumentError("cncr_loss: neighbor id out of range");
            simd::axpy(1.0, counterpart_probs.row(j), mean);
        }
        const double inv_k = 1.0 / static_cast<double>(nb.size());
        for (double& v : mean) v *= inv_k;

        auto kl = smoothed_kl_with_grad(own_probs.row(i), mean);
        out.value += kl.value;
        for (double& g : kl.d_p) g *= inv;
        softmax_backward(own_probs.row(i), kl.d_p, out.grad_own.row(i));
        // d/dq_j of the mean is d_m / k for every neighbor j.
        for (double& g : kl.d_m) g *= inv * inv_k;
        for (std::size_t j : nb) {
            softmax_backward(counterpart_probs.row(j), kl.d_m, d_logits);
            simd::axpy(1.0, d_logits, out.grad_counterpart.row(j));
        }
    }
    out.value = std::max(out.value * inv, 0.0);
    return out;
}

double total_loss_stage1(const ReidLoss& visible, const ReidLoss& infrared) noexcept {
    return visible.value() + infrared.value();
}

double total_loss_stage2(const CollaborativeLoss& cv, const CollaborativeLoss& cr, double l_r,
                         const LossWeights& weights) noexcept {
    return cv.value() + cr.value() + weights.alpha_cncr * l_r;
}

}  // namespace cmla
