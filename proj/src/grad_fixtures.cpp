#include "cmla/grad_fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

#include "cmla/error.hpp"
#include "cmla/losses.hpp"
#include "cmla/rng.hpp"
#include "cmla/simd.hpp"

namespace cmla {
namespace {

constexpr std::size_t kDim = 6, kHidden = 7, kEmbed = 5, kClassesV = 4, kClassesR = 3;
constexpr std::size_t kRowsPerSide = 6;
constexpr std::size_t kNeighbors = 3;
constexpr std::size_t kMaxAttempts = 1000;

std::vector<std::size_t> grouped_labels(std::size_t n, std::size_t classes, Rng& rng) {
    // pairs of equal labels so every anchor has a positive
    std::vector<std::size_t> pool(classes);
    for (std::size_t c = 0; c < classes; ++c) pool[c] = c;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; out.size() < n; ++i) {
        out.push_back(pool[i % classes]);
        out.push_back(pool[i % classes]);
    }
    out.resize(n);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

Matrix targets(const std::vector<std::size_t>& hard, std::size_t classes, bool soft, Rng& rng) {
    Matrix t = one_hot(hard, classes);
    if (!soft) return t;
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::uniform_real_distribution<double> mix(0.1, 0.5);
    for (std::size_t i = 0; i < t.rows(); ++i) {
        std::vector<double> noise(classes);
        double s = 0.0;
        for (double& v : noise) s += (v = u(rng));
        const double g = mix(rng);
        for (std::size_t c = 0; c < classes; ++c) t(i, c) = (1.0 - g) * t(i, c) + g * noise[c] / s;
    }
    return t;
}

double dist(const Matrix& e, std::size_t a, std::size_t b) {
    return std::sqrt(simd::squared_distance(e.row(a), e.row(b)));
}

// Batch-hard choices and the hinge are all at least `c` away from switching.
bool triplet_clear(const Matrix& e, std::size_t begin, std::span<const std::size_t> labels, double margin, double c) {
    for (std::size_t a = 0; a < labels.size(); ++a) {
        std::vector<double> pos, neg;
        for (std::size_t b = 0; b < labels.size(); ++b) {
            if (a == b) continue;
            const double d = dist(e, begin + a, begin + b);
            if (d < c) return false;
            (labels[a] == labels[b] ? pos : neg).push_back(d);
        }
        if (pos.empty() || neg.empty()) continue;
        std::sort(pos.rbegin(), pos.rend());
        std::sort(neg.begin(), neg.end());
        if (pos.size() > 1 && pos[0] - pos[1] < c) return false;
        if (neg.size() > 1 && neg[1] - neg[0] < c) return false;
        if (std::abs(margin + pos[0] - neg[0]) < c) return false;
    }
    return true;
}

bool neighbors_clear(const Matrix& e, const BranchRows& rows, std::size_t k, double c) {
    if (rows.cross_count() <= k) return true;
    for (std::size_t i = 0; i < rows.own_count(); ++i) {
        std::vector<double> d;
        for (std::size_t j = 0; j < rows.cross_count(); ++j)
            d.push_back(dist(e, rows.own_begin + i, rows.cross_begin + j));
        std::sort(d.begin(), d.end());
        for (std::size_t j = 0; j + 1 < d.size(); ++j)
            if (j + 1 <= k && d[j + 1] - d[j] < c) return false;
    }
    return true;
}

Matrix rows_slice(const Matrix& m, std::size_t begin, std::size_t count) {
    Matrix out(count, m.cols());
    for (std::size_t i = 0; i < count; ++i) std::copy_n(m.row(begin + i).begin(), m.cols(), out.row(i).begin());
    return out;
}

void add_slice(Matrix& dst, std::size_t begin, const Matrix& src, double w) {
    for (std::size_t i = 0; i < src.rows(); ++i)
        for (std::size_t j = 0; j < src.cols(); ++j) dst(begin + i, j) += w * src(i, j);
}

// Only the neighbor-consistency terms of both branches.
LossClosure neighbor_closure(const Stage2Batch& batch, const TrainConfig& cfg) {
    return [&batch, &cfg](const ForwardCache& fwd, OutputGrad& og) {
        double total = 0.0;
        for (Head head : {Head::visible, Head::infrared}) {
            const BranchRows& rows = head == Head::visible ? batch.visible_branch : batch.infrared_branch;
            const Matrix& probs = fwd.probs(head);
            const auto nb = in_batch_neighbors(fwd.embeddings, rows.own_begin, rows.own_count(), rows.cross_begin,
                                               rows.cross_count(), cfg.nclr.k);
            const CncrLoss l = cncr_loss(rows_slice(probs, rows.own_begin, rows.own_count()),
                                         rows_slice(probs, rows.cross_begin, rows.cross_count()), nb);
            Matrix& logits = head == Head::visible ? og.logits_v : og.logits_r;
            add_slice(logits, rows.own_begin, l.grad_own, 1.0);
            add_slice(logits, rows.cross_begin, l.grad_counterpart, 1.0);
            total += l.value;
        }
        return total;
    };
}

// One modality's ReID loss on every row under one head.
LossClosure reid_closure(const Stage1Batch& batch, Head head, const TrainConfig& cfg) {
    return [&batch, head, &cfg](const ForwardCache& fwd, OutputGrad& og) {
        const auto& labels = head == Head::visible ? batch.visible_labels : batch.infrared_labels;
        const ReidLoss l = reid_loss(fwd.embeddings, fwd.probs(head), labels, cfg.weights.triplet_margin);
        add_slice(og.embeddings, 0, l.triplet.grad, 1.0);
        add_slice(head == Head::visible ? og.logits_v : og.logits_r, 0, l.ce.grad, 1.0);
        return l.value();
    };
}

// One branch's collaborative loss: own-modality ReID plus cross-modality CE.
LossClosure collab_closure(const Stage2Batch& batch, Head head, const TrainConfig& cfg) {
    return [&batch, head, &cfg](const ForwardCache& fwd, OutputGrad& og) {
        const BranchRows& rows = head == Head::visible ? batch.visible_branch : batch.infrared_branch;
        const Matrix& probs = fwd.probs(head);
        ReidLoss own = reid_loss(rows_slice(fwd.embeddings, rows.own_begin, rows.own_count()),
                                 rows_slice(probs, rows.own_begin, rows.own_count()), rows.own_labels,
                                 cfg.weights.triplet_margin);
        const CollaborativeLoss l =
            collaborative_loss(head == Head::visible ? Branch::visible : Branch::infrared,
                               rows_slice(probs, rows.cross_begin, rows.cross_count()), rows.cross_targets,
                               std::move(own));
        Matrix& logits = head == Head::visible ? og.logits_v : og.logits_r;
        add_slice(og.embeddings, rows.own_begin, l.own.triplet.grad, 1.0);
        add_slice(logits, rows.own_begin, l.own.ce.grad, 1.0);
        add_slice(logits, rows.cross_begin, l.cross.grad, 1.0);
        return l.value();
    };
}

bool uses_stage1(Composition c) {
    return c == Composition::reid_visible || c == Composition::reid_infrared || c == Composition::stage1_total;
}

std::optional<GradInstance> attempt(Composition c, std::uint64_t seed, double clearance) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    const ModelShape shape{kDim, kHidden, kEmbed, kClassesV, kClassesR};
    GradInstance inst{ModelParams::init(shape, seed), Matrix(), {}, nullptr, nullptr, nullptr};
    for (std::size_t i = 0; i < inst.params.num_params(); ++i) inst.params.flat(i) += 0.3 * normal(rng);

    auto cfg = std::make_shared<TrainConfig>();
    cfg->nclr.k = kNeighbors;
    const double margin = cfg->weights.triplet_margin;

    if (uses_stage1(c)) {
        auto b = std::make_shared<Stage1Batch>();
        // single-modality compositions put every row on one side
        const std::size_t nv = c == Composition::reid_infrared ? 0 : kRowsPerSide;
        const std::size_t nr = c == Composition::reid_visible ? 0 : kRowsPerSide;
        b->num_visible = nv;
        b->inputs = Matrix(nv + nr, kDim);
        for (double& v : b->inputs.values()) v = normal(rng);
        if (nv) b->visible_labels = grouped_labels(nv, kClassesV, rng);
        if (nr) b->infrared_labels = grouped_labels(nr, kClassesR, rng);

        const ForwardCache fwd = forward_all(inst.params, b->inputs);
        if (!triplet_clear(fwd.embeddings, 0, b->visible_labels, margin, clearance)) return std::nullopt;
        if (!triplet_clear(fwd.embeddings, nv, b->infrared_labels, margin, clearance)) return std::nullopt;
        inst.inputs = b->inputs;
        if (c == Composition::reid_visible)
            inst.loss = reid_closure(*b, Head::visible, *cfg);
        else if (c == Composition::reid_infrared)
            inst.loss = reid_closure(*b, Head::infrared, *cfg);
        else
            inst.loss = stage1_closure(*b, *cfg);
        inst.stage1 = std::move(b);
        inst.config = std::move(cfg);
        return inst;
    }

    const bool with_v = c != Composition::collab_infrared_hard && c != Composition::collab_infrared_refined;
    const bool with_r = c != Composition::collab_visible_hard && c != Composition::collab_visible_refined;
    const bool soft = c == Composition::collab_visible_refined || c == Composition::collab_infrared_refined ||
                      c == Composition::stage2_total;
    if (c != Composition::stage2_total && c != Composition::neighbor_consistency) cfg->weights.alpha_cncr = 0.0;

    auto b = std::make_shared<Stage2Batch>();
    std::size_t rows = 0;
    // cross targets live in the branch head's label space
    auto branch = [&](BranchRows& br, std::size_t own_classes) {
        br.own_begin = rows;
        br.own_labels = grouped_labels(kRowsPerSide, own_classes, rng);
        br.cross_begin = rows + kRowsPerSide;
        br.cross_targets = targets(grouped_labels(kRowsPerSide, own_classes, rng), own_classes, soft, rng);
        rows += 2 * kRowsPerSide;
    };
    if (with_v) branch(b->visible_branch, kClassesV);
    if (with_r) branch(b->infrared_branch, kClassesR);
    if (!with_v) b->visible_branch.cross_targets = Matrix(0, kClassesV);
    if (!with_r) b->infrared_branch.cross_targets = Matrix(0, kClassesR);
    b->inputs = Matrix(rows, kDim);
    for (double& v : b->inputs.values()) v = normal(rng);

    const ForwardCache fwd = forward_all(inst.params, b->inputs);
    for (const BranchRows* br : {&b->visible_branch, &b->infrared_branch}) {
        if (br->own_count() == 0) continue;
        if (!triplet_clear(fwd.embeddings, br->own_begin, br->own_labels, margin, clearance)) return std::nullopt;
        if (!neighbors_clear(fwd.embeddings, *br, cfg->nclr.k, clearance)) return std::nullopt;
    }
    inst.inputs = b->inputs;
    if (c == Composition::neighbor_consistency)
        inst.loss = neighbor_closure(*b, *cfg);
    else if (c == Composition::stage2_total)
        inst.loss = stage2_closure(*b, *cfg);
    else
        inst.loss = collab_closure(*b, with_v ? Head::visible : Head::infrared, *cfg);
    inst.stage2 = std::move(b);
    inst.config = std::move(cfg);
    return inst;
}

}  // namespace

std::vector<Composition> all_compositions() {
    return {Composition::reid_visible,           Composition::reid_infrared,
            Composition::collab_visible_hard,    Composition::collab_infrared_hard,
            Composition::collab_visible_refined, Composition::collab_infrared_refined,
            Composition::neighbor_consistency,   Composition::stage1_total,
            Composition::stage2_total};
}

std::string_view composition_name(Composition c) {
    switch (c) {
        case Composition::reid_visible: return "reid_visible";
        case Composition::reid_infrared: return "reid_infrared";
        case Composition::collab_visible_hard: return "collab_visible_hard";
        case Composition::collab_infrared_hard: return "collab_infrared_hard";
        case Composition::collab_visible_refined: return "collab_visible_refined";
        case Composition::collab_infrared_refined: return "collab_infrared_refined";
        case Composition::neighbor_consistency: return "neighbor_consistency";
        case Composition::stage1_total: return "stage1_total";
        case Composition::stage2_total: return "stage2_total";
    }
    return "?";
}

GradInstance make_grad_instance(Composition c, std::uint64_t seed, double clearance) {
    for (std::size_t a = 0; a < kMaxAttempts; ++a)
        if (auto inst = attempt(c, derive_seed(seed, {static_cast<std::uint64_t>(c), a}), clearance)) return *inst;
    throw ArgumentError("make_grad_instance: no instance clear of ties after " + std::to_string(kMaxAttempts) +
                        " draws");
}

}  // namespace cmla
