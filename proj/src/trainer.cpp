#include "cmla/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "cmla/error.hpp"
#include "cmla/rng.hpp"
#include "cmla/simd.hpp"

namespace cmla {
namespace {

constexpr std::uint64_t kStreamStage1 = 1;
constexpr std::uint64_t kStreamVisibleBranch = 2;
constexpr std::uint64_t kStreamInfraredBranch = 3;

std::vector<std::vector<std::size_t>> members_by_cluster(std::span<const std::size_t> labels) {
    std::size_t k = 0;
    for (auto l : labels) k = std::max(k, l + 1);
    std::vector<std::vector<std::size_t>> out(k);
    for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(i);
    return out;
}

std::vector<std::size_t> non_empty(const std::vector<std::vector<std::size_t>>& members) {
    std::vector<std::size_t> ids;
    for (std::size_t c = 0; c < members.size(); ++c)
        if (!members[c].empty()) ids.push_back(c);
    return ids;
}

void draw_instances(const std::vector<std::size_t>& members, std::size_t K, Rng& rng, std::vector<std::size_t>& out) {
    if (members.size() >= K) {
        std::vector<std::size_t> pool = members;
        for (std::size_t i = 0; i < K; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
            std::swap(pool[i], pool[pick(rng)]);
            out.push_back(pool[i]);
        }
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
        for (std::size_t i = 0; i < K; ++i) out.push_back(members[pick(rng)]);
    }
}

std::vector<std::size_t> choose_ids(std::vector<std::size_t> eligible, std::size_t P, Rng& rng) {
    std::shuffle(eligible.begin(), eligible.end(), rng);
    eligible.resize(std::min(P, eligible.size()));
    return eligible;
}

// Copies rows of `src` selected by `idx` into `dst` starting at `at`.
void copy_rows(const Matrix& src, std::span<const std::size_t> idx, Matrix& dst, std::size_t at) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto r = src.row(idx[i]);
        std::copy(r.begin(), r.end(), dst.row(at + i).begin());
    }
}

Matrix rows_of(const Matrix& m, std::size_t begin, std::size_t count) {
    Matrix out(count, m.cols());
    std::copy_n(m.row(begin).data(), count * m.cols(), out.values().data());
    return out;
}

void add_rows(Matrix& dst, std::size_t begin, const Matrix& src, double weight) {
    for (std::size_t i = 0; i < src.rows(); ++i) simd::axpy(weight, src.row(i), dst.row(begin + i));
}

void require_finite(const Matrix& m, const char* term) {
    for (double v : m.values())
        if (!std::isfinite(v)) throw TrainingError(std::string("non-finite gradient from ") + term);
}

std::size_t default_steps(std::size_t n_v, std::size_t n_r, const TrainConfig& cfg) {
    if (cfg.steps_per_epoch) return cfg.steps_per_epoch;
    const std::size_t per_batch = cfg.ids_per_batch * cfg.instances_per_id;
    return std::max<std::size_t>(1, (std::max(n_v, n_r) + per_batch - 1) / per_batch);
}

void check_inputs(const ModalityDataset& visible, const ModalityDataset& infrared, const PseudoLabeling& lv,
                  const PseudoLabeling& lr) {
    if (lv.size() != visible.size() || lr.size() != infrared.size())
        throw ArgumentError("trainer: labeling size does not match dataset");
    if (visible.dim() != infrared.dim()) throw ArgumentError("trainer: modalities differ in dimension");
}

}  // namespace

void TrainConfig::validate() const {
    if (ids_per_batch < 2) throw ConfigError("ids_per_batch must be >= 2");
    if (instances_per_id < 1) throw ConfigError("instances_per_id must be >= 1");
    transport.validate();
    nclr.validate();
    weights.validate();
    sgd.validate();
}

PkBatch pk_sample(std::span<const std::size_t> visible_labels, std::span<const std::size_t> infrared_labels,
                  bool paired, std::size_t P, std::size_t K, std::uint64_t seed, std::size_t epoch, std::size_t step,
                  std::uint64_t stream) {
    if (P < 1 || K < 1) throw ConfigError("pk_sample: P and K must be >= 1");
    Rng rng(derive_seed(seed, {0x706b, stream, epoch, step}));
    const auto mv = members_by_cluster(visible_labels);
    const auto mr = members_by_cluster(infrared_labels);
    PkBatch out;
    if (paired) {
        std::vector<std::size_t> eligible;
        for (std::size_t c = 0; c < std::min(mv.size(), mr.size()); ++c)
            if (!mv[c].empty() && !mr[c].empty()) eligible.push_back(c);
        if (eligible.empty()) throw ConfigError("pk_sample: no cluster has members in both modalities");
        for (std::size_t c : choose_ids(std::move(eligible), P, rng)) {
            draw_instances(mv[c], K, rng, out.visible);
            draw_instances(mr[c], K, rng, out.infrared);
        }
        return out;
    }
    const auto ev = non_empty(mv);
    const auto er = non_empty(mr);
    if (ev.size() < P || er.size() < P)
        throw ConfigError("pk_sample: need at least P=" + std::to_string(P) + " clusters per modality, have " +
                          std::to_string(ev.size()) + " visible and " + std::to_string(er.size()) + " infrared");
    for (std::size_t c : choose_ids(ev, P, rng)) draw_instances(mv[c], K, rng, out.visible);
    for (std::size_t c : choose_ids(er, P, rng)) draw_instances(mr[c], K, rng, out.infrared);
    return out;
}

// -- stage 1 -----------------------------------------------------------------

Stage1Terms stage1_terms(const ForwardCache& fwd, const Stage1Batch& batch, const TrainConfig& cfg) {
    const std::size_t nv = batch.num_visible;
    const std::size_t nr = fwd.embeddings.rows() - nv;
    const double margin = cfg.weights.triplet_margin;
    Stage1Terms t;
    t.visible = reid_loss(rows_of(fwd.embeddings, 0, nv), rows_of(fwd.probs_v, 0, nv), batch.visible_labels, margin);
    t.infrared =
        reid_loss(rows_of(fwd.embeddings, nv, nr), rows_of(fwd.probs_r, nv, nr), batch.infrared_labels, margin);
    t.total = total_loss_stage1(t.visible, t.infrared);
    return t;
}

LossClosure stage1_closure(const Stage1Batch& batch, const TrainConfig& cfg) {
    return [&batch, &cfg](const ForwardCache& fwd, OutputGrad& og) {
        const Stage1Terms t = stage1_terms(fwd, batch, cfg);
        require_finite(t.visible.triplet.grad, "visible triplet");
        require_finite(t.infrared.triplet.grad, "infrared triplet");
        add_rows(og.embeddings, 0, t.visible.triplet.grad, 1.0);
        add_rows(og.logits_v, 0, t.visible.ce.grad, 1.0);
        add_rows(og.embeddings, batch.num_visible, t.infrared.triplet.grad, 1.0);
        add_rows(og.logits_r, batch.num_visible, t.infrared.ce.grad, 1.0);
        return t.total;
    };
}

double stage1_lr(const SgdConfig& sgd, std::size_t epoch) {
    if (sgd.warmup_epochs == 0 || epoch >= sgd.warmup_epochs) return sgd.lr_stage1;
    return sgd.lr_stage1 * static_cast<double>(epoch + 1) / static_cast<double>(sgd.warmup_epochs);
}

Stage1Result train_stage1(ModelParams model, const ModalityDataset& visible, const ModalityDataset& infrared,
                          const PseudoLabeling& labeling_v, const PseudoLabeling& labeling_r, const TrainConfig& cfg) {
    cfg.validate();
    check_inputs(visible, infrared, labeling_v, labeling_r);
    const auto yv = labeling_v.hard();
    const auto yr = labeling_r.hard();
    const std::size_t steps = default_steps(visible.size(), infrared.size(), cfg);
    SgdState state(model.shape());
    Stage1Result res;
    for (std::size_t epoch = 0; epoch < cfg.epochs_stage1; ++epoch) {
        const double lr = stage1_lr(cfg.sgd, epoch);
        double sum = 0.0;
        for (std::size_t step = 0; step < steps; ++step) {
            const PkBatch pk = pk_sample(yv, yr, false, cfg.ids_per_batch, cfg.instances_per_id, cfg.seed, epoch,
                                         step, kStreamStage1);
            Stage1Batch batch;
            batch.num_visible = pk.visible.size();
            batch.inputs = Matrix(pk.visible.size() + pk.infrared.size(), visible.dim());
            copy_rows(visible.features, pk.visible, batch.inputs, 0);
            copy_rows(infrared.features, pk.infrared, batch.inputs, pk.visible.size());
            for (auto i : pk.visible) batch.visible_labels.push_back(yv[i]);
            for (auto i : pk.infrared) batch.infrared_labels.push_back(yr[i]);
            sum += backward_and_step(model, state, batch.inputs, stage1_closure(batch, cfg), cfg.sgd, lr);
        }
        res.epoch_loss.push_back(sum / static_cast<double>(steps));
    }
    res.model = std::move(model);
    return res;
}

// -- stage 2 -----------------------------------------------------------------

std::vector<std::vector<std::size_t>> in_batch_neighbors(const Matrix& embeddings, std::size_t own_begin,
                                                         std::size_t own_count, std::size_t cross_begin,
                                                         std::size_t cross_count, std::size_t k) {
    std::vector<std::vector<std::size_t>> out(own_count);
    const std::size_t k_eff = std::min(k, cross_count);
    if (k_eff == 0) return out;
    std::vector<std::pair<double, std::size_t>> cand(cross_count);
    for (std::size_t i = 0; i < own_count; ++i) {
        for (std::size_t j = 0; j < cross_count; ++j)
            cand[j] = {simd::squared_distance(embeddings.row(own_begin + i), embeddings.row(cross_begin + j)), j};
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k_eff), cand.end());
        for (std::size_t j = 0; j < k_eff; ++j) out[i].push_back(cand[j].second);
    }
    return out;
}

namespace {

struct BranchTerms {
    CollaborativeLoss collab;
    CncrLoss cncr;
};

BranchTerms branch_terms(const ForwardCache& fwd, const BranchRows& rows, Head head, const TrainConfig& cfg) {
    const Matrix& probs = fwd.probs(head);
    const Matrix own_emb = rows_of(fwd.embeddings, rows.own_begin, rows.own_count());
    const Matrix own_probs = rows_of(probs, rows.own_begin, rows.own_count());
    const Matrix cross_probs = rows_of(probs, rows.cross_begin, rows.cross_count());
    BranchTerms t;
    ReidLoss own = reid_loss(own_emb, own_probs, rows.own_labels, cfg.weights.triplet_margin);
    t.collab = collaborative_loss(head == Head::visible ? Branch::visible : Branch::infrared, cross_probs,
                                  rows.cross_targets, std::move(own));
    const auto nb = in_batch_neighbors(fwd.embeddings, rows.own_begin, rows.own_count(), rows.cross_begin,
                                       rows.cross_count(), cfg.nclr.k);
    t.cncr = cncr_loss(own_probs, cross_probs, nb);
    return t;
}

void scatter_branch(const BranchTerms& t, const BranchRows& rows, Head head, double alpha, OutputGrad& og) {
    Matrix& logits = head == Head::visible ? og.logits_v : og.logits_r;
    require_finite(t.collab.own.triplet.grad, "triplet");
    require_finite(t.collab.cross.grad, "cross-modality cross entropy");
    require_finite(t.cncr.grad_own, "neighbor consistency");
    require_finite(t.cncr.grad_counterpart, "neighbor consistency");
    add_rows(og.embeddings, rows.own_begin, t.collab.own.triplet.grad, 1.0);
    add_rows(logits, rows.own_begin, t.collab.own.ce.grad, 1.0);
    add_rows(logits, rows.cross_begin, t.collab.cross.grad, 1.0);
    if (alpha != 0.0) {
        add_rows(logits, rows.own_begin, t.cncr.grad_own, alpha);
        add_rows(logits, rows.cross_begin, t.cncr.grad_counterpart, alpha);
    }
}

}  // namespace

Stage2Terms stage2_terms(const ForwardCache& fwd, const Stage2Batch& batch, const TrainConfig& cfg) {
    BranchTerms v = branch_terms(fwd, batch.visible_branch, Head::visible, cfg);
    BranchTerms r = branch_terms(fwd, batch.infrared_branch, Head::infrared, cfg);
    Stage2Terms t{std::move(v.collab), std::move(r.collab), std::move(v.cncr), std::move(r.cncr), 0.0};
    t.total = total_loss_stage2(t.cv, t.cr, t.cncr(), cfg.weights);
    return t;
}

LossClosure stage2_closure(const Stage2Batch& batch, const TrainConfig& cfg, Stage2Terms* record) {
    return [&batch, &cfg, record](const ForwardCache& fwd, OutputGrad& og) {
        BranchTerms v = branch_terms(fwd, batch.visible_branch, Head::visible, cfg);
        BranchTerms r = branch_terms(fwd, batch.infrared_branch, Head::infrared, cfg);
        scatter_branch(v, batch.visible_branch, Head::visible, cfg.weights.alpha_cncr, og);
        scatter_branch(r, batch.infrared_branch, Head::infrared, cfg.weights.alpha_cncr, og);
        const double total = total_loss_stage2(v.collab, r.collab, v.cncr.value + r.cncr.value, cfg.weights);
        if (record) *record = {std::move(v.collab), std::move(r.collab), std::move(v.cncr), std::move(r.cncr), total};
        return total;
    };
}

double EpochState::mean_score() const {
    double s = 0.0;
    for (double v : partition_infrared.scores) s += v;
    for (double v : partition_visible.scores) s += v;
    const std::size_t n = partition_infrared.scores.size() + partition_visible.scores.size();
    return n ? s / static_cast<double>(n) : 0.0;
}

std::optional<double> assignment_accuracy(std::span<const std::size_t> assigned,
                                          const std::optional<std::vector<std::size_t>>& own_gt,
                                          std::span<const std::size_t> counterpart_clusters,
                                          const std::optional<std::vector<std::size_t>>& counterpart_gt,
                                          std::size_t num_clusters) {
    if (!own_gt || !counterpart_gt || assigned.empty()) return std::nullopt;
    // Majority ground-truth id per counterpart cluster, lowest id on ties.
    std::vector<std::map<std::size_t, std::size_t>> votes(num_clusters);
    for (std::size_t i = 0; i < counterpart_clusters.size(); ++i) ++votes[counterpart_clusters[i]][(*counterpart_gt)[i]];
    std::vector<std::optional<std::size_t>> majority(num_clusters);
    for (std::size_t c = 0; c < num_clusters; ++c) {
        std::size_t best = 0;
        for (const auto& [id, n] : votes[c])
            if (n > best) {
                best = n;
                majority[c] = id;
            }
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < assigned.size(); ++i)
        if (majority[assigned[i]] && *majority[assigned[i]] == (*own_gt)[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(assigned.size());
}

EpochState epoch_refresh(const ModelParams& model, const ModalityDataset& visible, const ModalityDataset& infrared,
                         const PseudoLabeling& labeling_v, const PseudoLabeling& labeling_r, const TrainConfig& cfg) {
    cfg.validate();
    check_inputs(visible, infrared, labeling_v, labeling_r);
    const ForwardCache fv = forward_all(model, visible.features);
    const ForwardCache fr = forward_all(model, infrared.features);
    if (fr.probs_v.cols() != labeling_v.num_clusters() || fv.probs_r.cols() != labeling_r.num_clusters())
        throw ArgumentError("epoch_refresh: head sizes do not match the labelings");

    EpochState st;
    DualAssignment da = dual_assign(fr.probs_v, fv.probs_r, cfg.transport);
    st.assigned_infrared = std::move(da.infrared_from_visible);
    st.assigned_visible = std::move(da.visible_from_infrared);

    const Matrix onehot_r = one_hot(st.assigned_infrared, labeling_v.num_clusters());
    const Matrix onehot_v = one_hot(st.assigned_visible, labeling_r.num_clusters());

    // Inconsistency against counterpart-modality neighbors and their original labels.
    const std::size_t k = cfg.nclr.k;
    const NeighborIndex r_in_v = knn(fr.embeddings, fv.embeddings, std::min(k, visible.size()), false);
    const NeighborIndex v_in_r = knn(fv.embeddings, fr.embeddings, std::min(k, infrared.size()), false);
    st.partition_infrared =
        split_clean_noisy(inconsistency_scores(onehot_r, labeling_v.labels, r_in_v), cfg.nclr.tau);
    st.partition_visible =
        split_clean_noisy(inconsistency_scores(onehot_v, labeling_r.labels, v_in_r), cfg.nclr.tau);

    // Refinement with clean same-modality neighbors.
    auto refine = [&](const ForwardCache& f, const Matrix& onehot, const CleanNoisyPartition& part) {
        if (f.embeddings.rows() < 2) return RefinedLabels{onehot, 0, 0};
        const NeighborIndex same = knn(f.embeddings, f.embeddings, std::min(k, f.embeddings.rows() - 1), true);
        return refine_labels(onehot, part, same, cfg.nclr);
    };
    RefinedLabels rr = refine(fr, onehot_r, st.partition_infrared);
    RefinedLabels rv = refine(fv, onehot_v, st.partition_visible);
    st.refined_infrared = std::move(rr.labels);
    st.refined_visible = std::move(rv.labels);
    st.empty_clean_neighbors = rr.empty_clean_neighbors + rv.empty_clean_neighbors;

    st.histogram_infrared = score_histogram(st.partition_infrared.scores, cfg.nclr.tau);
    st.histogram_visible = score_histogram(st.partition_visible.scores, cfg.nclr.tau);

    const auto yv = labeling_v.hard();
    const auto yr = labeling_r.hard();
    const auto acc_r = assignment_accuracy(st.assigned_infrared, infrared.gt_ids, yv, visible.gt_ids,
                                           labeling_v.num_clusters());
    const auto acc_v = assignment_accuracy(st.assigned_visible, visible.gt_ids, yr, infrared.gt_ids,
                                           labeling_r.num_clusters());
    if (acc_r && acc_v) st.assign_accuracy = 0.5 * (*acc_r + *acc_v);
    return st;
}

Stage2Result train_stage2(ModelParams model, const ModalityDataset& visible, const ModalityDataset& infrared,
                          const PseudoLabeling& labeling_v, const PseudoLabeling& labeling_r, const TrainConfig& cfg) {
    cfg.validate();
    check_inputs(visible, infrared, labeling_v, labeling_r);
    const auto yv = labeling_v.hard();
    const auto yr = labeling_r.hard();
    const std::size_t steps = default_steps(visible.size(), infrared.size(), cfg);
    const std::size_t P = cfg.ids_per_batch, K = cfg.instances_per_id;
    SgdState state(model.shape());
    Stage2Result res;

    for (std::size_t epoch = 0; epoch < cfg.epochs_stage2; ++epoch) {
        // Labels for this epoch come from the model as it stands now.
        EpochState st = epoch_refresh(model, visible, infrared, labeling_v, labeling_r, cfg);
        st.epoch = epoch;
        const std::size_t sampler_epoch = cfg.epochs_stage1 + epoch;
        EpochLosses sums;
        for (std::size_t step = 0; step < steps; ++step) {
            const PkBatch bv = pk_sample(yv, st.assigned_infrared, true, P, K, cfg.seed, sampler_epoch, step,
                                         kStreamVisibleBranch);
            const PkBatch br = pk_sample(st.assigned_visible, yr, true, P, K, cfg.seed, sampler_epoch, step,
                                         kStreamInfraredBranch);
            Stage2Batch batch;
            const std::size_t n = bv.visible.size() + bv.infrared.size() + br.visible.size() + br.infrared.size();
            batch.inputs = Matrix(n, visible.dim());
            std::size_t at = 0;
            auto& vb = batch.visible_branch;
            vb.own_begin = at;
            copy_rows(visible.features, bv.visible, batch.inputs, at);
            for (auto i : bv.visible) vb.own_labels.push_back(yv[i]);
            at += bv.visible.size();
            vb.cross_begin = at;
            copy_rows(infrared.features, bv.infrared, batch.inputs, at);
            vb.cross_targets = gather_rows(st.refined_infrared, bv.infrared);
            at += bv.infrared.size();

            auto& rb = batch.infrared_branch;
            rb.cross_begin = at;
            copy_rows(visible.features, br.visible, batch.inputs, at);
            rb.cross_targets = gather_rows(st.refined_visible, br.visible);
            at += br.visible.size();
            rb.own_begin = at;
            copy_rows(infrared.features, br.infrared, batch.inputs, at);
            for (auto i : br.infrared) rb.own_labels.push_back(yr[i]);

            Stage2Terms terms;
            backward_and_step(model, state, batch.inputs, stage2_closure(batch, cfg, &terms), cfg.sgd,
                              cfg.sgd.lr_stage2);
            sums.total += terms.total;
            sums.cv += terms.cv.value();
            sums.cr += terms.cr.value();
            sums.r += terms.cncr();
        }
        const double inv = 1.0 / static_cast<double>(steps);
        st.losses = {sums.total * inv, sums.cv * inv, sums.cr * inv, sums.r * inv};
        res.states.push_back(std::move(st));
    }
    res.model = std::move(model);
    return res;
}

}  // namespace cmla
