#include "cmla/neighbor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmla/error.hpp"
#include "cmla/simd.hpp"

namespace cmla {

void NclrConfig::validate() const {
    if (k < 1) throw ConfigError("nclr k must be >= 1");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0, 1]");
    if (std::isnan(tau)) throw ConfigError("tau must not be NaN");
}

std::size_t CleanNoisyPartition::num_clean() const {
    return static_cast<std::size_t>(std::count(clean.begin(), clean.end(), true));
}

double CleanNoisyPartition::clean_fraction() const {
    return clean.empty() ? 0.0 : static_cast<double>(num_clean()) / static_cast<double>(clean.size());
}

std::vector<double> smooth_distribution(std::span<const double> p) {
    std::vector<double> out(p.begin(), p.end());
    double s = 0.0;
    for (double& v : out) {
        v = std::max(v, kKlFloor);
        s += v;
    }
    for (double& v : out) v /= s;
    return out;
}

double smoothed_kl(std::span<const double> p, std::span<const double> q) {
    const auto ps = smooth_distribution(p);
    const auto qs = smooth_distribution(q);
    double kl = 0.0;
    for (std::size_t c = 0; c < ps.size(); ++c) kl += ps[c] * std::log(ps[c] / qs[c]);
    return std::max(kl, 0.0);
}

NeighborIndex knn(const Matrix& query, const Matrix& reference, std::size_t k, bool exclude_self) {
    if (query.cols() != reference.cols()) throw ArgumentError("knn: dimension mismatch");
    if (exclude_self && query.rows() != reference.rows())
        throw ArgumentError("knn: exclude_self requires query and reference to be the same set");
    const std::size_t available = reference.rows() - (exclude_self ? 1 : 0);
    if (k < 1 || k > available)
        throw ArgumentError("knn: k=" + std::to_string(k) + " exceeds available references " + std::to_string(available));

    NeighborIndex out;
    out.k = k;
    out.ids.resize(query.rows() * k);
    out.distances.resize(query.rows() * k);

    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(reference.rows());
    for (std::size_t q = 0; q < query.rows(); ++q) {
        cand.clear();
        for (std::size_t r = 0; r < reference.rows(); ++r) {
            if (exclude_self && r == q) continue;
            cand.emplace_back(simd::squared_distance(query.row(q), reference.row(r)), r);
        }
        // Lexicographic (distance, index) order gives the lower-index tie-break.
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        for (std::size_t j = 0; j < k; ++j) {
            out.ids[q * k + j] = cand[j].second;
            out.distances[q * k + j] = std::sqrt(cand[j].first);
        }
    }
    return out;
}

std::vector<double> inconsistency_scores(const Matrix& assigned, const Matrix& counterpart_labels,
                                         const NeighborIndex& index) {
    if (assigned.cols() != counterpart_labels.cols())
        throw ArgumentError("inconsistency_scores: label spaces differ");
    if (index.num_queries() != assigned.rows())
        throw ArgumentError("inconsistency_scores: index has wrong number of queries");
    const std::size_t c = assigned.cols();
    std::vector<double> scores(assigned.rows());
    std::vector<double> mean(c);
    for (std::size_t i = 0; i < assigned.rows(); ++i) {
        std::fill(mean.begin(), mean.end(), 0.0);
        for (std::size_t j : index.neighbors(i)) {
            if (j >= counterpart_labels.rows()) throw ArgumentError("inconsistency_scores: neighbor id out of range");
            simd::axpy(1.0, counterpart_labels.row(j), mean);
        }
        for (double& m : mean) m /= static_cast<double>(index.k);
        scores[i] = smoothed_kl(assigned.row(i), mean);
    }
    return scores;
}

CleanNoisyPartition split_clean_noisy(std::vector<double> scores, double tau) {
    CleanNoisyPartition out;
    out.clean.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out.clean[i] = scores[i] <= tau;
    out.scores = std::move(scores);
    return out;
}

RefinedLabels refine_labels(const Matrix& assigned, const CleanNoisyPartition& partition,
                            const NeighborIndex& same_modality_index, const NclrConfig& cfg) {
    cfg.validate();
    if (partition.clean.size() != assigned.rows() || same_modality_index.num_queries() != assigned.rows())
        throw ArgumentError("refine_labels: row counts differ");
    RefinedLabels out{assigned, 0, 0};
    const std::size_t c = assigned.cols();
    std::vector<double> mean(c);
    for (std::size_t i = 0; i < assigned.rows(); ++i) {
        if (partition.clean[i]) continue;
        std::fill(mean.begin(), mean.end(), 0.0);
        std::size_t count = 0;
        for (std::size_t j : same_modality_index.neighbors(i)) {
            if (!partition.clean[j]) continue;
            simd::axpy(1.0, assigned.row(j), mean);
            ++count;
        }
        if (count == 0) {
            ++out.empty_clean_neighbors;
            continue;
        }
        auto dst = out.labels.row(i);
        const auto src = assigned.row(i);
        const double inv = 1.0 / static_cast<double>(count);
        for (std::size_t col = 0; col < c; ++col) dst[col] = (1.0 - cfg.gamma) * src[col] + cfg.gamma * (mean[col] * inv);
        ++out.refined;
    }
    return out;
}

Histogram score_histogram(std::span<const double> scores, double tau, std::size_t bins) {
    if (bins == 0) throw ArgumentError("score_histogram: bins must be >= 1");
    double observed = 0.0;
    for (double s : scores) observed = std::max(observed, s);
    double high = std::isfinite(tau) ? std::max(2.0 * tau, observed) : observed;
    if (!(high > 0.0)) high = 1.0;
    Histogram h{0.0, high, std::vector<std::size_t>(bins, 0)};
    for (double s : scores) {
        auto b = static_cast<std::size_t>(std::floor(std::max(s, 0.0) / high * static_cast<double>(bins)));
        h.counts[std::min(b, bins - 1)]++;
    }
    return h;
}

}  // namespace cmla
