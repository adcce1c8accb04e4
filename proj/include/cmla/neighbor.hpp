#pragma once

#include <cstddef>
#include <vector>

#include "cmla/matrix.hpp"

namespace cmla {

/// k nearest references per query, distances ascending per row.
struct NeighborIndex {
    std::size_t k = 0;
    std::vector<std::size_t> ids;  // N_query * k, row-major
    std::vector<double> distances;  // Euclidean, same layout

    std::size_t num_queries() const noexcept { return k ? ids.size() / k : 0; }
    std::span<const std::size_t> neighbors(std::size_t q) const noexcept { return {ids.data() + q * k, k}; }
    std::span<const double> neighbor_distances(std::size_t q) const noexcept {
        return {distances.data() + q * k, k};
    }
};

struct NclrConfig {
    std::size_t k = 10;
    double tau = 1.0;
    double gamma = 0.25;

    void validate() const;  // throws ConfigError
};

struct CleanNoisyPartition {
    std::vector<double> scores;
    std::vector<bool> clean;

    std::size_t num_clean() const;
    double clean_fraction() const;
};

/// Smoothing floor for every KL between label distributions.
inline constexpr double kKlFloor = 1e-12;

/// Floors entries at kKlFloor and renormalizes to sum 1.
std::vector<double> smooth_distribution(std::span<const double> p);

/// KL(p || q) after smoothing both sides.
double smoothed_kl(std::span<const double> p, std::span<const double> q);

/// Exact brute-force k-NN under Euclidean distance. Ties go to the lower
/// reference index. With exclude_self, query i never returns reference i
/// (query and reference must then be the same set).
NeighborIndex knn(const Matrix& query, const Matrix& reference, std::size_t k, bool exclude_self);

/// s_i = KL(assigned_i || mean of the counterpart labels of i's neighbors).
std::vector<double> inconsistency_scores(const Matrix& assigned, const Matrix& counterpart_labels,
                                         const NeighborIndex& index);

/// clean <=> score <= tau.
CleanNoisyPartition split_clean_noisy(std::vector<double> scores, double tau);

struct RefinedLabels {
    Matrix labels;
    std::size_t refined = 0;               // noisy rows actually mixed
    std::size_t empty_clean_neighbors = 0;  // noisy rows left as-is
};

/// Mixes each noisy row toward the mean label of its clean same-modality
/// neighbors: (1 - gamma) y_i + gamma * mean_{j in N_i cap clean} y_j. The
/// mean is over the realized clean-neighbor count; clean rows and noisy rows
/// with no clean neighbor are copied through.
RefinedLabels refine_labels(const Matrix& assigned, const CleanNoisyPartition& partition,
                            const NeighborIndex& same_modality_index, const NclrConfig& cfg);

struct Histogram {
    double low = 0.0;
    double high = 1.0;
    std::vector<std::size_t> counts;

    double bin_low(std::size_t b) const { return low + (high - low) * static_cast<double>(b) / counts.size(); }
    double bin_high(std::size_t b) const { return low + (high - low) * static_cast<double>(b + 1) / counts.size(); }
};

/// `bins` uniform bins over [0, max(2 tau, max score)]. Non-finite tau uses
/// the observed maximum. The top edge is inclusive.
Histogram score_histogram(std::span<const double> scores, double tau, std::size_t bins = 50);

}  // namespace cmla
