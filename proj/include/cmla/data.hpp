#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "cmla/matrix.hpp"

namespace cmla {

enum class Modality { visible, infrared };

std::string_view modality_name(Modality m) noexcept;
Modality parse_modality(std::string_view s);  // throws ArgumentError

struct SynthConfig {
    std::size_t num_identities = 20;
    std::size_t dim = 16;
    std::size_t per_id_visible = 40;
    std::size_t per_id_infrared = 40;
    double noise_sigma = 0.3;
    double gap_strength = 1.0;
    std::uint64_t seed = 0;

    /// Throws ConfigError naming the first offending field.
    void validate() const;
};

struct ModalityDataset {
    Matrix features;  // N x D
    Modality modality = Modality::visible;
    std::optional<std::vector<std::size_t>> gt_ids;

    std::size_t size() const noexcept { return features.rows(); }
    std::size_t dim() const noexcept { return features.cols(); }

    /// Throws DataError on non-finite features or gt length mismatch.
    void validate() const;

    friend bool operator==(const ModalityDataset&, const ModalityDataset&) = default;
};

/// Per-sample label distributions over K clusters. Rows live on the simplex.
struct PseudoLabeling {
    Matrix labels;  // N x K
    std::size_t num_clusters() const noexcept { return labels.cols(); }
    std::size_t size() const noexcept { return labels.rows(); }
    std::vector<std::size_t> hard() const { return row_argmax(labels); }

    static PseudoLabeling from_hard(std::span<const std::size_t> ids, std::size_t k) {
        return {one_hot(ids, k)};
    }
};

/// Synthetic visible/infrared pair sharing one latent per identity. Infrared
/// rows are passed through a seed-derived rotation and offset whose size
/// grows with gap_strength.
std::pair<ModalityDataset, ModalityDataset> generate_dataset(const SynthConfig& cfg);

/// The modality transform used by generate_dataset: rotation R (D x D) and
/// offset g (length D). Exposed for tests.
struct ModalityGap {
    Matrix rotation;
    std::vector<double> offset;
};
ModalityGap make_modality_gap(std::size_t dim, double gap_strength, std::uint64_t seed);

struct KMeansResult {
    std::vector<std::size_t> assignment;  // compacted to 0..K'-1
    Matrix centroids;                     // K' x D
    std::vector<double> objective_trace;  // SSE after each assignment step
    std::size_t iterations = 0;
};

/// Lloyd's k-means with farthest-point seeding. The first center is drawn
/// from `seed`; each following center is the point farthest from the chosen
/// set (lowest index on ties). Empty clusters are dropped and ids compacted.
KMeansResult kmeans(const Matrix& features, std::size_t k, std::uint64_t seed, std::size_t max_iter);

/// One-hot pseudo labels from kmeans.
PseudoLabeling cluster_init(const Matrix& features, std::size_t k, std::uint64_t seed, std::size_t max_iter);

void save_dataset(const ModalityDataset& ds, const std::filesystem::path& path);
ModalityDataset load_dataset(const std::filesystem::path& path);

void write_dataset(const ModalityDataset& ds, std::ostream& os);
ModalityDataset read_dataset(std::istream& is);

}  // namespace cmla
