#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmla/data.hpp"
#include "cmla/matrix.hpp"
#include "cmla/model.hpp"

namespace cmla {

enum class Direction { visible_to_infrared, infrared_to_visible };

std::string_view direction_tag(Direction d) noexcept;  // "v2r" / "r2v"
Direction parse_direction(std::string_view tag);        // throws ArgumentError

struct RetrievalReport {
    std::vector<double> cmc;  // cmc[r-1] = fraction of queries matched within rank r
    double map = 0.0;
    double minp = 0.0;
    std::size_t num_queries = 0;       // queries with at least one match
    std::size_t skipped_queries = 0;   // queries without any gallery match
    Direction direction = Direction::visible_to_infrared;

    /// CMC at `rank` (1-based); ranks past the gallery size saturate.
    double rank(std::size_t r) const;
};

using Rankings = std::vector<std::vector<std::size_t>>;

/// Gallery indices per query by ascending Euclidean distance, ties to the
/// lower gallery index.
Rankings rank_gallery(const Matrix& query_embeddings, const Matrix& gallery_embeddings);

/// Embeds both sets with `model` and ranks the gallery for every query.
Rankings retrieve(const ModalityDataset& query, const ModalityDataset& gallery, const ModelParams& model);

/// CMC, mAP and mINP. Queries with no match in the gallery are skipped and
/// counted; throws EvaluationError when every query is skipped.
RetrievalReport compute_metrics(const Rankings& rankings, std::span<const std::size_t> query_ids,
                                std::span<const std::size_t> gallery_ids,
                                Direction direction = Direction::visible_to_infrared);

/// Full evaluation of one direction on ground-truth-bearing datasets.
RetrievalReport evaluate(const ModelParams& model, const ModalityDataset& visible, const ModalityDataset& infrared,
                         Direction direction);

/// Flat JSON with keys r1,r5,r10,r20,map,minp,num_queries,direction.
std::string report_json(const RetrievalReport& report);
/// One row per rank: rank,cmc
std::string report_cmc_csv(const RetrievalReport& report);

/// Writes <stem>.json and <stem>_cmc.csv.
void write_report(const RetrievalReport& report, const std::filesystem::path& stem);

}  // namespace cmla
