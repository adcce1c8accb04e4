#include "cmla/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cmla/error.hpp"
#include "cmla/format.hpp"
#include "cmla/simd.hpp"

namespace cmla {

std::string_view direction_tag(Direction d) noexcept {
    return d == Direction::visible_to_infrared ? "v2r" : "r2v";
}

Direction parse_direction(std::string_view tag) {
    if (tag == "v2r") return Direction::visible_to_infrared;
    if (tag == "r2v") return Direction::infrared_to_visible;
    throw ArgumentError("unknown direction '" + std::string(tag) + "' (expected v2r or r2v)");
}

double RetrievalReport::rank(std::size_t r) const {
    if (cmc.empty() || r == 0) return 0.0;
    return cmc[std::min(r, cmc.size()) - 1];
}

Rankings rank_gallery(const Matrix& query_embeddings, const Matrix& gallery_embeddings) {
    if (gallery_embeddings.rows() == 0) throw ArgumentError("retrieve: empty gallery");
    if (query_embeddings.rows() == 0) throw ArgumentError("retrieve: empty query set");
    if (query_embeddings.cols() != gallery_embeddings.cols()) throw ArgumentError("retrieve: dimension mismatch");
    Rankings out(query_embeddings.rows());
    std::vector<std::pair<double, std::size_t>> scored(gallery_embeddings.rows());
    for (std::size_t q = 0; q < query_embeddings.rows(); ++q) {
        for (std::size_t g = 0; g < gallery_embeddings.rows(); ++g)
            scored[g] = {std::sqrt(simd::squared_distance(query_embeddings.row(q), gallery_embeddings.row(g))), g};
        std::sort(scored.begin(), scored.end());
        out[q].resize(scored.size());
        std::transform(scored.begin(), scored.end(), out[q].begin(), [](const auto& s) { return s.second; });
    }
    return out;
}

Rankings retrieve(const ModalityDataset& query, const ModalityDataset& gallery, const ModelParams& model) {
    if (gallery.size() == 0) throw ArgumentError("retrieve: empty gallery");
    if (query.size() == 0) throw ArgumentError("retrieve: empty query set");
    return rank_gallery(embed(model, query.features), embed(model, gallery.features));
}

RetrievalReport compute_metrics(const Rankings& rankings, std::span<const std::size_t> query_ids,
                                std::span<const std::size_t> gallery_ids, Direction direction) {
    if (rankings.size() != query_ids.size()) throw ArgumentError("compute_metrics: one ranking per query required");
    RetrievalReport rep;
    rep.direction = direction;
    const std::size_t g = gallery_ids.size();
    std::vector<double> hits_at(g, 0.0);  // queries whose first match is at rank r+1
    double ap_sum = 0.0, inp_sum = 0.0;
    for (std::size_t q = 0; q < rankings.size(); ++q) {
        const auto& order = rankings[q];
        if (order.size() != g) throw ArgumentError("compute_metrics: ranking length differs from gallery size");
        std::size_t found = 0;
        std::size_t first = 0, last = 0;
        double precision_sum = 0.0;
        for (std::size_t pos = 0; pos < g; ++pos) {
            if (gallery_ids[order[pos]] != query_ids[q]) continue;
            ++found;
            if (found == 1) first = pos;
            last = pos;
            precision_sum += static_cast<double>(found) / static_cast<double>(pos + 1);
        }
        if (found == 0) {
            ++rep.skipped_queries;
            continue;
        }
        ++rep.num_queries;
        hits_at[first] += 1.0;
        ap_sum += precision_sum / static_cast<double>(found);
        inp_sum += static_cast<double>(found) / static_cast<double>(last + 1);
    }
    if (rep.num_queries == 0) throw EvaluationError("compute_metrics: no query has a match in the gallery");
    const double n = static_cast<double>(rep.num_queries);
    rep.cmc.resize(g);
    double cum = 0.0;
    for (std::size_t r = 0; r < g; ++r) {
        cum += hits_at[r];
        rep.cmc[r] = cum / n;
    }
    rep.map = ap_sum / n;
    rep.minp = inp_sum / n;
    return rep;
}

RetrievalReport evaluate(const ModelParams& model, const ModalityDataset& visible, const ModalityDataset& infrared,
                         Direction direction) {
    if (!visible.gt_ids || !infrared.gt_ids) throw EvaluationError("evaluate: datasets carry no ground-truth ids");
    const bool v2r = direction == Direction::visible_to_infrared;
    const ModalityDataset& query = v2r ? visible : infrared;
    const ModalityDataset& gallery = v2r ? infrared : visible;
    return compute_metrics(retrieve(query, gallery, model), *query.gt_ids, *gallery.gt_ids, direction);
}

std::string report_json(const RetrievalReport& report) {
    nlohmann::ordered_json j;
    j["r1"] = report.rank(1);
    j["r5"] = report.rank(5);
    j["r10"] = report.rank(10);
    j["r20"] = report.rank(20);
    j["map"] = report.map;
    j["minp"] = report.minp;
    j["num_queries"] = report.num_queries;
    j["direction"] = std::string(direction_tag(report.direction));
    return j.dump(2) + "\n";
}

std::string report_cmc_csv(const RetrievalReport& report) {
    std::ostringstream os;
    os << "rank,cmc\n";
    for (std::size_t r = 0; r < report.cmc.size(); ++r) os << r + 1 << ',' << format_double(report.cmc[r]) << '\n';
    return os.str();
}

void write_report(const RetrievalReport& report, const std::filesystem::path& stem) {
    auto write = [](const std::filesystem::path& p, const std::string& body) {
        std::ofstream os(p);
        if (!os) throw DataError("cannot open '" + p.string() + "' for writing");
        os << body;
    };
    write(std::filesystem::path(stem.string() + ".json"), report_json(report));
    write(std::filesystem::path(stem.string() + "_cmc.csv"), report_cmc_csv(report));
}

}  // namespace cmla
