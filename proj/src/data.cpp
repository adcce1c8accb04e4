#include "cmla/data.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "cmla/error.hpp"
#include "cmla/format.hpp"
#include "cmla/rng.hpp"
#include "cmla/simd.hpp"

namespace cmla {
namespace {

// Generator scale on the rotated coordinates and offset scale, at gap_strength = 1.
constexpr double kRotationScale = 1.6;
constexpr double kOffsetScale = 1.0;
// Share of coordinates the rotation mixes.
constexpr double kRotatedFraction = 0.5;

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

}  // namespace

std::string_view modality_name(Modality m) noexcept {
    return m == Modality::visible ? "visible" : "infrared";
}

Modality parse_modality(std::string_view s) {
    if (s == "visible") return Modality::visible;
    if (s == "infrared") return Modality::infrared;
    throw ArgumentError("unknown modality '" + std::string(s) + "'");
}

void SynthConfig::validate() const {
    if (num_identities < 2) throw ConfigError("num_identities must be >= 2");
    if (dim < 2) throw ConfigError("dim must be >= 2");
    if (per_id_visible < 1) throw ConfigError("per_id_visible must be >= 1");
    if (per_id_infrared < 1) throw ConfigError("per_id_infrared must be >= 1");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be finite and >= 0");
    if (!(gap_strength >= 0.0) || !std::isfinite(gap_strength)) throw ConfigError("gap_strength must be finite and >= 0");
}

void ModalityDataset::validate() const {
    for (double v : features.values())
        if (!std::isfinite(v)) throw DataError("non-finite feature value");
    if (gt_ids && gt_ids->size() != features.rows())
        throw DataError("gt_ids length " + std::to_string(gt_ids->size()) + " != rows " +
                        std::to_string(features.rows()));
}

ModalityGap make_modality_gap(std::size_t dim, double gap_strength, std::uint64_t seed) {
    ModalityGap gap{Matrix(dim, dim), std::vector<double>(dim, 0.0)};
    if (gap_strength == 0.0) {
        for (std::size_t i = 0; i < dim; ++i) gap.rotation(i, i) = 1.0;
        return gap;
    }
    Rng rng(derive_seed(seed, {0x6761'7000}));
    std::normal_distribution<double> normal(0.0, 1.0);

    // The rotation acts on a seed-chosen half of the coordinates; the rest
    // stay shared between modalities.
    std::vector<std::size_t> coords(dim);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    std::shuffle(coords.begin(), coords.end(), rng);
    const std::size_t rotated = std::max<std::size_t>(2, static_cast<std::size_t>(dim * kRotatedFraction));
    coords.resize(rotated);
    std::sort(coords.begin(), coords.end());

    const auto n = static_cast<Eigen::Index>(dim);
    Eigen::MatrixXd generator = Eigen::MatrixXd::Zero(n, n);
    const double scale = gap_strength * kRotationScale / std::sqrt(static_cast<double>(rotated));
    for (std::size_t a = 0; a < rotated; ++a)
        for (std::size_t b = a + 1; b < rotated; ++b) {
            const double v = normal(rng) * scale;
            const auto i = static_cast<Eigen::Index>(coords[a]);
            const auto j = static_cast<Eigen::Index>(coords[b]);
            generator(i, j) = v;
            generator(j, i) = -v;
        }
    // exp of a skew-symmetric matrix is a rotation.
    const Eigen::MatrixXd rot = generator.exp();
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j)
            gap.rotation(i, j) = rot(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));

    const double offset_scale = gap_strength * kOffsetScale / std::sqrt(static_cast<double>(dim));
    for (auto& g : gap.offset) g = normal(rng) * offset_scale;
    return gap;
}

std::pair<ModalityDataset, ModalityDataset> generate_dataset(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.dim;
    const ModalityGap gap = make_modality_gap(d, cfg.gap_strength, cfg.seed);

    Rng latent_rng(derive_seed(cfg.seed, {0x6c61'7465}));
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix latents(cfg.num_identities, d);
    for (double& v : latents.values()) v = normal(latent_rng);

    Rng noise_rng(derive_seed(cfg.seed, {0x6e6f'6973}));
    auto add_noise = [&](std::span<double> row) {
        if (cfg.noise_sigma == 0.0) return;
        for (double& v : row) v += cfg.noise_sigma * normal(noise_rng);
    };

    ModalityDataset vis{Matrix(cfg.num_identities * cfg.per_id_visible, d), Modality::visible,
                        std::vector<std::size_t>{}};
    ModalityDataset ir{Matrix(cfg.num_identities * cfg.per_id_infrared, d), Modality::infrared,
                       std::vector<std::size_t>{}};

    std::size_t row = 0;
    for (std::size_t id = 0; id < cfg.num_identities; ++id)
        for (std::size_t s = 0; s < cfg.per_id_visible; ++s, ++row) {
            auto out = vis.features.row(row);
            std::copy_n(latents.row(id).begin(), d, out.begin());
            add_noise(out);
            vis.gt_ids->push_back(id);
        }

    std::vector<double> transformed(d);
    row = 0;
    for (std::size_t id = 0; id < cfg.num_identities; ++id) {
        if (cfg.gap_strength == 0.0) {
            std::copy_n(latents.row(id).begin(), d, transformed.begin());
        } else {
            for (std::size_t i = 0; i < d; ++i)
                transformed[i] = simd::dot(gap.rotation.row(i), latents.row(id)) + gap.offset[i];
        }
        for (std::size_t s = 0; s < cfg.per_id_infrared; ++s, ++row) {
            auto out = ir.features.row(row);
            std::copy(transformed.begin(), transformed.end(), out.begin());
            add_noise(out);
            ir.gt_ids->push_back(id);
        }
    }
    return {std::move(vis), std::move(ir)};
}

KMeansResult kmeans(const Matrix& features, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
    const std::size_t n = features.rows();
    if (k < 1 || k > n)
        throw ArgumentError("kmeans: k=" + std::to_string(k) + " must be in [1, N=" + std::to_string(n) + "]");
    if (max_iter < 1) throw ArgumentError("kmeans: max_iter must be >= 1");
    for (double v : features.values())
        if (!std::isfinite(v)) throw DataError("kmeans: non-finite feature value");

    const std::size_t d = features.cols();
    Matrix centroids(k, d);

    // Farthest-point seeding.
    Rng rng(derive_seed(seed, {0x6b6d'6561}));
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::size_t chosen = first;
    for (std::size_t c = 0; c < k; ++c) {
        std::copy_n(features.row(chosen).begin(), d, centroids.row(c).begin());
        if (c + 1 == k) break;
        std::size_t best = 0;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], simd::squared_distance(features.row(i), centroids.row(c)));
            if (nearest[i] > best_d) {
                best_d = nearest[i];
                best = i;
            }
        }
        chosen = best;
    }

    std::vector<std::size_t> assign(n, k);
    std::vector<double> trace;
    std::size_t it = 0;
    std::vector<std::size_t> counts(k);
    while (it < max_iter) {
        ++it;
        bool changed = false;
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double dist = simd::squared_distance(features.row(i), centroids.row(c));
                if (dist < best_d) {
                    best_d = dist;
                    best = c;
                }
            }
            if (assign[i] != best) changed = true;
            assign[i] = best;
            sse += best_d;
        }
        trace.push_back(sse);
        if (!changed) break;

        // Update step; an empty cluster keeps its previous centroid.
        std::fill(counts.begin(), counts.end(), 0);
        Matrix sums(k, d);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[assign[i]];
            simd::axpy(1.0, features.row(i), sums.row(assign[i]));
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            auto dst = centroids.row(c);
            auto src = sums.row(c);
            for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] / static_cast<double>(counts[c]);
        }
    }

    // Compact cluster ids.
    std::fill(counts.begin(), counts.end(), 0);
    for (auto a : assign) ++counts[a];
    std::vector<std::size_t> remap(k, k);
    std::size_t next = 0;
    for (std::size_t c = 0; c < k; ++c)
        if (counts[c] > 0) remap[c] = next++;

    KMeansResult res;
    res.centroids = Matrix(next, d);
    for (std::size_t c = 0; c < k; ++c)
        if (remap[c] < k) std::copy_n(centroids.row(c).begin(), d, res.centroids.row(remap[c]).begin());
    res.assignment.resize(n);
    for (std::size_t i = 0; i < n; ++i) res.assignment[i] = remap[assign[i]];
    res.objective_trace = std::move(trace);
    res.iterations = it;
    return res;
}

PseudoLabeling cluster_init(const Matrix& features, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
    const KMeansResult km = kmeans(features, k, seed, max_iter);
    return PseudoLabeling::from_hard(km.assignment, km.centroids.rows());
}

void write_dataset(const ModalityDataset& ds, std::ostream& os) {
    const bool has_gt = ds.gt_ids.has_value();
    os << ds.size() << ' ' << ds.dim() << ' ' << modality_name(ds.modality) << ' ' << (has_gt ? 1 : 0) << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto r = ds.features.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (j) os << ' ';
            os << format_double(r[j]);
        }
        if (has_gt) os << ' ' << (*ds.gt_ids)[i];
        os << '\n';
    }
}

ModalityDataset read_dataset(std::istream& is) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(is, line)) throw ParseError(1, "missing header");
    ++line_no;
    const auto header = split_ws(line);
    if (header.size() != 4) throw ParseError(1, "header must be 'N D modality has_gt'");
    std::size_t n = 0, d = 0, has_gt = 0;
    if (!parse_size(header[0], n)) throw ParseError(1, "bad row count '" + std::string(header[0]) + "'");
    if (!parse_size(header[1], d) || d == 0) throw ParseError(1, "bad dimension '" + std::string(header[1]) + "'");
    ModalityDataset ds;
    try {
        ds.modality = parse_modality(header[2]);
    } catch (const ArgumentError& e) {
        throw ParseError(1, e.what());
    }
    if (!parse_size(header[3], has_gt) || has_gt > 1) throw ParseError(1, "has_gt must be 0 or 1");

    ds.features = Matrix(n, d);
    if (has_gt) ds.gt_ids.emplace(n, 0);
    const std::size_t arity = d + has_gt;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto tokens = split_ws(line);
        if (tokens.empty()) continue;
        if (row == n) throw ParseError(line_no, "more rows than the header's N=" + std::to_string(n));
        if (tokens.size() != arity)
            throw ParseError(line_no, "expected " + std::to_string(arity) + " tokens, got " + std::to_string(tokens.size()));
        auto out = ds.features.row(row);
        for (std::size_t j = 0; j < d; ++j) {
            if (!parse_double(tokens[j], out[j]) || !std::isfinite(out[j]))
                throw ParseError(line_no, "token " + std::to_string(j + 1) + " '" + std::string(tokens[j]) +
                                              "' is not a finite number");
        }
        if (has_gt && !parse_size(tokens[d], (*ds.gt_ids)[row]))
            throw ParseError(line_no, "token " + std::to_string(d + 1) + " '" + std::string(tokens[d]) +
                                          "' is not a non-negative integer id");
        ++row;
    }
    if (row != n)
        throw ParseError(line_no + 1, "expected " + std::to_string(n) + " rows, got " + std::to_string(row));
    return ds;
}

void save_dataset(const ModalityDataset& ds, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
    write_dataset(ds, os);
    if (!os) throw DataError("write failed for '" + path.string() + "'");
}

ModalityDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open '" + path.string() + "'");
    try {
        return read_dataset(is);
    } catch (const ParseError& e) {
        throw ParseError(e.line(), path.string() + ": " + std::string(e.what()).substr(std::string(e.what()).find(':') + 2));
    }
}

}  // namespace cmla
