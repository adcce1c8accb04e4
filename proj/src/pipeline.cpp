#include "cmla/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cmla/error.hpp"
#include "cmla/format.hpp"
#include "cmla/rng.hpp"

namespace cmla {
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kKmeansTag = 0x6b6d'6561'6e73;
constexpr std::uint64_t kInitTag = 0x696e'6974;

std::string hist_name(std::size_t epoch, Modality m) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "epoch_%03zu_%s.csv", epoch, std::string(modality_name(m)).c_str());
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, sep)) out.push_back(cell);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

}  // namespace

void write_text_file(const fs::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Datasets generate_datasets(const RunConfig& cfg) {
    auto [v, r] = generate_dataset(cfg.synth);
    return {std::move(v), std::move(r)};
}

void save_datasets(const Datasets& data, const fs::path& dir) {
    fs::create_directories(dir);
    save_dataset(data.visible, dir / kVisibleFile);
    save_dataset(data.infrared, dir / kInfraredFile);
}

Datasets load_datasets(const fs::path& dir) {
    for (auto name : {kVisibleFile, kInfraredFile})
        if (!fs::exists(dir / name)) throw DataError("missing dataset file " + (dir / name).string());
    Datasets d{load_dataset(dir / kVisibleFile), load_dataset(dir / kInfraredFile)};
    if (d.visible.modality != Modality::visible)
        throw DataError((dir / kVisibleFile).string() + ": header modality is not visible");
    if (d.infrared.modality != Modality::infrared)
        throw DataError((dir / kInfraredFile).string() + ": header modality is not infrared");
    if (d.visible.features.cols() != d.infrared.features.cols())
        throw DataError("visible and infrared feature dimensions differ");
    return d;
}

InitialLabels initial_labels(const RunConfig& cfg, const Datasets& data) {
    return {cluster_init(data.visible.features, cfg.effective_clusters(Modality::visible),
                         derive_seed(cfg.seed(), {kKmeansTag, 0}), cfg.kmeans_max_iter),
            cluster_init(data.infrared.features, cfg.effective_clusters(Modality::infrared),
                         derive_seed(cfg.seed(), {kKmeansTag, 1}), cfg.kmeans_max_iter)};
}

TrainRun run_training(const RunConfig& cfg, const Datasets& data, bool stage1_only) {
    cfg.validate();
    if (data.visible.features.cols() != cfg.synth.dim)
        throw ConfigError("dim = " + std::to_string(cfg.synth.dim) + " but the data has " +
                          std::to_string(data.visible.features.cols()) + " columns");
    InitialLabels labels = initial_labels(cfg, data);
    const ModelShape shape = cfg.model_shape(labels.visible.num_clusters(), labels.infrared.num_clusters());
    ModelParams init = ModelParams::init(shape, derive_seed(cfg.seed(), {kInitTag}));

    Stage1Result s1 = train_stage1(std::move(init), data.visible, data.infrared, labels.visible, labels.infrared,
                                   cfg.train);
    TrainRun run{std::move(labels), s1.model, std::move(s1.epoch_loss), s1.model, {}};
    if (!stage1_only) {
        Stage2Result s2 = run_stage2(cfg, data, run.labels, run.stage1_model);
        run.final_model = std::move(s2.model);
        run.states = std::move(s2.states);
    }
    return run;
}

Stage2Result run_stage2(const RunConfig& cfg, const Datasets& data, const InitialLabels& labels,
                        const ModelParams& stage1_model) {
    return train_stage2(stage1_model, data.visible, data.infrared, labels.visible, labels.infrared, cfg.train);
}

std::string epoch_log_csv(const TrainRun& run, std::string_view stamp) {
    std::ostringstream os;
    os << "# " << stamp << '\n';
    os << "epoch,stage,loss_total,loss_cv,loss_cr,loss_r,clean_frac_v,clean_frac_r,assign_acc_if_gt\n";
    for (std::size_t e = 0; e < run.stage1_loss.size(); ++e)
        os << e + 1 << ",1," << format_double(run.stage1_loss[e]) << ",,,,,,\n";
    for (const EpochState& s : run.states) {
        os << s.epoch + 1 << ",2," << format_double(s.losses.total) << ',' << format_double(s.losses.cv) << ','
           << format_double(s.losses.cr) << ',' << format_double(s.losses.r) << ','
           << format_double(s.partition_visible.clean_fraction()) << ','
           << format_double(s.partition_infrared.clean_fraction()) << ',';
        if (s.assign_accuracy) os << format_double(*s.assign_accuracy);
        os << '\n';
    }
    return os.str();
}

std::string histogram_csv(const Histogram& h) {
    std::ostringstream os;
    os << "bin_low,bin_high,count\n";
    for (std::size_t b = 0; b < h.counts.size(); ++b)
        os << format_double(h.bin_low(b)) << ',' << format_double(h.bin_high(b)) << ',' << h.counts[b] << '\n';
    return os.str();
}

std::string score_summary_csv(const TrainRun& run) {
    std::ostringstream os;
    os << "epoch,modality,mean_score,clean_fraction\n";
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    for (const EpochState& s : run.states) {
        os << s.epoch + 1 << ",visible," << format_double(mean(s.partition_visible.scores)) << ','
           << format_double(s.partition_visible.clean_fraction()) << '\n';
        os << s.epoch + 1 << ",infrared," << format_double(mean(s.partition_infrared.scores)) << ','
           << format_double(s.partition_infrared.clean_fraction()) << '\n';
    }
    return os.str();
}

void write_training_outputs(const TrainRun& run, const fs::path& dir, std::string_view stamp) {
    fs::create_directories(dir / "hist");
    save_checkpoint(run.stage1_model, dir / "checkpoint_stage1.txt");
    save_checkpoint(run.final_model, dir / "checkpoint.txt");
    write_text_file(dir / "epochs.csv", epoch_log_csv(run, stamp));
    write_text_file(dir / "scores.csv", score_summary_csv(run));
    for (const EpochState& s : run.states) {
        write_text_file(dir / "hist" / hist_name(s.epoch + 1, Modality::visible), histogram_csv(s.histogram_visible));
        write_text_file(dir / "hist" / hist_name(s.epoch + 1, Modality::infrared),
                        histogram_csv(s.histogram_infrared));
    }
}

std::string write_run_report(const fs::path& dir) {
    using json = nlohmann::ordered_json;
    if (!fs::exists(dir / "epochs.csv")) throw DataError("no training log at " + (dir / "epochs.csv").string());

    // merged histograms, in epoch then modality order
    std::vector<fs::path> hists;
    if (fs::exists(dir / "hist"))
        for (const auto& entry : fs::directory_iterator(dir / "hist"))
            if (entry.path().extension() == ".csv") hists.push_back(entry.path());
    std::sort(hists.begin(), hists.end());
    std::ostringstream merged;
    merged << "epoch,modality,bin_low,bin_high,count\n";
    for (const fs::path& p : hists) {
        const std::string stem = p.stem().string();  // epoch_NNN_modality
        const auto parts = split(stem, '_');
        if (parts.size() != 3) throw DataError("unexpected histogram file " + p.string());
        std::istringstream in(read_text_file(p));
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line))
            if (!line.empty()) merged << std::stoul(parts[1]) << ',' << parts[2] << ',' << line << '\n';
    }
    write_text_file(dir / "histograms.csv", merged.str());

    json summary;
    std::size_t rows1 = 0, rows2 = 0;
    json acc = json::array();
    {
        std::istringstream in(read_text_file(dir / "epochs.csv"));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#' || line.rfind("epoch,", 0) == 0) continue;
            const auto cells = split(line, ',');
            if (cells.size() != 9) throw DataError("malformed row in epochs.csv: " + line);
            if (cells[1] == "1") ++rows1;
            if (cells[1] == "2") {
                ++rows2;
                if (!cells[8].empty()) acc.push_back(std::stod(cells[8]));
            }
        }
    }
    summary["epochs_stage1"] = rows1;
    summary["epochs_stage2"] = rows2;

    std::map<std::size_t, std::pair<double, std::size_t>> per_epoch;  // sum of modality means, count
    if (fs::exists(dir / "scores.csv")) {
        std::istringstream in(read_text_file(dir / "scores.csv"));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto cells = split(line, ',');
            if (cells.size() != 4) throw DataError("malformed row in scores.csv: " + line);
            auto& slot = per_epoch[std::stoul(cells[0])];
            slot.first += std::stod(cells[2]);
            ++slot.second;
        }
    }
    json means = json::array();
    for (const auto& [epoch, slot] : per_epoch) means.push_back(slot.first / static_cast<double>(slot.second));
    summary["mean_score_per_epoch"] = means;
    if (!means.empty()) {
        summary["mean_score_first"] = means.front();
        summary["mean_score_last"] = means.back();
    }
    summary["assign_acc_per_epoch"] = acc;

    json reports = json::object();
    for (std::string_view tag : {"v2r", "r2v"}) {
        const fs::path p = dir / ("report_" + std::string(tag) + ".json");
        if (fs::exists(p)) reports[std::string(tag)] = json::parse(read_text_file(p));
    }
    summary["reports"] = reports;

    const std::string text = summary.dump(2) + "\n";
    write_text_file(dir / "summary.json", text);
    return text;
}

}  // namespace cmla
