#include "cmla/cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <ostream>

#include "cmla/error.hpp"
#include "cmla/eval.hpp"
#include "cmla/format.hpp"
#include "cmla/pipeline.hpp"
#include "cmla/selftest.hpp"

namespace cmla::cli {
namespace fs = std::filesystem;

namespace {

std::string utc_stamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[64];
    std::strftime(buf, sizeof buf, "run started %Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

fs::path require_out(const RunConfig& cfg) {
    if (cfg.out_dir.empty()) throw ConfigError("no output directory (use --out or out_dir)");
    fs::create_directories(cfg.out_dir);
    return cfg.out_dir;
}

// Data directory: --data, then data_dir, then the output directory.
fs::path data_dir(const RunConfig& cfg) {
    if (!cfg.data_dir.empty()) return cfg.data_dir;
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    throw ConfigError("no data directory (use --data or data_dir)");
}

template <class Body>
int guarded(std::ostream& err, Body&& body) {
    try {
        return body();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace

RunConfig resolve_config(const Options& opt) {
    RunConfig cfg;
    if (opt.preset) apply_preset(cfg, *opt.preset);
    if (opt.config) load_config(cfg, *opt.config, opt.preset.value_or(""));
    if (opt.seed) cfg.set_seed(*opt.seed);
    if (opt.out) cfg.out_dir = *opt.out;
    if (opt.data) cfg.data_dir = *opt.data;
    if (opt.checkpoint) cfg.checkpoint = *opt.checkpoint;
    cfg.validate();
    return cfg;
}

int cmd_generate(const Options& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const RunConfig cfg = resolve_config(opt);
        const fs::path dir = require_out(cfg);
        save_datasets(generate_datasets(cfg), dir);
        save_config(cfg, dir / kEffectiveConfigFile);
        out << "wrote " << (dir / kVisibleFile).string() << " and " << (dir / kInfraredFile).string() << '\n';
        return 0;
    });
}

int cmd_train(const Options& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const RunConfig cfg = resolve_config(opt);
        const Datasets data = load_datasets(data_dir(cfg));
        const fs::path dir = require_out(cfg);
        const TrainRun run = run_training(cfg, data, opt.stage1_only);
        write_training_outputs(run, dir, utc_stamp());
        save_config(cfg, dir / kEffectiveConfigFile);
        out << "stage 1: " << run.stage1_loss.size() << " epochs";
        if (!run.stage1_loss.empty()) out << ", final loss " << format_double(run.stage1_loss.back());
        out << '\n';
        if (!run.states.empty()) {
            const EpochState& last = run.states.back();
            out << "stage 2: " << run.states.size() << " epochs, final loss " << format_double(last.losses.total)
                << ", mean score " << format_double(run.states.front().mean_score()) << " -> "
                << format_double(last.mean_score()) << '\n';
        }
        out << "wrote " << (dir / "checkpoint.txt").string() << '\n';
        return 0;
    });
}

int cmd_evaluate(const Options& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const RunConfig cfg = resolve_config(opt);
        const fs::path dir = require_out(cfg);
        const fs::path ckpt = cfg.checkpoint.empty() ? dir / "checkpoint.txt" : cfg.checkpoint;
        if (!fs::exists(ckpt)) throw DataError("missing checkpoint " + ckpt.string());
        const ModelParams model = load_checkpoint(ckpt);
        const Datasets data = load_datasets(data_dir(cfg));
        std::vector<Direction> dirs = {Direction::visible_to_infrared, Direction::infrared_to_visible};
        if (opt.direction) dirs = {parse_direction(*opt.direction)};
        for (Direction d : dirs) {
            const RetrievalReport rep = evaluate(model, data.visible, data.infrared, d);
            const fs::path stem = dir / ("report_" + std::string(direction_tag(d)));
            write_report(rep, stem);
            if (rep.skipped_queries)
                err << "warning: " << rep.skipped_queries << " queries without a gallery match were skipped\n";
            out << direction_tag(d) << ": r1 " << format_double(rep.rank(1)) << " map " << format_double(rep.map)
                << " minp " << format_double(rep.minp) << '\n';
        }
        save_config(cfg, dir / kEffectiveConfigFile);
        return 0;
    });
}

int cmd_report(const Options& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const RunConfig cfg = resolve_config(opt);
        const fs::path dir = require_out(cfg);
        out << write_run_report(dir);
        return 0;
    });
}

int cmd_selftest(const Options& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        SelftestOptions so;
        so.sabotage_grad_index = opt.sabotage_grad;
        bool ok = true;
        for (const SuiteResult& r : run_selftest(so)) {
            char secs[32];
            std::snprintf(secs, sizeof secs, "%.2fs", r.seconds);
            out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " [" << secs << "]\n";
            ok = ok && r.passed;
        }
        if (!ok) err << "selftest failed\n";
        return ok ? 0 : 1;
    });
}

}  // namespace cmla::cli
