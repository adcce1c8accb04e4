// Command-line front end: generate, train, evaluate, report, selftest.

#include <iostream>

#include <CLI11.hpp>

#include "cmla/cli.hpp"

int main(int argc, char** argv) {
    using cmla::cli::Options;
    Options opt;

    CLI::App app{"Cross-modality label association on synthetic two-modality data"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    std::string config, out, data, checkpoint;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "Flat key = value config file")->check(CLI::ExistingFile);
        sub->add_option("--preset", opt.preset, "Tunable preset")->check(CLI::IsMember({"paper", "desk"}));
        sub->add_option("--seed", opt.seed, "Master seed");
        sub->add_option("--out", out, "Output directory");
    };

    CLI::App* generate = app.add_subcommand("generate", "Write visible.txt and infrared.txt");
    common(generate);

    CLI::App* train = app.add_subcommand("train", "Cluster, run stage 1 and stage 2, write checkpoints and logs");
    common(train);
    train->add_option("--data", data, "Directory with visible.txt and infrared.txt (default: --out)");
    train->add_flag("--stage1-only", opt.stage1_only, "Stop after stage 1");

    CLI::App* evaluate = app.add_subcommand("evaluate", "Retrieval metrics for a checkpoint");
    common(evaluate);
    evaluate->add_option("--data", data, "Directory with visible.txt and infrared.txt (default: --out)");
    evaluate->add_option("--checkpoint", checkpoint, "Model file (default: <out>/checkpoint.txt)");
    evaluate->add_option("--direction", opt.direction, "Query direction; both when omitted")
        ->check(CLI::IsMember({"v2r", "r2v"}));

    CLI::App* report = app.add_subcommand("report", "Merge histograms and summarize a training directory");
    common(report);

    CLI::App* selftest = app.add_subcommand("selftest", "Run the oracle suites");
    // Debug hook, deliberately absent from --help.
    selftest->add_option("--sabotage-grad", opt.sabotage_grad)->group("");

    CLI11_PARSE(app, argc, argv);

    if (!config.empty()) opt.config = config;
    if (!out.empty()) opt.out = out;
    if (!data.empty()) opt.data = data;
    if (!checkpoint.empty()) opt.checkpoint = checkpoint;

    if (generate->parsed()) return cmla::cli::cmd_generate(opt, std::cout, std::cerr);
    if (train->parsed()) return cmla::cli::cmd_train(opt, std::cout, std::cerr);
    if (evaluate->parsed()) return cmla::cli::cmd_evaluate(opt, std::cout, std::cerr);
    if (report->parsed()) return cmla::cli::cmd_report(opt, std::cout, std::cerr);
    return cmla::cli::cmd_selftest(opt, std::cout, std::cerr);
}
