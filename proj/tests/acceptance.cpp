// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// usage: cmla_acceptance <path to cmla binary>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "cmla/eval.hpp"
#include "cmla/grad_fixtures.hpp"
#include "cmla/neighbor.hpp"
#include "cmla/pipeline.hpp"
#include "cmla/transport.hpp"
#include "oracles.hpp"

using namespace cmla;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double marginal_residual(const Matrix& q) {
    double worst = 0.0;
    std::vector<double> col(q.cols(), 0.0);
    for (std::size_t i = 0; i < q.rows(); ++i) {
        double r = 0.0;
        for (std::size_t j = 0; j < q.cols(); ++j) {
            r += q(i, j);
            col[j] += q(i, j);
        }
        worst = std::max(worst, std::abs(r - 1.0 / static_cast<double>(q.rows())));
    }
    for (double c : col) worst = std::max(worst, std::abs(c - 1.0 / static_cast<double>(q.cols())));
    return worst;
}

Outcome sinkhorn_feasibility() {
    std::mt19937_64 rng(1001);
    std::uniform_int_distribution<std::size_t> dn(1, 64), dc(1, 16);
    double worst_res = 0.0, worst_mass = 0.0;
    for (int inst = 0; inst < 1000; ++inst) {
        TransportConfig cfg;
        cfg.lambda = std::array{1.0, 5.0, 25.0}[inst % 3];
        const std::size_t n = dn(rng), c = dc(rng);
        const TransportPlan t = sinkhorn_plan(oracle::random_simplex_rows(n, c, rng), cfg);
        worst_res = std::max(worst_res, marginal_residual(t.plan));
        const double mass = std::accumulate(t.plan.values().begin(), t.plan.values().end(), 0.0);
        worst_mass = std::max(worst_mass, std::abs(mass - 1.0));
    }
    return {worst_res <= 1e-6 && worst_mass <= 1e-9,
            fmt("1000 instances, max marginal residual %.3g, max mass error %.3g", worst_res, worst_mass)};
}

Outcome ot_oracles() {
    std::mt19937_64 rng(1002);
    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        TransportConfig cfg;
        cfg.lambda = std::array{1.0, 5.0, 25.0}[inst % 3];
        const Matrix p = oracle::random_simplex_rows(2, 2, rng);
        worst = std::max(worst, oracle::max_abs_diff(sinkhorn_plan(p, cfg).plan, oracle::grid_plan_2x2(p, cfg.lambda)));
    }
    std::uniform_int_distribution<std::size_t> dn(2, 7);
    int matched = 0, done = 0;
    while (done < 20) {
        const std::size_t n = dn(rng);
        const Matrix p = oracle::random_simplex_rows(n, n, rng, 4.0);
        std::vector<bool> seen(n, false);
        bool distinct = true;
        for (auto j : row_argmax(p)) {
            distinct = distinct && !seen[j];
            seen[j] = true;
        }
        if (!distinct) continue;
        TransportConfig cfg;
        cfg.lambda = 1e4;
        matched += hard_assign(sinkhorn_plan(p, cfg)) == oracle::best_permutation(p) ? 1 : 0;
        ++done;
    }
    return {worst <= 1e-4 && matched == 20,
            fmt("2x2 grid max error %.3g over 50; %d/20 permutations recovered", worst, matched)};
}

Outcome sampled_optimality() {
    std::mt19937_64 rng(1003);
    std::uniform_int_distribution<std::size_t> dn(2, 12), dc(2, 8);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    int violations = 0;
    double tightest = std::numeric_limits<double>::infinity();
    for (int inst = 0; inst < 50; ++inst) {
        TransportConfig cfg;
        cfg.lambda = std::array{1.0, 5.0, 25.0}[inst % 3];
        const std::size_t n = dn(rng), c = dc(rng);
        const Matrix p = oracle::random_simplex_rows(n, c, rng);
        const double best = ot_objective(sinkhorn_plan(p, cfg).plan, p, cfg.lambda);
        for (int s = 0; s < 1000; ++s) {
            Matrix m(n, c);
            for (double& v : m.values()) v = u(rng);
            const double other = ot_objective(oracle::project_uniform(m), p, cfg.lambda);
            tightest = std::min(tightest, other - best);
            violations += best <= other ? 0 : 1;
        }
    }
    return {violations == 0, fmt("50 x 1000 random plans, %d beat the solver, smallest margin %.3g", violations, tightest)};
}

Outcome gradient_suite() {
    double worst = 0.0;
    std::string where;
    std::size_t count = 0;
    for (Composition c : all_compositions())
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            const GradInstance inst = make_grad_instance(c, seed);
            const GradCheckResult r = grad_check(inst.params, inst.inputs, inst.loss, 1e-5);
            ++count;
            if (r.max_rel_error > worst) {
                worst = r.max_rel_error;
                where = std::string(composition_name(c)) + " seed " + std::to_string(seed);
            }
        }
    return {worst <= 1e-4, fmt("%zu instances, max relative error %.3g (%s)", count, worst, where.c_str())};
}

Matrix distances(const Matrix& q, const Matrix& g) {
    Matrix d(q.rows(), g.rows());
    for (std::size_t a = 0; a < q.rows(); ++a)
        for (std::size_t j = 0; j < g.rows(); ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < q.cols(); ++c) s += (q(a, c) - g(j, c)) * (q(a, c) - g(j, c));
            d(a, j) = std::sqrt(s);
        }
    return d;
}

Outcome metric_oracle() {
    std::mt19937_64 rng(1005);
    std::normal_distribution<double> normal(0.0, 1.0);
    double worst = 0.0;
    int done = 0;
    while (done < 200) {
        const std::size_t nq = 2 + rng() % 12, ng = 3 + rng() % 20, ids = 2 + rng() % 6, d = 1 + rng() % 5;
        Matrix q(nq, d), g(ng, d);
        for (double& v : q.values()) v = normal(rng);
        for (double& v : g.values()) v = normal(rng);
        std::vector<std::size_t> qid(nq), gid(ng);
        for (auto& x : qid) x = rng() % ids;
        for (auto& x : gid) x = rng() % ids;
        const oracle::Metrics want = oracle::brute_metrics(distances(q, g), qid, gid);
        if (want.valid == 0) continue;
        const RetrievalReport got = compute_metrics(rank_gallery(q, g), qid, gid);
        worst = std::max({worst, std::abs(got.map - want.map), std::abs(got.minp - want.minp)});
        for (std::size_t k = 0; k < ng; ++k) worst = std::max(worst, std::abs(got.cmc[k] - want.cmc[k]));
        ++done;
    }
    const std::vector<std::size_t> hq{1}, hg{1, 2, 1, 3, 4};
    const RetrievalReport hand = compute_metrics(Rankings{{0, 1, 2, 3, 4}}, hq, hg);
    const bool hand_ok = std::abs(hand.map - 0.833333) <= 1e-6 && std::abs(hand.minp - 0.666667) <= 1e-6;
    return {worst <= 1e-12 && hand_ok,
            fmt("200 instances, max deviation %.3g; hand case AP %.6f INP %.6f", worst, hand.map, hand.minp)};
}

Outcome nclr_algebra() {
    std::mt19937_64 rng(1006);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    double simplex = 0.0, contraction = 0.0;
    bool identities = true;
    std::size_t checked = 0;
    while (checked < 1000) {
        const std::size_t n = 40, c = 6;
        const Matrix y = oracle::random_simplex_rows(n, c, rng);
        Matrix f(n, 3);
        for (double& v : f.values()) v = normal(rng);
        std::vector<double> scores(n);
        for (double& s : scores) s = 2.0 * u(rng);
        NclrConfig cfg;
        cfg.k = 5;
        cfg.gamma = u(rng);
        const NeighborIndex idx = knn(f, f, cfg.k, true);
        const auto part = split_clean_noisy(scores, cfg.tau);

        NclrConfig off = cfg;
        off.gamma = 0.0;
        identities = identities && refine_labels(y, part, idx, off).labels == y;
        NclrConfig all_clean = cfg;
        all_clean.tau = std::numeric_limits<double>::infinity();
        identities = identities && refine_labels(y, split_clean_noisy(scores, all_clean.tau), idx, all_clean).labels == y;

        const Matrix out = refine_labels(y, part, idx, cfg).labels;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t x = 0; x < c; ++x) {
                s += out(i, x);
                if (out(i, x) < 0.0) simplex = std::max(simplex, -out(i, x));
            }
            simplex = std::max(simplex, std::abs(s - 1.0));
            if (part.clean[i]) continue;
            std::vector<double> m(c, 0.0);
            std::size_t cnt = 0;
            for (auto j : idx.neighbors(i))
                if (part.clean[j]) {
                    ++cnt;
                    for (std::size_t x = 0; x < c; ++x) m[x] += y(j, x);
                }
            if (cnt == 0) continue;
            double before = 0.0, after = 0.0;
            for (std::size_t x = 0; x < c; ++x) {
                m[x] /= static_cast<double>(cnt);
                before += std::abs(y(i, x) - m[x]);
                after += std::abs(out(i, x) - m[x]);
            }
            contraction = std::max(contraction, std::abs(after - (1.0 - cfg.gamma) * before));
            ++checked;
        }
    }
    return {identities && simplex <= 1e-12 && contraction <= 1e-12,
            fmt("identities %s; %zu noisy rows, simplex error %.3g, contraction error %.3g",
                identities ? "hold" : "BROKEN", checked, simplex, contraction)};
}

// Rank-1 and mAP averaged over both query directions.
std::pair<double, double> cross_modal(const ModelParams& m, const Datasets& d) {
    const RetrievalReport a = evaluate(m, d.visible, d.infrared, Direction::visible_to_infrared);
    const RetrievalReport b = evaluate(m, d.visible, d.infrared, Direction::infrared_to_visible);
    return {(a.rank(1) + b.rank(1)) / 2.0, (a.map + b.map) / 2.0};
}

struct Benchmark {
    Outcome ablation, drift;
};

Benchmark benchmark() {
    int gains = 0, ordered = 0, drifted = 0;
    std::string rows;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        RunConfig cfg;
        apply_preset(cfg, "desk");
        cfg.set_seed(seed);
        const Datasets data = generate_datasets(cfg);
        const TrainRun run = run_training(cfg, data, false);

        RunConfig dotla = cfg;
        dotla.train.weights.alpha_cncr = 0.0;
        dotla.train.nclr.gamma = 0.0;
        dotla.train.nclr.tau = std::numeric_limits<double>::infinity();
        const Stage2Result only = run_stage2(dotla, data, run.labels, run.stage1_model);

        const auto base = cross_modal(run.stage1_model, data);
        const auto mid = cross_modal(only.model, data);
        const auto full = cross_modal(run.final_model, data);
        const double gain = 100.0 * (full.first - base.first);
        const bool order = full.second >= mid.second && mid.second >= base.second;
        const double s0 = run.states.front().mean_score(), s1 = run.states.back().mean_score();
        gains += gain >= 15.0 ? 1 : 0;
        ordered += order ? 1 : 0;
        drifted += s1 < s0 ? 1 : 0;
        rows += fmt("\n    seed %llu: r1 %.3f -> %.3f (%+.1f pp), mAP base %.3f dotla %.3f full %.3f, score %.3f -> %.3f",
                    static_cast<unsigned long long>(seed), base.first, full.first, gain, base.second, mid.second,
                    full.second, s0, s1);
    }
    Benchmark b;
    b.ablation = {gains >= 4 && ordered >= 4,
                  fmt("(a) gain >= 15pp on %d/5, (b) mAP ordering on %d/5", gains, ordered) + rows};
    b.drift = {drifted >= 4, fmt("final-epoch mean score below first on %d/5", drifted)};
    return b;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

std::string drop_stamp(const std::string& text) {
    if (text.rfind("# ", 0) != 0) return text;
    const auto nl = text.find('\n');
    return nl == std::string::npos ? std::string() : text.substr(nl + 1);
}

Outcome determinism(const std::string& binary) {
    const fs::path root = fs::temp_directory_path() / "cmla_acceptance";
    fs::remove_all(root);
    for (const char* run : {"a", "b"}) {
        fs::create_directories(root / run);
        const std::string base = "cd '" + (root / run).string() + "' && '" + binary + "' ";
        const std::string common = " --preset desk --seed 7 --out run >/dev/null 2>&1";
        for (const char* cmd : {"generate", "train", "evaluate"})
            if (std::system((base + cmd + common).c_str()) != 0)
                return {false, fmt("run %s: '%s' exited nonzero", run, cmd)};
    }
    auto count_files = [](const fs::path& dir) {
        std::size_t n = 0;
        for (const auto& e : fs::recursive_directory_iterator(dir)) n += e.is_regular_file() ? 1 : 0;
        return n;
    };
    std::size_t files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(root / "a" / "run")) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), root / "a" / "run");
        const fs::path other = root / "b" / "run" / rel;
        if (!fs::exists(other)) return {false, "missing in second run: " + rel.string()};
        if (drop_stamp(slurp(entry.path())) != drop_stamp(slurp(other))) return {false, "differs: " + rel.string()};
        ++files;
    }
    const std::size_t other_files = count_files(root / "b" / "run");
    fs::remove_all(root);
    return {files == other_files && files > 0, fmt("%zu files byte-identical across two runs", files)};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: %s <cmla binary>\n", argv[0]);
        return 2;
    }
    bool all = true;
    auto report = [&](int id, const char* name, double budget, const std::function<Outcome()>& body) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o = body();
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (budget > 0 && secs > budget) {
            o.passed = false;
            o.detail += fmt("; over the %.0fs budget", budget);
        }
        all = all && o.passed;
        std::printf("%s %d %s: %s [%.2fs]\n", o.passed ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
        std::fflush(stdout);
    };
    report(1, "sinkhorn feasibility", 30, sinkhorn_feasibility);
    report(2, "transport oracles", 60, ot_oracles);
    report(3, "sampled optimality", 60, sampled_optimality);
    report(4, "gradient suite", 120, gradient_suite);
    report(5, "metric oracle", 10, metric_oracle);
    report(6, "label refinement algebra", 10, nclr_algebra);
    Benchmark bench;
    report(7, "synthetic benchmark", 300, [&] {
        bench = benchmark();
        return bench.ablation;
    });
    report(8, "score drift", 0, [&] { return bench.drift; });
    report(9, "determinism", 0, [&] { return determinism(fs::absolute(argv[1]).string()); });
    return all ? 0 : 1;
}
