#include "cmla/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "cmla/eval.hpp"
#include "cmla/grad_fixtures.hpp"
#include "cmla/neighbor.hpp"
#include "cmla/rng.hpp"
#include "cmla/simd.hpp"
#include "cmla/transport.hpp"

namespace cmla {
namespace {

constexpr std::uint64_t kSelftestSeed = 0x5e1f'7e57;

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

Matrix random_predictions(std::size_t n, std::size_t c, Rng& rng) {
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    Matrix logits(n, c);
    for (double& v : logits.values()) v = u(rng);
    return softmax_rows(logits);
}

// 2x2 plans with uniform marginals are [[q, 1/2-q], [1/2-q, q]].
SuiteResult ot_grid_oracle() {
    Rng rng(derive_seed(kSelftestSeed, {1}));
    const double lambdas[] = {1.0, 5.0, 25.0};
    double worst = 0.0;
    for (int inst = 0; inst < 10; ++inst) {
        const Matrix p = random_predictions(2, 2, rng);
        TransportConfig cfg;
        cfg.lambda = lambdas[inst % 3];
        const TransportPlan plan = sinkhorn_plan(p, cfg);
        auto objective = [&](double q) {
            const double e[2][2] = {{q, 0.5 - q}, {0.5 - q, q}};
            double f = 0.0;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) {
                    f -= e[i][j] * std::log(p(i, j));
                    if (e[i][j] > 0.0) f += e[i][j] * std::log(e[i][j] * 4.0) / cfg.lambda;
                }
            return f;
        };
        double best_q = 0.0, best_f = objective(0.0);
        for (int s = 1; s <= 500000; ++s) {
            const double q = s * 1e-6;
            const double f = objective(q);
            if (f < best_f) best_f = f, best_q = q;
        }
        const double want[2][2] = {{best_q, 0.5 - best_q}, {0.5 - best_q, best_q}};
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) worst = std::max(worst, std::abs(plan.plan(i, j) - want[i][j]));
    }
    return {"ot_grid_oracle", worst <= 1e-4, fmt("max entry error %.3g over 10 instances", worst)};
}

SuiteResult ot_marginals() {
    Rng rng(derive_seed(kSelftestSeed, {2}));
    std::uniform_int_distribution<std::size_t> dn(1, 64), dc(1, 16);
    const double lambdas[] = {1.0, 5.0, 25.0};
    double worst_res = 0.0, worst_mass = 0.0;
    for (int inst = 0; inst < 60; ++inst) {
        const std::size_t n = dn(rng), c = dc(rng);
        TransportConfig cfg;
        cfg.lambda = lambdas[inst % 3];
        const TransportPlan plan = sinkhorn_plan(random_predictions(n, c, rng), cfg);
        double mass = 0.0;
        std::vector<double> col(c, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                row += plan.plan(i, j);
                col[j] += plan.plan(i, j);
            }
            worst_res = std::max(worst_res, std::abs(row - 1.0 / static_cast<double>(n)));
            mass += row;
        }
        for (double v : col) worst_res = std::max(worst_res, std::abs(v - 1.0 / static_cast<double>(c)));
        worst_mass = std::max(worst_mass, std::abs(mass - 1.0));
    }
    return {"ot_marginals", worst_res <= 1e-6 && worst_mass <= 1e-9,
            fmt("marginal residual %.3g, mass error %.3g", worst_res, worst_mass)};
}

// Reference metrics straight from unsorted distances.
SuiteResult metric_oracle() {
    Rng rng(derive_seed(kSelftestSeed, {3}));
    std::uniform_int_distribution<std::size_t> dq(1, 20), dg(2, 60), did(0, 5);
    std::normal_distribution<double> normal(0.0, 1.0);
    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        const std::size_t nq = dq(rng), ng = dg(rng);
        Matrix q(nq, 3), g(ng, 3);
        for (double& v : q.values()) v = normal(rng);
        for (double& v : g.values()) v = normal(rng);
        std::vector<std::size_t> qid(nq), gid(ng);
        for (auto& v : qid) v = did(rng);
        for (auto& v : gid) v = did(rng);

        double ap_sum = 0.0, inp_sum = 0.0, r1 = 0.0;
        std::size_t valid = 0;
        for (std::size_t a = 0; a < nq; ++a) {
            auto d = [&](std::size_t j) { return std::sqrt(simd::scalar::squared_distance(&q(a, 0), &g(j, 0), 3)); };
            auto rank_of = [&](std::size_t j) {
                std::size_t r = 1;
                for (std::size_t o = 0; o < ng; ++o)
                    if (d(o) < d(j) || (d(o) == d(j) && o < j)) ++r;
                return r;
            };
            std::vector<std::size_t> match_ranks;
            for (std::size_t j = 0; j < ng; ++j)
                if (gid[j] == qid[a]) match_ranks.push_back(rank_of(j));
            if (match_ranks.empty()) continue;
            std::sort(match_ranks.begin(), match_ranks.end());
            double ap = 0.0;
            for (std::size_t m = 0; m < match_ranks.size(); ++m)
                ap += static_cast<double>(m + 1) / static_cast<double>(match_ranks[m]);
            ap_sum += ap / static_cast<double>(match_ranks.size());
            inp_sum += static_cast<double>(match_ranks.size()) / static_cast<double>(match_ranks.back());
            r1 += match_ranks.front() == 1 ? 1.0 : 0.0;
            ++valid;
        }
        if (valid == 0) continue;
        const RetrievalReport rep = compute_metrics(rank_gallery(q, g), qid, gid);
        const double n = static_cast<double>(valid);
        worst = std::max({worst, std::abs(rep.map - ap_sum / n), std::abs(rep.minp - inp_sum / n),
                          std::abs(rep.rank(1) - r1 / n)});
    }
    return {"metric_oracle", worst <= 1e-12, fmt("max deviation %.3g over 50 instances", worst)};
}

SuiteResult grad_check_suite(const SelftestOptions& options) {
    double worst = 0.0;
    std::string where;
    for (Composition c : all_compositions())
        for (std::uint64_t s = 0; s < 5; ++s) {
            const GradInstance inst = make_grad_instance(c, derive_seed(kSelftestSeed, {4, s}));
            GradCheckOptions gc;
            if (options.sabotage_grad_index) gc.sabotage_index = *options.sabotage_grad_index % inst.params.num_params();
            const GradCheckResult r = grad_check(inst.params, inst.inputs, inst.loss, 1e-5, gc);
            if (r.max_rel_error > worst) {
                worst = r.max_rel_error;
                where = std::string(composition_name(c)) + " at " + r.worst_block;
            }
        }
    return {"grad_check", worst <= 1e-4, fmt("max relative error %.3g", worst) + (where.empty() ? "" : " (" + where + ")")};
}

SuiteResult nclr_invariants() {
    Rng rng(derive_seed(kSelftestSeed, {5}));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double simplex_err = 0.0, contraction_err = 0.0;
    std::size_t checked = 0;
    for (int inst = 0; inst < 20; ++inst) {
        const std::size_t n = 30, c = 5;
        Matrix labels(n, c), feats(n, 2);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += (labels(i, j) = u(rng));
            for (std::size_t j = 0; j < c; ++j) labels(i, j) /= s;
            feats(i, 0) = u(rng);
            feats(i, 1) = u(rng);
        }
        std::vector<double> scores(n);
        for (auto& s : scores) s = 2.0 * u(rng);
        NclrConfig cfg;
        cfg.k = 4;
        cfg.gamma = u(rng);
        const CleanNoisyPartition part = split_clean_noisy(scores, cfg.tau);
        const NeighborIndex idx = knn(feats, feats, cfg.k, true);
        const RefinedLabels out = refine_labels(labels, part, idx, cfg);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                s += out.labels(i, j);
                if (out.labels(i, j) < 0.0) simplex_err = std::max(simplex_err, -out.labels(i, j));
            }
            simplex_err = std::max(simplex_err, std::abs(s - 1.0));
            if (part.clean[i]) continue;
            std::vector<double> m(c, 0.0);
            std::size_t cnt = 0;
            for (std::size_t nb : idx.neighbors(i))
                if (part.clean[nb]) {
                    ++cnt;
                    for (std::size_t j = 0; j < c; ++j) m[j] += labels(nb, j);
                }
            if (cnt == 0) continue;
            double before = 0.0, after = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                m[j] /= static_cast<double>(cnt);
                before += std::abs(labels(i, j) - m[j]);
                after += std::abs(out.labels(i, j) - m[j]);
            }
            contraction_err = std::max(contraction_err, std::abs(after - (1.0 - cfg.gamma) * before));
            ++checked;
        }
    }
    return {"nclr_invariants", simplex_err <= 1e-12 && contraction_err <= 1e-12 && checked > 0,
            fmt("simplex error %.3g, contraction error %.3g", simplex_err, contraction_err)};
}

SuiteResult simd_equivalence() {
    if (simd::detect_isa() == simd::Isa::scalar) return {"simd_equivalence", true, "no vector ISA on this CPU"};
    Rng rng(derive_seed(kSelftestSeed, {6}));
    std::normal_distribution<double> normal(0.0, 1.0);
    double worst = 0.0;
    const simd::Isa before = simd::active_isa();
    for (std::size_t n = 0; n < 70; ++n) {
        std::vector<double> a(n), b(n);
        for (auto& v : a) v = normal(rng);
        for (auto& v : b) v = normal(rng);
        double got[2], want[2];
        std::vector<double> y1 = b, y2 = b;
        simd::set_isa(simd::Isa::scalar);
        want[0] = simd::dot(a, b);
        want[1] = simd::squared_distance(a, b);
        simd::axpy(0.7, a, y1);
        simd::set_isa(simd::detect_isa());
        got[0] = simd::dot(a, b);
        got[1] = simd::squared_distance(a, b);
        simd::axpy(0.7, a, y2);
        for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(y1[i] - y2[i]));
        double scale = 1.0;
        for (std::size_t i = 0; i < n; ++i) scale += std::abs(a[i] * b[i]) + (a[i] - b[i]) * (a[i] - b[i]);
        for (int k = 0; k < 2; ++k) worst = std::max(worst, std::abs(got[k] - want[k]) / scale);
    }
    simd::set_isa(before);
    return {"simd_equivalence", worst <= 1e-14,
            fmt("max scaled deviation %.3g", worst) + " (" + std::string(simd::isa_name(simd::detect_isa())) + ")"};
}

}  // namespace

std::vector<SuiteResult> run_selftest(const SelftestOptions& options) {
    const std::vector<std::pair<std::string, std::function<SuiteResult()>>> suites = {
        {"ot_grid_oracle", ot_grid_oracle},
        {"ot_marginals", ot_marginals},
        {"metric_oracle", metric_oracle},
        {"grad_check", [&] { return grad_check_suite(options); }},
        {"nclr_invariants", nclr_invariants},
        {"simd_equivalence", simd_equivalence},
    };
    std::vector<SuiteResult> out;
    for (const auto& [name, run] : suites) {
        const auto t0 = std::chrono::steady_clock::now();
        SuiteResult r{name, false, {}, 0.0};
        try {
            r = run();
        } catch (const std::exception& e) {
            r.detail = std::string("threw: ") + e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace cmla
