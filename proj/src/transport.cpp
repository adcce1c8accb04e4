#include "cmla/transport.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>

#include <Eigen/Dense>

#include "cmla/error.hpp"

namespace cmla {
namespace {

// log(sum_j exp(x_j)) with the usual max shift.
template <typename Get>
double log_sum_exp(std::size_t n, Get&& get) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, get(j));
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(get(j) - mx);
    return mx + std::log(s);
}

// Sweeps are judged every kStallWindow iterations; when the residual has not
// dropped below kStallRatio of its value a window earlier, the column
// potentials are finished by Newton steps instead.
constexpr std::size_t kStallWindow = 50;
constexpr double kStallRatio = 0.5;

// One damped Newton ascent step on the dual in g, with f eliminated so that
// rows are exact: Phi(g) = sum_j beta g_j + sum_i alpha (log alpha - lse_i(g)).
// The last potential is pinned (the dual is invariant to a shared shift).
// On return f is stale; the caller recomputes it. False if no ascent step
// was found.
bool newton_step(const Matrix& log_kernel, const std::vector<double>& f, std::vector<double>& g,
                 const std::vector<double>& lse, double alpha, double beta) {
    const std::size_t n = log_kernel.rows(), c = log_kernel.cols();
    const auto m = static_cast<Eigen::Index>(c - 1);
    Eigen::VectorXd col = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c));
    Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd q(static_cast<Eigen::Index>(c));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) q(static_cast<Eigen::Index>(j)) = std::exp(f[i] + log_kernel(i, j) + g[j]);
        col += q;
        outer.noalias() += q.head(m) * q.head(m).transpose() / alpha;
    }
    Eigen::MatrixXd hess = -outer;
    hess.diagonal() += col.head(m);
    const Eigen::VectorXd grad = Eigen::VectorXd::Constant(m, beta) - col.head(m);
    // When underflow has cut the support graph the Hessian is singular; a
    // small ridge keeps the solve defined and lets the step follow the flat
    // direction.
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    const double scale = hess.diagonal().cwiseAbs().maxCoeff();
    for (double ridge = 1e-14; ldlt.info() != Eigen::Success || !ldlt.isPositive(); ridge *= 100.0) {
        if (ridge > 1e-2) return false;
        Eigen::MatrixXd h = hess;
        h.diagonal().array() += ridge * scale;
        ldlt.compute(h);
    }
    const Eigen::VectorXd d = ldlt.solve(grad);
    if (!d.allFinite()) return false;

    // Objective and worst column error at g'. Near the optimum Phi moves by
    // less than its rounding, so a step that halves the column error also counts.
    auto evaluate = [&](const std::vector<double>& gg, double& worst) {
        double v = 0.0;
        std::vector<double> cs(c, 0.0);
        for (std::size_t j = 0; j < c; ++j) v += beta * gg[j];
        for (std::size_t i = 0; i < n; ++i) {
            const double l = log_sum_exp(c, [&](std::size_t j) { return log_kernel(i, j) + gg[j]; });
            v -= alpha * l;
            for (std::size_t j = 0; j < c; ++j) cs[j] += std::exp(std::log(alpha) - l + log_kernel(i, j) + gg[j]);
        }
        worst = 0.0;
        for (double x : cs) worst = std::max(worst, std::abs(x - beta));
        return v;
    };
    double base = 0.0;
    for (std::size_t j = 0; j < c; ++j) base += beta * g[j];
    for (std::size_t i = 0; i < n; ++i) base -= alpha * lse[i];
    double base_err = 0.0;
    for (std::size_t j = 0; j < c; ++j) base_err = std::max(base_err, std::abs(col(static_cast<Eigen::Index>(j)) - beta));
    const double slope = grad.dot(d);
    if (!(slope > 0.0)) return false;
    std::vector<double> trial(g);
    for (double t = 1.0; t > 1e-12; t *= 0.5) {
        for (std::size_t j = 0; j + 1 < c; ++j) trial[j] = g[j] + t * d(static_cast<Eigen::Index>(j));
        double err = 0.0;
        const double v = evaluate(trial, err);
        if (v >= base + 1e-4 * t * slope || err < 0.5 * base_err) {
            g = trial;
            return true;
        }
    }
    return false;
}

}  // namespace

void TransportConfig::validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and > 0");
    if (!(tol > 0.0)) throw ConfigError("sinkhorn tol must be > 0");
    if (max_iter < 1) throw ConfigError("sinkhorn max_iter must be >= 1");
}

TransportPlan sinkhorn_plan(const Matrix& predictions, const TransportConfig& cfg) {
    cfg.validate();
    const std::size_t n = predictions.rows();
    const std::size_t c = predictions.cols();
    if (n == 0 || c == 0) throw ArgumentError("sinkhorn_plan: empty prediction matrix");

    Matrix log_kernel(n, c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double p = predictions(i, j);
            if (!std::isfinite(p) || p < 0.0) throw DataError("sinkhorn_plan: invalid prediction entry");
            log_kernel(i, j) = cfg.lambda * std::log(std::max(p, kPredictionFloor));
        }

    const double alpha = 1.0 / static_cast<double>(n);
    const double beta = 1.0 / static_cast<double>(c);
    const double log_alpha = std::log(alpha);
    const double log_beta = std::log(beta);

    TransportPlan out;
    out.row_marginal.assign(n, alpha);
    out.col_marginal.assign(c, beta);
    std::vector<double>& f = out.log_u;
    std::vector<double>& g = out.log_v;
    f.assign(n, 0.0);
    g.assign(c, 0.0);

    // After each column update the column marginals hold up to rounding, so
    // the row sums measure infeasibility. Row sums under the current scaling
    // are exp(f_i + lse_i), where lse_i is also what the next row update needs.
    std::vector<double> lse(n);
    auto row_lse = [&] {
        for (std::size_t i = 0; i < n; ++i)
            lse[i] = log_sum_exp(c, [&](std::size_t j) { return log_kernel(i, j) + g[j]; });
    };
    double residual = std::numeric_limits<double>::infinity();
    double window_start = residual;
    bool newton = false;
    std::size_t it = 0;
    while (true) {
        row_lse();
        if (it > 0) {
            residual = 0.0;
            if (newton) {
                // rows are exact after the f update; columns carry the error
                for (std::size_t j = 0; j < c; ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < n; ++i) s += std::exp(log_alpha - lse[i] + log_kernel(i, j) + g[j]);
                    residual = std::max(residual, std::abs(s - beta));
                }
            } else {
                for (std::size_t i = 0; i < n; ++i)
                    residual = std::max(residual, std::abs(std::exp(f[i] + lse[i]) - alpha));
            }
            if (residual <= cfg.tol || it == cfg.max_iter) break;
        }
        if (!newton && it % kStallWindow == 0) {
            newton = it > 0 && c > 1 && residual > kStallRatio * window_start;
            window_start = residual;
        }
        for (std::size_t i = 0; i < n; ++i) f[i] = log_alpha - lse[i];
        if (newton) {
            if (!newton_step(log_kernel, f, g, lse, alpha, beta)) newton = false;
            if (newton) {
                ++it;
                continue;
            }
        }
        for (std::size_t j = 0; j < c; ++j)
            g[j] = log_beta - log_sum_exp(n, [&](std::size_t i) { return log_kernel(i, j) + f[i]; });
        ++it;
    }
    if (newton)
        for (std::size_t i = 0; i < n; ++i) f[i] = log_alpha - lse[i];

    out.plan = Matrix(n, c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out.plan(i, j) = std::exp(f[i] + log_kernel(i, j) + g[j]);

    double col_res = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += out.plan(i, j);
        col_res = std::max(col_res, std::abs(s - beta));
    }
    out.residual = std::max(residual, col_res);
    out.iterations_used = it;
    out.converged = out.residual <= cfg.tol;
    return out;
}

double ot_objective(const Matrix& plan, const Matrix& predictions, double lambda) {
    if (plan.rows() != predictions.rows() || plan.cols() != predictions.cols())
        throw ArgumentError("ot_objective: plan and prediction shapes differ");
    if (!(lambda > 0.0)) throw ArgumentError("ot_objective: lambda must be > 0");
    const double prior = 1.0 / (static_cast<double>(plan.rows()) * static_cast<double>(plan.cols()));
    double linear = 0.0;
    double kl = 0.0;
    for (std::size_t i = 0; i < plan.rows(); ++i)
        for (std::size_t j = 0; j < plan.cols(); ++j) {
            const double q = plan(i, j);
            linear -= q * std::log(std::max(predictions(i, j), kPredictionFloor));
            if (q > 0.0) kl += q * std::log(q / prior);
        }
    return linear + kl / lambda;
}

std::vector<std::size_t> hard_assign(const TransportPlan& plan) { return row_argmax(plan.plan); }

DualAssignment dual_assign(const Matrix& infrared_under_visible_head, const Matrix& visible_under_infrared_head,
                           const TransportConfig& cfg) {
    DualAssignment out;
    // The two directions are independent solves.
    auto infrared = std::async(std::launch::async, [&] { return sinkhorn_plan(infrared_under_visible_head, cfg); });
    out.plan_visible = sinkhorn_plan(visible_under_infrared_head, cfg);
    out.plan_infrared = infrared.get();
    out.infrared_from_visible = hard_assign(out.plan_infrared);
    out.visible_from_infrared = hard_assign(out.plan_visible);
    return out;
}

}  // namespace cmla
