#pragma once

#include <cstddef>
#include <vector>

#include "cmla/matrix.hpp"

namespace cmla {

struct TransportConfig {
    double lambda = 25.0;
    double tol = 1e-9;
    std::size_t max_iter = 1000;

    void validate() const;  // throws ConfigError
};

/// Entropic OT plan with uniform marginals alpha = 1/N, beta = 1/C.
struct TransportPlan {
    Matrix plan;                       // N x C
    std::vector<double> row_marginal;  // alpha
    std::vector<double> col_marginal;  // beta
    std::size_t iterations_used = 0;
    double residual = 0.0;  // L-inf marginal error of `plan`
    bool converged = false;

    // Log scaling vectors: plan_ij = exp(log_u_i + lambda * log P_ij + log_v_j).
    std::vector<double> log_u;
    std::vector<double> log_v;
};

/// Floor applied to predictions before taking logs.
inline constexpr double kPredictionFloor = 1e-30;

/// Solves min <Q, -log P> + (1/lambda) KL(Q || alpha beta^T) over plans with
/// uniform marginals by log-domain Sinkhorn-Knopp scaling. Failing to reach
/// `tol` within max_iter is reported through `converged`, not thrown.
TransportPlan sinkhorn_plan(const Matrix& predictions, const TransportConfig& cfg);

/// <Q, -log P> + (1/lambda) * sum Q log(Q / (alpha_i beta_j)), 0 log 0 := 0.
double ot_objective(const Matrix& plan, const Matrix& predictions, double lambda);

/// Row-wise argmax of the plan, ties to the lowest column.
std::vector<std::size_t> hard_assign(const TransportPlan& plan);

struct DualAssignment {
    std::vector<std::size_t> infrared_from_visible;  // labels in the visible cluster space
    std::vector<std::size_t> visible_from_infrared;  // labels in the infrared cluster space
    TransportPlan plan_infrared;
    TransportPlan plan_visible;
};

/// Runs the transport assignment in both cross-modality directions.
/// `infrared_under_visible_head` is N_r x C_v, `visible_under_infrared_head` N_v x C_r.
DualAssignment dual_assign(const Matrix& infrared_under_visible_head, const Matrix& visible_under_infrared_head,
                           const TransportConfig& cfg);

}  // namespace cmla
