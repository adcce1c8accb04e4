#pragma once

// Reference implementations used only by the tests. They share no code with
// the library beyond the Matrix container.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "cmla/matrix.hpp"

namespace oracle {

using cmla::Matrix;

// Entropic OT objective written out directly.
inline double ot_value(const Matrix& q, const Matrix& p, double lambda) {
    const double ab = 1.0 / static_cast<double>(q.rows() * q.cols());
    double f = 0.0;
    for (std::size_t i = 0; i < q.rows(); ++i)
        for (std::size_t j = 0; j < q.cols(); ++j) {
            const double v = q(i, j);
            f -= v * std::log(p(i, j));
            if (v > 0.0) f += v * std::log(v / ab) / lambda;
        }
    return f;
}

// Feasible 2x2 plans with uniform marginals are [[q, 1/2-q], [1/2-q, q]];
// scan q over [0, 1/2].
inline Matrix grid_plan_2x2(const Matrix& p, double lambda, double step = 1e-6) {
    double best_q = 0.0, best = std::numeric_limits<double>::infinity();
    const auto n = static_cast<long>(std::llround(0.5 / step));
    for (long s = 0; s <= n; ++s) {
        const double q = static_cast<double>(s) * step;
        const double f = ot_value(Matrix{{q, 0.5 - q}, {0.5 - q, q}}, p, lambda);
        if (f < best) best = f, best_q = q;
    }
    return Matrix{{best_q, 0.5 - best_q}, {0.5 - best_q, best_q}};
}

// Permutation sigma minimizing sum_i -log P(i, sigma(i)).
inline std::vector<std::size_t> best_permutation(const Matrix& p) {
    std::vector<std::size_t> sigma(p.rows());
    std::iota(sigma.begin(), sigma.end(), 0);
    std::vector<std::size_t> best = sigma;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
        double cost = 0.0;
        for (std::size_t i = 0; i < p.rows(); ++i) cost -= std::log(p(i, sigma[i]));
        if (cost < best_cost) best_cost = cost, best = sigma;
    } while (std::next_permutation(sigma.begin(), sigma.end()));
    return best;
}

// Plain (direct domain) alternating row/column normalization of a positive
// matrix onto uniform marginals.
inline Matrix project_uniform(Matrix m, double tol = 1e-14, int max_iter = 100000) {
    const double a = 1.0 / static_cast<double>(m.rows());
    const double b = 1.0 / static_cast<double>(m.cols());
    for (int it = 0; it < max_iter; ++it) {
        for (std::size_t i = 0; i < m.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j);
            for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) *= a / s;
        }
        double err = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < m.rows(); ++i) s += m(i, j);
            err = std::max(err, std::abs(s - b));
            for (std::size_t i = 0; i < m.rows(); ++i) m(i, j) *= b / s;
        }
        if (err < tol) break;
    }
    return m;
}

struct Metrics {
    double map = 0.0, minp = 0.0;
    std::vector<double> cmc;
    std::size_t valid = 0;
};

// Retrieval metrics from raw distances: the rank of a gallery item is one
// plus the number of items strictly closer or equally close with a lower index.
inline Metrics brute_metrics(const Matrix& dist, const std::vector<std::size_t>& qid,
                             const std::vector<std::size_t>& gid) {
    const std::size_t ng = dist.cols();
    Metrics out;
    out.cmc.assign(ng, 0.0);
    for (std::size_t a = 0; a < dist.rows(); ++a) {
        std::vector<std::size_t> ranks;
        for (std::size_t j = 0; j < ng; ++j) {
            if (gid[j] != qid[a]) continue;
            std::size_t r = 1;
            for (std::size_t o = 0; o < ng; ++o)
                if (dist(a, o) < dist(a, j) || (dist(a, o) == dist(a, j) && o < j)) ++r;
            ranks.push_back(r);
        }
        if (ranks.empty()) continue;
        std::sort(ranks.begin(), ranks.end());
        double ap = 0.0;
        for (std::size_t m = 0; m < ranks.size(); ++m) ap += static_cast<double>(m + 1) / static_cast<double>(ranks[m]);
        out.map += ap / static_cast<double>(ranks.size());
        out.minp += static_cast<double>(ranks.size()) / static_cast<double>(ranks.back());
        for (std::size_t r = ranks.front(); r <= ng; ++r) out.cmc[r - 1] += 1.0;
        ++out.valid;
    }
    if (out.valid) {
        const double n = static_cast<double>(out.valid);
        out.map /= n;
        out.minp /= n;
        for (double& c : out.cmc) c /= n;
    }
    return out;
}

inline double choose2(double n) { return n * (n - 1.0) / 2.0; }

inline double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::map<std::pair<std::size_t, std::size_t>, double> table;
    std::map<std::size_t, double> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        table[{a[i], b[i]}] += 1.0;
        ra[a[i]] += 1.0;
        rb[b[i]] += 1.0;
    }
    double index = 0.0, sa = 0.0, sb = 0.0;
    for (const auto& [k, v] : table) index += choose2(v);
    for (const auto& [k, v] : ra) sa += choose2(v);
    for (const auto& [k, v] : rb) sb += choose2(v);
    const double expected = sa * sb / choose2(static_cast<double>(a.size()));
    const double maximum = 0.5 * (sa + sb);
    if (maximum == expected) return 1.0;
    return (index - expected) / (maximum - expected);
}

// Best 2-means split of scalar points by enumerating every bipartition.
inline std::pair<double, double> best_two_means(const std::vector<double>& x) {
    const std::size_t n = x.size();
    double best = std::numeric_limits<double>::infinity();
    std::pair<double, double> centers;
    for (std::size_t mask = 1; mask + 1 < (std::size_t{1} << n); ++mask) {
        double s[2] = {0, 0}, c[2] = {0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            const int g = (mask >> i) & 1;
            s[g] += x[i];
            c[g] += 1;
        }
        const double m0 = s[0] / c[0], m1 = s[1] / c[1];
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double m = ((mask >> i) & 1) ? m1 : m0;
            sse += (x[i] - m) * (x[i] - m);
        }
        if (sse < best) best = sse, centers = {std::min(m0, m1), std::max(m0, m1)};
    }
    return centers;
}

inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
    return s;
}

// Central differences of f at x, one coordinate at a time.
template <class F>
Matrix numeric_gradient(F&& f, Matrix x, double h = 1e-6) {
    Matrix g(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x.values()[i];
        x.values()[i] = keep + h;
        const double up = f(x);
        x.values()[i] = keep - h;
        const double down = f(x);
        x.values()[i] = keep;
        g.values()[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

inline Matrix random_simplex_rows(std::size_t n, std::size_t c, std::mt19937_64& rng, double spread = 3.0) {
    std::uniform_real_distribution<double> u(-spread, spread);
    Matrix m(n, c);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += (m(i, j) = std::exp(u(rng)));
        for (std::size_t j = 0; j < c; ++j) m(i, j) /= s;
    }
    return m;
}

}  // namespace oracle
