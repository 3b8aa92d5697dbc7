// Reference computations used by the test suites. They are written against
// the model primitives directly and share no code with the solvers.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "gesched/model.hpp"

namespace oracle {

/// Finite-horizon backward induction: J_0 = 0, J_{n+1} = min_u [cost +
/// beta E J_n], H stages. Returns J_H indexed [q * |B| + b].
inline std::vector<double> finite_horizon_values(const gesched::SystemModel& m, double beta, int horizon) {
    const int qmax = m.q_max();
    const std::size_t nb = m.num_beliefs();
    const auto& beliefs = m.beliefs();
    const auto& arr = m.arrivals();
    std::vector<double> J(static_cast<std::size_t>(qmax + 1) * nb, 0.0), next(J.size());
    auto at = [&](const std::vector<double>& v, int q, std::size_t b) {
        return v[static_cast<std::size_t>(q) * nb + b];
    };
    for (int n = 0; n < horizon; ++n) {
        for (int q = 0; q <= qmax; ++q) {
            for (std::size_t b = 0; b < nb; ++b) {
                double best = std::numeric_limits<double>::infinity();
                for (int u = 0; u <= m.max_tx(); ++u) {
                    double future = 0.0;
                    for (int a = 0; a <= arr.max_arrivals(); ++a) {
                        const double p = arr.prob(a);
                        if (u == 0) {
                            const int q2 = std::min(qmax, q + a);
                            const auto& step = beliefs.idle_successor(b);
                            future += p * ((1.0 - step.upper_weight) * at(J, q2, step.lower) +
                                           step.upper_weight * at(J, q2, step.upper));
                        } else {
                            const double bv = beliefs.value(b);
                            const int q_ok = std::min(qmax, std::max(0, q - u) + a);
                            const int q_fail = std::min(qmax, q + a);
                            future += p * (bv * at(J, q_ok, beliefs.index_p11()) +
                                           (1.0 - bv) * at(J, q_fail, beliefs.index_p01()));
                        }
                    }
                    const double cost = q + m.cost().kappa() * m.cost().c(u);
                    best = std::min(best, cost + beta * future);
                }
                next[static_cast<std::size_t>(q) * nb + b] = best;
            }
        }
        std::swap(J, next);
    }
    return J;
}

/// Solves pi P = pi, sum pi = 1 by Gaussian elimination with partial pivoting.
inline std::vector<double> stationary(const std::vector<std::vector<double>>& P) {
    const std::size_t n = P.size();
    // Rows: (P^T - I) pi = 0 with the last equation replaced by sum = 1.
    std::vector<std::vector<double>> A(n, std::vector<double>(n + 1, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) A[i][j] = P[j][i] - (i == j ? 1.0 : 0.0);
    }
    for (std::size_t j = 0; j < n; ++j) A[n - 1][j] = 1.0;
    A[n - 1][n] = 1.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
        std::swap(A[c], A[piv]);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c || A[r][c] == 0.0) continue;
            const double f = A[r][c] / A[c][c];
            for (std::size_t k = c; k <= n; ++k) A[r][k] -= f * A[c][k];
        }
    }
    std::vector<double> pi(n);
    for (std::size_t i = 0; i < n; ++i) pi[i] = A[i][n] / A[i][i];
    return pi;
}

/// Exhaustive search over all queue-only policies u: {0..Q_max} -> {0,1} for
/// a channel that is good with probability `success` in every slot. Returns
/// the minimal long-run average cost.
inline double best_queue_policy_cost(const gesched::SystemModel& m, double success) {
    const int qmax = m.q_max();
    const auto n = static_cast<std::size_t>(qmax + 1);
    const auto& arr = m.arrivals();
    double best = std::numeric_limits<double>::infinity();
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        std::vector<std::vector<double>> P(n, std::vector<double>(n, 0.0));
        for (int q = 0; q <= qmax; ++q) {
            const int u = (mask >> q) & 1u;
            for (int a = 0; a <= arr.max_arrivals(); ++a) {
                const double p = arr.prob(a);
                const int q_fail = std::min(qmax, q + a);
                if (u == 0) {
                    P[static_cast<std::size_t>(q)][static_cast<std::size_t>(q_fail)] += p;
                } else {
                    const int q_ok = std::min(qmax, std::max(0, q - 1) + a);
                    P[static_cast<std::size_t>(q)][static_cast<std::size_t>(q_ok)] += p * success;
                    P[static_cast<std::size_t>(q)][static_cast<std::size_t>(q_fail)] += p * (1.0 - success);
                }
            }
        }
        const auto pi = stationary(P);
        double cost = 0.0;
        for (int q = 0; q <= qmax; ++q) {
            const int u = (mask >> q) & 1u;
            cost += pi[static_cast<std::size_t>(q)] * (q + m.cost().kappa() * m.cost().c(u));
        }
        best = std::min(best, cost);
    }
    return best;
}

} // namespace oracle
