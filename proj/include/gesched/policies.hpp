// Threshold-policy representation, structure verification and extraction,
// the two reference baselines, and numeric checks of value-function shape.
#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "dp.hpp"
#include "errors.hpp"
#include "model.hpp"

namespace gesched {

// ---------------------------------------------------------------------------
// Structure verification
// ---------------------------------------------------------------------------

enum class ViolationKind { NonContiguousRegion, NonMonotoneAction };

inline const char* to_string(ViolationKind kind) {
    return kind == ViolationKind::NonContiguousRegion ? "non-contiguous" : "non-monotone";
}

struct StructureViolation {
    int q;
    std::size_t b_idx;  ///< grid index where the action sequence decreases
    int previous_action;
    int action;
    ViolationKind kind;
};

struct StructureReport {
    std::vector<StructureViolation> violations;
    int q_max = 0;

    bool pass() const { return violations.empty(); }

    /// Violations strictly below the truncation boundary.
    std::size_t interior_violations() const {
        std::size_t n = 0;
        for (const auto& v : violations) n += v.q < q_max;
        return n;
    }
    std::size_t boundary_violations() const { return violations.size() - interior_violations(); }
};

/// Checks that, for every q, actions read along the sorted belief grid form a
/// nondecreasing sequence. A decrease back to an action already used earlier
/// in the row splits that action's region; any other decrease breaks the
/// ordering of regions.
inline StructureReport verify_threshold_structure(const PolicyTable& policy) {
    StructureReport report;
    report.q_max = policy.q_max;
    for (int q = 0; q <= policy.q_max; ++q) {
        std::vector<bool> seen;
        for (std::size_t b = 0; b < policy.num_beliefs; ++b) {
            const int a = policy.at(q, b);
            if (b > 0) {
                const int prev = policy.at(q, b - 1);
                if (a < prev) {
                    const bool split = static_cast<std::size_t>(a) < seen.size() && seen[a];
                    report.violations.push_back({q, b, prev, a,
                                                 split ? ViolationKind::NonContiguousRegion
                                                       : ViolationKind::NonMonotoneAction});
                }
            }
            if (static_cast<std::size_t>(a) >= seen.size()) seen.resize(static_cast<std::size_t>(a) + 1, false);
            seen[static_cast<std::size_t>(a)] = true;
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Threshold extraction
// ---------------------------------------------------------------------------

/// Thresholds tau^(0..M_d+1)(q) with tau^(0) = 0 and tau^(M_d+1) = 1; belief b
/// at queue q maps to the largest j with b >= tau^(j). Each interior threshold
/// remembers the grid points bracketing it.
struct ThresholdPolicy {
    struct Threshold {
        double tau;
        double below; ///< largest grid belief with action < j, or -1 if none
        double above; ///< smallest grid belief with action >= j, or 2 if none
    };

    int max_tx = 0;
    std::vector<std::vector<Threshold>> rows; ///< rows[q][j], j = 0..M_d+1

    int q_max() const { return static_cast<int>(rows.size()) - 1; }
    double tau(int q, int j) const {
        return rows.at(static_cast<std::size_t>(q)).at(static_cast<std::size_t>(j)).tau;
    }

    /// Interval rule. Thresholds of empty upper regions sit at 1 and are never
    /// crossed.
    int action(int q, double b) const {
        q = std::clamp(q, 0, q_max());
        int u = 0;
        for (int j = 1; j <= max_tx; ++j) {
            const auto& t = rows[static_cast<std::size_t>(q)][static_cast<std::size_t>(j)];
            const bool empty_region = t.above > 1.0;
            if (!empty_region && b >= t.tau) u = j;
        }
        return u;
    }
};

inline ThresholdPolicy extract_thresholds(const PolicyTable& policy, const BeliefSpace& beliefs,
                                          int max_tx) {
    if (policy.num_beliefs != beliefs.size()) {
        throw ConfigError("policy table and belief space disagree in size");
    }
    if (!verify_threshold_structure(policy).pass()) {
        throw ConfigError("extract_thresholds: policy is not of threshold type");
    }
    ThresholdPolicy out;
    out.max_tx = max_tx;
    out.rows.resize(static_cast<std::size_t>(policy.q_max) + 1);
    for (int q = 0; q <= policy.q_max; ++q) {
        auto& row = out.rows[static_cast<std::size_t>(q)];
        row.push_back({0.0, -1.0, 0.0});
        for (int j = 1; j <= max_tx; ++j) {
            double below = -1.0;
            double above = 2.0;
            for (std::size_t b = 0; b < beliefs.size(); ++b) {
                const double v = beliefs.value(b);
                if (policy.at(q, b) < j) {
                    below = std::max(below, v);
                } else {
                    above = std::min(above, v);
                }
            }
            double tau;
            if (above > 1.0) {
                tau = 1.0;
            } else if (below < 0.0) {
                tau = 0.0;
            } else {
                tau = 0.5 * (below + above);
            }
            row.push_back({tau, below, above});
        }
        row.push_back({1.0, 1.0, 2.0});
    }
    return out;
}

/// Regenerates a table on the grid from thresholds.
inline PolicyTable policy_from_thresholds(const ThresholdPolicy& thresholds, const BeliefSpace& beliefs) {
    PolicyTable table{thresholds.q_max(), beliefs.size(),
                      std::vector<int>(static_cast<std::size_t>(thresholds.q_max() + 1) * beliefs.size())};
    for (int q = 0; q <= thresholds.q_max(); ++q) {
        for (std::size_t b = 0; b < beliefs.size(); ++b) {
            table.at(q, b) = thresholds.action(q, beliefs.value(b));
        }
    }
    return table;
}

inline void write_threshold_csv(std::ostream& out, const ThresholdPolicy& thresholds, const CsvMeta& meta) {
    CsvWriter csv(out, meta, {"q", "j", "tau"});
    for (int q = 0; q <= thresholds.q_max(); ++q) {
        for (int j = 0; j <= thresholds.max_tx + 1; ++j) {
            csv.cell(q).cell(j).cell(thresholds.tau(q, j));
            csv.end_row();
        }
    }
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Sends one packet every slot regardless of state. With `idle_when_empty`
/// the empty queue is left alone instead.
inline PolicyTable baseline_always_one(const SystemModel& model, bool idle_when_empty = false) {
    PolicyTable table = PolicyTable::constant(model, 1);
    if (idle_when_empty) {
        for (std::size_t b = 0; b < model.num_beliefs(); ++b) table.at(0, b) = 0;
    }
    return table;
}

/// Queue-only average-cost MDP that treats the channel as i.i.d. with
/// success probability mu1. Returns the optimal q -> u map.
inline std::vector<int> iid_queue_policy(const SystemModel& model, double tol = 1e-9,
                                         long max_iter = 100000) {
    const double mu1 = stationary_dist(model.channel()).mu1;
    const auto& arrivals = model.arrivals();
    FiniteMdp mdp;
    mdp.num_states = static_cast<std::size_t>(model.q_max()) + 1;
    mdp.num_actions = model.max_tx() + 1;
    mdp.row_begin.push_back(0);
    for (int q = 0; q <= model.q_max(); ++q) {
        for (int u = 0; u < mdp.num_actions; ++u) {
            mdp.stage.push_back(instantaneous_cost(q, u, model.cost()));
            for (int i = 0; i <= arrivals.max_arrivals(); ++i) {
                const double p = arrivals.prob(i);
                if (u == 0) {
                    mdp.next.push_back(static_cast<std::size_t>(queue_next(q, i, 0, model.q_max())));
                    mdp.prob.push_back(p);
                } else {
                    mdp.next.push_back(static_cast<std::size_t>(queue_next(q, i, u, model.q_max())));
                    mdp.prob.push_back(p * mu1);
                    mdp.next.push_back(static_cast<std::size_t>(queue_next(q, i, 0, model.q_max())));
                    mdp.prob.push_back(p * (1.0 - mu1));
                }
            }
            mdp.row_begin.push_back(mdp.next.size());
        }
    }
    return relative_value_iteration(mdp, 0, tol, max_iter).policy;
}

/// The i.i.d.-channel policy lifted to the full state space (constant in b).
inline PolicyTable baseline_iid_mdp(const SystemModel& model, double tol = 1e-9) {
    if (!model.unstable_allowed() && !stability_check(model).pass) {
        throw StabilityError("baseline_iid_mdp requires M_d * mu1 > E[A]");
    }
    const auto by_queue = iid_queue_policy(model, tol);
    PolicyTable table = PolicyTable::constant(model, 0);
    for (int q = 0; q <= model.q_max(); ++q) {
        for (std::size_t b = 0; b < model.num_beliefs(); ++b) {
            table.at(q, b) = by_queue[static_cast<std::size_t>(q)];
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// Value-function shape
// ---------------------------------------------------------------------------

struct ValuePropertyViolation {
    enum class Kind { Concavity, Monotonicity } kind;
    int q;
    std::size_t b_idx;
    double excess; ///< amount by which the inequality fails
};

struct ValuePropertyReport {
    std::vector<ValuePropertyViolation> violations;
    double worst_concavity_gap = 0.0;    ///< max of (chord - value), <= 0 when strictly concave
    double worst_monotonicity_gap = 0.0; ///< max of V(q,b) - V(q+1,b)

    bool concave() const {
        for (const auto& v : violations)
            if (v.kind == ValuePropertyViolation::Kind::Concavity) return false;
        return true;
    }
    bool monotone() const {
        for (const auto& v : violations)
            if (v.kind == ValuePropertyViolation::Kind::Monotonicity) return false;
        return true;
    }
    bool pass() const { return violations.empty(); }
};

/// (i) For each q, V(q, .) lies on or above every chord of consecutive grid
/// neighbours (discrete concavity, slack `concavity_slack`). (ii) For each
/// belief, V(., b) is nondecreasing in q (slack `monotone_slack`).
inline ValuePropertyReport check_value_properties(const ValueTable& V, const BeliefSpace& beliefs,
                                                  double concavity_slack = 1e-8,
                                                  double monotone_slack = 1e-10) {
    if (V.num_beliefs != beliefs.size()) {
        throw ConfigError("value table and belief space disagree in size");
    }
    ValuePropertyReport report;
    report.worst_concavity_gap = -std::numeric_limits<double>::infinity();
    report.worst_monotonicity_gap = -std::numeric_limits<double>::infinity();
    for (int q = 0; q <= V.q_max; ++q) {
        for (std::size_t b = 1; b + 1 < beliefs.size(); ++b) {
            const double lo = beliefs.value(b - 1);
            const double mid = beliefs.value(b);
            const double hi = beliefs.value(b + 1);
            const double w = (mid - lo) / (hi - lo);
            const double chord = (1.0 - w) * V.at(q, b - 1) + w * V.at(q, b + 1);
            const double gap = chord - V.at(q, b);
            report.worst_concavity_gap = std::max(report.worst_concavity_gap, gap);
            if (gap > concavity_slack) {
                report.violations.push_back({ValuePropertyViolation::Kind::Concavity, q, b, gap});
            }
        }
    }
    for (std::size_t b = 0; b < beliefs.size(); ++b) {
        for (int q = 0; q < V.q_max; ++q) {
            const double gap = V.at(q, b) - V.at(q + 1, b);
            report.worst_monotonicity_gap = std::max(report.worst_monotonicity_gap, gap);
            if (gap > monotone_slack) {
                report.violations.push_back({ValuePropertyViolation::Kind::Monotonicity, q, b, gap});
            }
        }
    }
    return report;
}

} // namespace gesched
