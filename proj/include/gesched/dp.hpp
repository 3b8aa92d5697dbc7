// Exact dynamic programming on the truncated state space: discounted value
// iteration, relative value iteration for the average-cost problem, and
// exact evaluation of fixed stationary policies.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <sstream>
#include <vector>

#include "csv.hpp"
#include "errors.hpp"
#include "model.hpp"

namespace gesched {

enum class ValueMode { Discounted, Relative };

/// Dense array over (q, belief-index), row-major in q.
struct ValueTable {
    int q_max = 0;
    std::size_t num_beliefs = 0;
    ValueMode mode = ValueMode::Discounted;
    double discount = 1.0;
    std::vector<double> values;

    static ValueTable zeros(const SystemModel& model, ValueMode mode, double discount = 1.0) {
        return {model.q_max(), model.num_beliefs(), mode, discount,
                std::vector<double>(model.num_states(), 0.0)};
    }

    double& at(int q, std::size_t b) {
        return values[static_cast<std::size_t>(q) * num_beliefs + b];
    }
    double at(int q, std::size_t b) const {
        return values[static_cast<std::size_t>(q) * num_beliefs + b];
    }
    double operator()(const State& s) const { return at(s.q, s.b_idx); }
};

/// Stationary deterministic policy over (q, belief-index).
struct PolicyTable {
    int q_max = 0;
    std::size_t num_beliefs = 0;
    std::vector<int> actions;

    static PolicyTable constant(const SystemModel& model, int action) {
        return {model.q_max(), model.num_beliefs(), std::vector<int>(model.num_states(), action)};
    }

    int& at(int q, std::size_t b) { return actions[static_cast<std::size_t>(q) * num_beliefs + b]; }
    int at(int q, std::size_t b) const {
        return actions[static_cast<std::size_t>(q) * num_beliefs + b];
    }
    int operator()(const State& s) const { return at(s.q, s.b_idx); }

    friend bool operator==(const PolicyTable&, const PolicyTable&) = default;
};

namespace detail {

// Two actions whose values differ by less than this (relative) are a tie;
// the smaller action wins.
constexpr double kTieTolerance = 1e-12;

inline bool strictly_better(double candidate, double incumbent, bool minimize) {
    const double slack = kTieTolerance * std::max(1.0, std::abs(incumbent));
    return minimize ? candidate < incumbent - slack : candidate > incumbent + slack;
}

inline double span(const std::vector<double>& a, const std::vector<double>& b) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        lo = std::min(lo, d);
        hi = std::max(hi, d);
    }
    return hi - lo;
}

inline double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace detail

/// Q-value of action `u` at `state` given the value estimate `V`:
///   u = 0:  q + beta sum_i p_i V(Q+(q,i,0), T(b))   (V interpolated off-grid)
///   u >= 1: q + kappa c(u) + beta sum_i p_i [b V(Q+(q,i,u), p11) + (1-b) V(Q+(q,i,0), p01)]
/// With beta = 1 this is the relative-value operator of the ACOE.
inline double discounted_backup(const SystemModel& model, const ValueTable& V, const State& state,
                                int u, double beta) {
    const auto& arrivals = model.arrivals();
    const auto& beliefs = model.beliefs();
    const int q = state.q;
    const int q_max = model.q_max();
    double future = 0.0;
    if (u == 0) {
        const IdleStep& step = beliefs.idle_successor(state.b_idx);
        const double w = step.upper_weight;
        for (int i = 0; i <= arrivals.max_arrivals(); ++i) {
            const int q_next = queue_next(q, i, 0, q_max);
            future += arrivals.prob(i) *
                      ((1.0 - w) * V.at(q_next, step.lower) + w * V.at(q_next, step.upper));
        }
    } else {
        const double b = beliefs.value(state.b_idx);
        const std::size_t good = beliefs.index_p11();
        const std::size_t bad = beliefs.index_p01();
        for (int i = 0; i <= arrivals.max_arrivals(); ++i) {
            future += arrivals.prob(i) * (b * V.at(queue_next(q, i, u, q_max), good) +
                                          (1.0 - b) * V.at(queue_next(q, i, 0, q_max), bad));
        }
    }
    return instantaneous_cost(q, u, model.cost()) + beta * future;
}

struct ValueIterationResult {
    ValueTable values;
    PolicyTable policy;
    long iterations = 0;
    double residual = 0.0;
};

namespace detail {

inline PolicyTable greedy_policy(const SystemModel& model, const ValueTable& V, double beta) {
    PolicyTable policy = PolicyTable::constant(model, 0);
    for (int q = 0; q <= model.q_max(); ++q) {
        for (std::size_t b = 0; b < model.num_beliefs(); ++b) {
            const State s{q, b};
            double best = discounted_backup(model, V, s, 0, beta);
            int best_u = 0;
            for (int u = 1; u <= model.max_tx(); ++u) {
                const double v = discounted_backup(model, V, s, u, beta);
                if (strictly_better(v, best, true)) {
                    best = v;
                    best_u = u;
                }
            }
            policy.at(q, b) = best_u;
        }
    }
    return policy;
}

} // namespace detail

/// Discounted value iteration from J_0 = 0 until the sup-norm change drops
/// to `tol`. Throws ConvergenceError after `max_iter` sweeps.
inline ValueIterationResult value_iteration(const SystemModel& model, double beta, double tol = 1e-9,
                                            long max_iter = 100000) {
    if (!(beta > 0.0 && beta < 1.0)) {
        throw ConfigError("discount factor must lie in (0,1)");
    }
    if (!(tol > 0.0)) {
        throw ConfigError("tolerance must be > 0");
    }
    ValueTable current = ValueTable::zeros(model, ValueMode::Discounted, beta);
    ValueTable next = current;
    double residual = std::numeric_limits<double>::infinity();
    long it = 0;
    while (it < max_iter) {
        ++it;
        for (int q = 0; q <= model.q_max(); ++q) {
            for (std::size_t b = 0; b < model.num_beliefs(); ++b) {
                const State s{q, b};
                double best = discounted_backup(model, current, s, 0, beta);
                for (int u = 1; u <= model.max_tx(); ++u) {
                    best = std::min(best, discounted_backup(model, current, s, u, beta));
                }
                next.at(q, b) = best;
            }
        }
        residual = detail::sup_diff(next.values, current.values);
        std::swap(current, next);
        if (residual <= tol) {
            return {current, detail::greedy_policy(model, current, beta), it, residual};
        }
    }
    throw ConvergenceError("value iteration did not converge", it, residual);
}

// ---------------------------------------------------------------------------
// Finite MDP form used by relative value iteration and policy evaluation.
// ---------------------------------------------------------------------------

enum class Objective { MinimizeCost, MaximizeReward };

/// Explicit sparse finite MDP. Row (s, u) holds its stage value (cost or
/// reward) and successor list.
struct FiniteMdp {
    std::size_t num_states = 0;
    int num_actions = 0;
    Objective objective = Objective::MinimizeCost;
    std::vector<double> stage;          // [s * num_actions + u]
    std::vector<std::size_t> row_begin; // size num_states * num_actions + 1
    std::vector<std::size_t> next;
    std::vector<double> prob;

    std::size_t row(std::size_t s, int u) const {
        return s * static_cast<std::size_t>(num_actions) + static_cast<std::size_t>(u);
    }

    double expected(std::size_t s, int u, const std::vector<double>& h) const {
        const std::size_t r = row(s, u);
        double acc = 0.0;
        for (std::size_t k = row_begin[r]; k < row_begin[r + 1]; ++k) acc += prob[k] * h[next[k]];
        return stage[r] + acc;
    }
};

/// Assembles the finite MDP of `model` from transition_law.
inline FiniteMdp build_mdp(const SystemModel& model, Objective objective = Objective::MinimizeCost) {
    FiniteMdp mdp;
    mdp.num_states = model.num_states();
    mdp.num_actions = model.max_tx() + 1;
    mdp.objective = objective;
    mdp.row_begin.push_back(0);
    for (std::size_t s = 0; s < mdp.num_states; ++s) {
        const State st = model.unflat(s);
        for (int u = 0; u < mdp.num_actions; ++u) {
            mdp.stage.push_back(objective == Objective::MinimizeCost ? instantaneous_cost(st.q, u, model.cost())
                                                                     : reward(st.q, u, model));
            for (const auto& t : transition_law(st, u, model)) {
                mdp.next.push_back(model.flat(t.next));
                mdp.prob.push_back(t.prob);
            }
            mdp.row_begin.push_back(mdp.next.size());
        }
    }
    return mdp;
}

struct RviOutput {
    std::vector<double> h;
    double gain = 0.0; ///< average cost (or reward, when maximizing)
    std::vector<int> policy;
    long iterations = 0;
    double residual = 0.0; ///< ACOE residual of the returned (h, gain)
};

namespace detail {

// Shared RVI loop. With `fixed` non-null the min/max is replaced by the
// given action per state (policy evaluation).
inline RviOutput rvi_core(const FiniteMdp& mdp, std::size_t ref, double tol, long max_iter,
                          const std::vector<int>* fixed) {
    if (!(tol > 0.0)) throw ConfigError("tolerance must be > 0");
    if (ref >= mdp.num_states) throw ConfigError("reference state out of range");
    const bool minimize = mdp.objective == Objective::MinimizeCost;
    const std::size_t n = mdp.num_states;

    auto backup = [&](const std::vector<double>& h, std::vector<double>& out, std::vector<int>* argbest) {
        for (std::size_t s = 0; s < n; ++s) {
            if (fixed) {
                out[s] = mdp.expected(s, (*fixed)[s], h);
                if (argbest) (*argbest)[s] = (*fixed)[s];
                continue;
            }
            double best = mdp.expected(s, 0, h);
            int best_u = 0;
            for (int u = 1; u < mdp.num_actions; ++u) {
                const double v = mdp.expected(s, u, h);
                if (strictly_better(v, best, minimize)) {
                    best = v;
                    best_u = u;
                }
            }
            out[s] = best;
            if (argbest) (*argbest)[s] = best_u;
        }
    };

    std::vector<double> h(n, 0.0), th(n, 0.0), h_next(n, 0.0);
    double gain = 0.0;
    double change = std::numeric_limits<double>::infinity();
    long it = 0;
    while (it < max_iter) {
        ++it;
        backup(h, th, nullptr);
        gain = th[ref];
        for (std::size_t s = 0; s < n; ++s) h_next[s] = th[s] - gain;
        change = span(h_next, h);
        std::swap(h, h_next);
        if (!std::isfinite(change)) {
            throw NumericError("relative value iteration produced non-finite values");
        }
        if (change <= tol) {
            RviOutput out;
            out.policy.assign(n, 0);
            backup(h, th, &out.policy);
            double residual = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                residual = std::max(residual, std::abs(th[s] - h[s] - gain));
            }
            out.h = std::move(h);
            out.gain = gain;
            out.iterations = it;
            out.residual = residual;
            return out;
        }
    }
    throw ConvergenceError("relative value iteration did not converge", it, change);
}

} // namespace detail

inline RviOutput relative_value_iteration(const FiniteMdp& mdp, std::size_t ref, double tol = 1e-9,
                                          long max_iter = 100000) {
    return detail::rvi_core(mdp, ref, tol, max_iter, nullptr);
}

struct RviResult {
    ValueTable h;
    double zeta = 0.0; ///< optimal average cost
    PolicyTable policy;
    long iterations = 0;
    double residual = 0.0;
};

/// Default reference state: empty queue, belief p01.
inline State default_ref_state(const SystemModel& model) {
    return {0, model.beliefs().index_p01()};
}

/// Average-cost relative value iteration with h(ref) = 0. Requires the
/// stability gate to pass.
inline RviResult rvi(const SystemModel& model, const State& ref, double tol = 1e-9,
                     long max_iter = 100000, Objective objective = Objective::MinimizeCost) {
    if (!model.unstable_allowed() && !stability_check(model).pass) {
        throw StabilityError("rvi requires M_d * mu1 > E[A]");
    }
    if (ref.q < 0 || ref.q > model.q_max() || ref.b_idx >= model.num_beliefs()) {
        throw ConfigError("reference state outside the state space");
    }
    const FiniteMdp mdp = build_mdp(model, objective);
    RviOutput out = relative_value_iteration(mdp, model.flat(ref), tol, max_iter);
    RviResult result;
    result.h = ValueTable::zeros(model, ValueMode::Relative);
    result.h.values = std::move(out.h);
    result.zeta = out.gain;
    result.policy = {model.q_max(), model.num_beliefs(), std::move(out.policy)};
    result.iterations = out.iterations;
    result.residual = out.residual;
    return result;
}

inline RviResult rvi(const SystemModel& model, double tol = 1e-9, long max_iter = 100000) {
    return rvi(model, default_ref_state(model), tol, max_iter);
}

/// Long-run average cost of a stationary deterministic policy, by RVI with
/// the minimization replaced by the policy's action.
inline double evaluate_policy_exact(const SystemModel& model, const PolicyTable& policy,
                                    double tol = 1e-9, long max_iter = 200000) {
    if (policy.actions.size() != model.num_states()) {
        throw ConfigError("policy table does not match the model's state space");
    }
    for (int a : policy.actions) {
        if (a < 0 || a > model.max_tx()) throw ConfigError("policy action outside {0..M_d}");
    }
    const FiniteMdp mdp = build_mdp(model);
    return detail::rvi_core(mdp, model.flat(default_ref_state(model)), tol, max_iter, &policy.actions)
        .gain;
}

// ---------------------------------------------------------------------------
// CSV output: columns q, belief, value|action.
// ---------------------------------------------------------------------------

inline void write_value_csv(std::ostream& out, const SystemModel& model, const ValueTable& V,
                            const CsvMeta& meta) {
    CsvWriter csv(out, meta, {"q", "belief", "value"});
    for (int q = 0; q <= model.q_max(); ++q) {
        for (std::size_t b = 0; b < model.num_beliefs(); ++b) {
            csv.cell(q).cell(model.beliefs().value(b)).cell(V.at(q, b));
            csv.end_row();
        }
    }
}

inline void write_policy_csv(std::ostream& out, const SystemModel& model, const PolicyTable& policy,
                             const CsvMeta& meta) {
    CsvWriter csv(out, meta, {"q", "belief", "action"});
    for (int q = 0; q <= model.q_max(); ++q) {
        for (std::size_t b = 0; b < model.num_beliefs(); ++b) {
            csv.cell(q).cell(model.beliefs().value(b)).cell(policy.at(q, b));
            csv.end_row();
        }
    }
}

} // namespace gesched
