// Queue, arrivals, costs and the one-step transition law on the truncated
// (queue, belief-index) state space. Solvers and the simulator share this.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "channel.hpp"
#include "errors.hpp"

namespace gesched {

/// i.i.d. per-slot arrival distribution on {0, ..., M_a}.
class ArrivalDist {
public:
    explicit ArrivalDist(std::vector<double> probs) : probs_(std::move(probs)) {
        if (probs_.empty()) {
            throw ConfigError("arrival distribution is empty");
        }
        double total = 0.0;
        for (double p : probs_) {
            if (!(p >= 0.0) || !std::isfinite(p)) {
                throw ConfigError("arrival probabilities must be finite and >= 0");
            }
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-12) {
            std::ostringstream msg;
            msg.precision(17);
            msg << "arrival probabilities sum to " << total << ", expected 1";
            throw ConfigError(msg.str());
        }
    }

    /// Bernoulli arrivals: one packet with probability p1.
    static ArrivalDist bernoulli(double p1) { return ArrivalDist({1.0 - p1, p1}); }

    int max_arrivals() const noexcept { return static_cast<int>(probs_.size()) - 1; }
    double prob(int i) const { return probs_.at(static_cast<std::size_t>(i)); }
    const std::vector<double>& probs() const noexcept { return probs_; }

    double mean() const {
        double m = 0.0;
        for (std::size_t i = 0; i < probs_.size(); ++i) m += static_cast<double>(i) * probs_[i];
        return m;
    }

    /// Inverse-CDF draw from one uniform.
    int sample(double uniform) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < probs_.size(); ++i) {
            acc += probs_[i];
            if (uniform < acc) return static_cast<int>(i);
        }
        // Round-off tail: last outcome with positive mass.
        for (std::size_t i = probs_.size(); i-- > 0;) {
            if (probs_[i] > 0.0) return static_cast<int>(i);
        }
        return 0;
    }

private:
    std::vector<double> probs_;
};

/// Weight kappa and per-action transmission cost table c(0..M_d).
class CostModel {
public:
    CostModel(double kappa, std::vector<double> table) : kappa_(kappa), table_(std::move(table)) {
        if (!(kappa_ >= 0.0) || !std::isfinite(kappa_)) {
            throw ConfigError("kappa must be finite and >= 0");
        }
        if (table_.empty() || table_.front() != 0.0) {
            throw ConfigError("transmission cost table must start with c(0) = 0");
        }
        for (std::size_t u = 1; u < table_.size(); ++u) {
            if (!(table_[u] > table_[u - 1]) || !std::isfinite(table_[u])) {
                throw ConfigError("transmission cost must be strictly increasing in u");
            }
        }
    }

    /// c(u) = exp(u) - 1 for u = 0..max_tx.
    static CostModel exponential(double kappa, int max_tx) {
        std::vector<double> table(static_cast<std::size_t>(max_tx) + 1);
        for (int u = 0; u <= max_tx; ++u) table[static_cast<std::size_t>(u)] = std::expm1(u);
        return CostModel(kappa, std::move(table));
    }

    double kappa() const noexcept { return kappa_; }
    int max_tx() const noexcept { return static_cast<int>(table_.size()) - 1; }
    double c(int u) const { return table_.at(static_cast<std::size_t>(u)); }
    const std::vector<double>& table() const noexcept { return table_; }

private:
    double kappa_;
    std::vector<double> table_;
};

/// Min(Q_max, max(0, q - d) + a): delivered packets leave before arrivals
/// join; overflow beyond Q_max is dropped.
constexpr int queue_next(int q, int a, int d, int q_max) {
    return std::min(q_max, std::max(0, q - d) + a);
}

inline double instantaneous_cost(int q, int u, const CostModel& cost) {
    return static_cast<double>(q) + cost.kappa() * cost.c(u);
}

struct State {
    int q = 0;
    std::size_t b_idx = 0;

    friend bool operator==(const State&, const State&) = default;
};

struct Transition {
    State next;
    double prob;
};

struct StabilityReport {
    double margin; ///< M_d * mu1 - E[A]
    bool pass;
};

class SystemModel;
StabilityReport stability_check(const SystemModel& model);

/// The full scheduling model on the truncated state space
/// {0..Q_max} x BeliefSpace.
class SystemModel {
public:
    SystemModel(ChannelParams channel, ArrivalDist arrivals, CostModel cost, int q_max,
                int belief_depth, double b0, bool allow_unstable = false)
        : channel_(channel),
          arrivals_(std::move(arrivals)),
          cost_(std::move(cost)),
          q_max_(q_max),
          beliefs_(channel, b0, belief_depth),
          allow_unstable_(allow_unstable) {
        if (cost_.max_tx() < 1) {
            throw ConfigError("M_d must be >= 1");
        }
        if (q_max_ < 1) {
            throw ConfigError("Q_max must be >= 1");
        }
        reward_offset_ = static_cast<double>(q_max_) + cost_.kappa() * cost_.c(cost_.max_tx());
        if (!allow_unstable) {
            const auto report = stability_check(*this);
            if (!report.pass) {
                std::ostringstream msg;
                msg.precision(17);
                msg << "stability assumption M_d * mu1 > E[A] violated (margin " << report.margin
                    << "); pass --allow-unstable to override";
                throw StabilityError(msg.str());
            }
        }
    }

    const ChannelParams& channel() const noexcept { return channel_; }
    const ArrivalDist& arrivals() const noexcept { return arrivals_; }
    const CostModel& cost() const noexcept { return cost_; }
    const BeliefSpace& beliefs() const noexcept { return beliefs_; }
    int max_tx() const noexcept { return cost_.max_tx(); }
    int max_arrivals() const noexcept { return arrivals_.max_arrivals(); }
    int q_max() const noexcept { return q_max_; }
    double reward_offset() const noexcept { return reward_offset_; }
    /// True when built with the stability override; solvers then skip the gate.
    bool unstable_allowed() const noexcept { return allow_unstable_; }

    std::size_t num_beliefs() const noexcept { return beliefs_.size(); }
    std::size_t num_states() const noexcept {
        return static_cast<std::size_t>(q_max_ + 1) * beliefs_.size();
    }
    std::size_t flat(const State& s) const noexcept {
        return static_cast<std::size_t>(s.q) * beliefs_.size() + s.b_idx;
    }
    State unflat(std::size_t i) const noexcept {
        return {static_cast<int>(i / beliefs_.size()), i % beliefs_.size()};
    }
    double belief(const State& s) const { return beliefs_.value(s.b_idx); }

private:
    ChannelParams channel_;
    ArrivalDist arrivals_;
    CostModel cost_;
    int q_max_;
    BeliefSpace beliefs_;
    bool allow_unstable_ = false;
    double reward_offset_ = 0.0;
};

inline StabilityReport stability_check(const SystemModel& model) {
    const double margin = static_cast<double>(model.max_tx()) * stationary_dist(model.channel()).mu1 -
                          model.arrivals().mean();
    return {margin, margin > 0.0};
}

/// Shifted, nonnegative reward: (Q_max + kappa c(M_d)) - (q + kappa c(u)).
inline double reward(int q, int u, const SystemModel& model) {
    return model.reward_offset() - instantaneous_cost(q, u, model.cost());
}

/// Successor distribution of `state` under action `u`. Zero-probability
/// branches are omitted.
inline std::vector<Transition> transition_law(const State& state, int u, const SystemModel& model) {
    if (state.q < 0 || state.q > model.q_max()) {
        throw ConfigError("queue length outside the truncated space");
    }
    if (state.b_idx >= model.num_beliefs()) {
        throw NumericError("belief index outside the belief space");
    }
    if (u < 0 || u > model.max_tx()) {
        throw ConfigError("action outside {0..M_d}");
    }
    const auto& beliefs = model.beliefs();
    const auto& arrivals = model.arrivals();
    std::vector<Transition> out;
    out.reserve(2 * static_cast<std::size_t>(arrivals.max_arrivals() + 1));

    if (u == 0) {
        const IdleStep& step = beliefs.idle_successor(state.b_idx);
        for (int i = 0; i <= arrivals.max_arrivals(); ++i) {
            const double p = arrivals.prob(i);
            const int q_next = queue_next(state.q, i, 0, model.q_max());
            if (p * (1.0 - step.upper_weight) > 0.0) {
                out.push_back({{q_next, step.lower}, p * (1.0 - step.upper_weight)});
            }
            if (p * step.upper_weight > 0.0) {
                out.push_back({{q_next, step.upper}, p * step.upper_weight});
            }
        }
        return out;
    }

    const double b = beliefs.value(state.b_idx);
    for (int i = 0; i <= arrivals.max_arrivals(); ++i) {
        const double p = arrivals.prob(i);
        if (p * b > 0.0) {
            out.push_back({{queue_next(state.q, i, u, model.q_max()), beliefs.index_p11()}, p * b});
        }
        if (p * (1.0 - b) > 0.0) {
            out.push_back(
                {{queue_next(state.q, i, 0, model.q_max()), beliefs.index_p01()}, p * (1.0 - b)});
        }
    }
    return out;
}

} // namespace gesched
