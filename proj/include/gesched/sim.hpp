// Monte-Carlo simulation of the partially observed system: the hidden channel
// evolves on its own, the policy only sees (queue, belief), and the belief
// advances with ACK/NACK feedback.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "actor_critic.hpp"
#include "channel.hpp"
#include "csv.hpp"
#include "dp.hpp"
#include "model.hpp"
#include "policies.hpp"
#include "rng.hpp"

namespace gesched {

/// Continuous belief plus the idle chain it sits on: value == T^k(root).
struct BeliefTrack {
    double value;
    BeliefRoot root;
    int k;

    static BeliefTrack start(double b0) { return {b0, BeliefRoot::B0, 0}; }

    void advance(int u, ChannelState hidden, const ChannelParams& channel) {
        if (u > 0) {
            value = belief_update(value, u, hidden, channel);
            root = hidden == ChannelState::Good ? BeliefRoot::P11 : BeliefRoot::P01;
            k = 0;
        } else {
            value = tau_map(value, channel);
            ++k;
        }
    }

    /// Grid point representing this belief; depths beyond K map to the
    /// depth-K point of the same chain.
    std::size_t grid_index(const BeliefSpace& beliefs) const { return beliefs.index_of(root, k); }
};

/// Deterministic lookup into a PolicyTable on the model's grid.
struct TablePolicy {
    PolicyTable table;
};

/// Anything the simulator can run: a grid table, threshold curves on the
/// continuous belief, or the stochastic sigmoid policy.
using AnyPolicy = std::variant<TablePolicy, ThresholdPolicy, ThetaVector>;

inline int choose_action(const AnyPolicy& policy, const SystemModel& model, int q,
                         const BeliefTrack& belief, double uniform) {
    return std::visit(
        [&](const auto& p) -> int {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, TablePolicy>) {
                return p.table.at(q, belief.grid_index(model.beliefs()));
            } else if constexpr (std::is_same_v<P, ThresholdPolicy>) {
                return p.action(q, belief.value);
            } else {
                return sample_action(policy_probs(p, q, belief.value), uniform);
            }
        },
        policy);
}

struct RunStats {
    long steps = 0; ///< slots counted after burn-in
    double mean_reward = 0.0;
    double mean_cost = 0.0;
    double stderr_cost = 0.0; ///< batch-means standard error (same for reward)
    double mean_queue = 0.0;
    std::vector<double> action_freq;
    double success_rate = 0.0; ///< fraction of transmitting slots with a good channel
    long attempted_packets = 0;
    long delivered_packets = 0;
    int min_queue = 0;
    int max_queue = 0;
};

struct SimOptions {
    long steps = 1000000;
    int q0 = 5;
    double b0 = 0.5;
    double burn_in = 0.01; ///< fraction of initial slots excluded from statistics
    int batches = 32;
};

/// One slot as seen by an observer.
struct SlotRecord {
    long t;
    int q;
    double belief;
    ChannelState hidden;
    int action;
};

namespace detail {

// Per slot, three uniforms in order: action, channel transition, arrivals.
// The hidden state starts from the stationary law (one extra uniform).
template <typename Observer>
void run_trajectory(const AnyPolicy& policy, const SystemModel& model, const SimOptions& opt,
                    RandomStream& rng, Observer&& observe) {
    if (opt.steps < 1) throw ConfigError("simulation needs T >= 1");
    if (opt.q0 < 0 || opt.q0 > model.q_max()) throw ConfigError("Q0 outside 0..Q_max");
    const auto& channel = model.channel();
    ChannelState hidden =
        rng.uniform() < stationary_dist(channel).mu1 ? ChannelState::Good : ChannelState::Bad;
    int q = opt.q0;
    BeliefTrack belief = BeliefTrack::start(opt.b0);
    for (long t = 0; t < opt.steps; ++t) {
        const int u = choose_action(policy, model, q, belief, rng.uniform());
        observe(SlotRecord{t, q, belief.value, hidden, u});
        const ChannelState next_hidden = step_channel(hidden, channel, rng);
        const int arrivals = model.arrivals().sample(rng.uniform());
        const int delivered = hidden == ChannelState::Good ? u : 0;
        q = queue_next(q, arrivals, delivered, model.q_max());
        belief.advance(u, hidden, channel);
        hidden = next_hidden;
    }
}

} // namespace detail

inline RunStats simulate(const AnyPolicy& policy, const SystemModel& model, const SimOptions& opt,
                         RngSpec rng_spec) {
    RandomStream rng(rng_spec);
    const long skip = static_cast<long>(std::floor(opt.burn_in * static_cast<double>(opt.steps)));
    const long counted = opt.steps - skip;
    if (counted < 1) throw ConfigError("burn-in leaves no slots to measure");
    const int batches = static_cast<int>(std::clamp<long>(opt.batches, 1, counted));
    const long batch_len = counted / batches;

    RunStats stats;
    stats.action_freq.assign(static_cast<std::size_t>(model.max_tx()) + 1, 0.0);
    stats.min_queue = model.q_max();
    std::vector<double> batch_sum(static_cast<std::size_t>(batches), 0.0);
    double cost_sum = 0.0;
    double queue_sum = 0.0;
    long tx_slots = 0;
    long tx_good = 0;

    detail::run_trajectory(policy, model, opt, rng, [&](const SlotRecord& s) {
        if (s.t < skip) return;
        const double c = instantaneous_cost(s.q, s.action, model.cost());
        cost_sum += c;
        queue_sum += s.q;
        const long i = s.t - skip;
        const long b = std::min<long>(i / std::max(batch_len, 1L), batches - 1);
        batch_sum[static_cast<std::size_t>(b)] += c;
        stats.action_freq[static_cast<std::size_t>(s.action)] += 1.0;
        stats.min_queue = std::min(stats.min_queue, s.q);
        stats.max_queue = std::max(stats.max_queue, s.q);
        if (s.action > 0) {
            ++tx_slots;
            stats.attempted_packets += s.action;
            if (s.hidden == ChannelState::Good) {
                ++tx_good;
                stats.delivered_packets += std::min(s.q, s.action);
            }
        }
    });

    const double n = static_cast<double>(counted);
    stats.steps = counted;
    stats.mean_cost = cost_sum / n;
    stats.mean_reward = model.reward_offset() - stats.mean_cost;
    stats.mean_queue = queue_sum / n;
    for (auto& f : stats.action_freq) f /= n;
    stats.success_rate = tx_slots > 0 ? static_cast<double>(tx_good) / static_cast<double>(tx_slots) : 0.0;

    if (batches >= 2) {
        // The last batch absorbs the remainder; weight means by length.
        std::vector<double> means(static_cast<std::size_t>(batches));
        for (int b = 0; b < batches; ++b) {
            const long len = b == batches - 1 ? counted - batch_len * (batches - 1) : batch_len;
            means[static_cast<std::size_t>(b)] = batch_sum[static_cast<std::size_t>(b)] / static_cast<double>(len);
        }
        double m = 0.0;
        for (double x : means) m += x;
        m /= batches;
        double var = 0.0;
        for (double x : means) var += (x - m) * (x - m);
        var /= (batches - 1);
        stats.stderr_cost = std::sqrt(var / batches);
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Belief calibration
// ---------------------------------------------------------------------------

struct CalibrationBin {
    double lo;
    double hi;
    long count = 0;
    double mean_belief = 0.0;
    double freq_good = 0.0;
    double sigma = 0.0; ///< binomial standard deviation of freq_good at mean_belief
    bool enough = false;
    bool pass = true;
};

struct CalibrationReport {
    std::vector<CalibrationBin> bins;
    long min_samples = 1000;

    bool pass() const {
        for (const auto& b : bins)
            if (b.enough && !b.pass) return false;
        return true;
    }
    std::size_t checked_bins() const {
        std::size_t n = 0;
        for (const auto& b : bins) n += b.enough;
        return n;
    }
};

/// Bins slots by belief and checks that the hidden channel was good with the
/// frequency the belief claims (within 3 binomial standard deviations).
inline CalibrationReport belief_calibration(const SystemModel& model, const AnyPolicy& policy,
                                            const SimOptions& opt, int bins, RngSpec rng_spec,
                                            long min_samples = 1000) {
    if (bins < 1) throw ConfigError("need at least one calibration bin");
    RandomStream rng(rng_spec);
    CalibrationReport report;
    report.min_samples = min_samples;
    report.bins.resize(static_cast<std::size_t>(bins));
    std::vector<double> belief_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<long> good(static_cast<std::size_t>(bins), 0);
    for (int i = 0; i < bins; ++i) {
        report.bins[static_cast<std::size_t>(i)].lo = static_cast<double>(i) / bins;
        report.bins[static_cast<std::size_t>(i)].hi = static_cast<double>(i + 1) / bins;
    }
    detail::run_trajectory(policy, model, opt, rng, [&](const SlotRecord& s) {
        const auto i = static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(s.belief * bins)));
        report.bins[i].count += 1;
        belief_sum[i] += s.belief;
        good[i] += s.hidden == ChannelState::Good;
    });
    for (std::size_t i = 0; i < report.bins.size(); ++i) {
        auto& bin = report.bins[i];
        if (bin.count == 0) continue;
        const double n = static_cast<double>(bin.count);
        bin.mean_belief = belief_sum[i] / n;
        bin.freq_good = static_cast<double>(good[i]) / n;
        bin.sigma = std::sqrt(bin.mean_belief * (1.0 - bin.mean_belief) / n);
        bin.enough = bin.count >= min_samples;
        bin.pass = std::abs(bin.freq_good - bin.mean_belief) <= 3.0 * bin.sigma;
    }
    return report;
}

// ---------------------------------------------------------------------------
// CSV: one RunStats row per run.
// ---------------------------------------------------------------------------

inline CsvWriter make_runstats_writer(std::ostream& out, const CsvMeta& meta) {
    return CsvWriter(out, meta,
                     {"run", "policy", "steps", "mean_reward", "mean_cost", "stderr", "mean_queue",
                      "success_rate", "attempted", "delivered", "action_freq"});
}

inline void write_runstats_row(CsvWriter& csv, std::size_t run, const std::string& policy_name,
                               const RunStats& s) {
    std::string freq;
    for (std::size_t u = 0; u < s.action_freq.size(); ++u) {
        if (u) freq += ';';
        freq += format_double(s.action_freq[u]);
    }
    csv.cell(run).cell(policy_name).cell(static_cast<long long>(s.steps)).cell(s.mean_reward)
        .cell(s.mean_cost).cell(s.stderr_cost).cell(s.mean_queue).cell(s.success_rate)
        .cell(static_cast<long long>(s.attempted_packets)).cell(static_cast<long long>(s.delivered_packets))
        .cell(freq);
    csv.end_row();
}

} // namespace gesched
