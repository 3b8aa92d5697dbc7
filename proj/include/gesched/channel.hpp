// Gilbert-Elliott channel: two-state Markov blockage process observed only
// through ACK/NACK feedback, the belief recursion it induces, and the finite
// set of beliefs reachable from a given start.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace gesched {

/// Channel state: 0 = blocked, 1 = good.
enum class ChannelState : int { Bad = 0, Good = 1 };

struct StationaryDist {
    double mu0;
    double mu1;
};

/// Transition probabilities of the channel chain. Only p01 (bad -> good) and
/// p11 (good -> good) are free; the rest are derived.
class ChannelParams {
public:
    ChannelParams(double p01, double p11) : p01_(p01), p11_(p11) {
        if (!(p01 > 0.0 && p01 < 1.0) || !(p11 > 0.0 && p11 < 1.0)) {
            std::ostringstream msg;
            msg << "channel probabilities must lie in (0,1): p01=" << p01 << " p11=" << p11;
            throw ConfigError(msg.str());
        }
    }

    /// Skips the open-interval check. Only for limit cases (absorbing
    /// channels) in simulation and tests; stationary quantities are
    /// meaningless for such channels.
    static ChannelParams unchecked(double p01, double p11) {
        ChannelParams params;
        params.p01_ = p01;
        params.p11_ = p11;
        return params;
    }

    double p01() const noexcept { return p01_; }
    double p11() const noexcept { return p11_; }
    double p00() const noexcept { return 1.0 - p01_; }
    double p10() const noexcept { return 1.0 - p11_; }

    /// Probability of moving to the good state from `s`.
    double prob_good_from(ChannelState s) const noexcept {
        return s == ChannelState::Good ? p11_ : p01_;
    }

    /// |p11 - p01|: memory of the channel, 0 for an i.i.d. channel.
    double memory() const noexcept { return std::abs(p11_ - p01_); }

private:
    ChannelParams() = default;
    double p01_ = 0.5;
    double p11_ = 0.5;
};

inline StationaryDist stationary_dist(const ChannelParams& params) {
    const double mu1 = params.p01() / (params.p01() + params.p10());
    return {1.0 - mu1, mu1};
}

/// One idle step of the belief: b p11 + (1 - b) p01.
inline double tau_map(double b, const ChannelParams& params) {
    if (!(b >= 0.0 && b <= 1.0)) {
        throw ConfigError("belief outside [0,1]: " + std::to_string(b));
    }
    return b * params.p11() + (1.0 - b) * params.p01();
}

/// Belief for the next slot. `observed` is the ACK/NACK outcome, present
/// exactly when u > 0.
inline double belief_update(double b, int u, std::optional<ChannelState> observed,
                            const ChannelParams& params) {
    if (u < 0) {
        throw ConfigError("negative action");
    }
    if (u == 0) {
        if (observed) {
            throw ConfigError("belief_update: observation given without a transmission");
        }
        return tau_map(b, params);
    }
    if (!observed) {
        throw ConfigError("belief_update: transmission without ACK/NACK observation");
    }
    return *observed == ChannelState::Good ? params.p11() : params.p01();
}

/// Draws the next channel state. Consumes exactly one uniform.
inline ChannelState step_channel(ChannelState s, const ChannelParams& params,
                                 RandomStream& rng) {
    return rng.uniform() < params.prob_good_from(s) ? ChannelState::Good : ChannelState::Bad;
}

/// Root of an idle chain T^k(root) in the belief support.
enum class BeliefRoot : int { B0 = 0, P01 = 1, P11 = 2 };

struct BeliefProvenance {
    BeliefRoot root;
    int k;

    friend bool operator==(const BeliefProvenance&, const BeliefProvenance&) = default;
};

inline const char* to_string(BeliefRoot root) {
    switch (root) {
    case BeliefRoot::B0: return "b0";
    case BeliefRoot::P01: return "p01";
    case BeliefRoot::P11: return "p11";
    }
    return "?";
}

/// Successor of a grid belief after an idle slot. When T(b) is itself a grid
/// point, `upper_weight` is 0 and `lower` is that point. Otherwise T(b) falls
/// between two neighbours and is split between them with linear-interpolation
/// weights (mean-preserving).
struct IdleStep {
    std::size_t lower;
    std::size_t upper;
    double upper_weight;
};

/// Sorted, deduplicated set of beliefs {T^k(b0), T^k(p01), T^k(p11) : k <= K}.
///
/// Points closer than `kMergeTolerance` are merged; every merged point keeps
/// all of its provenances. Beyond depth K the idle map leaves the grid; those
/// successors are interpolated between the bracketing grid points so the
/// chain stays on the finite support.
class BeliefSpace {
public:
    static constexpr double kMergeTolerance = 1e-12;

    BeliefSpace(const ChannelParams& params, double b0, int depth)
        : params_(params), b0_(b0), depth_(depth) {
        if (depth < 0) {
            throw ConfigError("belief depth K must be >= 0");
        }
        if (!(b0 >= 0.0 && b0 <= 1.0)) {
            throw ConfigError("initial belief b0 outside [0,1]");
        }
        build();
    }

    std::size_t size() const noexcept { return points_.size(); }
    int depth() const noexcept { return depth_; }
    double b0() const noexcept { return b0_; }
    const ChannelParams& channel() const noexcept { return params_; }

    double value(std::size_t idx) const { return points_.at(idx); }
    const std::vector<double>& values() const noexcept { return points_; }
    const std::vector<BeliefProvenance>& provenance(std::size_t idx) const {
        return provenance_.at(idx);
    }

    /// Index of T^k(root); k is clamped to the truncation depth.
    std::size_t index_of(BeliefRoot root, int k) const {
        k = std::clamp(k, 0, depth_);
        return by_root_[static_cast<int>(root)][static_cast<std::size_t>(k)];
    }

    std::size_t index_p01() const { return index_of(BeliefRoot::P01, 0); }
    std::size_t index_p11() const { return index_of(BeliefRoot::P11, 0); }
    std::size_t index_b0() const { return index_of(BeliefRoot::B0, 0); }

    /// Where an idle slot (u = 0) leads from grid point `idx`.
    const IdleStep& idle_successor(std::size_t idx) const { return idle_next_.at(idx); }

    /// Grid point within the merge tolerance of `b`, if any.
    std::optional<std::size_t> find(double b) const {
        auto it = std::lower_bound(points_.begin(), points_.end(), b - kMergeTolerance);
        if (it != points_.end() && std::abs(*it - b) <= kMergeTolerance) {
            return static_cast<std::size_t>(it - points_.begin());
        }
        return std::nullopt;
    }

private:
    void build() {
        struct Raw {
            double value;
            BeliefProvenance prov;
        };
        std::vector<Raw> raw;
        raw.reserve(3 * static_cast<std::size_t>(depth_ + 1));
        const std::array<std::pair<BeliefRoot, double>, 3> roots{
            {{BeliefRoot::B0, b0_}, {BeliefRoot::P01, params_.p01()}, {BeliefRoot::P11, params_.p11()}}};
        for (const auto& [root, start] : roots) {
            double b = start;
            for (int k = 0; k <= depth_; ++k) {
                raw.push_back({b, {root, k}});
                b = tau_map(b, params_);
            }
        }
        std::sort(raw.begin(), raw.end(), [](const Raw& a, const Raw& b) {
            if (a.value != b.value) return a.value < b.value;
            if (a.prov.root != b.prov.root) return a.prov.root < b.prov.root;
            return a.prov.k < b.prov.k;
        });

        for (auto& row : by_root_) {
            row.assign(static_cast<std::size_t>(depth_ + 1), 0);
        }
        for (const Raw& r : raw) {
            if (points_.empty() || r.value - points_.back() > kMergeTolerance) {
                points_.push_back(r.value);
                provenance_.emplace_back();
            }
            provenance_.back().push_back(r.prov);
            by_root_[static_cast<int>(r.prov.root)][static_cast<std::size_t>(r.prov.k)] =
                points_.size() - 1;
        }

        idle_next_.resize(points_.size());
        for (std::size_t i = 0; i < points_.size(); ++i) {
            // Shallowest provenance below the depth gives an exact successor.
            std::optional<BeliefProvenance> best;
            for (const auto& p : provenance_[i]) {
                if (p.k < depth_ && (!best || p.k < best->k)) best = p;
            }
            if (best) {
                const std::size_t j = index_of(best->root, best->k + 1);
                idle_next_[i] = {j, j, 0.0};
                continue;
            }
            const double next = tau_map(points_[i], params_);
            if (auto hit = find(next)) {
                idle_next_[i] = {*hit, *hit, 0.0};
                continue;
            }
            // T maps [0,1] into [min(p01,p11), max(p01,p11)], which the grid
            // spans, so both neighbours exist.
            auto it = std::upper_bound(points_.begin(), points_.end(), next);
            const auto upper = static_cast<std::size_t>(it - points_.begin());
            const std::size_t lower = upper - 1;
            const double w = (next - points_[lower]) / (points_[upper] - points_[lower]);
            idle_next_[i] = {lower, upper, w};
        }
    }

    ChannelParams params_;
    double b0_;
    int depth_;
    std::vector<double> points_;
    std::vector<std::vector<BeliefProvenance>> provenance_;
    std::array<std::vector<std::size_t>, 3> by_root_;
    std::vector<IdleStep> idle_next_;
};

inline BeliefSpace enumerate_belief_space(const ChannelParams& params, double b0, int depth) {
    return BeliefSpace(params, b0, depth);
}

} // namespace gesched
