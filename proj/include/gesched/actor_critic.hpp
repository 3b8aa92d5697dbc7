// Model-free learning over sigmoid threshold policies.
//
// The policy has M_d linear decision boundaries tau_j(q) = a_j + s_j q in the
// (q, b) plane, each smoothed by a logistic of sharpness k_j:
//
//   f_j(q, b) = 1 / (1 + exp(-(b - tau_j(q)) k_j))
//   pi(j)     = f_j prod_{i > j} (1 - f_i),   j = 1..M_d
//   pi(0)     = 1 - sum_j pi(j) = prod_i (1 - f_i)
//
// theta is laid out as (a_1..a_M, s_1..s_M, k_1..k_M). The critic is linear in
// the compatible features phi = grad_theta log pi(u | q, b), trained by TD(1)
// with a trace that resets whenever the state returns to (2, p11).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "channel.hpp"
#include "csv.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace gesched {

/// Actor parameters; 3 * M_d reals.
class ThetaVector {
public:
    ThetaVector() = default;
    ThetaVector(int max_tx, std::vector<double> values) : max_tx_(max_tx), v_(std::move(values)) {
        if (max_tx_ < 1 || v_.size() != 3 * static_cast<std::size_t>(max_tx_)) {
            throw ConfigError("theta must hold 3 * M_d values");
        }
    }

    /// Builds theta from per-boundary (intercept, slope, sharpness) triples.
    static ThetaVector from_boundaries(const std::vector<double>& intercepts,
                                       const std::vector<double>& slopes,
                                       const std::vector<double>& sharpness) {
        const int m = static_cast<int>(intercepts.size());
        if (slopes.size() != intercepts.size() || sharpness.size() != intercepts.size()) {
            throw ConfigError("boundary parameter lists differ in length");
        }
        std::vector<double> v;
        v.insert(v.end(), intercepts.begin(), intercepts.end());
        v.insert(v.end(), slopes.begin(), slopes.end());
        v.insert(v.end(), sharpness.begin(), sharpness.end());
        return ThetaVector(m, std::move(v));
    }

    int max_tx() const noexcept { return max_tx_; }
    std::size_t size() const noexcept { return v_.size(); }

    // Boundary index j is 1-based, matching action j.
    double intercept(int j) const { return v_[idx(j, 0)]; }
    double slope(int j) const { return v_[idx(j, 1)]; }
    double sharpness(int j) const { return v_[idx(j, 2)]; }
    double boundary(int j, int q) const { return intercept(j) + slope(j) * static_cast<double>(q); }

    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }
    std::span<const double> values() const noexcept { return v_; }
    std::span<double> values() noexcept { return v_; }

private:
    std::size_t idx(int j, int block) const {
        if (j < 1 || j > max_tx_) throw ConfigError("boundary index outside 1..M_d");
        return static_cast<std::size_t>(block * max_tx_ + j - 1);
    }

    int max_tx_ = 0;
    std::vector<double> v_;
};

/// Critic weights w, same length as theta.
using CriticWeights = std::vector<double>;

/// Logistic 1 / (1 + e^-x) without overflow for large |x|.
inline double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double sigmoid_feature(const ThetaVector& theta, int q, double b, int j) {
    return logistic((b - theta.boundary(j, q)) * theta.sharpness(j));
}

/// pi_theta(. | q, b) over {0..M_d}.
inline std::vector<double> policy_probs(const ThetaVector& theta, int q, double b) {
    const int m = theta.max_tx();
    std::vector<double> pi(static_cast<std::size_t>(m) + 1, 0.0);
    // Running product of (1 - f_i) for i > j, built from the top boundary down.
    double tail = 1.0;
    for (int j = m; j >= 1; --j) {
        const double x = (b - theta.boundary(j, q)) * theta.sharpness(j);
        pi[static_cast<std::size_t>(j)] = logistic(x) * tail;
        tail *= logistic(-x);
    }
    pi[0] = tail;
    return pi;
}

/// Inverse-CDF draw; actions with zero probability are never returned.
inline int sample_action(const std::vector<double>& pi, double uniform) {
    double acc = 0.0;
    int last_positive = 0;
    for (std::size_t u = 0; u < pi.size(); ++u) {
        if (pi[u] <= 0.0) continue;
        last_positive = static_cast<int>(u);
        acc += pi[u];
        if (uniform < acc) return static_cast<int>(u);
    }
    return last_positive;
}

/// log pi_theta(u | q, b), with probabilities floored at 1e-12.
inline double log_policy_prob(const ThetaVector& theta, int q, double b, int u) {
    const auto pi = policy_probs(theta, q, b);
    return std::log(std::max(pi.at(static_cast<std::size_t>(u)), 1e-12));
}

/// Compatible features phi = grad_theta log pi(u | q, b), in closed form.
///
/// With x_i the logistic argument of boundary i, log pi(u) depends on x_u
/// through log f_u (derivative 1 - f_u) and on every x_i, i > u, through
/// log(1 - f_i) (derivative -f_i). u = 0 is the product of all (1 - f_i).
///
/// The closed form stays finite when pi(u) underflows to 0, so the training
/// loop calls `score_features_unchecked` directly; the checked entry point
/// rejects such actions since log pi is undefined there.
inline std::vector<double> score_features_unchecked(const ThetaVector& theta, int q, double b, int u) {
    const int m = theta.max_tx();
    if (u < 0 || u > m) throw ConfigError("action outside {0..M_d}");
    std::vector<double> phi(3 * static_cast<std::size_t>(m), 0.0);
    for (int i = std::max(u, 1); i <= m; ++i) {
        const double k = theta.sharpness(i);
        const double offset = b - theta.boundary(i, q);
        const double f = logistic(offset * k);
        const double dlog_dx = (i == u) ? logistic(-offset * k) : -f;
        const auto col = static_cast<std::size_t>(i - 1);
        phi[col] = dlog_dx * (-k);
        phi[static_cast<std::size_t>(m) + col] = dlog_dx * (-k * static_cast<double>(q));
        phi[2 * static_cast<std::size_t>(m) + col] = dlog_dx * offset;
    }
    return phi;
}

inline std::vector<double> score_features(const ThetaVector& theta, int q, double b, int u) {
    if (u < 0 || u > theta.max_tx()) throw ConfigError("action outside {0..M_d}");
    if (policy_probs(theta, q, b)[static_cast<std::size_t>(u)] <= 0.0) {
        throw NumericError("score_features: action has zero probability");
    }
    return score_features_unchecked(theta, q, b, u);
}

/// Linear advantage estimate w . phi.
inline double advantage_approx(std::span<const double> w, std::span<const double> phi) {
    if (w.size() != phi.size()) throw ConfigError("critic weights and features differ in length");
    return std::inner_product(w.begin(), w.end(), phi.begin(), 0.0);
}

// ---------------------------------------------------------------------------
// Self-check of the closed-form score against finite differences
// ---------------------------------------------------------------------------

struct GradientCheckReport {
    int samples = 0;
    double max_rel_error = 0.0;      ///< |analytic - fd| / max(|analytic|, |fd|, floor)
    double max_identity_error = 0.0; ///< |sum_u pi(u) phi(u)| per component
    bool pass(double rel_tol = 1e-5, double identity_tol = 1e-10) const {
        return max_rel_error <= rel_tol && max_identity_error <= identity_tol;
    }
};

/// Random (theta, q, b) with u drawn from pi_theta: intercepts in [0,1],
/// slopes in [-0.1, 0.1], sharpness in [-10, 10] (or exactly 0).
inline GradientCheckReport gradient_check(int max_tx, int q_max, int samples, RngSpec spec,
                                          bool zero_sharpness = false, double step = 1e-6,
                                          double rel_floor = 1e-3) {
    RandomStream rng(spec);
    GradientCheckReport report;
    report.samples = samples;
    const auto n = 3 * static_cast<std::size_t>(max_tx);
    const auto m = static_cast<std::size_t>(max_tx);
    for (int s = 0; s < samples; ++s) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < m; ++i) {
            v[i] = rng.uniform();
            v[m + i] = -0.1 + 0.2 * rng.uniform();
            v[2 * m + i] = zero_sharpness ? 0.0 : -10.0 + 20.0 * rng.uniform();
        }
        ThetaVector theta(max_tx, std::move(v));
        const int q = std::min(q_max, static_cast<int>(rng.uniform() * (q_max + 1)));
        const double b = rng.uniform();
        const auto pi = policy_probs(theta, q, b);
        const int u = sample_action(pi, rng.uniform());

        const auto phi = score_features(theta, q, b, u);
        for (std::size_t i = 0; i < n; ++i) {
            ThetaVector plus = theta, minus = theta;
            plus[i] += step;
            minus[i] -= step;
            const double fd =
                (log_policy_prob(plus, q, b, u) - log_policy_prob(minus, q, b, u)) / (2.0 * step);
            const double denom = std::max({std::abs(phi[i]), std::abs(fd), rel_floor});
            report.max_rel_error = std::max(report.max_rel_error, std::abs(phi[i] - fd) / denom);
        }
        std::vector<double> mean(n, 0.0);
        for (int a = 0; a <= max_tx; ++a) {
            const auto pa = pi[static_cast<std::size_t>(a)];
            if (pa <= 0.0) continue;
            const auto fa = score_features_unchecked(theta, q, b, a);
            for (std::size_t i = 0; i < n; ++i) mean[i] += pa * fa[i];
        }
        for (double x : mean) report.max_identity_error = std::max(report.max_identity_error, std::abs(x));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct LearnerState {
    ThetaVector theta;
    CriticWeights w;
    double avg_reward = 0.0;         ///< R_hat
    std::vector<double> trace;       ///< z
    int q = 0;
    double b = 0.5;
    ChannelState hidden = ChannelState::Good;
    int pending_action = 0;          ///< u(t-1), applied by the next step
    long t = 0;
    double last_reward = 0.0;        ///< reward collected by the last step
};

/// Queue length and belief at which the eligibility trace restarts.
inline constexpr int kTraceResetQueue = 2;
inline constexpr double kTraceResetTolerance = 1e-12;

namespace detail {

inline void require_finite(std::span<const double> v, const char* what, long t) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            std::ostringstream msg;
            msg << "actor-critic diverged: non-finite " << what << " at step " << t;
            throw NumericError(msg.str());
        }
    }
}

} // namespace detail

/// One iteration of the actor-critic loop. Random draws, in order: channel
/// transition, arrival count, next action.
inline void ac_step(LearnerState& s, const SystemModel& model, double alpha_theta, double alpha_w,
                    RandomStream& rng) {
    if (!(alpha_theta > 0.0) || !(alpha_w > 0.0)) throw ConfigError("step sizes must be > 0");
    const int u = s.pending_action;
    const double r = reward(s.q, u, model);

    const ChannelState next_hidden = step_channel(s.hidden, model.channel(), rng);
    const int arrivals = model.arrivals().sample(rng.uniform());
    const int delivered = s.hidden == ChannelState::Good ? u : 0;
    const int q_next = queue_next(s.q, arrivals, delivered, model.q_max());
    const double b_next = belief_update(s.b, u, u > 0 ? std::optional(s.hidden) : std::nullopt,
                                        model.channel());
    const int u_next = sample_action(policy_probs(s.theta, q_next, b_next), rng.uniform());

    const auto phi_old = score_features_unchecked(s.theta, s.q, s.b, u);
    const auto phi_new = score_features_unchecked(s.theta, q_next, b_next, u_next);
    const double adv_old = advantage_approx(s.w, phi_old);
    const double adv_new = advantage_approx(s.w, phi_new);

    const double td = r - s.avg_reward + adv_new - adv_old;
    s.avg_reward += alpha_w * (r - s.avg_reward);
    for (std::size_t i = 0; i < s.w.size(); ++i) s.w[i] += alpha_w * td * s.trace[i];

    const bool reset = q_next == kTraceResetQueue &&
                       std::abs(b_next - model.channel().p11()) <= kTraceResetTolerance;
    for (std::size_t i = 0; i < s.trace.size(); ++i) {
        s.trace[i] = reset ? phi_new[i] : s.trace[i] + phi_new[i];
    }
    for (std::size_t i = 0; i < s.trace.size(); ++i) {
        s.theta[i] += alpha_theta * adv_new * s.trace[i];
    }

    s.q = q_next;
    s.b = b_next;
    s.hidden = next_hidden;
    s.pending_action = u_next;
    s.last_reward = r;
    ++s.t;

    const double scalars[] = {s.avg_reward};
    detail::require_finite(scalars, "average-reward estimate", s.t);
    detail::require_finite(s.w, "critic weights", s.t);
    detail::require_finite(s.trace, "eligibility trace", s.t);
    detail::require_finite(s.theta.values(), "actor parameters", s.t);
}

struct AcHyper {
    long steps = 450000;
    double alpha_theta = 0.0005;
    double alpha_w = 0.002;
    std::uint64_t seed = 1;
    int q0 = 5;
    double b0 = 0.5;
    long record_every = 100;
    bool allow_unstable = false;
    std::uint64_t run_index = 0; ///< stream is derived from (seed, run_index)
};

struct CurvePoint {
    long t;
    double avg_reward;
};

struct TrainResult {
    ThetaVector theta;
    CriticWeights w;
    std::vector<CurvePoint> curve;
    std::vector<std::vector<double>> boundaries; ///< [q][j-1] = tau_j(q)
    double final_avg_reward = 0.0;              ///< R_hat(T)
    double final_window_reward = 0.0;           ///< mean reward over the last 10% of steps
};

/// Initial learner: theta(0), w(0) ~ U[0,1]^{3 M_d} (theta drawn first),
/// hidden channel from the stationary law, then u(0) ~ pi_theta(0).
inline LearnerState init_learner(const SystemModel& model, const AcHyper& hyper, RandomStream& rng) {
    const auto n = 3 * static_cast<std::size_t>(model.max_tx());
    std::vector<double> theta(n), w(n);
    for (auto& x : theta) x = rng.uniform();
    for (auto& x : w) x = rng.uniform();
    LearnerState s;
    s.theta = ThetaVector(model.max_tx(), std::move(theta));
    s.w = std::move(w);
    s.q = hyper.q0;
    s.b = hyper.b0;
    s.hidden = rng.uniform() < stationary_dist(model.channel()).mu1 ? ChannelState::Good : ChannelState::Bad;
    s.pending_action = sample_action(policy_probs(s.theta, s.q, s.b), rng.uniform());
    s.trace = score_features(s.theta, s.q, s.b, s.pending_action);
    return s;
}

inline TrainResult train(const SystemModel& model, const AcHyper& hyper) {
    if (hyper.steps < 1) throw ConfigError("T must be >= 1");
    if (hyper.record_every < 1) throw ConfigError("record cadence must be >= 1");
    if (hyper.q0 < 0 || hyper.q0 > model.q_max()) throw ConfigError("Q0 outside 0..Q_max");
    if (!(hyper.b0 >= 0.0 && hyper.b0 <= 1.0)) throw ConfigError("b0 outside [0,1]");
    if (!hyper.allow_unstable && !model.unstable_allowed() && !stability_check(model).pass) {
        throw StabilityError("actor-critic training requires M_d * mu1 > E[A]");
    }
    RandomStream rng(RngSpec{hyper.seed, hyper.run_index});
    LearnerState s = init_learner(model, hyper, rng);

    TrainResult out;
    out.curve.reserve(static_cast<std::size_t>((hyper.steps + hyper.record_every - 1) / hyper.record_every));
    const long window = std::max(1L, (hyper.steps + 9) / 10);
    const long window_start = hyper.steps - window + 1;
    double window_sum = 0.0;
    for (long t = 1; t <= hyper.steps; ++t) {
        ac_step(s, model, hyper.alpha_theta, hyper.alpha_w, rng);
        if (t >= window_start) window_sum += s.last_reward;
        if (t % hyper.record_every == 0 || t == hyper.steps) out.curve.push_back({t, s.avg_reward});
    }
    out.final_avg_reward = s.avg_reward;
    out.final_window_reward = window_sum / static_cast<double>(window);
    out.boundaries.resize(static_cast<std::size_t>(model.q_max()) + 1);
    for (int q = 0; q <= model.q_max(); ++q) {
        for (int j = 1; j <= model.max_tx(); ++j) out.boundaries[static_cast<std::size_t>(q)].push_back(s.theta.boundary(j, q));
    }
    out.theta = std::move(s.theta);
    out.w = std::move(s.w);
    return out;
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

inline void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve, const CsvMeta& meta) {
    CsvWriter csv(out, meta, {"t", "avg_reward"});
    for (const auto& p : curve) {
        csv.cell(static_cast<long long>(p.t)).cell(p.avg_reward);
        csv.end_row();
    }
}

/// theta as (index, value) rows, index 1-based.
inline void write_theta_csv(std::ostream& out, const ThetaVector& theta, const CsvMeta& meta) {
    CsvWriter csv(out, meta, {"index", "value"});
    for (std::size_t i = 0; i < theta.size(); ++i) {
        csv.cell(i + 1).cell(theta[i]);
        csv.end_row();
    }
}

inline ThetaVector theta_from_csv(const CsvTable& table) {
    if (table.header.size() < 2 || table.header[0] != "index" || table.header[1] != "value") {
        throw ConfigError("theta file must have header 'index,value'");
    }
    std::vector<double> v(table.rows.size());
    for (const auto& row : table.rows) {
        if (row.size() < 2) throw ConfigError("theta file: short row");
        const std::size_t i = std::stoul(row[0]);
        if (i < 1 || i > v.size()) throw ConfigError("theta file: index out of range");
        v[i - 1] = std::stod(row[1]);
    }
    if (v.size() % 3 != 0 || v.empty()) throw ConfigError("theta file: length is not a multiple of 3");
    const int max_tx = static_cast<int>(v.size() / 3);
    return ThetaVector(max_tx, std::move(v));
}

inline void write_boundary_csv(std::ostream& out, const std::vector<std::vector<double>>& boundaries,
                               const CsvMeta& meta) {
    CsvWriter csv(out, meta, {"q", "j", "tau"});
    for (std::size_t q = 0; q < boundaries.size(); ++q) {
        for (std::size_t j = 0; j < boundaries[q].size(); ++j) {
            csv.cell(q).cell(j + 1).cell(boundaries[q][j]);
            csv.end_row();
        }
    }
}

} // namespace gesched
