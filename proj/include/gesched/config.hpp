// Experiment configuration: a JSON document with model, solver, learner,
// simulate, sweep and output blocks. Every block and field is optional and
// falls back to the default setup; unknown fields are rejected.
#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "actor_critic.hpp"
#include "csv.hpp"
#include "dp.hpp"
#include "errors.hpp"
#include "model.hpp"

namespace gesched {

struct ModelConfig {
    double p01 = 0.2;
    double p11 = 0.9;
    std::vector<double> arrival_probs{0.1, 0.9};
    int max_tx = 2;
    double kappa = 1.0;
    std::optional<std::vector<double>> cost_table; ///< empty -> c(u) = exp(u) - 1
    int q_max = 10;
    int belief_depth = 10;
    double b0 = 0.5;
};

/// Reference state for RVI: queue length plus a named root belief.
struct RefStateConfig {
    int q = 0;
    std::string belief = "p01"; ///< "p01", "p11" or "b0"
};

struct SolverConfig {
    std::optional<double> beta; ///< present -> discounted VI instead of RVI
    double tol = 1e-9;
    long max_iter = 100000;
    RefStateConfig ref_state;
};

struct LearnerConfig {
    long steps = 40000;
    double alpha_theta = 0.0006;
    double alpha_w = 0.001;
    std::uint64_t seed = 1;
    int q0 = 5;
    double b0 = 0.5;
    long record_every = 100;
    int runs = 1;
};

struct SimulateConfig {
    long steps = 1000000;
    int runs = 1;
    std::uint64_t seed = 1;
    int q0 = 5;
    double b0 = 0.5;
    double burn_in = 0.01;
    std::string policy = "rvi"; ///< rvi | vi | always-one | iid-mdp | theta-file
    std::string theta_file;
    bool idle_when_empty = false;
    int calibration_bins = 20;
};

struct SweepConfig {
    std::string parameter = "delta_p"; ///< kappa | p1 | delta_p | p11
    std::vector<double> values;        ///< empty -> default grid for the parameter
    int runs = 1;
    bool include_ac = false;
};

struct ExperimentConfig {
    ModelConfig model;
    SolverConfig solver;
    LearnerConfig learner;
    SimulateConfig simulate;
    SweepConfig sweep;
    std::string output_dir = "out";
    bool allow_unstable = false;
    int workers = 1;
};

/// Default sweep grid for a parameter (approximate; override with sweep.values).
inline std::vector<double> default_sweep_grid(const std::string& parameter) {
    if (parameter == "kappa") return {0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
    if (parameter == "p1") return {0.5, 0.6, 0.7, 0.8, 0.9};
    if (parameter == "delta_p") return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
    if (parameter == "p11") return {0.6, 0.7, 0.8, 0.9};
    throw ConfigError("sweep.parameter must be one of kappa, p1, delta_p, p11 (got '" + parameter + "')");
}

// ---------------------------------------------------------------------------
// JSON mapping
// ---------------------------------------------------------------------------

namespace detail {

using nlohmann::json;

class FieldReader {
public:
    FieldReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.emplace_back(key);
        auto it = obj_.find(key);
        if (it == obj_.end() || it->is_null()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }

    template <typename T>
    void read(const char* key, std::optional<T>& out) {
        seen_.emplace_back(key);
        auto it = obj_.find(key);
        if (it == obj_.end() || it->is_null()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const char* key) {
        seen_.emplace_back(key);
        auto it = obj_.find(key);
        return (it == obj_.end() || it->is_null()) ? nullptr : &*it;
    }

    void reject_unknown() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
                throw ConfigError(path_ + ": unknown field '" + it.key() + "'");
            }
        }
    }

    const std::string& path() const { return path_; }

private:
    const json& obj_;
    std::string path_;
    std::vector<std::string> seen_;
};

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

} // namespace detail

inline void validate(const ExperimentConfig& c) {
    using detail::require;
    const auto& m = c.model;
    require(m.p01 > 0.0 && m.p01 < 1.0, "model.p01 must lie in (0,1)");
    require(m.p11 > 0.0 && m.p11 < 1.0, "model.p11 must lie in (0,1)");
    require(!m.arrival_probs.empty(), "model.arrival_probs must be non-empty");
    require(m.max_tx >= 1, "model.M_d must be >= 1");
    require(m.kappa >= 0.0, "model.kappa must be >= 0");
    require(m.q_max >= 1, "model.Q_max must be >= 1");
    require(m.belief_depth >= 0, "model.belief_depth must be >= 0");
    require(m.b0 >= 0.0 && m.b0 <= 1.0, "model.b0 must lie in [0,1]");
    if (m.cost_table) {
        require(static_cast<int>(m.cost_table->size()) == m.max_tx + 1,
                "model.cost table must have M_d + 1 entries");
    }
    require(c.solver.tol > 0.0, "solver.tol must be > 0");
    require(c.solver.max_iter >= 1, "solver.max_iter must be >= 1");
    if (c.solver.beta) require(*c.solver.beta > 0.0 && *c.solver.beta < 1.0, "solver.beta must lie in (0,1)");
    require(c.solver.ref_state.q >= 0 && c.solver.ref_state.q <= m.q_max, "solver.ref_state.q outside 0..Q_max");
    const auto& rb = c.solver.ref_state.belief;
    require(rb == "p01" || rb == "p11" || rb == "b0", "solver.ref_state.belief must be p01, p11 or b0");
    const auto& l = c.learner;
    require(l.steps >= 1, "learner.T must be >= 1");
    require(l.alpha_theta > 0.0 && l.alpha_w > 0.0, "learner step sizes must be > 0");
    require(l.q0 >= 0 && l.q0 <= m.q_max, "learner.Q0 outside 0..Q_max");
    require(l.b0 >= 0.0 && l.b0 <= 1.0, "learner.b0 must lie in [0,1]");
    require(l.record_every >= 1, "learner.record_every must be >= 1");
    require(l.runs >= 1, "learner.runs must be >= 1");
    const auto& s = c.simulate;
    require(s.steps >= 1 && s.runs >= 1, "simulate.T and simulate.runs must be >= 1");
    require(s.q0 >= 0 && s.q0 <= m.q_max, "simulate.Q0 outside 0..Q_max");
    require(s.b0 >= 0.0 && s.b0 <= 1.0, "simulate.b0 must lie in [0,1]");
    require(s.burn_in >= 0.0 && s.burn_in < 1.0, "simulate.burn_in must lie in [0,1)");
    require(s.policy == "rvi" || s.policy == "vi" || s.policy == "always-one" || s.policy == "iid-mdp" ||
                s.policy == "theta-file",
            "simulate.policy must be rvi, vi, always-one, iid-mdp or theta-file");
    require(s.calibration_bins >= 1, "simulate.calibration_bins must be >= 1");
    (void)default_sweep_grid(c.sweep.parameter);
    require(c.sweep.runs >= 1, "sweep.runs must be >= 1");
    require(c.workers >= 1, "workers must be >= 1");
}

inline ExperimentConfig config_from_json(const nlohmann::json& root) {
    ExperimentConfig c;
    detail::FieldReader top(root, "config");
    if (const auto* j = top.child("model")) {
        detail::FieldReader r(*j, "model");
        r.read("p01", c.model.p01);
        r.read("p11", c.model.p11);
        r.read("arrival_probs", c.model.arrival_probs);
        std::optional<int> max_arrivals;
        r.read("M_a", max_arrivals);
        r.read("M_d", c.model.max_tx);
        r.read("kappa", c.model.kappa);
        if (const auto* cost = r.child("cost")) {
            if (cost->is_string()) {
                if (cost->get<std::string>() != "exp") throw ConfigError("model.cost: expected \"exp\" or a table");
            } else {
                try {
                    c.model.cost_table = cost->get<std::vector<double>>();
                } catch (const nlohmann::json::exception& e) {
                    throw ConfigError(std::string("model.cost: ") + e.what());
                }
            }
        }
        r.read("Q_max", c.model.q_max);
        r.read("belief_depth", c.model.belief_depth);
        r.read("b0", c.model.b0);
        r.reject_unknown();
        if (max_arrivals && *max_arrivals + 1 != static_cast<int>(c.model.arrival_probs.size())) {
            throw ConfigError("model.M_a disagrees with the length of model.arrival_probs");
        }
    }
    if (const auto* j = top.child("solver")) {
        detail::FieldReader r(*j, "solver");
        r.read("beta", c.solver.beta);
        r.read("tol", c.solver.tol);
        r.read("max_iter", c.solver.max_iter);
        if (const auto* ref = r.child("ref_state")) {
            detail::FieldReader rr(*ref, "solver.ref_state");
            rr.read("q", c.solver.ref_state.q);
            rr.read("belief", c.solver.ref_state.belief);
            rr.reject_unknown();
        }
        r.reject_unknown();
    }
    if (const auto* j = top.child("learner")) {
        detail::FieldReader r(*j, "learner");
        r.read("T", c.learner.steps);
        r.read("alpha_theta", c.learner.alpha_theta);
        r.read("alpha_w", c.learner.alpha_w);
        r.read("seed", c.learner.seed);
        r.read("Q0", c.learner.q0);
        r.read("b0", c.learner.b0);
        r.read("record_every", c.learner.record_every);
        r.read("runs", c.learner.runs);
        r.reject_unknown();
    }
    if (const auto* j = top.child("simulate")) {
        detail::FieldReader r(*j, "simulate");
        r.read("T", c.simulate.steps);
        r.read("runs", c.simulate.runs);
        r.read("seed", c.simulate.seed);
        r.read("Q0", c.simulate.q0);
        r.read("b0", c.simulate.b0);
        r.read("burn_in", c.simulate.burn_in);
        r.read("policy", c.simulate.policy);
        r.read("theta_file", c.simulate.theta_file);
        r.read("idle_when_empty", c.simulate.idle_when_empty);
        r.read("calibration_bins", c.simulate.calibration_bins);
        r.reject_unknown();
    }
    if (const auto* j = top.child("sweep")) {
        detail::FieldReader r(*j, "sweep");
        r.read("parameter", c.sweep.parameter);
        r.read("values", c.sweep.values);
        r.read("runs", c.sweep.runs);
        r.read("include_ac", c.sweep.include_ac);
        r.reject_unknown();
    }
    if (const auto* j = top.child("output")) {
        detail::FieldReader r(*j, "output");
        r.read("dir", c.output_dir);
        r.reject_unknown();
    }
    top.read("allow_unstable", c.allow_unstable);
    top.read("workers", c.workers);
    top.reject_unknown();
    validate(c);
    return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    auto& m = j["model"];
    m["p01"] = c.model.p01;
    m["p11"] = c.model.p11;
    m["arrival_probs"] = c.model.arrival_probs;
    m["M_a"] = static_cast<int>(c.model.arrival_probs.size()) - 1;
    m["M_d"] = c.model.max_tx;
    m["kappa"] = c.model.kappa;
    if (c.model.cost_table) {
        m["cost"] = *c.model.cost_table;
    } else {
        m["cost"] = "exp";
    }
    m["Q_max"] = c.model.q_max;
    m["belief_depth"] = c.model.belief_depth;
    m["b0"] = c.model.b0;

    auto& s = j["solver"];
    s["beta"] = c.solver.beta ? nlohmann::json(*c.solver.beta) : nlohmann::json(nullptr);
    s["tol"] = c.solver.tol;
    s["max_iter"] = c.solver.max_iter;
    s["ref_state"] = {{"q", c.solver.ref_state.q}, {"belief", c.solver.ref_state.belief}};

    j["learner"] = {{"T", c.learner.steps},         {"alpha_theta", c.learner.alpha_theta},
                    {"alpha_w", c.learner.alpha_w}, {"seed", c.learner.seed},
                    {"Q0", c.learner.q0},           {"b0", c.learner.b0},
                    {"record_every", c.learner.record_every}, {"runs", c.learner.runs}};
    j["simulate"] = {{"T", c.simulate.steps},
                     {"runs", c.simulate.runs},
                     {"seed", c.simulate.seed},
                     {"Q0", c.simulate.q0},
                     {"b0", c.simulate.b0},
                     {"burn_in", c.simulate.burn_in},
                     {"policy", c.simulate.policy},
                     {"theta_file", c.simulate.theta_file},
                     {"idle_when_empty", c.simulate.idle_when_empty},
                     {"calibration_bins", c.simulate.calibration_bins}};
    j["sweep"] = {{"parameter", c.sweep.parameter},
                  {"values", c.sweep.values},
                  {"runs", c.sweep.runs},
                  {"include_ac", c.sweep.include_ac}};
    j["output"] = {{"dir", c.output_dir}};
    j["allow_unstable"] = c.allow_unstable;
    j["workers"] = c.workers;
    return j;
}

/// Parses config text. JSON syntax errors carry line/column positions.
inline ExperimentConfig parse_config(const std::string& text) {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config syntax error: ") + e.what());
    }
    return config_from_json(root);
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_config(buf.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline std::string serialize_config(const ExperimentConfig& c) { return config_to_json(c).dump(2); }

/// Fingerprint written into every output CSV. Where results go and how many
/// threads produce them do not change the numbers, so both are left out.
inline std::string config_hash(const ExperimentConfig& c) {
    auto j = config_to_json(c);
    j.erase("output");
    j.erase("workers");
    return hex64(fnv1a64(j.dump()));
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

inline CostModel make_cost(const ModelConfig& m) {
    return m.cost_table ? CostModel(m.kappa, *m.cost_table) : CostModel::exponential(m.kappa, m.max_tx);
}

/// Builds the SystemModel; throws StabilityError when the stability gate
/// fails and `allow_unstable` is false.
inline SystemModel make_model(const ModelConfig& m, bool allow_unstable) {
    return SystemModel(ChannelParams(m.p01, m.p11), ArrivalDist(m.arrival_probs), make_cost(m), m.q_max,
                       m.belief_depth, m.b0, allow_unstable);
}

inline State resolve_ref_state(const SystemModel& model, const RefStateConfig& ref) {
    BeliefRoot root = BeliefRoot::P01;
    if (ref.belief == "p11") root = BeliefRoot::P11;
    if (ref.belief == "b0") root = BeliefRoot::B0;
    return {ref.q, model.beliefs().index_of(root, 0)};
}

/// Applies one sweep grid value to a copy of the model block.
inline ModelConfig apply_sweep_value(ModelConfig m, const std::string& parameter, double value) {
    if (parameter == "kappa") {
        m.kappa = value;
    } else if (parameter == "p1") {
        if (m.arrival_probs.size() != 2) throw ConfigError("p1 sweep requires M_a = 1");
        m.arrival_probs = {1.0 - value, value};
    } else if (parameter == "delta_p") {
        m.p01 = m.p11 - value;
    } else if (parameter == "p11") {
        m.p11 = value;
    } else {
        (void)default_sweep_grid(parameter);
    }
    return m;
}

inline AcHyper learner_hyper(const LearnerConfig& l, bool allow_unstable) {
    AcHyper h;
    h.steps = l.steps;
    h.alpha_theta = l.alpha_theta;
    h.alpha_w = l.alpha_w;
    h.seed = l.seed;
    h.q0 = l.q0;
    h.b0 = l.b0;
    h.record_every = l.record_every;
    h.allow_unstable = allow_unstable;
    return h;
}

} // namespace gesched
