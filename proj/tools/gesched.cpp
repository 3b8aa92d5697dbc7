// gesched: command-line front end for the scheduling toolkit.
//
//   gesched solve    --config cfg.json [--beta 0.95]
//   gesched learn    --config cfg.json [--seed N]
//   gesched simulate --config cfg.json --policy rvi|vi|always-one|iid-mdp|theta-file [--theta f]
//   gesched sweep    --config cfg.json [--workers N]
//   gesched verify   --config cfg.json
//
// Exit codes: 0 success, 1 property failure, 2 configuration error,
// 3 numeric failure.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "gesched/gesched.hpp"

namespace fs = std::filesystem;
using namespace gesched;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitProperty = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Overrides {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<double> beta;
    bool allow_unstable = false;
    std::optional<int> workers;
    // simulate / learn
    std::string policy;
    std::string theta_file;
    std::optional<int> runs;
    std::optional<long> steps;
    // verify negative controls
    bool inject_convex = false;
    bool zero_sharpness = false;
};

ExperimentConfig resolve_config(const Overrides& o) {
    ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
    if (!o.out_dir.empty()) c.output_dir = o.out_dir;
    if (o.seed) {
        c.learner.seed = *o.seed;
        c.simulate.seed = *o.seed;
    }
    if (o.beta) c.solver.beta = *o.beta;
    if (o.allow_unstable) c.allow_unstable = true;
    if (o.workers) c.workers = *o.workers;
    if (!o.policy.empty()) c.simulate.policy = o.policy;
    if (!o.theta_file.empty()) c.simulate.theta_file = o.theta_file;
    validate(c);
    return c;
}

std::ofstream open_output(const ExperimentConfig& c, const std::string& name) {
    std::error_code ec;
    fs::create_directories(c.output_dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + c.output_dir + "': " + ec.message());
    const fs::path path = fs::path(c.output_dir) / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    return out;
}

/// Runs body(i) for i in [0, n) on up to `workers` threads. Results must be
/// stored by index; the first exception is rethrown after all threads join.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body) {
    const auto threads = static_cast<std::size_t>(std::max(1, workers));
    if (threads == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::string run_file(const std::string& stem, int runs, int r) {
    return runs == 1 ? stem + ".csv" : stem + "_run" + std::to_string(r) + ".csv";
}

// ---------------------------------------------------------------------------

int cmd_solve(const ExperimentConfig& c) {
    const SystemModel model = make_model(c.model, c.allow_unstable);
    const CsvMeta meta{config_hash(c), 0};
    PolicyTable policy;
    std::string mode;
    double gain = std::nan("");
    long iterations = 0;
    double residual = 0.0;
    if (c.solver.beta) {
        mode = "vi";
        auto vi = value_iteration(model, *c.solver.beta, c.solver.tol, c.solver.max_iter);
        auto out = open_output(c, "values.csv");
        write_value_csv(out, model, vi.values, meta);
        policy = vi.policy;
        iterations = vi.iterations;
        residual = vi.residual;
    } else {
        mode = "rvi";
        const State ref = resolve_ref_state(model, c.solver.ref_state);
        auto r = rvi(model, ref, c.solver.tol, c.solver.max_iter);
        auto out = open_output(c, "values.csv");
        write_value_csv(out, model, r.h, meta);
        policy = r.policy;
        gain = r.zeta;
        iterations = r.iterations;
        residual = r.residual;
    }
    {
        auto out = open_output(c, "policy.csv");
        write_policy_csv(out, model, policy, meta);
    }

    const StructureReport structure = verify_threshold_structure(policy);
    {
        auto out = open_output(c, "structure.csv");
        CsvWriter csv(out, meta, {"q", "belief", "previous_action", "action", "kind", "region"});
        for (const auto& v : structure.violations) {
            csv.cell(v.q).cell(model.beliefs().value(v.b_idx)).cell(v.previous_action).cell(v.action)
                .cell(to_string(v.kind)).cell(v.q < structure.q_max ? "interior" : "boundary");
            csv.end_row();
        }
    }
    if (structure.pass()) {
        auto out = open_output(c, "thresholds.csv");
        write_threshold_csv(out, extract_thresholds(policy, model.beliefs(), model.max_tx()), meta);
    }
    {
        auto out = open_output(c, "summary.csv");
        CsvWriter csv(out, meta, {"key", "value"});
        csv.cell("mode").cell(mode);
        csv.end_row();
        if (mode == "rvi") {
            csv.cell("zeta").cell(gain);
            csv.end_row();
            csv.cell("avg_reward").cell(model.reward_offset() - gain);
            csv.end_row();
        } else {
            csv.cell("beta").cell(*c.solver.beta);
            csv.end_row();
        }
        csv.cell("iterations").cell(static_cast<long long>(iterations));
        csv.end_row();
        csv.cell("residual").cell(residual);
        csv.end_row();
        csv.cell("structure").cell(structure.interior_violations() == 0 ? "pass" : "fail");
        csv.end_row();
        csv.cell("interior_violations").cell(structure.interior_violations());
        csv.end_row();
        csv.cell("boundary_violations").cell(structure.boundary_violations());
        csv.end_row();
    }

    std::cout << "mode " << mode << '\n';
    if (mode == "rvi") std::cout << "zeta " << format_double(gain) << '\n';
    std::cout << "iterations " << iterations << '\n'
              << "residual " << format_double(residual) << '\n'
              << "structure " << (structure.interior_violations() == 0 ? "pass" : "fail") << " (interior "
              << structure.interior_violations() << ", boundary " << structure.boundary_violations() << ")\n";
    return kExitOk;
}

int cmd_learn(const ExperimentConfig& c) {
    const SystemModel model = make_model(c.model, c.allow_unstable);
    const int runs = c.learner.runs;
    std::vector<TrainResult> results(static_cast<std::size_t>(runs));
    parallel_for(results.size(), c.workers, [&](std::size_t r) {
        AcHyper h = learner_hyper(c.learner, c.allow_unstable);
        h.run_index = r;
        results[r] = train(model, h);
    });

    const CsvMeta meta{config_hash(c), c.learner.seed};
    for (int r = 0; r < runs; ++r) {
        const auto& res = results[static_cast<std::size_t>(r)];
        {
            auto out = open_output(c, run_file("curve", runs, r));
            write_curve_csv(out, res.curve, meta);
        }
        {
            auto out = open_output(c, run_file("theta", runs, r));
            write_theta_csv(out, res.theta, meta);
        }
        {
            auto out = open_output(c, run_file("boundaries", runs, r));
            write_boundary_csv(out, res.boundaries, meta);
        }
    }
    auto out = open_output(c, "learn_summary.csv");
    CsvWriter csv(out, meta, {"run", "final_avg_reward", "final_window_reward", "slope_1"});
    for (int r = 0; r < runs; ++r) {
        const auto& res = results[static_cast<std::size_t>(r)];
        csv.cell(r).cell(res.final_avg_reward).cell(res.final_window_reward).cell(res.theta.slope(1));
        csv.end_row();
        std::cout << "run " << r << " final_window_reward " << format_double(res.final_window_reward)
                  << " slope_1 " << format_double(res.theta.slope(1)) << '\n';
    }
    return kExitOk;
}

AnyPolicy load_policy(const ExperimentConfig& c, const SystemModel& model) {
    const auto& name = c.simulate.policy;
    if (name == "rvi") {
        return TablePolicy{rvi(model, resolve_ref_state(model, c.solver.ref_state), c.solver.tol,
                               c.solver.max_iter)
                               .policy};
    }
    if (name == "vi") {
        if (!c.solver.beta) throw ConfigError("policy 'vi' needs a discount factor (--beta or solver.beta)");
        return TablePolicy{value_iteration(model, *c.solver.beta, c.solver.tol, c.solver.max_iter).policy};
    }
    if (name == "always-one") return TablePolicy{baseline_always_one(model, c.simulate.idle_when_empty)};
    if (name == "iid-mdp") return TablePolicy{baseline_iid_mdp(model, c.solver.tol)};
    if (c.simulate.theta_file.empty()) throw ConfigError("policy 'theta-file' needs --theta FILE");
    std::ifstream in(c.simulate.theta_file);
    if (!in) throw ConfigError("cannot open theta file '" + c.simulate.theta_file + "'");
    ThetaVector theta = theta_from_csv(read_csv([&](std::string& line) { return bool(std::getline(in, line)); }));
    if (theta.max_tx() != model.max_tx()) throw ConfigError("theta file does not match M_d");
    return theta;
}

SimOptions sim_options(const SimulateConfig& s) {
    SimOptions opt;
    opt.steps = s.steps;
    opt.q0 = s.q0;
    opt.b0 = s.b0;
    opt.burn_in = s.burn_in;
    return opt;
}

int cmd_simulate(const ExperimentConfig& c) {
    const SystemModel model = make_model(c.model, c.allow_unstable);
    const AnyPolicy policy = load_policy(c, model);
    const SimOptions opt = sim_options(c.simulate);
    std::vector<RunStats> stats(static_cast<std::size_t>(c.simulate.runs));
    parallel_for(stats.size(), c.workers, [&](std::size_t r) {
        stats[r] = simulate(policy, model, opt, RngSpec{c.simulate.seed, r});
    });
    auto out = open_output(c, "simulate.csv");
    auto csv = make_runstats_writer(out, CsvMeta{config_hash(c), c.simulate.seed});
    for (std::size_t r = 0; r < stats.size(); ++r) {
        write_runstats_row(csv, r, c.simulate.policy, stats[r]);
        std::cout << "run " << r << " mean_cost " << format_double(stats[r].mean_cost) << " stderr "
                  << format_double(stats[r].stderr_cost) << '\n';
    }
    return kExitOk;
}

struct SweepRow {
    std::string policy;
    double reward;
    double cost;
    double stderr_;
};

int cmd_sweep(const ExperimentConfig& c) {
    const auto grid = c.sweep.values.empty() ? default_sweep_grid(c.sweep.parameter) : c.sweep.values;
    std::vector<std::vector<SweepRow>> rows(grid.size());
    std::vector<std::string> skipped(grid.size());
    parallel_for(grid.size(), c.workers, [&](std::size_t g) {
        const ModelConfig mc = apply_sweep_value(c.model, c.sweep.parameter, grid[g]);
        std::optional<SystemModel> model;
        try {
            model.emplace(make_model(mc, c.allow_unstable));
        } catch (const StabilityError& e) {
            skipped[g] = e.what();
            return;
        }
        const double offset = model->reward_offset();
        auto exact = [&](const std::string& name, double cost) {
            rows[g].push_back({name, offset - cost, cost, 0.0});
        };
        const auto opt = rvi(*model, resolve_ref_state(*model, c.solver.ref_state), c.solver.tol, c.solver.max_iter);
        exact("optimal", opt.zeta);
        exact("always-one", evaluate_policy_exact(*model, baseline_always_one(*model, c.simulate.idle_when_empty)));
        exact("iid-mdp", evaluate_policy_exact(*model, baseline_iid_mdp(*model, c.solver.tol)));
        if (c.sweep.include_ac) {
            std::vector<double> finals;
            for (int r = 0; r < c.sweep.runs; ++r) {
                AcHyper h = learner_hyper(c.learner, c.allow_unstable);
                h.run_index = static_cast<std::uint64_t>(r);
                finals.push_back(train(*model, h).final_window_reward);
            }
            double mean = 0.0;
            for (double x : finals) mean += x;
            mean /= static_cast<double>(finals.size());
            double var = 0.0;
            for (double x : finals) var += (x - mean) * (x - mean);
            const double se =
                finals.size() > 1 ? std::sqrt(var / static_cast<double>(finals.size() - 1) / finals.size()) : 0.0;
            rows[g].push_back({"actor-critic", mean, offset - mean, se});
        }
    });

    auto out = open_output(c, "sweep.csv");
    CsvWriter csv(out, CsvMeta{config_hash(c), c.learner.seed},
                  {"sweep_param", "value", "policy", "avg_reward", "avg_cost", "stderr"});
    for (std::size_t g = 0; g < grid.size(); ++g) {
        if (!skipped[g].empty()) {
            std::cerr << "warning: skipping " << c.sweep.parameter << "=" << format_double(grid[g]) << ": "
                      << skipped[g] << '\n';
            continue;
        }
        for (const auto& row : rows[g]) {
            csv.cell(c.sweep.parameter).cell(grid[g]).cell(row.policy).cell(row.reward).cell(row.cost)
                .cell(row.stderr_);
            csv.end_row();
        }
    }
    return kExitOk;
}

int cmd_verify(const ExperimentConfig& c, const Overrides& o) {
    const SystemModel model = make_model(c.model, c.allow_unstable);
    bool all = true;
    auto report = [&](const char* name, bool pass, const std::string& detail) {
        std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << '\n';
        all = all && pass;
    };

    const auto r = rvi(model, resolve_ref_state(model, c.solver.ref_state), c.solver.tol, c.solver.max_iter);
    const auto structure = verify_threshold_structure(r.policy);
    report("structure", structure.interior_violations() == 0,
           std::to_string(structure.interior_violations()) + " interior violations, " +
               std::to_string(structure.boundary_violations()) + " at q=Q_max");

    std::size_t decreases = 0;
    for (int q = 0; q < model.q_max(); ++q)
        for (std::size_t b = 1; b < model.num_beliefs(); ++b) decreases += r.policy.at(q, b) < r.policy.at(q, b - 1);
    report("monotone-actions", decreases == 0, std::to_string(decreases) + " decreases along sorted beliefs");

    const double beta = c.solver.beta.value_or(0.95);
    ValueTable V = value_iteration(model, beta, c.solver.tol, c.solver.max_iter).values;
    if (o.inject_convex) {
        for (int q = 0; q <= V.q_max; ++q)
            for (std::size_t b = 0; b < V.num_beliefs; ++b) {
                const double x = model.beliefs().value(b);
                V.at(q, b) = static_cast<double>(q) + 10.0 * (x - 0.5) * (x - 0.5);
            }
    }
    const auto shape = check_value_properties(V, model.beliefs());
    report("concavity", shape.concave(), "worst chord gap " + format_double(shape.worst_concavity_gap));
    report("monotone-in-q", shape.monotone(), "worst increase " + format_double(shape.worst_monotonicity_gap));

    report("acoe-residual", r.residual <= 10.0 * c.solver.tol, "residual " + format_double(r.residual));

    const auto grad = gradient_check(model.max_tx(), model.q_max(), 100, RngSpec{c.learner.seed, 0}, o.zero_sharpness);
    report("gradient", grad.pass(),
           "max relative error " + format_double(grad.max_rel_error) + ", score identity " +
               format_double(grad.max_identity_error));

    const auto cal = belief_calibration(model, TablePolicy{r.policy}, sim_options(c.simulate),
                                        c.simulate.calibration_bins, RngSpec{c.simulate.seed, 0});
    report("belief-calibration", cal.pass(), std::to_string(cal.checked_bins()) + " bins checked");

    return all ? kExitOk : kExitProperty;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transmission scheduling over a Gilbert-Elliott channel with ACK/NACK feedback"};
    app.require_subcommand(1);
    app.fallthrough();

    Overrides o;
    app.add_option("--config", o.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    app.add_option("--out", o.out_dir, "output directory");
    app.add_option("--seed", o.seed, "master seed (learner and simulator)");
    app.add_option("--beta", o.beta, "discount factor; solve switches to discounted VI");
    app.add_flag("--allow-unstable", o.allow_unstable, "skip the M_d * mu1 > E[A] gate");
    app.add_option("--workers", o.workers, "parallel runs / grid points")->check(CLI::PositiveNumber);

    auto* solve = app.add_subcommand("solve", "RVI (or VI with --beta); values, policy, thresholds");
    auto* learn = app.add_subcommand("learn", "actor-critic training");
    learn->add_option("--runs", o.runs, "independent runs")->check(CLI::PositiveNumber);
    learn->add_option("--steps", o.steps, "training steps T")->check(CLI::PositiveNumber);
    auto* sim = app.add_subcommand("simulate", "Monte-Carlo runs of a policy");
    sim->add_option("--policy", o.policy, "rvi | vi | always-one | iid-mdp | theta-file")
        ->check(CLI::IsMember({"rvi", "vi", "always-one", "iid-mdp", "theta-file"}));
    sim->add_option("--theta", o.theta_file, "theta CSV written by learn");
    sim->add_option("--runs", o.runs, "independent runs")->check(CLI::PositiveNumber);
    sim->add_option("--steps", o.steps, "slots per run")->check(CLI::PositiveNumber);
    auto* sweep = app.add_subcommand("sweep", "baseline comparison over a parameter grid");
    auto* verify = app.add_subcommand("verify", "structural and numerical property suite");
    verify->add_flag("--inject-convex", o.inject_convex, "replace V by a convex-in-b table (negative control)");
    verify->add_flag("--zero-sharpness", o.zero_sharpness, "gradient check with all sharpness set to 0");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        ExperimentConfig c = resolve_config(o);
        if (o.runs) {
            if (learn->parsed()) c.learner.runs = *o.runs;
            if (sim->parsed()) c.simulate.runs = *o.runs;
        }
        if (o.steps) {
            if (learn->parsed()) c.learner.steps = *o.steps;
            if (sim->parsed()) c.simulate.steps = *o.steps;
        }
        if (solve->parsed()) return cmd_solve(c);
        if (learn->parsed()) return cmd_learn(c);
        if (sim->parsed()) return cmd_simulate(c);
        if (sweep->parsed()) return cmd_sweep(c);
        if (verify->parsed()) return cmd_verify(c, o);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ConvergenceError& e) {
        std::cerr << "numeric error: " << e.what() << " (iterations " << e.iterations() << ", residual "
                  << e.residual() << ")\n";
        return kExitNumeric;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    }
    return kExitConfig;
}
