// Experiment harness: generate, train, evaluate, solve, compare.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "secsched/agents/checkpoint.hpp"
#include "secsched/agents/dqn.hpp"
#include "secsched/agents/heuristics.hpp"
#include "secsched/agents/ppo.hpp"
#include "secsched/io.hpp"
#include "secsched/metrics.hpp"
#include "secsched/scenario.hpp"
#include "secsched/simenv.hpp"
#include "secsched/solver.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace secsched;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

struct Common {
    std::string mode = "extended";
    bool no_timing = false;
    double keep_alive_ms = 60000.0;
    bool frequency_scaling = false;

    bool strict() const { return mode == "strict_paper"; }
    bool timing() const { return !no_timing; }

    EnvConfig env() const
    {
        EnvConfig c;
        c.keep_alive_ms = keep_alive_ms;
        c.frequency_scaling = frequency_scaling;
        c.strict_paper = strict();
        if (c.strict_paper) {
            c.include_wait_in_reward = false;
        }
        return c;
    }

    json echo() const
    {
        return json{{"mode", mode},
                    {"timing", timing()},
                    {"keep_alive_ms", keep_alive_ms},
                    {"frequency_scaling", frequency_scaling}};
    }
};

int env_threads()
{
    if (const char* v = std::getenv("SEC_SCHED_THREADS")) {
        const int n = std::atoi(v);
        if (n >= 1) {
            return n;
        }
    }
    return 1;
}

// Writes every file atomically, then a manifest echoing config and file hashes.
void write_outputs(const fs::path& dir, const std::map<std::string, std::string>& files, const std::string& command,
                   json config)
{
    fs::create_directories(dir);
    json hashes = json::object();
    for (const auto& [name, content] : files) {
        write_file_atomic(dir / name, content);
        hashes[name] = hex64(fnv1a64(content));
    }
    json manifest{{"command", command}, {"config", std::move(config)}, {"version", std::string(build_version())},
                  {"files", hashes}};
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::shared_ptr<const Scenario> open_scenario(const std::string& path)
{
    return std::make_shared<const Scenario>(load_scenario(path));
}

json read_json_file(const std::string& path)
{
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

std::map<std::string, std::string> evaluation_files(const EpisodeReport& report, const std::string& name)
{
    const auto s = summarize(report, name);
    return {{"episode.csv", episode_csv(report)},
            {"summary.csv", summary_csv({s})},
            {"cdf_" + name + ".csv", cdf_csv(s)}};
}

// --- generate ---

struct GenerateArgs {
    int nodes = 125, types = 10, functions = 200, requests = 2000;
    double zipf_beta = 1.0, rate = 10.0;
    std::uint64_t seed = 0;
    std::string out;
};

int run_generate(const GenerateArgs& a, const Common& common)
{
    if (a.nodes < 1 || a.types < 1 || a.functions < 1 || a.requests < 1) {
        throw UsageError("generate: --nodes, --types, --functions and --requests must be positive");
    }
    if (a.zipf_beta < 0.0 || !(a.rate > 0.0)) {
        throw UsageError("generate: --zipf-beta must be >= 0 and --rate > 0");
    }
    ScenarioParams p;
    p.num_nodes = a.nodes;
    p.num_types = a.types;
    p.num_functions = a.functions;
    p.workload.num_requests = a.requests;
    p.workload.zipf_beta = a.zipf_beta;
    p.workload.arrival_rate_per_s = a.rate;
    const auto scenario = generate_scenario(p, a.seed);
    const fs::path dir = a.out;
    fs::create_directories(dir);
    save_scenario(scenario, dir);

    json hashes = json::object();
    for (const char* f : {"scenario.json", "topology.csv", "functions.csv", "trace.csv"}) {
        hashes[f] = hex64(fnv1a64(read_file(dir / f)));
    }
    json config{{"nodes", a.nodes},         {"types", a.types}, {"functions", a.functions},
                {"requests", a.requests},   {"zipf_beta", a.zipf_beta}, {"rate", a.rate},
                {"seed", a.seed},           {"common", common.echo()}};
    json manifest{{"command", "generate"}, {"config", config}, {"version", std::string(build_version())},
                  {"files", hashes}, {"fingerprint", scenario_fingerprint(scenario)}};
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    std::cout << "fingerprint " << scenario_fingerprint(scenario) << '\n';
    return kOk;
}

// --- train ---

struct TrainArgs {
    std::string algo, scenario, out, config, resume;
    std::int64_t steps = 0;
    std::uint64_t seed = 0;
    int log_every = 1;
    int checkpoint_every = 0;
    std::int64_t max_updates = 0;
};

int run_train(const TrainArgs& a, const Common& common)
{
    if (a.steps < 1) {
        throw UsageError("train: --steps must be positive");
    }
    if (a.algo != "ppo" && (a.checkpoint_every > 0 || a.max_updates > 0)) {
        throw UsageError("train: --checkpoint-every and --max-updates apply to --algo ppo only");
    }
    const auto scenario = open_scenario(a.scenario);
    std::unique_ptr<agents::PolicyCheckpoint> resume;
    std::vector<agents::CurveRow> prior;
    if (!a.resume.empty()) {
        resume = std::make_unique<agents::PolicyCheckpoint>(agents::load_checkpoint(a.resume));
        if (resume->algo != a.algo) {
            throw DataError("--resume checkpoint holds a '" + resume->algo + "' policy, not '" + a.algo + "'");
        }
        const auto curve_path = fs::path(a.resume).parent_path() / "learning_curve.csv";
        if (fs::exists(curve_path)) {
            for (const auto& row : agents::parse_learning_curve_csv(read_file(curve_path))) {
                if (row.env_steps <= resume->env_steps) {
                    prior.push_back(row);
                }
            }
        }
    }
    json user_config = json::object();
    if (!a.config.empty()) {
        user_config = read_json_file(a.config);
    } else if (resume) {
        user_config = resume->config;
    }

    agents::TrainOptions opts;
    opts.total_steps = a.steps;
    opts.seed = a.seed;
    opts.resume = resume.get();
    opts.log = &std::cout;
    opts.log_every = a.log_every;
    opts.max_updates = a.max_updates;
    opts.checkpoint_every = a.checkpoint_every;
    opts.on_checkpoint = [&](const agents::PolicyCheckpoint& ck, const std::vector<agents::CurveRow>& rows) {
        auto all = prior;
        all.insert(all.end(), rows.begin(), rows.end());
        fs::create_directories(a.out);
        write_file_atomic(fs::path(a.out) / "checkpoint.bin", agents::serialize_checkpoint(ck));
        write_file_atomic(fs::path(a.out) / "learning_curve.csv", agents::learning_curve_csv(all));
    };

    agents::PolicyCheckpoint ckpt;
    std::vector<agents::CurveRow> curve = prior;
    json config_echo;
    if (a.algo == "ppo") {
        auto cfg = agents::ppo_config_from_json(user_config);
        if (common.strict()) {
            cfg.advantage_mode = agents::AdvantageMode::OneStep;
        }
        auto res = agents::train_ppo(scenario, common.env(), cfg, opts);
        curve.insert(curve.end(), res.curve.begin(), res.curve.end());
        ckpt = std::move(res.checkpoint);
        config_echo = agents::to_json(cfg);
    } else {
        const auto cfg = agents::dqn_config_from_json(user_config);
        auto res = agents::train_dqn(scenario, common.env(), cfg, opts);
        curve.insert(curve.end(), res.curve.begin(), res.curve.end());
        ckpt = std::move(res.checkpoint);
        config_echo = agents::to_json(cfg);
    }
    ckpt.metadata = json{{"scenario_fingerprint", scenario_fingerprint(*scenario)}, {"env", common.echo()}};

    json config{{"algo", a.algo},
                {"scenario", a.scenario},
                {"scenario_fingerprint", scenario_fingerprint(*scenario)},
                {"steps", a.steps},
                {"seed", ckpt.seed},
                {"resume", a.resume},
                {"agent", config_echo},
                {"common", common.echo()}};
    write_outputs(a.out,
                  {{"checkpoint.bin", agents::serialize_checkpoint(ckpt)},
                   {"learning_curve.csv", agents::learning_curve_csv(curve)}},
                  "train", config);
    return kOk;
}

// --- evaluate ---

struct EvaluateArgs {
    std::string policy, scenario, out, name;
    std::uint64_t seed = 0;
};

int run_evaluate(const EvaluateArgs& a, const Common& common)
{
    const auto scenario = open_scenario(a.scenario);
    Policy policy;
    std::string name = a.name;
    json policy_echo;
    if (a.policy == "greedy") {
        policy = agents::greedy_latency_policy();
        policy_echo = "greedy";
    } else if (a.policy == "random") {
        policy = agents::random_valid_policy(a.seed);
        policy_echo = "random";
    } else {
        const auto ckpt = agents::load_checkpoint(a.policy);
        agents::check_compatible(ckpt, static_cast<int>(scenario->nodes.size()));
        if (ckpt.algo == "ppo") {
            policy = agents::ppo_policy(
                std::make_shared<const agents::ActorCritic>(agents::actor_critic_from_checkpoint(ckpt)));
        } else if (ckpt.algo == "dqn") {
            policy = agents::dqn_policy(
                std::make_shared<const nn::Mlp<float>>(agents::q_network_from_checkpoint(ckpt)));
        } else {
            throw DataError(a.policy + ": unknown policy algorithm '" + ckpt.algo + "'");
        }
        policy_echo = json{{"checkpoint", a.policy},
                           {"algo", ckpt.algo},
                           {"hash", hex64(fnv1a64(read_file(a.policy)))}};
        if (name.empty()) {
            name = ckpt.algo;
        }
    }
    if (name.empty()) {
        name = a.policy;
    }
    const auto report = run_episode(policy, scenario, common.env(), a.seed, common.timing());
    auto files = evaluation_files(report, name);
    std::cout << summary_line(summarize(report, name)) << '\n';
    json config{{"policy", policy_echo},
                {"name", name},
                {"scenario", a.scenario},
                {"scenario_fingerprint", scenario_fingerprint(*scenario)},
                {"seed", a.seed},
                {"common", common.echo()}};
    write_outputs(a.out, files, "evaluate", config);
    return kOk;
}

// --- solve ---

struct SolveArgs {
    std::string method, scenario, out, name;
    std::int64_t budget = 0;
    int batch_size = 16;
    int population = 64;
    int generations = 500;
    double mutation = 0.1;
    std::uint64_t seed = 0;
};

int run_solve(const SolveArgs& a, const Common& common)
{
    if (a.batch_size < 1) {
        throw UsageError("solve: --batch-size must be positive");
    }
    if (a.budget < 0) {
        throw UsageError("solve: --budget must be non-negative");
    }
    const auto scenario = open_scenario(a.scenario);
    StaticSolver solver;
    json solver_echo;
    if (a.method == "brute") {
        const std::int64_t budget = a.budget > 0 ? a.budget : kDefaultBruteForceBudget;
        solver = [budget](const StaticInstance& inst) { return brute_force(inst, budget); };
        solver_echo = json{{"method", "brute"}, {"budget", budget}};
    } else {
        EvolveConfig cfg;
        cfg.population = a.population;
        cfg.mutation_rate = a.mutation;
        cfg.seed = a.seed;
        cfg.threads = env_threads();
        cfg.max_evaluations = a.budget;
        cfg.generations = a.budget > 0 ? static_cast<int>(a.budget / std::max(1, a.population) + 1) : a.generations;
        solver = [cfg](const StaticInstance& inst) { return evolve(inst, cfg); };
        solver_echo = json{{"method", "evolve"},       {"budget", a.budget},     {"population", cfg.population},
                           {"generations", cfg.generations}, {"mutation", cfg.mutation_rate},
                           {"seed", cfg.seed}};
    }
    auto run = solve_trace_in_batches(scenario, static_cast<std::size_t>(a.batch_size), solver, common.env(),
                                      common.timing());
    if (!common.timing()) {
        for (auto& b : run.batches) {
            b.wall_time_ms = 0.0;
        }
    }
    const std::string name = a.name.empty() ? a.method : a.name;
    json config{{"solver", solver_echo},
                {"batch_size", a.batch_size},
                {"name", name},
                {"scenario", a.scenario},
                {"scenario_fingerprint", scenario_fingerprint(*scenario)},
                {"common", common.echo()}};
    auto files = evaluation_files(run.report, name);
    files["solver_result.json"] = solver_result_json(run.batches, config.dump());
    std::cout << summary_line(summarize(run.report, name)) << '\n';
    write_outputs(a.out, files, "solve", config);
    return kOk;
}

// --- compare ---

struct CompareArgs {
    std::vector<std::string> inputs;
    std::string out;
};

int run_compare(const CompareArgs& a, const Common& common)
{
    if (a.inputs.size() < 2) {
        throw UsageError("compare: at least two --inputs are required");
    }
    std::vector<MetricSummary> summaries;
    json hashes = json::array();
    for (const auto& in : a.inputs) {
        const fs::path p = fs::is_directory(in) ? fs::path(in) / "summary.csv" : fs::path(in);
        const auto text = read_file(p);
        hashes.push_back({{"input", in}, {"hash", hex64(fnv1a64(text))}});
        for (auto& s : parse_summary_csv(text)) {
            summaries.push_back(std::move(s));
        }
    }
    const auto rows = compare(summaries);
    json config{{"inputs", hashes}, {"common", common.echo()}};
    write_outputs(a.out, {{"compare.csv", compare_csv(rows)}}, "compare", config);
    for (const auto& r : rows) {
        std::cout << summary_line(r.summary) << " mean_ratio=" << format_double(r.mean_ratio)
                  << " speedup=" << format_double(r.speedup) << '\n';
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Serverless edge container scheduling experiments"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string(build_version()));
    Common common;
    app.add_option("--mode", common.mode, "strict_paper pins every extension off")
        ->check(CLI::IsMember({"strict_paper", "extended"}));
    app.add_flag("--no-timing", common.no_timing, "record zero decision and wall times for reproducible outputs");
    app.add_option("--keep-alive-ms", common.keep_alive_ms, "idle container retention")->check(CLI::NonNegativeNumber);
    app.add_flag("--frequency-scaling", common.frequency_scaling, "scale compute time by 2.4 GHz / node frequency");

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "generate a synthetic scenario");
    g->add_option("--nodes", gen.nodes);
    g->add_option("--types", gen.types);
    g->add_option("--functions", gen.functions);
    g->add_option("--requests", gen.requests);
    g->add_option("--zipf-beta", gen.zipf_beta);
    g->add_option("--rate", gen.rate, "arrivals per second");
    g->add_option("--seed", gen.seed);
    g->add_option("--out", gen.out)->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train a PPO or DQN scheduler");
    t->add_option("--algo", tr.algo)->required()->check(CLI::IsMember({"ppo", "dqn"}));
    t->add_option("--scenario", tr.scenario)->required();
    t->add_option("--steps", tr.steps)->required();
    t->add_option("--seed", tr.seed);
    t->add_option("--out", tr.out)->required();
    t->add_option("--config", tr.config, "JSON file with agent hyperparameters");
    t->add_option("--resume", tr.resume, "checkpoint to continue from");
    t->add_option("--log-every", tr.log_every, "updates between progress lines");
    t->add_option("--checkpoint-every", tr.checkpoint_every, "updates between intermediate checkpoints (ppo)")
        ->check(CLI::NonNegativeNumber);
    t->add_option("--max-updates", tr.max_updates, "stop after this many updates, resumable later (ppo)")
        ->check(CLI::NonNegativeNumber);

    EvaluateArgs ev;
    auto* e = app.add_subcommand("evaluate", "replay a trace under a policy");
    e->add_option("--policy", ev.policy, "checkpoint path, greedy or random")->required();
    e->add_option("--scenario", ev.scenario)->required();
    e->add_option("--seed", ev.seed);
    e->add_option("--out", ev.out)->required();
    e->add_option("--name", ev.name, "label in summary and cdf files");

    SolveArgs so;
    auto* s = app.add_subcommand("solve", "place the trace in batches with an offline solver");
    s->add_option("--method", so.method)->required()->check(CLI::IsMember({"brute", "evolve"}));
    s->add_option("--budget", so.budget, "evaluation budget per batch");
    s->add_option("--batch-size", so.batch_size);
    s->add_option("--population", so.population);
    s->add_option("--generations", so.generations, "used when no budget is set");
    s->add_option("--mutation", so.mutation);
    s->add_option("--scenario", so.scenario)->required();
    s->add_option("--seed", so.seed);
    s->add_option("--out", so.out)->required();
    s->add_option("--name", so.name);

    CompareArgs co;
    auto* c = app.add_subcommand("compare", "tabulate summaries against the best");
    c->add_option("--inputs", co.inputs, "run directories or summary.csv files")->required();
    c->add_option("--out", co.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& ok) {
        return app.exit(ok);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kUsage;
    }

    try {
        if (g->parsed()) {
            return run_generate(gen, common);
        }
        if (t->parsed()) {
            return run_train(tr, common);
        }
        if (e->parsed()) {
            return run_evaluate(ev, common);
        }
        if (s->parsed()) {
            return run_solve(so, common);
        }
        return run_compare(co, common);
    } catch (const UsageError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kUsage;
    } catch (const DataError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kData;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kRuntime;
    }
}
