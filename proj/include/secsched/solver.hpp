#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "secsched/latency.hpp"
#include "secsched/simenv.hpp"

namespace secsched {

// A finite batch of requests to place at once, with the cluster resources
// available when the batch starts.
struct StaticInstance {
    std::shared_ptr<const Scenario> world;  // nodes, functions and link model; trace unused
    std::vector<Request> requests;
    std::vector<int> idle_containers;  // [node * num_functions + function]
    std::vector<int> free_cpu_cores;
    std::vector<double> free_mem_mb;
    LatencyOptions latency;

    std::size_t num_nodes() const { return world->nodes.size(); }
    int idle(int node, int function) const
    {
        return idle_containers[static_cast<std::size_t>(node) * world->functions.size() +
                               static_cast<std::size_t>(function)];
    }

    // Empty cluster: full capacities and no idle containers.
    static StaticInstance fresh(std::shared_ptr<const Scenario> world, std::vector<Request> requests,
                                LatencyOptions latency = {});
    // Snapshot of an environment's cluster with requests [begin, end) of its trace.
    static StaticInstance from_environment(const Environment& env, std::size_t begin, std::size_t end);
};

struct Placement {
    int node = 0;
    bool new_container = false;

    bool operator==(const Placement&) const = default;
};

// One placement per request: exactly one node each by construction.
using AssignmentVector = std::vector<Placement>;

struct Evaluation {
    double objective_ms = 0.0;
    double violation = 0.0;  // sum of capacity-normalized positive residuals

    bool feasible() const { return violation == 0.0; }
};

struct SolverResult {
    AssignmentVector best;
    double objective_ms = 0.0;
    bool feasible = false;
    double violation = 0.0;
    std::int64_t evaluations = 0;
    double wall_time_ms = 0.0;
    std::vector<double> incumbent_history;  // best fitness after each generation (evolve only)
};

Evaluation evaluate_assignment(const StaticInstance& inst, const AssignmentVector& assign);

// Sequential myopic placement honoring residual capacity; SLO is relaxed when
// nothing meets it.
AssignmentVector greedy_assignment(const StaticInstance& inst);

inline constexpr std::int64_t kDefaultBruteForceBudget = 10'000'000;

// Exact minimizer by depth-first enumeration with partial-cost pruning.
// When no feasible assignment exists, returns the one with least violation
// (objective as tie-break) and feasible = false.
SolverResult brute_force(const StaticInstance& inst, std::int64_t budget_evals = kDefaultBruteForceBudget);

struct EvolveConfig {
    int population = 64;
    int generations = 500;
    double mutation_rate = 0.1;
    std::uint64_t seed = 0;
    std::int64_t max_evaluations = 0;  // 0 means no evaluation budget
    double violation_scale = 1e6;      // ms per unit of normalized violation
    int elite = 2;
    int tournament = 3;
    double crossover_rate = 0.9;
    bool seed_with_greedy = true;
    std::vector<AssignmentVector> initial_population;
    int threads = 1;
};

// Penalty fitness: feasible candidates rank by objective, infeasible ones at
// omega + scale * violation, where omega bounds every objective from above.
double penalty_fitness(const Evaluation& e, double omega, double violation_scale);

// Sum over requests of their worst single-placement latency.
double objective_upper_bound(const StaticInstance& inst);

SolverResult evolve(const StaticInstance& inst, const EvolveConfig& config);

using StaticSolver = std::function<SolverResult(const StaticInstance&)>;

struct BatchRun {
    EpisodeReport report;
    std::vector<SolverResult> batches;
    double replayed_objective_ms = 0.0;  // sum of cold+comp+comm over replayed requests
    double solver_objective_ms = 0.0;    // sum of solver-reported objectives
};

// Partitions the trace into consecutive batches, solves each against the
// simulator state at batch start and replays the chosen placements.
BatchRun solve_trace_in_batches(std::shared_ptr<const Scenario> scenario, std::size_t batch_size,
                                const StaticSolver& solver, EnvConfig config = {}, bool record_timing = true);

std::string solver_result_json(const std::vector<SolverResult>& batches, const std::string& config_echo_json);

}  // namespace secsched
