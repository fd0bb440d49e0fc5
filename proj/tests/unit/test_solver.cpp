#include <doctest.h>

#include <cmath>
#include <limits>
#include <memory>

#include "secsched/agents/heuristics.hpp"
#include "secsched/io.hpp"
#include "secsched/latency.hpp"
#include "secsched/rng.hpp"
#include "secsched/solver.hpp"

using namespace secsched;

namespace {

std::shared_ptr<Scenario> world(int nodes, int functions, int requests, std::uint64_t seed)
{
    ScenarioParams p;
    p.num_nodes = nodes;
    p.num_types = 2;
    p.num_functions = functions;
    p.workload.num_requests = requests;
    return std::make_shared<Scenario>(generate_scenario(p, seed));
}

// Random instance with a few idle containers sprinkled in.
StaticInstance random_instance(int nodes, int requests, std::uint64_t seed)
{
    auto w = world(nodes, 4, requests, seed);
    auto inst = StaticInstance::fresh(w, w->trace);
    Rng rng(seed + 1000);
    for (auto& idle : inst.idle_containers) {
        idle = rng.uniform() < 0.3 ? 1 : 0;
    }
    return inst;
}

// Unpruned enumeration of all (2|V|)^|K| assignments.
double exhaustive_optimum(const StaticInstance& inst, bool& feasible)
{
    const std::size_t choices = 2 * inst.num_nodes();
    const std::size_t k = inst.requests.size();
    std::size_t total = 1;
    for (std::size_t i = 0; i < k; ++i) {
        total *= choices;
    }
    double best = std::numeric_limits<double>::infinity();
    AssignmentVector a(k);
    for (std::size_t code = 0; code < total; ++code) {
        std::size_t c = code;
        for (std::size_t i = 0; i < k; ++i) {
            a[i] = Placement{static_cast<int>((c % choices) / 2), (c % choices) % 2 == 1};
            c /= choices;
        }
        const auto e = evaluate_assignment(inst, a);
        if (e.feasible()) {
            best = std::min(best, e.objective_ms);
        }
    }
    feasible = std::isfinite(best);
    return best;
}

}  // namespace

TEST_CASE("evaluate assignment")
{
    auto w = world(1, 2, 2, 3);
    auto one = StaticInstance::fresh(w, {w->trace[0]});
    const auto e = evaluate_assignment(one, {Placement{0, true}});
    const auto b = end_to_end(*w, w->trace[0], 0, true);
    CHECK(e.objective_ms == b.cold_ms + b.comp_ms + b.comm_ms);

    // Reuse with no idle container is a violation.
    CHECK(evaluate_assignment(one, {Placement{0, false}}).violation > 0.0);

    auto two = StaticInstance::fresh(w, {w->trace[0], w->trace[1]});
    two.requests[0].cpu_cores = w->nodes[0].cpu_cores;
    two.requests[1].cpu_cores = 1;
    CHECK(evaluate_assignment(two, {Placement{0, true}, Placement{0, true}}).violation > 0.0);

    CHECK(evaluate_assignment(two, {Placement{0, true}, Placement{0, true}}).objective_ms ==
          evaluate_assignment(two, {Placement{0, true}, Placement{0, true}}).objective_ms);
}

TEST_CASE("brute force basics")
{
    auto w = world(1, 2, 1, 4);
    auto inst = StaticInstance::fresh(w, w->trace);
    inst.requests[0].slo_ms = 1e9;
    const auto r = brute_force(inst);
    CHECK(r.feasible);
    REQUIRE(r.best.size() == 1);
    CHECK(r.best[0] == Placement{0, true});
    CHECK(r.objective_ms == end_to_end(*w, inst.requests[0], 0, true).total_ms);

    // An idle container saves exactly the cold start; the oracle takes it.
    inst.idle_containers[static_cast<std::size_t>(inst.requests[0].function_id)] = 1;
    const auto reuse = brute_force(inst);
    CHECK(reuse.best[0] == Placement{0, false});

    auto big = random_instance(4, 12, 2);
    CHECK_THROWS_AS(brute_force(big, 1000), UsageError);
}

TEST_CASE("brute force equals exhaustive enumeration")
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const int nodes = 2 + static_cast<int>(seed % 3);
        const auto inst = random_instance(nodes, 4, seed);
        bool feasible = false;
        const double best = exhaustive_optimum(inst, feasible);
        const auto r = brute_force(inst);
        CHECK(r.feasible == feasible);
        if (feasible) {
            CHECK(r.objective_ms == best);
        }
    }
}

TEST_CASE("oracle dominates random feasible assignments")
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto inst = random_instance(4, 6, 100 + seed);
        const auto oracle = brute_force(inst);
        Rng rng(seed);
        for (int s = 0; s < 10000; ++s) {
            AssignmentVector a(inst.requests.size());
            for (auto& p : a) {
                p = Placement{static_cast<int>(rng.index(4)), rng.uniform() < 0.5};
            }
            const auto e = evaluate_assignment(inst, a);
            if (e.feasible()) {
                REQUIRE(oracle.feasible);
                CHECK(oracle.objective_ms <= e.objective_ms);
            }
        }
    }
}

TEST_CASE("evolve invariants")
{
    std::uint64_t seed = 7;
    while (!brute_force(random_instance(4, 6, seed)).feasible) {
        ++seed;
    }
    const auto inst = random_instance(4, 6, seed);
    const auto oracle = brute_force(inst);

    EvolveConfig cfg;
    cfg.seed = 3;
    cfg.generations = 200;
    const auto r = evolve(inst, cfg);
    for (std::size_t i = 1; i < r.incumbent_history.size(); ++i) {
        CHECK(r.incumbent_history[i] <= r.incumbent_history[i - 1]);
    }

    EvolveConfig fixed;
    fixed.mutation_rate = 0.0;
    fixed.seed_with_greedy = false;
    fixed.generations = 50;
    fixed.initial_population = {oracle.best};
    const auto f = evolve(inst, fixed);
    CHECK(f.feasible);
    CHECK(f.objective_ms == oracle.objective_ms);

    EvolveConfig small;
    small.population = 3;
    CHECK_THROWS_AS(evolve(inst, small), UsageError);
}

TEST_CASE("penalty ordering")
{
    const auto inst = random_instance(3, 5, 9);
    const double omega = objective_upper_bound(inst);
    Rng rng(1);
    double worst_feasible = -1.0, best_infeasible = std::numeric_limits<double>::infinity();
    for (int s = 0; s < 5000; ++s) {
        AssignmentVector a(inst.requests.size());
        for (auto& p : a) {
            p = Placement{static_cast<int>(rng.index(3)), rng.uniform() < 0.5};
        }
        const auto e = evaluate_assignment(inst, a);
        CHECK(e.objective_ms <= omega);
        const double fit = penalty_fitness(e, omega, 1e6);
        if (e.feasible()) {
            worst_feasible = std::max(worst_feasible, fit);
        } else {
            best_infeasible = std::min(best_infeasible, fit);
        }
    }
    CHECK(worst_feasible < best_infeasible);
}

TEST_CASE("budget monotonicity")
{
    const auto inst = random_instance(4, 16, 21);
    EvolveConfig a;
    a.seed = 5;
    a.generations = 1'000'000;
    a.max_evaluations = 5000;
    EvolveConfig b = a;
    b.max_evaluations = 20000;
    const auto ra = evolve(inst, a);
    const auto rb = evolve(inst, b);
    CHECK(ra.evaluations == 5000);
    CHECK(rb.evaluations == 20000);
    CHECK(penalty_fitness(Evaluation{rb.objective_ms, rb.violation}, objective_upper_bound(inst), 1e6) <=
          penalty_fitness(Evaluation{ra.objective_ms, ra.violation}, objective_upper_bound(inst), 1e6));
}

TEST_CASE("batch replay is consistent with the solver")
{
    auto w = world(4, 6, 120, 31);
    EvolveConfig cfg;
    cfg.generations = 60;
    cfg.seed = 2;
    const auto run = solve_trace_in_batches(
        w, 8, [cfg](const StaticInstance& inst) { return evolve(inst, cfg); }, EnvConfig{}, false);
    REQUIRE(run.report.records.size() == w->trace.size());
    CHECK(run.batches.size() == 15);
    if (run.report.deferred == 0 && run.report.remapped == 0) {
        CHECK(run.replayed_objective_ms == doctest::Approx(run.solver_objective_ms).epsilon(1e-12));
    }

    // Batch size 1 with the oracle is per-request optimal.
    const auto exact = solve_trace_in_batches(
        w, 1, [](const StaticInstance& inst) { return brute_force(inst); }, EnvConfig{}, false);
    const auto greedy = run_episode(agents::greedy_latency_policy(), w, EnvConfig{}, 0, false);
    REQUIRE(exact.report.records.size() == greedy.records.size());
    for (std::size_t i = 0; i < greedy.records.size(); ++i) {
        const auto& g = greedy.records[i].breakdown;
        const auto& o = exact.report.records[i].breakdown;
        CHECK(o.total_ms == g.total_ms);
    }
}

TEST_CASE("solver result json")
{
    const auto inst = random_instance(2, 3, 1);
    const auto r = brute_force(inst);
    const auto text = solver_result_json({r}, R"({"method":"brute"})");
    CHECK(text.find("\"batches\"") != std::string::npos);
    CHECK(text.find("\"method\"") != std::string::npos);
}
