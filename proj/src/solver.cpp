#include "secsched/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "secsched/io.hpp"
#include "secsched/rng.hpp"

namespace secsched {

StaticInstance StaticInstance::fresh(std::shared_ptr<const Scenario> world, std::vector<Request> requests,
                                     LatencyOptions latency)
{
    StaticInstance inst;
    inst.requests = std::move(requests);
    inst.idle_containers.assign(world->nodes.size() * world->functions.size(), 0);
    for (const auto& n : world->nodes) {
        inst.free_cpu_cores.push_back(n.cpu_cores);
        inst.free_mem_mb.push_back(n.mem_mb);
    }
    inst.latency = latency;
    inst.world = std::move(world);
    return inst;
}

StaticInstance StaticInstance::from_environment(const Environment& env, std::size_t begin, std::size_t end)
{
    const auto& sc = env.scenario();
    const auto& cl = env.cluster();
    StaticInstance inst;
    inst.world = std::make_shared<const Scenario>(Scenario{sc.nodes, sc.functions, sc.link_model, {}, sc.rng_seed});
    inst.requests.assign(sc.trace.begin() + static_cast<std::ptrdiff_t>(begin),
                         sc.trace.begin() + static_cast<std::ptrdiff_t>(std::min(end, sc.trace.size())));
    inst.idle_containers.assign(sc.nodes.size() * sc.functions.size(), 0);
    for (std::size_t v = 0; v < sc.nodes.size(); ++v) {
        for (std::size_t f = 0; f < sc.functions.size(); ++f) {
            inst.idle_containers[v * sc.functions.size() + f] = cl.idle_count(static_cast<int>(v), static_cast<int>(f));
        }
    }
    inst.free_cpu_cores = cl.free_cpu_cores;
    inst.free_mem_mb = cl.free_mem_mb;
    inst.latency = LatencyOptions{env.config().frequency_scaling};
    return inst;
}

namespace {

double request_latency(const StaticInstance& inst, std::size_t k, const Placement& p)
{
    return end_to_end(*inst.world, inst.requests[k], p.node, p.new_container, 0.0, inst.latency).total_ms;
}

// Latencies for every (request, node, reuse/new) triple.
class LatencyTable {
public:
    explicit LatencyTable(const StaticInstance& inst) : nodes_(inst.num_nodes())
    {
        table_.resize(inst.requests.size() * nodes_ * 2);
        for (std::size_t k = 0; k < inst.requests.size(); ++k) {
            for (std::size_t v = 0; v < nodes_; ++v) {
                for (int z = 0; z < 2; ++z) {
                    table_[(k * nodes_ + v) * 2 + static_cast<std::size_t>(z)] =
                        request_latency(inst, k, Placement{static_cast<int>(v), z == 1});
                }
            }
        }
    }

    double operator()(std::size_t k, const Placement& p) const
    {
        return table_[(k * nodes_ + static_cast<std::size_t>(p.node)) * 2 + (p.new_container ? 1 : 0)];
    }

private:
    std::size_t nodes_;
    std::vector<double> table_;
};

template <typename LatencyFn>
Evaluation evaluate_with(const StaticInstance& inst, const AssignmentVector& assign, const LatencyFn& latency,
                         std::size_t count)
{
    const auto n = inst.num_nodes();
    std::vector<int> cpu(n, 0);
    std::vector<double> mem(n, 0.0);
    std::vector<std::pair<std::size_t, int>> reuses;  // (slot, count)
    Evaluation e;
    double slo_violation = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
        const auto& p = assign[k];
        const auto& r = inst.requests[k];
        if (p.node < 0 || static_cast<std::size_t>(p.node) >= n) {
            throw UsageError("evaluate_assignment: node out of range for request " + std::to_string(k));
        }
        const auto v = static_cast<std::size_t>(p.node);
        const double t = latency(k, p);
        e.objective_ms += t;
        cpu[v] += r.cpu_cores;
        if (p.new_container) {
            mem[v] += r.mem_mb;
        } else {
            const std::size_t slot = v * inst.world->functions.size() + static_cast<std::size_t>(r.function_id);
            auto it = std::find_if(reuses.begin(), reuses.end(), [&](const auto& s) { return s.first == slot; });
            if (it == reuses.end()) {
                reuses.emplace_back(slot, 1);
            } else {
                ++it->second;
            }
        }
        if (t > r.slo_ms) {
            slo_violation += (t - r.slo_ms) / r.slo_ms;
        }
    }
    double violation = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        const auto& node = inst.world->nodes[v];
        if (cpu[v] > inst.free_cpu_cores[v]) {
            violation += (cpu[v] - inst.free_cpu_cores[v]) / static_cast<double>(node.cpu_cores);
        }
        if (mem[v] > inst.free_mem_mb[v]) {
            violation += (mem[v] - inst.free_mem_mb[v]) / node.mem_mb;
        }
    }
    violation += slo_violation;
    std::sort(reuses.begin(), reuses.end());
    for (const auto& [slot, count] : reuses) {
        const int idle = inst.idle_containers[slot];
        if (count > idle) {
            violation += (count - idle) / static_cast<double>(std::max(1, idle));
        }
    }
    e.violation = violation;
    return e;
}

}  // namespace

Evaluation evaluate_assignment(const StaticInstance& inst, const AssignmentVector& assign)
{
    if (assign.size() != inst.requests.size()) {
        throw UsageError("evaluate_assignment: assignment covers " + std::to_string(assign.size()) + " of " +
                         std::to_string(inst.requests.size()) + " requests");
    }
    return evaluate_with(
        inst, assign, [&](std::size_t k, const Placement& p) { return request_latency(inst, k, p); }, assign.size());
}

double objective_upper_bound(const StaticInstance& inst)
{
    const LatencyTable table(inst);
    double ub = 0.0;
    for (std::size_t k = 0; k < inst.requests.size(); ++k) {
        double worst = 0.0;
        for (std::size_t v = 0; v < inst.num_nodes(); ++v) {
            for (bool z : {false, true}) {
                worst = std::max(worst, table(k, Placement{static_cast<int>(v), z}));
            }
        }
        ub += worst;
    }
    return ub;
}

namespace {

// Residual resources while placing requests one at a time.
struct Residual {
    std::vector<int> cpu;
    std::vector<double> mem;
    std::vector<int> idle;
    std::size_t num_functions;

    explicit Residual(const StaticInstance& inst)
        : cpu(inst.free_cpu_cores), mem(inst.free_mem_mb), idle(inst.idle_containers),
          num_functions(inst.world->functions.size())
    {}

    std::size_t slot(const Placement& p, const Request& r) const
    {
        return static_cast<std::size_t>(p.node) * num_functions + static_cast<std::size_t>(r.function_id);
    }
    bool fits(const Placement& p, const Request& r) const
    {
        const auto v = static_cast<std::size_t>(p.node);
        if (cpu[v] < r.cpu_cores) {
            return false;
        }
        return p.new_container ? mem[v] >= r.mem_mb : idle[slot(p, r)] > 0;
    }
    void take(const Placement& p, const Request& r)
    {
        const auto v = static_cast<std::size_t>(p.node);
        cpu[v] -= r.cpu_cores;
        if (p.new_container) {
            mem[v] -= r.mem_mb;
        } else {
            --idle[slot(p, r)];
        }
    }
    void give(const Placement& p, const Request& r)
    {
        const auto v = static_cast<std::size_t>(p.node);
        cpu[v] += r.cpu_cores;
        if (p.new_container) {
            mem[v] += r.mem_mb;
        } else {
            ++idle[slot(p, r)];
        }
    }
};

}  // namespace

AssignmentVector greedy_assignment(const StaticInstance& inst)
{
    const LatencyTable table(inst);
    Residual res(inst);
    AssignmentVector out;
    out.reserve(inst.requests.size());
    for (std::size_t k = 0; k < inst.requests.size(); ++k) {
        const auto& r = inst.requests[k];
        // Preference tiers: fits and meets SLO, fits, anything.
        Placement best[3];
        double best_ms[3] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                             std::numeric_limits<double>::infinity()};
        for (std::size_t v = 0; v < inst.num_nodes(); ++v) {
            for (bool z : {false, true}) {
                const Placement p{static_cast<int>(v), z};
                const double t = table(k, p);
                const bool fits = res.fits(p, r);
                const int tier = fits ? (t <= r.slo_ms ? 0 : 1) : 2;
                for (int i = tier; i < 3; ++i) {
                    if (t < best_ms[i]) {
                        best_ms[i] = t;
                        best[i] = p;
                    }
                }
            }
        }
        const int tier = std::isfinite(best_ms[0]) ? 0 : (std::isfinite(best_ms[1]) ? 1 : 2);
        const auto p = best[tier];
        if (tier < 2) {
            res.take(p, r);
        }
        out.push_back(p);
    }
    return out;
}

namespace {

class BruteForce {
public:
    BruteForce(const StaticInstance& inst, const LatencyTable& table)
        : inst_(inst), table_(table), res_(inst), current_(inst.requests.size())
    {}

    // Feasible-only search with objective pruning.
    bool search_feasible(SolverResult& out)
    {
        best_obj_ = std::numeric_limits<double>::infinity();
        found_ = false;
        feasible_dfs(0, 0.0);
        out.evaluations += leaves_;
        if (found_) {
            out.best = best_;
        }
        return found_;
    }

    // Least violation, objective as tie-break; used when nothing is feasible.
    void search_least_violation(SolverResult& out)
    {
        leaves_ = 0;
        best_obj_ = std::numeric_limits<double>::infinity();
        best_viol_ = std::numeric_limits<double>::infinity();
        violation_dfs(0, 0.0);
        out.evaluations += leaves_;
        out.best = best_;
    }

private:
    void feasible_dfs(std::size_t k, double partial)
    {
        if (k == inst_.requests.size()) {
            ++leaves_;
            if (partial < best_obj_) {
                best_obj_ = partial;
                best_ = current_;
                found_ = true;
            }
            return;
        }
        const auto& r = inst_.requests[k];
        for (std::size_t v = 0; v < inst_.num_nodes(); ++v) {
            for (bool z : {false, true}) {
                const Placement p{static_cast<int>(v), z};
                const double t = table_(k, p);
                if (t > r.slo_ms || !res_.fits(p, r) || partial + t >= best_obj_) {
                    continue;
                }
                res_.take(p, r);
                current_[k] = p;
                feasible_dfs(k + 1, partial + t);
                res_.give(p, r);
            }
        }
    }

    void violation_dfs(std::size_t k, double partial)
    {
        if (k == inst_.requests.size()) {
            ++leaves_;
            const auto e = evaluate_with(inst_, current_, table_, current_.size());
            if (e.violation < best_viol_ || (e.violation == best_viol_ && e.objective_ms < best_obj_)) {
                best_viol_ = e.violation;
                best_obj_ = e.objective_ms;
                best_ = current_;
            }
            return;
        }
        for (std::size_t v = 0; v < inst_.num_nodes(); ++v) {
            for (bool z : {false, true}) {
                const Placement p{static_cast<int>(v), z};
                current_[k] = p;
                // Violation only grows with more placements, so a partial
                // assignment already worse than the incumbent is dropped.
                if (std::isfinite(best_viol_) &&
                    evaluate_with(inst_, current_, table_, k + 1).violation > best_viol_ * (1.0 + 1e-12)) {
                    continue;
                }
                violation_dfs(k + 1, partial + table_(k, p));
            }
        }
    }

    const StaticInstance& inst_;
    const LatencyTable& table_;
    Residual res_;
    AssignmentVector current_;
    AssignmentVector best_;
    double best_obj_ = 0.0;
    double best_viol_ = 0.0;
    bool found_ = false;
    std::int64_t leaves_ = 0;
};

double elapsed_ms(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

SolverResult brute_force(const StaticInstance& inst, std::int64_t budget_evals)
{
    const double points = std::pow(2.0 * static_cast<double>(inst.num_nodes()), static_cast<double>(inst.requests.size()));
    if (points > static_cast<double>(budget_evals)) {
        throw UsageError("brute_force: (2*|V|)^|K| = " + format_double(points) + " exceeds the budget of " +
                         std::to_string(budget_evals) + " evaluations; reduce the batch size or node count");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const LatencyTable table(inst);
    SolverResult out;
    BruteForce bf(inst, table);
    if (!bf.search_feasible(out)) {
        bf.search_least_violation(out);
    }
    const auto e = evaluate_assignment(inst, out.best);
    out.objective_ms = e.objective_ms;
    out.violation = e.violation;
    out.feasible = e.feasible();
    out.wall_time_ms = elapsed_ms(t0);
    return out;
}

double penalty_fitness(const Evaluation& e, double omega, double violation_scale)
{
    return e.feasible() ? e.objective_ms : omega + violation_scale * e.violation;
}

namespace {

struct Individual {
    AssignmentVector genes;
    Evaluation eval;
    double fitness = 0.0;
};

void evaluate_all(std::vector<Individual>& batch, const StaticInstance& inst, const LatencyTable& table, double omega,
                  double scale, int threads)
{
    auto work = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            batch[i].eval = evaluate_with(inst, batch[i].genes, table, batch[i].genes.size());
            batch[i].fitness = penalty_fitness(batch[i].eval, omega, scale);
        }
    };
    const auto n = batch.size();
    if (threads <= 1 || n < static_cast<std::size_t>(4 * threads)) {
        work(0, n);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + static_cast<std::size_t>(threads) - 1) / static_cast<std::size_t>(threads);
    for (std::size_t lo = 0; lo < n; lo += chunk) {
        pool.emplace_back(work, lo, std::min(n, lo + chunk));
    }
    for (auto& t : pool) {
        t.join();
    }
}

}  // namespace

SolverResult evolve(const StaticInstance& inst, const EvolveConfig& config)
{
    if (config.population < 4) {
        throw UsageError("evolve: population must be >= 4");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const LatencyTable table(inst);
    const double omega = objective_upper_bound(inst);
    const auto pop_size = static_cast<std::size_t>(config.population);
    const auto num_nodes = inst.num_nodes();
    const auto genes = inst.requests.size();
    Rng rng(config.seed);

    auto random_placement = [&]() {
        Placement p;
        p.node = static_cast<int>(rng.index(num_nodes));
        p.new_container = rng.uniform() < 0.5;
        return p;
    };

    SolverResult out;
    auto budget_left = [&]() -> std::int64_t {
        return config.max_evaluations > 0 ? config.max_evaluations - out.evaluations
                                          : std::numeric_limits<std::int64_t>::max();
    };

    std::vector<Individual> pop;
    pop.reserve(pop_size);
    for (const auto& seedling : config.initial_population) {
        if (pop.size() < pop_size && seedling.size() == genes) {
            pop.push_back({seedling, {}, 0.0});
        }
    }
    if (config.seed_with_greedy && pop.size() < pop_size) {
        pop.push_back({greedy_assignment(inst), {}, 0.0});
    }
    while (pop.size() < pop_size) {
        Individual ind;
        ind.genes.resize(genes);
        for (auto& g : ind.genes) {
            g = random_placement();
        }
        pop.push_back(std::move(ind));
    }
    if (static_cast<std::int64_t>(pop.size()) > budget_left()) {
        pop.resize(static_cast<std::size_t>(std::max<std::int64_t>(budget_left(), 1)));
    }
    evaluate_all(pop, inst, table, omega, config.violation_scale, config.threads);
    out.evaluations += static_cast<std::int64_t>(pop.size());

    auto by_fitness = [](const Individual& a, const Individual& b) { return a.fitness < b.fitness; };
    std::stable_sort(pop.begin(), pop.end(), by_fitness);
    Individual incumbent = pop.front();
    out.incumbent_history.push_back(incumbent.fitness);

    auto tournament = [&]() -> const Individual& {
        std::size_t best = rng.index(pop.size());
        for (int i = 1; i < config.tournament; ++i) {
            best = std::min(best, rng.index(pop.size()));  // pop is sorted by fitness
        }
        return pop[best];
    };

    for (int gen = 0; gen < config.generations && budget_left() > 0; ++gen) {
        const std::size_t elite = std::min(pop.size(), static_cast<std::size_t>(std::max(config.elite, 0)));
        std::vector<Individual> children;
        const auto wanted = std::min<std::int64_t>(static_cast<std::int64_t>(pop_size - elite), budget_left());
        children.reserve(static_cast<std::size_t>(wanted));
        for (std::int64_t c = 0; c < wanted; ++c) {
            const auto& a = tournament();
            const auto& b = tournament();
            Individual child;
            child.genes = a.genes;
            if (rng.uniform() < config.crossover_rate) {
                for (std::size_t g = 0; g < genes; ++g) {
                    if (rng.uniform() < 0.5) {
                        child.genes[g] = b.genes[g];
                    }
                }
            }
            for (auto& g : child.genes) {
                if (config.mutation_rate > 0.0 && rng.uniform() < config.mutation_rate) {
                    g = random_placement();
                }
            }
            children.push_back(std::move(child));
        }
        evaluate_all(children, inst, table, omega, config.violation_scale, config.threads);
        out.evaluations += static_cast<std::int64_t>(children.size());

        std::vector<Individual> next(pop.begin(), pop.begin() + static_cast<std::ptrdiff_t>(elite));
        for (auto& c : children) {
            next.push_back(std::move(c));
        }
        // A truncated final generation keeps the best of the old population.
        for (std::size_t i = elite; next.size() < pop_size && i < pop.size(); ++i) {
            next.push_back(pop[i]);
        }
        pop = std::move(next);
        std::stable_sort(pop.begin(), pop.end(), by_fitness);
        if (pop.front().fitness < incumbent.fitness) {
            incumbent = pop.front();
        }
        out.incumbent_history.push_back(incumbent.fitness);
    }

    out.best = incumbent.genes;
    const auto e = evaluate_assignment(inst, out.best);
    out.objective_ms = e.objective_ms;
    out.violation = e.violation;
    out.feasible = e.feasible();
    out.wall_time_ms = elapsed_ms(t0);
    return out;
}

BatchRun solve_trace_in_batches(std::shared_ptr<const Scenario> scenario, std::size_t batch_size,
                                const StaticSolver& solver, EnvConfig config, bool record_timing)
{
    if (batch_size < 1) {
        throw UsageError("solve_trace_in_batches: batch_size must be >= 1");
    }
    config.remap_invalid_actions = true;
    Environment env(std::move(scenario), config);
    env.reset();
    BatchRun run;
    const auto total = env.scenario().trace.size();
    while (!env.done()) {
        const std::size_t begin = env.cursor();
        const std::size_t end = std::min(total, begin + batch_size);
        const auto inst = StaticInstance::from_environment(env, begin, end);

        const auto t0 = std::chrono::steady_clock::now();
        auto result = solver(inst);
        const double batch_ms = elapsed_ms(t0);
        if (!record_timing) {
            result.wall_time_ms = 0.0;
        }
        const double per_request_us = record_timing ? batch_ms * 1000.0 / static_cast<double>(end - begin) : 0.0;
        run.solver_objective_ms += result.objective_ms;

        for (std::size_t i = 0; i < end - begin; ++i) {
            const auto& req = env.current_request();
            const auto& p = result.best[i];
            const auto out = env.step(Action{p.node, p.new_container ? ReuseChoice::New : ReuseChoice::Reuse});
            PlacementRecord rec;
            rec.request_id = req.request_id;
            rec.slo_ms = req.slo_ms;
            rec.node_id = out.applied.node;
            rec.new_container = out.applied.reuse_new == ReuseChoice::New;
            rec.breakdown = out.breakdown;
            rec.slo_met = out.slo_met;
            rec.reward = out.reward;
            rec.decision_time_us = per_request_us;
            run.report.remapped += out.remapped ? 1 : 0;
            run.replayed_objective_ms += out.breakdown.cold_ms + out.breakdown.comp_ms + out.breakdown.comm_ms;
            run.report.records.push_back(rec);
        }
        run.batches.push_back(std::move(result));
    }
    run.report.deferred = env.deferred_count();
    return run;
}

std::string solver_result_json(const std::vector<SolverResult>& batches, const std::string& config_echo_json)
{
    using nlohmann::json;
    json j;
    j["config"] = json::parse(config_echo_json.empty() ? "{}" : config_echo_json);
    j["batches"] = json::array();
    for (const auto& b : batches) {
        json jb;
        json assign = json::array();
        for (const auto& p : b.best) {
            assign.push_back({{"node", p.node}, {"new_container", p.new_container}});
        }
        jb["assignment"] = assign;
        jb["objective_ms"] = b.objective_ms;
        jb["feasible"] = b.feasible;
        jb["violation"] = b.violation;
        jb["evaluations"] = b.evaluations;
        jb["wall_time_ms"] = b.wall_time_ms;
        j["batches"].push_back(jb);
    }
    return j.dump(1) + "\n";
}

}  // namespace secsched
