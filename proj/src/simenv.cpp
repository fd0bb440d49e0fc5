#include "secsched/simenv.hpp"

#include <algorithm>
#include <chrono>
#include <limits>

#include "secsched/io.hpp"

namespace secsched {

bool ActionMask::allows(const Action& a) const
{
    if (a.node < 0 || a.node >= static_cast<int>(node.size())) {
        return false;
    }
    return reuse_new[static_cast<std::size_t>(a.node)][static_cast<std::size_t>(a.reuse_new)] != 0;
}

bool ActionMask::any() const
{
    return std::any_of(node.begin(), node.end(), [](std::uint8_t v) { return v != 0; });
}

std::size_t ActionMask::count() const
{
    std::size_t n = 0;
    for (const auto& rn : reuse_new) {
        n += rn[0] + rn[1];
    }
    return n;
}

// --- ClusterState ---

ClusterState::ClusterState(const std::vector<NodeSpec>& nodes, std::size_t num_functions)
    : num_functions_(num_functions)
{
    free_cpu_cores.reserve(nodes.size());
    free_mem_mb.reserve(nodes.size());
    for (const auto& n : nodes) {
        free_cpu_cores.push_back(n.cpu_cores);
        free_mem_mb.push_back(n.mem_mb);
    }
    idle_.resize(nodes.size() * num_functions);
    busy_.assign(nodes.size(), 0);
    resident_.assign(nodes.size(), 0);
}

void ClusterState::push_event(double t, bool completion, int container_id, std::uint64_t generation)
{
    events_.push(Event{t, next_seq_++, completion, container_id, generation});
}

int ClusterState::start(int node, int function, int cpu_cores, double mem_mb, bool new_container,
                        double busy_until_ms)
{
    const auto v = static_cast<std::size_t>(node);
    int id = 0;
    if (new_container) {
        id = static_cast<int>(containers.size());
        ContainerInstance c;
        c.container_id = id;
        c.node_id = node;
        c.function_id = function;
        c.mem_mb = mem_mb;
        containers.push_back(c);
        free_mem_mb[v] -= mem_mb;
        ++resident_[v];
    } else {
        auto& pool = idle_[slot(node, function)];
        if (pool.empty()) {
            throw InvalidActionError("reuse requested on node " + std::to_string(node) + " without an idle container");
        }
        id = pool.front();
        pool.pop_front();
    }
    auto& c = containers[static_cast<std::size_t>(id)];
    c.status = ContainerStatus::Busy;
    c.cpu_cores = cpu_cores;
    ++c.generation;
    free_cpu_cores[v] -= cpu_cores;
    ++busy_[v];
    push_event(busy_until_ms, true, id, c.generation);
    return id;
}

void ClusterState::destroy(ContainerInstance& c)
{
    const auto v = static_cast<std::size_t>(c.node_id);
    auto& pool = idle_[slot(c.node_id, c.function_id)];
    const auto it = std::find(pool.begin(), pool.end(), c.container_id);
    if (it != pool.end()) {
        pool.erase(it);
    }
    free_mem_mb[v] += c.mem_mb;
    --resident_[v];
    c.alive = false;
    ++c.generation;
}

void ClusterState::apply(const Event& e, double keep_alive_ms)
{
    auto& c = containers[static_cast<std::size_t>(e.container_id)];
    if (!c.alive || c.generation != e.generation) {
        return;
    }
    if (e.completion) {
        const auto v = static_cast<std::size_t>(c.node_id);
        free_cpu_cores[v] += c.cpu_cores;
        c.cpu_cores = 0;
        --busy_[v];
        c.status = ContainerStatus::Idle;
        c.idle_since_ms = e.time_ms;
        c.expires_at_ms = e.time_ms + keep_alive_ms;
        ++c.generation;
        if (keep_alive_ms <= 0.0) {
            destroy(c);
            return;
        }
        idle_[slot(c.node_id, c.function_id)].push_back(c.container_id);
        push_event(c.expires_at_ms, false, c.container_id, c.generation);
    } else if (c.status == ContainerStatus::Idle) {
        destroy(c);
    }
}

void ClusterState::advance_to(double t, double keep_alive_ms)
{
    while (!events_.empty() && events_.top().time_ms <= t) {
        const Event e = events_.top();
        events_.pop();
        clock_ms = std::max(clock_ms, e.time_ms);
        apply(e, keep_alive_ms);
    }
    clock_ms = std::max(clock_ms, t);
}

double ClusterState::advance_to_next_event(double keep_alive_ms)
{
    const double t = events_.top().time_ms;
    advance_to(t, keep_alive_ms);
    return t;
}

// --- masks and encoding ---

ActionMask action_mask(const ClusterState& state, const Request& req)
{
    const auto n = state.num_nodes();
    ActionMask m;
    m.node.assign(n, 0);
    m.reuse_new.assign(n, {0, 0});
    for (std::size_t v = 0; v < n; ++v) {
        const bool cores = state.free_cpu_cores[v] >= req.cpu_cores;
        const bool reuse = cores && state.idle_count(static_cast<int>(v), req.function_id) > 0;
        const bool fresh = cores && state.free_mem_mb[v] >= req.mem_mb;
        m.reuse_new[v] = {static_cast<std::uint8_t>(reuse), static_cast<std::uint8_t>(fresh)};
        m.node[v] = static_cast<std::uint8_t>(reuse || fresh);
    }
    return m;
}

namespace {

float capped(double x)
{
    return static_cast<float>(std::clamp(x, 0.0, kStateCap));
}

double scenario_extent(const Scenario& s)
{
    double extent = 0.0;
    for (const auto& n : s.nodes) {
        extent = std::max({extent, n.pos_x, n.pos_y});
    }
    return extent > 0.0 ? extent : 1.0;
}

}  // namespace

StateVector encode_state(const ClusterState& state, const Request& req, const Scenario& scenario)
{
    const int n = static_cast<int>(scenario.nodes.size());
    StateVector s(state_size(n));
    for (int v = 0; v < n; ++v) {
        const auto& spec = scenario.nodes[static_cast<std::size_t>(v)];
        const auto vi = static_cast<std::size_t>(v);
        const int base = kStateFeaturesPerNode * v;
        s[base + 0] = capped(state.free_cpu_cores[vi] / static_cast<double>(spec.cpu_cores));
        s[base + 1] = capped(state.free_mem_mb[vi] / spec.mem_mb);
        s[base + 2] = capped(std::min(state.idle_count(v, req.function_id), 8) / 8.0);
        s[base + 3] = capped(std::min(state.busy_count(v), 16) / 16.0);
    }
    const auto& src = scenario.node(req.source_node);
    const auto& fn = scenario.function(req.function_id);
    const double extent = scenario_extent(scenario);
    const int r = kStateFeaturesPerNode * n;
    s[r + 0] = capped(src.pos_x / extent);
    s[r + 1] = capped(src.pos_y / extent);
    s[r + 2] = capped(req.cpu_cores / 32.0);
    s[r + 3] = capped(req.mem_mb / 4096.0);
    s[r + 4] = capped(req.cpu_time_ms / 1000.0);
    s[r + 5] = capped(req.data_mb / 100.0);
    s[r + 6] = capped(fn.image_mb / 1000.0);
    s[r + 7] = capped(req.slo_ms / 400.0);
    return s;
}

// --- Environment ---

Environment::Environment(std::shared_ptr<const Scenario> scenario, EnvConfig config)
    : scenario_(std::move(scenario)), config_(config)
{
    if (!scenario_) {
        throw UsageError("Environment: null scenario");
    }
    if (config_.strict_paper) {
        config_.include_wait_in_reward = false;
    }
}

const StateVector& Environment::reset(std::uint64_t seed)
{
    if (scenario_->trace.empty()) {
        throw UsageError("Environment::reset: empty trace");
    }
    seed_ = seed;
    state_ = ClusterState(scenario_->nodes, scenario_->functions.size());
    cursor_ = 0;
    deferred_ = 0;
    done_ = false;
    state_.clock_ms = scenario_->trace.front().arrival_ms;
    prepare_current();
    return obs_;
}

void Environment::prepare_current()
{
    const auto& req = current_request();
    state_.advance_to(req.arrival_ms, config_.keep_alive_ms);
    mask_ = action_mask(state_, req);
    if (!mask_.any()) {
        if (config_.strict_paper) {
            throw UnschedulableError("request " + std::to_string(req.request_id) +
                                     " is infeasible on arrival; strict mode does not defer");
        }
        ++deferred_;
        while (!mask_.any()) {
            if (!state_.has_pending_events()) {
                throw UnschedulableError("request " + std::to_string(req.request_id) +
                                         " cannot be placed on any node even with an idle cluster");
            }
            state_.advance_to_next_event(config_.keep_alive_ms);
            mask_ = action_mask(state_, req);
        }
    }
    obs_ = encode_state(state_, req, *scenario_);
}

double Environment::current_wait_ms() const
{
    return std::max(0.0, state_.clock_ms - current_request().arrival_ms);
}

LatencyBreakdown Environment::estimate(const Action& a) const
{
    return end_to_end(*scenario_, current_request(), a.node, a.reuse_new == ReuseChoice::New, 0.0,
                      LatencyOptions{config_.frequency_scaling});
}

Action Environment::remap(const Action& a) const
{
    // Keep the node if it has a valid option; otherwise take the cheapest valid action.
    if (a.node >= 0 && a.node < num_nodes() && mask_.node[static_cast<std::size_t>(a.node)]) {
        const auto flipped = a.reuse_new == ReuseChoice::Reuse ? ReuseChoice::New : ReuseChoice::Reuse;
        return mask_.allows(a) ? a : Action{a.node, flipped};
    }
    Action best{};
    double best_ms = std::numeric_limits<double>::infinity();
    for (int v = 0; v < num_nodes(); ++v) {
        for (auto choice : {ReuseChoice::Reuse, ReuseChoice::New}) {
            const Action cand{v, choice};
            if (!mask_.allows(cand)) {
                continue;
            }
            const double ms = estimate(cand).total_ms;
            if (ms < best_ms) {
                best_ms = ms;
                best = cand;
            }
        }
    }
    return best;
}

StepOutcome Environment::step(const Action& action)
{
    if (done_) {
        throw UsageError("Environment::step: episode is done; call reset()");
    }
    StepOutcome out;
    out.applied = action;
    if (!mask_.allows(action)) {
        if (!config_.remap_invalid_actions) {
            throw InvalidActionError("invalid action (node " + std::to_string(action.node) + ", " +
                                     (action.reuse_new == ReuseChoice::Reuse ? "reuse" : "new") + ") for request " +
                                     std::to_string(current_request().request_id));
        }
        out.applied = remap(action);
        out.remapped = true;
    }

    const auto& req = current_request();
    const bool fresh = out.applied.reuse_new == ReuseChoice::New;
    const double wait = current_wait_ms();
    out.breakdown = end_to_end(*scenario_, req, out.applied.node, fresh, wait, LatencyOptions{config_.frequency_scaling});
    const double service_ms = out.breakdown.cold_ms + out.breakdown.comp_ms + out.breakdown.comm_ms;
    state_.start(out.applied.node, req.function_id, req.cpu_cores, req.mem_mb, fresh, state_.clock_ms + service_ms);

    const bool with_wait = config_.include_wait_in_reward && !config_.strict_paper;
    out.reward = -(with_wait ? out.breakdown.total_ms : service_ms) / 1000.0;
    out.slo_met = check_slo(out.breakdown, req);

    ++cursor_;
    if (cursor_ >= scenario_->trace.size()) {
        done_ = true;
        out.done = true;
        out.next_state = StateVector::Zero(obs_.size());
        return out;
    }
    prepare_current();
    out.next_state = obs_;
    return out;
}

EpisodeReport run_episode(const Policy& policy, std::shared_ptr<const Scenario> scenario, const EnvConfig& config,
                          std::uint64_t seed, bool record_timing)
{
    Environment env(std::move(scenario), config);
    env.reset(seed);
    EpisodeReport report;
    report.records.reserve(env.scenario().trace.size());
    while (!env.done()) {
        const auto& req = env.current_request();
        PlacementRecord rec;
        rec.request_id = req.request_id;
        rec.slo_ms = req.slo_ms;

        const auto t0 = std::chrono::steady_clock::now();
        const Action a = policy(env);
        const auto t1 = std::chrono::steady_clock::now();
        if (record_timing) {
            rec.decision_time_us = std::chrono::duration<double, std::micro>(t1 - t0).count();
        }

        const auto out = env.step(a);
        rec.node_id = out.applied.node;
        rec.new_container = out.applied.reuse_new == ReuseChoice::New;
        rec.breakdown = out.breakdown;
        rec.slo_met = out.slo_met;
        rec.reward = out.reward;
        report.remapped += out.remapped ? 1 : 0;
        report.records.push_back(rec);
    }
    report.deferred = env.deferred_count();
    return report;
}

std::string episode_csv(const EpisodeReport& report)
{
    std::string out = "request_id,node_id,new_container,wait_ms,cold_ms,comp_ms,comm_ms,total_ms,slo_ms,slo_met,reward,"
                      "decision_time_us\n";
    for (const auto& r : report.records) {
        const auto& b = r.breakdown;
        out += std::to_string(r.request_id) + "," + std::to_string(r.node_id) + "," + (r.new_container ? "1" : "0") +
               "," + format_double(b.wait_ms) + "," + format_double(b.cold_ms) + "," + format_double(b.comp_ms) + "," +
               format_double(b.comm_ms) + "," + format_double(b.total_ms) + "," + format_double(r.slo_ms) + "," +
               (r.slo_met ? "1" : "0") + "," + format_double(r.reward) + "," + format_double(r.decision_time_us) +
               "\n";
    }
    return out;
}

EpisodeReport parse_episode_csv(std::string_view text)
{
    const auto table = parse_csv(text);
    EpisodeReport report;
    for (const auto& row : table.rows) {
        auto real = [&](const char* name) { return parse_double(row.fields[table.column(name)], row.line, name); };
        auto integer = [&](const char* name) {
            return static_cast<int>(parse_int(row.fields[table.column(name)], row.line, name));
        };
        PlacementRecord r;
        r.request_id = integer("request_id");
        r.node_id = integer("node_id");
        r.new_container = integer("new_container") != 0;
        r.breakdown.wait_ms = real("wait_ms");
        r.breakdown.cold_ms = real("cold_ms");
        r.breakdown.comp_ms = real("comp_ms");
        r.breakdown.comm_ms = real("comm_ms");
        r.breakdown.total_ms = real("total_ms");
        r.slo_ms = real("slo_ms");
        r.slo_met = integer("slo_met") != 0;
        r.reward = real("reward");
        r.decision_time_us = real("decision_time_us");
        report.deferred += r.breakdown.wait_ms > 0.0 ? 1 : 0;
        report.records.push_back(r);
    }
    return report;
}

}  // namespace secsched
