#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "secsched/latency.hpp"
#include "secsched/scenario.hpp"

namespace secsched {

// Layout version of StateVector; bump when the encoding changes.
inline constexpr int kStateLayoutVersion = 1;
inline constexpr int kStateFeaturesPerNode = 4;
inline constexpr int kStateRequestFeatures = 8;
inline constexpr double kStateCap = 1.5;

using StateVector = Eigen::VectorXf;

inline int state_size(int num_nodes)
{
    return kStateFeaturesPerNode * num_nodes + kStateRequestFeatures;
}

enum class ReuseChoice : int { Reuse = 0, New = 1 };

struct Action {
    int node = 0;
    ReuseChoice reuse_new = ReuseChoice::New;

    bool operator==(const Action&) const = default;
};

enum class ContainerStatus { Busy, Idle };

struct ContainerInstance {
    int container_id = 0;
    int node_id = 0;
    int function_id = 0;
    double mem_mb = 0.0;
    int cpu_cores = 0;  // held only while Busy
    ContainerStatus status = ContainerStatus::Busy;
    double idle_since_ms = 0.0;
    double expires_at_ms = 0.0;
    bool alive = true;
    std::uint64_t generation = 0;  // bumps on every status change; stale expiries are ignored
};

// Feasible actions for the current request. A node is enabled iff one of its
// two reuse/new options is.
struct ActionMask {
    std::vector<std::uint8_t> node;
    std::vector<std::array<std::uint8_t, 2>> reuse_new;  // indexed by ReuseChoice

    bool allows(const Action& a) const;
    bool any() const;
    std::size_t count() const;
};

struct EnvConfig {
    double keep_alive_ms = 60000.0;  // 0 disables reuse
    bool frequency_scaling = false;
    bool include_wait_in_reward = true;
    // Deferral is an error and wait is excluded from the reward.
    bool strict_paper = false;
    // Training mode: invalid actions are remapped instead of rejected.
    bool remap_invalid_actions = false;
};

class InvalidActionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnschedulableError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ClusterState {
public:
    ClusterState() = default;
    ClusterState(const std::vector<NodeSpec>& nodes, std::size_t num_functions);

    double clock_ms = 0.0;
    std::vector<int> free_cpu_cores;
    std::vector<double> free_mem_mb;
    std::vector<ContainerInstance> containers;  // indexed by container_id; dead entries kept

    int idle_count(int node, int function) const { return static_cast<int>(idle_[slot(node, function)].size()); }
    int busy_count(int node) const { return busy_[static_cast<std::size_t>(node)]; }
    int resident_count(int node) const { return resident_[static_cast<std::size_t>(node)]; }
    const std::deque<int>& idle_containers(int node, int function) const { return idle_[slot(node, function)]; }
    bool has_pending_events() const { return !events_.empty(); }
    double next_event_ms() const { return events_.top().time_ms; }
    std::size_t num_nodes() const { return free_cpu_cores.size(); }
    std::size_t num_functions() const { return num_functions_; }

    // Reuse: binds the oldest idle container of (node, function). New: creates one.
    int start(int node, int function, int cpu_cores, double mem_mb, bool new_container, double busy_until_ms);

    // Applies all events with time <= t, then sets the clock to t.
    void advance_to(double t, double keep_alive_ms);
    // Applies the events at the earliest pending timestamp; returns that timestamp.
    double advance_to_next_event(double keep_alive_ms);

private:
    struct Event {
        double time_ms;
        std::uint64_t seq;
        bool completion;  // else expiry
        int container_id;
        std::uint64_t generation;

        bool operator>(const Event& o) const { return time_ms != o.time_ms ? time_ms > o.time_ms : seq > o.seq; }
    };

    std::size_t slot(int node, int function) const
    {
        return static_cast<std::size_t>(node) * num_functions_ + static_cast<std::size_t>(function);
    }
    void push_event(double t, bool completion, int container_id, std::uint64_t generation);
    void apply(const Event& e, double keep_alive_ms);
    void destroy(ContainerInstance& c);

    std::size_t num_functions_ = 0;
    std::vector<std::deque<int>> idle_;
    std::vector<int> busy_;
    std::vector<int> resident_;
    std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
    std::uint64_t next_seq_ = 0;
};

ActionMask action_mask(const ClusterState& state, const Request& req);

StateVector encode_state(const ClusterState& state, const Request& req, const Scenario& scenario);

struct StepOutcome {
    double reward = 0.0;
    LatencyBreakdown breakdown;
    bool slo_met = false;
    StateVector next_state;
    bool done = false;
    bool remapped = false;
    Action applied;
};

struct PlacementRecord {
    int request_id = 0;
    int node_id = 0;
    bool new_container = false;
    LatencyBreakdown breakdown;
    double slo_ms = 0.0;
    bool slo_met = false;
    double reward = 0.0;
    double decision_time_us = 0.0;
};

struct EpisodeReport {
    std::vector<PlacementRecord> records;
    std::size_t deferred = 0;  // requests that had to wait for capacity
    std::size_t remapped = 0;  // invalid actions rewritten in training mode
};

class Environment {
public:
    Environment(std::shared_ptr<const Scenario> scenario, EnvConfig config = {});

    // The environment has no internal randomness; the seed is recorded only.
    const StateVector& reset(std::uint64_t seed = 0);
    StepOutcome step(const Action& action);

    const Scenario& scenario() const { return *scenario_; }
    const EnvConfig& config() const { return config_; }
    const ClusterState& cluster() const { return state_; }
    const ActionMask& mask() const { return mask_; }
    const StateVector& state() const { return obs_; }
    const Request& current_request() const { return scenario_->trace[cursor_]; }
    std::size_t cursor() const { return cursor_; }
    bool done() const { return done_; }
    std::uint64_t seed() const { return seed_; }
    int num_nodes() const { return static_cast<int>(scenario_->nodes.size()); }
    // Waiting time the current request has accumulated before its decision.
    double current_wait_ms() const;
    std::size_t deferred_count() const { return deferred_; }

    // Myopic latency of placing the current request with `a`; wait excluded.
    LatencyBreakdown estimate(const Action& a) const;

    // Rewrites an invalid action to a valid one (see remap rules in simenv.cpp).
    Action remap(const Action& a) const;

private:
    void prepare_current();

    std::shared_ptr<const Scenario> scenario_;
    EnvConfig config_;
    ClusterState state_;
    ActionMask mask_;
    StateVector obs_;
    std::size_t cursor_ = 0;
    bool done_ = true;
    std::uint64_t seed_ = 0;
    std::size_t deferred_ = 0;
};

using Policy = std::function<Action(const Environment&)>;

EpisodeReport run_episode(const Policy& policy, std::shared_ptr<const Scenario> scenario, const EnvConfig& config,
                          std::uint64_t seed, bool record_timing = true);

std::string episode_csv(const EpisodeReport& report);
EpisodeReport parse_episode_csv(std::string_view text);

}  // namespace secsched
