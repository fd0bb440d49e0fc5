#pragma once

// Hierarchical-action PPO. The actor is a shared trunk with two categorical
// heads: the node head picks a host, the reuse head sees the trunk features
// plus a one-hot of the chosen node and picks Reuse or New. Both heads are
// masked so sampled actions are always feasible.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "secsched/agents/checkpoint.hpp"
#include "secsched/neural.hpp"
#include "secsched/rng.hpp"
#include "secsched/simenv.hpp"

namespace secsched::agents {

enum class AdvantageMode { OneStep, Gae };

struct PpoConfig {
    double gamma = 0.99;
    double clip_eps = 0.2;
    double actor_lr = 3e-4;
    double critic_lr = 1e-3;
    int epochs_per_update = 4;
    int minibatch_size = 256;
    int rollout_steps = 2048;
    double entropy_coef = 0.01;
    bool anneal_entropy = true;  // linearly to 0 over anneal_steps
    std::int64_t anneal_steps = 0;  // 0: the total_steps of the first training call
    double value_coef = 1.0;
    AdvantageMode advantage_mode = AdvantageMode::Gae;
    double gae_lambda = 0.95;
    bool normalize_advantages = true;
    bool normalize_rewards = true;  // divide by the running std of the discounted return
    double max_grad_norm = 10.0;
    std::vector<int> hidden{128, 128};
    int reuse_hidden = 64;
    double hidden_gain = 1.0;
    double output_gain = 0.01;

    void validate() const;
};

nlohmann::json to_json(const PpoConfig& c);
PpoConfig ppo_config_from_json(const nlohmann::json& j);

struct ActorCritic {
    nn::Mlp<float> trunk;
    nn::Mlp<float> node_head;
    nn::Mlp<float> reuse_head;
    nn::Mlp<float> critic;

    int num_nodes() const { return node_head.output_size(); }
    int state_size() const { return trunk.input_size(); }
    bool all_finite() const;
};

ActorCritic make_actor_critic(int num_nodes, int state_size, const PpoConfig& config, Rng& rng);

struct ActResult {
    Action action;
    double log_prob_node = 0.0;
    double log_prob_reuse = 0.0;
    double log_prob = 0.0;  // node + reuse
    double value = 0.0;
};

// Samples when `rng` is given, otherwise takes the masked argmax of each head.
ActResult act(const ActorCritic& net, const StateVector& state, const ActionMask& mask, Rng* rng);
double state_value(const ActorCritic& net, const StateVector& state);

// Greedy (argmax) policy over a shared, read-only network.
Policy ppo_policy(std::shared_ptr<const ActorCritic> net);

struct Transition {
    StateVector state;
    int node = 0;
    int reuse = 0;
    double log_prob_node = 0.0;
    double log_prob_reuse = 0.0;
    double log_prob = 0.0;
    double reward = 0.0;      // as used for learning (possibly normalized)
    double raw_reward = 0.0;  // as returned by the environment
    double value = 0.0;
    nn::Mask node_mask;
    std::array<std::uint8_t, 2> reuse_mask{};
    bool done = false;
    double latency_ms = 0.0;
    bool slo_met = true;
};

struct Trajectory {
    std::vector<Transition> steps;
    double bootstrap_value = 0.0;  // critic value after the last step, 0 when it ended an episode
    std::vector<double> episode_returns;  // raw returns of episodes completed inside this trajectory
};

// Running variance of the discounted return, used to scale rewards.
struct RewardNormalizer {
    double gamma = 0.99;
    double running_return = 0.0;
    double count = 0.0;
    double mean = 0.0;
    double m2 = 0.0;

    double scale(double reward, bool done);
    double stddev() const;
    nlohmann::json to_json() const;
    static RewardNormalizer from_json(const nlohmann::json& j);
};

Trajectory ppo_collect(Environment& env, const ActorCritic& net, int steps, Rng& rng,
                       RewardNormalizer* normalizer = nullptr);

std::vector<double> compute_rewards_to_go(const std::vector<double>& rewards, const std::vector<bool>& dones,
                                          double gamma, double bootstrap_value);

std::vector<double> one_step_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                                        const std::vector<bool>& dones, double gamma, double bootstrap_value);
std::vector<double> gae_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                                   const std::vector<bool>& dones, double gamma, double lambda,
                                   double bootstrap_value);

// Advantages per config; normalized to zero mean and unit variance when enabled.
std::vector<double> compute_advantages(const Trajectory& traj, const PpoConfig& config);

struct PpoBatch {
    std::vector<Transition> steps;
    std::vector<double> advantages;
    std::vector<double> returns;
};

PpoBatch make_batch(Trajectory traj, const PpoConfig& config);

// min(r A, clip(r, 1 - eps, 1 + eps) A)
double clipped_objective(double ratio, double advantage, double eps);

struct PpoOptimizers {
    nn::AdamState<float> trunk, node_head, reuse_head, critic;

    static PpoOptimizers for_net(const ActorCritic& net, const PpoConfig& config);
};

struct PpoUpdateStats {
    double surrogate = 0.0;
    double clip_fraction = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    int minibatches = 0;
    bool aborted = false;
    std::string error;
};

// Epochs of minibatch ascent on the clipped surrogate plus entropy bonus, and
// descent on the critic's squared error. On a non-finite loss or gradient the
// network and optimizers are restored and `aborted` is set.
PpoUpdateStats ppo_update(ActorCritic& net, PpoOptimizers& opt, const PpoBatch& batch, const PpoConfig& config,
                          Rng& rng, double entropy_coef);

struct CurveRow {
    std::int64_t env_steps = 0;
    double mean_episode_reward = 0.0;
    double mean_latency_ms = 0.0;
    double p99_latency_ms = 0.0;
    double slo_violation_rate = 0.0;
    double clip_fraction = 0.0;
    double entropy = 0.0;
};

std::string learning_curve_csv(const std::vector<CurveRow>& rows);
std::vector<CurveRow> parse_learning_curve_csv(std::string_view text);

struct TrainOptions {
    std::int64_t total_steps = 0;
    std::uint64_t seed = 0;
    const PolicyCheckpoint* resume = nullptr;
    std::ostream* log = nullptr;  // receives step=... lines
    int log_every = 1;            // updates between log lines
    // Stops after this many updates in this call (for interruption tests); 0 = no limit.
    std::int64_t max_updates = 0;
    // Called with a fresh checkpoint and this call's curve every checkpoint_every updates.
    int checkpoint_every = 0;
    std::function<void(const PolicyCheckpoint&, const std::vector<CurveRow>&)> on_checkpoint;
};

struct PpoTrainResult {
    ActorCritic net;
    PpoOptimizers optimizers;
    RewardNormalizer normalizer;
    std::vector<CurveRow> curve;  // rows produced by this call
    std::int64_t env_steps = 0;
    std::int64_t updates = 0;
    int aborted_updates = 0;
    PolicyCheckpoint checkpoint;
};

// Each update resets the environment and draws its rollout and shuffle
// streams from (seed, update index), so a resumed run repeats the
// uninterrupted one exactly.
PpoTrainResult train_ppo(std::shared_ptr<const Scenario> scenario, const EnvConfig& env_config,
                         const PpoConfig& config, const TrainOptions& options);

PolicyCheckpoint ppo_checkpoint(const ActorCritic& net, const PpoOptimizers* opt, const RewardNormalizer& norm,
                                const PpoConfig& config, std::int64_t env_steps, std::int64_t updates,
                                std::uint64_t seed);
ActorCritic actor_critic_from_checkpoint(const PolicyCheckpoint& ckpt);

}  // namespace secsched::agents
