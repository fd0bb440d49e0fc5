#pragma once

// Multi-step DQN over the flattened joint action space: Q has 2|V| outputs,
// index node * 2 + reuse_new, and invalid actions are excluded at argmax.

#include <cstdint>
#include <memory>
#include <vector>

#include <json.hpp>

#include "secsched/agents/checkpoint.hpp"
#include "secsched/agents/ppo.hpp"
#include "secsched/neural.hpp"
#include "secsched/simenv.hpp"

namespace secsched::agents {

struct DqnConfig {
    double gamma = 0.99;
    double lr = 5e-4;
    int n_step = 3;
    int replay_capacity = 100000;
    int target_sync = 1000;  // learner steps
    int batch_size = 64;
    int learning_starts = 1000;
    int train_every = 4;  // env steps per learner step
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    double epsilon_fraction = 0.3;
    double huber_delta = 1.0;
    double max_grad_norm = 10.0;
    double reward_scale = 1.0;
    int report_every = 2048;  // env steps per learning-curve row
    std::vector<int> hidden{128, 128};

    void validate() const;
};

nlohmann::json to_json(const DqnConfig& c);
DqnConfig dqn_config_from_json(const nlohmann::json& j);

inline int joint_index(const Action& a)
{
    return a.node * 2 + static_cast<int>(a.reuse_new);
}
inline Action joint_action(int index)
{
    return Action{index / 2, static_cast<ReuseChoice>(index % 2)};
}
nn::Mask joint_mask(const ActionMask& mask);

// Highest-Q valid joint action.
Action dqn_greedy_action(const nn::Mlp<float>& q, const StateVector& state, const ActionMask& mask);
Policy dqn_policy(std::shared_ptr<const nn::Mlp<float>> q);

double epsilon_at(const DqnConfig& c, std::int64_t step, std::int64_t total_steps);

// Discounted n-step return sum_{i<n} gamma^i r_i, truncated at a terminal step.
struct NStepTarget {
    double reward_sum = 0.0;
    double bootstrap_discount = 0.0;  // gamma^n, or 0 when the window hit a terminal step
};
NStepTarget n_step_target(const std::vector<double>& rewards, const std::vector<bool>& dones, std::size_t start,
                          int n, double gamma);

double huber(double x, double delta);
double huber_grad(double x, double delta);

struct DqnTrainResult {
    nn::Mlp<float> q;
    std::vector<CurveRow> curve;
    std::int64_t env_steps = 0;
    std::int64_t learner_steps = 0;
    PolicyCheckpoint checkpoint;
};

// The replay buffer is not checkpointed; a resumed run refills it.
DqnTrainResult train_dqn(std::shared_ptr<const Scenario> scenario, const EnvConfig& env_config,
                         const DqnConfig& config, const TrainOptions& options);

nn::Mlp<float> q_network_from_checkpoint(const PolicyCheckpoint& ckpt);

}  // namespace secsched::agents
