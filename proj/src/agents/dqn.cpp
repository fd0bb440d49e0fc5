#include "secsched/agents/dqn.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <ostream>

#include "secsched/io.hpp"
#include "secsched/metrics.hpp"

namespace secsched::agents {

using nlohmann::json;
using Vec = nn::Vector<float>;
using Mat = nn::Matrix<float>;

void DqnConfig::validate() const
{
    auto need = [](bool ok, const std::string& what) {
        if (!ok) {
            throw UsageError("dqn config: " + what);
        }
    };
    need(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
    need(lr > 0.0, "lr must be positive");
    need(n_step >= 1, "n_step must be at least 1");
    need(replay_capacity >= batch_size && batch_size >= 1, "replay_capacity must be at least batch_size >= 1");
    need(target_sync >= 1 && train_every >= 1 && report_every >= 1, "periods must be at least 1");
    need(learning_starts >= 0, "learning_starts must be non-negative");
    need(epsilon_end >= 0.0 && epsilon_start <= 1.0 && epsilon_end <= epsilon_start, "epsilon schedule is invalid");
    need(epsilon_fraction > 0.0 && epsilon_fraction <= 1.0, "epsilon_fraction must lie in (0, 1]");
    need(huber_delta > 0.0 && max_grad_norm > 0.0 && reward_scale > 0.0, "scales must be positive");
    need(!hidden.empty() && std::all_of(hidden.begin(), hidden.end(), [](int h) { return h > 0; }),
         "hidden layer sizes must be positive");
}

json to_json(const DqnConfig& c)
{
    return json{{"gamma", c.gamma},
                {"lr", c.lr},
                {"n_step", c.n_step},
                {"replay_capacity", c.replay_capacity},
                {"target_sync", c.target_sync},
                {"batch_size", c.batch_size},
                {"learning_starts", c.learning_starts},
                {"train_every", c.train_every},
                {"epsilon_start", c.epsilon_start},
                {"epsilon_end", c.epsilon_end},
                {"epsilon_fraction", c.epsilon_fraction},
                {"huber_delta", c.huber_delta},
                {"max_grad_norm", c.max_grad_norm},
                {"reward_scale", c.reward_scale},
                {"report_every", c.report_every},
                {"hidden", c.hidden}};
}

DqnConfig dqn_config_from_json(const json& j)
{
    DqnConfig c;
    try {
        c.gamma = j.value("gamma", c.gamma);
        c.lr = j.value("lr", c.lr);
        c.n_step = j.value("n_step", c.n_step);
        c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
        c.target_sync = j.value("target_sync", c.target_sync);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_starts = j.value("learning_starts", c.learning_starts);
        c.train_every = j.value("train_every", c.train_every);
        c.epsilon_start = j.value("epsilon_start", c.epsilon_start);
        c.epsilon_end = j.value("epsilon_end", c.epsilon_end);
        c.epsilon_fraction = j.value("epsilon_fraction", c.epsilon_fraction);
        c.huber_delta = j.value("huber_delta", c.huber_delta);
        c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
        c.reward_scale = j.value("reward_scale", c.reward_scale);
        c.report_every = j.value("report_every", c.report_every);
        c.hidden = j.value("hidden", c.hidden);
    } catch (const json::exception& e) {
        throw UsageError(std::string("dqn config: ") + e.what());
    }
    c.validate();
    return c;
}

nn::Mask joint_mask(const ActionMask& mask)
{
    nn::Mask m;
    m.reserve(mask.reuse_new.size() * 2);
    for (const auto& rn : mask.reuse_new) {
        m.push_back(rn[0]);
        m.push_back(rn[1]);
    }
    return m;
}

Action dqn_greedy_action(const nn::Mlp<float>& q, const StateVector& state, const ActionMask& mask)
{
    return joint_action(nn::masked_argmax(nn::forward(q, Vec(state)), joint_mask(mask)));
}

Policy dqn_policy(std::shared_ptr<const nn::Mlp<float>> q)
{
    return [q](const Environment& env) { return dqn_greedy_action(*q, env.state(), env.mask()); };
}

double epsilon_at(const DqnConfig& c, std::int64_t step, std::int64_t total_steps)
{
    const double horizon = std::max(1.0, c.epsilon_fraction * static_cast<double>(total_steps));
    const double frac = std::min(1.0, static_cast<double>(step) / horizon);
    return c.epsilon_start + frac * (c.epsilon_end - c.epsilon_start);
}

NStepTarget n_step_target(const std::vector<double>& rewards, const std::vector<bool>& dones, std::size_t start,
                          int n, double gamma)
{
    NStepTarget t;
    double disc = 1.0;
    for (int i = 0; i < n; ++i) {
        const std::size_t k = start + static_cast<std::size_t>(i);
        t.reward_sum += disc * rewards[k];
        disc *= gamma;
        if (dones[k]) {
            return t;
        }
    }
    t.bootstrap_discount = disc;
    return t;
}

double huber(double x, double delta)
{
    const double a = std::abs(x);
    return a <= delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
}

double huber_grad(double x, double delta)
{
    return std::clamp(x, -delta, delta);
}

namespace {

struct Replay {
    struct Item {
        StateVector state;
        int action = 0;
        double reward_sum = 0.0;
        double discount = 0.0;
        StateVector next_state;
        nn::Mask next_mask;
    };
    std::vector<Item> items;
    std::size_t capacity = 0;
    std::size_t next = 0;

    void push(Item it)
    {
        if (items.size() < capacity) {
            items.push_back(std::move(it));
        } else {
            items[next] = std::move(it);
        }
        next = (next + 1) % capacity;
    }
};

struct Pending {
    StateVector state;
    int action = 0;
    double reward = 0.0;
    bool done = false;
};

double max_valid(const Vec& q, const nn::Mask& mask)
{
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        if (mask[static_cast<std::size_t>(i)]) {
            best = std::max(best, static_cast<double>(q(i)));
        }
    }
    return best;
}

}  // namespace

nn::Mlp<float> q_network_from_checkpoint(const PolicyCheckpoint& ckpt)
{
    if (ckpt.algo != "dqn") {
        throw DataError("checkpoint holds a '" + ckpt.algo + "' policy, expected 'dqn'");
    }
    auto q = from_blob(ckpt.network("q"));
    if (q.input_size() != ckpt.state_size || q.output_size() != 2 * ckpt.num_nodes) {
        throw DataError("checkpoint Q network disagrees with the header's |V| or state size");
    }
    return q;
}

DqnTrainResult train_dqn(std::shared_ptr<const Scenario> scenario, const EnvConfig& env_config,
                         const DqnConfig& config, const TrainOptions& options)
{
    config.validate();
    if (options.total_steps < 1) {
        throw UsageError("train_dqn: total_steps must be positive");
    }
    const int num_nodes = static_cast<int>(scenario->nodes.size());
    const int ssize = state_size(num_nodes);
    EnvConfig train_env = env_config;
    train_env.remap_invalid_actions = true;
    Environment env(scenario, train_env);

    DqnTrainResult res;
    std::uint64_t seed = options.seed;
    nn::AdamState<float> adam;
    if (options.resume) {
        const auto& ck = *options.resume;
        check_compatible(ck, num_nodes);
        res.q = q_network_from_checkpoint(ck);
        adam = nn::AdamState<float>::for_net(res.q, config.lr);
        if (const auto* blob = ck.optimizer_blob("adam_q")) {
            restore_adam(*blob, adam, res.q);
        }
        res.env_steps = ck.env_steps;
        res.learner_steps = ck.updates;
        seed = ck.seed;
    } else {
        Rng init_rng(derive_seed(seed, 0));
        std::vector<int> sizes{ssize};
        sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
        sizes.push_back(2 * num_nodes);
        res.q = nn::make_mlp<float>(sizes, init_rng, 1.0, 0.01);
        adam = nn::AdamState<float>::for_net(res.q, config.lr);
    }
    nn::Mlp<float> target = res.q;
    Rng rng(derive_seed(seed, 1 + static_cast<std::uint64_t>(res.env_steps)));
    Replay replay;
    replay.capacity = static_cast<std::size_t>(config.replay_capacity);
    std::deque<Pending> window;

    env.reset(seed);
    std::int64_t steps_since_start = 0;
    std::vector<double> lat, episode_returns;
    std::size_t violations = 0;
    double episode_return = 0.0;

    auto flush = [&](bool terminal, const StateVector& next_state, const nn::Mask& next_mask) {
        // Emits n-step items for every window entry that can no longer grow.
        while (!window.empty() && (terminal || static_cast<int>(window.size()) >= config.n_step)) {
            std::vector<double> r;
            std::vector<bool> d;
            for (const auto& p : window) {
                r.push_back(p.reward);
                d.push_back(p.done);
            }
            const auto t = n_step_target(r, d, 0, static_cast<int>(window.size()), config.gamma);
            replay.push({window.front().state, window.front().action, t.reward_sum,
                         terminal ? 0.0 : t.bootstrap_discount, next_state, next_mask});
            window.pop_front();
            if (!terminal) {
                break;
            }
        }
    };

    while (res.env_steps < options.total_steps) {
        if (options.max_updates > 0 && steps_since_start >= options.max_updates) {
            break;
        }
        const StateVector s = env.state();
        const auto& mask = env.mask();
        Action a;
        if (rng.uniform() < epsilon_at(config, res.env_steps, options.total_steps)) {
            std::size_t pick = rng.index(mask.count());
            for (int i = 0; i < 2 * num_nodes; ++i) {
                if (mask.allows(joint_action(i)) && pick-- == 0) {
                    a = joint_action(i);
                    break;
                }
            }
        } else {
            a = dqn_greedy_action(res.q, s, mask);
        }
        const auto out = env.step(a);
        ++res.env_steps;
        ++steps_since_start;
        lat.push_back(out.breakdown.total_ms);
        violations += out.slo_met ? 0 : 1;
        episode_return += out.reward;

        window.push_back({s, joint_index(out.applied), out.reward * config.reward_scale, out.done});
        if (out.done) {
            flush(true, s, joint_mask(mask));
            episode_returns.push_back(episode_return);
            episode_return = 0.0;
            env.reset(seed);
        } else {
            flush(false, env.state(), joint_mask(env.mask()));
        }

        if (static_cast<std::int64_t>(replay.items.size()) >= std::max(config.learning_starts, config.batch_size) &&
            res.env_steps % config.train_every == 0) {
            const auto B = static_cast<Eigen::Index>(config.batch_size);
            std::vector<std::size_t> idx(static_cast<std::size_t>(B));
            for (auto& i : idx) {
                i = rng.index(replay.items.size());
            }
            Mat states(ssize, B), next_states(ssize, B);
            for (Eigen::Index j = 0; j < B; ++j) {
                states.col(j) = replay.items[idx[static_cast<std::size_t>(j)]].state;
                next_states.col(j) = replay.items[idx[static_cast<std::size_t>(j)]].next_state;
            }
            nn::MlpCache<float> cache;
            const Mat q = nn::forward(res.q, states, &cache);
            const Mat q_next = nn::forward(target, next_states);
            Mat grad = Mat::Zero(q.rows(), B);
            for (Eigen::Index j = 0; j < B; ++j) {
                const auto& it = replay.items[idx[static_cast<std::size_t>(j)]];
                const double boot = it.discount > 0.0 ? it.discount * max_valid(q_next.col(j), it.next_mask) : 0.0;
                const double err = static_cast<double>(q(it.action, j)) - (it.reward_sum + boot);
                grad(it.action, j) = static_cast<float>(huber_grad(err, config.huber_delta) / static_cast<double>(B));
            }
            auto g = nn::backward(res.q, cache, grad);
            nn::clip_global_norm<float>({&g}, static_cast<float>(config.max_grad_norm));
            nn::adam_step(adam, res.q, g);
            ++res.learner_steps;
            if (res.learner_steps % config.target_sync == 0) {
                target = res.q;
            }
        }

        if (res.env_steps % config.report_every == 0 || res.env_steps == options.total_steps) {
            CurveRow row;
            row.env_steps = res.env_steps;
            const double lsum = std::accumulate(lat.begin(), lat.end(), 0.0);
            row.mean_episode_reward =
                episode_returns.empty() ? -lsum / 1000.0
                                        : std::accumulate(episode_returns.begin(), episode_returns.end(), 0.0) /
                                              static_cast<double>(episode_returns.size());
            row.mean_latency_ms = lat.empty() ? 0.0 : lsum / static_cast<double>(lat.size());
            row.p99_latency_ms = lat.empty() ? 0.0 : percentile(lat, 0.99);
            row.slo_violation_rate = lat.empty() ? 0.0 : static_cast<double>(violations) / static_cast<double>(lat.size());
            res.curve.push_back(row);
            if (options.log) {
                *options.log << "step=" << row.env_steps << " reward=" << format_double(row.mean_episode_reward)
                             << " p99=" << format_double(row.p99_latency_ms)
                             << " slo_viol=" << format_double(row.slo_violation_rate) << std::endl;
            }
            lat.clear();
            episode_returns.clear();
            violations = 0;
        }
    }

    auto& c = res.checkpoint;
    c.algo = "dqn";
    c.num_nodes = num_nodes;
    c.state_version = kStateLayoutVersion;
    c.state_size = ssize;
    c.env_steps = res.env_steps;
    c.updates = res.learner_steps;
    c.seed = seed;
    c.config = to_json(config);
    c.networks = {to_blob("q", res.q)};
    c.optimizer = {adam_blob("adam_q", adam, res.q)};
    return res;
}

}  // namespace secsched::agents
