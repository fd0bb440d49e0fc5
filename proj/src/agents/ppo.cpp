#include "secsched/agents/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "secsched/io.hpp"
#include "secsched/metrics.hpp"

namespace secsched::agents {

using nlohmann::json;
using Vec = nn::Vector<float>;
using Mat = nn::Matrix<float>;

void PpoConfig::validate() const
{
    auto need = [](bool ok, const std::string& what) {
        if (!ok) {
            throw UsageError("ppo config: " + what);
        }
    };
    need(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
    need(clip_eps > 0.0, "clip_eps must be positive");
    need(actor_lr > 0.0 && critic_lr > 0.0, "learning rates must be positive");
    need(epochs_per_update >= 1, "epochs_per_update must be at least 1");
    need(minibatch_size >= 1, "minibatch_size must be at least 1");
    need(rollout_steps >= 1, "rollout_steps must be at least 1");
    need(entropy_coef >= 0.0, "entropy_coef must be non-negative");
    need(anneal_steps >= 0, "anneal_steps must be non-negative");
    need(value_coef > 0.0, "value_coef must be positive");
    need(gae_lambda >= 0.0 && gae_lambda <= 1.0, "gae_lambda must lie in [0, 1]");
    need(max_grad_norm > 0.0, "max_grad_norm must be positive");
    need(!hidden.empty() && std::all_of(hidden.begin(), hidden.end(), [](int h) { return h > 0; }),
         "hidden layer sizes must be positive");
    need(reuse_hidden > 0, "reuse_hidden must be positive");
}

json to_json(const PpoConfig& c)
{
    return json{{"gamma", c.gamma},
                {"clip_eps", c.clip_eps},
                {"actor_lr", c.actor_lr},
                {"critic_lr", c.critic_lr},
                {"epochs_per_update", c.epochs_per_update},
                {"minibatch_size", c.minibatch_size},
                {"rollout_steps", c.rollout_steps},
                {"entropy_coef", c.entropy_coef},
                {"anneal_entropy", c.anneal_entropy},
                {"anneal_steps", c.anneal_steps},
                {"value_coef", c.value_coef},
                {"advantage_mode", c.advantage_mode == AdvantageMode::Gae ? "gae" : "one_step"},
                {"gae_lambda", c.gae_lambda},
                {"normalize_advantages", c.normalize_advantages},
                {"normalize_rewards", c.normalize_rewards},
                {"max_grad_norm", c.max_grad_norm},
                {"hidden", c.hidden},
                {"reuse_hidden", c.reuse_hidden},
                {"hidden_gain", c.hidden_gain},
                {"output_gain", c.output_gain}};
}

PpoConfig ppo_config_from_json(const json& j)
{
    PpoConfig c;
    try {
        c.gamma = j.value("gamma", c.gamma);
        c.clip_eps = j.value("clip_eps", c.clip_eps);
        c.actor_lr = j.value("actor_lr", c.actor_lr);
        c.critic_lr = j.value("critic_lr", c.critic_lr);
        c.epochs_per_update = j.value("epochs_per_update", c.epochs_per_update);
        c.minibatch_size = j.value("minibatch_size", c.minibatch_size);
        c.rollout_steps = j.value("rollout_steps", c.rollout_steps);
        c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
        c.anneal_entropy = j.value("anneal_entropy", c.anneal_entropy);
        c.anneal_steps = j.value("anneal_steps", c.anneal_steps);
        c.value_coef = j.value("value_coef", c.value_coef);
        const auto mode = j.value("advantage_mode", std::string("gae"));
        if (mode == "gae") {
            c.advantage_mode = AdvantageMode::Gae;
        } else if (mode == "one_step") {
            c.advantage_mode = AdvantageMode::OneStep;
        } else {
            throw UsageError("ppo config: advantage_mode must be 'gae' or 'one_step', got '" + mode + "'");
        }
        c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
        c.normalize_advantages = j.value("normalize_advantages", c.normalize_advantages);
        c.normalize_rewards = j.value("normalize_rewards", c.normalize_rewards);
        c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
        c.hidden = j.value("hidden", c.hidden);
        c.reuse_hidden = j.value("reuse_hidden", c.reuse_hidden);
        c.hidden_gain = j.value("hidden_gain", c.hidden_gain);
        c.output_gain = j.value("output_gain", c.output_gain);
    } catch (const json::exception& e) {
        throw UsageError(std::string("ppo config: ") + e.what());
    }
    c.validate();
    return c;
}

bool ActorCritic::all_finite() const
{
    return trunk.all_finite() && node_head.all_finite() && reuse_head.all_finite() && critic.all_finite();
}

ActorCritic make_actor_critic(int num_nodes, int state_size, const PpoConfig& config, Rng& rng)
{
    config.validate();
    const int h = config.hidden.back();
    std::vector<int> trunk_sizes{state_size};
    trunk_sizes.insert(trunk_sizes.end(), config.hidden.begin(), config.hidden.end());
    std::vector<int> critic_sizes = trunk_sizes;
    critic_sizes.push_back(1);

    ActorCritic net;
    net.trunk = nn::make_mlp<float>(trunk_sizes, rng, config.hidden_gain, config.hidden_gain, nn::Activation::Tanh);
    net.node_head = nn::make_mlp<float>({h, num_nodes}, rng, config.hidden_gain, config.output_gain);
    net.reuse_head =
        nn::make_mlp<float>({h + num_nodes, config.reuse_hidden, 2}, rng, config.hidden_gain, config.output_gain);
    net.critic = nn::make_mlp<float>(critic_sizes, rng, config.hidden_gain, 1.0);
    return net;
}

namespace {

Vec reuse_input(const Eigen::Ref<const Vec>& features, int node, int num_nodes)
{
    Vec in = Vec::Zero(features.size() + num_nodes);
    in.head(features.size()) = features;
    in(features.size() + node) = 1.0f;
    return in;
}

nn::Mask reuse_mask_of(const ActionMask& mask, int node)
{
    const auto& rn = mask.reuse_new[static_cast<std::size_t>(node)];
    return {rn[0], rn[1]};
}

nn::Sample pick(const Vec& logits, const nn::Mask& mask, Rng* rng)
{
    if (rng) {
        return nn::masked_sample(nn::CategoricalHead<float>{logits, mask}, *rng);
    }
    const int i = nn::masked_argmax(logits, mask);
    return {i, static_cast<double>(nn::masked_log_softmax(logits, mask)(i))};
}

}  // namespace

ActResult act(const ActorCritic& net, const StateVector& state, const ActionMask& mask, Rng* rng)
{
    const Vec h = nn::forward(net.trunk, Vec(state));
    const Vec node_logits = nn::forward(net.node_head, h);
    const auto node = pick(node_logits, mask.node, rng);
    const Vec reuse_logits = nn::forward(net.reuse_head, reuse_input(h, node.index, net.num_nodes()));
    const auto reuse = pick(reuse_logits, reuse_mask_of(mask, node.index), rng);

    ActResult r;
    r.action = Action{node.index, static_cast<ReuseChoice>(reuse.index)};
    r.log_prob_node = node.log_prob;
    r.log_prob_reuse = reuse.log_prob;
    r.log_prob = node.log_prob + reuse.log_prob;
    r.value = state_value(net, state);
    return r;
}

double state_value(const ActorCritic& net, const StateVector& state)
{
    return static_cast<double>(nn::forward(net.critic, Vec(state))(0));
}

Policy ppo_policy(std::shared_ptr<const ActorCritic> net)
{
    return [net](const Environment& env) {
        const Vec h = nn::forward(net->trunk, Vec(env.state()));
        const int node = nn::masked_argmax(Vec(nn::forward(net->node_head, h)), env.mask().node);
        const Vec reuse_logits = nn::forward(net->reuse_head, reuse_input(h, node, net->num_nodes()));
        const int reuse = nn::masked_argmax(reuse_logits, reuse_mask_of(env.mask(), node));
        return Action{node, static_cast<ReuseChoice>(reuse)};
    };
}

double RewardNormalizer::scale(double reward, bool done)
{
    running_return = running_return * gamma + reward;
    count += 1.0;
    const double delta = running_return - mean;
    mean += delta / count;
    m2 += delta * (running_return - mean);
    if (done) {
        running_return = 0.0;
    }
    return std::clamp(reward / stddev(), -10.0, 10.0);
}

double RewardNormalizer::stddev() const
{
    const double var = count > 1.0 ? m2 / count : 1.0;
    return std::sqrt(var + 1e-8);
}

json RewardNormalizer::to_json() const
{
    return json{{"gamma", gamma}, {"running_return", running_return}, {"count", count}, {"mean", mean}, {"m2", m2}};
}

RewardNormalizer RewardNormalizer::from_json(const json& j)
{
    RewardNormalizer n;
    n.gamma = j.at("gamma").get<double>();
    n.running_return = j.at("running_return").get<double>();
    n.count = j.at("count").get<double>();
    n.mean = j.at("mean").get<double>();
    n.m2 = j.at("m2").get<double>();
    return n;
}

Trajectory ppo_collect(Environment& env, const ActorCritic& net, int steps, Rng& rng, RewardNormalizer* normalizer)
{
    if (steps < 1) {
        throw UsageError("ppo_collect: steps must be at least 1");
    }
    Trajectory traj;
    traj.steps.reserve(static_cast<std::size_t>(steps));
    if (env.done()) {
        env.reset(env.seed());
    }
    double episode_return = 0.0;
    for (int t = 0; t < steps; ++t) {
        Transition tr;
        tr.state = env.state();
        const auto& mask = env.mask();
        const auto a = act(net, tr.state, mask, &rng);
        tr.node = a.action.node;
        tr.reuse = static_cast<int>(a.action.reuse_new);
        tr.log_prob_node = a.log_prob_node;
        tr.log_prob_reuse = a.log_prob_reuse;
        tr.log_prob = a.log_prob;
        tr.value = a.value;
        tr.node_mask = mask.node;
        tr.reuse_mask = mask.reuse_new[static_cast<std::size_t>(tr.node)];

        const auto out = env.step(a.action);
        tr.raw_reward = out.reward;
        tr.reward = normalizer ? normalizer->scale(out.reward, out.done) : out.reward;
        tr.done = out.done;
        tr.latency_ms = out.breakdown.total_ms;
        tr.slo_met = out.slo_met;
        episode_return += out.reward;
        traj.steps.push_back(std::move(tr));
        if (out.done) {
            traj.episode_returns.push_back(episode_return);
            episode_return = 0.0;
            env.reset(env.seed());
        }
    }
    traj.bootstrap_value = traj.steps.back().done ? 0.0 : state_value(net, env.state());
    return traj;
}

std::vector<double> compute_rewards_to_go(const std::vector<double>& rewards, const std::vector<bool>& dones,
                                          double gamma, double bootstrap_value)
{
    std::vector<double> out(rewards.size());
    double next = bootstrap_value;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        if (dones[i]) {
            next = 0.0;
        }
        next = rewards[i] + gamma * next;
        out[i] = next;
    }
    return out;
}

std::vector<double> one_step_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                                        const std::vector<bool>& dones, double gamma, double bootstrap_value)
{
    std::vector<double> out(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        const double next_v = dones[i] ? 0.0 : (i + 1 < rewards.size() ? values[i + 1] : bootstrap_value);
        out[i] = rewards[i] + gamma * next_v - values[i];
    }
    return out;
}

std::vector<double> gae_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                                   const std::vector<bool>& dones, double gamma, double lambda,
                                   double bootstrap_value)
{
    std::vector<double> out(rewards.size());
    double acc = 0.0;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        const double next_v = dones[i] ? 0.0 : (i + 1 < rewards.size() ? values[i + 1] : bootstrap_value);
        const double delta = rewards[i] + gamma * next_v - values[i];
        acc = delta + (dones[i] ? 0.0 : gamma * lambda * acc);
        out[i] = acc;
    }
    return out;
}

namespace {

struct Columns {
    std::vector<double> rewards, values;
    std::vector<bool> dones;
};

Columns columns_of(const Trajectory& traj)
{
    Columns c;
    for (const auto& s : traj.steps) {
        c.rewards.push_back(s.reward);
        c.values.push_back(s.value);
        c.dones.push_back(s.done);
    }
    return c;
}

}  // namespace

std::vector<double> compute_advantages(const Trajectory& traj, const PpoConfig& config)
{
    const auto c = columns_of(traj);
    auto adv = config.advantage_mode == AdvantageMode::Gae
                   ? gae_advantages(c.rewards, c.values, c.dones, config.gamma, config.gae_lambda,
                                    traj.bootstrap_value)
                   : one_step_advantages(c.rewards, c.values, c.dones, config.gamma, traj.bootstrap_value);
    if (config.normalize_advantages && adv.size() > 1) {
        const double n = static_cast<double>(adv.size());
        const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
        double var = 0.0;
        for (double a : adv) {
            var += (a - mean) * (a - mean);
        }
        const double sd = std::sqrt(var / n) + 1e-8;
        for (double& a : adv) {
            a = (a - mean) / sd;
        }
    }
    return adv;
}

PpoBatch make_batch(Trajectory traj, const PpoConfig& config)
{
    PpoBatch b;
    b.advantages = compute_advantages(traj, config);
    const auto c = columns_of(traj);
    b.returns = compute_rewards_to_go(c.rewards, c.dones, config.gamma, traj.bootstrap_value);
    b.steps = std::move(traj.steps);
    return b;
}

double clipped_objective(double ratio, double advantage, double eps)
{
    return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

PpoOptimizers PpoOptimizers::for_net(const ActorCritic& net, const PpoConfig& config)
{
    return PpoOptimizers{nn::AdamState<float>::for_net(net.trunk, config.actor_lr),
                         nn::AdamState<float>::for_net(net.node_head, config.actor_lr),
                         nn::AdamState<float>::for_net(net.reuse_head, config.actor_lr),
                         nn::AdamState<float>::for_net(net.critic, config.critic_lr)};
}

namespace {

// Gradient of (coef_logp * log p[a] + coef_ent * H) w.r.t. masked logits.
struct HeadTerms {
    double log_prob = 0.0;
    double entropy = 0.0;
};

HeadTerms head_terms(const Vec& logits, const nn::Mask& mask, int action)
{
    const Vec logp = nn::masked_log_softmax(logits, mask);
    HeadTerms t;
    t.log_prob = static_cast<double>(logp(action));
    for (Eigen::Index i = 0; i < logp.size(); ++i) {
        if (std::isfinite(logp(i))) {
            t.entropy -= std::exp(static_cast<double>(logp(i))) * static_cast<double>(logp(i));
        }
    }
    return t;
}

void head_gradient(const Vec& logits, const nn::Mask& mask, int action, double entropy, double coef_logp,
                   double coef_ent, Eigen::Ref<Vec> out)
{
    const Vec logp = nn::masked_log_softmax(logits, mask);
    for (Eigen::Index i = 0; i < logp.size(); ++i) {
        if (!std::isfinite(logp(i))) {
            out(i) = 0.0f;
            continue;
        }
        const double lp = static_cast<double>(logp(i));
        const double p = std::exp(lp);
        const double d_logp = (i == action ? 1.0 : 0.0) - p;
        const double d_ent = -p * (lp + entropy);
        out(i) = static_cast<float>(coef_logp * d_logp + coef_ent * d_ent);
    }
}

void shuffle(std::vector<std::size_t>& idx, Rng& rng)
{
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::swap(idx[i - 1], idx[rng.index(i)]);
    }
}

}  // namespace

PpoUpdateStats ppo_update(ActorCritic& net, PpoOptimizers& opt, const PpoBatch& batch, const PpoConfig& config,
                          Rng& rng, double entropy_coef)
{
    const std::size_t n = batch.steps.size();
    if (n == 0) {
        throw UsageError("ppo_update: empty batch");
    }
    if (batch.advantages.size() != n || batch.returns.size() != n) {
        throw UsageError("ppo_update: advantages/returns do not match the batch length");
    }
    const ActorCritic saved_net = net;
    const PpoOptimizers saved_opt = opt;
    const int num_nodes = net.num_nodes();
    const int feat = net.trunk.output_size();
    const int ssize = net.state_size();

    PpoUpdateStats stats;
    double surrogate_sum = 0.0, value_sum = 0.0, entropy_sum = 0.0;
    std::size_t clipped = 0, processed = 0;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto mb = static_cast<std::size_t>(config.minibatch_size);

    try {
        for (int epoch = 0; epoch < config.epochs_per_update; ++epoch) {
            shuffle(order, rng);
            for (std::size_t start = 0; start < n; start += mb) {
                std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + mb)));
                std::sort(idx.begin(), idx.end());
                const auto B = static_cast<Eigen::Index>(idx.size());
                const double inv_b = 1.0 / static_cast<double>(B);

                Mat states(ssize, B);
                for (Eigen::Index j = 0; j < B; ++j) {
                    states.col(j) = batch.steps[idx[static_cast<std::size_t>(j)]].state;
                }
                nn::MlpCache<float> trunk_cache, node_cache, reuse_cache, critic_cache;
                const Mat H = nn::forward(net.trunk, states, &trunk_cache);
                const Mat node_logits = nn::forward(net.node_head, H, &node_cache);
                Mat reuse_in = Mat::Zero(feat + num_nodes, B);
                reuse_in.topRows(feat) = H;
                for (Eigen::Index j = 0; j < B; ++j) {
                    reuse_in(feat + batch.steps[idx[static_cast<std::size_t>(j)]].node, j) = 1.0f;
                }
                const Mat reuse_logits = nn::forward(net.reuse_head, reuse_in, &reuse_cache);
                const Mat values = nn::forward(net.critic, states, &critic_cache);

                Mat g_node(num_nodes, B), g_reuse(2, B), g_value(1, B);
                double mb_loss = 0.0;
                for (Eigen::Index j = 0; j < B; ++j) {
                    const std::size_t k = idx[static_cast<std::size_t>(j)];
                    const auto& s = batch.steps[k];
                    const nn::Mask rmask{s.reuse_mask[0], s.reuse_mask[1]};
                    const Vec nl = node_logits.col(j);
                    const Vec rl = reuse_logits.col(j);
                    const auto tn = head_terms(nl, s.node_mask, s.node);
                    const auto tr = head_terms(rl, rmask, s.reuse);
                    const double new_logp = tn.log_prob + tr.log_prob;
                    const double ratio = std::exp(new_logp - s.log_prob);
                    const double adv = batch.advantages[k];
                    const double surr = clipped_objective(ratio, adv, config.clip_eps);
                    const bool outside = std::abs(ratio - 1.0) > config.clip_eps;
                    // d surr / d log p is r A while the unclipped branch is the minimum, else 0.
                    const double gain = ratio * adv <= surr ? ratio * adv : 0.0;
                    // Loss = -(surrogate + c * entropy), averaged over the minibatch.
                    head_gradient(nl, s.node_mask, s.node, tn.entropy, -gain * inv_b, -entropy_coef * inv_b,
                                  g_node.col(j));
                    head_gradient(rl, rmask, s.reuse, tr.entropy, -gain * inv_b, -entropy_coef * inv_b,
                                  g_reuse.col(j));
                    const double v = static_cast<double>(values(0, j));
                    const double err = v - batch.returns[k];
                    g_value(0, j) = static_cast<float>(config.value_coef * 2.0 * err * inv_b);

                    surrogate_sum += surr;
                    value_sum += err * err;
                    entropy_sum += tn.entropy + tr.entropy;
                    clipped += outside ? 1 : 0;
                    mb_loss += -surr - entropy_coef * (tn.entropy + tr.entropy) + config.value_coef * err * err;
                }
                processed += idx.size();
                if (!std::isfinite(mb_loss)) {
                    throw nn::NumericError("ppo_update: non-finite loss");
                }

                auto gr_reuse = nn::backward(net.reuse_head, reuse_cache, g_reuse);
                auto gr_node = nn::backward(net.node_head, node_cache, g_node);
                Mat g_h = gr_node.input + gr_reuse.input.topRows(feat);
                auto gr_trunk = nn::backward(net.trunk, trunk_cache, g_h);
                auto gr_critic = nn::backward(net.critic, critic_cache, g_value);

                const auto max_norm = static_cast<float>(config.max_grad_norm);
                nn::clip_global_norm<float>({&gr_trunk, &gr_node, &gr_reuse}, max_norm);
                nn::clip_global_norm<float>({&gr_critic}, max_norm);
                nn::adam_step(opt.trunk, net.trunk, gr_trunk);
                nn::adam_step(opt.node_head, net.node_head, gr_node);
                nn::adam_step(opt.reuse_head, net.reuse_head, gr_reuse);
                nn::adam_step(opt.critic, net.critic, gr_critic);
                ++stats.minibatches;
            }
        }
        if (!net.all_finite()) {
            throw nn::NumericError("ppo_update: parameters became non-finite");
        }
    } catch (const nn::NumericError& e) {
        net = saved_net;
        opt = saved_opt;
        stats.aborted = true;
        stats.error = e.what();
    }
    if (processed > 0) {
        const auto p = static_cast<double>(processed);
        stats.surrogate = surrogate_sum / p;
        stats.value_loss = value_sum / p;
        stats.entropy = entropy_sum / p;
        stats.clip_fraction = static_cast<double>(clipped) / p;
    }
    return stats;
}

std::string learning_curve_csv(const std::vector<CurveRow>& rows)
{
    std::string out = "env_steps,mean_episode_reward,mean_latency_ms,p99_latency_ms,slo_violation_rate,clip_fraction,entropy\n";
    for (const auto& r : rows) {
        out += std::to_string(r.env_steps);
        for (double v : {r.mean_episode_reward, r.mean_latency_ms, r.p99_latency_ms, r.slo_violation_rate,
                         r.clip_fraction, r.entropy}) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

std::vector<CurveRow> parse_learning_curve_csv(std::string_view text)
{
    const auto table = parse_csv(text);
    const auto c_steps = table.column("env_steps");
    const auto c_reward = table.column("mean_episode_reward");
    const auto c_mean = table.column("mean_latency_ms");
    const auto c_p99 = table.column("p99_latency_ms");
    const auto c_slo = table.column("slo_violation_rate");
    const auto c_clip = table.column("clip_fraction");
    const auto c_ent = table.column("entropy");
    std::vector<CurveRow> rows;
    for (const auto& r : table.rows) {
        rows.push_back(CurveRow{parse_int(r.fields[c_steps], r.line, "env_steps"),
                                parse_double(r.fields[c_reward], r.line, "mean_episode_reward"),
                                parse_double(r.fields[c_mean], r.line, "mean_latency_ms"),
                                parse_double(r.fields[c_p99], r.line, "p99_latency_ms"),
                                parse_double(r.fields[c_slo], r.line, "slo_violation_rate"),
                                parse_double(r.fields[c_clip], r.line, "clip_fraction"),
                                parse_double(r.fields[c_ent], r.line, "entropy")});
    }
    return rows;
}

PolicyCheckpoint ppo_checkpoint(const ActorCritic& net, const PpoOptimizers* opt, const RewardNormalizer& norm,
                                const PpoConfig& config, std::int64_t env_steps, std::int64_t updates,
                                std::uint64_t seed)
{
    PolicyCheckpoint c;
    c.algo = "ppo";
    c.num_nodes = net.num_nodes();
    c.state_version = kStateLayoutVersion;
    c.state_size = net.state_size();
    c.env_steps = env_steps;
    c.updates = updates;
    c.seed = seed;
    c.config = to_json(config);
    c.normalization = norm.to_json();
    c.networks = {to_blob("actor_trunk", net.trunk), to_blob("node_head", net.node_head),
                  to_blob("reuse_head", net.reuse_head), to_blob("critic", net.critic)};
    if (opt) {
        c.optimizer = {adam_blob("adam_actor_trunk", opt->trunk, net.trunk),
                       adam_blob("adam_node_head", opt->node_head, net.node_head),
                       adam_blob("adam_reuse_head", opt->reuse_head, net.reuse_head),
                       adam_blob("adam_critic", opt->critic, net.critic)};
    }
    return c;
}

ActorCritic actor_critic_from_checkpoint(const PolicyCheckpoint& ckpt)
{
    if (ckpt.algo != "ppo") {
        throw DataError("checkpoint holds a '" + ckpt.algo + "' policy, expected 'ppo'");
    }
    ActorCritic net;
    net.trunk = from_blob(ckpt.network("actor_trunk"));
    net.node_head = from_blob(ckpt.network("node_head"));
    net.reuse_head = from_blob(ckpt.network("reuse_head"));
    net.critic = from_blob(ckpt.network("critic"));
    if (net.num_nodes() != ckpt.num_nodes || net.state_size() != ckpt.state_size) {
        throw DataError("checkpoint networks disagree with the header's |V| or state size");
    }
    return net;
}

PpoTrainResult train_ppo(std::shared_ptr<const Scenario> scenario, const EnvConfig& env_config,
                         const PpoConfig& user_config, const TrainOptions& options)
{
    user_config.validate();
    PpoConfig config = user_config;
    if (config.anneal_steps == 0) {
        config.anneal_steps = options.total_steps;
    }
    if (options.total_steps < config.rollout_steps) {
        throw UsageError("train_ppo: total_steps (" + std::to_string(options.total_steps) +
                         ") must be at least rollout_steps (" + std::to_string(config.rollout_steps) + ")");
    }
    const int num_nodes = static_cast<int>(scenario->nodes.size());
    EnvConfig train_env = env_config;
    train_env.remap_invalid_actions = true;
    Environment env(scenario, train_env);

    PpoTrainResult res;
    std::uint64_t seed = options.seed;
    if (options.resume) {
        const auto& ck = *options.resume;
        check_compatible(ck, num_nodes);
        res.net = actor_critic_from_checkpoint(ck);
        res.optimizers = PpoOptimizers::for_net(res.net, config);
        const std::pair<const char*, std::pair<nn::AdamState<float>*, const nn::Mlp<float>*>> adams[] = {
            {"adam_actor_trunk", {&res.optimizers.trunk, &res.net.trunk}},
            {"adam_node_head", {&res.optimizers.node_head, &res.net.node_head}},
            {"adam_reuse_head", {&res.optimizers.reuse_head, &res.net.reuse_head}},
            {"adam_critic", {&res.optimizers.critic, &res.net.critic}}};
        for (const auto& [name, target] : adams) {
            if (const auto* blob = ck.optimizer_blob(name)) {
                restore_adam(*blob, *target.first, *target.second);
            }
        }
        res.normalizer = RewardNormalizer::from_json(ck.normalization);
        res.env_steps = ck.env_steps;
        res.updates = ck.updates;
        seed = ck.seed;
    } else {
        Rng init_rng(derive_seed(seed, 0));
        res.net = make_actor_critic(num_nodes, state_size(num_nodes), config, init_rng);
        res.optimizers = PpoOptimizers::for_net(res.net, config);
        res.normalizer.gamma = config.gamma;
    }

    const std::int64_t total_updates = options.total_steps / config.rollout_steps;
    std::int64_t done_here = 0;
    while (res.updates < total_updates) {
        if (options.max_updates > 0 && done_here >= options.max_updates) {
            break;
        }
        const auto u = static_cast<std::uint64_t>(res.updates);
        Rng rollout_rng(derive_seed(seed, 2 * u + 1));
        Rng update_rng(derive_seed(seed, 2 * u + 2));
        env.reset(seed);
        res.normalizer.running_return = 0.0;

        auto traj = ppo_collect(env, res.net, config.rollout_steps, rollout_rng,
                                config.normalize_rewards ? &res.normalizer : nullptr);

        CurveRow row;
        std::vector<double> lat;
        std::size_t violations = 0;
        double reward_sum = 0.0;
        for (const auto& s : traj.steps) {
            lat.push_back(s.latency_ms);
            violations += s.slo_met ? 0 : 1;
            reward_sum += s.raw_reward;
        }
        row.mean_episode_reward =
            traj.episode_returns.empty()
                ? reward_sum
                : std::accumulate(traj.episode_returns.begin(), traj.episode_returns.end(), 0.0) /
                      static_cast<double>(traj.episode_returns.size());
        row.mean_latency_ms = std::accumulate(lat.begin(), lat.end(), 0.0) / static_cast<double>(lat.size());
        row.p99_latency_ms = percentile(lat, 0.99);
        row.slo_violation_rate = static_cast<double>(violations) / static_cast<double>(lat.size());

        const double progress =
            std::min(1.0, static_cast<double>(res.env_steps) / static_cast<double>(config.anneal_steps));
        const double ent = config.anneal_entropy ? config.entropy_coef * (1.0 - progress) : config.entropy_coef;
        const auto batch = make_batch(std::move(traj), config);
        const auto stats = ppo_update(res.net, res.optimizers, batch, config, update_rng, ent);
        if (stats.aborted) {
            ++res.aborted_updates;
            if (options.log) {
                *options.log << "update " << res.updates << " aborted: " << stats.error << '\n';
            }
        }
        row.clip_fraction = stats.clip_fraction;
        row.entropy = stats.entropy;

        ++res.updates;
        ++done_here;
        res.env_steps += config.rollout_steps;
        row.env_steps = res.env_steps;
        res.curve.push_back(row);
        if (options.log && (res.updates % std::max(1, options.log_every) == 0 || res.updates == total_updates)) {
            *options.log << "step=" << row.env_steps << " reward=" << format_double(row.mean_episode_reward)
                         << " p99=" << format_double(row.p99_latency_ms)
                         << " slo_viol=" << format_double(row.slo_violation_rate) << std::endl;
        }
        if (options.on_checkpoint && options.checkpoint_every > 0 && res.updates % options.checkpoint_every == 0 &&
            res.updates < total_updates) {
            options.on_checkpoint(
                ppo_checkpoint(res.net, &res.optimizers, res.normalizer, config, res.env_steps, res.updates, seed),
                res.curve);
        }
    }
    res.checkpoint =
        ppo_checkpoint(res.net, &res.optimizers, res.normalizer, config, res.env_steps, res.updates, seed);
    return res;
}

}  // namespace secsched::agents
