#include "secsched/agents/heuristics.hpp"

#include <limits>
#include <memory>

#include "secsched/rng.hpp"

namespace secsched::agents {

Policy random_valid_policy(std::uint64_t seed)
{
    auto rng = std::make_shared<Rng>(seed);
    return [rng](const Environment& env) {
        const auto& mask = env.mask();
        std::size_t pick = rng->index(mask.count());
        for (int v = 0; v < env.num_nodes(); ++v) {
            for (auto choice : {ReuseChoice::Reuse, ReuseChoice::New}) {
                const Action a{v, choice};
                if (mask.allows(a) && pick-- == 0) {
                    return a;
                }
            }
        }
        return Action{};  // unreachable: the environment never presents an empty mask
    };
}

Action greedy_latency_action(const Environment& env)
{
    Action best{};
    double best_ms = std::numeric_limits<double>::infinity();
    for (int v = 0; v < env.num_nodes(); ++v) {
        for (auto choice : {ReuseChoice::Reuse, ReuseChoice::New}) {
            const Action a{v, choice};
            if (!env.mask().allows(a)) {
                continue;
            }
            const double ms = env.estimate(a).total_ms;
            if (ms < best_ms) {
                best_ms = ms;
                best = a;
            }
        }
    }
    return best;
}

Policy greedy_latency_policy()
{
    return [](const Environment& env) { return greedy_latency_action(env); };
}

}  // namespace secsched::agents
