#pragma once

#include <cstdint>

#include "secsched/simenv.hpp"

namespace secsched::agents {

// Uniform over all valid (node, reuse/new) pairs.
Policy random_valid_policy(std::uint64_t seed);

// Valid action with the lowest myopic latency (wait excluded); ties go to the
// lowest node id, then Reuse before New.
Action greedy_latency_action(const Environment& env);
Policy greedy_latency_policy();

}  // namespace secsched::agents
