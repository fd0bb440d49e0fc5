#pragma once

#include "secsched/scenario.hpp"

namespace secsched {

inline constexpr double kReferenceFreqGhz = 2.4;

// One placement: request k goes to `node`, in a fresh container when new_container.
struct PlacementDecision {
    Request request;
    NodeSpec node;
    bool new_container = false;
};

struct LatencyBreakdown {
    double cold_ms = 0.0;
    double comp_ms = 0.0;
    double comm_ms = 0.0;
    double wait_ms = 0.0;
    double total_ms = 0.0;

    bool operator==(const LatencyBreakdown&) const = default;
};

struct LatencyOptions {
    bool frequency_scaling = false;
};

// Image pull plus initialization; initialization scales with ref_mem_mb / mem_mb.
double cold_start_ms(const FunctionSpec& fn, const NodeSpec& node, double mem_mb, bool new_container);

double compute_ms(const Request& req, const NodeSpec& node, bool frequency_scaling);

// Forward transfer of the request data only; the response path is not modeled.
double comm_ms(const Request& req, const LinkModel& model, const NodeSpec& src, const NodeSpec& dst);

LatencyBreakdown end_to_end(const PlacementDecision& decision, const Scenario& scenario, double wait_ms,
                            const LatencyOptions& options = {});

// Same composition, addressed by ids into the scenario.
LatencyBreakdown end_to_end(const Scenario& scenario, const Request& req, int node_id, bool new_container,
                            double wait_ms = 0.0, const LatencyOptions& options = {});

// Boundary counts as met.
inline bool check_slo(const LatencyBreakdown& b, const Request& req)
{
    return b.total_ms <= req.slo_ms;
}

}  // namespace secsched
