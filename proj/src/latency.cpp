#include "secsched/latency.hpp"

namespace secsched {

double cold_start_ms(const FunctionSpec& fn, const NodeSpec& node, double mem_mb, bool new_container)
{
    if (!new_container) {
        return 0.0;
    }
    const double pull_ms = fn.image_mb / node.registry_bw_mbps * 1000.0;
    const double init_ms = fn.base_init_ms * (fn.ref_mem_mb / mem_mb);
    return pull_ms + init_ms;
}

double compute_ms(const Request& req, const NodeSpec& node, bool frequency_scaling)
{
    double ms = req.cpu_time_ms / static_cast<double>(req.cpu_cores);
    if (frequency_scaling) {
        ms *= kReferenceFreqGhz / node.cpu_freq_ghz;
    }
    return ms;
}

double comm_ms(const Request& req, const LinkModel& model, const NodeSpec& src, const NodeSpec& dst)
{
    if (req.data_mb == 0.0) {
        return 0.0;
    }
    return req.data_mb / link_rate(model, src, dst) * 1000.0;
}

LatencyBreakdown end_to_end(const PlacementDecision& d, const Scenario& scenario, double wait_ms,
                            const LatencyOptions& options)
{
    const auto& fn = scenario.function(d.request.function_id);
    const auto& src = scenario.node(d.request.source_node);
    LatencyBreakdown b;
    b.cold_ms = cold_start_ms(fn, d.node, d.request.mem_mb, d.new_container);
    b.comp_ms = compute_ms(d.request, d.node, options.frequency_scaling);
    b.comm_ms = comm_ms(d.request, scenario.link_model, src, d.node);
    b.wait_ms = wait_ms;
    b.total_ms = b.cold_ms + b.comp_ms + b.comm_ms + b.wait_ms;
    return b;
}

LatencyBreakdown end_to_end(const Scenario& scenario, const Request& req, int node_id, bool new_container,
                            double wait_ms, const LatencyOptions& options)
{
    return end_to_end(PlacementDecision{req, scenario.node(node_id), new_container}, scenario, wait_ms, options);
}

}  // namespace secsched
