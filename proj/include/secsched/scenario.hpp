#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace secsched {

struct NodeSpec {
    int node_id = 0;
    double pos_x = 0.0;  // meters, local planar projection
    double pos_y = 0.0;
    int type_id = 0;
    int cpu_cores = 1;
    double cpu_freq_ghz = 2.4;
    double mem_mb = 0.0;
    double registry_bw_mbps = 0.0;  // MB/s to the image registry

    bool operator==(const NodeSpec&) const = default;
};

struct FunctionSpec {
    int function_id = 0;
    double image_mb = 0.0;
    double base_init_ms = 0.0;  // init time when allocated ref_mem_mb
    double ref_mem_mb = 0.0;
    int default_cpu_cores = 1;
    double default_mem_mb = 0.0;
    double default_cpu_time_ms = 0.0;
    double default_data_mb = 0.0;

    bool operator==(const FunctionSpec&) const = default;
};

struct Request {
    int request_id = 0;
    double arrival_ms = 0.0;
    int source_node = 0;
    int function_id = 0;
    int cpu_cores = 1;
    double mem_mb = 0.0;
    double cpu_time_ms = 0.0;
    double data_mb = 0.0;
    double slo_ms = 0.0;

    bool operator==(const Request&) const = default;
};

struct LinkModel {
    double base_rate_mbps = 50.0;
    double tier_meters = 250.0;
    bool local_is_free = true;

    bool operator==(const LinkModel&) const = default;
};

struct Scenario {
    std::vector<NodeSpec> nodes;
    std::vector<FunctionSpec> functions;
    LinkModel link_model;
    std::vector<Request> trace;
    std::uint64_t rng_seed = 0;

    bool operator==(const Scenario&) const = default;

    // Throws DataError when references do not resolve or the trace is unsorted.
    void validate() const;

    const NodeSpec& node(int id) const { return nodes.at(static_cast<std::size_t>(id)); }
    const FunctionSpec& function(int id) const { return functions.at(static_cast<std::size_t>(id)); }
};

// Generator ranges for edge hardware and a serverless function catalog.
struct TopologyRanges {
    double extent_m = 2000.0;
    double freq_lo_ghz = 2.4, freq_hi_ghz = 3.6;
    double mem_lo_mb = 10240.0, mem_hi_mb = 30720.0;
    int cores_lo = 8, cores_hi = 32;
    double bw_lo_mbps = 12.5, bw_hi_mbps = 125.0;
};

struct FunctionRanges {
    double image_lo_mb = 5.0, image_hi_mb = 40.0;
    double init_lo_ms = 50.0, init_hi_ms = 200.0;
    std::vector<int> cpu_cores_choices{1, 2, 4};
    std::vector<double> mem_choices_mb{128.0, 256.0, 512.0, 1024.0};
    double cpu_time_lo_ms = 20.0, cpu_time_hi_ms = 200.0;
    double data_lo_mb = 0.05, data_hi_mb = 1.0;
};

struct WorkloadParams {
    int num_requests = 2000;
    double zipf_beta = 1.0;
    double arrival_rate_per_s = 10.0;
    double slo_lo_ms = 200.0, slo_hi_ms = 400.0;
    double perturbation = 0.2;  // per-request +-fraction around function defaults
};

std::vector<NodeSpec> generate_topology(int num_nodes, int num_types, std::uint64_t seed,
                                        const TopologyRanges& ranges = {});

std::vector<FunctionSpec> generate_functions(int num_functions, std::uint64_t seed,
                                             const FunctionRanges& ranges = {});

std::vector<Request> generate_workload(const std::vector<FunctionSpec>& functions,
                                       const std::vector<NodeSpec>& nodes,
                                       const WorkloadParams& params, std::uint64_t seed);

std::vector<Request> generate_workload(const std::vector<FunctionSpec>& functions,
                                       const std::vector<NodeSpec>& nodes, int num_requests,
                                       double zipf_beta, double arrival_rate_per_s, std::uint64_t seed);

// Full scenario with independent streams for topology, catalog and workload.
struct ScenarioParams {
    int num_nodes = 125;
    int num_types = 10;
    int num_functions = 200;
    WorkloadParams workload;
    LinkModel link_model;
    TopologyRanges topology;
    FunctionRanges catalog;
};

Scenario generate_scenario(const ScenarioParams& params, std::uint64_t seed);

// Popularity rank sampler: rank r (0-based) has mass proportional to (r+1)^-beta.
class ZipfSampler {
public:
    ZipfSampler(std::size_t n, double beta);

    template <typename Gen>
    std::size_t operator()(Gen& rng) const { return sample(rng.uniform()); }

    std::size_t sample(double u) const;
    double mass(std::size_t rank) const;
    std::size_t size() const { return cdf_.size(); }

private:
    std::vector<double> cdf_;
};

double distance_m(const NodeSpec& a, const NodeSpec& b);

// MB/s from src to dst. Returns +infinity when the link is local and free,
// so that data/rate evaluates to zero latency.
double link_rate(const LinkModel& model, const NodeSpec& src, const NodeSpec& dst);

// --- file formats ---

struct TopologyLoad {
    std::vector<NodeSpec> nodes;
    std::vector<int> original_ids;  // original_ids[dense id] = id in the file
    bool reindexed = false;
};

struct TraceLoad {
    std::vector<Request> requests;
    std::size_t reorder_warnings = 0;  // rows whose timestamp went backwards
};

TopologyLoad load_topology_csv(const std::filesystem::path& path);
std::vector<FunctionSpec> load_functions_csv(const std::filesystem::path& path);
TraceLoad load_trace_csv(const std::filesystem::path& path, const std::vector<FunctionSpec>& functions,
                         const std::vector<NodeSpec>& nodes);

std::string topology_csv(const std::vector<NodeSpec>& nodes);
std::string functions_csv(const std::vector<FunctionSpec>& functions);
std::string trace_csv(const std::vector<Request>& trace);

std::string scenario_json(const Scenario& scenario);
Scenario parse_scenario_json(std::string_view text);

// Writes topology.csv, functions.csv, trace.csv and scenario.json into dir.
void save_scenario(const Scenario& scenario, const std::filesystem::path& dir);

// Accepts either a scenario.json file or a directory containing one.
Scenario load_scenario(const std::filesystem::path& path);

// Hash of the canonical scenario.json text.
std::string scenario_fingerprint(const Scenario& scenario);

}  // namespace secsched
