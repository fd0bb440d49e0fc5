#include "secsched/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <json.hpp>

#include "secsched/io.hpp"
#include "secsched/rng.hpp"

namespace secsched {

using nlohmann::json;

void Scenario::validate() const
{
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].node_id != static_cast<int>(i)) {
            throw DataError("scenario: node ids must be dense, node " + std::to_string(i) + " has id " +
                            std::to_string(nodes[i].node_id));
        }
    }
    for (std::size_t i = 0; i < functions.size(); ++i) {
        if (functions[i].function_id != static_cast<int>(i)) {
            throw DataError("scenario: function ids must be dense, function " + std::to_string(i) + " has id " +
                            std::to_string(functions[i].function_id));
        }
    }
    double last = -std::numeric_limits<double>::infinity();
    for (const auto& r : trace) {
        if (r.source_node < 0 || r.source_node >= static_cast<int>(nodes.size())) {
            throw DataError("scenario: request " + std::to_string(r.request_id) + " has unknown source node " +
                            std::to_string(r.source_node));
        }
        if (r.function_id < 0 || r.function_id >= static_cast<int>(functions.size())) {
            throw DataError("scenario: request " + std::to_string(r.request_id) + " has unknown function " +
                            std::to_string(r.function_id));
        }
        if (r.arrival_ms < last) {
            throw DataError("scenario: trace not sorted at request " + std::to_string(r.request_id));
        }
        last = r.arrival_ms;
    }
}

std::vector<NodeSpec> generate_topology(int num_nodes, int num_types, std::uint64_t seed, const TopologyRanges& ranges)
{
    if (num_nodes < 1 || num_types < 1) {
        throw UsageError("generate_topology: num_nodes and num_types must be >= 1");
    }
    Rng rng(seed);
    struct NodeType {
        double freq, mem, bw;
        int cores;
    };
    std::vector<NodeType> types;
    types.reserve(static_cast<std::size_t>(num_types));
    for (int t = 0; t < num_types; ++t) {
        NodeType nt{};
        nt.freq = rng.uniform(ranges.freq_lo_ghz, ranges.freq_hi_ghz);
        // Whole MB keeps memory bookkeeping exact in floating point.
        nt.mem = std::round(rng.uniform(ranges.mem_lo_mb, ranges.mem_hi_mb));
        nt.cores = static_cast<int>(rng.uniform_int(ranges.cores_lo, ranges.cores_hi));
        nt.bw = rng.uniform(ranges.bw_lo_mbps, ranges.bw_hi_mbps);
        types.push_back(nt);
    }
    std::vector<NodeSpec> nodes;
    nodes.reserve(static_cast<std::size_t>(num_nodes));
    for (int i = 0; i < num_nodes; ++i) {
        NodeSpec n;
        n.node_id = i;
        n.pos_x = rng.uniform(0.0, ranges.extent_m);
        n.pos_y = rng.uniform(0.0, ranges.extent_m);
        n.type_id = static_cast<int>(rng.index(types.size()));
        const auto& t = types[static_cast<std::size_t>(n.type_id)];
        n.cpu_cores = t.cores;
        n.cpu_freq_ghz = t.freq;
        n.mem_mb = t.mem;
        n.registry_bw_mbps = t.bw;
        nodes.push_back(n);
    }
    return nodes;
}

std::vector<FunctionSpec> generate_functions(int num_functions, std::uint64_t seed, const FunctionRanges& ranges)
{
    if (num_functions < 1) {
        throw UsageError("generate_functions: num_functions must be >= 1");
    }
    Rng rng(seed);
    std::vector<FunctionSpec> out;
    out.reserve(static_cast<std::size_t>(num_functions));
    for (int i = 0; i < num_functions; ++i) {
        FunctionSpec f;
        f.function_id = i;
        f.image_mb = rng.uniform(ranges.image_lo_mb, ranges.image_hi_mb);
        f.base_init_ms = rng.uniform(ranges.init_lo_ms, ranges.init_hi_ms);
        f.default_cpu_cores = ranges.cpu_cores_choices[rng.index(ranges.cpu_cores_choices.size())];
        f.default_mem_mb = ranges.mem_choices_mb[rng.index(ranges.mem_choices_mb.size())];
        f.ref_mem_mb = f.default_mem_mb;
        f.default_cpu_time_ms = rng.uniform(ranges.cpu_time_lo_ms, ranges.cpu_time_hi_ms);
        f.default_data_mb = rng.uniform(ranges.data_lo_mb, ranges.data_hi_mb);
        out.push_back(f);
    }
    return out;
}

std::vector<Request> generate_workload(const std::vector<FunctionSpec>& functions, const std::vector<NodeSpec>& nodes,
                                       const WorkloadParams& params, std::uint64_t seed)
{
    if (functions.empty() || nodes.empty()) {
        throw UsageError("generate_workload: function and node lists must be non-empty");
    }
    if (params.num_requests < 1 || params.zipf_beta < 0.0 || !(params.arrival_rate_per_s > 0.0)) {
        throw UsageError("generate_workload: need num_requests >= 1, zipf_beta >= 0, arrival_rate_per_s > 0");
    }
    Rng rng(seed);
    const ZipfSampler zipf(functions.size(), params.zipf_beta);
    const double rate_per_ms = params.arrival_rate_per_s / 1000.0;
    const double p = params.perturbation;

    std::vector<Request> trace;
    trace.reserve(static_cast<std::size_t>(params.num_requests));
    double clock = 0.0;
    for (int i = 0; i < params.num_requests; ++i) {
        clock += rng.exponential(rate_per_ms);
        Request r;
        r.request_id = i;
        r.arrival_ms = clock;
        r.source_node = static_cast<int>(rng.index(nodes.size()));
        const auto& fn = functions[zipf(rng)];
        r.function_id = fn.function_id;
        r.cpu_cores = std::max(1, static_cast<int>(std::lround(fn.default_cpu_cores * rng.uniform(1.0 - p, 1.0 + p))));
        r.mem_mb = std::max(1.0, std::round(fn.default_mem_mb * rng.uniform(1.0 - p, 1.0 + p)));
        r.cpu_time_ms = std::max(1e-3, fn.default_cpu_time_ms * rng.uniform(1.0 - p, 1.0 + p));
        r.data_mb = std::max(1e-6, fn.default_data_mb * rng.uniform(1.0 - p, 1.0 + p));
        r.slo_ms = rng.uniform(params.slo_lo_ms, params.slo_hi_ms);
        trace.push_back(r);
    }
    return trace;
}

std::vector<Request> generate_workload(const std::vector<FunctionSpec>& functions, const std::vector<NodeSpec>& nodes,
                                       int num_requests, double zipf_beta, double arrival_rate_per_s,
                                       std::uint64_t seed)
{
    WorkloadParams params;
    params.num_requests = num_requests;
    params.zipf_beta = zipf_beta;
    params.arrival_rate_per_s = arrival_rate_per_s;
    return generate_workload(functions, nodes, params, seed);
}

Scenario generate_scenario(const ScenarioParams& params, std::uint64_t seed)
{
    Scenario s;
    s.rng_seed = seed;
    s.link_model = params.link_model;
    s.nodes = generate_topology(params.num_nodes, params.num_types, derive_seed(seed, 1), params.topology);
    s.functions = generate_functions(params.num_functions, derive_seed(seed, 2), params.catalog);
    s.trace = generate_workload(s.functions, s.nodes, params.workload, derive_seed(seed, 3));
    return s;
}

ZipfSampler::ZipfSampler(std::size_t n, double beta)
{
    if (n == 0) {
        throw UsageError("ZipfSampler: empty support");
    }
    cdf_.resize(n);
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        acc += std::pow(static_cast<double>(r + 1), -beta);
        cdf_[r] = acc;
    }
    for (auto& c : cdf_) {
        c /= acc;
    }
    cdf_.back() = 1.0;
}

std::size_t ZipfSampler::sample(double u) const
{
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
}

double ZipfSampler::mass(std::size_t rank) const
{
    return rank == 0 ? cdf_[0] : cdf_[rank] - cdf_[rank - 1];
}

double distance_m(const NodeSpec& a, const NodeSpec& b)
{
    return std::hypot(a.pos_x - b.pos_x, a.pos_y - b.pos_y);
}

double link_rate(const LinkModel& model, const NodeSpec& src, const NodeSpec& dst)
{
    if (src.node_id == dst.node_id && model.local_is_free) {
        return std::numeric_limits<double>::infinity();
    }
    const double tiers = std::floor(distance_m(src, dst) / model.tier_meters);
    return model.base_rate_mbps / (1.0 + tiers);
}

// --- CSV ---

namespace {

constexpr const char* kTopologyHeader = "node_id,pos_x,pos_y,type_id,cpu_cores,cpu_freq_ghz,mem_mb,registry_bw_mbps";
constexpr const char* kFunctionsHeader =
    "function_id,image_mb,base_init_ms,ref_mem_mb,default_cpu_cores,default_mem_mb,default_cpu_time_ms,default_data_mb";
constexpr const char* kTraceHeader =
    "request_id,arrival_ms,source_node,function_id,cpu_cores,mem_mb,cpu_time_ms,data_mb,slo_ms";

struct RowReader {
    const CsvTable& table;
    const CsvRow& row;

    double real(const char* name) const { return parse_double(row.fields[table.column(name)], row.line, name); }
    int integer(const char* name) const
    {
        return static_cast<int>(parse_int(row.fields[table.column(name)], row.line, name));
    }
};

[[noreturn]] void row_error(std::size_t line, const std::string& what)
{
    throw DataError("line " + std::to_string(line) + ": " + what);
}

std::string f(double v)
{
    return format_double(v);
}

}  // namespace

TopologyLoad load_topology_csv(const std::filesystem::path& path)
{
    const auto table = read_csv(path);
    TopologyLoad out;
    std::set<int> seen;
    try {
        for (const auto& row : table.rows) {
            const RowReader rd{table, row};
            NodeSpec n;
            n.node_id = rd.integer("node_id");
            n.pos_x = rd.real("pos_x");
            n.pos_y = rd.real("pos_y");
            n.type_id = rd.integer("type_id");
            n.cpu_cores = rd.integer("cpu_cores");
            n.cpu_freq_ghz = rd.real("cpu_freq_ghz");
            n.mem_mb = rd.real("mem_mb");
            n.registry_bw_mbps = rd.real("registry_bw_mbps");
            if (n.cpu_cores < 1) {
                row_error(row.line, "cpu_cores must be >= 1");
            }
            if (!(n.mem_mb > 0.0)) {
                row_error(row.line, "mem_mb must be > 0");
            }
            if (!(n.registry_bw_mbps > 0.0)) {
                row_error(row.line, "registry_bw_mbps must be > 0");
            }
            if (!(n.cpu_freq_ghz > 0.0)) {
                row_error(row.line, "cpu_freq_ghz must be > 0");
            }
            if (!seen.insert(n.node_id).second) {
                row_error(row.line, "duplicate node_id " + std::to_string(n.node_id));
            }
            out.nodes.push_back(n);
        }
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    std::stable_sort(out.nodes.begin(), out.nodes.end(),
                     [](const NodeSpec& a, const NodeSpec& b) { return a.node_id < b.node_id; });
    for (std::size_t i = 0; i < out.nodes.size(); ++i) {
        out.original_ids.push_back(out.nodes[i].node_id);
        if (out.nodes[i].node_id != static_cast<int>(i)) {
            out.reindexed = true;
            out.nodes[i].node_id = static_cast<int>(i);
        }
    }
    return out;
}

std::vector<FunctionSpec> load_functions_csv(const std::filesystem::path& path)
{
    const auto table = read_csv(path);
    std::vector<FunctionSpec> out;
    try {
        for (const auto& row : table.rows) {
            const RowReader rd{table, row};
            FunctionSpec fn;
            fn.function_id = rd.integer("function_id");
            fn.image_mb = rd.real("image_mb");
            fn.base_init_ms = rd.real("base_init_ms");
            fn.ref_mem_mb = rd.real("ref_mem_mb");
            fn.default_cpu_cores = rd.integer("default_cpu_cores");
            fn.default_mem_mb = rd.real("default_mem_mb");
            fn.default_cpu_time_ms = rd.real("default_cpu_time_ms");
            fn.default_data_mb = rd.real("default_data_mb");
            if (!(fn.image_mb > 0.0 && fn.base_init_ms > 0.0 && fn.ref_mem_mb > 0.0 && fn.default_cpu_cores > 0 &&
                  fn.default_mem_mb > 0.0 && fn.default_cpu_time_ms > 0.0 && fn.default_data_mb > 0.0)) {
                row_error(row.line, "function fields must be positive");
            }
            if (fn.function_id != static_cast<int>(out.size())) {
                row_error(row.line, "function ids must be dense and ordered, expected " + std::to_string(out.size()));
            }
            out.push_back(fn);
        }
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return out;
}

TraceLoad load_trace_csv(const std::filesystem::path& path, const std::vector<FunctionSpec>& functions,
                         const std::vector<NodeSpec>& nodes)
{
    const auto table = read_csv(path);
    TraceLoad out;
    try {
        double last = -std::numeric_limits<double>::infinity();
        for (const auto& row : table.rows) {
            const RowReader rd{table, row};
            Request r;
            r.request_id = rd.integer("request_id");
            r.arrival_ms = rd.real("arrival_ms");
            r.source_node = rd.integer("source_node");
            r.function_id = rd.integer("function_id");
            r.cpu_cores = rd.integer("cpu_cores");
            r.mem_mb = rd.real("mem_mb");
            r.cpu_time_ms = rd.real("cpu_time_ms");
            r.data_mb = rd.real("data_mb");
            r.slo_ms = rd.real("slo_ms");
            if (r.function_id < 0 || r.function_id >= static_cast<int>(functions.size())) {
                row_error(row.line, "unknown function_id " + std::to_string(r.function_id));
            }
            if (r.source_node < 0 || r.source_node >= static_cast<int>(nodes.size())) {
                row_error(row.line, "unknown source_node " + std::to_string(r.source_node));
            }
            if (r.cpu_cores < 1) {
                row_error(row.line, "cpu_cores must be >= 1");
            }
            if (!(r.mem_mb > 0.0) || r.cpu_time_ms < 0.0 || r.data_mb < 0.0 || !(r.slo_ms > 0.0)) {
                row_error(row.line, "request resource fields out of range");
            }
            if (r.arrival_ms < last) {
                ++out.reorder_warnings;
            }
            last = std::max(last, r.arrival_ms);
            out.requests.push_back(r);
        }
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    std::stable_sort(out.requests.begin(), out.requests.end(),
                     [](const Request& a, const Request& b) { return a.arrival_ms < b.arrival_ms; });
    return out;
}

std::string topology_csv(const std::vector<NodeSpec>& nodes)
{
    std::string out = std::string(kTopologyHeader) + "\n";
    for (const auto& n : nodes) {
        out += std::to_string(n.node_id) + "," + f(n.pos_x) + "," + f(n.pos_y) + "," + std::to_string(n.type_id) + "," +
               std::to_string(n.cpu_cores) + "," + f(n.cpu_freq_ghz) + "," + f(n.mem_mb) + "," +
               f(n.registry_bw_mbps) + "\n";
    }
    return out;
}

std::string functions_csv(const std::vector<FunctionSpec>& functions)
{
    std::string out = std::string(kFunctionsHeader) + "\n";
    for (const auto& fn : functions) {
        out += std::to_string(fn.function_id) + "," + f(fn.image_mb) + "," + f(fn.base_init_ms) + "," +
               f(fn.ref_mem_mb) + "," + std::to_string(fn.default_cpu_cores) + "," + f(fn.default_mem_mb) + "," +
               f(fn.default_cpu_time_ms) + "," + f(fn.default_data_mb) + "\n";
    }
    return out;
}

std::string trace_csv(const std::vector<Request>& trace)
{
    std::string out = std::string(kTraceHeader) + "\n";
    for (const auto& r : trace) {
        out += std::to_string(r.request_id) + "," + f(r.arrival_ms) + "," + std::to_string(r.source_node) + "," +
               std::to_string(r.function_id) + "," + std::to_string(r.cpu_cores) + "," + f(r.mem_mb) + "," +
               f(r.cpu_time_ms) + "," + f(r.data_mb) + "," + f(r.slo_ms) + "\n";
    }
    return out;
}

// --- JSON ---

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(NodeSpec, node_id, pos_x, pos_y, type_id, cpu_cores, cpu_freq_ghz, mem_mb,
                                   registry_bw_mbps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FunctionSpec, function_id, image_mb, base_init_ms, ref_mem_mb, default_cpu_cores,
                                   default_mem_mb, default_cpu_time_ms, default_data_mb)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Request, request_id, arrival_ms, source_node, function_id, cpu_cores, mem_mb,
                                   cpu_time_ms, data_mb, slo_ms)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LinkModel, base_rate_mbps, tier_meters, local_is_free)

std::string scenario_json(const Scenario& s)
{
    json j;
    j["format"] = "secsched-scenario";
    j["version"] = 1;
    j["rng_seed"] = s.rng_seed;
    j["link_model"] = s.link_model;
    j["nodes"] = s.nodes;
    j["functions"] = s.functions;
    j["trace"] = s.trace;
    return j.dump(1) + "\n";
}

Scenario parse_scenario_json(std::string_view text)
{
    Scenario s;
    try {
        const auto j = json::parse(text);
        if (j.value("format", std::string{}) != "secsched-scenario") {
            throw DataError("scenario.json: unexpected format tag");
        }
        s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
        s.link_model = j.at("link_model").get<LinkModel>();
        s.nodes = j.at("nodes").get<std::vector<NodeSpec>>();
        s.functions = j.at("functions").get<std::vector<FunctionSpec>>();
        s.trace = j.at("trace").get<std::vector<Request>>();
    } catch (const json::exception& e) {
        throw DataError(std::string("scenario.json: ") + e.what());
    }
    s.validate();
    return s;
}

void save_scenario(const Scenario& scenario, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "topology.csv", topology_csv(scenario.nodes));
    write_file_atomic(dir / "functions.csv", functions_csv(scenario.functions));
    write_file_atomic(dir / "trace.csv", trace_csv(scenario.trace));
    write_file_atomic(dir / "scenario.json", scenario_json(scenario));
}

Scenario load_scenario(const std::filesystem::path& path)
{
    const auto file = std::filesystem::is_directory(path) ? path / "scenario.json" : path;
    return parse_scenario_json(read_file(file));
}

std::string scenario_fingerprint(const Scenario& scenario)
{
    return hex64(fnv1a64(scenario_json(scenario)));
}

}  // namespace secsched
