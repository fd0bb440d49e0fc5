#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "secsched/io.hpp"
#include "secsched/rng.hpp"
#include "secsched/scenario.hpp"

using namespace secsched;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name)
{
    auto dir = fs::temp_directory_path() / ("secsched_unit_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& p, const std::string& text)
{
    std::ofstream(p) << text;
}

}  // namespace

TEST_CASE("topology generator respects ranges")
{
    const auto one = generate_topology(1, 1, 7);
    REQUIRE(one.size() == 1);
    const auto& n = one[0];
    CHECK(n.cpu_freq_ghz >= 2.4);
    CHECK(n.cpu_freq_ghz <= 3.6);
    CHECK(n.mem_mb >= 10240.0);
    CHECK(n.mem_mb <= 30720.0);
    CHECK(n.cpu_cores >= 8);
    CHECK(n.cpu_cores <= 32);
    CHECK(n.registry_bw_mbps >= 12.5);
    CHECK(n.registry_bw_mbps <= 125.0);

    const auto many = generate_topology(125, 10, 3);
    REQUIRE(many.size() == 125);
    for (std::size_t i = 0; i < many.size(); ++i) {
        CHECK(many[i].node_id == static_cast<int>(i));
        CHECK(many[i].type_id >= 0);
        CHECK(many[i].type_id < 10);
        CHECK(many[i].pos_x >= 0.0);
        CHECK(many[i].pos_x <= 2000.0);
    }
    CHECK(generate_topology(3, 1, 11) == generate_topology(3, 1, 11));
}

TEST_CASE("workload generator")
{
    const auto nodes = generate_topology(5, 2, 1);
    const auto fns = generate_functions(20, 2);
    const auto trace = generate_workload(fns, nodes, 500, 1.0, 10.0, 3);
    REQUIRE(trace.size() == 500);
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const auto& r = trace[i];
        if (i > 0) {
            CHECK(trace[i - 1].arrival_ms <= r.arrival_ms);
        }
        CHECK(r.slo_ms >= 200.0);
        CHECK(r.slo_ms <= 400.0);
        CHECK(r.cpu_cores >= 1);
        const auto& f = fns[static_cast<std::size_t>(r.function_id)];
        CHECK(r.cpu_time_ms >= 0.8 * f.default_cpu_time_ms - 1e-9);
        CHECK(r.cpu_time_ms <= 1.2 * f.default_cpu_time_ms + 1e-9);
        CHECK(r.data_mb >= 0.8 * f.default_data_mb - 1e-9);
        CHECK(r.data_mb <= 1.2 * f.default_data_mb + 1e-9);
    }
    CHECK(generate_workload(fns, nodes, 500, 1.0, 10.0, 3) == trace);

    const auto single = generate_workload(fns, nodes, 1, 1.0, 10.0, 4);
    REQUIRE(single.size() == 1);
    CHECK(single[0].arrival_ms >= 0.0);

    CHECK_THROWS(generate_workload({}, nodes, 10, 1.0, 10.0, 1));
    CHECK_THROWS(generate_workload(fns, {}, 10, 1.0, 10.0, 1));
}

TEST_CASE("zipf sampler against direct summation")
{
    // Exact normalized mass, computed independently of the sampler.
    auto mass = [](std::size_t n, double beta, std::size_t r) {
        double z = 0.0;
        for (std::size_t i = 1; i <= n; ++i) {
            z += std::pow(static_cast<double>(i), -beta);
        }
        return std::pow(static_cast<double>(r + 1), -beta) / z;
    };
    Rng rng(99);
    const std::size_t draws = 1'000'000;

    SUBCASE("beta 0 is uniform")
    {
        ZipfSampler z(10, 0.0);
        std::vector<double> count(10, 0.0);
        for (std::size_t i = 0; i < draws; ++i) {
            count[z(rng)] += 1.0;
        }
        for (double c : count) {
            CHECK(std::abs(c / draws - 0.1) <= 0.01 * 0.1);
        }
    }
    SUBCASE("beta 1 rank ratio")
    {
        ZipfSampler z(200, 1.0);
        std::vector<double> count(200, 0.0);
        for (std::size_t i = 0; i < draws; ++i) {
            count[z(rng)] += 1.0;
        }
        const double ratio = count[0] / count[1];
        CHECK(ratio >= 1.96);
        CHECK(ratio <= 2.04);
        CHECK(z.mass(0) / z.mass(1) == doctest::Approx(mass(200, 1.0, 0) / mass(200, 1.0, 1)).epsilon(1e-12));
        for (std::size_t r = 0; r < 200; ++r) {
            CHECK(z.mass(r) == doctest::Approx(mass(200, 1.0, r)).epsilon(1e-12));
        }
    }
}

TEST_CASE("link rate")
{
    LinkModel m;
    m.base_rate_mbps = 100.0;
    m.tier_meters = 200.0;
    NodeSpec a, b;
    a.node_id = 0;
    b.node_id = 1;
    CHECK(std::isinf(link_rate(m, a, a)));
    CHECK(link_rate(m, a, b) == 100.0);
    b.pos_x = 450.0;
    CHECK(link_rate(m, a, b) == doctest::Approx(100.0 / 3.0));
    CHECK(link_rate(m, a, b) == link_rate(m, b, a));

    double prev = link_rate(m, a, b);
    for (double d = 450.0; d < 3000.0; d += 37.0) {
        b.pos_x = d;
        const double r = link_rate(m, a, b);
        CHECK(r <= prev);
        CHECK(r > 0.0);
        prev = r;
    }
    m.local_is_free = false;
    CHECK(link_rate(m, a, a) == 100.0);
}

TEST_CASE("topology csv")
{
    const auto dir = scratch_dir("topology");
    const std::string header = "node_id,pos_x,pos_y,type_id,cpu_cores,cpu_freq_ghz,mem_mb,registry_bw_mbps\n";

    write_text(dir / "ok.csv", header + "0,1,2,0,8,2.4,10240,50\n1,3,4,1,16,3.0,20480,100\n");
    CHECK(load_topology_csv(dir / "ok.csv").nodes.size() == 2);

    write_text(dir / "neg.csv", header + "0,1,2,0,8,2.4,-5,50\n");
    try {
        load_topology_csv(dir / "neg.csv");
        FAIL("expected an error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }

    write_text(dir / "empty.csv", header);
    CHECK(load_topology_csv(dir / "empty.csv").nodes.empty());

    write_text(dir / "dup.csv", header + "0,1,2,0,8,2.4,10240,50\n0,3,4,1,16,3.0,20480,100\n");
    CHECK_THROWS_AS(load_topology_csv(dir / "dup.csv"), DataError);

    write_text(dir / "sparse.csv", header + "10,1,2,0,8,2.4,10240,50\n30,3,4,1,16,3.0,20480,100\n");
    const auto sparse = load_topology_csv(dir / "sparse.csv");
    CHECK(sparse.reindexed);
    CHECK(sparse.nodes[1].node_id == 1);
    CHECK(sparse.original_ids == std::vector<int>{10, 30});
}

TEST_CASE("trace csv")
{
    const auto dir = scratch_dir("trace");
    const auto nodes = generate_topology(3, 1, 1);
    const auto fns = generate_functions(200, 1);
    const std::string header = "request_id,arrival_ms,source_node,function_id,cpu_cores,mem_mb,cpu_time_ms,data_mb,slo_ms\n";

    write_text(dir / "ok.csv", header + "0,1,0,1,1,128,50,0.5,300\n1,2,1,2,1,128,50,0.5,300\n2,3,2,3,1,128,50,0.5,300\n");
    auto ok = load_trace_csv(dir / "ok.csv", fns, nodes);
    CHECK(ok.requests.size() == 3);
    CHECK(ok.reorder_warnings == 0);

    write_text(dir / "inv.csv", header + "0,1,0,1,1,128,50,0.5,300\n1,5,1,2,1,128,50,0.5,300\n2,3,2,3,1,128,50,0.5,300\n");
    auto inv = load_trace_csv(dir / "inv.csv", fns, nodes);
    CHECK(inv.reorder_warnings == 1);
    CHECK(inv.requests[1].request_id == 2);
    CHECK(inv.requests[2].request_id == 1);

    write_text(dir / "bad.csv", header + "0,1,0,999,1,128,50,0.5,300\n");
    try {
        load_trace_csv(dir / "bad.csv", fns, nodes);
        FAIL("expected an error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("scenario round trip")
{
    ScenarioParams p;
    p.num_nodes = 6;
    p.num_types = 2;
    p.num_functions = 12;
    p.workload.num_requests = 300;
    const auto s = generate_scenario(p, 5);
    CHECK_NOTHROW(s.validate());

    const auto dir = scratch_dir("roundtrip");
    save_scenario(s, dir);
    for (const char* f : {"scenario.json", "topology.csv", "functions.csv", "trace.csv"}) {
        CHECK(fs::exists(dir / f));
    }
    CHECK(load_scenario(dir) == s);
    CHECK(load_scenario(dir / "scenario.json") == s);
    CHECK(parse_scenario_json(scenario_json(s)) == s);

    // CSV-only path: the three tables reload into the same components.
    CHECK(load_topology_csv(dir / "topology.csv").nodes == s.nodes);
    CHECK(load_functions_csv(dir / "functions.csv") == s.functions);
    CHECK(load_trace_csv(dir / "trace.csv", s.functions, s.nodes).requests == s.trace);

    CHECK(scenario_fingerprint(s) == scenario_fingerprint(generate_scenario(p, 5)));
    CHECK(scenario_fingerprint(s) != scenario_fingerprint(generate_scenario(p, 6)));
}

TEST_CASE("default scenario dimensions")
{
    const auto s = generate_scenario(ScenarioParams{}, 1);
    CHECK(s.nodes.size() == 125);
    CHECK(s.functions.size() == 200);
    std::map<int, int> types;
    for (const auto& n : s.nodes) {
        ++types[n.type_id];
    }
    CHECK(types.rbegin()->first < 10);
}

TEST_CASE("io helpers")
{
    CHECK(format_double(0.1) == "0.1");
    CHECK(parse_double(format_double(1.0 / 3.0), 1, "x") == 1.0 / 3.0);
    CHECK_THROWS_AS(parse_double("abc", 4, "x"), DataError);
    CHECK_THROWS_AS(parse_int("1.5", 4, "x"), DataError);
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(hex64(255) == "00000000000000ff");

    const auto dir = scratch_dir("io");
    write_file_atomic(dir / "a.txt", "hello");
    CHECK(read_file(dir / "a.txt") == "hello");
    CHECK(!fs::exists(dir / "a.txt.partial"));
}
