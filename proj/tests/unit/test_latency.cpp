#include <doctest.h>

#include <cmath>
#include <limits>

#include "secsched/latency.hpp"
#include "secsched/rng.hpp"
#include "secsched/scenario.hpp"

using namespace secsched;

TEST_CASE("cold start")
{
    FunctionSpec f;
    f.image_mb = 500.0;
    f.base_init_ms = 1000.0;
    f.ref_mem_mb = 512.0;
    NodeSpec n;
    n.registry_bw_mbps = 100.0;
    CHECK(cold_start_ms(f, n, 512.0, false) == 0.0);
    CHECK(cold_start_ms(f, n, 512.0, true) == doctest::Approx(6000.0));

    f.base_init_ms = 400.0;
    f.image_mb = 0.0;
    CHECK(cold_start_ms(f, n, 1024.0, true) == doctest::Approx(200.0));
}

TEST_CASE("compute and communication")
{
    Request r;
    r.cpu_time_ms = 200.0;
    r.cpu_cores = 2;
    NodeSpec n;
    n.cpu_freq_ghz = 3.6;
    CHECK(compute_ms(r, n, false) == 100.0);
    r.cpu_cores = 1;
    CHECK(compute_ms(r, n, false) == 200.0);
    r.cpu_time_ms = 240.0;
    r.cpu_cores = 2;
    CHECK(compute_ms(r, n, true) == doctest::Approx(80.0));

    LinkModel m;
    m.base_rate_mbps = 10.0;
    m.tier_meters = 1000.0;
    NodeSpec a, b;
    b.node_id = 1;
    r.data_mb = 1.0;
    CHECK(comm_ms(r, m, a, a) == 0.0);
    CHECK(comm_ms(r, m, a, b) == doctest::Approx(100.0));
    r.data_mb = 0.0;
    CHECK(comm_ms(r, m, a, b) == 0.0);
}

TEST_CASE("slo boundary")
{
    Request r;
    r.slo_ms = 200.0;
    LatencyBreakdown b;
    b.total_ms = 199.0;
    CHECK(check_slo(b, r));
    b.total_ms = 200.0;
    CHECK(check_slo(b, r));
    b.total_ms = 200.001;
    CHECK(!check_slo(b, r));
}

TEST_CASE("end to end against a straight-line recomputation")
{
    ScenarioParams p;
    p.num_nodes = 8;
    p.num_types = 3;
    p.num_functions = 15;
    p.workload.num_requests = 200;
    const auto s = generate_scenario(p, 21);
    Rng rng(4);
    for (int i = 0; i < 2000; ++i) {
        const auto& req = s.trace[rng.index(s.trace.size())];
        const int v = static_cast<int>(rng.index(s.nodes.size()));
        const bool fresh = rng.uniform() < 0.5;
        const double wait = rng.uniform() < 0.5 ? 0.0 : rng.uniform(0.0, 50.0);
        const bool scale = rng.uniform() < 0.5;
        const auto b = end_to_end(s, req, v, fresh, wait, LatencyOptions{scale});

        const auto& node = s.nodes[static_cast<std::size_t>(v)];
        const auto& src = s.nodes[static_cast<std::size_t>(req.source_node)];
        const auto& fn = s.functions[static_cast<std::size_t>(req.function_id)];
        double cold = 0.0;
        if (fresh) {
            cold = fn.image_mb / node.registry_bw_mbps * 1000.0 + fn.base_init_ms * (fn.ref_mem_mb / req.mem_mb);
        }
        double comp = req.cpu_time_ms / req.cpu_cores;
        if (scale) {
            comp *= 2.4 / node.cpu_freq_ghz;
        }
        double comm = 0.0;
        if (src.node_id != node.node_id) {
            const double d = std::hypot(src.pos_x - node.pos_x, src.pos_y - node.pos_y);
            const double rate = s.link_model.base_rate_mbps / (1.0 + std::floor(d / s.link_model.tier_meters));
            comm = req.data_mb / rate * 1000.0;
        }
        CHECK(b.cold_ms == doctest::Approx(cold).epsilon(1e-12));
        CHECK(b.comp_ms == doctest::Approx(comp).epsilon(1e-12));
        CHECK(b.comm_ms == doctest::Approx(comm).epsilon(1e-12));
        CHECK(b.wait_ms == wait);
        const double sum = b.cold_ms + b.comp_ms + b.comm_ms + b.wait_ms;
        CHECK(std::abs(b.total_ms - sum) <= std::numeric_limits<double>::epsilon() * sum);
    }
}

TEST_CASE("reuse on the source node costs compute only")
{
    const auto s = generate_scenario(ScenarioParams{4, 1, 5, {}, {}, {}, {}}, 2);
    const auto& req = s.trace.front();
    const auto b = end_to_end(s, req, req.source_node, false);
    CHECK(b.cold_ms == 0.0);
    CHECK(b.comm_ms == 0.0);
    CHECK(b.total_ms == b.comp_ms);
}

TEST_CASE("monotonicity")
{
    FunctionSpec f{0, 20.0, 100.0, 256.0, 1, 256.0, 100.0, 1.0};
    NodeSpec n;
    double prev = std::numeric_limits<double>::infinity();
    for (double bw = 10.0; bw < 200.0; bw += 10.0) {
        n.registry_bw_mbps = bw;
        const double c = cold_start_ms(f, n, 256.0, true);
        CHECK(c <= prev);
        prev = c;
    }
    prev = std::numeric_limits<double>::infinity();
    for (double mem = 128.0; mem < 4096.0; mem *= 2.0) {
        const double c = cold_start_ms(f, n, mem, true);
        CHECK(c <= prev);
        prev = c;
    }
    Request r;
    r.cpu_time_ms = 300.0;
    prev = std::numeric_limits<double>::infinity();
    for (int cores = 1; cores <= 8; ++cores) {
        r.cpu_cores = cores;
        const double c = compute_ms(r, n, false);
        CHECK(c <= prev);
        prev = c;
    }
}
