#include <doctest.h>

#include <memory>

#include "secsched/agents/heuristics.hpp"
#include "secsched/io.hpp"
#include "secsched/rng.hpp"
#include "secsched/simenv.hpp"

using namespace secsched;

namespace {

// One node (4 cores, 1024 MB, 100 MB/s registry) and one function whose
// cold start at 256 MB is 10/100 s + 100 ms = 200 ms.
std::shared_ptr<Scenario> one_node_scenario()
{
    auto s = std::make_shared<Scenario>();
    s->nodes = {NodeSpec{0, 0.0, 0.0, 0, 4, 2.4, 1024.0, 100.0}};
    s->functions = {FunctionSpec{0, 10.0, 100.0, 256.0, 1, 256.0, 100.0, 0.0}};
    s->trace = {
        Request{0, 0.0, 0, 0, 2, 256.0, 200.0, 0.0, 400.0},
        Request{1, 100.0, 0, 0, 4, 256.0, 200.0, 0.0, 400.0},
        Request{2, 320.0, 0, 0, 1, 256.0, 100.0, 0.0, 400.0},
        Request{3, 2000.0, 0, 0, 1, 256.0, 100.0, 0.0, 400.0},
    };
    return s;
}

std::shared_ptr<Scenario> small_scenario(int nodes, int requests, std::uint64_t seed, double rate = 10.0)
{
    ScenarioParams p;
    p.num_nodes = nodes;
    p.num_types = 2;
    p.num_functions = 8;
    p.workload.num_requests = requests;
    p.workload.arrival_rate_per_s = rate;
    return std::make_shared<Scenario>(generate_scenario(p, seed));
}

}  // namespace

TEST_CASE("hand-simulated timeline")
{
    EnvConfig cfg;
    cfg.keep_alive_ms = 1000.0;
    Environment env(one_node_scenario(), cfg);
    env.reset(0);

    // r0 at t=0: empty cluster, only New is valid.
    CHECK(env.cluster().clock_ms == 0.0);
    CHECK(env.mask().reuse_new[0][0] == 0);
    CHECK(env.mask().reuse_new[0][1] == 1);
    auto o = env.step({0, ReuseChoice::New});
    CHECK(o.breakdown.cold_ms == doctest::Approx(200.0));
    CHECK(o.breakdown.comp_ms == 100.0);
    CHECK(o.breakdown.total_ms == doctest::Approx(300.0));
    CHECK(o.reward == doctest::Approx(-0.3));

    // r1 needs all 4 cores; it waits for r0's completion at t=300 and reuses.
    CHECK(env.cluster().clock_ms == 300.0);
    CHECK(env.current_wait_ms() == 200.0);
    CHECK(env.cluster().free_cpu_cores[0] == 4);
    CHECK(env.cluster().free_mem_mb[0] == 768.0);
    CHECK(env.mask().reuse_new[0][0] == 1);
    o = env.step({0, ReuseChoice::Reuse});
    CHECK(o.breakdown.cold_ms == 0.0);
    CHECK(o.breakdown.comp_ms == 50.0);
    CHECK(o.breakdown.wait_ms == 200.0);
    CHECK(o.breakdown.total_ms == 250.0);
    CHECK(o.reward == -0.25);
    CHECK(o.slo_met);

    // r2 arrives at 320 while r1 holds every core until 350.
    CHECK(env.cluster().clock_ms == 350.0);
    CHECK(env.current_wait_ms() == 30.0);
    o = env.step({0, ReuseChoice::New});
    CHECK(o.breakdown.total_ms == doctest::Approx(330.0));

    // By t=2000 both containers expired (1350 and 1650); memory is back.
    CHECK(env.cluster().clock_ms == 2000.0);
    CHECK(env.cluster().free_mem_mb[0] == 1024.0);
    CHECK(env.cluster().free_cpu_cores[0] == 4);
    CHECK(env.mask().reuse_new[0][0] == 0);
    o = env.step({0, ReuseChoice::New});
    CHECK(o.done);
    CHECK(env.done());
    CHECK(env.deferred_count() == 2);
}

TEST_CASE("strict mode rejects deferral and excludes wait")
{
    EnvConfig cfg;
    cfg.strict_paper = true;
    Environment env(one_node_scenario(), cfg);
    env.reset(0);
    CHECK_THROWS_AS(env.step({0, ReuseChoice::New}), UnschedulableError);

    auto s = one_node_scenario();
    s->trace = {Request{0, 0.0, 0, 0, 1, 256.0, 100.0, 0.0, 400.0}, Request{1, 10.0, 0, 0, 1, 256.0, 100.0, 0.0, 400.0}};
    Environment strict(s, cfg);
    strict.reset(0);
    const auto o = strict.step({0, ReuseChoice::New});
    CHECK(o.reward == doctest::Approx(-(o.breakdown.cold_ms + o.breakdown.comp_ms) / 1000.0));
}

TEST_CASE("unschedulable request surfaces as an error")
{
    auto s = one_node_scenario();
    s->trace = {Request{0, 0.0, 0, 0, 1, 65536.0, 100.0, 0.0, 400.0}};
    Environment env(s);
    CHECK_THROWS_AS(env.reset(0), UnschedulableError);
}

TEST_CASE("masks")
{
    auto s = one_node_scenario();
    ClusterState st(s->nodes, 1);
    const auto m = action_mask(st, s->trace[0]);
    CHECK(m.node[0] == 1);
    CHECK(m.reuse_new[0][0] == 0);
    CHECK(m.reuse_new[0][1] == 1);

    Request huge = s->trace[0];
    huge.mem_mb = 65536.0;
    CHECK(!action_mask(st, huge).any());

    // Exactly c_k free memory still admits New, and leaves zero.
    Request exact = s->trace[0];
    exact.mem_mb = 1024.0;
    CHECK(action_mask(st, exact).reuse_new[0][1] == 1);
    st.start(0, 0, 1, 1024.0, true, 100.0);
    CHECK(st.free_mem_mb[0] == 0.0);
    st.advance_to(100.0, 60000.0);
    const auto both = action_mask(st, s->trace[0]);
    CHECK(both.reuse_new[0][0] == 1);
    CHECK(both.reuse_new[0][1] == 0);
}

TEST_CASE("state encoding")
{
    auto s = small_scenario(5, 20, 3);
    Environment env(s);
    const auto& st = env.reset(1);
    REQUIRE(st.size() == state_size(5));
    for (int v = 0; v < 5; ++v) {
        CHECK(st[4 * v + 0] == 1.0f);
        CHECK(st[4 * v + 1] == 1.0f);
        CHECK(st[4 * v + 2] == 0.0f);
        CHECK(st[4 * v + 3] == 0.0f);
    }
    CHECK(env.reset(1) == st);

    ClusterState cs(s->nodes, s->functions.size());
    cs.start(3, 0, 1, 128.0, true, 1e9);
    Request req = s->trace[0];
    req.slo_ms = 400.0;
    const auto enc = encode_state(cs, req, *s);
    CHECK(enc[4 * 3 + 3] == doctest::Approx(1.0 / 16.0));
    CHECK(enc[enc.size() - 1] == 1.0f);
    for (Eigen::Index i = 0; i < enc.size(); ++i) {
        CHECK(enc[i] >= 0.0f);
        CHECK(enc[i] <= 1.5f);
    }
}

TEST_CASE("invalid actions")
{
    auto s = one_node_scenario();
    Environment env(s);
    env.reset(0);
    CHECK_THROWS_AS(env.step({0, ReuseChoice::Reuse}), InvalidActionError);

    EnvConfig cfg;
    cfg.remap_invalid_actions = true;
    Environment lenient(s, cfg);
    lenient.reset(0);
    const auto o = lenient.step({0, ReuseChoice::Reuse});
    CHECK(o.remapped);
    CHECK(o.applied == Action{0, ReuseChoice::New});
}

TEST_CASE("remap to the cheapest valid action when the node is full")
{
    auto s = small_scenario(4, 30, 8);
    EnvConfig cfg;
    cfg.remap_invalid_actions = true;
    Environment env(s, cfg);
    env.reset(0);
    const auto out = env.step({99, ReuseChoice::New});
    CHECK(out.remapped);
    Environment ref(s);
    ref.reset(0);
    CHECK(out.applied == agents::greedy_latency_action(ref));
}

TEST_CASE("capacity conservation under random play")
{
    auto s = small_scenario(4, 3000, 12, 60.0);
    Environment env(s);
    env.reset(0);
    auto policy = agents::random_valid_policy(5);
    std::size_t steps = 0;
    while (!env.done()) {
        const auto a = policy(env);
        const auto o = env.step(a);
        CHECK(o.reward == doctest::Approx(-o.breakdown.total_ms / 1000.0));
        if (a.reuse_new == ReuseChoice::Reuse) {
            CHECK(o.breakdown.cold_ms == 0.0);
        } else {
            CHECK(o.breakdown.cold_ms > 0.0);
        }
        const auto& c = env.cluster();
        for (std::size_t v = 0; v < s->nodes.size(); ++v) {
            double held = 0.0;
            int cores = 0;
            for (const auto& ci : c.containers) {
                if (ci.alive && static_cast<std::size_t>(ci.node_id) == v) {
                    held += ci.mem_mb;
                    if (ci.status == ContainerStatus::Busy) {
                        cores += ci.cpu_cores;
                    }
                }
            }
            REQUIRE(c.free_cpu_cores[v] >= 0);
            REQUIRE(c.free_cpu_cores[v] <= s->nodes[v].cpu_cores);
            REQUIRE(c.free_mem_mb[v] >= 0.0);
            REQUIRE(c.free_mem_mb[v] <= s->nodes[v].mem_mb);
            REQUIRE(held + c.free_mem_mb[v] == s->nodes[v].mem_mb);
            REQUIRE(cores + c.free_cpu_cores[v] == s->nodes[v].cpu_cores);
        }
        ++steps;
    }
    CHECK(steps == s->trace.size());
}

TEST_CASE("single-node episodes place everything on node 0")
{
    auto s = small_scenario(1, 50, 2);
    const auto r = run_episode(agents::greedy_latency_policy(), s, EnvConfig{}, 0);
    REQUIRE(r.records.size() == 50);
    for (const auto& rec : r.records) {
        CHECK(rec.node_id == 0);
    }
}

TEST_CASE("episode determinism and csv round trip")
{
    auto s = small_scenario(5, 400, 9);
    const auto a = run_episode(agents::random_valid_policy(3), s, EnvConfig{}, 1, false);
    const auto b = run_episode(agents::random_valid_policy(3), s, EnvConfig{}, 1, false);
    CHECK(episode_csv(a) == episode_csv(b));
    const auto parsed = parse_episode_csv(episode_csv(a));
    REQUIRE(parsed.records.size() == a.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(parsed.records[i].breakdown == a.records[i].breakdown);
        CHECK(parsed.records[i].reward == a.records[i].reward);
    }

    EnvConfig strict;
    strict.strict_paper = true;
    auto sparse = small_scenario(5, 100, 4, 0.5);
    const auto r = run_episode(agents::greedy_latency_policy(), sparse, strict, 0, false);
    double total = 0.0, reward = 0.0;
    for (const auto& rec : r.records) {
        total += rec.breakdown.total_ms;
        reward += rec.reward;
    }
    CHECK(reward == doctest::Approx(-total / 1000.0));
}
