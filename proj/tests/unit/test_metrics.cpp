#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "secsched/io.hpp"
#include "secsched/metrics.hpp"
#include "secsched/rng.hpp"

using namespace secsched;

namespace {

EpisodeReport report_of(const std::vector<double>& totals, const std::vector<double>& slos)
{
    EpisodeReport r;
    for (std::size_t i = 0; i < totals.size(); ++i) {
        PlacementRecord p;
        p.request_id = static_cast<int>(i);
        p.breakdown.comp_ms = totals[i];
        p.breakdown.total_ms = totals[i];
        p.slo_ms = slos[i];
        p.slo_met = totals[i] <= slos[i];
        p.decision_time_us = 2.0;
        r.records.push_back(p);
    }
    return r;
}

}  // namespace

TEST_CASE("nearest-rank percentile")
{
    std::vector<double> s;
    for (int i = 1; i <= 100; ++i) {
        s.push_back(i);
    }
    CHECK(percentile(s, 0.99) == 99.0);
    CHECK(percentile(s, 0.50) == 50.0);
    CHECK(percentile(std::vector<double>{7.0}, 0.3) == 7.0);
    CHECK(percentile(std::vector<double>{7.0}, 1.0) == 7.0);
    CHECK_THROWS(percentile(std::vector<double>{}, 0.5));
}

TEST_CASE("summaries")
{
    const auto r = report_of({100, 200, 300}, {150, 150, 350});
    const auto s = summarize(r, "x");
    CHECK(s.count == 3);
    CHECK(s.violations == 1);
    CHECK(s.slo_violation_rate == 1.0 / 3.0);
    CHECK(s.mean_ms == 200.0);
    CHECK(s.p50_ms <= s.p95_ms);
    CHECK(s.p95_ms <= s.p99_ms);
    CHECK(s.cdf.back().second == 1.0);
    CHECK(s.cdf.size() == 3);

    const auto ok = summarize(report_of({1, 2}, {5, 5}));
    CHECK(ok.slo_violation_rate == 0.0);

    const auto dup = summarize(report_of({5, 5, 6}, {9, 9, 9}));
    REQUIRE(dup.cdf.size() == 2);
    CHECK(dup.cdf[0].second == doctest::Approx(2.0 / 3.0));

    CHECK_THROWS(summarize(EpisodeReport{}));
}

TEST_CASE("mergeable aggregates")
{
    Rng rng(1);
    std::vector<double> a, b, sa, sb;
    for (int i = 0; i < 50; ++i) {
        a.push_back(rng.uniform(10, 500));
        sa.push_back(rng.uniform(200, 400));
        b.push_back(rng.uniform(10, 500));
        sb.push_back(rng.uniform(200, 400));
    }
    const auto ra = report_of(a, sa), rb = report_of(b, sb);
    auto lhs = aggregate(summarize(ra));
    lhs += aggregate(summarize(rb));
    const auto rhs = aggregate(summarize(merge(ra, rb)));
    CHECK(lhs.count == rhs.count);
    CHECK(lhs.violations == rhs.violations);
    CHECK(lhs.total_latency_ms == doctest::Approx(rhs.total_latency_ms));
}

TEST_CASE("comparison ratios")
{
    MetricSummary best, scale;
    best.name = "midaco";
    best.count = scale.count = 1;
    best.mean_ms = 188.42;
    best.mean_decision_time_us = 2.98e6;
    scale.name = "scale";
    scale.mean_ms = 210.5;
    scale.mean_decision_time_us = 0.02e6;
    const auto rows = compare({best, scale});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].mean_ratio == 1.0);
    CHECK(rows[1].mean_ratio == doctest::Approx(1.117).epsilon(1e-3));
    CHECK(rows[1].speedup == doctest::Approx(149.0));

    const auto same = compare({best, best});
    CHECK(same[0].mean_ratio == 1.0);
    CHECK(same[1].mean_ratio == 1.0);
    CHECK(same[1].p99_ratio == 1.0);
    CHECK_THROWS_AS(compare({best}), UsageError);
    CHECK(ratio_to_best(0.0, 0.0) == 1.0);
}

TEST_CASE("summary csv round trip")
{
    const auto s = summarize(report_of({100, 200, 300}, {150, 150, 350}), "a");
    const auto parsed = parse_summary_csv(summary_csv({s}));
    REQUIRE(parsed.size() == 1);
    CHECK(parsed[0].name == "a");
    CHECK(parsed[0].mean_ms == s.mean_ms);
    CHECK(parsed[0].p99_ms == s.p99_ms);
    CHECK(parsed[0].violations == s.violations);
    CHECK(cdf_csv(s).rfind("latency_ms,cum_fraction\n", 0) == 0);
}
