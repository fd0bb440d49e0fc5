#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "secsched/simenv.hpp"

namespace secsched {

struct MetricSummary {
    std::string name;
    std::size_t count = 0;
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    double p99_ms = 0.0;
    std::size_t violations = 0;
    double slo_violation_rate = 0.0;
    double mean_decision_time_us = 0.0;
    std::vector<std::pair<double, double>> cdf;  // (latency_ms, cumulative fraction), one point per distinct latency
};

// Nearest-rank percentile: the sorted sample at 1-based index ceil(q * n).
double percentile(std::span<const double> samples, double q);

MetricSummary summarize(const EpisodeReport& report, std::string name = {});

// Mergeable aggregates: counts and sums only.
struct Aggregate {
    std::size_t count = 0;
    std::size_t violations = 0;
    double total_latency_ms = 0.0;
    double total_decision_us = 0.0;

    Aggregate& operator+=(const Aggregate& o);
    double mean_ms() const { return count ? total_latency_ms / static_cast<double>(count) : 0.0; }
    double violation_rate() const { return count ? static_cast<double>(violations) / static_cast<double>(count) : 0.0; }
};

Aggregate aggregate(const EpisodeReport& report);
Aggregate aggregate(const MetricSummary& summary);
EpisodeReport merge(const EpisodeReport& a, const EpisodeReport& b);

struct ComparisonRow {
    MetricSummary summary;
    double mean_ratio = 1.0;
    double p50_ratio = 1.0;
    double p95_ratio = 1.0;
    double p99_ratio = 1.0;
    double slo_ratio = 1.0;
    double decision_ratio = 1.0;
    double speedup = 1.0;  // slowest decision time / this decision time
};

// Ratio-to-best per metric (candidate / best, lower is better everywhere).
std::vector<ComparisonRow> compare(const std::vector<MetricSummary>& summaries);

// candidate / best, with 0/0 defined as 1.
double ratio_to_best(double candidate, double best);

std::string summary_csv(const std::vector<MetricSummary>& summaries);
std::vector<MetricSummary> parse_summary_csv(std::string_view text);
std::string cdf_csv(const MetricSummary& summary);
std::string compare_csv(const std::vector<ComparisonRow>& rows);
// One-line human summary.
std::string summary_line(const MetricSummary& s);

}  // namespace secsched
