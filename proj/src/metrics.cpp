#include "secsched/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "secsched/io.hpp"

namespace secsched {

namespace {

std::size_t nearest_rank(std::size_t n, double q)
{
    // Tolerance absorbs q*n landing a hair above an integer (0.29 * 100 = 29.000000000000004).
    const double r = std::ceil(q * static_cast<double>(n) - 1e-9);
    return static_cast<std::size_t>(std::clamp(r, 1.0, static_cast<double>(n)));
}

}  // namespace

double percentile(std::span<const double> samples, double q)
{
    if (samples.empty()) {
        throw UsageError("percentile: empty sample set");
    }
    if (!(q > 0.0 && q <= 1.0)) {
        throw UsageError("percentile: q must be in (0, 1]");
    }
    std::vector<double> v(samples.begin(), samples.end());
    const auto k = nearest_rank(v.size(), q) - 1;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
    return v[k];
}

MetricSummary summarize(const EpisodeReport& report, std::string name)
{
    if (report.records.empty()) {
        throw UsageError("summarize: empty report");
    }
    MetricSummary s;
    s.name = std::move(name);
    s.count = report.records.size();
    std::vector<double> lat;
    lat.reserve(s.count);
    double sum = 0.0;
    double decision = 0.0;
    for (const auto& r : report.records) {
        lat.push_back(r.breakdown.total_ms);
        sum += r.breakdown.total_ms;
        decision += r.decision_time_us;
        s.violations += r.slo_met ? 0 : 1;
    }
    const auto n = static_cast<double>(s.count);
    s.mean_ms = sum / n;
    s.mean_decision_time_us = decision / n;
    s.slo_violation_rate = static_cast<double>(s.violations) / n;

    std::sort(lat.begin(), lat.end());
    s.p50_ms = lat[nearest_rank(lat.size(), 0.50) - 1];
    s.p95_ms = lat[nearest_rank(lat.size(), 0.95) - 1];
    s.p99_ms = lat[nearest_rank(lat.size(), 0.99) - 1];

    for (std::size_t i = 0; i < lat.size(); ++i) {
        if (i + 1 < lat.size() && lat[i + 1] == lat[i]) {
            continue;
        }
        s.cdf.emplace_back(lat[i], static_cast<double>(i + 1) / n);
    }
    return s;
}

Aggregate& Aggregate::operator+=(const Aggregate& o)
{
    count += o.count;
    violations += o.violations;
    total_latency_ms += o.total_latency_ms;
    total_decision_us += o.total_decision_us;
    return *this;
}

Aggregate aggregate(const EpisodeReport& report)
{
    Aggregate a;
    for (const auto& r : report.records) {
        ++a.count;
        a.violations += r.slo_met ? 0 : 1;
        a.total_latency_ms += r.breakdown.total_ms;
        a.total_decision_us += r.decision_time_us;
    }
    return a;
}

Aggregate aggregate(const MetricSummary& s)
{
    Aggregate a;
    a.count = s.count;
    a.violations = s.violations;
    a.total_latency_ms = s.mean_ms * static_cast<double>(s.count);
    a.total_decision_us = s.mean_decision_time_us * static_cast<double>(s.count);
    return a;
}

EpisodeReport merge(const EpisodeReport& a, const EpisodeReport& b)
{
    EpisodeReport out = a;
    out.records.insert(out.records.end(), b.records.begin(), b.records.end());
    out.deferred += b.deferred;
    out.remapped += b.remapped;
    return out;
}

double ratio_to_best(double candidate, double best)
{
    if (best == 0.0) {
        return candidate == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    }
    return candidate / best;
}

std::vector<ComparisonRow> compare(const std::vector<MetricSummary>& summaries)
{
    if (summaries.size() < 2) {
        throw UsageError("compare: need at least two summaries");
    }
    auto best_of = [&](auto field) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& s : summaries) {
            best = std::min(best, field(s));
        }
        return best;
    };
    const double best_mean = best_of([](const MetricSummary& s) { return s.mean_ms; });
    const double best_p50 = best_of([](const MetricSummary& s) { return s.p50_ms; });
    const double best_p95 = best_of([](const MetricSummary& s) { return s.p95_ms; });
    const double best_p99 = best_of([](const MetricSummary& s) { return s.p99_ms; });
    const double best_slo = best_of([](const MetricSummary& s) { return s.slo_violation_rate; });
    const double best_dec = best_of([](const MetricSummary& s) { return s.mean_decision_time_us; });
    double slowest = 0.0;
    for (const auto& s : summaries) {
        slowest = std::max(slowest, s.mean_decision_time_us);
    }

    std::vector<ComparisonRow> rows;
    for (const auto& s : summaries) {
        ComparisonRow r;
        r.summary = s;
        r.mean_ratio = ratio_to_best(s.mean_ms, best_mean);
        r.p50_ratio = ratio_to_best(s.p50_ms, best_p50);
        r.p95_ratio = ratio_to_best(s.p95_ms, best_p95);
        r.p99_ratio = ratio_to_best(s.p99_ms, best_p99);
        r.slo_ratio = ratio_to_best(s.slo_violation_rate, best_slo);
        r.decision_ratio = ratio_to_best(s.mean_decision_time_us, best_dec);
        r.speedup = s.mean_decision_time_us > 0.0 ? slowest / s.mean_decision_time_us : (slowest > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
        rows.push_back(r);
    }
    return rows;
}

namespace {
std::string f(double v)
{
    return format_double(v);
}
}  // namespace

std::string summary_csv(const std::vector<MetricSummary>& summaries)
{
    std::string out = "name,count,mean_ms,p50_ms,p95_ms,p99_ms,violations,slo_violation_rate,mean_decision_time_us\n";
    for (const auto& s : summaries) {
        out += s.name + "," + std::to_string(s.count) + "," + f(s.mean_ms) + "," + f(s.p50_ms) + "," + f(s.p95_ms) +
               "," + f(s.p99_ms) + "," + std::to_string(s.violations) + "," + f(s.slo_violation_rate) + "," +
               f(s.mean_decision_time_us) + "\n";
    }
    return out;
}

std::vector<MetricSummary> parse_summary_csv(std::string_view text)
{
    const auto table = parse_csv(text);
    std::vector<MetricSummary> out;
    for (const auto& row : table.rows) {
        auto real = [&](const char* name) { return parse_double(row.fields[table.column(name)], row.line, name); };
        MetricSummary s;
        s.name = row.fields[table.column("name")];
        s.count = static_cast<std::size_t>(parse_int(row.fields[table.column("count")], row.line, "count"));
        s.mean_ms = real("mean_ms");
        s.p50_ms = real("p50_ms");
        s.p95_ms = real("p95_ms");
        s.p99_ms = real("p99_ms");
        s.violations =
            static_cast<std::size_t>(parse_int(row.fields[table.column("violations")], row.line, "violations"));
        s.slo_violation_rate = real("slo_violation_rate");
        s.mean_decision_time_us = real("mean_decision_time_us");
        out.push_back(s);
    }
    return out;
}

std::string cdf_csv(const MetricSummary& summary)
{
    std::string out = "latency_ms,cum_fraction\n";
    for (const auto& [ms, frac] : summary.cdf) {
        out += f(ms) + "," + f(frac) + "\n";
    }
    return out;
}

std::string compare_csv(const std::vector<ComparisonRow>& rows)
{
    std::string out = "name,count,mean_ms,p50_ms,p95_ms,p99_ms,slo_violation_rate,mean_decision_time_us,"
                      "mean_ratio,p50_ratio,p95_ratio,p99_ratio,slo_ratio,decision_ratio,speedup\n";
    for (const auto& r : rows) {
        const auto& s = r.summary;
        out += s.name + "," + std::to_string(s.count) + "," + f(s.mean_ms) + "," + f(s.p50_ms) + "," + f(s.p95_ms) +
               "," + f(s.p99_ms) + "," + f(s.slo_violation_rate) + "," + f(s.mean_decision_time_us) + "," +
               f(r.mean_ratio) + "," + f(r.p50_ratio) + "," + f(r.p95_ratio) + "," + f(r.p99_ratio) + "," +
               f(r.slo_ratio) + "," + f(r.decision_ratio) + "," + f(r.speedup) + "\n";
    }
    return out;
}

std::string summary_line(const MetricSummary& s)
{
    std::ostringstream os;
    os.precision(6);
    os << (s.name.empty() ? "summary" : s.name) << ": n=" << s.count << " mean=" << s.mean_ms << "ms p50=" << s.p50_ms
       << "ms p95=" << s.p95_ms << "ms p99=" << s.p99_ms << "ms slo_viol=" << s.slo_violation_rate
       << " decision=" << s.mean_decision_time_us << "us";
    return os.str();
}

}  // namespace secsched
