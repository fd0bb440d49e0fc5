#include "secsched/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#ifndef SECSCHED_GIT_DESCRIBE
#define SECSCHED_GIT_DESCRIBE "unknown"
#endif

namespace secsched {

std::size_t CsvTable::column(std::string_view name) const
{
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return i;
        }
    }
    throw DataError("csv: missing column '" + std::string(name) + "'");
}

namespace {

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string> split_fields(std::string_view line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

}  // namespace

CsvTable parse_csv(std::string_view text)
{
    CsvTable table;
    bool have_header = false;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const auto line = trim(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
        ++line_no;
        pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
        if (line.empty()) {
            continue;
        }
        auto fields = split_fields(line);
        if (!have_header) {
            table.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != table.header.size()) {
            throw DataError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(table.header.size()) +
                            " fields, got " + std::to_string(fields.size()));
        }
        table.rows.push_back({line_no, std::move(fields)});
    }
    return table;
}

CsvTable read_csv(const std::filesystem::path& path)
{
    try {
        return parse_csv(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

double parse_double(std::string_view text, std::size_t line, std::string_view column)
{
    double value = 0.0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) {
        throw DataError("line " + std::to_string(line) + ": column '" + std::string(column) + "' is not a number: '" +
                        std::string(text) + "'");
    }
    return value;
}

std::int64_t parse_int(std::string_view text, std::size_t line, std::string_view column)
{
    std::int64_t value = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) {
        throw DataError("line " + std::to_string(line) + ": column '" + std::string(column) + "' is not an integer: '" +
                        std::string(text) + "'");
    }
    return value;
}

std::string format_double(double value)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ec == std::errc{} ? ptr : buf);
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content)
{
    auto partial = path;
    partial += ".partial";
    {
        std::ofstream out(partial, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write " + partial.string());
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            throw std::runtime_error("write failed: " + partial.string());
        }
    }
    std::filesystem::rename(partial, path);
}

std::uint64_t fnv1a64(std::string_view bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value)
{
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::string_view build_version()
{
    return SECSCHED_GIT_DESCRIBE;
}

}  // namespace secsched
