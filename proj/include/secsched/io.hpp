#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace secsched {

// Malformed or inconsistent input data (files, checkpoints, traces).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad parameters supplied by a caller or on the command line.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct CsvRow {
    std::size_t line = 0;  // 1-based line in the source file
    std::vector<std::string> fields;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<CsvRow> rows;

    std::size_t column(std::string_view name) const;
};

// Parses comma-separated text. The first non-empty line is the header.
CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);

double parse_double(std::string_view text, std::size_t line, std::string_view column);
std::int64_t parse_int(std::string_view text, std::size_t line, std::string_view column);

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

std::string read_file(const std::filesystem::path& path);

// Writes `<path>.partial` and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

// `git describe` string captured at configure time.
std::string_view build_version();

}  // namespace secsched
