#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace bvmdesign {

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double x);

std::string join(const std::vector<std::string>& parts, const std::string& sep);

/// Reads and parses a JSON file. Missing or malformed files raise ConfigError
/// naming the path.
nlohmann::json read_json_file(const std::string& path);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const;
    double number(std::size_t row, std::size_t col) const;
};

/// Minimal CSV reader for the files this project writes (no quoting).
CsvTable read_csv_file(const std::string& path);
CsvTable parse_csv(const std::string& text, const std::string& origin = "<memory>");

}  // namespace bvmdesign
