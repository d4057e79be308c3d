#include "bvmdesign/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "bvmdesign/error.hpp"

namespace bvmdesign {

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse '" + path + "': " + e.what());
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << contents;
    if (!out) throw ConfigError("failed writing '" + path + "'");
}

std::size_t CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    throw ConfigError("CSV has no column '" + name + "'");
}

double CsvTable::number(std::size_t row, std::size_t col) const {
    const std::string& cell = rows.at(row).at(col);
    double v = 0.0;
    auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
        throw ConfigError("CSV row " + std::to_string(row + 1) + ": '" + cell + "' is not a number");
    }
    return v;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

CsvTable parse_csv(const std::string& text, const std::string& origin) {
    CsvTable table;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (first) {
            table.header = std::move(cells);
            first = false;
            continue;
        }
        if (cells.size() != table.header.size()) {
            throw ConfigError("'" + origin + "': row " + std::to_string(table.rows.size() + 1) +
                              " has " + std::to_string(cells.size()) + " fields, header has " +
                              std::to_string(table.header.size()));
        }
        table.rows.push_back(std::move(cells));
    }
    if (first) throw ConfigError("'" + origin + "': empty CSV");
    return table;
}

CsvTable read_csv_file(const std::string& path) { return parse_csv(read_text_file(path), path); }

}  // namespace bvmdesign
