// Copyright 2026 The gpad Authors
//
// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#include "gpad/io.hpp"

#include "gpad/error.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gpad {

namespace {

std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view line, char sep)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) {
            return out;
        }
        start = pos + 1;
    }
}

std::optional<double> to_double(const std::string& s)
{
    double x = 0.0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    if (!s.empty() && *begin == '+') {
        ++begin;
    }
    const auto [ptr, ec] = std::from_chars(begin, end, x);
    if (ec != std::errc() || ptr != end || begin == end) {
        return std::nullopt;
    }
    return x;
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint32_t big_endian(const std::string& bytes, std::size_t offset)
{
    std::uint32_t v = 0;
    for (std::size_t k = 0; k < 4; ++k) {
        v = (v << 8) | static_cast<unsigned char>(bytes[offset + k]);
    }
    return v;
}

} // namespace

Table parse_csv(const std::string& text, bool header, const std::string& origin)
{
    Table table;
    std::vector<double> values;
    std::size_t cols = 0;
    std::size_t rows = 0;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool header_pending = header;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        std::vector<std::string> cells = split(line, ',');
        if (header_pending) {
            table.header = std::move(cells);
            cols = table.header.size();
            header_pending = false;
            continue;
        }
        if (cols == 0) {
            cols = cells.size();
        }
        if (cells.size() != cols) {
            throw IoError(origin + ":" + std::to_string(lineno) + ": expected " +
                          std::to_string(cols) + " columns, found " + std::to_string(cells.size()));
        }
        for (std::size_t j = 0; j < cells.size(); ++j) {
            const auto x = to_double(cells[j]);
            if (!x) {
                throw IoError(origin + ":" + std::to_string(lineno) + ": column " +
                              std::to_string(j + 1) + " is not a number: '" + cells[j] + "'");
            }
            values.push_back(*x);
        }
        ++rows;
    }
    if (rows == 0) {
        throw IoError(origin + ": no data rows");
    }
    table.values = Matrix(rows, cols, std::move(values));
    return table;
}

Table read_csv(const std::filesystem::path& path, bool header)
{
    return parse_csv(read_file(path), header, path.string());
}

std::string format_double(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Matrix& values)
{
    if (!header.empty() && header.size() != values.cols()) {
        throw ShapeError("CSV header has " + std::to_string(header.size()) + " names for " +
                         std::to_string(values.cols()) + " columns");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    for (std::size_t j = 0; j < header.size(); ++j) {
        out << (j ? "," : "") << header[j];
    }
    if (!header.empty()) {
        out << '\n';
    }
    for (std::size_t i = 0; i < values.rows(); ++i) {
        for (std::size_t j = 0; j < values.cols(); ++j) {
            out << (j ? "," : "") << format_double(values(i, j));
        }
        out << '\n';
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

Dataset load_csv(const std::filesystem::path& path, int label_column, bool header)
{
    const Table t = read_csv(path, header);
    const auto cols = static_cast<int>(t.values.cols());
    const int label = label_column < 0 ? cols + label_column : label_column;
    if (label < 0 || label >= cols) {
        throw ConfigError(path.string() + ": label column " + std::to_string(label_column) +
                          " is outside a table of " + std::to_string(cols) + " columns");
    }
    if (cols < 2) {
        throw IoError(path.string() + ": need at least one feature column and a label column");
    }
    Dataset data{Matrix(t.values.rows(), static_cast<std::size_t>(cols - 1)),
                 Matrix(t.values.rows(), 1)};
    for (std::size_t i = 0; i < t.values.rows(); ++i) {
        std::size_t k = 0;
        for (int j = 0; j < cols; ++j) {
            if (j == label) {
                data.y[i] = t.values(i, static_cast<std::size_t>(j));
            } else {
                data.x(i, k++) = t.values(i, static_cast<std::size_t>(j));
            }
        }
    }
    return data;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t limit)
{
    const std::string img = read_file(images);
    const std::string lab = read_file(labels);
    if (img.size() < 16 || big_endian(img, 0) != 0x00000803) {
        throw IoError(images.string() + ": not an IDX image file (magic 0x00000803)");
    }
    if (lab.size() < 8 || big_endian(lab, 0) != 0x00000801) {
        throw IoError(labels.string() + ": not an IDX label file (magic 0x00000801)");
    }
    const std::size_t count = big_endian(img, 4);
    const std::size_t rows = big_endian(img, 8);
    const std::size_t cols = big_endian(img, 12);
    if (big_endian(lab, 4) != count) {
        throw IoError("IDX count mismatch: " + std::to_string(count) + " images, " +
                      std::to_string(big_endian(lab, 4)) + " labels");
    }
    const std::size_t d = rows * cols;
    if (img.size() < 16 + count * d || lab.size() < 8 + count) {
        throw IoError("IDX file shorter than its header declares");
    }
    const std::size_t n = limit > 0 ? std::min(limit, count) : count;
    Dataset data{Matrix(n, d), Matrix(n, 1)};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            data.x(i, j) = static_cast<unsigned char>(img[16 + i * d + j]) / 255.0;
        }
        data.y[i] = static_cast<unsigned char>(lab[8 + i]);
    }
    return data;
}

Config Config::parse(const std::string& text, const std::string& origin)
{
    Config c;
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const std::string line = trim(raw.substr(0, raw.find_first_of("#;")));
        if (line.empty()) {
            continue;
        }
        const std::string where = origin + ":" + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']' || trim(line.substr(1, line.size() - 2)).empty()) {
                throw ConfigError(where + ": malformed section header '" + line + "'");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(where + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw ConfigError(where + ": empty key");
        }
        if (c.values_.count(key)) {
            throw ConfigError(where + ": duplicate key '" + key + "'");
        }
        c.values_[key] = trim(line.substr(eq + 1));
    }
    return c;
}

Config Config::load(const std::filesystem::path& path)
{
    Config c = parse(read_file(path), path.string());
    c.base_ = path.parent_path();
    return c;
}

std::optional<std::string> Config::get(const std::string& key) const
{
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::string Config::get(const std::string& key, const std::string& fallback) const
{
    return get(key).value_or(fallback);
}

double Config::get_double(const std::string& key, double fallback) const
{
    const auto v = get(key);
    if (!v) {
        return fallback;
    }
    const auto x = to_double(*v);
    if (!x) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + *v + "'");
    }
    return *x;
}

std::size_t Config::get_size(const std::string& key, std::size_t fallback) const
{
    const auto v = get(key);
    if (!v) {
        return fallback;
    }
    std::size_t x = 0;
    const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), x);
    if (ec != std::errc() || ptr != v->data() + v->size() || v->empty()) {
        throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + *v + "'");
    }
    return x;
}

bool Config::get_bool(const std::string& key, bool fallback) const
{
    const auto v = get(key);
    if (!v) {
        return fallback;
    }
    if (*v == "true" || *v == "1" || *v == "yes") {
        return true;
    }
    if (*v == "false" || *v == "0" || *v == "no") {
        return false;
    }
    throw ConfigError("config key '" + key + "' expects true or false, got '" + *v + "'");
}

std::vector<std::size_t> Config::get_sizes(const std::string& key,
                                           const std::vector<std::size_t>& fallback) const
{
    const auto v = get(key);
    if (!v) {
        return fallback;
    }
    std::vector<std::size_t> out;
    for (const std::string& cell : split(*v, ',')) {
        Config one;
        one.values_[key] = cell;
        out.push_back(one.get_size(key, 0));
    }
    return out;
}

std::map<std::string, std::string> Config::with_prefix(const std::string& prefix) const
{
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : values_) {
        if (k.size() > prefix.size() && k.compare(0, prefix.size(), prefix) == 0) {
            out[k.substr(prefix.size())] = v;
        }
    }
    return out;
}

std::filesystem::path Config::resolve(const std::string& path) const
{
    const std::filesystem::path p(path);
    return p.is_absolute() ? p : base_ / p;
}

} // namespace gpad
