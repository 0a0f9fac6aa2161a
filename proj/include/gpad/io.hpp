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

// Data files and run configuration: CSV tables, IDX image sets and the
// sectioned key = value config document read by the command-line tool.

#pragma once

#include "gpad/matrix.hpp"
#include "gpad/models.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gpad {

struct Table {
    std::vector<std::string> header; // empty when the file has none
    Matrix values;
};

/// Rectangular table of decimal numbers. Errors name the offending line.
Table read_csv(const std::filesystem::path& path, bool header);
Table parse_csv(const std::string& text, bool header, const std::string& origin = "<string>");

/// 17 significant digits, so values survive a round trip bit for bit.
std::string format_double(double x);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Matrix& values);

/// Splits a table into features and a label column. A negative index counts
/// from the end; -1 is the last column.
Dataset load_csv(const std::filesystem::path& path, int label_column = -1, bool header = true);

/// IDX images (magic 0x00000803) and labels (0x00000801). Pixels are scaled
/// to [0, 1]; `limit` > 0 keeps only the first rows.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t limit = 0);

/// `[section]` headers, `key = value` lines, `#` or `;` comments. Keys are
/// unique across the whole document; sections only group them.
class Config {
  public:
    static Config parse(const std::string& text, const std::string& origin = "<string>");
    static Config load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::optional<std::string> get(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    /// Comma separated unsigned integers, e.g. `threads = 1,2,4`.
    std::vector<std::size_t> get_sizes(const std::string& key,
                                       const std::vector<std::size_t>& fallback) const;
    /// Keys under a dotted prefix, e.g. every `prior.<name>` entry.
    std::map<std::string, std::string> with_prefix(const std::string& prefix) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    /// Directory that relative data paths resolve against.
    const std::filesystem::path& base() const { return base_; }
    std::filesystem::path resolve(const std::string& path) const;

  private:
    std::map<std::string, std::string> values_;
    std::filesystem::path base_;
};

} // namespace gpad
