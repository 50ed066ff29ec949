// Copyright 2026 The dualpath Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <concepts>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace dualpath {

// Flat `key: value` records. Keys are kept sorted so that printing a map is
// deterministic. Blank lines and '#' comments are ignored.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(std::string_view text, std::string_view origin = "<config>");  // throws UsageError
ConfigMap read_config_file(const std::filesystem::path& path);                              // throws DataError
std::string format_config(const ConfigMap& map);

// Applies "key=value" overrides in order.
void apply_overrides(ConfigMap& map, const std::vector<std::string>& overrides);

// Typed access with uniform error messages; all throw UsageError.
class ConfigReader {
 public:
  explicit ConfigReader(const ConfigMap& map) : map_(map) {}

  template <std::unsigned_integral U>
  void read(const std::string& key, U& out) {
    if (const std::string* v = find(key)) out = static_cast<U>(parse_unsigned(key, *v));
  }
  void read(const std::string& key, int& out);
  void read(const std::string& key, double& out);
  void read(const std::string& key, bool& out);
  void read(const std::string& key, std::string& out);

  // Throws for keys present in the map that no read() asked for.
  void reject_unknown() const;

 private:
  const ConfigMap& map_;
  std::vector<std::string> seen_;
  const std::string* find(const std::string& key);
  static std::uint64_t parse_unsigned(const std::string& key, const std::string& text);
};

// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace dualpath
