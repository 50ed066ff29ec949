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

#include "dualpath/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dualpath/error.hpp"

namespace dualpath {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

ConfigMap parse_config_text(std::string_view text, std::string_view origin) {
  ConfigMap map;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto colon = body.find(':');
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    if (colon == std::string::npos) throw UsageError(where + ": expected 'key: value'");
    const std::string key = trim(std::string_view(body).substr(0, colon));
    const std::string value = trim(std::string_view(body).substr(colon + 1));
    if (key.empty()) throw UsageError(where + ": empty key");
    if (!map.emplace(key, value).second) throw UsageError(where + ": duplicate key '" + key + "'");
  }
  return map;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string format_config(const ConfigMap& map) {
  std::string out;
  for (const auto& [k, v] : map) out += k + ": " + v + "\n";
  return out;
}

void apply_overrides(ConfigMap& map, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("override '" + o + "' is not key=value");
    map[trim(std::string_view(o).substr(0, eq))] = trim(std::string_view(o).substr(eq + 1));
  }
}

const std::string* ConfigReader::find(const std::string& key) {
  seen_.push_back(key);
  const auto it = map_.find(key);
  return it == map_.end() ? nullptr : &it->second;
}

std::uint64_t ConfigReader::parse_unsigned(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw UsageError("config key '" + key + "': expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

void ConfigReader::read(const std::string& key, int& out) {
  if (const std::string* v = find(key)) {
    const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
    if (res.ec != std::errc() || res.ptr != v->data() + v->size()) {
      throw UsageError("config key '" + key + "': expected an integer, got '" + *v + "'");
    }
  }
}

void ConfigReader::read(const std::string& key, double& out) {
  if (const std::string* v = find(key)) {
    const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
    if (res.ec != std::errc() || res.ptr != v->data() + v->size() || !std::isfinite(out)) {
      throw UsageError("config key '" + key + "': expected a finite number, got '" + *v + "'");
    }
  }
}

void ConfigReader::read(const std::string& key, bool& out) {
  if (const std::string* v = find(key)) {
    if (*v == "true" || *v == "1") {
      out = true;
    } else if (*v == "false" || *v == "0") {
      out = false;
    } else {
      throw UsageError("config key '" + key + "': expected true or false, got '" + *v + "'");
    }
  }
}

void ConfigReader::read(const std::string& key, std::string& out) {
  if (const std::string* v = find(key)) out = *v;
}

void ConfigReader::reject_unknown() const {
  for (const auto& [key, value] : map_) {
    (void)value;
    if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
      throw UsageError("unknown config key '" + key + "'");
    }
  }
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace dualpath
