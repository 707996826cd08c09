// Copyright 2026 The dialect-lid Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <map>
#include <string>

namespace lid::config {

/// Flat TOML subset: `key = value` lines, `[section]` headers prefixing keys
/// as "section.key", `#` comments, quoted or bare scalar values. A repeated
/// key throws ConfigFault naming its line.
std::map<std::string, std::string> parse(const std::string& text);
std::map<std::string, std::string> load(const std::string& path);

}  // namespace lid::config
