// Copyright 2026 The SCPL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scpl/data.hpp"
#include "scpl/network.hpp"
#include "scpl/trainers.hpp"

namespace scpl::cli {

// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kVerificationFailed = 1,
  kConfigError = 2,
  kDiverged = 3,
};

/// Applies `key=value` overrides. A dotted key addresses a nested entry; a
/// bare key must match exactly one entry among the top-level sections. Values
/// are parsed as JSON when possible and kept as strings otherwise. Unknown
/// keys raise ConfigError.
void apply_overrides(nlohmann::json& config, const std::vector<std::string>& overrides);

/// Full train config with every default filled in: sections `train`, `model`
/// and `data`.
nlohmann::json resolve_train_config(const nlohmann::json& file);

NetworkTemplate template_from_config(const nlohmann::json& model);
Dataset dataset_from_config(const nlohmann::json& data);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const nlohmann::json& j, const std::string& path);

/// Entry point behind the `scpl` binary; returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace scpl::cli
