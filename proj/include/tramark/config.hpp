// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "tramark/federation.hpp"

namespace tramark {

// Flat `key = value` configuration, one pair per line, '#' starts a comment.
// Unknown keys and unparseable values raise invalid_argument naming the key.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

// Emits every key with full precision; parse(serialize(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

}  // namespace tramark
