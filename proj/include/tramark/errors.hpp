// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tramark {

// Malformed binary/text input (bad magic, truncation, inconsistent counts).
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& message, std::size_t byte_offset)
      : std::runtime_error(message + " (at byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::size_t offset;
};

// Failure to open or write an output artifact.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& message) : std::runtime_error(message) {}
};

}  // namespace tramark
