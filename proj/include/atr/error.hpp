// Copyright 2026 The atr Authors.
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

#include <atomic>
#include <cstdint>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>

namespace atr {

/// Operand shapes do not satisfy an operation's shape rule.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An operand lies outside an operation's domain (log of a non-positive
/// value, division by zero).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed or inconsistent input data. Carries the byte offset when the
/// failure is positional.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what,
                     std::optional<std::uint64_t> offset = std::nullopt)
      : std::runtime_error(offset ? what + " (at byte offset " +
                                        std::to_string(*offset) + ")"
                                  : what),
        offset_(offset) {}

  std::optional<std::uint64_t> offset() const { return offset_; }

 private:
  std::optional<std::uint64_t> offset_;
};

/// Non-finite loss or gradient during optimization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value (unknown pooling name, batch size < 2, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using WarningSink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}
inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}
inline std::atomic<std::uint64_t>& warning_counter() {
  static std::atomic<std::uint64_t> n{0};
  return n;
}
}  // namespace detail

inline void warn(const std::string& msg) {
  detail::warning_counter().fetch_add(1, std::memory_order_relaxed);
  std::lock_guard<std::mutex> lock(detail::warning_mutex());
  if (detail::warning_sink()) detail::warning_sink()(msg);
}

/// Installs `sink` and returns the previous one.
inline WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard<std::mutex> lock(detail::warning_mutex());
  std::swap(sink, detail::warning_sink());
  return sink;
}

inline std::uint64_t warning_count() {
  return detail::warning_counter().load(std::memory_order_relaxed);
}

}  // namespace atr
