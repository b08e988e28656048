#pragma once

#include <string>

#include "cmkd/error.hpp"

namespace cmkd {

/// The two supported targets: discrete classification over emotion classes,
/// and continuous regression of a single affect value.
enum class Task { dec, cer };

inline std::string to_string(Task t) { return t == Task::dec ? "dec" : "cer"; }

inline Task task_from_string(const std::string& s) {
  if (s == "dec") return Task::dec;
  if (s == "cer") return Task::cer;
  throw ConfigError("unknown task '" + s + "' (expected dec or cer)");
}

}  // namespace cmkd
