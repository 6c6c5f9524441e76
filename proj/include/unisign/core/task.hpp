// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "unisign/core/error.hpp"

namespace unisign {

/// Isolated recognition, continuous recognition, translation.
enum class Task { islr, cslr, slt };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::islr: return "islr";
    case Task::cslr: return "cslr";
    default: return "slt";
  }
}

inline Task parse_task(const std::string& s) {
  if (s == "islr") return Task::islr;
  if (s == "cslr") return Task::cslr;
  if (s == "slt") return Task::slt;
  throw ConfigError("unknown task '" + s + "' (expected islr, cslr or slt)");
}

}  // namespace unisign
