#pragma once

#include <array>
#include <string>

#include "cerberus/errors.hpp"

namespace cerberus {

// Joint-loss weight order: alpha_1 attribute, alpha_2 affordance,
// alpha_3 semantic.
enum class Task { Attribute = 0, Affordance = 1, Semantic = 2 };

inline constexpr std::array<Task, 3> kAllTasks = {Task::Attribute, Task::Affordance,
                                                  Task::Semantic};

inline const char* task_name(Task t) {
  switch (t) {
    case Task::Attribute:
      return "attribute";
    case Task::Affordance:
      return "affordance";
    case Task::Semantic:
      return "semantic";
  }
  return "?";
}

inline Task task_from_name(const std::string& name) {
  for (Task t : kAllTasks) {
    if (name == task_name(t)) return t;
  }
  throw ConfigError("unknown task name: " + name);
}

}  // namespace cerberus
