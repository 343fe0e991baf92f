#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ranmtl {

// The four per-user prediction problems. Canonical order is the enum order;
// every container keyed by task iterates in it.
enum class Task : int { SC = 0, PS = 1, IN = 2, LOS = 3 };

inline const char* task_name(Task t) {
  switch (t) {
    case Task::SC: return "SC";
    case Task::PS: return "PS";
    case Task::IN: return "IN";
    case Task::LOS: return "LOS";
  }
  throw std::invalid_argument("task_name: bad task id");
}

inline Task task_from_name(const std::string& s) {
  if (s == "SC") return Task::SC;
  if (s == "PS") return Task::PS;
  if (s == "IN") return Task::IN;
  if (s == "LOS") return Task::LOS;
  throw std::invalid_argument("unknown task name: " + s);
}

inline const std::vector<Task>& all_tasks() {
  static const std::vector<Task> v{Task::SC, Task::PS, Task::IN, Task::LOS};
  return v;
}

enum class LossKind { Mse, Bce };
enum class MetricKind { Mae, Accuracy };

struct TaskSpec {
  Task id;
  std::size_t out_dim;
  LossKind loss;
  MetricKind metric;
};

// Output dims follow the scenario geometry: one regression target per
// secondary cell, a 3d position, one indoor bit, one visibility bit per
// secondary cell.
inline std::vector<TaskSpec> make_task_specs(std::size_t secondary_cells) {
  return {
      {Task::SC, secondary_cells, LossKind::Mse, MetricKind::Mae},
      {Task::PS, 3, LossKind::Mse, MetricKind::Mae},
      {Task::IN, 1, LossKind::Bce, MetricKind::Accuracy},
      {Task::LOS, secondary_cells, LossKind::Bce, MetricKind::Accuracy},
  };
}

inline const TaskSpec& spec_for(const std::vector<TaskSpec>& specs, Task t) {
  for (const TaskSpec& s : specs)
    if (s.id == t) return s;
  throw std::invalid_argument(std::string("no spec for task ") + task_name(t));
}

}  // namespace ranmtl
