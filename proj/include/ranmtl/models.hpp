#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ranmtl/graph.hpp"
#include "ranmtl/tasks.hpp"
#include "ranmtl/tensor.hpp"

namespace ranmtl {

// Multi-task model families over a shared bottom. All of them read the same
// feature vector and end in one head per task; they differ in how the shared
// capacity is organized and routed:
//   STL      single task, plain trunk (the degenerate baseline)
//   HPS      one trunk shared by every task
//   MMoE     expert bank with per-task softmax gates over the input
//   DSelectK static differentiable expert selection per task
//   CGC      shared experts plus per-task private experts, gated together
enum class Arch { STL, HPS, MMoE, DSelectK, CGC };

const char* arch_name(Arch a);
Arch arch_from_name(const std::string& s);

struct ArchitectureConfig {
  Arch kind = Arch::HPS;
  std::size_t input_dim = 9;
  std::size_t width = 512;        // expert / trunk layer size
  std::size_t experts = 2;        // shared expert count (MMoE, DSelectK, CGC)
  std::size_t task_experts = 2;   // private experts per task (CGC)
  std::size_t dselect_k = 1;      // selectors per task (DSelectK)
  double dselect_gamma = 1.0;
  double dselect_reg = 1e-3;      // selector saturation penalty coefficient
  std::vector<Task> tasks = all_tasks();
};

// Parameters are named "shared/..." or "task:<NAME>/...": the two groups
// partition the set, and the distributed schedules move them separately.
struct ParameterSet {
  NamedTensors tensors;
  std::vector<std::string> shared_order;  // creation order; flattening order
  std::map<Task, std::vector<std::string>> task_order;

  std::size_t count(const std::vector<std::string>& names) const;
  std::size_t shared_count() const { return count(shared_order); }
  std::size_t total_count() const;
  std::vector<std::string> all_names() const;
};

struct Model {
  ArchitectureConfig cfg;
  std::vector<TaskSpec> specs;  // aligned with cfg.tasks
  Graph graph;
  ParameterSet params;
  int x_node = -1;
  std::map<Task, int> label_nodes;
  std::map<Task, int> output_nodes;  // predictions (probabilities for Bce tasks)
  std::map<Task, int> loss_nodes;
  std::map<Task, int> penalty_nodes;  // per-task selector saturation penalties
  int reg_node = -1;   // sum of all penalties, -1 when absent
  double reg_coef = 0.0;
};

// Builds graph and parameters; weights drawn Glorot-uniform from a single
// stream in creation order (shared first, then tasks in canonical order), so
// equal seeds give equal initializations.
Model build_model(const ArchitectureConfig& cfg, std::uint64_t init_seed);

struct ParamCount {
  std::size_t total = 0;
  std::size_t shared = 0;
  std::map<Task, std::size_t> per_task;
};

// Closed-form parameter count; independent of build_model and cross-checked
// against it in the tests.
ParamCount count_params(const ArchitectureConfig& cfg);

// Checkpoint: named tensors with group tags plus the architecture echo.
std::string checkpoint_to_json(const Model& m);
// Restores tensor values into a model built from the same architecture.
void checkpoint_into(Model& m, const std::string& json_text);
// Reads just the architecture from a checkpoint.
ArchitectureConfig checkpoint_architecture(const std::string& json_text);

}  // namespace ranmtl
