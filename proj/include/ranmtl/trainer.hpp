#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ranmtl/adam.hpp"
#include "ranmtl/graph.hpp"
#include "ranmtl/metrics.hpp"
#include "ranmtl/models.hpp"
#include "ranmtl/scenario.hpp"
#include "ranmtl/weighting.hpp"

namespace ranmtl {

struct TrainConfig {
  int epochs = 100;
  std::size_t batch = 64;
  AdamConfig opt;
  WeightingConfig weighting;
};

// Which parameter groups a training phase may update. Gradients for masked
// groups are neither computed nor applied.
struct UpdateMask {
  bool shared = true;
  bool task = true;
};

// One node's training loop. Model, optimizer moments, balancer state, and
// the shuffle stream all persist across train_epochs calls, so a federated
// schedule that interleaves phases and aggregation walks the exact same
// local trajectory as an uninterrupted run of the same phase sequence.
class NodeTrainer {
 public:
  // Sub-streams (init, shuffle, weighting) are derived from `seed`.
  NodeTrainer(const ArchitectureConfig& arch, const PreparedData* data,
              const TrainConfig& cfg, std::uint64_t seed);

  void train_epochs(int n, UpdateMask mask = {});
  // Scores a split in chunks; reuses the training workspace. The overload
  // taking stats reports in that source's units (pooled-data models score
  // each node's split under the node's own scaling).
  EvalResult evaluate(const PreparedSplit& split);
  EvalResult evaluate(const PreparedSplit& split, const PreparedData& stats);

  // Validation total loss recorded after every completed training epoch.
  const std::vector<double>& val_trace() const { return val_trace_; }
  int epochs_run() const { return epochs_run_; }

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const PreparedData& data() const { return *data_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  void train_one_epoch(UpdateMask mask);
  void run_batch(const std::size_t* rows, std::size_t n, UpdateMask mask,
                 std::vector<double>& losses);
  void load_rows(const PreparedSplit& split, const std::size_t* rows, std::size_t n);
  void apply_grad_leaves(UpdateMask mask);
  std::vector<double> task_losses() const;

  TrainConfig cfg_;
  const PreparedData* data_;
  Model model_;
  Workspace ws_;

  Tensor batch_x_;
  std::map<Task, Tensor> batch_y_;

  AdamState adam_;
  WeightingState wstate_;
  Rng shuffle_;

  // Cached leaf ids and flattening geometry for the gradient balancers.
  std::vector<int> shared_leaves_, task_leaves_, all_leaves_;
  std::map<Task, std::vector<int>> task_leaf_ids_;
  std::size_t shared_size_ = 0;
  Tensor gmat_;  // [T, shared_size_] per-task shared gradients
  std::map<std::string, Tensor> shared_grad_;          // scatter buffers
  std::map<Task, std::vector<Tensor>> task_grad_;      // per-task copies
  bool mask_shared_ = true, mask_task_ = true, mask_set_ = false;

  std::vector<double> val_trace_;
  int epochs_run_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace ranmtl
