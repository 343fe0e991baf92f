#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "ranmtl/scenario.hpp"
#include "ranmtl/tasks.hpp"
#include "ranmtl/tensor.hpp"

namespace ranmtl {

// One task's scores on a split. Training-unit fields always hold; `report`
// carries dB for SC, meters for PS, and repeats the accuracy for IN/LOS.
struct TaskMetric {
  double loss = 0.0;      // MSE or BCE as the graph computes it
  double mae = 0.0;       // normalized MAE (Mse tasks; 0 for Bce)
  double accuracy = 0.0;  // fraction correct at threshold 0.5 (Bce tasks; 0 for Mse)
  double report = 0.0;
};

struct EvalResult {
  std::map<Task, TaskMetric> tasks;
  double total_loss = 0.0;  // unweighted sum over tasks
};

// Acc_IN + Acc_LOS - MAE_SC - MAE_PS with the MAE terms in normalized
// training units. Throws when one of the four tasks is missing.
double omega(const EvalResult& r);

// Streaming accumulation over prediction chunks, so evaluation never needs
// the whole split in one batch. add() takes one task's predictions and
// labels for `rows` samples plus the chunk's mean loss; finish() divides and
// attaches report units from the split's standardization stats.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(const std::vector<TaskSpec>& specs);

  void add(Task t, const Tensor& pred, const Tensor& labels, double chunk_loss,
           std::size_t rows);
  EvalResult finish(const PreparedData& stats) const;

 private:
  struct Cell {
    TaskSpec spec;
    std::size_t rows = 0;
    double loss_sum = 0.0;              // chunk loss * rows
    std::vector<double> abs_err;        // per output column
    std::size_t correct = 0;            // Bce tasks
  };
  std::map<Task, Cell> cells_;
};

}  // namespace ranmtl
