#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ranmtl/metrics.hpp"
#include "ranmtl/models.hpp"
#include "ranmtl/scenario.hpp"
#include "ranmtl/topology.hpp"
#include "ranmtl/trainer.hpp"

namespace ranmtl {

// One experiment: a dataset recipe, a model family, a loss weighting, a
// training topology, and the repeat protocol. `seed` drives everything
// downstream of data generation (init, shuffles, stochastic weightings,
// subsampling); together with the config it fully determines every number
// in the report.
struct ExperimentConfig {
  ScenarioConfig scenario;
  ArchitectureConfig arch;   // active task set lives in arch.tasks
  TrainConfig train;
  TopologyConfig topology;   // Local by default
  double train_fraction = 1.0;  // in (0,1]; < 1 subsamples each node's train split
  int repeats = 3;
  std::uint64_t seed = 1;
};

// Throws std::invalid_argument on an unrunnable config: empty task set,
// train_fraction outside (0,1], repeats < 1, or a fraction that would leave
// some node with an empty train split.
void validate(const ExperimentConfig& cfg, const Dataset& ds);

// One row per trained model in a report. `tasks` records the active set so
// readers know when omega is defined.
struct RunInfo {
  std::string label;
  std::string arch;
  std::string weighting;
  std::string topology;
  std::vector<std::string> tasks;
  std::uint64_t seed = 0;
  int repeat = 0;
  double train_fraction = 1.0;
  int epochs = 0;
  std::size_t param_count = 0;
  std::size_t comm_bytes = 0;
  double wall_clock_s = 0.0;
  bool operator==(const RunInfo&) const = default;
};

// One measurement: (run, node, task, split, epoch) -> metrics. task "ALL"
// carries the unweighted total loss and, on test rows of four-task runs,
// omega. node -1 marks pooled-data evaluations (global topology traces).
// loss and mae are in normalized units; report_units is dB for SC, meters
// for PS, accuracy for the classification tasks.
struct MetricRow {
  int run = 0;
  int node = 0;
  std::string task;
  std::string split;   // "val" or "test"
  int epoch = 0;       // 1-based count of completed local epochs
  double loss = 0.0;
  double mae = 0.0;
  double accuracy = 0.0;
  double report_units = 0.0;
  double omega = 0.0;
  bool operator==(const MetricRow&) const = default;
};

// Append-only measurement log. `note` flags the unit convention and is the
// first line of every emitted file.
struct MetricsReport {
  std::string note =
      "losses and MAE are in normalized units; omega = Acc_IN + Acc_LOS - MAE_SC - MAE_PS";
  std::vector<RunInfo> runs;
  std::vector<MetricRow> rows;

  // Returns the new run's index (MetricRow::run key).
  int add_run(RunInfo info);
  bool operator==(const MetricsReport&) const = default;
};

// What run_single hands back beyond the report rows it appended.
struct RunOutcome {
  int run_index = -1;
  TopologyRun topo;
  std::vector<int> nodes;          // participant node indices into ds.nodes
  std::vector<double> val_first;   // total val loss after epoch 1, per participant
  std::vector<double> val_final;   // total val loss after the last epoch
  std::vector<double> node_omega;  // test omega per participant; empty unless all 4 tasks ran
  double omega_mean = 0.0;         // mean of node_omega, 0 when undefined
  double wall_clock_s = 0.0;
};

// Trains cfg on ds and appends one RunInfo plus its metric rows to report.
// Local/Global runs take their epoch budget from cfg.train.epochs; federated
// runs follow the schedule in cfg.topology. Test rows: per-task and ALL per
// participant. Val rows: federated runs get per-task and ALL rows at every
// post-sync round (epoch = local epochs completed); local/global runs get
// per-task rows at the final epoch plus the ALL-loss curve, endpoints by
// default or every epoch when full_val_trace is set. Each (node, task,
// split, epoch) key appears once.
RunOutcome run_single(const Dataset& ds, const ExperimentConfig& cfg,
                      const std::string& label, MetricsReport& report,
                      bool full_val_trace = false, int repeat = 0);

// Seed derivations, exposed so tests can reproduce any cell independently.
std::uint64_t sparsify_seed(std::uint64_t run_seed);
std::uint64_t sweep_seed(std::uint64_t base_seed, Arch arch, Weighting weighting, int repeat);
std::uint64_t grouping_seed(std::uint64_t base_seed, const std::vector<Task>& subset);

// Type-7 quantile (linear interpolation between order statistics) of an
// unsorted sample; p in [0,1]. Throws on an empty sample.
double quantile(std::vector<double> sample, double p);

// Omega distribution of one (architecture, weighting) cell across repeats.
// Each repeat's omega is the node-averaged test omega of one run.
struct SweepCell {
  Arch arch = Arch::STL;
  Weighting weighting = Weighting::EW;
  std::vector<double> omegas;  // one per repeat, repeat order
  double mean = 0.0;
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double wall_clock_s = 0.0;
};

// Cells ranked by lower-quartile omega, best first (ties by architecture
// then weighting name). Covers every requested pair or throws.
struct SweepTable {
  std::vector<SweepCell> cells;
};

// Full factorial sweep: every (arch, weighting) pair, `repeats` runs each,
// seeded by sweep_seed so the table is a pure function of (ds, lists, base).
// Duplicate list entries are rejected. workers > 1 trains cells concurrently;
// the table and report are identical either way.
SweepTable sweep_design_space(const Dataset& ds, const std::vector<Arch>& archs,
                              const std::vector<Weighting>& weightings, int repeats,
                              const ExperimentConfig& base, MetricsReport& report,
                              int workers = 1);

// Node-averaged test metrics for one task trained inside one subset.
struct GroupingRow {
  std::vector<Task> subset;
  Task task = Task::SC;
  double loss = 0.0;
  double mae = 0.0;
  double accuracy = 0.0;
  double report_units = 0.0;
};

// The 15 nonempty subsets of the four tasks, canonical (bitmask) order.
std::vector<std::vector<Task>> all_task_subsets();

// Trains one model per subset (STL for singletons, base.arch otherwise) and
// reports each task's test metric under every subset containing it. A
// singleton row is bit-for-bit the direct STL run with the same derived seed.
std::vector<GroupingRow> grouping_sweep(const Dataset& ds,
                                        const std::vector<std::vector<Task>>& subsets,
                                        const ExperimentConfig& base, MetricsReport& report);

// Uniform subsample of each node's train split, without replacement, keeping
// original sample order; val/test untouched; feature standardization refit on
// the subsample. fraction 1.0 is the identity (bitwise). Throws when fraction
// is outside (0,1] or floor(fraction * n) hits zero for some node.
Dataset sparsify(const Dataset& ds, double fraction, std::uint64_t seed);

// One summary line: a run's node-averaged test metric for one task beside
// the first STL-local baseline covering that task, when the report holds one.
// improvement_pct is 100*(stl-x)/stl for MAE and 100*(x-stl)/stl for
// accuracy, both on normalized units, so positive always means better.
struct SummaryEntry {
  int run = -1;
  std::string task;
  std::string metric;  // "mae" or "accuracy"
  double value = 0.0;
  bool has_baseline = false;
  double stl_local = 0.0;
  double improvement_pct = 0.0;
};

std::vector<SummaryEntry> summarize(const MetricsReport& report);

enum class ReportFormat { Csv, Json };

// Writes report to stem-derived paths and returns them. Json: stem.json.
// Csv: stem.runs.csv + stem.rows.csv (lossless) and stem.summary.csv with
// percentage-improvement-over-STL-local columns (positive = better; MAE
// improvement is 100*(stl-x)/stl, accuracy improvement 100*(x-stl)/stl, both
// on normalized units). I/O failures throw with the path in the message.
std::vector<std::string> emit_report(const MetricsReport& report, ReportFormat fmt,
                                     const std::string& stem);

// Reads back what emit_report wrote (summary files are derived, not parsed).
// parse_report(emit_report(r)) == r.
MetricsReport parse_report(ReportFormat fmt, const std::string& stem);

}  // namespace ranmtl
