#include "ranmtl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "ranmtl/rng.hpp"

namespace ranmtl {

namespace {
using nlohmann::json;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

bool has_all_four(const std::vector<Task>& tasks) {
  std::set<Task> s(tasks.begin(), tasks.end());
  return s.size() == all_tasks().size();
}

// Local epochs completed when round r's sync lands; round 0 is the warmup.
int epochs_at_round(const TopologyConfig& t, int round) {
  const int per = t.mode == TopologyMode::FedAlt ? t.tsk_epochs + t.sh_epochs : t.round_epochs;
  return t.warmup_epochs + round * per;
}

MetricRow task_row(int run, int node, const std::string& split, int epoch, Task t,
                   const TaskMetric& m) {
  MetricRow row;
  row.run = run;
  row.node = node;
  row.task = task_name(t);
  row.split = split;
  row.epoch = epoch;
  row.loss = m.loss;
  row.mae = m.mae;
  row.accuracy = m.accuracy;
  row.report_units = m.report;
  return row;
}

MetricRow all_row(int run, int node, const std::string& split, int epoch, double total_loss,
                  double omega_val = 0.0) {
  MetricRow row;
  row.run = run;
  row.node = node;
  row.task = "ALL";
  row.split = split;
  row.epoch = epoch;
  row.loss = total_loss;
  row.omega = omega_val;
  return row;
}

}  // namespace

void validate(const ExperimentConfig& cfg, const Dataset& ds) {
  if (cfg.arch.tasks.empty()) throw std::invalid_argument("experiment: empty task set");
  std::set<Task> seen;
  for (Task t : cfg.arch.tasks)
    if (!seen.insert(t).second)
      throw std::invalid_argument(std::string("experiment: duplicate task ") + task_name(t));
  if (!(cfg.train_fraction > 0.0) || cfg.train_fraction > 1.0)
    throw std::invalid_argument("experiment: train_fraction must be in (0, 1]");
  if (cfg.repeats < 1) throw std::invalid_argument("experiment: repeats must be >= 1");
  if (cfg.train.batch < 1) throw std::invalid_argument("experiment: batch must be >= 1");
  if ((cfg.topology.mode == TopologyMode::Local || cfg.topology.mode == TopologyMode::Global) &&
      cfg.train.epochs < 1)
    throw std::invalid_argument("experiment: epochs must be >= 1");
  for (std::size_t i = 0; i < ds.nodes.size(); ++i) {
    const auto k = static_cast<std::size_t>(
        std::floor(cfg.train_fraction * static_cast<double>(ds.nodes[i].train.n)));
    if (k == 0)
      throw std::invalid_argument("experiment: train_fraction " + fmt_double(cfg.train_fraction) +
                                  " leaves node " + std::to_string(i) +
                                  " with no train samples");
  }
}

int MetricsReport::add_run(RunInfo info) {
  const int idx = static_cast<int>(runs.size());
  runs.push_back(std::move(info));
  return idx;
}

std::uint64_t sparsify_seed(std::uint64_t run_seed) { return derive_seed(run_seed, {23}); }

std::uint64_t sweep_seed(std::uint64_t base_seed, Arch arch, Weighting weighting, int repeat) {
  return derive_seed(base_seed,
                     {31, static_cast<std::uint64_t>(arch), static_cast<std::uint64_t>(weighting),
                      static_cast<std::uint64_t>(repeat)});
}

std::uint64_t grouping_seed(std::uint64_t base_seed, const std::vector<Task>& subset) {
  std::uint64_t mask = 0;
  for (Task t : subset) mask |= std::uint64_t{1} << static_cast<int>(t);
  return derive_seed(base_seed, {37, mask});
}

RunOutcome run_single(const Dataset& ds, const ExperimentConfig& cfg, const std::string& label,
                      MetricsReport& report, bool full_val_trace, int repeat) {
  validate(cfg, ds);

  Dataset sparse;
  const Dataset* use = &ds;
  if (cfg.train_fraction < 1.0) {
    sparse = sparsify(ds, cfg.train_fraction, sparsify_seed(cfg.seed));
    use = &sparse;
  }

  TopologyConfig topo = cfg.topology;
  if (topo.mode == TopologyMode::Local || topo.mode == TopologyMode::Global)
    topo.total_epochs = cfg.train.epochs;

  const auto t0 = std::chrono::steady_clock::now();
  TopologyRunner runner(*use, cfg.arch.tasks, cfg.arch, cfg.train, topo, cfg.seed);
  RunOutcome out;
  out.topo = runner.run();
  out.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const std::size_t P = runner.participant_count();
  const bool pooled = topo.mode == TopologyMode::Global;
  for (std::size_t p = 0; p < P; ++p) out.nodes.push_back(runner.participant_node(p));

  for (std::size_t i = 0; i < runner.trainer_count(); ++i) {
    const std::vector<double>& trace = runner.trainer(i).val_trace();
    if (trace.empty()) continue;
    out.val_first.push_back(trace.front());
    out.val_final.push_back(trace.back());
  }

  const bool with_omega = has_all_four(cfg.arch.tasks);
  if (with_omega) {
    for (std::size_t p = 0; p < P; ++p) out.node_omega.push_back(omega(out.topo.final_test[p]));
    out.omega_mean = mean_of(out.node_omega);
  }

  RunInfo info;
  info.label = label;
  info.arch = arch_name(cfg.arch.kind);
  info.weighting = weighting_name(cfg.train.weighting.kind);
  info.topology = topology_mode_name(topo.mode);
  for (Task t : cfg.arch.tasks) info.tasks.push_back(task_name(t));
  info.seed = cfg.seed;
  info.repeat = repeat;
  info.train_fraction = cfg.train_fraction;
  info.epochs = runner.trainer_count() ? runner.trainer(0).epochs_run() : 0;
  info.param_count = count_params(cfg.arch).total;
  info.comm_bytes = out.topo.total_bytes;
  info.wall_clock_s = out.wall_clock_s;
  const int run = report.add_run(std::move(info));
  out.run_index = run;
  const int E = runner.trainer_count() ? runner.trainer(0).epochs_run() : 0;

  // Validation rows. Federated runs report the post-sync per-round curve;
  // local and global runs report the per-epoch trace (endpoints unless the
  // full curve was asked for) plus per-task scores at the final epoch. The
  // two sources never mix, so the (node, task, split, epoch) key is unique.
  const bool federated = topo.mode != TopologyMode::Local && topo.mode != TopologyMode::Global;
  if (federated) {
    for (const NodeRoundEval& ev : out.topo.round_val) {
      const int epoch = epochs_at_round(topo, ev.round);
      for (const auto& [t, m] : ev.val.tasks)
        report.rows.push_back(task_row(run, ev.node, "val", epoch, t, m));
      report.rows.push_back(all_row(run, ev.node, "val", epoch, ev.val.total_loss));
    }
  } else {
    for (std::size_t i = 0; i < runner.trainer_count(); ++i) {
      const std::vector<double>& trace = runner.trainer(i).val_trace();
      if (trace.empty()) continue;
      const int node = pooled ? -1 : runner.participant_node(i);
      if (full_val_trace) {
        for (std::size_t e = 0; e < trace.size(); ++e)
          report.rows.push_back(all_row(run, node, "val", static_cast<int>(e) + 1, trace[e]));
      } else {
        report.rows.push_back(all_row(run, node, "val", 1, trace.front()));
        if (trace.size() > 1)
          report.rows.push_back(
              all_row(run, node, "val", static_cast<int>(trace.size()), trace.back()));
      }
    }
    for (std::size_t p = 0; p < P; ++p) {
      const int node = runner.participant_node(p);
      for (const auto& [t, m] : out.topo.final_val[p].tasks)
        report.rows.push_back(task_row(run, node, "val", E, t, m));
    }
  }

  // Test scores under each node's own scaling.
  for (std::size_t p = 0; p < P; ++p) {
    const int node = runner.participant_node(p);
    for (const auto& [t, m] : out.topo.final_test[p].tasks)
      report.rows.push_back(task_row(run, node, "test", E, t, m));
    report.rows.push_back(all_row(run, node, "test", E, out.topo.final_test[p].total_loss,
                                  with_omega ? out.node_omega[p] : 0.0));
  }
  return out;
}

double quantile(std::vector<double> sample, double p) {
  if (sample.empty()) throw std::invalid_argument("quantile: empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile: p outside [0, 1]");
  std::sort(sample.begin(), sample.end());
  const double h = (static_cast<double>(sample.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  const std::size_t hi = std::min(lo + 1, sample.size() - 1);
  return sample[lo] + (h - static_cast<double>(lo)) * (sample[hi] - sample[lo]);
}

namespace {

void fill_cell_stats(SweepCell& cell) {
  cell.mean = mean_of(cell.omegas);
  cell.q25 = quantile(cell.omegas, 0.25);
  cell.median = quantile(cell.omegas, 0.5);
  cell.q75 = quantile(cell.omegas, 0.75);
  cell.lo = *std::min_element(cell.omegas.begin(), cell.omegas.end());
  cell.hi = *std::max_element(cell.omegas.begin(), cell.omegas.end());
}

// Appends a fragment produced against an empty report, re-basing run indices.
void merge_report(MetricsReport& into, MetricsReport&& fragment) {
  const int base = static_cast<int>(into.runs.size());
  for (RunInfo& r : fragment.runs) into.runs.push_back(std::move(r));
  for (MetricRow& row : fragment.rows) {
    row.run += base;
    into.rows.push_back(row);
  }
}

}  // namespace

SweepTable sweep_design_space(const Dataset& ds, const std::vector<Arch>& archs,
                              const std::vector<Weighting>& weightings, int repeats,
                              const ExperimentConfig& base, MetricsReport& report, int workers) {
  if (archs.empty()) throw std::invalid_argument("sweep: no architectures");
  if (weightings.empty()) throw std::invalid_argument("sweep: no weightings");
  if (repeats < 1) throw std::invalid_argument("sweep: repeats must be >= 1");
  if (std::set<Arch>(archs.begin(), archs.end()).size() != archs.size())
    throw std::invalid_argument("sweep: duplicate architecture");
  if (std::set<Weighting>(weightings.begin(), weightings.end()).size() != weightings.size())
    throw std::invalid_argument("sweep: duplicate weighting");
  if (!has_all_four(base.arch.tasks))
    throw std::invalid_argument("sweep: omega ranking needs all four tasks active");

  const std::size_t n_cells = archs.size() * weightings.size();
  std::vector<SweepCell> cells(n_cells);
  std::vector<MetricsReport> fragments(n_cells);
  std::vector<std::exception_ptr> errors(n_cells);

  auto run_cell = [&](std::size_t ci) {
    const Arch arch = archs[ci / weightings.size()];
    const Weighting w = weightings[ci % weightings.size()];
    SweepCell& cell = cells[ci];
    cell.arch = arch;
    cell.weighting = w;
    for (int r = 0; r < repeats; ++r) {
      ExperimentConfig cfg = base;
      cfg.arch.kind = arch;
      cfg.train.weighting.kind = w;
      cfg.repeats = repeats;
      cfg.seed = sweep_seed(base.seed, arch, w, r);
      const std::string label = std::string("sweep/") + arch_name(arch) + "/" +
                                weighting_name(w) + "/r" + std::to_string(r);
      const RunOutcome out = run_single(ds, cfg, label, fragments[ci], false, r);
      cell.omegas.push_back(out.omega_mean);
      cell.wall_clock_s += out.wall_clock_s;
    }
    fill_cell_stats(cell);
  };

  if (workers <= 1) {
    for (std::size_t ci = 0; ci < n_cells; ++ci) run_cell(ci);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (;;) {
        const std::size_t ci = next.fetch_add(1);
        if (ci >= n_cells) return;
        try {
          run_cell(ci);
        } catch (...) {
          errors[ci] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(workers), n_cells);
    pool.reserve(n);
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    for (std::size_t ci = 0; ci < n_cells; ++ci)
      if (errors[ci]) std::rethrow_exception(errors[ci]);
  }

  for (std::size_t ci = 0; ci < n_cells; ++ci) merge_report(report, std::move(fragments[ci]));

  SweepTable table;
  table.cells = std::move(cells);
  std::stable_sort(table.cells.begin(), table.cells.end(),
                   [](const SweepCell& a, const SweepCell& b) {
                     if (a.q25 != b.q25) return a.q25 > b.q25;
                     const int ac = std::strcmp(arch_name(a.arch), arch_name(b.arch));
                     if (ac != 0) return ac < 0;
                     return std::strcmp(weighting_name(a.weighting), weighting_name(b.weighting)) <
                            0;
                   });

  // Every requested pair must have produced a full cell.
  for (Arch a : archs)
    for (Weighting w : weightings) {
      const auto it = std::find_if(
          table.cells.begin(), table.cells.end(),
          [&](const SweepCell& c) { return c.arch == a && c.weighting == w; });
      if (it == table.cells.end() || static_cast<int>(it->omegas.size()) != repeats)
        throw std::runtime_error(std::string("sweep: missing cell ") + arch_name(a) + "/" +
                                 weighting_name(w));
    }
  return table;
}

std::vector<std::vector<Task>> all_task_subsets() {
  std::vector<std::vector<Task>> subsets;
  for (unsigned mask = 1; mask < 16; ++mask) {
    std::vector<Task> s;
    for (Task t : all_tasks())
      if (mask & (1u << static_cast<int>(t))) s.push_back(t);
    subsets.push_back(std::move(s));
  }
  return subsets;
}

std::vector<GroupingRow> grouping_sweep(const Dataset& ds,
                                        const std::vector<std::vector<Task>>& subsets,
                                        const ExperimentConfig& base, MetricsReport& report) {
  if (subsets.empty()) throw std::invalid_argument("grouping: no subsets");
  std::vector<GroupingRow> rows;
  for (const std::vector<Task>& subset : subsets) {
    ExperimentConfig cfg = base;
    cfg.arch.tasks = subset;
    cfg.arch.kind = subset.size() == 1 ? Arch::STL : base.arch.kind;
    cfg.seed = grouping_seed(base.seed, subset);
    std::string label = "grouping/";
    for (std::size_t i = 0; i < subset.size(); ++i)
      label += std::string(i ? "+" : "") + task_name(subset[i]);
    const RunOutcome out = run_single(ds, cfg, label, report);
    const auto P = static_cast<double>(out.nodes.size());
    for (Task t : subset) {
      GroupingRow row;
      row.subset = subset;
      row.task = t;
      for (const EvalResult& res : out.topo.final_test) {
        const TaskMetric& m = res.tasks.at(t);
        row.loss += m.loss / P;
        row.mae += m.mae / P;
        row.accuracy += m.accuracy / P;
        row.report_units += m.report / P;
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

Dataset sparsify(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw std::invalid_argument("sparsify: fraction must be in (0, 1], got " +
                                fmt_double(fraction));
  Dataset out = ds;
  if (fraction == 1.0) return out;

  for (std::size_t ni = 0; ni < out.nodes.size(); ++ni) {
    NodeDataset& node = out.nodes[ni];
    const SampleBlock& src = ds.nodes[ni].train;
    const std::size_t k =
        static_cast<std::size_t>(std::floor(fraction * static_cast<double>(src.n)));
    if (k == 0)
      throw std::invalid_argument("sparsify: fraction " + fmt_double(fraction) +
                                  " leaves node " + std::to_string(ni) +
                                  " with no train samples");

    // Partial Fisher-Yates draws k distinct indices; sorting keeps the
    // subsample in original sample order.
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(ni)}));
    std::vector<std::size_t> idx(src.n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i)
      std::swap(idx[i], idx[i + rng.below(src.n - i)]);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());

    const std::size_t d_in = node.d_in, d_sc = node.d_sc;
    SampleBlock sub;
    sub.n = k;
    sub.x.reserve(k * d_in);
    sub.y_sc.reserve(k * d_sc);
    sub.y_ps.reserve(k * 3);
    sub.y_in.reserve(k);
    sub.y_los.reserve(k * d_sc);
    for (std::size_t i : idx) {
      sub.x.insert(sub.x.end(), src.x.begin() + i * d_in, src.x.begin() + (i + 1) * d_in);
      sub.y_sc.insert(sub.y_sc.end(), src.y_sc.begin() + i * d_sc,
                      src.y_sc.begin() + (i + 1) * d_sc);
      sub.y_ps.insert(sub.y_ps.end(), src.y_ps.begin() + i * 3, src.y_ps.begin() + (i + 1) * 3);
      sub.y_in.push_back(src.y_in[i]);
      sub.y_los.insert(sub.y_los.end(), src.y_los.begin() + i * d_sc,
                       src.y_los.begin() + (i + 1) * d_sc);
    }
    node.train = std::move(sub);
    fit_feature_stats(node);
  }
  return out;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    q += c;
    if (c == '"') q += '"';
  }
  q += '"';
  return q;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string join_tasks(const std::vector<std::string>& tasks) {
  std::string s;
  for (std::size_t i = 0; i < tasks.size(); ++i) s += (i ? ";" : "") + tasks[i];
  return s;
}

std::vector<std::string> split_tasks(const std::string& s) {
  std::vector<std::string> tasks;
  std::string cur;
  for (char c : s) {
    if (c == ';') {
      tasks.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) tasks.push_back(cur);
  return tasks;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  return f;
}

void finish_out(std::ofstream& f, const std::string& path) {
  f.flush();
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace

std::vector<SummaryEntry> summarize(const MetricsReport& report) {
  // Node-averaged test metric per (run, task).
  std::map<std::pair<int, std::string>, std::pair<double, int>> acc;
  std::map<std::pair<int, std::string>, MetricKind> kind;
  for (const MetricRow& row : report.rows) {
    if (row.split != "test" || row.task == "ALL") continue;
    const bool is_acc = row.task == "IN" || row.task == "LOS";
    const double v = is_acc ? row.accuracy : row.mae;
    auto& slot = acc[{row.run, row.task}];
    slot.first += v;
    slot.second += 1;
    kind[{row.run, row.task}] = is_acc ? MetricKind::Accuracy : MetricKind::Mae;
  }

  // Baseline: the first STL-local run with test rows for the task.
  std::map<std::string, double> baseline;
  for (std::size_t r = 0; r < report.runs.size(); ++r) {
    const RunInfo& run = report.runs[r];
    if (run.arch != arch_name(Arch::STL) || run.topology != topology_mode_name(TopologyMode::Local))
      continue;
    for (const std::string& t : run.tasks) {
      const auto it = acc.find({static_cast<int>(r), t});
      if (it != acc.end() && !baseline.count(t))
        baseline[t] = it->second.first / it->second.second;
    }
  }

  std::vector<SummaryEntry> rows;
  for (std::size_t r = 0; r < report.runs.size(); ++r) {
    for (const std::string& t : report.runs[r].tasks) {
      const auto it = acc.find({static_cast<int>(r), t});
      if (it == acc.end()) continue;
      SummaryEntry s;
      s.run = static_cast<int>(r);
      s.task = t;
      const bool is_acc = kind[{static_cast<int>(r), t}] == MetricKind::Accuracy;
      s.metric = is_acc ? "accuracy" : "mae";
      s.value = it->second.first / it->second.second;
      const auto b = baseline.find(t);
      if (b != baseline.end() && b->second != 0.0) {
        s.has_baseline = true;
        s.stl_local = b->second;
        // Positive = better than the single-task local baseline.
        s.improvement_pct = is_acc ? 100.0 * (s.value - s.stl_local) / s.stl_local
                                   : 100.0 * (s.stl_local - s.value) / s.stl_local;
      }
      rows.push_back(std::move(s));
    }
  }
  return rows;
}

namespace {

void write_summary_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream f = open_out(path);
  f << "# " << report.note << "\n";
  f << "label,arch,weighting,topology,task,metric,value,stl_local_value,improvement_pct\n";
  for (const SummaryEntry& s : summarize(report)) {
    const RunInfo& run = report.runs[static_cast<std::size_t>(s.run)];
    f << csv_field(run.label) << ',' << run.arch << ',' << run.weighting << ',' << run.topology
      << ',' << s.task << ',' << s.metric << ',' << fmt_double(s.value) << ',';
    if (s.has_baseline)
      f << fmt_double(s.stl_local) << ',' << fmt_double(s.improvement_pct);
    else
      f << ',';
    f << '\n';
  }
  finish_out(f, path);
}

json summary_json(const MetricsReport& report) {
  json arr = json::array();
  for (const SummaryEntry& s : summarize(report)) {
    const RunInfo& run = report.runs[static_cast<std::size_t>(s.run)];
    json j{{"label", run.label},   {"arch", run.arch}, {"weighting", run.weighting},
           {"topology", run.topology}, {"task", s.task},  {"metric", s.metric},
           {"value", s.value}};
    if (s.has_baseline) {
      j["stl_local_value"] = s.stl_local;
      j["improvement_pct"] = s.improvement_pct;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace

std::vector<std::string> emit_report(const MetricsReport& report, ReportFormat fmt,
                                     const std::string& stem) {
  if (fmt == ReportFormat::Json) {
    json j;
    j["note"] = report.note;
    j["runs"] = json::array();
    for (const RunInfo& r : report.runs)
      j["runs"].push_back({{"label", r.label},
                           {"arch", r.arch},
                           {"weighting", r.weighting},
                           {"topology", r.topology},
                           {"tasks", r.tasks},
                           {"seed", r.seed},
                           {"repeat", r.repeat},
                           {"train_fraction", r.train_fraction},
                           {"epochs", r.epochs},
                           {"param_count", r.param_count},
                           {"comm_bytes", r.comm_bytes},
                           {"wall_clock_s", r.wall_clock_s}});
    j["rows"] = json::array();
    for (const MetricRow& m : report.rows)
      j["rows"].push_back({{"run", m.run},
                           {"node", m.node},
                           {"task", m.task},
                           {"split", m.split},
                           {"epoch", m.epoch},
                           {"loss", m.loss},
                           {"mae", m.mae},
                           {"accuracy", m.accuracy},
                           {"report_units", m.report_units},
                           {"omega", m.omega}});
    j["summary"] = summary_json(report);
    const std::string path = stem + ".json";
    std::ofstream f = open_out(path);
    f << j.dump(1) << "\n";
    finish_out(f, path);
    return {path};
  }

  const std::string runs_path = stem + ".runs.csv";
  const std::string rows_path = stem + ".rows.csv";
  const std::string summary_path = stem + ".summary.csv";

  {
    std::ofstream f = open_out(runs_path);
    f << "# " << report.note << "\n";
    f << "label,arch,weighting,topology,tasks,seed,repeat,train_fraction,epochs,param_count,"
         "comm_bytes,wall_clock_s\n";
    for (const RunInfo& r : report.runs)
      f << csv_field(r.label) << ',' << r.arch << ',' << r.weighting << ',' << r.topology << ','
        << join_tasks(r.tasks) << ',' << r.seed << ',' << r.repeat << ','
        << fmt_double(r.train_fraction) << ',' << r.epochs << ',' << r.param_count << ','
        << r.comm_bytes << ',' << fmt_double(r.wall_clock_s) << '\n';
    finish_out(f, runs_path);
  }
  {
    std::ofstream f = open_out(rows_path);
    f << "# " << report.note << "\n";
    f << "run,node,task,split,epoch,loss,mae,accuracy,report_units,omega\n";
    for (const MetricRow& m : report.rows)
      f << m.run << ',' << m.node << ',' << m.task << ',' << m.split << ',' << m.epoch << ','
        << fmt_double(m.loss) << ',' << fmt_double(m.mae) << ',' << fmt_double(m.accuracy) << ','
        << fmt_double(m.report_units) << ',' << fmt_double(m.omega) << '\n';
    finish_out(f, rows_path);
  }
  write_summary_csv(report, summary_path);
  return {runs_path, rows_path, summary_path};
}

MetricsReport parse_report(ReportFormat fmt, const std::string& stem) {
  MetricsReport report;
  if (fmt == ReportFormat::Json) {
    const std::string path = stem + ".json";
    std::ifstream f = open_in(path);
    json j;
    f >> j;
    report.note = j.at("note").get<std::string>();
    for (const json& r : j.at("runs")) {
      RunInfo info;
      info.label = r.at("label").get<std::string>();
      info.arch = r.at("arch").get<std::string>();
      info.weighting = r.at("weighting").get<std::string>();
      info.topology = r.at("topology").get<std::string>();
      info.tasks = r.at("tasks").get<std::vector<std::string>>();
      info.seed = r.at("seed").get<std::uint64_t>();
      info.repeat = r.at("repeat").get<int>();
      info.train_fraction = r.at("train_fraction").get<double>();
      info.epochs = r.at("epochs").get<int>();
      info.param_count = r.at("param_count").get<std::size_t>();
      info.comm_bytes = r.at("comm_bytes").get<std::size_t>();
      info.wall_clock_s = r.at("wall_clock_s").get<double>();
      report.runs.push_back(std::move(info));
    }
    for (const json& m : j.at("rows")) {
      MetricRow row;
      row.run = m.at("run").get<int>();
      row.node = m.at("node").get<int>();
      row.task = m.at("task").get<std::string>();
      row.split = m.at("split").get<std::string>();
      row.epoch = m.at("epoch").get<int>();
      row.loss = m.at("loss").get<double>();
      row.mae = m.at("mae").get<double>();
      row.accuracy = m.at("accuracy").get<double>();
      row.report_units = m.at("report_units").get<double>();
      row.omega = m.at("omega").get<double>();
      report.rows.push_back(std::move(row));
    }
    return report;
  }

  const std::string runs_path = stem + ".runs.csv";
  const std::string rows_path = stem + ".rows.csv";
  {
    std::ifstream f = open_in(runs_path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (lineno == 1) {
        if (line.rfind("# ", 0) == 0) report.note = line.substr(2);
        continue;
      }
      if (lineno == 2 || line.empty()) continue;  // column header
      const std::vector<std::string> v = split_csv_line(line);
      if (v.size() != 12)
        throw std::runtime_error(runs_path + ": bad field count on line " +
                                 std::to_string(lineno));
      RunInfo info;
      info.label = v[0];
      info.arch = v[1];
      info.weighting = v[2];
      info.topology = v[3];
      info.tasks = split_tasks(v[4]);
      info.seed = std::stoull(v[5]);
      info.repeat = std::stoi(v[6]);
      info.train_fraction = std::stod(v[7]);
      info.epochs = std::stoi(v[8]);
      info.param_count = std::stoull(v[9]);
      info.comm_bytes = std::stoull(v[10]);
      info.wall_clock_s = std::stod(v[11]);
      report.runs.push_back(std::move(info));
    }
  }
  {
    std::ifstream f = open_in(rows_path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (lineno <= 2 || line.empty()) continue;
      const std::vector<std::string> v = split_csv_line(line);
      if (v.size() != 10)
        throw std::runtime_error(rows_path + ": bad field count on line " +
                                 std::to_string(lineno));
      MetricRow row;
      row.run = std::stoi(v[0]);
      row.node = std::stoi(v[1]);
      row.task = v[2];
      row.split = v[3];
      row.epoch = std::stoi(v[4]);
      row.loss = std::stod(v[5]);
      row.mae = std::stod(v[6]);
      row.accuracy = std::stod(v[7]);
      row.report_units = std::stod(v[8]);
      row.omega = std::stod(v[9]);
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

}  // namespace ranmtl
