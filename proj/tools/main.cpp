#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include <CLI11.hpp>

#include "ranmtl/dataset_io.hpp"
#include "ranmtl/harness.hpp"

namespace {
using namespace ranmtl;

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<Task> parse_task_list(const std::string& s) {
  if (s == "all") return all_tasks();
  std::vector<Task> tasks;
  for (const std::string& tok : split_list(s)) tasks.push_back(task_from_name(tok));
  return tasks;
}

std::vector<Arch> parse_arch_list(const std::string& s) {
  if (s == "all") return {Arch::HPS, Arch::MMoE, Arch::DSelectK, Arch::CGC};
  std::vector<Arch> archs;
  for (const std::string& tok : split_list(s)) archs.push_back(arch_from_name(tok));
  return archs;
}

std::vector<Weighting> parse_weighting_list(const std::string& s) {
  if (s == "all") return all_weightings();
  std::vector<Weighting> ws;
  for (const std::string& tok : split_list(s)) ws.push_back(weighting_from_name(tok));
  return ws;
}

ReportFormat parse_format(const std::string& s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw std::invalid_argument("unknown report format: " + s + " (expected csv or json)");
}

// "all" or semicolon-separated task lists, e.g. "SC;SC,PS;SC,PS,IN,LOS".
std::vector<std::vector<Task>> parse_subsets(const std::string& s) {
  if (s == "all") return all_task_subsets();
  std::vector<std::vector<Task>> subsets;
  for (const std::string& group : split_list(s, ';')) subsets.push_back(parse_task_list(group));
  return subsets;
}

// A .json path holds the whole dataset in one file; anything else is a
// directory of per-node containers.
void save_any(const Dataset& ds, const std::string& out) {
  const bool single = out.size() > 5 && out.compare(out.size() - 5, 5, ".json") == 0;
  if (single)
    save_dataset(ds, out);
  else
    save_dataset_dir(ds, out);
}

template <typename T>
void assign_from_string(T& var, const std::string& s) {
  if constexpr (std::is_same_v<T, std::string>) {
    var = s;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (s == "true" || s == "1" || s == "yes") var = true;
    else if (s == "false" || s == "0" || s == "no") var = false;
    else throw std::invalid_argument("config: not a boolean: " + s);
  } else if constexpr (std::is_signed_v<T>) {
    var = static_cast<T>(std::stoll(s));
  } else if constexpr (std::is_unsigned_v<T>) {
    var = static_cast<T>(std::stoull(s));
  } else {
    var = static_cast<T>(std::stod(s));
  }
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot read " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const std::size_t a = s.find_first_not_of(" \t\r");
    const std::size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(f, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty() || kv.count(key))
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": bad or repeated key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

// Subcommand wrapper binding each option to a config-file key of the same
// name (without the leading --). `--config file` fills everything the
// command line left untouched, so explicit flags always win. Options added
// with required_option (I/O paths) stay command-line-only.
struct ConfigCmd {
  CLI::App* cmd = nullptr;
  std::string config_path;
  std::map<std::string, std::function<void(const std::string&)>> setters;

  explicit ConfigCmd(CLI::App* c) : cmd(c) {
    cmd->add_option("--config", config_path, "key=value config file");
  }

  template <typename T>
  CLI::Option* option(const std::string& name, T& var, const std::string& desc = "") {
    setters[name.substr(2)] = [&var](const std::string& s) { assign_from_string(var, s); };
    return cmd->add_option(name, var, desc);
  }

  template <typename T>
  CLI::Option* required_option(const std::string& name, T& var, const std::string& desc = "") {
    return cmd->add_option(name, var, desc)->required();
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& desc = "") {
    setters[name.substr(2)] = [&var](const std::string& s) { assign_from_string(var, s); };
    return cmd->add_flag(name, var, desc);
  }

  // Reads and key-validates the config file; empty map when none was given.
  std::map<std::string, std::string> file_values() const {
    std::map<std::string, std::string> kv;
    if (config_path.empty()) return kv;
    kv = read_kv_file(config_path);
    for (const auto& [key, value] : kv)
      if (!setters.count(key))
        throw std::invalid_argument(config_path + ": unknown key: " + key);
    return kv;
  }

  bool on_command_line(const std::string& key) const { return cmd->count("--" + key) > 0; }

  void apply_config() const {
    for (const auto& [key, value] : file_values())
      if (!on_command_line(key)) setters.at(key)(value);
  }
};

// Options shared by every training-style subcommand.
struct TrainFlags {
  std::string data;
  std::string arch = "HPS";
  std::string weighting = "EW";
  std::string topology = "local";
  std::string tasks = "all";
  int epochs = 100;
  double lr = 1e-4;
  std::size_t batch = 64;
  std::size_t width = 512;
  std::size_t experts = 2;
  std::size_t task_experts = 2;
  std::size_t dselect_k = 1;
  double dselect_gamma = 1.0;
  double dselect_reg = 1e-3;
  double dwa_temperature = 2.0;
  double gls_floor = 1e-8;
  double cagrad_c = 0.4;
  double gradnorm_alpha = 1.5;
  double gradnorm_lr = 0.025;
  double gradvac_beta = 1e-2;
  double fraction = 1.0;
  std::uint64_t seed = 1;
  int rounds = -1;
  int warmup_epochs = -1;
  int tsk_epochs = -1;
  int sh_epochs = -1;
  int round_epochs = -1;
  std::string nodes;
  bool size_weighted = false;
  std::string out;
  std::string format = "csv";
};

void add_model_options(ConfigCmd& cc, TrainFlags& f) {
  cc.required_option("--data", f.data, "dataset file or directory");
  cc.option("--tasks", f.tasks, "active tasks, comma list or 'all'");
  cc.option("--epochs", f.epochs, "training epochs (local/global budget)");
  cc.option("--lr", f.lr, "Adam learning rate");
  cc.option("--batch", f.batch, "minibatch size");
  cc.option("--width", f.width, "hidden width");
  cc.option("--experts", f.experts, "shared experts (MMoE/DSelect-k/CGC)");
  cc.option("--task_experts", f.task_experts, "per-task experts (CGC)");
  cc.option("--dselect_k", f.dselect_k, "DSelect-k: experts picked per head");
  cc.option("--dselect_gamma", f.dselect_gamma, "DSelect-k: smooth-step width");
  cc.option("--dselect_reg", f.dselect_reg, "DSelect-k: entropy penalty weight");
  cc.option("--dwa_temperature", f.dwa_temperature, "DWA temperature");
  cc.option("--gls_floor", f.gls_floor, "GLS loss floor");
  cc.option("--cagrad_c", f.cagrad_c, "CAGrad convergence parameter");
  cc.option("--gradnorm_alpha", f.gradnorm_alpha, "GradNorm asymmetry");
  cc.option("--gradnorm_lr", f.gradnorm_lr, "GradNorm weight learning rate");
  cc.option("--gradvac_beta", f.gradvac_beta, "GradVac EMA rate");
  cc.option("--fraction", f.fraction, "train-split fraction in (0,1]");
  cc.option("--seed", f.seed, "run seed");
  cc.option("--out", f.out, "report stem; no files when empty");
  cc.option("--format", f.format, "report format: csv or json");
}

void add_topology_options(ConfigCmd& cc, TrainFlags& f) {
  cc.option("--rounds", f.rounds, "federation rounds");
  cc.option("--warmup_epochs", f.warmup_epochs, "pre-federation local epochs");
  cc.option("--tsk_epochs", f.tsk_epochs, "FedAlt task-phase epochs per round");
  cc.option("--sh_epochs", f.sh_epochs, "FedAlt shared-phase epochs per round");
  cc.option("--round_epochs", f.round_epochs, "FedSim/FedVanilla epochs per round");
  cc.option("--nodes", f.nodes, "participating node indices, comma list");
  cc.flag("--size_weighted", f.size_weighted, "weight aggregation by train size");
}

TopologyConfig make_topology(const std::string& mode, const TrainFlags& f) {
  TopologyConfig t;
  switch (topology_mode_from_name(mode)) {
    case TopologyMode::Local: t = local_topology(); break;
    case TopologyMode::Global: t = global_topology(); break;
    case TopologyMode::FedVanilla: t = fed_vanilla_topology(); break;
    case TopologyMode::FedAlt: t = fed_alt_topology(); break;
    case TopologyMode::FedSim: t = fed_sim_topology(); break;
  }
  if (f.rounds >= 0) t.rounds = f.rounds;
  if (f.warmup_epochs >= 0) t.warmup_epochs = f.warmup_epochs;
  if (f.tsk_epochs >= 0) t.tsk_epochs = f.tsk_epochs;
  if (f.sh_epochs >= 0) t.sh_epochs = f.sh_epochs;
  if (f.round_epochs >= 0) t.round_epochs = f.round_epochs;
  t.size_weighted = f.size_weighted;
  if (!f.nodes.empty())
    for (const std::string& tok : split_list(f.nodes)) t.nodes.push_back(std::stoi(tok));
  return t;
}

ExperimentConfig make_experiment(const TrainFlags& f, const Dataset& ds,
                                 const std::string& mode) {
  ExperimentConfig cfg;
  cfg.scenario = ds.config;
  cfg.arch.kind = arch_from_name(f.arch);
  cfg.arch.input_dim = ds.nodes.at(0).d_in;
  cfg.arch.width = f.width;
  cfg.arch.experts = f.experts;
  cfg.arch.task_experts = f.task_experts;
  cfg.arch.dselect_k = f.dselect_k;
  cfg.arch.dselect_gamma = f.dselect_gamma;
  cfg.arch.dselect_reg = f.dselect_reg;
  cfg.arch.tasks = parse_task_list(f.tasks);
  cfg.train.epochs = f.epochs;
  cfg.train.batch = f.batch;
  cfg.train.opt.lr = f.lr;
  cfg.train.weighting.kind = weighting_from_name(f.weighting);
  cfg.train.weighting.dwa_temperature = f.dwa_temperature;
  cfg.train.weighting.gls_floor = f.gls_floor;
  cfg.train.weighting.cagrad_c = f.cagrad_c;
  cfg.train.weighting.gradnorm_alpha = f.gradnorm_alpha;
  cfg.train.weighting.gradnorm_lr = f.gradnorm_lr;
  cfg.train.weighting.gradvac_beta = f.gradvac_beta;
  cfg.topology = make_topology(mode, f);
  cfg.train_fraction = f.fraction;
  cfg.seed = f.seed;
  return cfg;
}

void emit_if_requested(const MetricsReport& report, const TrainFlags& f) {
  if (f.out.empty()) return;
  for (const std::string& path : emit_report(report, parse_format(f.format), f.out))
    std::printf("wrote %s\n", path.c_str());
}

void print_outcome(const RunOutcome& out, const MetricsReport& report) {
  const RunInfo& info = report.runs.at(static_cast<std::size_t>(out.run_index));
  std::printf("%s: arch=%s weighting=%s topology=%s epochs=%d params=%zu bytes=%zu wall=%.2fs\n",
              info.label.c_str(), info.arch.c_str(), info.weighting.c_str(),
              info.topology.c_str(), info.epochs, info.param_count, info.comm_bytes,
              info.wall_clock_s);
  for (std::size_t p = 0; p < out.nodes.size(); ++p) {
    std::printf("  node %d: val_loss %.6f", out.nodes[p],
                out.topo.final_val[p].total_loss);
    for (const auto& [t, m] : out.topo.final_test[p].tasks) {
      const char* unit = t == Task::SC ? "dB" : t == Task::PS ? "m" : "acc";
      std::printf("  %s %.4f %s", task_name(t), m.report, unit);
    }
    if (!out.node_omega.empty()) std::printf("  omega %.4f", out.node_omega[p]);
    std::printf("\n");
  }
  if (!out.node_omega.empty()) std::printf("  mean omega %.4f\n", out.omega_mean);
}

void print_sweep(const SweepTable& table) {
  std::printf("%-10s %-9s %9s %9s %9s %9s %9s %9s %8s\n", "arch", "weighting", "q25", "median",
              "q75", "mean", "min", "max", "wall_s");
  for (const SweepCell& c : table.cells)
    std::printf("%-10s %-9s %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f %8.1f\n", arch_name(c.arch),
                weighting_name(c.weighting), c.q25, c.median, c.q75, c.mean, c.lo, c.hi,
                c.wall_clock_s);
}

void print_summary(const MetricsReport& report) {
  std::printf("%-28s %-10s %-5s %-9s %12s %12s %8s\n", "label", "topology", "task", "metric",
              "value", "stl_local", "impr_%");
  for (const SummaryEntry& s : summarize(report)) {
    const RunInfo& run = report.runs.at(static_cast<std::size_t>(s.run));
    std::printf("%-28s %-10s %-5s %-9s %12.6f", run.label.c_str(), run.topology.c_str(),
                s.task.c_str(), s.metric.c_str(), s.value);
    if (s.has_baseline)
      std::printf(" %12.6f %+8.2f\n", s.stl_local, s.improvement_pct);
    else
      std::printf(" %12s %8s\n", "-", "-");
  }
}

int run_cli(int argc, char** argv) {
  CLI::App app{"multi-task learning benchmark for radio-access-network prediction tasks"};
  app.require_subcommand(0, 1);

  // generate: scenario overrides layered preset < config file < flags
  ConfigCmd gen(app.add_subcommand("generate", "generate a synthetic dataset"));
  std::string gen_preset = "desk", gen_out;
  ScenarioConfig gen_over;
  gen.option("--preset", gen_preset, "desk (default) or paper scale");
  gen.required_option("--out", gen_out, "output directory (or single .json file)");
  const std::vector<std::pair<const char*, int ScenarioConfig::*>> gen_ints = {
      {"--cities", &ScenarioConfig::cities},
      {"--bs_per_city", &ScenarioConfig::bs_per_city},
      {"--sectors_per_bs", &ScenarioConfig::sectors_per_bs},
      {"--buildings_per_city", &ScenarioConfig::buildings_per_city},
      {"--snapshots", &ScenarioConfig::snapshots},
      {"--ues_per_snapshot", &ScenarioConfig::ues_per_snapshot},
      {"--min_node_samples", &ScenarioConfig::min_node_samples}};
  const std::vector<std::pair<const char*, double ScenarioConfig::*>> gen_doubles = {
      {"--extent_m", &ScenarioConfig::extent_m},
      {"--building_side_min_m", &ScenarioConfig::building_side_min_m},
      {"--building_side_max_m", &ScenarioConfig::building_side_max_m},
      {"--building_height_min_m", &ScenarioConfig::building_height_min_m},
      {"--building_height_max_m", &ScenarioConfig::building_height_max_m},
      {"--bs_ring_radius_m", &ScenarioConfig::bs_ring_radius_m},
      {"--bs_height_m", &ScenarioConfig::bs_height_m},
      {"--ue_height_m", &ScenarioConfig::ue_height_m},
      {"--primary_freq_hz", &ScenarioConfig::primary_freq_hz},
      {"--secondary_freq_hz", &ScenarioConfig::secondary_freq_hz},
      {"--eirp_dbm", &ScenarioConfig::eirp_dbm},
      {"--sector_depth_db", &ScenarioConfig::sector_depth_db},
      {"--sector_floor_db", &ScenarioConfig::sector_floor_db},
      {"--wall_loss_db", &ScenarioConfig::wall_loss_db},
      {"--nlos_extra_db", &ScenarioConfig::nlos_extra_db},
      {"--shadow_sigma_db", &ScenarioConfig::shadow_sigma_db},
      {"--pathloss_exp_los", &ScenarioConfig::pathloss_exp_los},
      {"--pathloss_exp_nlos", &ScenarioConfig::pathloss_exp_nlos},
      {"--split_train", &ScenarioConfig::split_train},
      {"--split_val", &ScenarioConfig::split_val},
      {"--ps_scale_m", &ScenarioConfig::ps_scale_m}};
  for (const auto& [name, mp] : gen_ints) gen.option(name, gen_over.*mp);
  for (const auto& [name, mp] : gen_doubles) gen.option(name, gen_over.*mp);
  gen.option("--seed", gen_over.seed, "generation seed");
  gen.cmd->callback([&] {
    const std::map<std::string, std::string> kv = gen.file_values();
    if (!gen.on_command_line("preset") && kv.count("preset")) gen_preset = kv.at("preset");
    ScenarioConfig cfg;
    if (gen_preset == "desk")
      cfg = desk_preset();
    else if (gen_preset == "paper")
      cfg = paper_preset();
    else
      throw std::invalid_argument("unknown preset: " + gen_preset);
    auto layer = [&](const char* name, auto& dst, const auto& flag_val) {
      const std::string key = name + 2;
      if (gen.on_command_line(key))
        dst = flag_val;
      else if (kv.count(key))
        assign_from_string(dst, kv.at(key));
    };
    for (const auto& [name, mp] : gen_ints) layer(name, cfg.*mp, gen_over.*mp);
    for (const auto& [name, mp] : gen_doubles) layer(name, cfg.*mp, gen_over.*mp);
    layer("--seed", cfg.seed, gen_over.seed);
    const Dataset ds = generate_dataset(cfg);
    save_any(ds, gen_out);
    std::size_t total = 0;
    for (const NodeDataset& n : ds.nodes) total += n.train.n + n.val.n + n.test.n;
    std::printf("generated %zu nodes, %zu samples -> %s\n", ds.nodes.size(), total,
                gen_out.c_str());
  });

  // train: one configuration
  ConfigCmd train(app.add_subcommand("train", "train one configuration"));
  TrainFlags tf;
  std::string train_label;
  bool train_trace = false;
  add_model_options(train, tf);
  train.option("--arch", tf.arch, "STL, HPS, MMoE, DSelectK, or CGC");
  train.option("--weighting", tf.weighting, "loss/gradient weighting");
  train.option("--topology", tf.topology, "local, global, fed_vanilla, fed_alt, or fed_sim");
  add_topology_options(train, tf);
  train.option("--label", train_label, "run label in the report");
  train.flag("--trace", train_trace, "record every epoch's validation loss");
  train.cmd->callback([&] {
    train.apply_config();
    const Dataset ds = load_dataset_any(tf.data);
    const ExperimentConfig cfg = make_experiment(tf, ds, tf.topology);
    const std::string label =
        train_label.empty() ? tf.arch + "/" + tf.weighting + "/" + tf.topology : train_label;
    MetricsReport report;
    const RunOutcome out = run_single(ds, cfg, label, report, train_trace);
    print_outcome(out, report);
    emit_if_requested(report, tf);
  });

  // sweep: architectures x weightings
  ConfigCmd sweep(app.add_subcommand("sweep", "architecture x weighting design-space sweep"));
  TrainFlags sf;
  std::string sweep_archs = "all", sweep_weightings = "all";
  int sweep_repeats = 3, sweep_workers = 1;
  add_model_options(sweep, sf);
  sweep.option("--archs", sweep_archs, "comma list or 'all' (the four MTL architectures)");
  sweep.option("--weightings", sweep_weightings, "comma list or 'all' (all eleven)");
  sweep.option("--repeats", sweep_repeats, "repeats per cell");
  sweep.option("--workers", sweep_workers, "concurrent cells");
  sweep.cmd->callback([&] {
    sweep.apply_config();
    const Dataset ds = load_dataset_any(sf.data);
    const ExperimentConfig base = make_experiment(sf, ds, "local");
    MetricsReport report;
    const SweepTable table =
        sweep_design_space(ds, parse_arch_list(sweep_archs), parse_weighting_list(sweep_weightings),
                           sweep_repeats, base, report, sweep_workers);
    print_sweep(table);
    emit_if_requested(report, sf);
  });

  // topology: STL-local baselines plus one MTL run per mode
  ConfigCmd topo(app.add_subcommand("topology", "compare training topologies against STL-local"));
  TrainFlags pf;
  pf.arch = "CGC";
  std::string topo_modes = "local,global,fed_vanilla,fed_alt,fed_sim";
  add_model_options(topo, pf);
  topo.option("--arch", pf.arch, "MTL architecture for the comparison runs");
  topo.option("--weighting", pf.weighting, "loss/gradient weighting");
  topo.option("--modes", topo_modes, "topology modes to run, comma list");
  add_topology_options(topo, pf);
  topo.cmd->callback([&] {
    topo.apply_config();
    const Dataset ds = load_dataset_any(pf.data);
    MetricsReport report;
    for (Task t : parse_task_list(pf.tasks)) {
      TrainFlags bf = pf;
      bf.arch = "STL";
      bf.tasks = task_name(t);
      const ExperimentConfig cfg = make_experiment(bf, ds, "local");
      run_single(ds, cfg, std::string("stl/") + task_name(t), report);
    }
    for (const std::string& mode : split_list(topo_modes)) {
      const ExperimentConfig cfg = make_experiment(pf, ds, mode);
      const RunOutcome out = run_single(ds, cfg, pf.arch + "/" + mode, report);
      std::printf("%-12s bytes=%zu omega=%.4f\n", mode.c_str(), out.topo.total_bytes,
                  out.omega_mean);
    }
    print_summary(report);
    emit_if_requested(report, pf);
  });

  // grouping: task-subset study
  ConfigCmd grp(app.add_subcommand("grouping", "task grouping study over subsets"));
  TrainFlags gf;
  gf.arch = "CGC";
  gf.weighting = "UW";
  std::string grp_subsets = "all";
  add_model_options(grp, gf);
  grp.option("--arch", gf.arch, "architecture for multi-task subsets (singletons use STL)");
  grp.option("--weighting", gf.weighting, "loss/gradient weighting");
  grp.option("--subsets", grp_subsets, "'all' or semicolon-separated task lists, e.g. 'SC;SC,PS'");
  grp.cmd->callback([&] {
    grp.apply_config();
    const Dataset ds = load_dataset_any(gf.data);
    const ExperimentConfig base = make_experiment(gf, ds, "local");
    MetricsReport report;
    const std::vector<GroupingRow> rows =
        grouping_sweep(ds, parse_subsets(grp_subsets), base, report);
    std::printf("%-16s %-5s %10s %10s %10s %12s\n", "subset", "task", "loss", "mae", "acc",
                "report");
    for (const GroupingRow& row : rows) {
      std::string subset;
      for (std::size_t i = 0; i < row.subset.size(); ++i)
        subset += std::string(i ? "+" : "") + task_name(row.subset[i]);
      std::printf("%-16s %-5s %10.5f %10.5f %10.5f %12.5f\n", subset.c_str(),
                  task_name(row.task), row.loss, row.mae, row.accuracy, row.report_units);
    }
    emit_if_requested(report, gf);
  });

  // sparse: subsample a dataset's train splits
  ConfigCmd sp(app.add_subcommand("sparse", "subsample each node's train split"));
  std::string sp_data, sp_out;
  double sp_fraction = 0.0;
  std::uint64_t sp_seed = 1;
  sp.required_option("--data", sp_data, "dataset file or directory");
  sp.required_option("--fraction", sp_fraction, "train fraction in (0,1]");
  sp.option("--seed", sp_seed, "subsample seed");
  sp.required_option("--out", sp_out, "output directory (or single .json file)");
  sp.cmd->callback([&] {
    sp.apply_config();
    const Dataset ds = load_dataset_any(sp_data);
    const Dataset sub = sparsify(ds, sp_fraction, sp_seed);
    save_any(sub, sp_out);
    for (std::size_t i = 0; i < ds.nodes.size(); ++i)
      std::printf("node %zu: train %zu -> %zu\n", i, ds.nodes[i].train.n, sub.nodes[i].train.n);
  });

  // report: inspect or convert an emitted report
  ConfigCmd rep(app.add_subcommand("report", "print or convert an emitted report"));
  std::string rep_stem, rep_format = "csv", rep_to, rep_out;
  rep.required_option("--stem", rep_stem, "report stem to read");
  rep.option("--format", rep_format, "stored format: csv or json");
  rep.option("--to", rep_to, "convert to this format");
  rep.option("--out", rep_out, "stem for the converted report");
  rep.cmd->callback([&] {
    rep.apply_config();
    const MetricsReport report = parse_report(parse_format(rep_format), rep_stem);
    std::printf("%s\n%zu runs, %zu rows\n", report.note.c_str(), report.runs.size(),
                report.rows.size());
    print_summary(report);
    if (!rep_to.empty()) {
      if (rep_out.empty()) throw std::invalid_argument("--to needs --out");
      for (const std::string& path : emit_report(report, parse_format(rep_to), rep_out))
        std::printf("wrote %s\n", path.c_str());
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (app.get_subcommands().empty()) std::cout << app.help();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
