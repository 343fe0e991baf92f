#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ranmtl/trainer.hpp"

namespace ranmtl {

// Distributed-training orchestration over the base-station nodes.
//   Local      every node trains alone; nothing moves.
//   Global     all raw data ships to one site; one model, per-node reports.
//   FedVanilla full-parameter averaging every round, federation from round 0.
//   FedAlt     partial federation, alternating phases: task heads first with
//              the shared trunk frozen, then the trunk with heads frozen;
//              only shared parameters are uploaded.
//   FedSim     partial federation, joint local updates; shared-only upload.
enum class TopologyMode { Local, Global, FedVanilla, FedAlt, FedSim };

const char* topology_mode_name(TopologyMode m);
TopologyMode topology_mode_from_name(const std::string& s);

struct TopologyConfig {
  TopologyMode mode = TopologyMode::Local;
  std::vector<int> nodes;  // participating dataset node indices; empty = all
  int rounds = 1;          // K, federated modes only
  int warmup_epochs = 0;   // pre-federation local epochs
  int tsk_epochs = 17;     // FedAlt: task-only epochs per round
  int sh_epochs = 1;       // FedAlt: shared-only epochs per round
  int round_epochs = 10;   // FedSim / FedVanilla: joint epochs per round
  int total_epochs = 100;  // Local / Global budget
  bool size_weighted = false;      // weight aggregation by train-split size
  bool share_task_instead = false; // degraded: ship task heads, keep experts home
};

// Schedules matching the reference hyperparameters; every mode totals 100
// local epochs so validation curves and byte ledgers are comparable.
TopologyConfig local_topology();
TopologyConfig global_topology();
TopologyConfig fed_vanilla_topology();  // K=10 rounds x 10 epochs, no warmup
TopologyConfig fed_alt_topology();      // warmup 10, tsk 17, sh 1, K=5
TopologyConfig fed_sim_topology();      // warmup 10, sim 10, K=9

using NamedTensorList = std::vector<std::pair<std::string, Tensor>>;

// One parameter transfer. Accounting uses the actual wire encoding, and the
// receiving side decodes from bytes, so counted traffic is what moved.
struct ServerMessage {
  int round = 0;
  int sender = -1;  // node index; -1 = server broadcast
  NamedTensorList entries;
};

std::vector<std::uint8_t> encode_message(const ServerMessage& msg);
ServerMessage decode_message(const std::vector<std::uint8_t>& bytes);

// Parameter-name group tags: "task:<NAME>/..." vs "shared/...".
bool is_task_parameter(const std::string& name);
bool contains_task_tensors(const NamedTensorList& entries);

// Per-tensor weighted mean across uploads. Empty weights = uniform 1/N; a
// single upload passes through unchanged. Throws on name/shape mismatch.
NamedTensorList aggregate_shared(const std::vector<NamedTensorList>& uploads,
                                 const std::vector<double>& weights = {});

// One ledger row: what each node ran during a phase and what moved. Byte
// columns are nonzero only on "sync" (and "data" for global) rows.
struct RoundRecord {
  int round = 0;      // 0 = before federation
  std::string phase;  // warmup|tsk|sh|sim|full|local|global|sync|data
  int epochs = 0;     // local epochs per node during this phase
  std::size_t bytes_up = 0;
  std::size_t bytes_down = 0;
};

struct NodeRoundEval {
  int round = 0;
  int node = 0;  // dataset node index
  EvalResult val;
};

struct TopologyRun {
  TopologyConfig config;
  std::vector<RoundRecord> ledger;
  std::vector<NodeRoundEval> round_val;  // after warmup and after every round
  std::vector<EvalResult> final_val;     // participant order
  std::vector<EvalResult> final_test;
  std::size_t total_bytes = 0;
  std::size_t messages_checked = 0;  // payload-policy validations performed
};

// Owns the per-node trainers for one topology run so tests can inspect the
// trained parameters afterwards. Participant order is ascending node index;
// trainer seeds depend on the participant position only, never on the mode,
// which is what makes the degenerate single-node equivalences exact.
class TopologyRunner {
 public:
  TopologyRunner(const Dataset& data, const std::vector<Task>& tasks,
                 const ArchitectureConfig& arch, const TrainConfig& train,
                 const TopologyConfig& topo, std::uint64_t seed);

  TopologyRun run();

  static std::uint64_t node_seed(std::uint64_t run_seed, std::size_t participant);

  // Global mode has a single trainer over the pooled data; every other mode
  // has one per participant.
  std::size_t trainer_count() const { return trainers_.size(); }
  NodeTrainer& trainer(std::size_t i) { return *trainers_.at(i); }
  std::size_t participant_count() const { return participants_.size(); }
  int participant_node(std::size_t i) const { return participants_.at(i); }
  const PreparedData& participant_data(std::size_t i) const { return node_data_.at(i); }

 private:
  enum class Payload { Shared, Task, Full };

  void run_local();
  void run_global();
  void run_federated();
  void train_round_phases(int round);
  void sync_round(int round);
  NamedTensorList snapshot(const NodeTrainer& t, Payload kind) const;
  void apply_update(NodeTrainer& t, const NamedTensorList& mean) const;
  void check_payload_policy(const NamedTensorList& entries);
  void assert_consensus() const;
  void record_round_eval(int round);

  const Dataset* data_;
  std::vector<Task> tasks_;
  ArchitectureConfig arch_;
  TrainConfig train_;
  TopologyConfig topo_;
  std::uint64_t seed_;

  std::vector<int> participants_;
  std::vector<PreparedData> node_data_;  // participant order
  PreparedData merged_;                  // global mode only
  std::vector<std::unique_ptr<NodeTrainer>> trainers_;
  TopologyRun out_;
  bool ran_ = false;
};

TopologyRun run_topology(const Dataset& data, const std::vector<Task>& tasks,
                         const ArchitectureConfig& arch, const TrainConfig& train,
                         const TopologyConfig& topo, std::uint64_t seed);

}  // namespace ranmtl
