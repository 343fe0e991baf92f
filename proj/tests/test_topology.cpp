#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "ranmtl/topology.hpp"

using namespace ranmtl;

namespace {

const std::vector<Task> kAllTasks = {Task::SC, Task::PS, Task::IN, Task::LOS};

ScenarioConfig tiny_scenario() {
  ScenarioConfig cfg;
  cfg.seed = 404;
  cfg.cities = 1;
  cfg.bs_per_city = 3;
  cfg.snapshots = 30;
  cfg.ues_per_snapshot = 60;
  cfg.buildings_per_city = 12;
  return cfg;
}

ArchitectureConfig tiny_arch(Arch kind) {
  ArchitectureConfig a;
  a.kind = kind;
  a.width = 16;
  a.tasks = kAllTasks;
  return a;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.epochs = 2;
  t.batch = 32;
  return t;
}

const Dataset& shared_dataset() {
  static const Dataset d = generate_dataset(tiny_scenario());
  return d;
}

bool params_equal(const Model& a, const Model& b) {
  for (const auto& [name, t] : a.params.tensors)
    if (t.data != b.params.tensors.at(name).data) return false;
  return true;
}

double linf_params(const Model& a, const Model& b) {
  double m = 0.0;
  for (const auto& [name, t] : a.params.tensors) {
    const Tensor& o = b.params.tensors.at(name);
    REQUIRE(t.data.size() == o.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i)
      m = std::max(m, std::abs(t.data[i] - o.data[i]));
  }
  return m;
}

bool group_equal(const Model& a, const Model& b, const std::vector<std::string>& names) {
  for (const std::string& n : names)
    if (a.params.tensors.at(n).data != b.params.tensors.at(n).data) return false;
  return true;
}

std::vector<std::string> task_names(const Model& m) {
  std::vector<std::string> out;
  for (const auto& [task, names] : m.params.task_order)
    out.insert(out.end(), names.begin(), names.end());
  return out;
}

const RoundRecord& sync_record(const TopologyRun& run, int round) {
  for (const RoundRecord& r : run.ledger)
    if (r.round == round && r.phase == "sync") return r;
  REQUIRE(false);
  throw std::logic_error("no sync record");
}

}  // namespace

TEST_CASE("topology: mode names and pinned schedules") {
  for (TopologyMode m : {TopologyMode::Local, TopologyMode::Global, TopologyMode::FedVanilla,
                         TopologyMode::FedAlt, TopologyMode::FedSim})
    CHECK(topology_mode_from_name(topology_mode_name(m)) == m);
  CHECK_THROWS_AS(topology_mode_from_name("ring"), std::invalid_argument);

  const TopologyConfig alt = fed_alt_topology();
  CHECK(alt.warmup_epochs == 10);
  CHECK(alt.tsk_epochs == 17);
  CHECK(alt.sh_epochs == 1);
  CHECK(alt.rounds == 5);
  CHECK(alt.warmup_epochs + alt.rounds * (alt.tsk_epochs + alt.sh_epochs) == 100);

  const TopologyConfig sim = fed_sim_topology();
  CHECK(sim.warmup_epochs == 10);
  CHECK(sim.round_epochs == 10);
  CHECK(sim.rounds == 9);
  CHECK(sim.warmup_epochs + sim.rounds * sim.round_epochs == 100);

  const TopologyConfig van = fed_vanilla_topology();
  CHECK(van.warmup_epochs == 0);
  CHECK(van.rounds * van.round_epochs == 100);

  CHECK(local_topology().total_epochs == 100);
  CHECK(global_topology().total_epochs == 100);
}

TEST_CASE("topology: message wire round trip") {
  ServerMessage msg;
  msg.round = 7;
  msg.sender = -1;
  msg.entries.emplace_back("shared/experts.w", Tensor::matrix(2, 3, {1.5, -2.25, 0.0, 1e-300, -4.5, 3.75}));
  msg.entries.emplace_back("shared/experts.b", Tensor::row({-0.125, 7.0}));

  const std::vector<std::uint8_t> bytes = encode_message(msg);
  const ServerMessage back = decode_message(bytes);
  CHECK(back.round == 7);
  CHECK(back.sender == -1);
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[0].first == "shared/experts.w");
  CHECK(back.entries[0].second.shape == std::vector<std::size_t>{2, 3});
  CHECK(back.entries[0].second.data == msg.entries[0].second.data);
  CHECK(back.entries[1].second.data == msg.entries[1].second.data);

  // Same names and shapes give the same byte count regardless of values.
  ServerMessage other = msg;
  for (auto& [name, t] : other.entries) t.fill(9.0);
  CHECK(encode_message(other).size() == bytes.size());

  std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + bytes.size() / 2);
  CHECK_THROWS(decode_message(cut));

  CHECK(is_task_parameter("task:SC/head.w"));
  CHECK_FALSE(is_task_parameter("shared/trunk.w"));
  CHECK(contains_task_tensors({{"shared/a", Tensor::scalar(1)}, {"task:IN/b", Tensor::scalar(2)}}));
  CHECK_FALSE(contains_task_tensors({{"shared/a", Tensor::scalar(1)}}));
}

TEST_CASE("topology: aggregation arithmetic") {
  const NamedTensorList a = {{"shared/w", Tensor::matrix(1, 2, {2.0, -4.0})},
                             {"shared/b", Tensor::row({10.0})}};
  const NamedTensorList b = {{"shared/w", Tensor::matrix(1, 2, {4.0, 8.0})},
                             {"shared/b", Tensor::row({-2.0})}};

  SUBCASE("two uploads average elementwise") {
    const NamedTensorList mean = aggregate_shared({a, b});
    CHECK(mean[0].second.data == std::vector<double>{3.0, 2.0});
    CHECK(mean[1].second.data == std::vector<double>{4.0});
  }
  SUBCASE("identical uploads are a fixed point") {
    const NamedTensorList mean = aggregate_shared({a, a});
    CHECK(mean[0].second.data == a[0].second.data);
    CHECK(mean[1].second.data == a[1].second.data);
  }
  SUBCASE("single upload passes through") {
    const NamedTensorList mean = aggregate_shared({a});
    CHECK(mean[0].second.data == a[0].second.data);
    CHECK(mean[1].second.data == a[1].second.data);
  }
  SUBCASE("explicit weights") {
    const NamedTensorList mean = aggregate_shared({a, b}, {0.25, 0.75});
    CHECK(mean[0].second.data[0] == doctest::Approx(3.5).epsilon(1e-15));
    CHECK(mean[0].second.data[1] == doctest::Approx(5.0).epsilon(1e-15));
  }
  SUBCASE("rejects malformed input") {
    CHECK_THROWS_AS(aggregate_shared({}), std::invalid_argument);
    CHECK_THROWS_AS(aggregate_shared({a, b}, {1.0}), std::invalid_argument);
    NamedTensorList renamed = b;
    renamed[0].first = "shared/other";
    CHECK_THROWS_AS(aggregate_shared({a, renamed}), std::invalid_argument);
    NamedTensorList reshaped = b;
    reshaped[0].second = Tensor::row({1.0, 2.0, 3.0});
    CHECK_THROWS_AS(aggregate_shared({a, reshaped}), std::invalid_argument);
  }
}

TEST_CASE("topology: config validation") {
  const Dataset& ds = shared_dataset();
  const ArchitectureConfig arch = tiny_arch(Arch::HPS);
  const TrainConfig tc = tiny_train();

  TopologyConfig bad = fed_sim_topology();
  bad.rounds = 0;
  CHECK_THROWS_AS(TopologyRunner(ds, kAllTasks, arch, tc, bad, 1), std::invalid_argument);

  bad = fed_alt_topology();
  bad.tsk_epochs = 0;
  CHECK_THROWS_AS(TopologyRunner(ds, kAllTasks, arch, tc, bad, 1), std::invalid_argument);

  bad = fed_vanilla_topology();
  bad.share_task_instead = true;
  CHECK_THROWS_AS(TopologyRunner(ds, kAllTasks, arch, tc, bad, 1), std::invalid_argument);

  bad = local_topology();
  bad.nodes = {0, 0};
  CHECK_THROWS_AS(TopologyRunner(ds, kAllTasks, arch, tc, bad, 1), std::invalid_argument);
  bad.nodes = {99};
  CHECK_THROWS_AS(TopologyRunner(ds, kAllTasks, arch, tc, bad, 1), std::invalid_argument);

  TopologyRunner once(ds, kAllTasks, arch, tc, local_topology(), 1);
  // Cheap run: zero epochs still trains nothing but walks the full path.
  TopologyConfig zero = local_topology();
  zero.total_epochs = 0;
  TopologyRunner z(ds, kAllTasks, arch, tc, zero, 1);
  z.run();
  CHECK_THROWS_AS(z.run(), std::logic_error);
}

TEST_CASE("topology: local mode trains independently and moves no bytes") {
  const Dataset& ds = shared_dataset();
  TopologyConfig topo = local_topology();
  topo.total_epochs = 1;
  TopologyRunner runner(ds, kAllTasks, tiny_arch(Arch::HPS), tiny_train(), topo, 11);
  const TopologyRun run = runner.run();

  CHECK(run.total_bytes == 0);
  CHECK(run.messages_checked == 0);
  REQUIRE(run.ledger.size() == 1);
  CHECK(run.ledger[0].phase == "local");
  CHECK(run.ledger[0].epochs == 1);
  CHECK(run.final_val.size() == 3);
  CHECK(run.final_test.size() == 3);
  CHECK(run.round_val.size() == 3);

  // Same seed, different data: the nodes diverge.
  CHECK_FALSE(params_equal(runner.trainer(0).model(), runner.trainer(1).model()));
  for (const EvalResult& ev : run.final_val) {
    CHECK(ev.tasks.size() == 4);
    CHECK(std::isfinite(ev.total_loss));
  }

  // Zero epochs leave every node at its initialization.
  TopologyConfig zero = local_topology();
  zero.total_epochs = 0;
  TopologyRunner frozen(ds, kAllTasks, tiny_arch(Arch::HPS), tiny_train(), zero, 11);
  frozen.run();
  const PreparedData fresh = prepare_node(ds.nodes[0], ds.config, kAllTasks);
  NodeTrainer untouched(tiny_arch(Arch::HPS), &fresh, tiny_train(),
                        TopologyRunner::node_seed(11, 0));
  CHECK(params_equal(frozen.trainer(0).model(), untouched.model()));
}

TEST_CASE("topology: participant order is canonical") {
  const Dataset& ds = shared_dataset();
  TopologyConfig a = local_topology();
  a.total_epochs = 1;
  a.nodes = {2, 0};
  TopologyConfig b = a;
  b.nodes = {0, 2};

  TopologyRunner ra(ds, kAllTasks, tiny_arch(Arch::HPS), tiny_train(), a, 5);
  TopologyRunner rb(ds, kAllTasks, tiny_arch(Arch::HPS), tiny_train(), b, 5);
  const TopologyRun runa = ra.run();
  const TopologyRun runb = rb.run();

  CHECK(ra.participant_node(0) == 0);
  CHECK(ra.participant_node(1) == 2);
  CHECK(params_equal(ra.trainer(0).model(), rb.trainer(0).model()));
  CHECK(params_equal(ra.trainer(1).model(), rb.trainer(1).model()));
  CHECK(runa.final_val[0].total_loss == runb.final_val[0].total_loss);
}

TEST_CASE("topology: global mode pools data and reports per node") {
  const Dataset& ds = shared_dataset();
  TopologyConfig topo = global_topology();
  topo.total_epochs = 1;
  TopologyRunner runner(ds, kAllTasks, tiny_arch(Arch::HPS), tiny_train(), topo, 7);
  const TopologyRun run = runner.run();

  CHECK(runner.trainer_count() == 1);
  CHECK(runner.participant_count() == 3);
  CHECK(run.final_val.size() == 3);

  // The pooled train split concatenates the per-node splits.
  std::size_t total = 0;
  for (std::size_t i = 0; i < 3; ++i) total += runner.participant_data(i).train.n;
  CHECK(runner.trainer(0).data().train.n == total);

  // One-time dataset transfer, no per-round traffic.
  REQUIRE(run.ledger.size() == 2);
  CHECK(run.ledger[0].phase == "data");
  CHECK(run.ledger[0].bytes_up > 0);
  CHECK(run.ledger[0].bytes_down == 0);
  CHECK(run.ledger[1].phase == "global");
  CHECK(run.total_bytes == run.ledger[0].bytes_up);

  // Degenerate single-node pool equals plain local training bit for bit.
  TopologyConfig solo_g = global_topology();
  solo_g.total_epochs = 2;
  solo_g.nodes = {1};
  TopologyConfig solo_l = local_topology();
  solo_l.total_epochs = 2;
  solo_l.nodes = {1};
  TopologyRunner rg(ds, kAllTasks, tiny_arch(Arch::HPS), tiny_train(), solo_g, 7);
  TopologyRunner rl(ds, kAllTasks, tiny_arch(Arch::HPS), tiny_train(), solo_l, 7);
  rg.run();
  rl.run();
  CHECK(params_equal(rg.trainer(0).model(), rl.trainer(0).model()));
}

TEST_CASE("topology: federated schedules run the pinned phase ledger") {
  const Dataset& ds = shared_dataset();
  TopologyConfig topo = fed_alt_topology();
  topo.warmup_epochs = 2;
  topo.tsk_epochs = 3;
  topo.sh_epochs = 1;
  topo.rounds = 2;
  TopologyRunner runner(ds, kAllTasks, tiny_arch(Arch::HPS), tiny_train(), topo, 3);
  const TopologyRun run = runner.run();

  REQUIRE(run.ledger.size() == 1 + 2 * 3);  // warmup + (tsk, sh, sync) per round
  CHECK(run.ledger[0].phase == "warmup");
  CHECK(run.ledger[0].epochs == 2);
  for (int r = 1; r <= 2; ++r) {
    CHECK(run.ledger[1 + (r - 1) * 3].phase == "tsk");
    CHECK(run.ledger[1 + (r - 1) * 3].epochs == 3);
    CHECK(run.ledger[2 + (r - 1) * 3].phase == "sh");
    CHECK(run.ledger[2 + (r - 1) * 3].epochs == 1);
    CHECK(run.ledger[3 + (r - 1) * 3].phase == "sync");
  }
  for (std::size_t i = 0; i < runner.trainer_count(); ++i)
    CHECK(runner.trainer(i).epochs_run() == 2 + 2 * (3 + 1));

  // Per-round per-node validation series: warmup row plus one per round.
  CHECK(run.round_val.size() == 3 * (1 + 2));
  CHECK(run.messages_checked == 2 * (3 + 1));  // three uplinks and a broadcast per round
}

TEST_CASE("topology: partial federation reaches consensus on shared parameters only") {
  const Dataset& ds = shared_dataset();
  TopologyConfig topo = fed_sim_topology();
  topo.warmup_epochs = 1;
  topo.round_epochs = 1;
  topo.rounds = 2;
  TopologyRunner runner(ds, kAllTasks, tiny_arch(Arch::CGC), tiny_train(), topo, 13);
  runner.run();

  const Model& m0 = runner.trainer(0).model();
  for (std::size_t i = 1; i < runner.trainer_count(); ++i) {
    CHECK(group_equal(m0, runner.trainer(i).model(), m0.params.shared_order));
    CHECK_FALSE(group_equal(m0, runner.trainer(i).model(), task_names(m0)));
  }
}

TEST_CASE("topology: aggregation leaves task parameters bitwise untouched") {
  const Dataset& ds = shared_dataset();
  TopologyConfig topo = fed_sim_topology();
  topo.warmup_epochs = 1;
  topo.round_epochs = 1;
  topo.rounds = 1;
  TopologyRunner fed(ds, kAllTasks, tiny_arch(Arch::CGC), tiny_train(), topo, 21);
  fed.run();

  // Reference: the same two epochs locally, no sync. Task parameters only
  // ever move through local updates, so they must match bit for bit; the
  // shared trunk was averaged across nodes and must not.
  for (std::size_t i = 0; i < fed.trainer_count(); ++i) {
    const PreparedData fresh = prepare_node(ds.nodes[i], ds.config, kAllTasks);
    NodeTrainer ref(tiny_arch(Arch::CGC), &fresh, tiny_train(), TopologyRunner::node_seed(21, i));
    ref.train_epochs(2);
    CHECK(group_equal(fed.trainer(i).model(), ref.model(), task_names(ref.model())));
    CHECK_FALSE(group_equal(fed.trainer(i).model(), ref.model(), ref.model().params.shared_order));
  }
}

TEST_CASE("topology: degraded task-sharing flag inverts the payload") {
  const Dataset& ds = shared_dataset();
  TopologyConfig topo = fed_sim_topology();
  topo.warmup_epochs = 1;
  topo.round_epochs = 1;
  topo.rounds = 1;
  topo.share_task_instead = true;
  TopologyRunner runner(ds, kAllTasks, tiny_arch(Arch::CGC), tiny_train(), topo, 31);
  const TopologyRun run = runner.run();
  CHECK(run.messages_checked == 3 + 1);

  // Now the heads agree across nodes and the shared experts stay local.
  const Model& m0 = runner.trainer(0).model();
  for (std::size_t i = 1; i < runner.trainer_count(); ++i) {
    CHECK(group_equal(m0, runner.trainer(i).model(), task_names(m0)));
    CHECK_FALSE(group_equal(m0, runner.trainer(i).model(), m0.params.shared_order));
  }
}

TEST_CASE("topology: single-node federation reproduces local training") {
  const Dataset& ds = shared_dataset();
  const ArchitectureConfig arch = tiny_arch(Arch::MMoE);
  const TrainConfig tc = tiny_train();

  TopologyConfig local_ref = local_topology();
  local_ref.total_epochs = 8;
  local_ref.nodes = {0};
  TopologyRunner rl(ds, kAllTasks, arch, tc, local_ref, 42);
  rl.run();

  SUBCASE("FedSim") {
    TopologyConfig topo = fed_sim_topology();
    topo.nodes = {0};
    topo.warmup_epochs = 2;
    topo.round_epochs = 3;
    topo.rounds = 2;
    TopologyRunner rf(ds, kAllTasks, arch, tc, topo, 42);
    rf.run();
    CHECK(linf_params(rf.trainer(0).model(), rl.trainer(0).model()) == 0.0);
  }
  SUBCASE("FedVanilla") {
    TopologyConfig topo = fed_vanilla_topology();
    topo.nodes = {0};
    topo.round_epochs = 4;
    topo.rounds = 2;
    TopologyRunner rf(ds, kAllTasks, arch, tc, topo, 42);
    rf.run();
    CHECK(linf_params(rf.trainer(0).model(), rl.trainer(0).model()) == 0.0);
  }
  SUBCASE("FedAlt matches the same alternating schedule run without a server") {
    TopologyConfig topo = fed_alt_topology();
    topo.nodes = {0};
    topo.warmup_epochs = 2;
    topo.tsk_epochs = 3;
    topo.sh_epochs = 1;
    topo.rounds = 2;
    TopologyRunner rf(ds, kAllTasks, arch, tc, topo, 42);
    rf.run();

    const PreparedData fresh = prepare_node(ds.nodes[0], ds.config, kAllTasks);
    NodeTrainer ref(arch, &fresh, tc, TopologyRunner::node_seed(42, 0));
    ref.train_epochs(2);
    for (int r = 0; r < 2; ++r) {
      ref.train_epochs(3, {false, true});
      ref.train_epochs(1, {true, false});
    }
    CHECK(linf_params(rf.trainer(0).model(), ref.model()) == 0.0);
  }
}

TEST_CASE("topology: per-round bytes order full > partial > nothing") {
  const Dataset& ds = shared_dataset();
  const ArchitectureConfig arch = tiny_arch(Arch::CGC);
  const TrainConfig tc = tiny_train();

  TopologyConfig alt = fed_alt_topology();
  alt.warmup_epochs = 1;
  alt.tsk_epochs = 1;
  alt.sh_epochs = 1;
  alt.rounds = 1;
  TopologyConfig sim = fed_sim_topology();
  sim.warmup_epochs = 1;
  sim.round_epochs = 1;
  sim.rounds = 1;
  TopologyConfig van = fed_vanilla_topology();
  van.round_epochs = 1;
  van.rounds = 1;

  TopologyRunner ra(ds, kAllTasks, arch, tc, alt, 2);
  TopologyRunner rs(ds, kAllTasks, arch, tc, sim, 2);
  TopologyRunner rv(ds, kAllTasks, arch, tc, van, 2);
  const TopologyRun runa = ra.run();
  const TopologyRun runs = rs.run();
  const TopologyRun runv = rv.run();

  const RoundRecord& sa = sync_record(runa, 1);
  const RoundRecord& ss = sync_record(runs, 1);
  const RoundRecord& sv = sync_record(runv, 1);

  CHECK(sa.bytes_up > 0);
  CHECK(sa.bytes_up == ss.bytes_up);
  CHECK(sa.bytes_down == ss.bytes_down);
  CHECK(sv.bytes_up > ss.bytes_up);
  CHECK(sv.bytes_down > ss.bytes_down);

  // Cross-check one uplink against the wire encoding of the shared set.
  ServerMessage probe;
  probe.round = 1;
  probe.sender = ra.participant_node(0);
  const ParameterSet& p = ra.trainer(0).model().params;
  for (const std::string& n : p.shared_order) probe.entries.emplace_back(n, p.tensors.at(n));
  CHECK(sa.bytes_up == 3 * encode_message(probe).size());
}

TEST_CASE("topology: vanilla federation averages everything from round zero") {
  const Dataset& ds = shared_dataset();
  TopologyConfig topo = fed_vanilla_topology();
  topo.round_epochs = 1;
  topo.rounds = 2;
  TopologyRunner runner(ds, kAllTasks, tiny_arch(Arch::HPS), tiny_train(), topo, 19);
  const TopologyRun run = runner.run();

  // No warmup row; consensus covers task parameters too.
  CHECK(run.ledger[0].phase == "full");
  CHECK(run.ledger[0].round == 1);
  const Model& m0 = runner.trainer(0).model();
  for (std::size_t i = 1; i < runner.trainer_count(); ++i) {
    CHECK(group_equal(m0, runner.trainer(i).model(), m0.params.shared_order));
    CHECK(group_equal(m0, runner.trainer(i).model(), task_names(m0)));
  }
  CHECK(run.messages_checked == 0);  // the payload policy applies to partial modes
}
