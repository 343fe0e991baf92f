#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ranmtl/metrics.hpp"
#include "ranmtl/trainer.hpp"

using namespace ranmtl;

namespace {

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

ArchitectureConfig tiny_arch(Arch kind, std::vector<Task> tasks) {
  ArchitectureConfig a;
  a.kind = kind;
  a.width = 16;
  a.tasks = std::move(tasks);
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

const PreparedData& shared_prepared() {
  static const PreparedData p =
      prepare_node(shared_dataset().nodes[0], shared_dataset().config,
                   {Task::SC, Task::PS, Task::IN, Task::LOS});
  return p;
}

bool params_equal(const Model& a, const Model& b) {
  for (const auto& [name, t] : a.params.tensors)
    if (t.data != b.params.tensors.at(name).data) return false;
  return true;
}

}  // namespace

TEST_CASE("omega arithmetic and monotonicity") {
  EvalResult r;
  r.tasks[Task::SC].mae = 3.0;
  r.tasks[Task::PS].mae = 2.0;
  r.tasks[Task::IN].accuracy = 0.9;
  r.tasks[Task::LOS].accuracy = 0.8;
  CHECK(omega(r) == doctest::Approx(-3.3).epsilon(1e-12));

  EvalResult perfect;
  perfect.tasks[Task::SC].mae = 0.0;
  perfect.tasks[Task::PS].mae = 0.0;
  perfect.tasks[Task::IN].accuracy = 1.0;
  perfect.tasks[Task::LOS].accuracy = 1.0;
  CHECK(omega(perfect) == doctest::Approx(2.0));

  EvalResult worse = r;
  worse.tasks[Task::SC].mae += 0.5;
  CHECK(omega(worse) < omega(r));
  worse = r;
  worse.tasks[Task::IN].accuracy -= 0.1;
  CHECK(omega(worse) < omega(r));

  EvalResult missing;
  missing.tasks[Task::SC].mae = 1.0;
  CHECK_THROWS_AS(omega(missing), std::invalid_argument);
}

TEST_CASE("metric accumulator: perfect predictions and report units") {
  const auto specs = make_task_specs(2);
  MetricAccumulator acc(specs);

  const Tensor sc = Tensor::matrix(2, 2, {1.0, -0.5, 0.25, 2.0});
  acc.add(Task::SC, sc, sc, 0.0, 2);
  const Tensor ps = Tensor::matrix(2, 3, {0.1, 0.2, 0.0, -0.3, 0.4, 0.05});
  acc.add(Task::PS, ps, ps, 0.0, 2);
  const Tensor in_p = Tensor::matrix(2, 1, {0.9, 0.2});
  const Tensor in_y = Tensor::matrix(2, 1, {1.0, 0.0});
  acc.add(Task::IN, in_p, in_y, 0.3, 2);
  const Tensor los_p = Tensor::matrix(2, 2, {0.6, 0.4, 0.1, 0.8});
  const Tensor los_y = Tensor::matrix(2, 2, {1.0, 0.0, 0.0, 1.0});
  acc.add(Task::LOS, los_p, los_y, 0.2, 2);

  PreparedData stats;
  stats.ps_scale_m = 1000.0;
  stats.sc_std = {2.0, 4.0};
  const EvalResult r = acc.finish(stats);
  CHECK(r.tasks.at(Task::SC).mae == 0.0);
  CHECK(r.tasks.at(Task::SC).report == 0.0);
  CHECK(r.tasks.at(Task::PS).mae == 0.0);
  CHECK(r.tasks.at(Task::IN).accuracy == 1.0);
  CHECK(r.tasks.at(Task::LOS).accuracy == 1.0);
  CHECK(r.total_loss == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(omega(r) == doctest::Approx(2.0));
}

TEST_CASE("metric accumulator: unit conversions and chunk equivalence") {
  const auto specs = make_task_specs(2);
  PreparedData stats;
  stats.ps_scale_m = 1000.0;
  stats.sc_std = {2.0, 4.0};

  // SC: per-column errors 0.1 and 0.3 -> normalized MAE 0.2, report uses the
  // per-column stds: (2*0.1 + 4*0.3) / 2 = 0.7 dB
  {
    MetricAccumulator acc(specs);
    const Tensor pred = Tensor::matrix(1, 2, {0.1, -0.3});
    const Tensor label = Tensor::matrix(1, 2, {0.0, 0.0});
    acc.add(Task::SC, pred, label, 0.05, 1);
    acc.add(Task::PS, Tensor::matrix(1, 3, {0.01, -0.02, 0.03}), Tensor::zeros({1, 3}),
            0.0, 1);
    acc.add(Task::IN, Tensor::matrix(1, 1, {0.7}), Tensor::matrix(1, 1, {1.0}), 0.1, 1);
    acc.add(Task::LOS, Tensor::matrix(1, 2, {0.6, 0.6}), Tensor::matrix(1, 2, {1.0, 0.0}),
            0.1, 1);
    const EvalResult r = acc.finish(stats);
    CHECK(r.tasks.at(Task::SC).mae == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(r.tasks.at(Task::SC).report == doctest::Approx(0.7).epsilon(1e-12));
    // PS report is meters: normalized MAE 0.02 * 1000
    CHECK(r.tasks.at(Task::PS).mae == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(r.tasks.at(Task::PS).report == doctest::Approx(20.0).epsilon(1e-12));
    // LOS: one of two outputs correct
    CHECK(r.tasks.at(Task::LOS).accuracy == doctest::Approx(0.5));
  }

  // feeding rows one at a time equals feeding them in one call
  {
    Rng rng(9);
    Tensor pred = Tensor::zeros({6, 2}), label = Tensor::zeros({6, 2});
    for (double& v : pred.data) v = rng.normal();
    for (double& v : label.data) v = rng.normal();
    MetricAccumulator whole(specs), parts(specs);
    auto feed_min = [&](MetricAccumulator& a) {
      a.add(Task::PS, Tensor::zeros({6, 3}), Tensor::zeros({6, 3}), 0.0, 6);
      a.add(Task::IN, Tensor::zeros({6, 1}), Tensor::zeros({6, 1}), 0.0, 6);
      a.add(Task::LOS, Tensor::zeros({6, 2}), Tensor::zeros({6, 2}), 0.0, 6);
    };
    whole.add(Task::SC, pred, label, 1.5, 6);
    feed_min(whole);
    for (std::size_t i = 0; i < 6; ++i) {
      Tensor p = Tensor::matrix(1, 2, {pred.data[2 * i], pred.data[2 * i + 1]});
      Tensor y = Tensor::matrix(1, 2, {label.data[2 * i], label.data[2 * i + 1]});
      parts.add(Task::SC, p, y, 1.5, 1);
    }
    feed_min(parts);
    const EvalResult a = whole.finish(stats), b = parts.finish(stats);
    CHECK(a.tasks.at(Task::SC).mae ==
          doctest::Approx(b.tasks.at(Task::SC).mae).epsilon(1e-12));
    CHECK(a.tasks.at(Task::SC).loss ==
          doctest::Approx(b.tasks.at(Task::SC).loss).epsilon(1e-12));
  }

  // shape mismatch rejected
  {
    MetricAccumulator acc(specs);
    CHECK_THROWS_AS(
        acc.add(Task::SC, Tensor::zeros({1, 3}), Tensor::zeros({1, 3}), 0.0, 1),
        std::invalid_argument);
  }
}

TEST_CASE("trainer: evaluate matches a whole-split graph pass") {
  const PreparedData& data = shared_prepared();
  REQUIRE(data.train.n > 256);  // forces the chunked path

  NodeTrainer tr(tiny_arch(Arch::HPS, {Task::SC, Task::PS, Task::IN, Task::LOS}), &data,
                 tiny_train(), 7);
  const EvalResult ev = tr.evaluate(data.train);

  // same losses from one unchunked pass over the split
  NamedTensors leaves = tr.model().params.tensors;
  leaves["x"] = data.train.x;
  for (const TaskSpec& s : tr.model().specs)
    leaves[std::string("y:") + task_name(s.id)] = data.train.y.at(s.id);
  for (const TaskSpec& s : tr.model().specs) {
    const Tensor whole =
        eval_node(tr.model().graph, leaves, tr.model().loss_nodes.at(s.id));
    CHECK(ev.tasks.at(s.id).loss == doctest::Approx(whole.data[0]).epsilon(1e-12));
  }
  for (const auto& [t, m] : ev.tasks) {
    CHECK(std::isfinite(m.loss));
    CHECK(m.mae >= 0.0);
    CHECK(m.accuracy >= 0.0);
    CHECK(m.accuracy <= 1.0);
  }
}

TEST_CASE("trainer: determinism and epoch bookkeeping") {
  const PreparedData& data = shared_prepared();
  const auto arch = tiny_arch(Arch::MMoE, {Task::SC, Task::PS, Task::IN, Task::LOS});

  NodeTrainer a(arch, &data, tiny_train(), 11);
  NodeTrainer b(arch, &data, tiny_train(), 11);
  NodeTrainer c(arch, &data, tiny_train(), 12);
  CHECK(params_equal(a.model(), b.model()));

  a.train_epochs(2);
  b.train_epochs(2);
  c.train_epochs(2);
  CHECK(params_equal(a.model(), b.model()));
  CHECK_FALSE(params_equal(a.model(), c.model()));
  CHECK(a.val_trace().size() == 2);
  CHECK(a.val_trace() == b.val_trace());
  CHECK(a.epochs_run() == 2);
  for (double v : a.val_trace()) CHECK(std::isfinite(v));

  // zero epochs: no parameter movement
  NodeTrainer d(arch, &data, tiny_train(), 11);
  d.train_epochs(0);
  NodeTrainer e(arch, &data, tiny_train(), 11);
  CHECK(params_equal(d.model(), e.model()));
}

TEST_CASE("trainer: update masks freeze the complementary group") {
  const PreparedData& data = shared_prepared();
  const auto arch = tiny_arch(Arch::HPS, {Task::SC, Task::PS, Task::IN, Task::LOS});
  TrainConfig cfg = tiny_train();

  NodeTrainer tr(arch, &data, cfg, 21);
  NamedTensors before = tr.model().params.tensors;

  tr.train_epochs(1, {false, true});  // task-only phase
  for (const std::string& name : tr.model().params.shared_order)
    CHECK(tr.model().params.tensors.at(name).data == before.at(name).data);
  bool task_moved = false;
  for (const auto& [t, names] : tr.model().params.task_order)
    for (const std::string& name : names)
      task_moved |= tr.model().params.tensors.at(name).data != before.at(name).data;
  CHECK(task_moved);

  before = tr.model().params.tensors;
  tr.train_epochs(1, {true, false});  // shared-only phase
  for (const auto& [t, names] : tr.model().params.task_order)
    for (const std::string& name : names)
      CHECK(tr.model().params.tensors.at(name).data == before.at(name).data);
  bool shared_moved = false;
  for (const std::string& name : tr.model().params.shared_order)
    shared_moved |= tr.model().params.tensors.at(name).data != before.at(name).data;
  CHECK(shared_moved);

  CHECK_THROWS_AS(tr.train_epochs(1, {false, false}), std::invalid_argument);
}

TEST_CASE("trainer: epoch runs compose") {
  const PreparedData& data = shared_prepared();
  const auto arch = tiny_arch(Arch::DSelectK, {Task::SC, Task::PS, Task::IN, Task::LOS});
  TrainConfig cfg = tiny_train();

  NodeTrainer whole(arch, &data, cfg, 31);
  whole.train_epochs(4);
  NodeTrainer split(arch, &data, cfg, 31);
  split.train_epochs(1);
  split.train_epochs(3);
  CHECK(params_equal(whole.model(), split.model()));
  CHECK(whole.val_trace() == split.val_trace());
}

TEST_CASE("trainer: single-task gradient balancing equals plain training") {
  const PreparedData& data = shared_prepared();
  const auto arch = tiny_arch(Arch::STL, {Task::PS});

  TrainConfig ew = tiny_train();
  TrainConfig mgda = tiny_train();
  mgda.weighting.kind = Weighting::MGDA;

  NodeTrainer a(arch, &data, ew, 55);
  NodeTrainer b(arch, &data, mgda, 55);
  a.train_epochs(2);
  b.train_epochs(2);
  // with one task the min-norm combination is the task gradient itself, so
  // the two code paths must produce the same trajectory bitwise
  CHECK(params_equal(a.model(), b.model()));
  CHECK(a.val_trace() == b.val_trace());
}

TEST_CASE("trainer: gradient balancers run and stay finite") {
  const PreparedData& data = shared_prepared();
  const auto arch = tiny_arch(Arch::CGC, {Task::SC, Task::PS, Task::IN, Task::LOS});
  for (Weighting w : {Weighting::CAGrad, Weighting::PCGrad, Weighting::GradNorm,
                      Weighting::GradVac, Weighting::GradDrop, Weighting::MGDA}) {
    TrainConfig cfg = tiny_train();
    cfg.epochs = 1;
    cfg.weighting.kind = w;
    NodeTrainer tr(arch, &data, cfg, 77);
    tr.train_epochs(1);
    for (const auto& [name, t] : tr.model().params.tensors) CHECK(t.all_finite());
    CHECK(std::isfinite(tr.val_trace().back()));
  }
}

TEST_CASE("trainer: loss balancers run and the balancer state evolves") {
  const PreparedData& data = shared_prepared();
  const auto arch = tiny_arch(Arch::HPS, {Task::SC, Task::PS, Task::IN, Task::LOS});
  for (Weighting w : {Weighting::UW, Weighting::DWA, Weighting::GLS, Weighting::RLW}) {
    TrainConfig cfg = tiny_train();
    cfg.epochs = 1;
    cfg.weighting.kind = w;
    NodeTrainer tr(arch, &data, cfg, 78);
    tr.train_epochs(3);
    for (const auto& [name, t] : tr.model().params.tensors) CHECK(t.all_finite());
    CHECK(std::isfinite(tr.val_trace().back()));
  }
}

TEST_CASE("trainer: validation loss falls on the synthetic data") {
  const PreparedData& data = shared_prepared();
  const auto arch = tiny_arch(Arch::HPS, {Task::SC, Task::PS, Task::IN, Task::LOS});
  TrainConfig cfg = tiny_train();
  NodeTrainer tr(arch, &data, cfg, 91);
  tr.train_epochs(5);
  CHECK(tr.val_trace().back() <= tr.val_trace().front());
}

TEST_CASE("trainer: constructor rejections") {
  const PreparedData& data = shared_prepared();
  const auto arch = tiny_arch(Arch::HPS, {Task::SC});
  CHECK_THROWS_AS(NodeTrainer(arch, nullptr, tiny_train(), 1), std::invalid_argument);
  TrainConfig bad = tiny_train();
  bad.batch = 0;
  CHECK_THROWS_AS(NodeTrainer(arch, &data, bad, 1), std::invalid_argument);
  ArchitectureConfig wrong = arch;
  wrong.input_dim = 5;
  CHECK_THROWS_AS(NodeTrainer(wrong, &data, tiny_train(), 1), std::invalid_argument);
}
