#include "ranmtl/topology.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "ranmtl/rng.hpp"

namespace ranmtl {

const char* topology_mode_name(TopologyMode m) {
  switch (m) {
    case TopologyMode::Local: return "local";
    case TopologyMode::Global: return "global";
    case TopologyMode::FedVanilla: return "fed_vanilla";
    case TopologyMode::FedAlt: return "fed_alt";
    case TopologyMode::FedSim: return "fed_sim";
  }
  throw std::logic_error("topology: unknown mode");
}

TopologyMode topology_mode_from_name(const std::string& s) {
  for (TopologyMode m : {TopologyMode::Local, TopologyMode::Global, TopologyMode::FedVanilla,
                         TopologyMode::FedAlt, TopologyMode::FedSim})
    if (s == topology_mode_name(m)) return m;
  throw std::invalid_argument("topology: unknown mode name: " + s);
}

TopologyConfig local_topology() {
  TopologyConfig c;
  c.mode = TopologyMode::Local;
  return c;
}

TopologyConfig global_topology() {
  TopologyConfig c;
  c.mode = TopologyMode::Global;
  return c;
}

TopologyConfig fed_vanilla_topology() {
  TopologyConfig c;
  c.mode = TopologyMode::FedVanilla;
  c.rounds = 10;
  c.warmup_epochs = 0;
  c.round_epochs = 10;
  return c;
}

TopologyConfig fed_alt_topology() {
  TopologyConfig c;
  c.mode = TopologyMode::FedAlt;
  c.rounds = 5;
  c.warmup_epochs = 10;
  c.tsk_epochs = 17;
  c.sh_epochs = 1;
  return c;
}

TopologyConfig fed_sim_topology() {
  TopologyConfig c;
  c.mode = TopologyMode::FedSim;
  c.rounds = 9;
  c.warmup_epochs = 10;
  c.round_epochs = 10;
  return c;
}

namespace {

void put_i32(std::vector<std::uint8_t>& out, std::int32_t v) {
  std::uint8_t b[4];
  std::memcpy(b, &v, 4);
  out.insert(out.end(), b, b + 4);
}

std::int32_t take_i32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("message wire: truncated header");
  std::int32_t v;
  std::memcpy(&v, in.data() + pos, 4);
  pos += 4;
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_message(const ServerMessage& msg) {
  std::vector<std::uint8_t> out;
  put_i32(out, msg.round);
  put_i32(out, msg.sender);
  std::vector<std::pair<std::string, const Tensor*>> view;
  view.reserve(msg.entries.size());
  for (const auto& [name, t] : msg.entries) view.emplace_back(name, &t);
  const std::vector<std::uint8_t> body = encode_named(view);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

ServerMessage decode_message(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  ServerMessage msg;
  msg.round = take_i32(bytes, pos);
  msg.sender = take_i32(bytes, pos);
  msg.entries = decode_named(std::vector<std::uint8_t>(bytes.begin() + pos, bytes.end()));
  return msg;
}

bool is_task_parameter(const std::string& name) { return name.rfind("task:", 0) == 0; }

bool contains_task_tensors(const NamedTensorList& entries) {
  return std::any_of(entries.begin(), entries.end(),
                     [](const auto& e) { return is_task_parameter(e.first); });
}

NamedTensorList aggregate_shared(const std::vector<NamedTensorList>& uploads,
                                 const std::vector<double>& weights) {
  if (uploads.empty()) throw std::invalid_argument("aggregate: no uploads");
  std::vector<double> w = weights;
  if (w.empty()) w.assign(uploads.size(), 1.0 / static_cast<double>(uploads.size()));
  if (w.size() != uploads.size())
    throw std::invalid_argument("aggregate: weight count does not match upload count");

  NamedTensorList out;
  out.reserve(uploads[0].size());
  for (const auto& [name, t] : uploads[0]) out.emplace_back(name, Tensor::zeros(t.shape));

  for (std::size_t i = 0; i < uploads.size(); ++i) {
    const NamedTensorList& u = uploads[i];
    if (u.size() != out.size()) throw std::invalid_argument("aggregate: entry count mismatch");
    for (std::size_t k = 0; k < u.size(); ++k) {
      if (u[k].first != out[k].first)
        throw std::invalid_argument("aggregate: name mismatch at " + out[k].first);
      if (!u[k].second.same_shape(out[k].second))
        throw std::invalid_argument("aggregate: shape mismatch at " + out[k].first);
      Tensor& acc = out[k].second;
      const Tensor& v = u[k].second;
      for (std::size_t j = 0; j < acc.data.size(); ++j) acc.data[j] += w[i] * v.data[j];
    }
  }
  return out;
}

std::uint64_t TopologyRunner::node_seed(std::uint64_t run_seed, std::size_t participant) {
  return derive_seed(run_seed, {17, participant});
}

TopologyRunner::TopologyRunner(const Dataset& data, const std::vector<Task>& tasks,
                               const ArchitectureConfig& arch, const TrainConfig& train,
                               const TopologyConfig& topo, std::uint64_t seed)
    : data_(&data), tasks_(tasks), arch_(arch), train_(train), topo_(topo), seed_(seed) {
  arch_.tasks = tasks_;  // the active task set is authoritative

  if (tasks_.empty()) throw std::invalid_argument("topology: empty task set");
  if (topo_.nodes.empty()) {
    participants_.resize(data.nodes.size());
    for (std::size_t i = 0; i < participants_.size(); ++i) participants_[i] = static_cast<int>(i);
  } else {
    participants_ = topo_.nodes;
    std::sort(participants_.begin(), participants_.end());
    for (std::size_t i = 0; i < participants_.size(); ++i) {
      if (participants_[i] < 0 || participants_[i] >= static_cast<int>(data.nodes.size()))
        throw std::invalid_argument("topology: node index out of range");
      if (i > 0 && participants_[i] == participants_[i - 1])
        throw std::invalid_argument("topology: duplicate node index");
    }
  }
  if (participants_.empty()) throw std::invalid_argument("topology: no participating nodes");

  const bool federated = topo_.mode == TopologyMode::FedVanilla ||
                         topo_.mode == TopologyMode::FedAlt || topo_.mode == TopologyMode::FedSim;
  const bool partial = topo_.mode == TopologyMode::FedAlt || topo_.mode == TopologyMode::FedSim;
  if (federated) {
    if (topo_.rounds < 1) throw std::invalid_argument("topology: federated modes need rounds >= 1");
    if (topo_.warmup_epochs < 0) throw std::invalid_argument("topology: negative warmup");
  } else {
    if (topo_.total_epochs < 0) throw std::invalid_argument("topology: negative epoch budget");
  }
  if (topo_.mode == TopologyMode::FedAlt && (topo_.tsk_epochs < 1 || topo_.sh_epochs < 1))
    throw std::invalid_argument("topology: FedAlt phase lengths must be >= 1");
  if ((topo_.mode == TopologyMode::FedSim || topo_.mode == TopologyMode::FedVanilla) &&
      topo_.round_epochs < 1)
    throw std::invalid_argument("topology: round epochs must be >= 1");
  if (topo_.share_task_instead && !partial)
    throw std::invalid_argument("topology: task sharing applies to partial modes only");

  node_data_.reserve(participants_.size());
  for (int p : participants_) node_data_.push_back(prepare_node(data.nodes[p], data.config, tasks_));

  if (topo_.mode == TopologyMode::Global) {
    std::vector<const NodeDataset*> refs;
    refs.reserve(participants_.size());
    for (int p : participants_) refs.push_back(&data.nodes[p]);
    merged_ = prepare_merged(refs, data.config, tasks_);
    trainers_.push_back(std::make_unique<NodeTrainer>(arch_, &merged_, train_, node_seed(seed_, 0)));
  } else {
    trainers_.reserve(participants_.size());
    for (std::size_t i = 0; i < participants_.size(); ++i)
      trainers_.push_back(
          std::make_unique<NodeTrainer>(arch_, &node_data_[i], train_, node_seed(seed_, i)));
  }
}

namespace {

// Runs fn(i) once for every trainer index; nodes within a phase may run on
// worker threads (each touches only its own trainer), rounds stay barriered.
template <typename Fn>
void for_each_node(std::size_t count, Fn&& fn) {
  const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  const std::size_t workers = std::min(count, hw);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t wkr = 0; wkr < workers; ++wkr) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

TopologyRun TopologyRunner::run() {
  if (ran_) throw std::logic_error("topology: run() already executed");
  ran_ = true;
  out_.config = topo_;

  switch (topo_.mode) {
    case TopologyMode::Local: run_local(); break;
    case TopologyMode::Global: run_global(); break;
    case TopologyMode::FedVanilla:
    case TopologyMode::FedAlt:
    case TopologyMode::FedSim: run_federated(); break;
  }

  for (std::size_t i = 0; i < participants_.size(); ++i) {
    if (topo_.mode == TopologyMode::Global) {
      out_.final_val.push_back(trainers_[0]->evaluate(node_data_[i].val, node_data_[i]));
      out_.final_test.push_back(trainers_[0]->evaluate(node_data_[i].test, node_data_[i]));
    } else {
      out_.final_val.push_back(trainers_[i]->evaluate(node_data_[i].val));
      out_.final_test.push_back(trainers_[i]->evaluate(node_data_[i].test));
    }
  }
  out_.total_bytes = 0;
  for (const RoundRecord& r : out_.ledger) out_.total_bytes += r.bytes_up + r.bytes_down;
  return out_;
}

void TopologyRunner::record_round_eval(int round) {
  for (std::size_t i = 0; i < participants_.size(); ++i) {
    EvalResult ev = topo_.mode == TopologyMode::Global
                        ? trainers_[0]->evaluate(node_data_[i].val, node_data_[i])
                        : trainers_[i]->evaluate(node_data_[i].val);
    out_.round_val.push_back({round, participants_[i], std::move(ev)});
  }
}

void TopologyRunner::run_local() {
  for_each_node(trainers_.size(),
                [&](std::size_t i) { trainers_[i]->train_epochs(topo_.total_epochs); });
  out_.ledger.push_back({0, "local", topo_.total_epochs, 0, 0});
  record_round_eval(0);
}

void TopologyRunner::run_global() {
  // Every participant ships its raw sample blocks to the training site once.
  std::size_t up = 0;
  for (std::size_t i = 0; i < participants_.size(); ++i) {
    const NodeDataset& node = data_->nodes[participants_[i]];
    ServerMessage msg;
    msg.round = 0;
    msg.sender = participants_[i];
    const std::pair<const char*, const SampleBlock*> blocks[] = {
        {"train", &node.train}, {"val", &node.val}, {"test", &node.test}};
    for (const auto& [tag, blk] : blocks) {
      const std::string base = std::string("data/") + tag;
      msg.entries.emplace_back(base + ".x", Tensor::matrix(blk->n, node.d_in, blk->x));
      msg.entries.emplace_back(base + ".sc", Tensor::matrix(blk->n, node.d_sc, blk->y_sc));
      msg.entries.emplace_back(base + ".ps", Tensor::matrix(blk->n, 3, blk->y_ps));
      msg.entries.emplace_back(base + ".in", Tensor::matrix(blk->n, 1, blk->y_in));
      msg.entries.emplace_back(base + ".los", Tensor::matrix(blk->n, node.d_sc, blk->y_los));
    }
    up += encode_message(msg).size();
  }
  out_.ledger.push_back({0, "data", 0, up, 0});

  trainers_[0]->train_epochs(topo_.total_epochs);
  out_.ledger.push_back({0, "global", topo_.total_epochs, 0, 0});
  record_round_eval(0);
}

void TopologyRunner::run_federated() {
  if (topo_.warmup_epochs > 0) {
    for_each_node(trainers_.size(),
                  [&](std::size_t i) { trainers_[i]->train_epochs(topo_.warmup_epochs); });
    out_.ledger.push_back({0, "warmup", topo_.warmup_epochs, 0, 0});
    record_round_eval(0);
  }
  for (int r = 1; r <= topo_.rounds; ++r) {
    train_round_phases(r);
    sync_round(r);
    record_round_eval(r);
  }
}

void TopologyRunner::train_round_phases(int round) {
  switch (topo_.mode) {
    case TopologyMode::FedAlt:
      // Personal parameters first under the received shared trunk, then the
      // trunk with the heads pinned.
      for_each_node(trainers_.size(), [&](std::size_t i) {
        trainers_[i]->train_epochs(topo_.tsk_epochs, {false, true});
      });
      out_.ledger.push_back({round, "tsk", topo_.tsk_epochs, 0, 0});
      for_each_node(trainers_.size(), [&](std::size_t i) {
        trainers_[i]->train_epochs(topo_.sh_epochs, {true, false});
      });
      out_.ledger.push_back({round, "sh", topo_.sh_epochs, 0, 0});
      break;
    case TopologyMode::FedSim:
      for_each_node(trainers_.size(),
                    [&](std::size_t i) { trainers_[i]->train_epochs(topo_.round_epochs); });
      out_.ledger.push_back({round, "sim", topo_.round_epochs, 0, 0});
      break;
    case TopologyMode::FedVanilla:
      for_each_node(trainers_.size(),
                    [&](std::size_t i) { trainers_[i]->train_epochs(topo_.round_epochs); });
      out_.ledger.push_back({round, "full", topo_.round_epochs, 0, 0});
      break;
    default: throw std::logic_error("topology: round phases on a non-federated mode");
  }
}

void TopologyRunner::sync_round(int round) {
  const bool partial =
      topo_.mode == TopologyMode::FedAlt || topo_.mode == TopologyMode::FedSim;
  const Payload kind = topo_.mode == TopologyMode::FedVanilla
                           ? Payload::Full
                           : (topo_.share_task_instead ? Payload::Task : Payload::Shared);

  // Uplink: each node serializes its payload; the server works from decoded
  // bytes so the policy check sees exactly what crossed the wire.
  std::vector<NamedTensorList> uploads;
  uploads.reserve(trainers_.size());
  std::size_t up = 0;
  for (std::size_t i = 0; i < trainers_.size(); ++i) {
    ServerMessage msg;
    msg.round = round;
    msg.sender = participants_[i];
    msg.entries = snapshot(*trainers_[i], kind);
    const std::vector<std::uint8_t> bytes = encode_message(msg);
    up += bytes.size();
    ServerMessage rx = decode_message(bytes);
    if (partial) check_payload_policy(rx.entries);
    uploads.push_back(std::move(rx.entries));
  }

  std::vector<double> weights;
  if (topo_.size_weighted) {
    double total = 0.0;
    for (const PreparedData& d : node_data_) total += static_cast<double>(d.train.n);
    for (const PreparedData& d : node_data_)
      weights.push_back(static_cast<double>(d.train.n) / total);
  }
  NamedTensorList mean = aggregate_shared(uploads, weights);

  // Downlink: one broadcast payload, delivered to every node.
  ServerMessage bmsg;
  bmsg.round = round;
  bmsg.sender = -1;
  bmsg.entries = std::move(mean);
  const std::vector<std::uint8_t> bytes = encode_message(bmsg);
  const std::size_t down = trainers_.size() * bytes.size();
  ServerMessage brx = decode_message(bytes);
  if (partial) check_payload_policy(brx.entries);
  for (auto& t : trainers_) apply_update(*t, brx.entries);
  assert_consensus();

  out_.ledger.push_back({round, "sync", 0, up, down});
}

NamedTensorList TopologyRunner::snapshot(const NodeTrainer& t, Payload kind) const {
  const ParameterSet& p = t.model().params;
  NamedTensorList out;
  const auto add = [&](const std::vector<std::string>& names) {
    for (const std::string& n : names) out.emplace_back(n, p.tensors.at(n));
  };
  if (kind == Payload::Shared || kind == Payload::Full) add(p.shared_order);
  if (kind == Payload::Task || kind == Payload::Full)
    for (const auto& [task, names] : p.task_order) add(names);
  return out;
}

void TopologyRunner::apply_update(NodeTrainer& t, const NamedTensorList& mean) const {
  NamedTensors& tensors = t.model().params.tensors;
  for (const auto& [name, v] : mean) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::invalid_argument("topology: update names unknown parameter " + name);
    if (!it->second.same_shape(v))
      throw std::invalid_argument("topology: update shape mismatch at " + name);
    it->second.data = v.data;
  }
}

void TopologyRunner::check_payload_policy(const NamedTensorList& entries) {
  ++out_.messages_checked;
  if (topo_.share_task_instead) {
    for (const auto& [name, t] : entries)
      if (!is_task_parameter(name))
        throw std::logic_error("topology: shared tensor in task-sharing message: " + name);
  } else {
    for (const auto& [name, t] : entries)
      if (is_task_parameter(name))
        throw std::logic_error("topology: task tensor in partial-mode message: " + name);
  }
}

void TopologyRunner::assert_consensus() const {
  if (trainers_.size() < 2) return;
  // Consensus applies to whichever group the round aggregated.
  const ParameterSet& ref = trainers_[0]->model().params;
  std::vector<std::string> names;
  if (topo_.mode == TopologyMode::FedVanilla || !topo_.share_task_instead)
    names = ref.shared_order;
  if (topo_.mode == TopologyMode::FedVanilla || topo_.share_task_instead)
    for (const auto& [task, more] : ref.task_order) names.insert(names.end(), more.begin(), more.end());
  for (std::size_t i = 1; i < trainers_.size(); ++i) {
    const NamedTensors& other = trainers_[i]->model().params.tensors;
    for (const std::string& n : names)
      if (other.at(n).data != ref.tensors.at(n).data)
        throw std::logic_error("topology: post-aggregation consensus violated at " + n);
  }
}

TopologyRun run_topology(const Dataset& data, const std::vector<Task>& tasks,
                         const ArchitectureConfig& arch, const TrainConfig& train,
                         const TopologyConfig& topo, std::uint64_t seed) {
  TopologyRunner runner(data, tasks, arch, train, topo, seed);
  return runner.run();
}

}  // namespace ranmtl
