#include "ranmtl/models.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "ranmtl/rng.hpp"

namespace ranmtl {

const char* arch_name(Arch a) {
  switch (a) {
    case Arch::STL: return "STL";
    case Arch::HPS: return "HPS";
    case Arch::MMoE: return "MMoE";
    case Arch::DSelectK: return "DSelectK";
    case Arch::CGC: return "CGC";
  }
  throw std::invalid_argument("arch_name: bad architecture id");
}

Arch arch_from_name(const std::string& s) {
  if (s == "STL") return Arch::STL;
  if (s == "HPS") return Arch::HPS;
  if (s == "MMoE") return Arch::MMoE;
  if (s == "DSelectK") return Arch::DSelectK;
  if (s == "CGC") return Arch::CGC;
  throw std::invalid_argument("unknown architecture: " + s);
}

std::size_t ParameterSet::count(const std::vector<std::string>& names) const {
  std::size_t n = 0;
  for (const std::string& name : names) n += tensors.at(name).size();
  return n;
}

std::size_t ParameterSet::total_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

std::vector<std::string> ParameterSet::all_names() const {
  std::vector<std::string> out = shared_order;
  for (const auto& [t, names] : task_order) out.insert(out.end(), names.begin(), names.end());
  return out;
}

namespace {

std::size_t selector_bits(std::size_t experts) {
  std::size_t m = 0;
  while ((std::size_t{1} << m) < experts) ++m;
  return m;
}

void validate(const ArchitectureConfig& cfg) {
  if (cfg.input_dim == 0 || cfg.width == 0)
    throw std::invalid_argument("model: zero input dim or width");
  if (cfg.tasks.empty()) throw std::invalid_argument("model: empty task set");
  if (cfg.kind == Arch::STL && cfg.tasks.size() != 1)
    throw std::invalid_argument("model: single-task architecture given several tasks");
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i)
    for (std::size_t j = i + 1; j < cfg.tasks.size(); ++j)
      if (cfg.tasks[i] == cfg.tasks[j]) throw std::invalid_argument("model: duplicate task");
  if ((cfg.kind == Arch::MMoE || cfg.kind == Arch::DSelectK || cfg.kind == Arch::CGC) &&
      cfg.experts < 1)
    throw std::invalid_argument("model: expert count must be positive");
  if (cfg.kind == Arch::DSelectK) {
    if (cfg.experts < 2) throw std::invalid_argument("model: selector gating needs >= 2 experts");
    if (cfg.dselect_k < 1) throw std::invalid_argument("model: selector count must be positive");
    if (cfg.dselect_k > cfg.experts)
      throw std::invalid_argument("model: more selectors than experts");
    if (cfg.dselect_gamma <= 0) throw std::invalid_argument("model: gamma must be positive");
  }
  if (cfg.kind == Arch::CGC && cfg.task_experts < 1)
    throw std::invalid_argument("model: private expert count must be positive");
}

// Helper carrying the build state: tensor registration + init draws.
struct Builder {
  Model& m;
  Rng rng;

  Builder(Model& model, std::uint64_t seed) : m(model), rng(seed) {}

  // Glorot-uniform matrix; banks draw expert blocks as if they were separate
  // [rows, unit] matrices so fused layouts initialize like split ones.
  int bank_weight(const std::string& name, std::size_t rows, std::size_t unit,
                  std::size_t experts, std::vector<std::string>& group) {
    const std::vector<std::size_t> shape{rows, unit * experts};
    Tensor t = Tensor::zeros(shape);
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + unit));
    for (std::size_t e = 0; e < experts; ++e)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < unit; ++c)
          t.data[r * unit * experts + e * unit + c] = rng.uniform(-limit, limit);
    m.params.tensors[name] = std::move(t);
    group.push_back(name);
    return m.graph.param(name, shape);
  }

  int weight(const std::string& name, std::size_t rows, std::size_t cols,
             std::vector<std::string>& group) {
    return bank_weight(name, rows, cols, 1, group);
  }

  int bias(const std::string& name, std::size_t n, std::vector<std::string>& group) {
    m.params.tensors[name] = Tensor::zeros({n});
    group.push_back(name);
    return m.graph.param(name, {n});
  }

  int codes(const std::string& name, std::size_t k, std::size_t bits, double gamma,
            std::vector<std::string>& group) {
    Tensor t = Tensor::zeros({k, bits});
    for (double& v : t.data) v = rng.uniform(-gamma / 4.0, gamma / 4.0);
    m.params.tensors[name] = std::move(t);
    group.push_back(name);
    return m.graph.param(name, {k, bits});
  }
};

}  // namespace

Model build_model(const ArchitectureConfig& cfg, std::uint64_t init_seed) {
  validate(cfg);
  Model m;
  m.cfg = cfg;
  Builder b(m, init_seed);
  Graph& g = m.graph;

  const std::size_t din = cfg.input_dim, w = cfg.width;
  const auto specs_all = make_task_specs(din);
  for (Task t : cfg.tasks) m.specs.push_back(spec_for(specs_all, t));

  m.x_node = g.input("x", din);
  for (const TaskSpec& s : m.specs)
    m.label_nodes[s.id] = g.input(std::string("y:") + task_name(s.id), s.out_dim);

  // shared bottom
  const bool gated = cfg.kind == Arch::MMoE || cfg.kind == Arch::DSelectK || cfg.kind == Arch::CGC;
  const std::size_t shared_experts = gated ? cfg.experts : 1;
  int wshared = b.bank_weight("shared/experts.w", din, w, shared_experts, m.params.shared_order);
  int bshared = b.bias("shared/experts.b", w * shared_experts, m.params.shared_order);
  const int shared_bank = g.relu(g.affine(m.x_node, wshared, bshared));

  int pen_total = -1;
  for (const TaskSpec& s : m.specs) {
    const std::string prefix = std::string("task:") + task_name(s.id) + "/";
    auto& group = m.params.task_order[s.id];
    int fused;
    switch (cfg.kind) {
      case Arch::STL:
      case Arch::HPS:
        fused = shared_bank;
        break;
      case Arch::MMoE: {
        int wg = b.weight(prefix + "gate.w", din, cfg.experts, group);
        int bg = b.bias(prefix + "gate.b", cfg.experts, group);
        int gate = g.softmax_rows(g.affine(m.x_node, wg, bg));
        fused = g.weighted_sum(gate, {shared_bank}, w);
        break;
      }
      case Arch::DSelectK: {
        const std::size_t bits = selector_bits(cfg.experts);
        int zc = b.codes(prefix + "gate.codes", cfg.dselect_k, bits, cfg.dselect_gamma, group);
        int mix = b.bias(prefix + "gate.mix", cfg.dselect_k, group);
        int gate = g.dselect_gate(zc, mix, cfg.experts, cfg.dselect_gamma);
        fused = g.weighted_sum(gate, {shared_bank}, w);
        int pen = g.saturation_penalty(zc, cfg.dselect_gamma);
        m.penalty_nodes[s.id] = pen;
        pen_total = pen_total < 0 ? pen : g.add(pen_total, pen);
        break;
      }
      case Arch::CGC: {
        int wt = b.bank_weight(prefix + "experts.w", din, w, cfg.task_experts, group);
        int bt = b.bias(prefix + "experts.b", w * cfg.task_experts, group);
        int task_bank = g.relu(g.affine(m.x_node, wt, bt));
        const std::size_t options = cfg.experts + cfg.task_experts;
        int wg = b.weight(prefix + "gate.w", din, options, group);
        int bg = b.bias(prefix + "gate.b", options, group);
        int gate = g.softmax_rows(g.affine(m.x_node, wg, bg));
        // shared slices come first, private slices after
        fused = g.weighted_sum(gate, {shared_bank, task_bank}, w);
        break;
      }
    }
    int wh = b.weight(prefix + "head.w", w, s.out_dim, group);
    int bh = b.bias(prefix + "head.b", s.out_dim, group);
    int head = g.affine(fused, wh, bh);
    if (s.loss == LossKind::Bce) {
      int prob = g.sigmoid(head);
      m.output_nodes[s.id] = prob;
      m.loss_nodes[s.id] = g.bce_loss(prob, m.label_nodes[s.id]);
    } else {
      m.output_nodes[s.id] = head;
      m.loss_nodes[s.id] = g.mse_loss(head, m.label_nodes[s.id]);
    }
  }
  if (pen_total >= 0) {
    m.reg_node = pen_total;
    m.reg_coef = cfg.dselect_reg;
  }
  return m;
}

ParamCount count_params(const ArchitectureConfig& cfg) {
  validate(cfg);
  const std::size_t din = cfg.input_dim, w = cfg.width;
  const auto specs_all = make_task_specs(din);
  ParamCount out;
  const bool gated = cfg.kind == Arch::MMoE || cfg.kind == Arch::DSelectK || cfg.kind == Arch::CGC;
  const std::size_t shared_experts = gated ? cfg.experts : 1;
  out.shared = shared_experts * (din * w + w);
  out.total = out.shared;
  for (Task t : cfg.tasks) {
    const TaskSpec& s = spec_for(specs_all, t);
    std::size_t n = w * s.out_dim + s.out_dim;  // head
    switch (cfg.kind) {
      case Arch::STL:
      case Arch::HPS:
        break;
      case Arch::MMoE:
        n += din * cfg.experts + cfg.experts;
        break;
      case Arch::DSelectK:
        n += cfg.dselect_k * selector_bits(cfg.experts) + cfg.dselect_k;
        break;
      case Arch::CGC:
        n += cfg.task_experts * (din * w + w);
        n += din * (cfg.experts + cfg.task_experts) + (cfg.experts + cfg.task_experts);
        break;
    }
    out.per_task[t] = n;
    out.total += n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {
using nlohmann::json;
constexpr int kCheckpointVersion = 1;

json arch_to_json(const ArchitectureConfig& c) {
  json j;
  j["kind"] = arch_name(c.kind);
  j["input_dim"] = c.input_dim;
  j["width"] = c.width;
  j["experts"] = c.experts;
  j["task_experts"] = c.task_experts;
  j["dselect_k"] = c.dselect_k;
  j["dselect_gamma"] = c.dselect_gamma;
  j["dselect_reg"] = c.dselect_reg;
  std::vector<std::string> names;
  for (Task t : c.tasks) names.push_back(task_name(t));
  j["tasks"] = names;
  return j;
}

ArchitectureConfig arch_from_json(const json& j) {
  ArchitectureConfig c;
  c.kind = arch_from_name(j.at("kind").get<std::string>());
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.experts = j.at("experts").get<std::size_t>();
  c.task_experts = j.at("task_experts").get<std::size_t>();
  c.dselect_k = j.at("dselect_k").get<std::size_t>();
  c.dselect_gamma = j.at("dselect_gamma").get<double>();
  c.dselect_reg = j.at("dselect_reg").get<double>();
  c.tasks.clear();
  for (const auto& n : j.at("tasks")) c.tasks.push_back(task_from_name(n.get<std::string>()));
  return c;
}
}  // namespace

std::string checkpoint_to_json(const Model& m) {
  json j;
  j["kind"] = "ranmtl-checkpoint";
  j["schema_version"] = kCheckpointVersion;
  j["architecture"] = arch_to_json(m.cfg);
  json tensors = json::array();
  auto push_group = [&](const std::vector<std::string>& names, const std::string& group) {
    for (const std::string& name : names) {
      const Tensor& t = m.params.tensors.at(name);
      json jt;
      jt["name"] = name;
      jt["group"] = group;
      jt["shape"] = t.shape;
      jt["data"] = t.data;
      tensors.push_back(std::move(jt));
    }
  };
  push_group(m.params.shared_order, "shared");
  for (const auto& [t, names] : m.params.task_order)
    push_group(names, std::string("task:") + task_name(t));
  j["tensors"] = std::move(tensors);
  return j.dump();
}

ArchitectureConfig checkpoint_architecture(const std::string& json_text) {
  json j = json::parse(json_text);
  if (j.value("kind", "") != "ranmtl-checkpoint")
    throw std::runtime_error("checkpoint: not a checkpoint file");
  if (j.at("schema_version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported schema version");
  return arch_from_json(j.at("architecture"));
}

void checkpoint_into(Model& m, const std::string& json_text) {
  json j = json::parse(json_text);
  if (j.value("kind", "") != "ranmtl-checkpoint")
    throw std::runtime_error("checkpoint: not a checkpoint file");
  if (j.at("schema_version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported schema version");
  std::size_t seen = 0;
  for (const json& jt : j.at("tensors")) {
    const std::string name = jt.at("name").get<std::string>();
    auto it = m.params.tensors.find(name);
    if (it == m.params.tensors.end())
      throw std::runtime_error("checkpoint: unknown tensor " + name);
    const auto shape = jt.at("shape").get<std::vector<std::size_t>>();
    if (shape != it->second.shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    const auto data = jt.at("data").get<std::vector<double>>();
    if (data.size() != it->second.size())
      throw std::runtime_error("checkpoint: data size mismatch for " + name);
    for (double v : data)
      if (!std::isfinite(v)) throw std::runtime_error("checkpoint: non-finite value in " + name);
    it->second.data = data;
    ++seen;
  }
  if (seen != m.params.tensors.size())
    throw std::runtime_error("checkpoint: tensor set does not cover the model");
}

}  // namespace ranmtl
