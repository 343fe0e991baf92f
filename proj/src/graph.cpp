#include "ranmtl/graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ranmtl {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using VecCMap = Eigen::Map<const Eigen::VectorXd>;

MapC cmat(const Tensor& t) {
  return MapC(t.data.data(), static_cast<Eigen::Index>(t.rows()),
              static_cast<Eigen::Index>(t.cols()));
}

MapM mat(Tensor& t) {
  return MapM(t.data.data(), static_cast<Eigen::Index>(t.rows()),
              static_cast<Eigen::Index>(t.cols()));
}

constexpr double kBceClamp = 1e-12;
constexpr double kGateFloor = 1e-12;

}  // namespace

double smooth_step(double z, double gamma) {
  if (z <= -gamma / 2) return 0.0;
  if (z >= gamma / 2) return 1.0;
  const double g3 = gamma * gamma * gamma;
  return -2.0 / g3 * z * z * z + 1.5 / gamma * z + 0.5;
}

double smooth_step_deriv(double z, double gamma) {
  if (z <= -gamma / 2 || z >= gamma / 2) return 0.0;
  const double g3 = gamma * gamma * gamma;
  return -6.0 / g3 * z * z + 1.5 / gamma;
}

// ---------------------------------------------------------------------------
// Graph construction

int Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Node& Graph::check_id(int i, const char* who) const {
  if (i < 0 || i >= node_count())
    throw std::invalid_argument(std::string(who) + ": bad node id " + std::to_string(i));
  return nodes_[static_cast<std::size_t>(i)];
}

int Graph::find_leaf(const std::string& name) const {
  for (int id : leaf_ids_)
    if (nodes_[static_cast<std::size_t>(id)].name == name) return id;
  return -1;
}

int Graph::input(const std::string& name, std::size_t cols) {
  if (cols == 0) throw std::invalid_argument("input: zero-width leaf " + name);
  if (find_leaf(name) >= 0) throw std::invalid_argument("input: duplicate leaf name " + name);
  Node n;
  n.kind = OpKind::Input;
  n.name = name;
  n.leaf_shape = {cols};
  n.cols = cols;
  int id = push(std::move(n));
  leaf_ids_.push_back(id);
  return id;
}

int Graph::param(const std::string& name, const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > 2)
    throw std::invalid_argument("param: rank must be 1 or 2 for " + name);
  for (std::size_t d : shape)
    if (d == 0) throw std::invalid_argument("param: zero dim in " + name);
  if (find_leaf(name) >= 0) throw std::invalid_argument("param: duplicate leaf name " + name);
  Node n;
  n.kind = OpKind::Param;
  n.name = name;
  n.leaf_shape = shape;
  n.trainable = true;
  n.cols = shape.size() == 2 ? shape[1] : shape[0];
  n.static_row = shape.size() == 1 || shape[0] == 1;
  int id = push(std::move(n));
  leaf_ids_.push_back(id);
  return id;
}

int Graph::affine(int x, int w, int b) {
  const Node& nx = check_id(x, "affine");
  const Node& nw = check_id(w, "affine");
  const Node& nb = check_id(b, "affine");
  if (nw.kind != OpKind::Param || nw.leaf_shape.size() != 2)
    throw std::invalid_argument("affine: weight must be a rank-2 param");
  if (nb.kind != OpKind::Param || nb.leaf_shape.size() != 1)
    throw std::invalid_argument("affine: bias must be a rank-1 param");
  if (nx.scalar) throw std::invalid_argument("affine: scalar operand");
  if (nx.cols != nw.leaf_shape[0])
    throw std::invalid_argument("affine: input width " + std::to_string(nx.cols) +
                                " does not match weight rows " + std::to_string(nw.leaf_shape[0]));
  if (nb.leaf_shape[0] != nw.leaf_shape[1])
    throw std::invalid_argument("affine: bias width does not match weight cols");
  Node n;
  n.kind = OpKind::Affine;
  n.inputs = {x, w, b};
  n.cols = nw.leaf_shape[1];
  n.static_row = nx.static_row;
  return push(std::move(n));
}

int Graph::relu(int x) {
  const Node& nx = check_id(x, "relu");
  Node n;
  n.kind = OpKind::Relu;
  n.inputs = {x};
  n.cols = nx.cols;
  n.static_row = nx.static_row;
  return push(std::move(n));
}

int Graph::sigmoid(int x) {
  const Node& nx = check_id(x, "sigmoid");
  Node n;
  n.kind = OpKind::Sigmoid;
  n.inputs = {x};
  n.cols = nx.cols;
  n.static_row = nx.static_row;
  return push(std::move(n));
}

int Graph::softmax_rows(int x) {
  const Node& nx = check_id(x, "softmax_rows");
  if (nx.scalar) throw std::invalid_argument("softmax_rows: scalar operand");
  Node n;
  n.kind = OpKind::SoftmaxRows;
  n.inputs = {x};
  n.cols = nx.cols;
  n.static_row = nx.static_row;
  return push(std::move(n));
}

int Graph::add(int a, int b) {
  const Node& na = check_id(a, "add");
  const Node& nb = check_id(b, "add");
  if (na.cols != nb.cols) throw std::invalid_argument("add: width mismatch");
  Node n;
  n.kind = OpKind::Add;
  n.inputs = {a, b};
  n.cols = na.cols;
  n.scalar = na.scalar && nb.scalar;
  n.static_row = na.static_row && nb.static_row;
  return push(std::move(n));
}

int Graph::mul(int a, int b) {
  const Node& na = check_id(a, "mul");
  const Node& nb = check_id(b, "mul");
  if (na.cols != nb.cols) throw std::invalid_argument("mul: width mismatch");
  Node n;
  n.kind = OpKind::Mul;
  n.inputs = {a, b};
  n.cols = na.cols;
  n.scalar = na.scalar && nb.scalar;
  n.static_row = na.static_row && nb.static_row;
  return push(std::move(n));
}

int Graph::mean_all(int x) {
  check_id(x, "mean_all");
  Node n;
  n.kind = OpKind::MeanAll;
  n.inputs = {x};
  n.cols = 1;
  n.scalar = true;
  n.static_row = true;
  return push(std::move(n));
}

int Graph::mse_loss(int pred, int target) {
  const Node& np = check_id(pred, "mse_loss");
  const Node& nt = check_id(target, "mse_loss");
  if (np.cols != nt.cols) throw std::invalid_argument("mse_loss: width mismatch");
  Node n;
  n.kind = OpKind::MseLoss;
  n.inputs = {pred, target};
  n.cols = 1;
  n.scalar = true;
  n.static_row = true;
  return push(std::move(n));
}

int Graph::bce_loss(int prob, int target) {
  const Node& np = check_id(prob, "bce_loss");
  const Node& nt = check_id(target, "bce_loss");
  if (np.cols != nt.cols) throw std::invalid_argument("bce_loss: width mismatch");
  Node n;
  n.kind = OpKind::BceLoss;
  n.inputs = {prob, target};
  n.cols = 1;
  n.scalar = true;
  n.static_row = true;
  return push(std::move(n));
}

int Graph::weighted_sum(int gate, const std::vector<int>& banks, std::size_t unit_width) {
  const Node& ng = check_id(gate, "weighted_sum");
  if (banks.empty()) throw std::invalid_argument("weighted_sum: no expert banks");
  if (unit_width == 0) throw std::invalid_argument("weighted_sum: zero unit width");
  std::size_t experts = 0;
  for (int bid : banks) {
    const Node& nb = check_id(bid, "weighted_sum");
    if (nb.cols % unit_width != 0)
      throw std::invalid_argument("weighted_sum: bank width " + std::to_string(nb.cols) +
                                  " not a multiple of unit width");
    experts += nb.cols / unit_width;
  }
  if (ng.cols != experts)
    throw std::invalid_argument("weighted_sum: gate width " + std::to_string(ng.cols) +
                                " does not match expert count " + std::to_string(experts));
  Node n;
  n.kind = OpKind::WeightedSum;
  n.inputs = {gate};
  n.inputs.insert(n.inputs.end(), banks.begin(), banks.end());
  n.cols = unit_width;
  n.unit_width = unit_width;
  n.num_options = experts;
  return push(std::move(n));
}

int Graph::dselect_gate(int codes, int mix, std::size_t num_options, double gamma) {
  const Node& nc = check_id(codes, "dselect_gate");
  const Node& nm = check_id(mix, "dselect_gate");
  if (nc.kind != OpKind::Param || nc.leaf_shape.size() != 2)
    throw std::invalid_argument("dselect_gate: codes must be a rank-2 param");
  if (nm.kind != OpKind::Param || nm.leaf_shape.size() != 1)
    throw std::invalid_argument("dselect_gate: mix must be a rank-1 param");
  if (nm.leaf_shape[0] != nc.leaf_shape[0])
    throw std::invalid_argument("dselect_gate: mix length must equal selector count");
  if (num_options < 1) throw std::invalid_argument("dselect_gate: no options");
  const std::size_t m = nc.leaf_shape[1];
  if ((std::size_t{1} << m) < num_options)
    throw std::invalid_argument("dselect_gate: " + std::to_string(m) +
                                " bits cannot address " + std::to_string(num_options) + " experts");
  if (gamma <= 0) throw std::invalid_argument("dselect_gate: gamma must be positive");
  Node n;
  n.kind = OpKind::DSelectGate;
  n.inputs = {codes, mix};
  n.cols = num_options;
  n.num_options = num_options;
  n.gamma = gamma;
  n.static_row = true;
  return push(std::move(n));
}

int Graph::saturation_penalty(int codes, double gamma) {
  check_id(codes, "saturation_penalty");
  if (gamma <= 0) throw std::invalid_argument("saturation_penalty: gamma must be positive");
  Node n;
  n.kind = OpKind::SaturationPenalty;
  n.inputs = {codes};
  n.cols = 1;
  n.scalar = true;
  n.static_row = true;
  n.gamma = gamma;
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Workspace

Workspace::Workspace(const Graph& g) : g_(&g) {
  const std::size_t n = static_cast<std::size_t>(g.node_count());
  vals_.resize(n);
  bound_.assign(n, nullptr);
  grads_.resize(n);
  grad_pass_.assign(n, 0);
  std::vector<int> trainables;
  for (int id : g.leaf_ids())
    if (g.node(id).trainable) trainables.push_back(id);
  set_grad_leaves(trainables);
}

void Workspace::fail(int node, const std::string& msg) const {
  throw std::runtime_error("node " + std::to_string(node) + ": " + msg);
}

void Workspace::bind(int leaf_id, const Tensor* storage) {
  const Node& n = g_->node(leaf_id);
  if (n.kind != OpKind::Input && n.kind != OpKind::Param)
    fail(leaf_id, "bind target is not a leaf");
  if (storage == nullptr) fail(leaf_id, "null bind");
  bound_[static_cast<std::size_t>(leaf_id)] = storage;
}

void Workspace::bind(const std::string& leaf_name, const Tensor* storage) {
  int id = g_->find_leaf(leaf_name);
  if (id < 0) throw std::invalid_argument("bind: no leaf named " + leaf_name);
  bind(id, storage);
}

void Workspace::set_grad_leaves(const std::vector<int>& leaf_ids) {
  reach_.assign(static_cast<std::size_t>(g_->node_count()), 0);
  for (int id : leaf_ids) {
    const Node& n = g_->node(id);
    if (n.kind != OpKind::Input && n.kind != OpKind::Param)
      fail(id, "grad leaf is not a leaf");
    reach_[static_cast<std::size_t>(id)] = 1;
  }
  for (int i = 0; i < g_->node_count(); ++i) {
    const Node& n = g_->node(i);
    for (int in : n.inputs)
      if (reach_[static_cast<std::size_t>(in)]) {
        reach_[static_cast<std::size_t>(i)] = 1;
        break;
      }
  }
}

const Tensor& Workspace::value(int node) const {
  const Node& n = g_->node(node);
  if (n.kind == OpKind::Input || n.kind == OpKind::Param) {
    const Tensor* b = bound_[static_cast<std::size_t>(node)];
    if (!b) fail(node, "leaf " + n.name + " is not bound");
    return *b;
  }
  return vals_[static_cast<std::size_t>(node)];
}

double Workspace::scalar_value(int node) const {
  const Tensor& t = value(node);
  if (t.size() != 1) fail(node, "not a scalar");
  return t.data[0];
}

const Tensor& Workspace::grad(int node) const {
  if (!grad_touched(node)) fail(node, "gradient was not produced in this pass");
  return grads_[static_cast<std::size_t>(node)];
}

void Workspace::eval() {
  for (int i = 0; i < g_->node_count(); ++i) {
    const Node& n = g_->node(i);
    if (n.kind == OpKind::Input || n.kind == OpKind::Param) {
      const Tensor* b = bound_[static_cast<std::size_t>(i)];
      if (!b) fail(i, "leaf " + n.name + " is not bound");
      if (n.kind == OpKind::Param) {
        if (b->shape != n.leaf_shape)
          fail(i, "param " + n.name + " bound with shape " + shape_str(*b));
      } else {
        if (b->cols() != n.cols || b->rows() == 0)
          fail(i, "input " + n.name + " bound with shape " + shape_str(*b));
      }
      continue;
    }
    forward_node(i);
  }
}

namespace {
std::size_t out_rows(const Tensor& a) { return a.rows(); }
}  // namespace

void Workspace::forward_node(int i) {
  const Node& n = g_->node(i);
  Tensor& out = vals_[static_cast<std::size_t>(i)];
  auto in = [&](int k) -> const Tensor& { return value(n.inputs[static_cast<std::size_t>(k)]); };
  auto shape_out = [&](std::size_t r, std::size_t c) {
    if (out.shape.size() == 2 && out.shape[1] == c) {
      if (out.shape[0] != r) out.resize_rows(r);
    } else {
      out.resize({r, c});
    }
  };

  switch (n.kind) {
    case OpKind::Affine: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      if (x.cols() != w.rows()) fail(i, "affine width mismatch at eval");
      shape_out(out_rows(x), w.cols());
      const std::size_t r = out_rows(x), kdim = x.cols(), c = w.cols();
      if (kdim <= 16 && c >= 8) {
        // skinny inner dimension (input-side projections): fused bias +
        // short accumulation chain writes the output once; a GEMM plus a
        // bias pass would stream the output three times instead
        constexpr std::size_t kTile = 256;
        const double* __restrict xp = x.data.data();
        const double* __restrict wp = w.data.data();
        const double* __restrict bp = b.data.data();
        double* __restrict op = out.data.data();
        for (std::size_t c0 = 0; c0 < c; c0 += kTile) {
          const std::size_t tc = std::min(kTile, c - c0);
          for (std::size_t rr = 0; rr < r; ++rr) {
            const double* __restrict xr = xp + rr * kdim;
            double* __restrict orow = op + rr * c + c0;
            const double* __restrict brow = bp + c0;
            if (tc == kTile) {  // constant trip count so the loops vectorize
              for (std::size_t t = 0; t < kTile; ++t) orow[t] = brow[t];
              for (std::size_t j = 0; j < kdim; ++j) {
                const double xv = xr[j];
                const double* __restrict wrow = wp + j * c + c0;
                for (std::size_t t = 0; t < kTile; ++t) orow[t] += xv * wrow[t];
              }
            } else {
              for (std::size_t t = 0; t < tc; ++t) orow[t] = brow[t];
              for (std::size_t j = 0; j < kdim; ++j) {
                const double xv = xr[j];
                const double* __restrict wrow = wp + j * c + c0;
                for (std::size_t t = 0; t < tc; ++t) orow[t] += xv * wrow[t];
              }
            }
          }
        }
      } else {
        mat(out).noalias() = cmat(x) * cmat(w);
        mat(out).rowwise() += VecCMap(b.data.data(), static_cast<Eigen::Index>(b.size())).transpose();
      }
      break;
    }
    case OpKind::Relu: {
      const Tensor& x = in(0);
      shape_out(x.rows(), x.cols());
      const std::size_t sz = x.size();
      // restrict-qualified raw pointers: buffer accessors are opaque to the
      // vectorizer, so without them these loops compile to scalar code
      const double* __restrict xp = x.data.data();
      double* __restrict op = out.data.data();
      for (std::size_t k = 0; k < sz; ++k) op[k] = xp[k] > 0.0 ? xp[k] : 0.0;
      break;
    }
    case OpKind::Sigmoid: {
      const Tensor& x = in(0);
      shape_out(x.rows(), x.cols());
      const std::size_t sz = x.size();
      const double* __restrict xp = x.data.data();
      double* __restrict op = out.data.data();
      for (std::size_t k = 0; k < sz; ++k) op[k] = 1.0 / (1.0 + std::exp(-xp[k]));
      break;
    }
    case OpKind::SoftmaxRows: {
      const Tensor& x = in(0);
      shape_out(x.rows(), x.cols());
      const std::size_t r = x.rows(), c = x.cols();
      for (std::size_t b = 0; b < r; ++b) {
        const double* xr = x.data.data() + b * c;
        double* orow = out.data.data() + b * c;
        double mx = xr[0];
        for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, xr[k]);
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
          orow[k] = std::exp(xr[k] - mx);
          s += orow[k];
        }
        const double inv = 1.0 / s;
        for (std::size_t k = 0; k < c; ++k) orow[k] *= inv;
      }
      break;
    }
    case OpKind::Add:
    case OpKind::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (!a.same_shape(b) && !(a.rows() == b.rows() && a.cols() == b.cols()))
        fail(i, "elementwise shape mismatch " + shape_str(a) + " vs " + shape_str(b));
      shape_out(a.rows(), a.cols());
      const std::size_t sz = a.size();
      if (n.kind == OpKind::Add)
        for (std::size_t k = 0; k < sz; ++k) out.data[k] = a.data[k] + b.data[k];
      else
        for (std::size_t k = 0; k < sz; ++k) out.data[k] = a.data[k] * b.data[k];
      break;
    }
    case OpKind::MeanAll: {
      const Tensor& x = in(0);
      if (x.size() == 0) fail(i, "mean of empty tensor");
      double s = 0.0;
      for (double v : x.data) s += v;
      out.shape = {1};
      out.data.assign(1, s / static_cast<double>(x.size()));
      break;
    }
    case OpKind::MseLoss: {
      const Tensor& p = in(0);
      const Tensor& t = in(1);
      if (p.rows() != t.rows() || p.cols() != t.cols())
        fail(i, "mse shape mismatch " + shape_str(p) + " vs " + shape_str(t));
      double s = 0.0;
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double d = p.data[k] - t.data[k];
        s += d * d;
      }
      out.shape = {1};
      out.data.assign(1, s / static_cast<double>(p.size()));
      break;
    }
    case OpKind::BceLoss: {
      const Tensor& p = in(0);
      const Tensor& t = in(1);
      if (p.rows() != t.rows() || p.cols() != t.cols())
        fail(i, "bce shape mismatch " + shape_str(p) + " vs " + shape_str(t));
      double s = 0.0;
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double pc = std::clamp(p.data[k], kBceClamp, 1.0 - kBceClamp);
        s += -(t.data[k] * std::log(pc) + (1.0 - t.data[k]) * std::log(1.0 - pc));
      }
      out.shape = {1};
      out.data.assign(1, s / static_cast<double>(p.size()));
      break;
    }
    case OpKind::WeightedSum: {
      const Tensor& gate = in(0);
      const std::size_t h = n.unit_width;
      std::size_t rows = 0;
      for (std::size_t bi = 1; bi < n.inputs.size(); ++bi) {
        const Tensor& bank = in(static_cast<int>(bi));
        if (rows == 0)
          rows = bank.rows();
        else if (bank.rows() != rows)
          fail(i, "bank row mismatch");
      }
      const bool bcast = gate.rows() == 1;
      if (!bcast && gate.rows() != rows) fail(i, "gate rows do not match banks");
      shape_out(rows, h);
      MapM o = mat(out);
      std::size_t e = 0;
      bool first = true;  // assign on the first slice instead of zero-fill + accumulate
      for (std::size_t bi = 1; bi < n.inputs.size(); ++bi) {
        const Tensor& bank = in(static_cast<int>(bi));
        MapC bm = cmat(bank);
        const std::size_t slices = bank.cols() / h;
        for (std::size_t s = 0; s < slices; ++s, ++e) {
          auto blk = bm.block(0, static_cast<Eigen::Index>(s * h), bm.rows(),
                              static_cast<Eigen::Index>(h));
          if (bcast) {
            if (first)
              o.noalias() = gate.data[e] * blk;
            else
              o.noalias() += gate.data[e] * blk;
          } else {
            MapC gm = cmat(gate);
            auto scaled = blk.array().colwise() * gm.col(static_cast<Eigen::Index>(e)).array();
            if (first)
              o.array() = scaled;
            else
              o.array() += scaled;
          }
          first = false;
        }
      }
      if (first) o.setZero();  // no slices at all
      break;
    }
    case OpKind::DSelectGate: {
      const Tensor& codes = in(0);
      const Tensor& mixv = in(1);
      const std::size_t k = codes.rows(), m = codes.cols(), nopt = n.num_options;
      shape_out(1, nopt);
      // selector weights: softmax over mix
      double mx = mixv.data[0];
      for (std::size_t r = 1; r < k; ++r) mx = std::max(mx, mixv.data[r]);
      std::vector<double> w(k);
      double ws = 0.0;
      for (std::size_t r = 0; r < k; ++r) {
        w[r] = std::exp(mixv.data[r] - mx);
        ws += w[r];
      }
      for (std::size_t r = 0; r < k; ++r) w[r] /= ws;
      std::vector<double> raw(nopt, 0.0);
      for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t e = 0; e < nopt; ++e) {
          double q = 1.0;
          for (std::size_t j = 0; j < m; ++j) {
            const double s = smooth_step(codes.at(r, j), n.gamma);
            q *= ((e >> j) & 1) ? s : 1.0 - s;
          }
          raw[e] += w[r] * q;
        }
      }
      double total = 0.0;
      for (double v : raw) total += v;
      if (total < kGateFloor) {
        for (std::size_t e = 0; e < nopt; ++e) out.data[e] = 1.0 / static_cast<double>(nopt);
      } else {
        for (std::size_t e = 0; e < nopt; ++e) out.data[e] = raw[e] / total;
      }
      break;
    }
    case OpKind::SaturationPenalty: {
      const Tensor& codes = in(0);
      double s = 0.0;
      for (double z : codes.data) {
        const double v = smooth_step(z, n.gamma);
        s += v * (1.0 - v);
      }
      out.shape = {1};
      out.data.assign(1, s);
      break;
    }
    case OpKind::Input:
    case OpKind::Param:
      break;
  }
}

Tensor& Workspace::grad_accum_target(int node) { return grads_[static_cast<std::size_t>(node)]; }

// Returns the grad buffer shaped like the node's value. `fresh` reports
// whether this is the first write of the pass (assign instead of
// accumulate); the caller must then mark it written via the pass stamp,
// which this helper performs.
Tensor& Workspace::grad_buf(int node, bool& fresh) {
  const std::size_t idx = static_cast<std::size_t>(node);
  Tensor& gbuf = grads_[idx];
  fresh = grad_pass_[idx] != pass_;
  if (fresh) {
    const Tensor& v = value(node);
    if (!gbuf.same_shape(v)) gbuf.resize(v.shape);
    grad_pass_[idx] = pass_;
  }
  return gbuf;
}

// Zero-fill variant for kernels that write the buffer piecewise.
void Workspace::ensure_zeroed(int node) {
  bool fresh = false;
  Tensor& gbuf = grad_buf(node, fresh);
  if (fresh) gbuf.fill(0.0);
}

void Workspace::backward(std::span<const std::pair<int, double>> seeds) {
  ++pass_;
  if (pass_ == 0) {  // wrapped; invalidate all stamps
    std::fill(grad_pass_.begin(), grad_pass_.end(), std::uint32_t{0});
    pass_ = 1;
  }
  for (const auto& [node, seed] : seeds) {
    const Node& n = g_->node(node);
    if (!(n.scalar || value(node).size() == 1)) fail(node, "backward seed on non-scalar node");
    bool fresh = false;
    Tensor& gbuf = grad_buf(node, fresh);
    if (fresh)
      gbuf.data[0] = seed;
    else
      gbuf.data[0] += seed;
  }
  for (int i = g_->node_count() - 1; i >= 0; --i) {
    const Node& n = g_->node(i);
    if (n.kind == OpKind::Input || n.kind == OpKind::Param) continue;
    if (!grad_touched(i)) continue;
    backward_node(i);
  }
}

void Workspace::backward_node(int i) {
  const Node& n = g_->node(i);
  const Tensor& dout = grads_[static_cast<std::size_t>(i)];
  auto in_id = [&](int k) { return n.inputs[static_cast<std::size_t>(k)]; };
  auto in = [&](int k) -> const Tensor& { return value(in_id(k)); };
  auto wants = [&](int k) { return reach_[static_cast<std::size_t>(in_id(k))] != 0; };

  switch (n.kind) {
    case OpKind::Affine: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      MapC dm = cmat(dout);
      if (wants(1)) {
        bool fresh = false;
        Tensor& gw = grad_buf(in_id(1), fresh);
        if (fresh)
          mat(gw).noalias() = cmat(x).transpose() * dm;
        else
          mat(gw).noalias() += cmat(x).transpose() * dm;
      }
      if (wants(2)) {
        bool fresh = false;
        Tensor& gb = grad_buf(in_id(2), fresh);
        // row-streaming accumulate; a colwise reduction would walk the
        // row-major buffer with a full-row stride per output lane
        const std::size_t r = dout.rows(), c = dout.cols();
        const double* __restrict dp = dout.data.data();
        double* __restrict gp = gb.data.data();
        if (fresh) std::fill(gp, gp + c, 0.0);
        for (std::size_t rr = 0; rr < r; ++rr) {
          const double* __restrict drow = dp + rr * c;
          for (std::size_t k = 0; k < c; ++k) gp[k] += drow[k];
        }
      }
      if (wants(0)) {
        bool fresh = false;
        Tensor& gx = grad_buf(in_id(0), fresh);
        if (fresh)
          mat(gx).noalias() = dm * cmat(w).transpose();
        else
          mat(gx).noalias() += dm * cmat(w).transpose();
      }
      break;
    }
    case OpKind::Relu: {
      if (!wants(0)) break;
      const Tensor& x = in(0);
      bool fresh = false;
      Tensor& gx = grad_buf(in_id(0), fresh);
      const std::size_t sz = x.size();
      // restrict-qualified raw pointers: buffer accessors are opaque to the
      // vectorizer, so without them these loops compile to scalar code
      const double* __restrict xp = x.data.data();
      const double* __restrict dp = dout.data.data();
      double* __restrict gp = gx.data.data();
      if (fresh)
        for (std::size_t k = 0; k < sz; ++k) gp[k] = xp[k] > 0.0 ? dp[k] : 0.0;
      else
        for (std::size_t k = 0; k < sz; ++k)
          if (xp[k] > 0.0) gp[k] += dp[k];
      break;
    }
    case OpKind::Sigmoid: {
      if (!wants(0)) break;
      const Tensor& y = vals_[static_cast<std::size_t>(i)];
      bool fresh = false;
      Tensor& gx = grad_buf(in_id(0), fresh);
      const std::size_t sz = y.size();
      const double* __restrict yp = y.data.data();
      const double* __restrict dp = dout.data.data();
      double* __restrict gp = gx.data.data();
      if (fresh)
        for (std::size_t k = 0; k < sz; ++k) gp[k] = dp[k] * yp[k] * (1.0 - yp[k]);
      else
        for (std::size_t k = 0; k < sz; ++k) gp[k] += dp[k] * yp[k] * (1.0 - yp[k]);
      break;
    }
    case OpKind::SoftmaxRows: {
      if (!wants(0)) break;
      const Tensor& y = vals_[static_cast<std::size_t>(i)];
      ensure_zeroed(in_id(0));
      Tensor& gx = grad_accum_target(in_id(0));
      const std::size_t r = y.rows(), c = y.cols();
      for (std::size_t b = 0; b < r; ++b) {
        const double* yr = y.data.data() + b * c;
        const double* dr = dout.data.data() + b * c;
        double* gr = gx.data.data() + b * c;
        double dot = 0.0;
        for (std::size_t k = 0; k < c; ++k) dot += yr[k] * dr[k];
        for (std::size_t k = 0; k < c; ++k) gr[k] += yr[k] * (dr[k] - dot);
      }
      break;
    }
    case OpKind::Add: {
      for (int a = 0; a < 2; ++a) {
        if (!wants(a)) continue;
        bool fresh = false;
        Tensor& g = grad_buf(in_id(a), fresh);
        const std::size_t sz = dout.size();
        if (fresh)
          for (std::size_t k = 0; k < sz; ++k) g.data[k] = dout.data[k];
        else
          for (std::size_t k = 0; k < sz; ++k) g.data[k] += dout.data[k];
      }
      break;
    }
    case OpKind::Mul: {
      for (int a = 0; a < 2; ++a) {
        if (!wants(a)) continue;
        const Tensor& other = in(1 - a);
        bool fresh = false;
        Tensor& g = grad_buf(in_id(a), fresh);
        const std::size_t sz = dout.size();
        if (fresh)
          for (std::size_t k = 0; k < sz; ++k) g.data[k] = dout.data[k] * other.data[k];
        else
          for (std::size_t k = 0; k < sz; ++k) g.data[k] += dout.data[k] * other.data[k];
      }
      break;
    }
    case OpKind::MeanAll: {
      if (!wants(0)) break;
      const Tensor& x = in(0);
      const double c = dout.data[0] / static_cast<double>(x.size());
      bool fresh = false;
      Tensor& gx = grad_buf(in_id(0), fresh);
      const std::size_t sz = x.size();
      if (fresh)
        for (std::size_t k = 0; k < sz; ++k) gx.data[k] = c;
      else
        for (std::size_t k = 0; k < sz; ++k) gx.data[k] += c;
      break;
    }
    case OpKind::MseLoss: {
      const Tensor& p = in(0);
      const Tensor& t = in(1);
      const double c = 2.0 * dout.data[0] / static_cast<double>(p.size());
      if (wants(0)) {
        bool fresh = false;
        Tensor& gp = grad_buf(in_id(0), fresh);
        const std::size_t sz = p.size();
        if (fresh)
          for (std::size_t k = 0; k < sz; ++k) gp.data[k] = c * (p.data[k] - t.data[k]);
        else
          for (std::size_t k = 0; k < sz; ++k) gp.data[k] += c * (p.data[k] - t.data[k]);
      }
      if (wants(1)) {
        bool fresh = false;
        Tensor& gt = grad_buf(in_id(1), fresh);
        const std::size_t sz = p.size();
        if (fresh)
          for (std::size_t k = 0; k < sz; ++k) gt.data[k] = -c * (p.data[k] - t.data[k]);
        else
          for (std::size_t k = 0; k < sz; ++k) gt.data[k] += -c * (p.data[k] - t.data[k]);
      }
      break;
    }
    case OpKind::BceLoss: {
      const Tensor& p = in(0);
      const Tensor& t = in(1);
      const double inv_n = dout.data[0] / static_cast<double>(p.size());
      if (wants(0)) {
        bool fresh = false;
        Tensor& gp = grad_buf(in_id(0), fresh);
        const std::size_t sz = p.size();
        for (std::size_t k = 0; k < sz; ++k) {
          // zero slope where the prob was clamped; matches the evaluated loss
          double g = 0.0;
          if (p.data[k] > kBceClamp && p.data[k] < 1.0 - kBceClamp)
            g = inv_n * (p.data[k] - t.data[k]) / (p.data[k] * (1.0 - p.data[k]));
          if (fresh)
            gp.data[k] = g;
          else
            gp.data[k] += g;
        }
      }
      if (wants(1)) {
        bool fresh = false;
        Tensor& gt = grad_buf(in_id(1), fresh);
        const std::size_t sz = p.size();
        for (std::size_t k = 0; k < sz; ++k) {
          const double pc = std::clamp(p.data[k], kBceClamp, 1.0 - kBceClamp);
          const double g = inv_n * (std::log(1.0 - pc) - std::log(pc));
          if (fresh)
            gt.data[k] = g;
          else
            gt.data[k] += g;
        }
      }
      break;
    }
    case OpKind::WeightedSum: {
      const Tensor& gate = in(0);
      const std::size_t h = n.unit_width;
      const bool bcast = gate.rows() == 1;
      MapC dm = cmat(dout);
      if (wants(0)) ensure_zeroed(in_id(0));
      std::size_t e = 0;
      for (std::size_t bi = 1; bi < n.inputs.size(); ++bi) {
        const int bid = in_id(static_cast<int>(bi));
        const Tensor& bank = in(static_cast<int>(bi));
        MapC bm = cmat(bank);
        const std::size_t slices = bank.cols() / h;
        const bool wb = wants(static_cast<int>(bi));
        bool bank_fresh = false;
        if (wb) {
          Tensor& gb = grad_buf(bid, bank_fresh);
          // slices tile the full bank, so a fresh buffer takes plain
          // assignment per slice; zero-fill only when they would not cover it
          if (bank_fresh && slices * h != bank.cols()) {
            gb.fill(0.0);
            bank_fresh = false;
          }
        }
        for (std::size_t s = 0; s < slices; ++s, ++e) {
          auto blk = bm.block(0, static_cast<Eigen::Index>(s * h), bm.rows(),
                              static_cast<Eigen::Index>(h));
          if (wb) {
            Tensor& gb = grad_accum_target(bid);
            MapM gbm = mat(gb);
            auto gblk = gbm.block(0, static_cast<Eigen::Index>(s * h), gbm.rows(),
                                  static_cast<Eigen::Index>(h));
            if (bcast) {
              if (bank_fresh)
                gblk.noalias() = gate.data[e] * dm;
              else
                gblk.noalias() += gate.data[e] * dm;
            } else {
              MapC gm = cmat(gate);
              auto scaled = dm.array().colwise() * gm.col(static_cast<Eigen::Index>(e)).array();
              if (bank_fresh)
                gblk.array() = scaled;
              else
                gblk.array() += scaled;
            }
          }
          if (wants(0)) {
            Tensor& gg = grad_accum_target(in_id(0));
            if (bcast) {
              gg.data[e] += (dm.array() * blk.array()).sum();
            } else {
              MapM ggm = mat(gg);
              ggm.col(static_cast<Eigen::Index>(e)) += (dm.array() * blk.array()).rowwise().sum().matrix();
            }
          }
        }
      }
      break;
    }
    case OpKind::DSelectGate: {
      const Tensor& codes = in(0);
      const Tensor& mixv = in(1);
      const Tensor& gout = vals_[static_cast<std::size_t>(i)];
      const std::size_t k = codes.rows(), m = codes.cols(), nopt = n.num_options;
      // recompute forward intermediates (tiny tensors)
      double mx = mixv.data[0];
      for (std::size_t r = 1; r < k; ++r) mx = std::max(mx, mixv.data[r]);
      std::vector<double> w(k);
      double ws = 0.0;
      for (std::size_t r = 0; r < k; ++r) {
        w[r] = std::exp(mixv.data[r] - mx);
        ws += w[r];
      }
      for (std::size_t r = 0; r < k; ++r) w[r] /= ws;
      std::vector<double> sval(k * m), sder(k * m);
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t j = 0; j < m; ++j) {
          sval[r * m + j] = smooth_step(codes.at(r, j), n.gamma);
          sder[r * m + j] = smooth_step_deriv(codes.at(r, j), n.gamma);
        }
      std::vector<double> q(k * nopt);
      double total = 0.0;
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t e = 0; e < nopt; ++e) {
          double v = 1.0;
          for (std::size_t j = 0; j < m; ++j)
            v *= ((e >> j) & 1) ? sval[r * m + j] : 1.0 - sval[r * m + j];
          q[r * nopt + e] = v;
          total += w[r] * v;
        }
      if (total < kGateFloor) break;  // uniform fallback is locally constant
      // dL/d(raw_e) through the renormalization
      double c = 0.0;
      for (std::size_t e = 0; e < nopt; ++e) c += dout.data[e] * gout.data[e];
      std::vector<double> draw(nopt);
      for (std::size_t e = 0; e < nopt; ++e) draw[e] = (dout.data[e] - c) / total;
      if (wants(1)) {
        std::vector<double> dw(k, 0.0);
        for (std::size_t r = 0; r < k; ++r)
          for (std::size_t e = 0; e < nopt; ++e) dw[r] += draw[e] * q[r * nopt + e];
        double dot = 0.0;
        for (std::size_t r = 0; r < k; ++r) dot += dw[r] * w[r];
        bool fresh = false;
        Tensor& gm = grad_buf(in_id(1), fresh);
        for (std::size_t r = 0; r < k; ++r) {
          const double g = w[r] * (dw[r] - dot);
          if (fresh)
            gm.data[r] = g;
          else
            gm.data[r] += g;
        }
      }
      if (wants(0)) {
        ensure_zeroed(in_id(0));
        Tensor& gc = grad_accum_target(in_id(0));
        for (std::size_t r = 0; r < k; ++r)
          for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t e = 0; e < nopt; ++e) {
              // product over the other bits
              double rest = 1.0;
              for (std::size_t j2 = 0; j2 < m; ++j2) {
                if (j2 == j) continue;
                rest *= ((e >> j2) & 1) ? sval[r * m + j2] : 1.0 - sval[r * m + j2];
              }
              const double sign = ((e >> j) & 1) ? 1.0 : -1.0;
              acc += draw[e] * w[r] * sign * rest;
            }
            gc.at(r, j) += acc * sder[r * m + j];
          }
      }
      break;
    }
    case OpKind::SaturationPenalty: {
      if (!wants(0)) break;
      const Tensor& codes = in(0);
      bool fresh = false;
      Tensor& gc = grad_buf(in_id(0), fresh);
      const double seed = dout.data[0];
      const std::size_t sz = codes.size();
      for (std::size_t kk = 0; kk < sz; ++kk) {
        const double s = smooth_step(codes.data[kk], n.gamma);
        const double g = seed * smooth_step_deriv(codes.data[kk], n.gamma) * (1.0 - 2.0 * s);
        if (fresh)
          gc.data[kk] = g;
        else
          gc.data[kk] += g;
      }
      break;
    }
    case OpKind::Input:
    case OpKind::Param:
      break;
  }
}

// ---------------------------------------------------------------------------
// Name-keyed wrappers

namespace {
Workspace make_bound_workspace(const Graph& g, const NamedTensors& leaves) {
  Workspace ws(g);
  for (int id : g.leaf_ids()) {
    const Node& n = g.node(id);
    auto it = leaves.find(n.name);
    if (it == leaves.end()) throw std::invalid_argument("eval: missing leaf " + n.name);
    if (!it->second.all_finite())
      throw std::invalid_argument("eval: non-finite values in leaf " + n.name);
    ws.bind(id, &it->second);
  }
  return ws;
}
}  // namespace

Tensor eval_node(const Graph& g, const NamedTensors& leaves, int node) {
  Workspace ws = make_bound_workspace(g, leaves);
  ws.eval();
  return ws.value(node);
}

NamedTensors backward_all(const Graph& g, const NamedTensors& leaves, int scalar_node) {
  Workspace ws = make_bound_workspace(g, leaves);
  ws.set_grad_leaves(g.leaf_ids());
  ws.eval();
  const std::pair<int, double> seed{scalar_node, 1.0};
  ws.backward(std::span<const std::pair<int, double>>(&seed, 1));
  NamedTensors out;
  for (int id : g.leaf_ids()) {
    const Node& n = g.node(id);
    if (ws.grad_touched(id)) {
      out[n.name] = ws.grad(id);
    } else {
      Tensor z;
      z.resize(ws.value(id).shape);
      out[n.name] = std::move(z);
    }
  }
  return out;
}

}  // namespace ranmtl
