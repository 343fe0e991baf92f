#include "ranmtl/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace ranmtl {

namespace {
constexpr std::size_t kEvalChunk = 256;
}

NodeTrainer::NodeTrainer(const ArchitectureConfig& arch, const PreparedData* data,
                         const TrainConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      data_(data),
      model_(build_model(arch, derive_seed(seed, {1}))),
      ws_(model_.graph),
      adam_{cfg.opt},
      wstate_(make_weighting_state(cfg.weighting, arch.tasks.size(),
                                   derive_seed(seed, {3}))),
      shuffle_(derive_seed(seed, {2})) {
  if (data_ == nullptr) throw std::invalid_argument("trainer: null dataset");
  if (data_->train.n == 0) throw std::invalid_argument("trainer: empty train split");
  if (cfg_.batch == 0) throw std::invalid_argument("trainer: zero batch size");
  if (data_->d_in != arch.input_dim)
    throw std::invalid_argument("trainer: dataset/architecture input dim mismatch");

  batch_x_ = Tensor::zeros({cfg_.batch, data_->d_in});
  ws_.bind(model_.x_node, &batch_x_);
  for (const TaskSpec& s : model_.specs) {
    batch_y_[s.id] = Tensor::zeros({cfg_.batch, s.out_dim});
    ws_.bind(model_.label_nodes.at(s.id), &batch_y_.at(s.id));
  }
  for (const auto& [name, tensor] : model_.params.tensors) ws_.bind(name, &tensor);

  for (const std::string& name : model_.params.shared_order) {
    const Tensor& t = model_.params.tensors.at(name);
    shared_leaves_.push_back(model_.graph.find_leaf(name));
    shared_grad_.emplace(name, Tensor::zeros(t.shape));
    shared_size_ += t.size();
  }
  for (const TaskSpec& s : model_.specs) {
    auto& ids = task_leaf_ids_[s.id];
    auto& bufs = task_grad_[s.id];
    for (const std::string& name : model_.params.task_order.at(s.id)) {
      ids.push_back(model_.graph.find_leaf(name));
      bufs.push_back(Tensor::zeros(model_.params.tensors.at(name).shape));
      task_leaves_.push_back(ids.back());
    }
  }
  all_leaves_ = shared_leaves_;
  all_leaves_.insert(all_leaves_.end(), task_leaves_.begin(), task_leaves_.end());
  gmat_ = Tensor::zeros({model_.specs.size(), shared_size_});
}

void NodeTrainer::apply_grad_leaves(UpdateMask mask) {
  if (mask_set_ && mask.shared == mask_shared_ && mask.task == mask_task_) return;
  if (mask.shared && mask.task) {
    ws_.set_grad_leaves(all_leaves_);
  } else if (mask.shared) {
    ws_.set_grad_leaves(shared_leaves_);
  } else {
    ws_.set_grad_leaves(task_leaves_);
  }
  mask_shared_ = mask.shared;
  mask_task_ = mask.task;
  mask_set_ = true;
}

void NodeTrainer::load_rows(const PreparedSplit& split, const std::size_t* rows,
                            std::size_t n) {
  const std::size_t d = data_->d_in;
  batch_x_.resize_rows(n);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(split.x.data.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                batch_x_.data.begin() + static_cast<std::ptrdiff_t>(i * d));
  for (const TaskSpec& s : model_.specs) {
    const Tensor& src = split.y.at(s.id);
    Tensor& dst = batch_y_.at(s.id);
    dst.resize_rows(n);
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(src.data.begin() + static_cast<std::ptrdiff_t>(rows[i] * s.out_dim),
                  s.out_dim,
                  dst.data.begin() + static_cast<std::ptrdiff_t>(i * s.out_dim));
  }
}

std::vector<double> NodeTrainer::task_losses() const {
  std::vector<double> losses;
  losses.reserve(model_.specs.size());
  for (const TaskSpec& s : model_.specs)
    losses.push_back(ws_.scalar_value(model_.loss_nodes.at(s.id)));
  return losses;
}

void NodeTrainer::run_batch(const std::size_t* rows, std::size_t n, UpdateMask mask,
                            std::vector<double>& losses) {
  load_rows(data_->train, rows, n);
  ws_.eval();
  losses = task_losses();

  std::vector<std::pair<std::string, const Tensor*>> updates;
  const bool grad_balancer = is_gradient_balancer(cfg_.weighting.kind);

  if (!grad_balancer || !mask.shared) {
    // Loss balancers take one multi-seeded pass. Gradient balancers with the
    // shared trunk frozen degrade to the same thing with unit seeds: each
    // task's parameters receive gradient from its own loss alone, so the
    // combined pass equals the per-task passes bitwise.
    std::vector<std::pair<int, double>> seeds;
    const std::vector<double> w =
        grad_balancer ? std::vector<double>(losses.size(), 1.0)
                      : loss_seeds(wstate_, cfg_.opt, losses);
    for (std::size_t t = 0; t < model_.specs.size(); ++t)
      seeds.emplace_back(model_.loss_nodes.at(model_.specs[t].id), w[t]);
    if (model_.reg_node >= 0 && mask.task)
      seeds.emplace_back(model_.reg_node, model_.reg_coef);
    ws_.backward(seeds);
    if (mask.shared)
      for (std::size_t k = 0; k < shared_leaves_.size(); ++k)
        if (ws_.grad_touched(shared_leaves_[k]))
          updates.emplace_back(model_.params.shared_order[k], &ws_.grad(shared_leaves_[k]));
    if (mask.task)
      for (const TaskSpec& s : model_.specs) {
        const auto& names = model_.params.task_order.at(s.id);
        const auto& ids = task_leaf_ids_.at(s.id);
        for (std::size_t i = 0; i < names.size(); ++i)
          if (ws_.grad_touched(ids[i])) updates.emplace_back(names[i], &ws_.grad(ids[i]));
      }
  } else {
    // One pass per task; shared gradients land in the matrix the balancer
    // combines, task gradients are copied out before the next pass clears
    // them.
    const std::size_t T = model_.specs.size();
    for (std::size_t t = 0; t < T; ++t) {
      const Task id = model_.specs[t].id;
      std::vector<std::pair<int, double>> seeds{{model_.loss_nodes.at(id), 1.0}};
      if (mask.task && model_.penalty_nodes.count(id))
        seeds.emplace_back(model_.penalty_nodes.at(id), model_.reg_coef);
      ws_.backward(seeds);
      double* dst = gmat_.data.data() + t * shared_size_;
      for (std::size_t k = 0; k < shared_leaves_.size(); ++k) {
        const int leaf = shared_leaves_[k];
        const std::size_t sz = model_.params.tensors.at(model_.params.shared_order[k]).size();
        if (ws_.grad_touched(leaf)) {
          const Tensor& g = ws_.grad(leaf);
          std::copy_n(g.data.begin(), sz, dst);
        } else {
          std::fill_n(dst, sz, 0.0);
        }
        dst += sz;
      }
      if (mask.task) {
        const auto& ids = task_leaf_ids_.at(id);
        auto& bufs = task_grad_.at(id);
        for (std::size_t i = 0; i < ids.size(); ++i)
          if (ws_.grad_touched(ids[i])) bufs[i].data = ws_.grad(ids[i]).data;
      }
    }
    const Tensor combined = combine_gradients(wstate_, gmat_, losses);
    const double* src = combined.data.data();
    for (const std::string& name : model_.params.shared_order) {
      Tensor& buf = shared_grad_.at(name);
      std::copy_n(src, buf.size(), buf.data.begin());
      src += buf.size();
      updates.emplace_back(name, &buf);
    }
    if (mask.task)
      for (const TaskSpec& s : model_.specs) {
        const auto& names = model_.params.task_order.at(s.id);
        const auto& bufs = task_grad_.at(s.id);
        for (std::size_t i = 0; i < names.size(); ++i)
          updates.emplace_back(names[i], &bufs[i]);
      }
  }

  adam_step(model_.params.tensors, updates, adam_);
}

void NodeTrainer::train_one_epoch(UpdateMask mask) {
  const std::size_t n = data_->train.n;
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  shuffle_.shuffle(order_);

  std::vector<double> epoch_losses(model_.specs.size(), 0.0);
  std::vector<double> batch_losses;
  for (std::size_t start = 0; start < n; start += cfg_.batch) {
    const std::size_t take = std::min(cfg_.batch, n - start);
    run_batch(order_.data() + start, take, mask, batch_losses);
    for (std::size_t t = 0; t < batch_losses.size(); ++t)
      epoch_losses[t] += batch_losses[t] * static_cast<double>(take);
  }
  for (double& v : epoch_losses) v /= static_cast<double>(n);
  end_epoch(wstate_, epoch_losses);

  val_trace_.push_back(evaluate(data_->val).total_loss);
  ++epochs_run_;
}

void NodeTrainer::train_epochs(int n, UpdateMask mask) {
  if (n < 0) throw std::invalid_argument("trainer: negative epoch count");
  if (!mask.shared && !mask.task)
    throw std::invalid_argument("trainer: mask frozen on both groups");
  apply_grad_leaves(mask);
  for (int e = 0; e < n; ++e) train_one_epoch(mask);
}

EvalResult NodeTrainer::evaluate(const PreparedSplit& split) { return evaluate(split, *data_); }

EvalResult NodeTrainer::evaluate(const PreparedSplit& split, const PreparedData& stats) {
  if (split.n == 0) throw std::invalid_argument("trainer: empty evaluation split");
  MetricAccumulator acc(model_.specs);
  std::vector<std::size_t> rows(std::min<std::size_t>(kEvalChunk, split.n));
  for (std::size_t start = 0; start < split.n; start += kEvalChunk) {
    const std::size_t take = std::min(kEvalChunk, split.n - start);
    rows.resize(take);
    std::iota(rows.begin(), rows.end(), start);
    load_rows(split, rows.data(), take);
    ws_.eval();
    for (const TaskSpec& s : model_.specs)
      acc.add(s.id, ws_.value(model_.output_nodes.at(s.id)), batch_y_.at(s.id),
              ws_.scalar_value(model_.loss_nodes.at(s.id)), take);
  }
  return acc.finish(stats);
}

}  // namespace ranmtl
