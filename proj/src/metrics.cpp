#include "ranmtl/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ranmtl {

double omega(const EvalResult& r) {
  for (Task t : {Task::SC, Task::PS, Task::IN, Task::LOS})
    if (!r.tasks.count(t))
      throw std::invalid_argument(std::string("omega: missing task ") + task_name(t));
  return r.tasks.at(Task::IN).accuracy + r.tasks.at(Task::LOS).accuracy -
         r.tasks.at(Task::SC).mae - r.tasks.at(Task::PS).mae;
}

MetricAccumulator::MetricAccumulator(const std::vector<TaskSpec>& specs) {
  for (const TaskSpec& s : specs) {
    Cell c;
    c.spec = s;
    c.abs_err.assign(s.out_dim, 0.0);
    cells_.emplace(s.id, std::move(c));
  }
}

void MetricAccumulator::add(Task t, const Tensor& pred, const Tensor& labels,
                            double chunk_loss, std::size_t rows) {
  Cell& c = cells_.at(t);
  const std::size_t d = c.spec.out_dim;
  if (pred.rows() != rows || pred.cols() != d || !labels.same_shape(pred))
    throw std::invalid_argument("metrics: prediction shape mismatch");
  c.rows += rows;
  c.loss_sum += chunk_loss * static_cast<double>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double p = pred.data[i * d + j];
      const double y = labels.data[i * d + j];
      if (c.spec.loss == LossKind::Mse) {
        c.abs_err[j] += std::abs(p - y);
      } else {
        c.correct += (p >= 0.5) == (y >= 0.5);
      }
    }
  }
}

EvalResult MetricAccumulator::finish(const PreparedData& stats) const {
  EvalResult out;
  for (const auto& [t, c] : cells_) {
    if (c.rows == 0) throw std::logic_error("metrics: no samples accumulated");
    TaskMetric m;
    const double n = static_cast<double>(c.rows);
    const double d = static_cast<double>(c.spec.out_dim);
    m.loss = c.loss_sum / n;
    if (c.spec.loss == LossKind::Mse) {
      double norm = 0.0, denorm = 0.0;
      for (std::size_t j = 0; j < c.spec.out_dim; ++j) {
        norm += c.abs_err[j];
        // SC columns were standardized per coordinate; PS was divided by the
        // single meter scale. Missing stats (merged views) fall back to 1.
        double scale = 1.0;
        if (t == Task::SC && j < stats.sc_std.size()) scale = stats.sc_std[j];
        if (t == Task::PS) scale = stats.ps_scale_m;
        denorm += scale * c.abs_err[j];
      }
      m.mae = norm / (n * d);
      m.report = denorm / (n * d);
    } else {
      m.accuracy = static_cast<double>(c.correct) / (n * d);
      m.report = m.accuracy;
    }
    out.tasks[t] = m;
    out.total_loss += m.loss;
  }
  return out;
}

}  // namespace ranmtl
