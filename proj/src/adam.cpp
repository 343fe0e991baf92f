#include "ranmtl/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace ranmtl {

void adam_step(NamedTensors& params,
               const std::vector<std::pair<std::string, const Tensor*>>& grads,
               AdamState& state) {
  const AdamConfig& c = state.cfg;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("adam_step: unknown parameter " + name);
    if (g == nullptr) throw std::invalid_argument("adam_step: missing gradient for " + name);
    Tensor& p = it->second;
    if (!g->same_shape(p))
      throw std::invalid_argument("adam_step: gradient shape " + shape_str(*g) +
                                  " does not match parameter " + name + " " + shape_str(p));
    if (!g->all_finite())
      throw std::invalid_argument("adam_step: non-finite gradient for " + name);
    Tensor& m = state.m[name];
    Tensor& v = state.v[name];
    if (!m.same_shape(p)) m.resize(p.shape);
    if (!v.same_shape(p)) v.resize(p.shape);
    const std::size_t n = p.size();
    for (std::size_t k = 0; k < n; ++k) {
      const double gk = g->data[k];
      m.data[k] = c.beta1 * m.data[k] + (1.0 - c.beta1) * gk;
      v.data[k] = c.beta2 * v.data[k] + (1.0 - c.beta2) * gk * gk;
      const double mh = m.data[k] / bc1;
      const double vh = v.data[k] / bc2;
      p.data[k] -= c.lr * mh / (std::sqrt(vh) + c.eps);
    }
  }
}

}  // namespace ranmtl
