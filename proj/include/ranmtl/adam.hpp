#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ranmtl/tensor.hpp"

namespace ranmtl {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates, keyed by parameter name. Moments appear
// lazily on a parameter's first update; `step` counts update calls and
// drives bias correction.
struct AdamState {
  AdamConfig cfg;
  std::int64_t step = 0;
  NamedTensors m;
  NamedTensors v;
};

// One update over exactly the listed (name, grad) pairs. Parameters not
// listed keep their values and moments untouched. Throws when a name is
// unknown, a grad shape disagrees with its parameter, or a grad is
// non-finite.
void adam_step(NamedTensors& params,
               const std::vector<std::pair<std::string, const Tensor*>>& grads,
               AdamState& state);

}  // namespace ranmtl
