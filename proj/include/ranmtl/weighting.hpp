#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ranmtl/adam.hpp"
#include "ranmtl/rng.hpp"
#include "ranmtl/tensor.hpp"

namespace ranmtl {

// Eleven task-balancing strategies. The five loss balancers reduce the task
// losses to one scalar objective, realized as per-task seed coefficients for
// a single combined backward pass. The six gradient balancers take the
// per-task gradients of the shared parameters and aggregate them into one
// update direction; task-specific parameter gradients are never reweighted.
enum class Weighting {
  EW,
  UW,
  DWA,
  GLS,
  RLW,
  MGDA,
  CAGrad,
  GradNorm,
  PCGrad,
  GradVac,
  GradDrop,
};

const char* weighting_name(Weighting w);
Weighting weighting_from_name(const std::string& s);
const std::vector<Weighting>& all_weightings();
bool is_gradient_balancer(Weighting w);

struct WeightingConfig {
  Weighting kind = Weighting::EW;
  double dwa_temperature = 2.0;
  double gls_floor = 1e-8;
  double cagrad_c = 0.4;
  double gradnorm_alpha = 1.5;
  double gradnorm_lr = 0.025;
  double gradnorm_floor = 1e-3;  // weights never clamp below this
  double gradvac_beta = 1e-2;
};

// Mutable per-strategy state. One instance per trained model; all stochastic
// strategies draw from the embedded stream, so a run is a pure function of
// (data, seeds).
struct WeightingState {
  WeightingConfig cfg;
  std::size_t tasks = 0;
  // UW: s_t = log sigma_t^2, stepped alongside the model parameters.
  NamedTensors uw_params;  // single entry "s", shape [T]
  AdamState uw_adam;
  // DWA: per-task mean losses of the last two finished epochs.
  std::vector<double> dwa_prev;   // L(k-1)
  std::vector<double> dwa_prev2;  // L(k-2)
  std::size_t epochs_recorded = 0;
  // GradNorm: positive task weights summing to T, and first-call losses.
  std::vector<double> gn_w;
  std::vector<double> gn_initial;
  // GradVac: pair similarity EMAs, phi[i * tasks + j].
  std::vector<double> gv_phi;
  Rng rng{0};  // RLW / PCGrad / GradDrop draws
};

WeightingState make_weighting_state(const WeightingConfig& cfg, std::size_t tasks,
                                    std::uint64_t seed);

// --- loss balancers ---
double ew_combine(const std::vector<double>& losses);
// Sum of 0.5 * (exp(-s_t) L_t + s_t).
double uw_combine(const std::vector<double>& losses, const std::vector<double>& s);
// d(uw_combine)/d(s_t) in closed form: 0.5 * (1 - exp(-s_t) L_t).
std::vector<double> uw_s_grads(const std::vector<double>& losses, const std::vector<double>& s);
// Geometric mean; losses clamped at `floor` from below.
double gls_combine(const std::vector<double>& losses, double floor);
// Weights from the last two epoch-mean losses; sum is the task count.
std::vector<double> dwa_weights(const std::vector<double>& prev, const std::vector<double>& prev2,
                                double temperature);
// Fresh softmax-normalized standard normals; sum 1.
std::vector<double> rlw_weights(Rng& rng, std::size_t tasks);

// --- gradient balancers ---
// `grads` is [T, P]: row t is task t's flattened shared-parameter gradient.

struct MgdaResult {
  std::vector<double> alpha;  // simplex weights
  Tensor direction;           // [P], sum_t alpha_t g_t
};
// Min-norm point in the convex hull of the task gradients (Frank-Wolfe,
// max 250 iterations, duality gap 1e-10).
MgdaResult mgda_direction(const Tensor& grads);

// Mean gradient pulled toward the worst task within radius c * ||mean||.
// c = 0 returns the mean bitwise.
Tensor cagrad_direction(const Tensor& grads, double c);

// The inner problem's simplex weights (projected-gradient solve); exposed so
// oracle tests can evaluate the objective at the solver's minimizer.
std::vector<double> cagrad_weights(const Tensor& grads, double c);

// One weight step toward equalized relative gradient norms, then the
// weighted sum. Mutates st.gn_w / st.gn_initial.
Tensor gradnorm_combine(const Tensor& grads, const std::vector<double>& losses,
                        WeightingState& st);

// Projects each task gradient off the others it conflicts with (others
// visited in shuffled order), then sums.
Tensor pcgrad_combine(const Tensor& grads, Rng& rng);

// Pulls each pair's cosine similarity up to its EMA target, then sums.
// Mutates st.gv_phi.
Tensor gradvac_combine(const Tensor& grads, WeightingState& st);

// Per-coordinate sign lottery: keep positive or negative parts with
// probability given by the sign purity, then sum.
Tensor graddrop_combine(const Tensor& grads, Rng& rng);

// Euclidean projection onto { w : w >= 0, sum w = 1 }.
std::vector<double> project_simplex(std::vector<double> v);

// --- trainer-facing entry points ---

// Seed coefficients for one combined backward pass. Mutates stream state
// (RLW draw, UW s-step using this step's losses). Gradient balancers get
// all-ones seeds; their work happens in combine_gradients.
std::vector<double> loss_seeds(WeightingState& st, const AdamConfig& opt,
                               const std::vector<double>& losses);

// Aggregated shared-parameter direction. Only valid for gradient balancers.
Tensor combine_gradients(WeightingState& st, const Tensor& grads,
                         const std::vector<double>& losses);

// Records per-task epoch-mean losses (the DWA history).
void end_epoch(WeightingState& st, const std::vector<double>& epoch_losses);

}  // namespace ranmtl
