#include "ranmtl/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ranmtl {

const char* weighting_name(Weighting w) {
  switch (w) {
    case Weighting::EW: return "EW";
    case Weighting::UW: return "UW";
    case Weighting::DWA: return "DWA";
    case Weighting::GLS: return "GLS";
    case Weighting::RLW: return "RLW";
    case Weighting::MGDA: return "MGDA";
    case Weighting::CAGrad: return "CAGrad";
    case Weighting::GradNorm: return "GradNorm";
    case Weighting::PCGrad: return "PCGrad";
    case Weighting::GradVac: return "GradVac";
    case Weighting::GradDrop: return "GradDrop";
  }
  throw std::invalid_argument("weighting_name: bad strategy id");
}

Weighting weighting_from_name(const std::string& s) {
  for (Weighting w : all_weightings())
    if (s == weighting_name(w)) return w;
  throw std::invalid_argument("unknown weighting strategy: " + s);
}

const std::vector<Weighting>& all_weightings() {
  static const std::vector<Weighting> v{
      Weighting::EW,     Weighting::UW,       Weighting::DWA,    Weighting::GLS,
      Weighting::RLW,    Weighting::MGDA,     Weighting::CAGrad, Weighting::GradNorm,
      Weighting::PCGrad, Weighting::GradVac,  Weighting::GradDrop};
  return v;
}

bool is_gradient_balancer(Weighting w) {
  switch (w) {
    case Weighting::MGDA:
    case Weighting::CAGrad:
    case Weighting::GradNorm:
    case Weighting::PCGrad:
    case Weighting::GradVac:
    case Weighting::GradDrop:
      return true;
    default:
      return false;
  }
}

WeightingState make_weighting_state(const WeightingConfig& cfg, std::size_t tasks,
                                    std::uint64_t seed) {
  if (tasks == 0) throw std::invalid_argument("weighting: zero tasks");
  WeightingState st;
  st.cfg = cfg;
  st.tasks = tasks;
  st.uw_params["s"] = Tensor::zeros({tasks});
  st.gn_w.assign(tasks, 1.0);
  st.gv_phi.assign(tasks * tasks, 0.0);
  st.rng = Rng(seed);
  return st;
}

namespace {

void check_losses(const std::vector<double>& losses, std::size_t tasks) {
  if (losses.size() != tasks) throw std::invalid_argument("weighting: wrong loss count");
  for (double l : losses)
    if (!std::isfinite(l)) throw std::invalid_argument("weighting: non-finite loss");
}

struct GradView {
  const Tensor* g;
  std::size_t T, P;

  explicit GradView(const Tensor& grads) : g(&grads) {
    if (grads.rank() != 2 || grads.rows() == 0 || grads.cols() == 0)
      throw std::invalid_argument("weighting: gradient matrix must be [tasks, dims]");
    T = grads.rows();
    P = grads.cols();
  }
  const double* row(std::size_t t) const { return g->data.data() + t * P; }
  double dot(std::size_t a, std::size_t b) const {
    return std::inner_product(row(a), row(a) + P, row(b), 0.0);
  }
  double norm(std::size_t t) const { return std::sqrt(dot(t, t)); }
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double sgn(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

}  // namespace

// --- loss balancers ---

double ew_combine(const std::vector<double>& losses) {
  if (losses.empty()) throw std::invalid_argument("weighting: no losses");
  return std::accumulate(losses.begin(), losses.end(), 0.0);
}

double uw_combine(const std::vector<double>& losses, const std::vector<double>& s) {
  if (losses.empty() || losses.size() != s.size())
    throw std::invalid_argument("weighting: loss/s size mismatch");
  double total = 0;
  for (std::size_t t = 0; t < losses.size(); ++t)
    total += 0.5 * (std::exp(-s[t]) * losses[t] + s[t]);
  return total;
}

std::vector<double> uw_s_grads(const std::vector<double>& losses, const std::vector<double>& s) {
  if (losses.empty() || losses.size() != s.size())
    throw std::invalid_argument("weighting: loss/s size mismatch");
  std::vector<double> g(losses.size());
  for (std::size_t t = 0; t < losses.size(); ++t)
    g[t] = 0.5 * (1.0 - std::exp(-s[t]) * losses[t]);
  return g;
}

double gls_combine(const std::vector<double>& losses, double floor) {
  if (losses.empty()) throw std::invalid_argument("weighting: no losses");
  // geometric mean through logs: safe against overflow on many tasks
  double log_sum = 0;
  for (double l : losses) log_sum += std::log(std::max(l, floor));
  return std::exp(log_sum / static_cast<double>(losses.size()));
}

std::vector<double> dwa_weights(const std::vector<double>& prev, const std::vector<double>& prev2,
                                double temperature) {
  if (prev.empty() || prev.size() != prev2.size())
    throw std::invalid_argument("weighting: bad loss history");
  const std::size_t T = prev.size();
  std::vector<double> z(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double r = (prev[t] > 0 && prev2[t] > 0) ? prev[t] / prev2[t] : 1.0;
    z[t] = r / temperature;
  }
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0;
  std::vector<double> w(T);
  for (std::size_t t = 0; t < T; ++t) sum += (w[t] = std::exp(z[t] - zmax));
  for (double& v : w) v *= static_cast<double>(T) / sum;
  return w;
}

std::vector<double> rlw_weights(Rng& rng, std::size_t tasks) {
  if (tasks == 0) throw std::invalid_argument("weighting: zero tasks");
  std::vector<double> z(tasks);
  for (double& v : z) v = rng.normal();
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0;
  for (double& v : z) sum += (v = std::exp(v - zmax));
  for (double& v : z) v /= sum;
  return z;
}

// --- gradient balancers ---

MgdaResult mgda_direction(const Tensor& grads) {
  const GradView G(grads);
  const std::size_t T = G.T;

  // Gram matrix; Frank-Wolfe runs entirely in it.
  std::vector<double> M(T * T);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = i; j < T; ++j) M[i * T + j] = M[j * T + i] = G.dot(i, j);

  // Frank-Wolfe with away steps (plain FW zigzags at O(1/k) and cannot hit
  // the gap target); exact line search in both branches.
  std::vector<double> alpha(T, 1.0 / static_cast<double>(T));
  std::vector<double> Ma(T);
  for (int iter = 0; iter < 250; ++iter) {
    for (std::size_t i = 0; i < T; ++i) {
      double acc = 0;
      for (std::size_t j = 0; j < T; ++j) acc += M[i * T + j] * alpha[j];
      Ma[i] = acc;
    }
    const double vv = dot(alpha, Ma);
    std::size_t best = 0;
    for (std::size_t i = 1; i < T; ++i)
      if (Ma[i] < Ma[best]) best = i;
    const double gap = vv - Ma[best];
    if (gap < 1e-10) break;
    std::size_t away = T;  // worst supported vertex
    for (std::size_t i = 0; i < T; ++i)
      if (alpha[i] > 0 && (away == T || Ma[i] > Ma[away])) away = i;
    if (Ma[away] - vv > gap && alpha[away] < 1.0) {
      // move away from the worst vertex; step capped so alpha stays feasible
      const double denom = vv - 2.0 * Ma[away] + M[away * T + away];
      if (denom <= 0) break;
      const double cap = alpha[away] / (1.0 - alpha[away]);
      const double gamma = std::clamp((Ma[away] - vv) / denom, 0.0, cap);
      for (std::size_t i = 0; i < T; ++i) alpha[i] *= 1.0 + gamma;
      alpha[away] -= gamma;
      if (gamma == cap) alpha[away] = 0.0;
    } else {
      // move toward the best vertex
      const double denom = vv - 2.0 * Ma[best] + M[best * T + best];
      if (denom <= 0) break;
      const double gamma = std::clamp(gap / denom, 0.0, 1.0);
      for (std::size_t i = 0; i < T; ++i) alpha[i] *= 1.0 - gamma;
      alpha[best] += gamma;
    }
  }

  MgdaResult out;
  out.direction = Tensor::zeros({G.P});
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = G.row(t);
    for (std::size_t p = 0; p < G.P; ++p) out.direction.data[p] += alpha[t] * row[p];
  }
  out.alpha = std::move(alpha);
  return out;
}

std::vector<double> project_simplex(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("project_simplex: empty");
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double csum = 0, theta = 0;
  std::size_t rho = 0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    csum += u[j];
    const double cand = (1.0 - csum) / static_cast<double>(j + 1);
    if (u[j] + cand > 0) {
      rho = j + 1;
      theta = cand;
    }
  }
  for (double& x : v) x = std::max(x + theta, 0.0);
  return v;
}

std::vector<double> cagrad_weights(const Tensor& grads, double c) {
  if (c < 0) throw std::invalid_argument("cagrad: negative c");
  const GradView G(grads);
  const std::size_t T = G.T, P = G.P;

  std::vector<double> g0(P, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = G.row(t);
    for (std::size_t p = 0; p < P; ++p) g0[p] += row[p];
  }
  for (double& x : g0) x /= static_cast<double>(T);
  const double norm_g0 =
      std::sqrt(std::inner_product(g0.begin(), g0.end(), g0.begin(), 0.0));

  // Everything the solver needs lives in task space: the Gram matrix and the
  // per-task dots with the mean.
  std::vector<double> M(T * T), b(T);
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t j = i; j < T; ++j) M[i * T + j] = M[j * T + i] = G.dot(i, j);
    b[i] = std::inner_product(G.row(i), G.row(i) + P, g0.begin(), 0.0);
  }

  // minimize over the simplex: w -> g_w . g0 + c ||g0|| ||g_w||
  std::vector<double> w(T, 1.0 / static_cast<double>(T)), Mw(T), step(T);
  for (int iter = 0; iter < 200; ++iter) {
    for (std::size_t i = 0; i < T; ++i) {
      double acc = 0;
      for (std::size_t j = 0; j < T; ++j) acc += M[i * T + j] * w[j];
      Mw[i] = acc;
    }
    const double norm_gw = std::sqrt(std::max(dot(w, Mw), 0.0));
    for (std::size_t i = 0; i < T; ++i) {
      double grad = b[i];
      if (norm_gw > 0) grad += c * norm_g0 * Mw[i] / norm_gw;
      step[i] = w[i] - 0.1 * grad;
    }
    w = project_simplex(step);
  }
  return w;
}

Tensor cagrad_direction(const Tensor& grads, double c) {
  if (c < 0) throw std::invalid_argument("cagrad: negative c");
  const GradView G(grads);
  const std::size_t T = G.T, P = G.P;

  Tensor g0 = Tensor::zeros({P});
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = G.row(t);
    for (std::size_t p = 0; p < P; ++p) g0.data[p] += row[p];
  }
  for (double& x : g0.data) x /= static_cast<double>(T);
  if (c == 0) return g0;  // constraint radius zero: the mean, bitwise

  const double norm_g0 =
      std::sqrt(std::inner_product(g0.data.begin(), g0.data.end(), g0.data.begin(), 0.0));
  const std::vector<double> w = cagrad_weights(grads, c);

  Tensor gw = Tensor::zeros({P});
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = G.row(t);
    for (std::size_t p = 0; p < P; ++p) gw.data[p] += w[t] * row[p];
  }
  const double norm_gw =
      std::sqrt(std::inner_product(gw.data.begin(), gw.data.end(), gw.data.begin(), 0.0));
  if (norm_gw > 0) {
    const double scale = c * norm_g0 / norm_gw;
    for (std::size_t p = 0; p < P; ++p) g0.data[p] += scale * gw.data[p];
  }
  return g0;
}

Tensor gradnorm_combine(const Tensor& grads, const std::vector<double>& losses,
                        WeightingState& st) {
  const GradView G(grads);
  const std::size_t T = G.T;
  check_losses(losses, T);
  if (st.gn_w.size() != T) throw std::invalid_argument("gradnorm: state size mismatch");
  if (st.gn_initial.empty()) st.gn_initial = losses;

  std::vector<double> norms(T), Gt(T);
  double mean_G = 0;
  for (std::size_t t = 0; t < T; ++t) {
    norms[t] = G.norm(t);
    Gt[t] = st.gn_w[t] * norms[t];
    mean_G += Gt[t];
  }
  mean_G /= static_cast<double>(T);

  std::vector<double> rel(T);
  double mean_rel = 0;
  for (std::size_t t = 0; t < T; ++t) {
    rel[t] = losses[t] / std::max(st.gn_initial[t], 1e-12);
    mean_rel += rel[t];
  }
  mean_rel = std::max(mean_rel / static_cast<double>(T), 1e-12);

  // One subgradient step on sum_t |G_t - mean(G) r_t^alpha|, target constant.
  double wsum = 0;
  for (std::size_t t = 0; t < T; ++t) {
    const double target = mean_G * std::pow(rel[t] / mean_rel, st.cfg.gradnorm_alpha);
    st.gn_w[t] -= st.cfg.gradnorm_lr * sgn(Gt[t] - target) * norms[t];
    st.gn_w[t] = std::max(st.gn_w[t], st.cfg.gradnorm_floor);
    wsum += st.gn_w[t];
  }
  for (double& w : st.gn_w) w *= static_cast<double>(T) / wsum;

  Tensor d = Tensor::zeros({G.P});
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = G.row(t);
    for (std::size_t p = 0; p < G.P; ++p) d.data[p] += st.gn_w[t] * row[p];
  }
  return d;
}

Tensor pcgrad_combine(const Tensor& grads, Rng& rng) {
  const GradView G(grads);
  const std::size_t T = G.T, P = G.P;
  Tensor out = Tensor::zeros({P});
  std::vector<double> gi(P);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < T; ++i) {
    std::copy(G.row(i), G.row(i) + P, gi.begin());
    order.clear();
    for (std::size_t j = 0; j < T; ++j)
      if (j != i) order.push_back(j);
    rng.shuffle(order);
    for (std::size_t j : order) {
      const double* gj = G.row(j);
      const double d = std::inner_product(gi.begin(), gi.end(), gj, 0.0);
      if (d >= 0) continue;
      const double nj2 = G.dot(j, j);
      if (nj2 <= 0) continue;
      const double coef = d / nj2;
      for (std::size_t p = 0; p < P; ++p) gi[p] -= coef * gj[p];
    }
    for (std::size_t p = 0; p < P; ++p) out.data[p] += gi[p];
  }
  return out;
}

Tensor gradvac_combine(const Tensor& grads, WeightingState& st) {
  const GradView G(grads);
  const std::size_t T = G.T, P = G.P;
  if (st.gv_phi.size() != T * T) throw std::invalid_argument("gradvac: state size mismatch");
  const double beta = st.cfg.gradvac_beta;

  Tensor out = Tensor::zeros({P});
  std::vector<double> gi(P);
  for (std::size_t i = 0; i < T; ++i) {
    std::copy(G.row(i), G.row(i) + P, gi.begin());
    for (std::size_t j = 0; j < T; ++j) {
      if (j == i) continue;
      const double ni =
          std::sqrt(std::inner_product(gi.begin(), gi.end(), gi.begin(), 0.0));
      const double nj = G.norm(j);
      if (ni < 1e-12 || nj < 1e-12) continue;
      const double* gj = G.row(j);
      double cos = std::inner_product(gi.begin(), gi.end(), gj, 0.0) / (ni * nj);
      cos = std::clamp(cos, -1.0, 1.0);
      const double phi = st.gv_phi[i * T + j];
      if (cos < phi && phi * phi < 1.0 - 1e-12) {
        const double lambda = ni *
                              (phi * std::sqrt(1.0 - cos * cos) -
                               cos * std::sqrt(1.0 - phi * phi)) /
                              (nj * std::sqrt(1.0 - phi * phi));
        for (std::size_t p = 0; p < P; ++p) gi[p] += lambda * gj[p];
      }
      st.gv_phi[i * T + j] = (1.0 - beta) * phi + beta * cos;
    }
    for (std::size_t p = 0; p < P; ++p) out.data[p] += gi[p];
  }
  return out;
}

Tensor graddrop_combine(const Tensor& grads, Rng& rng) {
  const GradView G(grads);
  const std::size_t T = G.T, P = G.P;
  Tensor out = Tensor::zeros({P});
  for (std::size_t p = 0; p < P; ++p) {
    double s = 0, a = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const double v = G.row(t)[p];
      s += v;
      a += std::abs(v);
    }
    if (a == 0) continue;
    const double purity = 0.5 * (1.0 + s / a);
    const bool keep_positive = rng.next_unit() < purity;
    double kept = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const double v = G.row(t)[p];
      kept += keep_positive ? std::max(v, 0.0) : std::min(v, 0.0);
    }
    out.data[p] = kept;
  }
  return out;
}

// --- trainer-facing entry points ---

std::vector<double> loss_seeds(WeightingState& st, const AdamConfig& opt,
                               const std::vector<double>& losses) {
  check_losses(losses, st.tasks);
  const std::size_t T = st.tasks;
  switch (st.cfg.kind) {
    case Weighting::EW:
      return std::vector<double>(T, 1.0);
    case Weighting::UW: {
      Tensor& s = st.uw_params.at("s");
      std::vector<double> seeds(T);
      for (std::size_t t = 0; t < T; ++t) seeds[t] = 0.5 * std::exp(-s.data[t]);
      // step s with this step's losses, simultaneous with the model update
      Tensor grad = Tensor::zeros({T});
      grad.data = uw_s_grads(losses, s.data);
      st.uw_adam.cfg = opt;
      adam_step(st.uw_params, {{"s", &grad}}, st.uw_adam);
      return seeds;
    }
    case Weighting::DWA: {
      if (st.epochs_recorded < 2) return std::vector<double>(T, 1.0);
      return dwa_weights(st.dwa_prev, st.dwa_prev2, st.cfg.dwa_temperature);
    }
    case Weighting::GLS: {
      const double gm = gls_combine(losses, st.cfg.gls_floor);
      std::vector<double> seeds(T);
      for (std::size_t t = 0; t < T; ++t)
        seeds[t] = gm / (static_cast<double>(T) * std::max(losses[t], st.cfg.gls_floor));
      return seeds;
    }
    case Weighting::RLW:
      return rlw_weights(st.rng, T);
    default:
      return std::vector<double>(T, 1.0);  // gradient balancers
  }
}

Tensor combine_gradients(WeightingState& st, const Tensor& grads,
                         const std::vector<double>& losses) {
  if (!is_gradient_balancer(st.cfg.kind))
    throw std::logic_error("combine_gradients: strategy is a loss balancer");
  if (grads.rank() != 2 || grads.rows() != st.tasks)
    throw std::invalid_argument("combine_gradients: bad gradient matrix");
  switch (st.cfg.kind) {
    case Weighting::MGDA:
      return mgda_direction(grads).direction;
    case Weighting::CAGrad:
      return cagrad_direction(grads, st.cfg.cagrad_c);
    case Weighting::GradNorm:
      return gradnorm_combine(grads, losses, st);
    case Weighting::PCGrad:
      return pcgrad_combine(grads, st.rng);
    case Weighting::GradVac:
      return gradvac_combine(grads, st);
    case Weighting::GradDrop:
      return graddrop_combine(grads, st.rng);
    default:
      throw std::logic_error("combine_gradients: unreachable");
  }
}

void end_epoch(WeightingState& st, const std::vector<double>& epoch_losses) {
  check_losses(epoch_losses, st.tasks);
  st.dwa_prev2 = st.dwa_prev;
  st.dwa_prev = epoch_losses;
  ++st.epochs_recorded;
}

}  // namespace ranmtl
