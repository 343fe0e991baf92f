#include "ranmtl/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ranmtl/rng.hpp"

namespace ranmtl {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kLightSpeed = 299792458.0;

// stream tags so every consumer of the master seed is independent
constexpr std::uint64_t kCityTag = 0x5C11;
constexpr std::uint64_t kSnapTag = 0xD07;
constexpr std::uint64_t kSplitTag = 0x5B17;
constexpr std::uint64_t kShadowTag = 0x5AAD;
}  // namespace

ScenarioConfig desk_preset() { return ScenarioConfig{}; }

ScenarioConfig paper_preset() {
  ScenarioConfig cfg;
  cfg.ues_per_snapshot = 1000;
  return cfg;
}

int snapshots_for_city(const ScenarioConfig& cfg, int city_index) {
  const long long s = cfg.snapshots, c = cfg.cities, i = city_index;
  return static_cast<int>((i + 1) * s / c - i * s / c);
}

std::size_t train_count(const ScenarioConfig& cfg, std::size_t n) {
  return static_cast<std::size_t>(std::floor(cfg.split_train * static_cast<double>(n)));
}

std::size_t val_count(const ScenarioConfig& cfg, std::size_t n) {
  return static_cast<std::size_t>(std::floor(cfg.split_val * static_cast<double>(n)));
}

City generate_city(const ScenarioConfig& cfg, int city_index) {
  if (cfg.cities < 1 || cfg.bs_per_city < 1 || cfg.sectors_per_bs < 1)
    throw std::invalid_argument("scenario: counts must be positive");
  if (cfg.building_side_min_m > cfg.building_side_max_m ||
      cfg.building_side_max_m >= cfg.extent_m)
    throw std::invalid_argument("scenario: building sides incompatible with the extent");
  if (cfg.split_train < 0 || cfg.split_val < 0 || cfg.split_train + cfg.split_val > 1.0)
    throw std::invalid_argument("scenario: split fractions out of range");

  City city;
  city.index = city_index;

  const double cx = cfg.extent_m / 2.0, cy = cfg.extent_m / 2.0;
  for (int b = 0; b < cfg.bs_per_city; ++b) {
    const double ang = kPi / 2.0 + b * 2.0 * kPi / cfg.bs_per_city;
    city.bs_xy.push_back({cx + cfg.bs_ring_radius_m * std::cos(ang),
                          cy + cfg.bs_ring_radius_m * std::sin(ang)});
  }

  Rng rng(derive_seed(cfg.seed, {kCityTag, static_cast<std::uint64_t>(city_index)}));
  double area = 0.0;
  const double budget = 0.7 * cfg.extent_m * cfg.extent_m;
  for (int i = 0; i < cfg.buildings_per_city; ++i) {
    Building bld{};
    bool placed = false;
    // masts sit on open ground; redraw footprints that would swallow one
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const double sx = rng.uniform(cfg.building_side_min_m, cfg.building_side_max_m);
      const double sy = rng.uniform(cfg.building_side_min_m, cfg.building_side_max_m);
      bld.x0 = rng.uniform(0.0, cfg.extent_m - sx);
      bld.y0 = rng.uniform(0.0, cfg.extent_m - sy);
      bld.x1 = bld.x0 + sx;
      bld.y1 = bld.y0 + sy;
      bld.h = rng.uniform(cfg.building_height_min_m, cfg.building_height_max_m);
      placed = true;
      for (const auto& bs : city.bs_xy)
        if (bs[0] > bld.x0 && bs[0] < bld.x1 && bs[1] > bld.y0 && bs[1] < bld.y1) {
          placed = false;
          break;
        }
    }
    if (!placed) throw std::runtime_error("scenario: could not place building clear of masts");
    area += (bld.x1 - bld.x0) * (bld.y1 - bld.y0);
    if (area > budget)
      throw std::runtime_error("scenario: building layout infeasible, footprint over 70% of area");
    city.buildings.push_back(bld);
  }

  for (int carrier = 0; carrier < 2; ++carrier)
    for (int b = 0; b < cfg.bs_per_city; ++b)
      for (int s = 0; s < cfg.sectors_per_bs; ++s) {
        Cell c;
        c.bs = b;
        c.sector = s;
        c.secondary = carrier == 1;
        c.freq_hz = carrier == 1 ? cfg.secondary_freq_hz : cfg.primary_freq_hz;
        c.boresight_rad = s * 2.0 * kPi / cfg.sectors_per_bs;
        city.cells.push_back(c);
      }
  return city;
}

double fspl_1m_db(double freq_hz) {
  return 20.0 * std::log10(4.0 * kPi * freq_hz / kLightSpeed);
}

double path_loss_db(const ScenarioConfig& cfg, double dist3_m, bool los, double freq_hz) {
  const double n = los ? cfg.pathloss_exp_los : cfg.pathloss_exp_nlos;
  return fspl_1m_db(freq_hz) + 10.0 * n * std::log10(std::max(dist3_m, 1.0));
}

double sector_gain_db(const ScenarioConfig& cfg, double off_boresight_rad) {
  const double s = std::sin(off_boresight_rad / 2.0);
  return std::max(-cfg.sector_depth_db * s * s, cfg.sector_floor_db);
}

double shadow_db(const ScenarioConfig& cfg, double x, double y, std::uint64_t global_cell) {
  const std::uint64_t h = derive_seed(cfg.seed, {kShadowTag, bits_of(x), bits_of(y), global_cell});
  Rng r(h);
  return cfg.shadow_sigma_db * r.normal();
}

bool is_indoor(double x, double y, const std::vector<Building>& buildings) {
  for (const Building& b : buildings)
    if (x > b.x0 && x < b.x1 && y > b.y0 && y < b.y1) return true;
  return false;
}

bool segment_blocked(const std::array<double, 3>& a, const std::array<double, 3>& b,
                     const Building& box) {
  const double lo[3] = {box.x0, box.y0, 0.0};
  const double hi[3] = {box.x1, box.y1, box.h};
  double t0 = 0.0, t1 = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double d = b[k] - a[k];
    if (std::abs(d) < 1e-15) {
      // parallel to the slab: on or outside a face never blocks
      if (a[k] <= lo[k] || a[k] >= hi[k]) return false;
    } else {
      double u = (lo[k] - a[k]) / d;
      double v = (hi[k] - a[k]) / d;
      if (u > v) std::swap(u, v);
      t0 = std::max(t0, u);
      t1 = std::min(t1, v);
      if (t0 >= t1) return false;
    }
  }
  if (t1 - t0 <= 1e-12) return false;
  // strict-interior probe at the interval midpoint; face and edge grazing
  // stay line-of-sight
  const double tm = 0.5 * (t0 + t1);
  for (int k = 0; k < 3; ++k) {
    const double p = a[k] + tm * (b[k] - a[k]);
    if (p <= lo[k] || p >= hi[k]) return false;
  }
  return true;
}

bool is_los(const ScenarioConfig& cfg, const std::array<double, 2>& ue_xy,
            const std::array<double, 2>& bs_xy, const std::vector<Building>& buildings) {
  const std::array<double, 3> a{ue_xy[0], ue_xy[1], cfg.ue_height_m};
  const std::array<double, 3> b{bs_xy[0], bs_xy[1], cfg.bs_height_m};
  for (const Building& bb : buildings)
    if (segment_blocked(a, b, bb)) return false;
  return true;
}

namespace {
double rsrp_given(const ScenarioConfig& cfg, const City& city, const std::array<double, 2>& ue,
                  int cell_index, bool los, bool indoor) {
  const Cell& cell = city.cells[static_cast<std::size_t>(cell_index)];
  const auto& bs = city.bs_xy[static_cast<std::size_t>(cell.bs)];
  const double dx = ue[0] - bs[0], dy = ue[1] - bs[1];
  const double dz = cfg.bs_height_m - cfg.ue_height_m;
  const double d3 = std::sqrt(dx * dx + dy * dy + dz * dz);
  double delta = std::atan2(dy, dx) - cell.boresight_rad;
  while (delta > kPi) delta -= 2.0 * kPi;
  while (delta < -kPi) delta += 2.0 * kPi;
  const std::uint64_t gcell = static_cast<std::uint64_t>(city.index) *
                                  static_cast<std::uint64_t>(cfg.cells_per_city()) +
                              static_cast<std::uint64_t>(cell_index);
  double p = cfg.eirp_dbm + sector_gain_db(cfg, delta) -
             path_loss_db(cfg, d3, los, cell.freq_hz) -
             shadow_db(cfg, ue[0], ue[1], gcell);
  if (!los) p -= cfg.nlos_extra_db;
  if (indoor) p -= cfg.wall_loss_db;
  return p;
}
}  // namespace

double rsrp_dbm(const ScenarioConfig& cfg, const City& city, const std::array<double, 2>& ue_xy,
                int cell_index) {
  const Cell& cell = city.cells[static_cast<std::size_t>(cell_index)];
  const bool los = is_los(cfg, ue_xy, city.bs_xy[static_cast<std::size_t>(cell.bs)], city.buildings);
  const bool indoor = is_indoor(ue_xy[0], ue_xy[1], city.buildings);
  return rsrp_given(cfg, city, ue_xy, cell_index, los, indoor);
}

namespace {
// generation-order staging for one node
struct Staging {
  std::vector<double> x, sc, ps, in, los;
  std::size_t n = 0;
};

void fill_block(SampleBlock& blk, const Staging& st, const std::vector<std::size_t>& idx,
                std::size_t beg, std::size_t end, std::size_t d_in, std::size_t d_sc) {
  blk.n = end - beg;
  blk.x.reserve(blk.n * d_in);
  blk.y_sc.reserve(blk.n * d_sc);
  blk.y_ps.reserve(blk.n * 3);
  blk.y_in.reserve(blk.n);
  blk.y_los.reserve(blk.n * d_sc);
  for (std::size_t k = beg; k < end; ++k) {
    const std::size_t i = idx[k];
    blk.x.insert(blk.x.end(), st.x.begin() + static_cast<std::ptrdiff_t>(i * d_in),
                 st.x.begin() + static_cast<std::ptrdiff_t>((i + 1) * d_in));
    blk.y_sc.insert(blk.y_sc.end(), st.sc.begin() + static_cast<std::ptrdiff_t>(i * d_sc),
                    st.sc.begin() + static_cast<std::ptrdiff_t>((i + 1) * d_sc));
    blk.y_ps.insert(blk.y_ps.end(), st.ps.begin() + static_cast<std::ptrdiff_t>(i * 3),
                    st.ps.begin() + static_cast<std::ptrdiff_t>((i + 1) * 3));
    blk.y_in.push_back(st.in[i]);
    blk.y_los.insert(blk.y_los.end(), st.los.begin() + static_cast<std::ptrdiff_t>(i * d_sc),
                     st.los.begin() + static_cast<std::ptrdiff_t>((i + 1) * d_sc));
  }
}
}  // namespace

Dataset generate_dataset(const ScenarioConfig& cfg) {
  Dataset ds;
  ds.config = cfg;
  const std::size_t d_in = static_cast<std::size_t>(cfg.primary_cells());
  const std::size_t d_sc = d_in;

  std::vector<Staging> staging(static_cast<std::size_t>(cfg.cities * cfg.bs_per_city));

  for (int ci = 0; ci < cfg.cities; ++ci) {
    const City city = generate_city(cfg, ci);
    const int snaps = snapshots_for_city(cfg, ci);
    std::vector<bool> los_bs(static_cast<std::size_t>(cfg.bs_per_city));
    std::vector<double> feat(d_in);
    for (int s = 0; s < snaps; ++s) {
      Rng rng(derive_seed(cfg.seed, {kSnapTag, static_cast<std::uint64_t>(ci),
                                     static_cast<std::uint64_t>(s)}));
      for (int u = 0; u < cfg.ues_per_snapshot; ++u) {
        const std::array<double, 2> ue{rng.uniform(0.0, cfg.extent_m),
                                       rng.uniform(0.0, cfg.extent_m)};
        const bool indoor = is_indoor(ue[0], ue[1], city.buildings);
        for (int b = 0; b < cfg.bs_per_city; ++b)
          los_bs[static_cast<std::size_t>(b)] =
              is_los(cfg, ue, city.bs_xy[static_cast<std::size_t>(b)], city.buildings);

        int best = 0;
        for (std::size_t j = 0; j < d_in; ++j) {
          const Cell& cell = city.cells[j];
          feat[j] = rsrp_given(cfg, city, ue, static_cast<int>(j),
                               los_bs[static_cast<std::size_t>(cell.bs)], indoor);
          if (feat[j] > feat[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
        }
        const int home_bs = city.cells[static_cast<std::size_t>(best)].bs;
        Staging& st = staging[static_cast<std::size_t>(ci * cfg.bs_per_city + home_bs)];
        st.x.insert(st.x.end(), feat.begin(), feat.end());
        for (std::size_t j = 0; j < d_sc; ++j) {
          const std::size_t cell_index = d_in + j;
          const Cell& cell = city.cells[cell_index];
          st.sc.push_back(rsrp_given(cfg, city, ue, static_cast<int>(cell_index),
                                     los_bs[static_cast<std::size_t>(cell.bs)], indoor));
          st.los.push_back(los_bs[static_cast<std::size_t>(cell.bs)] ? 1.0 : 0.0);
        }
        st.ps.push_back(ue[0]);
        st.ps.push_back(ue[1]);
        st.ps.push_back(cfg.ue_height_m);
        st.in.push_back(indoor ? 1.0 : 0.0);
        st.n += 1;
      }
    }
  }

  for (int ci = 0; ci < cfg.cities; ++ci)
    for (int b = 0; b < cfg.bs_per_city; ++b) {
      const Staging& st = staging[static_cast<std::size_t>(ci * cfg.bs_per_city + b)];
      if (st.n < cfg.min_node_samples)
        throw std::runtime_error("scenario: node " + std::to_string(ci) + "/" + std::to_string(b) +
                                 " has only " + std::to_string(st.n) + " samples");
      NodeDataset node;
      node.city = ci;
      node.bs = b;
      node.d_in = d_in;
      node.d_sc = d_sc;

      std::vector<std::size_t> idx(st.n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      Rng rng(derive_seed(cfg.seed, {kSplitTag, static_cast<std::uint64_t>(ci),
                                     static_cast<std::uint64_t>(b)}));
      rng.shuffle(idx);
      const std::size_t n_tr = train_count(cfg, st.n);
      const std::size_t n_val = val_count(cfg, st.n);
      fill_block(node.train, st, idx, 0, n_tr, d_in, d_sc);
      fill_block(node.val, st, idx, n_tr, n_tr + n_val, d_in, d_sc);
      fill_block(node.test, st, idx, n_tr + n_val, st.n, d_in, d_sc);

      fit_feature_stats(node);

      ds.nodes.push_back(std::move(node));
    }
  return ds;
}

void fit_feature_stats(NodeDataset& node) {
  const std::size_t d_in = node.d_in;
  node.feat_mean.assign(d_in, 0.0);
  node.feat_std.assign(d_in, 0.0);
  for (std::size_t i = 0; i < node.train.n; ++i)
    for (std::size_t j = 0; j < d_in; ++j) node.feat_mean[j] += node.train.x[i * d_in + j];
  for (std::size_t j = 0; j < d_in; ++j) node.feat_mean[j] /= static_cast<double>(node.train.n);
  for (std::size_t i = 0; i < node.train.n; ++i)
    for (std::size_t j = 0; j < d_in; ++j) {
      const double d = node.train.x[i * d_in + j] - node.feat_mean[j];
      node.feat_std[j] += d * d;
    }
  for (std::size_t j = 0; j < d_in; ++j)
    node.feat_std[j] =
        std::max(std::sqrt(node.feat_std[j] / static_cast<double>(node.train.n)), 1e-6);
}

namespace {
void prepare_block(PreparedSplit& out, const SampleBlock& blk, const NodeDataset& node,
                   const ScenarioConfig& cfg, const std::vector<Task>& tasks,
                   const PreparedData& stats) {
  const std::size_t d_in = node.d_in, d_sc = node.d_sc, n = blk.n;
  out.n = n;
  out.x.resize({n, d_in});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d_in; ++j)
      out.x.data[i * d_in + j] = (blk.x[i * d_in + j] - node.feat_mean[j]) / node.feat_std[j];
  for (Task t : tasks) {
    switch (t) {
      case Task::SC: {
        Tensor y;
        y.resize({n, d_sc});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d_sc; ++j)
            y.data[i * d_sc + j] =
                (blk.y_sc[i * d_sc + j] - stats.sc_mean[j]) / stats.sc_std[j];
        out.y[t] = std::move(y);
        break;
      }
      case Task::PS: {
        Tensor y;
        y.resize({n, 3});
        for (std::size_t k = 0; k < n * 3; ++k) y.data[k] = blk.y_ps[k] / cfg.ps_scale_m;
        out.y[t] = std::move(y);
        break;
      }
      case Task::IN: {
        Tensor y;
        y.shape = {n, 1};
        y.data = blk.y_in;
        out.y[t] = std::move(y);
        break;
      }
      case Task::LOS: {
        Tensor y;
        y.shape = {n, d_sc};
        y.data = blk.y_los;
        out.y[t] = std::move(y);
        break;
      }
    }
  }
}

void append_split(PreparedSplit& dst, const PreparedSplit& src) {
  if (dst.n == 0) {
    dst = src;
    return;
  }
  const std::size_t d = dst.x.cols();
  dst.x.data.insert(dst.x.data.end(), src.x.data.begin(), src.x.data.end());
  dst.x.shape = {dst.n + src.n, d};
  for (auto& [t, y] : dst.y) {
    const Tensor& sy = src.y.at(t);
    y.data.insert(y.data.end(), sy.data.begin(), sy.data.end());
    y.shape = {dst.n + src.n, y.shape[1]};
  }
  dst.n += src.n;
}
}  // namespace

PreparedData prepare_node(const NodeDataset& node, const ScenarioConfig& cfg,
                          const std::vector<Task>& tasks) {
  if (tasks.empty()) throw std::invalid_argument("prepare_node: empty task set");
  PreparedData out;
  out.d_in = node.d_in;
  out.ps_scale_m = cfg.ps_scale_m;
  const auto specs = make_task_specs(node.d_sc);
  for (Task t : tasks) out.specs.push_back(spec_for(specs, t));
  const bool wants_sc = std::find(tasks.begin(), tasks.end(), Task::SC) != tasks.end();
  if (wants_sc) {
    // standardize the regression targets like the features: train-split
    // stats, applied to every split
    const std::size_t d_sc = node.d_sc, n = node.train.n;
    if (n == 0) throw std::invalid_argument("prepare_node: empty train split");
    out.sc_mean.assign(d_sc, 0.0);
    out.sc_std.assign(d_sc, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d_sc; ++j) out.sc_mean[j] += node.train.y_sc[i * d_sc + j];
    for (std::size_t j = 0; j < d_sc; ++j) out.sc_mean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d_sc; ++j) {
        const double d = node.train.y_sc[i * d_sc + j] - out.sc_mean[j];
        out.sc_std[j] += d * d;
      }
    for (std::size_t j = 0; j < d_sc; ++j)
      out.sc_std[j] = std::max(std::sqrt(out.sc_std[j] / static_cast<double>(n)), 1e-6);
  }
  prepare_block(out.train, node.train, node, cfg, tasks, out);
  prepare_block(out.val, node.val, node, cfg, tasks, out);
  prepare_block(out.test, node.test, node, cfg, tasks, out);
  return out;
}

PreparedData prepare_merged(const std::vector<const NodeDataset*>& nodes,
                            const ScenarioConfig& cfg, const std::vector<Task>& tasks) {
  if (nodes.empty()) throw std::invalid_argument("prepare_merged: no nodes");
  PreparedData out = prepare_node(*nodes[0], cfg, tasks);
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    PreparedData nd = prepare_node(*nodes[i], cfg, tasks);
    append_split(out.train, nd.train);
    append_split(out.val, nd.val);
    append_split(out.test, nd.test);
  }
  // rows keep per-origin-node scaling, so no single stat vector applies
  out.sc_mean.clear();
  out.sc_std.clear();
  return out;
}

}  // namespace ranmtl
