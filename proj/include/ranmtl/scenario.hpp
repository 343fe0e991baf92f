#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "ranmtl/tasks.hpp"
#include "ranmtl/tensor.hpp"

namespace ranmtl {

// Synthetic dense-urban radio environment. Each city is a square with a
// triangle of three base stations, each carrying three sectors on a low
// primary carrier and three on a high secondary carrier. Users are dropped
// uniformly per snapshot; received powers follow a log-distance model with
// blockage-dependent exponent, a sector pattern, wall loss for indoor users
// and hash-keyed log-normal shadowing, so every value is a pure function of
// (config, seed).
struct ScenarioConfig {
  std::uint64_t seed = 1;
  int cities = 4;
  int bs_per_city = 3;
  int sectors_per_bs = 3;
  double extent_m = 2000.0;
  int buildings_per_city = 40;
  double building_side_min_m = 20.0;
  double building_side_max_m = 80.0;
  double building_height_min_m = 10.0;
  double building_height_max_m = 60.0;
  double bs_ring_radius_m = 600.0;
  double bs_height_m = 25.0;
  double ue_height_m = 1.5;
  double primary_freq_hz = 900e6;
  double secondary_freq_hz = 4.5e9;
  double eirp_dbm = 43.0;
  double sector_depth_db = 14.0;   // pattern attenuation scale away from boresight
  double sector_floor_db = -6.0;   // back-lobe floor
  double wall_loss_db = 15.0;
  double nlos_extra_db = 10.0;
  double shadow_sigma_db = 4.0;
  double pathloss_exp_los = 2.0;
  double pathloss_exp_nlos = 3.0;
  int snapshots = 350;       // total, apportioned over cities
  int ues_per_snapshot = 100;
  double split_train = 0.6;
  double split_val = 0.2;
  std::size_t min_node_samples = 10;
  double ps_scale_m = 1000.0;  // position labels are trained in these units

  int primary_cells() const { return bs_per_city * sectors_per_bs; }
  int cells_per_city() const { return 2 * primary_cells(); }
};

// Full-size variant: an order of magnitude more users per snapshot.
ScenarioConfig desk_preset();
ScenarioConfig paper_preset();

// Axis-aligned box, footprint [x0,x1]x[y0,y1], height from ground to h.
struct Building {
  double x0, y0, x1, y1, h;
};

struct Cell {
  int bs;            // base station index within the city
  int sector;        // 0..sectors-1
  bool secondary;    // carrier
  double freq_hz;
  double boresight_rad;
};

struct City {
  int index = 0;
  std::vector<Building> buildings;
  std::vector<std::array<double, 2>> bs_xy;
  std::vector<Cell> cells;  // primary cells first (bs-major), then secondary
};

// Deterministic layout for one city. Throws when the building parameters
// cannot fit (total footprint above 70% of the area).
City generate_city(const ScenarioConfig& cfg, int city_index);

// --- propagation pieces, exposed for direct checking ---

// Free-space loss at the 1 m reference distance.
double fspl_1m_db(double freq_hz);

// Reference loss plus 10*n*log10(d); d is clamped below at 1 m.
double path_loss_db(const ScenarioConfig& cfg, double dist3_m, bool los, double freq_hz);

// Relative pattern gain, 0 dB at boresight, floored back lobe.
double sector_gain_db(const ScenarioConfig& cfg, double off_boresight_rad);

// Log-normal shadowing draw keyed by (seed, position bits, global cell id).
double shadow_db(const ScenarioConfig& cfg, double x, double y, std::uint64_t global_cell);

// Strictly-interior point-in-footprint test over the union of buildings.
bool is_indoor(double x, double y, const std::vector<Building>& buildings);

// Exact segment/box blockage: true when the open interior of some building
// intersects the straight path in more than a point set of measure zero.
bool segment_blocked(const std::array<double, 3>& a, const std::array<double, 3>& b,
                     const Building& box);
bool is_los(const ScenarioConfig& cfg, const std::array<double, 2>& ue_xy,
            const std::array<double, 2>& bs_xy, const std::vector<Building>& buildings);

// Received power for one user/cell link with every term applied.
double rsrp_dbm(const ScenarioConfig& cfg, const City& city, const std::array<double, 2>& ue_xy,
                int cell_index);

// --- per-node datasets ---

struct SampleBlock {
  std::size_t n = 0;
  std::vector<double> x;      // n * d_in, raw received powers
  std::vector<double> y_sc;   // n * d_sc
  std::vector<double> y_ps;   // n * 3, meters
  std::vector<double> y_in;   // n
  std::vector<double> y_los;  // n * d_sc
};

struct NodeDataset {
  int city = 0;
  int bs = 0;
  std::size_t d_in = 0;
  std::size_t d_sc = 0;
  std::vector<double> feat_mean;  // train-split statistics
  std::vector<double> feat_std;
  SampleBlock train, val, test;
};

struct Dataset {
  ScenarioConfig config;
  std::vector<NodeDataset> nodes;  // cities * bs_per_city, city-major
};

// Generates every node dataset: drop users, compute features and labels,
// attach each user to the strongest primary base station, shuffle and split
// per node, fit standardization on the train split.
Dataset generate_dataset(const ScenarioConfig& cfg);

// Refits feat_mean/feat_std from the node's current train split (population
// std, floored at 1e-6). Required after replacing the train block.
void fit_feature_stats(NodeDataset& node);

// Split shares in generation units.
std::size_t train_count(const ScenarioConfig& cfg, std::size_t n);
std::size_t val_count(const ScenarioConfig& cfg, std::size_t n);

// Snapshot apportionment across cities: city i receives
// floor((i+1)S/C) - floor(iS/C) snapshots.
int snapshots_for_city(const ScenarioConfig& cfg, int city_index);

// --- training-side views ---

struct PreparedSplit {
  std::size_t n = 0;
  Tensor x;                  // standardized features
  std::map<Task, Tensor> y;  // labels in training units (PS scaled)
};

struct PreparedData {
  std::size_t d_in = 0;
  double ps_scale_m = 1000.0;  // multiply PS errors by this to report meters
  // Per-output standardization of the secondary-carrier labels, from this
  // node's train split; multiply SC errors by sc_std to report dB. Empty in
  // merged views (rows keep their origin node's scaling).
  std::vector<double> sc_mean, sc_std;
  std::vector<TaskSpec> specs;
  PreparedSplit train, val, test;
};

PreparedData prepare_node(const NodeDataset& node, const ScenarioConfig& cfg,
                          const std::vector<Task>& tasks);

// Pooled view over several nodes; each node keeps its own standardization.
PreparedData prepare_merged(const std::vector<const NodeDataset*>& nodes,
                            const ScenarioConfig& cfg, const std::vector<Task>& tasks);

}  // namespace ranmtl
