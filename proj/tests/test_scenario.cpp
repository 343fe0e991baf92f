#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ranmtl/dataset_io.hpp"
#include "ranmtl/rng.hpp"
#include "ranmtl/scenario.hpp"

using namespace ranmtl;

namespace {

// Independent blockage oracle: walk the 3D segment in ~0.1 m steps and ask
// whether any sampled point lies strictly inside a building.
bool sampled_los(const ScenarioConfig& cfg, const std::array<double, 2>& ue,
                 const std::array<double, 2>& bs, const std::vector<Building>& buildings) {
  const double ax = ue[0], ay = ue[1], az = cfg.ue_height_m;
  const double bx = bs[0], by = bs[1], bz = cfg.bs_height_m;
  const double len = std::sqrt((bx - ax) * (bx - ax) + (by - ay) * (by - ay) +
                               (bz - az) * (bz - az));
  const int steps = std::max(2, static_cast<int>(std::ceil(len / 0.1)));
  for (int k = 1; k < steps; ++k) {
    const double t = static_cast<double>(k) / steps;
    const double x = ax + t * (bx - ax);
    const double y = ay + t * (by - ay);
    const double z = az + t * (bz - az);
    for (const Building& b : buildings)
      if (x > b.x0 && x < b.x1 && y > b.y0 && y < b.y1 && z > 0.0 && z < b.h) return false;
  }
  return true;
}

ScenarioConfig tiny_config(std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.seed = seed;
  cfg.cities = 2;
  cfg.snapshots = 6;
  cfg.ues_per_snapshot = 40;
  cfg.buildings_per_city = 12;
  return cfg;
}

}  // namespace

TEST_CASE("reference loss and the worked link budget") {
  // hand recompute of the reference loss at 900 MHz
  const double fspl = 20.0 * std::log10(4.0 * 3.14159265358979323846 * 900e6 / 299792458.0);
  CHECK(fspl_1m_db(900e6) == doctest::Approx(fspl).epsilon(1e-12));
  CHECK(fspl == doctest::Approx(31.53).epsilon(2e-4));

  // boresight, outdoor, line of sight, shadowing off, 100 m slant range
  ScenarioConfig cfg;
  cfg.buildings_per_city = 0;
  cfg.shadow_sigma_db = 0.0;
  City city = generate_city(cfg, 0);
  const double dz = cfg.bs_height_m - cfg.ue_height_m;
  const double horiz = std::sqrt(100.0 * 100.0 - dz * dz);
  const auto& bs = city.bs_xy[0];
  // primary cell 0 is bs 0, sector 0, boresight along +x
  const std::array<double, 2> ue{bs[0] + horiz, bs[1]};
  CHECK(std::abs(rsrp_dbm(cfg, city, ue, 0) - (-28.53)) < 0.005);
}

TEST_CASE("path loss exponents and penalty terms") {
  ScenarioConfig cfg;
  // LoS vs NLoS at the same distance differ by the exponent switch only
  const double d = 250.0;
  const double los = path_loss_db(cfg, d, true, cfg.primary_freq_hz);
  const double nlos = path_loss_db(cfg, d, false, cfg.primary_freq_hz);
  CHECK(nlos - los == doctest::Approx(10.0 * std::log10(d)).epsilon(1e-12));
  // clamped below one meter
  CHECK(path_loss_db(cfg, 0.2, true, cfg.primary_freq_hz) ==
        doctest::Approx(fspl_1m_db(cfg.primary_freq_hz)).epsilon(1e-12));

  cfg.buildings_per_city = 0;
  cfg.shadow_sigma_db = 0.0;
  City city = generate_city(cfg, 0);
  const auto& bs = city.bs_xy[0];
  const double dz = cfg.bs_height_m - cfg.ue_height_m;
  const double horiz = std::sqrt(100.0 * 100.0 - dz * dz);
  const std::array<double, 2> ue{bs[0] + horiz, bs[1]};
  // force blockage flags through a fake building that swallows the path
  City blocked = city;
  blocked.buildings.push_back({bs[0] + 20.0, bs[1] - 5.0, bs[0] + 30.0, bs[1] + 5.0, 60.0});
  const double p_los = rsrp_dbm(cfg, city, ue, 0);
  const double p_nlos = rsrp_dbm(cfg, blocked, ue, 0);
  // exponent switch plus the fixed penalty
  CHECK(p_los - p_nlos == doctest::Approx(10.0 * std::log10(100.0) + cfg.nlos_extra_db).epsilon(1e-9));
}

TEST_CASE("sector pattern: boresight peak, smooth rolloff, floored back lobe") {
  ScenarioConfig cfg;
  CHECK(sector_gain_db(cfg, 0.0) == 0.0);
  const double pi = 3.14159265358979323846;
  CHECK(sector_gain_db(cfg, pi) == doctest::Approx(-6.0));
  CHECK(sector_gain_db(cfg, pi / 3.0) == doctest::Approx(-3.5).epsilon(1e-12));
  // even and 2*pi periodic
  for (double a : {0.3, 1.1, 2.0}) {
    CHECK(sector_gain_db(cfg, a) == doctest::Approx(sector_gain_db(cfg, -a)).epsilon(1e-12));
    CHECK(sector_gain_db(cfg, a) ==
          doctest::Approx(sector_gain_db(cfg, a + 2.0 * pi)).epsilon(1e-9));
  }
}

TEST_CASE("blockage test: strict interior semantics") {
  Building box{0, 0, 10, 10, 10};
  // clean pass through the middle
  CHECK(segment_blocked({-5, 5, 5}, {15, 5, 5}, box));
  // along a face: grazing does not block
  CHECK_FALSE(segment_blocked({-5, 0, 5}, {15, 0, 5}, box));
  // along the roof plane
  CHECK_FALSE(segment_blocked({-5, 5, 10}, {15, 5, 10}, box));
  // over the roof
  CHECK_FALSE(segment_blocked({-5, 5, 12}, {15, 5, 12}, box));
  // clips exactly the vertical edge x=10,y=10
  CHECK_FALSE(segment_blocked({10, 0, 5}, {10, 20, 5}, box));
  // endpoint strictly inside: blocked even though the segment exits quickly
  CHECK(segment_blocked({9.5, 5, 5}, {25, 5, 5}, box));
}

TEST_CASE("indoor predicate is strictly interior") {
  std::vector<Building> b{{10, 10, 30, 30, 20}};
  CHECK(is_indoor(20, 20, b));
  CHECK_FALSE(is_indoor(10, 20, b));  // on the wall
  CHECK_FALSE(is_indoor(30, 30, b));  // corner
  CHECK_FALSE(is_indoor(5, 20, b));
  CHECK_FALSE(is_indoor(20, 31, b));
}

TEST_CASE("exact line-of-sight agrees with the sampling oracle on random links") {
  ScenarioConfig cfg;
  cfg.seed = 404;
  City city = generate_city(cfg, 0);
  Rng rng(2024);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::array<double, 2> ue{rng.uniform(0.0, cfg.extent_m),
                                   rng.uniform(0.0, cfg.extent_m)};
    const auto& bs = city.bs_xy[rng.below(city.bs_xy.size())];
    const bool exact = is_los(cfg, ue, bs, city.buildings);
    const bool sampled = sampled_los(cfg, ue, bs, city.buildings);
    if (exact != sampled) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("shadowing is deterministic per (seed, position, cell) and spreads correctly") {
  ScenarioConfig cfg;
  CHECK(shadow_db(cfg, 12.5, 700.25, 3) == shadow_db(cfg, 12.5, 700.25, 3));
  CHECK(shadow_db(cfg, 12.5, 700.25, 3) != shadow_db(cfg, 12.5, 700.25, 4));
  CHECK(shadow_db(cfg, 12.5, 700.25, 3) != shadow_db(cfg, 12.5001, 700.25, 3));
  ScenarioConfig other = cfg;
  other.seed = 99;
  CHECK(shadow_db(cfg, 12.5, 700.25, 3) != shadow_db(other, 12.5, 700.25, 3));

  // sample spread matches the configured sigma
  double s1 = 0, s2 = 0;
  const int n = 20000;
  Rng rng(7);
  for (int i = 0; i < n; ++i) {
    const double v = shadow_db(cfg, rng.uniform(0, 2000), rng.uniform(0, 2000),
                               static_cast<std::uint64_t>(i % 18));
    s1 += v;
    s2 += v * v;
  }
  const double mean = s1 / n;
  const double sd = std::sqrt(s2 / n - mean * mean);
  CHECK(std::abs(mean) < 0.1);
  CHECK(sd == doctest::Approx(4.0).epsilon(0.03));
}

TEST_CASE("snapshots are apportioned evenly across cities") {
  ScenarioConfig cfg;
  int total = 0;
  std::vector<int> got;
  for (int i = 0; i < cfg.cities; ++i) {
    got.push_back(snapshots_for_city(cfg, i));
    total += got.back();
  }
  CHECK(total == cfg.snapshots);
  CHECK(got == std::vector<int>{87, 88, 87, 88});

  ScenarioConfig c2;
  c2.snapshots = 10;
  c2.cities = 3;
  CHECK(snapshots_for_city(c2, 0) == 3);
  CHECK(snapshots_for_city(c2, 1) == 3);
  CHECK(snapshots_for_city(c2, 2) == 4);
}

TEST_CASE("generation is deterministic and seed-sensitive") {
  Dataset a = generate_dataset(tiny_config(5));
  Dataset b = generate_dataset(tiny_config(5));
  CHECK(dataset_to_json(a) == dataset_to_json(b));
  Dataset c = generate_dataset(tiny_config(6));
  CHECK(dataset_to_json(a) != dataset_to_json(c));
}

TEST_CASE("node datasets: split sizes, assignment, and label sanity") {
  ScenarioConfig cfg = tiny_config(11);
  Dataset ds = generate_dataset(cfg);
  REQUIRE(ds.nodes.size() == static_cast<std::size_t>(cfg.cities * cfg.bs_per_city));
  std::size_t total = 0;
  for (const NodeDataset& n : ds.nodes) {
    const std::size_t count = n.train.n + n.val.n + n.test.n;
    total += count;
    CHECK(n.train.n == train_count(cfg, count));
    CHECK(n.val.n == val_count(cfg, count));
    CHECK(count >= cfg.min_node_samples);
    // every sample's strongest primary cell belongs to this node's mast
    for (std::size_t i = 0; i < n.train.n; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < n.d_in; ++j)
        if (n.train.x[i * n.d_in + j] > n.train.x[i * n.d_in + best]) best = j;
      CHECK(static_cast<int>(best) / cfg.sectors_per_bs == n.bs);
    }
    for (double v : n.train.y_in) CHECK((v == 0.0 || v == 1.0));
    for (double v : n.train.y_los) CHECK((v == 0.0 || v == 1.0));
    for (std::size_t i = 0; i < n.train.n; ++i) {
      CHECK(n.train.y_ps[i * 3 + 0] >= 0.0);
      CHECK(n.train.y_ps[i * 3 + 0] <= cfg.extent_m);
      CHECK(n.train.y_ps[i * 3 + 2] == cfg.ue_height_m);
    }
  }
  CHECK(total ==
        static_cast<std::size_t>(cfg.ues_per_snapshot) * static_cast<std::size_t>(cfg.snapshots));
}

TEST_CASE("prepared tensors: standardization and label units") {
  ScenarioConfig cfg = tiny_config(21);
  Dataset ds = generate_dataset(cfg);
  const NodeDataset& node = ds.nodes[0];
  PreparedData pd = prepare_node(node, cfg, all_tasks());
  REQUIRE(pd.train.n == node.train.n);
  const std::size_t d = node.d_in;
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < pd.train.n; ++i) m += pd.train.x.at(i, j);
    m /= static_cast<double>(pd.train.n);
    for (std::size_t i = 0; i < pd.train.n; ++i) {
      const double dmu = pd.train.x.at(i, j) - m;
      v += dmu * dmu;
    }
    v /= static_cast<double>(pd.train.n);
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::sqrt(v) == doctest::Approx(1.0).epsilon(1e-6));
  }
  // position labels are in scaled units; undo the scale to recover meters
  const Tensor& yps = pd.train.y.at(Task::PS);
  for (std::size_t i = 0; i < pd.train.n; ++i)
    CHECK(yps.at(i, 0) * cfg.ps_scale_m == doctest::Approx(node.train.y_ps[i * 3]).epsilon(1e-12));

  // secondary-carrier labels are standardized per output from the train
  // split; undoing the transform recovers the raw dBm values
  const Tensor& ysc = pd.train.y.at(Task::SC);
  const std::size_t dsc = node.d_sc;
  REQUIRE(pd.sc_mean.size() == dsc);
  for (std::size_t j = 0; j < dsc; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < pd.train.n; ++i) m += ysc.at(i, j);
    CHECK(std::abs(m / static_cast<double>(pd.train.n)) < 1e-9);
    CHECK(ysc.at(0, j) * pd.sc_std[j] + pd.sc_mean[j] ==
          doctest::Approx(node.train.y_sc[j]).epsilon(1e-12));
  }
  // val rows use the train stats, not their own
  const Tensor& ysc_val = pd.val.y.at(Task::SC);
  CHECK(ysc_val.at(0, 0) * pd.sc_std[0] + pd.sc_mean[0] ==
        doctest::Approx(node.val.y_sc[0]).epsilon(1e-12));

  // task subsets carry only their own labels
  PreparedData sub = prepare_node(node, cfg, {Task::IN});
  CHECK(sub.train.y.size() == 1);
  CHECK(sub.train.y.count(Task::IN) == 1);
  CHECK_THROWS_AS(prepare_node(node, cfg, {}), std::invalid_argument);
}

TEST_CASE("merged preparation pools rows and keeps per-node standardization") {
  ScenarioConfig cfg = tiny_config(31);
  Dataset ds = generate_dataset(cfg);
  std::vector<const NodeDataset*> two{&ds.nodes[0], &ds.nodes[1]};
  PreparedData merged = prepare_merged(two, cfg, all_tasks());
  PreparedData a = prepare_node(ds.nodes[0], cfg, all_tasks());
  PreparedData b = prepare_node(ds.nodes[1], cfg, all_tasks());
  CHECK(merged.train.n == a.train.n + b.train.n);
  // first block equals node 0's standardized rows, second equals node 1's
  for (std::size_t j = 0; j < merged.d_in; ++j) {
    CHECK(merged.train.x.at(0, j) == a.train.x.at(0, j));
    CHECK(merged.train.x.at(a.train.n, j) == b.train.x.at(0, j));
  }
}

TEST_CASE("dataset file round trip is lossless and validated") {
  namespace fs = std::filesystem;
  ScenarioConfig cfg = tiny_config(41);
  Dataset ds = generate_dataset(cfg);
  const std::string path = (fs::temp_directory_path() / "ranmtl_ds_test.json").string();
  save_dataset(ds, path);
  Dataset back = load_dataset(path);
  CHECK(dataset_to_json(back) == dataset_to_json(ds));
  // regenerating from the echoed config reproduces the file byte for byte
  Dataset regen = generate_dataset(back.config);
  CHECK(dataset_to_json(regen) == dataset_to_json(ds));
  std::remove(path.c_str());

  CHECK_THROWS_AS(dataset_from_json("{\"kind\":\"other\"}"), std::runtime_error);
  std::string text = dataset_to_json(ds);
  auto at = text.find("\"schema_version\":1");
  REQUIRE(at != std::string::npos);
  std::string bumped = text;
  bumped.replace(at, 18, "\"schema_version\":9");
  CHECK_THROWS_AS(dataset_from_json(bumped), std::runtime_error);
}

TEST_CASE("degenerate configurations are rejected") {
  ScenarioConfig cfg;
  cfg.buildings_per_city = 5000;  // footprint cannot stay under the budget
  CHECK_THROWS_AS(generate_city(cfg, 0), std::runtime_error);

  ScenarioConfig few = tiny_config(1);
  few.snapshots = 1;
  few.ues_per_snapshot = 3;  // nodes end up under the minimum
  CHECK_THROWS_AS(generate_dataset(few), std::runtime_error);

  ScenarioConfig badsplit;
  badsplit.split_train = 0.9;
  badsplit.split_val = 0.3;
  CHECK_THROWS_AS(generate_city(badsplit, 0), std::invalid_argument);
}
