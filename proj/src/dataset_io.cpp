#include "ranmtl/dataset_io.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ranmtl {

namespace {
using nlohmann::json;

constexpr int kSchemaVersion = 1;

json config_to_json(const ScenarioConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["cities"] = c.cities;
  j["bs_per_city"] = c.bs_per_city;
  j["sectors_per_bs"] = c.sectors_per_bs;
  j["extent_m"] = c.extent_m;
  j["buildings_per_city"] = c.buildings_per_city;
  j["building_side_min_m"] = c.building_side_min_m;
  j["building_side_max_m"] = c.building_side_max_m;
  j["building_height_min_m"] = c.building_height_min_m;
  j["building_height_max_m"] = c.building_height_max_m;
  j["bs_ring_radius_m"] = c.bs_ring_radius_m;
  j["bs_height_m"] = c.bs_height_m;
  j["ue_height_m"] = c.ue_height_m;
  j["primary_freq_hz"] = c.primary_freq_hz;
  j["secondary_freq_hz"] = c.secondary_freq_hz;
  j["eirp_dbm"] = c.eirp_dbm;
  j["sector_depth_db"] = c.sector_depth_db;
  j["sector_floor_db"] = c.sector_floor_db;
  j["wall_loss_db"] = c.wall_loss_db;
  j["nlos_extra_db"] = c.nlos_extra_db;
  j["shadow_sigma_db"] = c.shadow_sigma_db;
  j["pathloss_exp_los"] = c.pathloss_exp_los;
  j["pathloss_exp_nlos"] = c.pathloss_exp_nlos;
  j["snapshots"] = c.snapshots;
  j["ues_per_snapshot"] = c.ues_per_snapshot;
  j["split_train"] = c.split_train;
  j["split_val"] = c.split_val;
  j["min_node_samples"] = c.min_node_samples;
  j["ps_scale_m"] = c.ps_scale_m;
  return j;
}

ScenarioConfig config_from_json(const json& j) {
  ScenarioConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.cities = j.at("cities").get<int>();
  c.bs_per_city = j.at("bs_per_city").get<int>();
  c.sectors_per_bs = j.at("sectors_per_bs").get<int>();
  c.extent_m = j.at("extent_m").get<double>();
  c.buildings_per_city = j.at("buildings_per_city").get<int>();
  c.building_side_min_m = j.at("building_side_min_m").get<double>();
  c.building_side_max_m = j.at("building_side_max_m").get<double>();
  c.building_height_min_m = j.at("building_height_min_m").get<double>();
  c.building_height_max_m = j.at("building_height_max_m").get<double>();
  c.bs_ring_radius_m = j.at("bs_ring_radius_m").get<double>();
  c.bs_height_m = j.at("bs_height_m").get<double>();
  c.ue_height_m = j.at("ue_height_m").get<double>();
  c.primary_freq_hz = j.at("primary_freq_hz").get<double>();
  c.secondary_freq_hz = j.at("secondary_freq_hz").get<double>();
  c.eirp_dbm = j.at("eirp_dbm").get<double>();
  c.sector_depth_db = j.at("sector_depth_db").get<double>();
  c.sector_floor_db = j.at("sector_floor_db").get<double>();
  c.wall_loss_db = j.at("wall_loss_db").get<double>();
  c.nlos_extra_db = j.at("nlos_extra_db").get<double>();
  c.shadow_sigma_db = j.at("shadow_sigma_db").get<double>();
  c.pathloss_exp_los = j.at("pathloss_exp_los").get<double>();
  c.pathloss_exp_nlos = j.at("pathloss_exp_nlos").get<double>();
  c.snapshots = j.at("snapshots").get<int>();
  c.ues_per_snapshot = j.at("ues_per_snapshot").get<int>();
  c.split_train = j.at("split_train").get<double>();
  c.split_val = j.at("split_val").get<double>();
  c.min_node_samples = j.at("min_node_samples").get<std::size_t>();
  c.ps_scale_m = j.at("ps_scale_m").get<double>();
  return c;
}

json block_to_json(const SampleBlock& b) {
  json j;
  j["n"] = b.n;
  j["x"] = b.x;
  j["y_sc"] = b.y_sc;
  j["y_ps"] = b.y_ps;
  j["y_in"] = b.y_in;
  j["y_los"] = b.y_los;
  return j;
}

SampleBlock block_from_json(const json& j) {
  SampleBlock b;
  b.n = j.at("n").get<std::size_t>();
  b.x = j.at("x").get<std::vector<double>>();
  b.y_sc = j.at("y_sc").get<std::vector<double>>();
  b.y_ps = j.at("y_ps").get<std::vector<double>>();
  b.y_in = j.at("y_in").get<std::vector<double>>();
  b.y_los = j.at("y_los").get<std::vector<double>>();
  return b;
}

void check_block(const SampleBlock& b, std::size_t d_in, std::size_t d_sc, const char* which) {
  auto bad = [&](const char* what) {
    throw std::runtime_error(std::string("dataset: corrupt ") + which + " block: " + what);
  };
  if (b.x.size() != b.n * d_in) bad("feature size");
  if (b.y_sc.size() != b.n * d_sc) bad("y_sc size");
  if (b.y_ps.size() != b.n * 3) bad("y_ps size");
  if (b.y_in.size() != b.n) bad("y_in size");
  if (b.y_los.size() != b.n * d_sc) bad("y_los size");
  for (const auto* v : {&b.x, &b.y_sc, &b.y_ps, &b.y_in, &b.y_los})
    for (double d : *v)
      if (!std::isfinite(d)) bad("non-finite value");
}

json node_to_json(const NodeDataset& n) {
  json jn;
  jn["city"] = n.city;
  jn["bs"] = n.bs;
  jn["d_in"] = n.d_in;
  jn["d_sc"] = n.d_sc;
  jn["feat_mean"] = n.feat_mean;
  jn["feat_std"] = n.feat_std;
  jn["train"] = block_to_json(n.train);
  jn["val"] = block_to_json(n.val);
  jn["test"] = block_to_json(n.test);
  return jn;
}

NodeDataset node_from_json(const json& jn) {
  NodeDataset n;
  n.city = jn.at("city").get<int>();
  n.bs = jn.at("bs").get<int>();
  n.d_in = jn.at("d_in").get<std::size_t>();
  n.d_sc = jn.at("d_sc").get<std::size_t>();
  n.feat_mean = jn.at("feat_mean").get<std::vector<double>>();
  n.feat_std = jn.at("feat_std").get<std::vector<double>>();
  n.train = block_from_json(jn.at("train"));
  n.val = block_from_json(jn.at("val"));
  n.test = block_from_json(jn.at("test"));
  if (n.feat_mean.size() != n.d_in || n.feat_std.size() != n.d_in)
    throw std::runtime_error("dataset: standardization size mismatch");
  check_block(n.train, n.d_in, n.d_sc, "train");
  check_block(n.val, n.d_in, n.d_sc, "val");
  check_block(n.test, n.d_in, n.d_sc, "test");
  return n;
}
}  // namespace

std::string dataset_to_json(const Dataset& ds) {
  json j;
  j["kind"] = "ranmtl-dataset";
  j["schema_version"] = kSchemaVersion;
  j["config"] = config_to_json(ds.config);
  json nodes = json::array();
  for (const NodeDataset& n : ds.nodes) nodes.push_back(node_to_json(n));
  j["nodes"] = std::move(nodes);
  return j.dump();
}

Dataset dataset_from_json(const std::string& text) {
  json j = json::parse(text);
  if (j.value("kind", "") != "ranmtl-dataset")
    throw std::runtime_error("dataset: not a dataset file");
  if (j.at("schema_version").get<int>() != kSchemaVersion)
    throw std::runtime_error("dataset: unsupported schema version " +
                             std::to_string(j.at("schema_version").get<int>()));
  Dataset ds;
  ds.config = config_from_json(j.at("config"));
  for (const json& jn : j.at("nodes")) ds.nodes.push_back(node_from_json(jn));
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("dataset: cannot open " + path + " for writing");
  f << dataset_to_json(ds);
  if (!f) throw std::runtime_error("dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("dataset: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return dataset_from_json(text);
}

void save_dataset_dir(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("dataset: cannot create " + dir + ": " + ec.message());
  const json cfg = config_to_json(ds.config);
  for (const NodeDataset& n : ds.nodes) {
    json j;
    j["kind"] = "ranmtl-node";
    j["schema_version"] = kSchemaVersion;
    j["config"] = cfg;
    j["node"] = node_to_json(n);
    char name[32];
    std::snprintf(name, sizeof(name), "node_%02d_%02d.json", n.city, n.bs);
    const std::string path = (fs::path(dir) / name).string();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("dataset: cannot open " + path + " for writing");
    f << j.dump();
    if (!f) throw std::runtime_error("dataset: write failed for " + path);
  }
}

Dataset load_dataset_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset: not a directory: " + dir);
  std::vector<std::string> files;
  for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("node_", 0) == 0 && name.size() > 5 && e.path().extension() == ".json")
      files.push_back(e.path().string());
  }
  if (files.empty()) throw std::runtime_error("dataset: no node containers in " + dir);
  std::sort(files.begin(), files.end());

  Dataset ds;
  std::string config_echo;
  for (const std::string& path : files) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("dataset: cannot open " + path);
    json j;
    f >> j;
    if (j.value("kind", "") != "ranmtl-node")
      throw std::runtime_error("dataset: not a node container: " + path);
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw std::runtime_error("dataset: unsupported schema version in " + path);
    const std::string echo = j.at("config").dump();
    if (config_echo.empty()) {
      config_echo = echo;
      ds.config = config_from_json(j.at("config"));
    } else if (echo != config_echo) {
      throw std::runtime_error("dataset: config echo mismatch in " + path);
    }
    ds.nodes.push_back(node_from_json(j.at("node")));
  }
  std::sort(ds.nodes.begin(), ds.nodes.end(), [](const NodeDataset& a, const NodeDataset& b) {
    return a.city != b.city ? a.city < b.city : a.bs < b.bs;
  });
  return ds;
}

Dataset load_dataset_any(const std::string& path) {
  return std::filesystem::is_directory(path) ? load_dataset_dir(path) : load_dataset(path);
}

}  // namespace ranmtl
