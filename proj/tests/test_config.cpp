// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"

using namespace bpnas;
using nlohmann::json;

namespace {

json minimal() {
  return json::parse(R"({
    "schema_version": 1,
    "network": {
      "layers": [{"kind": "linear", "in": 2, "out": 8}, {"kind": "linear", "in": 8, "out": 4}],
      "candidates": [[2, 2], [4, 4]]
    }
  })");
}

std::string path_of_error(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<no error>";
}

}  // namespace

TEST(Config, MinimalUsesDefaults) {
  auto c = parse_config(minimal());
  EXPECT_EQ(c.experiment.net.size(), 2u);
  EXPECT_EQ(c.experiment.net.candidates[1].size(), 2u);
  EXPECT_EQ(c.data.kind, "spirals");
  EXPECT_EQ(c.experiment.search.mode, SearchMode::bp_nas);
  EXPECT_EQ(c.experiment.retrain.epochs, 200);
  EXPECT_DOUBLE_EQ(c.experiment.reshape_k, 2.0);
}

TEST(Config, ErrorsNameKeyPath) {
  auto j = minimal();
  j["search"] = {{"b_max", -1}};
  EXPECT_EQ(path_of_error(j), "search.b_max");
  j = minimal();
  j["search"] = {{"bmax", 3}};
  EXPECT_EQ(path_of_error(j), "search.bmax");
  j = minimal();
  j["network"]["layers"][1]["in"] = 7;
  EXPECT_EQ(path_of_error(j), "network.layers[1]");
  j = minimal();
  j["network"]["layers"][0]["kind"] = "rnn";
  EXPECT_EQ(path_of_error(j), "network.layers[0].kind");
  j = minimal();
  j["network"]["candidates"] = json::array({json::array({json::array({1, 2})}), json::array({json::array({2, 2})})});
  EXPECT_EQ(path_of_error(j), "network.candidates[0][0][0]");
  j = minimal();
  j["search"] = {{"mu_schedule", {{"kind", "cosine"}}}};
  EXPECT_EQ(path_of_error(j), "search.mu_schedule.kind");
  j = minimal();
  j["oracle"] = {{"b_max_grid", {3.0, "x"}}};
  EXPECT_EQ(path_of_error(j), "oracle.b_max_grid[1]");
  j = minimal();
  j["data"] = {{"train_fraction", 0.8}, {"val_fraction", 0.3}};
  EXPECT_EQ(path_of_error(j), "data.val_fraction");
  j = minimal();
  j["search"] = {{"mode", "greedy"}};
  EXPECT_EQ(path_of_error(j), "search.mode");
  j = minimal();
  j["extra"] = 1;
  EXPECT_EQ(path_of_error(j), "extra");
}

TEST(Config, SchemaVersionRequiredAndChecked) {
  auto j = minimal();
  j.erase("schema_version");
  EXPECT_EQ(path_of_error(j), "schema_version");
  j["schema_version"] = 99;
  EXPECT_EQ(path_of_error(j), "schema_version");
}

TEST(Config, MessageCarriesPath) {
  auto j = minimal();
  j["retrain"] = {{"epochs", "many"}};
  try {
    parse_config(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("retrain.epochs"), std::string::npos);
  }
}

TEST(Config, PerLayerCandidatesAndInfiniteK) {
  auto j = minimal();
  j["network"]["candidates"] = json::parse("[[[8, 8]], [[2, 2], [3, 3]]]");
  j["pretrain"] = {{"reshape_k", "inf"}};
  auto c = parse_config(j);
  EXPECT_EQ(c.experiment.net.candidates[0].size(), 1u);
  EXPECT_TRUE(std::isinf(c.experiment.reshape_k));
}

TEST(Config, ResolvedJsonRoundTrips) {
  auto dir = bpnas::testing::scratch_dir("config");
  auto c = load_config(std::filesystem::path(BPNAS_CONFIG_DIR) / "spirals.json");
  auto j = to_json(c);
  auto back = parse_config(j);
  EXPECT_EQ(to_json(back).dump(), j.dump());
  EXPECT_EQ(back.experiment.net.layers, c.experiment.net.layers);
  EXPECT_EQ(back.oracle.b_max_grid, c.oracle.b_max_grid);
}

TEST(Config, ShippedConfigsParse) {
  for (auto name : {"spirals.json", "blobs_quick.json", "digits_conv.json"})
    EXPECT_NO_THROW(load_config(std::filesystem::path(BPNAS_CONFIG_DIR) / name)) << name;
}

TEST(Config, FileErrors) {
  auto dir = bpnas::testing::scratch_dir("config-files");
  EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
  std::ofstream(dir / "bad.json") << "{ \"schema_version\": 1,";
  EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
}

TEST(Config, DatasetFromConfig) {
  auto dir = bpnas::testing::scratch_dir("config-data");
  write_csv((dir / "d.csv").string(), gen_blobs(4, 10, 2, 0.3, 1));
  auto j = minimal();
  j["data"] = {{"kind", "csv"}, {"path", "d.csv"}};
  std::ofstream(dir / "run.json") << j.dump();
  auto c = load_config(dir / "run.json");
  auto ds = make_dataset(c.data);
  EXPECT_EQ(ds.size(), 40u);
  EXPECT_EQ(ds.num_classes, 4);
}
