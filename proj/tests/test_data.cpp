// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "test_util.hpp"

using namespace bpnas;
using bpnas::testing::scratch_dir;

namespace {

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p) << s; }

template <class F>
std::string error_of(F f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

double train_float(const NetworkSpec& net, Dataset& ds, int epochs) {
  assign_splits(ds, 0.6, 0.2, 1);
  QuantNet q = make_float_net(net, init_checkpoint(net, 2));
  TrainConfig cfg;
  cfg.epochs = epochs;
  return retrain_sampled(q, ds, cfg, 3).accuracy;
}

}  // namespace

TEST(Blobs, DeterministicAndNoiseless) {
  auto a = gen_blobs(3, 20, 5, 0.4, 11);
  auto b = gen_blobs(3, 20, 5, 0.4, 11);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.labels, b.labels);
  auto z = gen_blobs(2, 10, 3, 0.0, 4);
  for (std::size_t i = 1; i < 10; ++i)
    for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(z.samples[i * 3 + d], z.samples[d]);
  EXPECT_THROW(gen_blobs(0, 10, 3, 0.1, 1), DataError);
}

TEST(Blobs, WellSeparatedPairIsLinearlySeparable) {
  Dataset ds = gen_blobs(2, 100, 2, 0.05, 8);
  NetworkSpec net;
  net.layers = {LayerSpec::linear(2, 2)};
  net.candidates = {{{32, 32}}};
  EXPECT_EQ(train_float(net, ds, 30), 1.0);
}

TEST(Spirals, DeterministicWithExactClassCounts) {
  auto a = gen_spirals(4, 50, 0.1, 3);
  auto b = gen_spirals(4, 50, 0.1, 3);
  EXPECT_EQ(a.samples, b.samples);
  std::vector<int> count(4, 0);
  for (int l : a.labels) ++count[static_cast<std::size_t>(l)];
  for (int c : count) EXPECT_EQ(c, 50);
  EXPECT_NE(gen_spirals(4, 50, 0.1, 4).samples, a.samples);
}

TEST(Spirals, LinearNearChanceDeepNetAccurate) {
  Dataset lin = gen_spirals(4, 300, 0.1, 7);
  Dataset deep = lin;
  NetworkSpec l;
  l.layers = {LayerSpec::linear(2, 4)};
  l.candidates = {{{32, 32}}};
  NetworkSpec d;
  d.layers = {LayerSpec::linear(2, 64), LayerSpec::linear(64, 64), LayerSpec::linear(64, 4)};
  d.candidates.assign(3, {{32, 32}});
  EXPECT_LT(train_float(l, lin, 30), 0.45);
  EXPECT_GT(train_float(d, deep, 100), 0.9);
}

TEST(Splits, PureFunctionAndPartition) {
  auto ds = gen_spirals(3, 100, 0.1, 1);
  assign_splits(ds, 0.48, 0.32, 9);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds.splits[i], split_of(9, i, 0.48, 0.32));
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (auto s : {Split::train, Split::val, Split::test})
    for (auto i : ds.indices(s)) {
      EXPECT_TRUE(seen.insert(i).second);
      ++total;
    }
  EXPECT_EQ(total, ds.size());
  EXPECT_THROW(assign_splits(ds, 0.7, 0.5, 1), Error);
}

TEST(Idx, RoundTrip) {
  auto dir = scratch_dir("idx");
  std::vector<double> img(3 * 2 * 2);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i * 20);
  write_idx((dir / "img").string(), {3, 2, 2}, img);
  write_idx((dir / "lab").string(), {3}, std::vector<double>{2, 0, 1});
  auto raw = read_idx((dir / "img").string());
  EXPECT_EQ(raw.type_code, 0x08);
  EXPECT_EQ(raw.shape, (Shape{3, 2, 2}));
  EXPECT_EQ(raw.values, img);
  auto ds = load_idx((dir / "img").string(), (dir / "lab").string());
  EXPECT_EQ(ds.labels, (std::vector<int>{2, 0, 1}));
  EXPECT_EQ(ds.num_classes, 3);
  EXPECT_DOUBLE_EQ(ds.samples[1], 20.0 / 255.0);
}

TEST(Idx, MagicNumberDefinesShape) {
  auto dir = scratch_dir("idx-magic");
  write_bytes(dir / "a", {0, 0, 0x08, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3, 4});
  auto a = read_idx((dir / "a").string());
  EXPECT_EQ(a.shape, (Shape{1, 2, 2}));
  EXPECT_EQ(a.values, (std::vector<double>{1, 2, 3, 4}));
}

TEST(Idx, ErrorsCarryByteOffsets) {
  auto dir = scratch_dir("idx-bad");
  write_bytes(dir / "magic", {1, 0, 8, 1, 0, 0, 0, 1, 5});
  EXPECT_NE(error_of([&] { read_idx((dir / "magic").string()); }).find("byte offset 0"), std::string::npos);
  write_bytes(dir / "type", {0, 0, 0x42, 1, 0, 0, 0, 1, 5});
  EXPECT_NE(error_of([&] { read_idx((dir / "type").string()); }).find("byte offset 2"), std::string::npos);
  write_bytes(dir / "trunc", {0, 0, 8, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3});
  auto msg = error_of([&] { read_idx((dir / "trunc").string()); });
  EXPECT_NE(msg.find("byte offset 15"), std::string::npos) << msg;
  write_bytes(dir / "short", {0, 0});
  EXPECT_NE(error_of([&] { read_idx((dir / "short").string()); }).find("byte offset 2"), std::string::npos);
  EXPECT_THROW(read_idx((dir / "missing").string()), DataError);
}

TEST(Idx, LabelOutOfRangeNamesRow) {
  auto dir = scratch_dir("idx-labels");
  write_idx((dir / "img").string(), {2, 2}, std::vector<double>{1, 2, 3, 4});
  write_idx((dir / "lab").string(), {2}, std::vector<double>{0, 7});
  auto msg = error_of([&] { load_idx((dir / "img").string(), (dir / "lab").string(), 3); });
  EXPECT_NE(msg.find("row 1"), std::string::npos) << msg;
}

TEST(Csv, RoundTrip) {
  auto dir = scratch_dir("csv");
  auto ds = gen_blobs(3, 5, 2, 0.5, 1);
  write_csv((dir / "d.csv").string(), ds);
  auto back = load_csv((dir / "d.csv").string());
  EXPECT_EQ(back.samples, ds.samples);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.num_classes, 3);
}

TEST(Csv, Errors) {
  auto dir = scratch_dir("csv-bad");
  write_text(dir / "hdr.csv", "lbl,f0\n0,1\n");
  EXPECT_NE(error_of([&] { load_csv((dir / "hdr.csv").string()); }).find("byte offset 0"), std::string::npos);
  write_text(dir / "col.csv", "label,f0,f2\n0,1,2\n");
  EXPECT_NE(error_of([&] { load_csv((dir / "col.csv").string()); }).find("byte offset 9"), std::string::npos);
  write_text(dir / "range.csv", "label,f0\n0,1\n5,2\n");
  auto msg = error_of([&] { load_csv((dir / "range.csv").string(), 3); });
  EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
  write_text(dir / "neg.csv", "label,f0\n-1,1\n");
  EXPECT_NE(error_of([&] { load_csv((dir / "neg.csv").string()); }).find("row 2"), std::string::npos);
  write_text(dir / "num.csv", "label,f0\n0,abc\n");
  EXPECT_NE(error_of([&] { load_csv((dir / "num.csv").string()); }).find("row 2"), std::string::npos);
  write_text(dir / "width.csv", "label,f0,f1\n0,1\n");
  EXPECT_NE(error_of([&] { load_csv((dir / "width.csv").string()); }).find("row 2"), std::string::npos);
}
