// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration. Every key is optional except where noted; unknown
// keys are rejected and every error names the offending key path.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "bpnas/data.hpp"
#include "bpnas/io.hpp"
#include "bpnas/pipeline.hpp"

namespace bpnas {

inline constexpr int kSchemaVersion = 1;

class ConfigError : public Error {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : Error("config: " + (path.empty() ? std::string("<root>") : path) + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct DataConfig {
  std::string kind = "spirals";  // spirals | blobs | csv | idx
  int num_classes = 4;
  std::size_t samples_per_class = 500;
  std::size_t dims = 2;  // blobs only
  double noise_sigma = 0.1;
  std::uint64_t seed = 7;
  double train_fraction = 0.48;
  double val_fraction = 0.32;
  std::string path;    // csv
  std::string images;  // idx
  std::string labels;  // idx
};

struct OracleConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<double> b_max_grid{2.5, 3.0, 3.5, 4.0};
};

struct ReportConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  bool retrain = true;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 1;
  DataConfig data;
  Experiment experiment;
  OracleConfig oracle;
  ReportConfig report;
};

inline std::optional<SearchMode> parse_mode(const std::string& s) {
  if (s == "bp_nas") return SearchMode::bp_nas;
  if (s == "lambda_baseline") return SearchMode::lambda_baseline;
  return std::nullopt;
}

namespace detail {

using nlohmann::json;

inline std::string key_path(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }
inline std::string index_path(const std::string& base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }

inline const char* type_name(const json& j) { return j.type_name(); }

/// Walks one JSON object, tracking consumed keys so leftovers can be reported.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, std::string("expected an object, got ") + type_name(j_));
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string path(const std::string& key) const { return key_path(path_, key); }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void real(const std::string& key, double& out) {
    if (auto* v = find(key)) out = as_real(*v, path(key));
  }
  void positive(const std::string& key, double& out) {
    real(key, out);
    if (has(key) && !(out > 0.0)) throw ConfigError(path(key), "must be positive");
  }
  void non_negative(const std::string& key, double& out) {
    real(key, out);
    if (has(key) && !(out >= 0.0)) throw ConfigError(path(key), "must be non-negative");
  }
  template <class Int>
  void integer(const std::string& key, Int& out, long long lo = std::numeric_limits<long long>::min()) {
    if (auto* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(path(key), std::string("expected an integer, got ") + type_name(*v));
      const long long x = v->get<long long>();
      if (x < lo) throw ConfigError(path(key), "must be >= " + std::to_string(lo));
      out = static_cast<Int>(x);
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (auto* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(path(key), std::string("expected a boolean, got ") + type_name(*v));
      out = v->get<bool>();
    }
  }
  void string(const std::string& key, std::string& out) {
    if (auto* v = find(key)) {
      if (!v->is_string()) throw ConfigError(path(key), std::string("expected a string, got ") + type_name(*v));
      out = v->get<std::string>();
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path(it.key()), "unknown key");
  }

  static double as_real(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path, std::string("expected a number, got ") + type_name(v));
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(path, "must be finite");
    return x;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline const json& expect_array(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, std::string("expected an array, got ") + type_name(j));
  return j;
}

inline QuantPair read_pair(const json& j, const std::string& path) {
  expect_array(j, path);
  if (j.size() != 2) throw ConfigError(path, "expected [weight_bits, activation_bits]");
  QuantPair q;
  for (int k = 0; k < 2; ++k) {
    const auto p = index_path(path, static_cast<std::size_t>(k));
    if (!j[k].is_number_integer()) throw ConfigError(p, "expected an integer bitwidth");
    const long long b = j[k].get<long long>();
    if (b < 2 || b > 32) throw ConfigError(p, "bitwidth must lie in [2, 32]");
    (k == 0 ? q.weight_bits : q.activation_bits) = static_cast<int>(b);
  }
  return q;
}

inline std::vector<QuantPair> read_candidates(const json& j, const std::string& path) {
  expect_array(j, path);
  if (j.empty()) throw ConfigError(path, "candidate set must be non-empty");
  std::vector<QuantPair> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(read_pair(j[i], index_path(path, i)));
    for (std::size_t k = 0; k + 1 < out.size(); ++k)
      if (out[k] == out.back()) throw ConfigError(index_path(path, i), "duplicate candidate");
  }
  return out;
}

inline std::vector<std::uint64_t> read_seeds(const json& j, const std::string& path) {
  expect_array(j, path);
  if (j.empty()) throw ConfigError(path, "seed list must be non-empty");
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number_unsigned() && !(j[i].is_number_integer() && j[i].get<long long>() >= 0))
      throw ConfigError(index_path(path, i), "expected a non-negative integer seed");
    out.push_back(j[i].get<std::uint64_t>());
  }
  return out;
}

inline void read_data(const json& j, const std::string& path, DataConfig& d) {
  ObjectReader r(j, path);
  r.string("kind", d.kind);
  if (d.kind != "spirals" && d.kind != "blobs" && d.kind != "csv" && d.kind != "idx")
    throw ConfigError(r.path("kind"), "expected one of spirals, blobs, csv, idx; got '" + d.kind + "'");
  r.integer("num_classes", d.num_classes, 1);
  r.integer("samples_per_class", d.samples_per_class, 1);
  r.integer("dims", d.dims, 1);
  r.non_negative("noise_sigma", d.noise_sigma);
  r.integer("seed", d.seed, 0);
  r.positive("train_fraction", d.train_fraction);
  r.positive("val_fraction", d.val_fraction);
  if (d.train_fraction + d.val_fraction > 1.0)
    throw ConfigError(r.path("val_fraction"), "train_fraction + val_fraction must not exceed 1");
  r.string("path", d.path);
  r.string("images", d.images);
  r.string("labels", d.labels);
  if (d.kind == "csv" && d.path.empty()) throw ConfigError(r.path("path"), "required for csv data");
  if (d.kind == "idx" && d.images.empty()) throw ConfigError(r.path("images"), "required for idx data");
  if (d.kind == "idx" && d.labels.empty()) throw ConfigError(r.path("labels"), "required for idx data");
  r.finish();
}

inline LayerSpec read_layer(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  std::string kind = "linear";
  r.string("kind", kind);
  LayerSpec l;
  if (!r.has("in")) throw ConfigError(r.path("in"), "required");
  if (!r.has("out")) throw ConfigError(r.path("out"), "required");
  r.integer("in", l.in, 1);
  r.integer("out", l.out, 1);
  if (kind == "linear") {
    l = LayerSpec::linear(l.in, l.out);
  } else if (kind == "conv2d") {
    std::size_t k = 3, h = 0, w = 0;
    r.integer("kernel", k, 1);
    if (k % 2 == 0) throw ConfigError(r.path("kernel"), "must be odd");
    if (!r.has("height")) throw ConfigError(r.path("height"), "required for conv2d");
    if (!r.has("width")) throw ConfigError(r.path("width"), "required for conv2d");
    r.integer("height", h, 1);
    r.integer("width", w, 1);
    l = LayerSpec::conv2d(l.in, l.out, k, h, w);
  } else {
    throw ConfigError(r.path("kind"), "expected linear or conv2d; got '" + kind + "'");
  }
  r.finish();
  return l;
}

inline void read_network(const json& j, const std::string& path, Experiment& ex) {
  ObjectReader r(j, path);
  const json* layers = r.find("layers");
  if (!layers) throw ConfigError(r.path("layers"), "required");
  expect_array(*layers, r.path("layers"));
  if (layers->empty()) throw ConfigError(r.path("layers"), "at least one layer is required");
  ex.net.layers.clear();
  for (std::size_t i = 0; i < layers->size(); ++i)
    ex.net.layers.push_back(read_layer((*layers)[i], index_path(r.path("layers"), i)));
  const json* cands = r.find("candidates");
  if (!cands) throw ConfigError(r.path("candidates"), "required");
  expect_array(*cands, r.path("candidates"));
  ex.net.candidates.clear();
  // A single set applies to every layer; otherwise one set per layer.
  if (!cands->empty() && (*cands)[0].is_array() && !(*cands)[0].empty() && (*cands)[0][0].is_number()) {
    auto c = read_candidates(*cands, r.path("candidates"));
    ex.net.candidates.assign(ex.net.size(), c);
  } else {
    if (cands->size() != ex.net.size())
      throw ConfigError(r.path("candidates"), "expected one candidate set per layer (" + std::to_string(ex.net.size()) +
                                                   "), got " + std::to_string(cands->size()));
    for (std::size_t i = 0; i < cands->size(); ++i)
      ex.net.candidates.push_back(read_candidates((*cands)[i], index_path(r.path("candidates"), i)));
  }
  if (const json* qi = r.find("quantize_input")) {
    expect_array(*qi, r.path("quantize_input"));
    if (qi->size() != ex.net.size()) throw ConfigError(r.path("quantize_input"), "expected one flag per layer");
    ex.quantize_input.clear();
    for (std::size_t i = 0; i < qi->size(); ++i) {
      if (!(*qi)[i].is_boolean()) throw ConfigError(index_path(r.path("quantize_input"), i), "expected a boolean");
      ex.quantize_input.push_back((*qi)[i].get<bool>());
    }
  }
  for (std::size_t i = 1; i < ex.net.size(); ++i) {
    const auto& a = ex.net.layers[i - 1];
    const auto& b = ex.net.layers[i];
    const std::size_t produced = a.out * a.height * a.width;
    const std::size_t consumed = b.in * b.height * b.width;
    if (produced != consumed)
      throw ConfigError(index_path(r.path("layers"), i), "input size " + std::to_string(consumed) +
                                                             " does not match the previous layer's output size " +
                                                             std::to_string(produced));
  }
  r.finish();
}

inline void read_train(const json& j, const std::string& path, TrainConfig& t, bool* warm_start = nullptr) {
  ObjectReader r(j, path);
  r.integer("epochs", t.epochs, 0);
  r.integer("batch_size", t.batch_size, 1);
  r.non_negative("lr", t.lr);
  r.non_negative("momentum", t.momentum);
  r.non_negative("weight_decay", t.weight_decay);
  r.non_negative("alpha_decay", t.alpha_decay);
  r.non_negative("alpha_lr_scale", t.alpha_lr_scale);
  if (warm_start) r.boolean("warm_start", *warm_start);
  r.finish();
}

inline void read_pretrain(const json& j, const std::string& path, Experiment& ex) {
  ObjectReader r(j, path);
  r.integer("epochs", ex.pretrain.epochs, 0);
  r.integer("batch_size", ex.pretrain.batch_size, 1);
  r.non_negative("lr", ex.pretrain.lr);
  r.non_negative("momentum", ex.pretrain.momentum);
  r.non_negative("weight_decay", ex.pretrain.weight_decay);
  if (const json* k = r.find("reshape_k")) {
    if (k->is_string() && k->get<std::string>() == "inf") {
      ex.reshape_k = std::numeric_limits<double>::infinity();
    } else {
      ex.reshape_k = ObjectReader::as_real(*k, r.path("reshape_k"));
      if (!(ex.reshape_k > 0.0)) throw ConfigError(r.path("reshape_k"), "must be positive or \"inf\"");
    }
  }
  r.finish();
}

inline void read_quantization(const json& j, const std::string& path, Experiment& ex) {
  ObjectReader r(j, path);
  if (const json* a = r.find("activation_alpha")) {
    if (a->is_null()) {
      ex.alpha_init.activation.reset();
    } else {
      const double v = ObjectReader::as_real(*a, r.path("activation_alpha"));
      if (!(v > 0.0)) throw ConfigError(r.path("activation_alpha"), "must be positive or null");
      ex.alpha_init.activation = v;
    }
  }
  r.integer("calibration_samples", ex.calibration_samples, 1);
  r.finish();
}

inline void read_search(const json& j, const std::string& path, SearchConfig& s) {
  ObjectReader r(j, path);
  r.positive("b_max", s.barrier.b_max);
  std::string mode = to_string(s.mode);
  r.string("mode", mode);
  auto m = parse_mode(mode);
  if (!m) throw ConfigError(r.path("mode"), "expected bp_nas or lambda_baseline; got '" + mode + "'");
  s.mode = *m;
  r.non_negative("lambda", s.lambda);
  r.integer("epochs", s.epochs, 1);
  r.integer("batch_size", s.batch_size, 1);
  r.non_negative("weight_lr", s.weight_lr);
  r.non_negative("momentum", s.momentum);
  r.non_negative("weight_decay", s.weight_decay);
  r.non_negative("alpha_decay", s.alpha_decay);
  r.non_negative("alpha_lr_scale", s.alpha_lr_scale);
  r.non_negative("arch_lr", s.arch_lr);
  r.non_negative("arch_beta1", s.arch_beta1);
  r.non_negative("arch_beta2", s.arch_beta2);
  r.real("arch_grad_clip", s.arch_grad_clip);
  r.integer("weight_steps_per_arch_step", s.weight_steps_per_arch_step, 1);
  r.non_negative("warmup_fraction", s.warmup_fraction);
  if (!(s.warmup_fraction < 1.0)) throw ConfigError(r.path("warmup_fraction"), "must be < 1");
  r.non_negative("val_coefficient", s.val_coefficient);
  r.non_negative("barrier_coefficient", s.barrier_coefficient);
  r.non_negative("prob1_coefficient", s.prob1_coefficient);
  r.positive("mu", s.barrier.mu);
  r.positive("epsilon_guard", s.barrier.epsilon_guard);
  if (!(s.barrier.epsilon_guard < s.barrier.b_max))
    throw ConfigError(r.path("epsilon_guard"), "must be smaller than b_max");
  if (const json* ms = r.find("mu_schedule")) {
    ObjectReader q(*ms, r.path("mu_schedule"));
    std::string kind = to_string(s.barrier.schedule.kind);
    q.string("kind", kind);
    if (kind == "constant") s.barrier.schedule.kind = MuSchedule::Kind::constant;
    else if (kind == "linear") s.barrier.schedule.kind = MuSchedule::Kind::linear;
    else if (kind == "exponential") s.barrier.schedule.kind = MuSchedule::Kind::exponential;
    else throw ConfigError(q.path("kind"), "expected constant, linear or exponential; got '" + kind + "'");
    q.positive("start", s.barrier.schedule.start);
    q.positive("end", s.barrier.schedule.end);
    q.integer("span_epochs", s.barrier.schedule.span_epochs, 0);
    q.finish();
  }
  r.finish();
}

inline void read_oracle(const json& j, const std::string& path, OracleConfig& o) {
  ObjectReader r(j, path);
  if (const json* s = r.find("seeds")) o.seeds = read_seeds(*s, r.path("seeds"));
  if (const json* g = r.find("b_max_grid")) {
    expect_array(*g, r.path("b_max_grid"));
    o.b_max_grid.clear();
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double b = ObjectReader::as_real((*g)[i], index_path(r.path("b_max_grid"), i));
      if (!(b > 0.0)) throw ConfigError(index_path(r.path("b_max_grid"), i), "must be positive");
      o.b_max_grid.push_back(b);
    }
  }
  r.finish();
}

inline void read_report(const json& j, const std::string& path, ReportConfig& c) {
  ObjectReader r(j, path);
  if (const json* s = r.find("seeds")) c.seeds = read_seeds(*s, r.path("seeds"));
  r.boolean("retrain", c.retrain);
  r.finish();
}

inline json pair_json(const QuantPair& q) { return json::array({q.weight_bits, q.activation_bits}); }

inline json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},          {"batch_size", t.batch_size},     {"lr", t.lr},
          {"momentum", t.momentum},      {"weight_decay", t.weight_decay}, {"alpha_decay", t.alpha_decay},
          {"alpha_lr_scale", t.alpha_lr_scale}};
}

}  // namespace detail

/// Parses and validates a configuration document.
inline RunConfig parse_config(const nlohmann::json& j) {
  using namespace detail;
  RunConfig c;
  ObjectReader r(j, "");
  if (!r.has("schema_version")) throw ConfigError("schema_version", "required");
  r.integer("schema_version", c.schema_version);
  if (c.schema_version != kSchemaVersion)
    throw ConfigError("schema_version", "unsupported version " + std::to_string(c.schema_version) + " (expected " +
                                            std::to_string(kSchemaVersion) + ")");
  r.integer("seed", c.seed, 0);
  if (auto* d = r.find("data")) read_data(*d, "data", c.data);
  auto* n = r.find("network");
  if (!n) throw ConfigError("network", "required");
  read_network(*n, "network", c.experiment);
  if (auto* q = r.find("quantization")) read_quantization(*q, "quantization", c.experiment);
  if (auto* p = r.find("pretrain")) read_pretrain(*p, "pretrain", c.experiment);
  if (auto* s = r.find("search")) read_search(*s, "search", c.experiment.search);
  if (auto* t = r.find("retrain")) read_train(*t, "retrain", c.experiment.retrain, &c.experiment.warm_start);
  if (auto* o = r.find("oracle")) read_oracle(*o, "oracle", c.oracle);
  if (auto* p = r.find("report")) read_report(*p, "report", c.report);
  r.finish();
  c.experiment.search.seed = c.seed;
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw ConfigError("", e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", path.string() + ": invalid JSON at byte " + std::to_string(e.byte) + "");
  }
  RunConfig c = parse_config(j);
  // Relative dataset paths resolve against the config file's directory.
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (path.parent_path() / p).lexically_normal().string();
  };
  resolve(c.data.path);
  resolve(c.data.images);
  resolve(c.data.labels);
  return c;
}

/// Fully resolved configuration, every default spelled out.
inline nlohmann::json to_json(const RunConfig& c) {
  using namespace detail;
  const auto& ex = c.experiment;
  const auto& s = ex.search;
  json layers = json::array();
  for (const auto& l : ex.net.layers) {
    json jl = {{"kind", to_string(l.kind)}, {"in", l.in}, {"out", l.out}};
    if (l.kind == LayerKind::conv2d) {
      jl["kernel"] = l.kernel;
      jl["height"] = l.height;
      jl["width"] = l.width;
    }
    layers.push_back(jl);
  }
  json cands = json::array();
  for (const auto& set : ex.net.candidates) {
    json js = json::array();
    for (const auto& q : set) js.push_back(pair_json(q));
    cands.push_back(js);
  }
  json qi = json::array();
  for (bool b : ex.input_quantization()) qi.push_back(b);
  json pre = {{"epochs", ex.pretrain.epochs},
              {"batch_size", ex.pretrain.batch_size},
              {"lr", ex.pretrain.lr},
              {"momentum", ex.pretrain.momentum},
              {"weight_decay", ex.pretrain.weight_decay}};
  pre["reshape_k"] = std::isinf(ex.reshape_k) ? json("inf") : json(ex.reshape_k);
  json retrain = train_json(ex.retrain);
  retrain["warm_start"] = ex.warm_start;
  json data = {{"kind", c.data.kind},
               {"num_classes", c.data.num_classes},
               {"samples_per_class", c.data.samples_per_class},
               {"dims", c.data.dims},
               {"noise_sigma", c.data.noise_sigma},
               {"seed", c.data.seed},
               {"train_fraction", c.data.train_fraction},
               {"val_fraction", c.data.val_fraction}};
  if (!c.data.path.empty()) data["path"] = c.data.path;
  if (!c.data.images.empty()) data["images"] = c.data.images;
  if (!c.data.labels.empty()) data["labels"] = c.data.labels;
  return {
      {"schema_version", c.schema_version},
      {"seed", c.seed},
      {"data", data},
      {"network", {{"layers", layers}, {"candidates", cands}, {"quantize_input", qi}}},
      {"quantization",
       {{"activation_alpha", ex.alpha_init.activation ? json(*ex.alpha_init.activation) : json(nullptr)},
        {"calibration_samples", ex.calibration_samples}}},
      {"pretrain", pre},
      {"search",
       {{"b_max", s.barrier.b_max},
        {"mode", to_string(s.mode)},
        {"lambda", s.lambda},
        {"epochs", s.epochs},
        {"batch_size", s.batch_size},
        {"weight_lr", s.weight_lr},
        {"momentum", s.momentum},
        {"weight_decay", s.weight_decay},
        {"alpha_decay", s.alpha_decay},
        {"alpha_lr_scale", s.alpha_lr_scale},
        {"arch_lr", s.arch_lr},
        {"arch_beta1", s.arch_beta1},
        {"arch_beta2", s.arch_beta2},
        {"arch_grad_clip", s.arch_grad_clip},
        {"weight_steps_per_arch_step", s.weight_steps_per_arch_step},
        {"warmup_fraction", s.warmup_fraction},
        {"val_coefficient", s.val_coefficient},
        {"barrier_coefficient", s.barrier_coefficient},
        {"prob1_coefficient", s.prob1_coefficient},
        {"mu", s.barrier.mu},
        {"epsilon_guard", s.barrier.epsilon_guard},
        {"mu_schedule",
         {{"kind", to_string(s.barrier.schedule.kind)},
          {"start", s.barrier.schedule.start},
          {"end", s.barrier.schedule.end},
          {"span_epochs", s.barrier.schedule.span_epochs}}}}},
      {"retrain", retrain},
      {"oracle", {{"seeds", c.oracle.seeds}, {"b_max_grid", c.oracle.b_max_grid}}},
      {"report", {{"seeds", c.report.seeds}, {"retrain", c.report.retrain}}},
  };
}

/// Builds the dataset the configuration describes, with split tags assigned.
inline Dataset make_dataset(const DataConfig& d) {
  Dataset ds;
  if (d.kind == "spirals") ds = gen_spirals(d.num_classes, d.samples_per_class, d.noise_sigma, d.seed);
  else if (d.kind == "blobs") ds = gen_blobs(d.num_classes, d.samples_per_class, d.dims, d.noise_sigma, d.seed);
  else if (d.kind == "csv") ds = load_csv(d.path, d.num_classes);
  else if (d.kind == "idx") ds = load_idx(d.images, d.labels, d.num_classes);
  else throw ConfigError("data.kind", "unsupported kind '" + d.kind + "'");
  assign_splits(ds, d.train_fraction, d.val_fraction, d.seed);
  ds.validate();
  return ds;
}

}  // namespace bpnas
