// SPDX-License-Identifier: Apache-2.0
//
// Brute-force reference: enumerate every assignment of a small network,
// retrain each one, and pick the most accurate one under a budget.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "bpnas/costmodel.hpp"
#include "bpnas/io.hpp"
#include "bpnas/pipeline.hpp"

namespace bpnas {

inline constexpr std::size_t kOracleCap = 10000;

class InfeasibleBudget : public Error {
 public:
  using Error::Error;
};

/// Every assignment in lexicographic candidate order (last layer varies fastest).
inline std::vector<MixedPrecisionAssignment> enumerate_configs(const NetworkSpec& net, std::size_t cap = kOracleCap) {
  net.validate();
  double count = 1.0;
  for (const auto& c : net.candidates) count *= static_cast<double>(c.size());
  if (count > static_cast<double>(cap))
    throw Error("oracle: " + format_real(count) + " configurations exceed the cap of " + std::to_string(cap) +
                "; shrink the toy space (fewer searchable layers or candidates)");
  std::vector<MixedPrecisionAssignment> out;
  std::vector<std::size_t> digit(net.size(), 0);
  for (;;) {
    MixedPrecisionAssignment mp;
    for (std::size_t i = 0; i < net.size(); ++i) mp.bits.push_back(net.candidates[i][digit[i]]);
    out.push_back(std::move(mp));
    std::size_t i = net.size();
    while (i > 0) {
      --i;
      if (++digit[i] < net.candidates[i].size()) break;
      digit[i] = 0;
      if (i == 0) return out;
    }
    if (net.size() == 0) return out;
  }
}

struct OracleRecord {
  MixedPrecisionAssignment assignment;
  double average_bit = 0.0;
  std::int64_t bops = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;  // per seed; NaN marks a diverged run
  double mean_accuracy = 0.0;      // over non-diverged seeds
  double std_accuracy = 0.0;
  int diverged = 0;

  bool usable() const { return diverged < static_cast<int>(seeds.size()); }

  void summarize() {
    double sum = 0.0, sq = 0.0;
    int n = 0;
    diverged = 0;
    for (double a : accuracies) {
      if (std::isnan(a)) {
        ++diverged;
        continue;
      }
      sum += a;
      ++n;
    }
    mean_accuracy = n ? sum / n : 0.0;
    for (double a : accuracies)
      if (!std::isnan(a)) sq += (a - mean_accuracy) * (a - mean_accuracy);
    std_accuracy = n > 1 ? std::sqrt(sq / (n - 1)) : 0.0;
  }
};

struct OracleSweep {
  NetworkSpec net;
  std::vector<OracleRecord> records;
};

/// Float checkpoints per seed; one pretraining run each, shared by every
/// configuration evaluated with that seed.
class CheckpointCache {
 public:
  CheckpointCache(const Experiment& ex, const Dataset& ds) : ex_(ex), ds_(ds) {}

  const Checkpoint& get(std::uint64_t seed) {
    auto it = cache_.find(seed);
    if (it == cache_.end()) it = cache_.emplace(seed, pretrain(ex_, ds_, seed)).first;
    return it->second;
  }

 private:
  const Experiment& ex_;
  const Dataset& ds_;
  std::map<std::uint64_t, Checkpoint> cache_;
};

/// Retrains the fixed assignment once per seed from that seed's checkpoint.
inline OracleRecord evaluate_config(const Experiment& ex, CheckpointCache& ckpts, const MixedPrecisionAssignment& mp,
                                    const Dataset& ds, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw Error("oracle: seed list is empty");
  ex.net.check_assignment(mp);
  OracleRecord r;
  r.assignment = mp;
  r.average_bit = average_bit(ex.net, mp);
  r.bops = bops(ex.net, mp);
  r.seeds = seeds;
  for (auto seed : seeds) {
    QuantNet net = make_retrain_net(ex, ckpts.get(seed), mp, ds);
    auto res = retrain_sampled(net, ds, ex.retrain, seed);
    r.accuracies.push_back(res.diverged ? std::numeric_limits<double>::quiet_NaN() : res.accuracy);
  }
  r.summarize();
  return r;
}

using OracleProgress = std::function<void(std::size_t done, std::size_t total, const OracleRecord&)>;

inline OracleSweep run_sweep(const Experiment& ex, const Dataset& ds, const std::vector<std::uint64_t>& seeds,
                             const OracleProgress& progress = {}) {
  OracleSweep sweep;
  sweep.net = ex.net;
  auto configs = enumerate_configs(ex.net);
  CheckpointCache ckpts(ex, ds);
  for (std::size_t i = 0; i < configs.size(); ++i) {
    sweep.records.push_back(evaluate_config(ex, ckpts, configs[i], ds, seeds));
    if (progress) progress(i + 1, configs.size(), sweep.records.back());
  }
  return sweep;
}

/// Most accurate record with average_bit <= b_max. Ties go to lower bops,
/// then to the earlier record in enumeration order.
inline const OracleRecord& best_under_constraint(const OracleSweep& sweep, double b_max) {
  const OracleRecord* best = nullptr;
  double cheapest = std::numeric_limits<double>::infinity();
  for (const auto& r : sweep.records) {
    cheapest = std::min(cheapest, r.average_bit);
    if (!r.usable() || !check_constraint(sweep.net, r.assignment, b_max)) continue;
    if (!best || r.mean_accuracy > best->mean_accuracy ||
        (r.mean_accuracy == best->mean_accuracy && r.bops < best->bops))
      best = &r;
  }
  if (!best)
    throw InfeasibleBudget("oracle: no configuration satisfies B_max=" + format_real(b_max) +
                           "; the cheapest average_bit is " + format_real(cheapest));
  return *best;
}

// Persistence ---------------------------------------------------------------------

inline const char* kSweepHeader = "index,assignment,average_bit,bops,mean_accuracy,std_accuracy,diverged,seeds,accuracies";

inline std::string sweep_to_csv(const OracleSweep& sweep) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (std::size_t i = 0; i < sweep.records.size(); ++i) {
    const auto& r = sweep.records[i];
    out += std::to_string(i) + "," + r.assignment.to_string() + "," + format_real(r.average_bit) + "," +
           std::to_string(r.bops) + "," + format_real(r.mean_accuracy) + "," + format_real(r.std_accuracy) + "," +
           std::to_string(r.diverged) + "," +
           join(r.seeds, ';', [](std::uint64_t s) { return std::to_string(s); }) + "," +
           join(r.accuracies, ';', [](double a) { return std::isnan(a) ? std::string("nan") : format_real(a); }) + "\n";
  }
  return out;
}

inline QuantPair parse_pair(const std::string& s, const std::string& where) {
  auto parts = split(s, 'x');
  if (parts.size() != 2) throw Error(where + ": bad bit pair '" + s + "'");
  return {static_cast<int>(parse_real(parts[0], where)), static_cast<int>(parse_real(parts[1], where))};
}

/// Parses a sweep file written by sweep_to_csv and re-derives average_bit and
/// bops from the network, rejecting files that do not match it.
inline OracleSweep sweep_from_csv(const std::string& text, const NetworkSpec& net, const std::string& name = "sweep") {
  OracleSweep sweep;
  sweep.net = net;
  auto lines = split(text, '\n');
  if (lines.empty() || lines[0] != kSweepHeader) throw Error(name + ": missing or unexpected header");
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const std::string where = name + ":" + std::to_string(ln + 1);
    auto f = split(lines[ln], ',');
    if (f.size() != 9) throw Error(where + ": expected 9 fields, got " + std::to_string(f.size()));
    OracleRecord r;
    for (const auto& p : split(f[1], '|')) r.assignment.bits.push_back(parse_pair(p, where));
    net.check_assignment(r.assignment);
    r.average_bit = average_bit(net, r.assignment);
    r.bops = bops(net, r.assignment);
    if (std::to_string(r.bops) != f[3]) throw Error(where + ": bops do not match the network");
    for (const auto& s : split(f[7], ';')) r.seeds.push_back(std::stoull(s));
    for (const auto& a : split(f[8], ';'))
      r.accuracies.push_back(a == "nan" ? std::numeric_limits<double>::quiet_NaN() : parse_real(a, where));
    if (r.accuracies.size() != r.seeds.size()) throw Error(where + ": seed/accuracy count mismatch");
    r.summarize();
    sweep.records.push_back(std::move(r));
  }
  return sweep;
}

}  // namespace bpnas
