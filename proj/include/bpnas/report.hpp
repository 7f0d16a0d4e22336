// SPDX-License-Identifier: Apache-2.0
//
// Serialization of search results: JSON summaries, a per-epoch CSV and a
// JSON-lines importance trajectory.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "bpnas/io.hpp"
#include "bpnas/oracle.hpp"
#include "bpnas/search.hpp"

namespace bpnas {

inline nlohmann::json assignment_json(const MixedPrecisionAssignment& mp) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& q : mp.bits) a.push_back({q.weight_bits, q.activation_bits});
  return a;
}

inline nlohmann::json report_json(const SearchReport& r, const NetworkSpec& net) {
  nlohmann::json j = {
      {"mode", to_string(r.mode)},
      {"seed", r.seed},
      {"b_max", r.b_max},
      {"assignment", assignment_json(r.assignment)},
      {"assignment_text", r.assignment.to_string()},
      {"average_bit", r.average_bit},
      {"bops", bops(net, r.assignment)},
      {"feasible", r.feasible},
      {"epochs_run", r.epochs.size()},
  };
  j["retrained_accuracy"] = r.retrained_accuracy ? nlohmann::json(*r.retrained_accuracy) : nlohmann::json(nullptr);
  j["aborted"] = r.aborted.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.aborted);
  if (!r.epochs.empty()) {
    const auto& last = r.epochs.back();
    j["final_expected_cost"] = last.expected_cost;
    j["final_prob1"] = last.prob1;
    double min_max_p = 1.0;
    for (const auto& p : last.p) min_max_p = std::min(min_max_p, *std::max_element(p.begin(), p.end()));
    j["final_min_max_importance"] = min_max_p;
  }
  return j;
}

inline std::string epochs_csv(const SearchReport& r) {
  std::string out = "epoch,train_loss,val_loss,expected_cost,penalty,prob1,mu,arch_steps,guard_steps\n";
  for (const auto& e : r.epochs) {
    out += std::to_string(e.epoch) + "," + format_real(e.train_loss) + "," + format_real(e.val_loss) + "," +
           format_real(e.expected_cost) + "," + format_real(e.barrier) + "," + format_real(e.prob1) + "," +
           format_real(e.mu) + "," + std::to_string(e.arch_steps) + "," + std::to_string(e.guard_steps) + "\n";
  }
  return out;
}

inline std::string importance_jsonl(const SearchReport& r) {
  std::string out;
  for (const auto& e : r.epochs) {
    nlohmann::json j = {{"epoch", e.epoch}, {"expected_cost", e.expected_cost}, {"p", e.p}};
    out += j.dump() + "\n";
  }
  return out;
}

struct ScatterRow {
  std::uint64_t seed = 0;
  double average_bit = 0.0;
  std::optional<double> accuracy;
  bool feasible = false;
};

inline std::string scatter_csv(const std::vector<ScatterRow>& rows) {
  std::string out = "seed,average_bit,accuracy,feasible\n";
  for (const auto& r : rows)
    out += std::to_string(r.seed) + "," + format_real(r.average_bit) + "," +
           (r.accuracy ? format_real(*r.accuracy) : std::string()) + "," + (r.feasible ? "true" : "false") + "\n";
  return out;
}

/// One row per B_max: the constrained optimum of a sweep.
inline std::string summary_csv(const OracleSweep& sweep, const std::vector<double>& grid) {
  std::string out = "b_max,assignment,average_bit,bops,mean_accuracy,feasible\n";
  for (double b : grid) {
    out += format_real(b) + ",";
    try {
      const auto& r = best_under_constraint(sweep, b);
      out += r.assignment.to_string() + "," + format_real(r.average_bit) + "," + std::to_string(r.bops) + "," +
             format_real(r.mean_accuracy) + "," + (check_constraint(sweep.net, r.assignment, b) ? "true" : "false");
    } catch (const InfeasibleBudget&) {
      out += ",,,,false";
    }
    out += "\n";
  }
  return out;
}

}  // namespace bpnas
