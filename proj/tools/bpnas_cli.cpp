// SPDX-License-Identifier: Apache-2.0
//
// bpnas: command line front end.
//
//   bpnas search    --config run.json [--seed N] [--b-max B] [--mode M] [--out DIR]
//   bpnas oracle    --config run.json [--seed N] [--b-max B] [--out DIR]
//   bpnas report    --config run.json [--b-max B] [--mode M] [--out DIR]
//   bpnas gradcheck [--config run.json] [--seed N] [--b-max B] [--out DIR] [--fault F]
//
// Exit status: 0 success, 1 configuration error, 2 the final assignment
// violates the budget, 3 a gradient check failed, 4 any other error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "bpnas/bpnas.hpp"

namespace fs = std::filesystem;
using namespace bpnas;

namespace {

enum Exit { kOk = 0, kConfig = 1, kBudget = 2, kCheckFailed = 3, kFailure = 4 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> b_max;
  std::optional<std::string> mode;
  std::string out = "bpnas-out";
  std::string fault = "none";
};

RunConfig resolve(const Options& o) {
  RunConfig c = load_config(o.config);
  if (o.seed) {
    c.seed = *o.seed;
    c.experiment.search.seed = *o.seed;
  }
  if (o.b_max) {
    if (!(*o.b_max > 0.0)) throw ConfigError("search.b_max", "--b-max must be positive");
    c.experiment.search.barrier.b_max = *o.b_max;
    if (!(c.experiment.search.barrier.epsilon_guard < *o.b_max))
      throw ConfigError("search.epsilon_guard", "must be smaller than b_max");
  }
  if (o.mode) {
    auto m = parse_mode(*o.mode);
    if (!m) throw ConfigError("search.mode", "--mode expects bp_nas or lambda_baseline");
    c.experiment.search.mode = *m;
  }
  return c;
}

Dataset load_data(const RunConfig& c) {
  Dataset ds;
  try {
    ds = make_dataset(c.data);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("data", e.what());
  }
  const auto& l0 = c.experiment.net.layers.front();
  if (ds.feature_size() != l0.in * l0.height * l0.width)
    throw ConfigError("network.layers[0].in", "input size " + std::to_string(l0.in * l0.height * l0.width) +
                                                  " does not match the data's " + std::to_string(ds.feature_size()) +
                                                  " features");
  if (static_cast<std::size_t>(ds.num_classes) != c.experiment.net.layers.back().out)
    throw ConfigError("network.layers", "last layer width must equal data.num_classes (" +
                                            std::to_string(ds.num_classes) + ")");
  return ds;
}

void write_json(const fs::path& p, const nlohmann::json& j) { write_text_file(p, j.dump(2) + "\n"); }

void write_search_outputs(const fs::path& dir, const RunConfig& c, const SearchReport& r) {
  write_json(dir / "report.json", report_json(r, c.experiment.net));
  write_json(dir / "assignment.json", {{"assignment", assignment_json(r.assignment)},
                                       {"average_bit", r.average_bit},
                                       {"b_max", r.b_max},
                                       {"feasible", r.feasible}});
  write_text_file(dir / "epochs.csv", epochs_csv(r));
  write_text_file(dir / "importance.jsonl", importance_jsonl(r));
}

int cmd_search(const Options& o) {
  RunConfig c = resolve(o);
  Dataset ds = load_data(c);
  const fs::path out(o.out);
  write_json(out / "config.resolved.json", to_json(c));
  auto res = run_pipeline(c.experiment, ds, c.seed, true);
  write_search_outputs(out, c, res.report);
  const auto& r = res.report;
  std::cout << "assignment " << r.assignment.to_string() << " average_bit " << format_real(r.average_bit)
            << " b_max " << format_real(r.b_max) << " feasible " << (r.feasible ? "true" : "false") << " accuracy "
            << (r.retrained_accuracy ? format_real(*r.retrained_accuracy) : std::string("n/a")) << "\n";
  if (!r.aborted.empty()) std::cerr << "search aborted: " << r.aborted << "\n";
  return r.feasible ? kOk : kBudget;
}

/// Hash of everything that changes sweep results.
std::string sweep_key(const RunConfig& c) {
  auto j = to_json(c);
  nlohmann::json k = {{"data", j["data"]},         {"network", j["network"]}, {"quantization", j["quantization"]},
                      {"pretrain", j["pretrain"]}, {"retrain", j["retrain"]}, {"seeds", j["oracle"]["seeds"]}};
  return hex64(fnv1a64(k.dump()));
}

int cmd_oracle(const Options& o) {
  RunConfig c = resolve(o);
  if (o.seed) c.oracle.seeds = {*o.seed};
  if (o.b_max) c.oracle.b_max_grid = {*o.b_max};
  Dataset ds = load_data(c);
  const fs::path out(o.out);
  write_json(out / "config.resolved.json", to_json(c));
  const std::string key = sweep_key(c);
  OracleSweep sweep;
  bool cached = false;
  if (fs::exists(out / "sweep.csv") && fs::exists(out / "sweep.key") && read_text_file(out / "sweep.key") == key + "\n") {
    sweep = sweep_from_csv(read_text_file(out / "sweep.csv"), c.experiment.net, (out / "sweep.csv").string());
    cached = sweep.records.size() == enumerate_configs(c.experiment.net).size();
  }
  if (!cached) {
    sweep = run_sweep(c.experiment, ds, c.oracle.seeds, [](std::size_t done, std::size_t total, const OracleRecord& r) {
      logging::info("oracle " + std::to_string(done) + "/" + std::to_string(total) + " " + r.assignment.to_string() +
                    " mean accuracy " + format_real(r.mean_accuracy));
    });
    write_text_file(out / "sweep.csv", sweep_to_csv(sweep));
    write_text_file(out / "sweep.key", key + "\n");
  }
  write_text_file(out / "summary.csv", summary_csv(sweep, c.oracle.b_max_grid));
  std::cout << "configurations " << sweep.records.size() << (cached ? " (cached)" : "") << "\n";
  for (double b : c.oracle.b_max_grid) {
    try {
      const auto& best = best_under_constraint(sweep, b);
      std::cout << "b_max " << format_real(b) << " best " << best.assignment.to_string() << " average_bit "
                << format_real(best.average_bit) << " mean_accuracy " << format_real(best.mean_accuracy) << "\n";
    } catch (const InfeasibleBudget& e) {
      std::cout << "b_max " << format_real(b) << " infeasible: " << e.what() << "\n";
    }
  }
  return kOk;
}

int cmd_report(const Options& o) {
  RunConfig c = resolve(o);
  if (o.seed) c.report.seeds = {*o.seed};
  Dataset ds = load_data(c);
  const fs::path out(o.out);
  write_json(out / "config.resolved.json", to_json(c));
  std::vector<ScatterRow> rows;
  std::string traj = "seed,epoch,layer,candidate,bits,importance\n";
  int feasible = 0;
  for (auto seed : c.report.seeds) {
    RunConfig rc = c;
    rc.seed = seed;
    auto res = run_pipeline(rc.experiment, ds, seed, c.report.retrain);
    write_search_outputs(out / "runs" / std::to_string(seed), rc, res.report);
    const auto& r = res.report;
    rows.push_back({seed, r.average_bit, r.retrained_accuracy, r.feasible});
    feasible += r.feasible;
    for (const auto& e : r.epochs)
      for (std::size_t i = 0; i < e.p.size(); ++i)
        for (std::size_t j = 0; j < e.p[i].size(); ++j)
          traj += std::to_string(seed) + "," + std::to_string(e.epoch) + "," + std::to_string(i) + "," +
                  std::to_string(j) + "," + c.experiment.net.candidates[i][j].to_string() + "," +
                  format_real(e.p[i][j]) + "\n";
    logging::info("seed " + std::to_string(seed) + " " + r.assignment.to_string());
  }
  write_text_file(out / "scatter.csv", scatter_csv(rows));
  write_text_file(out / "trajectories.csv", traj);
  std::cout << "runs " << rows.size() << " feasible " << feasible << "\n";
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  auto fault = parse_fault(o.fault);
  if (!fault) throw ConfigError("--fault", "expected none, barrier-sign, prob1-sign or theta-sign");
  double b_max = 3.0;
  std::uint64_t seed = 1;
  if (!o.config.empty()) {
    RunConfig c = resolve(o);
    b_max = c.experiment.search.barrier.b_max;
    seed = c.seed;
  } else {
    if (o.b_max) b_max = *o.b_max;
    if (o.seed) seed = *o.seed;
  }
  std::vector<CheckOutcome> checks = {
      check_barrier_gradient(b_max, {0.05, 0.2, 0.5}, *fault),
      check_barrier_zero(b_max),
      check_prob1_gradient(seed, 100, *fault),
      check_prob1_property(seed),
      check_supernet_theta_gradient(seed, *fault),
      check_supernet_weight_gradient(seed),
  };
  std::string csv = "check,max_error,tolerance,pass,detail\n";
  bool ok = true;
  for (const auto& ch : checks) {
    std::cout << (ch.pass ? "PASS " : "FAIL ") << ch.name << " max_error " << format_real(ch.max_error) << " ("
              << ch.detail << ")\n";
    csv += ch.name + "," + format_real(ch.max_error) + "," + format_real(ch.tolerance) + "," +
           (ch.pass ? "true" : "false") + "," + ch.detail + "\n";
    ok = ok && ch.pass;
  }
  write_text_file(fs::path(o.out) / "gradcheck.csv", csv);
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-precision bitwidth search with a barrier-penalized supernet"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub, bool config_required) {
    auto* cfg = sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    if (config_required) cfg->required();
    sub->add_option("--seed", o.seed, "seed (overrides the config)");
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_option("--b-max", o.b_max, "budget in average bits (overrides the config)");
  };
  auto* search = app.add_subcommand("search", "run one search, retrain the result, write reports");
  common(search, true);
  search->add_option("--mode", o.mode, "bp_nas or lambda_baseline");
  auto* oracle = app.add_subcommand("oracle", "enumerate and retrain every assignment");
  common(oracle, true);
  auto* report = app.add_subcommand("report", "search once per configured seed and tabulate");
  common(report, true);
  report->add_option("--mode", o.mode, "bp_nas or lambda_baseline");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of every hand-derived gradient");
  common(grad, false);
  grad->add_option("--fault", o.fault, "negate one analytic gradient: barrier-sign, prob1-sign, theta-sign");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }
  try {
    if (*search) return cmd_search(o);
    if (*oracle) return cmd_oracle(o);
    if (*report) return cmd_report(o);
    return cmd_gradcheck(o);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
