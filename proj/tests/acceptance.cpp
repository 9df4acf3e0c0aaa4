// Acceptance checks. One line per criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctjmdp/cli.hpp"
#include "ctjmdp/costs.hpp"
#include "ctjmdp/experiments.hpp"
#include "ctjmdp/forward.hpp"
#include "ctjmdp/simulator.hpp"
#include "oracles.hpp"

using namespace ctjmdp;
using nlohmann::json;
namespace fs = std::filesystem;
namespace ex = ctjmdp::experiments;

namespace {

const std::string kData = CTJMDP_DATA_DIR;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

unsigned threads() { return resolve_threads(0); }

Outcome sufficiency() {
  const auto t0 = std::chrono::steady_clock::now();
  ex::BatteryConfig cfg;
  cfg.threads = threads();
  const json r = ex::run_sufficiency_battery(cfg);
  const double secs = seconds_since(t0);
  const double eq = r.at("equality_sup"), viol = r.at("violation_sup");
  const bool ok = cfg.models >= 5 && eq <= 1e-6 && viol <= 1e-6 && secs <= 60.0;
  return {ok, fmt("models=%zu equality_sup=%.3g violation_sup=%.3g runtime=%.1fs", cfg.models, eq, viol, secs)};
}

Outcome counterexample() {
  const auto t0 = std::chrono::steady_clock::now();
  ex::TwoStateConfig cfg;
  cfg.threads = threads();
  const json r = ex::run_example_two_state(cfg);
  const double secs = seconds_since(t0);
  bool ok = secs <= 120.0 && cfg.n_mc >= 100000;
  double worst_residual = 0.0, worst_marginal = 0.0, worst_z = 0.0, min_gap = 1e300;
  for (const json& row : r.at("results")) {
    const double gap = row.at("gap");
    min_gap = std::min(min_gap, gap);
    worst_residual = std::max(worst_residual, row.at("gap_residual").get<double>());
    worst_marginal = std::max(worst_marginal, row.at("marginal_equality_sup").get<double>());
    for (const char* who : {"pi", "phi"}) {
      const json& mc = row.at(std::string("mc_") + who);
      const double exact = row.at(std::string("V_") + who);
      const double z = std::abs(mc.at("value").get<double>() - exact) / mc.at("se").get<double>();
      worst_z = std::max(worst_z, z);
    }
  }
  ok = ok && min_gap > 0.0 && worst_residual <= 1e-6 && worst_marginal <= 1e-6 && worst_z <= 3.0;
  return {ok, fmt("min_gap=%.4g gap_residual=%.3g marginal_sup=%.3g mc_worst=%.2f se runtime=%.1fs", min_gap,
                  worst_residual, worst_marginal, worst_z, secs)};
}

Outcome forward_cross_validation() {
  ex::BatteryConfig cfg;
  const TimeGrid grid = TimeGrid::covering(cfg.step, cfg.horizon);
  double series_ode = 0.0, ode_unif = 0.0;
  bool monotone = true;
  for (std::size_t i = 0; i < cfg.models; ++i) {
    const ex::BatteryEntry e = ex::random_entry(cfg.seed, i);
    const MarginalCurve ode = forward_ode(e.model, e.markov, e.gamma, grid);
    const SeriesResult series = feller_series(e.model, e.markov, e.gamma, grid);
    const oracle::Matrix unif = oracle::uniformized(e.model, e.markov, e.gamma, grid);
    for (std::size_t k = 0; k < grid.points(); ++k)
      for (std::size_t z = 0; z < e.model.num_states(); ++z) {
        series_ode = std::max(series_ode, std::abs(series.curve(k, z) - ode(k, z)));
        ode_unif = std::max(ode_unif, std::abs(ode(k, z) - unif[k][z]));
      }
    // partial sums with a growing number of terms never decrease
    MarginalCurve previous(grid, e.model.num_states());
    for (std::size_t n = 1; n <= series.terms; n = n < 4 ? n + 1 : 2 * n) {
      const MarginalCurve partial = feller_series(e.model, e.markov, e.gamma, grid, n, 0.0).curve;
      for (std::size_t j = 0; j < partial.data.size(); ++j) monotone = monotone && partial.data[j] >= previous.data[j];
      previous = partial;
    }
    for (std::size_t j = 0; j < previous.data.size(); ++j)
      monotone = monotone && series.curve.data[j] >= previous.data[j] - 1e-15;
  }
  const bool ok = series_ode <= 1e-4 && ode_unif <= 1e-8 && monotone;
  return {ok, fmt("models=%zu series_vs_ode=%.3g ode_vs_uniformization=%.3g partial_sums_monotone=%s", cfg.models,
                  series_ode, ode_unif, monotone ? "yes" : "no")};
}

Outcome compensator() {
  const Model m = ex::switching_model(false);
  const Simulator sim(m, ex::parity_policy(m));
  const double T = 2.0;
  const std::size_t N = 100000;
  const auto paths = sim.simulate(ex::point_mass(m, "2"), {T, 1000000, N, 4242, threads()});
  double worst = 0.0;
  std::string detail;
  for (std::size_t member = 0; member < m.num_states(); ++member) {
    const std::vector<char> Z = state_set(m, {member});
    for (int variant = 0; variant < 2; ++variant) {
      double sum = 0.0, sum2 = 0.0;
      for (const Trajectory& tr : paths) {
        const double d = variant == 0 ? static_cast<double>(count_into(tr, Z, T)) - integrated_intensity_into(sim, tr, Z, T)
                                      : static_cast<double>(count_out_of(tr, Z, T)) -
                                            integrated_intensity_out_of(sim, tr, Z, T);
        sum += d;
        sum2 += d * d;
      }
      const double mean = sum / N;
      const double se = std::sqrt(std::max(0.0, sum2 / N - mean * mean) / N);
      const double z = std::abs(mean) / se;
      worst = std::max(worst, z);
      detail += fmt("%s{%s}=%.2fse ", variant == 0 ? "into" : "out", m.state_names()[member].c_str(), z);
    }
  }
  return {worst <= 3.0, detail + fmt("N=%zu", N)};
}

Outcome jump_cost_transform() {
  const Model m = ex::switching_model(false);
  const FiniteMemoryPolicy pi = ex::parity_policy(m);
  const std::vector<double> gamma = ex::point_mass(m, "2");
  const double alpha = 1.0, eps = 1e-8;
  const DiscountedCostResult exact = infinite_horizon_cost(m, Policy(pi), gamma, alpha, eps, 0.00125);
  const Simulator sim(m, pi);
  const std::size_t N = 100000;
  const auto paths = sim.simulate(gamma, {exact.truncation, 1000000, N, 5151, threads()});
  const DiscountedCostResult mc = mc_discounted_cost(sim, paths, alpha, exact.truncation, false, true);
  const double z = std::abs(mc.value - exact.value) / mc.error;
  return {z <= 3.0, fmt("exact=%.6f mc=%.6f se=%.2g diff=%.2fse N=%zu", exact.value, mc.value, mc.error, z, N)};
}

Outcome explosion() {
  ex::ExplosionConfig cfg;
  cfg.threads = threads();
  const json r = ex::run_explosion_demo(cfg);
  std::string defects;
  for (const json& d : r.at("depths")) defects += fmt("%.4f/", d.at("mass_defect").get<double>());
  if (!defects.empty()) defects.pop_back();
  const json& t = r.at("explosion_time");
  const double mean = t.at("mean"), se = t.at("se");
  const bool ok = r.at("defect_nonincreasing_in_depth").get<bool>() &&
                  r.at("defect_above_half_for_depth_ge_50").get<bool>() &&
                  std::abs(mean - std::numbers::pi * std::numbers::pi / 6.0) <= 3.0 * se && cfg.n_mc >= 10000;
  return {ok, fmt("defects(10/50/200)=%s t_inf=%.4f+-%.4f target=%.4f", defects.c_str(), mean, se,
                  std::numbers::pi * std::numbers::pi / 6.0)};
}

Outcome extension() {
  ex::BatteryConfig cfg;
  cfg.threads = threads();
  const json r = ex::run_extension_battery(cfg);
  const double res = r.at("residual_sup");
  return {res <= 1e-6, fmt("models=%zu residual_sup=%.3g u=ln2", cfg.models, res)};
}

Outcome average_cost() {
  const json r = ex::run_average_cost_check({});
  double worst = 0.0, order = -1e300;
  bool ok = true;
  for (const json& row : r.at("results")) {
    const double s = row.at("stationary"), a = row.at("abel"), c = row.at("cesaro");
    worst = std::max({worst, std::abs(a - s), std::abs(c - s)});
    order = std::max(order, a - c);
    ok = ok && std::abs(a - s) <= 2e-3 && std::abs(c - s) <= 2e-3 && a <= c + 1e-6;
  }
  return {ok, fmt("chains=%zu worst_error=%.3g max(abel-cesaro)=%.3g", r.at("results").size(), worst, order)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome reproducibility() {
  const fs::path dir = fs::temp_directory_path() / "ctjmdp_acceptance";
  fs::create_directories(dir);
  {
    std::ofstream(dir / "two_state.json") << R"({"n_mc": 5000})";
    std::ofstream(dir / "explosion.json") << R"({"depths": [10, 50], "n_mc": 2000})";
  }
  const std::vector<std::string> in = {"--model", kData + "/switching.json", "--policy", kData + "/parity.json",
                                       "--gamma", kData + "/gamma_2.json"};
  auto with = [&](std::vector<std::string> head, const std::vector<std::string>& tail) {
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
  };
  const std::vector<std::vector<std::string>> invocations = {
      with(with({"simulate"}, in), {"--horizon", "3", "--n", "2000", "--seed", "3", "--threads", "2",
                                    "--grid-step", "0.1", "--marginals", "@marginals.csv"}),
      with(with({"forward"}, in), {"--horizon", "2", "--grid-step", "0.01", "--method", "both", "--state-action"}),
      with(with({"markovize"}, in), {"--horizon", "2", "--grid-step", "0.01"}),
      with(with({"markovize"}, in),
           {"--horizon", "2", "--grid-step", "0.05", "--method", "mc", "--n", "5000", "--seed", "4", "--threads", "2"}),
      with(with({"verify"}, in), {"--horizon", "2", "--grid-step", "0.00125"}),
      with(with({"evaluate"}, in), {"--alpha", "1", "--infinite"}),
      with(with({"evaluate"}, in),
           {"--alpha", "1", "--horizon", "5", "--method", "mc", "--n", "5000", "--seed", "9", "--threads", "2"}),
      {"experiment", "battery", "--threads", "2", "--csv", "@battery.csv"},
      {"experiment", "two-state", "--config", (dir / "two_state.json").string(), "--threads", "2", "--seed", "5"},
      {"experiment", "explosion", "--config", (dir / "explosion.json").string(), "--threads", "2"},
      {"experiment", "extension", "--threads", "2"},
      {"experiment", "average"},
  };
  std::size_t identical = 0;
  std::string failed;
  for (std::size_t i = 0; i < invocations.size(); ++i) {
    std::string outputs[2];
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path run_dir = dir / fmt("run%zu_%d", i, rep);
      fs::create_directories(run_dir);
      std::vector<std::string> args = {"ctjmdp"};
      std::vector<fs::path> files = {run_dir / "out.txt"};
      for (const std::string& a : invocations[i]) {
        if (a.starts_with("@")) {
          files.push_back(run_dir / a.substr(1));
          args.push_back(files.back().string());
        } else {
          args.push_back(a);
        }
      }
      args.insert(args.end(), {"--out", files.front().string()});
      std::vector<const char*> argv;
      for (const auto& a : args) argv.push_back(a.c_str());
      std::ostringstream out, err;
      const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
      outputs[rep] = fmt("exit=%d\n", code) + out.str() + err.str();
      for (const fs::path& f : files) outputs[rep] += "\n--\n" + slurp(f);
    }
    if (outputs[0] == outputs[1] && outputs[0].size() > 64) {
      ++identical;
    } else {
      failed += " " + invocations[i][0];
    }
  }
  fs::remove_all(dir);
  return {identical == invocations.size(),
          fmt("%zu/%zu invocations byte-identical%s", identical, invocations.size(), failed.c_str())};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"sufficiency equality on the battery", sufficiency},
      {"two-state counterexample", counterexample},
      {"forward solver cross-validation", forward_cross_validation},
      {"compensator identity", compensator},
      {"jump-cost transformation", jump_cost_transform},
      {"explosion and minimal solution", explosion},
      {"extension identity", extension},
      {"average-cost relations", average_cost},
      {"CLI reproducibility", reproducibility},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("[%s] %zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
