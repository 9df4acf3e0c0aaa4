#pragma once

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctjmdp/costs.hpp"
#include "ctjmdp/error.hpp"
#include "ctjmdp/experiments.hpp"
#include "ctjmdp/forward.hpp"
#include "ctjmdp/io.hpp"
#include "ctjmdp/markovize.hpp"
#include "ctjmdp/simulator.hpp"

namespace ctjmdp::cli {

using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitVerification = 2;
inline constexpr int kExitUsage = 64;

struct Inputs {
  std::string model, policy, gamma;
};

namespace detail {

struct Loaded {
  Model model;
  Policy policy;
  std::vector<double> gamma;
};

inline Loaded load(const Inputs& in) {
  Model m = io::load_model(in.model);
  Policy p = io::load_policy(m, in.policy);
  std::vector<double> g = io::load_gamma(m, in.gamma);
  return {std::move(m), std::move(p), std::move(g)};
}

inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") out << text;
  else io::write_text_file(path, text);
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

/// Exact state-action law of a grid policy by the Feller series (via the
/// memory-augmented chain for finite-memory policies).
inline std::pair<StateActionCurve, SeriesResult> series_marginals(const Model& model, const Policy& policy,
                                                                  std::span<const double> gamma, const TimeGrid& grid) {
  if (const auto* mp = std::get_if<MarkovPolicyGrid>(&policy)) {
    SeriesResult s = feller_series(model, *mp, gamma, grid);
    std::vector<std::size_t> identity(model.num_states());
    for (std::size_t z = 0; z < identity.size(); ++z) identity[z] = z;
    return {StateActionCurve(s.curve, identity, model.num_states(), *mp), std::move(s)};
  }
  if (const auto* fm = std::get_if<FiniteMemoryPolicy>(&policy)) {
    const Augmentation aug = augment(model, *fm, &grid);
    SeriesResult s = feller_series(aug.model, aug.policy, aug.lift(gamma), grid);
    return {StateActionCurve(s.curve, aug.projection, model.num_states(), aug.policy), std::move(s)};
  }
  throw Error(ErrorCode::UnsupportedAction, "general policies have no exact marginals");
}

template <class T>
void override_from(const json& cfg, const char* key, T& field) {
  if (cfg.contains(key)) field = cfg.at(key).get<T>();
}

}  // namespace detail

/// Entry point shared by the executable and the tests. Returns the exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Continuous-time jump MDP toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  int threads = 0;
  double tol = 1e-6;
  std::string out_path;
  app.add_option("--seed", seed, "master seed")->capture_default_str();
  app.add_option("--threads", threads, "worker threads (default: CTJMDP_THREADS or 1)");
  app.add_option("--tol", tol, "verification tolerance")->capture_default_str();
  app.add_option("--out", out_path, "output file (default: stdout)");

  Inputs in;
  auto add_inputs = [&](CLI::App* sub) {
    sub->add_option("--model", in.model, "model JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--policy", in.policy, "policy JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--gamma", in.gamma, "initial law JSON")->required()->check(CLI::ExistingFile);
  };
  auto add_globals = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--threads", threads, "worker threads");
    sub->add_option("--tol", tol, "verification tolerance");
    sub->add_option("--out", out_path, "output file");
  };

  double horizon = 1.0, grid_step = 0.01;
  std::size_t n = 1000, max_jumps = 1000000;
  std::string forward_method = "ode", markovize_method = "exact", evaluate_method = "exact";
  std::string marginals_path, phi_path, config_path, csv_path;
  bool state_action = false;

  CLI::App* simulate = app.add_subcommand("simulate", "sample trajectories");
  add_inputs(simulate);
  add_globals(simulate);
  simulate->add_option("--horizon", horizon)->required();
  simulate->add_option("--n", n, "number of trajectories")->capture_default_str();
  simulate->add_option("--max-jumps", max_jumps)->capture_default_str();
  simulate->add_option("--grid-step", grid_step, "grid for empirical marginals");
  simulate->add_option("--marginals", marginals_path, "write empirical marginals CSV");

  CLI::App* forward = app.add_subcommand("forward", "exact marginal distributions");
  add_inputs(forward);
  add_globals(forward);
  forward->add_option("--horizon", horizon)->required();
  forward->add_option("--grid-step", grid_step)->required();
  forward->add_option("--method", forward_method)->check(CLI::IsMember({"series", "ode", "both"}))->capture_default_str();
  forward->add_flag("--state-action", state_action, "also write P(t,z,a)");

  CLI::App* markovize = app.add_subcommand("markovize", "derive the equivalent Markov policy");
  add_inputs(markovize);
  add_globals(markovize);
  markovize->add_option("--horizon", horizon)->required();
  markovize->add_option("--grid-step", grid_step)->required();
  markovize->add_option("--method", markovize_method)->check(CLI::IsMember({"exact", "mc"}))->capture_default_str();
  markovize->add_option("--n", n, "trajectories for --method mc")->capture_default_str();

  CLI::App* verify = app.add_subcommand("verify", "compare marginals of pi and its Markovization");
  add_inputs(verify);
  add_globals(verify);
  verify->add_option("--horizon", horizon)->required();
  verify->add_option("--grid-step", grid_step)->required();
  verify->add_option("--phi", phi_path, "Markov policy to check instead of the derived one")->check(CLI::ExistingFile);

  double alpha = 1.0, eps = 1e-8;
  std::optional<double> cost_horizon;
  bool infinite = false;
  CLI::App* evaluate = app.add_subcommand("evaluate", "discounted cost");
  add_inputs(evaluate);
  add_globals(evaluate);
  evaluate->add_option("--alpha", alpha)->required();
  auto* h_opt = evaluate->add_option("--horizon", cost_horizon);
  auto* inf_opt = evaluate->add_flag("--infinite", infinite);
  h_opt->excludes(inf_opt);
  evaluate->add_option("--eps", eps)->capture_default_str();
  evaluate->add_option("--method", evaluate_method)->check(CLI::IsMember({"exact", "mc"}))->capture_default_str();
  evaluate->add_option("--grid-step", grid_step)->capture_default_str();
  evaluate->add_option("--n", n)->capture_default_str();

  std::string experiment_name;
  CLI::App* experiment = app.add_subcommand("experiment", "canned experiments");
  add_globals(experiment);
  experiment->add_option("name", experiment_name)
      ->required()
      ->check(CLI::IsMember({"two-state", "battery", "explosion", "extension", "average"}));
  experiment->add_option("--config", config_path, "JSON overrides")->check(CLI::ExistingFile);
  experiment->add_option("--csv", csv_path, "plot-ready CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const unsigned workers = resolve_threads(threads);
    if (simulate->parsed()) {
      const auto [model, policy, gamma] = detail::load(in);
      const Simulator sim(model, policy);
      const auto paths = sim.simulate(gamma, {horizon, max_jumps, n, seed, workers});
      detail::emit(out_path, io::trajectories_csv(model, paths), out);
      if (!marginals_path.empty()) {
        const EmpiricalMarginals em = estimate_marginals(sim, paths, TimeGrid::covering(grid_step, horizon));
        std::ostringstream csv;
        csv << "time,state,action,probability,se\n";
        for (std::size_t k = 0; k < em.grid.points(); ++k)
          for (std::size_t z = 0; z < model.num_states(); ++z) {
            const std::string t = io::fmt(em.grid.time(k));
            csv << t << "," << model.state_names()[z] << ",," << io::fmt(em.prob(k, z)) << "," << io::fmt(em.se(k, z))
                << "\n";
            for (std::size_t a : model.feasible(z))
              csv << t << "," << model.state_names()[z] << "," << model.action_names()[a] << ","
                  << io::fmt(em.prob(k, z, a)) << "," << io::fmt(em.se(k, z, a)) << "\n";
          }
        io::write_text_file(marginals_path, csv.str());
      }
      return kExitOk;
    }

    if (forward->parsed()) {
      const auto [model, policy, gamma] = detail::load(in);
      const TimeGrid grid = TimeGrid::covering(grid_step, horizon);
      if (forward_method == "ode") {
        detail::emit(out_path, io::curve_csv(model, exact_marginals(model, policy, gamma, grid), state_action), out);
        return kExitOk;
      }
      auto [series_curve, series] = detail::series_marginals(model, policy, gamma, grid);
      if (!series.converged) err << json{{"warning", "NO_CONVERGENCE"}, {"terms", series.terms}}.dump() << "\n";
      if (forward_method == "series") {
        detail::emit(out_path, io::curve_csv(model, series_curve, state_action), out);
        return kExitOk;
      }
      const StateActionCurve ode = exact_marginals(model, policy, gamma, grid);
      const MarginalCurve s = series_curve.state_curve(), o = ode.state_curve();
      std::ostringstream csv;
      csv << "time,state,series,ode,difference,mass_defect_series,mass_defect_ode\n";
      for (std::size_t k = 0; k < grid.points(); ++k)
        for (std::size_t z = 0; z < model.num_states(); ++z)
          csv << io::fmt(grid.time(k)) << "," << model.state_names()[z] << "," << io::fmt(s(k, z)) << ","
              << io::fmt(o(k, z)) << "," << io::fmt(s(k, z) - o(k, z)) << "," << io::fmt(mass_defect(s, k)) << ","
              << io::fmt(mass_defect(o, k)) << "\n";
      detail::emit(out_path, csv.str(), out);
      return kExitOk;
    }

    if (markovize->parsed()) {
      const auto [model, policy, gamma] = detail::load(in);
      const TimeGrid grid = TimeGrid::covering(grid_step, horizon);
      MarkovPolicyGrid phi;
      if (markovize_method == "exact") {
        phi = derive_markov_exact(model, exact_marginals(model, policy, gamma, grid));
      } else {
        const Simulator sim(model, policy);
        const auto paths = sim.simulate(gamma, {horizon, max_jumps, n, seed, workers});
        phi = derive_markov_mc(sim, paths, grid).policy;
      }
      detail::emit(out_path, detail::dump(io::policy_to_json(model, phi)), out);
      return kExitOk;
    }

    if (verify->parsed()) {
      const auto [model, policy, gamma] = detail::load(in);
      const TimeGrid grid = TimeGrid::covering(grid_step, horizon);
      const StateActionCurve pi_curve = exact_marginals(model, policy, gamma, grid);
      const MarkovPolicyGrid phi = phi_path.empty() ? derive_markov_exact(model, pi_curve)
                                                    : std::get<MarkovPolicyGrid>(io::load_policy(model, phi_path));
      const DominanceReport d = compare_marginals(markov_marginals(model, phi, gamma, grid), pi_curve);
      const bool ok = d.violation_sup <= tol && (d.mass_defect_max > 1e-9 || d.equality_sup <= tol);
      const json report{{"violation_sup", d.violation_sup},
                        {"equality_sup", d.equality_sup},
                        {"equality_sup_nonexplosive", d.equality_sup_nonexplosive},
                        {"mass_defect_max", d.mass_defect_max},
                        {"tol", tol},
                        {"pass", ok}};
      detail::emit(out_path, detail::dump(report), out);
      return ok ? kExitOk : kExitVerification;
    }

    if (evaluate->parsed()) {
      const auto [model, policy, gamma] = detail::load(in);
      if (!infinite && !cost_horizon) throw CLI::RequiredError("--horizon or --infinite");
      DiscountedCostResult r;
      const double T = infinite ? truncation_horizon(model, alpha, eps) : *cost_horizon;
      if (evaluate_method == "exact") {
        const StateActionCurve curve = exact_marginals(model, policy, gamma, TimeGrid::covering(grid_step, T));
        r = infinite ? infinite_horizon_cost(model, curve, alpha, eps) : finite_horizon_cost(model, curve, alpha, T);
      } else {
        const Simulator sim(model, policy);
        const auto paths = sim.simulate(gamma, {T, max_jumps, n, seed, workers});
        r = mc_discounted_cost(sim, paths, alpha, T);
      }
      const json result{{"value", r.value},
                        {"method", std::string(to_string(r.method))},
                        {"error_bound_or_se", r.error},
                        {"truncation_T", r.truncation}};
      detail::emit(out_path, detail::dump(result), out);
      return kExitOk;
    }

    if (experiment->parsed()) {
      const json cfg = config_path.empty() ? json::object() : io::read_json_file(config_path);
      // experiments keep their own seed unless one is given
      const bool seed_given = app.count("--seed") > 0 || experiment->count("--seed") > 0;
      json report;
      std::ostringstream csv;
      if (experiment_name == "two-state") {
        experiments::TwoStateConfig c;
        if (seed_given) c.seed = seed;
        c.threads = workers;
        detail::override_from(cfg, "alphas", c.alphas);
        detail::override_from(cfg, "step", c.step);
        detail::override_from(cfg, "eps", c.eps);
        detail::override_from(cfg, "n_mc", c.n_mc);
        detail::override_from(cfg, "seed", c.seed);
        detail::override_from(cfg, "tol", c.tol);
        report = experiments::run_example_two_state(c);
        csv << "alpha,V_pi,V_phi,gap\n";
        for (const json& r : report["results"])
          csv << io::fmt(r["alpha"].get<double>()) << "," << io::fmt(r["V_pi"].get<double>()) << ","
              << io::fmt(r["V_phi"].get<double>()) << "," << io::fmt(r["gap"].get<double>()) << "\n";
      } else if (experiment_name == "battery" || experiment_name == "extension") {
        experiments::BatteryConfig c;
        if (seed_given) c.seed = seed;
        c.threads = workers;
        detail::override_from(cfg, "seed", c.seed);
        detail::override_from(cfg, "models", c.models);
        detail::override_from(cfg, "step", c.step);
        detail::override_from(cfg, "horizon", c.horizon);
        detail::override_from(cfg, "extension_u", c.extension_u);
        detail::override_from(cfg, "tol", c.tol);
        report = experiment_name == "battery" ? experiments::run_sufficiency_battery(c)
                                              : experiments::run_extension_battery(c);
      } else if (experiment_name == "explosion") {
        experiments::ExplosionConfig c;
        if (seed_given) c.seed = seed;
        c.threads = workers;
        detail::override_from(cfg, "depths", c.depths);
        detail::override_from(cfg, "t", c.t);
        detail::override_from(cfg, "step", c.step);
        detail::override_from(cfg, "n_mc", c.n_mc);
        detail::override_from(cfg, "seed", c.seed);
        report = experiments::run_explosion_demo(c);
        csv << "depth,mass_defect\n";
        for (const json& r : report["depths"])
          csv << r["depth"].get<std::size_t>() << "," << io::fmt(r["mass_defect"].get<double>()) << "\n";
      } else {
        experiments::AverageConfig c;
        detail::override_from(cfg, "step", c.step);
        detail::override_from(cfg, "tol", c.tol);
        report = experiments::run_average_cost_check(c);
      }
      detail::emit(out_path, detail::dump(report), out);
      if (!csv_path.empty()) io::write_text_file(csv_path, csv.str());
      return report.value("pass", false) ? kExitOk : kExitVerification;
    }
  } catch (const Error& e) {
    err << json{{"error", std::string(to_string(e.code()))}, {"message", e.what()}}.dump() << "\n";
    return kExitValidation;
  } catch (const CLI::Error& e) {
    err << e.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const std::bad_variant_access&) {
    err << json{{"error", "PARSE"}, {"message", "--phi must be a Markov policy"}}.dump() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    err << json{{"error", "PARSE"}, {"message", e.what()}}.dump() << "\n";
    return kExitValidation;
  }
  return kExitUsage;
}

}  // namespace ctjmdp::cli
