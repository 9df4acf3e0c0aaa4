#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctjmdp/costs.hpp"
#include "ctjmdp/forward.hpp"
#include "ctjmdp/markovize.hpp"
#include "ctjmdp/model.hpp"
#include "ctjmdp/policy.hpp"
#include "ctjmdp/rng.hpp"
#include "ctjmdp/simulator.hpp"

namespace ctjmdp::experiments {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Canned models and policies.

/// Two states, A(1) = {b}, A(2) = {b, c}; q(1,b,2) = 2, q(2,b,1) = 2,
/// q(2,c,1) = 1. With action-dependent costs C(2,b,1) = 1, C(2,c,1) = 2,
/// C(1,b,2) = 0; otherwise C(2,1) = 1, C(1,2) = 0.
inline Model switching_model(bool action_dependent_costs) {
  RawModel raw;
  raw.states = {"1", "2"};
  raw.actions = {"b", "c"};
  raw.feasible = {{"1", {"b"}}, {"2", {"b", "c"}}};
  raw.rates = {{"1", "b", {{"1", -2.0}, {"2", 2.0}}, 0.0},
               {"2", "b", {{"2", -2.0}, {"1", 2.0}}, 0.0},
               {"2", "c", {{"2", -1.0}, {"1", 1.0}}, 0.0}};
  if (action_dependent_costs)
    raw.action_jump_costs = {{"1", {{"b", {{"2", 0.0}}}}}, {"2", {{"b", {{"1", 1.0}}}, {"c", {{"1", 2.0}}}}}};
  else
    raw.jump_costs = {{"2", {{"1", 1.0}}}};
  return validate_model(raw);
}

/// b at state 2 while the number of jumps into 2 is even (or 0), c when odd.
inline FiniteMemoryPolicy parity_policy(const Model& m) {
  const std::size_t one = m.state_index("1"), two = m.state_index("2");
  const std::size_t b = m.action_index("b"), c = m.action_index("c");
  FiniteMemoryPolicy p({"even", "odd"}, 0, m.num_states(), m.num_actions(), {0.0, 1.0, 1});
  for (std::size_t mem = 0; mem < 2; ++mem) {
    for (std::size_t from = 0; from < m.num_states(); ++from)
      if (from != two) p.next_memory(mem, from, two) = 1 - mem;
    p.weights(0, mem, one)[b] = 1.0;
    p.weights(0, mem, two)[mem == 0 ? b : c] = 1.0;
  }
  return p;
}

/// Pure birth n -> n+1 at rate (n+1)^2 truncated at `depth` states; the last
/// state escapes to the cemetery at rate depth^2.
inline Model pure_birth_model(std::size_t depth) {
  RawModel raw;
  raw.actions = {"go"};
  for (std::size_t n = 0; n < depth; ++n) {
    raw.states.push_back(std::to_string(n));
    raw.feasible[raw.states.back()] = {"go"};
  }
  for (std::size_t n = 0; n < depth; ++n) {
    const double r = static_cast<double>((n + 1) * (n + 1));
    RawRate rr{raw.states[n], "go", {}, 0.0};
    if (n + 1 < depth) rr.row[raw.states[n + 1]] = r;
    else rr.escape = r;
    raw.rates.push_back(std::move(rr));
  }
  return validate_model(raw);
}

/// 1 -> 2 at rate a, 2 -> 1 at rate b, cost rate 1 in state 1.
inline Model flip_model(double a, double b) {
  RawModel raw;
  raw.states = {"1", "2"};
  raw.actions = {"go"};
  raw.feasible = {{"1", {"go"}}, {"2", {"go"}}};
  raw.rates = {{"1", "go", {{"2", a}}, 0.0}, {"2", "go", {{"1", b}}, 0.0}};
  raw.cost_rate = {{"1", {{"go", 1.0}}}};
  return validate_model(raw);
}

inline std::vector<double> point_mass(const Model& m, const std::string& state) {
  std::vector<double> g(m.num_states(), 0.0);
  g[m.state_index(state)] = 1.0;
  return g;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  CounterRng rng(seed, 0xC0FFEEull + tag);
  return rng();
}

// ---------------------------------------------------------------------------
// Random bounded-rate test models.

struct BatteryEntry {
  Model model;
  std::vector<double> gamma;
  MarkovPolicyGrid markov;                   // time-homogeneous, relaxed
  std::vector<FiniteMemoryPolicy> policies;  // entry parity, jump counter mod 3, last state with time switch
  std::vector<std::string> policy_names;
};

namespace detail {

inline void random_weights(CounterRng& rng, const Model& m, std::size_t z, double* w, bool deterministic) {
  const auto& acts = m.feasible(z);
  std::fill(w, w + m.num_actions(), 0.0);
  if (deterministic) {
    w[acts[static_cast<std::size_t>(rng.uniform() * static_cast<double>(acts.size())) % acts.size()]] = 1.0;
    return;
  }
  double s = 0.0;
  for (std::size_t a : acts) s += (w[a] = 0.05 + rng.uniform());
  for (std::size_t a : acts) w[a] /= s;
}

}  // namespace detail

/// 4 states, 3 actions, 2 or 3 feasible actions per state, off-diagonal
/// rates uniform on [0.2, 3]; costs uniform on [0, 1] with one instant cost
/// at t = 0.5. Everything is a function of (seed, index).
inline BatteryEntry random_entry(std::uint64_t seed, std::size_t index) {
  CounterRng rng(seed, index);
  constexpr std::size_t S = 4, A = 3;
  RawModel raw;
  for (std::size_t z = 0; z < S; ++z) raw.states.push_back("s" + std::to_string(z));
  for (std::size_t a = 0; a < A; ++a) raw.actions.push_back("a" + std::to_string(a));
  for (std::size_t z = 0; z < S; ++z) {
    std::vector<std::string> acts = raw.actions;
    if (rng.uniform() < 0.5) acts.erase(acts.begin() + static_cast<std::ptrdiff_t>(rng() % A));
    raw.feasible[raw.states[z]] = acts;
    for (const std::string& a : acts) {
      RawRate rr{raw.states[z], a, {}, 0.0};
      for (std::size_t y = 0; y < S; ++y)
        if (y != z) rr.row[raw.states[y]] = 0.2 + 2.8 * rng.uniform();
      raw.rates.push_back(std::move(rr));
      raw.cost_rate[raw.states[z]][a] = rng.uniform();
    }
    for (std::size_t y = 0; y < S; ++y)
      if (y != z) raw.jump_costs[raw.states[z]][raw.states[y]] = rng.uniform();
  }
  RawInstantCost g{0.5, {}};
  for (std::size_t z = 0; z < S; ++z)
    for (const std::string& a : raw.feasible[raw.states[z]]) g.values[raw.states[z]][a] = rng.uniform();
  raw.instant_costs.push_back(std::move(g));

  BatteryEntry e{validate_model(raw), {}, {}, {}, {}};
  const Model& m = e.model;
  double s = 0.0;
  for (std::size_t z = 0; z < S; ++z) s += e.gamma.emplace_back(0.1 + rng.uniform());
  for (double& x : e.gamma) x /= s;

  e.markov = MarkovPolicyGrid({0.0, 1.0, 1}, S, A);
  for (std::size_t z = 0; z < S; ++z) detail::random_weights(rng, m, z, e.markov.weights(0, z), false);

  // parity of the number of entries into s1, deterministic decisions
  FiniteMemoryPolicy parity({"even", "odd"}, 0, S, A, {0.0, 1.0, 1});
  for (std::size_t mem = 0; mem < 2; ++mem) {
    for (std::size_t from = 0; from < S; ++from)
      if (from != 1) parity.next_memory(mem, from, 1) = 1 - mem;
    for (std::size_t z = 0; z < S; ++z) detail::random_weights(rng, m, z, parity.weights(0, mem, z), true);
  }
  // number of jumps mod 3, relaxed decisions
  FiniteMemoryPolicy counter({"0", "1", "2"}, 0, S, A, {0.0, 1.0, 1});
  for (std::size_t mem = 0; mem < 3; ++mem) {
    for (std::size_t from = 0; from < S; ++from)
      for (std::size_t to = 0; to < S; ++to) counter.next_memory(mem, from, to) = (mem + 1) % 3;
    for (std::size_t z = 0; z < S; ++z) detail::random_weights(rng, m, z, counter.weights(0, mem, z), false);
  }
  // previous state, decisions switch at t = 2
  FiniteMemoryPolicy last({"from0", "from1", "from2", "from3"}, 0, S, A, {0.0, 2.0, 2});
  for (std::size_t mem = 0; mem < 4; ++mem) {
    for (std::size_t from = 0; from < S; ++from)
      for (std::size_t to = 0; to < S; ++to) last.next_memory(mem, from, to) = from;
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t z = 0; z < S; ++z) detail::random_weights(rng, m, z, last.weights(k, mem, z), k == 0 && mem % 2);
  }
  e.policies = {std::move(parity), std::move(counter), std::move(last)};
  e.policy_names = {"entry_parity", "jump_count_mod3", "last_state_switch"};
  return e;
}

// ---------------------------------------------------------------------------
// Extended-model identity.

struct ExtensionResult {
  double residual = 0.0;  // sup |P_x'(t+u) - (1 - e^{-u}) P_gamma(t)|
  double entry_mass = 0.0;  // mass left at x' after the first phase
};

/// Solves the extended model from x' in two phases: on [0, u] x' injects
/// gamma at rate 1 while X is frozen (a''); from u on, x' holds and X follows
/// the policy shifted by u. Compares with the direct solve from gamma.
inline ExtensionResult run_extension_check(const Model& model, std::span<const double> gamma,
                                           const FiniteMemoryPolicy& policy, double u, double step, double horizon) {
  const ExtendedModel ext = extend_with_initial_distribution(model, gamma);
  const Model& em = ext.model;
  const std::size_t S = model.num_states();
  const std::size_t A = model.num_actions();
  const std::size_t M = policy.num_memory();

  std::vector<std::size_t> first(em.num_states(), ext.hold_action);
  first[ext.entry_state] = ext.entry_action;
  const auto cells1 = static_cast<std::size_t>(std::ceil(u / step - 1e-9));
  const TimeGrid grid1{0.0, u / static_cast<double>(cells1), cells1};
  const MarginalCurve phase1 =
      forward_ode(em, MarkovPolicyGrid::deterministic(em, first), point_mass(em, em.state_names()[ext.entry_state]), grid1);
  const std::span<const double> at_u = phase1.at(cells1);

  FiniteMemoryPolicy shifted(policy.memory_names, policy.initial_memory, em.num_states(), em.num_actions(),
                             {u, policy.grid.step, policy.grid.cells});
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t from = 0; from < S; ++from)
      for (std::size_t to = 0; to < S; ++to) shifted.next_memory(m, from, to) = policy.next_memory(m, from, to);
    for (std::size_t k = 0; k < policy.grid.cells; ++k) {
      for (std::size_t z = 0; z < S; ++z) std::copy(policy.weights(k, m, z), policy.weights(k, m, z) + A, shifted.weights(k, m, z));
      shifted.weights(k, m, ext.entry_state)[ext.hold_action] = 1.0;
    }
  }
  const TimeGrid base_grid = TimeGrid::covering(step, horizon);
  const TimeGrid grid2{u, base_grid.step, base_grid.cells};
  const Augmentation aug = augment(em, shifted, &grid2);
  MarginalCurve slots = forward_ode(aug.model, aug.policy, aug.lift(at_u), grid2);
  const StateActionCurve extended(std::move(slots), aug.projection, em.num_states(), aug.policy);
  const StateActionCurve base = finite_memory_marginals(model, policy, gamma, base_grid);

  ExtensionResult r;
  r.entry_mass = at_u[ext.entry_state];
  const double factor = -std::expm1(-u);
  for (std::size_t k = 0; k < base_grid.points(); ++k)
    for (std::size_t z = 0; z < S; ++z) {
      r.residual = std::max(r.residual, std::abs(extended.state(k, z) - factor * base.state(k, z)));
      if (k == base_grid.cells) continue;
      for (std::size_t a = 0; a < A; ++a)
        r.residual =
            std::max(r.residual, std::abs(extended.cell_average(k, z, a) - factor * base.cell_average(k, z, a)));
    }
  return r;
}

// ---------------------------------------------------------------------------
// Sufficiency battery.

struct BatteryConfig {
  std::uint64_t seed = 20240601;
  std::size_t models = 5;
  double step = 0.00125;  // working grid; the 0.005 evaluation grid is a subset
  double horizon = 4.0;
  std::vector<double> alphas = {0.0, 0.5, 1.0};
  std::vector<double> horizons = {1.0, 4.0};
  double infinite_alpha = 1.0;
  double infinite_eps = 1e-8;
  double extension_u = std::numbers::ln2;
  double tol = 1e-6;
  unsigned threads = 1;
};

inline json battery_config_json(const BatteryConfig& c) {
  return {{"seed", c.seed},           {"models", c.models},
          {"step", c.step},           {"horizon", c.horizon},
          {"alphas", c.alphas},       {"horizons", c.horizons},
          {"infinite_alpha", c.infinite_alpha}, {"infinite_eps", c.infinite_eps},
          {"extension_u", c.extension_u},       {"tol", c.tol}};
}

/// Markovizes every (model, policy) pair, compares marginals and costs, and
/// checks the extended-model identity. Entries run concurrently; the report
/// does not depend on scheduling.
inline json run_sufficiency_battery(const BatteryConfig& cfg) {
  std::vector<BatteryEntry> entries;
  for (std::size_t i = 0; i < cfg.models; ++i) entries.push_back(random_entry(cfg.seed, i));
  struct Job {
    std::size_t model, policy;  // policy == 3: the homogeneous Markov policy (idempotence)
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < entries.size(); ++i)
    for (std::size_t p = 0; p <= entries[i].policies.size(); ++p) jobs.push_back({i, p});
  std::vector<json> rows(jobs.size());

  parallel_for(jobs.size(), cfg.threads, [&](std::size_t j) {
    const BatteryEntry& e = entries[jobs[j].model];
    const bool markov = jobs[j].policy == e.policies.size();
    const Policy pi = markov ? Policy(e.markov) : Policy(e.policies[jobs[j].policy]);
    const TimeGrid grid = TimeGrid::covering(cfg.step, cfg.horizon);
    const StateActionCurve pi_curve = exact_marginals(e.model, pi, e.gamma, grid);
    const MarkovPolicyGrid phi = derive_markov_exact(e.model, pi_curve);
    const StateActionCurve phi_curve = markov_marginals(e.model, phi, e.gamma, grid);
    const DominanceReport d = compare_marginals(phi_curve, pi_curve);

    json row{{"model", jobs[j].model},
             {"policy", markov ? std::string("markov_homogeneous") : e.policy_names[jobs[j].policy]},
             {"violation_sup", d.violation_sup},
             {"equality_sup", d.equality_sup},
             {"state_equality_sup", d.state_equality_sup},
             {"action_equality_sup", d.action_equality_sup},
             {"mass_defect_max", d.mass_defect_max}};
    if (markov) {
      double diff = 0.0;
      for (std::size_t k = 0; k < phi.grid.cells; ++k)
        for (std::size_t z = 0; z < e.model.num_states(); ++z)
          for (std::size_t a = 0; a < e.model.num_actions(); ++a)
            diff = std::max(diff, std::abs(phi.weights(k, z)[a] - e.markov.weights(0, z)[a]));
      row["idempotence_sup"] = diff;
    }

    double cost_gap = 0.0;
    json costs = json::array();
    for (double alpha : cfg.alphas)
      for (double T : cfg.horizons) {
        const double vpi = finite_horizon_cost(e.model, pi_curve, alpha, T).value;
        const double vphi = finite_horizon_cost(e.model, phi_curve, alpha, T).value;
        cost_gap = std::max(cost_gap, std::abs(vphi - vpi));
        costs.push_back({{"alpha", alpha}, {"T", T}, {"pi", vpi}, {"phi", vphi}});
      }
    const double T_inf = truncation_horizon(e.model, cfg.infinite_alpha, cfg.infinite_eps);
    const TimeGrid long_grid = TimeGrid::covering(cfg.step, T_inf);
    const StateActionCurve pi_long = exact_marginals(e.model, pi, e.gamma, long_grid);
    const StateActionCurve phi_long =
        markov_marginals(e.model, derive_markov_exact(e.model, pi_long), e.gamma, long_grid);
    const double vpi = infinite_horizon_cost(e.model, pi_long, cfg.infinite_alpha, cfg.infinite_eps).value;
    const double vphi = infinite_horizon_cost(e.model, phi_long, cfg.infinite_alpha, cfg.infinite_eps).value;
    cost_gap = std::max(cost_gap, std::abs(vphi - vpi));
    costs.push_back({{"alpha", cfg.infinite_alpha}, {"T", "infinite"}, {"truncation_T", T_inf}, {"pi", vpi}, {"phi", vphi}});
    row["costs"] = std::move(costs);
    row["cost_gap_sup"] = cost_gap;

    if (!markov) {
      const ExtensionResult ex =
          run_extension_check(e.model, e.gamma, e.policies[jobs[j].policy], cfg.extension_u, cfg.step, cfg.horizon);
      row["extension_residual"] = ex.residual;
    }
    rows[j] = std::move(row);
  });

  json report{{"experiment", "battery"}, {"config", battery_config_json(cfg)}, {"entries", rows}};
  double violation = 0.0, equality = 0.0, cost = 0.0, extension = 0.0;
  for (const json& r : rows) {
    violation = std::max(violation, r["violation_sup"].get<double>());
    equality = std::max(equality, r["equality_sup"].get<double>());
    cost = std::max(cost, r["cost_gap_sup"].get<double>());
    if (r.contains("extension_residual")) extension = std::max(extension, r["extension_residual"].get<double>());
  }
  report["violation_sup"] = violation;
  report["equality_sup"] = equality;
  report["cost_gap_sup"] = cost;
  report["extension_residual_sup"] = extension;
  report["pass"] = violation <= cfg.tol && equality <= cfg.tol && cost <= cfg.tol && extension <= cfg.tol;
  return report;
}

// ---------------------------------------------------------------------------
// Two-state counterexample with action-dependent jump costs.

struct TwoStateConfig {
  std::vector<double> alphas = {0.25, 0.5, 1.0, 2.0};
  double step = 0.00125;
  double eps = 1e-8;
  std::size_t n_mc = 100000;
  std::uint64_t seed = 7;
  double tol = 1e-6;
  unsigned threads = 1;
};

/// V_alpha(2, pi) for the parity policy against V_alpha(2, phi) for its
/// Markovization. The marginals agree, yet phi pays more because a relaxed
/// action averages the jump cost and the jump rate separately.
inline json run_example_two_state(const TwoStateConfig& cfg) {
  const Model model = switching_model(true);
  const Model plain = switching_model(false);
  const FiniteMemoryPolicy pi = parity_policy(model);
  const std::vector<double> gamma = point_mass(model, "2");
  const std::size_t two = model.state_index("2");
  const std::size_t b = model.action_index("b"), c = model.action_index("c");
  const CostOptions dependent{true, true};

  json rows = json::array();
  bool pass = true;
  for (std::size_t i = 0; i < cfg.alphas.size(); ++i) {
    const double alpha = cfg.alphas[i];
    const double T = truncation_horizon(model, alpha, cfg.eps, dependent);
    const TimeGrid grid = TimeGrid::covering(cfg.step, T);
    const StateActionCurve pi_curve = finite_memory_marginals(model, pi, gamma, grid);
    const MarkovPolicyGrid phi = derive_markov_exact(model, pi_curve);
    const StateActionCurve phi_curve = markov_marginals(model, phi, gamma, grid);
    const DominanceReport d = compare_marginals(phi_curve, pi_curve);

    const double v_pi = infinite_horizon_cost(model, pi_curve, alpha, cfg.eps, dependent).value;
    const double v_phi = infinite_horizon_cost(model, phi_curve, alpha, cfg.eps, dependent).value;
    // int e^{-alpha t} phi(b|2,t) phi(c|2,t) P^pi(t,2) dt on the same quadrature
    double integral = 0.0;
    for (std::size_t k = 0; k < grid.cells && grid.time(k) < T; ++k) {
      const double* w = phi.weights(k, two);
      const double right = std::min(grid.time(k + 1), T);
      integral += 0.5 * (right - grid.time(k)) * w[b] * w[c] *
                  (std::exp(-alpha * grid.time(k)) * pi_curve.state(k, two) +
                   std::exp(-alpha * grid.time(k + 1)) * pi_curve.state(k + 1, two));
    }
    const double gap = v_phi - v_pi;

    // the same comparison with C(2,1) independent of the action
    const StateActionCurve plain_pi = finite_memory_marginals(plain, parity_policy(plain), gamma, grid);
    const StateActionCurve plain_phi = markov_marginals(plain, derive_markov_exact(plain, plain_pi), gamma, grid);
    const double plain_gap = infinite_horizon_cost(plain, plain_phi, alpha, cfg.eps).value -
                             infinite_horizon_cost(plain, plain_pi, alpha, cfg.eps).value;

    SimConfig sc{T, 100000000, cfg.n_mc, derive_seed(cfg.seed, 2 * i), cfg.threads};
    const Simulator sim_pi(model, pi);
    const auto paths_pi = sim_pi.simulate(gamma, sc);
    const DiscountedCostResult mc_pi = mc_discounted_cost(sim_pi, paths_pi, alpha, T);
    sc.seed = derive_seed(cfg.seed, 2 * i + 1);
    const Simulator sim_phi(model, phi);
    const auto paths_phi = sim_phi.simulate(gamma, sc);
    const DiscountedCostResult mc_phi = mc_discounted_cost(sim_phi, paths_phi, alpha, T);

    const bool ok_gap = gap > 0.0 && std::abs(gap - integral) <= cfg.tol;
    const bool ok_mc = std::abs(mc_pi.value - v_pi) <= 3.0 * mc_pi.error && std::abs(mc_phi.value - v_phi) <= 3.0 * mc_phi.error;
    const bool ok_marginals = d.equality_sup <= cfg.tol;
    const bool ok_plain = std::abs(plain_gap) <= cfg.tol;
    pass = pass && ok_gap && ok_mc && ok_marginals && ok_plain;
    rows.push_back({{"alpha", alpha},
                    {"truncation_T", T},
                    {"V_pi", v_pi},
                    {"V_phi", v_phi},
                    {"gap", gap},
                    {"gap_integral", integral},
                    {"gap_residual", std::abs(gap - integral)},
                    {"marginal_equality_sup", d.equality_sup},
                    {"mc_pi", {{"value", mc_pi.value}, {"se", mc_pi.error}}},
                    {"mc_phi", {{"value", mc_phi.value}, {"se", mc_phi.error}}},
                    {"action_independent_gap", plain_gap},
                    {"pass_gap", ok_gap},
                    {"pass_mc", ok_mc},
                    {"pass_marginals", ok_marginals},
                    {"pass_action_independent", ok_plain}});
  }
  return {{"experiment", "two-state"},
          {"config",
           {{"alphas", cfg.alphas}, {"step", cfg.step}, {"eps", cfg.eps}, {"n_mc", cfg.n_mc}, {"seed", cfg.seed}, {"tol", cfg.tol}}},
          {"results", rows},
          {"pass", pass}};
}

// ---------------------------------------------------------------------------
// Explosion of the truncated pure-birth chain.

struct ExplosionConfig {
  std::vector<std::size_t> depths = {10, 50, 200};
  double t = 2.0;
  double step = 0.01;  // refined to h * q-bar <= 0.1 per depth
  std::size_t n_mc = 10000;
  std::uint64_t seed = 11;
  unsigned threads = 1;
};

/// Mass defect at t for each truncation depth, and the simulated explosion
/// time at the deepest truncation against E t_inf = pi^2 / 6.
inline json run_explosion_demo(const ExplosionConfig& cfg) {
  json rows = json::array();
  std::vector<double> defects;
  for (std::size_t depth : cfg.depths) {
    const Model m = pure_birth_model(depth);
    const double qbar = m.max_exit_rate();
    // a whole number of 1000-cell blocks keeps the stored curve small
    const double needed = std::max(cfg.t / cfg.step, cfg.t * qbar / 0.1);
    const auto blocks = static_cast<std::size_t>(std::floor(needed / 1000.0)) + 1;
    const TimeGrid grid{0.0, cfg.t / static_cast<double>(blocks * 1000), blocks * 1000};
    const MarginalCurve curve =
        forward_ode(QFunction(m, MarkovPolicyGrid::deterministic(m, std::vector<std::size_t>(depth, 0)), grid),
                    point_mass(m, "0"), {blocks, 0.1});
    defects.push_back(mass_defect(curve, curve.grid.cells));
    rows.push_back({{"depth", depth}, {"step", grid.step}, {"mass_defect", defects.back()}, {"max_clamp", curve.max_clamp}});
  }
  bool monotone = true;
  for (std::size_t i = 1; i < defects.size(); ++i) monotone = monotone && defects[i] <= defects[i - 1] + 1e-9;
  bool above_half = true;
  for (std::size_t i = 0; i < defects.size(); ++i)
    if (cfg.depths[i] >= 50) above_half = above_half && defects[i] > 0.5;

  const std::size_t deepest = *std::max_element(cfg.depths.begin(), cfg.depths.end());
  const Model m = pure_birth_model(deepest);
  const Simulator sim(m, MarkovPolicyGrid::deterministic(m, std::vector<std::size_t>(deepest, 0)));
  const auto paths = sim.simulate(point_mass(m, "0"), {1e12, deepest + 1, cfg.n_mc, cfg.seed, cfg.threads});
  double sum = 0.0, sum2 = 0.0;
  std::size_t exploded = 0;
  for (const Trajectory& tr : paths) {
    sum += tr.end_time;
    sum2 += tr.end_time * tr.end_time;
    exploded += tr.escaped();
  }
  const double n = static_cast<double>(paths.size());
  const double mean = sum / n;
  const double se = std::sqrt(std::max(0.0, sum2 / n - mean * mean) / (n - 1.0));
  const double target = std::numbers::pi * std::numbers::pi / 6.0;
  const bool mc_ok = std::abs(mean - target) <= 3.0 * se && exploded == paths.size();

  return {{"experiment", "explosion"},
          {"config", {{"depths", cfg.depths}, {"t", cfg.t}, {"step", cfg.step}, {"n_mc", cfg.n_mc}, {"seed", cfg.seed}}},
          {"depths", rows},
          {"defect_nonincreasing_in_depth", monotone},
          {"defect_above_half_for_depth_ge_50", above_half},
          {"explosion_time", {{"depth", deepest}, {"mean", mean}, {"se", se}, {"target", target}, {"exploded", exploded}}},
          {"pass", monotone && above_half && mc_ok}};
}

// ---------------------------------------------------------------------------
// Extended-model check over the battery.

inline json run_extension_battery(const BatteryConfig& cfg) {
  json rows = json::array();
  double worst = 0.0;
  for (std::size_t i = 0; i < cfg.models; ++i) {
    const BatteryEntry e = random_entry(cfg.seed, i);
    for (std::size_t p = 0; p < e.policies.size(); ++p) {
      const ExtensionResult r = run_extension_check(e.model, e.gamma, e.policies[p], cfg.extension_u, cfg.step, cfg.horizon);
      worst = std::max(worst, r.residual);
      rows.push_back({{"model", i}, {"policy", e.policy_names[p]}, {"residual", r.residual}, {"entry_mass", r.entry_mass}});
    }
  }
  return {{"experiment", "extension"},
          {"config", battery_config_json(cfg)},
          {"entries", rows},
          {"residual_sup", worst},
          {"pass", worst <= cfg.tol}};
}

// ---------------------------------------------------------------------------
// Average cost on the flip-chain family.

struct AverageConfig {
  std::vector<std::pair<double, double>> rates = {{1.0, 1.0}, {2.0, 1.0}, {0.5, 1.5}, {1.0, 3.0}};
  double step = 0.01;
  double tol = 2e-3;
};

/// Abel (alpha V_alpha via the resolvent) and Cesaro (V_0^T / T via the
/// forward equation) estimates from state 1 against the stationary value.
inline json run_average_cost_check(const AverageConfig& cfg) {
  json rows = json::array();
  bool pass = true;
  for (const auto& [a, b] : cfg.rates) {
    const Model m = flip_model(a, b);
    const MarkovPolicyGrid policy = MarkovPolicyGrid::deterministic(m, {0, 0});
    const std::vector<double> gamma = point_mass(m, "1");
    const double stationary = b / (a + b);
    const AverageCostEstimate abel =
        average_cost_abel([&](double alpha) { return resolvent_value(m, policy, gamma, alpha); });
    const std::vector<double> horizons = default_horizon_sequence();
    const StateActionCurve curve = markov_marginals(m, policy, gamma, TimeGrid::covering(cfg.step, horizons.back()));
    const AverageCostEstimate cesaro =
        average_cost_cesaro([&](double T) { return finite_horizon_cost(m, curve, 0.0, T).value; }, horizons);
    const bool ok = std::abs(abel.estimate - stationary) <= cfg.tol && std::abs(cesaro.estimate - stationary) <= cfg.tol &&
                    abel.estimate <= cesaro.estimate + 1e-6;
    pass = pass && ok;
    rows.push_back({{"rates", {a, b}},
                    {"stationary", stationary},
                    {"abel", abel.estimate},
                    {"abel_sequence", abel.values},
                    {"abel_monotone_tail", abel.monotone_tail},
                    {"cesaro", cesaro.estimate},
                    {"cesaro_sequence", cesaro.values},
                    {"cesaro_monotone_tail", cesaro.monotone_tail},
                    {"pass", ok}});
  }
  return {{"experiment", "average"}, {"config", {{"step", cfg.step}, {"tol", cfg.tol}}}, {"results", rows}, {"pass", pass}};
}

}  // namespace ctjmdp::experiments
