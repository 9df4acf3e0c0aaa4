#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ctjmdp/error.hpp"
#include "ctjmdp/forward.hpp"
#include "ctjmdp/model.hpp"
#include "ctjmdp/policy.hpp"
#include "ctjmdp/simulator.hpp"

namespace ctjmdp {

enum class CostMethod { ExactCurve, MonteCarlo };

inline std::string_view to_string(CostMethod m) { return m == CostMethod::ExactCurve ? "EXACT_CURVE" : "MONTE_CARLO"; }

struct DiscountedCostResult {
  double value = 0.0;
  CostMethod method = CostMethod::ExactCurve;
  double truncation = 0.0;  // horizon actually integrated
  double error = 0.0;       // quadrature + truncation bound (exact) or standard error (MC)
};

// ---------------------------------------------------------------------------
// Jump costs as cost rates.

/// C~(z,p) = sum_{y != z} C(z,y) q(z,p,{y}) for action-independent C.
inline double jump_cost_rate(const Model& model, std::size_t z, const RelaxedAction& p) {
  check_support(model, z, p);
  const std::size_t S = model.num_states();
  const auto& C = model.costs().jump;
  double r = 0.0;
  for (std::size_t a : model.feasible(z)) {
    if (p[a] == 0.0) continue;
    for (const Transition& t : model.row(z, a).out) r += p[a] * C[z * S + t.target] * t.rate;
  }
  return r;
}

/// c'(z,a) = sum_{y != z} C(z,y) q(z,a,{y}), indexed [z * A + a].
inline std::vector<double> transform_jump_costs(const Model& model) {
  if (model.costs().has_action_jump_costs())
    throw Error(ErrorCode::ActionDependentJumpCost, "jump costs depend on the action; no equivalent cost rate exists");
  const std::size_t S = model.num_states();
  const std::size_t A = model.num_actions();
  std::vector<double> out(S * A, 0.0);
  for (std::size_t z = 0; z < S; ++z)
    for (std::size_t a : model.feasible(z))
      for (const Transition& t : model.row(z, a).out) out[z * A + a] += model.costs().jump[z * S + t.target] * t.rate;
  return out;
}

/// Jump cost charged when a path leaves z for y under the relaxed action p:
/// C(z,p,y) = sum_a p(a) C(z,a,y), or C(z,y) when costs ignore the action.
inline double jump_cost(const Model& model, std::size_t z, std::span<const double> p, std::size_t y) {
  const CostStructure& c = model.costs();
  const std::size_t S = model.num_states();
  if (!c.has_action_jump_costs()) return c.jump[z * S + y];
  const std::size_t A = model.num_actions();
  double v = 0.0;
  for (std::size_t a : model.feasible(z)) v += p[a] * c.action_jump[(z * A + a) * S + y];
  return v;
}

/// Expected jump-cost rate sum_y C(z,p,y) q(z,p,{y}). Linear in p only when
/// C does not depend on the action.
inline double expected_jump_cost_rate(const Model& model, std::size_t z, std::span<const double> p) {
  const std::size_t S = model.num_states();
  std::vector<double> q(S, 0.0);
  for (std::size_t a : model.feasible(z)) {
    if (p[a] == 0.0) continue;
    for (const Transition& t : model.row(z, a).out) q[t.target] += p[a] * t.rate;
  }
  double r = 0.0;
  for (std::size_t y = 0; y < S; ++y)
    if (q[y] != 0.0) r += jump_cost(model, z, p, y) * q[y];
  return r;
}

/// Running cost rate of a relaxed action, jump costs optionally folded in.
inline double running_cost_rate(const Model& model, std::size_t z, std::span<const double> p, bool fold_jumps) {
  const std::size_t A = model.num_actions();
  double r = 0.0;
  for (std::size_t a : model.feasible(z)) r += p[a] * model.costs().rate[z * A + a];
  if (fold_jumps) r += expected_jump_cost_rate(model, z, p);
  return r;
}

/// Pointwise split c = c+ + c- of every cost table.
inline std::pair<CostStructure, CostStructure> decompose_signed(const CostStructure& c) {
  auto split = [](const std::vector<double>& v, std::vector<double>& pos, std::vector<double>& neg) {
    pos.resize(v.size());
    neg.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      pos[i] = std::max(v[i], 0.0);
      neg[i] = std::min(v[i], 0.0);
    }
  };
  CostStructure pos, neg;
  split(c.rate, pos.rate, neg.rate);
  split(c.jump, pos.jump, neg.jump);
  split(c.action_jump, pos.action_jump, neg.action_jump);
  for (const InstantCost& g : c.instants) {
    pos.instants.push_back({g.time, {}});
    neg.instants.push_back({g.time, {}});
    split(g.values, pos.instants.back().values, neg.instants.back().values);
  }
  return {std::move(pos), std::move(neg)};
}

inline bool is_nonnegative(const CostStructure& c) {
  auto nonneg = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.0; });
  };
  return nonneg(c.rate) && nonneg(c.jump) && nonneg(c.action_jump) &&
         std::all_of(c.instants.begin(), c.instants.end(), [&](const InstantCost& g) { return nonneg(g.values); });
}

// ---------------------------------------------------------------------------
// Exact evaluation on a state-action curve.

struct CostOptions {
  bool fold_jumps = true;        // include jump costs as an equivalent rate
  bool action_dependent = false; // accept C(z,a,y); counterexample harness only
};

namespace detail {

/// int_a^b e^{-alpha s} ds
inline double discount_integral(double alpha, double a, double b) {
  if (alpha == 0.0) return b - a;
  return std::exp(-alpha * a) * -std::expm1(-alpha * (b - a)) / alpha;
}

inline void check_costs_finite(const CostStructure& c) {
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  bool ok = finite(c.rate) && finite(c.jump) && finite(c.action_jump);
  for (const InstantCost& g : c.instants) ok = ok && finite(g.values);
  if (!ok) throw Error(ErrorCode::UndefinedValue, "cost tables contain non-finite values");
}

/// Rate of slot s of the curve on cell k.
inline double slot_rate(const Model& model, const StateActionCurve& curve, std::size_t k, std::size_t s,
                        bool fold_jumps) {
  return running_cost_rate(model, curve.slot_state(s), {curve.weights(k, s), model.num_actions()}, fold_jumps);
}

}  // namespace detail

/// int_0^T e^{-alpha s} sum c(z,a) P(s,z,a) ds + sum_{u_i <= T} e^{-alpha u_i} sum G_i(z,a) P(u_i,z,a).
/// The integral is the composite trapezoid on the curve grid; instants off
/// the grid use linear interpolation of the curve inside their cell.
inline DiscountedCostResult finite_horizon_cost(const Model& model, const StateActionCurve& curve, double alpha,
                                                double T, CostOptions opt = {}) {
  detail::check_costs_finite(model.costs());
  if (opt.fold_jumps && model.costs().has_action_jump_costs() && !opt.action_dependent)
    throw Error(ErrorCode::ActionDependentJumpCost, "action-dependent jump costs have no equivalent cost rate");
  const TimeGrid& grid = curve.grid();
  if (!(T >= grid.origin) || T > grid.end() + 1e-9 * std::max(1.0, T))
    throw Error(ErrorCode::GridMismatch, "curve does not cover [0, " + std::to_string(T) + "]");
  const MarginalCurve& P = curve.slot_curve();
  const std::size_t slots = curve.num_slots();
  const double h = grid.step;

  // e^{-alpha t} P(t, s) at point k, and its value at an interior time t
  auto discounted = [&](std::size_t k, std::size_t s) { return std::exp(-alpha * grid.time(k)) * P(k, s); };
  auto interpolated = [&](double t, std::size_t s) {
    const std::size_t k = grid.cell_of(t);
    const double theta = std::clamp((t - grid.time(k)) / h, 0.0, 1.0);
    return (1.0 - theta) * P(k, s) + theta * P(k + 1, s);
  };

  DiscountedCostResult res{0.0, CostMethod::ExactCurve, T, 0.0};
  double scale = 0.0;
  std::vector<double> rates(slots);
  const std::size_t last = grid.cell_of(T);
  for (std::size_t k = 0; k <= last && grid.time(k) < T; ++k) {
    const double b = std::min(grid.time(k + 1), T);
    const double width = b - grid.time(k);
    if (width <= 0.0) break;
    for (std::size_t s = 0; s < slots; ++s) {
      const double r = detail::slot_rate(model, curve, k, s, opt.fold_jumps);
      if (r == 0.0) continue;
      scale = std::max(scale, std::abs(r));
      const double right = b < grid.time(k + 1) ? std::exp(-alpha * b) * interpolated(b, s) : discounted(k + 1, s);
      res.value += 0.5 * width * (discounted(k, s) + right) * r;
    }
  }
  for (const InstantCost& g : model.costs().instants) {
    if (g.time > T) break;
    double v = 0.0;
    for (std::size_t s = 0; s < slots; ++s) {
      const std::size_t z = curve.slot_state(s);
      const double* w = curve.weights_at(g.time, s);
      double gz = 0.0;
      for (std::size_t a : model.feasible(z)) gz += w[a] * g.values[z * model.num_actions() + a];
      v += gz * curve.slot_at(g.time, s);
    }
    res.value += std::exp(-alpha * g.time) * v;
  }
  // trapezoid error for e^{-alpha t} P(t) with |P''| <= (2 q-bar)^2
  const double rate_scale = alpha + 2.0 * model.max_exit_rate();
  res.error = h * h / 12.0 * T * scale * rate_scale * rate_scale;
  return res;
}

/// T with e^{-alpha T} sup|c| / alpha <= eps, and T >= every instant epoch.
inline double truncation_horizon(const Model& model, double alpha, double eps, CostOptions opt = {}) {
  if (!(alpha > 0.0)) throw Error(ErrorCode::UndefinedValue, "infinite horizon needs alpha > 0");
  if (!(eps > 0.0)) throw Error(ErrorCode::Parse, "eps must be positive");
  detail::check_costs_finite(model.costs());
  const std::size_t S = model.num_states();
  const std::size_t A = model.num_actions();
  const CostStructure& c = model.costs();
  double sup = 0.0;
  for (std::size_t z = 0; z < S; ++z) {
    double jump = 0.0;
    if (opt.fold_jumps)
      for (std::size_t y = 0; y < S; ++y) {
        if (y == z) continue;
        double cmax = std::abs(c.jump[z * S + y]);
        double qmax = 0.0;
        for (std::size_t a : model.feasible(z)) {
          if (c.has_action_jump_costs()) cmax = std::max(cmax, std::abs(c.action_jump[(z * A + a) * S + y]));
          qmax = std::max(qmax, model.rate(z, a, y));
        }
        jump += cmax * qmax;
      }
    for (std::size_t a : model.feasible(z)) sup = std::max(sup, std::abs(c.rate[z * A + a]) + jump);
  }
  double T = 0.0;
  for (const InstantCost& g : c.instants) T = std::max(T, g.time);
  if (sup > 0.0) T = std::max(T, std::log(sup / (alpha * eps)) / alpha);
  return std::max(T, 1e-9);
}

/// Infinite-horizon discounted cost from a curve that covers the
/// truncation horizon.
inline DiscountedCostResult infinite_horizon_cost(const Model& model, const StateActionCurve& curve, double alpha,
                                                  double eps, CostOptions opt = {}) {
  const double T = truncation_horizon(model, alpha, eps, opt);
  DiscountedCostResult r = finite_horizon_cost(model, curve, alpha, T, opt);
  r.error += eps;
  return r;
}

/// Solves for the marginals on a grid covering the truncation horizon and
/// evaluates the infinite-horizon cost.
inline DiscountedCostResult infinite_horizon_cost(const Model& model, const Policy& policy,
                                                  std::span<const double> gamma, double alpha, double eps,
                                                  double step, CostOptions opt = {}) {
  const double T = truncation_horizon(model, alpha, eps, opt);
  const StateActionCurve curve = exact_marginals(model, policy, gamma, TimeGrid::covering(step, T));
  return infinite_horizon_cost(model, curve, alpha, eps, opt);
}

// ---------------------------------------------------------------------------
// Monte Carlo evaluation.

/// Per-slot discounted cumulative running cost for grid policies, so the
/// cost of a sojourn is a difference of two lookups.
class DiscountedRateTable {
 public:
  DiscountedRateTable(const Model& model, const SlotPolicy& sp, double alpha, bool fold_jumps)
      : grid_(sp.table.grid), slots_(sp.table.num_states), alpha_(alpha) {
    const std::size_t K = grid_.cells;
    rate_.resize(K * slots_);
    cumulative_.assign((K + 1) * slots_, 0.0);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t s = 0; s < slots_; ++s) {
        const double* w = sp.table.weights(k, s);
        const double r = running_cost_rate(model, sp.state_of(s), {w, model.num_actions()}, fold_jumps);
        rate_[k * slots_ + s] = r;
        cumulative_[(k + 1) * slots_ + s] =
            cumulative_[k * slots_ + s] + r * detail::discount_integral(alpha, grid_.time(k), grid_.time(k + 1));
      }
  }

  /// int_0^t e^{-alpha u} r_s(u) du
  double at(std::size_t s, double t) const {
    const std::size_t j = grid_.cell_of(t);
    const double tj = grid_.time(j);
    if (t <= tj) return cumulative_[j * slots_ + s];
    return cumulative_[j * slots_ + s] + rate_[j * slots_ + s] * detail::discount_integral(alpha_, tj, t);
  }

  double between(std::size_t s, double a, double b) const { return b > a ? at(s, b) - at(s, a) : 0.0; }

 private:
  TimeGrid grid_;
  std::size_t slots_;
  double alpha_;
  std::vector<double> rate_;
  std::vector<double> cumulative_;
};

/// Pathwise discounted cost on [0, T]: running cost (closed form on constant
/// pieces for grid policies), jump costs C(x_{n-1}, pi_{t_n}, x_n) at jump
/// epochs and instant costs. Nothing accrues after escape to the cemetery.
inline DiscountedCostResult mc_discounted_cost(const Simulator& sim, std::span<const Trajectory> trajectories,
                                               double alpha, double T, bool include_running = true,
                                               bool include_jumps = true) {
  const Model& model = sim.model();
  detail::check_costs_finite(model.costs());
  const std::size_t A = model.num_actions();
  const SlotPolicy* sp = sim.slots();
  std::optional<DiscountedRateTable> table;
  if (sp && include_running) table.emplace(model, *sp, alpha, false);

  auto path_cost = [&](const Trajectory& tr) {
    double v = 0.0;
    const double stop = std::min(T, tr.end_time);
    if (include_running) {
      if (table) {
        std::size_t slot = sp->start(tr.initial_state());
        double t = 0.0;
        for (const Jump& j : tr.jumps()) {
          if (j.time > stop) break;
          v += table->between(slot, t, j.time);
          slot = sp->after_jump(slot, j.state);
          t = j.time;
        }
        v += table->between(slot, t, stop);
      } else {
        detail::for_each_piece(sim, tr, stop, [&](double a, double b, std::size_t z, std::span<const double> w) {
          v += running_cost_rate(model, z, w, false) * detail::discount_integral(alpha, a, b);
        });
      }
    }
    if (include_jumps) {
      std::size_t slot = sp ? sp->start(tr.initial_state()) : 0;
      std::size_t z = tr.initial_state();
      History prefix{z, {}};
      for (const Jump& j : tr.jumps()) {
        if (j.time > stop) break;
        double c;
        if (sp) {
          c = jump_cost(model, z, {sp->table.weights(sp->table.grid.cell_of(j.time), slot), A}, j.state);
          slot = sp->after_jump(slot, j.state);
        } else {
          const RelaxedAction p = std::get<GeneralPolicy>(sim.policy()).decide(prefix, j.time);
          c = jump_cost(model, z, p.weights, j.state);
          prefix.jumps.push_back(j);
        }
        v += std::exp(-alpha * j.time) * c;
        z = j.state;
      }
    }
    if (include_running)
      for (const InstantCost& g : model.costs().instants) {
        if (g.time > T) break;
        const auto z = tr.state_before(g.time);
        if (!z) continue;
        const RelaxedAction p = sim.action_at(tr, g.time);
        double gz = 0.0;
        for (std::size_t a : model.feasible(*z)) gz += p[a] * g.values[*z * A + a];
        v += std::exp(-alpha * g.time) * gz;
      }
    return v;
  };

  double sum = 0.0, sum2 = 0.0;
  for (const Trajectory& tr : trajectories) {
    const double v = path_cost(tr);
    sum += v;
    sum2 += v * v;
  }
  const double n = static_cast<double>(trajectories.size());
  const double mean = sum / n;
  const double var = std::max(0.0, sum2 / n - mean * mean) * n / std::max(1.0, n - 1.0);
  return {mean, CostMethod::MonteCarlo, T, std::sqrt(var / n)};
}

// ---------------------------------------------------------------------------
// Average cost.

/// V_alpha = gamma (alpha I - Q)^{-1} c for a time-homogeneous Markov policy.
inline double resolvent_value(const Model& model, const MarkovPolicyGrid& policy, std::span<const double> gamma,
                              double alpha, CostOptions opt = {}) {
  if (!(alpha > 0.0)) throw Error(ErrorCode::UndefinedValue, "resolvent needs alpha > 0");
  if (policy.grid.cells != 1) throw Error(ErrorCode::GridMismatch, "resolvent needs a time-homogeneous policy");
  validate_policy(model, policy);
  detail::check_distribution(gamma, model.num_states());
  const auto S = static_cast<Eigen::Index>(model.num_states());
  Eigen::MatrixXd M = alpha * Eigen::MatrixXd::Identity(S, S);
  Eigen::VectorXd c(S);
  for (Eigen::Index z = 0; z < S; ++z) {
    const auto zu = static_cast<std::size_t>(z);
    const double* w = policy.weights(0, zu);
    c(z) = running_cost_rate(model, zu, {w, model.num_actions()}, opt.fold_jumps);
    for (std::size_t a : model.feasible(zu)) {
      if (w[a] == 0.0) continue;
      M(z, z) += w[a] * model.exit_rate(zu, a);
      for (const Transition& t : model.row(zu, a).out) M(z, static_cast<Eigen::Index>(t.target)) -= w[a] * t.rate;
    }
  }
  const Eigen::VectorXd v = M.partialPivLu().solve(c);
  double out = 0.0;
  for (Eigen::Index z = 0; z < S; ++z) out += gamma[static_cast<std::size_t>(z)] * v(z);
  return out;
}

struct AverageCostEstimate {
  std::vector<double> parameters;  // alpha or T
  std::vector<double> values;      // alpha V_alpha or V_0^T / T
  double estimate = 0.0;           // last value
  bool monotone_tail = true;       // last three values move one way
};

namespace detail {

inline bool monotone_tail(const std::vector<double>& v) {
  if (v.size() < 3) return true;
  const double d1 = v[v.size() - 2] - v[v.size() - 3];
  const double d2 = v[v.size() - 1] - v[v.size() - 2];
  return d1 * d2 >= 0.0;
}

}  // namespace detail

/// 0.1 * 2^-k, k = 0..10
inline std::vector<double> default_alpha_sequence() {
  std::vector<double> a;
  for (int k = 0; k <= 10; ++k) a.push_back(0.1 * std::ldexp(1.0, -k));
  return a;
}

/// 2^k, k = 0..8
inline std::vector<double> default_horizon_sequence() {
  std::vector<double> t;
  for (int k = 0; k <= 8; ++k) t.push_back(std::ldexp(1.0, k));
  return t;
}

/// alpha V_alpha along a decreasing alpha sequence.
inline AverageCostEstimate average_cost_abel(const std::function<double(double)>& value,
                                             std::vector<double> alphas = default_alpha_sequence()) {
  AverageCostEstimate e{std::move(alphas), {}, 0.0, true};
  for (double a : e.parameters) e.values.push_back(a * value(a));
  e.estimate = e.values.empty() ? 0.0 : e.values.back();
  e.monotone_tail = detail::monotone_tail(e.values);
  return e;
}

/// V_0^T / T along an increasing horizon sequence.
inline AverageCostEstimate average_cost_cesaro(const std::function<double(double)>& finite_horizon_value,
                                               std::vector<double> horizons = default_horizon_sequence()) {
  AverageCostEstimate e{std::move(horizons), {}, 0.0, true};
  for (double T : e.parameters) e.values.push_back(finite_horizon_value(T) / T);
  e.estimate = e.values.empty() ? 0.0 : e.values.back();
  e.monotone_tail = detail::monotone_tail(e.values);
  return e;
}

// ---------------------------------------------------------------------------
// Constrained problem.

struct CriterionSpec {
  std::string name;
  CostStructure costs;
  double alpha = 1.0;
  std::optional<double> horizon;  // nullopt: infinite horizon
  double eps = 1e-8;
  double bound = 0.0;             // M_beta; unused for the objective
};

struct CriterionValue {
  std::string name;
  double value_pi = 0.0;
  double value_phi = 0.0;
  double bound = 0.0;
};

struct ConstraintReport {
  CriterionValue objective;
  std::vector<CriterionValue> constraints;
  bool pi_feasible = true;
  bool phi_feasible = true;
  bool dominance_holds = true;  // vacuous when pi is infeasible
};

/// Evaluates objective and constraints for pi and its Markovization phi and
/// checks: pi feasible => phi feasible and objective(phi) <= objective(pi).
inline ConstraintReport evaluate_constraints(const Model& model, const StateActionCurve& pi_curve,
                                             const StateActionCurve& phi_curve, const CriterionSpec& objective,
                                             const std::vector<CriterionSpec>& constraints, double tol = 1e-6) {
  const MarginalCurve phi_states = phi_curve.state_curve();
  auto evaluate = [&](const CriterionSpec& spec) {
    Model m = model;
    m.set_costs(spec.costs);
    const double T = spec.horizon ? *spec.horizon : truncation_horizon(m, spec.alpha, spec.eps);
    if (!is_nonnegative(spec.costs)) {
      // signed costs need a nonexplosive phi on the evaluation window
      const std::size_t last = std::min(phi_curve.grid().cells, phi_curve.grid().cell_of(T) + 1);
      for (std::size_t k = 0; k <= last; ++k)
        if (mass_defect(phi_states, k) > 1e-9)
          throw Error(ErrorCode::AssumptionViolation,
                      "criterion '" + spec.name + "' has signed costs and phi is explosive");
    }
    CriterionValue v{spec.name, 0.0, 0.0, spec.bound};
    if (spec.horizon) {
      v.value_pi = finite_horizon_cost(m, pi_curve, spec.alpha, T).value;
      v.value_phi = finite_horizon_cost(m, phi_curve, spec.alpha, T).value;
    } else {
      v.value_pi = infinite_horizon_cost(m, pi_curve, spec.alpha, spec.eps).value;
      v.value_phi = infinite_horizon_cost(m, phi_curve, spec.alpha, spec.eps).value;
    }
    return v;
  };
  ConstraintReport r;
  r.objective = evaluate(objective);
  for (const CriterionSpec& c : constraints) {
    r.constraints.push_back(evaluate(c));
    const CriterionValue& v = r.constraints.back();
    r.pi_feasible = r.pi_feasible && v.value_pi <= v.bound + tol;
    r.phi_feasible = r.phi_feasible && v.value_phi <= v.bound + tol;
  }
  if (r.pi_feasible) r.dominance_holds = r.phi_feasible && r.objective.value_phi <= r.objective.value_pi + tol;
  return r;
}

}  // namespace ctjmdp
