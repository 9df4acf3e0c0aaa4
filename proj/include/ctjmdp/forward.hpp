#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "ctjmdp/error.hpp"
#include "ctjmdp/model.hpp"
#include "ctjmdp/policy.hpp"

namespace ctjmdp {

/// Sparse generator of q(.,t,.) on one policy cell.
struct Generator {
  std::vector<std::size_t> offsets;  // CSR over source states
  std::vector<std::size_t> targets;
  std::vector<double> rates;
  std::vector<double> exit;  // q(z,t), escape included

  /// dP = P * Q
  void apply(std::span<const double> p, std::span<double> dp) const {
    const std::size_t S = exit.size();
    std::fill(dp.begin(), dp.end(), 0.0);
    for (std::size_t z = 0; z < S; ++z) {
      const double pz = p[z];
      if (pz == 0.0) continue;
      dp[z] -= pz * exit[z];
      for (std::size_t i = offsets[z]; i < offsets[z + 1]; ++i) dp[targets[i]] += pz * rates[i];
    }
  }

  friend bool operator==(const Generator&, const Generator&) = default;
};

/// Q-function induced by a Markov policy grid, read on a solver grid.
/// Identical consecutive policy cells share one generator.
class QFunction {
 public:
  QFunction(const Model& model, const MarkovPolicyGrid& policy, const TimeGrid& solver)
      : solver_(solver), ratio_(policy_cell_ratio(policy.grid, solver)), policy_cells_(policy.grid.cells) {
    validate_policy(model, policy);
    const std::size_t S = model.num_states();
    const std::size_t A = model.num_actions();
    std::vector<double> dense(S, 0.0);
    for (std::size_t j = 0; j < policy.grid.cells; ++j) {
      if (j > 0 && std::equal(policy.weights(j, 0), policy.weights(j, 0) + S * A, policy.weights(j - 1, 0))) {
        cell_generator_.push_back(cell_generator_.back());
        continue;
      }
      Generator g;
      g.offsets.push_back(0);
      g.exit.assign(S, 0.0);
      for (std::size_t z = 0; z < S; ++z) {
        const double* w = policy.weights(j, z);
        std::fill(dense.begin(), dense.end(), 0.0);
        for (std::size_t a : model.feasible(z)) {
          if (w[a] == 0.0) continue;
          const RateRow& row = model.row(z, a);
          g.exit[z] += w[a] * row.exit;
          for (const Transition& t : row.out) dense[t.target] += w[a] * t.rate;
        }
        for (std::size_t y = 0; y < S; ++y)
          if (dense[y] > 0.0) {
            g.targets.push_back(y);
            g.rates.push_back(dense[y]);
          }
        g.offsets.push_back(g.targets.size());
      }
      generators_.push_back(std::move(g));
      cell_generator_.push_back(generators_.size() - 1);
    }
  }

  const TimeGrid& grid() const { return solver_; }
  std::size_t num_states() const { return generators_.front().exit.size(); }

  std::size_t policy_cell(std::size_t solver_cell) const {
    return std::min(solver_cell / ratio_, policy_cells_ - 1);
  }

  const Generator& generator(std::size_t solver_cell) const {
    return generators_[cell_generator_[policy_cell(solver_cell)]];
  }

  double max_exit_rate() const {
    double q = 0.0;
    for (const Generator& g : generators_)
      for (double e : g.exit) q = std::max(q, e);
    return q;
  }

 private:
  TimeGrid solver_;
  std::size_t ratio_;
  std::size_t policy_cells_;
  std::vector<Generator> generators_;
  std::vector<std::size_t> cell_generator_;
};

/// P(t_k, z) on a grid. Mass missing from the states is exploded mass.
struct MarginalCurve {
  TimeGrid grid;  // output grid
  std::size_t num_states = 0;
  std::vector<double> data;  // [k * S + z]
  double max_clamp = 0.0;    // largest negative excursion removed by clamping

  MarginalCurve() = default;
  MarginalCurve(TimeGrid g, std::size_t states) : grid(g), num_states(states), data(g.points() * states, 0.0) {}

  double operator()(std::size_t k, std::size_t z) const { return data[k * num_states + z]; }
  double& operator()(std::size_t k, std::size_t z) { return data[k * num_states + z]; }
  std::span<const double> at(std::size_t k) const { return {&data[k * num_states], num_states}; }

  double mass(std::size_t k) const {
    double s = 0.0;
    for (double p : at(k)) s += p;
    return s;
  }
};

/// 1 - sum_z P(t_k, z).
inline double mass_defect(const MarginalCurve& curve, std::size_t k) {
  const double d = 1.0 - curve.mass(k);
  // the initial law is normalised up to rounding
  return k == 0 && std::abs(d) < 1e-12 ? 0.0 : d;
}

struct SolverOptions {
  std::size_t stride = 1;  // keep every stride-th solver point
  double max_step_rate = 0.1;
};

namespace detail {

inline void check_distribution(std::span<const double> gamma, std::size_t S) {
  if (gamma.size() != S) throw Error(ErrorCode::BadDist, "initial law has wrong dimension");
  double s = 0.0;
  for (double g : gamma) {
    if (!(g >= 0.0)) throw Error(ErrorCode::BadDist, "negative initial probability");
    s += g;
  }
  if (std::abs(s - 1.0) > 1e-9) throw Error(ErrorCode::BadDist, "initial law sums to " + std::to_string(s));
}

inline TimeGrid output_grid(const TimeGrid& g, std::size_t stride) {
  if (stride == 0 || g.cells % stride != 0)
    throw Error(ErrorCode::GridMismatch, "output stride must divide the number of cells");
  return {g.origin, g.step * static_cast<double>(stride), g.cells / stride};
}

}  // namespace detail

/// Kolmogorov forward equation dP/dt = P Q(t) by fixed-step classical RK4
/// from `initial` at grid.origin. The generator is constant on each cell.
inline MarginalCurve forward_ode(const QFunction& q, std::span<const double> initial, SolverOptions opt = {}) {
  const TimeGrid& grid = q.grid();
  const std::size_t S = q.num_states();
  if (initial.size() != S) throw Error(ErrorCode::BadDist, "initial law has wrong dimension");
  if (grid.step * q.max_exit_rate() > opt.max_step_rate)
    throw Error(ErrorCode::StepTooCoarse, "h * max rate = " + std::to_string(grid.step * q.max_exit_rate()) +
                                              " exceeds " + std::to_string(opt.max_step_rate));
  MarginalCurve curve(detail::output_grid(grid, opt.stride), S);
  std::vector<double> p(initial.begin(), initial.end()), k1(S), k2(S), k3(S), k4(S), tmp(S);
  std::copy(p.begin(), p.end(), curve.data.begin());
  const double h = grid.step;
  for (std::size_t k = 0; k < grid.cells; ++k) {
    const Generator& g = q.generator(k);
    g.apply(p, k1);
    for (std::size_t z = 0; z < S; ++z) tmp[z] = p[z] + 0.5 * h * k1[z];
    g.apply(tmp, k2);
    for (std::size_t z = 0; z < S; ++z) tmp[z] = p[z] + 0.5 * h * k2[z];
    g.apply(tmp, k3);
    for (std::size_t z = 0; z < S; ++z) tmp[z] = p[z] + h * k3[z];
    g.apply(tmp, k4);
    for (std::size_t z = 0; z < S; ++z) {
      p[z] += h / 6.0 * (k1[z] + 2.0 * k2[z] + 2.0 * k3[z] + k4[z]);
      if (p[z] < 0.0) {
        curve.max_clamp = std::max(curve.max_clamp, -p[z]);
        p[z] = 0.0;
      }
    }
    if ((k + 1) % opt.stride == 0) std::copy(p.begin(), p.end(), curve.data.begin() + (k + 1) / opt.stride * S);
  }
  return curve;
}

inline MarginalCurve forward_ode(const Model& model, const MarkovPolicyGrid& policy, std::span<const double> gamma,
                                 const TimeGrid& grid, SolverOptions opt = {}) {
  detail::check_distribution(gamma, model.num_states());
  return forward_ode(QFunction(model, policy, grid), gamma, opt);
}

struct SeriesResult {
  MarginalCurve curve;
  std::size_t terms = 0;      // number of terms summed (n = 0..terms-1)
  bool converged = false;     // false: NO_CONVERGENCE
  std::vector<double> term_sup;  // sup-norm of each term
};

inline constexpr double kSeriesTolerance = 1e-10;
inline constexpr std::size_t kSeriesMaxTerms = 10000;

/// Minimal solution as the Feller series sum_n P^(n):
///   P^(0)(t,z) = gamma(z) exp(-int_0^t q(z,s) ds)
///   P^(n)(t,z) = int_0^t sum_{y != z} P^(n-1)(s,y) q(y,s,{z}) exp(-int_s^t q(z,r) dr) ds
/// The outer integral is the composite trapezoid on the grid; the inner
/// exponential is exact because q is constant on each cell. Terms are kept
/// only for states they can reach, so sparse chains stay cheap.
inline SeriesResult feller_series(const QFunction& q, std::span<const double> gamma,
                                  std::size_t n_max = kSeriesMaxTerms, double tol = kSeriesTolerance,
                                  SolverOptions opt = {}) {
  const TimeGrid& grid = q.grid();
  const std::size_t S = q.num_states();
  const std::size_t K = grid.cells;
  const double h = grid.step;
  if (n_max == 0) throw Error(ErrorCode::Parse, "n_max must be positive");
  SeriesResult res{MarginalCurve(detail::output_grid(grid, opt.stride), S), 0, false, {}};

  // decay[k * S + z] = exp(-h q(z, cell k))
  std::vector<double> decay(K * S);
  for (std::size_t k = 0; k < K; ++k) {
    const Generator& g = q.generator(k);
    for (std::size_t z = 0; z < S; ++z) decay[k * S + z] = std::exp(-h * g.exit[z]);
  }

  // term columns for active states only
  std::vector<std::vector<double>> term(S), next(S);
  auto add_to_curve = [&](const std::vector<std::vector<double>>& t) {
    double sup = 0.0;
    for (std::size_t z = 0; z < S; ++z) {
      if (t[z].empty()) continue;
      for (std::size_t k = 0; k <= K; ++k) sup = std::max(sup, t[z][k]);
      for (std::size_t j = 0; j < res.curve.grid.points(); ++j) res.curve(j, z) += t[z][j * opt.stride];
    }
    res.term_sup.push_back(sup);
    return sup;
  };

  for (std::size_t z = 0; z < S; ++z) {
    if (gamma[z] == 0.0) continue;
    term[z].assign(K + 1, 0.0);
    term[z][0] = gamma[z];
    for (std::size_t k = 0; k < K; ++k) term[z][k + 1] = term[z][k] * decay[k * S + z];
  }
  double sup = add_to_curve(term);
  res.terms = 1;

  std::vector<double> inflow_left(S), inflow_right(S);
  std::vector<char> reach(S);
  while (sup >= tol && res.terms < n_max) {
    // states reachable in one jump from the active set
    std::fill(reach.begin(), reach.end(), 0);
    for (std::size_t k = 0; k < K; ++k) {
      if (k > 0 && &q.generator(k) == &q.generator(k - 1)) continue;
      const Generator& g = q.generator(k);
      for (std::size_t y = 0; y < S; ++y)
        if (!term[y].empty())
          for (std::size_t i = g.offsets[y]; i < g.offsets[y + 1]; ++i) reach[g.targets[i]] = 1;
    }
    for (std::size_t z = 0; z < S; ++z) {
      next[z].clear();
      if (reach[z]) next[z].assign(K + 1, 0.0);
    }
    for (std::size_t k = 0; k < K; ++k) {
      const Generator& g = q.generator(k);
      std::fill(inflow_left.begin(), inflow_left.end(), 0.0);
      std::fill(inflow_right.begin(), inflow_right.end(), 0.0);
      for (std::size_t y = 0; y < S; ++y) {
        if (term[y].empty()) continue;
        const double left = term[y][k];
        const double right = term[y][k + 1];
        if (left == 0.0 && right == 0.0) continue;
        for (std::size_t i = g.offsets[y]; i < g.offsets[y + 1]; ++i) {
          inflow_left[g.targets[i]] += left * g.rates[i];
          inflow_right[g.targets[i]] += right * g.rates[i];
        }
      }
      for (std::size_t z = 0; z < S; ++z) {
        if (next[z].empty()) continue;
        const double e = decay[k * S + z];
        next[z][k + 1] = next[z][k] * e + 0.5 * h * (inflow_left[z] * e + inflow_right[z]);
      }
    }
    std::swap(term, next);
    sup = add_to_curve(term);
    ++res.terms;
  }
  res.converged = sup < tol;
  return res;
}

inline SeriesResult feller_series(const Model& model, const MarkovPolicyGrid& policy, std::span<const double> gamma,
                                  const TimeGrid& grid, std::size_t n_max = kSeriesMaxTerms,
                                  double tol = kSeriesTolerance, SolverOptions opt = {}) {
  detail::check_distribution(gamma, model.num_states());
  return feller_series(QFunction(model, policy, grid), gamma, n_max, tol, opt);
}

// ---------------------------------------------------------------------------
// State-action marginals.

/// State-action marginals of a policy that is Markov on some "slot" space
/// (the states themselves, or X x M for finite-memory policies). Slot
/// occupancies live on the grid points; action weights are constant on
/// policy cells. P(t,z,a) = sum_{s -> z} P(t,s) w(a|s,t).
class StateActionCurve {
 public:
  StateActionCurve(MarginalCurve slots, std::vector<std::size_t> projection, std::size_t num_states,
                   MarkovPolicyGrid weights)
      : slots_(std::move(slots)), projection_(std::move(projection)), num_states_(num_states),
        weights_(std::move(weights)), ratio_(policy_cell_ratio(weights_.grid, slots_.grid)) {}

  const TimeGrid& grid() const { return slots_.grid; }
  std::size_t num_states() const { return num_states_; }
  std::size_t num_actions() const { return weights_.num_actions; }
  std::size_t num_slots() const { return projection_.size(); }
  std::size_t slot_state(std::size_t s) const { return projection_[s]; }
  const MarginalCurve& slot_curve() const { return slots_; }

  /// Action weights of slot s on solver cell k (clamped to the last cell).
  const double* weights(std::size_t k, std::size_t s) const {
    const std::size_t cell = std::min(k, grid().cells - 1);
    return weights_.weights(std::min(cell / ratio_, weights_.grid.cells - 1), s);
  }

  /// Action weights of slot s at time t, honouring epoch overrides.
  const double* weights_at(double t, std::size_t s) const { return weights_.weights_at(t, s); }

  /// Slot occupancy at time t, linear inside a cell.
  double slot_at(double t, std::size_t s) const {
    const TimeGrid& g = grid();
    const std::size_t k = g.cell_of(t);
    const double theta = std::clamp((t - g.time(k)) / g.step, 0.0, 1.0);
    return (1.0 - theta) * slots_(k, s) + theta * slots_(k + 1, s);
  }

  double state(std::size_t k, std::size_t z) const {
    double p = 0.0;
    for (std::size_t s = 0; s < num_slots(); ++s)
      if (projection_[s] == z) p += slots_(k, s);
    return p;
  }

  /// Right-continuous value at grid point k.
  double point(std::size_t k, std::size_t z, std::size_t a) const {
    double p = 0.0;
    for (std::size_t s = 0; s < num_slots(); ++s)
      if (projection_[s] == z) p += slots_(k, s) * weights(k, s)[a];
    return p;
  }

  /// (1/h) int over cell k of P(t,z) dt, trapezoid.
  double cell_state(std::size_t k, std::size_t z) const {
    double p = 0.0;
    for (std::size_t s = 0; s < num_slots(); ++s)
      if (projection_[s] == z) p += 0.5 * (slots_(k, s) + slots_(k + 1, s));
    return p;
  }

  /// (1/h) int over cell k of P(t,z,a) dt, trapezoid.
  double cell_average(std::size_t k, std::size_t z, std::size_t a) const {
    double p = 0.0;
    for (std::size_t s = 0; s < num_slots(); ++s)
      if (projection_[s] == z) p += 0.5 * (slots_(k, s) + slots_(k + 1, s)) * weights(k, s)[a];
    return p;
  }

  MarginalCurve state_curve() const {
    MarginalCurve out(grid(), num_states_);
    out.max_clamp = slots_.max_clamp;
    for (std::size_t k = 0; k < grid().points(); ++k)
      for (std::size_t s = 0; s < num_slots(); ++s) out(k, projection_[s]) += slots_(k, s);
    return out;
  }

 private:
  MarginalCurve slots_;
  std::vector<std::size_t> projection_;
  std::size_t num_states_;
  MarkovPolicyGrid weights_;
  std::size_t ratio_;
};

/// P(t,z,a) = P(t,z) phi(a|z,t).
inline StateActionCurve markov_marginals(const Model& model, const MarkovPolicyGrid& phi,
                                         std::span<const double> gamma, const TimeGrid& grid) {
  MarginalCurve states = forward_ode(model, phi, gamma, grid);
  std::vector<std::size_t> identity(model.num_states());
  for (std::size_t z = 0; z < identity.size(); ++z) identity[z] = z;
  return StateActionCurve(std::move(states), std::move(identity), model.num_states(), phi);
}

/// Exact law of a finite-memory policy: solve on X x M and project.
inline StateActionCurve finite_memory_marginals(const Model& model, const FiniteMemoryPolicy& policy,
                                                std::span<const double> gamma, const TimeGrid& grid) {
  detail::check_distribution(gamma, model.num_states());
  Augmentation aug = augment(model, policy, &grid);
  MarginalCurve slots = forward_ode(aug.model, aug.policy, aug.lift(gamma), grid);
  return StateActionCurve(std::move(slots), std::move(aug.projection), model.num_states(), std::move(aug.policy));
}

/// Dispatch for the policy kinds that admit exact marginals.
inline StateActionCurve exact_marginals(const Model& model, const Policy& policy, std::span<const double> gamma,
                                        const TimeGrid& grid) {
  if (const auto* mp = std::get_if<MarkovPolicyGrid>(&policy)) return markov_marginals(model, *mp, gamma, grid);
  if (const auto* fm = std::get_if<FiniteMemoryPolicy>(&policy))
    return finite_memory_marginals(model, *fm, gamma, grid);
  throw Error(ErrorCode::UnsupportedAction, "general policies have no exact marginals; use the simulator");
}

}  // namespace ctjmdp
