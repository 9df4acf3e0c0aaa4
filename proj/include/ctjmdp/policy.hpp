#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "ctjmdp/error.hpp"
#include "ctjmdp/model.hpp"

namespace ctjmdp {

/// Uniform grid origin + k * step, k = 0..cells. Cell k is [t_k, t_{k+1}).
struct TimeGrid {
  double origin = 0.0;
  double step = 1.0;
  std::size_t cells = 1;

  double time(std::size_t k) const { return origin + static_cast<double>(k) * step; }
  double end() const { return time(cells); }
  std::size_t points() const { return cells + 1; }

  /// Cell containing t; times past the end map to the last cell.
  std::size_t cell_of(double t) const {
    if (!(t > origin)) return 0;
    const double r = (t - origin) / step;
    const auto k = static_cast<std::size_t>(std::floor(r + 1e-9 * std::max(1.0, r)));
    return std::min(k, cells - 1);
  }

  /// Uniform grid covering [0, horizon] with the given step.
  static TimeGrid covering(double step, double horizon, double origin = 0.0) {
    if (!(step > 0.0) || !(horizon > 0.0)) throw Error(ErrorCode::GridMismatch, "grid step and horizon must be positive");
    const auto cells = static_cast<std::size_t>(std::ceil(horizon / step - 1e-9));
    return {origin, step, std::max<std::size_t>(cells, 1)};
  }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;
};

/// Number of solver cells per policy cell; GRID_MISMATCH unless the policy
/// grid is a whole-number coarsening of the solver grid with the same origin.
/// A single-cell policy is constant in time and fits any grid.
inline std::size_t policy_cell_ratio(const TimeGrid& policy, const TimeGrid& solver) {
  if (policy.cells == 1) return 1;
  const double r = policy.step / solver.step;
  const double nearest = std::round(r);
  if (nearest < 1.0 || std::abs(r - nearest) > 1e-9 * nearest ||
      std::abs(policy.origin - solver.origin) > 1e-12 * std::max(1.0, std::abs(policy.origin)))
    throw Error(ErrorCode::GridMismatch, "policy grid step " + std::to_string(policy.step) +
                                             " is not a multiple of solver step " + std::to_string(solver.step));
  return static_cast<std::size_t>(nearest);
}

struct Jump {
  double time;
  std::size_t state;
};

/// Observed history (x0, t1, x1, ..., tn, xn).
struct History {
  std::size_t initial_state = 0;
  std::vector<Jump> jumps;

  std::size_t current_state() const { return jumps.empty() ? initial_state : jumps.back().state; }
  double last_jump_time() const { return jumps.empty() ? 0.0 : jumps.back().time; }
};

/// phi(.|z,t): one relaxed action per grid cell and state, held constant on
/// each cell and extended past the grid by the last cell.
struct MarkovPolicyGrid {
  TimeGrid grid;
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> table;  // [(cell * S + z) * A + a]

  /// Values at isolated instants (instant-cost epochs) that override the
  /// cell value at exactly that time. They carry no mass for the dynamics.
  struct Epoch {
    double time;
    std::vector<double> table;  // [z * A + a]
  };
  std::vector<Epoch> epochs;

  MarkovPolicyGrid() = default;
  MarkovPolicyGrid(TimeGrid g, std::size_t states, std::size_t actions)
      : grid(g), num_states(states), num_actions(actions), table(g.cells * states * actions, 0.0) {}

  /// Time-homogeneous policy with a deterministic action per state.
  static MarkovPolicyGrid deterministic(const Model& model, const std::vector<std::size_t>& action_of_state) {
    MarkovPolicyGrid p({0.0, 1.0, 1}, model.num_states(), model.num_actions());
    for (std::size_t z = 0; z < model.num_states(); ++z) p.weights(0, z)[action_of_state.at(z)] = 1.0;
    return p;
  }

  double* weights(std::size_t cell, std::size_t z) { return &table[(cell * num_states + z) * num_actions]; }
  const double* weights(std::size_t cell, std::size_t z) const {
    return &table[(cell * num_states + z) * num_actions];
  }

  const double* weights_at(double t, std::size_t z) const {
    for (const Epoch& e : epochs)
      if (e.time == t) return &e.table[z * num_actions];
    return weights(grid.cell_of(t), z);
  }

  RelaxedAction at(std::size_t z, double t) const {
    const double* w = weights_at(t, z);
    return RelaxedAction{std::vector<double>(w, w + num_actions)};
  }
};

/// History dependence through a finite memory updated at every jump.
/// Decisions may depend on absolute time through a grid table.
struct FiniteMemoryPolicy {
  std::vector<std::string> memory_names;
  std::size_t initial_memory = 0;
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<std::size_t> update;  // [(m * S + from) * S + to] -> m'
  TimeGrid grid;
  std::vector<double> decision;  // [((cell * M + m) * S + z) * A + a]

  std::size_t num_memory() const { return memory_names.size(); }

  FiniteMemoryPolicy() = default;
  FiniteMemoryPolicy(std::vector<std::string> memory, std::size_t initial, std::size_t states, std::size_t actions,
                     TimeGrid g)
      : memory_names(std::move(memory)), initial_memory(initial), num_states(states), num_actions(actions),
        update(num_memory() * states * states), grid(g), decision(g.cells * num_memory() * states * actions, 0.0) {
    for (std::size_t m = 0; m < num_memory(); ++m)
      for (std::size_t i = 0; i < states * states; ++i) update[m * states * states + i] = m;
  }

  std::size_t next_memory(std::size_t m, std::size_t from, std::size_t to) const {
    return update[(m * num_states + from) * num_states + to];
  }
  std::size_t& next_memory(std::size_t m, std::size_t from, std::size_t to) {
    return update[(m * num_states + from) * num_states + to];
  }

  double* weights(std::size_t cell, std::size_t m, std::size_t z) {
    return &decision[((cell * num_memory() + m) * num_states + z) * num_actions];
  }
  const double* weights(std::size_t cell, std::size_t m, std::size_t z) const {
    return &decision[((cell * num_memory() + m) * num_states + z) * num_actions];
  }

  std::size_t memory_after(const History& h) const {
    std::size_t m = initial_memory;
    std::size_t from = h.initial_state;
    for (const Jump& j : h.jumps) {
      m = next_memory(m, from, j.state);
      from = j.state;
    }
    return m;
  }
};

/// Unrestricted policy: any pure function of the full history and time.
/// Only Monte Carlo paths accept it.
struct GeneralPolicy {
  std::function<RelaxedAction(const History&, double)> decide;
};

using Policy = std::variant<MarkovPolicyGrid, FiniteMemoryPolicy, GeneralPolicy>;

/// Relaxed action chosen at time t after the given history.
inline RelaxedAction decision_at(const Model& model, const Policy& policy, const History& history, double t) {
  const std::size_t z = history.current_state();
  RelaxedAction p = std::visit(
      [&](const auto& pol) -> RelaxedAction {
        using T = std::decay_t<decltype(pol)>;
        if constexpr (std::is_same_v<T, MarkovPolicyGrid>) {
          return pol.at(z, t);
        } else if constexpr (std::is_same_v<T, FiniteMemoryPolicy>) {
          const double* w = pol.weights(pol.grid.cell_of(t), pol.memory_after(history), z);
          return RelaxedAction{std::vector<double>(w, w + pol.num_actions)};
        } else {
          return pol.decide(history, t);
        }
      },
      policy);
  check_support(model, z, p, ErrorCode::UnsupportedAction);
  return p;
}

/// Checks every table entry of a grid-based policy against the model.
inline void validate_policy(const Model& model, const Policy& policy) {
  const std::size_t S = model.num_states();
  const std::size_t A = model.num_actions();
  auto check_row = [&](std::size_t z, const double* w) {
    check_support(model, z, RelaxedAction{std::vector<double>(w, w + A)}, ErrorCode::UnsupportedAction);
  };
  if (const auto* mp = std::get_if<MarkovPolicyGrid>(&policy)) {
    if (mp->num_states != S || mp->num_actions != A)
      throw Error(ErrorCode::UnsupportedAction, "policy dimensions do not match the model");
    if (mp->grid.cells == 0 || !(mp->grid.step > 0.0)) throw Error(ErrorCode::GridMismatch, "empty policy grid");
    for (std::size_t k = 0; k < mp->grid.cells; ++k)
      for (std::size_t z = 0; z < S; ++z) check_row(z, mp->weights(k, z));
    for (const auto& e : mp->epochs) {
      if (e.table.size() != S * A) throw Error(ErrorCode::UnsupportedAction, "epoch table has wrong dimension");
      for (std::size_t z = 0; z < S; ++z) check_row(z, &e.table[z * A]);
    }
  } else if (const auto* fm = std::get_if<FiniteMemoryPolicy>(&policy)) {
    if (fm->num_states != S || fm->num_actions != A || fm->num_memory() == 0)
      throw Error(ErrorCode::UnsupportedAction, "policy dimensions do not match the model");
    if (fm->grid.cells == 0 || !(fm->grid.step > 0.0)) throw Error(ErrorCode::GridMismatch, "empty policy grid");
    if (fm->initial_memory >= fm->num_memory()) throw Error(ErrorCode::UnknownId, "initial memory out of range");
    for (std::size_t m : fm->update)
      if (m >= fm->num_memory()) throw Error(ErrorCode::UnknownId, "memory update out of range");
    for (std::size_t k = 0; k < fm->grid.cells; ++k)
      for (std::size_t m = 0; m < fm->num_memory(); ++m)
        for (std::size_t z = 0; z < S; ++z) check_row(z, fm->weights(k, m, z));
  }
}

/// Deterministic selector used wherever a conditional law is undefined:
/// the lowest-indexed feasible action.
inline std::size_t fallback_action(const Model& model, std::size_t z) { return model.feasible(z).front(); }

// ---------------------------------------------------------------------------
// Memory augmentation: a finite-memory policy is Markov on X x M.

struct Augmentation {
  Model model;                          // states (z, m) at index m * S + z
  MarkovPolicyGrid policy;              // decision map on the augmented states
  std::vector<std::size_t> projection;  // augmented state -> original state
  std::size_t num_memory = 1;
  std::size_t initial_memory = 0;

  std::size_t index(std::size_t z, std::size_t m) const { return m * projection.size() / num_memory + z; }

  /// Initial law on X x M: gamma placed on the initial memory.
  std::vector<double> lift(std::span<const double> gamma) const {
    std::vector<double> out(projection.size(), 0.0);
    for (std::size_t z = 0; z < gamma.size(); ++z) out[index(z, initial_memory)] = gamma[z];
    return out;
  }
};

/// Builds the chain on X x M: (z,m) -> (y, update(m,z,y)) at rate q(z,a,y).
/// When `solver_grid` is given, the decision grid must align with it.
inline Augmentation augment(const Model& model, const FiniteMemoryPolicy& fm, const TimeGrid* solver_grid = nullptr) {
  validate_policy(model, fm);
  if (solver_grid) policy_cell_ratio(fm.grid, *solver_grid);
  const std::size_t S = model.num_states();
  const std::size_t A = model.num_actions();
  const std::size_t M = fm.num_memory();
  const RawModel base = to_raw(model);

  auto name = [&](std::size_t z, std::size_t m) {
    return M == 1 ? base.states[z] : base.states[z] + "|" + fm.memory_names[m];
  };

  RawModel raw;
  raw.actions = base.actions;
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t z = 0; z < S; ++z) raw.states.push_back(name(z, m));
  const CostStructure& c = model.costs();
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t z = 0; z < S; ++z) {
      const std::string zm = name(z, m);
      auto& acts = raw.feasible[zm];
      for (std::size_t a : model.feasible(z)) {
        acts.push_back(base.actions[a]);
        const RateRow& row = model.row(z, a);
        RawRate rr{zm, base.actions[a], {}, row.escape};
        for (const Transition& t : row.out) rr.row[name(t.target, fm.next_memory(m, z, t.target))] += t.rate;
        raw.rates.push_back(std::move(rr));
        if (c.rate[z * A + a] != 0.0) raw.cost_rate[zm][base.actions[a]] = c.rate[z * A + a];
      }
      for (std::size_t y = 0; y < S; ++y) {
        if (y == z) continue;
        const std::string ym = name(y, fm.next_memory(m, z, y));
        if (c.jump[z * S + y] != 0.0) raw.jump_costs[zm][ym] = c.jump[z * S + y];
        if (c.has_action_jump_costs())
          for (std::size_t a : model.feasible(z))
            if (c.action_jump[(z * A + a) * S + y] != 0.0)
              raw.action_jump_costs[zm][base.actions[a]][ym] = c.action_jump[(z * A + a) * S + y];
      }
    }
  }
  for (const InstantCost& g : c.instants) {
    RawInstantCost rg{g.time, {}};
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t z = 0; z < S; ++z)
        for (std::size_t a : model.feasible(z))
          if (g.values[z * A + a] != 0.0) rg.values[name(z, m)][base.actions[a]] = g.values[z * A + a];
    raw.instant_costs.push_back(std::move(rg));
  }

  Augmentation out{validate_model(raw), MarkovPolicyGrid(fm.grid, S * M, A), {}, M, fm.initial_memory};
  out.projection.resize(S * M);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t z = 0; z < S; ++z) {
      out.projection[m * S + z] = z;
      for (std::size_t k = 0; k < fm.grid.cells; ++k) {
        const double* w = fm.weights(k, m, z);
        std::copy(w, w + A, out.policy.weights(k, m * S + z));
      }
    }
  return out;
}

}  // namespace ctjmdp
