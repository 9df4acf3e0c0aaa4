#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ctjmdp/error.hpp"

namespace ctjmdp {

inline constexpr double kRowSumTolerance = 1e-9;
inline constexpr double kWeightTolerance = 1e-12;

/// Relaxed action: a probability vector over all actions of the owning
/// model. Mass must sit on the feasible set of the state it is used at.
struct RelaxedAction {
  std::vector<double> weights;

  static RelaxedAction point(std::size_t num_actions, std::size_t action) {
    RelaxedAction p{std::vector<double>(num_actions, 0.0)};
    p.weights[action] = 1.0;
    return p;
  }

  double operator[](std::size_t a) const { return weights[a]; }
  std::size_t size() const { return weights.size(); }

  friend bool operator==(const RelaxedAction&, const RelaxedAction&) = default;
};

struct Transition {
  std::size_t target;
  double rate;
};

/// Off-diagonal part of q(x,a,.) plus the escape rate to the cemetery.
/// `exit` is q(x,a) = sum of off-diagonal rates + escape.
struct RateRow {
  std::vector<Transition> out;
  double escape = 0.0;
  double exit = 0.0;
};

struct InstantCost {
  double time = 0.0;
  std::vector<double> values;  // indexed [x * num_actions + a]
};

struct CostStructure {
  std::vector<double> rate;              // c(x,a), [x * A + a]
  std::vector<InstantCost> instants;     // G_i at u_i, strictly increasing u_i
  std::vector<double> jump;              // C(x,y), [x * S + y]
  std::vector<double> action_jump;       // C(x,a,y), [(x * A + a) * S + y]; empty if absent

  bool has_action_jump_costs() const { return !action_jump.empty(); }
};

// ---------------------------------------------------------------------------
// Raw (identifier-based) description, as read from a model file.

struct RawRate {
  std::string state;
  std::string action;
  std::map<std::string, double> row;
  double escape = 0.0;
};

struct RawInstantCost {
  double time = 0.0;
  std::map<std::string, std::map<std::string, double>> values;  // state -> action -> G
};

struct RawModel {
  std::vector<std::string> states;
  std::vector<std::string> actions;
  std::map<std::string, std::vector<std::string>> feasible;
  std::vector<RawRate> rates;
  std::map<std::string, std::map<std::string, double>> cost_rate;     // state -> action -> c
  std::vector<RawInstantCost> instant_costs;
  std::map<std::string, std::map<std::string, double>> jump_costs;    // from -> to -> C
  // from -> action -> to -> C; only for the action-dependent counterexample path
  std::map<std::string, std::map<std::string, std::map<std::string, double>>> action_jump_costs;
};

class Model;
Model validate_model(const RawModel& raw);

/// Validated, immutable CTJMDP on finite state and action sets. All numerics
/// work on dense indices; names are kept for I/O.
class Model {
 public:
  std::size_t num_states() const { return states_.size(); }
  std::size_t num_actions() const { return actions_.size(); }
  const std::vector<std::string>& state_names() const { return states_; }
  const std::vector<std::string>& action_names() const { return actions_; }

  std::size_t state_index(const std::string& name) const { return lookup(state_ids_, name, "state"); }
  std::size_t action_index(const std::string& name) const { return lookup(action_ids_, name, "action"); }

  /// A(x), ascending action indices.
  const std::vector<std::size_t>& feasible(std::size_t x) const { return feasible_[x]; }
  bool is_feasible(std::size_t x, std::size_t a) const {
    return std::binary_search(feasible_[x].begin(), feasible_[x].end(), a);
  }

  const RateRow& row(std::size_t x, std::size_t a) const { return rows_[x * num_actions() + a]; }

  /// q(x,a,{y}); the diagonal entry is -q(x,a).
  double rate(std::size_t x, std::size_t a, std::size_t y) const {
    const RateRow& r = row(x, a);
    if (x == y) return -r.exit;
    for (const Transition& t : r.out)
      if (t.target == y) return t.rate;
    return 0.0;
  }

  double exit_rate(std::size_t x, std::size_t a) const { return row(x, a).exit; }

  /// q-bar(x) = max over A(x) of q(x,a).
  double max_exit_rate(std::size_t x) const { return max_exit_[x]; }

  double max_exit_rate() const {
    return max_exit_.empty() ? 0.0 : *std::max_element(max_exit_.begin(), max_exit_.end());
  }

  bool has_escape() const {
    return std::any_of(rows_.begin(), rows_.end(), [](const RateRow& r) { return r.escape > 0.0; });
  }

  const CostStructure& costs() const { return costs_; }
  void set_costs(CostStructure costs) { costs_ = std::move(costs); }

 private:
  friend Model validate_model(const RawModel& raw);

  static std::size_t lookup(const std::unordered_map<std::string, std::size_t>& ids,
                            const std::string& name, const char* kind) {
    auto it = ids.find(name);
    if (it == ids.end()) throw Error(ErrorCode::UnknownId, std::string("undeclared ") + kind + " '" + name + "'");
    return it->second;
  }

  std::vector<std::string> states_;
  std::vector<std::string> actions_;
  std::unordered_map<std::string, std::size_t> state_ids_;
  std::unordered_map<std::string, std::size_t> action_ids_;
  std::vector<std::vector<std::size_t>> feasible_;
  std::vector<RateRow> rows_;
  std::vector<double> max_exit_;
  CostStructure costs_;
};

namespace detail {

inline std::unordered_map<std::string, std::size_t> index_names(const std::vector<std::string>& names,
                                                                 const char* kind) {
  std::unordered_map<std::string, std::size_t> ids;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (!ids.emplace(names[i], i).second)
      throw Error(ErrorCode::Parse, std::string("duplicate ") + kind + " '" + names[i] + "'");
  return ids;
}

}  // namespace detail

/// Checks every model invariant and maps identifiers to dense indices.
/// Rows are renormalised so the diagonal is exactly minus the off-diagonal
/// mass (plus escape).
inline Model validate_model(const RawModel& raw) {
  Model m;
  if (raw.states.empty()) throw Error(ErrorCode::Parse, "model has no states");
  m.states_ = raw.states;
  m.actions_ = raw.actions;
  m.state_ids_ = detail::index_names(raw.states, "state");
  m.action_ids_ = detail::index_names(raw.actions, "action");
  const std::size_t S = m.num_states();
  const std::size_t A = m.num_actions();

  for (const auto& [name, acts] : raw.feasible) {
    m.state_index(name);
    for (const auto& a : acts) m.action_index(a);
  }
  m.feasible_.resize(S);
  for (std::size_t x = 0; x < S; ++x) {
    auto it = raw.feasible.find(raw.states[x]);
    if (it == raw.feasible.end() || it->second.empty())
      throw Error(ErrorCode::EmptyActions, "A(" + raw.states[x] + ") is empty");
    std::set<std::size_t> acts;
    for (const auto& a : it->second) acts.insert(m.action_index(a));
    m.feasible_[x].assign(acts.begin(), acts.end());
  }

  m.rows_.assign(S * A, RateRow{});
  std::vector<char> seen(S * A, 0);
  for (const RawRate& rr : raw.rates) {
    const std::size_t x = m.state_index(rr.state);
    const std::size_t a = m.action_index(rr.action);
    if (!m.is_feasible(x, a))
      throw Error(ErrorCode::UnknownId, "rate row for infeasible pair (" + rr.state + "," + rr.action + ")");
    if (seen[x * A + a]) throw Error(ErrorCode::Parse, "duplicate rate row (" + rr.state + "," + rr.action + ")");
    seen[x * A + a] = 1;

    RateRow row;
    std::optional<double> diagonal;
    std::vector<double> off_values;
    for (const auto& [yname, value] : rr.row) {
      const std::size_t y = m.state_index(yname);
      if (y == x) {
        diagonal = value;
        continue;
      }
      if (!std::isfinite(value) || value < 0.0)
        throw Error(ErrorCode::NegRate, "q(" + rr.state + "," + rr.action + "," + yname + ") = " + std::to_string(value));
      if (value > 0.0) row.out.push_back({y, value});
      off_values.push_back(value);
    }
    // Sum in ascending value order so any relabelling of the targets (memory
    // augmentation, extension) reproduces the exit rate bit-for-bit.
    std::sort(off_values.begin(), off_values.end());
    double off = 0.0;
    for (double v : off_values) off += v;
    if (!std::isfinite(rr.escape) || rr.escape < 0.0)
      throw Error(ErrorCode::NegRate, "escape rate of (" + rr.state + "," + rr.action + ") is negative");
    if (diagonal) {
      const double sum = off + rr.escape + *diagonal;
      if (!std::isfinite(sum) || std::abs(sum) > kRowSumTolerance * std::max(1.0, std::abs(*diagonal)))
        throw Error(ErrorCode::RowSum, "row (" + rr.state + "," + rr.action + ") sums to " + std::to_string(sum));
    }
    std::sort(row.out.begin(), row.out.end(), [](const Transition& l, const Transition& r) { return l.target < r.target; });
    row.escape = rr.escape;
    row.exit = off + rr.escape;
    m.rows_[x * A + a] = std::move(row);
  }

  m.max_exit_.assign(S, 0.0);
  for (std::size_t x = 0; x < S; ++x)
    for (std::size_t a : m.feasible_[x]) m.max_exit_[x] = std::max(m.max_exit_[x], m.rows_[x * A + a].exit);

  CostStructure costs;
  costs.rate.assign(S * A, 0.0);
  costs.jump.assign(S * S, 0.0);
  auto state_action_table = [&](const std::map<std::string, std::map<std::string, double>>& src) {
    std::vector<double> out(S * A, 0.0);
    for (const auto& [xs, acts] : src) {
      const std::size_t x = m.state_index(xs);
      for (const auto& [as, v] : acts) out[x * A + m.action_index(as)] = v;
    }
    return out;
  };
  costs.rate = state_action_table(raw.cost_rate);
  double last_time = -1.0;
  for (const RawInstantCost& g : raw.instant_costs) {
    if (!(g.time >= 0.0) || g.time <= last_time)
      throw Error(ErrorCode::Parse, "instant cost epochs must be nonnegative and strictly increasing");
    last_time = g.time;
    costs.instants.push_back({g.time, state_action_table(g.values)});
  }
  for (const auto& [xs, targets] : raw.jump_costs) {
    const std::size_t x = m.state_index(xs);
    for (const auto& [ys, v] : targets) {
      const std::size_t y = m.state_index(ys);
      if (x == y) throw Error(ErrorCode::Parse, "jump cost C(" + xs + "," + ys + ") on the diagonal");
      costs.jump[x * S + y] = v;
    }
  }
  if (!raw.action_jump_costs.empty()) {
    costs.action_jump.assign(S * A * S, 0.0);
    for (const auto& [xs, acts] : raw.action_jump_costs) {
      const std::size_t x = m.state_index(xs);
      for (const auto& [as, targets] : acts) {
        const std::size_t a = m.action_index(as);
        for (const auto& [ys, v] : targets) {
          const std::size_t y = m.state_index(ys);
          if (x == y) throw Error(ErrorCode::Parse, "jump cost on the diagonal");
          costs.action_jump[(x * A + a) * S + y] = v;
        }
      }
    }
  }
  m.costs_ = std::move(costs);
  return m;
}

/// Lossless conversion back to the identifier form (used for re-validation
/// and for writing model files).
inline RawModel to_raw(const Model& m) {
  RawModel raw;
  raw.states = m.state_names();
  raw.actions = m.action_names();
  const std::size_t S = m.num_states();
  const std::size_t A = m.num_actions();
  for (std::size_t x = 0; x < S; ++x) {
    auto& acts = raw.feasible[raw.states[x]];
    for (std::size_t a : m.feasible(x)) {
      acts.push_back(raw.actions[a]);
      const RateRow& row = m.row(x, a);
      RawRate rr{raw.states[x], raw.actions[a], {}, row.escape};
      rr.row[raw.states[x]] = -row.exit;
      for (const Transition& t : row.out) rr.row[raw.states[t.target]] = t.rate;
      raw.rates.push_back(std::move(rr));
    }
  }
  const CostStructure& c = m.costs();
  for (std::size_t x = 0; x < S; ++x)
    for (std::size_t a : m.feasible(x)) {
      if (c.rate[x * A + a] != 0.0) raw.cost_rate[raw.states[x]][raw.actions[a]] = c.rate[x * A + a];
      for (std::size_t y = 0; y < S && c.has_action_jump_costs(); ++y) {
        const double v = c.action_jump[(x * A + a) * S + y];
        if (v != 0.0) raw.action_jump_costs[raw.states[x]][raw.actions[a]][raw.states[y]] = v;
      }
    }
  for (const InstantCost& g : c.instants) {
    RawInstantCost rg{g.time, {}};
    for (std::size_t x = 0; x < S; ++x)
      for (std::size_t a : m.feasible(x))
        if (g.values[x * A + a] != 0.0) rg.values[raw.states[x]][raw.actions[a]] = g.values[x * A + a];
    raw.instant_costs.push_back(std::move(rg));
  }
  for (std::size_t x = 0; x < S; ++x)
    for (std::size_t y = 0; y < S; ++y)
      if (c.jump[x * S + y] != 0.0) raw.jump_costs[raw.states[x]][raw.states[y]] = c.jump[x * S + y];
  return raw;
}

// ---------------------------------------------------------------------------
// Rate mixing for relaxed actions.

/// Throws BAD_SUPPORT unless p is a probability vector carried by A(z).
inline void check_support(const Model& model, std::size_t z, const RelaxedAction& p,
                          ErrorCode code = ErrorCode::BadSupport) {
  if (p.size() != model.num_actions()) throw Error(code, "relaxed action has wrong dimension");
  double sum = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    const double w = p[a];
    if (!(w >= 0.0)) throw Error(code, "negative weight on action " + model.action_names()[a]);
    if (w > 0.0 && !model.is_feasible(z, a))
      throw Error(code, "mass on action " + model.action_names()[a] + " outside A(" + model.state_names()[z] + ")");
    sum += w;
  }
  if (std::abs(sum - 1.0) > kWeightTolerance) throw Error(code, "weights sum to " + std::to_string(sum));
}

/// q(z, p, Z) = sum_a p(a) q(z, a, Z). `in_set` is an indicator over states.
inline double mixed_rate(const Model& model, std::size_t z, const RelaxedAction& p,
                         std::span<const char> in_set) {
  check_support(model, z, p);
  double total = 0.0;
  for (std::size_t a : model.feasible(z)) {
    if (p[a] == 0.0) continue;
    const RateRow& row = model.row(z, a);
    double q = in_set[z] ? -row.exit : 0.0;
    for (const Transition& t : row.out)
      if (in_set[t.target]) q += t.rate;
    total += p[a] * q;
  }
  return total;
}

/// q(z, p) = sum_a p(a) q(z, a).
inline double mixed_exit_rate(const Model& model, std::size_t z, const RelaxedAction& p) {
  check_support(model, z, p);
  double total = 0.0;
  for (std::size_t a : model.feasible(z)) total += p[a] * model.exit_rate(z, a);
  return total;
}

inline double max_exit_rate(const Model& model, std::size_t z) { return model.max_exit_rate(z); }

/// Indicator vector for a list of states.
inline std::vector<char> state_set(const Model& model, std::initializer_list<std::size_t> members) {
  std::vector<char> s(model.num_states(), 0);
  for (std::size_t z : members) s.at(z) = 1;
  return s;
}

// ---------------------------------------------------------------------------
// Extension by an entry state that injects the initial law.

struct ExtendedModel {
  Model model;
  std::size_t entry_state;   // x'
  std::size_t entry_action;  // a': jump from x' with law gamma at rate 1
  std::size_t hold_action;   // a'': absorbing everywhere
};

inline std::string fresh_name(const std::vector<std::string>& taken, std::string base) {
  while (std::find(taken.begin(), taken.end(), base) != taken.end()) base += "'";
  return base;
}

/// Adds x' with actions a' (jump to X with law gamma at rate 1) and a''
/// (absorbing, feasible at every state). The input is kept as a sub-model.
inline ExtendedModel extend_with_initial_distribution(const Model& model, std::span<const double> gamma) {
  const std::size_t S = model.num_states();
  if (gamma.size() != S) throw Error(ErrorCode::BadDist, "initial law has wrong dimension");
  double sum = 0.0;
  for (double g : gamma) {
    if (!(g >= 0.0)) throw Error(ErrorCode::BadDist, "negative initial probability");
    sum += g;
  }
  if (std::abs(sum - 1.0) > kWeightTolerance) throw Error(ErrorCode::BadDist, "initial law sums to " + std::to_string(sum));

  RawModel raw = to_raw(model);
  const std::string entry = fresh_name(raw.states, "x'");
  const std::string go = fresh_name(raw.actions, "a'");
  raw.actions.push_back(go);
  const std::string hold = fresh_name(raw.actions, "a''");
  raw.actions.push_back(hold);
  for (auto& [name, acts] : raw.feasible) acts.push_back(hold);
  raw.states.push_back(entry);
  raw.feasible[entry] = {go, hold};
  RawRate inject{entry, go, {}, 0.0};
  for (std::size_t y = 0; y < S; ++y)
    if (gamma[y] > 0.0) inject.row[raw.states[y]] = gamma[y];
  raw.rates.push_back(std::move(inject));

  ExtendedModel out{validate_model(raw), 0, 0, 0};
  out.entry_state = out.model.state_index(entry);
  out.entry_action = out.model.action_index(go);
  out.hold_action = out.model.action_index(hold);
  return out;
}

}  // namespace ctjmdp
