#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctjmdp/error.hpp"
#include "ctjmdp/forward.hpp"
#include "ctjmdp/model.hpp"
#include "ctjmdp/policy.hpp"
#include "ctjmdp/simulator.hpp"

namespace ctjmdp::io {

using nlohmann::json;

/// Round-trip formatting used by every text output.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Parse, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Parse, "cannot write " + path);
  out << text;
}

namespace detail {

/// Identifiers may be strings or integers.
inline std::string id(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  throw Error(ErrorCode::Parse, "identifier must be a string or an integer, got " + j.dump());
}

inline double number(const json& j, const std::string& what) {
  if (!j.is_number()) throw Error(ErrorCode::Parse, what + " must be a number, got " + j.dump());
  return j.get<double>();
}

inline const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw Error(ErrorCode::Parse, std::string("missing key '") + key + "'");
  return j.at(key);
}

inline std::map<std::string, double> id_map(const json& j, const std::string& what) {
  if (!j.is_object()) throw Error(ErrorCode::Parse, what + " must be an object");
  std::map<std::string, double> out;
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = number(it.value(), what);
  return out;
}

inline std::map<std::string, std::map<std::string, double>> nested_map(const json& j, const std::string& what) {
  if (!j.is_object()) throw Error(ErrorCode::Parse, what + " must be an object");
  std::map<std::string, std::map<std::string, double>> out;
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = id_map(it.value(), what);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Models.

inline RawModel parse_raw_model(const json& j) {
  using namespace detail;
  RawModel raw;
  for (const json& s : field(j, "states")) raw.states.push_back(id(s));
  for (const json& a : field(j, "actions")) raw.actions.push_back(id(a));
  const json& feasible = field(j, "feasible");
  if (!feasible.is_object()) throw Error(ErrorCode::Parse, "'feasible' must be an object");
  for (auto it = feasible.begin(); it != feasible.end(); ++it) {
    auto& acts = raw.feasible[it.key()];
    for (const json& a : it.value()) acts.push_back(id(a));
  }
  for (const json& r : field(j, "rates")) {
    RawRate rr{id(field(r, "state")), id(field(r, "action")), id_map(field(r, "row"), "rate row"), 0.0};
    if (r.contains("escape")) rr.escape = number(r.at("escape"), "escape");
    raw.rates.push_back(std::move(rr));
  }
  if (j.contains("cost_rate")) raw.cost_rate = nested_map(j.at("cost_rate"), "cost_rate");
  if (j.contains("instant_costs"))
    for (const json& g : j.at("instant_costs"))
      raw.instant_costs.push_back({number(field(g, "time"), "instant time"), nested_map(field(g, "values"), "values")});
  if (j.contains("jump_costs")) raw.jump_costs = nested_map(j.at("jump_costs"), "jump_costs");
  if (j.contains("action_jump_costs")) {
    const json& ajc = j.at("action_jump_costs");
    for (auto it = ajc.begin(); it != ajc.end(); ++it) raw.action_jump_costs[it.key()] = nested_map(it.value(), "action_jump_costs");
  }
  return raw;
}

inline Model parse_model(const json& j) {
  try {
    return validate_model(parse_raw_model(j));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, e.what());
  }
}

inline Model load_model(const std::string& path) { return parse_model(read_json_file(path)); }

inline json model_to_json(const Model& m) {
  const RawModel raw = to_raw(m);
  json j;
  j["states"] = raw.states;
  j["actions"] = raw.actions;
  j["feasible"] = raw.feasible;
  j["rates"] = json::array();
  for (const RawRate& r : raw.rates) {
    json e{{"state", r.state}, {"action", r.action}, {"row", r.row}};
    if (r.escape != 0.0) e["escape"] = r.escape;
    j["rates"].push_back(e);
  }
  j["cost_rate"] = raw.cost_rate;
  j["instant_costs"] = json::array();
  for (const RawInstantCost& g : raw.instant_costs) j["instant_costs"].push_back({{"time", g.time}, {"values", g.values}});
  j["jump_costs"] = raw.jump_costs;
  if (!raw.action_jump_costs.empty()) j["action_jump_costs"] = raw.action_jump_costs;
  return j;
}

// ---------------------------------------------------------------------------
// Initial laws.

inline std::vector<double> parse_gamma(const Model& model, const json& j) {
  std::vector<double> gamma(model.num_states(), 0.0);
  for (const auto& [name, p] : detail::id_map(j, "initial law")) gamma[model.state_index(name)] = p;
  double s = 0.0;
  for (double g : gamma) {
    if (!(g >= 0.0)) throw Error(ErrorCode::BadDist, "negative initial probability");
    s += g;
  }
  if (std::abs(s - 1.0) > 1e-9) throw Error(ErrorCode::BadDist, "initial law sums to " + fmt(s));
  return gamma;
}

inline std::vector<double> load_gamma(const Model& model, const std::string& path) {
  return parse_gamma(model, read_json_file(path));
}

// ---------------------------------------------------------------------------
// Policies.

namespace detail {

inline TimeGrid parse_grid(const json& j) {
  if (!j.contains("grid")) return {0.0, 1.0, 1};
  const json& g = j.at("grid");
  const double h = number(field(g, "h"), "grid.h");
  const json& K = field(g, "K");
  if (!K.is_number_integer() || K.get<long long>() < 1) throw Error(ErrorCode::Parse, "grid.K must be a positive integer");
  if (!(h > 0.0)) throw Error(ErrorCode::Parse, "grid.h must be positive");
  const double origin = g.contains("origin") ? number(g.at("origin"), "grid.origin") : 0.0;
  return {origin, h, static_cast<std::size_t>(K.get<long long>())};
}

/// Cells an entry applies to: one cell, or all of them when absent.
inline std::pair<std::size_t, std::size_t> cell_range(const json& e, const TimeGrid& g) {
  if (!e.contains("cell")) return {0, g.cells};
  const json& c = e.at("cell");
  if (!c.is_number_integer() || c.get<long long>() < 0 || static_cast<std::size_t>(c.get<long long>()) >= g.cells)
    throw Error(ErrorCode::Parse, "cell index out of range: " + c.dump());
  const auto k = static_cast<std::size_t>(c.get<long long>());
  return {k, k + 1};
}

inline void fill_weights(const Model& model, const json& w, double* out) {
  std::fill(out, out + model.num_actions(), 0.0);
  if (w.is_string()) {
    out[model.action_index(w.get<std::string>())] = 1.0;
    return;
  }
  for (const auto& [a, p] : id_map(w, "weights")) out[model.action_index(a)] = p;
}

}  // namespace detail

/// {"type": "markov" | "finite_memory", "grid": {"h", "K"}, ...}
inline Policy parse_policy(const Model& model, const json& j) {
  using namespace detail;
  try {
    const std::string type = field(j, "type").get<std::string>();
    const TimeGrid grid = parse_grid(j);
    const std::size_t S = model.num_states();
    const std::size_t A = model.num_actions();
    if (type == "markov") {
      MarkovPolicyGrid p(grid, S, A);
      std::vector<char> seen(grid.cells * S, 0);
      for (const json& e : field(j, "table")) {
        const std::size_t z = model.state_index(id(field(e, "state")));
        const auto [k0, k1] = cell_range(e, grid);
        for (std::size_t k = k0; k < k1; ++k) {
          fill_weights(model, field(e, "weights"), p.weights(k, z));
          seen[k * S + z] = 1;
        }
      }
      for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i])
          throw Error(ErrorCode::IncompletePolicy,
                      "no action for state " + model.state_names()[i % S] + " on cell " + std::to_string(i / S));
      // optional point values: [{"time", "state", "weights"}], every state per time
      if (j.contains("epochs")) {
        std::map<double, std::vector<char>> epoch_seen;
        for (const json& e : j.at("epochs")) {
          const double t = number(field(e, "time"), "epoch time");
          const std::size_t z = model.state_index(id(field(e, "state")));
          auto it = std::find_if(p.epochs.begin(), p.epochs.end(), [&](const auto& x) { return x.time == t; });
          if (it == p.epochs.end()) {
            p.epochs.push_back({t, std::vector<double>(S * A, 0.0)});
            it = p.epochs.end() - 1;
            epoch_seen[t].assign(S, 0);
          }
          std::fill(&it->table[z * A], &it->table[z * A] + A, 0.0);
          fill_weights(model, field(e, "weights"), &it->table[z * A]);
          epoch_seen[t][z] = 1;
        }
        for (const auto& [t, seen_z] : epoch_seen)
          for (std::size_t z = 0; z < S; ++z)
            if (!seen_z[z])
              throw Error(ErrorCode::IncompletePolicy,
                          "no action for state " + model.state_names()[z] + " at epoch " + fmt(t));
      }
      validate_policy(model, p);
      return p;
    }
    if (type == "finite_memory") {
      std::vector<std::string> memory;
      for (const json& m : field(j, "memory_states")) memory.push_back(id(m));
      std::map<std::string, std::size_t> mid;
      for (std::size_t m = 0; m < memory.size(); ++m) mid[memory[m]] = m;
      auto memory_index = [&](const json& v) {
        auto it = mid.find(id(v));
        if (it == mid.end()) throw Error(ErrorCode::UnknownId, "undeclared memory state '" + id(v) + "'");
        return it->second;
      };
      const std::size_t M = memory.size();
      FiniteMemoryPolicy p(memory, j.contains("initial_memory") ? memory_index(j.at("initial_memory")) : 0, S, A, grid);
      // entries apply in order; a missing "from"/"to" matches every state
      if (j.contains("update"))
        for (const json& u : j.at("update")) {
          const std::size_t m = memory_index(field(u, "memory"));
          const std::size_t next = memory_index(field(u, "next"));
          for (std::size_t from = 0; from < S; ++from) {
            if (u.contains("from") && model.state_index(id(u.at("from"))) != from) continue;
            for (std::size_t to = 0; to < S; ++to) {
              if (to == from) continue;
              if (u.contains("to") && model.state_index(id(u.at("to"))) != to) continue;
              p.next_memory(m, from, to) = next;
            }
          }
        }
      std::vector<char> seen(grid.cells * M * S, 0);
      for (const json& e : field(j, "decision")) {
        const std::size_t z = model.state_index(id(field(e, "state")));
        const auto [k0, k1] = cell_range(e, grid);
        std::vector<std::size_t> ms;
        if (e.contains("memory")) ms.push_back(memory_index(e.at("memory")));
        else
          for (std::size_t m = 0; m < M; ++m) ms.push_back(m);
        for (std::size_t k = k0; k < k1; ++k)
          for (std::size_t m : ms) {
            fill_weights(model, field(e, "weights"), p.weights(k, m, z));
            seen[(k * M + m) * S + z] = 1;
          }
      }
      for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i])
          throw Error(ErrorCode::IncompletePolicy, "no decision for state " + model.state_names()[i % S] +
                                                       ", memory " + memory[(i / S) % M] + ", cell " +
                                                       std::to_string(i / (S * M)));
      validate_policy(model, p);
      return p;
    }
    throw Error(ErrorCode::Parse, "unknown policy type '" + type + "'");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, e.what());
  }
}

inline Policy load_policy(const Model& model, const std::string& path) {
  return parse_policy(model, read_json_file(path));
}

inline json policy_to_json(const Model& model, const MarkovPolicyGrid& p) {
  json j{{"type", "markov"}, {"grid", {{"h", p.grid.step}, {"K", p.grid.cells}}}};
  if (p.grid.origin != 0.0) j["grid"]["origin"] = p.grid.origin;
  json table = json::array();
  for (std::size_t k = 0; k < p.grid.cells; ++k)
    for (std::size_t z = 0; z < p.num_states; ++z) {
      json w = json::object();
      const double* row = p.weights(k, z);
      for (std::size_t a = 0; a < p.num_actions; ++a)
        if (row[a] != 0.0) w[model.action_names()[a]] = row[a];
      table.push_back({{"cell", k}, {"state", model.state_names()[z]}, {"weights", w}});
    }
  j["table"] = std::move(table);
  if (!p.epochs.empty()) {
    json epochs = json::array();
    for (const auto& e : p.epochs)
      for (std::size_t z = 0; z < p.num_states; ++z) {
        json w = json::object();
        for (std::size_t a = 0; a < p.num_actions; ++a)
          if (e.table[z * p.num_actions + a] != 0.0) w[model.action_names()[a]] = e.table[z * p.num_actions + a];
        epochs.push_back({{"time", e.time}, {"state", model.state_names()[z]}, {"weights", w}});
      }
    j["epochs"] = std::move(epochs);
  }
  return j;
}

// ---------------------------------------------------------------------------
// CSV writers.

inline std::string trajectories_csv(const Model& model, std::span<const Trajectory> trajectories) {
  std::ostringstream out;
  out << "trajectory_id,jump_index,time,state,status\n";
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const Trajectory& tr = trajectories[i];
    const std::string status(to_string(tr.status));
    out << i << ",0,0," << model.state_names()[tr.initial_state()] << "," << status << "\n";
    for (std::size_t n = 0; n < tr.jumps().size(); ++n)
      out << i << "," << n + 1 << "," << fmt(tr.jumps()[n].time) << "," << model.state_names()[tr.jumps()[n].state]
          << "," << status << "\n";
    if (tr.status != TrajectoryStatus::Completed)
      out << i << "," << tr.jumps().size() + 1 << "," << fmt(tr.end_time) << ","
          << (tr.escaped() ? "x_inf" : "") << "," << status << "\n";
  }
  return out.str();
}

/// time,state,action,probability,mass_defect; action is empty on state rows.
inline std::string curve_csv(const Model& model, const StateActionCurve& curve, bool state_action,
                             std::size_t stride = 1) {
  std::ostringstream out;
  out << "time,state,action,probability,mass_defect\n";
  const MarginalCurve states = curve.state_curve();
  for (std::size_t k = 0; k < curve.grid().points(); k += stride) {
    const std::string t = fmt(curve.grid().time(k));
    const std::string defect = fmt(mass_defect(states, k));
    for (std::size_t z = 0; z < model.num_states(); ++z) {
      out << t << "," << model.state_names()[z] << ",," << fmt(states(k, z)) << "," << defect << "\n";
      if (!state_action) continue;
      for (std::size_t a : model.feasible(z))
        out << t << "," << model.state_names()[z] << "," << model.action_names()[a] << ","
            << fmt(curve.point(k, z, a)) << "," << defect << "\n";
    }
  }
  return out.str();
}

inline std::string state_curve_csv(const Model& model, const MarginalCurve& curve) {
  std::ostringstream out;
  out << "time,state,action,probability,mass_defect\n";
  for (std::size_t k = 0; k < curve.grid.points(); ++k) {
    const std::string t = fmt(curve.grid.time(k));
    const std::string defect = fmt(mass_defect(curve, k));
    for (std::size_t z = 0; z < model.num_states(); ++z)
      out << t << "," << model.state_names()[z] << ",," << fmt(curve(k, z)) << "," << defect << "\n";
  }
  return out.str();
}

}  // namespace ctjmdp::io
