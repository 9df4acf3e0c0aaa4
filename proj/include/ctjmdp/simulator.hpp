#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "ctjmdp/error.hpp"
#include "ctjmdp/model.hpp"
#include "ctjmdp/policy.hpp"
#include "ctjmdp/rng.hpp"

namespace ctjmdp {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

enum class TrajectoryStatus {
  Completed,       // reached the horizon
  TruncatedJumps,  // max_jumps reached before the horizon
  ExplodedProxy,   // left X through an escape rate (cemetery)
};

inline std::string_view to_string(TrajectoryStatus s) {
  switch (s) {
    case TrajectoryStatus::Completed: return "COMPLETED";
    case TrajectoryStatus::TruncatedJumps: return "TRUNCATED_JUMPS";
    case TrajectoryStatus::ExplodedProxy: return "EXPLODED_PROXY";
  }
  return "?";
}

/// Sampled path x0, (t1,x1), (t2,x2), ... The path is known on
/// [0, end_time); after end_time it is either past the horizon, cut off by
/// the jump cap, or at the cemetery.
struct Trajectory {
  History history;
  TrajectoryStatus status = TrajectoryStatus::Completed;
  double end_time = 0.0;

  const std::vector<Jump>& jumps() const { return history.jumps; }
  std::size_t initial_state() const { return history.initial_state; }
  bool escaped() const { return status == TrajectoryStatus::ExplodedProxy; }

  /// Left-limit state at t; nullopt once the path is no longer known.
  std::optional<std::size_t> state_before(double t) const {
    if (t > end_time || (t == end_time && status != TrajectoryStatus::Completed && t > 0.0)) return std::nullopt;
    std::size_t z = history.initial_state;
    for (const Jump& j : history.jumps) {
      if (j.time >= t) break;
      z = j.state;
    }
    return z;
  }
};

struct SimConfig {
  double horizon = 1.0;
  std::size_t max_jumps = 1000000;
  std::size_t trajectories = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// --threads takes precedence; CTJMDP_THREADS is the fallback; default 1.
inline unsigned resolve_threads(int requested) {
  if (requested > 0) return static_cast<unsigned>(requested);
  if (const char* env = std::getenv("CTJMDP_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return 1;
}

/// Runs fn(i) for i in [0, n) on `threads` workers with a static partition.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += threads) fn(i);
    });
  for (auto& t : pool) t.join();
}

/// Grid-based policy seen as a Markov table over "slots": the state itself
/// for Markov policies, (z, m) at m * S + z for finite-memory policies.
struct SlotPolicy {
  MarkovPolicyGrid table;
  std::size_t num_states = 0;
  std::size_t num_memory = 1;
  std::size_t initial_memory = 0;
  const FiniteMemoryPolicy* memory = nullptr;

  std::size_t slot(std::size_t z, std::size_t m) const { return m * num_states + z; }
  std::size_t state_of(std::size_t s) const { return s % num_states; }
  std::size_t memory_of(std::size_t s) const { return s / num_states; }

  std::size_t after_jump(std::size_t s, std::size_t to) const {
    if (!memory) return to;
    const std::size_t m = memory->next_memory(memory_of(s), state_of(s), to);
    return slot(to, m);
  }
  std::size_t start(std::size_t z) const { return slot(z, initial_memory); }
};

inline std::optional<SlotPolicy> slot_policy(const Model& model, const Policy& policy) {
  if (const auto* mp = std::get_if<MarkovPolicyGrid>(&policy)) return SlotPolicy{*mp, model.num_states(), 1, 0, nullptr};
  if (const auto* fm = std::get_if<FiniteMemoryPolicy>(&policy)) {
    SlotPolicy sp{MarkovPolicyGrid(fm->grid, model.num_states() * fm->num_memory(), model.num_actions()),
                  model.num_states(), fm->num_memory(), fm->initial_memory, fm};
    for (std::size_t k = 0; k < fm->grid.cells; ++k)
      for (std::size_t m = 0; m < fm->num_memory(); ++m)
        for (std::size_t z = 0; z < model.num_states(); ++z) {
          const double* w = fm->weights(k, m, z);
          std::copy(w, w + model.num_actions(), sp.table.weights(k, sp.slot(z, m)));
        }
    return sp;
  }
  return std::nullopt;
}

/// Outcome of one sojourn draw.
struct SojournDraw {
  double time = kInfinity;  // absolute jump time; infinity if censored
  std::size_t cell = 0;     // policy cell holding the jump (grid policies)
  RelaxedAction action;     // relaxed action in force at the jump
};

/// Event-driven exact sampler for the jump process under a policy.
/// Grid policies: piecewise-exponential inversion of the cumulative exit
/// intensity. General policies: thinning against q-bar(z).
class Simulator {
 public:
  Simulator(const Model& model, Policy policy) : model_(&model), policy_(std::move(policy)) {
    validate_policy(model, policy_);
    slots_ = slot_policy(model, policy_);
    if (slots_) build_intensity();
  }

  const Model& model() const { return *model_; }
  const Policy& policy() const { return policy_; }
  const SlotPolicy* slots() const { return slots_ ? &*slots_ : nullptr; }

  /// Exit rate of a slot on a policy cell.
  double slot_exit(std::size_t s, std::size_t cell) const { return exit_[cell * num_slots() + s]; }
  std::size_t num_slots() const { return slots_ ? slots_->table.num_states : 0; }

  /// Cumulative exit intensity of slot s from the policy origin to t.
  double cumulative_intensity(std::size_t s, double t) const {
    const TimeGrid& g = slots_->table.grid;
    const std::size_t j = g.cell_of(t);
    const double tj = g.time(j);
    return cumulative_[j * num_slots() + s] + std::max(0.0, t - tj) * slot_exit(s, j);
  }

  /// Draws the next jump after t0 for a path in slot s (grid policies) or
  /// with the given history (general policies). Returns time = inf when no
  /// jump happens before `horizon`.
  SojournDraw sample_sojourn(CounterRng& rng, const History& history, std::size_t slot, double t0,
                             double horizon) const {
    SojournDraw d;
    const std::size_t z = history.current_state();
    if (slots_) {
      const TimeGrid& g = slots_->table.grid;
      const std::size_t S = num_slots();
      const double target = cumulative_intensity(slot, t0) + rng.exponential();
      const std::size_t K = g.cells;
      double tau;
      std::size_t cell;
      if (target < cumulative_[K * S + slot]) {
        // first grid point with cumulative intensity above the target
        std::size_t lo = g.cell_of(t0) + 1, hi = K;
        while (lo < hi) {
          const std::size_t mid = (lo + hi) / 2;
          if (cumulative_[mid * S + slot] > target) hi = mid;
          else lo = mid + 1;
        }
        cell = lo - 1;
        tau = std::max(t0, g.time(cell) + (target - cumulative_[cell * S + slot]) / slot_exit(slot, cell));
      } else {
        cell = K - 1;
        const double rate = slot_exit(slot, cell);
        if (rate <= 0.0) return d;
        tau = std::max(t0, g.end() + (target - cumulative_[K * S + slot]) / rate);
      }
      if (tau > horizon) return d;
      d.time = tau;
      d.cell = cell;
      const double* w = slots_->table.weights(cell, slot);
      d.action = RelaxedAction{std::vector<double>(w, w + model_->num_actions())};
      return d;
    }
    const auto& general = std::get<GeneralPolicy>(policy_);
    const double envelope = model_->max_exit_rate(z);
    if (envelope <= 0.0) return d;
    double t = t0;
    for (;;) {
      t += rng.exponential() / envelope;
      if (t > horizon) return d;
      RelaxedAction p = general.decide(history, t);
      const double rate = mixed_exit_rate(*model_, z, p);
      if (rng.uniform() * envelope < rate) {
        d.time = t;
        d.action = std::move(p);
        return d;
      }
    }
  }

  /// Target of a jump from z under relaxed action p; nullopt = escape to the
  /// cemetery. ZERO_EXIT if p does not leave z.
  std::optional<std::size_t> sample_destination(CounterRng& rng, std::size_t z, const RelaxedAction& p) const {
    return sample_destination(*model_, rng, z, p);
  }

  static std::optional<std::size_t> sample_destination(const Model& model, CounterRng& rng, std::size_t z,
                                                       const RelaxedAction& p) {
    const double total = mixed_exit_rate(model, z, p);
    if (!(total > 0.0)) throw Error(ErrorCode::ZeroExit, "no exit from state " + model.state_names()[z]);
    double u = rng.uniform() * total;
    std::optional<std::size_t> last;
    for (std::size_t y = 0; y < model.num_states(); ++y) {
      if (y == z) continue;
      double r = 0.0;
      for (std::size_t a : model.feasible(z))
        if (p[a] > 0.0) r += p[a] * model.rate(z, a, y);
      if (r <= 0.0) continue;
      if (u < r) return y;
      u -= r;
      last = y;
    }
    double escape = 0.0;
    for (std::size_t a : model.feasible(z)) escape += p[a] * model.row(z, a).escape;
    if (escape > 0.0) return std::nullopt;
    return last;  // rounding left u marginally above the last bucket
  }

  /// One trajectory; a pure function of (gamma, cfg.seed, index).
  Trajectory simulate_one(std::span<const double> gamma, const SimConfig& cfg, std::size_t index) const {
    CounterRng rng(cfg.seed, index);
    Trajectory tr;
    double u = rng.uniform();
    std::size_t x0 = gamma.size() - 1;
    for (std::size_t z = 0; z < gamma.size(); ++z) {
      if (u < gamma[z]) {
        x0 = z;
        break;
      }
      u -= gamma[z];
    }
    while (gamma[x0] == 0.0 && x0 > 0) --x0;
    tr.history.initial_state = x0;
    std::size_t slot = slots_ ? slots_->start(x0) : 0;
    double t = 0.0;
    for (;;) {
      SojournDraw d = sample_sojourn(rng, tr.history, slot, t, cfg.horizon);
      if (!std::isfinite(d.time)) {
        tr.status = TrajectoryStatus::Completed;
        tr.end_time = cfg.horizon;
        return tr;
      }
      if (tr.history.jumps.size() >= cfg.max_jumps) {
        tr.status = TrajectoryStatus::TruncatedJumps;
        tr.end_time = d.time;
        return tr;
      }
      const std::size_t z = tr.history.current_state();
      const auto y = sample_destination(rng, z, d.action);
      if (!y) {
        tr.status = TrajectoryStatus::ExplodedProxy;
        tr.end_time = d.time;
        return tr;
      }
      tr.history.jumps.push_back({d.time, *y});
      if (slots_) slot = slots_->after_jump(slot, *y);
      t = d.time;
    }
  }

  std::vector<Trajectory> simulate(std::span<const double> gamma, const SimConfig& cfg) const {
    if (!(cfg.horizon > 0.0) || cfg.max_jumps < 1 || cfg.trajectories < 1)
      throw Error(ErrorCode::Parse, "simulation needs horizon > 0, max_jumps >= 1, trajectories >= 1");
    if (gamma.size() != model_->num_states()) throw Error(ErrorCode::BadDist, "initial law has wrong dimension");
    double s = 0.0;
    for (double g : gamma) {
      if (!(g >= 0.0)) throw Error(ErrorCode::BadDist, "negative initial probability");
      s += g;
    }
    if (std::abs(s - 1.0) > 1e-9) throw Error(ErrorCode::BadDist, "initial law sums to " + std::to_string(s));
    std::vector<Trajectory> out(cfg.trajectories);
    parallel_for(cfg.trajectories, cfg.threads, [&](std::size_t i) { out[i] = simulate_one(gamma, cfg, i); });
    return out;
  }

  /// Relaxed action in force at time t along a trajectory (left limit).
  RelaxedAction action_at(const Trajectory& tr, double t) const {
    const double* w = nullptr;
    if (slots_) {
      std::size_t slot = slots_->start(tr.initial_state());
      for (const Jump& j : tr.jumps()) {
        if (j.time >= t) break;
        slot = slots_->after_jump(slot, j.state);
      }
      w = slots_->table.weights_at(t, slot);
      return RelaxedAction{std::vector<double>(w, w + model_->num_actions())};
    }
    History prefix{tr.initial_state(), {}};
    for (const Jump& j : tr.jumps()) {
      if (j.time >= t) break;
      prefix.jumps.push_back(j);
    }
    return std::get<GeneralPolicy>(policy_).decide(prefix, t);
  }

 private:
  void build_intensity() {
    const MarkovPolicyGrid& tab = slots_->table;
    const std::size_t S = num_slots();
    const std::size_t K = tab.grid.cells;
    exit_.assign(K * S, 0.0);
    cumulative_.assign((K + 1) * S, 0.0);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t z = slots_->state_of(s);
        const double* w = tab.weights(k, s);
        double q = 0.0;
        for (std::size_t a : model_->feasible(z)) q += w[a] * model_->exit_rate(z, a);
        exit_[k * S + s] = q;
        cumulative_[(k + 1) * S + s] = cumulative_[k * S + s] + tab.grid.step * q;
      }
  }

  const Model* model_;
  Policy policy_;
  std::optional<SlotPolicy> slots_;
  std::vector<double> exit_;        // [cell * slots + s]
  std::vector<double> cumulative_;  // [point * slots + s]
};

// ---------------------------------------------------------------------------
// Path statistics.

/// Jumps with destination in Z during [0, t].
inline std::size_t count_into(const Trajectory& tr, std::span<const char> in_set, double t) {
  std::size_t n = 0;
  for (const Jump& j : tr.jumps())
    if (j.time <= t && in_set[j.state]) ++n;
  return n;
}

/// Jumps with source in Z during [0, t]; an escape counts as a jump out.
inline std::size_t count_out_of(const Trajectory& tr, std::span<const char> in_set, double t) {
  std::size_t n = 0;
  std::size_t from = tr.initial_state();
  for (const Jump& j : tr.jumps()) {
    if (j.time > t) return n;
    if (in_set[from]) ++n;
    from = j.state;
  }
  if (tr.escaped() && tr.end_time <= t && in_set[from]) ++n;
  return n;
}

namespace detail {

/// Calls fn(t_begin, t_end, z, action) over [0, t] on pieces where the state
/// and the relaxed action are constant. General policies are sampled at
/// piece midpoints on a sub-grid of width `quad_step`.
template <class Fn>
void for_each_piece(const Simulator& sim, const Trajectory& tr, double t, Fn&& fn, double quad_step = 1e-3) {
  const Model& model = sim.model();
  const std::size_t A = model.num_actions();
  const double stop = std::min(t, tr.end_time);
  const SlotPolicy* sp = sim.slots();
  std::size_t z = tr.initial_state();
  std::size_t slot = sp ? sp->start(z) : 0;
  double begin = 0.0;
  History prefix{z, {}};
  std::size_t next = 0;
  while (begin < stop) {
    const double end = next < tr.jumps().size() ? std::min(stop, tr.jumps()[next].time) : stop;
    if (sp) {
      const TimeGrid& g = sp->table.grid;
      double a = begin;
      while (a < end) {
        const std::size_t cell = g.cell_of(a);
        const double b = cell + 1 < g.cells ? std::min(end, g.time(cell + 1)) : end;
        const double* w = sp->table.weights(cell, slot);
        fn(a, std::max(a, b), z, std::span<const double>(w, A));
        if (b <= a) break;
        a = b;
      }
    } else {
      const auto& general = std::get<GeneralPolicy>(sim.policy());
      const auto pieces = static_cast<std::size_t>(std::max(1.0, std::ceil((end - begin) / quad_step)));
      const double width = (end - begin) / static_cast<double>(pieces);
      for (std::size_t i = 0; i < pieces; ++i) {
        const double a = begin + width * static_cast<double>(i);
        const RelaxedAction p = general.decide(prefix, a + 0.5 * width);
        fn(a, a + width, z, std::span<const double>(p.weights));
      }
    }
    if (next >= tr.jumps().size() || tr.jumps()[next].time > stop) break;
    const Jump& j = tr.jumps()[next++];
    if (sp) slot = sp->after_jump(slot, j.state);
    z = j.state;
    prefix.jumps.push_back(j);
    begin = j.time;
  }
}

}  // namespace detail

/// int_0^t q(xi_s, pi_s, Z \ {xi_s}) ds along the path.
inline double integrated_intensity_into(const Simulator& sim, const Trajectory& tr, std::span<const char> in_set,
                                        double t) {
  const Model& model = sim.model();
  double total = 0.0;
  detail::for_each_piece(sim, tr, t, [&](double a, double b, std::size_t z, std::span<const double> w) {
    double r = 0.0;
    for (std::size_t act : model.feasible(z)) {
      if (w[act] == 0.0) continue;
      for (const Transition& tr2 : model.row(z, act).out)
        if (in_set[tr2.target]) r += w[act] * tr2.rate;
    }
    total += r * (b - a);
  });
  return total;
}

/// int_0^t q(xi_s, pi_s) 1{xi_s in Z} ds along the path.
inline double integrated_intensity_out_of(const Simulator& sim, const Trajectory& tr, std::span<const char> in_set,
                                          double t) {
  const Model& model = sim.model();
  double total = 0.0;
  detail::for_each_piece(sim, tr, t, [&](double a, double b, std::size_t z, std::span<const double> w) {
    if (!in_set[z]) return;
    double r = 0.0;
    for (std::size_t act : model.feasible(z)) r += w[act] * model.exit_rate(z, act);
    total += r * (b - a);
  });
  return total;
}

/// Empirical state(-action) marginals with standard errors.
struct EmpiricalMarginals {
  TimeGrid grid;
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::size_t samples = 0;
  std::vector<double> state_prob, state_se;    // [k * S + z]
  std::vector<double> action_prob, action_se;  // [(k * S + z) * A + a]
  std::vector<double> exploded;                // escaped before t_k
  std::vector<double> unknown;                 // cut off by the jump cap before t_k

  double prob(std::size_t k, std::size_t z) const { return state_prob[k * num_states + z]; }
  double se(std::size_t k, std::size_t z) const { return state_se[k * num_states + z]; }
  double prob(std::size_t k, std::size_t z, std::size_t a) const {
    return action_prob[(k * num_states + z) * num_actions + a];
  }
  double se(std::size_t k, std::size_t z, std::size_t a) const {
    return action_se[(k * num_states + z) * num_actions + a];
  }
};

/// P-hat(t_k, z, a) = mean of 1{xi_{t_k-} = z} pi(a | history, t_k).
inline EmpiricalMarginals estimate_marginals(const Simulator& sim, std::span<const Trajectory> trajectories,
                                             const TimeGrid& grid) {
  const std::size_t S = sim.model().num_states();
  const std::size_t A = sim.model().num_actions();
  const std::size_t P = grid.points();
  EmpiricalMarginals em{grid, S, A, trajectories.size(), {}, {}, {}, {}, {}, {}};
  std::vector<double> s1(P * S, 0.0), a1(P * S * A, 0.0), a2(P * S * A, 0.0);
  em.exploded.assign(P, 0.0);
  em.unknown.assign(P, 0.0);
  for (const Trajectory& tr : trajectories) {
    for (std::size_t k = 0; k < P; ++k) {
      const double t = grid.time(k);
      const auto z = tr.state_before(t);
      if (!z) {
        (tr.escaped() ? em.exploded : em.unknown)[k] += 1.0;
        continue;
      }
      s1[k * S + *z] += 1.0;
      const RelaxedAction p = sim.action_at(tr, t);
      for (std::size_t a = 0; a < A; ++a) {
        a1[(k * S + *z) * A + a] += p[a];
        a2[(k * S + *z) * A + a] += p[a] * p[a];
      }
    }
  }
  const double n = static_cast<double>(trajectories.size());
  em.state_prob.resize(P * S);
  em.state_se.resize(P * S);
  em.action_prob.resize(P * S * A);
  em.action_se.resize(P * S * A);
  for (std::size_t i = 0; i < P * S; ++i) {
    const double p = s1[i] / n;
    em.state_prob[i] = p;
    em.state_se[i] = std::sqrt(std::max(0.0, p * (1.0 - p)) / n);
  }
  for (std::size_t i = 0; i < P * S * A; ++i) {
    const double mean = a1[i] / n;
    em.action_prob[i] = mean;
    em.action_se[i] = std::sqrt(std::max(0.0, a2[i] / n - mean * mean) / n);
  }
  for (std::size_t k = 0; k < P; ++k) {
    em.exploded[k] /= n;
    em.unknown[k] /= n;
  }
  return em;
}

}  // namespace ctjmdp
