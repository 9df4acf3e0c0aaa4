#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ctjmdp/error.hpp"
#include "ctjmdp/forward.hpp"
#include "ctjmdp/model.hpp"
#include "ctjmdp/policy.hpp"
#include "ctjmdp/simulator.hpp"

namespace ctjmdp {

inline constexpr double kMassEpsilon = 1e-12;
inline constexpr std::size_t kMinCellCount = 25;

namespace detail {

inline void normalize_or_fallback(const Model& model, std::size_t z, double* w, bool populated) {
  const std::size_t A = model.num_actions();
  double sum = 0.0;
  for (std::size_t a = 0; a < A; ++a) sum += w[a];
  if (!populated || !(sum > 0.0)) {
    std::fill(w, w + A, 0.0);
    w[fallback_action(model, z)] = 1.0;
    return;
  }
  if (sum != 1.0)
    for (std::size_t a = 0; a < A; ++a) w[a] /= sum;
}

}  // namespace detail

/// Markov policy with the same state-action marginals as the curve's policy.
/// On each solver cell phi(a|z) is the ratio of the cell occupations
/// int P(t,z,a) dt / int P(t,z) dt; cells with occupation <= eps get the
/// fallback action.
inline MarkovPolicyGrid derive_markov_exact(const Model& model, const StateActionCurve& curve,
                                            double eps = kMassEpsilon) {
  const TimeGrid& grid = curve.grid();
  const std::size_t S = model.num_states();
  const std::size_t A = model.num_actions();
  if (curve.num_states() != S || curve.num_actions() != A)
    throw Error(ErrorCode::GridMismatch, "curve does not match the model");
  MarkovPolicyGrid phi(grid, S, A);
  std::vector<double> occ(S);
  for (std::size_t k = 0; k < grid.cells; ++k) {
    for (std::size_t z = 0; z < S; ++z) occ[z] = curve.cell_state(k, z);
    for (std::size_t s = 0; s < curve.num_slots(); ++s) {
      const std::size_t z = curve.slot_state(s);
      if (!(occ[z] > eps)) continue;
      const double share = 0.5 * (curve.slot_curve()(k, s) + curve.slot_curve()(k + 1, s)) / occ[z];
      const double* w = curve.weights(k, s);
      double* out = phi.weights(k, z);
      for (std::size_t a : model.feasible(z)) out[a] += share * w[a];
    }
    for (std::size_t z = 0; z < S; ++z) detail::normalize_or_fallback(model, z, phi.weights(k, z), occ[z] > eps);
  }
  // instant costs see the action law at their epoch, so phi takes the point
  // conditional there
  for (const InstantCost& g : model.costs().instants) {
    if (g.time < grid.origin || g.time > grid.end()) continue;
    MarkovPolicyGrid::Epoch e{g.time, std::vector<double>(S * A, 0.0)};
    std::fill(occ.begin(), occ.end(), 0.0);
    for (std::size_t s = 0; s < curve.num_slots(); ++s) occ[curve.slot_state(s)] += curve.slot_at(g.time, s);
    for (std::size_t s = 0; s < curve.num_slots(); ++s) {
      const std::size_t z = curve.slot_state(s);
      if (!(occ[z] > eps)) continue;
      const double share = curve.slot_at(g.time, s) / occ[z];
      const double* w = curve.weights_at(g.time, s);
      for (std::size_t a : model.feasible(z)) e.table[z * A + a] += share * w[a];
    }
    for (std::size_t z = 0; z < S; ++z) detail::normalize_or_fallback(model, z, &e.table[z * A], occ[z] > eps);
    phi.epochs.push_back(std::move(e));
  }
  return phi;
}

/// Conditional law of the action given the state at grid point k,
/// P(t_k,z,a) / P(t_k,z); empty when P(t_k,z) <= eps.
inline std::vector<double> point_conditional(const StateActionCurve& curve, std::size_t k, std::size_t z,
                                             double eps = kMassEpsilon) {
  const double pz = curve.state(k, z);
  if (!(pz > eps)) return {};
  std::vector<double> out(curve.num_actions());
  for (std::size_t a = 0; a < out.size(); ++a) out[a] = curve.point(k, z, a) / pz;
  return out;
}

struct MonteCarloMarkovization {
  MarkovPolicyGrid policy;
  std::vector<std::size_t> counts;   // [k * S + z], paths in z at t_k
  std::vector<double> se;            // [(k * S + z) * A + a]
  std::vector<char> fallback;        // [k * S + z]
};

/// Empirical phi-hat(a|z,t_k) from trajectories, evaluated at the left end
/// of each cell. Cells seen by fewer than min_count paths fall back.
inline MonteCarloMarkovization derive_markov_mc(const Simulator& sim, std::span<const Trajectory> trajectories,
                                                const TimeGrid& grid, std::size_t min_count = kMinCellCount) {
  const Model& model = sim.model();
  const std::size_t S = model.num_states();
  const std::size_t A = model.num_actions();
  const std::size_t K = grid.cells;
  MonteCarloMarkovization out{MarkovPolicyGrid(grid, S, A), std::vector<std::size_t>(K * S, 0),
                              std::vector<double>(K * S * A, 0.0), std::vector<char>(K * S, 0)};
  std::vector<double> sum2(K * S * A, 0.0);
  for (const Trajectory& tr : trajectories) {
    for (std::size_t k = 0; k < K; ++k) {
      const double t = grid.time(k);
      const auto z = tr.state_before(t);
      if (!z) continue;
      ++out.counts[k * S + *z];
      const RelaxedAction p = sim.action_at(tr, t);
      double* w = out.policy.weights(k, *z);
      for (std::size_t a = 0; a < A; ++a) {
        w[a] += p[a];
        sum2[(k * S + *z) * A + a] += p[a] * p[a];
      }
    }
  }
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t z = 0; z < S; ++z) {
      const std::size_t n = out.counts[k * S + z];
      double* w = out.policy.weights(k, z);
      const bool populated = n >= min_count;
      if (populated) {
        const double dn = static_cast<double>(n);
        for (std::size_t a = 0; a < A; ++a) {
          const double mean = w[a] / dn;
          const double var = std::max(0.0, sum2[(k * S + z) * A + a] / dn - mean * mean);
          out.se[(k * S + z) * A + a] = std::sqrt(var / dn);
          w[a] = mean;
        }
      }
      out.fallback[k * S + z] = !populated;
      detail::normalize_or_fallback(model, z, w, populated);
    }
  return out;
}

/// Sup-norm comparison of two exact state-action laws on the same grid.
/// State marginals are compared at the grid points, state-action marginals
/// as cell averages (the Markov policy is a cell average by construction).
struct DominanceReport {
  double violation_sup = 0.0;  // sup max(P_phi - P_pi, 0)
  double equality_sup = 0.0;   // sup |P_phi - P_pi|
  double state_equality_sup = 0.0;
  double action_equality_sup = 0.0;
  double equality_sup_nonexplosive = 0.0;  // sup over t <= last time with defect <= 1e-9
  std::vector<double> mass_defect;         // of P_phi per grid point
  double mass_defect_max = 0.0;
};

inline DominanceReport compare_marginals(const StateActionCurve& phi, const StateActionCurve& pi) {
  if (!(phi.grid() == pi.grid()) || phi.num_states() != pi.num_states() || phi.num_actions() != pi.num_actions())
    throw Error(ErrorCode::GridMismatch, "marginal curves live on different grids or index sets");
  const TimeGrid& grid = phi.grid();
  const std::size_t S = phi.num_states();
  const std::size_t A = phi.num_actions();
  DominanceReport r;
  r.mass_defect.resize(grid.points());
  const MarginalCurve states = phi.state_curve();
  bool nonexplosive = true;
  auto note = [&](double diff, double& component) {
    r.violation_sup = std::max(r.violation_sup, diff);
    component = std::max(component, std::abs(diff));
    if (nonexplosive) r.equality_sup_nonexplosive = std::max(r.equality_sup_nonexplosive, std::abs(diff));
  };
  for (std::size_t k = 0; k < grid.points(); ++k) {
    r.mass_defect[k] = mass_defect(states, k);
    r.mass_defect_max = std::max(r.mass_defect_max, r.mass_defect[k]);
    nonexplosive = nonexplosive && r.mass_defect[k] <= 1e-9;
    for (std::size_t z = 0; z < S; ++z) {
      note(phi.state(k, z) - pi.state(k, z), r.state_equality_sup);
      if (k == grid.cells) continue;
      for (std::size_t a = 0; a < A; ++a)
        note(phi.cell_average(k, z, a) - pi.cell_average(k, z, a), r.action_equality_sup);
    }
  }
  r.equality_sup = std::max(r.state_equality_sup, r.action_equality_sup);
  return r;
}

}  // namespace ctjmdp
