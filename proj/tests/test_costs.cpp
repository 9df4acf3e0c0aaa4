#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ctjmdp/costs.hpp"
#include "ctjmdp/experiments.hpp"
#include "ctjmdp/markovize.hpp"

using namespace ctjmdp;

namespace {

MarkovPolicyGrid constant(const Model& m, std::size_t a = 0) {
  return MarkovPolicyGrid::deterministic(m, std::vector<std::size_t>(m.num_states(), a));
}

Model with_unit_cost(Model m) {
  CostStructure c = m.costs();
  for (std::size_t z = 0; z < m.num_states(); ++z)
    for (std::size_t a : m.feasible(z)) c.rate[z * m.num_actions() + a] = 1.0;
  std::fill(c.jump.begin(), c.jump.end(), 0.0);
  m.set_costs(c);
  return m;
}

Model zero_costs(Model m) {
  CostStructure c;
  c.rate.assign(m.num_states() * m.num_actions(), 0.0);
  c.jump.assign(m.num_states() * m.num_states(), 0.0);
  m.set_costs(c);
  return m;
}

Model absorbing_with_terminal(double T, double G) {
  RawModel raw;
  raw.states = {"x"};
  raw.actions = {"a"};
  raw.feasible = {{"x", {"a"}}};
  raw.rates = {{"x", "a", {}, 0.0}};
  raw.instant_costs = {{T, {{"x", {{"a", G}}}}}};
  return validate_model(raw);
}

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::Parse;
}

}  // namespace

TEST(FiniteHorizon, ZeroCosts) {
  const Model m = zero_costs(experiments::switching_model(false));
  const StateActionCurve c = markov_marginals(m, constant(m), std::vector<double>{1.0, 0.0}, {0.0, 0.01, 100});
  EXPECT_EQ(finite_horizon_cost(m, c, 0.5, 1.0).value, 0.0);
}

TEST(FiniteHorizon, UnitCostRate) {
  const Model m = with_unit_cost(experiments::switching_model(false));
  const StateActionCurve c = markov_marginals(m, constant(m), std::vector<double>{1.0, 0.0}, {0.0, 0.01, 300});
  for (double alpha : {0.0, 0.5, 2.0}) {
    const DiscountedCostResult r = finite_horizon_cost(m, c, alpha, 2.5);
    const double exact = alpha == 0.0 ? 2.5 : (1.0 - std::exp(-alpha * 2.5)) / alpha;
    EXPECT_NEAR(r.value, exact, std::max(r.error, 1e-12));
    EXPECT_EQ(r.method, CostMethod::ExactCurve);
  }
}

TEST(FiniteHorizon, TerminalInstantCost) {
  const Model m = absorbing_with_terminal(2.0, 3.0);
  const StateActionCurve c = markov_marginals(m, constant(m), std::vector<double>{1.0}, {0.0, 0.1, 20});
  EXPECT_NEAR(finite_horizon_cost(m, c, 0.7, 2.0).value, std::exp(-1.4) * 3.0, 1e-14);
  // instants after T are not charged
  EXPECT_EQ(finite_horizon_cost(m, c, 0.7, 1.9).value, 0.0);
}

TEST(FiniteHorizon, OffGridInstantInterpolates) {
  const Model base = experiments::flip_model(1.0, 1.0);
  RawModel raw = to_raw(base);
  raw.cost_rate.clear();
  raw.instant_costs = {{0.333, {{"1", {{"go", 1.0}}}}}};
  const Model m = validate_model(raw);
  const StateActionCurve c = markov_marginals(m, constant(m), experiments::point_mass(m, "1"), {0.0, 0.001, 1000});
  EXPECT_NEAR(finite_horizon_cost(m, c, 0.0, 1.0).value, 0.5 * (1.0 + std::exp(-2.0 * 0.333)), 1e-6);
}

TEST(InfiniteHorizon, UnitCostGeometric) {
  const Model m = with_unit_cost(experiments::switching_model(false));
  const double eps = 1e-8;
  const DiscountedCostResult r = infinite_horizon_cost(m, Policy(constant(m)), std::vector<double>{0.5, 0.5}, 1.0,
                                                       eps, 0.01);
  EXPECT_NEAR(r.value, 1.0, r.error);
  EXPECT_NEAR(r.truncation, std::log(1.0 / eps), 1e-9);
  const Model z = zero_costs(m);
  EXPECT_EQ(infinite_horizon_cost(z, Policy(constant(z)), std::vector<double>{0.5, 0.5}, 1.0, eps, 0.01).value, 0.0);
  EXPECT_EQ(code_of([&] { truncation_horizon(m, 0.0, eps); }), ErrorCode::UndefinedValue);
}

TEST(InfiniteHorizon, MatchesResolvent) {
  const experiments::BatteryEntry e = experiments::random_entry(20240601, 4);
  // instants are outside the resolvent, drop them
  Model m = e.model;
  CostStructure c = m.costs();
  c.instants.clear();
  m.set_costs(c);
  const double exact = resolvent_value(m, e.markov, e.gamma, 1.0);
  const DiscountedCostResult r = infinite_horizon_cost(m, Policy(e.markov), e.gamma, 1.0, 1e-9, 0.00125);
  EXPECT_NEAR(r.value, exact, r.error);
  EXPECT_NEAR(r.value, exact, 1e-6);
}

TEST(JumpCosts, CostRates) {
  const Model m = experiments::switching_model(false);
  EXPECT_DOUBLE_EQ(jump_cost_rate(m, 1, RelaxedAction{{1.0, 0.0}}), 2.0);
  EXPECT_DOUBLE_EQ(jump_cost_rate(m, 0, RelaxedAction{{1.0, 0.0}}), 0.0);
  const Model dep = experiments::switching_model(true);
  const std::vector<double> c{0.0, 1.0};
  EXPECT_DOUBLE_EQ(expected_jump_cost_rate(dep, 1, c), 2.0);
  const std::vector<double> b{1.0, 0.0};
  EXPECT_DOUBLE_EQ(expected_jump_cost_rate(dep, 1, b), 2.0);
  // mixing: C(2,p,1) = 1.5, q(2,p,1) = 1.5
  const std::vector<double> half{0.5, 0.5};
  EXPECT_DOUBLE_EQ(expected_jump_cost_rate(dep, 1, half), 2.25);
  const Model z = zero_costs(m);
  EXPECT_EQ(jump_cost_rate(z, 1, RelaxedAction{{0.5, 0.5}}), 0.0);
}

TEST(JumpCosts, Transform) {
  const Model m = experiments::switching_model(false);
  const auto c = transform_jump_costs(m);
  EXPECT_EQ(c, (std::vector<double>{0.0, 0.0, 2.0, 1.0}));
  const auto zero = transform_jump_costs(zero_costs(m));
  for (double v : zero) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(code_of([] { transform_jump_costs(experiments::switching_model(true)); }),
            ErrorCode::ActionDependentJumpCost);
  const Model dep = experiments::switching_model(true);
  const StateActionCurve curve = markov_marginals(dep, constant(dep), std::vector<double>{1.0, 0.0}, {0.0, 0.05, 20});
  EXPECT_EQ(code_of([&] { finite_horizon_cost(dep, curve, 1.0, 1.0); }), ErrorCode::ActionDependentJumpCost);
  EXPECT_NO_THROW(finite_horizon_cost(dep, curve, 1.0, 1.0, {true, true}));
}

TEST(MonteCarlo, ZeroAndUnitCosts) {
  const Model z = zero_costs(experiments::switching_model(false));
  const Simulator zs(z, experiments::parity_policy(z));
  const auto zp = zs.simulate(std::vector<double>{0.5, 0.5}, {3.0, 1000000, 200, 1, 1});
  const DiscountedCostResult r0 = mc_discounted_cost(zs, zp, 1.0, 3.0);
  EXPECT_EQ(r0.value, 0.0);
  EXPECT_EQ(r0.error, 0.0);

  const Model u = with_unit_cost(experiments::switching_model(false));
  const Simulator us(u, experiments::parity_policy(u));
  const auto up = us.simulate(std::vector<double>{0.5, 0.5}, {3.0, 1000000, 200, 1, 1});
  const DiscountedCostResult r1 = mc_discounted_cost(us, up, 1.0, 3.0);
  EXPECT_NEAR(r1.value, 1.0 - std::exp(-3.0), 1e-12);
  EXPECT_LT(r1.error, 1e-12);
  EXPECT_EQ(r1.method, CostMethod::MonteCarlo);
}

TEST(MonteCarlo, GeneralPolicyMatchesGridPolicy) {
  const Model m = experiments::switching_model(false);
  const FiniteMemoryPolicy parity = experiments::parity_policy(m);
  const GeneralPolicy general{[parity](const History& h, double) {
    const double* w = parity.weights(0, parity.memory_after(h), h.current_state());
    return RelaxedAction{std::vector<double>(w, w + 2)};
  }};
  const std::vector<double> gamma{0.0, 1.0};
  const Simulator gs(m, general), ps(m, parity);
  const auto gp = gs.simulate(gamma, {3.0, 1000000, 4000, 5, 2});
  const auto pp = ps.simulate(gamma, {3.0, 1000000, 4000, 6, 2});
  const auto a = mc_discounted_cost(gs, gp, 1.0, 3.0);
  const auto b = mc_discounted_cost(ps, pp, 1.0, 3.0);
  EXPECT_NEAR(a.value, b.value, 4 * std::hypot(a.error, b.error));
}

TEST(AverageCost, UnitAndZeroCosts) {
  const Model u = with_unit_cost(experiments::switching_model(false));
  const std::vector<double> gamma{1.0, 0.0};
  const auto abel = average_cost_abel([&](double a) { return resolvent_value(u, constant(u), gamma, a); });
  EXPECT_NEAR(abel.estimate, 1.0, 1e-12);
  const TimeGrid grid = TimeGrid::covering(0.01, 256.0);
  const StateActionCurve c = markov_marginals(u, constant(u), gamma, grid);
  const auto ces = average_cost_cesaro([&](double T) { return finite_horizon_cost(u, c, 0.0, T).value; });
  EXPECT_NEAR(ces.estimate, 1.0, 1e-9);
  const Model z = zero_costs(u);
  EXPECT_EQ(average_cost_abel([&](double a) { return resolvent_value(z, constant(z), gamma, a); }).estimate, 0.0);
}

TEST(AverageCost, FlipChainTauberianOrder) {
  const Model m = experiments::flip_model(1.0, 1.0);
  const auto gamma = experiments::point_mass(m, "1");
  const auto abel = average_cost_abel([&](double a) { return resolvent_value(m, constant(m), gamma, a); });
  const StateActionCurve c = markov_marginals(m, constant(m), gamma, TimeGrid::covering(0.01, 256.0));
  const auto ces = average_cost_cesaro([&](double T) { return finite_horizon_cost(m, c, 0.0, T).value; });
  EXPECT_NEAR(abel.estimate, 0.5, 2e-3);
  EXPECT_NEAR(ces.estimate, 0.5, 2e-3);
  EXPECT_LE(abel.estimate, ces.estimate + 1e-6);
  EXPECT_TRUE(abel.monotone_tail);
  EXPECT_TRUE(ces.monotone_tail);
}

TEST(SignedCosts, Decomposition) {
  CostStructure c;
  c.rate = {-1.0, -1.0};
  c.jump = {0.0, 0.0};
  auto [pos, neg] = decompose_signed(c);
  EXPECT_EQ(pos.rate, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(neg.rate, (std::vector<double>{-1.0, -1.0}));
  c.rate = {2.0, 0.5};
  std::tie(pos, neg) = decompose_signed(c);
  EXPECT_EQ(pos.rate, c.rate);
  EXPECT_EQ(neg.rate, (std::vector<double>{0.0, 0.0}));
  c.rate = {-0.25, 3.5};
  c.jump = {0.0, -2.0};
  c.instants = {{1.0, {0.5, -0.5}}};
  std::tie(pos, neg) = decompose_signed(c);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(pos.rate[i] + neg.rate[i], c.rate[i]);
    EXPECT_EQ(pos.jump[i] + neg.jump[i], c.jump[i]);
    EXPECT_EQ(pos.instants[0].values[i] + neg.instants[0].values[i], c.instants[0].values[i]);
  }
  EXPECT_FALSE(is_nonnegative(c));
  EXPECT_TRUE(is_nonnegative(pos));
}

TEST(Costs, UndefinedValue) {
  Model m = experiments::switching_model(false);
  CostStructure c = m.costs();
  c.rate[0] = std::numeric_limits<double>::infinity();
  m.set_costs(c);
  const StateActionCurve curve = markov_marginals(m, constant(m), std::vector<double>{1.0, 0.0}, {0.0, 0.05, 20});
  EXPECT_EQ(code_of([&] { finite_horizon_cost(m, curve, 1.0, 1.0); }), ErrorCode::UndefinedValue);
}

TEST(Constraints, Reports) {
  const Model m = experiments::switching_model(false);
  const std::vector<double> gamma{0.0, 1.0};
  const TimeGrid grid = TimeGrid::covering(0.00125, 25.0);
  const StateActionCurve pi = finite_memory_marginals(m, experiments::parity_policy(m), gamma, grid);
  const StateActionCurve phi = markov_marginals(m, derive_markov_exact(m, pi), gamma, grid);
  CostStructure jump_only = m.costs();
  CostStructure time_in_two;
  time_in_two.rate = {0.0, 0.0, 1.0, 1.0};
  time_in_two.jump = {0.0, 0.0, 0.0, 0.0};
  const CriterionSpec objective{"jumps", jump_only, 1.0, std::nullopt, 1e-8, 0.0};

  ConstraintReport r = evaluate_constraints(m, pi, phi, objective, {});
  EXPECT_TRUE(r.pi_feasible);
  EXPECT_TRUE(r.dominance_holds);
  EXPECT_NEAR(r.objective.value_phi, r.objective.value_pi, 1e-6);

  r = evaluate_constraints(m, pi, phi, objective, {{"time in 2", time_in_two, 1.0, std::nullopt, 1e-8, 10.0}});
  EXPECT_TRUE(r.pi_feasible);
  EXPECT_TRUE(r.phi_feasible);
  EXPECT_TRUE(r.dominance_holds);

  r = evaluate_constraints(m, pi, phi, objective, {{"time in 2", time_in_two, 1.0, 2.0, 1e-8, 0.01}});
  EXPECT_FALSE(r.pi_feasible);
  EXPECT_TRUE(r.dominance_holds);
}
