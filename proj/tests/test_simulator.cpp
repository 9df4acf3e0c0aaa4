#include <gtest/gtest.h>

#include <cmath>

#include "ctjmdp/experiments.hpp"
#include "ctjmdp/simulator.hpp"

using namespace ctjmdp;

namespace {

Model absorbing_model() {
  RawModel raw;
  raw.states = {"x"};
  raw.actions = {"a"};
  raw.feasible = {{"x", {"a"}}};
  raw.rates = {{"x", "a", {}, 0.0}};
  return validate_model(raw);
}

Model fork_model() {
  RawModel raw;
  raw.states = {"z", "y1", "y2"};
  raw.actions = {"a"};
  raw.feasible = {{"z", {"a"}}, {"y1", {"a"}}, {"y2", {"a"}}};
  raw.rates = {{"z", "a", {{"y1", 1.0}, {"y2", 3.0}}, 0.0}, {"y1", "a", {}, 0.0}, {"y2", "a", {}, 0.0}};
  return validate_model(raw);
}

MarkovPolicyGrid constant(const Model& m, std::size_t a = 0) {
  return MarkovPolicyGrid::deterministic(m, std::vector<std::size_t>(m.num_states(), a));
}

}  // namespace

TEST(Sojourn, AbsorbingStateIsCensored) {
  const Model m = absorbing_model();
  const Simulator sim(m, constant(m));
  CounterRng rng(1, 0);
  const SojournDraw d = sim.sample_sojourn(rng, History{0, {}}, 0, 0.0, 1e9);
  EXPECT_TRUE(std::isinf(d.time));
}

TEST(Sojourn, ExponentialMeanUnderGeneralPolicy) {
  const Model m = experiments::switching_model(false);
  // thinning path: c at 2 gives exit rate 1 against the envelope 2
  const Simulator sim(m, GeneralPolicy{[](const History& h, double) {
                        return h.current_state() == 0 ? RelaxedAction{{1.0, 0.0}} : RelaxedAction{{0.0, 1.0}};
                      }});
  const int n = 40000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    CounterRng rng(3, static_cast<std::uint64_t>(i));
    const double t = sim.sample_sojourn(rng, History{1, {}}, 0, 0.0, 1e9).time;
    sum += t;
    sum2 += t * t;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  EXPECT_NEAR(mean, 1.0, 4 * se);
}

TEST(Destination, Examples) {
  const Model f2 = experiments::switching_model(false);
  const Simulator sim(f2, constant(f2));
  CounterRng rng(5, 0);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sim.sample_destination(rng, 1, RelaxedAction{{0.5, 0.5}}), 0u);

  const Model fork = fork_model();
  const Simulator fs(fork, constant(fork));
  const int n = 100000;
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += fs.sample_destination(rng, 0, RelaxedAction{{1.0}}) == 2u;
  EXPECT_NEAR(static_cast<double>(hits) / n, 0.75, 0.005);

  const Model abs = absorbing_model();
  const Simulator as(abs, constant(abs));
  try {
    as.sample_destination(rng, 0, RelaxedAction{{1.0}});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroExit);
  }
}

TEST(Simulate, BoundedRatesComplete) {
  const Model m = experiments::switching_model(false);
  const Simulator sim(m, experiments::parity_policy(m));
  const std::vector<double> gamma{0.5, 0.5};
  const auto paths = sim.simulate(gamma, {5.0, 1000000, 2000, 9, 2});
  for (const Trajectory& tr : paths) {
    EXPECT_EQ(tr.status, TrajectoryStatus::Completed);
    EXPECT_EQ(tr.end_time, 5.0);
    double last = 0.0;
    for (const Jump& j : tr.jumps()) {
      EXPECT_GT(j.time, last);
      EXPECT_LE(j.time, 5.0);
      last = j.time;
    }
  }
}

TEST(Simulate, AbsorbingHasNoJumps) {
  const Model m = absorbing_model();
  const Simulator sim(m, constant(m));
  const std::vector<double> gamma{1.0};
  for (const Trajectory& tr : sim.simulate(gamma, {3.0, 10, 100, 1, 1})) EXPECT_TRUE(tr.jumps().empty());
}

TEST(Simulate, JumpCapAndEscape) {
  const Model m = experiments::pure_birth_model(100);
  const Simulator sim(m, constant(m));
  const auto gamma = experiments::point_mass(m, "0");
  const auto capped = sim.simulate(gamma, {2.0, 20, 2000, 4, 1});
  std::size_t truncated = 0;
  for (const Trajectory& tr : capped) truncated += tr.status == TrajectoryStatus::TruncatedJumps;
  EXPECT_GT(truncated, 0u);

  const auto free = sim.simulate(gamma, {2.0, 1000, 2000, 4, 1});
  std::size_t escaped = 0;
  for (const Trajectory& tr : free) {
    EXPECT_NE(tr.status, TrajectoryStatus::TruncatedJumps);
    escaped += tr.escaped();
    if (tr.escaped()) {
      EXPECT_EQ(tr.jumps().size(), 99u);
      EXPECT_FALSE(tr.state_before(tr.end_time + 1e-9).has_value());
    }
  }
  EXPECT_GT(escaped, 1000u);
}

TEST(Simulate, ReproducibleAcrossThreadCounts) {
  const Model m = experiments::switching_model(false);
  const Simulator sim(m, experiments::parity_policy(m));
  const std::vector<double> gamma{0.3, 0.7};
  const auto a = sim.simulate(gamma, {4.0, 1000000, 300, 77, 1});
  const auto b = sim.simulate(gamma, {4.0, 1000000, 300, 77, 4});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].initial_state(), b[i].initial_state());
    ASSERT_EQ(a[i].jumps().size(), b[i].jumps().size());
    for (std::size_t n = 0; n < a[i].jumps().size(); ++n) {
      EXPECT_EQ(a[i].jumps()[n].time, b[i].jumps()[n].time);
      EXPECT_EQ(a[i].jumps()[n].state, b[i].jumps()[n].state);
    }
  }
  const Trajectory one = sim.simulate_one(gamma, {4.0, 1000000, 300, 77, 1}, 123);
  EXPECT_EQ(one.jumps().size(), a[123].jumps().size());
  const auto c = sim.simulate(gamma, {4.0, 1000000, 300, 78, 1});
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i].jumps().size() == c[i].jumps().size();
  EXPECT_LT(same, a.size());
}

TEST(Counts, PathExample) {
  const Model m = experiments::switching_model(false);
  // 2 -> 1 -> 2 -> 1 at 0.3, 0.9, 1.4
  const Trajectory tr{History{1, {{0.3, 0}, {0.9, 1}, {1.4, 0}}}, TrajectoryStatus::Completed, 2.0};
  const auto two = state_set(m, {1});
  EXPECT_EQ(count_into(tr, two, 1.0), 1u);
  EXPECT_EQ(count_out_of(tr, two, 1.0), 1u);
  EXPECT_EQ(count_out_of(tr, two, 2.0), 2u);
  EXPECT_EQ(count_into(tr, state_set(m, {0}), 2.0), 2u);
}

TEST(Intensity, ClosedForms) {
  const Model m = experiments::switching_model(false);
  const Simulator sim(m, constant(m));
  const Trajectory tr{History{0, {{0.5, 1}}}, TrajectoryStatus::Completed, 2.0};
  EXPECT_NEAR(integrated_intensity_out_of(sim, tr, state_set(m, {0}), 0.5), 1.0, 1e-12);
  EXPECT_NEAR(integrated_intensity_into(sim, tr, state_set(m, {1}), 0.5), 1.0, 1e-12);
  // after 0.5 the path sits in 2 with rate 2 back to 1
  EXPECT_NEAR(integrated_intensity_into(sim, tr, state_set(m, {0}), 1.5), 2.0, 1e-12);
  std::vector<char> none(2, 0);
  EXPECT_EQ(integrated_intensity_out_of(sim, tr, none, 2.0), 0.0);

  const Model abs = absorbing_model();
  const Simulator as(abs, constant(abs));
  const Trajectory still{History{0, {}}, TrajectoryStatus::Completed, 3.0};
  EXPECT_EQ(integrated_intensity_out_of(as, still, state_set(abs, {0}), 3.0), 0.0);
  EXPECT_EQ(integrated_intensity_into(as, still, state_set(abs, {0}), 3.0), 0.0);
}

TEST(Intensity, DisjointSetStillReceivesIntensity) {
  const Model m = experiments::switching_model(false);
  const Simulator sim(m, constant(m));
  const Trajectory tr{History{0, {}}, TrajectoryStatus::Completed, 1.0};
  const auto two = state_set(m, {1});
  EXPECT_GT(integrated_intensity_into(sim, tr, two, 1.0), 0.0);
  EXPECT_EQ(integrated_intensity_out_of(sim, tr, two, 1.0), 0.0);
}

TEST(Marginals, AbsorbingAndFlipChain) {
  const Model abs = absorbing_model();
  const Simulator as(abs, constant(abs));
  const std::vector<double> one{1.0};
  const auto still = as.simulate(one, {2.0, 10, 50, 1, 1});
  const EmpiricalMarginals e0 = estimate_marginals(as, still, {0.0, 0.5, 4});
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(e0.prob(k, 0), 1.0);

  const Model flip = experiments::flip_model(1.0, 1.0);
  const Simulator fs(flip, constant(flip));
  const auto paths = fs.simulate(experiments::point_mass(flip, "1"), {1.0, 1000000, 40000, 2, 2});
  const EmpiricalMarginals e = estimate_marginals(fs, paths, {0.0, 0.5, 2});
  const double exact = 0.5 * (1.0 + std::exp(-2.0));
  EXPECT_NEAR(e.prob(2, 0), exact, 4 * e.se(2, 0));
  EXPECT_NEAR(e.prob(2, 0, 0), exact, 4 * e.se(2, 0, 0));
}
