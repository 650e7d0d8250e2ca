#include <cmath>
#include <memory>

#include "adalign/analysis.hpp"
#include "adalign/error.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace adalign;

namespace {

const IpdPayoffs kPay = IpdPayoffs::standard_dilemma();

// Scripted tit-for-tat seat for the probe tests.
class TftSeat : public IpdSeatPolicy {
 public:
  void reset() override {}
  int act(const double* obs, RngStream&) override {
    if (obs[0] > 0.5) return 0;  // cooperate on the first move
    // One-hot over (mine, theirs); defect iff they defected.
    for (int j = 0; j < 4; ++j)
      if (obs[1 + j] > 0.5) return j % 2;
    return 0;
  }
};

class ConstSeat : public IpdSeatPolicy {
 public:
  explicit ConstSeat(int a) : a_(a) {}
  void reset() override {}
  int act(const double*, RngStream&) override { return a_; }

 private:
  int a_;
};

}  // namespace

TEST_CASE("tabular policy helpers") {
  TabularPolicy tft = TabularPolicy::tit_for_tat();
  CHECK(tft.p_coop == std::array<double, 5>{1, 1, 0, 1, 0});
  TabularPolicy d = TabularPolicy::deterministic(0b10101);
  CHECK(d.p_coop == std::array<double, 5>{1, 0, 1, 0, 1});
  TabularPolicy bad = TabularPolicy::constant(1.5);
  CHECK_THROWS_AS(bad.validate(), ShapeError);
  CHECK_NOTHROW(TabularPolicy::constant(0.5).validate());
}

TEST_CASE("exact values for always-defect against itself") {
  TabularPolicy ad = TabularPolicy::constant(0.0);
  ExactValues ev = exact_values(ad, ad, kPay, 0.9);
  double expect = -2.0 / (1.0 - 0.9);
  for (int s = 0; s < kIpdNumStates; ++s) {
    CHECK(ev.v1[s] == doctest::Approx(expect).epsilon(1e-10));
    CHECK(ev.v2[s] == doctest::Approx(expect).epsilon(1e-10));
    // Q at the supported joint action (D,D) agrees with V.
    CHECK(ev.q1[s][3] == doctest::Approx(expect).epsilon(1e-10));
    // On-support advantage is exactly zero by construction.
    CHECK(ev.a1[s][3] == 0.0);
    CHECK(ev.a2[s][3] == 0.0);
  }
  CHECK(ev.bellman_residual < 1e-9);
  // Unilateral cooperation against AD: Q(s, (C,D)) = -3 + gamma * V(state CD).
  CHECK(ev.q1[0][1] == doctest::Approx(-3.0 + 0.9 * ev.v1[2]).epsilon(1e-10));
}

TEST_CASE("exact values for mutual tit-for-tat") {
  TabularPolicy tft = TabularPolicy::tit_for_tat();
  ExactValues ev = exact_values(tft, tft, kPay, 0.9);
  // From the start both cooperate forever.
  CHECK(ev.v1[0] == doctest::Approx(-1.0 / 0.1).epsilon(1e-10));
  CHECK(ev.v2[0] == doctest::Approx(-1.0 / 0.1).epsilon(1e-10));
  // From mutual defection TFT locks into defection.
  CHECK(ev.v1[4] == doctest::Approx(-2.0 / 0.1).epsilon(1e-10));
  // From (C, D) the pair alternates retaliation: player 1 scores
  // 0, -3, 0, -3, ... so V = -3*gamma/(1-gamma^2).
  CHECK(ev.v1[2] == doctest::Approx(-3.0 * 0.9 / 0.19).epsilon(1e-10));
  CHECK(ev.bellman_residual < 1e-9);
}

TEST_CASE("exact values match mixed-policy simulation") {
  TabularPolicy p1 = TabularPolicy::constant(0.7);
  TabularPolicy p2;
  p2.p_coop = {0.9, 0.8, 0.2, 0.6, 0.1};
  double gamma = 0.85;
  ExactValues ev = exact_values(p1, p2, kPay, gamma);
  CHECK(ev.bellman_residual < 1e-9);

  // Monte Carlo estimate of V1 at the start state.
  RngStream rng(400, "mc");
  double total = 0.0;
  int n = 40000;
  for (int ep = 0; ep < n; ++ep) {
    int s = 0;
    double ret = 0.0, w = 1.0;
    for (int t = 0; t < 60; ++t) {
      int a1 = rng.uniform() < p1.p_coop[s] ? 0 : 1;
      int s2 = (s == 0) ? 0 : 1 + ((s - 1) % 2) * 2 + (s - 1) / 2;
      int a2 = rng.uniform() < p2.p_coop[s2] ? 0 : 1;
      ret += w * kPay.r1[a1][a2];
      w *= gamma;
      s = 1 + a1 * 2 + a2;
    }
    total += ret;
  }
  double mc = total / n;
  CHECK(std::abs(mc - ev.v1[0]) < 0.05);
}

TEST_CASE("finite-horizon values by backward induction") {
  TabularPolicy ad = TabularPolicy::constant(0.0);
  int T = 12;
  auto v = exact_values_finite(ad, ad, kPay, 0.9, T);
  REQUIRE(v.size() == size_t(T + 1));
  for (int s = 0; s < kIpdNumStates; ++s) CHECK(v[T][s] == 0.0);
  for (int t = 0; t <= T; ++t) {
    double closed = -2.0 * (1.0 - std::pow(0.9, double(T - t))) / 0.1;
    CHECK(v[t][0] == doctest::Approx(closed).epsilon(1e-12));
  }
  // Long horizons approach the infinite-horizon solution.
  auto v200 = exact_values_finite(ad, ad, kPay, 0.9, 200);
  ExactValues ev = exact_values(ad, ad, kPay, 0.9);
  CHECK(std::abs(v200[0][0] - ev.v1[0]) < 1e-6);
}

TEST_CASE("mutual defection is Nash with zero alignment residual") {
  TabularPolicy ad = TabularPolicy::constant(0.0);
  NashCheckResult r = nash_check_detail(ad, ad, kPay, 0.9);
  CHECK(r.is_nash);
  CHECK(!r.deviation.has_value());
  CHECK(r.residual == 0.0);
  CHECK(nash_preservation_check(ad, ad, kPay, 0.9) == 0.0);
}

TEST_CASE("mutual tit-for-tat is Nash at gamma 0.9") {
  TabularPolicy tft = TabularPolicy::tit_for_tat();
  NashCheckResult r = nash_check_detail(tft, tft, kPay, 0.9);
  CHECK(r.is_nash);
  CHECK(r.residual == 0.0);  // deterministic pair, on-support advantages zero
}

TEST_CASE("mutual cooperation is not Nash and the deviation defects") {
  TabularPolicy ac = TabularPolicy::constant(1.0);
  NashCheckResult r = nash_check_detail(ac, ac, kPay, 0.9);
  CHECK(!r.is_nash);
  REQUIRE(r.deviation.has_value());
  CHECK(r.deviation->gain > 0.0);
  // The improving policy defects in the states it actually visits; defecting
  // forever against AC gains (-0)-(-1) per step = 10 total at gamma 0.9.
  TabularPolicy dev = TabularPolicy::deterministic(r.deviation->policy_bits);
  ExactValues base = exact_values(ac, ac, kPay, 0.9);
  if (r.deviation->player == 0) {
    ExactValues after = exact_values(dev, ac, kPay, 0.9);
    CHECK(after.v1[0] - base.v1[0] == doctest::Approx(r.deviation->gain));
  }
  CHECK_THROWS_AS(nash_preservation_check(ac, ac, kPay, 0.9),
                  VerificationError);
  try {
    nash_preservation_check(ac, ac, kPay, 0.9);
  } catch (const VerificationError& e) {
    CHECK(std::string(e.what()).find("player") != std::string::npos);
  }
}

TEST_CASE("perturbed defection keeps a positive residual") {
  TabularPolicy soft = TabularPolicy::constant(0.01);
  NashCheckResult r = nash_check_detail(soft, soft, kPay, 0.9);
  CHECK(r.residual > 0.0);
}

TEST_CASE("loqa damping with zero probabilities matches adalign exactly") {
  RngStream rng(500, "loqa");
  AdvantageSeries s;
  int T = 32;
  s.advantages.resize(2);
  for (int p = 0; p < 2; ++p) {
    s.advantages[p].resize(T);
    for (double& v : s.advantages[p]) v = rng.uniform(-1.0, 1.0);
  }
  s.gamma = 0.9;
  s.beta = 0.4;
  std::vector<double> zeros(T, 0.0);
  LoqaRelation r = loqa_term_relation(s, zeros);
  auto base = alignment_term_coefficients(s, AlignVariant::kGammaDiscounted);
  REQUIRE(r.adalign.size() == size_t(T));
  for (int t = 0; t < T; ++t) {
    CHECK(r.adalign[t] == base[t]);
    CHECK(r.loqa_at_k[t] == base[t]);  // bitwise: damping factors are 1
    CHECK(r.loqa_at_t[t] == base[t]);
  }
}

TEST_CASE("loqa damping with unit probabilities kills every term") {
  AdvantageSeries s;
  s.advantages = {{0.3, -0.2, 0.8, 0.1}, {1.0, 0.5, -0.5, 0.2}};
  s.gamma = 0.9;
  s.beta = 1.0;
  std::vector<double> ones(4, 1.0);
  LoqaRelation r = loqa_term_relation(s, ones);
  for (int t = 0; t < 4; ++t) {
    CHECK(r.loqa_at_k[t] == 0.0);
    CHECK(r.loqa_at_t[t] == 0.0);
    // The undamped series is untouched.
    CHECK(r.adalign[t] ==
          alignment_term_coefficients(s, AlignVariant::kGammaDiscounted)[t]);
  }
}

TEST_CASE("loqa damped coefficients match the double-sum oracle") {
  RngStream rng(501, "loqa_oracle");
  for (int trial = 0; trial < 10; ++trial) {
    int T = 16;
    AdvantageSeries s;
    s.advantages.resize(2);
    for (int p = 0; p < 2; ++p) {
      s.advantages[p].resize(T);
      for (double& v : s.advantages[p]) v = rng.uniform(-1.0, 1.0);
    }
    s.gamma = rng.uniform(0.6, 0.95);
    s.beta = rng.uniform(0.2, 1.5);
    std::vector<double> probs(T);
    for (double& p : probs) p = rng.uniform(0.0, 1.0);

    LoqaRelation r = loqa_term_relation(s, probs);
    for (int t = 0; t < T; ++t) {
      double sum_k = 0.0, sum_plain = 0.0;
      for (int k = 0; k < t; ++k) {
        double g = std::pow(s.gamma, double(t - k));
        sum_k += g * (1.0 - probs[k]) * s.advantages[0][k];
        sum_plain += g * s.advantages[0][k];
      }
      double lead = s.beta * std::pow(s.gamma, double(t + 1));
      CHECK(std::abs(r.loqa_at_k[t] - lead * sum_k * s.advantages[1][t]) <
            1e-12);
      CHECK(std::abs(r.loqa_at_t[t] - lead * sum_plain * s.advantages[1][t] *
                                          (1.0 - probs[t])) < 1e-12);
      CHECK(std::abs(r.adalign[t] - lead * sum_plain * s.advantages[1][t]) <
            1e-12);
    }
  }
}

TEST_CASE("loqa argument validation") {
  AdvantageSeries s;
  s.advantages = {{1.0, 2.0}, {3.0, 4.0}};
  CHECK_THROWS_AS(loqa_term_relation(s, {0.5}), ShapeError);
  CHECK_THROWS_AS(loqa_term_relation(s, {0.5, 1.5}), ShapeError);
}

TEST_CASE("probe recovers tit-for-tat exactly") {
  ProbeResult r = empirical_policy_probe(
      [] { return std::make_unique<TftSeat>(); }, 400, 77);
  for (int s = 0; s < kIpdNumStates; ++s) {
    CHECK(r.visits[s] >= 30);
    CHECK(!r.low_confidence[s]);
    // Deterministic policy: the estimate is exact.
    CHECK(r.policy.p_coop[s] ==
          TabularPolicy::tit_for_tat().p_coop[s]);
  }
  // Counts are self-consistent.
  for (int s = 0; s < kIpdNumStates; ++s)
    CHECK(r.coop_counts[s] <= r.visits[s]);
}

TEST_CASE("probe recovers always-defect") {
  ProbeResult r = empirical_policy_probe(
      [] { return std::make_unique<ConstSeat>(1); }, 400, 78);
  // AD never cooperates, so every estimated probability is zero; the states
  // it visits depend on the opponent so some may be sparse against itself.
  for (int s = 0; s < kIpdNumStates; ++s)
    if (r.visits[s] > 0) CHECK(r.policy.p_coop[s] == 0.0);
  CHECK(r.visits[0] > 0);
  CHECK(r.policy.p_coop[0] == 0.0);
}

TEST_CASE("probe flags unvisited states and rejects bad arguments") {
  CHECK_THROWS_AS(empirical_policy_probe(
                      [] { return std::make_unique<TftSeat>(); }, 0, 1),
                  ShapeError);
  // A single episode cannot cover all states.
  ProbeResult r = empirical_policy_probe(
      [] { return std::make_unique<ConstSeat>(0); }, 1, 79);
  bool any_low = false;
  for (bool b : r.low_confidence) any_low = any_low || b;
  CHECK(any_low);
}

TEST_CASE("probe is deterministic in the master seed") {
  auto f = [] { return std::make_unique<TftSeat>(); };
  ProbeResult a = empirical_policy_probe(f, 100, 123);
  ProbeResult b = empirical_policy_probe(f, 100, 123);
  CHECK(a.visits == b.visits);
  CHECK(a.coop_counts == b.coop_counts);
  ProbeResult c = empirical_policy_probe(f, 100, 124);
  CHECK(a.visits != c.visits);
}
