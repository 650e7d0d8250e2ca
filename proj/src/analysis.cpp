#include "adalign/analysis.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace adalign {
namespace {

// Seat-relative state index for each player given the absolute state
// (player 1's perspective).
int rel_state(int abs_state, int player) {
  if (abs_state == 0 || player == 0) return abs_state;
  const int a1 = (abs_state - 1) / 2, a2 = (abs_state - 1) % 2;
  return 1 + a2 * 2 + a1;
}

// P(joint action j | state s) for j = a1*2 + a2.
double joint_prob(const TabularPolicy& p1, const TabularPolicy& p2, int s,
                  int j) {
  const int a1 = j / 2, a2 = j % 2;
  const double c1 = p1.p_coop[rel_state(s, 0)];
  const double c2 = p2.p_coop[rel_state(s, 1)];
  return (a1 == 0 ? c1 : 1.0 - c1) * (a2 == 0 ? c2 : 1.0 - c2);
}

}  // namespace

void TabularPolicy::validate() const {
  for (double p : p_coop)
    if (!(p >= 0.0 && p <= 1.0))
      throw ShapeError("TabularPolicy: probability outside [0,1]");
}

ExactValues exact_values(const TabularPolicy& p1, const TabularPolicy& p2,
                         const IpdPayoffs& payoffs, double gamma) {
  p1.validate();
  p2.validate();
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw ConfigError("exact_values: needs gamma in [0,1)");
  constexpr int S = kIpdNumStates;

  Eigen::MatrixXd P(S, S);
  Eigen::VectorXd rbar1(S), rbar2(S);
  P.setZero();
  for (int s = 0; s < S; ++s) {
    double r1 = 0.0, r2 = 0.0;
    for (int j = 0; j < 4; ++j) {
      const double pj = joint_prob(p1, p2, s, j);
      const int a1 = j / 2, a2 = j % 2;
      P(s, 1 + j) += pj;  // next state is determined by the joint action
      r1 += pj * payoffs.r1[a1][a2];
      r2 += pj * payoffs.r2[a1][a2];
    }
    rbar1(s) = r1;
    rbar2(s) = r2;
  }

  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(S, S) - gamma * P;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  Eigen::VectorXd v1 = lu.solve(rbar1);
  Eigen::VectorXd v2 = lu.solve(rbar2);

  ExactValues out{};
  double resid = 0.0;
  for (int s = 0; s < S; ++s) {
    out.v1[s] = v1(s);
    out.v2[s] = v2(s);
    double ev1 = 0.0, ev2 = 0.0;
    for (int j = 0; j < 4; ++j) {
      const int a1 = j / 2, a2 = j % 2;
      out.q1[s][j] = payoffs.r1[a1][a2] + gamma * v1(1 + j);
      out.q2[s][j] = payoffs.r2[a1][a2] + gamma * v2(1 + j);
      const double pj = joint_prob(p1, p2, s, j);
      ev1 += pj * out.q1[s][j];
      ev2 += pj * out.q2[s][j];
    }
    for (int j = 0; j < 4; ++j) {
      out.a1[s][j] = out.q1[s][j] - ev1;
      out.a2[s][j] = out.q2[s][j] - ev2;
    }
    resid = std::max(resid, std::abs(v1(s) - ev1));
    resid = std::max(resid, std::abs(v2(s) - ev2));
  }
  out.bellman_residual = resid;
  return out;
}

std::vector<std::array<double, kIpdNumStates>> exact_values_finite(
    const TabularPolicy& p1, const TabularPolicy& p2, const IpdPayoffs& payoffs,
    double gamma, int horizon) {
  p1.validate();
  p2.validate();
  if (horizon < 0) throw ShapeError("exact_values_finite: negative horizon");
  std::vector<std::array<double, kIpdNumStates>> v(
      horizon + 1, std::array<double, kIpdNumStates>{});
  for (int t = horizon - 1; t >= 0; --t) {
    for (int s = 0; s < kIpdNumStates; ++s) {
      double acc = 0.0;
      for (int j = 0; j < 4; ++j) {
        const double pj = joint_prob(p1, p2, s, j);
        const int a1 = j / 2, a2 = j % 2;
        acc += pj * (payoffs.r1[a1][a2] + gamma * v[t + 1][1 + j]);
      }
      v[t][s] = acc;
    }
  }
  return v;
}

namespace {

// Player i's start-state value for an arbitrary pair, reusing exact_values.
double start_value(const TabularPolicy& p1, const TabularPolicy& p2,
                   const IpdPayoffs& payoffs, double gamma, int player) {
  ExactValues ev = exact_values(p1, p2, payoffs, gamma);
  return player == 0 ? ev.v1[0] : ev.v2[0];
}

}  // namespace

NashCheckResult nash_check_detail(const TabularPolicy& p1,
                                  const TabularPolicy& p2,
                                  const IpdPayoffs& payoffs, double gamma,
                                  double tol) {
  NashCheckResult res{};
  res.is_nash = true;

  const double base[2] = {start_value(p1, p2, payoffs, gamma, 0),
                          start_value(p1, p2, payoffs, gamma, 1)};
  for (int player = 0; player < 2 && res.is_nash; ++player) {
    for (int bits = 0; bits < (1 << kIpdNumStates); ++bits) {
      TabularPolicy alt = TabularPolicy::deterministic(bits);
      const double v = player == 0
                           ? start_value(alt, p2, payoffs, gamma, 0)
                           : start_value(p1, alt, payoffs, gamma, 1);
      if (v > base[player] + tol) {
        res.is_nash = false;
        res.deviation = Deviation{player, bits, v - base[player]};
        break;
      }
    }
  }

  ExactValues ev = exact_values(p1, p2, payoffs, gamma);
  double m1 = 0.0, m2 = 0.0;
  for (int s = 0; s < kIpdNumStates; ++s) {
    for (int j = 0; j < 4; ++j) {
      if (joint_prob(p1, p2, s, j) <= 0.0) continue;
      m1 = std::max(m1, std::abs(ev.a1[s][j]));
      m2 = std::max(m2, std::abs(ev.a2[s][j]));
    }
  }
  res.residual = gamma * gamma * gamma * m1 * m2;
  return res;
}

double nash_preservation_check(const TabularPolicy& p1, const TabularPolicy& p2,
                               const IpdPayoffs& payoffs, double gamma,
                               double tol) {
  NashCheckResult res = nash_check_detail(p1, p2, payoffs, gamma, tol);
  if (!res.is_nash) {
    const Deviation& d = *res.deviation;
    throw VerificationError(
        "nash_preservation_check: pair is not a mutual best response; player " +
        std::to_string(d.player + 1) + " improves by " + std::to_string(d.gain) +
        " with deterministic policy bits " + std::to_string(d.policy_bits));
  }
  return res.residual;
}

LoqaRelation loqa_term_relation(const AdvantageSeries& s,
                                const std::vector<double>& opp_probs, int self,
                                int opp) {
  s.validate();
  const int T = s.length();
  if (static_cast<int>(opp_probs.size()) != T)
    throw ShapeError("loqa_term_relation: probs length mismatch");
  for (double p : opp_probs)
    if (!(p >= 0.0 && p <= 1.0))
      throw ShapeError("loqa_term_relation: probability outside [0,1]");

  LoqaRelation out;
  out.adalign = alignment_term_coefficients(
      s, AlignVariant::kGammaDiscounted, self, opp);
  const auto& a_self = s.advantages[self];
  const auto& a_opp = s.advantages[opp];

  out.loqa_at_k.resize(T);
  double damped = 0.0;  // sum_{k<t} gamma^{t-k} (1 - p_k) A_k
  double gpow = s.gamma;
  for (int t = 0; t < T; ++t) {
    out.loqa_at_k[t] = s.beta * gpow * damped * a_opp[t];
    damped = s.gamma * (damped + (1.0 - opp_probs[t]) * a_self[t]);
    gpow *= s.gamma;
  }

  out.loqa_at_t.resize(T);
  for (int t = 0; t < T; ++t)
    out.loqa_at_t[t] = out.adalign[t] * (1.0 - opp_probs[t]);
  return out;
}

ProbeResult empirical_policy_probe(const IpdPolicyFactory& factory,
                                   int n_episodes, uint64_t master_seed,
                                   const IpdConfig& cfg) {
  if (n_episodes <= 0) throw ShapeError("empirical_policy_probe: n_episodes");
  IpdEnv env(cfg);
  ProbeResult res{};

  // opponent_mode 0: uniform-random opponent; 1: self.
  for (int opponent_mode = 0; opponent_mode < 2; ++opponent_mode) {
    for (int ep = 0; ep < n_episodes; ++ep) {
      RngStream rng(master_seed, "probe", opponent_mode, ep);
      auto me = factory();
      me->reset();
      std::unique_ptr<IpdSeatPolicy> other;
      if (opponent_mode == 1) {
        other = factory();
        other->reset();
      }
      IpdState st;
      env.reset(st);
      double o0[kIpdObsDim], o1[kIpdObsDim];
      while (!env.done(st)) {
        env.obs(st, 0, o0);
        env.obs(st, 1, o1);
        // Seat-relative state index of seat 0 before acting.
        const int s = st.a1 < 0 ? 0 : 1 + st.a1 * 2 + st.a2;
        const int a0 = me->act(o0, rng);
        const int a1 = opponent_mode == 1 ? other->act(o1, rng)
                                          : static_cast<int>(rng.randint(2));
        res.visits[s] += 1;
        if (a0 == 0) res.coop_counts[s] += 1;
        env.step(st, a0, a1);
      }
    }
  }

  for (int s = 0; s < kIpdNumStates; ++s) {
    res.policy.p_coop[s] =
        res.visits[s] > 0
            ? static_cast<double>(res.coop_counts[s]) / res.visits[s]
            : 0.0;
    res.low_confidence[s] = res.visits[s] < 30;
  }
  return res;
}

}  // namespace adalign
