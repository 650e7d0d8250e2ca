#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adalign/advantage.hpp"
#include "adalign/envs.hpp"
#include "adalign/rng.hpp"

namespace adalign {

// One-step-history IPD states, seat relative: index 0 = episode start,
// 1 + my_prev*2 + opp_prev otherwise (0 = cooperate, 1 = defect).
constexpr int kIpdNumStates = 5;

struct TabularPolicy {
  std::array<double, kIpdNumStates> p_coop = {};

  static TabularPolicy constant(double p) {
    TabularPolicy t;
    t.p_coop.fill(p);
    return t;
  }
  // bits: bit s set means cooperate in state s.
  static TabularPolicy deterministic(int bits) {
    TabularPolicy t;
    for (int s = 0; s < kIpdNumStates; ++s) t.p_coop[s] = (bits >> s) & 1;
    return t;
  }
  static TabularPolicy tit_for_tat() {
    TabularPolicy t;
    t.p_coop = {1, 1, 0, 1, 0};  // cooperate first, then mirror opponent
    return t;
  }
  void validate() const;
};

// Exact discounted evaluation of a policy pair on the 5-state chain. States
// are absolute (player 1's perspective); joint actions indexed a1*2+a2.
//
// V solves the Bellman linear system directly. Advantages are taken against
// the policy-averaged Q baseline, A(s,j) = Q(s,j) - sum_j' P(j'|s) Q(s,j'),
// so on-support advantages of deterministic pairs are identically zero
// rather than zero up to solver roundoff.
struct ExactValues {
  std::array<double, kIpdNumStates> v1, v2;
  std::array<std::array<double, 4>, kIpdNumStates> q1, q2;
  std::array<std::array<double, 4>, kIpdNumStates> a1, a2;
  // max_s |V(s) - E_policy[Q(s,.)]|, the linear-solve self-consistency.
  double bellman_residual;
};

ExactValues exact_values(const TabularPolicy& p1, const TabularPolicy& p2,
                         const IpdPayoffs& payoffs, double gamma);

// Finite-horizon values by backward induction: V[t][s] for t in 0..T, with
// V[T] = 0. Oracle for TD critics trained on length-T episodes.
std::vector<std::array<double, kIpdNumStates>> exact_values_finite(
    const TabularPolicy& p1, const TabularPolicy& p2, const IpdPayoffs& payoffs,
    double gamma, int horizon);

// ---- Nash preservation ------------------------------------------------------

struct Deviation {
  int player;        // 0 or 1
  int policy_bits;   // deterministic alternative that improves
  double gain;       // value improvement at the start state
};

struct NashCheckResult {
  bool is_nash;
  std::optional<Deviation> deviation;
  // gamma^3 * max on-support |A^1| * max on-support |A^2|: the largest
  // magnitude a single beta=1 alignment coefficient can take under the pair.
  double residual;
};

// Exhaustive best-response verification over the 32 deterministic
// one-step-history policies per player (strict improvement tolerance `tol`
// at the start state), plus the alignment residual from exact advantages.
NashCheckResult nash_check_detail(const TabularPolicy& p1,
                                  const TabularPolicy& p2,
                                  const IpdPayoffs& payoffs, double gamma,
                                  double tol = 1e-9);

// Gated form: returns the residual, throws VerificationError naming the
// profitable deviation if the pair is not a mutual best response.
double nash_preservation_check(const TabularPolicy& p1, const TabularPolicy& p2,
                               const IpdPayoffs& payoffs, double gamma,
                               double tol = 1e-9);

// ---- LOQA relation ----------------------------------------------------------

// AdAlign coefficients next to their LOQA-damped counterparts. The damping
// factor (1 - opp_probs[k]) applies at the past index k in the theorem
// statement; the appendix gradient places it at the current index t. Both are
// computed so the discrepancy stays visible.
struct LoqaRelation {
  std::vector<double> adalign;
  std::vector<double> loqa_at_k;
  std::vector<double> loqa_at_t;
};

LoqaRelation loqa_term_relation(const AdvantageSeries& s,
                                const std::vector<double>& opp_probs,
                                int self = 0, int opp = 1);

// ---- empirical policy probe -------------------------------------------------

// Stateful per-episode IPD actor; implementations wrap nets or scripted
// policies. obs is the 5-dim seat-relative observation.
class IpdSeatPolicy {
 public:
  virtual ~IpdSeatPolicy() = default;
  virtual void reset() = 0;
  virtual int act(const double* obs, RngStream& rng) = 0;
};

using IpdPolicyFactory = std::function<std::unique_ptr<IpdSeatPolicy>()>;

struct ProbeResult {
  TabularPolicy policy;  // estimated P(C | seat-relative state)
  std::array<int, kIpdNumStates> visits = {};
  std::array<int, kIpdNumStates> coop_counts = {};
  std::array<bool, kIpdNumStates> low_confidence = {};
};

// Rolls the probed policy against a uniform-random opponent and against a
// second instance of itself (n_episodes each), pooling seat-0 decisions into
// per-state counts. States with fewer than 30 visits are flagged.
ProbeResult empirical_policy_probe(const IpdPolicyFactory& factory,
                                   int n_episodes, uint64_t master_seed,
                                   const IpdConfig& cfg = {});

}  // namespace adalign
