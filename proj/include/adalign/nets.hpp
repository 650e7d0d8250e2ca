#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "adalign/rng.hpp"
#include "adalign/tape.hpp"

namespace adalign {

// Named view of a net's parameters. Order is stable and defines the layout of
// checkpoints, optimizer slots and gradient vectors.
using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

// Orthogonal init scaled by `gain` (QR of a Gaussian matrix with sign-fixed
// diagonal). Falls back to plain Gaussian rows/cols for degenerate shapes.
Tensor orthogonal(int64_t rows, int64_t cols, RngStream& rng, double gain);

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [1, out]
  void init(int64_t in, int64_t out, RngStream& rng, double gain) {
    w = orthogonal(in, out, rng, gain);
    b = Tensor(1, out);
  }
};

struct BoundLinear {
  Var w, b;
  Var operator()(Tape& t, Var x) const { return t.add(t.matmul(x, w), b); }
};

// Single GRU cell, standard update/reset-gate form with the update-gate
// convention h' = (1-z)*n + z*h.
struct GruCell {
  Tensor wz, uz, bz;  // [in,H], [H,H], [1,H]
  Tensor wr, ur, br;
  Tensor wn, un, bn;
  void init(int64_t in, int64_t hidden, RngStream& rng);
};

struct BoundGru {
  Var wz, uz, bz, wr, ur, br, wn, un, bn;
  Var step(Tape& t, Var x, Var h) const;
};

// Actor for the discrete games: obs -> Linear+relu -> GRU -> Linear+relu ->
// logits. Hidden state is owned by the rollout, not the net.
struct DiscreteActorNet {
  int64_t obs_dim = 0, n_actions = 0, hidden = 0;
  Linear pre, head1, head2;
  GruCell gru;

  DiscreteActorNet() = default;
  DiscreteActorNet(int64_t obs, int64_t actions, int64_t hid, RngStream& rng);
  NamedParams named_params();

  struct Bound {
    Tape* t = nullptr;
    BoundLinear pre, head1, head2;
    BoundGru gru;
    std::vector<Var> leaves;  // same order as named_params()
    // x [B,obs], h [B,H] -> (logits [B,A], h' [B,H])
    std::pair<Var, Var> logits(Var x, Var h) const;
  };
  Bound bind(Tape& t, bool requires_grad);
};

// State-value critic for the discrete games. Same trunk as the actor; the
// normalized step index is appended to the recurrent features before the head
// so finite-horizon values are representable.
struct CriticNet {
  int64_t obs_dim = 0, hidden = 0;
  Linear pre, head1, head2;
  GruCell gru;

  CriticNet() = default;
  CriticNet(int64_t obs, int64_t hid, RngStream& rng);
  NamedParams named_params();

  struct Bound {
    Tape* t = nullptr;
    BoundLinear pre, head1, head2;
    BoundGru gru;
    std::vector<Var> leaves;
    // x [B,obs], h [B,H], t_norm = step/episode_length -> (v [B,1], h')
    std::pair<Var, Var> value(Var x, Var h, double t_norm) const;
  };
  Bound bind(Tape& t, bool requires_grad);
};

// Negotiation agent: two-layer relu encoder into a GRU, shared by the actor
// and critic heads. The actor head emits the raw mean (pre-tanh); the critic
// head sees the trunk features plus normalized time.
struct ContinuousAgentNet {
  int64_t obs_dim = 0, act_dim = 0, hidden = 0;
  Linear enc1, enc2;
  GruCell gru;
  Linear actor1, actor2;
  Tensor log_std;  // [1, act_dim], one global parameter per action dim
  Linear critic1, critic2;

  ContinuousAgentNet() = default;
  ContinuousAgentNet(int64_t obs, int64_t act, int64_t hid, RngStream& rng);
  NamedParams named_params();

  struct Bound {
    Tape* t = nullptr;
    BoundLinear enc1, enc2, actor1, actor2, critic1, critic2;
    BoundGru gru;
    Var log_std;
    std::vector<Var> leaves;
    // x [B,obs], h [B,H] -> (features [B,H], h')
    std::pair<Var, Var> trunk(Var x, Var h) const;
    // features -> raw actor output [B,act] (pre-tanh)
    Var mean_raw(Var feat) const;
    // features (possibly a detached constant) -> v [B,1]
    Var value(Var feat, double t_norm) const;
  };
  Bound bind(Tape& t, bool requires_grad);
};

// ---- squashed Gaussian head -------------------------------------------------
// Pre-squash x ~ N(2.5*tanh(raw), sigma); emitted action = 2.5*tanh(x) + 2.5,
// strictly inside (0,5).

constexpr double kSquashScale = 2.5;
constexpr double kSquashShift = 2.5;
constexpr double kAtanhClip = 1e-6;

// Samples one action vector in place. mean_raw_row/log_std point at act_dim
// doubles; uses one normal draw per dim.
void sample_squashed_row(const double* mean_raw_row, const double* log_std,
                         int64_t act_dim, RngStream& rng, double* action_out);

// Differentiable log-density of `action` under the head defined by mean_raw
// [B,act] (pre-tanh net output) and log_std [1,act]. The atanh argument is
// clipped to [-1+1e-6, 1-1e-6]; actions outside [0,5] are rejected.
Var squashed_log_prob(Tape& t, Var mean_raw, Var log_std, const Tensor& action);

// Plain (non-tape) density helper for tests and probes.
double squashed_log_prob_scalar(double mean_raw, double log_std, double action);

// ---- optimizer / target-net utilities --------------------------------------

// Adam with the usual defaults; lr is per-instance, betas fixed.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step_count = 0;
  std::vector<Tensor> m, v;

  explicit Adam(double lr_in = 1e-3) : lr(lr_in) {}
  // grads parallel to params; allocates slots on first call.
  void step(const NamedParams& params, const std::vector<Tensor>& grads);
};

// target <- decay*target + (1-decay)*live, elementwise over matching layouts.
void ema_update(const NamedParams& target, const NamedParams& live, double decay);

// Global L2 norm over a gradient list.
double global_norm(const std::vector<Tensor>& grads);

// Scales grads so the global norm is at most max_norm (no-op if max_norm <= 0
// or already within). Returns the pre-clip norm.
double clip_global_norm(std::vector<Tensor>& grads, double max_norm);

// Collects grads of a bound net's leaves, in named_params order.
std::vector<Tensor> collect_grads(const std::vector<Var>& leaves);

}  // namespace adalign
