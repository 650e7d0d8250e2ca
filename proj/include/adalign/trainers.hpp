#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "adalign/advantage.hpp"
#include "adalign/analysis.hpp"
#include "adalign/checkpoint.hpp"
#include "adalign/config.hpp"
#include "adalign/envs.hpp"
#include "adalign/nets.hpp"
#include "adalign/rng.hpp"

namespace adalign {

// ---- seat policies ----------------------------------------------------------
// One episode of one seat, env-agnostic: discrete envs write the action index
// into action_out[0], negotiation writes kNegItems proposals. Used by the
// league, the policy probe and scripted training opponents.

class SeatPolicy {
 public:
  virtual ~SeatPolicy() = default;
  virtual void begin_episode() = 0;
  virtual void act(const double* obs, RngStream& rng, double* action_out) = 0;
};

// kind: AC | AD | TFT | Random (TFT only where a previous opponent move is
// recoverable from the observation, i.e. ipd and the 2-player matrix game).
std::unique_ptr<SeatPolicy> make_scripted_seat(EnvId env, const std::string& kind,
                                               const EnvConfig& envc);

// Net-backed seats sample from the policy. The net is copied, so the seat
// stays valid independently of training.
std::unique_ptr<SeatPolicy> make_net_seat(const DiscreteActorNet& net);
std::unique_ptr<SeatPolicy> make_net_seat(const ContinuousAgentNet& net);

// Wraps a copy of the net for the empirical IPD policy probe.
IpdPolicyFactory ipd_policy_factory(const DiscreteActorNet& net);

// ---- trajectory storage -----------------------------------------------------

struct TrajectoryBatch {
  int players = 0, B = 0, T = 0, obs_dim = 0, act_dim = 1;
  // [player][t]; discrete actions are stored as the index in column 0.
  std::vector<std::vector<Tensor>> obs;      // each [B, obs_dim]
  std::vector<std::vector<Tensor>> actions;  // each [B, act_dim]
  std::vector<std::vector<std::vector<double>>> rewards;  // [player][t][B]
  std::vector<std::vector<std::vector<double>>> logp;     // behavior log-probs

  void init(int players_, int B_, int T_, int obs_dim_, int act_dim_);
  double mean_return(int player) const;  // undiscounted episode sum, mean over B
};

// ---- agent snapshot buffer --------------------------------------------------

template <typename Net>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity) : capacity_(capacity) {}

  void push(const Net& net, int64_t iter) {
    if (static_cast<int>(ring_.size()) < capacity_) {
      ring_.push_back(net);
      iters_.push_back(iter);
    } else {
      ring_[next_ % capacity_] = net;
      iters_[next_ % capacity_] = iter;
    }
    ++next_;
  }
  int size() const { return static_cast<int>(ring_.size()); }
  int64_t iter_of(int i) const { return iters_[i]; }
  const Net& at(int i) const { return ring_[i]; }

  // With probability off_policy_prob a uniform snapshot, else nullptr
  // meaning "play the live net". Empty buffer always returns nullptr.
  const Net* sample(double off_policy_prob, RngStream& rng) const {
    if (ring_.empty() || off_policy_prob <= 0.0) return nullptr;
    if (rng.uniform() >= off_policy_prob) return nullptr;
    return &ring_[static_cast<size_t>(rng.randint(ring_.size()))];
  }

 private:
  int capacity_;
  int64_t next_ = 0;
  std::vector<Net> ring_;
  std::vector<int64_t> iters_;
};

// ---- trainer ----------------------------------------------------------------

struct IterStats {
  std::vector<double> mean_return;      // per player
  std::vector<double> actor_loss;
  std::vector<double> critic_loss;
  std::vector<double> entropy;          // mean policy entropy
  std::vector<double> actor_grad_norm;  // pre-clip
  std::vector<double> critic_grad_norm;
};

// One rollout group per updating parameter bank, so each updater can face
// buffer snapshots in the other seats. Under self-play (the default) a single
// bank plays every seat and the buffer holds past selves; otherwise the seats
// hold independent agents updated simultaneously. ac/ppo are the beta=0
// special cases of the aligned updates and share the exact code path.
class Trainer {
 public:
  explicit Trainer(const RunConfig& rc);

  IterStats iterate();
  int64_t iteration() const { return iter_; }
  int num_players() const { return players_; }
  const RunConfig& config() const { return rc_; }

  bool discrete() const { return rc_.env != EnvId::kNegotiation; }
  DiscreteActorNet& actor(int i) { return actors_[bank(i)]; }
  CriticNet& critic(int i) { return critics_[bank(i)]; }
  CriticNet& target_critic(int i) { return targets_[bank(i)]; }
  ContinuousAgentNet& agent(int i) { return agents_[bank(i)]; }
  ContinuousAgentNet& target_agent(int i) { return target_agents_[bank(i)]; }

  // Checkpoint of seat i's policy parameters, with enough meta to rebuild.
  Checkpoint snapshot(int i);
  void save_snapshot(int i, const std::string& path);

  // Exposed for tests.
  TrajectoryBatch rollout_group(int group);
  int obs_dim() const { return obs_dim_; }
  int n_actions() const { return n_actions_; }

 private:
  struct GroupData;  // advantages and loss constants for one rollout group

  // Seat to parameter-bank index. Under self-play every seat resolves to the
  // single shared bank; otherwise each seat owns its own nets and buffer.
  int bank(int seat) const { return rc_.trainer.self_play ? 0 : seat; }
  int num_banks() const { return rc_.trainer.self_play ? 1 : players_; }

  void init_nets();
  GroupData prepare_group(int group, TrajectoryBatch&& batch);
  void update_discrete(GroupData& gd, IterStats& st);
  void update_continuous(GroupData& gd, IterStats& st);
  void critic_update_discrete(GroupData& gd, IterStats& st);
  void critic_update_continuous(GroupData& gd, IterStats& st);

  RunConfig rc_;
  int players_ = 2;
  int obs_dim_ = 0, n_actions_ = 0;
  int64_t iter_ = 0;
  double eff_beta_ = 0.0;
  std::vector<QuadrantMode> masked_;

  // discrete stack
  std::vector<DiscreteActorNet> actors_;
  std::vector<CriticNet> critics_, targets_;
  std::vector<ReplayBuffer<DiscreteActorNet>> bufs_;
  // continuous stack
  std::vector<ContinuousAgentNet> agents_, target_agents_;
  std::vector<ReplayBuffer<ContinuousAgentNet>> agent_bufs_;

  std::vector<Adam> actor_opt_, critic_opt_;

  IpdEnv ipd_;
  CoinEnv coin_;
  NegotiationEnv nego_;
  std::unique_ptr<MatrixGameEnv> matrix_;
};

// Restores a policy checkpoint written by Trainer::save_snapshot.
DiscreteActorNet load_discrete_actor(const std::string& path,
                                     Checkpoint* meta_out = nullptr);
ContinuousAgentNet load_continuous_agent(const std::string& path,
                                         Checkpoint* meta_out = nullptr);

// ---- run loop ---------------------------------------------------------------

// Full training run under rc.out: effective config, run-log CSV, periodic and
// final checkpoints. Returns a process exit code (0 ok, 3 numerical abort
// with the last good checkpoints left in place).
int train_loop(const RunConfig& rc);

// FNV-1a over the CSV with the trailing wall-clock field of each row
// stripped, so timing noise does not break reproducibility comparisons.
uint64_t run_log_hash(const std::string& csv_text);

}  // namespace adalign
