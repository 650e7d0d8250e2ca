#include "adalign/trainers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "adalign/analysis.hpp"

namespace fs = std::filesystem;

namespace adalign {

namespace {

// Inverse-CDF sample from one row of logits; returns the action and writes
// its log-probability. One uniform draw per call regardless of outcome.
int sample_logits_row(const double* z, int n, RngStream& rng, double* logp_out) {
  double m = z[0];
  for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(z[i] - m);
  double u = rng.uniform() * sum;
  int a = n - 1;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += std::exp(z[i] - m);
    if (u < acc) {
      a = i;
      break;
    }
  }
  *logp_out = (z[a] - m) - std::log(sum);
  return a;
}

// ---- scripted seats ---------------------------------------------------------

enum class Kind { kAC, kAD, kTFT, kRandom };

Kind kind_from_string(const std::string& s) {
  if (s == "AC") return Kind::kAC;
  if (s == "AD") return Kind::kAD;
  if (s == "TFT") return Kind::kTFT;
  if (s == "Random") return Kind::kRandom;
  throw ConfigError("unknown scripted policy '" + s +
                    "' (expected AC|AD|TFT|Random)");
}

class IpdScriptedSeat : public SeatPolicy {
 public:
  explicit IpdScriptedSeat(Kind k) : kind_(k) {}
  void begin_episode() override {}
  void act(const double* obs, RngStream& rng, double* out) override {
    int a = 0;
    switch (kind_) {
      case Kind::kAC: a = 0; break;
      case Kind::kAD: a = 1; break;
      case Kind::kRandom: a = static_cast<int>(rng.randint(2)); break;
      case Kind::kTFT: {
        if (obs[0] > 0.5) {
          a = 0;  // cooperate on the first move
        } else {
          int j = 0;
          for (int i = 0; i < 4; ++i)
            if (obs[1 + i] > 0.5) j = i;
          a = j % 2;  // mirror the opponent's previous move
        }
        break;
      }
    }
    out[0] = a;
  }

 private:
  Kind kind_;
};

class CoinScriptedSeat : public SeatPolicy {
 public:
  CoinScriptedSeat(Kind k, int grid) : kind_(k), env_(CoinConfig{1, grid, false}) {
    if (k == Kind::kTFT)
      throw ConfigError("TFT is not defined for the coin game");
  }
  void begin_episode() override {}
  void act(const double* obs, RngStream& rng, double* out) override {
    const int cells = env_.config().grid * env_.config().grid;
    if (kind_ == Kind::kRandom) {
      out[0] = static_cast<int>(rng.randint(kCoinNumMoves));
      return;
    }
    int me = -1, own_coin = -1, opp_coin = -1;
    for (int c = 0; c < cells; ++c) {
      if (obs[c] > 0.5) me = c;
      if (obs[2 * cells + c] > 0.5) own_coin = c;
      if (obs[3 * cells + c] > 0.5) opp_coin = c;
    }
    int target = -1;
    if (kind_ == Kind::kAC) {
      target = own_coin;  // ignore the opponent's coin entirely
    } else {
      target = own_coin >= 0 ? own_coin : opp_coin;
    }
    if (target < 0 || me < 0) {
      out[0] = kCoinStay;
      return;
    }
    int best = kCoinStay, best_d = env_.torus_distance(me, target);
    for (int mv = 0; mv < kCoinNumMoves; ++mv) {
      int d = env_.torus_distance(env_.apply_move(me, mv), target);
      if (d < best_d) {
        best = mv;
        best_d = d;
      }
    }
    out[0] = best;
  }

 private:
  Kind kind_;
  CoinEnv env_;  // geometry helper only, never stepped
};

class NegotiationScriptedSeat : public SeatPolicy {
 public:
  explicit NegotiationScriptedSeat(Kind k) : kind_(k) {
    if (k == Kind::kTFT)
      throw ConfigError("TFT is not defined for the negotiation game");
  }
  void begin_episode() override {}
  void act(const double* obs, RngStream& rng, double* out) override {
    const double* own_v = obs + kNegItems;
    const double* opp_v = obs + 2 * kNegItems;
    for (int i = 0; i < kNegItems; ++i) {
      switch (kind_) {
        case Kind::kAC:
          out[i] = own_v[i] > opp_v[i] ? kNegMaxProposal : 1.0;
          break;
        case Kind::kAD: out[i] = kNegMaxProposal; break;
        case Kind::kRandom: out[i] = rng.uniform(0.0, kNegMaxProposal); break;
        case Kind::kTFT: break;  // rejected in the constructor
      }
    }
  }

 private:
  Kind kind_;
};

class MatrixScriptedSeat : public SeatPolicy {
 public:
  MatrixScriptedSeat(Kind k, const MatrixGameConfig& cfg) : kind_(k), cfg_(cfg) {
    if (k == Kind::kTFT && (cfg.n_players != 2 || cfg.arity != 2))
      throw ConfigError("TFT needs the 2-player binary matrix game");
  }
  void begin_episode() override {}
  void act(const double* obs, RngStream& rng, double* out) override {
    int a = 0;
    switch (kind_) {
      case Kind::kAC: a = 0; break;
      case Kind::kAD: a = 1; break;
      case Kind::kRandom: a = static_cast<int>(rng.randint(cfg_.arity)); break;
      case Kind::kTFT: {
        if (obs[0] > 0.5) {
          a = 0;
        } else {
          int j = 0;
          for (int i = 0; i < cfg_.num_joint(); ++i)
            if (obs[1 + i] > 0.5) j = i;
          a = j % cfg_.arity;  // seat-relative joint: low digit is theirs
        }
        break;
      }
    }
    out[0] = a;
  }

 private:
  Kind kind_;
  MatrixGameConfig cfg_;
};

class DiscreteNetSeat : public SeatPolicy {
 public:
  explicit DiscreteNetSeat(const DiscreteActorNet& net) : net_(net) {}
  void begin_episode() override { h_ = Tensor(1, net_.hidden); }
  void act(const double* obs, RngStream& rng, double* out) override {
    Tape tp;
    auto b = net_.bind(tp, false);
    Tensor x(1, net_.obs_dim);
    std::copy(obs, obs + net_.obs_dim, x.data.begin());
    auto [lg, h2] = b.logits(tp.constant(std::move(x)), tp.constant(h_));
    h_ = h2.val();
    double lp;
    out[0] = sample_logits_row(lg.val().data.data(),
                               static_cast<int>(net_.n_actions), rng, &lp);
  }

 private:
  DiscreteActorNet net_;
  Tensor h_;
};

class ContinuousNetSeat : public SeatPolicy {
 public:
  explicit ContinuousNetSeat(const ContinuousAgentNet& net) : net_(net) {}
  void begin_episode() override { h_ = Tensor(1, net_.hidden); }
  void act(const double* obs, RngStream& rng, double* out) override {
    Tape tp;
    auto b = net_.bind(tp, false);
    Tensor x(1, net_.obs_dim);
    std::copy(obs, obs + net_.obs_dim, x.data.begin());
    auto [feat, h2] = b.trunk(tp.constant(std::move(x)), tp.constant(h_));
    h_ = h2.val();
    Var mraw = b.mean_raw(feat);
    sample_squashed_row(mraw.val().data.data(), net_.log_std.data.data(),
                        net_.act_dim, rng, out);
  }

 private:
  ContinuousAgentNet net_;
  Tensor h_;
};

}  // namespace

std::unique_ptr<SeatPolicy> make_scripted_seat(EnvId env, const std::string& kind,
                                               const EnvConfig& envc) {
  Kind k = kind_from_string(kind);
  switch (env) {
    case EnvId::kIpd: return std::make_unique<IpdScriptedSeat>(k);
    case EnvId::kCoin: return std::make_unique<CoinScriptedSeat>(k, envc.grid);
    case EnvId::kNegotiation:
      return std::make_unique<NegotiationScriptedSeat>(k);
    case EnvId::kMatrix: {
      MatrixGameConfig cfg =
          envc.payoffs == "public_goods"
              ? MatrixGameConfig::public_goods(envc.players,
                                               envc.public_goods_mult,
                                               envc.episode_length)
              : MatrixGameConfig::ipd_equivalent(envc.episode_length);
      return std::make_unique<MatrixScriptedSeat>(k, cfg);
    }
  }
  throw ConfigError("make_scripted_seat: bad env");
}

std::unique_ptr<SeatPolicy> make_net_seat(const DiscreteActorNet& net) {
  return std::make_unique<DiscreteNetSeat>(net);
}

std::unique_ptr<SeatPolicy> make_net_seat(const ContinuousAgentNet& net) {
  return std::make_unique<ContinuousNetSeat>(net);
}

IpdPolicyFactory ipd_policy_factory(const DiscreteActorNet& net) {
  // Adapts the generic seat to the probe's IPD-specific interface.
  class Adapter : public IpdSeatPolicy {
   public:
    explicit Adapter(const DiscreteActorNet& n) : seat_(n) {}
    void reset() override { seat_.begin_episode(); }
    int act(const double* obs, RngStream& rng) override {
      double a;
      seat_.act(obs, rng, &a);
      return static_cast<int>(a);
    }

   private:
    DiscreteNetSeat seat_;
  };
  DiscreteActorNet copy = net;
  return [copy]() { return std::make_unique<Adapter>(copy); };
}

// ---- trajectory storage -----------------------------------------------------

void TrajectoryBatch::init(int players_, int B_, int T_, int obs_dim_,
                           int act_dim_) {
  players = players_;
  B = B_;
  T = T_;
  obs_dim = obs_dim_;
  act_dim = act_dim_;
  obs.assign(players, std::vector<Tensor>(T));
  actions.assign(players, std::vector<Tensor>(T));
  rewards.assign(players, std::vector<std::vector<double>>(
                              T, std::vector<double>(B, 0.0)));
  logp.assign(players, std::vector<std::vector<double>>(
                           T, std::vector<double>(B, 0.0)));
}

double TrajectoryBatch::mean_return(int player) const {
  double sum = 0.0;
  for (int t = 0; t < T; ++t)
    for (int b = 0; b < B; ++b) sum += rewards[player][t][b];
  return sum / B;
}

// ---- trainer ----------------------------------------------------------------

struct Trainer::GroupData {
  int g = 0;
  TrajectoryBatch batch;
  std::vector<Tensor> w;      // [T] x [B,1]: per-step log-prob weights
  std::vector<Tensor> astar;  // [T] x [B,1]: clipped-surrogate advantages
  std::vector<Tensor> td;     // [T] x [B,1]: critic regression targets
  std::vector<Tensor> feats;  // [T] x [B,H]: detached trunk features (cont.)
};

Trainer::Trainer(const RunConfig& rc) : rc_(rc) {
  validate(rc_);
  players_ = rc_.env == EnvId::kMatrix ? rc_.envc.players : 2;
  eff_beta_ = (rc_.algo == Algo::kAc || rc_.algo == Algo::kPpo)
                  ? 0.0
                  : rc_.trainer.beta;
  for (char c : rc_.trainer.quadrants)
    masked_.push_back(quadrant_mode_from_string(std::string(1, c)));

  ipd_ = IpdEnv(IpdConfig{rc_.envc.episode_length, IpdPayoffs::standard_dilemma()});
  coin_ = CoinEnv(CoinConfig{rc_.envc.episode_length, rc_.envc.grid,
                             rc_.envc.alternating});
  nego_ = NegotiationEnv(NegotiationConfig{rc_.envc.episode_length});
  if (rc_.env == EnvId::kMatrix) {
    MatrixGameConfig mc =
        rc_.envc.payoffs == "public_goods"
            ? MatrixGameConfig::public_goods(players_, rc_.envc.public_goods_mult,
                                             rc_.envc.episode_length)
            : MatrixGameConfig::ipd_equivalent(rc_.envc.episode_length);
    matrix_ = std::make_unique<MatrixGameEnv>(mc);
  }

  switch (rc_.env) {
    case EnvId::kIpd:
      obs_dim_ = kIpdObsDim;
      n_actions_ = 2;
      break;
    case EnvId::kCoin:
      obs_dim_ = coin_.obs_dim();
      n_actions_ = kCoinNumMoves;
      break;
    case EnvId::kMatrix:
      obs_dim_ = matrix_->obs_dim();
      n_actions_ = matrix_->config().arity;
      break;
    case EnvId::kNegotiation:
      obs_dim_ = kNegObsDim;
      n_actions_ = 0;
      break;
  }
  init_nets();
}

void Trainer::init_nets() {
  const int H = rc_.trainer.hidden;
  for (int i = 0; i < num_banks(); ++i) {
    actor_opt_.emplace_back(rc_.trainer.actor_lr);
    critic_opt_.emplace_back(rc_.trainer.critic_lr);
    if (discrete()) {
      RngStream ar(rc_.seed, "init", i, 0);
      RngStream cr(rc_.seed, "init", i, 1);
      actors_.emplace_back(obs_dim_, n_actions_, H, ar);
      critics_.emplace_back(obs_dim_, H, cr);
      targets_.push_back(critics_.back());
      bufs_.emplace_back(rc_.trainer.buffer_capacity);
    } else {
      RngStream ar(rc_.seed, "init", i, 0);
      agents_.emplace_back(obs_dim_, kNegItems, H, ar);
      target_agents_.push_back(agents_.back());
      agent_bufs_.emplace_back(rc_.trainer.buffer_capacity);
    }
  }
}

TrajectoryBatch Trainer::rollout_group(int g) {
  const TrainerConfig& tc = rc_.trainer;
  const int B = tc.batch_size, T = rc_.envc.episode_length;
  const int H = tc.hidden;

  TrajectoryBatch batch;
  batch.init(players_, B, T, obs_dim_, discrete() ? 1 : kNegItems);

  RngStream rng(rc_.seed, "rollout", static_cast<uint64_t>(iter_),
                static_cast<uint64_t>(g));
  RngStream brng(rc_.seed, "buffer", static_cast<uint64_t>(iter_),
                 static_cast<uint64_t>(g));

  Tape tp;
  if (discrete()) {
    // Seat g plays live; every other seat is drawn from its snapshot buffer
    // with the configured off-policy probability.
    std::vector<DiscreteActorNet> nets;
    nets.reserve(players_);
    for (int s = 0; s < players_; ++s) {
      if (s == g) {
        nets.push_back(actors_[bank(s)]);
      } else {
        const DiscreteActorNet* snap =
            bufs_[bank(s)].sample(tc.off_policy_ratio, brng);
        nets.push_back(snap ? *snap : actors_[bank(s)]);
      }
    }
    std::vector<DiscreteActorNet::Bound> bounds;
    std::vector<Var> h;
    for (int s = 0; s < players_; ++s) {
      bounds.push_back(nets[s].bind(tp, false));
      h.push_back(tp.constant(Tensor(B, H)));
    }

    std::vector<IpdState> ipd_st;
    std::vector<CoinState> coin_st;
    std::vector<MatrixState> mat_st;
    if (rc_.env == EnvId::kIpd) {
      ipd_st.resize(B);
      for (auto& s : ipd_st) ipd_.reset(s);
    } else if (rc_.env == EnvId::kCoin) {
      coin_st.resize(B);
      for (auto& s : coin_st) coin_.reset(s, rng);
    } else {
      mat_st.resize(B);
      for (auto& s : mat_st) matrix_->reset(s);
    }

    std::vector<std::vector<int>> acts(players_, std::vector<int>(B));
    for (int t = 0; t < T; ++t) {
      for (int s = 0; s < players_; ++s) {
        Tensor ob(B, obs_dim_);
        for (int b = 0; b < B; ++b) {
          double* row = &ob.data[static_cast<size_t>(b) * obs_dim_];
          if (rc_.env == EnvId::kIpd) ipd_.obs(ipd_st[b], s, row);
          else if (rc_.env == EnvId::kCoin) coin_.obs(coin_st[b], s, row);
          else matrix_->obs(mat_st[b], s, row);
        }
        batch.obs[s][t] = ob;
      }
      for (int s = 0; s < players_; ++s) {
        auto [lg, h2] =
            bounds[s].logits(tp.constant(batch.obs[s][t]), h[s]);
        h[s] = h2;
        const Tensor& L = lg.val();
        Tensor atn(B, 1);
        for (int b = 0; b < B; ++b) {
          double lp;
          int a = sample_logits_row(&L.data[static_cast<size_t>(b) * n_actions_],
                                    n_actions_, rng, &lp);
          acts[s][b] = a;
          atn.data[b] = a;
          batch.logp[s][t][b] = lp;
        }
        batch.actions[s][t] = std::move(atn);
      }
      for (int b = 0; b < B; ++b) {
        if (rc_.env == EnvId::kIpd) {
          auto [r1, r2] = ipd_.step(ipd_st[b], acts[0][b], acts[1][b]);
          batch.rewards[0][t][b] = r1;
          batch.rewards[1][t][b] = r2;
        } else if (rc_.env == EnvId::kCoin) {
          auto [r1, r2] = coin_.step(coin_st[b], acts[0][b], acts[1][b], rng);
          batch.rewards[0][t][b] = r1;
          batch.rewards[1][t][b] = r2;
        } else {
          std::vector<int> ja(players_);
          for (int s = 0; s < players_; ++s) ja[s] = acts[s][b];
          std::vector<double> r = matrix_->step(mat_st[b], ja);
          for (int s = 0; s < players_; ++s) batch.rewards[s][t][b] = r[s];
        }
      }
    }
  } else {
    std::vector<ContinuousAgentNet> nets;
    nets.reserve(players_);
    for (int s = 0; s < players_; ++s) {
      if (s == g) {
        nets.push_back(agents_[bank(s)]);
      } else {
        const ContinuousAgentNet* snap =
            agent_bufs_[bank(s)].sample(tc.off_policy_ratio, brng);
        nets.push_back(snap ? *snap : agents_[bank(s)]);
      }
    }
    std::vector<ContinuousAgentNet::Bound> bounds;
    std::vector<Var> h;
    for (int s = 0; s < players_; ++s) {
      bounds.push_back(nets[s].bind(tp, false));
      h.push_back(tp.constant(Tensor(B, H)));
    }
    std::vector<NegotiationState> st(B);
    for (auto& s : st) nego_.reset(s, rng);

    for (int t = 0; t < T; ++t) {
      for (int s = 0; s < players_; ++s) {
        Tensor ob(B, obs_dim_);
        for (int b = 0; b < B; ++b)
          nego_.obs(st[b], s, &ob.data[static_cast<size_t>(b) * obs_dim_]);
        batch.obs[s][t] = std::move(ob);
      }
      std::vector<Var> mraws(players_);
      for (int s = 0; s < players_; ++s) {
        auto [feat, h2] = bounds[s].trunk(tp.constant(batch.obs[s][t]), h[s]);
        h[s] = h2;
        mraws[s] = bounds[s].mean_raw(feat);
        const Tensor& M = mraws[s].val();
        Tensor atn(B, kNegItems);
        for (int b = 0; b < B; ++b)
          sample_squashed_row(&M.data[static_cast<size_t>(b) * kNegItems],
                              nets[s].log_std.data.data(), kNegItems, rng,
                              &atn.data[static_cast<size_t>(b) * kNegItems]);
        batch.actions[s][t] = std::move(atn);
      }
      for (int s = 0; s < players_; ++s) {
        Var lp = squashed_log_prob(tp, mraws[s], bounds[s].log_std,
                                   batch.actions[s][t]);
        for (int b = 0; b < B; ++b) batch.logp[s][t][b] = lp.val().data[b];
      }
      for (int b = 0; b < B; ++b) {
        auto [r1, r2] =
            nego_.step(st[b], &batch.actions[0][t].data[static_cast<size_t>(b) * kNegItems],
                       &batch.actions[1][t].data[static_cast<size_t>(b) * kNegItems], rng);
        batch.rewards[0][t][b] = r1;
        batch.rewards[1][t][b] = r2;
      }
    }
  }
  return batch;
}

namespace {

// Critic values over a stored observation sequence, no gradients.
std::vector<std::vector<double>> eval_values_discrete(
    CriticNet& net, const std::vector<Tensor>& obs_seq) {
  const int T = static_cast<int>(obs_seq.size());
  const int B = static_cast<int>(obs_seq[0].rows);
  std::vector<std::vector<double>> out(T, std::vector<double>(B, 0.0));
  Tape tp;
  auto bd = net.bind(tp, false);
  Var h = tp.constant(Tensor(B, net.hidden));
  for (int t = 0; t < T; ++t) {
    auto [v, h2] = bd.value(tp.constant(obs_seq[t]), h,
                            static_cast<double>(t) / T);
    h = h2;
    for (int b = 0; b < B; ++b) out[t][b] = v.val().data[b];
  }
  return out;
}

struct ContValues {
  std::vector<std::vector<double>> v;
  std::vector<Tensor> feats;
};

ContValues eval_values_continuous(ContinuousAgentNet& net,
                                  const std::vector<Tensor>& obs_seq) {
  const int T = static_cast<int>(obs_seq.size());
  const int B = static_cast<int>(obs_seq[0].rows);
  ContValues out;
  out.v.assign(T, std::vector<double>(B, 0.0));
  out.feats.resize(T);
  Tape tp;
  auto bd = net.bind(tp, false);
  Var h = tp.constant(Tensor(B, net.hidden));
  for (int t = 0; t < T; ++t) {
    auto [feat, h2] = bd.trunk(tp.constant(obs_seq[t]), h);
    h = h2;
    Var v = bd.value(feat, static_cast<double>(t) / T);
    out.feats[t] = feat.val();
    for (int b = 0; b < B; ++b) out.v[t][b] = v.val().data[b];
  }
  return out;
}

void normalize_pooled(std::vector<Tensor>& xs) {
  double sum = 0.0, sq = 0.0;
  int64_t n = 0;
  for (const Tensor& x : xs)
    for (double v : x.data) {
      sum += v;
      sq += v * v;
      ++n;
    }
  const double mean = sum / n;
  const double var = std::max(0.0, sq / n - mean * mean);
  const double inv = 1.0 / (std::sqrt(var) + 1e-8);
  for (Tensor& x : xs)
    for (double& v : x.data) v = (v - mean) * inv;
}

}  // namespace

Trainer::GroupData Trainer::prepare_group(int g, TrajectoryBatch&& batch) {
  const TrainerConfig& tc = rc_.trainer;
  GroupData gd;
  gd.g = g;
  gd.batch = std::move(batch);
  const int B = gd.batch.B, T = gd.batch.T;
  const GaeConfig gae_cfg{tc.gamma, tc.gae_lambda};
  const bool ppo_like = rc_.algo == Algo::kPpo || rc_.algo == Algo::kPadalign;

  // Values from the live critic (pre-update) and targets from the EMA net.
  std::vector<std::vector<double>> v_self, v_targ;
  if (discrete()) {
    v_self = eval_values_discrete(critics_[bank(g)], gd.batch.obs[g]);
    v_targ = eval_values_discrete(targets_[bank(g)], gd.batch.obs[g]);
  } else {
    ContValues cv = eval_values_continuous(agents_[bank(g)], gd.batch.obs[g]);
    v_self = std::move(cv.v);
    gd.feats = std::move(cv.feats);
    v_targ =
        eval_values_continuous(target_agents_[bank(g)], gd.batch.obs[g]).v;
  }

  gd.td.assign(T, Tensor(B, 1));
  for (int t = 0; t < T; ++t)
    for (int b = 0; b < B; ++b)
      gd.td[t].data[b] = gd.batch.rewards[g][t][b] +
                         (t + 1 < T ? tc.gamma * v_targ[t + 1][b] : 0.0);

  // Per-episode GAE for the updating seat, and for the opponents when the
  // alignment term is active.
  std::vector<std::vector<std::vector<double>>> adv(
      players_);  // [player][b][t]; only [g] and, with beta, the rest
  auto gae_for = [&](int player, const std::vector<std::vector<double>>& vals) {
    std::vector<std::vector<double>> out(B);
    std::vector<double> r_col(T), v_col(T);
    for (int b = 0; b < B; ++b) {
      for (int t = 0; t < T; ++t) {
        r_col[t] = gd.batch.rewards[player][t][b];
        v_col[t] = vals[t][b];
      }
      out[b] = gae(r_col, v_col, 0.0, gae_cfg);
    }
    return out;
  };
  adv[g] = gae_for(g, v_self);

  // Ingredients of the alignment products are one-step TD residuals rather
  // than the lambda-smoothed estimates above. A residual at step k holds only
  // step-k randomness, so past residuals share no sampled rewards with the
  // opponent's residual at step t; lambda-smoothed estimates do (their return
  // tails reach step t), and that overlap correlates the product with the
  // joint payoff at t itself instead of with how the players' fortunes
  // co-move. In expectation the residual is the action-value advantage, which
  // is what the alignment term is defined over.
  std::vector<std::vector<std::vector<double>>> res(players_);
  if (eff_beta_ != 0.0) {
    const GaeConfig res_cfg{tc.gamma, 0.0};
    auto residuals_for = [&](int player,
                             const std::vector<std::vector<double>>& vals) {
      std::vector<std::vector<double>> out(B);
      std::vector<double> r_col(T), v_col(T);
      for (int b = 0; b < B; ++b) {
        for (int t = 0; t < T; ++t) {
          r_col[t] = gd.batch.rewards[player][t][b];
          v_col[t] = vals[t][b];
        }
        out[b] = gae(r_col, v_col, 0.0, res_cfg);
      }
      return out;
    };
    res[g] = residuals_for(g, v_self);
    for (int j = 0; j < players_; ++j) {
      if (j == g) continue;
      std::vector<std::vector<double>> v_opp =
          discrete()
              ? eval_values_discrete(critics_[bank(j)], gd.batch.obs[j])
              : eval_values_continuous(agents_[bank(j)], gd.batch.obs[j]).v;
      res[j] = residuals_for(j, v_opp);
    }
  }

  // Center the advantage estimates per step across the batch before they feed
  // the REINFORCE weights and the alignment products. The alignment term is a
  // product of advantage sums, so a common offset (cold or lagging critic)
  // enters squared and pushes every action the same way; an action-value
  // critic minus its policy mean is centered per state by construction, and
  // the per-step batch mean is the sampled stand-in for that baseline. The
  // clipped-surrogate path instead normalizes the composed advantage below.
  if (!ppo_like) {
    auto center = [&](std::vector<std::vector<double>>& a) {
      if (a.empty()) return;
      for (int t = 0; t < T; ++t) {
        double m = 0.0;
        for (int b = 0; b < B; ++b) m += a[b][t];
        m /= B;
        for (int b = 0; b < B; ++b) a[b][t] -= m;
      }
    };
    center(adv[g]);
    for (int p = 0; p < players_; ++p) center(res[p]);
  }

  if (ppo_like) {
    gd.astar.assign(T, Tensor(B, 1));
  } else {
    gd.w.assign(T, Tensor(B, 1));
  }
  std::vector<double> gpow(T);
  double gp = 1.0;
  for (int t = 0; t < T; ++t) {
    gpow[t] = gp;
    gp *= tc.gamma;
  }

  for (int b = 0; b < B; ++b) {
    AdvantageSeries series;
    series.gamma = tc.aa_gamma;
    series.beta = eff_beta_;
    if (eff_beta_ != 0.0) {
      series.advantages.resize(players_);
      for (int p = 0; p < players_; ++p) series.advantages[p] = res[p][b];
    }
    if (ppo_like) {
      std::vector<double> astar = adv[g][b];
      if (eff_beta_ != 0.0) {
        for (int j = 0; j < players_; ++j) {
          if (j == g) continue;
          std::vector<double> extra = modified_advantage(series, g, j);
          for (int t = 0; t < T; ++t) extra[t] -= res[g][b][t];
          if (!masked_.empty())
            extra = quadrant_mask(extra, series, masked_, g, j);
          for (int t = 0; t < T; ++t) astar[t] += extra[t];
        }
      }
      for (int t = 0; t < T; ++t) gd.astar[t].data[b] = astar[t];
    } else {
      for (int t = 0; t < T; ++t)
        gd.w[t].data[b] = gpow[t] * adv[g][b][t];
      if (eff_beta_ != 0.0) {
        for (int j = 0; j < players_; ++j) {
          if (j == g) continue;
          std::vector<double> c =
              alignment_term_coefficients(series, tc.align_variant, g, j);
          if (!masked_.empty()) c = quadrant_mask(c, series, masked_, g, j);
          for (int t = 0; t < T; ++t) gd.w[t].data[b] += c[t];
        }
      }
    }
  }

  if (ppo_like && tc.normalize_advantages) normalize_pooled(gd.astar);
  return gd;
}

void Trainer::update_discrete(GroupData& gd, IterStats& st) {
  const TrainerConfig& tc = rc_.trainer;
  const int g = gd.g, B = gd.batch.B, T = gd.batch.T;
  const bool ppo_like = rc_.algo == Algo::kPpo || rc_.algo == Algo::kPadalign;
  const int epochs = ppo_like ? tc.ppo_epochs : 1;

  for (int e = 0; e < epochs; ++e) {
    Tape tp;
    auto bd = actors_[bank(g)].bind(tp, true);
    Var h = tp.constant(Tensor(B, tc.hidden));
    Var obj_sum = tp.constant(0.0);    // policy-gradient part, to maximize
    Var plogp_sum = tp.constant(0.0);  // sum of p*log p (negative entropy)
    for (int t = 0; t < T; ++t) {
      auto [lg, h2] = bd.logits(tp.constant(gd.batch.obs[g][t]), h);
      h = h2;
      Var lsm = tp.log_softmax(lg);
      Tensor onehot(B, n_actions_);
      for (int b = 0; b < B; ++b)
        onehot.at(b, static_cast<int64_t>(gd.batch.actions[g][t].data[b])) = 1.0;
      Var chosen = tp.sum_cols(tp.mul(lsm, tp.constant(std::move(onehot))));
      if (ppo_like) {
        Tensor old(B, 1);
        for (int b = 0; b < B; ++b) old.data[b] = gd.batch.logp[g][t][b];
        Var ratio = tp.exp(tp.sub(chosen, tp.constant(std::move(old))));
        Var a = tp.constant(gd.astar[t]);
        Var s1 = tp.mul(ratio, a);
        Var s2 = tp.mul(tp.clamp(ratio, 1.0 - tc.ppo_clip, 1.0 + tc.ppo_clip), a);
        obj_sum = tp.add(obj_sum, tp.sum_all(tp.minimum(s1, s2)));
      } else {
        obj_sum =
            tp.add(obj_sum, tp.sum_all(tp.mul(chosen, tp.constant(gd.w[t]))));
      }
      Var p = tp.softmax(lg);
      plogp_sum = tp.add(plogp_sum, tp.sum_all(tp.mul(p, lsm)));
    }
    // The REINFORCE objective is a per-episode sum over t, so the entropy
    // bonus sums over t as well; the PPO surrogate is a per-step mean and
    // takes the per-step mean entropy. Either way the coefficient weighs
    // entropy against the advantage scale of a single step.
    const double pg_scale = ppo_like ? 1.0 / (B * T) : 1.0 / B;
    Var loss = tp.add(tp.scale(obj_sum, -pg_scale),
                      tp.scale(plogp_sum, tc.entropy_coef * pg_scale));
    tp.backward(loss);
    std::vector<Tensor> grads = collect_grads(bd.leaves);
    double pre = clip_global_norm(grads, tc.grad_clip);
    actor_opt_[bank(g)].step(actors_[bank(g)].named_params(), grads);
    if (e == epochs - 1) {
      st.actor_loss[g] = loss.val().data[0];
      st.entropy[g] = -plogp_sum.val().data[0] / (B * T);
      st.actor_grad_norm[g] = pre;
    }
  }
}

void Trainer::critic_update_discrete(GroupData& gd, IterStats& st) {
  const TrainerConfig& tc = rc_.trainer;
  const int g = gd.g, B = gd.batch.B, T = gd.batch.T;
  Tape tp;
  auto bd = critics_[bank(g)].bind(tp, true);
  Var h = tp.constant(Tensor(B, tc.hidden));
  Var sq_sum = tp.constant(0.0);
  for (int t = 0; t < T; ++t) {
    auto [v, h2] = bd.value(tp.constant(gd.batch.obs[g][t]), h,
                            static_cast<double>(t) / T);
    h = h2;
    Var diff = tp.sub(v, tp.constant(gd.td[t]));
    sq_sum = tp.add(sq_sum, tp.sum_all(tp.mul(diff, diff)));
  }
  Var loss = tp.scale(sq_sum, 1.0 / (B * T));
  tp.backward(loss);
  std::vector<Tensor> grads = collect_grads(bd.leaves);
  double pre = clip_global_norm(grads, tc.grad_clip);
  critic_opt_[bank(g)].step(critics_[bank(g)].named_params(), grads);
  ema_update(targets_[bank(g)].named_params(), critics_[bank(g)].named_params(),
             tc.ema_decay);
  st.critic_loss[g] = loss.val().data[0];
  st.critic_grad_norm[g] = pre;
}

namespace {

// Splits an agent net's parameter list into actor side (trunk, policy head,
// log-std) and critic side (value head).
void split_params(NamedParams all, const std::vector<Tensor>& grads,
                  NamedParams& actor_p, std::vector<Tensor>& actor_g,
                  NamedParams& critic_p, std::vector<Tensor>& critic_g) {
  for (size_t i = 0; i < all.size(); ++i) {
    if (all[i].first.rfind("critic", 0) == 0) {
      critic_p.push_back(all[i]);
      if (!grads.empty()) critic_g.push_back(grads[i]);
    } else {
      actor_p.push_back(all[i]);
      if (!grads.empty()) actor_g.push_back(grads[i]);
    }
  }
}

}  // namespace

void Trainer::update_continuous(GroupData& gd, IterStats& st) {
  const TrainerConfig& tc = rc_.trainer;
  const int g = gd.g, B = gd.batch.B, T = gd.batch.T;
  const bool ppo_like = rc_.algo == Algo::kPpo || rc_.algo == Algo::kPadalign;
  const int epochs = ppo_like ? tc.ppo_epochs : 1;
  const double ent_const =
      kNegItems * 0.5 * std::log(2.0 * M_PI * std::exp(1.0));

  for (int e = 0; e < epochs; ++e) {
    Tape tp;
    auto bd = agents_[bank(g)].bind(tp, true);
    Var h = tp.constant(Tensor(B, tc.hidden));
    Var obj_sum = tp.constant(0.0);
    for (int t = 0; t < T; ++t) {
      auto [feat, h2] = bd.trunk(tp.constant(gd.batch.obs[g][t]), h);
      h = h2;
      Var mraw = bd.mean_raw(feat);
      Var lp = squashed_log_prob(tp, mraw, bd.log_std, gd.batch.actions[g][t]);
      if (ppo_like) {
        Tensor old(B, 1);
        for (int b = 0; b < B; ++b) old.data[b] = gd.batch.logp[g][t][b];
        Var ratio = tp.exp(tp.sub(lp, tp.constant(std::move(old))));
        Var a = tp.constant(gd.astar[t]);
        Var s1 = tp.mul(ratio, a);
        Var s2 = tp.mul(tp.clamp(ratio, 1.0 - tc.ppo_clip, 1.0 + tc.ppo_clip), a);
        obj_sum = tp.add(obj_sum, tp.sum_all(tp.minimum(s1, s2)));
      } else {
        obj_sum = tp.add(obj_sum, tp.sum_all(tp.mul(lp, tp.constant(gd.w[t]))));
      }
    }
    const double pg_scale = ppo_like ? 1.0 / (B * T) : 1.0 / B;
    // Entropy of the pre-squash Gaussian: sum(log_std) + const. The constant
    // carries no gradient, so only log_std enters the loss.
    Var loss = tp.add(tp.scale(obj_sum, -pg_scale),
                      tp.scale(tp.sum_all(bd.log_std), -tc.entropy_coef));
    tp.backward(loss);
    std::vector<Tensor> grads = collect_grads(bd.leaves);
    NamedParams actor_p, critic_p;
    std::vector<Tensor> actor_g, critic_g;
    split_params(agents_[bank(g)].named_params(), grads, actor_p, actor_g,
                 critic_p,
                 critic_g);
    double pre = clip_global_norm(actor_g, tc.grad_clip);
    actor_opt_[bank(g)].step(actor_p, actor_g);
    if (e == epochs - 1) {
      st.actor_loss[g] = loss.val().data[0];
      double lsum = 0.0;
      for (double v : agents_[bank(g)].log_std.data) lsum += v;
      st.entropy[g] = lsum + ent_const;
      st.actor_grad_norm[g] = pre;
    }
  }
}

void Trainer::critic_update_continuous(GroupData& gd, IterStats& st) {
  const TrainerConfig& tc = rc_.trainer;
  const int g = gd.g, B = gd.batch.B, T = gd.batch.T;
  Tape tp;
  auto bd = agents_[bank(g)].bind(tp, true);
  Var sq_sum = tp.constant(0.0);
  for (int t = 0; t < T; ++t) {
    // Detached trunk features: the critic head trains against them without
    // pushing gradients into the shared encoder.
    Var v = bd.value(tp.constant(gd.feats[t]), static_cast<double>(t) / T);
    Var diff = tp.sub(v, tp.constant(gd.td[t]));
    sq_sum = tp.add(sq_sum, tp.sum_all(tp.mul(diff, diff)));
  }
  Var loss = tp.scale(sq_sum, 1.0 / (B * T));
  tp.backward(loss);
  std::vector<Tensor> grads = collect_grads(bd.leaves);
  NamedParams actor_p, critic_p;
  std::vector<Tensor> actor_g, critic_g;
  split_params(agents_[bank(g)].named_params(), grads, actor_p, actor_g,
               critic_p, critic_g);
  double pre = clip_global_norm(critic_g, tc.grad_clip);
  critic_opt_[bank(g)].step(critic_p, critic_g);
  ema_update(target_agents_[bank(g)].named_params(),
             agents_[bank(g)].named_params(),
             tc.ema_decay);
  st.critic_loss[g] = loss.val().data[0];
  st.critic_grad_norm[g] = pre;
}

IterStats Trainer::iterate() {
  const TrainerConfig& tc = rc_.trainer;
  if (iter_ % tc.buffer_update_freq == 0) {
    for (int s = 0; s < num_banks(); ++s) {
      if (discrete()) bufs_[s].push(actors_[s], iter_);
      else agent_bufs_[s].push(agents_[s], iter_);
    }
  }

  // All rollouts and advantage constants are computed against the pre-update
  // parameters, then every bank steps: simultaneous updates, not staggered.
  // Under self-play there is one bank, rolled out and updated from seat 0.
  const int groups = num_banks();
  std::vector<GroupData> gds;
  gds.reserve(groups);
  for (int g = 0; g < groups; ++g)
    gds.push_back(prepare_group(g, rollout_group(g)));

  IterStats st;
  st.mean_return.assign(players_, 0.0);
  st.actor_loss.assign(players_, 0.0);
  st.critic_loss.assign(players_, 0.0);
  st.entropy.assign(players_, 0.0);
  st.actor_grad_norm.assign(players_, 0.0);
  st.critic_grad_norm.assign(players_, 0.0);
  for (int g = 0; g < groups; ++g) {
    st.mean_return[g] = gds[g].batch.mean_return(g);
    if (discrete()) {
      update_discrete(gds[g], st);
      critic_update_discrete(gds[g], st);
    } else {
      update_continuous(gds[g], st);
      critic_update_continuous(gds[g], st);
    }
  }
  // Seats beyond the bank count saw no update of their own; log their
  // measured returns from the shared rollout and mirror the bank's losses.
  for (int s = groups; s < players_; ++s) {
    st.mean_return[s] = gds[0].batch.mean_return(s);
    st.actor_loss[s] = st.actor_loss[0];
    st.critic_loss[s] = st.critic_loss[0];
    st.entropy[s] = st.entropy[0];
    st.actor_grad_norm[s] = st.actor_grad_norm[0];
    st.critic_grad_norm[s] = st.critic_grad_norm[0];
  }
  ++iter_;
  return st;
}

Checkpoint Trainer::snapshot(int i) {
  std::map<std::string, std::string> meta;
  meta["env"] = to_string(rc_.env);
  meta["algo"] = to_string(rc_.algo);
  meta["player"] = std::to_string(i);
  meta["iter"] = std::to_string(iter_);
  meta["seed"] = std::to_string(rc_.seed);
  meta["hidden"] = std::to_string(rc_.trainer.hidden);
  meta["obs_dim"] = std::to_string(obs_dim_);
  if (discrete()) {
    meta["net"] = "discrete_actor";
    meta["n_actions"] = std::to_string(n_actions_);
    return Checkpoint::from_params(actors_[bank(i)].named_params(),
                                   std::move(meta));
  }
  meta["net"] = "continuous_agent";
  meta["act_dim"] = std::to_string(kNegItems);
  return Checkpoint::from_params(agents_[bank(i)].named_params(),
                                 std::move(meta));
}

void Trainer::save_snapshot(int i, const std::string& path) {
  snapshot(i).save(path);
}

namespace {

std::string meta_get(const Checkpoint& c, const std::string& key) {
  auto it = c.meta.find(key);
  if (it == c.meta.end())
    throw IoError("checkpoint is missing meta key '" + key + "'");
  return it->second;
}

}  // namespace

DiscreteActorNet load_discrete_actor(const std::string& path,
                                     Checkpoint* meta_out) {
  Checkpoint c = Checkpoint::load(path);
  if (meta_get(c, "net") != "discrete_actor")
    throw IoError("'" + path + "' is not a discrete actor checkpoint");
  int obs = std::stoi(meta_get(c, "obs_dim"));
  int A = std::stoi(meta_get(c, "n_actions"));
  int H = std::stoi(meta_get(c, "hidden"));
  RngStream r(0, "ckpt-load");
  DiscreteActorNet net(obs, A, H, r);
  c.restore_into(net.named_params());
  if (meta_out) *meta_out = std::move(c);
  return net;
}

ContinuousAgentNet load_continuous_agent(const std::string& path,
                                         Checkpoint* meta_out) {
  Checkpoint c = Checkpoint::load(path);
  if (meta_get(c, "net") != "continuous_agent")
    throw IoError("'" + path + "' is not a continuous agent checkpoint");
  int obs = std::stoi(meta_get(c, "obs_dim"));
  int A = std::stoi(meta_get(c, "act_dim"));
  int H = std::stoi(meta_get(c, "hidden"));
  RngStream r(0, "ckpt-load");
  ContinuousAgentNet net(obs, A, H, r);
  c.restore_into(net.named_params());
  if (meta_out) *meta_out = std::move(c);
  return net;
}

// ---- run loop ---------------------------------------------------------------

uint64_t run_log_hash(const std::string& csv_text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const char* s, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(s[i]);
      h *= 0x100000001b3ULL;
    }
  };
  std::istringstream in(csv_text);
  std::string line;
  while (std::getline(in, line)) {
    size_t last = line.rfind(',');
    size_t n = last == std::string::npos ? line.size() : last;
    feed(line.data(), n);
    feed("\n", 1);
  }
  return h;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

int train_loop(const RunConfig& rc) {
  fs::path out(rc.out);
  std::error_code ec;
  if (fs::exists(out, ec) && !fs::is_empty(out, ec) && !rc.overwrite)
    throw ConfigError("output directory '" + rc.out +
                      "' is not empty; pass --overwrite to reuse it");
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + rc.out + "'");

  write_text_file((out / "config.ini").string(), render_effective_config(rc));

  Trainer tr(rc);
  const int P = tr.num_players();

  std::ostringstream csv;
  csv << "iteration";
  const char* stats[] = {"return",     "actor_loss",      "critic_loss",
                         "entropy",    "actor_grad_norm", "critic_grad_norm"};
  for (const char* name : stats)
    for (int p = 0; p < P; ++p) csv << "," << name << "_p" << p;
  csv << ",wall_clock_s\n";

  auto save_all = [&](const std::string& tag) {
    for (int p = 0; p < P; ++p)
      tr.save_snapshot(
          p, (out / (tag + "_p" + std::to_string(p) + ".ckpt")).string());
  };

  const auto t0 = std::chrono::steady_clock::now();
  auto flush_csv = [&]() {
    write_text_file((out / "runlog.csv").string(), csv.str());
  };

  for (int it = 0; it < rc.iters; ++it) {
    IterStats st;
    try {
      st = tr.iterate();
    } catch (const NumericalError& e) {
      flush_csv();
      write_text_file((out / "abort.txt").string(),
                      "numerical abort at iteration " + std::to_string(it) +
                          ": " + e.what() + "\n");
      return 3;
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    csv << it;
    const std::vector<double>* cols[] = {&st.mean_return,     &st.actor_loss,
                                         &st.critic_loss,     &st.entropy,
                                         &st.actor_grad_norm, &st.critic_grad_norm};
    for (const auto* col : cols)
      for (int p = 0; p < P; ++p) csv << "," << fmt((*col)[p]);
    csv << "," << fmt(wall) << "\n";
    if (rc.checkpoint_every > 0 && (it + 1) % rc.checkpoint_every == 0)
      save_all("ckpt_" + std::to_string(it + 1));
  }
  save_all("final");
  flush_csv();
  return 0;
}

}  // namespace adalign
