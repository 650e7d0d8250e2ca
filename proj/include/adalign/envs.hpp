#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "adalign/error.hpp"
#include "adalign/rng.hpp"

namespace adalign {

enum class EnvId { kIpd, kCoin, kNegotiation, kMatrix };

EnvId env_id_from_string(const std::string& s);
std::string to_string(EnvId id);

// ---- iterated prisoner's dilemma -------------------------------------------

// Bimatrix payoffs indexed [p1 action][p2 action], 0 = cooperate, 1 = defect.
struct IpdPayoffs {
  double r1[2][2];
  double r2[2][2];
  // CC (-1,-1), CD (-3,0), DC (0,-3), DD (-2,-2): the standard matrix used
  // across the opponent-shaping literature.
  static IpdPayoffs standard_dilemma() {
    IpdPayoffs p;
    p.r1[0][0] = -1; p.r1[0][1] = -3; p.r1[1][0] = 0;  p.r1[1][1] = -2;
    p.r2[0][0] = -1; p.r2[0][1] = 0;  p.r2[1][0] = -3; p.r2[1][1] = -2;
    return p;
  }
};

struct IpdConfig {
  int episode_length = 16;
  IpdPayoffs payoffs = IpdPayoffs::standard_dilemma();
};

struct IpdState {
  int t = 0;
  int a1 = -1, a2 = -1;  // previous joint action; -1 before the first step
};

// obs: [start flag, one-hot of previous (my action, opponent action)]
constexpr int kIpdObsDim = 5;

class IpdEnv {
 public:
  explicit IpdEnv(IpdConfig cfg = {}) : cfg_(cfg) {}
  const IpdConfig& config() const { return cfg_; }

  void reset(IpdState& s) const { s = IpdState{}; }
  bool done(const IpdState& s) const { return s.t >= cfg_.episode_length; }
  void obs(const IpdState& s, int seat, double* out) const;
  std::pair<double, double> step(IpdState& s, int a1, int a2) const;

 private:
  IpdConfig cfg_;
};

// ---- coin game --------------------------------------------------------------

enum CoinMove { kCoinUp = 0, kCoinDown = 1, kCoinLeft = 2, kCoinRight = 3,
                kCoinStay = 4 };
constexpr int kCoinNumMoves = 5;

struct CoinConfig {
  int episode_length = 16;
  int grid = 3;
  // Default is simultaneous moves; alternating mode moves only player t%2
  // each step (the other's move input is ignored).
  bool alternating = false;
};

struct CoinState {
  int t = 0;
  std::array<int, 2> pos = {0, 0};  // cell index row*grid+col
  int coin_pos = 0;
  int coin_color = 0;  // owner player index
};

class CoinEnv {
 public:
  explicit CoinEnv(CoinConfig cfg = {}) : cfg_(cfg) {}
  const CoinConfig& config() const { return cfg_; }

  int obs_dim() const { return 4 * cfg_.grid * cfg_.grid; }
  void reset(CoinState& s, RngStream& rng) const;
  bool done(const CoinState& s) const { return s.t >= cfg_.episode_length; }
  // Four planes, seat relative: my position, opponent position, coin of my
  // color, coin of opponent color.
  void obs(const CoinState& s, int seat, double* out) const;
  std::pair<double, double> step(CoinState& s, int m1, int m2,
                                 RngStream& rng) const;

  // Torus step of `move` from cell. Exposed for the scripted policies.
  int apply_move(int cell, int move) const;
  int torus_distance(int a, int b) const;

 private:
  void spawn_coin(CoinState& s, RngStream& rng) const;
  CoinConfig cfg_;
};

// ---- negotiation game -------------------------------------------------------

constexpr int kNegItems = 3;
constexpr int kNegObsDim = 15;  // availability + own values + opp values + both proposals
constexpr double kNegMaxProposal = 5.0;

struct NegotiationConfig {
  int episode_length = 50;  // league evaluation uses 16
};

struct NegotiationState {
  int t = 0;
  std::array<double, kNegItems> avail = {};
  std::array<double, kNegItems> v1 = {}, v2 = {};      // public utilities
  std::array<double, kNegItems> prop1 = {}, prop2 = {};  // previous proposals
};

class NegotiationEnv {
 public:
  explicit NegotiationEnv(NegotiationConfig cfg = {}) : cfg_(cfg) {}
  const NegotiationConfig& config() const { return cfg_; }

  void reset(NegotiationState& s, RngStream& rng) const;
  bool done(const NegotiationState& s) const {
    return s.t >= cfg_.episode_length;
  }
  // [availability, own values, opponent values, my previous proposal,
  //  opponent previous proposal]
  void obs(const NegotiationState& s, int seat, double* out) const;
  std::pair<double, double> step(NegotiationState& s, const double* p1,
                                 const double* p2, RngStream& rng) const;

 private:
  void sample_items(NegotiationState& s, RngStream& rng) const;
  NegotiationConfig cfg_;
};

// ---- n-player matrix game ---------------------------------------------------

struct MatrixGameConfig {
  int n_players = 2;
  int arity = 2;
  int episode_length = 16;
  // payoffs[joint * n_players + player], joint index with player 0 as the
  // most significant digit.
  std::vector<double> payoffs;

  int num_joint() const;
  // 2x2 bimatrix carrying the standard dilemma payoffs (action 0 = cooperate).
  static MatrixGameConfig ipd_equivalent(int episode_length = 16);
  // n-player public goods: contribute (1) costs 1, pot is multiplied and
  // split evenly.
  static MatrixGameConfig public_goods(int n, double multiplier,
                                       int episode_length = 16);
};

struct MatrixState {
  int t = 0;
  std::vector<int> last;  // empty before the first step
};

class MatrixGameEnv {
 public:
  explicit MatrixGameEnv(MatrixGameConfig cfg);
  const MatrixGameConfig& config() const { return cfg_; }

  int obs_dim() const { return 1 + cfg_.num_joint(); }
  void reset(MatrixState& s) const { s = MatrixState{}; }
  bool done(const MatrixState& s) const { return s.t >= cfg_.episode_length; }
  // [start flag, one-hot of previous joint action]. For 2 players the joint
  // index is seat relative (own action is the high digit); for n>2 it is
  // absolute.
  void obs(const MatrixState& s, int seat, double* out) const;
  std::vector<double> step(MatrixState& s, const std::vector<int>& actions) const;

  int joint_index(const std::vector<int>& actions) const;

 private:
  MatrixGameConfig cfg_;
};

}  // namespace adalign
