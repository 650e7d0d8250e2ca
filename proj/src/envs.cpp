#include "adalign/envs.hpp"

#include <algorithm>
#include <cmath>

namespace adalign {

EnvId env_id_from_string(const std::string& s) {
  if (s == "ipd") return EnvId::kIpd;
  if (s == "coin") return EnvId::kCoin;
  if (s == "negotiation") return EnvId::kNegotiation;
  if (s == "matrix") return EnvId::kMatrix;
  throw ConfigError("unknown env '" + s +
                    "' (expected ipd|coin|negotiation|matrix)");
}

std::string to_string(EnvId id) {
  switch (id) {
    case EnvId::kIpd: return "ipd";
    case EnvId::kCoin: return "coin";
    case EnvId::kNegotiation: return "negotiation";
    case EnvId::kMatrix: return "matrix";
  }
  return "?";
}

// ---- IPD --------------------------------------------------------------------

void IpdEnv::obs(const IpdState& s, int seat, double* out) const {
  std::fill(out, out + kIpdObsDim, 0.0);
  if (s.a1 < 0) {
    out[0] = 1.0;  // distinguished initial-state encoding
    return;
  }
  const int mine = seat == 0 ? s.a1 : s.a2;
  const int theirs = seat == 0 ? s.a2 : s.a1;
  out[1 + mine * 2 + theirs] = 1.0;
}

std::pair<double, double> IpdEnv::step(IpdState& s, int a1, int a2) const {
  if (done(s)) throw ShapeError("ipd_step: episode already ended");
  if ((a1 & ~1) || (a2 & ~1)) throw ShapeError("ipd_step: action not in {0,1}");
  s.a1 = a1;
  s.a2 = a2;
  ++s.t;
  return {cfg_.payoffs.r1[a1][a2], cfg_.payoffs.r2[a1][a2]};
}

// ---- coin game --------------------------------------------------------------

int CoinEnv::apply_move(int cell, int move) const {
  const int g = cfg_.grid;
  int r = cell / g, c = cell % g;
  switch (move) {
    case kCoinUp: r = (r - 1 + g) % g; break;
    case kCoinDown: r = (r + 1) % g; break;
    case kCoinLeft: c = (c - 1 + g) % g; break;
    case kCoinRight: c = (c + 1) % g; break;
    case kCoinStay: break;
    default: throw ShapeError("coin_step: invalid move code");
  }
  return r * g + c;
}

int CoinEnv::torus_distance(int a, int b) const {
  const int g = cfg_.grid;
  int dr = std::abs(a / g - b / g), dc = std::abs(a % g - b % g);
  return std::min(dr, g - dr) + std::min(dc, g - dc);
}

void CoinEnv::spawn_coin(CoinState& s, RngStream& rng) const {
  s.coin_color = static_cast<int>(rng.randint(2));
  const int cells = cfg_.grid * cfg_.grid;
  int free_count = 0;
  for (int c = 0; c < cells; ++c)
    if (c != s.pos[0] && c != s.pos[1]) ++free_count;
  int pick = static_cast<int>(rng.randint(free_count));
  for (int c = 0; c < cells; ++c) {
    if (c == s.pos[0] || c == s.pos[1]) continue;
    if (pick-- == 0) {
      s.coin_pos = c;
      return;
    }
  }
}

void CoinEnv::reset(CoinState& s, RngStream& rng) const {
  s = CoinState{};
  const int cells = cfg_.grid * cfg_.grid;
  s.pos[0] = static_cast<int>(rng.randint(cells));
  s.pos[1] = static_cast<int>(rng.randint(cells - 1));
  if (s.pos[1] >= s.pos[0]) ++s.pos[1];  // distinct start cells
  spawn_coin(s, rng);
}

void CoinEnv::obs(const CoinState& s, int seat, double* out) const {
  const int cells = cfg_.grid * cfg_.grid;
  std::fill(out, out + 4 * cells, 0.0);
  const int me = seat, opp = 1 - seat;
  out[0 * cells + s.pos[me]] = 1.0;
  out[1 * cells + s.pos[opp]] = 1.0;
  const int plane = s.coin_color == me ? 2 : 3;
  out[plane * cells + s.coin_pos] = 1.0;
}

std::pair<double, double> CoinEnv::step(CoinState& s, int m1, int m2,
                                        RngStream& rng) const {
  if (done(s)) throw ShapeError("coin_step: episode already ended");
  if (m1 < 0 || m1 >= kCoinNumMoves || m2 < 0 || m2 >= kCoinNumMoves)
    throw ShapeError("coin_step: invalid move code");
  if (cfg_.alternating) {
    // Only the player whose turn it is moves; the other holds position.
    if (s.t % 2 == 0) m2 = kCoinStay;
    else m1 = kCoinStay;
  }
  s.pos[0] = apply_move(s.pos[0], m1);
  s.pos[1] = apply_move(s.pos[1], m2);
  double r[2] = {0.0, 0.0};
  bool collected = false;
  for (int p = 0; p < 2; ++p) {
    if (s.pos[p] != s.coin_pos) continue;
    collected = true;
    r[p] += 1.0;
    if (s.coin_color != p) r[s.coin_color] -= 3.0;
  }
  ++s.t;
  if (collected) spawn_coin(s, rng);
  return {r[0], r[1]};
}

// ---- negotiation ------------------------------------------------------------

void NegotiationEnv::sample_items(NegotiationState& s, RngStream& rng) const {
  for (int i = 0; i < kNegItems; ++i) s.avail[i] = rng.uniform();
  for (int i = 0; i < kNegItems; ++i) {
    if (rng.randint(2) == 0) {
      s.v1[i] = 5.0;
      s.v2[i] = 1.0;
    } else {
      s.v1[i] = 1.0;
      s.v2[i] = 5.0;
    }
  }
}

void NegotiationEnv::reset(NegotiationState& s, RngStream& rng) const {
  s = NegotiationState{};
  sample_items(s, rng);
}

void NegotiationEnv::obs(const NegotiationState& s, int seat,
                         double* out) const {
  const auto& own_v = seat == 0 ? s.v1 : s.v2;
  const auto& opp_v = seat == 0 ? s.v2 : s.v1;
  const auto& own_p = seat == 0 ? s.prop1 : s.prop2;
  const auto& opp_p = seat == 0 ? s.prop2 : s.prop1;
  int k = 0;
  for (int i = 0; i < kNegItems; ++i) out[k++] = s.avail[i];
  for (int i = 0; i < kNegItems; ++i) out[k++] = own_v[i];
  for (int i = 0; i < kNegItems; ++i) out[k++] = opp_v[i];
  for (int i = 0; i < kNegItems; ++i) out[k++] = own_p[i];
  for (int i = 0; i < kNegItems; ++i) out[k++] = opp_p[i];
}

std::pair<double, double> NegotiationEnv::step(NegotiationState& s,
                                               const double* p1,
                                               const double* p2,
                                               RngStream& rng) const {
  if (done(s)) throw ShapeError("negotiation_step: episode already ended");
  for (int i = 0; i < kNegItems; ++i) {
    if (!(p1[i] >= 0.0 && p1[i] <= kNegMaxProposal) ||
        !(p2[i] >= 0.0 && p2[i] <= kNegMaxProposal))
      throw ShapeError("negotiation_step: proposal outside [0,5]");
  }
  // Per item i the row player earns p1_i*v1_i / max(5, p1_i+p2_i); episode
  // rewards are availability-weighted and normalized by the best attainable
  // sum, so each step reward lands in [0,1].
  double num1 = 0.0, num2 = 0.0, den1 = 0.0, den2 = 0.0;
  for (int i = 0; i < kNegItems; ++i) {
    const double d = std::max(kNegMaxProposal, p1[i] + p2[i]);
    num1 += s.avail[i] * p1[i] * s.v1[i] / d;
    num2 += s.avail[i] * p2[i] * s.v2[i] / d;
    den1 += s.avail[i] * s.v1[i];
    den2 += s.avail[i] * s.v2[i];
  }
  const double r1 = num1 / den1, r2 = num2 / den2;
  for (int i = 0; i < kNegItems; ++i) {
    s.prop1[i] = p1[i];
    s.prop2[i] = p2[i];
  }
  sample_items(s, rng);
  ++s.t;
  return {r1, r2};
}

// ---- matrix game ------------------------------------------------------------

int MatrixGameConfig::num_joint() const {
  int n = 1;
  for (int i = 0; i < n_players; ++i) n *= arity;
  return n;
}

MatrixGameConfig MatrixGameConfig::ipd_equivalent(int episode_length) {
  MatrixGameConfig c;
  c.n_players = 2;
  c.arity = 2;
  c.episode_length = episode_length;
  IpdPayoffs p = IpdPayoffs::standard_dilemma();
  c.payoffs.resize(8);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      c.payoffs[(a * 2 + b) * 2 + 0] = p.r1[a][b];
      c.payoffs[(a * 2 + b) * 2 + 1] = p.r2[a][b];
    }
  return c;
}

MatrixGameConfig MatrixGameConfig::public_goods(int n, double multiplier,
                                                int episode_length) {
  MatrixGameConfig c;
  c.n_players = n;
  c.arity = 2;
  c.episode_length = episode_length;
  const int joints = c.num_joint();
  c.payoffs.resize(static_cast<size_t>(joints) * n);
  for (int j = 0; j < joints; ++j) {
    int contrib = 0, x = j;
    std::vector<int> a(n);
    for (int p = n - 1; p >= 0; --p) {
      a[p] = x % 2;
      x /= 2;
      contrib += a[p];
    }
    for (int p = 0; p < n; ++p)
      c.payoffs[static_cast<size_t>(j) * n + p] =
          multiplier * contrib / n - a[p];
  }
  return c;
}

MatrixGameEnv::MatrixGameEnv(MatrixGameConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.n_players < 2) throw ConfigError("matrix game needs >= 2 players");
  if (cfg_.arity < 2) throw ConfigError("matrix game needs arity >= 2");
  const size_t want = static_cast<size_t>(cfg_.num_joint()) * cfg_.n_players;
  if (cfg_.payoffs.size() != want)
    throw ConfigError("matrix game payoff tensor has " +
                      std::to_string(cfg_.payoffs.size()) + " entries, needs " +
                      std::to_string(want));
}

int MatrixGameEnv::joint_index(const std::vector<int>& actions) const {
  if (static_cast<int>(actions.size()) != cfg_.n_players)
    throw ShapeError("matrix_step: joint action arity mismatch");
  int idx = 0;
  for (int p = 0; p < cfg_.n_players; ++p) {
    if (actions[p] < 0 || actions[p] >= cfg_.arity)
      throw ShapeError("matrix_step: action out of range");
    idx = idx * cfg_.arity + actions[p];
  }
  return idx;
}

void MatrixGameEnv::obs(const MatrixState& s, int seat, double* out) const {
  const int joints = cfg_.num_joint();
  std::fill(out, out + 1 + joints, 0.0);
  if (s.last.empty()) {
    out[0] = 1.0;
    return;
  }
  std::vector<int> view = s.last;
  if (cfg_.n_players == 2 && seat == 1) std::swap(view[0], view[1]);
  out[1 + joint_index(view)] = 1.0;
}

std::vector<double> MatrixGameEnv::step(MatrixState& s,
                                        const std::vector<int>& actions) const {
  if (done(s)) throw ShapeError("matrix_step: episode already ended");
  const int idx = joint_index(actions);
  std::vector<double> r(cfg_.n_players);
  for (int p = 0; p < cfg_.n_players; ++p)
    r[p] = cfg_.payoffs[static_cast<size_t>(idx) * cfg_.n_players + p];
  s.last = actions;
  ++s.t;
  return r;
}

}  // namespace adalign
