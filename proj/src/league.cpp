#include "adalign/league.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <sstream>

#include "json.hpp"

#include "adalign/trainers.hpp"

namespace fs = std::filesystem;

namespace adalign {

namespace {

using SeatFactory = std::function<std::unique_ptr<SeatPolicy>()>;

// One entry per protocol seed; empty when the agent cannot field a full slate.
struct AgentSeats {
  std::vector<SeatFactory> factories;
  bool absent = false;
};

AgentSeats build_seats(const AgentSpec& spec, EnvId env, const EnvConfig& envc,
                       const LeagueConfig& lc) {
  AgentSeats out;
  if (spec.scripted) {
    std::string kind = spec.kind;
    // Fail fast on a bad kind instead of inside the episode loop.
    make_scripted_seat(env, kind, envc);
    for (int i = 0; i < lc.seeds; ++i)
      out.factories.push_back(
          [env, kind, envc]() { return make_scripted_seat(env, kind, envc); });
    return out;
  }
  if (static_cast<int>(spec.checkpoints.size()) < lc.seeds) {
    out.absent = true;
    return out;
  }
  for (int i = 0; i < lc.seeds; ++i) {
    const std::string& path = spec.checkpoints[i];
    try {
      if (env == EnvId::kNegotiation) {
        ContinuousAgentNet net = load_continuous_agent(path);
        if (net.obs_dim != kNegObsDim)
          throw IoError("obs_dim mismatch in '" + path + "'");
        out.factories.push_back([net]() { return make_net_seat(net); });
      } else {
        DiscreteActorNet net = load_discrete_actor(path);
        out.factories.push_back([net]() { return make_net_seat(net); });
      }
    } catch (const IoError&) {
      out.factories.clear();
      out.absent = true;
      return out;
    }
  }
  return out;
}

// Runs one episode, both seats frozen; returns undiscounted reward sums.
std::pair<double, double> play_episode(EnvId env, const EnvConfig& envc,
                                       SeatPolicy& s0, SeatPolicy& s1,
                                       RngStream& rng) {
  const int T = envc.episode_length;
  double r0 = 0.0, r1 = 0.0;
  s0.begin_episode();
  s1.begin_episode();
  switch (env) {
    case EnvId::kIpd: {
      IpdEnv e(IpdConfig{T, IpdPayoffs::standard_dilemma()});
      IpdState st;
      e.reset(st);
      double obs[kIpdObsDim], a0, a1;
      for (int t = 0; t < T; ++t) {
        e.obs(st, 0, obs);
        s0.act(obs, rng, &a0);
        e.obs(st, 1, obs);
        s1.act(obs, rng, &a1);
        auto [x, y] = e.step(st, static_cast<int>(a0), static_cast<int>(a1));
        r0 += x;
        r1 += y;
      }
      break;
    }
    case EnvId::kCoin: {
      CoinEnv e(CoinConfig{T, envc.grid, envc.alternating});
      CoinState st;
      e.reset(st, rng);
      std::vector<double> obs(e.obs_dim());
      double a0, a1;
      for (int t = 0; t < T; ++t) {
        e.obs(st, 0, obs.data());
        s0.act(obs.data(), rng, &a0);
        e.obs(st, 1, obs.data());
        s1.act(obs.data(), rng, &a1);
        auto [x, y] =
            e.step(st, static_cast<int>(a0), static_cast<int>(a1), rng);
        r0 += x;
        r1 += y;
      }
      break;
    }
    case EnvId::kNegotiation: {
      NegotiationEnv e(NegotiationConfig{T});
      NegotiationState st;
      e.reset(st, rng);
      double obs[kNegObsDim], p0[kNegItems], p1[kNegItems];
      for (int t = 0; t < T; ++t) {
        e.obs(st, 0, obs);
        s0.act(obs, rng, p0);
        e.obs(st, 1, obs);
        s1.act(obs, rng, p1);
        auto [x, y] = e.step(st, p0, p1, rng);
        r0 += x;
        r1 += y;
      }
      break;
    }
    case EnvId::kMatrix: {
      MatrixGameConfig mc =
          envc.payoffs == "public_goods"
              ? MatrixGameConfig::public_goods(2, envc.public_goods_mult, T)
              : MatrixGameConfig::ipd_equivalent(T);
      MatrixGameEnv e(mc);
      MatrixState st;
      e.reset(st);
      std::vector<double> obs(e.obs_dim());
      double a0, a1;
      for (int t = 0; t < T; ++t) {
        e.obs(st, 0, obs.data());
        s0.act(obs.data(), rng, &a0);
        e.obs(st, 1, obs.data());
        s1.act(obs.data(), rng, &a1);
        std::vector<double> r = e.step(
            st, {static_cast<int>(a0), static_cast<int>(a1)});
        r0 += r[0];
        r1 += r[1];
      }
      break;
    }
  }
  return {r0, r1};
}

}  // namespace

LeagueMatrix run_league(const std::vector<AgentSpec>& agents, EnvId env,
                        const EnvConfig& envc, const LeagueConfig& lc,
                        uint64_t master_seed) {
  if (lc.seeds < 1 || lc.episodes < 1 || lc.length < 1)
    throw ConfigError("league seeds/episodes/length must be positive");
  if (lc.metric != "per_step" && lc.metric != "episode_sum")
    throw ConfigError("league metric must be per_step or episode_sum");
  if (env == EnvId::kMatrix && envc.players != 2)
    throw ConfigError("league evaluation needs a 2-player matrix game");
  if (agents.empty()) throw ConfigError("league needs at least one agent");

  EnvConfig ec = envc;
  ec.episode_length = lc.length;

  const int N = static_cast<int>(agents.size());
  LeagueMatrix m;
  for (const AgentSpec& a : agents) m.agents.push_back(a.name);
  m.env = env;
  m.metric = lc.metric;
  m.length = lc.length;
  m.seeds = lc.seeds;
  m.episodes = lc.episodes;
  m.cells.assign(static_cast<size_t>(N) * N, LeagueCell{});

  std::vector<AgentSeats> seats;
  seats.reserve(N);
  for (const AgentSpec& a : agents) seats.push_back(build_seats(a, env, ec, lc));

  const double scale = lc.metric == "per_step" ? 1.0 / lc.length : 1.0;
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      LeagueCell& cell = m.cell(i, j);
      if (seats[i].absent || seats[j].absent) {
        cell.absent = true;
        continue;
      }
      const uint64_t cell_idx = static_cast<uint64_t>(i) * N + j;
      double sum = 0.0, sumsq = 0.0;
      int64_t n = 0;
      for (int ri = 0; ri < lc.seeds; ++ri) {
        for (int ci = 0; ci < lc.seeds; ++ci) {
          auto s0 = seats[i].factories[ri]();
          auto s1 = seats[j].factories[ci]();
          const uint64_t pair_idx =
              static_cast<uint64_t>(ri) * lc.seeds + ci;
          for (int ep = 0; ep < lc.episodes; ++ep) {
            RngStream rng(master_seed, "league", cell_idx, pair_idx,
                          static_cast<uint64_t>(ep));
            auto [r0, r1] = play_episode(env, ec, *s0, *s1, rng);
            (void)r1;
            const double x = r0 * scale;
            sum += x;
            sumsq += x * x;
            ++n;
          }
        }
      }
      cell.n = n;
      cell.mean = sum / n;
      if (n > 1) {
        double var = (sumsq - n * cell.mean * cell.mean) / (n - 1);
        cell.stddev = std::sqrt(std::max(0.0, var));
      }
    }
  }
  return m;
}

LeagueMatrix normalize_scores(const LeagueMatrix& m, double baseline_low,
                              double baseline_high) {
  if (!(baseline_high > baseline_low))
    throw ConfigError("normalize_scores needs baseline_high > baseline_low");
  const double inv = 1.0 / (baseline_high - baseline_low);
  LeagueMatrix out = m;
  for (LeagueCell& c : out.cells) {
    if (c.absent) continue;
    c.mean = (c.mean - baseline_low) * inv;
    c.stddev = c.stddev * inv;
  }
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_league_csv(const LeagueMatrix& m, const std::string& path) {
  std::ostringstream out;
  out << "row_agent,col_agent,mean,std,n\n";
  const int N = static_cast<int>(m.agents.size());
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      const LeagueCell& c = m.cell(i, j);
      out << m.agents[i] << "," << m.agents[j] << ",";
      if (!c.absent) out << fmt(c.mean) << "," << fmt(c.stddev);
      else out << ",";
      out << "," << c.n << "\n";
    }
  }
  write_text_file(path, out.str());
}

void write_league_json(const LeagueMatrix& m, const std::string& path) {
  nlohmann::ordered_json doc;
  doc["env"] = to_string(m.env);
  doc["metric"] = m.metric;
  doc["length"] = m.length;
  doc["seeds"] = m.seeds;
  doc["episodes"] = m.episodes;
  doc["agents"] = m.agents;
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  const int N = static_cast<int>(m.agents.size());
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      const LeagueCell& c = m.cell(i, j);
      nlohmann::ordered_json jc;
      jc["row"] = m.agents[i];
      jc["col"] = m.agents[j];
      jc["absent"] = c.absent;
      if (!c.absent) {
        jc["mean"] = c.mean;
        jc["std"] = c.stddev;
      }
      jc["n"] = c.n;
      cells.push_back(std::move(jc));
    }
  }
  doc["cells"] = std::move(cells);
  write_text_file(path, doc.dump(2) + "\n");
}

std::vector<AgentSpec> discover_agents(const std::string& agents_dir,
                                       const LeagueConfig& lc) {
  std::vector<AgentSpec> out;
  if (!agents_dir.empty()) {
    fs::path root(agents_dir);
    if (!fs::is_directory(root))
      throw ConfigError("'" + agents_dir + "' is not a directory");
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory()) subdirs.push_back(e.path());
    std::sort(subdirs.begin(), subdirs.end());
    for (const fs::path& d : subdirs) {
      AgentSpec spec;
      spec.name = d.filename().string();
      std::vector<std::string> ckpts;
      for (const auto& e : fs::directory_iterator(d))
        if (e.is_regular_file() && e.path().extension() == ".ckpt")
          ckpts.push_back(e.path().string());
      std::sort(ckpts.begin(), ckpts.end());
      spec.checkpoints = std::move(ckpts);
      out.push_back(std::move(spec));
    }
  }
  std::stringstream ss(lc.scripted);
  std::string kind;
  while (std::getline(ss, kind, ',')) {
    if (kind.empty()) continue;
    AgentSpec spec;
    spec.name = kind;
    spec.scripted = true;
    spec.kind = kind;
    out.push_back(std::move(spec));
  }
  if (out.empty())
    throw ConfigError("no league agents found (empty dir and no scripted list)");
  return out;
}

}  // namespace adalign
