#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adalign/config.hpp"
#include "adalign/envs.hpp"

namespace adalign {

// One agent type entering the league: either a scripted policy or a list of
// trained policy checkpoints (one per training seed).
struct AgentSpec {
  std::string name;
  bool scripted = false;
  std::string kind;                      // AC | AD | TFT | Random
  std::vector<std::string> checkpoints;  // used when !scripted
};

struct LeagueCell {
  double mean = 0.0;
  double stddev = 0.0;  // sample std over episode returns
  int64_t n = 0;        // episode count behind the estimate
  bool absent = false;  // agent had no usable snapshots
};

struct LeagueMatrix {
  std::vector<std::string> agents;
  EnvId env = EnvId::kIpd;
  std::string metric = "per_step";
  int length = 16, seeds = 10, episodes = 50;
  std::vector<LeagueCell> cells;  // row-major; cell(r,c) = row agent's return

  LeagueCell& cell(int r, int c) {
    return cells[static_cast<size_t>(r) * agents.size() + c];
  }
  const LeagueCell& cell(int r, int c) const {
    return cells[static_cast<size_t>(r) * agents.size() + c];
  }
};

// Cross-plays every agent pair zero-shot: each of the row agent's `seeds`
// policies meets each of the column agent's, for `episodes` episodes of
// `length` steps, the row agent in seat 0. Scripted agents fill their seed
// slots with the same policy. Agents with fewer than `seeds` loadable
// checkpoints get their cells marked absent and the run continues.
// Deterministic for a fixed master seed; never mutates any parameters.
LeagueMatrix run_league(const std::vector<AgentSpec>& agents, EnvId env,
                        const EnvConfig& envc, const LeagueConfig& lc,
                        uint64_t master_seed);

// Min-max rescale of every present cell mean (std scaled accordingly).
LeagueMatrix normalize_scores(const LeagueMatrix& m, double baseline_low,
                              double baseline_high);

// CSV: "row_agent,col_agent,mean,std,n" rows in row-major agent order; absent
// cells leave mean/std empty with n=0. JSON mirrors the same data.
void write_league_csv(const LeagueMatrix& m, const std::string& path);
void write_league_json(const LeagueMatrix& m, const std::string& path);

// Builds the spec list for a league run: one trained agent per subdirectory
// of `agents_dir` (its *.ckpt files sorted by name), plus one scripted agent
// per entry of the comma list in lc.scripted.
std::vector<AgentSpec> discover_agents(const std::string& agents_dir,
                                       const LeagueConfig& lc);

}  // namespace adalign
