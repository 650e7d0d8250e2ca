#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adalign/advantage.hpp"
#include "adalign/envs.hpp"
#include "adalign/error.hpp"

namespace adalign {

enum class Algo { kAc, kPpo, kAdalign, kPadalign };
Algo algo_from_string(const std::string& s);
std::string to_string(Algo a);

// Everything the training loop reads. Defaults are filled per env/algo by
// default_run_config; the tables drive only training, league and env knobs
// have their own sections.
struct TrainerConfig {
  double beta = 0.3;
  double gamma = 0.9;      // reward discount
  double aa_gamma = 0.9;   // alignment discount in the past-advantage sum
  AlignVariant align_variant = AlignVariant::kInverseT;
  std::string quadrants;   // subset of CEVS to zero out, empty = no ablation
  double entropy_coef = 0.15;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  int batch_size = 2048;
  double ema_decay = 0.99;
  double ppo_clip = 0.1;
  int ppo_epochs = 2;
  bool normalize_advantages = false;
  int buffer_capacity = 10000;
  int buffer_update_freq = 1;
  // Two views of the same opponent-sampling knob: with probability
  // off_policy_ratio the rollout opponent is a uniform buffer snapshot,
  // otherwise the live net. current_agent_fraction = 1 - off_policy_ratio.
  double off_policy_ratio = 1.0;
  double grad_clip = 1.0;
  int hidden = 64;
  double gae_lambda = 0.95;
  // One parameter set occupies every seat (the snapshot buffer then holds
  // past selves); false trains an independent agent per seat.
  bool self_play = true;
};

struct EnvConfig {
  int episode_length = 16;
  // coin game
  int grid = 3;
  bool alternating = false;
  // matrix game
  int players = 2;
  std::string payoffs = "ipd";  // ipd | public_goods
  double public_goods_mult = 1.6;
};

struct LeagueConfig {
  int seeds = 10;
  int episodes = 50;
  int length = 16;
  std::string metric = "per_step";  // per_step | episode_sum
  std::string scripted;             // comma list, e.g. "AC,AD,TFT,Random"
};

struct RunConfig {
  EnvId env = EnvId::kIpd;
  Algo algo = Algo::kAdalign;
  uint64_t seed = 0;
  int iters = 100;
  std::string out = "runs/out";
  int threads = 1;
  int checkpoint_every = 50;
  bool overwrite = false;
  EnvConfig envc;
  TrainerConfig trainer;
  LeagueConfig league;
};

// Table defaults keyed by env, with the PPO knobs applied for ppo/padalign.
RunConfig default_run_config(EnvId env, Algo algo);

// Assigns one "section.key = value" triple, throwing ConfigError with the
// field name on unknown keys or unparseable values.
void apply_kv(RunConfig& rc, const std::string& section, const std::string& key,
              const std::string& value);

// "key=value" or "section.key=value". Bare keys must be unique across
// sections.
void apply_override(RunConfig& rc, const std::string& spec);

// Full load path used by the CLI: parse optional INI file, then env/algo
// flags, then --set overrides, then validate. env/algo must be known from
// either the file or a flag before defaults can be chosen, so the file is
// scanned for them first.
RunConfig load_run_config(const std::optional<std::string>& path,
                          const std::optional<std::string>& env_flag,
                          const std::optional<std::string>& algo_flag,
                          const std::vector<std::string>& sets);

void validate(const RunConfig& rc);

// Round-trippable effective config (all sections, all keys).
std::string render_effective_config(const RunConfig& rc);

// Minimal strict INI: [section] headers, key = value lines, # or ;
// comments. Returns (section, key, value) in file order.
struct IniEntry {
  std::string section, key, value;
  int line = 0;
};
std::vector<IniEntry> parse_ini(const std::string& text);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace adalign
