#include "adalign/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <sstream>

namespace adalign {

Algo algo_from_string(const std::string& s) {
  if (s == "ac") return Algo::kAc;
  if (s == "ppo") return Algo::kPpo;
  if (s == "adalign") return Algo::kAdalign;
  if (s == "padalign") return Algo::kPadalign;
  throw ConfigError("unknown algo '" + s + "' (expected ac|ppo|adalign|padalign)");
}

std::string to_string(Algo a) {
  switch (a) {
    case Algo::kAc: return "ac";
    case Algo::kPpo: return "ppo";
    case Algo::kAdalign: return "adalign";
    case Algo::kPadalign: return "padalign";
  }
  return "?";
}

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double parse_double(const std::string& v, const std::string& field) {
  try {
    size_t idx = 0;
    double d = std::stod(v, &idx);
    if (idx != v.size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(field + ": expected a number, got '" + v + "'");
  }
}

int64_t parse_int(const std::string& v, const std::string& field) {
  try {
    size_t idx = 0;
    long long n = std::stoll(v, &idx);
    if (idx != v.size()) throw std::invalid_argument("");
    return n;
  } catch (const std::exception&) {
    throw ConfigError(field + ": expected an integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const std::string& field) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(field + ": expected true|false, got '" + v + "'");
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

const std::vector<Field>& registry() {
  static const std::vector<Field> fields = {
      {"run", "env",
       [](RunConfig& rc, const std::string& v, const std::string&) {
         rc.env = env_id_from_string(v);
       }},
      {"run", "algo",
       [](RunConfig& rc, const std::string& v, const std::string&) {
         rc.algo = algo_from_string(v);
       }},
      {"run", "seed",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.seed = static_cast<uint64_t>(parse_int(v, f));
       }},
      {"run", "iters",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.iters = static_cast<int>(parse_int(v, f));
       }},
      {"run", "out",
       [](RunConfig& rc, const std::string& v, const std::string&) {
         rc.out = v;
       }},
      {"run", "threads",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.threads = static_cast<int>(parse_int(v, f));
       }},
      {"run", "checkpoint_every",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.checkpoint_every = static_cast<int>(parse_int(v, f));
       }},
      {"run", "overwrite",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.overwrite = parse_bool(v, f);
       }},

      {"env", "episode_length",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.envc.episode_length = static_cast<int>(parse_int(v, f));
       }},
      {"env", "grid",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.envc.grid = static_cast<int>(parse_int(v, f));
       }},
      {"env", "alternating",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.envc.alternating = parse_bool(v, f);
       }},
      {"env", "players",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.envc.players = static_cast<int>(parse_int(v, f));
       }},
      {"env", "payoffs",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         if (v != "ipd" && v != "public_goods")
           throw ConfigError(f + ": expected ipd|public_goods, got '" + v + "'");
         rc.envc.payoffs = v;
       }},
      {"env", "public_goods_mult",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.envc.public_goods_mult = parse_double(v, f);
       }},

      {"trainer", "beta",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.beta = parse_double(v, f);
       }},
      {"trainer", "gamma",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.gamma = parse_double(v, f);
       }},
      {"trainer", "aa_gamma",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.aa_gamma = parse_double(v, f);
       }},
      {"trainer", "align_variant",
       [](RunConfig& rc, const std::string& v, const std::string&) {
         rc.trainer.align_variant = align_variant_from_string(v);
       }},
      {"trainer", "quadrants",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         for (char c : v)
           if (c != 'C' && c != 'E' && c != 'V' && c != 'S')
             throw ConfigError(f + ": expected a subset of CEVS, got '" + v + "'");
         rc.trainer.quadrants = v;
       }},
      {"trainer", "entropy_coef",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.entropy_coef = parse_double(v, f);
       }},
      {"trainer", "actor_lr",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.actor_lr = parse_double(v, f);
       }},
      {"trainer", "critic_lr",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.critic_lr = parse_double(v, f);
       }},
      {"trainer", "batch_size",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.batch_size = static_cast<int>(parse_int(v, f));
       }},
      {"trainer", "ema_decay",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.ema_decay = parse_double(v, f);
       }},
      {"trainer", "ppo_clip",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.ppo_clip = parse_double(v, f);
       }},
      {"trainer", "ppo_epochs",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.ppo_epochs = static_cast<int>(parse_int(v, f));
       }},
      {"trainer", "normalize_advantages",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.normalize_advantages = parse_bool(v, f);
       }},
      {"trainer", "buffer_capacity",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.buffer_capacity = static_cast<int>(parse_int(v, f));
       }},
      {"trainer", "buffer_update_freq",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.buffer_update_freq = static_cast<int>(parse_int(v, f));
       }},
      {"trainer", "off_policy_ratio",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.off_policy_ratio = parse_double(v, f);
       }},
      {"trainer", "current_agent_fraction",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.off_policy_ratio = 1.0 - parse_double(v, f);
       }},
      {"trainer", "grad_clip",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.grad_clip = parse_double(v, f);
       }},
      {"trainer", "hidden",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.hidden = static_cast<int>(parse_int(v, f));
       }},
      {"trainer", "gae_lambda",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.gae_lambda = parse_double(v, f);
       }},
      {"trainer", "self_play",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.trainer.self_play = parse_bool(v, f);
       }},

      {"league", "seeds",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.league.seeds = static_cast<int>(parse_int(v, f));
       }},
      {"league", "episodes",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.league.episodes = static_cast<int>(parse_int(v, f));
       }},
      {"league", "length",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         rc.league.length = static_cast<int>(parse_int(v, f));
       }},
      {"league", "metric",
       [](RunConfig& rc, const std::string& v, const std::string& f) {
         if (v != "per_step" && v != "episode_sum")
           throw ConfigError(f + ": expected per_step|episode_sum, got '" + v + "'");
         rc.league.metric = v;
       }},
      {"league", "scripted",
       [](RunConfig& rc, const std::string& v, const std::string&) {
         rc.league.scripted = v;
       }},
  };
  return fields;
}

}  // namespace

void apply_kv(RunConfig& rc, const std::string& section, const std::string& key,
              const std::string& value) {
  for (const Field& f : registry()) {
    if (section == f.section && key == f.key) {
      f.set(rc, value, section + "." + key);
      return;
    }
  }
  throw ConfigError("unknown config field '" + section + "." + key + "'");
}

void apply_override(RunConfig& rc, const std::string& spec) {
  size_t eq = spec.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + spec + "' is not of the form key=value");
  std::string key = trim(spec.substr(0, eq));
  std::string value = trim(spec.substr(eq + 1));
  size_t dot = key.find('.');
  if (dot != std::string::npos) {
    apply_kv(rc, key.substr(0, dot), key.substr(dot + 1), value);
    return;
  }
  const Field* hit = nullptr;
  for (const Field& f : registry()) {
    if (key == f.key) {
      if (hit)
        throw ConfigError("override key '" + key +
                          "' is ambiguous, qualify it as section.key");
      hit = &f;
    }
  }
  if (!hit) throw ConfigError("unknown override key '" + key + "'");
  hit->set(rc, value, std::string(hit->section) + "." + key);
}

std::vector<IniEntry> parse_ini(const std::string& text) {
  std::vector<IniEntry> out;
  std::istringstream in(text);
  std::string line, section;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw ConfigError("config line " + std::to_string(ln) +
                          ": malformed section header '" + s + "'");
      section = trim(s.substr(1, s.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(ln) +
                          ": empty section name");
      continue;
    }
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(ln) +
                        ": expected key = value, got '" + s + "'");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(ln) +
                        ": key outside any [section]");
    IniEntry e;
    e.section = section;
    e.key = trim(s.substr(0, eq));
    e.value = trim(s.substr(eq + 1));
    e.line = ln;
    if (e.key.empty())
      throw ConfigError("config line " + std::to_string(ln) + ": empty key");
    out.push_back(std::move(e));
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("short write to '" + path + "'");
}

RunConfig default_run_config(EnvId env, Algo algo) {
  RunConfig rc;
  rc.env = env;
  rc.algo = algo;
  TrainerConfig& t = rc.trainer;
  switch (env) {
    case EnvId::kIpd:
    case EnvId::kMatrix:
      break;  // struct defaults are the IPD table
    case EnvId::kCoin:
      t.beta = 0.25;
      t.gamma = 0.96;
      t.entropy_coef = 0.1;
      t.actor_lr = 2e-3;
      t.critic_lr = 5e-3;
      t.batch_size = 512;
      t.buffer_update_freq = 10;
      break;
    case EnvId::kNegotiation:
      t.beta = 3.0;
      t.gamma = 0.9;
      t.entropy_coef = 0.005;
      t.actor_lr = 1e-3;
      t.critic_lr = 1e-3;
      t.batch_size = 16384;
      t.buffer_capacity = 100000;
      t.buffer_update_freq = 1;
      t.off_policy_ratio = 0.05;
      rc.envc.episode_length = 50;
      break;
  }
  if (algo == Algo::kPpo || algo == Algo::kPadalign) {
    t.normalize_advantages = true;
  }
  return rc;
}

void validate(const RunConfig& rc) {
  const TrainerConfig& t = rc.trainer;
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(rc.iters >= 0, "run.iters: must be >= 0");
  require(rc.threads >= 1, "run.threads: must be >= 1");
  require(rc.checkpoint_every >= 0, "run.checkpoint_every: must be >= 0");
  require(!rc.out.empty(), "run.out: must not be empty");
  require(rc.envc.episode_length >= 1, "env.episode_length: must be >= 1");
  require(rc.envc.grid >= 2, "env.grid: must be >= 2");
  require(rc.envc.players >= 2, "env.players: must be >= 2");
  require(rc.envc.public_goods_mult > 0, "env.public_goods_mult: must be > 0");
  require(t.gamma > 0 && t.gamma < 1, "trainer.gamma: must be in (0,1)");
  require(t.aa_gamma > 0 && t.aa_gamma <= 1, "trainer.aa_gamma: must be in (0,1]");
  require(t.entropy_coef >= 0, "trainer.entropy_coef: must be >= 0");
  require(t.actor_lr > 0, "trainer.actor_lr: must be > 0");
  require(t.critic_lr > 0, "trainer.critic_lr: must be > 0");
  require(t.batch_size >= 1, "trainer.batch_size: must be >= 1");
  require(t.ema_decay >= 0 && t.ema_decay <= 1,
          "trainer.ema_decay: must be in [0,1]");
  require(t.ppo_clip > 0 && t.ppo_clip < 1, "trainer.ppo_clip: must be in (0,1)");
  require(t.ppo_epochs >= 1, "trainer.ppo_epochs: must be >= 1");
  require(t.buffer_capacity >= 1, "trainer.buffer_capacity: must be >= 1");
  require(t.buffer_update_freq >= 1, "trainer.buffer_update_freq: must be >= 1");
  require(t.off_policy_ratio >= 0 && t.off_policy_ratio <= 1,
          "trainer.off_policy_ratio: must be in [0,1]");
  require(t.grad_clip > 0, "trainer.grad_clip: must be > 0");
  require(t.hidden >= 1, "trainer.hidden: must be >= 1");
  require(t.gae_lambda >= 0 && t.gae_lambda <= 1,
          "trainer.gae_lambda: must be in [0,1]");
  require(rc.league.seeds >= 1, "league.seeds: must be >= 1");
  require(rc.league.episodes >= 1, "league.episodes: must be >= 1");
  require(rc.league.length >= 1, "league.length: must be >= 1");
}

RunConfig load_run_config(const std::optional<std::string>& path,
                          const std::optional<std::string>& env_flag,
                          const std::optional<std::string>& algo_flag,
                          const std::vector<std::string>& sets) {
  std::vector<IniEntry> entries;
  if (path) entries = parse_ini(read_text_file(*path));

  // env/algo pick the default table, so resolve them before anything else.
  std::string env_s, algo_s = "adalign";
  for (const IniEntry& e : entries) {
    if (e.section == "run" && e.key == "env") env_s = e.value;
    if (e.section == "run" && e.key == "algo") algo_s = e.value;
  }
  if (env_flag) env_s = *env_flag;
  if (algo_flag) algo_s = *algo_flag;
  if (env_s.empty())
    throw ConfigError("env is required (pass --env or set run.env)");

  RunConfig rc = default_run_config(env_id_from_string(env_s),
                                    algo_from_string(algo_s));
  for (const IniEntry& e : entries) {
    try {
      apply_kv(rc, e.section, e.key, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError("config line " + std::to_string(e.line) + ": " +
                        err.what());
    }
  }
  // Flags win over the file.
  rc.env = env_id_from_string(env_s);
  rc.algo = algo_from_string(algo_s);
  for (const std::string& s : sets) apply_override(rc, s);
  validate(rc);
  return rc;
}

std::string render_effective_config(const RunConfig& rc) {
  std::ostringstream o;
  o.precision(17);
  const TrainerConfig& t = rc.trainer;
  o << "[run]\n";
  o << "env = " << to_string(rc.env) << "\n";
  o << "algo = " << to_string(rc.algo) << "\n";
  o << "seed = " << rc.seed << "\n";
  o << "iters = " << rc.iters << "\n";
  o << "out = " << rc.out << "\n";
  o << "threads = " << rc.threads << "\n";
  o << "checkpoint_every = " << rc.checkpoint_every << "\n";
  o << "overwrite = " << (rc.overwrite ? "true" : "false") << "\n";
  o << "\n[env]\n";
  o << "episode_length = " << rc.envc.episode_length << "\n";
  o << "grid = " << rc.envc.grid << "\n";
  o << "alternating = " << (rc.envc.alternating ? "true" : "false") << "\n";
  o << "players = " << rc.envc.players << "\n";
  o << "payoffs = " << rc.envc.payoffs << "\n";
  o << "public_goods_mult = " << rc.envc.public_goods_mult << "\n";
  o << "\n[trainer]\n";
  o << "beta = " << t.beta << "\n";
  o << "gamma = " << t.gamma << "\n";
  o << "aa_gamma = " << t.aa_gamma << "\n";
  o << "align_variant = "
    << (t.align_variant == AlignVariant::kGammaDiscounted ? "gamma_discounted"
                                                          : "inverse_t")
    << "\n";
  o << "quadrants = " << t.quadrants << "\n";
  o << "entropy_coef = " << t.entropy_coef << "\n";
  o << "actor_lr = " << t.actor_lr << "\n";
  o << "critic_lr = " << t.critic_lr << "\n";
  o << "batch_size = " << t.batch_size << "\n";
  o << "ema_decay = " << t.ema_decay << "\n";
  o << "ppo_clip = " << t.ppo_clip << "\n";
  o << "ppo_epochs = " << t.ppo_epochs << "\n";
  o << "normalize_advantages = " << (t.normalize_advantages ? "true" : "false")
    << "\n";
  o << "buffer_capacity = " << t.buffer_capacity << "\n";
  o << "buffer_update_freq = " << t.buffer_update_freq << "\n";
  o << "off_policy_ratio = " << t.off_policy_ratio << "\n";
  o << "grad_clip = " << t.grad_clip << "\n";
  o << "hidden = " << t.hidden << "\n";
  o << "gae_lambda = " << t.gae_lambda << "\n";
  o << "self_play = " << (t.self_play ? "true" : "false") << "\n";
  o << "\n[league]\n";
  o << "seeds = " << rc.league.seeds << "\n";
  o << "episodes = " << rc.league.episodes << "\n";
  o << "length = " << rc.league.length << "\n";
  o << "metric = " << rc.league.metric << "\n";
  o << "scripted = " << rc.league.scripted << "\n";
  return o.str();
}

}  // namespace adalign
