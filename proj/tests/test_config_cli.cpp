#include <cstdlib>
#include <filesystem>
#include <string>

#include "adalign/config.hpp"
#include "adalign/error.hpp"
#include "adalign/trainers.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace adalign;
namespace fs = std::filesystem;

TEST_CASE("default tables per environment") {
  SUBCASE("ipd") {
    RunConfig rc = default_run_config(EnvId::kIpd, Algo::kAdalign);
    const TrainerConfig& t = rc.trainer;
    CHECK(t.beta == 0.3);
    CHECK(t.gamma == 0.9);
    CHECK(t.aa_gamma == 0.9);
    CHECK(t.align_variant == AlignVariant::kInverseT);
    CHECK(t.entropy_coef == 0.15);
    CHECK(t.actor_lr == 1e-4);
    CHECK(t.critic_lr == 1e-3);
    CHECK(t.batch_size == 2048);
    CHECK(t.ema_decay == 0.99);
    CHECK(t.buffer_capacity == 10000);
    CHECK(t.buffer_update_freq == 1);
    CHECK(t.off_policy_ratio == 1.0);
    CHECK(t.grad_clip == 1.0);
    CHECK(t.hidden == 64);
    CHECK(t.gae_lambda == 0.95);
    CHECK(t.normalize_advantages == false);
    CHECK(rc.envc.episode_length == 16);
  }
  SUBCASE("coin") {
    RunConfig rc = default_run_config(EnvId::kCoin, Algo::kAdalign);
    const TrainerConfig& t = rc.trainer;
    CHECK(t.beta == 0.25);
    CHECK(t.gamma == 0.96);
    CHECK(t.entropy_coef == 0.1);
    CHECK(t.actor_lr == 2e-3);
    CHECK(t.critic_lr == 5e-3);
    CHECK(t.batch_size == 512);
    CHECK(t.buffer_update_freq == 10);
    CHECK(rc.envc.grid == 3);
  }
  SUBCASE("negotiation") {
    RunConfig rc = default_run_config(EnvId::kNegotiation, Algo::kAdalign);
    const TrainerConfig& t = rc.trainer;
    CHECK(t.beta == 3.0);
    CHECK(t.entropy_coef == 0.005);
    CHECK(t.actor_lr == 1e-3);
    CHECK(t.critic_lr == 1e-3);
    CHECK(t.batch_size == 16384);
    CHECK(t.buffer_capacity == 100000);
    CHECK(t.off_policy_ratio == 0.05);
    CHECK(rc.envc.episode_length == 50);
  }
  SUBCASE("matrix shares the ipd table") {
    RunConfig rc = default_run_config(EnvId::kMatrix, Algo::kAdalign);
    CHECK(rc.trainer.batch_size == 2048);
    CHECK(rc.envc.players == 2);
  }
  SUBCASE("ppo-style algos normalize advantages") {
    CHECK(default_run_config(EnvId::kIpd, Algo::kPpo)
              .trainer.normalize_advantages);
    CHECK(default_run_config(EnvId::kIpd, Algo::kPadalign)
              .trainer.normalize_advantages);
    CHECK(!default_run_config(EnvId::kIpd, Algo::kAc)
               .trainer.normalize_advantages);
    CHECK(!default_run_config(EnvId::kIpd, Algo::kAdalign)
               .trainer.normalize_advantages);
  }
}

TEST_CASE("apply_kv assigns and validates typed fields") {
  RunConfig rc = default_run_config(EnvId::kIpd, Algo::kAdalign);
  apply_kv(rc, "trainer", "beta", "0.55");
  CHECK(rc.trainer.beta == 0.55);
  apply_kv(rc, "trainer", "align_variant", "gamma_discounted");
  CHECK(rc.trainer.align_variant == AlignVariant::kGammaDiscounted);
  apply_kv(rc, "trainer", "quadrants", "CE");
  CHECK(rc.trainer.quadrants == "CE");
  apply_kv(rc, "env", "players", "3");
  CHECK(rc.envc.players == 3);
  apply_kv(rc, "run", "seed", "12345");
  CHECK(rc.seed == 12345);
  apply_kv(rc, "run", "overwrite", "true");
  CHECK(rc.overwrite);
  apply_kv(rc, "run", "overwrite", "0");
  CHECK(!rc.overwrite);
  apply_kv(rc, "league", "metric", "episode_sum");
  CHECK(rc.league.metric == "episode_sum");

  CHECK_THROWS_AS(apply_kv(rc, "trainer", "no_such_knob", "1"), ConfigError);
  CHECK_THROWS_AS(apply_kv(rc, "nowhere", "beta", "1"), ConfigError);
  CHECK_THROWS_AS(apply_kv(rc, "trainer", "beta", "fast"), ConfigError);
  CHECK_THROWS_AS(apply_kv(rc, "run", "iters", "3.5"), ConfigError);
}

TEST_CASE("current_agent_fraction is the complement of off_policy_ratio") {
  RunConfig rc = default_run_config(EnvId::kIpd, Algo::kAdalign);
  apply_kv(rc, "trainer", "current_agent_fraction", "0.25");
  CHECK(rc.trainer.off_policy_ratio == doctest::Approx(0.75));
  apply_kv(rc, "trainer", "off_policy_ratio", "0.4");
  CHECK(rc.trainer.off_policy_ratio == 0.4);
}

TEST_CASE("apply_override accepts bare and qualified keys") {
  RunConfig rc = default_run_config(EnvId::kIpd, Algo::kAdalign);
  apply_override(rc, "trainer.hidden=32");
  CHECK(rc.trainer.hidden == 32);
  apply_override(rc, "hidden = 16");
  CHECK(rc.trainer.hidden == 16);
  apply_override(rc, "grid=4");
  CHECK(rc.envc.grid == 4);
  CHECK_THROWS_AS(apply_override(rc, "hidden"), ConfigError);
  CHECK_THROWS_AS(apply_override(rc, "no_such=1"), ConfigError);
}

TEST_CASE("ini parsing is strict about shape and reports line numbers") {
  auto entries = parse_ini("# comment\n[run]\nseed = 7\n\n; more\n[trainer]\nbeta=0.5\n");
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].section == "run");
  CHECK(entries[0].key == "seed");
  CHECK(entries[0].value == "7");
  CHECK(entries[0].line == 3);
  CHECK(entries[1].section == "trainer");
  CHECK(entries[1].line == 7);

  CHECK_THROWS_AS(parse_ini("seed = 7\n"), ConfigError);  // key before section
  CHECK_THROWS_AS(parse_ini("[run\nseed = 7\n"), ConfigError);
  CHECK_THROWS_AS(parse_ini("[run]\njust words\n"), ConfigError);
  CHECK_THROWS_AS(parse_ini("[]\n"), ConfigError);
  try {
    parse_ini("[run]\nok = 1\nbroken line\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("effective config renders and round trips") {
  RunConfig rc = default_run_config(EnvId::kCoin, Algo::kPadalign);
  rc.seed = 99;
  rc.trainer.quadrants = "V";
  rc.envc.alternating = true;
  std::string text = render_effective_config(rc);

  RunConfig back = default_run_config(EnvId::kIpd, Algo::kAc);
  for (const IniEntry& e : parse_ini(text))
    apply_kv(back, e.section, e.key, e.value);
  CHECK(render_effective_config(back) == text);
  CHECK(back.seed == 99);
  CHECK(back.envc.alternating);
  CHECK(back.trainer.quadrants == "V");
  CHECK(back.algo == Algo::kPadalign);
}

TEST_CASE("load_run_config layers file, flags, and sets") {
  std::string dir = oracle::scratch_dir("config_load");
  std::string path = dir + "/run.ini";
  write_text_file(path,
                  "[run]\nenv = coin\nalgo = ac\nseed = 4\n"
                  "[trainer]\nhidden = 24\n");
  RunConfig rc = load_run_config(path, std::nullopt, std::nullopt, {});
  CHECK(rc.env == EnvId::kCoin);
  CHECK(rc.algo == Algo::kAc);
  CHECK(rc.trainer.hidden == 24);
  CHECK(rc.trainer.batch_size == 512);  // coin defaults under the file

  // Flags override the file and reseat the default table.
  RunConfig rc2 = load_run_config(path, std::string("ipd"), std::string("ppo"),
                                  {"trainer.beta=0.9"});
  CHECK(rc2.env == EnvId::kIpd);
  CHECK(rc2.algo == Algo::kPpo);
  CHECK(rc2.trainer.batch_size == 2048);
  CHECK(rc2.trainer.hidden == 24);  // file entries still apply
  CHECK(rc2.trainer.beta == 0.9);

  CHECK_THROWS_AS(
      load_run_config(std::nullopt, std::nullopt, std::nullopt, {}),
      ConfigError);
  CHECK_THROWS_AS(load_run_config(std::string(dir + "/missing.ini"),
                                  std::string("ipd"), std::nullopt, {}),
                  IoError);
}

TEST_CASE("validate rejects out-of-range settings") {
  RunConfig rc = default_run_config(EnvId::kIpd, Algo::kAdalign);
  CHECK_NOTHROW(validate(rc));
  auto broken = [&](auto mut) {
    RunConfig c = rc;
    mut(c);
    CHECK_THROWS_AS(validate(c), ConfigError);
  };
  broken([](RunConfig& c) { c.trainer.gamma = 1.0; });
  broken([](RunConfig& c) { c.trainer.gamma = 0.0; });
  broken([](RunConfig& c) { c.trainer.actor_lr = 0.0; });
  broken([](RunConfig& c) { c.trainer.off_policy_ratio = 1.5; });
  broken([](RunConfig& c) { c.trainer.ppo_clip = 0.0; });
  broken([](RunConfig& c) { c.trainer.batch_size = 0; });
  broken([](RunConfig& c) { c.envc.players = 1; });
  broken([](RunConfig& c) { c.envc.grid = 1; });
  broken([](RunConfig& c) { c.iters = -1; });
  broken([](RunConfig& c) { c.out.clear(); });
  broken([](RunConfig& c) { c.league.seeds = 0; });
}

TEST_CASE("algo parsing") {
  CHECK(algo_from_string("ac") == Algo::kAc);
  CHECK(algo_from_string("ppo") == Algo::kPpo);
  CHECK(algo_from_string("adalign") == Algo::kAdalign);
  CHECK(algo_from_string("padalign") == Algo::kPadalign);
  CHECK_THROWS_AS(algo_from_string("dqn"), ConfigError);
  CHECK(to_string(Algo::kPadalign) == "padalign");
}

// ---- CLI process tests ------------------------------------------------------

namespace {

bool have_cli() { return std::getenv("ADALIGN_CLI") != nullptr; }

}  // namespace

TEST_CASE("cli fails cleanly without required arguments") {
  if (!have_cli()) return;
  std::string dir = oracle::scratch_dir("cli_errors");
  auto r = oracle::run_cli("train", dir + "/cap.txt");
  CHECK(r.code == 2);
  auto r2 = oracle::run_cli("train --env pong --iters 1 --out " + dir + "/x",
                            dir + "/cap2.txt");
  CHECK(r2.code == 2);
  CHECK(r2.output.find("pong") != std::string::npos);
  auto r3 = oracle::run_cli("--frobnicate", dir + "/cap3.txt");
  CHECK(r3.code == 2);
  auto r4 = oracle::run_cli("verify gravity", dir + "/cap4.txt");
  CHECK(r4.code == 2);
}

TEST_CASE("cli verify advantage suite passes") {
  if (!have_cli()) return;
  std::string dir = oracle::scratch_dir("cli_verify");
  auto r = oracle::run_cli("verify advantage --json " + dir + "/out.json",
                           dir + "/cap.txt");
  CHECK(r.code == 0);
  CHECK(r.output.find("PASS") != std::string::npos);
  CHECK(r.output.find("FAIL") == std::string::npos);
  std::string js = oracle::slurp(dir + "/out.json");
  CHECK(js.find("\"pass\": true") != std::string::npos);
}

TEST_CASE("cli tiny training run writes the expected artifacts") {
  if (!have_cli()) return;
  std::string dir = oracle::scratch_dir("cli_train");
  std::string out = dir + "/run1";
  std::string args =
      "train --env ipd --algo adalign --seed 3 --iters 2 --out " + out +
      " --set trainer.batch_size=8 trainer.hidden=8 run.checkpoint_every=1";
  auto r = oracle::run_cli(args, dir + "/cap.txt");
  INFO(r.output);
  CHECK(r.code == 0);
  CHECK(fs::exists(out + "/config.ini"));
  CHECK(fs::exists(out + "/runlog.csv"));
  CHECK(fs::exists(out + "/final_p0.ckpt"));
  CHECK(fs::exists(out + "/final_p1.ckpt"));
  CHECK(fs::exists(out + "/ckpt_1_p0.ckpt"));
  CHECK(fs::exists(out + "/ckpt_2_p1.ckpt"));

  std::string csv = oracle::slurp(out + "/runlog.csv");
  CHECK(csv.find("iteration") == 0);
  CHECK(csv.find("return_p0") != std::string::npos);
  CHECK(csv.find("wall_clock_s") != std::string::npos);
  // Header plus one row per iteration.
  int lines = 0;
  for (char c : csv)
    if (c == '\n') ++lines;
  CHECK(lines == 3);

  // Rerunning into the same directory refuses, --overwrite allows.
  auto r2 = oracle::run_cli(args, dir + "/cap2.txt");
  CHECK(r2.code == 2);
  auto r3 = oracle::run_cli(args + " --overwrite", dir + "/cap3.txt");
  CHECK(r3.code == 0);
}

TEST_CASE("cli training is deterministic modulo wall clock") {
  if (!have_cli()) return;
  std::string dir = oracle::scratch_dir("cli_det");
  std::string common =
      " --env ipd --algo adalign --seed 11 --iters 2 "
      "--set trainer.batch_size=8 trainer.hidden=8";
  auto r1 = oracle::run_cli("train --out " + dir + "/a" + common,
                            dir + "/cap1.txt");
  auto r2 = oracle::run_cli("train --out " + dir + "/b" + common,
                            dir + "/cap2.txt");
  REQUIRE(r1.code == 0);
  REQUIRE(r2.code == 0);
  CHECK(run_log_hash(oracle::slurp(dir + "/a/runlog.csv")) ==
        run_log_hash(oracle::slurp(dir + "/b/runlog.csv")));

  auto r3 = oracle::run_cli(
      "train --out " + dir + "/c --env ipd --algo adalign --seed 12 "
      "--iters 2 --set trainer.batch_size=8 trainer.hidden=8",
      dir + "/cap3.txt");
  REQUIRE(r3.code == 0);
  CHECK(run_log_hash(oracle::slurp(dir + "/a/runlog.csv")) !=
        run_log_hash(oracle::slurp(dir + "/c/runlog.csv")));
}

TEST_CASE("cli ac run matches adalign with beta zero") {
  if (!have_cli()) return;
  std::string dir = oracle::scratch_dir("cli_beta0");
  std::string common =
      " --env ipd --seed 5 --iters 2 --set trainer.batch_size=8 "
      "trainer.hidden=8";
  auto r1 = oracle::run_cli("train --out " + dir + "/ac --algo ac" + common,
                            dir + "/cap1.txt");
  auto r2 = oracle::run_cli(
      "train --out " + dir + "/aa --algo adalign" + common +
          " trainer.beta=0",
      dir + "/cap2.txt");
  REQUIRE(r1.code == 0);
  REQUIRE(r2.code == 0);
  CHECK(run_log_hash(oracle::slurp(dir + "/ac/runlog.csv")) ==
        run_log_hash(oracle::slurp(dir + "/aa/runlog.csv")));
}

TEST_CASE("cli scripted league reproduces closed-form dilemma values") {
  if (!have_cli()) return;
  std::string dir = oracle::scratch_dir("cli_league");
  std::string out = dir + "/league1";
  std::string args =
      "league --env ipd --scripted AC,AD,TFT --seed 7 --out " + out +
      " --set league.seeds=2 league.episodes=2 league.length=16";
  auto r = oracle::run_cli(args, dir + "/cap.txt");
  INFO(r.output);
  CHECK(r.code == 0);
  REQUIRE(fs::exists(out + "/league.csv"));
  REQUIRE(fs::exists(out + "/league.json"));

  std::string csv = oracle::slurp(out + "/league.csv");
  CHECK(csv.find("row_agent,col_agent,mean,std,n") == 0);
  // Deterministic scripted pairs: per-step values are exact.
  CHECK(csv.find("AC,AC,-1,0,8") != std::string::npos);
  CHECK(csv.find("AD,AD,-2,0,8") != std::string::npos);
  CHECK(csv.find("TFT,TFT,-1,0,8") != std::string::npos);
  CHECK(csv.find("AD,AC,0,0,8") != std::string::npos);
  CHECK(csv.find("AC,AD,-3,0,8") != std::string::npos);
  CHECK(csv.find("TFT,AD,-2.0625,0,8") != std::string::npos);
  CHECK(csv.find("AD,TFT,-1.875,0,8") != std::string::npos);

  // Bit-exact reproducibility.
  auto r2 = oracle::run_cli(args + " --overwrite", dir + "/cap2.txt");
  CHECK(r2.code == 0);
  CHECK(oracle::slurp(out + "/league.csv") == csv);
}
