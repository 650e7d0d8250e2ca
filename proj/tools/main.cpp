#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "adalign/analysis.hpp"
#include "adalign/fdcheck.hpp"
#include "adalign/league.hpp"
#include "adalign/nets.hpp"
#include "adalign/trainers.hpp"

namespace fs = std::filesystem;
using namespace adalign;

namespace {

// ---- verification checks ----------------------------------------------------

struct CheckRow {
  std::string suite, name;
  double residual = 0.0;
  double bound = 0.0;
  bool upper = true;  // pass iff residual < bound (else residual > bound)
  bool pass = false;
};

void add_check(std::vector<CheckRow>& rows, const std::string& suite,
               const std::string& name, double residual, double bound,
               bool upper = true) {
  CheckRow r{suite, name, residual, bound, upper, false};
  r.pass = upper ? residual < bound : residual > bound;
  rows.push_back(r);
}

// Tanh-sinh quadrature over (lo, hi); nodes cluster doubly-exponentially at
// the endpoints, which is what an endpoint-spiked squashed density needs.
double tanh_sinh(const std::function<double(double)>& f, double lo, double hi) {
  const double c = 0.5 * (hi + lo), r = 0.5 * (hi - lo);
  const double h = 1.0 / 64.0, half_pi = M_PI / 2.0;
  double acc = 0.0;
  const int K = static_cast<int>(6.2 / h);
  for (int k = -K; k <= K; ++k) {
    const double u = k * h;
    const double s = half_pi * std::sinh(u);
    const double ch = std::cosh(s);
    const double w = half_pi * std::cosh(u) / (ch * ch);
    if (!(w > 1e-280)) continue;
    acc += w * f(c + r * std::tanh(s));
  }
  return acc * r * h;
}

// Finite-difference pass over a random tanh-encoder GRU with a log-softmax
// readout, the discrete training topology.
double discrete_fd_once(uint64_t seed) {
  RngStream rng(seed, "fdcheck");
  const int B = 2, T = 4, obs = 3, H = 6, A = 3;
  std::vector<Tensor> params;
  params.push_back(Tensor::randn(obs, H, rng, 0.7));
  params.push_back(Tensor::randn(1, H, rng, 0.2));
  for (int gate = 0; gate < 3; ++gate) {
    params.push_back(Tensor::randn(H, H, rng, 0.6));
    params.push_back(Tensor::randn(H, H, rng, 0.6));
    params.push_back(Tensor::randn(1, H, rng, 0.2));
  }
  params.push_back(Tensor::randn(H, A, rng, 0.7));
  params.push_back(Tensor::randn(1, A, rng, 0.2));
  std::vector<Tensor> xs, ws;
  for (int i = 0; i < T; ++i) {
    xs.push_back(Tensor::randn(B, obs, rng, 1.0));
    ws.push_back(Tensor::randn(B, A, rng, 0.8));
  }
  FdFunc f = [=](Tape& t, const std::vector<Var>& p) -> Var {
    BoundLinear pre{p[0], p[1]};
    BoundGru gru{p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9], p[10]};
    BoundLinear head{p[11], p[12]};
    Var h = t.constant(Tensor(B, H));
    Var acc = t.constant(0.0);
    for (int i = 0; i < T; ++i) {
      Var u = t.tanh(pre(t, t.constant(xs[i])));
      h = gru.step(t, u, h);
      Var z = head(t, h);
      acc = t.add(acc, t.sum_all(t.mul(t.log_softmax(z), t.constant(ws[i]))));
      acc = t.add(acc, t.mean_all(t.tanh(z)));
    }
    return t.scale(acc, 0.25);
  };
  return finite_difference_check(f, params).max_rel_err;
}

// Same idea through the squashed-Gaussian log-density head.
double continuous_fd_once(uint64_t seed) {
  RngStream rng(seed, "fdcheck-cont");
  const int B = 2, T = 3, obs = 4, H = 6, A = 2;
  std::vector<Tensor> params;
  params.push_back(Tensor::randn(obs, H, rng, 0.7));
  params.push_back(Tensor::randn(1, H, rng, 0.2));
  for (int gate = 0; gate < 3; ++gate) {
    params.push_back(Tensor::randn(H, H, rng, 0.6));
    params.push_back(Tensor::randn(H, H, rng, 0.6));
    params.push_back(Tensor::randn(1, H, rng, 0.2));
  }
  params.push_back(Tensor::randn(H, A, rng, 0.7));
  params.push_back(Tensor::randn(1, A, rng, 0.2));
  Tensor log_std(1, A);
  for (double& v : log_std.data) v = rng.uniform(-0.7, 0.0);
  params.push_back(log_std);
  std::vector<Tensor> xs, acts;
  for (int i = 0; i < T; ++i) {
    xs.push_back(Tensor::randn(B, obs, rng, 1.0));
    Tensor a(B, A);
    for (double& v : a.data) v = rng.uniform(0.8, 4.2);
    acts.push_back(a);
  }
  FdFunc f = [=](Tape& t, const std::vector<Var>& p) -> Var {
    BoundLinear enc{p[0], p[1]};
    BoundGru gru{p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9], p[10]};
    BoundLinear actor{p[11], p[12]};
    Var ls = p[13];
    Var h = t.constant(Tensor(B, H));
    Var acc = t.constant(0.0);
    for (int i = 0; i < T; ++i) {
      Var u = t.tanh(enc(t, t.constant(xs[i])));
      h = gru.step(t, u, h);
      Var mraw = actor(t, h);
      acc = t.add(acc, t.sum_all(squashed_log_prob(t, mraw, ls, acts[i])));
    }
    return t.scale(acc, 1.0 / (B * T));
  };
  return finite_difference_check(f, params).max_rel_err;
}

// Relu kinks break central differences near zero preactivations, so the relu
// path gets a fixed instance with all preactivation margins above 0.3.
double relu_fd_margin() {
  std::vector<Tensor> params = {
      Tensor::from({{0.6, -0.4}, {0.3, 0.8}}),
      Tensor::from({{0.05, -0.1}}),
  };
  Tensor x = Tensor::from({{1.0, 1.0}, {-1.0, 0.5}});
  Tensor m = Tensor::from({{1.3, -0.7}, {0.9, 1.1}});
  FdFunc f = [=](Tape& t, const std::vector<Var>& p) -> Var {
    Var pre = t.add(t.matmul(t.constant(x), p[0]), p[1]);
    return t.sum_all(t.mul(t.relu(pre), t.constant(m)));
  };
  return finite_difference_check(f, params).max_rel_err;
}

void verify_autodiff(std::vector<CheckRow>& rows, int fd_seeds) {
  double worst_d = 0.0, worst_c = 0.0;
  for (int s = 0; s < fd_seeds; ++s) {
    worst_d = std::max(worst_d, discrete_fd_once(1000 + s));
    worst_c = std::max(worst_c, continuous_fd_once(2000 + s));
  }
  add_check(rows, "autodiff", "gru_logsoftmax_fd_rel_err", worst_d, 1e-4);
  add_check(rows, "autodiff", "gru_squashed_logprob_fd_rel_err", worst_c, 1e-4);
  add_check(rows, "autodiff", "relu_fd_rel_err_margin_inputs", relu_fd_margin(),
            1e-4);

  double worst_q = 0.0;
  RngStream rng(7, "quadrature");
  for (int i = 0; i < 20; ++i) {
    const double mean_raw = rng.uniform(-1.5, 1.5);
    const double log_std = rng.uniform(-1.5, 0.2);
    const double integral = tanh_sinh(
        [&](double a) {
          return std::exp(squashed_log_prob_scalar(mean_raw, log_std, a));
        },
        0.0, 5.0);
    worst_q = std::max(worst_q, std::abs(integral - 1.0));
  }
  add_check(rows, "autodiff", "squashed_density_normalization", worst_q, 1e-3);
}

void verify_advantage(std::vector<CheckRow>& rows) {
  RngStream rng(11, "advantage-verify");
  double worst_gae = 0.0;
  for (int i = 0; i < 200; ++i) {
    const int T = 20;
    const double gamma = rng.uniform(0.5, 0.99);
    const double lambda = rng.uniform(0.5, 1.0);
    std::vector<double> r(T), v(T);
    for (double& x : r) x = rng.normal();
    for (double& x : v) x = rng.normal();
    const double boot = rng.normal();
    std::vector<double> fast = gae(r, v, boot, GaeConfig{gamma, lambda});
    for (int t = 0; t < T; ++t) {
      double acc = 0.0, w = 1.0;
      for (int l = 0; t + l < T; ++l) {
        const double vn = t + l + 1 < T ? v[t + l + 1] : boot;
        acc += w * (r[t + l] + gamma * vn - v[t + l]);
        w *= gamma * lambda;
      }
      worst_gae = std::max(worst_gae, std::abs(fast[t] - acc));
    }
  }
  add_check(rows, "advantage", "gae_recursion_vs_brute_force", worst_gae, 1e-10);

  double worst_reorg = 0.0, worst_inv = 0.0;
  for (int i = 0; i < 50; ++i) {
    const int T = 64;
    AdvantageSeries s;
    s.gamma = rng.uniform(0.7, 0.99);
    s.beta = rng.uniform(0.1, 2.0);
    s.advantages.assign(2, std::vector<double>(T));
    for (auto& row : s.advantages)
      for (double& x : row) x = rng.normal();
    std::vector<double> w(T);
    for (double& x : w) x = rng.normal();

    std::vector<double> c =
        alignment_term_coefficients(s, AlignVariant::kGammaDiscounted);
    double lhs = 0.0;
    for (int t = 0; t < T; ++t) lhs += c[t] * w[t];
    worst_reorg =
        std::max(worst_reorg, std::abs(lhs - alignment_term_noncausal(s, w)));

    std::vector<double> ci =
        alignment_term_coefficients(s, AlignVariant::kInverseT);
    double pref = 0.0;
    for (int t = 0; t < T; ++t) {
      const double lit = s.beta * pref / (1.0 + t) * s.advantages[1][t];
      worst_inv = std::max(worst_inv, std::abs(ci[t] - lit));
      pref += s.advantages[0][t];
    }
  }
  add_check(rows, "advantage", "causal_vs_noncausal_reorganization",
            worst_reorg, 1e-10);
  add_check(rows, "advantage", "inverse_t_vs_literal_formula", worst_inv,
            1e-12);
}

void verify_nash(std::vector<CheckRow>& rows) {
  const IpdPayoffs pay = IpdPayoffs::standard_dilemma();
  const double gamma = 0.9;
  TabularPolicy ad = TabularPolicy::constant(0.0);
  NashCheckResult nash = nash_check_detail(ad, ad, pay, gamma);
  add_check(rows, "nash", "always_defect_alignment_residual",
            nash.is_nash ? nash.residual : 1.0, 1e-12);

  TabularPolicy soft = TabularPolicy::constant(0.01);
  NashCheckResult pert = nash_check_detail(soft, soft, pay, gamma);
  add_check(rows, "nash", "perturbed_residual_strictly_positive", pert.residual,
            0.0, /*upper=*/false);
}

void verify_loqa(std::vector<CheckRow>& rows) {
  RngStream rng(23, "loqa-verify");
  double worst_zero = 0.0, worst_k = 0.0, worst_t = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int T = 32;
    AdvantageSeries s;
    s.gamma = rng.uniform(0.7, 0.99);
    s.beta = rng.uniform(0.1, 2.0);
    s.advantages.assign(2, std::vector<double>(T));
    for (auto& row : s.advantages)
      for (double& x : row) x = rng.normal();
    std::vector<double> zeros(T, 0.0), probs(T);
    for (double& p : probs) p = rng.uniform();

    LoqaRelation undamped = loqa_term_relation(s, zeros);
    for (int t = 0; t < T; ++t)
      worst_zero = std::max(
          worst_zero, std::abs(undamped.loqa_at_k[t] - undamped.adalign[t]));

    LoqaRelation rel = loqa_term_relation(s, probs);
    for (int t = 0; t < T; ++t) {
      double sum_k = 0.0, sum_plain = 0.0;
      for (int k = 0; k < t; ++k) {
        const double gpow = std::pow(s.gamma, t - k);
        sum_k += gpow * (1.0 - probs[k]) * s.advantages[0][k];
        sum_plain += gpow * s.advantages[0][k];
      }
      const double lead = s.beta * std::pow(s.gamma, t + 1);
      worst_k = std::max(
          worst_k,
          std::abs(rel.loqa_at_k[t] - lead * sum_k * s.advantages[1][t]));
      worst_t = std::max(
          worst_t, std::abs(rel.loqa_at_t[t] - lead * sum_plain *
                                                   s.advantages[1][t] *
                                                   (1.0 - probs[t])));
    }
  }
  add_check(rows, "loqa", "zero_damping_equals_alignment", worst_zero, 1e-12);
  add_check(rows, "loqa", "damped_at_k_vs_resummation", worst_k, 1e-12);
  add_check(rows, "loqa", "damped_at_t_vs_resummation", worst_t, 1e-12);
}

int cmd_verify(const std::string& suite, const std::string& json_path) {
  std::vector<CheckRow> rows;
  if (suite == "autodiff" || suite == "all") verify_autodiff(rows, 20);
  if (suite == "advantage" || suite == "all") verify_advantage(rows);
  if (suite == "nash" || suite == "all") verify_nash(rows);
  if (suite == "loqa" || suite == "all") verify_loqa(rows);

  std::printf("%-10s %-36s %13s %10s %s\n", "suite", "check", "residual",
              "bound", "status");
  bool all_pass = true;
  for (const CheckRow& r : rows) {
    std::printf("%-10s %-36s %13.4e %s%9.1e %s\n", r.suite.c_str(),
                r.name.c_str(), r.residual, r.upper ? "<" : ">", r.bound,
                r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  if (!json_path.empty()) {
    nlohmann::ordered_json doc;
    doc["suite"] = suite;
    doc["pass"] = all_pass;
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const CheckRow& r : rows) {
      nlohmann::ordered_json jr;
      jr["suite"] = r.suite;
      jr["check"] = r.name;
      jr["residual"] = r.residual;
      jr["bound"] = r.bound;
      jr["direction"] = r.upper ? "<" : ">";
      jr["pass"] = r.pass;
      arr.push_back(std::move(jr));
    }
    doc["checks"] = std::move(arr);
    write_text_file(json_path, doc.dump(2) + "\n");
  }
  if (!all_pass) {
    for (const CheckRow& r : rows)
      if (!r.pass)
        std::fprintf(stderr, "FAILED %s/%s residual %.6e\n", r.suite.c_str(),
                     r.name.c_str(), r.residual);
    return 1;
  }
  return 0;
}

// ---- league command ---------------------------------------------------------

int cmd_league(const RunConfig& rc, const std::string& agents_dir) {
  std::vector<AgentSpec> specs = discover_agents(agents_dir, rc.league);
  LeagueMatrix m = run_league(specs, rc.env, rc.envc, rc.league, rc.seed);

  fs::path out(rc.out);
  std::error_code ec;
  if (fs::exists(out, ec) && !fs::is_empty(out, ec) && !rc.overwrite)
    throw ConfigError("output directory '" + rc.out +
                      "' is not empty; pass --overwrite to reuse it");
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + rc.out + "'");
  write_text_file((out / "config.ini").string(), render_effective_config(rc));
  write_league_csv(m, (out / "league.csv").string());
  write_league_json(m, (out / "league.json").string());

  const int N = static_cast<int>(m.agents.size());
  std::printf("%-14s", "");
  for (int j = 0; j < N; ++j) std::printf(" %12s", m.agents[j].c_str());
  std::printf("\n");
  for (int i = 0; i < N; ++i) {
    std::printf("%-14s", m.agents[i].c_str());
    for (int j = 0; j < N; ++j) {
      const LeagueCell& c = m.cell(i, j);
      if (c.absent) std::printf(" %12s", "absent");
      else std::printf(" %12.4f", c.mean);
    }
    std::printf("\n");
  }
  std::printf("wrote %s/league.csv and league.json\n", rc.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"advantage-aligned opponent shaping: training, leagues and "
               "analytic verification"};
  app.require_subcommand(1);

  std::optional<std::string> config_path, env_flag, algo_flag;
  std::optional<uint64_t> seed_flag;
  std::optional<int> iters_flag, threads_flag;
  std::optional<std::string> out_flag;
  std::vector<std::string> sets;
  bool overwrite = false;

  auto add_common = [&](CLI::App* cmd, bool with_algo) {
    cmd->add_option("--config", config_path, "INI config file");
    cmd->add_option("--env", env_flag, "ipd|coin|negotiation|matrix");
    if (with_algo) cmd->add_option("--algo", algo_flag, "ac|ppo|adalign|padalign");
    cmd->add_option("--seed", seed_flag, "master seed");
    cmd->add_option("--out", out_flag, "output directory");
    cmd->add_option("--set", sets, "override, key=value or section.key=value")
        ->take_all();
    cmd->add_option("--threads", threads_flag,
                    "worker threads (1 = bit-exact serial default)");
    cmd->add_flag("--overwrite", overwrite, "reuse a non-empty output directory");
  };

  CLI::App* train = app.add_subcommand("train", "train agents on one env");
  add_common(train, true);
  std::optional<int> ckpt_every;
  train->add_option("--iters", iters_flag, "training iterations");
  train->add_option("--checkpoint-every", ckpt_every,
                    "checkpoint period in iterations");

  CLI::App* league =
      app.add_subcommand("league", "zero-shot cross-play evaluation");
  add_common(league, false);
  std::string agents_dir;
  std::string scripted;
  league->add_option("--agents-dir", agents_dir,
                     "directory with one subdirectory of .ckpt files per agent");
  league->add_option("--scripted", scripted,
                     "comma list of scripted anchors (AC,AD,TFT,Random)");

  CLI::App* verify =
      app.add_subcommand("verify", "analytic residual checks");
  std::string suite = "all";
  verify->add_option("suite", suite, "autodiff|advantage|nash|loqa|all")
      ->check(CLI::IsMember({"autodiff", "advantage", "nash", "loqa", "all"}));
  std::string json_path;
  verify->add_option("--json", json_path, "also write results as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(verify)) return cmd_verify(suite, json_path);

    // Flag sugar becomes plain overrides applied before the user's --set list
    // so explicit --set always wins.
    std::vector<std::string> all_sets;
    if (seed_flag) all_sets.push_back("run.seed=" + std::to_string(*seed_flag));
    if (iters_flag)
      all_sets.push_back("run.iters=" + std::to_string(*iters_flag));
    if (out_flag) all_sets.push_back("run.out=" + *out_flag);
    if (threads_flag)
      all_sets.push_back("run.threads=" + std::to_string(*threads_flag));
    if (ckpt_every)
      all_sets.push_back("run.checkpoint_every=" + std::to_string(*ckpt_every));
    if (overwrite) all_sets.push_back("run.overwrite=true");
    if (app.got_subcommand(league) && !scripted.empty())
      all_sets.push_back("league.scripted=" + scripted);
    all_sets.insert(all_sets.end(), sets.begin(), sets.end());

    RunConfig rc = load_run_config(config_path, env_flag, algo_flag, all_sets);
    if (app.got_subcommand(train)) return train_loop(rc);
    return cmd_league(rc, agents_dir);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const VerificationError& e) {
    std::fprintf(stderr, "verification failure: %s\n", e.what());
    return 1;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
