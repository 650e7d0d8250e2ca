#include "adalign/advantage.hpp"

#include <cmath>

namespace adalign {

std::vector<double> gae(const std::vector<double>& rewards,
                        const std::vector<double>& values,
                        double bootstrap_value, const GaeConfig& cfg) {
  if (rewards.size() != values.size())
    throw ShapeError("gae: rewards/values length mismatch");
  if (cfg.gamma < 0.0 || cfg.gamma > 1.0 || cfg.lambda < 0.0 ||
      cfg.lambda > 1.0)
    throw ConfigError("gae: gamma and lambda must be in [0,1]");
  const int T = static_cast<int>(rewards.size());
  std::vector<double> adv(T);
  double running = 0.0;
  for (int t = T - 1; t >= 0; --t) {
    const double v_next = t + 1 < T ? values[t + 1] : bootstrap_value;
    const double delta = rewards[t] + cfg.gamma * v_next - values[t];
    running = delta + cfg.gamma * cfg.lambda * running;
    adv[t] = running;
  }
  return adv;
}

std::vector<double> discounted_returns(const std::vector<double>& rewards,
                                       double gamma, double bootstrap) {
  std::vector<double> g(rewards.size());
  double running = bootstrap;
  for (int t = static_cast<int>(rewards.size()) - 1; t >= 0; --t) {
    running = rewards[t] + gamma * running;
    g[t] = running;
  }
  return g;
}

std::vector<double> past_sums(const std::vector<double>& a, double gamma) {
  std::vector<double> s(a.size());
  double running = 0.0;
  for (size_t t = 0; t < a.size(); ++t) {
    s[t] = running;
    running = gamma * (running + a[t]);
  }
  return s;
}

void AdvantageSeries::validate() const {
  if (advantages.size() < 2)
    throw ShapeError("AdvantageSeries: needs at least two players");
  const size_t T = advantages[0].size();
  if (T == 0) throw ShapeError("AdvantageSeries: empty series");
  for (const auto& a : advantages)
    if (a.size() != T)
      throw ShapeError("AdvantageSeries: per-player lengths differ");
}

AlignVariant align_variant_from_string(const std::string& s) {
  if (s == "gamma_discounted") return AlignVariant::kGammaDiscounted;
  if (s == "inverse_t") return AlignVariant::kInverseT;
  throw ConfigError("unknown alignment variant '" + s +
                    "' (expected gamma_discounted|inverse_t)");
}

std::vector<double> alignment_term_coefficients(const AdvantageSeries& s,
                                                AlignVariant variant, int self,
                                                int opp) {
  s.validate();
  if (self == opp || self < 0 || opp < 0 || self >= s.num_players() ||
      opp >= s.num_players())
    throw ShapeError("alignment_term_coefficients: bad player indices");
  const auto& a_self = s.advantages[self];
  const auto& a_opp = s.advantages[opp];
  const int T = s.length();
  std::vector<double> c(T);
  if (variant == AlignVariant::kGammaDiscounted) {
    const std::vector<double> ps = past_sums(a_self, s.gamma);
    double gpow = s.gamma;  // gamma^{ t+1 }
    for (int t = 0; t < T; ++t) {
      c[t] = s.beta * gpow * ps[t] * a_opp[t];
      gpow *= s.gamma;
    }
  } else {
    double flat = 0.0;  // undiscounted sum of past own advantages
    for (int t = 0; t < T; ++t) {
      c[t] = s.beta * flat / (1.0 + t) * a_opp[t];
      flat += a_self[t];
    }
  }
  return c;
}

double alignment_term_noncausal(const AdvantageSeries& s,
                                const std::vector<double>& w, int self,
                                int opp) {
  s.validate();
  const int T = s.length();
  if (static_cast<int>(w.size()) != T)
    throw ShapeError("alignment_term_noncausal: weight length mismatch");
  const auto& a_self = s.advantages[self];
  const auto& a_opp = s.advantages[opp];
  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    for (int k = t + 1; k < T; ++k) {
      total += s.beta * std::pow(s.gamma, 2 * k - t + 1) * a_self[t] *
               a_opp[k] * w[k];
    }
  }
  return total;
}

std::vector<double> modified_advantage(const AdvantageSeries& s, int self,
                                       int opp) {
  s.validate();
  const auto& a_self = s.advantages[self];
  const auto& a_opp = s.advantages[opp];
  const std::vector<double> ps = past_sums(a_self, s.gamma);
  std::vector<double> out(s.length());
  for (int t = 0; t < s.length(); ++t)
    out[t] = a_self[t] + s.beta * s.gamma * ps[t] * a_opp[t];
  return out;
}

std::vector<double> modified_advantage_nplayer(const AdvantageSeries& s,
                                               int i) {
  s.validate();
  if (i < 0 || i >= s.num_players())
    throw ShapeError("modified_advantage_nplayer: player index out of range");
  const std::vector<double> ps = past_sums(s.advantages[i], s.gamma);
  std::vector<double> out(s.length());
  for (int t = 0; t < s.length(); ++t) {
    double opp_sum = 0.0;
    for (int j = 0; j < s.num_players(); ++j)
      if (j != i) opp_sum += s.advantages[j][t];
    out[t] = s.advantages[i][t] + s.beta * s.gamma * ps[t] * opp_sum;
  }
  return out;
}

QuadrantMode quadrant_mode_from_string(const std::string& s) {
  if (s == "C") return QuadrantMode::kC;
  if (s == "E") return QuadrantMode::kE;
  if (s == "V") return QuadrantMode::kV;
  if (s == "S") return QuadrantMode::kS;
  throw ConfigError("unknown quadrant mode '" + s + "' (expected C|E|V|S)");
}

std::vector<double> quadrant_mask(const std::vector<double>& coeffs,
                                  const AdvantageSeries& s,
                                  const std::vector<QuadrantMode>& modes,
                                  int self, int opp) {
  s.validate();
  if (static_cast<int>(coeffs.size()) != s.length())
    throw ShapeError("quadrant_mask: coefficient length mismatch");
  const std::vector<double> ps = past_sums(s.advantages[self], s.gamma);
  const auto& a_opp = s.advantages[opp];
  std::vector<double> out = coeffs;
  for (int t = 0; t < s.length(); ++t) {
    const bool sp = ps[t] > 0.0, ap = a_opp[t] > 0.0;
    for (QuadrantMode m : modes) {
      const bool match = (m == QuadrantMode::kC && sp && ap) ||
                         (m == QuadrantMode::kE && sp && !ap) ||
                         (m == QuadrantMode::kV && !sp && ap) ||
                         (m == QuadrantMode::kS && !sp && !ap);
      if (match) {
        out[t] = 0.0;
        break;
      }
    }
  }
  return out;
}

}  // namespace adalign
