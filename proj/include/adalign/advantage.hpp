#pragma once

#include <string>
#include <vector>

#include "adalign/error.hpp"

namespace adalign {

struct GaeConfig {
  double gamma = 0.9;
  double lambda = 0.95;
};

// A_t = sum_{l>=0} (gamma*lambda)^l delta_{t+l}, delta_t = r_t + gamma*V_{t+1}
// - V_t, with V_T = bootstrap_value. Standard backward recursion.
std::vector<double> gae(const std::vector<double>& rewards,
                        const std::vector<double>& values,
                        double bootstrap_value, const GaeConfig& cfg);

// Discounted reward-to-go G_t = r_t + gamma*G_{t+1}, G_T = bootstrap.
std::vector<double> discounted_returns(const std::vector<double>& rewards,
                                       double gamma, double bootstrap = 0.0);

// Recency-discounted sums of past advantages: S_0 = 0,
// S_{t+1} = gamma*(S_t + A_t), so S_t = sum_{k<t} gamma^{t-k} A_k.
std::vector<double> past_sums(const std::vector<double>& a, double gamma);

// Per-player advantage sequences plus the shaping constants. gamma here is
// the alignment discount (may differ from the reward discount), beta the
// shaping weight.
struct AdvantageSeries {
  std::vector<std::vector<double>> advantages;  // [player][t]
  double gamma = 0.9;
  double beta = 1.0;

  int num_players() const { return static_cast<int>(advantages.size()); }
  int length() const {
    return advantages.empty() ? 0 : static_cast<int>(advantages[0].size());
  }
  void validate() const;
};

enum class AlignVariant { kGammaDiscounted, kInverseT };
AlignVariant align_variant_from_string(const std::string& s);

// Shaping coefficient c_t multiplying grad log pi^self(a_t|s_t).
//   gamma_discounted: c_t = beta * gamma^{t+1} * S^self_t * A^opp_t
//   inverse_t:        c_t = beta * (sum_{k<t} A^self_k) / (1+t) * A^opp_t
// The inverse_t past sum is deliberately undiscounted.
std::vector<double> alignment_term_coefficients(const AdvantageSeries& s,
                                                AlignVariant variant,
                                                int self = 0, int opp = 1);

// Literal O(T^2) double-sum expansion of the shaping objective,
// beta * sum_t sum_{k>t} gamma^{2k-t+1} A^self_t A^opp_k w_k. Exactly equal
// to sum_t c_t w_t for the gamma_discounted coefficients; kept as the
// reorganization oracle.
double alignment_term_noncausal(const AdvantageSeries& s,
                                const std::vector<double>& w, int self = 0,
                                int opp = 1);

// Proximal form: A*_t = A^self_t + beta * gamma * S^self_t * A^opp_t.
std::vector<double> modified_advantage(const AdvantageSeries& s, int self = 0,
                                       int opp = 1);

// N-player: A^{i*}_t = A^i_t + beta * gamma * S^i_t * sum_{j!=i} A^j_t.
std::vector<double> modified_advantage_nplayer(const AdvantageSeries& s, int i);

// Ablation quadrants over (sign S^self_t, sign A^opp_t). Boundaries (zeros)
// count as negative so the four modes partition the plane.
enum class QuadrantMode { kC, kE, kV, kS };  // (+,+), (+,-), (-,+), (-,-)
QuadrantMode quadrant_mode_from_string(const std::string& s);

// Returns coeffs with entries zeroed where the sign pattern matches any of
// the given modes.
std::vector<double> quadrant_mask(const std::vector<double>& coeffs,
                                  const AdvantageSeries& s,
                                  const std::vector<QuadrantMode>& modes,
                                  int self = 0, int opp = 1);

}  // namespace adalign
