#pragma once

// Gradient checking against central finite differences. Used by the test
// suites and the `verify` CLI; kept header-only since it is all glue.

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "adalign/error.hpp"
#include "adalign/tape.hpp"

namespace adalign {

// Builds a scalar loss on the given tape from one Var per parameter tensor.
// The same callable is used for the analytic pass (leaves with grad) and the
// perturbed passes (plain constants), so it must not cache state between
// calls or draw randomness.
using FdFunc = std::function<Var(Tape&, const std::vector<Var>&)>;

struct FdReport {
  double max_rel_err = 0.0;
  double base_value = 0.0;
  int64_t n_params = 0;
};

inline double fd_eval(const FdFunc& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.constant(p));
  Var loss = f(tape, vars);
  if (loss.rows() != 1 || loss.cols() != 1)
    throw ShapeError("finite_difference_check: loss must be a scalar, got " +
                     loss.val().shape_str());
  return loss.val().data[0];
}

inline FdReport finite_difference_check(const FdFunc& f,
                                        const std::vector<Tensor>& params,
                                        double h = 1e-5) {
  if (!(h > 0.0)) throw ConfigError("finite_difference_check: h must be > 0");

  // Two base evaluations must agree bit for bit, otherwise the perturbed
  // evaluations below would be measuring noise rather than the derivative.
  double base0 = fd_eval(f, params);
  double base1 = fd_eval(f, params);
  if (std::memcmp(&base0, &base1, sizeof(double)) != 0)
    throw VerificationError(
        "finite_difference_check: function is not deterministic "
        "(repeated evaluation mismatch)");

  // Analytic pass.
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.leaf(p, true));
  Var loss = f(tape, vars);
  if (loss.rows() != 1 || loss.cols() != 1)
    throw ShapeError("finite_difference_check: loss must be a scalar, got " +
                     loss.val().shape_str());
  tape.backward(loss);

  FdReport report;
  report.base_value = base0;

  std::vector<Tensor> work = params;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& g = vars[pi].grad();
    for (size_t k = 0; k < work[pi].data.size(); ++k) {
      double saved = work[pi].data[k];
      work[pi].data[k] = saved + h;
      double fplus = fd_eval(f, work);
      work[pi].data[k] = saved - h;
      double fminus = fd_eval(f, work);
      work[pi].data[k] = saved;

      double fd = (fplus - fminus) / (2.0 * h);
      // The denominator floor sits at the roundoff scale of the central
      // difference itself (eps * |f| / 2h with |f| up to ~10). Below it the
      // quotient would measure FD noise, not gradient error; near-zero
      // entries are still held to |fd - g| < tol * 1e-5 in absolute terms.
      double err = std::abs(fd - g.data[k]) / (std::abs(g.data[k]) + 1e-5);
      if (err > report.max_rel_err) report.max_rel_err = err;
      ++report.n_params;
    }
  }
  return report;
}

}  // namespace adalign
