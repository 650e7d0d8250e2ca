#include "adalign/nets.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace adalign {

Tensor orthogonal(int64_t rows, int64_t cols, RngStream& rng, double gain) {
  const int64_t n = std::max(rows, cols), m = std::min(rows, cols);
  Eigen::MatrixXd g(n, m);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, m);
  Eigen::MatrixXd r = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
  for (int64_t j = 0; j < m; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  Tensor out(rows, cols);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j)
      out.at(i, j) = gain * (rows >= cols ? q(i, j) : q(j, i));
  return out;
}

void GruCell::init(int64_t in, int64_t hidden, RngStream& rng) {
  wz = orthogonal(in, hidden, rng, 1.0);
  uz = orthogonal(hidden, hidden, rng, 1.0);
  bz = Tensor(1, hidden);
  wr = orthogonal(in, hidden, rng, 1.0);
  ur = orthogonal(hidden, hidden, rng, 1.0);
  br = Tensor(1, hidden);
  wn = orthogonal(in, hidden, rng, 1.0);
  un = orthogonal(hidden, hidden, rng, 1.0);
  bn = Tensor(1, hidden);
}

Var BoundGru::step(Tape& t, Var x, Var h) const {
  Var z = t.sigmoid(t.add(t.add(t.matmul(x, wz), t.matmul(h, uz)), bz));
  Var r = t.sigmoid(t.add(t.add(t.matmul(x, wr), t.matmul(h, ur)), br));
  Var n = t.tanh(t.add(t.add(t.matmul(x, wn), t.mul(r, t.matmul(h, un))), bn));
  // h' = (1-z)*n + z*h, written as n + z*(h-n)
  return t.add(n, t.mul(z, t.sub(h, n)));
}

namespace {

constexpr double kReluGain = 1.4142135623730951;  // sqrt(2)
constexpr double kHeadGain = 0.01;  // final actor layer: near-uniform policy

Var push_leaf(Tape& t, std::vector<Var>& lv, const Tensor& x, bool rg) {
  Var v = t.leaf(x, rg);
  lv.push_back(v);
  return v;
}

BoundLinear bind_linear(Tape& t, std::vector<Var>& lv, Linear& l, bool rg) {
  BoundLinear b;
  b.w = push_leaf(t, lv, l.w, rg);
  b.b = push_leaf(t, lv, l.b, rg);
  return b;
}

BoundGru bind_gru(Tape& t, std::vector<Var>& lv, GruCell& g, bool rg) {
  BoundGru b;
  b.wz = push_leaf(t, lv, g.wz, rg);
  b.uz = push_leaf(t, lv, g.uz, rg);
  b.bz = push_leaf(t, lv, g.bz, rg);
  b.wr = push_leaf(t, lv, g.wr, rg);
  b.ur = push_leaf(t, lv, g.ur, rg);
  b.br = push_leaf(t, lv, g.br, rg);
  b.wn = push_leaf(t, lv, g.wn, rg);
  b.un = push_leaf(t, lv, g.un, rg);
  b.bn = push_leaf(t, lv, g.bn, rg);
  return b;
}

void append_linear(NamedParams& p, const std::string& prefix, Linear& l) {
  p.emplace_back(prefix + ".w", &l.w);
  p.emplace_back(prefix + ".b", &l.b);
}

void append_gru(NamedParams& p, const std::string& prefix, GruCell& g) {
  p.emplace_back(prefix + ".wz", &g.wz);
  p.emplace_back(prefix + ".uz", &g.uz);
  p.emplace_back(prefix + ".bz", &g.bz);
  p.emplace_back(prefix + ".wr", &g.wr);
  p.emplace_back(prefix + ".ur", &g.ur);
  p.emplace_back(prefix + ".br", &g.br);
  p.emplace_back(prefix + ".wn", &g.wn);
  p.emplace_back(prefix + ".un", &g.un);
  p.emplace_back(prefix + ".bn", &g.bn);
}

}  // namespace

DiscreteActorNet::DiscreteActorNet(int64_t obs, int64_t actions, int64_t hid,
                                   RngStream& rng)
    : obs_dim(obs), n_actions(actions), hidden(hid) {
  pre.init(obs, hid, rng, kReluGain);
  gru.init(hid, hid, rng);
  head1.init(hid, hid, rng, kReluGain);
  head2.init(hid, actions, rng, kHeadGain);
}

NamedParams DiscreteActorNet::named_params() {
  NamedParams p;
  append_linear(p, "pre", pre);
  append_gru(p, "gru", gru);
  append_linear(p, "head1", head1);
  append_linear(p, "head2", head2);
  return p;
}

DiscreteActorNet::Bound DiscreteActorNet::bind(Tape& t, bool rg) {
  Bound b;
  b.t = &t;
  b.pre = bind_linear(t, b.leaves, pre, rg);
  b.gru = bind_gru(t, b.leaves, gru, rg);
  b.head1 = bind_linear(t, b.leaves, head1, rg);
  b.head2 = bind_linear(t, b.leaves, head2, rg);
  return b;
}

std::pair<Var, Var> DiscreteActorNet::Bound::logits(Var x, Var h) const {
  Tape& tp = *t;
  Var z = tp.relu(pre(tp, x));
  Var h2 = gru.step(tp, z, h);
  Var y = tp.relu(head1(tp, h2));
  return {head2(tp, y), h2};
}

CriticNet::CriticNet(int64_t obs, int64_t hid, RngStream& rng)
    : obs_dim(obs), hidden(hid) {
  pre.init(obs, hid, rng, kReluGain);
  gru.init(hid, hid, rng);
  head1.init(hid + 1, hid, rng, kReluGain);
  head2.init(hid, 1, rng, 1.0);
}

NamedParams CriticNet::named_params() {
  NamedParams p;
  append_linear(p, "pre", pre);
  append_gru(p, "gru", gru);
  append_linear(p, "head1", head1);
  append_linear(p, "head2", head2);
  return p;
}

CriticNet::Bound CriticNet::bind(Tape& t, bool rg) {
  Bound b;
  b.t = &t;
  b.pre = bind_linear(t, b.leaves, pre, rg);
  b.gru = bind_gru(t, b.leaves, gru, rg);
  b.head1 = bind_linear(t, b.leaves, head1, rg);
  b.head2 = bind_linear(t, b.leaves, head2, rg);
  return b;
}

std::pair<Var, Var> CriticNet::Bound::value(Var x, Var h, double t_norm) const {
  Tape& tp = *t;
  Var z = tp.relu(pre(tp, x));
  Var h2 = gru.step(tp, z, h);
  Var tcol = tp.constant(Tensor::full(x.rows(), 1, t_norm));
  Var y = tp.relu(head1(tp, tp.concat_cols(h2, tcol)));
  return {head2(tp, y), h2};
}

ContinuousAgentNet::ContinuousAgentNet(int64_t obs, int64_t act, int64_t hid,
                                       RngStream& rng)
    : obs_dim(obs), act_dim(act), hidden(hid) {
  enc1.init(obs, hid, rng, kReluGain);
  enc2.init(hid, hid, rng, kReluGain);
  gru.init(hid, hid, rng);
  actor1.init(hid, hid, rng, kReluGain);
  actor2.init(hid, act, rng, kHeadGain);
  log_std = Tensor(1, act);
  critic1.init(hid + 1, hid, rng, kReluGain);
  critic2.init(hid, 1, rng, 1.0);
}

NamedParams ContinuousAgentNet::named_params() {
  NamedParams p;
  append_linear(p, "enc1", enc1);
  append_linear(p, "enc2", enc2);
  append_gru(p, "gru", gru);
  append_linear(p, "actor1", actor1);
  append_linear(p, "actor2", actor2);
  p.emplace_back("log_std", &log_std);
  append_linear(p, "critic1", critic1);
  append_linear(p, "critic2", critic2);
  return p;
}

ContinuousAgentNet::Bound ContinuousAgentNet::bind(Tape& t, bool rg) {
  Bound b;
  b.t = &t;
  b.enc1 = bind_linear(t, b.leaves, enc1, rg);
  b.enc2 = bind_linear(t, b.leaves, enc2, rg);
  b.gru = bind_gru(t, b.leaves, gru, rg);
  b.actor1 = bind_linear(t, b.leaves, actor1, rg);
  b.actor2 = bind_linear(t, b.leaves, actor2, rg);
  b.log_std = push_leaf(t, b.leaves, log_std, rg);
  b.critic1 = bind_linear(t, b.leaves, critic1, rg);
  b.critic2 = bind_linear(t, b.leaves, critic2, rg);
  return b;
}

std::pair<Var, Var> ContinuousAgentNet::Bound::trunk(Var x, Var h) const {
  Tape& tp = *t;
  Var z = tp.relu(enc1(tp, x));
  z = tp.relu(enc2(tp, z));
  Var h2 = gru.step(tp, z, h);
  return {h2, h2};
}

Var ContinuousAgentNet::Bound::mean_raw(Var feat) const {
  Tape& tp = *t;
  return actor2(tp, tp.relu(actor1(tp, feat)));
}

Var ContinuousAgentNet::Bound::value(Var feat, double t_norm) const {
  Tape& tp = *t;
  Var tcol = tp.constant(Tensor::full(feat.rows(), 1, t_norm));
  Var y = tp.relu(critic1(tp, tp.concat_cols(feat, tcol)));
  return critic2(tp, y);
}

// ---- squashed Gaussian ------------------------------------------------------

void sample_squashed_row(const double* mean_raw_row, const double* log_std,
                         int64_t act_dim, RngStream& rng, double* action_out) {
  for (int64_t i = 0; i < act_dim; ++i) {
    double m = kSquashScale * std::tanh(mean_raw_row[i]);
    double x = m + std::exp(log_std[i]) * rng.normal();
    action_out[i] = kSquashScale * std::tanh(x) + kSquashShift;
  }
}

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5*log(2*pi)

// u = (action-shift)/scale clipped away from +-1; also emits the Jacobian
// log-term log(scale*(1-u^2)) for the same clipped u.
void squash_inverse(const Tensor& action, Tensor* xhat, Tensor* jac) {
  *xhat = Tensor(action.rows, action.cols);
  *jac = Tensor(action.rows, action.cols);
  for (int64_t i = 0; i < action.numel(); ++i) {
    double a = action.data[i];
    if (a < 0.0 || a > 5.0)
      throw ShapeError("squashed_log_prob: action outside [0,5]");
    double u = (a - kSquashShift) / kSquashScale;
    u = std::min(1.0 - kAtanhClip, std::max(-1.0 + kAtanhClip, u));
    xhat->data[i] = std::atanh(u);
    jac->data[i] =
        std::log(kSquashScale) + std::log1p(-u) + std::log1p(u);
  }
}

}  // namespace

Var squashed_log_prob(Tape& t, Var mean_raw, Var log_std,
                      const Tensor& action) {
  if (action.rows != mean_raw.rows() || action.cols != mean_raw.cols())
    throw ShapeError("squashed_log_prob: action/mean shape mismatch");
  Tensor xhat, jac;
  squash_inverse(action, &xhat, &jac);
  Var m = t.scale(t.tanh(mean_raw), kSquashScale);
  Var diff = t.sub(t.constant(std::move(xhat)), m);
  Var inv_sigma = t.exp(t.scale(log_std, -1.0));
  Var z = t.mul(diff, inv_sigma);
  Var term = t.scale(t.mul(z, z), -0.5);
  term = t.sub(term, log_std);
  term = t.add_const(term, -kHalfLog2Pi);
  term = t.sub(term, t.constant(std::move(jac)));
  return t.sum_cols(term);
}

double squashed_log_prob_scalar(double mean_raw, double log_std,
                                double action) {
  Tensor a = Tensor::scalar(action);
  Tensor xhat, jac;
  squash_inverse(a, &xhat, &jac);
  double m = kSquashScale * std::tanh(mean_raw);
  double z = (xhat.data[0] - m) * std::exp(-log_std);
  return -0.5 * z * z - log_std - kHalfLog2Pi - jac.data[0];
}

// ---- optimizer utilities ----------------------------------------------------

void Adam::step(const NamedParams& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size())
    throw ShapeError("Adam::step: param/grad count mismatch");
  if (m.empty()) {
    for (const auto& [name, p] : params) {
      m.emplace_back(p->rows, p->cols);
      v.emplace_back(p->rows, p->cols);
    }
  }
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].second;
    const Tensor& g = grads[i];
    if (!p.same_shape(g))
      throw ShapeError("Adam::step: grad shape mismatch at " + params[i].first);
    for (int64_t k = 0; k < p.numel(); ++k) {
      double gk = g.data[k];
      m[i].data[k] = beta1 * m[i].data[k] + (1.0 - beta1) * gk;
      v[i].data[k] = beta2 * v[i].data[k] + (1.0 - beta2) * gk * gk;
      double mhat = m[i].data[k] / bc1;
      double vhat = v[i].data[k] / bc2;
      p.data[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void ema_update(const NamedParams& target, const NamedParams& live,
                double decay) {
  if (target.size() != live.size())
    throw ShapeError("ema_update: param count mismatch");
  for (size_t i = 0; i < target.size(); ++i) {
    Tensor& t = *target[i].second;
    const Tensor& l = *live[i].second;
    if (!t.same_shape(l))
      throw ShapeError("ema_update: shape mismatch at " + target[i].first);
    for (int64_t k = 0; k < t.numel(); ++k)
      t.data[k] = decay * t.data[k] + (1.0 - decay) * l.data[k];
  }
}

double global_norm(const std::vector<Tensor>& grads) {
  double s = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.data) s += v * v;
  return std::sqrt(s);
}

double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor& g : grads)
      for (double& v : g.data) v *= s;
  }
  return norm;
}

std::vector<Tensor> collect_grads(const std::vector<Var>& leaves) {
  std::vector<Tensor> out;
  out.reserve(leaves.size());
  for (const Var& v : leaves) out.push_back(v.grad());
  return out;
}

}  // namespace adalign
