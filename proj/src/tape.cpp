#include "adalign/tape.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace adalign {
namespace {

using EigenMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const EigenMat>;
using MapM = Eigen::Map<EigenMat>;

const char* op_name(int op) {
  static const char* names[] = {
      "matmul", "add", "sub", "mul", "tanh", "sigmoid", "relu", "exp", "log",
      "softmax", "log_softmax", "concat_cols", "concat_rows", "slice_cols",
      "slice_rows", "sum_cols", "sum_all", "mean_all", "scale", "add_const",
      "minimum", "clamp"};
  return names[op];
}

void check_broadcastable(const Tensor& a, const Tensor& b, const char* op) {
  bool ok = (a.rows == b.rows || a.rows == 1 || b.rows == 1) &&
            (a.cols == b.cols || a.cols == 1 || b.cols == 1);
  if (!ok)
    throw ShapeError(std::string(op) + ": shapes " + a.shape_str() + " and " +
                     b.shape_str() + " do not broadcast");
}

}  // namespace

void Tape::check_finite(const Tensor& t, const char* op) const {
  for (double v : t.data) {
    if (!std::isfinite(v))
      throw NumericalError(std::string("autodiff op '") + op +
                           "' produced a non-finite value");
  }
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) {
    n.grad = Tensor(n.value.rows, n.value.cols);
    n.has_grad = true;
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::push(Tensor value, Op op, Var a, Var b, int64_t i0, int64_t i1,
               double s0, double s1) {
  check_finite(value, op_name(static_cast<int>(op)));
  bool rg = (a.valid() && nodes_[a.id].requires_grad) ||
            (b.valid() && nodes_[b.id].requires_grad);
  Node n;
  n.value = std::move(value);
  n.requires_grad = rg;
  nodes_.push_back(std::move(n));
  Var out{this, static_cast<int32_t>(nodes_.size() - 1)};
  if (rg) recs_.push_back(Rec{op, a.id, b.valid() ? b.id : -1, out.id, i0, i1, s0, s1});
  return out;
}

Tensor& Tape::grad_buf(int32_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.rows, n.value.cols);
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& Tape::grad(int32_t id) const {
  const Node& n = nodes_[id];
  if (!n.has_grad)
    throw ShapeError("grad read on a node with no accumulated gradient");
  return n.grad;
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (A.cols != B.rows)
    throw ShapeError("matmul: inner dims " + A.shape_str() + " x " +
                     B.shape_str());
  Tensor out(A.rows, B.cols);
  MapM(out.data.data(), out.rows, out.cols) =
      MapC(A.data.data(), A.rows, A.cols) * MapC(B.data.data(), B.rows, B.cols);
  return push(std::move(out), Op::kMatmul, a, b);
}

static Tensor ewise(const Tensor& a, const Tensor& b, int which) {
  int64_t r = std::max(a.rows, b.rows), c = std::max(a.cols, b.cols);
  Tensor out(r, c);
  for (int64_t i = 0; i < r; ++i) {
    const int64_t ai = a.rows == 1 ? 0 : i, bi = b.rows == 1 ? 0 : i;
    for (int64_t j = 0; j < c; ++j) {
      const int64_t aj = a.cols == 1 ? 0 : j, bj = b.cols == 1 ? 0 : j;
      double x = a.at(ai, aj), y = b.at(bi, bj);
      out.at(i, j) = which == 0 ? x + y : which == 1 ? x - y : x * y;
    }
  }
  return out;
}

Var Tape::add(Var a, Var b) {
  check_broadcastable(val(a.id), val(b.id), "add");
  return push(ewise(val(a.id), val(b.id), 0), Op::kAdd, a, b);
}

Var Tape::sub(Var a, Var b) {
  check_broadcastable(val(a.id), val(b.id), "sub");
  return push(ewise(val(a.id), val(b.id), 1), Op::kSub, a, b);
}

Var Tape::mul(Var a, Var b) {
  check_broadcastable(val(a.id), val(b.id), "mul");
  return push(ewise(val(a.id), val(b.id), 2), Op::kMul, a, b);
}

Var Tape::tanh(Var a) {
  Tensor out = val(a.id);
  for (double& v : out.data) v = std::tanh(v);
  return push(std::move(out), Op::kTanh, a, Var{});
}

Var Tape::sigmoid(Var a) {
  Tensor out = val(a.id);
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  return push(std::move(out), Op::kSigmoid, a, Var{});
}

Var Tape::relu(Var a) {
  Tensor out = val(a.id);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), Op::kRelu, a, Var{});
}

Var Tape::exp(Var a) {
  Tensor out = val(a.id);
  for (double& v : out.data) v = std::exp(v);
  return push(std::move(out), Op::kExp, a, Var{});
}

Var Tape::log(Var a) {
  Tensor out = val(a.id);
  for (double& v : out.data) v = std::log(v);
  return push(std::move(out), Op::kLog, a, Var{});
}

Var Tape::softmax(Var a) {
  Tensor out = val(a.id);
  for (int64_t i = 0; i < out.rows; ++i) {
    double mx = -HUGE_VAL;
    for (int64_t j = 0; j < out.cols; ++j) mx = std::max(mx, out.at(i, j));
    double sum = 0.0;
    for (int64_t j = 0; j < out.cols; ++j) {
      out.at(i, j) = std::exp(out.at(i, j) - mx);
      sum += out.at(i, j);
    }
    for (int64_t j = 0; j < out.cols; ++j) out.at(i, j) /= sum;
  }
  return push(std::move(out), Op::kSoftmax, a, Var{});
}

Var Tape::log_softmax(Var a) {
  Tensor out = val(a.id);
  for (int64_t i = 0; i < out.rows; ++i) {
    double mx = -HUGE_VAL;
    for (int64_t j = 0; j < out.cols; ++j) mx = std::max(mx, out.at(i, j));
    double sum = 0.0;
    for (int64_t j = 0; j < out.cols; ++j) sum += std::exp(out.at(i, j) - mx);
    double lse = mx + std::log(sum);
    for (int64_t j = 0; j < out.cols; ++j) out.at(i, j) -= lse;
  }
  return push(std::move(out), Op::kLogSoftmax, a, Var{});
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (A.rows != B.rows)
    throw ShapeError("concat_cols: row mismatch " + A.shape_str() + " vs " +
                     B.shape_str());
  Tensor out(A.rows, A.cols + B.cols);
  for (int64_t i = 0; i < A.rows; ++i) {
    for (int64_t j = 0; j < A.cols; ++j) out.at(i, j) = A.at(i, j);
    for (int64_t j = 0; j < B.cols; ++j) out.at(i, A.cols + j) = B.at(i, j);
  }
  return push(std::move(out), Op::kConcatCols, a, b, A.cols);
}

Var Tape::concat_rows(Var a, Var b) {
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (A.cols != B.cols)
    throw ShapeError("concat_rows: col mismatch " + A.shape_str() + " vs " +
                     B.shape_str());
  Tensor out(A.rows + B.rows, A.cols);
  std::copy(A.data.begin(), A.data.end(), out.data.begin());
  std::copy(B.data.begin(), B.data.end(), out.data.begin() + A.numel());
  return push(std::move(out), Op::kConcatRows, a, b, A.rows);
}

Var Tape::slice_cols(Var a, int64_t start, int64_t len) {
  const Tensor& A = val(a.id);
  if (start < 0 || len < 0 || start + len > A.cols)
    throw ShapeError("slice_cols: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of " + A.shape_str());
  Tensor out(A.rows, len);
  for (int64_t i = 0; i < A.rows; ++i)
    for (int64_t j = 0; j < len; ++j) out.at(i, j) = A.at(i, start + j);
  return push(std::move(out), Op::kSliceCols, a, Var{}, start, len);
}

Var Tape::slice_rows(Var a, int64_t start, int64_t len) {
  const Tensor& A = val(a.id);
  if (start < 0 || len < 0 || start + len > A.rows)
    throw ShapeError("slice_rows: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of " + A.shape_str());
  Tensor out(len, A.cols);
  std::copy(A.data.begin() + start * A.cols,
            A.data.begin() + (start + len) * A.cols, out.data.begin());
  return push(std::move(out), Op::kSliceRows, a, Var{}, start, len);
}

Var Tape::sum_cols(Var a) {
  const Tensor& A = val(a.id);
  Tensor out(A.rows, 1);
  for (int64_t i = 0; i < A.rows; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < A.cols; ++j) s += A.at(i, j);
    out.at(i, 0) = s;
  }
  return push(std::move(out), Op::kSumCols, a, Var{});
}

Var Tape::sum_all(Var a) {
  double s = 0.0;
  for (double v : val(a.id).data) s += v;
  return push(Tensor::scalar(s), Op::kSumAll, a, Var{});
}

Var Tape::mean_all(Var a) {
  const Tensor& A = val(a.id);
  if (A.numel() == 0) throw ShapeError("mean_all: empty tensor");
  double s = 0.0;
  for (double v : A.data) s += v;
  return push(Tensor::scalar(s / static_cast<double>(A.numel())), Op::kMeanAll,
              a, Var{});
}

Var Tape::scale(Var a, double c) {
  Tensor out = val(a.id);
  for (double& v : out.data) v *= c;
  return push(std::move(out), Op::kScale, a, Var{}, 0, 0, c);
}

Var Tape::add_const(Var a, double c) {
  Tensor out = val(a.id);
  for (double& v : out.data) v += c;
  return push(std::move(out), Op::kAddConst, a, Var{}, 0, 0, c);
}

Var Tape::minimum(Var a, Var b) {
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (!A.same_shape(B))
    throw ShapeError("minimum: shape mismatch " + A.shape_str() + " vs " +
                     B.shape_str());
  Tensor out(A.rows, A.cols);
  for (int64_t i = 0; i < A.numel(); ++i)
    out.data[i] = A.data[i] <= B.data[i] ? A.data[i] : B.data[i];
  return push(std::move(out), Op::kMinimum, a, b);
}

Var Tape::clamp(Var a, double lo, double hi) {
  if (lo > hi) throw ShapeError("clamp: lo > hi");
  Tensor out = val(a.id);
  for (double& v : out.data) v = v < lo ? lo : (v > hi ? hi : v);
  return push(std::move(out), Op::kClamp, a, Var{}, 0, 0, lo, hi);
}

// Accumulates out_grad (optionally elementwise-multiplied by `other`, which is
// broadcast like in the forward op, optionally negated) into id's grad buffer,
// summing over the dims that were broadcast.
void Tape::accum_ewise_grad(int32_t id, const Tensor& out_grad,
                            const Tensor& other, bool mul_other, bool negate) {
  if (!nodes_[id].requires_grad) return;
  Tensor& g = grad_buf(id);
  const double sgn = negate ? -1.0 : 1.0;
  for (int64_t i = 0; i < out_grad.rows; ++i) {
    const int64_t gi = g.rows == 1 ? 0 : i;
    const int64_t oi = other.rows == 1 ? 0 : i;
    for (int64_t j = 0; j < out_grad.cols; ++j) {
      const int64_t gj = g.cols == 1 ? 0 : j;
      double v = sgn * out_grad.at(i, j);
      if (mul_other) v *= other.at(oi, other.cols == 1 ? 0 : j);
      g.at(gi, gj) += v;
    }
  }
}

void Tape::backprop_rec(const Rec& r) {
  const Tensor& g = nodes_[r.out].grad;
  const Tensor& y = nodes_[r.out].value;
  auto rg = [&](int32_t id) { return id >= 0 && nodes_[id].requires_grad; };

  switch (r.op) {
    case Op::kMatmul: {
      const Tensor& A = nodes_[r.a].value;
      const Tensor& B = nodes_[r.b].value;
      if (rg(r.a)) {
        Tensor& ga = grad_buf(r.a);
        MapM(ga.data.data(), ga.rows, ga.cols).noalias() +=
            MapC(g.data.data(), g.rows, g.cols) *
            MapC(B.data.data(), B.rows, B.cols).transpose();
      }
      if (rg(r.b)) {
        Tensor& gb = grad_buf(r.b);
        MapM(gb.data.data(), gb.rows, gb.cols).noalias() +=
            MapC(A.data.data(), A.rows, A.cols).transpose() *
            MapC(g.data.data(), g.rows, g.cols);
      }
      break;
    }
    case Op::kAdd: {
      static const Tensor kOne = Tensor::scalar(1.0);
      accum_ewise_grad(r.a, g, kOne, false, false);
      accum_ewise_grad(r.b, g, kOne, false, false);
      break;
    }
    case Op::kSub: {
      static const Tensor kOne = Tensor::scalar(1.0);
      accum_ewise_grad(r.a, g, kOne, false, false);
      accum_ewise_grad(r.b, g, kOne, false, true);
      break;
    }
    case Op::kMul: {
      accum_ewise_grad(r.a, g, nodes_[r.b].value, true, false);
      accum_ewise_grad(r.b, g, nodes_[r.a].value, true, false);
      break;
    }
    case Op::kTanh: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      for (int64_t i = 0; i < g.numel(); ++i)
        ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
      break;
    }
    case Op::kSigmoid: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      for (int64_t i = 0; i < g.numel(); ++i)
        ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
      break;
    }
    case Op::kRelu: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      const Tensor& x = nodes_[r.a].value;
      for (int64_t i = 0; i < g.numel(); ++i)
        if (x.data[i] > 0.0) ga.data[i] += g.data[i];
      break;
    }
    case Op::kExp: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      for (int64_t i = 0; i < g.numel(); ++i)
        ga.data[i] += g.data[i] * y.data[i];
      break;
    }
    case Op::kLog: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      const Tensor& x = nodes_[r.a].value;
      for (int64_t i = 0; i < g.numel(); ++i)
        ga.data[i] += g.data[i] / x.data[i];
      break;
    }
    case Op::kSoftmax: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      for (int64_t i = 0; i < y.rows; ++i) {
        double dot = 0.0;
        for (int64_t j = 0; j < y.cols; ++j) dot += g.at(i, j) * y.at(i, j);
        for (int64_t j = 0; j < y.cols; ++j)
          ga.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
      }
      break;
    }
    case Op::kLogSoftmax: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      for (int64_t i = 0; i < y.rows; ++i) {
        double gsum = 0.0;
        for (int64_t j = 0; j < y.cols; ++j) gsum += g.at(i, j);
        for (int64_t j = 0; j < y.cols; ++j)
          ga.at(i, j) += g.at(i, j) - std::exp(y.at(i, j)) * gsum;
      }
      break;
    }
    case Op::kConcatCols: {
      const int64_t ac = r.i0;
      if (rg(r.a)) {
        Tensor& ga = grad_buf(r.a);
        for (int64_t i = 0; i < g.rows; ++i)
          for (int64_t j = 0; j < ac; ++j) ga.at(i, j) += g.at(i, j);
      }
      if (rg(r.b)) {
        Tensor& gb = grad_buf(r.b);
        for (int64_t i = 0; i < g.rows; ++i)
          for (int64_t j = 0; j < gb.cols; ++j) gb.at(i, j) += g.at(i, ac + j);
      }
      break;
    }
    case Op::kConcatRows: {
      const int64_t ar = r.i0;
      if (rg(r.a)) {
        Tensor& ga = grad_buf(r.a);
        for (int64_t i = 0; i < ga.numel(); ++i) ga.data[i] += g.data[i];
      }
      if (rg(r.b)) {
        Tensor& gb = grad_buf(r.b);
        const int64_t off = ar * g.cols;
        for (int64_t i = 0; i < gb.numel(); ++i) gb.data[i] += g.data[off + i];
      }
      break;
    }
    case Op::kSliceCols: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      for (int64_t i = 0; i < g.rows; ++i)
        for (int64_t j = 0; j < g.cols; ++j) ga.at(i, r.i0 + j) += g.at(i, j);
      break;
    }
    case Op::kSliceRows: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      const int64_t off = r.i0 * ga.cols;
      for (int64_t i = 0; i < g.numel(); ++i) ga.data[off + i] += g.data[i];
      break;
    }
    case Op::kSumCols: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      for (int64_t i = 0; i < ga.rows; ++i)
        for (int64_t j = 0; j < ga.cols; ++j) ga.at(i, j) += g.at(i, 0);
      break;
    }
    case Op::kSumAll: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      for (double& v : ga.data) v += g.data[0];
      break;
    }
    case Op::kMeanAll: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      const double s = g.data[0] / static_cast<double>(ga.numel());
      for (double& v : ga.data) v += s;
      break;
    }
    case Op::kScale: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += r.s0 * g.data[i];
      break;
    }
    case Op::kAddConst: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
      break;
    }
    case Op::kMinimum: {
      const Tensor& A = nodes_[r.a].value;
      const Tensor& B = nodes_[r.b].value;
      if (rg(r.a)) {
        Tensor& ga = grad_buf(r.a);
        for (int64_t i = 0; i < g.numel(); ++i)
          if (A.data[i] <= B.data[i]) ga.data[i] += g.data[i];
      }
      if (rg(r.b)) {
        Tensor& gb = grad_buf(r.b);
        for (int64_t i = 0; i < g.numel(); ++i)
          if (A.data[i] > B.data[i]) gb.data[i] += g.data[i];
      }
      break;
    }
    case Op::kClamp: {
      if (!rg(r.a)) break;
      Tensor& ga = grad_buf(r.a);
      const Tensor& x = nodes_[r.a].value;
      for (int64_t i = 0; i < g.numel(); ++i)
        if (x.data[i] >= r.s0 && x.data[i] <= r.s1) ga.data[i] += g.data[i];
      break;
    }
  }
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ShapeError("backward: loss from another tape");
  if (val(loss.id).numel() != 1)
    throw ShapeError("backward: loss must be a scalar, got " +
                     val(loss.id).shape_str());
  if (!nodes_[loss.id].requires_grad)
    throw ShapeError("backward: loss does not depend on any grad leaf");
  grad_buf(loss.id).data[0] += 1.0;
  for (auto it = recs_.rbegin(); it != recs_.rend(); ++it) {
    Node& out = nodes_[it->out];
    if (!out.has_grad) continue;
    backprop_rec(*it);
    // The output grad is fully consumed (records are in topological order),
    // so drop it. A later backward call for a different loss on this tape
    // must not re-propagate contributions from this pass. Leaves are never
    // record outputs, so leaf grads keep accumulating as documented.
    std::fill(out.grad.data.begin(), out.grad.data.end(), 0.0);
    out.has_grad = false;
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    if (n.has_grad) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
  }
}

void Tape::clear() {
  nodes_.clear();
  recs_.clear();
}

}  // namespace adalign
