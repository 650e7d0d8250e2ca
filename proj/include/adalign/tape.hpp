#pragma once

#include <cstdint>
#include <vector>

#include "adalign/tensor.hpp"

namespace adalign {

class Tape;

// Handle to a tape node. Cheap to copy; valid until the tape is cleared.
struct Var {
  Tape* tape = nullptr;
  int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& val() const;
  const Tensor& grad() const;
  int64_t rows() const { return val().rows; }
  int64_t cols() const { return val().cols; }
};

// Reverse-mode tape over rank-2 double tensors. Single threaded; one tape per
// worker. Results are recorded only when some operand requires grad, so the
// same forward code serves both rollouts (no grad) and update passes.
//
// Every primitive checks its output for NaN/Inf and throws NumericalError
// naming the op; training code maps that to a numerical abort instead of
// silently optimizing garbage.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant(double v) { return leaf(Tensor::scalar(v), false); }

  // a[m,k] * b[k,n] -> [m,n]
  Var matmul(Var a, Var b);
  // Elementwise with broadcasting over dims of size 1 (same as numpy rules
  // restricted to rank 2).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var relu(Var a);
  Var exp(Var a);
  Var log(Var a);
  // Row-wise softmax / log-softmax with max subtraction.
  Var softmax(Var a);
  Var log_softmax(Var a);
  Var concat_cols(Var a, Var b);
  Var concat_rows(Var a, Var b);
  Var slice_cols(Var a, int64_t start, int64_t len);
  Var slice_rows(Var a, int64_t start, int64_t len);
  Var sum_cols(Var a);   // [r,c] -> [r,1]
  Var sum_all(Var a);    // -> [1,1]
  Var mean_all(Var a);   // -> [1,1]
  Var scale(Var a, double c);
  Var add_const(Var a, double c);
  Var minimum(Var a, Var b);  // same shape; ties route grad to a
  Var clamp(Var a, double lo, double hi);

  // Accumulates gradients of `loss` (a [1,1] node) into every reachable node
  // that requires grad. Does not zero anything first: repeated calls add up.
  void backward(Var loss);

  void zero_grad();
  // Drops all nodes and records. Outstanding Vars become invalid.
  void clear();

  size_t num_nodes() const { return nodes_.size(); }

  const Tensor& val(int32_t id) const { return nodes_[id].value; }
  const Tensor& grad(int32_t id) const;
  bool requires_grad(int32_t id) const { return nodes_[id].requires_grad; }

 private:
  enum class Op : uint8_t {
    kMatmul, kAdd, kSub, kMul, kTanh, kSigmoid, kRelu, kExp, kLog,
    kSoftmax, kLogSoftmax, kConcatCols, kConcatRows, kSliceCols, kSliceRows,
    kSumCols, kSumAll, kMeanAll, kScale, kAddConst, kMinimum, kClamp,
  };

  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily on first accumulation
    bool requires_grad = false;
    bool has_grad = false;
  };

  struct Rec {
    Op op;
    int32_t a = -1;
    int32_t b = -1;
    int32_t out = -1;
    int64_t i0 = 0;  // slice start / etc.
    int64_t i1 = 0;  // slice len
    double s0 = 0.0;  // scale factor / clamp lo
    double s1 = 0.0;  // clamp hi
  };

  Var push(Tensor value, Op op, Var a, Var b, int64_t i0 = 0, int64_t i1 = 0,
           double s0 = 0.0, double s1 = 0.0);
  Tensor& grad_buf(int32_t id);
  void accum_ewise_grad(int32_t id, const Tensor& out_grad, const Tensor& other,
                        bool mul_other, bool negate);
  void check_finite(const Tensor& t, const char* op) const;
  void backprop_rec(const Rec& r);

  std::vector<Node> nodes_;
  std::vector<Rec> recs_;
};

inline const Tensor& Var::val() const { return tape->val(id); }
inline const Tensor& Var::grad() const { return tape->grad(id); }

inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }

}  // namespace adalign
