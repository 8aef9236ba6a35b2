#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tippo/tensor.hpp"

namespace tippo {

// A named trainable tensor. Modules own their parameters; the tape refers
// to them by address.
struct Parameter {
  std::string name;
  Tensor value;
};

enum class OpTag {
  kConstant,
  kParameter,
  kMatMul,
  kMatMulNT,
  kAdd,
  kAddRow,
  kSub,
  kMul,
  kMulRows,
  kScale,
  kScaleBy,
  kConcatCols,
  kConcatRows,
  kRepeatRows,
  kSliceRows,
  kRowMean,
  kSoftmax,
  kLog,
  kExp,
  kTanh,
  kCosine,
  kLogSumExp,
  kGatherRows,
  kCrossEntropy,
  kTokenLogProbs,
  kSum,
  kMean,
  kClamp,
  kMinimum,
};

const char* op_name(OpTag tag);

class Tape;

// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class GradientMap {
 public:
  // Gradient for `p`, or a zero tensor of p's shape when p was not reached.
  Tensor get(const Parameter& p) const;
  const Tensor* find(const Parameter& p) const;
  void set(const Parameter& p, Tensor grad) { grads_[&p] = std::move(grad); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const Parameter*, Tensor> grads_;
};

// The computation record: an append-only list of primitive applications.
// Inputs always precede outputs, so reverse order is a valid reverse
// topological order for the chain rule.
class Tape {
 public:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    OpTag tag = OpTag::kConstant;
    bool needs_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&, std::size_t)> backward;
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A constant whose tensor has requires_grad set also receives a gradient,
  // readable through grad(id) after backward().
  Var constant(Tensor value);
  // Registers a parameter leaf. Repeated calls for one parameter return the
  // same node so gradients accumulate.
  Var param(Parameter& p);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  // Parameter leaves alias the parameter's storage rather than copying it;
  // parameters must not change while a tape that references them is in use.
  const Tensor& value(std::size_t id) const {
    const auto& n = nodes_[id];
    return n.param ? n.param->value : n.value;
  }
  bool grad_enabled() const { return grad_enabled_; }

  // Used by primitives. `backward` receives (tape, self id) and must call
  // accumulate() for each input it contributes to.
  Var push(Tensor value, std::vector<std::size_t> inputs, OpTag tag,
           std::function<void(Tape&, std::size_t)> backward);

  const Tensor& grad(std::size_t id) const { return grads_[id]; }
  void accumulate(std::size_t id, const Tensor& contribution);
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  friend GradientMap backward(Tape& tape, Var root);

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
  bool grad_enabled_ = true;
};

// Replays the record in reverse from a scalar root. Every parameter leaf on
// the tape gets an entry; unreachable ones get zeros.
GradientMap backward(Tape& tape, Var root);

// Pure (non-recorded) helpers.
Tensor softmax(const Tensor& v);
// Clamped to [-1, 1]. A norm below 1e-12 yields 0 and sets *degenerate.
double cosine_similarity(std::span<const double> u, std::span<const double> v,
                         bool* degenerate = nullptr);
double cosine_similarity(const Tensor& u, const Tensor& v, bool* degenerate = nullptr);

inline constexpr double kCosineNormFloor = 1e-12;

// Recorded primitives.
Var matmul(Var a, Var b);     // (n x k) (k x m)
Var matmul_nt(Var a, Var b);  // (n x k) (m x k)^T
Var add(Var a, Var b);
Var add_row(Var a, Var row);  // row broadcast over every row of a
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var mul_rows(Var a, Var scales);  // row r of a times scales[r]
Var scale(Var a, double c);
Var scale_by(Var a, Var scalar);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var repeat_rows(Var row, std::size_t n);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var row_mean(Var a);  // (n x m) -> (1 x m)
// Row-wise softmax; causal_offset >= 0 masks columns past r + offset.
Var softmax(Var a, long causal_offset = -1);
Var log(Var a);
Var exp(Var a);
Var tanh(Var a);
Var cosine(Var a, Var b);          // (n x d), (m x d) -> (n x m) pairwise cosines
Var logsumexp_rows(Var a);         // (n x m) -> (n x 1)
Var gather_rows(Var table, std::span<const int> ids);
Var cross_entropy(Var logits, std::span<const int> targets);    // mean over targets
Var token_log_probs(Var logits, std::span<const int> targets);  // (t x 1)
Var sum(Var a);
Var mean(Var a);
Var clamp(Var a, double lo, double hi);
Var minimum(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// x W^T + b, with W stored (out x in).
Var linear(Var x, Var weight, Var bias);
Var linear(Var x, Var weight);

}  // namespace tippo
