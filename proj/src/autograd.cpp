#include "tippo/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "tippo/kernels.hpp"

namespace tippo {

const char* op_name(OpTag tag) {
  switch (tag) {
    case OpTag::kConstant: return "constant";
    case OpTag::kParameter: return "parameter";
    case OpTag::kMatMul: return "matmul";
    case OpTag::kMatMulNT: return "matmul_nt";
    case OpTag::kAdd: return "add";
    case OpTag::kAddRow: return "add_row";
    case OpTag::kSub: return "sub";
    case OpTag::kMul: return "mul";
    case OpTag::kMulRows: return "mul_rows";
    case OpTag::kScale: return "scale";
    case OpTag::kScaleBy: return "scale_by";
    case OpTag::kConcatCols: return "concat_cols";
    case OpTag::kConcatRows: return "concat_rows";
    case OpTag::kRepeatRows: return "repeat_rows";
    case OpTag::kSliceRows: return "slice_rows";
    case OpTag::kRowMean: return "row_mean";
    case OpTag::kSoftmax: return "softmax";
    case OpTag::kLog: return "log";
    case OpTag::kExp: return "exp";
    case OpTag::kTanh: return "tanh";
    case OpTag::kCosine: return "cosine";
    case OpTag::kLogSumExp: return "logsumexp";
    case OpTag::kGatherRows: return "gather_rows";
    case OpTag::kCrossEntropy: return "cross_entropy";
    case OpTag::kTokenLogProbs: return "token_log_probs";
    case OpTag::kSum: return "sum";
    case OpTag::kMean: return "mean";
    case OpTag::kClamp: return "clamp";
    case OpTag::kMinimum: return "minimum";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape_->value(id_); }

Tensor GradientMap::get(const Parameter& p) const {
  if (auto* g = find(p)) return *g;
  return Tensor::zeros(p.value.shape());
}

const Tensor* GradientMap::find(const Parameter& p) const {
  auto it = grads_.find(&p);
  return it == grads_.end() ? nullptr : &it->second;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.needs_grad = grad_enabled_ && value.requires_grad();
  n.value = std::move(value);
  n.tag = OpTag::kConstant;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return {this, it->second};
  Node n;
  n.tag = OpTag::kParameter;
  n.needs_grad = grad_enabled_;
  n.param = &p;
  nodes_.push_back(std::move(n));
  param_ids_[&p] = nodes_.size() - 1;
  return {this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::vector<std::size_t> inputs, OpTag tag,
               std::function<void(Tape&, std::size_t)> backward) {
  Node n;
  n.value = std::move(value);
  n.tag = tag;
  if (grad_enabled_) {
    n.needs_grad = std::any_of(inputs.begin(), inputs.end(),
                               [this](std::size_t i) { return nodes_[i].needs_grad; });
    if (n.needs_grad) n.backward = std::move(backward);
  }
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Tensor& contribution) {
  if (!nodes_[id].needs_grad) return;
  auto& g = grads_[id];
  if (g.empty()) {
    g = Tensor(value(id).shape(), contribution.values());
    return;
  }
  auto dst = g.data();
  auto src = contribution.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

GradientMap backward(Tape& tape, Var root) {
  if (&root.tape() != &tape) throw std::invalid_argument("backward: root is not on this tape");
  if (root.value().size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got shape " +
                                shape_to_string(root.value().shape()));
  }
  tape.grads_.assign(tape.nodes_.size(), Tensor{});
  if (tape.nodes_[root.id()].needs_grad) {
    tape.grads_[root.id()] = Tensor::filled(root.value().shape(), 1.0);
  }
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    auto& node = tape.nodes_[id];
    if (!node.needs_grad || tape.grads_[id].empty() || !node.backward) continue;
    node.backward(tape, id);
  }
  GradientMap out;
  for (auto& [param, id] : tape.param_ids_) {
    const auto& g = tape.grads_[id];
    out.set(*param, g.empty() ? Tensor::zeros(param->value.shape()) : g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// pure helpers

Tensor softmax(const Tensor& v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty input");
  Tensor out = Tensor::zeros(v.shape());
  kernels::softmax_rows(v.data(), out.data(), v.rows(), v.cols(), -1);
  return out;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v, bool* degenerate) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (nu < kCosineNormFloor || nv < kCosineNormFloor) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (degenerate) *degenerate = false;
  return std::clamp(uv / (nu * nv), -1.0, 1.0);
}

double cosine_similarity(const Tensor& u, const Tensor& v, bool* degenerate) {
  return cosine_similarity(u.data(), v.data(), degenerate);
}

// ---------------------------------------------------------------------------
// primitives

namespace {

void require_same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                                " vs " + shape_to_string(b.shape()));
  }
}

template <typename F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_to_string(av.shape()) +
                                " x " + shape_to_string(bv.shape()));
  }
  kernels::MatDims d{av.rows(), av.cols(), bv.cols()};
  Tensor out = Tensor::zeros(matrix_shape(d.n, d.m));
  kernels::matmul(av.data(), bv.data(), out.data(), d);
  auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib}, OpTag::kMatMul, [ia, ib, d](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) {
      Tensor ga = Tensor::zeros(t.value(ia).shape());
      kernels::matmul_nt(g.data(), t.value(ib).data(), ga.data(), {d.n, d.m, d.k});
      t.accumulate(ia, ga);
    }
    if (t.needs_grad(ib)) {
      Tensor gb = Tensor::zeros(t.value(ib).shape());
      kernels::matmul_tn(t.value(ia).data(), g.data(), gb.data(), {d.k, d.n, d.m});
      t.accumulate(ib, gb);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b, "matmul_nt");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw std::invalid_argument("matmul_nt: inner dimensions differ " + shape_to_string(av.shape()) +
                                " x " + shape_to_string(bv.shape()) + "^T");
  }
  kernels::MatDims d{av.rows(), av.cols(), bv.rows()};
  Tensor out = Tensor::zeros(matrix_shape(d.n, d.m));
  kernels::matmul_nt(av.data(), bv.data(), out.data(), d);
  auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib}, OpTag::kMatMulNT, [ia, ib, d](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) {
      Tensor ga = Tensor::zeros(t.value(ia).shape());
      kernels::matmul(g.data(), t.value(ib).data(), ga.data(), {d.n, d.m, d.k});
      t.accumulate(ia, ga);
    }
    if (t.needs_grad(ib)) {
      Tensor gb = Tensor::zeros(t.value(ib).shape());
      kernels::matmul_tn(g.data(), t.value(ia).data(), gb.data(), {d.m, d.n, d.k});
      t.accumulate(ib, gb);
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib}, OpTag::kAdd, [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row, "add_row");
  const auto& av = a.value();
  const auto& rv = row.value();
  if (rv.size() != av.cols()) throw std::invalid_argument("add_row: row length mismatch");
  Tensor out = av;
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out.at(r, c) += rv[c];
  auto ia = a.id(), ir = row.id();
  return a.tape().push(std::move(out), {ia, ir}, OpTag::kAddRow, [ia, ir](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.accumulate(ia, g);
    if (t.needs_grad(ir)) {
      Tensor gr = Tensor::zeros(t.value(ir).shape());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g.at(r, c);
      t.accumulate(ir, gr);
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib}, OpTag::kSub, [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    if (t.needs_grad(ib)) t.accumulate(ib, map_values(t.grad(self), [](double g) { return -g; }));
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib}, OpTag::kMul, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= t.value(ib)[i];
      t.accumulate(ia, ga);
    }
    if (t.needs_grad(ib)) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= t.value(ia)[i];
      t.accumulate(ib, gb);
    }
  });
}

Var mul_rows(Var a, Var scales) {
  require_same_tape(a, scales, "mul_rows");
  const auto& av = a.value();
  const auto& sv = scales.value();
  if (sv.size() != av.rows()) throw std::invalid_argument("mul_rows: one scale per row required");
  Tensor out = av;
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out.at(r, c) *= sv[r];
  auto ia = a.id(), is = scales.id();
  return a.tape().push(std::move(out), {ia, is}, OpTag::kMulRows, [ia, is](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& sv = t.value(is);
    if (t.needs_grad(ia)) {
      Tensor ga = g;
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga.at(r, c) *= sv[r];
      t.accumulate(ia, ga);
    }
    if (t.needs_grad(is)) {
      Tensor gs = Tensor::zeros(sv.shape());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gs[r] += g.at(r, c) * av.at(r, c);
      t.accumulate(is, gs);
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = map_values(a.value(), [c](double v) { return v * c; });
  auto ia = a.id();
  return a.tape().push(std::move(out), {ia}, OpTag::kScale, [ia, c](Tape& t, std::size_t self) {
    t.accumulate(ia, map_values(t.grad(self), [c](double g) { return g * c; }));
  });
}

Var scale_by(Var a, Var scalar) {
  require_same_tape(a, scalar, "scale_by");
  if (scalar.value().size() != 1) throw std::invalid_argument("scale_by: scalar operand required");
  double s = scalar.value()[0];
  Tensor out = map_values(a.value(), [s](double v) { return v * s; });
  auto ia = a.id(), is = scalar.id();
  return a.tape().push(std::move(out), {ia, is}, OpTag::kScaleBy, [ia, is](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    double s = t.value(is)[0];
    if (t.needs_grad(ia)) t.accumulate(ia, map_values(g, [s](double v) { return v * s; }));
    if (t.needs_grad(is)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * t.value(ia)[i];
      t.accumulate(is, Tensor(t.value(is).shape(), {acc}));
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (auto p : parts) {
    require_same_tape(parts.front(), p, "concat_cols");
    if (p.value().rows() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    cols += p.value().cols();
    ids.push_back(p.id());
    widths.push_back(p.value().cols());
  }
  Tensor out = Tensor::zeros(matrix_shape(rows, cols));
  std::size_t off = 0;
  for (auto p : parts) {
    const auto& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin() + static_cast<long>(off));
    off += v.cols();
  }
  return parts.front().tape().push(std::move(out), ids, OpTag::kConcatCols,
                                   [ids, widths](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.needs_grad(ids[k])) {
        Tensor gp = Tensor::zeros(t.value(ids[k]).shape());
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) gp.at(r, c) = g.at(r, off + c);
        t.accumulate(ids[k], gp);
      }
      off += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  std::vector<double> data;
  for (auto p : parts) {
    require_same_tape(parts.front(), p, "concat_rows");
    if (p.value().cols() != cols) throw std::invalid_argument("concat_rows: column count mismatch");
    rows += p.value().rows();
    ids.push_back(p.id());
    data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  }
  Tensor out(matrix_shape(rows, cols), std::move(data));
  return parts.front().tape().push(std::move(out), ids, OpTag::kConcatRows, [ids](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    std::size_t off = 0;
    for (auto id : ids) {
      std::size_t n = t.value(id).size();
      if (t.needs_grad(id)) {
        Tensor gp(t.value(id).shape(), std::vector<double>(g.values().begin() + static_cast<long>(off),
                                                           g.values().begin() + static_cast<long>(off + n)));
        t.accumulate(id, gp);
      }
      off += n;
    }
  });
}

Var repeat_rows(Var row, std::size_t n) {
  const auto& rv = row.value();
  if (rv.rows() != 1) throw std::invalid_argument("repeat_rows: input must be a single row");
  if (n == 0) throw std::invalid_argument("repeat_rows: count must be positive");
  std::vector<double> data;
  data.reserve(n * rv.size());
  for (std::size_t r = 0; r < n; ++r) data.insert(data.end(), rv.values().begin(), rv.values().end());
  Tensor out(matrix_shape(n, rv.cols()), std::move(data));
  auto ir = row.id();
  return row.tape().push(std::move(out), {ir}, OpTag::kRepeatRows, [ir](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    Tensor gr = Tensor::zeros(t.value(ir).shape());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g.at(r, c);
    t.accumulate(ir, gr);
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const auto& av = a.value();
  if (count == 0 || begin + count > av.rows()) throw std::invalid_argument("slice_rows: range out of bounds");
  auto first = av.values().begin() + static_cast<long>(begin * av.cols());
  Tensor out(matrix_shape(count, av.cols()),
             std::vector<double>(first, first + static_cast<long>(count * av.cols())));
  auto ia = a.id();
  return a.tape().push(std::move(out), {ia}, OpTag::kSliceRows, [ia, begin](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    Tensor ga = Tensor::zeros(t.value(ia).shape());
    std::copy(g.values().begin(), g.values().end(),
              ga.values().begin() + static_cast<long>(begin * g.cols()));
    t.accumulate(ia, ga);
  });
}

Var row_mean(Var a) {
  const auto& av = a.value();
  Tensor out = Tensor::zeros(matrix_shape(1, av.cols()));
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out[c] += av.at(r, c);
  const double inv = 1.0 / static_cast<double>(av.rows());
  for (auto& v : out.values()) v *= inv;
  auto ia = a.id();
  return a.tape().push(std::move(out), {ia}, OpTag::kRowMean, [ia, inv](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    Tensor ga = Tensor::zeros(t.value(ia).shape());
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga.at(r, c) = g[c] * inv;
    t.accumulate(ia, ga);
  });
}

Var softmax(Var a, long causal_offset) {
  const auto& av = a.value();
  if (av.empty()) throw std::invalid_argument("softmax: empty input");
  Tensor out = Tensor::zeros(av.shape());
  kernels::softmax_rows(av.data(), out.data(), av.rows(), av.cols(), causal_offset);
  auto ia = a.id();
  return a.tape().push(std::move(out), {ia}, OpTag::kSoftmax, [ia](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    Tensor ga = Tensor::zeros(y.shape());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga.at(r, c) = y.at(r, c) * (g.at(r, c) - dot);
    }
    t.accumulate(ia, ga);
  });
}

Var log(Var a) {
  Tensor out = map_values(a.value(), [](double v) { return std::log(v); });
  auto ia = a.id();
  return a.tape().push(std::move(out), {ia}, OpTag::kLog, [ia](Tape& t, std::size_t self) {
    Tensor ga = t.grad(self);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] /= t.value(ia)[i];
    t.accumulate(ia, ga);
  });
}

Var exp(Var a) {
  Tensor out = map_values(a.value(), [](double v) { return std::exp(v); });
  auto ia = a.id();
  return a.tape().push(std::move(out), {ia}, OpTag::kExp, [ia](Tape& t, std::size_t self) {
    Tensor ga = t.grad(self);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= t.value(self)[i];
    t.accumulate(ia, ga);
  });
}

Var tanh(Var a) {
  Tensor out = map_values(a.value(), [](double v) { return std::tanh(v); });
  auto ia = a.id();
  return a.tape().push(std::move(out), {ia}, OpTag::kTanh, [ia](Tape& t, std::size_t self) {
    Tensor ga = t.grad(self);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      double y = t.value(self)[i];
      ga[i] *= 1.0 - y * y;
    }
    t.accumulate(ia, ga);
  });
}

Var cosine(Var a, Var b) {
  require_same_tape(a, b, "cosine");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.cols()) throw std::invalid_argument("cosine: vector length mismatch");
  Tensor out = Tensor::zeros(matrix_shape(av.rows(), bv.rows()));
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < bv.rows(); ++j) out.at(i, j) = cosine_similarity(av.row(i), bv.row(j));
  auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib}, OpTag::kCosine, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    const std::size_t d = av.cols();
    std::vector<double> na(av.rows()), nb(bv.rows());
    for (std::size_t i = 0; i < av.rows(); ++i) {
      double s = 0.0;
      for (auto v : av.row(i)) s += v * v;
      na[i] = std::sqrt(s);
    }
    for (std::size_t j = 0; j < bv.rows(); ++j) {
      double s = 0.0;
      for (auto v : bv.row(j)) s += v * v;
      nb[j] = std::sqrt(s);
    }
    Tensor ga = Tensor::zeros(av.shape());
    Tensor gb = Tensor::zeros(bv.shape());
    for (std::size_t i = 0; i < av.rows(); ++i) {
      for (std::size_t j = 0; j < bv.rows(); ++j) {
        if (na[i] < kCosineNormFloor || nb[j] < kCosineNormFloor) continue;
        double gij = g.at(i, j);
        if (gij == 0.0) continue;
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += av.at(i, c) * bv.at(j, c);
        double inv = 1.0 / (na[i] * nb[j]);
        double cos = dot * inv;
        for (std::size_t c = 0; c < d; ++c) {
          ga.at(i, c) += gij * (bv.at(j, c) * inv - cos * av.at(i, c) / (na[i] * na[i]));
          gb.at(j, c) += gij * (av.at(i, c) * inv - cos * bv.at(j, c) / (nb[j] * nb[j]));
        }
      }
    }
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

Var logsumexp_rows(Var a) {
  const auto& av = a.value();
  Tensor out = Tensor::zeros(matrix_shape(av.rows(), 1));
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (auto v : av.row(r)) mx = std::max(mx, v);
    double s = 0.0;
    for (auto v : av.row(r)) s += std::exp(v - mx);
    out[r] = mx + std::log(s);
  }
  auto ia = a.id();
  return a.tape().push(std::move(out), {ia}, OpTag::kLogSumExp, [ia](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& lse = t.value(self);
    Tensor ga = Tensor::zeros(av.shape());
    for (std::size_t r = 0; r < av.rows(); ++r)
      for (std::size_t c = 0; c < av.cols(); ++c) ga.at(r, c) = g[r] * std::exp(av.at(r, c) - lse[r]);
    t.accumulate(ia, ga);
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const auto& tv = table.value();
  if (ids.empty()) throw std::invalid_argument("gather_rows: no indices");
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> data;
  data.reserve(idx.size() * tv.cols());
  for (int id : idx) {
    if (id < 0 || static_cast<std::size_t>(id) >= tv.rows()) {
      throw std::invalid_argument("gather_rows: index " + std::to_string(id) + " out of range [0, " +
                                  std::to_string(tv.rows()) + ")");
    }
    auto row = tv.row(static_cast<std::size_t>(id));
    data.insert(data.end(), row.begin(), row.end());
  }
  Tensor out(matrix_shape(idx.size(), tv.cols()), std::move(data));
  auto it = table.id();
  return table.tape().push(std::move(out), {it}, OpTag::kGatherRows, [it, idx](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    Tensor gt = Tensor::zeros(t.value(it).shape());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto dst = gt.row(static_cast<std::size_t>(idx[r]));
      auto src = g.row(r);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
    t.accumulate(it, gt);
  });
}

namespace {

// Row-wise log-softmax of the first `rows` rows.
Tensor log_softmax_rows(const Tensor& logits, std::size_t rows) {
  Tensor out = Tensor::zeros(matrix_shape(rows, logits.cols()));
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (auto v : logits.row(r)) mx = std::max(mx, v);
    double s = 0.0;
    for (auto v : logits.row(r)) s += std::exp(v - mx);
    double lse = mx + std::log(s);
    for (std::size_t c = 0; c < logits.cols(); ++c) out.at(r, c) = logits.at(r, c) - lse;
  }
  return out;
}

void check_targets(const Tensor& logits, std::span<const int> targets, const char* op) {
  if (targets.empty()) throw std::invalid_argument(std::string(op) + ": empty targets");
  if (targets.size() > logits.rows()) {
    throw std::invalid_argument(std::string(op) + ": more targets than logit rows");
  }
  for (int tok : targets) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= logits.cols()) {
      throw std::invalid_argument(std::string(op) + ": target " + std::to_string(tok) + " out of vocabulary");
    }
  }
}

}  // namespace

Var cross_entropy(Var logits, std::span<const int> targets) {
  const auto& lv = logits.value();
  check_targets(lv, targets, "cross_entropy");
  std::vector<int> tgt(targets.begin(), targets.end());
  Tensor lsm = log_softmax_rows(lv, tgt.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < tgt.size(); ++r) loss -= lsm.at(r, static_cast<std::size_t>(tgt[r]));
  loss /= static_cast<double>(tgt.size());
  auto il = logits.id();
  return logits.tape().push(Tensor::scalar(loss), {il}, OpTag::kCrossEntropy,
                            [il, tgt, lsm = std::move(lsm)](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0] / static_cast<double>(tgt.size());
    Tensor gl = Tensor::zeros(t.value(il).shape());
    for (std::size_t r = 0; r < tgt.size(); ++r) {
      for (std::size_t c = 0; c < gl.cols(); ++c) gl.at(r, c) = g * std::exp(lsm.at(r, c));
      gl.at(r, static_cast<std::size_t>(tgt[r])) -= g;
    }
    t.accumulate(il, gl);
  });
}

Var token_log_probs(Var logits, std::span<const int> targets) {
  const auto& lv = logits.value();
  check_targets(lv, targets, "token_log_probs");
  std::vector<int> tgt(targets.begin(), targets.end());
  Tensor lsm = log_softmax_rows(lv, tgt.size());
  Tensor out = Tensor::zeros(matrix_shape(tgt.size(), 1));
  for (std::size_t r = 0; r < tgt.size(); ++r) out[r] = lsm.at(r, static_cast<std::size_t>(tgt[r]));
  auto il = logits.id();
  return logits.tape().push(std::move(out), {il}, OpTag::kTokenLogProbs,
                            [il, tgt, lsm = std::move(lsm)](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    Tensor gl = Tensor::zeros(t.value(il).shape());
    for (std::size_t r = 0; r < tgt.size(); ++r) {
      for (std::size_t c = 0; c < gl.cols(); ++c) gl.at(r, c) = -g[r] * std::exp(lsm.at(r, c));
      gl.at(r, static_cast<std::size_t>(tgt[r])) += g[r];
    }
    t.accumulate(il, gl);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (auto v : a.value().values()) s += v;
  auto ia = a.id();
  return a.tape().push(Tensor::scalar(s), {ia}, OpTag::kSum, [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, Tensor::filled(t.value(ia).shape(), t.grad(self)[0]));
  });
}

Var mean(Var a) {
  double s = 0.0;
  for (auto v : a.value().values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.value().size());
  auto ia = a.id();
  return a.tape().push(Tensor::scalar(s * inv), {ia}, OpTag::kMean, [ia, inv](Tape& t, std::size_t self) {
    t.accumulate(ia, Tensor::filled(t.value(ia).shape(), t.grad(self)[0] * inv));
  });
}

Var clamp(Var a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  Tensor out = map_values(a.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); });
  auto ia = a.id();
  return a.tape().push(std::move(out), {ia}, OpTag::kClamp, [ia, lo, hi](Tape& t, std::size_t self) {
    Tensor ga = t.grad(self);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      double v = t.value(ia)[i];
      if (v < lo || v > hi) ga[i] = 0.0;
    }
    t.accumulate(ia, ga);
  });
}

Var minimum(Var a, Var b) {
  require_same_tape(a, b, "minimum");
  require_same_shape(a.value(), b.value(), "minimum");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], b.value()[i]);
  auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib}, OpTag::kMinimum, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    Tensor ga = Tensor::zeros(g.shape());
    Tensor gb = Tensor::zeros(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (t.value(ia)[i] <= t.value(ib)[i])
        ga[i] = g[i];
      else
        gb[i] = g[i];
    }
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul_nt(x, weight), bias); }

Var linear(Var x, Var weight) { return matmul_nt(x, weight); }

}  // namespace tippo
