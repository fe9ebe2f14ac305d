#include "t2ipal/tape.hpp"

#include <cmath>
#include <string>

#include "t2ipal/errors.hpp"
#include "t2ipal/numerics.hpp"

namespace t2ipal {

const Tensor& Var::value() const {
  if (!tape_) throw InvalidArgument("Var is not attached to a tape");
  return tape_->value(*this);
}

void Tape::check_owner(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw InvalidArgument("Var does not belong to this tape");
  }
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (Var in : inputs) {
    check_owner(in);
    needs = needs || nodes_[in.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
  check_owner(v);
  return nodes_[v.id_].value;
}

bool Tape::requires_grad(Var v) const {
  check_owner(v);
  return nodes_[v.id_].requires_grad;
}

Tensor& Tape::grad_buffer(Var v) {
  check_owner(v);
  Node& node = nodes_[v.id_];
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return node.grad;
}

void Tape::accumulate(Var v, const Tensor& contribution) {
  if (!requires_grad(v)) return;
  Tensor& g = grad_buffer(v);
  if (!g.same_shape(contribution)) {
    throw InvalidArgument("gradient shape " + contribution.shape_string() +
                          " does not match value shape " + g.shape_string());
  }
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

void Tape::backward(Var loss) {
  check_owner(loss);
  if (nodes_[loss.id_].value.size() != 1) {
    throw InvalidArgument("backward() needs a scalar loss, got " +
                          nodes_[loss.id_].value.shape_string());
  }
  for (Node& node : nodes_) {
    node.has_grad = false;
    node.grad = Tensor();
  }
  backward_visits_ = 0;
  if (!nodes_[loss.id_].requires_grad) return;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t k = loss.id_ + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (!node.has_grad || !node.backward) continue;
    ++backward_visits_;
    node.backward(node.value, node.grad, *this);
  }
}

Tensor Tape::grad(Var v) const {
  check_owner(v);
  const Node& node = nodes_[v.id_];
  return node.has_grad ? node.grad : Tensor(node.value.shape(), 0.0);
}

namespace ops {

namespace {

Tape& tape_of(Var a) {
  if (!a.tape()) throw InvalidArgument("Var is not attached to a tape");
  return *a.tape();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                          b.shape_string());
  }
}

// out(n×m) = a(n×k)·b(k×m)
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* O = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* dst = O + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* src = B + p * m;
      for (std::size_t j = 0; j < m; ++j) dst[j] += av * src[j];
    }
  }
}

// Dot product with four independent partial sums so the loop vectorises.
double dot4(const double* x, const double* y, std::size_t k) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    acc[0] += x[p] * y[p];
    acc[1] += x[p + 1] * y[p + 1];
    acc[2] += x[p + 2] * y[p + 2];
    acc[3] += x[p + 3] * y[p + 3];
  }
  for (; p < k; ++p) acc[0] += x[p] * y[p];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

// out(n×m) = a(n×k)·b(m×k)ᵀ
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* O = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) O[i * m + j] += dot4(A + i * k, B + j * k, k);
  }
}

// out(k×m) = a(n×k)ᵀ·b(n×m)
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* O = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* br = B + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      double* dst = O + p * m;
      for (std::size_t j = 0; j < m; ++j) dst[j] += av * br[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw InvalidArgument("matmul: inner dimensions differ " + av.shape_string() + " · " +
                          bv.shape_string());
  }
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  gemm_nn(av, bv, out);
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g, Tape& t) {
    if (t.requires_grad(a)) gemm_nt(g, t.value(b), t.grad_buffer(a));
    if (t.requires_grad(b)) gemm_tn(t.value(a), g, t.grad_buffer(b));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw InvalidArgument("matmul_nt: inner dimensions differ " + av.shape_string() + " · " +
                          bv.shape_string() + "^T");
  }
  Tensor out = Tensor::matrix(av.rows(), bv.rows());
  gemm_nt(av, bv, out);
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g, Tape& t) {
    if (t.requires_grad(a)) gemm_nn(g, t.value(b), t.grad_buffer(a));
    if (t.requires_grad(b)) gemm_tn(g, t.value(a), t.grad_buffer(b));
  });
}

Var add(Var a, Var b) {
  Tape& tape = tape_of(a);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g, Tape& t) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& tape = tape_of(a);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g, Tape& t) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var scale(Var a, double factor) { return affine(a, factor, 0.0); }

Var affine(Var a, double factor, double offset) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v = factor * v + offset;
  return tape.record(std::move(out), {a}, [a, factor](const Tensor&, const Tensor& g, Tape& t) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

Var exp(Var a) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v = std::exp(v);
  if (!out.all_finite()) throw NumericFailure("exp overflowed");
  return tape.record(std::move(out), {a}, [a](const Tensor& y, const Tensor& g, Tape& t) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var row_dot(Var a, Var b) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "row_dot");
  Tensor out = Tensor::matrix(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) out[r] = dot(av.row(r), bv.row(r));
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g, Tape& t) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const std::size_t cols = av.cols();
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < cols; ++c) ga(r, c) += g[r] * bv(r, c);
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < cols; ++c) gb(r, c) += g[r] * av(r, c);
    }
  });
}

Var mean_rows(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const std::size_t n = av.rows(), k = av.cols();
  Tensor out = Tensor::matrix(1, k);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) out[c] += av(r, c);
  for (double& v : out.data()) v /= static_cast<double>(n);
  return tape.record(std::move(out), {a}, [a](const Tensor&, const Tensor& g, Tape& t) {
    Tensor& ga = t.grad_buffer(a);
    const double inv = 1.0 / static_cast<double>(ga.rows());
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g[c] * inv;
  });
}

Var sum(Var a) {
  Tape& tape = tape_of(a);
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return tape.record(Tensor({1, 1}, total), {a}, [a](const Tensor&, const Tensor& g, Tape& t) {
    Tensor& ga = t.grad_buffer(a);
    for (double& v : ga.data()) v += g[0];
  });
}

Var softmax_rows(Var a, double temperature) {
  Tape& tape = tape_of(a);
  Tensor out = t2ipal::softmax_rows(a.value(), temperature);
  return tape.record(std::move(out), {a},
                     [a, temperature](const Tensor& y, const Tensor& g, Tape& t) {
                       // dx = (1/τ)·y ⊙ (g − ⟨g, y⟩) per row
                       Tensor& ga = t.grad_buffer(a);
                       for (std::size_t r = 0; r < y.rows(); ++r) {
                         const double inner = dot(g.row(r), y.row(r));
                         for (std::size_t c = 0; c < y.cols(); ++c) {
                           ga(r, c) += y(r, c) * (g(r, c) - inner) / temperature;
                         }
                       }
                     });
}

Var normalize_rows(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  std::vector<double> norms(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    norms[r] = norm(av.row(r));
    if (!(norms[r] > kNormEpsilon)) {
      throw DegenerateInput("cannot normalise row " + std::to_string(r) + " with norm " +
                            std::to_string(norms[r]));
    }
  }
  Tensor out = av;
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (double& v : out.row(r)) v /= norms[r];
  return tape.record(std::move(out), {a},
                     [a, norms = std::move(norms)](const Tensor& y, const Tensor& g, Tape& t) {
                       // dx = (g − y⟨y, g⟩) / ‖x‖
                       Tensor& ga = t.grad_buffer(a);
                       for (std::size_t r = 0; r < y.rows(); ++r) {
                         const double inner = dot(y.row(r), g.row(r));
                         for (std::size_t c = 0; c < y.cols(); ++c) {
                           ga(r, c) += (g(r, c) - y(r, c) * inner) / norms[r];
                         }
                       }
                     });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows needs at least one part");
  Tape& tape = tape_of(parts.front());
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    if (p.value().cols() != cols) throw InvalidArgument("concat_rows: column mismatch");
    rows += p.value().rows();
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const auto& src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += src.size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record(std::move(out), parts,
                     [inputs](const Tensor&, const Tensor& g, Tape& t) {
                       std::size_t offset = 0;
                       for (Var p : inputs) {
                         const std::size_t n = t.value(p).size();
                         if (t.requires_grad(p)) {
                           Tensor& gp = t.grad_buffer(p);
                           for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
                         }
                         offset += n;
                       }
                     });
}

Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights) {
  if (scalars.empty() || scalars.size() != weights.size()) {
    throw InvalidArgument("weighted_sum: need matching, non-empty scalars and weights");
  }
  Tape& tape = tape_of(scalars.front());
  double total = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].value().size() != 1) throw InvalidArgument("weighted_sum: operands must be 1x1");
    total += weights[i] * scalars[i].value()[0];
  }
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  std::vector<double> w(weights.begin(), weights.end());
  return tape.record(Tensor({1, 1}, total), scalars,
                     [inputs, w](const Tensor&, const Tensor& g, Tape& t) {
                       for (std::size_t i = 0; i < inputs.size(); ++i) {
                         if (t.requires_grad(inputs[i])) t.grad_buffer(inputs[i])[0] += w[i] * g[0];
                       }
                     });
}

}  // namespace ops
}  // namespace t2ipal
