#include "dynformer/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dynformer/cost.hpp"
#include "dynformer/error.hpp"
#include "eigen_maps.hpp"

namespace dynformer {

namespace {

using namespace detail;

Tape& common_tape(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw ValidationError("operation on an empty Var");
  if (&a.tape() != &b.tape()) {
    throw ValidationError("operands were recorded on different tapes");
  }
  return a.tape();
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(t.shape()));
  }
}

}  // namespace

// ---- Parameter / Var / Tape ------------------------------------------------

Parameter::Parameter(std::string name, Tensor value)
    : name_(std::move(name)), value_(std::move(value)), grad_(value_.shape()) {}

void Parameter::zero_grad() {
  std::fill(grad_.data().begin(), grad_.data().end(), 0.0);
}

const Tensor& Var::value() const { return tape_->value(*this); }

void Tape::check_owned(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw ValidationError("Var does not belong to this tape");
  }
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value(), {}, {}, &p, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    check_owned(v);
    needs = needs || nodes_[v.id_].requires_grad;
  }
  if (!value.all_finite()) {
    throw NumericalError("operation produced a non-finite value (node " +
                         std::to_string(nodes_.size()) + ")");
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{},
                        nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id_].value;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id_].requires_grad;
}

Tensor& Tape::grad_accumulator(Var v) {
  check_owned(v);
  Node& n = nodes_[v.id_];
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  check_owned(v);
  const Node& n = nodes_[v.id_];
  if (n.grad.shape() != n.value.shape()) return Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (nodes_[loss.id_].value.size() != 1) {
    throw ValidationError("backward() needs a scalar loss, got shape " +
                          to_string(nodes_[loss.id_].value.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  order_.clear();
  grad_accumulator(loss)[0] = 1.0;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.shape() != n.value.shape()) continue;
    order_.push_back(id);
    if (n.backward) {
      // Copy: the closure may allocate gradients of other nodes.
      const Tensor g = n.grad;
      n.backward(*this, g);
    }
    if (n.param != nullptr) {
      Tensor& acc = n.param->mutable_grad();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += n.grad[i];
    }
  }
}

// ---- elementwise ---------------------------------------------------------------

Var add(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "add");
  count_mulacc(CostCategory::kPointwise, a.value().size());
  return tape.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) mvec(t.grad_accumulator(a)) += cvec(g);
    if (t.requires_grad(b)) mvec(t.grad_accumulator(b)) += cvec(g);
  });
}

Var sub(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "sub");
  count_mulacc(CostCategory::kPointwise, a.value().size());
  return tape.record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) mvec(t.grad_accumulator(a)) += cvec(g);
    if (t.requires_grad(b)) mvec(t.grad_accumulator(b)) -= cvec(g);
  });
}

Var hadamard(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "hadamard");
  Tensor out(a.shape());
  mvec(out) = cvec(a.value()).cwiseProduct(cvec(b.value()));
  count_mulacc(CostCategory::kPointwise, out.size());
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      mvec(t.grad_accumulator(a)) += cvec(g).cwiseProduct(cvec(t.value(b)));
    }
    if (t.requires_grad(b)) {
      mvec(t.grad_accumulator(b)) += cvec(g).cwiseProduct(cvec(t.value(a)));
    }
  });
}

Var scale(Var a, double s) {
  count_mulacc(CostCategory::kPointwise, a.value().size());
  return a.tape().record(s * a.value(), {a}, [a, s](Tape& t, const Tensor& g) {
    mvec(t.grad_accumulator(a)) += s * cvec(g);
  });
}

Var scale_by(Var a, Var s) {
  Tape& tape = common_tape(a, s);
  if (s.value().size() != 1) {
    throw DimensionError("scale_by: factor must be a scalar, got shape " +
                         to_string(s.shape()));
  }
  count_mulacc(CostCategory::kPointwise, a.value().size());
  return tape.record(s.value()[0] * a.value(), {a, s}, [a, s](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) mvec(t.grad_accumulator(a)) += t.value(s)[0] * cvec(g);
    if (t.requires_grad(s)) t.grad_accumulator(s)[0] += cvec(g).dot(cvec(t.value(a)));
  });
}

// ---- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b, CostCategory cost) {
  Tape& tape = common_tape(a, b);
  require_rank(a.value(), 2, "matmul lhs");
  require_rank(b.value(), 2, "matmul rhs");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents disagree, " + to_string(a.shape()) +
                         " x " + to_string(b.shape()));
  }
  Tensor out({m, n});
  mmat(out, m, n).noalias() = cmat(a.value(), m, k) * cmat(b.value(), k, n);
  count_mulacc(cost, m * k * n);
  return tape.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    const auto G = cmat(g, m, n);
    if (t.requires_grad(a)) {
      mmat(t.grad_accumulator(a), m, k).noalias() += G * cmat(t.value(b), k, n).transpose();
    }
    if (t.requires_grad(b)) {
      mmat(t.grad_accumulator(b), k, n).noalias() += cmat(t.value(a), m, k).transpose() * G;
    }
  });
}

Var transpose(Var a) {
  require_rank(a.value(), 2, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out({n, m});
  mmat(out, n, m) = cmat(a.value(), m, n).transpose();
  return a.tape().record(std::move(out), {a}, [a, m, n](Tape& t, const Tensor& g) {
    mmat(t.grad_accumulator(a), m, n) += cmat(g, n, m).transpose();
  });
}

Var linear(Var x, Var w, std::optional<Var> b) {
  Tape& tape = common_tape(x, w);
  require_rank(w.value(), 2, "linear weight");
  const Shape& xs = x.shape();
  if (xs.empty()) throw DimensionError("linear: input has rank 0");
  const std::size_t din = w.shape()[0], dout = w.shape()[1];
  if (xs.back() != din) {
    throw DimensionError("linear: channel mismatch, input " + to_string(xs) +
                         " vs weight " + to_string(w.shape()));
  }
  if (b && (b->value().size() != dout || &b->tape() != &tape)) {
    throw DimensionError("linear: bias shape " + to_string(b->shape()) +
                         " does not match output width " + std::to_string(dout));
  }
  const std::size_t rows = x.value().size() / din;
  Shape os = xs;
  os.back() = dout;
  Tensor out(os);
  auto O = mmat(out, rows, dout);
  O.noalias() = cmat(x.value(), rows, din) * cmat(w.value(), din, dout);
  if (b) O.rowwise() += cvec(b->value()).transpose();
  count_mulacc(CostCategory::kPointwise, rows * din * dout);

  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(*b);
  return tape.record(std::move(out), inputs,
                     [x, w, b, rows, din, dout](Tape& t, const Tensor& g) {
                       const auto G = cmat(g, rows, dout);
                       if (t.requires_grad(x)) {
                         mmat(t.grad_accumulator(x), rows, din).noalias() +=
                             G * cmat(t.value(w), din, dout).transpose();
                       }
                       if (t.requires_grad(w)) {
                         mmat(t.grad_accumulator(w), din, dout).noalias() +=
                             cmat(t.value(x), rows, din).transpose() * G;
                       }
                       if (b && t.requires_grad(*b)) {
                         mvec(t.grad_accumulator(*b)) += G.colwise().sum().transpose();
                       }
                     });
}

// ---- nonlinearities ----------------------------------------------------------

Var gelu(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
  }
  count_mulacc(CostCategory::kPointwise, xv.size());
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    Tensor& acc = t.grad_accumulator(x);
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv[i] * xv[i]);
      acc[i] += g[i] * (cdf + xv[i] * pdf);
    }
  });
}

Var softmax_last(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw DimensionError("softmax: rank 0 input");
  const std::size_t d = xv.shape().back();
  const std::size_t rows = xv.size() / d;
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data().data() + r * d;
    double* o = out.data().data() + r * d;
    const double mx = *std::max_element(in, in + d);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < d; ++j) o[j] /= s;
  }
  count_mulacc(CostCategory::kPointwise, xv.size());
  // The backward pass needs the output values.
  Tensor yv = out;
  return x.tape().record(std::move(out), {x}, [x, yv = std::move(yv), rows, d](Tape& t, const Tensor& g) {
    Tensor& acc = t.grad_accumulator(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = yv.data().data() + r * d;
      const double* gr = g.data().data() + r * d;
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += gr[j] * yr[j];
      for (std::size_t j = 0; j < d; ++j) acc[r * d + j] += yr[j] * (gr[j] - s);
    }
  });
}

// ---- reductions and shape plumbing ---------------------------------------------

Var mean_over_axis(Var x, std::size_t axis) {
  const Shape& xs = x.shape();
  if (axis >= xs.size()) {
    throw DimensionError("mean_over_axis: axis " + std::to_string(axis) +
                         " out of range for shape " + to_string(xs));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t n = xs[axis];
  Shape os;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i != axis) os.push_back(xs[i]);
  }
  if (os.empty()) os.push_back(1);
  Tensor out(os);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < n; ++j) {
      const double* src = xv.data().data() + (o * n + j) * inner;
      double* dst = out.data().data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : out.data()) v *= inv;
  count_mulacc(CostCategory::kReduction, xv.size());
  return x.tape().record(std::move(out), {x}, [x, outer, inner, n, inv](Tape& t, const Tensor& g) {
    Tensor& acc = t.grad_accumulator(x);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < n; ++j) {
        double* dst = acc.data().data() + (o * n + j) * inner;
        const double* src = g.data().data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += inv * src[i];
      }
    }
  });
}

Var sum(Var x) {
  count_mulacc(CostCategory::kReduction, x.value().size());
  return x.tape().record(Tensor::scalar(cvec(x.value()).sum()), {x},
                         [x](Tape& t, const Tensor& g) {
                           mvec(t.grad_accumulator(x)).array() += g[0];
                         });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    mvec(t.grad_accumulator(x)) += cvec(g);
  });
}

Var divide_rows(Var x, Var s) {
  Tape& tape = common_tape(x, s);
  require_rank(x.value(), 2, "divide_rows");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (s.value().size() != n) {
    throw DimensionError("divide_rows: " + to_string(x.shape()) + " by " +
                         to_string(s.shape()));
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.value()[i * d + j] / s.value()[i];
  }
  count_mulacc(CostCategory::kPointwise, n * d);
  return tape.record(std::move(out), {x, s}, [x, s, n, d](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    const Tensor& sv = t.value(s);
    if (t.requires_grad(x)) {
      Tensor& acc = t.grad_accumulator(x);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) acc[i * d + j] += g[i * d + j] / sv[i];
      }
    }
    if (t.requires_grad(s)) {
      Tensor& acc = t.grad_accumulator(s);
      for (std::size_t i = 0; i < n; ++i) {
        double r = 0.0;
        for (std::size_t j = 0; j < d; ++j) r += g[i * d + j] * xv[i * d + j];
        acc[i] -= r / (sv[i] * sv[i]);
      }
    }
  });
}

Var slice_last(Var x, std::size_t begin, std::size_t end) {
  const Shape& xs = x.shape();
  if (xs.empty() || begin >= end || end > xs.back()) {
    throw DimensionError("slice_last: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for shape " + to_string(xs));
  }
  const std::size_t d = xs.back(), w = end - begin, rows = x.value().size() / d;
  Shape os = xs;
  os.back() = w;
  Tensor out(os);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.value().data().data() + r * d + begin, w, out.data().data() + r * w);
  }
  return x.tape().record(std::move(out), {x}, [x, begin, d, w, rows](Tape& t, const Tensor& g) {
    Tensor& acc = t.grad_accumulator(x);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) acc[r * d + begin + j] += g[r * w + j];
    }
  });
}

Var concat_last(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_last: no inputs");
  Shape base = parts[0].shape();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    Shape s = p.shape();
    if (s.size() != base.size() ||
        !std::equal(s.begin(), s.end() - 1, base.begin(), base.end() - 1)) {
      throw DimensionError("concat_last: incompatible shapes " + to_string(base) + " and " +
                           to_string(s));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t rows = parts[0].value().size() / widths[0];
  Shape os = base;
  os.back() = total;
  Tensor out(os);
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data().data() + r * widths[p], widths[p],
                  out.data().data() + r * total + off);
    }
    off += widths[p];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(
      std::move(out), inputs, [inputs, widths, rows, total](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < inputs.size(); ++p) {
          if (t.requires_grad(inputs[p])) {
            Tensor& acc = t.grad_accumulator(inputs[p]);
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t j = 0; j < widths[p]; ++j) {
                acc[r * widths[p] + j] += g[r * total + off + j];
              }
            }
          }
          off += widths[p];
        }
      });
}

Var select(Var x, std::size_t index) {
  const Shape& xs = x.shape();
  if (xs.size() < 2 || index >= xs[0]) {
    throw DimensionError("select: index " + std::to_string(index) +
                         " invalid for shape " + to_string(xs));
  }
  Shape os(xs.begin() + 1, xs.end());
  const std::size_t block = numel(os);
  std::vector<double> data(x.value().data().begin() + index * block,
                           x.value().data().begin() + (index + 1) * block);
  return x.tape().record(Tensor(os, std::move(data)), {x},
                         [x, index, block](Tape& t, const Tensor& g) {
                           Tensor& acc = t.grad_accumulator(x);
                           for (std::size_t i = 0; i < block; ++i) acc[index * block + i] += g[i];
                         });
}

Var stack(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  const Shape inner = parts[0].shape();
  for (const Var& p : parts) require_same_shape(p.shape(), inner, "stack");
  Shape os{parts.size()};
  os.insert(os.end(), inner.begin(), inner.end());
  const std::size_t block = numel(inner);
  Tensor out(os);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy_n(parts[i].value().data().data(), block, out.data().data() + i * block);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), inputs,
                                [inputs, block](Tape& t, const Tensor& g) {
                                  for (std::size_t i = 0; i < inputs.size(); ++i) {
                                    if (!t.requires_grad(inputs[i])) continue;
                                    Tensor& acc = t.grad_accumulator(inputs[i]);
                                    for (std::size_t j = 0; j < block; ++j) {
                                      acc[j] += g[i * block + j];
                                    }
                                  }
                                });
}

Var relative_mse_loss(Var pred, const Tensor& truth) {
  require_same_shape(pred.shape(), truth.shape(), "relative_mse");
  if (truth.rank() < 1 || truth.size() == 0) {
    throw DimensionError("relative_mse: empty input");
  }
  const std::size_t samples = truth.shape()[0];
  const std::size_t block = truth.size() / samples;
  std::vector<double> norms(samples);
  double loss = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = s * block; i < (s + 1) * block; ++i) {
      const double e = pred.value()[i] - truth[i];
      num += e * e;
      den += truth[i] * truth[i];
    }
    if (!(den > 0.0)) {
      throw ValidationError("relative_mse: truth sample " + std::to_string(s) +
                            " has zero norm");
    }
    norms[s] = den;
    loss += num / den;
  }
  loss /= static_cast<double>(samples);
  count_mulacc(CostCategory::kReduction, 2 * truth.size());
  return pred.tape().record(
      Tensor::scalar(loss), {pred}, [pred, truth, norms, samples, block](Tape& t, const Tensor& g) {
        Tensor& acc = t.grad_accumulator(pred);
        const Tensor& pv = t.value(pred);
        for (std::size_t s = 0; s < samples; ++s) {
          const double c = 2.0 * g[0] / (norms[s] * static_cast<double>(samples));
          for (std::size_t i = s * block; i < (s + 1) * block; ++i) {
            acc[i] += c * (pv[i] - truth[i]);
          }
        }
      });
}

}  // namespace dynformer
