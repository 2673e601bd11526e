#include "culab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "culab/errors.hpp"
#include "culab/linalg.hpp"

namespace culab {

namespace {

bool g_check_finite = false;

void require_finite(const std::vector<double>& v, const char* where) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(where) + ": non-finite value encountered");
    }
  }
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

namespace detail {
std::vector<double>& TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}
}  // namespace detail

void set_check_finite(bool enabled) { g_check_finite = enabled; }
bool check_finite_enabled() { return g_check_finite; }

// ----- Tensor handle ---------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  if (shape_size(shape) != data.size()) {
    throw DimensionError("Tensor::from: shape " + shape_str(shape) + " wants " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  require_finite(data, "Tensor::from");
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
  std::vector<double> d(shape_size(shape), 0.0);
  return from(std::move(shape), std::move(d));
}

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> d(shape_size(shape), value);
  return from(std::move(shape), std::move(d));
}

Tensor Tensor::scalar(double value) { return from(Shape{1}, {value}); }

Tensor Tensor::param(Shape shape, std::vector<double> data) {
  Tensor t = from(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }
const std::vector<double>& Tensor::values() const { return node_->data; }

std::vector<double>& Tensor::mutable_values() {
  if (node_->backprop) {
    throw ContractError("mutable_values: interior graph nodes are immutable");
  }
  return node_->data;
}

double Tensor::value() const {
  if (size() != 1) {
    throw ContractError("Tensor::value: tensor has " + std::to_string(size()) +
                        " elements, expected 1");
  }
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const std::vector<double>& Tensor::grad() const {
  if (!node_ || node_->grad.empty()) {
    throw ContractError("Tensor::grad: gradient never populated; run backward() first");
  }
  return node_->grad;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor::from(node_->shape, node_->data); }

// ----- op plumbing -----------------------------------------------------------

Tensor make_op_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                      std::function<void(detail::TensorNode&)> backprop) {
  if (g_check_finite) require_finite(data, "op result");
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool needs = false;
  for (const Tensor& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const Tensor& p : parents) n->parents.push_back(p.shared_node());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

namespace {

void check_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a 2-D tensor");
}

}  // namespace

// ----- matmul / transpose ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const std::size_t p = a.shape()[0], q = a.shape()[1];
  const std::size_t q2 = b.shape()[0], r = b.shape()[1];
  if (q != q2) {
    throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) + " . " +
                         shape_str(b.shape()));
  }
  std::vector<double> c(p * r, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < p; ++i) {
    double* crow = c.data() + i * r;
    const double* arow = A + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = arow[k];
      const double* brow = B + k * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
  auto an = a.shared_node();
  auto bn = b.shared_node();
  return make_op_result(
      {p, r}, std::move(c), {a, b}, [an, bn, p, q, r](detail::TensorNode& out) {
        const double* G = out.grad.data();
        if (an->requires_grad) {
          double* da = an->ensure_grad().data();
          const double* B = bn->data.data();
          // dA += G . B^T
          for (std::size_t i = 0; i < p; ++i)
            for (std::size_t k = 0; k < q; ++k) {
              double s = 0.0;
              const double* grow = G + i * r;
              const double* brow = B + k * r;
              for (std::size_t j = 0; j < r; ++j) s += grow[j] * brow[j];
              da[i * q + k] += s;
            }
        }
        if (bn->requires_grad) {
          double* db = bn->ensure_grad().data();
          const double* A = an->data.data();
          // dB += A^T . G
          for (std::size_t i = 0; i < p; ++i) {
            const double* arow = A + i * q;
            const double* grow = G + i * r;
            for (std::size_t k = 0; k < q; ++k) {
              const double aik = arow[k];
              double* drow = db + k * r;
              for (std::size_t j = 0; j < r; ++j) drow[j] += aik * grow[j];
            }
          }
        }
      });
}

Tensor transpose(const Tensor& a) {
  check_2d(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  const double* A = a.values().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
  auto an = a.shared_node();
  return make_op_result({c, r}, std::move(out), {a}, [an, r, c](detail::TensorNode& o) {
    double* da = an->ensure_grad().data();
    const double* G = o.grad.data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) da[i * c + j] += G[j * r + i];
  });
}

// ----- elementwise binary -----------------------------------------------------

namespace {

enum class Bcast { kNone, kLeftScalar, kRightScalar };

Bcast binary_mode(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::kNone;
  if (b.size() == 1) return Bcast::kRightScalar;
  if (a.size() == 1) return Bcast::kLeftScalar;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()) +
                       " are not broadcast-compatible (scalar or same-shape only)");
}

void accumulate_scalar(detail::TensorNode* n, double v) {
  n->ensure_grad()[0] += v;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Bcast mode = binary_mode(a, b, "add");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::size_t n = std::max(av.size(), bv.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = mode == Bcast::kLeftScalar ? av[0] : av[i];
    double y = mode == Bcast::kRightScalar ? bv[0] : bv[i];
    out[i] = x + y;
  }
  Shape shape = mode == Bcast::kLeftScalar ? b.shape() : a.shape();
  auto an = a.shared_node();
  auto bn = b.shared_node();
  return make_op_result(shape, std::move(out), {a, b}, [an, bn, mode](detail::TensorNode& o) {
    const auto& g = o.grad;
    if (an->requires_grad) {
      if (mode == Bcast::kLeftScalar) {
        double s = 0.0;
        for (double v : g) s += v;
        accumulate_scalar(an.get(), s);
      } else {
        auto& da = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
    }
    if (bn->requires_grad) {
      if (mode == Bcast::kRightScalar) {
        double s = 0.0;
        for (double v : g) s += v;
        accumulate_scalar(bn.get(), s);
      } else {
        auto& db = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Bcast mode = binary_mode(a, b, "sub");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::size_t n = std::max(av.size(), bv.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = mode == Bcast::kLeftScalar ? av[0] : av[i];
    double y = mode == Bcast::kRightScalar ? bv[0] : bv[i];
    out[i] = x - y;
  }
  Shape shape = mode == Bcast::kLeftScalar ? b.shape() : a.shape();
  auto an = a.shared_node();
  auto bn = b.shared_node();
  return make_op_result(shape, std::move(out), {a, b}, [an, bn, mode](detail::TensorNode& o) {
    const auto& g = o.grad;
    if (an->requires_grad) {
      if (mode == Bcast::kLeftScalar) {
        double s = 0.0;
        for (double v : g) s += v;
        accumulate_scalar(an.get(), s);
      } else {
        auto& da = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
    }
    if (bn->requires_grad) {
      if (mode == Bcast::kRightScalar) {
        double s = 0.0;
        for (double v : g) s += v;
        accumulate_scalar(bn.get(), -s);
      } else {
        auto& db = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Bcast mode = binary_mode(a, b, "mul");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::size_t n = std::max(av.size(), bv.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = mode == Bcast::kLeftScalar ? av[0] : av[i];
    double y = mode == Bcast::kRightScalar ? bv[0] : bv[i];
    out[i] = x * y;
  }
  Shape shape = mode == Bcast::kLeftScalar ? b.shape() : a.shape();
  auto an = a.shared_node();
  auto bn = b.shared_node();
  return make_op_result(shape, std::move(out), {a, b}, [an, bn, mode](detail::TensorNode& o) {
    const auto& g = o.grad;
    const auto& av = an->data;
    const auto& bv = bn->data;
    if (an->requires_grad) {
      if (mode == Bcast::kLeftScalar) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * bv[i];
        accumulate_scalar(an.get(), s);
      } else {
        auto& da = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          da[i] += g[i] * (mode == Bcast::kRightScalar ? bv[0] : bv[i]);
      }
    }
    if (bn->requires_grad) {
      if (mode == Bcast::kRightScalar) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * av[i];
        accumulate_scalar(bn.get(), s);
      } else {
        auto& db = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          db[i] += g[i] * (mode == Bcast::kLeftScalar ? av[0] : av[i]);
      }
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Bcast mode = binary_mode(a, b, "div");
  const auto& av = a.values();
  const auto& bv = b.values();
  for (double y : bv) {
    if (y == 0.0) throw DomainError("div: division by zero");
  }
  std::size_t n = std::max(av.size(), bv.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = mode == Bcast::kLeftScalar ? av[0] : av[i];
    double y = mode == Bcast::kRightScalar ? bv[0] : bv[i];
    out[i] = x / y;
  }
  Shape shape = mode == Bcast::kLeftScalar ? b.shape() : a.shape();
  auto an = a.shared_node();
  auto bn = b.shared_node();
  return make_op_result(shape, std::move(out), {a, b}, [an, bn, mode](detail::TensorNode& o) {
    const auto& g = o.grad;
    const auto& av = an->data;
    const auto& bv = bn->data;
    auto aval = [&](std::size_t i) { return mode == Bcast::kLeftScalar ? av[0] : av[i]; };
    auto bval = [&](std::size_t i) { return mode == Bcast::kRightScalar ? bv[0] : bv[i]; };
    if (an->requires_grad) {
      if (mode == Bcast::kLeftScalar) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) s += g[i] / bval(i);
        accumulate_scalar(an.get(), s);
      } else {
        auto& da = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / bval(i);
      }
    }
    if (bn->requires_grad) {
      if (mode == Bcast::kRightScalar) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i)
          s += -g[i] * aval(i) / (bv[0] * bv[0]);
        accumulate_scalar(bn.get(), s);
      } else {
        auto& db = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          db[i] += -g[i] * aval(i) / (bval(i) * bval(i));
      }
    }
  });
}

// ----- elementwise unary -------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  auto an = a.shared_node();
  return make_op_result(a.shape(), std::move(out), {a}, [an, bwd](detail::TensorNode& o) {
    auto& da = an->ensure_grad();
    const auto& g = o.grad;
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bwd(an->data[i], o.data[i]);
  });
}

}  // namespace

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double x : a.values()) {
    if (x <= 0.0) throw DomainError("log: non-positive input");
  }
  return unary_op(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  for (double x : a.values()) {
    if (x <= 0.0) throw DomainError("sqrt: non-positive input");
  }
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor neg(const Tensor& a) {
  return unary_op(
      a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor abs(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      a,
      [](double x) { return x > 35.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

// ----- reductions ----------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  auto an = a.shared_node();
  return make_op_result({1}, {s}, {a}, [an](detail::TensorNode& o) {
    auto& da = an->ensure_grad();
    const double g = o.grad[0];
    for (double& v : da) v += g;
  });
}

namespace {

void check_axis(const Tensor& a, std::size_t axis, const char* op) {
  check_2d(a, op);
  if (axis >= a.rank()) throw DimensionError(std::string(op) + ": axis out of range");
  if (a.shape()[axis] == 0) throw DomainError(std::string(op) + ": empty reduction axis");
}

}  // namespace

Tensor sum(const Tensor& a, std::size_t axis) {
  check_axis(a, axis, "sum");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const std::size_t keep = axis == 0 ? c : r;
  std::vector<double> out(keep, 0.0);
  const double* A = a.values().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += A[i * c + j];
  auto an = a.shared_node();
  return make_op_result({keep}, std::move(out), {a}, [an, axis, r, c](detail::TensorNode& o) {
    auto& da = an->ensure_grad();
    const auto& g = o.grad;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) da[i * c + j] += g[axis == 0 ? j : i];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DomainError("mean: empty tensor");
  return mul(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor mean(const Tensor& a, std::size_t axis) {
  check_axis(a, axis, "mean");
  return mul(sum(a, axis), 1.0 / static_cast<double>(a.shape()[axis]));
}

Tensor max(const Tensor& a) {
  if (a.size() == 0) throw DomainError("max: empty tensor");
  const auto& av = a.values();
  std::size_t best = 0;
  for (std::size_t i = 1; i < av.size(); ++i)
    if (av[i] > av[best]) best = i;
  auto an = a.shared_node();
  return make_op_result({1}, {av[best]}, {a}, [an, best](detail::TensorNode& o) {
    an->ensure_grad()[best] += o.grad[0];
  });
}

Tensor max(const Tensor& a, std::size_t axis) {
  check_axis(a, axis, "max");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const std::size_t keep = axis == 0 ? c : r;
  const double* A = a.values().data();
  std::vector<double> out(keep);
  std::vector<std::size_t> arg(keep);
  for (std::size_t k = 0; k < keep; ++k) {
    const std::size_t n = axis == 0 ? r : c;
    std::size_t best = 0;
    auto at = [&](std::size_t t) { return axis == 0 ? A[t * c + k] : A[k * c + t]; };
    for (std::size_t t = 1; t < n; ++t)
      if (at(t) > at(best)) best = t;
    out[k] = at(best);
    arg[k] = axis == 0 ? best * c + k : k * c + best;
  }
  auto an = a.shared_node();
  return make_op_result({keep}, std::move(out), {a},
                        [an, arg = std::move(arg)](detail::TensorNode& o) {
                          auto& da = an->ensure_grad();
                          for (std::size_t k = 0; k < arg.size(); ++k)
                            da[arg[k]] += o.grad[k];
                        });
}

// ----- structural ops ---------------------------------------------------------------

Tensor row_norm(const Tensor& a) {
  check_2d(a, "row_norm");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r, 0.0);
  const double* A = a.values().data();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += A[i * c + j] * A[i * c + j];
    out[i] = std::sqrt(s);
  }
  auto an = a.shared_node();
  return make_op_result({r}, std::move(out), {a}, [an, r, c](detail::TensorNode& o) {
    auto& da = an->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      double norm = o.data[i];
      if (norm == 0.0) continue;
      double g = o.grad[i] / norm;
      for (std::size_t j = 0; j < c; ++j) da[i * c + j] += g * an->data[i * c + j];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: element count mismatch for " + shape_str(shape));
  }
  auto an = a.shared_node();
  return make_op_result(std::move(shape), a.values(), {a}, [an](detail::TensorNode& o) {
    auto& da = an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) da[i] += o.grad[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const std::size_t c = parts.front().shape().at(1);
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    check_2d(p, "concat_rows");
    if (p.shape()[1] != c) throw DimensionError("concat_rows: column counts differ");
    rows += p.shape()[0];
  }
  std::vector<double> out;
  out.reserve(rows * c);
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  std::vector<std::shared_ptr<detail::TensorNode>> nodes;
  nodes.reserve(parts.size());
  for (const Tensor& p : parts) nodes.push_back(p.shared_node());
  return make_op_result({rows, c}, std::move(out), parts,
                        [nodes = std::move(nodes)](detail::TensorNode& o) {
                          std::size_t offset = 0;
                          for (const auto& n : nodes) {
                            const std::size_t len = n->data.size();
                            if (n->requires_grad) {
                              auto& d = n->ensure_grad();
                              for (std::size_t i = 0; i < len; ++i)
                                d[i] += o.grad[offset + i];
                            }
                            offset += len;
                          }
                        });
}

Tensor add_row_bias(const Tensor& m, const Tensor& bias) {
  check_2d(m, "add_row_bias");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  if (bias.size() != c) throw DimensionError("add_row_bias: bias length != column count");
  std::vector<double> out(m.values());
  const double* B = bias.values().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += B[j];
  auto mn = m.shared_node();
  auto bn = bias.shared_node();
  return make_op_result({r, c}, std::move(out), {m, bias}, [mn, bn, r, c](detail::TensorNode& o) {
    const auto& g = o.grad;
    if (mn->requires_grad) {
      auto& dm = mn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dm[i] += g[i];
    }
    if (bn->requires_grad) {
      auto& db = bn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) db[j] += g[i * c + j];
    }
  });
}

Tensor softmax_rows(const Tensor& m) {
  check_2d(m, "softmax_rows");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  std::vector<double> out(r * c);
  const double* A = m.values().data();
  for (std::size_t i = 0; i < r; ++i) {
    double mx = A[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, A[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(A[i * c + j] - mx);
      z += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  auto mn = m.shared_node();
  return make_op_result({r, c}, std::move(out), {m}, [mn, r, c](detail::TensorNode& o) {
    auto& dm = mn->ensure_grad();
    const auto& g = o.grad;
    const auto& y = o.data;
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        dm[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  check_2d(a, "concat_cols");
  check_2d(b, "concat_cols");
  const std::size_t r = a.shape()[0];
  if (b.shape()[0] != r) throw DimensionError("concat_cols: row counts differ");
  const std::size_t ca = a.shape()[1], cb = b.shape()[1];
  std::vector<double> out(r * (ca + cb));
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < r; ++i) {
    std::copy(A + i * ca, A + (i + 1) * ca, out.begin() + i * (ca + cb));
    std::copy(B + i * cb, B + (i + 1) * cb, out.begin() + i * (ca + cb) + ca);
  }
  auto an = a.shared_node();
  auto bn = b.shared_node();
  return make_op_result({r, ca + cb}, std::move(out), {a, b},
                        [an, bn, r, ca, cb](detail::TensorNode& o) {
                          const auto& g = o.grad;
                          const std::size_t cc = ca + cb;
                          if (an->requires_grad) {
                            auto& da = an->ensure_grad();
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < ca; ++j)
                                da[i * ca + j] += g[i * cc + j];
                          }
                          if (bn->requires_grad) {
                            auto& db = bn->ensure_grad();
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < cb; ++j)
                                db[i * cb + j] += g[i * cc + ca + j];
                          }
                        });
}

Tensor slice_rows(const Tensor& a, std::size_t row0, std::size_t nrows) {
  check_2d(a, "slice_rows");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  if (row0 + nrows > r) throw DimensionError("slice_rows: range exceeds row count");
  std::vector<double> out(a.values().begin() + row0 * c,
                          a.values().begin() + (row0 + nrows) * c);
  auto an = a.shared_node();
  return make_op_result({nrows, c}, std::move(out), {a},
                        [an, row0, c](detail::TensorNode& o) {
                          auto& da = an->ensure_grad();
                          const auto& g = o.grad;
                          for (std::size_t i = 0; i < g.size(); ++i)
                            da[row0 * c + i] += g[i];
                        });
}

Tensor scatter(const Tensor& values, const std::vector<std::size_t>& positions, Shape shape) {
  if (values.size() != positions.size())
    throw DimensionError("scatter: values/positions length mismatch");
  const std::size_t n = shape_size(shape);
  std::vector<double> out(n, 0.0);
  const auto& v = values.values();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= n) throw DimensionError("scatter: position out of range");
    out[positions[i]] = v[i];
  }
  auto vn = values.shared_node();
  return make_op_result(std::move(shape), std::move(out), {values},
                        [vn, positions](detail::TensorNode& o) {
                          auto& dv = vn->ensure_grad();
                          for (std::size_t i = 0; i < positions.size(); ++i)
                            dv[i] += o.grad[positions[i]];
                        });
}

Tensor gather(const Tensor& a, const std::vector<std::size_t>& positions) {
  std::vector<double> out(positions.size());
  const auto& v = a.values();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= v.size()) throw DimensionError("gather: position out of range");
    out[i] = v[positions[i]];
  }
  auto an = a.shared_node();
  return make_op_result({positions.size()}, std::move(out), {a},
                        [an, positions](detail::TensorNode& o) {
                          auto& da = an->ensure_grad();
                          for (std::size_t i = 0; i < positions.size(); ++i)
                            da[positions[i]] += o.grad[i];
                        });
}

Tensor logdet_spd(const Tensor& a) {
  check_2d(a, "logdet_spd");
  const std::size_t m = a.shape()[0];
  if (a.shape()[1] != m) throw DimensionError("logdet_spd: matrix not square");
  auto l = linalg::cholesky(a.values(), m);
  double ld = linalg::cholesky_logdet(l, m);
  // d logdet(A) / dA = A^{-1} for symmetric A.
  auto inv = linalg::spd_inverse(a.values(), m);
  auto an = a.shared_node();
  return make_op_result({1}, {ld}, {a}, [an, inv = std::move(inv)](detail::TensorNode& o) {
    auto& da = an->ensure_grad();
    const double g = o.grad[0];
    for (std::size_t i = 0; i < inv.size(); ++i) da[i] += g * inv[i];
  });
}

// ----- backward / optimizer -----------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a defined scalar tensor");
  }
  detail::TensorNode* root = loss.node();
  if (!root->requires_grad) return;  // constant loss: nothing depends on parameters

  // Iterative DFS post-order; reversed it gives a valid topological order.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  struct Frame {
    detail::TensorNode* node;
    std::size_t next_child;
  };
  std::vector<Frame> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.node->parents.size()) {
      detail::TensorNode* child = f.node->parents[f.next_child++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Interior activations get a fresh gradient each pass; only leaf
  // gradients accumulate across repeated backward calls.
  for (detail::TensorNode* n : order) {
    if (n->backprop) n->grad.assign(n->data.size(), 0.0);
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

void GradientDescent::step(std::vector<Tensor>& params) const {
  for (Tensor& p : params) {
    if (!p.has_grad()) {
      throw ContractError("GradientDescent::step: parameter has no gradient");
    }
    auto& data = p.mutable_values();
    const auto& g = p.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      double gi = g[i];
      if (clip) gi = std::clamp(gi, -*clip, *clip);
      data[i] -= lr * gi;
    }
  }
}

void zero_grads(std::vector<Tensor>& params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace culab
