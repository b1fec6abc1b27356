#include "hyperadapt/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace hyperadapt {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const Mat>;
using MutMap = Eigen::Map<Mat>;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

ConstMap as_matrix(const std::vector<double>& buf, std::size_t rows, std::size_t cols) {
  return ConstMap(buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(std::vector<double>& buf, std::size_t rows, std::size_t cols) {
  return MutMap(buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined operand");
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Wraps a computed buffer into an op node; records the backward rule when
// any input participates in differentiation.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<NodePtr> inputs, std::function<void(Node&)> rule) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(op, "non-finite value in forward output");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  node->is_leaf = false;
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in->requires_grad;
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(rule);
  }
  return Tensor(std::move(node));
}

template <typename F>
Tensor unary_elementwise(const char* op, const Tensor& x, F value_and_slope) {
  const auto& in = x.node()->data;
  std::vector<double> out(in.size());
  std::vector<double> slope(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    auto [v, s] = value_and_slope(in[i]);
    out[i] = v;
    slope[i] = s;
  }
  return make_result(op, x.shape(), std::move(out), {x.node()},
                     [slope = std::move(slope)](Node& self) {
                       Node& a = *self.inputs[0];
                       if (!a.requires_grad) return;
                       for (std::size_t i = 0; i < slope.size(); ++i) a.grad[i] += slope[i] * self.grad[i];
                     });
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  as_matrix(out, m, n).noalias() = as_matrix(a.node()->data, m, k) * as_matrix(b.node()->data, k, n);
  return make_result("matmul", {m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    auto dc = as_matrix(std::as_const(self.grad), m, n);
    if (an.requires_grad) {
      as_matrix(an.grad, m, k).noalias() += dc * as_matrix(std::as_const(bn.data), k, n).transpose();
    }
    if (bn.requires_grad) {
      as_matrix(bn.grad, k, n).noalias() += as_matrix(std::as_const(an.data), m, k).transpose() * dc;
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  as_matrix(out, c, r) = as_matrix(x.node()->data, r, c).transpose();
  return make_result("transpose", {c, r}, std::move(out), {x.node()}, [r, c](Node& self) {
    Node& a = *self.inputs[0];
    if (a.requires_grad) as_matrix(a.grad, r, c) += as_matrix(std::as_const(self.grad), c, r).transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto& x = a.node()->data;
  const auto& y = b.node()->data;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_result("add", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto& x = a.node()->data;
  const auto& y = b.node()->data;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_result("sub", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (an.requires_grad) an.grad[i] += self.grad[i];
      if (bn.requires_grad) bn.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto& x = a.node()->data;
  const auto& y = b.node()->data;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (an.requires_grad) an.grad[i] += bn.data[i] * self.grad[i];
      if (bn.requires_grad) bn.grad[i] += an.data[i] * self.grad[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  const auto& in = x.node()->data;
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
  return make_result("scale", x.shape(), std::move(out), {x.node()}, [factor](Node& self) {
    Node& a = *self.inputs[0];
    if (!a.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) a.grad[i] += factor * self.grad[i];
  });
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_row");
  require_rank(bias, 1, "add_row");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.dim(0) != n) {
    throw ShapeError("add_row: bias " + shape_str(bias.shape()) + " does not match rows of " +
                     shape_str(x.shape()));
  }
  const auto& in = x.node()->data;
  const auto& b = bias.node()->data;
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = in[r * n + c] + b[c];
  return make_result("add_row", x.shape(), std::move(out), {x.node(), bias.node()}, [m, n](Node& self) {
    Node& xn = *self.inputs[0];
    Node& bn = *self.inputs[1];
    if (xn.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) xn.grad[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) bn.grad[c] += self.grad[r * n + c];
    }
  });
}

Tensor silu(const Tensor& x) {
  return unary_elementwise("silu", x, [](double v) {
    double s = sigmoid(v);
    return std::pair{v * s, s * (1.0 + v * (1.0 - s))};
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return unary_elementwise("gelu", x, [](double v) {
    double u = kC * (v + kA * v * v * v);
    double t = std::tanh(u);
    double du = kC * (1.0 + 3.0 * kA * v * v);
    return std::pair{0.5 * v * (1.0 + t), 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du};
  });
}

Tensor tanh(const Tensor& x) {
  return unary_elementwise("tanh", x, [](double v) {
    double t = std::tanh(v);
    return std::pair{t, 1.0 - t * t};
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  require_rank(gain, 1, "rms_norm");
  if (x.rank() == 0 || x.shape().back() != gain.dim(0)) {
    throw ShapeError("rms_norm: last extent of " + shape_str(x.shape()) + " must equal gain " +
                     shape_str(gain.shape()));
  }
  const std::size_t d = gain.dim(0);
  const std::size_t rows = x.numel() / d;
  const auto& in = x.node()->data;
  const auto& g = gain.node()->data;
  std::vector<double> out(in.size());
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ms = 0.0;
    for (std::size_t c = 0; c < d; ++c) ms += in[r * d + c] * in[r * d + c];
    inv[r] = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = in[r * d + c] * inv[r] * g[c];
  }
  return make_result("rms_norm", x.shape(), std::move(out), {x.node(), gain.node()},
                     [rows, d, inv = std::move(inv)](Node& self) {
                       Node& xn = *self.inputs[0];
                       Node& gn = *self.inputs[1];
                       const auto& dy = self.grad;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* xr = &xn.data[r * d];
                         const double* dyr = &dy[r * d];
                         if (xn.requires_grad) {
                           double dot = 0.0;
                           for (std::size_t c = 0; c < d; ++c) dot += dyr[c] * gn.data[c] * xr[c];
                           double k = inv[r] * inv[r] * inv[r] * dot / static_cast<double>(d);
                           for (std::size_t c = 0; c < d; ++c) {
                             xn.grad[r * d + c] += inv[r] * gn.data[c] * dyr[c] - xr[c] * k;
                           }
                         }
                         if (gn.requires_grad) {
                           for (std::size_t c = 0; c < d; ++c) gn.grad[c] += dyr[c] * xr[c] * inv[r];
                         }
                       }
                     });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto& in = x.node()->data;
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < m; ++r) {
    double mx = *std::max_element(in.begin() + r * n, in.begin() + (r + 1) * n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += out[r * n + c] = std::exp(in[r * n + c] - mx);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  std::vector<double> probs = out;
  return make_result("softmax_rows", x.shape(), std::move(out), {x.node()},
                     [m, n, probs = std::move(probs)](Node& self) {
                       Node& a = *self.inputs[0];
                       if (!a.requires_grad) return;
                       for (std::size_t r = 0; r < m; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < n; ++c) dot += self.grad[r * n + c] * probs[r * n + c];
                         for (std::size_t c = 0; c < n; ++c) {
                           a.grad[r * n + c] += probs[r * n + c] * (self.grad[r * n + c] - dot);
                         }
                       }
                     });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  }
  const auto& in = logits.node()->data;
  std::vector<double> probs(in.size(), 0.0);
  std::vector<int> rows(targets.begin(), targets.end());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < n; ++r) {
    int t = rows[r];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(t) + " outside [0, " +
                              std::to_string(v) + ")");
    }
    const double* row = &in[r * v];
    double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t c = 0; c < v; ++c) z += probs[r * v + c] = std::exp(row[c] - mx);
    for (std::size_t c = 0; c < v; ++c) probs[r * v + c] /= z;
    total += (mx + std::log(z)) - row[t];
    ++count;
  }
  if (count == 0) throw std::invalid_argument("softmax_cross_entropy: every target is ignored");
  const double denom = static_cast<double>(count);
  return make_result("softmax_cross_entropy", {1}, {total / denom}, {logits.node()},
                     [v, denom, ignore_index, rows = std::move(rows), probs = std::move(probs)](Node& self) {
                       Node& a = *self.inputs[0];
                       if (!a.requires_grad) return;
                       const double g = self.grad[0] / denom;
                       for (std::size_t r = 0; r < rows.size(); ++r) {
                         if (rows[r] == ignore_index) continue;
                         for (std::size_t c = 0; c < v; ++c) a.grad[r * v + c] += g * probs[r * v + c];
                         a.grad[r * v + static_cast<std::size_t>(rows[r])] -= g;
                       }
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no operands");
  const std::size_t cols = parts.front().rank() == 2 ? parts.front().dim(1) : 0;
  std::size_t rows = 0;
  std::vector<NodePtr> inputs;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()));
    rows += p.dim(0);
    inputs.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result("concat_rows", {rows, cols}, std::move(out), std::move(inputs), [](Node& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      if (in->requires_grad) {
        for (std::size_t i = 0; i < in->data.size(); ++i) in->grad[i] += self.grad[offset + i];
      }
      offset += in->data.size();
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_rows");
  if (begin >= end || end > x.dim(0)) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t cols = x.dim(1);
  std::vector<double> out(x.data().begin() + begin * cols, x.data().begin() + end * cols);
  return make_result("slice_rows", {end - begin, cols}, std::move(out), {x.node()},
                     [offset = begin * cols](Node& self) {
                       Node& a = *self.inputs[0];
                       if (!a.requires_grad) return;
                       for (std::size_t i = 0; i < self.grad.size(); ++i) a.grad[offset + i] += self.grad[i];
                     });
}

Tensor view(const Tensor& x, std::size_t offset, Shape shape) {
  const std::size_t n = shape_numel(shape);
  if (shape.empty() || n == 0 || offset + n > x.numel()) {
    throw ShapeError("view: window " + shape_str(shape) + " at offset " + std::to_string(offset) +
                     " exceeds " + shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin() + offset, x.data().begin() + offset + n);
  return make_result("view", std::move(shape), std::move(out), {x.node()}, [offset](Node& self) {
    Node& a = *self.inputs[0];
    if (!a.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) a.grad[offset + i] += self.grad[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  }
  return view(x, 0, std::move(shape));
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack: no operands");
  Shape shape{parts.size()};
  shape.insert(shape.end(), parts.front().shape().begin(), parts.front().shape().end());
  std::vector<NodePtr> inputs;
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  for (const auto& p : parts) {
    require_same_shape(parts.front(), p, "stack");
    inputs.push_back(p.node());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return make_result("stack", std::move(shape), std::move(out), std::move(inputs), [](Node& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      if (in->requires_grad) {
        for (std::size_t i = 0; i < in->data.size(); ++i) in->grad[i] += self.grad[offset + i];
      }
      offset += in->data.size();
    }
  });
}

Tensor mean_rows(const Tensor& x) {
  require_rank(x, 2, "mean_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(n, 0.0);
  const auto& in = x.node()->data;
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += in[r * n + c];
  for (auto& v : out) v /= static_cast<double>(m);
  return make_result("mean_rows", {1, n}, std::move(out), {x.node()}, [m, n](Node& self) {
    Node& a = *self.inputs[0];
    if (!a.requires_grad) return;
    const double w = 1.0 / static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) a.grad[r * n + c] += w * self.grad[c];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result("sum", {1}, {total}, {x.node()}, [](Node& self) {
    Node& a = *self.inputs[0];
    if (!a.requires_grad) return;
    for (auto& g : a.grad) g += self.grad[0];
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding_lookup");
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<int> rows(ids.begin(), ids.end());
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(rows[i]) + " outside [0, " +
                              std::to_string(vocab) + ")");
    }
    std::copy_n(table.data().begin() + rows[i] * static_cast<std::ptrdiff_t>(d), d, out.begin() + i * d);
  }
  const std::size_t n = rows.size();
  return make_result("embedding_lookup", {n, d}, std::move(out), {table.node()},
                     [d, rows = std::move(rows)](Node& self) {
                       Node& t = *self.inputs[0];
                       if (!t.requires_grad) return;
                       for (std::size_t i = 0; i < rows.size(); ++i) {
                         const std::size_t base = static_cast<std::size_t>(rows[i]) * d;
                         for (std::size_t c = 0; c < d; ++c) t.grad[base + c] += self.grad[i * d + c];
                       }
                     });
}

Tensor causal_self_attention(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                             const Tensor& wo, std::size_t n_heads) {
  require_rank(x, 2, "causal_self_attention");
  const std::size_t t = x.dim(0), d = x.dim(1);
  for (const Tensor* w : {&wq, &wk, &wv, &wo}) {
    require_rank(*w, 2, "causal_self_attention");
    if (w->dim(0) != d || w->dim(1) != d) {
      throw ShapeError("causal_self_attention: projection " + shape_str(w->shape()) + " must be [" +
                       std::to_string(d) + "," + std::to_string(d) + "]");
    }
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("causal_self_attention: " + std::to_string(d) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  const auto T = static_cast<Eigen::Index>(t);
  const auto D = static_cast<Eigen::Index>(d);
  const auto dh = static_cast<Eigen::Index>(d / n_heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  auto X = as_matrix(x.node()->data, t, d);
  Mat q = X * as_matrix(wq.node()->data, d, d);
  Mat k = X * as_matrix(wk.node()->data, d, d);
  Mat v = X * as_matrix(wv.node()->data, d, d);
  Mat o(T, D);
  std::vector<Mat> probs(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h) * dh;
    Mat s = (q.middleCols(c0, dh) * k.middleCols(c0, dh).transpose()) * inv_sqrt;
    for (Eigen::Index i = 0; i < T; ++i) {
      double mx = s.row(i).head(i + 1).maxCoeff();
      double z = 0.0;
      for (Eigen::Index j = 0; j <= i; ++j) z += s(i, j) = std::exp(s(i, j) - mx);
      for (Eigen::Index j = 0; j <= i; ++j) s(i, j) /= z;
      for (Eigen::Index j = i + 1; j < T; ++j) s(i, j) = 0.0;
    }
    o.middleCols(c0, dh).noalias() = s * v.middleCols(c0, dh);
    probs[h] = std::move(s);
  }
  std::vector<double> out(t * d);
  as_matrix(out, t, d).noalias() = o * as_matrix(wo.node()->data, d, d);

  return make_result(
      "causal_self_attention", {t, d}, std::move(out), {x.node(), wq.node(), wk.node(), wv.node(), wo.node()},
      [t, d, dh, inv_sqrt, q = std::move(q), k = std::move(k), v = std::move(v), o = std::move(o),
       probs = std::move(probs)](Node& self) {
        Node& xn = *self.inputs[0];
        Node& qn = *self.inputs[1];
        Node& kn = *self.inputs[2];
        Node& vn = *self.inputs[3];
        Node& on = *self.inputs[4];
        auto G = as_matrix(std::as_const(self.grad), t, d);
        auto X = as_matrix(std::as_const(xn.data), t, d);
        if (on.requires_grad) as_matrix(on.grad, d, d).noalias() += o.transpose() * G;
        Mat d_o = G * as_matrix(std::as_const(on.data), d, d).transpose();
        Mat dq(q.rows(), q.cols()), dk(k.rows(), k.cols()), dv(v.rows(), v.cols());
        for (std::size_t h = 0; h < probs.size(); ++h) {
          const auto c0 = static_cast<Eigen::Index>(h) * dh;
          const Mat& p = probs[h];
          Mat dp = d_o.middleCols(c0, dh) * v.middleCols(c0, dh).transpose();
          dv.middleCols(c0, dh).noalias() = p.transpose() * d_o.middleCols(c0, dh);
          Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
          Mat ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * inv_sqrt;
          dq.middleCols(c0, dh).noalias() = ds * k.middleCols(c0, dh);
          dk.middleCols(c0, dh).noalias() = ds.transpose() * q.middleCols(c0, dh);
        }
        if (qn.requires_grad) as_matrix(qn.grad, d, d).noalias() += X.transpose() * dq;
        if (kn.requires_grad) as_matrix(kn.grad, d, d).noalias() += X.transpose() * dk;
        if (vn.requires_grad) as_matrix(vn.grad, d, d).noalias() += X.transpose() * dv;
        if (xn.requires_grad) {
          auto dx = as_matrix(xn.grad, t, d);
          dx.noalias() += dq * as_matrix(std::as_const(qn.data), d, d).transpose();
          dx.noalias() += dk * as_matrix(std::as_const(kn.data), d, d).transpose();
          dx.noalias() += dv * as_matrix(std::as_const(vn.data), d, d).transpose();
        }
      });
}

}  // namespace hyperadapt
