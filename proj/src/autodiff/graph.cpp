// SPDX-License-Identifier: Apache-2.0
#include "esbm/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "esbm/error.hpp"

namespace esbm::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

[[noreturn]] void shape_fail(Op op, const std::string& detail) {
  throw ShapeError(std::string(op_name(op)) + ": " + detail);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Reduces `grad` (shape of the larger operand) onto a trailing-suffix shape.
Tensor reduce_to(const Tensor& grad, const Shape& target) {
  if (grad.shape() == target) return grad;
  Tensor out(target, 0.0);
  const std::size_t inner = out.size();
  const std::size_t outer = grad.size() / inner;
  const double* g = grad.raw();
  double* o = out.raw();
  for (std::size_t r = 0; r < outer; ++r) {
    for (std::size_t j = 0; j < inner; ++j) o[j] += g[r * inner + j];
  }
  return out;
}

void accumulate(Tensor& into, Tensor&& contribution) {
  if (into.size() == 0 && contribution.size() != 0) {
    into = std::move(contribution);
    return;
  }
  double* a = into.raw();
  const double* b = contribution.raw();
  for (std::size_t i = 0; i < into.size(); ++i) a[i] += b[i];
}

// Splits a shape around an axis into (outer, len, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit out;
  for (std::size_t i = 0; i < axis; ++i) out.outer *= s[i];
  out.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) out.inner *= s[i];
  return out;
}

Tensor permute(const Tensor& in, const std::vector<std::size_t>& perm) {
  const Shape& s = in.shape();
  const std::size_t r = s.size();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[perm[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) stride[i] = in_strides[perm[i]];

  Tensor out(out_shape);
  if (out.size() == 0) return out;
  std::vector<std::size_t> idx(r, 0);
  const double* src = in.raw();
  double* dst = out.raw();
  const std::size_t last = r - 1;
  const std::size_t last_len = out_shape[last];
  const std::size_t last_stride = stride[last];
  std::size_t offset = 0;
  for (std::size_t n = 0; n < out.size(); n += last_len) {
    for (std::size_t j = 0; j < last_len; ++j) dst[n + j] = src[offset + j * last_stride];
    // advance the multi-index over all but the last axis
    for (std::size_t ax = last; ax-- > 0;) {
      ++idx[ax];
      offset += stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      offset -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t node) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (node + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Scale: return "scale";
    case Op::MatMul: return "matmul";
    case Op::BatchMatMul: return "batch_matmul";
    case Op::Transpose: return "transpose";
    case Op::Reshape: return "reshape";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::SumAll: return "sum_all";
    case Op::Broadcast: return "broadcast";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Square: return "square";
    case Op::Softplus: return "softplus";
    case Op::Gelu: return "gelu";
    case Op::Softmax: return "softmax";
    case Op::LayerNorm: return "layer_norm";
    case Op::Dropout: return "dropout";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Construction

void Graph::check(NodeId id) const {
  if (id.index >= nodes_.size()) throw StateError("node id out of range for this graph");
}

NodeId Graph::push(Node node) {
  for (NodeId in : node.inputs) {
    check(in);
    node.requires_grad = node.requires_grad || nodes_[in.index].requires_grad;
  }
  nodes_.push_back(std::move(node));
  constants_.emplace_back();
  evaluated_ = 0;
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::input(std::string name, bool trainable) {
  for (const Node& n : nodes_) {
    if (n.op == Op::Input && n.name == name) throw StateError("duplicate input leaf '" + name + "'");
  }
  Node n(Op::Input);
  n.name = std::move(name);
  n.trainable = trainable;
  n.requires_grad = trainable;
  return push(std::move(n));
}

NodeId Graph::constant(Tensor value) {
  NodeId id = push(Node(Op::Constant));
  constants_[id.index] = std::move(value);
  return id;
}

NodeId Graph::unary(Op op, NodeId a) { return push(Node{op, {a}}); }
NodeId Graph::binary(Op op, NodeId a, NodeId b) { return push(Node{op, {a, b}}); }

NodeId Graph::add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
NodeId Graph::sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
NodeId Graph::mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }
NodeId Graph::div(NodeId a, NodeId b) { return binary(Op::Div, a, b); }

NodeId Graph::scale(NodeId a, double factor) {
  Node n{Op::Scale, {a}};
  n.real = factor;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) { return binary(Op::MatMul, a, b); }

NodeId Graph::batch_matmul(NodeId a, NodeId b, bool transpose_b) {
  Node n{Op::BatchMatMul, {a, b}};
  n.ints = {transpose_b ? 1u : 0u};
  return push(std::move(n));
}

NodeId Graph::transpose(NodeId a, std::vector<std::size_t> perm) {
  Node n{Op::Transpose, {a}};
  n.ints = std::move(perm);
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId a, Shape shape) {
  Node n{Op::Reshape, {a}};
  n.ints = std::move(shape);
  return push(std::move(n));
}

NodeId Graph::concat(const std::vector<NodeId>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Node n{Op::Concat, parts};
  n.ints = {axis};
  return push(std::move(n));
}

NodeId Graph::slice(NodeId a, std::size_t axis, std::size_t begin, std::size_t end) {
  Node n{Op::Slice, {a}};
  n.ints = {axis, begin, end};
  return push(std::move(n));
}

NodeId Graph::sum(NodeId a, std::size_t axis) {
  Node n{Op::Sum, {a}};
  n.ints = {axis};
  return push(std::move(n));
}

NodeId Graph::mean(NodeId a, std::size_t axis) {
  Node n{Op::Mean, {a}};
  n.ints = {axis};
  return push(std::move(n));
}

NodeId Graph::sum_all(NodeId a) { return unary(Op::SumAll, a); }

NodeId Graph::broadcast(NodeId a, Shape leading) {
  Node n{Op::Broadcast, {a}};
  n.ints = std::move(leading);
  return push(std::move(n));
}

NodeId Graph::exp(NodeId a) { return unary(Op::Exp, a); }
NodeId Graph::log(NodeId a) { return unary(Op::Log, a); }
NodeId Graph::sqrt(NodeId a) { return unary(Op::Sqrt, a); }
NodeId Graph::square(NodeId a) { return unary(Op::Square, a); }
NodeId Graph::softplus(NodeId a) { return unary(Op::Softplus, a); }
NodeId Graph::gelu(NodeId a) { return unary(Op::Gelu, a); }

NodeId Graph::softmax(NodeId a, std::size_t axis) {
  Node n{Op::Softmax, {a}};
  n.ints = {axis};
  return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId a, double eps) {
  Node n{Op::LayerNorm, {a}};
  n.real = eps;
  return push(std::move(n));
}

NodeId Graph::dropout(NodeId a, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InputError("dropout rate must lie in [0, 1)");
  Node n{Op::Dropout, {a}};
  n.real = rate;
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Forward

const Tensor& Graph::evaluate(NodeId root, const Bindings& bindings, const EvalOptions& options) {
  check(root);
  values_.assign(root.index + 1, Tensor{});
  aux_.assign(root.index + 1, Tensor{});
  evaluated_ = 0;
  for (std::size_t i = 0; i <= root.index; ++i) {
    forward(i, bindings, options);
    if (options.check_finite && !values_[i].all_finite()) {
      throw NumericError(std::string("non-finite value produced by ") + op_name(nodes_[i].op) +
                         " (node " + std::to_string(i) + ", shape " + to_string(values_[i].shape()) + ")");
    }
  }
  evaluated_ = root.index + 1;
  return values_[root.index];
}

const Tensor& Graph::value(NodeId node) const {
  if (node.index >= evaluated_) throw StateError("node has not been evaluated");
  return values_[node.index];
}

void Graph::forward(std::size_t i, const Bindings& bindings, const EvalOptions& options) {
  const Node& n = nodes_[i];
  Tensor& out = values_[i];
  auto in = [&](std::size_t k) -> const Tensor& { return values_[n.inputs[k].index]; };

  switch (n.op) {
    case Op::Input: {
      auto it = bindings.find(n.name);
      if (it == bindings.end() || it->second == nullptr) {
        throw StateError("no binding for input leaf '" + n.name + "'");
      }
      out = *it->second;
      return;
    }
    case Op::Constant:
      out = constants_[i];
      return;

    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const bool a_big = is_suffix(b.shape(), a.shape());
      if (!a_big && !is_suffix(a.shape(), b.shape())) {
        shape_fail(n.op, "incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
      }
      const Tensor& big = a_big ? a : b;
      out = Tensor(big.shape());
      const std::size_t inner = a_big ? b.size() : a.size();
      const std::size_t total = big.size();
      const double* pa = a.raw();
      const double* pb = b.raw();
      double* po = out.raw();
      // index of the smaller operand is (k % inner)
      for (std::size_t base = 0; base < total; base += inner) {
        const double* xa = a_big ? pa + base : pa;
        const double* xb = a_big ? pb : pb + base;
        double* xo = po + base;
        switch (n.op) {
          case Op::Add: for (std::size_t j = 0; j < inner; ++j) xo[j] = xa[j] + xb[j]; break;
          case Op::Sub: for (std::size_t j = 0; j < inner; ++j) xo[j] = xa[j] - xb[j]; break;
          case Op::Mul: for (std::size_t j = 0; j < inner; ++j) xo[j] = xa[j] * xb[j]; break;
          default: for (std::size_t j = 0; j < inner; ++j) xo[j] = xa[j] / xb[j]; break;
        }
      }
      return;
    }
    case Op::Scale: {
      out = in(0);
      for (double& v : out.data()) v *= n.real;
      return;
    }
    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
        shape_fail(n.op, to_string(a.shape()) + " x " + to_string(b.shape()));
      }
      const std::size_t k = b.dim(0), cols = b.dim(1), rows = a.size() / k;
      Shape s = a.shape();
      s.back() = cols;
      out = Tensor(s);
      MapMat(out.raw(), rows, cols).noalias() = CMapMat(a.raw(), rows, k) * CMapMat(b.raw(), k, cols);
      return;
    }
    case Op::BatchMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const bool tb = n.ints[0] != 0;
      if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
          a.dim(2) != (tb ? b.dim(2) : b.dim(1))) {
        shape_fail(n.op, to_string(a.shape()) + " x " + to_string(b.shape()) + (tb ? " (b transposed)" : ""));
      }
      const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
      const std::size_t cols = tb ? b.dim(1) : b.dim(2);
      out = Tensor(Shape{batch, m, cols});
      for (std::size_t t = 0; t < batch; ++t) {
        CMapMat A(a.raw() + t * m * k, m, k);
        MapMat O(out.raw() + t * m * cols, m, cols);
        if (tb) {
          O.noalias() = A * CMapMat(b.raw() + t * cols * k, cols, k).transpose();
        } else {
          O.noalias() = A * CMapMat(b.raw() + t * k * cols, k, cols);
        }
      }
      return;
    }
    case Op::Transpose: {
      const Tensor& a = in(0);
      std::vector<std::size_t> seen(a.rank(), 0);
      if (n.ints.size() != a.rank()) shape_fail(n.op, "permutation rank mismatch for " + to_string(a.shape()));
      for (std::size_t p : n.ints) {
        if (p >= a.rank() || seen[p]++) shape_fail(n.op, "invalid permutation for " + to_string(a.shape()));
      }
      out = permute(a, n.ints);
      return;
    }
    case Op::Reshape: {
      const Tensor& a = in(0);
      Shape s = n.ints;
      std::size_t known = 1, wild = s.size();
      for (std::size_t k = 0; k < s.size(); ++k) {
        if (s[k] == 0) {
          wild = k;
        } else {
          known *= s[k];
        }
      }
      if (wild < s.size() && known > 0 && a.size() % known == 0) s[wild] = a.size() / known;
      if (numel(s) != a.size()) {
        shape_fail(n.op, "cannot reshape " + to_string(a.shape()) + " to " + to_string(n.ints));
      }
      out = a;
      out.reshape(std::move(s));
      return;
    }
    case Op::Concat: {
      const std::size_t axis = n.ints[0];
      const Shape& first = in(0).shape();
      if (axis >= first.size()) shape_fail(n.op, "axis out of range for " + to_string(first));
      Shape s = first;
      s[axis] = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Shape& sk = in(k).shape();
        bool ok = sk.size() == first.size();
        for (std::size_t d = 0; ok && d < sk.size(); ++d) ok = d == axis || sk[d] == first[d];
        if (!ok) shape_fail(n.op, "part " + to_string(sk) + " incompatible with " + to_string(first));
        s[axis] += sk[axis];
      }
      out = Tensor(s);
      const AxisSplit sp = split_axis(s, axis);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& part = in(k);
        const std::size_t chunk = part.dim(axis) * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o) {
          std::copy_n(part.raw() + o * chunk, chunk, out.raw() + o * sp.len * sp.inner + offset);
        }
        offset += chunk;
      }
      return;
    }
    case Op::Slice: {
      const Tensor& a = in(0);
      const std::size_t axis = n.ints[0], begin = n.ints[1], end = n.ints[2];
      if (axis >= a.rank() || begin >= end || end > a.dim(axis)) {
        shape_fail(n.op, "range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                             std::to_string(axis) + " of " + to_string(a.shape()));
      }
      Shape s = a.shape();
      s[axis] = end - begin;
      out = Tensor(s);
      const AxisSplit sp = split_axis(a.shape(), axis);
      const std::size_t chunk = (end - begin) * sp.inner;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(a.raw() + o * sp.len * sp.inner + begin * sp.inner, chunk, out.raw() + o * chunk);
      }
      return;
    }
    case Op::Sum:
    case Op::Mean: {
      const Tensor& a = in(0);
      const std::size_t axis = n.ints[0];
      if (axis >= a.rank()) shape_fail(n.op, "axis out of range for " + to_string(a.shape()));
      Shape s = a.shape();
      s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
      out = Tensor(s, 0.0);
      const AxisSplit sp = split_axis(a.shape(), axis);
      const double f = n.op == Op::Mean ? 1.0 / static_cast<double>(sp.len) : 1.0;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t l = 0; l < sp.len; ++l) {
          const double* src = a.raw() + (o * sp.len + l) * sp.inner;
          double* dst = out.raw() + o * sp.inner;
          for (std::size_t j = 0; j < sp.inner; ++j) dst[j] += src[j];
        }
      }
      if (f != 1.0) {
        for (double& v : out.data()) v *= f;
      }
      return;
    }
    case Op::SumAll: {
      double acc = 0.0;
      for (double v : in(0).data()) acc += v;
      out = Tensor::scalar(acc);
      return;
    }
    case Op::Broadcast: {
      const Tensor& a = in(0);
      Shape s = n.ints;
      s.insert(s.end(), a.shape().begin(), a.shape().end());
      out = Tensor(s);
      const std::size_t reps = numel(n.ints);
      for (std::size_t r = 0; r < reps; ++r) std::copy_n(a.raw(), a.size(), out.raw() + r * a.size());
      return;
    }
    case Op::Exp:
    case Op::Log:
    case Op::Sqrt:
    case Op::Square:
    case Op::Softplus:
    case Op::Gelu: {
      out = in(0);
      double* p = out.raw();
      const std::size_t sz = out.size();
      switch (n.op) {
        case Op::Exp: for (std::size_t j = 0; j < sz; ++j) p[j] = std::exp(p[j]); break;
        case Op::Log: for (std::size_t j = 0; j < sz; ++j) p[j] = std::log(p[j]); break;
        case Op::Sqrt: for (std::size_t j = 0; j < sz; ++j) p[j] = std::sqrt(p[j]); break;
        case Op::Square: for (std::size_t j = 0; j < sz; ++j) p[j] = p[j] * p[j]; break;
        case Op::Softplus: for (std::size_t j = 0; j < sz; ++j) p[j] = softplus_value(p[j]); break;
        default:
          for (std::size_t j = 0; j < sz; ++j) p[j] = 0.5 * p[j] * (1.0 + std::erf(p[j] * kInvSqrt2));
          break;
      }
      return;
    }
    case Op::Softmax: {
      const Tensor& a = in(0);
      const std::size_t axis = n.ints[0];
      if (axis >= a.rank()) shape_fail(n.op, "axis out of range for " + to_string(a.shape()));
      out = Tensor(a.shape());
      const AxisSplit sp = split_axis(a.shape(), axis);
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t j = 0; j < sp.inner; ++j) {
          const double* src = a.raw() + o * sp.len * sp.inner + j;
          double* dst = out.raw() + o * sp.len * sp.inner + j;
          double mx = src[0];
          for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, src[l * sp.inner]);
          double z = 0.0;
          for (std::size_t l = 0; l < sp.len; ++l) {
            dst[l * sp.inner] = std::exp(src[l * sp.inner] - mx);
            z += dst[l * sp.inner];
          }
          const double inv = 1.0 / z;
          for (std::size_t l = 0; l < sp.len; ++l) dst[l * sp.inner] *= inv;
        }
      }
      return;
    }
    case Op::LayerNorm: {
      const Tensor& a = in(0);
      if (a.rank() == 0) shape_fail(n.op, "needs rank >= 1");
      const std::size_t width = a.shape().back();
      const std::size_t rows = a.size() / width;
      out = Tensor(a.shape());
      Tensor inv_std(Shape{rows});
      for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.raw() + r * width;
        double* y = out.raw() + r * width;
        double mu = 0.0;
        for (std::size_t j = 0; j < width; ++j) mu += x[j];
        mu /= static_cast<double>(width);
        double var = 0.0;
        for (std::size_t j = 0; j < width; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(width);
        const double inv = 1.0 / std::sqrt(var + n.real);
        inv_std[r] = inv;
        for (std::size_t j = 0; j < width; ++j) y[j] = (x[j] - mu) * inv;
      }
      aux_[i] = std::move(inv_std);
      return;
    }
    case Op::Dropout: {
      out = in(0);
      if (!options.training || n.real == 0.0) return;
      Tensor mask(out.shape());
      std::mt19937_64 rng(mix_seed(options.dropout_seed, i));
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double keep = 1.0 / (1.0 - n.real);
      for (std::size_t j = 0; j < out.size(); ++j) {
        mask[j] = u(rng) < n.real ? 0.0 : keep;
        out[j] *= mask[j];
      }
      aux_[i] = std::move(mask);
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Backward

Gradients Graph::gradients(NodeId loss) const {
  check(loss);
  if (loss.index >= evaluated_) throw StateError("gradients() called before evaluate()");
  if (values_[loss.index].size() != 1) {
    throw ShapeError("gradients(): loss must be scalar, got shape " + to_string(values_[loss.index].shape()));
  }
  std::vector<Tensor> grads(loss.index + 1);
  grads[loss.index] = Tensor(values_[loss.index].shape(), 1.0);

  Gradients result;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || grads[i].size() == 0) continue;
    if (n.op == Op::Input) {
      if (n.trainable) result.emplace(n.name, std::move(grads[i]));
      continue;
    }
    backward(i, grads[i], grads);
    grads[i] = Tensor{};
  }
  // trainable leaves not reached by the loss still get a zero gradient
  for (std::size_t i = 0; i <= loss.index; ++i) {
    const Node& n = nodes_[i];
    if (n.op == Op::Input && n.trainable && !result.contains(n.name)) {
      result.emplace(n.name, Tensor(values_[i].shape(), 0.0));
    }
  }
  return result;
}

void Graph::backward(std::size_t i, const Tensor& g, std::vector<Tensor>& grads) const {
  const Node& n = nodes_[i];
  auto in = [&](std::size_t k) -> const Tensor& { return values_[n.inputs[k].index]; };
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k].index].requires_grad; };
  auto give = [&](std::size_t k, Tensor&& t) { accumulate(grads[n.inputs[k].index], std::move(t)); };
  const Tensor& y = values_[i];

  switch (n.op) {
    case Op::Input:
    case Op::Constant:
      return;

    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const bool a_big = a.shape() == y.shape();
      const std::size_t inner = a_big ? b.size() : a.size();
      const std::size_t total = y.size();
      auto at_a = [&](std::size_t k) { return a_big ? a[k] : a[k % inner]; };
      auto at_b = [&](std::size_t k) { return a_big ? b[k % inner] : b[k]; };
      if (wants(0)) {
        Tensor ga(y.shape());
        for (std::size_t k = 0; k < total; ++k) {
          switch (n.op) {
            case Op::Add:
            case Op::Sub: ga[k] = g[k]; break;
            case Op::Mul: ga[k] = g[k] * at_b(k); break;
            default: ga[k] = g[k] / at_b(k); break;
          }
        }
        give(0, reduce_to(ga, a.shape()));
      }
      if (wants(1)) {
        Tensor gb(y.shape());
        for (std::size_t k = 0; k < total; ++k) {
          switch (n.op) {
            case Op::Add: gb[k] = g[k]; break;
            case Op::Sub: gb[k] = -g[k]; break;
            case Op::Mul: gb[k] = g[k] * at_a(k); break;
            default: {
              const double bv = at_b(k);
              gb[k] = -g[k] * at_a(k) / (bv * bv);
              break;
            }
          }
        }
        give(1, reduce_to(gb, b.shape()));
      }
      return;
    }
    case Op::Scale: {
      Tensor ga = g;
      for (double& v : ga.data()) v *= n.real;
      give(0, std::move(ga));
      return;
    }
    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t k = b.dim(0), cols = b.dim(1), rows = a.size() / k;
      CMapMat G(g.raw(), rows, cols);
      if (wants(0)) {
        Tensor ga(a.shape());
        MapMat(ga.raw(), rows, k).noalias() = G * CMapMat(b.raw(), k, cols).transpose();
        give(0, std::move(ga));
      }
      if (wants(1)) {
        Tensor gb(b.shape());
        MapMat(gb.raw(), k, cols).noalias() = CMapMat(a.raw(), rows, k).transpose() * G;
        give(1, std::move(gb));
      }
      return;
    }
    case Op::BatchMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const bool tb = n.ints[0] != 0;
      const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
      const std::size_t cols = tb ? b.dim(1) : b.dim(2);
      Tensor ga, gb;
      if (wants(0)) ga = Tensor(a.shape());
      if (wants(1)) gb = Tensor(b.shape());
      for (std::size_t t = 0; t < batch; ++t) {
        CMapMat G(g.raw() + t * m * cols, m, cols);
        CMapMat A(a.raw() + t * m * k, m, k);
        if (tb) {
          CMapMat B(b.raw() + t * cols * k, cols, k);  // out = A B^T
          if (ga.size()) MapMat(ga.raw() + t * m * k, m, k).noalias() = G * B;
          if (gb.size()) MapMat(gb.raw() + t * cols * k, cols, k).noalias() = G.transpose() * A;
        } else {
          CMapMat B(b.raw() + t * k * cols, k, cols);
          if (ga.size()) MapMat(ga.raw() + t * m * k, m, k).noalias() = G * B.transpose();
          if (gb.size()) MapMat(gb.raw() + t * k * cols, k, cols).noalias() = A.transpose() * G;
        }
      }
      if (ga.size()) give(0, std::move(ga));
      if (gb.size()) give(1, std::move(gb));
      return;
    }
    case Op::Transpose: {
      std::vector<std::size_t> inverse(n.ints.size());
      for (std::size_t d = 0; d < n.ints.size(); ++d) inverse[n.ints[d]] = d;
      give(0, permute(g, inverse));
      return;
    }
    case Op::Reshape: {
      Tensor ga = g;
      ga.reshape(in(0).shape());
      give(0, std::move(ga));
      return;
    }
    case Op::Concat: {
      const std::size_t axis = n.ints[0];
      const AxisSplit sp = split_axis(y.shape(), axis);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& part = in(k);
        const std::size_t chunk = part.dim(axis) * sp.inner;
        if (wants(k)) {
          Tensor gp(part.shape());
          for (std::size_t o = 0; o < sp.outer; ++o) {
            std::copy_n(g.raw() + o * sp.len * sp.inner + offset, chunk, gp.raw() + o * chunk);
          }
          give(k, std::move(gp));
        }
        offset += chunk;
      }
      return;
    }
    case Op::Slice: {
      const Tensor& a = in(0);
      const std::size_t axis = n.ints[0], begin = n.ints[1], end = n.ints[2];
      Tensor ga(a.shape(), 0.0);
      const AxisSplit sp = split_axis(a.shape(), axis);
      const std::size_t chunk = (end - begin) * sp.inner;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(g.raw() + o * chunk, chunk, ga.raw() + o * sp.len * sp.inner + begin * sp.inner);
      }
      give(0, std::move(ga));
      return;
    }
    case Op::Sum:
    case Op::Mean: {
      const Tensor& a = in(0);
      const AxisSplit sp = split_axis(a.shape(), n.ints[0]);
      const double f = n.op == Op::Mean ? 1.0 / static_cast<double>(sp.len) : 1.0;
      Tensor ga(a.shape());
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t l = 0; l < sp.len; ++l) {
          double* dst = ga.raw() + (o * sp.len + l) * sp.inner;
          const double* src = g.raw() + o * sp.inner;
          for (std::size_t j = 0; j < sp.inner; ++j) dst[j] = f * src[j];
        }
      }
      give(0, std::move(ga));
      return;
    }
    case Op::SumAll: {
      give(0, Tensor(in(0).shape(), g.item()));
      return;
    }
    case Op::Broadcast: {
      give(0, reduce_to(g, in(0).shape()));
      return;
    }
    case Op::Exp:
    case Op::Log:
    case Op::Sqrt:
    case Op::Square:
    case Op::Softplus:
    case Op::Gelu: {
      const Tensor& a = in(0);
      Tensor ga(a.shape());
      const std::size_t sz = a.size();
      for (std::size_t j = 0; j < sz; ++j) {
        const double x = a[j];
        double d = 0.0;
        switch (n.op) {
          case Op::Exp: d = y[j]; break;
          case Op::Log: d = 1.0 / x; break;
          case Op::Sqrt: d = 0.5 / y[j]; break;
          case Op::Square: d = 2.0 * x; break;
          case Op::Softplus: d = sigmoid(x); break;
          default: d = 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); break;
        }
        ga[j] = g[j] * d;
      }
      give(0, std::move(ga));
      return;
    }
    case Op::Softmax: {
      const AxisSplit sp = split_axis(y.shape(), n.ints[0]);
      Tensor ga(y.shape());
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t j = 0; j < sp.inner; ++j) {
          const std::size_t base = o * sp.len * sp.inner + j;
          double dot = 0.0;
          for (std::size_t l = 0; l < sp.len; ++l) dot += g[base + l * sp.inner] * y[base + l * sp.inner];
          for (std::size_t l = 0; l < sp.len; ++l) {
            const std::size_t k = base + l * sp.inner;
            ga[k] = y[k] * (g[k] - dot);
          }
        }
      }
      give(0, std::move(ga));
      return;
    }
    case Op::LayerNorm: {
      const std::size_t width = y.shape().back();
      const std::size_t rows = y.size() / width;
      const Tensor& inv_std = aux_[i];
      Tensor ga(y.shape());
      const double w = static_cast<double>(width);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gy = g.raw() + r * width;
        const double* yy = y.raw() + r * width;
        double sg = 0.0, sgy = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
          sg += gy[j];
          sgy += gy[j] * yy[j];
        }
        double* gx = ga.raw() + r * width;
        const double inv = inv_std[r];
        for (std::size_t j = 0; j < width; ++j) gx[j] = inv * (gy[j] - sg / w - yy[j] * sgy / w);
      }
      give(0, std::move(ga));
      return;
    }
    case Op::Dropout: {
      Tensor ga = g;
      const Tensor& mask = aux_[i];
      if (mask.size() == ga.size()) {
        for (std::size_t j = 0; j < ga.size(); ++j) ga[j] *= mask[j];
      }
      give(0, std::move(ga));
      return;
    }
  }
}

}  // namespace esbm::ad
