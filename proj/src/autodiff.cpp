#include "mpser/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "mpser/errors.hpp"

namespace mpser::ad {

namespace {

using ShapeVec = std::vector<std::size_t>;

std::shared_ptr<Node> make(Op op, Tensor value, std::vector<NodePtr> inputs) {
  return std::make_shared<Node>(op, std::move(value), std::move(inputs));
}

void check_same_or_scalar(const Tensor& a, const Tensor& b, const char* what) {
  if (a.same_shape(b) || a.is_scalar() || b.is_scalar()) return;
  throw ShapeError(std::string(what) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

// Elementwise combine with single-element broadcast on either side.
template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  if (a.same_shape(b)) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  if (a.is_scalar()) {
    Tensor out(b.shape());
    const double av = a[0];
    for (std::size_t i = 0; i < b.numel(); ++i) out[i] = f(av, b[i]);
    return out;
  }
  Tensor out(a.shape());
  const double bv = b[0];
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], bv);
  return out;
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

void check_axis(const Tensor& a, std::size_t axis, const char* what) {
  if (axis >= a.rank()) {
    throw ShapeError(std::string(what) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(a.shape()));
  }
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_at(const ShapeVec& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

NodePtr leaf(Tensor v) { return make(Op::kLeaf, std::move(v), {}); }

NodePtr constant(Tensor v) { return make(Op::kConst, std::move(v), {}); }

NodePtr constant(double v) { return make(Op::kConst, Tensor::scalar(v), {}); }

NodePtr stop_gradient(const NodePtr& a) { return make(Op::kStopGrad, a->value(), {a}); }

NodePtr add(const NodePtr& a, const NodePtr& b) {
  check_same_or_scalar(a->value(), b->value(), "add");
  return make(Op::kAdd, zip(a->value(), b->value(), [](double x, double y) { return x + y; }),
              {a, b});
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
  check_same_or_scalar(a->value(), b->value(), "sub");
  return make(Op::kSub, zip(a->value(), b->value(), [](double x, double y) { return x - y; }),
              {a, b});
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
  check_same_or_scalar(a->value(), b->value(), "mul");
  return make(Op::kMul, zip(a->value(), b->value(), [](double x, double y) { return x * y; }),
              {a, b});
}

NodePtr div(const NodePtr& a, const NodePtr& b) {
  check_same_or_scalar(a->value(), b->value(), "div");
  return make(Op::kDiv, zip(a->value(), b->value(), [](double x, double y) { return x / y; }),
              {a, b});
}

NodePtr neg(const NodePtr& a) {
  return make(Op::kNeg, map(a->value(), [](double x) { return -x; }), {a});
}

NodePtr scale(const NodePtr& a, double c) {
  auto n = make(Op::kScale, map(a->value(), [c](double x) { return c * x; }), {a});
  n->scale = c;
  return n;
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  const Tensor& av = a->value();
  const Tensor& bv = b->value();
  if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data().data() + p * n;
      double* orow = out.data().data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return make(Op::kMatMul, std::move(out), {a, b});
}

NodePtr transpose(const NodePtr& a) {
  const Tensor& av = a->value();
  if (av.rank() != 2) {
    throw ShapeError("transpose expects rank 2, got " + shape_str(av.shape()));
  }
  const std::size_t r = av.extent(0), c = av.extent(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return make(Op::kTranspose, std::move(out), {a});
}

NodePtr exp(const NodePtr& a) {
  return make(Op::kExp, map(a->value(), [](double x) { return std::exp(x); }), {a});
}

NodePtr log(const NodePtr& a) {
  return make(Op::kLog, map(a->value(), [](double x) { return std::log(x); }), {a});
}

NodePtr relu(const NodePtr& a) {
  return make(Op::kRelu, map(a->value(), [](double x) { return x > 0.0 ? x : 0.0; }), {a});
}

NodePtr sum(const NodePtr& a) {
  double acc = 0.0;
  for (double x : a->value().data()) acc += x;
  return make(Op::kSum, Tensor::scalar(acc), {a});
}

NodePtr sum_axis(const NodePtr& a, std::size_t axis) {
  const Tensor& av = a->value();
  check_axis(av, axis, "sum_axis");
  ShapeVec out_shape = av.shape();
  out_shape[axis] = 1;
  Tensor out(out_shape);
  const AxisSplit s = split_at(av.shape(), axis);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.n; ++k) {
      const double* src = av.data().data() + (o * s.n + k) * s.inner;
      double* dst = out.data().data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  auto n = make(Op::kSumAxis, std::move(out), {a});
  n->axis = axis;
  return n;
}

NodePtr broadcast_axis(const NodePtr& a, std::size_t axis, std::size_t extent) {
  const Tensor& av = a->value();
  check_axis(av, axis, "broadcast_axis");
  if (av.extent(axis) != 1) {
    throw ShapeError("broadcast_axis needs extent 1 along axis " + std::to_string(axis) +
                     ", got " + shape_str(av.shape()));
  }
  ShapeVec out_shape = av.shape();
  out_shape[axis] = extent;
  Tensor out(out_shape);
  const AxisSplit s = split_at(out_shape, axis);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = av.data().data() + o * s.inner;
    for (std::size_t k = 0; k < extent; ++k) {
      double* dst = out.data().data() + (o * extent + k) * s.inner;
      std::copy(src, src + s.inner, dst);
    }
  }
  auto n = make(Op::kBroadcastAxis, std::move(out), {a});
  n->axis = axis;
  n->extent = extent;
  return n;
}

NodePtr reshape(const NodePtr& a, std::vector<std::size_t> shape) {
  if (Tensor::shape_numel(shape) != a->value().numel()) {
    throw ShapeError("reshape from " + shape_str(a->value().shape()) + " to " + shape_str(shape) +
                     " changes element count");
  }
  return make(Op::kReshape, Tensor(std::move(shape), a->value().data()), {a});
}

NodePtr stack_rows(const std::vector<NodePtr>& rows) {
  if (rows.empty()) throw ContractError("stack_rows: empty row list");
  const std::size_t n = rows[0]->value().numel();
  for (const NodePtr& r : rows) {
    const Tensor& rv = r->value();
    if (rv.rank() != 2 || rv.extent(0) != 1 || rv.extent(1) != n) {
      throw ShapeError("stack_rows expects [1, " + std::to_string(n) + "] rows, got " +
                       shape_str(rv.shape()));
    }
  }
  Tensor out({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i]->value().data().begin(), rows[i]->value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return make(Op::kStackRows, std::move(out), rows);
}

NodePtr slice_row(const NodePtr& a, std::size_t row) {
  const Tensor& av = a->value();
  if (av.rank() != 2 || row >= av.extent(0)) {
    throw ShapeError("slice_row " + std::to_string(row) + " invalid for " +
                     shape_str(av.shape()));
  }
  const std::size_t c = av.extent(1);
  Tensor out({1, c});
  std::copy(av.data().begin() + static_cast<std::ptrdiff_t>(row * c),
            av.data().begin() + static_cast<std::ptrdiff_t>((row + 1) * c), out.data().begin());
  auto n = make(Op::kSliceRow, std::move(out), {a});
  n->index = row;
  return n;
}

NodePtr row_scatter(const NodePtr& row, std::size_t rows, std::size_t index) {
  const Tensor& rv = row->value();
  if (rv.rank() != 2 || rv.extent(0) != 1 || index >= rows) {
    throw ShapeError("row_scatter of " + shape_str(rv.shape()) + " at row " +
                     std::to_string(index) + " of " + std::to_string(rows));
  }
  const std::size_t c = rv.extent(1);
  Tensor out({rows, c});
  std::copy(rv.data().begin(), rv.data().end(),
            out.data().begin() + static_cast<std::ptrdiff_t>(index * c));
  auto n = make(Op::kRowScatter, std::move(out), {row});
  n->index = index;
  n->rows = rows;
  return n;
}

NodePtr slice_elem(const NodePtr& a, std::size_t flat_index) {
  if (flat_index >= a->value().numel()) {
    throw ShapeError("slice_elem " + std::to_string(flat_index) + " out of range for " +
                     shape_str(a->value().shape()));
  }
  auto n = make(Op::kSliceElem, Tensor::scalar(a->value()[flat_index]), {a});
  n->index = flat_index;
  return n;
}

NodePtr scatter_elem(const NodePtr& s, std::vector<std::size_t> shape, std::size_t flat_index) {
  if (!s->value().is_scalar()) {
    throw ShapeError("scatter_elem expects a scalar, got " + shape_str(s->value().shape()));
  }
  Tensor out(std::move(shape));
  if (flat_index >= out.numel()) {
    throw ShapeError("scatter_elem index " + std::to_string(flat_index) + " out of range for " +
                     shape_str(out.shape()));
  }
  out[flat_index] = s->value()[0];
  auto n = make(Op::kScatterElem, std::move(out), {s});
  n->index = flat_index;
  return n;
}

NodePtr mean_axis(const NodePtr& a, std::size_t axis) {
  check_axis(a->value(), axis, "mean_axis");
  const std::size_t n = a->value().extent(axis);
  return scale(sum_axis(a, axis), 1.0 / static_cast<double>(n));
}

namespace {

// Per-slice max along `axis`, kept as a constant: softmax(x - m) is
// independent of m, so derivatives are unaffected while exp() stays bounded.
NodePtr max_shift(const NodePtr& a, std::size_t axis) {
  const Tensor& av = a->value();
  ShapeVec out_shape = av.shape();
  out_shape[axis] = 1;
  Tensor m(out_shape);
  const AxisSplit s = split_at(av.shape(), axis);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double best = av[(o * s.n) * s.inner + i];
      for (std::size_t k = 1; k < s.n; ++k) {
        best = std::max(best, av[(o * s.n + k) * s.inner + i]);
      }
      m[o * s.inner + i] = best;
    }
  }
  return constant(std::move(m));
}

}  // namespace

NodePtr softmax(const NodePtr& a, std::size_t axis) {
  check_axis(a->value(), axis, "softmax");
  const std::size_t n = a->value().extent(axis);
  NodePtr z = sub(a, broadcast_axis(max_shift(a, axis), axis, n));
  NodePtr e = exp(z);
  NodePtr s = sum_axis(e, axis);
  return div(e, broadcast_axis(s, axis, n));
}

NodePtr log_softmax(const NodePtr& a, std::size_t axis) {
  check_axis(a->value(), axis, "log_softmax");
  const std::size_t n = a->value().extent(axis);
  NodePtr z = sub(a, broadcast_axis(max_shift(a, axis), axis, n));
  NodePtr s = sum_axis(exp(z), axis);
  return sub(z, broadcast_axis(log(s), axis, n));
}

Tensor forward(const NodePtr& expr) { return expr->value(); }

namespace {

// Reduces an adjoint to the shape of a broadcast operand.
NodePtr reduce_to(const NodePtr& g, const ShapeVec& shape) {
  if (g->value().shape() == shape) return g;
  return reshape(sum(g), shape);
}

void accumulate(std::unordered_map<const Node*, NodePtr>& adj, const NodePtr& input,
                const NodePtr& contribution) {
  if (!input->differentiable()) return;
  auto it = adj.find(input.get());
  if (it == adj.end()) {
    adj.emplace(input.get(), contribution);
  } else {
    it->second = add(it->second, contribution);
  }
}

std::vector<NodePtr> topo_order(const NodePtr& root) {
  struct Frame {
    NodePtr node;
    std::size_t next;
  };
  std::vector<NodePtr> order;
  std::unordered_set<const Node*> visited;
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next < top.node->inputs().size()) {
      NodePtr child = top.node->inputs()[top.next++];
      if (visited.insert(child.get()).second) {
        stack.push_back({std::move(child), 0});
      }
      continue;
    }
    order.push_back(top.node);
    stack.pop_back();
  }
  return order;
}

}  // namespace

std::vector<NodePtr> gradient(const NodePtr& expr, const std::vector<NodePtr>& wrt) {
  if (!expr) throw ContractError("gradient: null expression");
  if (expr->value().numel() != 1) {
    throw ContractError("gradient() needs a scalar objective, got shape " +
                        shape_str(expr->value().shape()));
  }

  const std::vector<NodePtr> order = topo_order(expr);
  std::unordered_map<const Node*, NodePtr> adj;
  adj.emplace(expr.get(), constant(Tensor::full(expr->value().shape(), 1.0)));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const NodePtr& n = *it;
    auto found = adj.find(n.get());
    if (found == adj.end()) continue;
    if (!n->differentiable()) continue;
    const NodePtr g = found->second;
    const auto& in = n->inputs();
    switch (n->op()) {
      case Op::kLeaf:
      case Op::kConst:
      case Op::kStopGrad:
        break;
      case Op::kAdd:
        accumulate(adj, in[0], reduce_to(g, in[0]->value().shape()));
        accumulate(adj, in[1], reduce_to(g, in[1]->value().shape()));
        break;
      case Op::kSub:
        accumulate(adj, in[0], reduce_to(g, in[0]->value().shape()));
        accumulate(adj, in[1], reduce_to(neg(g), in[1]->value().shape()));
        break;
      case Op::kMul:
        accumulate(adj, in[0], reduce_to(mul(g, in[1]), in[0]->value().shape()));
        accumulate(adj, in[1], reduce_to(mul(g, in[0]), in[1]->value().shape()));
        break;
      case Op::kDiv:
        accumulate(adj, in[0], reduce_to(div(g, in[1]), in[0]->value().shape()));
        accumulate(adj, in[1],
                   reduce_to(neg(div(mul(g, in[0]), mul(in[1], in[1]))),
                             in[1]->value().shape()));
        break;
      case Op::kNeg:
        accumulate(adj, in[0], neg(g));
        break;
      case Op::kScale:
        accumulate(adj, in[0], scale(g, n->scale));
        break;
      case Op::kMatMul:
        accumulate(adj, in[0], matmul(g, transpose(in[1])));
        accumulate(adj, in[1], matmul(transpose(in[0]), g));
        break;
      case Op::kTranspose:
        accumulate(adj, in[0], transpose(g));
        break;
      case Op::kExp:
        accumulate(adj, in[0], mul(g, n));
        break;
      case Op::kLog:
        accumulate(adj, in[0], div(g, in[0]));
        break;
      case Op::kRelu: {
        // d/dx relu is piecewise constant; the mask enters as data, so
        // second-order terms through it are (correctly) zero.
        Tensor mask(in[0]->value().shape());
        for (std::size_t i = 0; i < mask.numel(); ++i) {
          mask[i] = in[0]->value()[i] > 0.0 ? 1.0 : 0.0;
        }
        accumulate(adj, in[0], mul(g, constant(std::move(mask))));
        break;
      }
      case Op::kSum:
        accumulate(adj, in[0], mul(constant(Tensor::full(in[0]->value().shape(), 1.0)), g));
        break;
      case Op::kSumAxis:
        accumulate(adj, in[0], broadcast_axis(g, n->axis, in[0]->value().extent(n->axis)));
        break;
      case Op::kBroadcastAxis:
        accumulate(adj, in[0], sum_axis(g, n->axis));
        break;
      case Op::kReshape:
        accumulate(adj, in[0], reshape(g, in[0]->value().shape()));
        break;
      case Op::kStackRows:
        for (std::size_t i = 0; i < in.size(); ++i) {
          accumulate(adj, in[i], slice_row(g, i));
        }
        break;
      case Op::kSliceRow:
        accumulate(adj, in[0], row_scatter(g, in[0]->value().extent(0), n->index));
        break;
      case Op::kRowScatter:
        accumulate(adj, in[0], slice_row(g, n->index));
        break;
      case Op::kSliceElem:
        accumulate(adj, in[0], scatter_elem(g, in[0]->value().shape(), n->index));
        break;
      case Op::kScatterElem:
        accumulate(adj, in[0], reduce_to(slice_elem(g, n->index), in[0]->value().shape()));
        break;
    }
  }

  std::vector<NodePtr> grads;
  grads.reserve(wrt.size());
  for (const NodePtr& w : wrt) {
    auto it = adj.find(w.get());
    if (it != adj.end()) {
      grads.push_back(reduce_to(it->second, w->value().shape()));
    } else {
      grads.push_back(constant(Tensor::zeros(w->value().shape())));
    }
  }
  return grads;
}

}  // namespace mpser::ad
