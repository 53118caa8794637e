#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "mpser/tensor.hpp"

namespace mpser::ad {

enum class Op : std::uint8_t {
  kLeaf,
  kConst,
  kStopGrad,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kScale,          // multiply by a compile-time double
  kMatMul,         // 2-D only
  kTranspose,      // 2-D only
  kExp,
  kLog,
  kRelu,
  kSum,            // full reduction to scalar
  kSumAxis,        // reduction along one axis, extent kept as 1
  kBroadcastAxis,  // repeat a size-1 axis to a given extent
  kReshape,
  kStackRows,      // stack [1,N] rows into [B,N]
  kSliceRow,       // take row i of [R,N] as [1,N]
  kRowScatter,     // place a [1,N] row into an otherwise-zero [R,N]
  kSliceElem,      // take one element as a scalar
  kScatterElem,    // place a scalar into an otherwise-zero tensor
};

class Node;
using NodePtr = std::shared_ptr<const Node>;

/// One vertex of the expression DAG.
///
/// Evaluation is eager: every builder computes the node's value immediately,
/// so value() is always available and forward() is a lookup. The reverse pass
/// (gradient()) is source-to-source — it emits new nodes built from the same
/// primitive set, which is what makes gradients differentiable again and
/// second-order meta-gradients possible.
class Node {
 public:
  Node(Op op, Tensor value, std::vector<NodePtr> inputs)
      : op_(op), value_(std::move(value)), inputs_(std::move(inputs)) {}

  Op op() const { return op_; }
  const Tensor& value() const { return value_; }
  const std::vector<NodePtr>& inputs() const { return inputs_; }

  /// False for stop-gradient and constant nodes: the reverse pass treats them
  /// as opaque values and contributes zero gradient to their inputs.
  bool differentiable() const { return op_ != Op::kStopGrad && op_ != Op::kConst; }

  // Op-specific attributes; which ones are meaningful depends on op().
  double scale = 0.0;        // kScale
  std::size_t axis = 0;      // kSumAxis, kBroadcastAxis
  std::size_t extent = 0;    // kBroadcastAxis
  std::size_t index = 0;     // kSliceRow, kRowScatter, kSliceElem, kScatterElem
  std::size_t rows = 0;      // kRowScatter

 private:
  Op op_;
  Tensor value_;
  std::vector<NodePtr> inputs_;
};

// ---- graph construction -----------------------------------------------

NodePtr leaf(Tensor v);
NodePtr constant(Tensor v);
NodePtr constant(double v);

/// Identity forward value; treated as a constant by the reverse pass. This is
/// the primitive that realizes first-order (derivative-annealed) MAML steps.
NodePtr stop_gradient(const NodePtr& a);

// Elementwise binary ops accept equal shapes, or one single-element operand
// which broadcasts against the other.
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr div(const NodePtr& a, const NodePtr& b);
NodePtr neg(const NodePtr& a);
NodePtr scale(const NodePtr& a, double c);

NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr transpose(const NodePtr& a);

NodePtr exp(const NodePtr& a);
NodePtr log(const NodePtr& a);
NodePtr relu(const NodePtr& a);  // subgradient at 0 is 0

NodePtr sum(const NodePtr& a);
NodePtr sum_axis(const NodePtr& a, std::size_t axis);
NodePtr broadcast_axis(const NodePtr& a, std::size_t axis, std::size_t extent);
NodePtr reshape(const NodePtr& a, std::vector<std::size_t> shape);
NodePtr stack_rows(const std::vector<NodePtr>& rows);
NodePtr slice_row(const NodePtr& a, std::size_t row);
NodePtr row_scatter(const NodePtr& row, std::size_t rows, std::size_t index);
NodePtr slice_elem(const NodePtr& a, std::size_t flat_index);
NodePtr scatter_elem(const NodePtr& s, std::vector<std::size_t> shape, std::size_t flat_index);

// ---- composites ---------------------------------------------------------

NodePtr mean_axis(const NodePtr& a, std::size_t axis);

/// Numerically stable softmax along `axis`; the max shift is baked in as a
/// constant, which leaves both the value and all derivatives unchanged.
NodePtr softmax(const NodePtr& a, std::size_t axis);

/// log(softmax(a)) along `axis`, computed without forming small exponentials.
NodePtr log_softmax(const NodePtr& a, std::size_t axis);

// ---- evaluation and differentiation --------------------------------------

/// Value of the expression (cached at construction).
Tensor forward(const NodePtr& expr);

/// Reverse-mode gradient of a scalar expression with respect to each node in
/// `wrt`. The results are graph nodes, so gradient() may be applied to them
/// again. A wrt node the expression does not depend on yields zeros.
std::vector<NodePtr> gradient(const NodePtr& expr, const std::vector<NodePtr>& wrt);

}  // namespace mpser::ad
