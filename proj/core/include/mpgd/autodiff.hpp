// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mpgd/tensor.hpp"

namespace mpgd::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One value in a define-by-run computation graph. Nodes are created through
/// the free functions below and point at their inputs, so holding the final
/// node keeps the whole graph alive. Graphs are rebuilt per training step.
struct Node {
  Tensor value;
  Tensor grad;  // allocated by backward(); same shape as value
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(const Node&)> backprop;  // accumulates into parents' grads
};

/// Leaf with no gradient (inputs, targets).
NodePtr constant(Tensor value);

/// Leaf that receives a gradient during backward (model weights).
NodePtr parameter(Tensor value);

// Elementwise arithmetic. Shapes must match exactly; a size-1 operand
// broadcasts against any shape. Scalar overloads wrap the scalar as a
// constant leaf.
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr div(const NodePtr& a, const NodePtr& b);
NodePtr add(const NodePtr& a, double b);
NodePtr sub(const NodePtr& a, double b);
NodePtr mul(const NodePtr& a, double b);
NodePtr div(const NodePtr& a, double b);

NodePtr exp(const NodePtr& a);
NodePtr abs(const NodePtr& a);  // subgradient 0 at 0
NodePtr square(const NodePtr& a);
NodePtr max_with_scalar(const NodePtr& a, double s);

// Reductions to a scalar (shape {1}). Summation is left-to-right in flat
// index order so reruns and gather_mean-vs-mean comparisons are bit-exact.
NodePtr sum(const NodePtr& a);
NodePtr mean(const NodePtr& a);
NodePtr max(const NodePtr& a);  // gradient flows to the first arg-max entry

/// Mean over the given flat indices; indices must be strictly ascending and
/// in range. Backward distributes 1/k to the selected entries only.
NodePtr gather_mean(const NodePtr& a, const std::vector<std::size_t>& indices);

/// a: [m x k], b: [k x n] -> [m x n].
NodePtr matmul(const NodePtr& a, const NodePtr& b);

/// Cross-correlation with zero 'same' padding.
/// input: [c_in x h x w], kernels: [c_out x c_in x kh x kw] (kh, kw odd)
/// -> [c_out x h x w].
NodePtr conv2d(const NodePtr& input, const NodePtr& kernels);

/// Metadata-only shape change; gradients pass through flat.
NodePtr reshape(const NodePtr& a, std::vector<std::size_t> shape);

/// Reverse accumulation from a scalar root. Zeroes and fills .grad on every
/// node that requires a gradient. Deterministic: bit-identical on reruns.
void backward(const NodePtr& root);

}  // namespace mpgd::ad
