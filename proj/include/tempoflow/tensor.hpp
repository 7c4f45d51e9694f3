#pragma once

// Dense float64 tensors with a reverse-mode differentiation graph.
//
// A Tensor is a cheap handle onto a shared node. Every operation creates a
// fresh node that keeps its inputs alive, so the graph behind a result is
// owned by the result: dropping the last handle frees the whole graph.
// Leaves created with requires_grad accumulate gradients across backward()
// calls; interior gradients are transient.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

namespace tempoflow {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);

namespace detail {
struct Node;
}

// Receives the gradient of the result and one slot per parent; a slot is
// nullptr when that parent does not need a gradient. Implementations add
// (never assign) into the slots.
using BackwardFn = std::function<void(const Eigen::ArrayXd& grad_out,
                                      std::span<Eigen::ArrayXd* const> parent_grads)>;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor constant(Shape shape, double value);
  static Tensor from_data(Shape shape, Eigen::ArrayXd data);
  static Tensor from_values(Shape shape, std::initializer_list<double> values);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  Index dim(std::size_t axis) const { return shape().at(axis); }
  Index numel() const;
  const Eigen::ArrayXd& data() const;
  double item() const;
  double operator[](Index i) const { return data()[i]; }

  // Only legal on leaves; use it to update optimization variables in place.
  Eigen::ArrayXd& mutable_data();

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag = true);
  bool is_leaf() const;
  bool has_grad() const;
  const Eigen::ArrayXd& grad() const;
  void zero_grad();

  // Same values, no history.
  Tensor detach() const;

  // Escape hatch for operations defined outside this module. Checks that the
  // data is finite and sized to `shape`.
  static Tensor make_result(Shape shape, Eigen::ArrayXd data, std::vector<Tensor> parents,
                            BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend void backward(const Tensor& loss);
  friend std::weak_ptr<const void> graph_handle(const Tensor& t);

  std::shared_ptr<detail::Node> node_;
};

enum class ElementwiseOp { kAdd, kSub, kMul };

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(ElementwiseOp op, const Tensor& a, double b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::kAdd, a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::kSub, a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::kMul, a, b); }
inline Tensor operator+(const Tensor& a, double b) { return elementwise(ElementwiseOp::kAdd, a, b); }
inline Tensor operator-(const Tensor& a, double b) { return elementwise(ElementwiseOp::kSub, a, b); }
inline Tensor operator*(const Tensor& a, double b) { return elementwise(ElementwiseOp::kMul, a, b); }
inline Tensor operator*(double a, const Tensor& b) { return elementwise(ElementwiseOp::kMul, b, a); }

// 3x3 cross-correlation with zero padding 1. input [C_in,H,W], kernel
// [C_out,C_in,3,3]. The kernel is treated as a constant.
Tensor conv2d(const Tensor& input, const Tensor& kernel);

Tensor tanh_act(const Tensor& a);

// Stacks [C_i,H,W] parts along the channel axis.
Tensor concat_channels(std::span<const Tensor> parts);
Tensor concat_channels(std::initializer_list<Tensor> parts);

Tensor sum(const Tensor& a);

// Elementwise clamp into [lo, hi]; gradient passes through strictly inside.
Tensor clamp(const Tensor& a, double lo, double hi);

// Masked mean squared error over [C,H,W] tensors with a row-major [H,W]
// pixel mask. Normalized by the number of masked scalar entries. An empty
// mask yields exactly 0 and bumps empty_mask_warnings().
Tensor masked_nmse(const Tensor& a, const Tensor& b, std::span<const std::uint8_t> mask);
std::uint64_t empty_mask_warnings();

// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
void backward(const Tensor& loss);

// Weak reference to the node behind `t`; expires once its graph is freed.
std::weak_ptr<const void> graph_handle(const Tensor& t);

}  // namespace tempoflow
