#include "tempoflow/tensor.hpp"

#include <atomic>
#include <cmath>
#include <string>
#include <unordered_set>

#include "tempoflow/errors.hpp"

namespace tempoflow {

namespace detail {

struct Node {
  Shape shape;
  Eigen::ArrayXd data;
  Eigen::ArrayXd grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

namespace {

using detail::Node;

std::atomic<std::uint64_t> g_empty_mask_warnings{0};

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    require(d > 0, "tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(Shape shape) { return constant(std::move(shape), 0.0); }

Tensor Tensor::constant(Shape shape, double value) {
  const Index n = shape_numel(shape);
  return from_data(std::move(shape), Eigen::ArrayXd::Constant(n, value));
}

Tensor Tensor::from_data(Shape shape, Eigen::ArrayXd data) {
  require(shape_numel(shape) == data.size(), "tensor data size does not match shape " + shape_str(shape));
  if (!data.allFinite()) throw NumericalError("tensor data contains non-finite values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return Tensor(std::move(node));
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values) {
  Eigen::ArrayXd data(static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) data[i++] = v;
  return from_data(std::move(shape), std::move(data));
}

Tensor Tensor::scalar(double value) { return from_values({1}, {value}); }

const Shape& Tensor::shape() const {
  require(defined(), "undefined tensor");
  return node_->shape;
}

Index Tensor::numel() const { return data().size(); }

const Eigen::ArrayXd& Tensor::data() const {
  require(defined(), "undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  require(numel() == 1, "item() requires a single-element tensor");
  return node_->data[0];
}

Eigen::ArrayXd& Tensor::mutable_data() {
  require(is_leaf(), "mutable_data() is only available on leaf tensors");
  return node_->data;
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  require(is_leaf(), "requires_grad can only be set on leaf tensors");
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return defined() && !node_->backward; }

bool Tensor::has_grad() const { return defined() && node_->grad.size() == node_->data.size(); }

const Eigen::ArrayXd& Tensor::grad() const {
  require(has_grad(), "tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  require(defined(), "undefined tensor");
  node_->grad = Eigen::ArrayXd::Zero(node_->data.size());
}

Tensor Tensor::detach() const { return from_data(shape(), data()); }

Tensor Tensor::make_result(Shape shape, Eigen::ArrayXd data, std::vector<Tensor> parents,
                           BackwardFn backward) {
  require(shape_numel(shape) == data.size(), "operation produced data of the wrong size");
  if (!data.allFinite()) throw NumericalError("operation produced non-finite values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  for (auto& p : parents) {
    require(p.defined(), "undefined operand");
    node->requires_grad = node->requires_grad || p.requires_grad();
    node->parents.push_back(std::move(p.node_));
  }
  // Nodes that cannot reach a trainable leaf do not need their history.
  if (node->requires_grad) {
    node->backward = std::move(backward);
  } else {
    node->parents.clear();
  }
  return Tensor(std::move(node));
}

std::weak_ptr<const void> graph_handle(const Tensor& t) { return t.node_; }

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise");
  Eigen::ArrayXd out;
  switch (op) {
    case ElementwiseOp::kAdd: out = a.data() + b.data(); break;
    case ElementwiseOp::kSub: out = a.data() - b.data(); break;
    case ElementwiseOp::kMul: out = a.data() * b.data(); break;
  }
  return Tensor::make_result(
      a.shape(), std::move(out), {a, b},
      [op, av = a.data(), bv = b.data()](const Eigen::ArrayXd& g, std::span<Eigen::ArrayXd* const> pg) {
        switch (op) {
          case ElementwiseOp::kAdd:
            if (pg[0]) *pg[0] += g;
            if (pg[1]) *pg[1] += g;
            break;
          case ElementwiseOp::kSub:
            if (pg[0]) *pg[0] += g;
            if (pg[1]) *pg[1] -= g;
            break;
          case ElementwiseOp::kMul:
            if (pg[0]) *pg[0] += g * bv;
            if (pg[1]) *pg[1] += g * av;
            break;
        }
      });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, double b) {
  Eigen::ArrayXd out;
  switch (op) {
    case ElementwiseOp::kAdd: out = a.data() + b; break;
    case ElementwiseOp::kSub: out = a.data() - b; break;
    case ElementwiseOp::kMul: out = a.data() * b; break;
  }
  return Tensor::make_result(a.shape(), std::move(out), {a},
                             [op, b](const Eigen::ArrayXd& g, std::span<Eigen::ArrayXd* const> pg) {
                               if (!pg[0]) return;
                               if (op == ElementwiseOp::kMul) {
                                 *pg[0] += g * b;
                               } else {
                                 *pg[0] += g;
                               }
                             });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel) {
  require(input.shape().size() == 3, "conv2d: input must be [C,H,W]");
  require(kernel.shape().size() == 4 && kernel.dim(2) == 3 && kernel.dim(3) == 3,
          "conv2d: kernel must be [C_out,C_in,3,3]");
  const Index cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const Index cout = kernel.dim(0);
  if (kernel.dim(1) != cin) throw ContractViolation("conv2d: channel mismatch");

  const double* x = input.data().data();
  const double* k = kernel.data().data();
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(cout * h * w);
  double* y = out.data();
  // For every output element the terms are added in (ci, ky, kx) order.
  for (Index co = 0; co < cout; ++co) {
    for (Index ci = 0; ci < cin; ++ci) {
      for (Index ky = 0; ky < 3; ++ky) {
        for (Index kx = 0; kx < 3; ++kx) {
          const double wgt = k[((co * cin + ci) * 3 + ky) * 3 + kx];
          const Index dy = ky - 1, dx = kx - 1;
          const Index y0 = std::max<Index>(0, -dy), y1 = std::min(h, h - dy);
          const Index x0 = std::max<Index>(0, -dx), x1 = std::min(w, w - dx);
          for (Index r = y0; r < y1; ++r) {
            double* orow = y + (co * h + r) * w;
            const double* irow = x + (ci * h + r + dy) * w + dx;
            for (Index c = x0; c < x1; ++c) orow[c] += wgt * irow[c];
          }
        }
      }
    }
  }

  return Tensor::make_result(
      {cout, h, w}, std::move(out), {input},
      [kv = kernel.data(), cin, cout, h, w](const Eigen::ArrayXd& g, std::span<Eigen::ArrayXd* const> pg) {
        if (!pg[0]) return;
        double* gi = pg[0]->data();
        const double* go = g.data();
        const double* k = kv.data();
        for (Index co = 0; co < cout; ++co) {
          for (Index ci = 0; ci < cin; ++ci) {
            for (Index ky = 0; ky < 3; ++ky) {
              for (Index kx = 0; kx < 3; ++kx) {
                const double wgt = k[((co * cin + ci) * 3 + ky) * 3 + kx];
                const Index dy = ky - 1, dx = kx - 1;
                const Index y0 = std::max<Index>(0, -dy), y1 = std::min(h, h - dy);
                const Index x0 = std::max<Index>(0, -dx), x1 = std::min(w, w - dx);
                for (Index r = y0; r < y1; ++r) {
                  const double* orow = go + (co * h + r) * w;
                  double* irow = gi + (ci * h + r + dy) * w + dx;
                  for (Index c = x0; c < x1; ++c) irow[c] += wgt * orow[c];
                }
              }
            }
          }
        }
      });
}

Tensor tanh_act(const Tensor& a) {
  Eigen::ArrayXd out = a.data().tanh();
  return Tensor::make_result(a.shape(), out, {a},
                             [out](const Eigen::ArrayXd& g, std::span<Eigen::ArrayXd* const> pg) {
                               if (pg[0]) *pg[0] += g * (1.0 - out.square());
                             });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_channels: no parts");
  const Index h = parts[0].dim(1), w = parts[0].dim(2);
  Index channels = 0;
  std::vector<Index> sizes;
  for (const auto& p : parts) {
    require(p.shape().size() == 3, "concat_channels: parts must be [C,H,W]");
    if (p.dim(1) != h || p.dim(2) != w) throw ContractViolation("concat_channels: spatial mismatch");
    channels += p.dim(0);
    sizes.push_back(p.numel());
  }
  Eigen::ArrayXd out(channels * h * w);
  Index offset = 0;
  for (const auto& p : parts) {
    out.segment(offset, p.numel()) = p.data();
    offset += p.numel();
  }
  return Tensor::make_result({channels, h, w}, std::move(out),
                             std::vector<Tensor>(parts.begin(), parts.end()),
                             [sizes](const Eigen::ArrayXd& g, std::span<Eigen::ArrayXd* const> pg) {
                               Index off = 0;
                               for (std::size_t i = 0; i < sizes.size(); ++i) {
                                 if (pg[i]) *pg[i] += g.segment(off, sizes[i]);
                                 off += sizes[i];
                               }
                             });
}

Tensor concat_channels(std::initializer_list<Tensor> parts) {
  return concat_channels(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor sum(const Tensor& a) {
  return Tensor::make_result({1}, Eigen::ArrayXd::Constant(1, a.data().sum()), {a},
                             [](const Eigen::ArrayXd& g, std::span<Eigen::ArrayXd* const> pg) {
                               if (pg[0]) *pg[0] += g[0];
                             });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  require(lo < hi, "clamp: empty interval");
  const Eigen::ArrayXd& x = a.data();
  Eigen::ArrayXd out = x.max(lo).min(hi);
  Eigen::ArrayXd pass = ((x > lo) && (x < hi)).cast<double>();
  return Tensor::make_result(a.shape(), std::move(out), {a},
                             [pass = std::move(pass)](const Eigen::ArrayXd& g,
                                                      std::span<Eigen::ArrayXd* const> pg) {
                               if (pg[0]) *pg[0] += g * pass;
                             });
}

Tensor masked_nmse(const Tensor& a, const Tensor& b, std::span<const std::uint8_t> mask) {
  require_same_shape(a, b, "masked_nmse");
  require(a.shape().size() == 3, "masked_nmse: inputs must be [C,H,W]");
  const Index c = a.dim(0), plane = a.dim(1) * a.dim(2);
  if (static_cast<Index>(mask.size()) != plane) throw ContractViolation("masked_nmse: mask size mismatch");

  Eigen::ArrayXd weight(c * plane);
  Index count = 0;
  for (Index p = 0; p < plane; ++p) {
    const double m = mask[p] ? 1.0 : 0.0;
    count += mask[p] ? 1 : 0;
    for (Index ch = 0; ch < c; ++ch) weight[ch * plane + p] = m;
  }
  if (count == 0) {
    g_empty_mask_warnings.fetch_add(1, std::memory_order_relaxed);
    return Tensor::make_result({1}, Eigen::ArrayXd::Zero(1), {a, b},
                               [](const Eigen::ArrayXd&, std::span<Eigen::ArrayXd* const>) {});
  }
  const double denom = static_cast<double>(count * c);
  Eigen::ArrayXd diff = (a.data() - b.data()) * weight;
  const double value = diff.square().sum() / denom;
  return Tensor::make_result({1}, Eigen::ArrayXd::Constant(1, value), {a, b},
                             [diff = std::move(diff), denom](const Eigen::ArrayXd& g,
                                                             std::span<Eigen::ArrayXd* const> pg) {
                               const double s = 2.0 * g[0] / denom;
                               if (pg[0]) *pg[0] += s * diff;
                               if (pg[1]) *pg[1] -= s * diff;
                             });
}

std::uint64_t empty_mask_warnings() { return g_empty_mask_warnings.load(std::memory_order_relaxed); }

void backward(const Tensor& loss) {
  require(loss.defined(), "backward: undefined loss");
  require(loss.numel() == 1, "backward: loss must be a scalar");
  require(loss.requires_grad(), "backward: loss does not depend on any trainable tensor");

  // Iterative post-order DFS; `order` ends up topologically sorted (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node_.get(), 0);
  seen.insert(loss.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward || n->grad.size() != n->data.size()) n->grad = Eigen::ArrayXd::Zero(n->data.size());
  }
  loss.node_->grad[0] += 1.0;

  std::vector<Eigen::ArrayXd*> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    slots.clear();
    for (auto& p : n->parents) slots.push_back(p->requires_grad ? &p->grad : nullptr);
    n->backward(n->grad, slots);
  }
  for (Node* n : order) {
    if (n->backward) n->grad = Eigen::ArrayXd();
  }
}

}  // namespace tempoflow
