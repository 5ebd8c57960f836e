#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "qdiff/error.hpp"

namespace qdiff {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape &shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

inline std::string to_string(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

/**
 * One entry of the dynamic tape.
 *
 * A node owns its forward value and, once backward reaches it, a gradient
 * buffer of the same length. Non-leaf nodes keep strong references to their
 * inputs, so the tape lives exactly as long as the tensors that reference it.
 */
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    const char *op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    /// Reads this node's grad and accumulates into the inputs' grads.
    std::function<void(Node &)> backward;

    bool is_leaf() const noexcept { return inputs.empty(); }

    std::vector<double> &ensure_grad() {
        if (grad.empty()) {
            grad.assign(data.size(), 0.0);
        }
        return grad;
    }
};

} // namespace detail

/**
 * Dense row-major tensor of 64-bit reals with an optional gradient.
 *
 * Tensor is a cheap handle: copies share the same node. Values produced by
 * operations are never modified afterwards; only leaves (parameters) are
 * updated in place by optimizers through mutable_data().
 */
class Tensor {
  public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (numel_of(shape) != data.size()) {
            throw DimensionError("tensor data length " +
                                 std::to_string(data.size()) +
                                 " does not match shape " + to_string(shape));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = numel_of(shape);
        return {std::move(shape), std::vector<double>(n, 0.0), requires_grad};
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = numel_of(shape);
        return {std::move(shape), std::vector<double>(n, value),
                requires_grad};
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return {Shape{}, {value}, requires_grad};
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }

    const Shape &shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    std::span<double> mutable_data() { return node_->data; }

    double item() const {
        if (numel() != 1) {
            throw ContractError("item() on tensor of shape " +
                                to_string(shape()));
        }
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    /// Gradient buffer; empty until a backward pass reaches this tensor.
    std::span<const double> grad() const { return node_->grad; }

    void zero_grad() { node_->grad.clear(); }

    /// A detached copy holding the same values and no tape.
    Tensor detach(bool requires_grad = false) const {
        return {shape(), node_->data, requires_grad};
    }

    const char *op() const { return node_->op; }

    const std::shared_ptr<detail::Node> &node() const { return node_; }

    /**
     * Record the result of an operation on the tape.
     *
     * The node is only linked to its inputs (and given a backward rule) when
     * at least one input requires a gradient; otherwise it is a plain value.
     */
    static Tensor make_result(Shape shape, std::vector<double> data,
                              const char *op, std::vector<Tensor> inputs,
                              std::function<void(detail::Node &)> backward) {
        Tensor out(std::move(shape), std::move(data));
        out.node_->op = op;
        bool any = false;
        for (const auto &in : inputs) {
            any = any || in.requires_grad();
        }
        if (any) {
            out.node_->requires_grad = true;
            out.node_->inputs.reserve(inputs.size());
            for (auto &in : inputs) {
                out.node_->inputs.push_back(in.node_);
            }
            out.node_->backward = std::move(backward);
        }
        return out;
    }

  private:
    std::shared_ptr<detail::Node> node_;
};

/**
 * Reverse-mode sweep from a scalar loss.
 *
 * Every requires_grad leaf reachable from `loss` receives d loss / d leaf,
 * added to whatever its gradient buffer already holds. Intermediate buffers
 * are reset at the start of each call, so repeated calls on the same graph
 * accumulate into leaves exactly once per call.
 */
inline void backward(const Tensor &loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " +
                            to_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
        return;
    }

    // Iterative post-order DFS: children before parents.
    std::vector<detail::Node *> order;
    std::unordered_set<detail::Node *> seen;
    std::vector<std::pair<detail::Node *, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto &[node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node *child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (detail::Node *node : order) {
        if (!node->is_leaf()) {
            node->grad.assign(node->data.size(), 0.0);
        }
    }
    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->is_leaf() && (*it)->backward) {
            (*it)->backward(**it);
        }
    }
}

} // namespace qdiff
