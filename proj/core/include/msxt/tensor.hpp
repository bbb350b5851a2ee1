#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "msxt/errors.hpp"

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// Every operation records its inputs and a backward rule on the output node;
// backward(loss) replays the rules in reverse topological order and
// accumulates gradients additively, so a tensor used twice receives the sum
// of both path gradients. Tensors are immutable after construction except
// for gradient accumulation. A graph and its tensors belong to one worker
// at a time; parallelism happens across independent graphs.

namespace msxt {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void()> backward_fn;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

// Thread-local switch: with grad mode off (e.g. evaluation), ops skip
// recording parents and backward rules.
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
    NoGradGuard() : prev_(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

template <class T>
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return from(std::move(shape), {}, requires_grad, /*fill*/ T(0));
    }

    static Tensor full(Shape shape, T v) {
        return from(std::move(shape), {}, false, v);
    }

    static Tensor scalar(T v) { return full({1}, v); }

    static Tensor from_values(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t size() const { return n_->value.size(); }
    std::size_t dim(std::size_t i) const { return n_->shape.at(i); }

    const std::vector<T>& value() const { return n_->value; }
    T at(std::size_t i) const { return n_->value.at(i); }

    // Scalar extraction; the tensor must hold exactly one element.
    T item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return n_->value[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool v) { n_->requires_grad = v; }

    bool has_grad() const { return !n_->grad.empty(); }
    const std::vector<T>& grad() const {
        if (!has_grad()) throw ContractError("grad() requested but no gradient was accumulated");
        return n_->grad;
    }
    void zero_grad() { n_->grad.clear(); }

    // Mutation hooks for leaf tensors (weight init, optimizer updates).
    // Must never be called on a tensor that is part of a live graph.
    std::vector<T>& leaf_value() { return n_->value; }

    std::shared_ptr<Node<T>>& node() { return n_; }
    const std::shared_ptr<Node<T>>& node() const { return n_; }

    explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  private:
    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad, T fill) {
        auto n = std::make_shared<Node<T>>();
        n->value.assign(shape_numel(shape), fill);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        (void)data;
        return Tensor(std::move(n));
    }

    std::shared_ptr<Node<T>> n_;
};

struct BackwardStats {
    std::size_t nodes_visited = 0;
    std::size_t rules_run = 0;
};

// Reverse-mode sweep from a scalar loss. Visits each reachable grad-requiring
// node exactly once, in reverse topological order.
template <class T>
BackwardStats backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward: loss must be a defined scalar tensor");
    if (!loss.requires_grad())
        throw ContractError("backward: loss does not require grad (graph not recorded?)");

    Node<T>* root = loss.node().get();

    // Iterative post-order DFS over grad-requiring parents.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    struct Frame {
        Node<T>* n;
        std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    seen.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node<T>* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += T(1);

    BackwardStats stats;
    stats.nodes_visited = order.size();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) {
            n->backward_fn();
            ++stats.rules_run;
        }
    }
    return stats;
}

template <class T>
bool all_finite(const std::vector<T>& v) {
    for (T x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

template <class T>
void assert_finite(const Tensor<T>& t, const std::string& what) {
    if (!all_finite(t.value())) throw NumericError(what + " contains non-finite values");
}

// Element-wise precision cast; the result is a detached constant.
template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
    std::vector<To> v(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) v[i] = static_cast<To>(t.value()[i]);
    return Tensor<To>::from_values(t.shape(), std::move(v));
}

}  // namespace msxt
