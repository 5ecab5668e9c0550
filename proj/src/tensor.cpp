#include "lvpm3/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "lvpm3/error.hpp"

namespace lvpm3::ad {

namespace {
thread_local bool g_grad_enabled = true;
} // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? ", " : "") << shape[i];
    }
    out << ']';
    return out.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
std::span<T> TensorImpl<T>::grad_buffer() {
    if (grad.empty()) {
        grad.assign(data.size(), T(0));
    }
    return grad;
}

template <typename T>
BasicTensor<T>::BasicTensor() : impl_(std::make_shared<TensorImpl<T>>()) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl<T>>()) {
    for (std::size_t d : shape) {
        if (d == 0) {
            throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
        }
    }
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
    return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_impl(std::shared_ptr<TensorImpl<T>> impl) {
    BasicTensor t;
    t.impl_ = std::move(impl);
    return t;
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
    }
    return impl_->shape[axis];
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
}

template <typename T>
T BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) {
        throw ShapeError("index rank does not match shape " + shape_str(shape()));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= impl_->shape[axis]) {
            throw ShapeError("index out of range for shape " + shape_str(shape()));
        }
        flat = flat * impl_->shape[axis] + i;
        ++axis;
    }
    return impl_->data[flat];
}

template <typename T>
std::vector<T> BasicTensor<T>::grad() const {
    if (impl_->grad.empty()) {
        return std::vector<T>(numel(), T(0));
    }
    return impl_->grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
    return BasicTensor(impl_->shape, impl_->data, impl_->requires_grad && is_leaf());
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
    return BasicTensor(impl_->shape, impl_->data, false);
}

template <typename T>
BasicTensor<T> make_op(std::string_view op, Shape shape, std::vector<T> data,
                       std::vector<BasicTensor<T>> parents, BackwardFn<T> backward) {
    BasicTensor<T> out(std::move(shape), std::move(data), false);
    if (!g_grad_enabled) {
        return out;
    }
    bool any = false;
    for (const auto& p : parents) {
        any = any || p.requires_grad();
    }
    if (!any) {
        return out;
    }
    auto& impl = out.impl();
    impl.requires_grad = true;
    impl.op = std::string(op);
    impl.parents.reserve(parents.size());
    for (const auto& p : parents) {
        impl.parents.push_back(p.impl_ptr());
    }
    impl.backward = std::move(backward);
    return out;
}

template <typename T>
Graph<T>::Graph(const BasicTensor<T>& root) {
    // Iterative post-order DFS; recursion depth would scale with network depth.
    std::unordered_set<const TensorImpl<T>*> visited;
    std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
    auto* start = const_cast<TensorImpl<T>*>(&root.impl());
    stack.emplace_back(start, 0);
    visited.insert(start);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl<T>* parent = node->parents[next].get();
            ++next;
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            nodes_.push_back(node);
            stack.pop_back();
        }
    }
}

template <typename T>
void backward(BasicTensor<T>& loss) {
    if (loss.numel() != 1) {
        throw BackwardError("backward() needs a scalar loss, got shape " +
                            shape_str(loss.shape()));
    }
    auto& root = loss.impl();
    if (root.backward_done) {
        throw BackwardError("backward() called twice on the same graph without reset_graph()");
    }
    if (!root.requires_grad) {
        throw BackwardError("loss does not depend on any tensor that requires a gradient");
    }
    Graph<T> graph(loss);
    root.grad_buffer()[0] += T(1);
    const auto& nodes = graph.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        TensorImpl<T>* node = *it;
        if (node->backward && !node->grad.empty()) {
            node->backward(*node);
        }
    }
    root.backward_done = true;
}

template <typename T>
void reset_graph(BasicTensor<T>& root) {
    Graph<T> graph(root);
    for (TensorImpl<T>* node : graph.nodes()) {
        node->grad.clear();
    }
    root.impl().backward_done = false;
}

template struct TensorImpl<float>;
template struct TensorImpl<double>;
template class BasicTensor<float>;
template class BasicTensor<double>;
template class Graph<float>;
template class Graph<double>;
template Tensor make_op(std::string_view, Shape, std::vector<float>, std::vector<Tensor>,
                        BackwardFn<float>);
template Tensor64 make_op(std::string_view, Shape, std::vector<double>, std::vector<Tensor64>,
                          BackwardFn<double>);
template void backward(Tensor&);
template void backward(Tensor64&);
template void reset_graph(Tensor&);
template void reset_graph(Tensor64&);

} // namespace lvpm3::ad
