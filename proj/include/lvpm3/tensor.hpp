#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lvpm3::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl;

template <typename T>
using BackwardFn = std::function<void(TensorImpl<T>& self)>;

/// Storage plus the autodiff record of one tensor. A tensor produced by an op holds
/// shared references to its parents and the rule that pushes its gradient into them.
template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // empty until a gradient is accumulated
    bool requires_grad = false;

    std::string op; // empty for leaves
    std::vector<std::shared_ptr<TensorImpl>> parents;
    BackwardFn<T> backward;
    bool backward_done = false; // set on the root after backward()

    /// Gradient buffer, allocated (zeroed) on first use.
    std::span<T> grad_buffer();
};

/// Dense row-major tensor taking part in a define-by-run autodiff graph.
/// Copies share storage; use clone() for a detached deep copy.
template <typename T>
class BasicTensor {
  public:
    using value_type = T;

    BasicTensor();
    BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static BasicTensor zeros(Shape shape, bool requires_grad = false);
    static BasicTensor full(Shape shape, T value, bool requires_grad = false);
    static BasicTensor scalar(T value, bool requires_grad = false);

    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const T> data() const { return impl_->data; }
    /// Mutable access to storage. Only valid before the tensor is handed to a graph.
    std::span<T> mutable_data() { return impl_->data; }
    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool value) { impl_->requires_grad = value; }
    bool is_leaf() const { return impl_->op.empty(); }
    const std::string& op() const { return impl_->op; }

    bool has_grad() const { return !impl_->grad.empty(); }
    /// Gradient view; all zeros (same shape) when nothing has been accumulated.
    std::vector<T> grad() const;
    void zero_grad() { impl_->grad.clear(); }

    /// Deep copy of the values, detached from any graph.
    BasicTensor clone() const;
    /// Same storage values as a new leaf without graph history.
    BasicTensor detach() const;

    bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }

    TensorImpl<T>& impl() { return *impl_; }
    const TensorImpl<T>& impl() const { return *impl_; }
    std::shared_ptr<TensorImpl<T>> impl_ptr() const { return impl_; }

    static BasicTensor from_impl(std::shared_ptr<TensorImpl<T>> impl);

  private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// True while gradient recording is enabled on this thread.
bool grad_enabled();

/// Disables graph recording for its lifetime (inference).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

/// Creates the result of an op. The node is attached to the graph only when recording
/// is enabled and at least one parent requires a gradient. This is also the extension
/// point for custom ops.
template <typename T>
BasicTensor<T> make_op(std::string_view op, Shape shape, std::vector<T> data,
                       std::vector<BasicTensor<T>> parents, BackwardFn<T> backward);

/// Topologically ordered view of the graph reachable from a root (parents first).
template <typename T>
class Graph {
  public:
    explicit Graph(const BasicTensor<T>& root);

    const std::vector<TensorImpl<T>*>& nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }

  private:
    std::vector<TensorImpl<T>*> nodes_;
};

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every reachable
/// tensor that requires one, intermediates included. Calling it twice on the same root
/// without reset_graph() throws.
template <typename T>
void backward(BasicTensor<T>& loss);

/// Clears every gradient in the graph below `root` and re-arms backward().
template <typename T>
void reset_graph(BasicTensor<T>& root);

} // namespace lvpm3::ad
