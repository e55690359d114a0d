#include "longembed/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace longembed {

namespace {

std::atomic<DType> g_default_dtype{DType::f32};
thread_local bool t_grad_enabled = true;

detail::Storage make_storage(DType dtype, std::size_t n) {
    if (dtype == DType::f32) return std::vector<float>(n, 0.0f);
    return std::vector<double>(n, 0.0);
}

}  // namespace

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

DType default_dtype() { return g_default_dtype.load(); }
void set_default_dtype(DType dtype) { g_default_dtype.store(dtype); }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(const Shape& shape, DType dtype) {
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = shape;
    impl->dtype = dtype;
    impl->data = make_storage(dtype, shape_numel(shape));
    return Tensor(std::move(impl));
}

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
    Tensor t = zeros(shape, dtype);
    dispatch(dtype, [&]<typename T>() { std::ranges::fill(t.data<T>(), static_cast<T>(value)); });
    return t;
}

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values, DType dtype) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    Tensor t = zeros(shape, dtype);
    dispatch(dtype, [&]<typename T>() {
        auto out = t.data<T>();
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<T>(values[i]);
    });
    return t;
}

Tensor Tensor::from_values(const Shape& shape, std::initializer_list<double> values, DType dtype) {
    return from_values(shape, std::span<const double>(values.begin(), values.size()), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return from_values({}, {value}, dtype); }

detail::TensorImpl& Tensor::impl() {
    if (!impl_) throw std::logic_error("use of an undefined tensor");
    return *impl_;
}

const detail::TensorImpl& Tensor::impl() const {
    if (!impl_) throw std::logic_error("use of an undefined tensor");
    return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }
DType Tensor::dtype() const { return impl().dtype; }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return at(0);
}

double Tensor::at(std::size_t flat_index) const {
    return dispatch(dtype(), [&]<typename T>() -> double { return data<T>()[flat_index]; });
}

void Tensor::set(std::size_t flat_index, double value) {
    dispatch(dtype(), [&]<typename T>() { data<T>()[flat_index] = static_cast<T>(value); });
}

std::vector<double> Tensor::to_vector() const {
    return dispatch(dtype(), [&]<typename T>() {
        auto d = data<T>();
        return std::vector<double>(d.begin(), d.end());
    });
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
    if (impl().grad_fn) throw std::logic_error("requires_grad can only be set on leaf tensors");
    impl().requires_grad = flag;
    return *this;
}

bool Tensor::is_leaf() const { return impl().grad_fn == nullptr; }
bool Tensor::has_grad() const { return impl().grad != nullptr; }

Tensor Tensor::grad() const {
    Tensor g = zeros(shape(), dtype());
    if (impl().grad) g.impl().data = *impl().grad;
    return g;
}

std::vector<double> Tensor::grad_vector() const { return grad().to_vector(); }

void Tensor::zero_grad() { impl().grad.reset(); }

Tensor Tensor::clone() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = shape();
    impl->dtype = dtype();
    impl->data = this->impl().data;
    impl->requires_grad = requires_grad() && is_leaf();
    return Tensor(std::move(impl));
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = shape();
    impl->dtype = dtype();
    impl->data = this->impl().data;
    return Tensor(std::move(impl));
}

Tensor Tensor::to(DType target) const {
    if (target == dtype()) return detach();
    return from_values(shape(), to_vector(), target);
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = saved_; }

ComputationTape ComputationTape::record(const Tensor& root) {
    ComputationTape tape;
    if (!root.defined() || !root.impl().grad_fn) return tape;

    // Iterative post-order DFS; the result is a topological order.
    std::unordered_set<const detail::TensorImpl*> visited;
    std::vector<std::pair<std::shared_ptr<detail::TensorImpl>, std::size_t>> stack;
    stack.emplace_back(root.impl_ptr(), 0);
    visited.insert(root.impl_ptr().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        const auto& inputs = node->grad_fn->inputs;
        if (next < inputs.size()) {
            auto child = inputs[next++];
            if (child->grad_fn && child->requires_grad && visited.insert(child.get()).second) {
                stack.emplace_back(std::move(child), 0);
            }
            continue;
        }
        tape.nodes_.push_back(node);
        stack.pop_back();
    }
    return tape;
}

std::vector<std::string> ComputationTape::op_names() const {
    std::vector<std::string> names;
    names.reserve(nodes_.size());
    for (const auto& n : nodes_) names.emplace_back(n->grad_fn->name);
    return names;
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw std::invalid_argument("backward on an undefined tensor");
    if (loss.numel() != 1) {
        throw ShapeError("backward requires a scalar root, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw std::invalid_argument("backward root does not depend on any requires_grad tensor");
    }
    auto& root = const_cast<Tensor&>(loss).impl();
    if (!root.grad_fn) {
        dispatch(root.dtype, [&]<typename T>() { root.grad_values<T>()[0] += T(1); });
        return;
    }

    const ComputationTape tape = ComputationTape::record(loss);
    for (const auto& node : tape.nodes()) node->grad.reset();
    dispatch(root.dtype, [&]<typename T>() { root.grad_values<T>()[0] = T(1); });

    const auto& nodes = tape.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        auto& node = **it;
        if (node.grad) node.grad_fn->apply(node);
    }
    for (const auto& node : nodes) node->grad.reset();
}

}  // namespace longembed
