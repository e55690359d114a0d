#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace longembed {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

const char* dtype_name(DType dtype);

// Precision used for newly created tensors. Training runs in f32; gradient
// checks switch the whole process to f64.
DType default_dtype();
void set_default_dtype(DType dtype);

class PrecisionGuard {
public:
    explicit PrecisionGuard(DType dtype) : saved_(default_dtype()) { set_default_dtype(dtype); }
    ~PrecisionGuard() { set_default_dtype(saved_); }
    PrecisionGuard(const PrecisionGuard&) = delete;
    PrecisionGuard& operator=(const PrecisionGuard&) = delete;

private:
    DType saved_;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Calls f.template operator()<T>() with T = float or double.
template <class F>
decltype(auto) dispatch(DType dtype, F&& f) {
    if (dtype == DType::f32) return f.template operator()<float>();
    return f.template operator()<double>();
}

namespace detail {

using Storage = std::variant<std::vector<float>, std::vector<double>>;

struct TensorImpl;

struct GradFn {
    const char* name = "";
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    // Reads out.grad and accumulates into the inputs' grads.
    std::function<void(TensorImpl& out)> apply;
};

struct TensorImpl {
    Shape shape;
    DType dtype = DType::f32;
    Storage data;
    std::unique_ptr<Storage> grad;
    bool requires_grad = false;
    std::shared_ptr<GradFn> grad_fn;

    template <class T>
    std::vector<T>& values() { return std::get<std::vector<T>>(data); }
    template <class T>
    const std::vector<T>& values() const { return std::get<std::vector<T>>(data); }

    // Allocates a zero gradient buffer on first use.
    template <class T>
    std::vector<T>& grad_values() {
        if (!grad) grad = std::make_unique<Storage>(std::vector<T>(values<T>().size(), T(0)));
        return std::get<std::vector<T>>(*grad);
    }
};

}  // namespace detail

// Shared handle to a dense row-major array. Copies alias the same buffer;
// use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, DType dtype = default_dtype());
    static Tensor full(const Shape& shape, double value, DType dtype = default_dtype());
    static Tensor from_values(const Shape& shape, std::span<const double> values,
                              DType dtype = default_dtype());
    static Tensor from_values(const Shape& shape, std::initializer_list<double> values,
                              DType dtype = default_dtype());
    static Tensor scalar(double value, DType dtype = default_dtype());

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;
    DType dtype() const;

    template <class T>
    std::span<T> data() { return impl().values<T>(); }
    template <class T>
    std::span<const T> data() const { return impl().values<T>(); }

    double item() const;
    double at(std::size_t flat_index) const;
    void set(std::size_t flat_index, double value);
    std::vector<double> to_vector() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag = true);
    bool is_leaf() const;
    bool has_grad() const;
    // Detached copy of the accumulated gradient; zeros when none was written.
    Tensor grad() const;
    std::vector<double> grad_vector() const;
    void zero_grad();
    template <class T>
    std::span<T> grad_data() { return impl().grad_values<T>(); }

    Tensor clone() const;
    Tensor detach() const;
    Tensor to(DType dtype) const;

    detail::TensorImpl& impl();
    const detail::TensorImpl& impl() const;
    const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Gradient recording is on by default and thread-local.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

// Reverse-topological record of the operations reachable from a root.
class ComputationTape {
public:
    static ComputationTape record(const Tensor& root);

    // Nodes in forward execution order; backward replays them reversed.
    const std::vector<std::shared_ptr<detail::TensorImpl>>& nodes() const { return nodes_; }
    std::vector<std::string> op_names() const;
    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<std::shared_ptr<detail::TensorImpl>> nodes_;
};

// Populates grads of every requires_grad leaf reachable from the scalar
// loss. Leaf grads accumulate across calls until zero_grad().
void backward(const Tensor& loss);

}  // namespace longembed
