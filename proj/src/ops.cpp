#include "longembed/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace longembed::ops {

namespace {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
MatMap<T> as_mat(T* p, std::size_t rows, std::size_t cols) {
    return MatMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
ConstMatMap<T> as_cmat(const T* p, std::size_t rows, std::size_t cols) {
    return ConstMatMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype()) {
        throw ShapeError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    require_same_dtype(a, b, op);
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
    if (a.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
    }
}

bool tracks(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) return false;
    return std::ranges::any_of(inputs, [](const Tensor* t) { return t->requires_grad(); });
}

void attach(Tensor& out, const char* name, std::initializer_list<const Tensor*> inputs,
            std::function<void(TensorImpl&)> apply) {
    auto fn = std::make_shared<detail::GradFn>();
    fn->name = name;
    for (const Tensor* t : inputs) fn->inputs.push_back(t->impl_ptr());
    fn->apply = std::move(apply);
    out.impl().requires_grad = true;
    out.impl().grad_fn = std::move(fn);
}

template <class T>
std::vector<T>& out_grad(TensorImpl& out) {
    return std::get<std::vector<T>>(*out.grad);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    require_same_dtype(a, b, "matmul");
    const std::size_t m = transpose_a ? a.dim(1) : a.dim(0);
    const std::size_t ka = transpose_a ? a.dim(0) : a.dim(1);
    const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
    const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
    if (ka != kb) {
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) +
                         (transpose_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                         (transpose_b ? "^T" : ""));
    }
    Tensor out = Tensor::zeros({m, n}, a.dtype());
    dispatch(a.dtype(), [&]<typename T>() {
        auto A = as_cmat(a.data<T>().data(), a.dim(0), a.dim(1));
        auto B = as_cmat(b.data<T>().data(), b.dim(0), b.dim(1));
        auto C = as_mat(out.data<T>().data(), m, n);
        if (!transpose_a && !transpose_b) C.noalias() = A * B;
        else if (transpose_a && !transpose_b) C.noalias() = A.transpose() * B;
        else if (!transpose_a && transpose_b) C.noalias() = A * B.transpose();
        else C.noalias() = A.transpose() * B.transpose();
    });
    if (!tracks({&a, &b})) return out;

    ImplPtr ai = a.impl_ptr(), bi = b.impl_ptr();
    attach(out, "matmul", {&a, &b}, [ai, bi, m, n, transpose_a, transpose_b](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            auto dC = as_cmat(out_grad<T>(o).data(), m, n);
            auto A = as_cmat(ai->values<T>().data(), ai->shape[0], ai->shape[1]);
            auto B = as_cmat(bi->values<T>().data(), bi->shape[0], bi->shape[1]);
            if (ai->requires_grad) {
                auto dA = as_mat(ai->grad_values<T>().data(), ai->shape[0], ai->shape[1]);
                if (!transpose_a && !transpose_b) dA.noalias() += dC * B.transpose();
                else if (transpose_a && !transpose_b) dA.noalias() += B * dC.transpose();
                else if (!transpose_a && transpose_b) dA.noalias() += dC * B;
                else dA.noalias() += B.transpose() * dC.transpose();
            }
            if (bi->requires_grad) {
                auto dB = as_mat(bi->grad_values<T>().data(), bi->shape[0], bi->shape[1]);
                if (!transpose_a && !transpose_b) dB.noalias() += A.transpose() * dC;
                else if (transpose_a && !transpose_b) dB.noalias() += A * dC;
                else if (!transpose_a && transpose_b) dB.noalias() += dC.transpose() * A;
                else dB.noalias() += dC.transpose() * A.transpose();
            }
        });
    });
    return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    require_same_dtype(a, b, "bmm");
    const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2);
    const std::size_t kb = transpose_b ? b.dim(2) : b.dim(1);
    const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
    if (b.dim(0) != g || kb != k) {
        throw ShapeError("bmm: incompatible " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + (transpose_b ? "^T" : ""));
    }
    Tensor out = Tensor::zeros({g, m, n}, a.dtype());
    const std::size_t b_rows = b.dim(1), b_cols = b.dim(2);
    dispatch(a.dtype(), [&]<typename T>() {
        const T* pa = a.data<T>().data();
        const T* pb = b.data<T>().data();
        T* pc = out.data<T>().data();
        for (std::size_t i = 0; i < g; ++i) {
            auto A = as_cmat(pa + i * m * k, m, k);
            auto B = as_cmat(pb + i * b_rows * b_cols, b_rows, b_cols);
            auto C = as_mat(pc + i * m * n, m, n);
            if (transpose_b) C.noalias() = A * B.transpose();
            else C.noalias() = A * B;
        }
    });
    if (!tracks({&a, &b})) return out;

    ImplPtr ai = a.impl_ptr(), bi = b.impl_ptr();
    attach(out, "bmm", {&a, &b}, [ai, bi, g, m, k, n, b_rows, b_cols, transpose_b](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const T* pg = out_grad<T>(o).data();
            const T* pa = ai->values<T>().data();
            const T* pb = bi->values<T>().data();
            T* ga = ai->requires_grad ? ai->grad_values<T>().data() : nullptr;
            T* gb = bi->requires_grad ? bi->grad_values<T>().data() : nullptr;
            for (std::size_t i = 0; i < g; ++i) {
                auto dC = as_cmat(pg + i * m * n, m, n);
                auto A = as_cmat(pa + i * m * k, m, k);
                auto B = as_cmat(pb + i * b_rows * b_cols, b_rows, b_cols);
                if (ga) {
                    auto dA = as_mat(ga + i * m * k, m, k);
                    if (transpose_b) dA.noalias() += dC * B;
                    else dA.noalias() += dC * B.transpose();
                }
                if (gb) {
                    auto dB = as_mat(gb + i * b_rows * b_cols, b_rows, b_cols);
                    if (transpose_b) dB.noalias() += dC.transpose() * A;
                    else dB.noalias() += A.transpose() * dC;
                }
            }
        });
    });
    return out;
}

namespace {

template <class Fwd, class Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    require_same_shape(a, b, name);
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&]<typename T>() {
        auto x = a.data<T>();
        auto y = b.data<T>();
        auto z = out.data<T>();
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = fwd(x[i], y[i]);
    });
    if (!tracks({&a, &b})) return out;
    ImplPtr ai = a.impl_ptr(), bi = b.impl_ptr();
    attach(out, name, {&a, &b}, [ai, bi, bwd](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const auto& g = out_grad<T>(o);
            const auto& x = ai->values<T>();
            const auto& y = bi->values<T>();
            T* ga = ai->requires_grad ? ai->grad_values<T>().data() : nullptr;
            T* gb = bi->requires_grad ? bi->grad_values<T>().data() : nullptr;
            for (std::size_t i = 0; i < g.size(); ++i) {
                auto [da, db] = bwd(x[i], y[i], g[i]);
                if (ga) ga[i] += da;
                if (gb) gb[i] += db;
            }
        });
    });
    return out;
}

template <class Fwd, class Bwd>
Tensor unary_elementwise(const Tensor& x, const char* name, Fwd fwd, Bwd bwd) {
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto in = x.data<T>();
        auto z = out.data<T>();
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = fwd(in[i]);
    });
    if (!tracks({&x})) return out;
    ImplPtr xi = x.impl_ptr();
    attach(out, name, {&x}, [xi, bwd](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const auto& g = out_grad<T>(o);
            const auto& in = xi->values<T>();
            auto& gx = xi->grad_values<T>();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += bwd(in[i], g[i]);
        });
    });
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "add", [](auto x, auto y) { return x + y; },
        [](auto, auto, auto g) { return std::pair{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "sub", [](auto x, auto y) { return x - y; },
        [](auto, auto, auto g) { return std::pair{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "mul", [](auto x, auto y) { return x * y; },
        [](auto x, auto y, auto g) { return std::pair{g * y, g * x}; });
}

Tensor scale(const Tensor& x, double factor) {
    return unary_elementwise(
        x, "scale", [factor](auto v) { return static_cast<decltype(v)>(v * factor); },
        [factor](auto, auto g) { return static_cast<decltype(g)>(g * factor); });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_rank(bias, 1, "add_bias");
    require_same_dtype(x, bias, "add_bias");
    if (x.rank() == 0 || x.shape().back() != bias.dim(0)) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                         shape_str(x.shape()));
    }
    const std::size_t n = bias.dim(0);
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto in = x.data<T>();
        auto b = bias.data<T>();
        auto z = out.data<T>();
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = in[i] + b[i % n];
    });
    if (!tracks({&x, &bias})) return out;
    ImplPtr xi = x.impl_ptr(), bi = bias.impl_ptr();
    attach(out, "add_bias", {&x, &bias}, [xi, bi, n](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const auto& g = out_grad<T>(o);
            if (xi->requires_grad) {
                auto& gx = xi->grad_values<T>();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (bi->requires_grad) {
                auto& gb = bi->grad_values<T>();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
            }
        });
    });
    return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    return add_bias(matmul(x, weight), bias);
}

Tensor gelu(const Tensor& x) {
    return unary_elementwise(
        x, "gelu",
        [](auto v) {
            using T = decltype(v);
            return static_cast<T>(0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)));
        },
        [](auto v, auto g) {
            using T = decltype(v);
            const double xd = v;
            const double cdf = 0.5 * (1.0 + std::erf(xd * std::numbers::sqrt2 / 2.0));
            const double pdf = std::exp(-0.5 * xd * xd) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
            return static_cast<T>(g * (cdf + xd * pdf));
        });
}

Tensor relu(const Tensor& x) {
    return unary_elementwise(
        x, "relu", [](auto v) { return v > 0 ? v : decltype(v)(0); },
        [](auto v, auto g) { return v > 0 ? g : decltype(g)(0); });
}

Tensor softmax_lastdim(const Tensor& x) {
    if (x.rank() == 0) throw ShapeError("softmax_lastdim: scalar input");
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto in = x.data<T>();
        auto z = out.data<T>();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* row = in.data() + r * n;
            T* dst = z.data() + r * n;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                if (!std::isfinite(row[j])) {
                    throw NumericError("softmax_lastdim: non-finite input at flat index " +
                                       std::to_string(r * n + j));
                }
                mx = std::max(mx, row[j]);
            }
            T total = 0;
            for (std::size_t j = 0; j < n; ++j) {
                dst[j] = std::exp(row[j] - mx);
                total += dst[j];
            }
            const T inv = T(1) / total;
            for (std::size_t j = 0; j < n; ++j) dst[j] *= inv;
        }
    });
    if (!tracks({&x})) return out;
    ImplPtr xi = x.impl_ptr();
    attach(out, "softmax_lastdim", {&x}, [xi, n, rows](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const auto& g = out_grad<T>(o);
            const auto& y = o.values<T>();
            auto& gx = xi->grad_values<T>();
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t base = r * n;
                T dot = 0;
                for (std::size_t j = 0; j < n; ++j) dot += g[base + j] * y[base + j];
                for (std::size_t j = 0; j < n; ++j) gx[base + j] += y[base + j] * (g[base + j] - dot);
            }
        });
    });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_rank(gain, 1, "layer_norm");
    require_rank(bias, 1, "layer_norm");
    require_same_dtype(x, gain, "layer_norm");
    require_same_dtype(x, bias, "layer_norm");
    if (x.rank() == 0 || x.shape().back() != gain.dim(0) || gain.dim(0) != bias.dim(0)) {
        throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
    }
    const std::size_t n = gain.dim(0);
    const std::size_t rows = x.numel() / n;
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    const bool track = tracks({&x, &gain, &bias});
    auto saved = std::make_shared<detail::Storage>();
    auto rstd_saved = std::make_shared<detail::Storage>();
    dispatch(x.dtype(), [&]<typename T>() {
        auto in = x.data<T>();
        auto g = gain.data<T>();
        auto b = bias.data<T>();
        auto z = out.data<T>();
        std::vector<T> xhat(track ? in.size() : 0);
        std::vector<T> rstds(track ? rows : 0);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* row = in.data() + r * n;
            T mu = 0;
            for (std::size_t j = 0; j < n; ++j) mu += row[j];
            mu /= static_cast<T>(n);
            T var = 0;
            for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
            var /= static_cast<T>(n);
            const T rstd = T(1) / std::sqrt(var + static_cast<T>(eps));
            for (std::size_t j = 0; j < n; ++j) {
                const T h = (row[j] - mu) * rstd;
                z[r * n + j] = h * g[j] + b[j];
                if (track) xhat[r * n + j] = h;
            }
            if (track) rstds[r] = rstd;
        }
        if (track) {
            *saved = std::move(xhat);
            *rstd_saved = std::move(rstds);
        }
    });
    if (!track) return out;
    ImplPtr xi = x.impl_ptr(), gi = gain.impl_ptr(), bi = bias.impl_ptr();
    attach(out, "layer_norm", {&x, &gain, &bias}, [xi, gi, bi, saved, rstd_saved, n, rows](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const auto& dy = out_grad<T>(o);
            const auto& xhat = std::get<std::vector<T>>(*saved);
            const auto& rstd = std::get<std::vector<T>>(*rstd_saved);
            const auto& g = gi->values<T>();
            if (gi->requires_grad) {
                auto& gg = gi->grad_values<T>();
                for (std::size_t i = 0; i < dy.size(); ++i) gg[i % n] += dy[i] * xhat[i];
            }
            if (bi->requires_grad) {
                auto& gb = bi->grad_values<T>();
                for (std::size_t i = 0; i < dy.size(); ++i) gb[i % n] += dy[i];
            }
            if (xi->requires_grad) {
                auto& gx = xi->grad_values<T>();
                for (std::size_t r = 0; r < rows; ++r) {
                    const std::size_t base = r * n;
                    T mean_d = 0, mean_dx = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const T d = dy[base + j] * g[j];
                        mean_d += d;
                        mean_dx += d * xhat[base + j];
                    }
                    mean_d /= static_cast<T>(n);
                    mean_dx /= static_cast<T>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const T d = dy[base + j] * g[j];
                        gx[base + j] += rstd[r] * (d - mean_d - xhat[base + j] * mean_dx);
                    }
                }
            }
        });
    });
    return out;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0,1)");
    if (rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<std::vector<std::uint8_t>>(x.numel());
    for (auto& m : *mask) m = uniform01(rng) >= rate ? 1 : 0;
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto in = x.data<T>();
        auto z = out.data<T>();
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = (*mask)[i] ? static_cast<T>(in[i] * keep_scale) : T(0);
    });
    if (!tracks({&x})) return out;
    ImplPtr xi = x.impl_ptr();
    attach(out, "dropout", {&x}, [xi, mask, keep_scale](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const auto& g = out_grad<T>(o);
            auto& gx = xi->grad_values<T>();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if ((*mask)[i]) gx[i] += static_cast<T>(g[i] * keep_scale);
            }
        });
    });
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::zeros({}, x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        T total = 0;
        for (T v : x.data<T>()) total += v;
        out.data<T>()[0] = total;
    });
    if (!tracks({&x})) return out;
    ImplPtr xi = x.impl_ptr();
    attach(out, "sum", {&x}, [xi](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const T g = out_grad<T>(o)[0];
            for (T& v : xi->grad_values<T>()) v += g;
        });
    });
    return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tensor out = Tensor::zeros(shape, x.dtype());
    out.impl().data = x.impl().data;
    if (!tracks({&x})) return out;
    ImplPtr xi = x.impl_ptr();
    attach(out, "reshape", {&x}, [xi](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const auto& g = out_grad<T>(o);
            auto& gx = xi->grad_values<T>();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    });
    return out;
}

Tensor transpose2d(const Tensor& x) {
    require_rank(x, 2, "transpose2d");
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor out = Tensor::zeros({c, r}, x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        as_mat(out.data<T>().data(), c, r) = as_cmat(x.data<T>().data(), r, c).transpose();
    });
    if (!tracks({&x})) return out;
    ImplPtr xi = x.impl_ptr();
    attach(out, "transpose2d", {&x}, [xi, r, c](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            as_mat(xi->grad_values<T>().data(), r, c) += as_cmat(out_grad<T>(o).data(), c, r).transpose();
        });
    });
    return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t cols = parts.front().dim(1);
    std::size_t rows = 0;
    bool track = false;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_rows");
        require_same_dtype(p, parts.front(), "concat_rows");
        if (p.dim(1) != cols) throw ShapeError("concat_rows: column count mismatch " + shape_str(p.shape()));
        rows += p.dim(0);
        track = track || p.requires_grad();
    }
    track = track && grad_enabled();
    Tensor out = Tensor::zeros({rows, cols}, parts.front().dtype());
    dispatch(out.dtype(), [&]<typename T>() {
        auto z = out.data<T>();
        std::size_t offset = 0;
        for (const auto& p : parts) {
            auto src = p.data<T>();
            std::ranges::copy(src, z.begin() + static_cast<std::ptrdiff_t>(offset));
            offset += src.size();
        }
    });
    if (!track) return out;
    auto fn = std::make_shared<detail::GradFn>();
    fn->name = "concat_rows";
    for (const auto& p : parts) fn->inputs.push_back(p.impl_ptr());
    auto inputs = fn->inputs;
    fn->apply = [inputs](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const auto& g = out_grad<T>(o);
            std::size_t offset = 0;
            for (const auto& in : inputs) {
                const std::size_t n = shape_numel(in->shape);
                if (in->requires_grad) {
                    auto& gi = in->grad_values<T>();
                    for (std::size_t i = 0; i < n; ++i) gi[i] += g[offset + i];
                }
                offset += n;
            }
        });
    };
    out.impl().requires_grad = true;
    out.impl().grad_fn = std::move(fn);
    return out;
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids) {
    require_rank(table, 2, "embedding");
    const std::size_t vocab = table.dim(0), h = table.dim(1);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " at position " +
                                    std::to_string(i) + " outside table of " + std::to_string(vocab) +
                                    " rows");
        }
    }
    if (ids.empty()) throw ShapeError("embedding: empty id list");
    Tensor out = Tensor::zeros({ids.size(), h}, table.dtype());
    dispatch(table.dtype(), [&]<typename T>() {
        auto t = table.data<T>();
        auto z = out.data<T>();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            std::copy_n(t.data() + static_cast<std::size_t>(ids[i]) * h, h, z.data() + i * h);
        }
    });
    if (!tracks({&table})) return out;
    ImplPtr ti = table.impl_ptr();
    auto saved = std::make_shared<std::vector<std::int64_t>>(ids.begin(), ids.end());
    attach(out, "embedding", {&table}, [ti, saved, h](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const auto& g = out_grad<T>(o);
            auto& gt = ti->grad_values<T>();
            for (std::size_t i = 0; i < saved->size(); ++i) {
                T* dst = gt.data() + static_cast<std::size_t>((*saved)[i]) * h;
                for (std::size_t j = 0; j < h; ++j) dst[j] += g[i * h + j];
            }
        });
    });
    return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require_rank(x, 2, "gather_rows");
    if (rows.empty()) throw ShapeError("gather_rows: empty row list");
    const std::size_t n = x.dim(0), h = x.dim(1);
    for (auto r : rows) {
        if (r >= n) throw std::out_of_range("gather_rows: row " + std::to_string(r) + " >= " + std::to_string(n));
    }
    Tensor out = Tensor::zeros({rows.size(), h}, x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto in = x.data<T>();
        auto z = out.data<T>();
        for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(in.data() + rows[i] * h, h, z.data() + i * h);
    });
    if (!tracks({&x})) return out;
    ImplPtr xi = x.impl_ptr();
    auto saved = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
    attach(out, "gather_rows", {&x}, [xi, saved, h](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const auto& g = out_grad<T>(o);
            auto& gx = xi->grad_values<T>();
            for (std::size_t i = 0; i < saved->size(); ++i) {
                T* dst = gx.data() + (*saved)[i] * h;
                for (std::size_t j = 0; j < h; ++j) dst[j] += g[i * h + j];
            }
        });
    });
    return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t n = logits.dim(0), v = logits.dim(1);
    if (targets.size() != n) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) + " at row " +
                                    std::to_string(i) + " outside [0," + std::to_string(v) + ")");
        }
    }
    Tensor out = Tensor::zeros({}, logits.dtype());
    const bool track = tracks({&logits});
    auto probs = std::make_shared<detail::Storage>();
    dispatch(logits.dtype(), [&]<typename T>() {
        auto in = logits.data<T>();
        std::vector<T> p(track ? in.size() : 0);
        double total = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const T* row = in.data() + r * v;
            T mx = *std::max_element(row, row + v);
            double z = 0.0;
            for (std::size_t j = 0; j < v; ++j) z += std::exp(static_cast<double>(row[j] - mx));
            const double lse = static_cast<double>(mx) + std::log(z);
            total += lse - static_cast<double>(row[targets[r]]);
            if (track) {
                for (std::size_t j = 0; j < v; ++j) p[r * v + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - lse));
            }
        }
        out.data<T>()[0] = static_cast<T>(total / static_cast<double>(n));
        if (track) *probs = std::move(p);
    });
    if (!track) return out;
    ImplPtr li = logits.impl_ptr();
    auto saved = std::make_shared<std::vector<std::int64_t>>(targets.begin(), targets.end());
    attach(out, "cross_entropy", {&logits}, [li, probs, saved, n, v](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const T g = out_grad<T>(o)[0] / static_cast<T>(n);
            const auto& p = std::get<std::vector<T>>(*probs);
            auto& gl = li->grad_values<T>();
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t j = 0; j < v; ++j) gl[r * v + j] += g * p[r * v + j];
                gl[r * v + static_cast<std::size_t>((*saved)[r])] -= g;
            }
        });
    });
    return out;
}

namespace {

// Index map for [B*L, heads*hd] <-> [B*heads, L, hd].
struct HeadLayout {
    std::size_t batch, len, heads, hd;
    std::size_t merged(std::size_t b, std::size_t h, std::size_t l, std::size_t d) const {
        return (b * len + l) * heads * hd + h * hd + d;
    }
    std::size_t split(std::size_t b, std::size_t h, std::size_t l, std::size_t d) const {
        return ((b * heads + h) * len + l) * hd + d;
    }
    template <class F>
    void for_each(F&& f) const {
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t l = 0; l < len; ++l)
                    for (std::size_t d = 0; d < hd; ++d) f(merged(b, h, l, d), split(b, h, l, d));
    }
};

Tensor permute_heads(const Tensor& x, const HeadLayout& layout, const Shape& out_shape, bool to_split) {
    Tensor out = Tensor::zeros(out_shape, x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto in = x.data<T>();
        auto z = out.data<T>();
        layout.for_each([&](std::size_t m, std::size_t s) {
            if (to_split) z[s] = in[m];
            else z[m] = in[s];
        });
    });
    if (!tracks({&x})) return out;
    ImplPtr xi = x.impl_ptr();
    attach(out, to_split ? "split_heads" : "merge_heads", {&x}, [xi, layout, to_split](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const auto& g = out_grad<T>(o);
            auto& gx = xi->grad_values<T>();
            layout.for_each([&](std::size_t m, std::size_t s) {
                if (to_split) gx[m] += g[s];
                else gx[s] += g[m];
            });
        });
    });
    return out;
}

}  // namespace

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
    require_rank(x, 2, "split_heads");
    if (batch == 0 || heads == 0 || x.dim(0) % batch != 0 || x.dim(1) % heads != 0) {
        throw ShapeError("split_heads: cannot split " + shape_str(x.shape()) + " into batch " +
                         std::to_string(batch) + " x heads " + std::to_string(heads));
    }
    const HeadLayout layout{batch, x.dim(0) / batch, heads, x.dim(1) / heads};
    return permute_heads(x, layout, {batch * heads, layout.len, layout.hd}, true);
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
    require_rank(x, 3, "merge_heads");
    if (batch == 0 || heads == 0 || x.dim(0) != batch * heads) {
        throw ShapeError("merge_heads: leading extent of " + shape_str(x.shape()) + " is not batch*heads");
    }
    const HeadLayout layout{batch, x.dim(1), heads, x.dim(2)};
    return permute_heads(x, layout, {batch * layout.len, heads * layout.hd}, false);
}

Tensor add_attention_bias(const Tensor& scores, const Tensor& bias,
                          std::span<const std::uint8_t> key_mask, std::size_t batch) {
    require_rank(scores, 3, "add_attention_bias");
    require_rank(bias, 3, "add_attention_bias");
    require_same_dtype(scores, bias, "add_attention_bias");
    const std::size_t heads = bias.dim(0), len = bias.dim(1);
    if (bias.dim(2) != len || scores.dim(0) != batch * heads || scores.dim(1) != len || scores.dim(2) != len) {
        throw ShapeError("add_attention_bias: scores " + shape_str(scores.shape()) + " vs bias " +
                         shape_str(bias.shape()) + " with batch " + std::to_string(batch));
    }
    if (key_mask.size() != batch * len) {
        throw ShapeError("add_attention_bias: mask has " + std::to_string(key_mask.size()) +
                         " entries, expected " + std::to_string(batch * len));
    }
    Tensor out = Tensor::zeros(scores.shape(), scores.dtype());
    dispatch(scores.dtype(), [&]<typename T>() {
        auto s = scores.data<T>();
        auto bv = bias.data<T>();
        auto z = out.data<T>();
        const T penalty = static_cast<T>(kMaskPenalty);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::uint8_t* mask = key_mask.data() + b * len;
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t base = (b * heads + h) * len * len;
                const T* hb = bv.data() + h * len * len;
                for (std::size_t i = 0; i < len; ++i) {
                    for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t at = base + i * len + j;
                        z[at] = s[at] + hb[i * len + j] + (mask[j] ? T(0) : penalty);
                    }
                }
            }
        }
    });
    if (!tracks({&scores})) return out;
    ImplPtr si = scores.impl_ptr();
    attach(out, "add_attention_bias", {&scores}, [si](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const auto& g = out_grad<T>(o);
            auto& gs = si->grad_values<T>();
            for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
        });
    });
    return out;
}

Tensor masked_mean_pool(const Tensor& hidden, std::span<const std::uint8_t> mask) {
    require_rank(hidden, 3, "masked_mean_pool");
    const std::size_t batch = hidden.dim(0), len = hidden.dim(1), h = hidden.dim(2);
    if (mask.size() != batch * len) {
        throw ShapeError("masked_mean_pool: mask has " + std::to_string(mask.size()) + " entries, expected " +
                         std::to_string(batch * len));
    }
    auto counts = std::make_shared<std::vector<std::size_t>>(batch, 0);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t l = 0; l < len; ++l) (*counts)[b] += mask[b * len + l] ? 1 : 0;
        if ((*counts)[b] == 0) {
            throw std::invalid_argument("masked_mean_pool: row " + std::to_string(b) + " has no unmasked positions");
        }
    }
    Tensor out = Tensor::zeros({batch, h}, hidden.dtype());
    dispatch(hidden.dtype(), [&]<typename T>() {
        auto in = hidden.data<T>();
        auto z = out.data<T>();
        for (std::size_t b = 0; b < batch; ++b) {
            T* dst = z.data() + b * h;
            for (std::size_t l = 0; l < len; ++l) {
                if (!mask[b * len + l]) continue;
                const T* src = in.data() + (b * len + l) * h;
                for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
            }
            const T inv = T(1) / static_cast<T>((*counts)[b]);
            for (std::size_t j = 0; j < h; ++j) dst[j] *= inv;
        }
    });
    if (!tracks({&hidden})) return out;
    ImplPtr hi = hidden.impl_ptr();
    auto saved_mask = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
    attach(out, "masked_mean_pool", {&hidden}, [hi, saved_mask, counts, batch, len, h](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const auto& g = out_grad<T>(o);
            auto& gh = hi->grad_values<T>();
            for (std::size_t b = 0; b < batch; ++b) {
                const T inv = T(1) / static_cast<T>((*counts)[b]);
                for (std::size_t l = 0; l < len; ++l) {
                    if (!(*saved_mask)[b * len + l]) continue;
                    T* dst = gh.data() + (b * len + l) * h;
                    for (std::size_t j = 0; j < h; ++j) dst[j] += g[b * h + j] * inv;
                }
            }
        });
    });
    return out;
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
    require_rank(x, 2, "l2_normalize_rows");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    auto norms = std::make_shared<std::vector<double>>(rows);
    dispatch(x.dtype(), [&]<typename T>() {
        auto in = x.data<T>();
        auto z = out.data<T>();
        for (std::size_t r = 0; r < rows; ++r) {
            double ss = 0.0;
            for (std::size_t j = 0; j < cols; ++j) ss += static_cast<double>(in[r * cols + j]) * in[r * cols + j];
            const double norm = std::max(std::sqrt(ss), eps);
            (*norms)[r] = norm;
            for (std::size_t j = 0; j < cols; ++j) z[r * cols + j] = static_cast<T>(in[r * cols + j] / norm);
        }
    });
    if (!tracks({&x})) return out;
    ImplPtr xi = x.impl_ptr();
    attach(out, "l2_normalize_rows", {&x}, [xi, norms, rows, cols](TensorImpl& o) {
        dispatch(o.dtype, [&]<typename T>() {
            const auto& g = out_grad<T>(o);
            const auto& y = o.values<T>();
            auto& gx = xi->grad_values<T>();
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t base = r * cols;
                T dot = 0;
                for (std::size_t j = 0; j < cols; ++j) dot += y[base + j] * g[base + j];
                const T inv = static_cast<T>(1.0 / (*norms)[r]);
                for (std::size_t j = 0; j < cols; ++j) gx[base + j] += (g[base + j] - y[base + j] * dot) * inv;
            }
        });
    });
    return out;
}

}  // namespace longembed::ops
