// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace rlarff::nd {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles. Shapes hold positive dimensions only;
/// a rank-0 tensor (empty shape) is a scalar with one element.
class Tensor {
public:
    Tensor() : data_(1, 0.0) {}
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor identity(std::size_t n);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

    double item() const;
    Tensor reshaped(Shape shape) const;
    bool all_finite() const noexcept;

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

std::size_t element_count(const Shape& shape);

// Eager primitives. Every one validates shapes and throws Errc::dimension
// (or Errc::degenerate_input for l2_normalize) on bad input.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scaled(const Tensor& a, double s);
void axpy(double alpha, const Tensor& x, Tensor& y);

/// Unfolds a c_in x L signal into a (c_in*w) x L_out patch matrix so that a
/// valid, strided cross-correlation becomes a single matrix product.
Tensor im2col(const Tensor& x, std::size_t width, std::size_t stride);
Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t stride);
Tensor relu(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);

inline constexpr double kNormEpsilon = 1e-12;
Tensor l2_normalize(const Tensor& v);
double l2_norm(std::span<const double> v) noexcept;
double dot(std::span<const double> a, std::span<const double> b) noexcept;

/// Handle to a value recorded on a Tape.
struct Var {
    std::size_t index = 0;
};

/// Reverse-mode tape for the primitive set above. Nodes are appended in
/// evaluation order, so the record is already topologically sorted and
/// backward is a single reverse sweep. Constants carry no gradient and any
/// node whose inputs are all constants records no backward work.
class Tape {
public:
    Var constant(Tensor value);
    /// Tracked leaf. backward() returns gradients in registration order.
    Var parameter(Tensor value);

    const Tensor& value(Var v) const { return nodes_.at(v.index).value; }
    std::size_t parameter_count() const noexcept { return params_.size(); }
    std::size_t node_count() const noexcept { return nodes_.size(); }

    Var matmul(Var a, Var b);
    Var im2col(Var x, std::size_t width, std::size_t stride);
    Var conv1d(Var x, Var kernel, std::size_t stride);
    Var add(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    /// x: c x L, bias: c. Adds bias[c] to every position of channel c.
    Var add_channel_bias(Var x, Var bias);
    Var relu(Var x);
    Var global_avg_pool(Var x);
    Var l2_normalize(Var v);
    /// Divides every row of a matrix by its L2 norm.
    Var normalize_rows(Var m);
    Var reshape(Var x, Shape shape);
    Var sum(Var x);
    /// -ln softmax(logits)[target] for a rank-1 logits vector.
    Var softmax_nll(Var logits, std::size_t target);

    std::vector<Tensor> backward(Var loss) const;

private:
    struct Node;
    class Grads;
    using BackwardFn =
        std::function<void(const Tensor& grad_out, std::span<const Node> nodes, Grads& grads)>;

    struct Node {
        Tensor value;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
    bool needs(Var v) const { return nodes_[v.index].requires_grad; }

    std::vector<Node> nodes_;
    std::vector<std::size_t> params_;
};

}  // namespace rlarff::nd
