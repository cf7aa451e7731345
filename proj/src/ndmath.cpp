// SPDX-License-Identifier: Apache-2.0
#include "rlarff/ndmath.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rlarff/error.hpp"
#include "rlarff/instrument.hpp"

namespace rlarff::nd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) {
    return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                    static_cast<Eigen::Index>(t.cols()));
}

MutMap as_matrix(Tensor& t) {
    return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        fail(Errc::dimension, std::string(op) + ": expected rank " + std::to_string(rank) +
                                  " tensor, got shape " + shape_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        fail(Errc::dimension, std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                  " vs " + shape_string(b.shape()));
    }
}

std::size_t conv_output_length(std::size_t length, std::size_t width, std::size_t stride) {
    if (stride == 0) fail(Errc::dimension, "conv1d: stride must be positive");
    if (width == 0) fail(Errc::dimension, "conv1d: kernel width must be positive");
    if (length < width) {
        fail(Errc::dimension, "conv1d: kernel width " + std::to_string(width) +
                                  " exceeds input length " + std::to_string(length));
    }
    return (length - width) / stride + 1;
}

// Adjoint of im2col: scatters patch-matrix gradients back onto the signal.
Tensor col2im(const Tensor& cols, std::size_t channels, std::size_t length, std::size_t width,
              std::size_t stride) {
    Tensor out({channels, length});
    const std::size_t out_len = cols.cols();
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t t = 0; t < width; ++t) {
            const double* row = cols.data().data() + (c * width + t) * out_len;
            double* dst = out.data().data() + c * length + t;
            for (std::size_t l = 0; l < out_len; ++l) dst[l * stride] += row[l];
        }
    }
    return out;
}

}  // namespace

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    for (auto d : shape_) {
        if (d == 0) fail(Errc::dimension, "tensor dimensions must be positive: " + shape_string(shape_));
    }
    data_.assign(element_count(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_) {
        if (d == 0) fail(Errc::dimension, "tensor dimensions must be positive: " + shape_string(shape_));
    }
    if (element_count(shape_) != data_.size()) {
        fail(Errc::dimension, "tensor of shape " + shape_string(shape_) + " cannot hold " +
                                  std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::vector(std::vector<double> values) {
    const auto n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

std::size_t Tensor::rows() const {
    if (rank() != 2) fail(Errc::dimension, "rows() on non-matrix " + shape_string(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) fail(Errc::dimension, "cols() on non-matrix " + shape_string(shape_));
    return shape_[1];
}

double Tensor::item() const {
    if (data_.size() != 1) fail(Errc::contract, "item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (element_count(shape) != data_.size()) {
        fail(Errc::dimension, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.cols() != b.rows()) {
        fail(Errc::dimension, "matmul: inner dimensions differ for " + shape_string(a.shape()) +
                                  " x " + shape_string(b.shape()));
    }
    Tensor out({a.rows(), b.cols()});
    as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
    return out;
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    Tensor out({a.cols(), a.rows()});
    as_matrix(out) = as_matrix(a).transpose();
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Tensor scaled(const Tensor& a, double s) {
    Tensor out = a;
    for (auto& v : out.data()) v *= s;
    return out;
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
    require_same_shape(x, y, "axpy");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

Tensor im2col(const Tensor& x, std::size_t width, std::size_t stride) {
    require_rank(x, 2, "im2col");
    const std::size_t channels = x.rows();
    const std::size_t length = x.cols();
    const std::size_t out_len = conv_output_length(length, width, stride);
    Tensor cols({channels * width, out_len});
    for (std::size_t c = 0; c < channels; ++c) {
        const double* src = x.data().data() + c * length;
        for (std::size_t t = 0; t < width; ++t) {
            double* row = cols.data().data() + (c * width + t) * out_len;
            for (std::size_t l = 0; l < out_len; ++l) row[l] = src[l * stride + t];
        }
    }
    return cols;
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t stride) {
    require_rank(x, 2, "conv1d");
    require_rank(kernel, 3, "conv1d");
    if (kernel.dim(1) != x.rows()) {
        fail(Errc::dimension, "conv1d: kernel " + shape_string(kernel.shape()) +
                                  " does not match input channels of " + shape_string(x.shape()));
    }
    const std::size_t width = kernel.dim(2);
    const Tensor flat = kernel.reshaped({kernel.dim(0), kernel.dim(1) * width});
    return matmul(flat, im2col(x, width, stride));
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 2, "global_avg_pool");
    Tensor out({x.rows()});
    const double inv = 1.0 / static_cast<double>(x.cols());
    for (std::size_t c = 0; c < x.rows(); ++c) {
        double acc = 0.0;
        for (std::size_t l = 0; l < x.cols(); ++l) acc += x(c, l);
        out[c] = acc * inv;
    }
    return out;
}

double l2_norm(std::span<const double> v) noexcept {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

Tensor l2_normalize(const Tensor& v) {
    const double n = l2_norm(v.data());
    if (!(n > kNormEpsilon)) {
        fail(Errc::degenerate_input, "l2_normalize: vector norm " + std::to_string(n) + " is (near) zero");
    }
    return scaled(v, 1.0 / n);
}

// ---------------------------------------------------------------------------
// Tape

class Tape::Grads {
public:
    explicit Grads(std::size_t n) : grads_(n), present_(n, 0) {}

    void add(std::size_t i, Tensor g) {
        if (!present_[i]) {
            grads_[i] = std::move(g);
            present_[i] = 1;
        } else {
            axpy(1.0, g, grads_[i]);
        }
    }

    bool has(std::size_t i) const { return present_[i] != 0; }
    const Tensor& get(std::size_t i) const { return grads_[i]; }
    Tensor take(std::size_t i) { return std::move(grads_[i]); }

private:
    std::vector<Tensor> grads_;
    std::vector<char> present_;
};

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool tracked = false;
    for (auto in : inputs) tracked = tracked || needs(in);
    Node node;
    node.value = std::move(value);
    node.requires_grad = tracked;
    if (tracked) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), false, {}});
    return Var{nodes_.size() - 1};
}

Var Tape::parameter(Tensor value) {
    nodes_.push_back(Node{std::move(value), true, {}});
    params_.push_back(nodes_.size() - 1);
    return Var{nodes_.size() - 1};
}

Var Tape::matmul(Var a, Var b) {
    const bool ga = needs(a), gb = needs(b);
    return push(nd::matmul(value(a), value(b)), {a, b},
                [a, b, ga, gb](const Tensor& g, std::span<const Node> nodes, Grads& grads) {
                    const Tensor& av = nodes[a.index].value;
                    const Tensor& bv = nodes[b.index].value;
                    if (ga) {
                        Tensor da({av.rows(), av.cols()});
                        as_matrix(da).noalias() = as_matrix(g) * as_matrix(bv).transpose();
                        grads.add(a.index, std::move(da));
                    }
                    if (gb) {
                        Tensor db({bv.rows(), bv.cols()});
                        as_matrix(db).noalias() = as_matrix(av).transpose() * as_matrix(g);
                        grads.add(b.index, std::move(db));
                    }
                });
}

Var Tape::im2col(Var x, std::size_t width, std::size_t stride) {
    const Tensor& xv = value(x);
    const std::size_t channels = xv.rank() == 2 ? xv.rows() : 0;
    const std::size_t length = xv.rank() == 2 ? xv.cols() : 0;
    return push(nd::im2col(xv, width, stride), {x},
                [x, channels, length, width, stride](const Tensor& g, std::span<const Node>, Grads& grads) {
                    grads.add(x.index, col2im(g, channels, length, width, stride));
                });
}

Var Tape::conv1d(Var x, Var kernel, std::size_t stride) {
    const nd::Shape k = value(kernel).shape();
    if (k.size() != 3 || value(x).rank() != 2 || k[1] != value(x).rows()) {
        fail(Errc::dimension, "conv1d: kernel " + shape_string(k) +
                                  " does not match input " + shape_string(value(x).shape()));
    }
    const Var flat = reshape(kernel, {k[0], k[1] * k[2]});
    return matmul(flat, im2col(x, k[2], stride));
}

Var Tape::add(Var a, Var b) {
    const bool ga = needs(a), gb = needs(b);
    return push(nd::add(value(a), value(b)), {a, b},
                [a, b, ga, gb](const Tensor& g, std::span<const Node>, Grads& grads) {
                    if (ga) grads.add(a.index, g);
                    if (gb) grads.add(b.index, g);
                });
}

Var Tape::mul(Var a, Var b) {
    require_same_shape(value(a), value(b), "mul");
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= value(b)[i];
    const bool ga = needs(a), gb = needs(b);
    return push(std::move(out), {a, b},
                [a, b, ga, gb](const Tensor& g, std::span<const Node> nodes, Grads& grads) {
                    const Tensor& av = nodes[a.index].value;
                    const Tensor& bv = nodes[b.index].value;
                    if (ga) {
                        Tensor da = g;
                        for (std::size_t i = 0; i < da.size(); ++i) da[i] *= bv[i];
                        grads.add(a.index, std::move(da));
                    }
                    if (gb) {
                        Tensor db = g;
                        for (std::size_t i = 0; i < db.size(); ++i) db[i] *= av[i];
                        grads.add(b.index, std::move(db));
                    }
                });
}

Var Tape::scale(Var a, double s) {
    return push(scaled(value(a), s), {a}, [a, s](const Tensor& g, std::span<const Node>, Grads& grads) {
        grads.add(a.index, scaled(g, s));
    });
}

Var Tape::add_channel_bias(Var x, Var bias) {
    const Tensor& xv = value(x);
    const Tensor& bv = value(bias);
    require_rank(xv, 2, "add_channel_bias");
    require_rank(bv, 1, "add_channel_bias");
    if (bv.dim(0) != xv.rows()) {
        fail(Errc::dimension, "add_channel_bias: bias " + shape_string(bv.shape()) +
                                  " does not match " + shape_string(xv.shape()));
    }
    Tensor out = xv;
    for (std::size_t c = 0; c < out.rows(); ++c)
        for (std::size_t l = 0; l < out.cols(); ++l) out(c, l) += bv[c];
    const bool gx = needs(x), gb = needs(bias);
    return push(std::move(out), {x, bias}, [x, bias, gx, gb](const Tensor& g, std::span<const Node>, Grads& grads) {
        if (gx) grads.add(x.index, g);
        if (gb) {
            Tensor db({g.rows()});
            for (std::size_t c = 0; c < g.rows(); ++c)
                for (std::size_t l = 0; l < g.cols(); ++l) db[c] += g(c, l);
            grads.add(bias.index, std::move(db));
        }
    });
}

Var Tape::relu(Var x) {
    return push(nd::relu(value(x)), {x}, [x](const Tensor& g, std::span<const Node> nodes, Grads& grads) {
        const Tensor& xv = nodes[x.index].value;
        Tensor dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (!(xv[i] > 0.0)) dx[i] = 0.0;
        grads.add(x.index, std::move(dx));
    });
}

Var Tape::global_avg_pool(Var x) {
    const Tensor& xv = value(x);
    require_rank(xv, 2, "global_avg_pool");
    const std::size_t channels = xv.rows(), length = xv.cols();
    return push(nd::global_avg_pool(xv), {x}, [x, channels, length](const Tensor& g, std::span<const Node>, Grads& grads) {
        Tensor dx({channels, length});
        const double inv = 1.0 / static_cast<double>(length);
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t l = 0; l < length; ++l) dx(c, l) = g[c] * inv;
        grads.add(x.index, std::move(dx));
    });
}

Var Tape::l2_normalize(Var v) {
    const Tensor& vv = value(v);
    const double n = l2_norm(vv.data());
    Tensor out = nd::l2_normalize(vv);
    return push(std::move(out), {v}, [v, n](const Tensor& g, std::span<const Node> nodes, Grads& grads) {
        // d(v/|v|) = (g - y (y.g)) / |v|, with y the normalized output.
        const Tensor& vv = nodes[v.index].value;
        const double proj = dot(vv.data(), g.data()) / (n * n);
        Tensor dv = g;
        for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = (g[i] - vv[i] * proj) / n;
        grads.add(v.index, std::move(dv));
    });
}

Var Tape::normalize_rows(Var m) {
    const Tensor& mv = value(m);
    require_rank(mv, 2, "normalize_rows");
    const std::size_t rows = mv.rows(), cols = mv.cols();
    std::vector<double> norms(rows);
    Tensor out = mv;
    for (std::size_t r = 0; r < rows; ++r) {
        norms[r] = l2_norm(mv.data().subspan(r * cols, cols));
        if (!(norms[r] > kNormEpsilon)) {
            fail(Errc::degenerate_input, "normalize_rows: row " + std::to_string(r) + " has (near) zero norm");
        }
        for (std::size_t c = 0; c < cols; ++c) out(r, c) /= norms[r];
    }
    return push(std::move(out), {m},
                [m, rows, cols, norms = std::move(norms)](const Tensor& g, std::span<const Node> nodes, Grads& grads) {
                    const Tensor& mv = nodes[m.index].value;
                    Tensor dm({rows, cols});
                    for (std::size_t r = 0; r < rows; ++r) {
                        const double n = norms[r];
                        const double proj = dot(mv.data().subspan(r * cols, cols), g.data().subspan(r * cols, cols)) / (n * n);
                        for (std::size_t c = 0; c < cols; ++c) dm(r, c) = (g(r, c) - mv(r, c) * proj) / n;
                    }
                    grads.add(m.index, std::move(dm));
                });
}

Var Tape::reshape(Var x, Shape shape) {
    Shape original = value(x).shape();
    return push(value(x).reshaped(std::move(shape)), {x},
                [x, original = std::move(original)](const Tensor& g, std::span<const Node>, Grads& grads) {
                    grads.add(x.index, g.reshaped(original));
                });
}

Var Tape::sum(Var x) {
    const Tensor& xv = value(x);
    const double total = std::accumulate(xv.data().begin(), xv.data().end(), 0.0);
    const Shape shape = xv.shape();
    return push(Tensor::scalar(total), {x}, [x, shape](const Tensor& g, std::span<const Node>, Grads& grads) {
        Tensor dx(shape);
        for (auto& v : dx.data()) v = g.item();
        grads.add(x.index, std::move(dx));
    });
}

Var Tape::softmax_nll(Var logits, std::size_t target) {
    const Tensor& lv = value(logits);
    require_rank(lv, 1, "softmax_nll");
    if (target >= lv.size()) {
        fail(Errc::contract, "softmax_nll: target " + std::to_string(target) + " out of range for " +
                                 std::to_string(lv.size()) + " classes");
    }
    const double mx = *std::max_element(lv.data().begin(), lv.data().end());
    Tensor probs = lv;
    double denom = 0.0;
    for (auto& v : probs.data()) {
        v = std::exp(v - mx);
        denom += v;
    }
    for (auto& v : probs.data()) v /= denom;
    const double loss = -(lv[target] - mx - std::log(denom));
    return push(Tensor::scalar(loss), {logits},
                [logits, target, probs = std::move(probs)](const Tensor& g, std::span<const Node>, Grads& grads) {
                    Tensor d = probs;
                    d[target] -= 1.0;
                    grads.add(logits.index, scaled(d, g.item()));
                });
}

std::vector<Tensor> Tape::backward(Var loss) const {
    const Tensor& lv = value(loss);
    if (lv.size() != 1) {
        fail(Errc::contract, "backward: loss must be scalar, got shape " + shape_string(lv.shape()));
    }
    count(Counter::backward_calls);

    Grads grads(nodes_.size());
    if (nodes_[loss.index].requires_grad) grads.add(loss.index, Tensor(lv.shape(), {1.0}));
    const std::span<const Node> view(nodes_);
    for (std::size_t i = loss.index + 1; i-- > 0;) {
        const Node& node = nodes_[i];
        if (!node.backward || !grads.has(i)) continue;
        node.backward(grads.get(i), view, grads);
    }

    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (auto p : params_) {
        if (grads.has(p)) {
            out.push_back(grads.take(p));
        } else {
            out.emplace_back(nodes_[p].value.shape());
        }
    }
    return out;
}

}  // namespace rlarff::nd
