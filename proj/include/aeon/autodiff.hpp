#pragma once

// Reverse-mode automatic differentiation over small dense matrices.
//
// A Tape is an append-only arena of nodes. Every node stores its forward value
// and, once backward() has reached it, its accumulated gradient. Because a node
// can only reference nodes that already exist, arena order is a topological
// order and backward() is a single reverse sweep.
//
// Scalars are 1x1 matrices. Binary elementwise ops broadcast a 1x1 operand, a
// 1xn row or an mx1 column against an mxn operand.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aeon/errors.hpp"
#include "aeon/special.hpp"

namespace aeon {
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
} // namespace aeon

namespace aeon::ad {

using aeon::Index;
using aeon::Matrix;

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Matrix& value() const;
    double scalar() const;
    /// Accumulated gradient after backward(); zero matrix if none reached it.
    Matrix grad() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    bool requires_grad() const;

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    /// Receives the upstream gradient of the node being visited.
    using Backprop = std::function<void(Tape&, const Matrix& upstream)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Trainable input; gradients accumulate into it.
    Var leaf(Matrix value) { return push(std::move(value), "leaf", {}, nullptr, true); }
    /// Input excluded from differentiation.
    Var constant(Matrix value) { return push(std::move(value), "const", {}, nullptr, false); }
    Var scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

    /// Creates a node computed from `parents`. `fn` distributes the node's
    /// upstream gradient to its parents; it is dropped when no parent
    /// requires a gradient.
    Var push(Matrix value, const char* op, std::initializer_list<Var> parents, Backprop fn,
             bool leaf_grad = false) {
        bool needs = leaf_grad;
        for (const Var& p : parents) {
            if (p.tape() != this) throw StructuralError(std::string("autodiff: operand of '") + op + "' belongs to another tape");
            if (p.id() >= nodes_.size()) throw StructuralError("autodiff: dangling parent reference");
            needs = needs || nodes_[p.id()].requires_grad;
        }
        Node n;
        n.value = std::move(value);
        n.op = op;
        n.requires_grad = needs;
        if (needs && fn) {
            n.backprop = std::move(fn);
            for (const Var& p : parents) n.parents.push_back(p.id());
        }
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    /// Reverse sweep from a scalar root. Leaf gradients accumulate (+=) across
    /// calls; use zero_grad() between independent passes.
    void backward(const Var& root) {
        if (root.tape() != this) throw StructuralError("autodiff: root belongs to another tape");
        const Matrix& rv = nodes_[root.id()].value;
        if (rv.rows() != 1 || rv.cols() != 1) throw StructuralError("autodiff: backward root must be scalar");
        // Interior gradients are scratch space for this pass; only leaves accumulate across calls.
        for (std::size_t k = 0; k <= root.id(); ++k)
            if (nodes_[k].backprop) nodes_[k].grad.resize(0, 0);
        accumulate(root.id(), Matrix::Ones(1, 1));
        for (std::size_t k = root.id() + 1; k-- > 0;) {
            Node& n = nodes_[k];
            if (!n.backprop || n.grad.size() == 0) continue;
            for (std::size_t p : n.parents) {
                if (p >= k) throw StructuralError("autodiff: graph cycle detected");
            }
            const Matrix upstream = n.grad;
            n.backprop(*this, upstream);
        }
    }

    void zero_grad() {
        for (Node& n : nodes_) n.grad.resize(0, 0);
    }

    /// Adds `g` into the gradient of node `id` if it participates in
    /// differentiation. Shapes must agree.
    void accumulate(std::size_t id, const Matrix& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
            throw StructuralError(std::string("autodiff: gradient shape mismatch at '") + n.op + "'");
        }
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    Matrix grad(std::size_t id) const {
        const Node& n = nodes_[id];
        if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    const char* op(std::size_t id) const { return nodes_[id].op; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::vector<std::size_t> parents;
        Backprop backprop;
        const char* op = "";
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline double Var::scalar() const {
    const Matrix& v = value();
    if (v.size() != 1) throw StructuralError("autodiff: scalar() on non-scalar node");
    return v(0, 0);
}
inline Matrix Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline void check_finite_input(const Matrix& m, const char* op) {
    if (!m.allFinite()) throw DomainError(std::string("autodiff: non-finite input to '") + op + "'");
}

/// Broadcasts `m` to rows x cols.
inline Matrix expand(const Matrix& m, Index rows, Index cols) {
    if (m.rows() == rows && m.cols() == cols) return m;
    if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(rows, cols, m(0, 0));
    if (m.rows() == 1 && m.cols() == cols) return m.replicate(rows, 1);
    if (m.cols() == 1 && m.rows() == rows) return m.replicate(1, cols);
    throw StructuralError("autodiff: shapes cannot be broadcast");
}

/// Sums a broadcast gradient back to the operand's shape.
inline Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
    if (rows == 1 && cols == g.cols()) return g.colwise().sum();
    if (cols == 1 && rows == g.rows()) return g.rowwise().sum();
    throw StructuralError("autodiff: cannot reduce gradient to operand shape");
}

inline std::pair<Index, Index> broadcast_shape(const Matrix& a, const Matrix& b) {
    const Index r = std::max(a.rows(), b.rows());
    const Index c = std::max(a.cols(), b.cols());
    auto ok = [&](const Matrix& m) {
        return (m.rows() == r || m.rows() == 1) && (m.cols() == c || m.cols() == 1);
    };
    if (!ok(a) || !ok(b)) throw StructuralError("autodiff: incompatible operand shapes");
    return {r, c};
}

/// Elementwise unary op: value f(x), local partial df(x, f(x)).
template <class F, class DF>
Var unary(const Var& a, const char* op, F f, DF df) {
    const Matrix& x = a.value();
    check_finite_input(x, op);
    Matrix y = x.unaryExpr(f);
    Matrix local = x.binaryExpr(y, df);
    const std::size_t ia = a.id();
    return a.tape()->push(std::move(y), op, {a},
                          [ia, local = std::move(local)](Tape& t, const Matrix& up) {
                              t.accumulate(ia, up.cwiseProduct(local));
                          });
}

} // namespace detail

// ---------------------------------------------------------------- arithmetic

inline Var add(const Var& a, const Var& b) {
    auto [r, c] = detail::broadcast_shape(a.value(), b.value());
    Matrix y = detail::expand(a.value(), r, c) + detail::expand(b.value(), r, c);
    const std::size_t ia = a.id(), ib = b.id();
    const Index ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
    return a.tape()->push(std::move(y), "add", {a, b}, [=](Tape& t, const Matrix& up) {
        t.accumulate(ia, detail::reduce_to(up, ar, ac));
        t.accumulate(ib, detail::reduce_to(up, br, bc));
    });
}

inline Var sub(const Var& a, const Var& b) {
    auto [r, c] = detail::broadcast_shape(a.value(), b.value());
    Matrix y = detail::expand(a.value(), r, c) - detail::expand(b.value(), r, c);
    const std::size_t ia = a.id(), ib = b.id();
    const Index ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
    return a.tape()->push(std::move(y), "sub", {a, b}, [=](Tape& t, const Matrix& up) {
        t.accumulate(ia, detail::reduce_to(up, ar, ac));
        t.accumulate(ib, detail::reduce_to(-up, br, bc));
    });
}

/// Elementwise (Hadamard) product with broadcasting.
inline Var mul(const Var& a, const Var& b) {
    auto [r, c] = detail::broadcast_shape(a.value(), b.value());
    Matrix ea = detail::expand(a.value(), r, c);
    Matrix eb = detail::expand(b.value(), r, c);
    Matrix y = ea.cwiseProduct(eb);
    const std::size_t ia = a.id(), ib = b.id();
    const Index ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
    return a.tape()->push(std::move(y), "mul", {a, b},
                          [=, ea = std::move(ea), eb = std::move(eb)](Tape& t, const Matrix& up) {
                              t.accumulate(ia, detail::reduce_to(up.cwiseProduct(eb), ar, ac));
                              t.accumulate(ib, detail::reduce_to(up.cwiseProduct(ea), br, bc));
                          });
}

inline Var neg(const Var& a) {
    const std::size_t ia = a.id();
    return a.tape()->push(-a.value(), "neg", {a},
                          [ia](Tape& t, const Matrix& up) { t.accumulate(ia, -up); });
}

inline Var scale(const Var& a, double k) {
    const std::size_t ia = a.id();
    return a.tape()->push(a.value() * k, "scale", {a},
                          [ia, k](Tape& t, const Matrix& up) { t.accumulate(ia, up * k); });
}

inline Var add_scalar(const Var& a, double k) {
    const std::size_t ia = a.id();
    Matrix y = a.value().array() + k;
    return a.tape()->push(std::move(y), "add_scalar", {a},
                          [ia](Tape& t, const Matrix& up) { t.accumulate(ia, up); });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double k) { return scale(a, k); }
inline Var operator*(double k, const Var& a) { return scale(a, k); }
inline Var operator+(const Var& a, double k) { return add_scalar(a, k); }
inline Var operator+(double k, const Var& a) { return add_scalar(a, k); }
inline Var operator-(const Var& a, double k) { return add_scalar(a, -k); }
inline Var operator-(double k, const Var& a) { return add_scalar(neg(a), k); }

// ---------------------------------------------------------- elementwise maps

inline Var exp(const Var& a) {
    return detail::unary(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
    if ((a.value().array() <= 0.0).any()) throw DomainError("autodiff: log of non-positive value");
    return detail::unary(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

/// x^p for a constant exponent. Non-integer exponents require x >= 0.
inline Var pow(const Var& a, double p) {
    const bool integral = p == std::floor(p);
    if (!integral && (a.value().array() < 0.0).any()) throw DomainError("autodiff: fractional power of negative value");
    return detail::unary(
        a, "pow", [p](double x) { return std::pow(x, p); },
        [p](double x, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}

inline Var square(const Var& a) {
    return detail::unary(
        a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// max(0, x); partial is 0 at and below zero.
inline Var max0(const Var& a) {
    return detail::unary(
        a, "max0", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(const Var& a, double slope) {
    return detail::unary(
        a, "leaky_relu", [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

inline Var sigmoid(const Var& a) {
    return detail::unary(
        a, "sigmoid", [](double x) { return special::sigmoid(x); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
    return detail::unary(
        a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var erfinv(const Var& a) {
    if ((a.value().array() <= -1.0).any() || (a.value().array() >= 1.0).any()) {
        throw DomainError("autodiff: erfinv argument outside (-1, 1)");
    }
    return detail::unary(
        a, "erfinv", [](double x) { return special::erfinv(x); },
        [](double, double y) { return special::erfinv_derivative_at(y); });
}

/// Clamps into [lo, hi]; gradient passes only strictly inside the interval.
inline Var clamp(const Var& a, double lo, double hi) {
    return detail::unary(
        a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

/// Stop-gradient: same value, no path back to `a`.
inline Var detach(const Var& a) { return a.tape()->constant(a.value()); }

// ---------------------------------------------------------------- reductions

inline Var sum(const Var& a) {
    const std::size_t ia = a.id();
    const Index r = a.rows(), c = a.cols();
    return a.tape()->push(Matrix::Constant(1, 1, a.value().sum()), "sum", {a},
                          [=](Tape& t, const Matrix& up) { t.accumulate(ia, Matrix::Constant(r, c, up(0, 0))); });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Row sums: m x n -> m x 1.
inline Var sum_rows(const Var& a) {
    const std::size_t ia = a.id();
    const Index c = a.cols();
    Matrix y = a.value().rowwise().sum();
    return a.tape()->push(std::move(y), "sum_rows", {a},
                          [=](Tape& t, const Matrix& up) { t.accumulate(ia, up.replicate(1, c)); });
}

/// Inner product of two equally shaped operands -> 1x1.
inline Var dot(const Var& a, const Var& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw StructuralError("autodiff: dot shape mismatch");
    return sum(mul(a, b));
}

/// Overflow-stable log(sum(exp(x))) over all entries -> 1x1.
inline Var logsumexp(const Var& a) {
    const Matrix& x = a.value();
    detail::check_finite_input(x, "logsumexp");
    const double m = x.maxCoeff();
    Matrix e = (x.array() - m).exp().matrix();
    const double s = e.sum();
    const double y = m + std::log(s);
    Matrix soft = e / s;
    const std::size_t ia = a.id();
    return a.tape()->push(Matrix::Constant(1, 1, y), "logsumexp", {a},
                          [ia, soft = std::move(soft)](Tape& t, const Matrix& up) { t.accumulate(ia, soft * up(0, 0)); });
}

/// Row-wise stable logsumexp -> m x 1. With `mask`, only entries where the
/// mask is nonzero take part; every row must keep at least one entry.
inline Var logsumexp_rows(const Var& a, const std::optional<Matrix>& mask = std::nullopt) {
    const Matrix& x = a.value();
    detail::check_finite_input(x, "logsumexp_rows");
    if (mask && (mask->rows() != x.rows() || mask->cols() != x.cols())) {
        throw StructuralError("autodiff: logsumexp_rows mask shape mismatch");
    }
    const Index r = x.rows(), c = x.cols();
    Matrix y(r, 1);
    Matrix soft = Matrix::Zero(r, c);
    for (Index i = 0; i < r; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (Index j = 0; j < c; ++j) {
            if (!mask || (*mask)(i, j) != 0.0) m = std::max(m, x(i, j));
        }
        if (!std::isfinite(m)) throw StructuralError("autodiff: logsumexp_rows row has no active entries");
        double s = 0.0;
        for (Index j = 0; j < c; ++j) {
            if (!mask || (*mask)(i, j) != 0.0) {
                soft(i, j) = std::exp(x(i, j) - m);
                s += soft(i, j);
            }
        }
        soft.row(i) /= s;
        y(i, 0) = m + std::log(s);
    }
    const std::size_t ia = a.id();
    return a.tape()->push(std::move(y), "logsumexp_rows", {a},
                          [ia, soft = std::move(soft)](Tape& t, const Matrix& up) {
                              t.accumulate(ia, soft.array().colwise() * up.col(0).array());
                          });
}

/// Row-wise log-softmax, m x n -> m x n.
inline Var log_softmax_rows(const Var& a) {
    Var lse = logsumexp_rows(a);
    return sub(a, lse);
}

// ------------------------------------------------------------ linear algebra

inline Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw StructuralError("autodiff: matmul inner dimensions differ");
    Matrix y = a.value() * b.value();
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape()->push(std::move(y), "matmul", {a, b}, [ia, ib](Tape& t, const Matrix& up) {
        if (t.requires_grad(ia)) t.accumulate(ia, up * t.value(ib).transpose());
        if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * up);
    });
}

inline Var transpose(const Var& a) {
    const std::size_t ia = a.id();
    Matrix y = a.value().transpose();
    return a.tape()->push(std::move(y), "transpose", {a},
                          [ia](Tape& t, const Matrix& up) { t.accumulate(ia, up.transpose()); });
}

/// Diagonal of a square matrix as an m x 1 column.
inline Var diag(const Var& a) {
    if (a.rows() != a.cols()) throw StructuralError("autodiff: diag of non-square matrix");
    const std::size_t ia = a.id();
    const Index n = a.rows();
    Matrix y = a.value().diagonal();
    return a.tape()->push(std::move(y), "diag", {a}, [ia, n](Tape& t, const Matrix& up) {
        Matrix g = Matrix::Zero(n, n);
        g.diagonal() = up.col(0);
        t.accumulate(ia, g);
    });
}

/// Scales each row to unit Euclidean norm: y = x / max(||x||, eps).
inline Var l2_normalize_rows(const Var& a, double eps = 1e-12) {
    const Matrix& x = a.value();
    detail::check_finite_input(x, "l2_normalize_rows");
    const Eigen::VectorXd denom = x.rowwise().norm().cwiseMax(eps);
    Matrix y = x.array().colwise() / denom.array();
    const std::size_t ia = a.id();
    Matrix yc = y;
    return a.tape()->push(std::move(y), "l2_normalize_rows", {a},
                          [ia, yc = std::move(yc), denom, eps](Tape& t, const Matrix& up) {
                              // Above the floor: d/dx [x / |x|] = (I - y y^T) / |x|; below it the map is x / eps.
                              Matrix g(up.rows(), up.cols());
                              for (Index i = 0; i < up.rows(); ++i) {
                                  g.row(i) = up.row(i) / denom(i);
                                  if (denom(i) > eps) g.row(i) -= yc.row(i) * (up.row(i).dot(yc.row(i)) / denom(i));
                              }
                              t.accumulate(ia, g);
                          });
}

} // namespace aeon::ad
